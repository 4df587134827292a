//! Surface-profile subproblem at fixed powers: the coefficient vectors are
//! lifted to PSD matrices, the rank-one requirement becomes the penalty
//! `Tr(Q) - lambda_max(Q)`, and the non-concave parts are linearized so each
//! step is a convex program. The penalty weight grows until both matrices
//! are numerically rank one.

use std::f64::consts::LN_2;

use nalgebra::{DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::channel::CompositeChannels;
use crate::convex::{self, AffineExpr, ConicProgram, LogTerm, Point, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::system::{self, Duplex, PowerAllocation, StarRisProfile, SystemParams, FEASIBILITY_TOL};
use crate::{CMatrix, CVector, C64};

/// Relative slack granted to the rate-threshold constraints of each convex
/// step. The resulting rate shortfall stays below `FEASIBILITY_TOL`.
const THRESHOLD_RELAXATION: f64 = 5e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedProfile {
    pub q_t_mat: CMatrix,
    pub q_r_mat: CMatrix,
    pub beta_t: DVector<f64>,
    pub beta_r: DVector<f64>,
}

/// Outer products of the composite channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedChannels {
    pub h1: CMatrix,
    pub h2: CMatrix,
    pub h3: CMatrix,
}

impl LiftedChannels {
    pub fn new(cc: &CompositeChannels) -> Self {
        Self { h1: &cc.h1 * cc.h1.adjoint(), h2: &cc.h2 * cc.h2.adjoint(), h3: &cc.h3 * cc.h3.adjoint() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    /// Initial penalty factor; the penalty weight is `1/mu`.
    pub mu: f64,
    /// Per-outer-iteration decay of `mu`.
    pub c: f64,
    /// Inner-loop stop on the fractional objective increase.
    pub eps2: f64,
    /// Rank-one threshold on `Tr(Q) - lambda_max(Q)`.
    pub eps3: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self { mu: 100.0, c: 0.7, eps2: 1e-5, eps3: 1e-7 }
    }
}

impl PenaltySchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !(self.c > 0.0 && self.c < 1.0) || !(self.eps2 > 0.0) || !(self.eps3 > 0.0) {
            return Err(Error::Config(format!("invalid penalty schedule {self:?}")));
        }
        Ok(())
    }
}

/// How the surface splits energy between its two sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfaceMode {
    /// Every element transmits and reflects with a free split.
    EnergySplitting,
    /// The first half of the elements only transmits, the second half only
    /// reflects.
    ModeSwitching,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamformerSettings {
    pub schedule: PenaltySchedule,
    pub max_inner: usize,
    pub max_outer: usize,
    pub solver: SolverSettings,
}

impl Default for BeamformerSettings {
    fn default() -> Self {
        Self {
            schedule: PenaltySchedule::default(),
            max_inner: 30,
            max_outer: 40,
            solver: SolverSettings { tolerance: 1e-7, max_iterations: 600 },
        }
    }
}

pub fn lift_profile(profile: &StarRisProfile) -> LiftedProfile {
    let q_t = profile.q_t();
    let q_r = profile.q_r();
    LiftedProfile {
        q_t_mat: &q_t * q_t.adjoint(),
        q_r_mat: &q_r * q_r.adjoint(),
        beta_t: profile.beta_t.clone(),
        beta_r: profile.beta_r.clone(),
    }
}

/// Largest eigenvalue and a unit eigenvector. Among numerically tied top
/// eigenvalues the one the eigensolver lists first wins; the vector's
/// largest entry is rotated to be real and positive.
pub fn largest_eigenpair(q: &CMatrix) -> (f64, CVector) {
    let eig = SymmetricEigen::new(q.clone());
    let vals = &eig.eigenvalues;
    let top = vals.max();
    let tie = 1e-12 * top.abs().max(1.0);
    let k = (0..vals.len()).find(|&i| vals[i] >= top - tie).unwrap_or(0);
    let mut v = eig.eigenvectors.column(k).into_owned();
    let lead = (0..v.len()).fold(0, |best, i| if v[i].norm() > v[best].norm() + 1e-12 { i } else { best });
    if v[lead].norm() > 0.0 {
        let rot = v[lead].conj() / v[lead].norm();
        v *= rot;
    }
    (top, v)
}

/// `Tr(Q) - lambda_max(Q)`: the sum of all eigenvalues but the largest.
pub fn penalty_residual(q: &CMatrix) -> Result<f64> {
    let eig = SymmetricEigen::new(q.clone());
    let vals = &eig.eigenvalues;
    let scale = vals.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if vals.min() < -1e-9 * scale {
        return Err(Error::Domain(format!("matrix not PSD (eigenvalue {:.3e})", vals.min())));
    }
    Ok((q.trace().re - vals.max()).max(0.0))
}

/// Subgradient `sigma sigma^H` of `lambda_max` at `q`.
pub fn lambda_subgradient(q: &CMatrix) -> CMatrix {
    let (_, v) = largest_eigenpair(q);
    &v * v.adjoint()
}

fn re_trace(a: &CMatrix, b: &CMatrix) -> f64 {
    convex::hermitian_inner(a, b)
}

/// `g3(Q_t) - (1/mu) * sum_l lambda_max(Q_l)`.
pub fn penalized_g(q_t: &CMatrix, q_r: &CMatrix, mu: f64, p_u: f64, h3: &CMatrix, sigma_d_sq: f64) -> f64 {
    let g3 = (p_u * re_trace(h3, q_t) + sigma_d_sq).log2();
    let lam = |q: &CMatrix| SymmetricEigen::new(q.clone()).eigenvalues.max();
    g3 - (lam(q_t) + lam(q_r)) / mu
}

/// Tangent upper bound of [`penalized_g`] built at `(at_t, at_r)`.
#[allow(clippy::too_many_arguments)]
pub fn linearized_g(
    q_t: &CMatrix,
    q_r: &CMatrix,
    at_t: &CMatrix,
    at_r: &CMatrix,
    mu: f64,
    p_u: f64,
    h3: &CMatrix,
    sigma_d_sq: f64,
) -> f64 {
    let inner = p_u * re_trace(h3, at_t) + sigma_d_sq;
    let log_part = inner.log2() + p_u * (re_trace(h3, q_t) - re_trace(h3, at_t)) / (LN_2 * inner);
    let lam_part: f64 = [(q_t, at_t), (q_r, at_r)]
        .iter()
        .map(|(q, at)| {
            let (lam, v) = largest_eigenpair(at);
            let s = &v * v.adjoint();
            lam + re_trace(&s, q) - re_trace(&s, at)
        })
        .sum();
    log_part - lam_part / mu
}

/// `sqrt(lambda_max) * sigma` once `q` is numerically rank one.
pub fn extract_rank_one(q: &CMatrix, eps3: f64) -> Result<CVector> {
    let residual = penalty_residual(q)?;
    if residual > eps3 {
        return Err(Error::RankResidual { residual, threshold: eps3 });
    }
    let (lam, v) = largest_eigenpair(q);
    Ok(v * C64::new(lam.max(0.0).sqrt(), 0.0))
}

/// One inner-loop record of the penalty method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyIterRecord {
    pub outer: usize,
    pub mu: f64,
    pub inner: usize,
    /// Penalized objective at the new iterate.
    pub objective: f64,
    pub residual_t: f64,
    pub residual_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileStatus {
    /// Both penalty residuals reached the threshold.
    Converged,
    /// Outer-iteration cap reached first.
    MaxOuter,
    /// A convex subproblem failed; the best earlier iterate was used.
    SolverFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptResult {
    pub profile: StarRisProfile,
    pub status: ProfileStatus,
    /// The incoming profile was returned because the extracted one was
    /// infeasible or had a lower sum rate.
    pub kept_input: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub residual_t: f64,
    pub residual_r: f64,
    /// Sum rate from traces of the final lifted matrices.
    pub lifted_sum_rate: f64,
    /// Sum rate of the vectors extracted from them, kept or not.
    pub extracted_sum_rate: f64,
    pub records: Vec<PenaltyIterRecord>,
}

/// The two matrix blocks actually optimized: full-size for energy splitting,
/// the transmit and reflect halves for mode switching.
#[derive(Debug, Clone, PartialEq)]
struct Blocks {
    t: CMatrix,
    r: CMatrix,
}

/// The beamforming subproblem for fixed powers.
#[derive(Debug, Clone)]
pub struct BeamformingProblem {
    pub mode: SurfaceMode,
    pub powers: PowerAllocation,
    num_elements: usize,
    t_idx: Vec<usize>,
    r_idx: Vec<usize>,
    h1: CMatrix,
    h2: CMatrix,
    h3: CMatrix,
    prelog: f64,
    /// `p_d * gamma_bb + sigma_u^2`.
    ul_noise: f64,
    sigma_d_sq: f64,
    targets: (f64, f64),
}

fn sub_block(m: &CMatrix, idx: &[usize]) -> CMatrix {
    CMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

impl BeamformingProblem {
    pub fn new(cc: &CompositeChannels, powers: PowerAllocation, sys: &SystemParams, mode: SurfaceMode) -> Result<Self> {
        let m = cc.num_elements();
        let (t_idx, r_idx): (Vec<usize>, Vec<usize>) = match mode {
            SurfaceMode::EnergySplitting => ((0..m).collect(), (0..m).collect()),
            SurfaceMode::ModeSwitching => {
                if m % 2 != 0 {
                    return Err(Error::Config(format!("mode switching needs an even element count, got {m}")));
                }
                ((0..m / 2).collect(), (m / 2..m).collect())
            }
        };
        let lifted = LiftedChannels::new(cc);
        let full = sys.duplex == Duplex::Full;
        let gamma_bb = if full { cc.h_bb.norm_sqr() } else { 0.0 };
        let h3 = if full { sub_block(&lifted.h3, &t_idx) } else { CMatrix::zeros(t_idx.len(), t_idx.len()) };
        Ok(Self {
            mode,
            powers,
            num_elements: m,
            h1: sub_block(&lifted.h1, &r_idx),
            h2: sub_block(&lifted.h2, &t_idx),
            h3,
            t_idx,
            r_idx,
            prelog: sys.duplex.prelog(),
            ul_noise: powers.p_d * gamma_bb + sys.noise.sigma_u_sq,
            sigma_d_sq: sys.noise.sigma_d_sq,
            targets: sys.constraints.sinr_targets(sys.duplex),
        })
    }

    fn blocks(&self, lp: &LiftedProfile) -> Blocks {
        Blocks { t: sub_block(&lp.q_t_mat, &self.t_idx), r: sub_block(&lp.q_r_mat, &self.r_idx) }
    }

    fn embed(&self, b: &Blocks) -> LiftedProfile {
        let m = self.num_elements;
        let mut q_t_mat = CMatrix::zeros(m, m);
        let mut q_r_mat = CMatrix::zeros(m, m);
        for (i, &a) in self.t_idx.iter().enumerate() {
            for (j, &c) in self.t_idx.iter().enumerate() {
                q_t_mat[(a, c)] = b.t[(i, j)];
            }
        }
        for (i, &a) in self.r_idx.iter().enumerate() {
            for (j, &c) in self.r_idx.iter().enumerate() {
                q_r_mat[(a, c)] = b.r[(i, j)];
            }
        }
        let beta_t = DVector::from_fn(m, |k, _| q_t_mat[(k, k)].re);
        let beta_r = DVector::from_fn(m, |k, _| q_r_mat[(k, k)].re);
        LiftedProfile { q_t_mat, q_r_mat, beta_t, beta_r }
    }

    fn p_u(&self) -> f64 {
        self.powers.p_u
    }

    fn p_d(&self) -> f64 {
        self.powers.p_d
    }

    /// Sum rate from traces: `g1 + g2 - g3 - f`, scaled by the pre-log.
    fn block_sum_rate(&self, b: &Blocks) -> f64 {
        let interf = self.p_u() * re_trace(&self.h3, &b.t) + self.sigma_d_sq;
        let dl = ((interf + self.p_d() * re_trace(&self.h2, &b.t)) / interf).log2();
        let ul = (1.0 + self.p_u() * re_trace(&self.h1, &b.r) / self.ul_noise).log2();
        self.prelog * (dl + ul)
    }

    pub fn lifted_sum_rate(&self, lp: &LiftedProfile) -> f64 {
        self.block_sum_rate(&self.blocks(lp))
    }

    /// `F - G` of the penalized problem at penalty factor `mu`.
    fn penalized_objective(&self, b: &Blocks, mu: f64) -> f64 {
        let lam = |q: &CMatrix| SymmetricEigen::new(q.clone()).eigenvalues.max();
        let penalty = b.t.trace().re - lam(&b.t) + b.r.trace().re - lam(&b.r);
        self.block_sum_rate(b) - penalty / mu
    }

    fn build(&self, at: &Blocks, mu: f64) -> ConicProgram {
        let (nt, nr) = (self.t_idx.len(), self.r_idx.len());
        let mut prog = ConicProgram::default();
        let qt = prog.add_matrix(nt);
        let qr = prog.add_matrix(nr);
        let pre = self.prelog;
        let c = |x: f64| C64::new(x, 0.0);

        // g1 and g2, with arguments divided by their noise terms.
        let dl_coef = (&self.h3 * c(self.p_u()) + &self.h2 * c(self.p_d())) / c(self.sigma_d_sq);
        prog.log_terms.push(LogTerm { weight: pre, arg: AffineExpr::constant(1.0).dense(qt, dl_coef) });
        let ul_coef = &self.h1 * c(self.p_u() / self.ul_noise);
        prog.log_terms.push(LogTerm { weight: pre, arg: AffineExpr::constant(1.0).dense(qr, ul_coef) });

        // Tangent of g3 and the penalty with lambda_max replaced by its
        // subgradient bound. lambda(at) - <s, at> vanishes for the top
        // eigenvector, so only the linear parts remain.
        let inner = self.p_u() * re_trace(&self.h3, &at.t) + self.sigma_d_sq;
        let slope = pre * self.p_u() / (LN_2 * inner);
        let constant = -pre * ((inner / self.sigma_d_sq).log2() - self.p_u() * re_trace(&self.h3, &at.t) / (LN_2 * inner));
        let pen_t = (lambda_subgradient(&at.t) - CMatrix::identity(nt, nt)) * c(1.0 / mu);
        let pen_r = (lambda_subgradient(&at.r) - CMatrix::identity(nr, nr)) * c(1.0 / mu);
        prog.linear = AffineExpr::constant(constant)
            .dense(qt, &self.h3 * c(-slope) + pen_t)
            .dense(qr, pen_r);

        match self.mode {
            SurfaceMode::EnergySplitting => {
                for k in 0..nt {
                    prog.equalities.push(AffineExpr::constant(-1.0).diagonal(qt, k, 1.0).diagonal(qr, k, 1.0));
                }
            }
            SurfaceMode::ModeSwitching => {
                for k in 0..nt {
                    prog.equalities.push(AffineExpr::constant(-1.0).diagonal(qt, k, 1.0));
                }
                for k in 0..nr {
                    prog.equalities.push(AffineExpr::constant(-1.0).diagonal(qr, k, 1.0));
                }
            }
        }

        // The power step leaves the rate constraints active, which can make
        // the feasible set have no interior. A relative relaxation well inside
        // the feasibility tolerance restores one.
        let (tu, td) = self.targets;
        let floor = -(1.0 - THRESHOLD_RELAXATION);
        if tu > 0.0 {
            let coef = &self.h1 * c(self.p_u() / (tu * self.ul_noise));
            prog.inequalities.push(AffineExpr::constant(floor).dense(qr, coef));
        }
        if td > 0.0 {
            let coef = (&self.h2 * c(self.p_d()) - &self.h3 * c(td * self.p_u())) / c(td * self.sigma_d_sq);
            prog.inequalities.push(AffineExpr::constant(floor).dense(qt, coef));
        }

        // Pull the expansion point slightly toward the scaled identity so
        // the solver starts strictly inside the PSD cone.
        let blend = 0.01;
        let centre = match self.mode {
            SurfaceMode::EnergySplitting => 0.5,
            SurfaceMode::ModeSwitching => 1.0,
        };
        let start = |q: &CMatrix, n: usize| q * c(1.0 - blend) + CMatrix::identity(n, n) * c(blend * centre);
        prog.initial = Some(Point { scalars: DVector::zeros(0), matrices: vec![start(&at.t, nt), start(&at.r, nr)] });
        prog
    }

    /// The convex subproblem at expansion point `at` and penalty factor `mu`.
    /// Block 0 is the transmit matrix, block 1 the reflect matrix; in
    /// mode-switching they cover only the elements of their side.
    pub fn build_p5(&self, at: &LiftedProfile, mu: f64) -> ConicProgram {
        self.build(&self.blocks(at), mu)
    }

    /// Penalized objective the subproblem bounds from below, at `lp`.
    pub fn penalized(&self, lp: &LiftedProfile, mu: f64) -> f64 {
        self.penalized_objective(&self.blocks(lp), mu)
    }

    /// Maps a solver point back to full-size lifted matrices.
    pub fn lifted_from_point(&self, x: &Point) -> LiftedProfile {
        self.embed(&Blocks { t: x.matrices[0].clone(), r: x.matrices[1].clone() })
    }

    /// Rank-one profile from lifted matrices. Phases of elements a side does
    /// not use are taken from `fallback`.
    fn extract(&self, b: &Blocks, fallback: &StarRisProfile) -> StarRisProfile {
        let vector = |q: &CMatrix| {
            let (lam, v) = largest_eigenpair(q);
            v * C64::new(lam.max(0.0).sqrt(), 0.0)
        };
        let (vt, vr) = (vector(&b.t), vector(&b.r));
        match self.mode {
            SurfaceMode::EnergySplitting => {
                StarRisProfile::from_q_vectors(&vt, &vr).expect("blocks have equal size")
            }
            SurfaceMode::ModeSwitching => {
                let m = self.num_elements;
                let mut beta_t = DVector::zeros(m);
                let mut phi_t = fallback.phi_t.clone();
                let mut phi_r = fallback.phi_r.clone();
                for (i, &k) in self.t_idx.iter().enumerate() {
                    beta_t[k] = 1.0;
                    phi_t[k] = -vt[i].arg();
                }
                for (i, &k) in self.r_idx.iter().enumerate() {
                    phi_r[k] = -vr[i].arg();
                }
                StarRisProfile::new(beta_t, phi_t, phi_r).expect("lengths match")
            }
        }
    }

    /// Both rates reach their thresholds within [`FEASIBILITY_TOL`], the
    /// tolerance of the final constraint check.
    fn profile_feasible(&self, profile: &StarRisProfile) -> bool {
        let b = self.blocks(&lift_profile(profile));
        let (tu, td) = self.targets;
        let sinr_u = self.p_u() * re_trace(&self.h1, &b.r) / self.ul_noise;
        let sinr_d = self.p_d() * re_trace(&self.h2, &b.t) / (self.p_u() * re_trace(&self.h3, &b.t) + self.sigma_d_sq);
        // Rate shortfall below the threshold, from the ratio of required to
        // achieved `1 + SINR`.
        let shortfall = |sinr: f64, target: f64| self.prelog * ((1.0 + target) / (1.0 + sinr.max(0.0))).log2();
        shortfall(sinr_u, tu) <= FEASIBILITY_TOL && shortfall(sinr_d, td) <= FEASIBILITY_TOL
    }

    pub fn sum_rate(&self, profile: &StarRisProfile) -> f64 {
        self.lifted_sum_rate(&lift_profile(profile))
    }

    /// Penalty method with SCA inner loops, starting from `initial`.
    pub fn optimize(&self, initial: &StarRisProfile, settings: &BeamformerSettings) -> ProfileOptResult {
        let sched = settings.schedule;
        let mut current = self.blocks(&lift_profile(initial));
        let mut mu = sched.mu;
        let mut records = Vec::new();
        let mut status = ProfileStatus::MaxOuter;
        let mut outer = 0;
        let mut inner_total = 0;
        let residual = |q: &CMatrix| penalty_residual(q).unwrap_or(f64::INFINITY);

        'outer: while outer < settings.max_outer {
            outer += 1;
            let mut value = self.penalized_objective(&current, mu);
            for inner in 1..=settings.max_inner {
                let sol = convex::solve(&self.build(&current, mu), &settings.solver);
                inner_total += 1;
                let x = match (sol.status, sol.point) {
                    (SolveStatus::Optimal, Some(x)) => x,
                    _ => {
                        status = ProfileStatus::SolverFailure;
                        break 'outer;
                    }
                };
                let mut iter = x.matrices.into_iter();
                let next = Blocks { t: iter.next().unwrap(), r: iter.next().unwrap() };
                let next_value = self.penalized_objective(&next, mu);
                let (rt, rr) = (residual(&next.t), residual(&next.r));
                records.push(PenaltyIterRecord { outer, mu, inner, objective: next_value, residual_t: rt, residual_r: rr });
                let increase = (next_value - value) / value.abs().max(1e-12);
                current = next;
                value = next_value;
                if increase < sched.eps2 {
                    break;
                }
            }
            if residual(&current.t) <= sched.eps3 && residual(&current.r) <= sched.eps3 {
                status = ProfileStatus::Converged;
                break;
            }
            mu *= sched.c;
        }

        let lifted = self.embed(&current);
        let lifted_sum_rate = self.block_sum_rate(&current);
        let extracted = self.extract(&current, initial);
        let extracted_sum_rate = self.sum_rate(&extracted);
        let keep_input = !self.profile_feasible(&extracted) || extracted_sum_rate < self.sum_rate(initial);
        ProfileOptResult {
            profile: if keep_input { initial.clone() } else { extracted },
            status,
            kept_input: keep_input,
            outer_iterations: outer,
            inner_iterations: inner_total,
            residual_t: residual(&lifted.q_t_mat),
            residual_r: residual(&lifted.q_r_mat),
            lifted_sum_rate,
            extracted_sum_rate,
            records,
        }
    }
}

/// Runs the penalty method for one set of fixed powers.
pub fn optimize_profile(
    initial: &StarRisProfile,
    cc: &CompositeChannels,
    powers: PowerAllocation,
    sys: &SystemParams,
    mode: SurfaceMode,
    settings: &BeamformerSettings,
) -> Result<ProfileOptResult> {
    settings.schedule.validate()?;
    if initial.num_elements() != cc.num_elements() {
        return Err(Error::Dimension { expected: cc.num_elements(), got: initial.num_elements() });
    }
    Ok(BeamformingProblem::new(cc, powers, sys, mode)?.optimize(initial, settings))
}

/// Sum rate of a profile via the vector-form rate expressions.
pub fn vector_sum_rate(profile: &StarRisProfile, cc: &CompositeChannels, powers: &PowerAllocation, sys: &SystemParams) -> f64 {
    let g = system::effective_gains(profile, cc);
    let (ru, rd) = system::rates(powers, &g, &sys.noise, sys.duplex);
    ru + rd
}
