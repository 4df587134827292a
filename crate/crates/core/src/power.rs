//! Transmit-power subproblem at a fixed surface profile: Dinkelbach
//! iterations where each step maximizes a concave lower bound obtained by
//! linearizing the two interference-plus-noise log terms.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::convex::{self, AffineExpr, ConicProgram, LogTerm, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::system::{
    Duplex, EffectiveGains, NoiseParams, PowerAllocation, PowerCost, RateConstraints, SystemParams, FEASIBILITY_TOL,
};

/// Slope and value at `x0` of the tangent to `log2(gain * x + noise)`.
fn log_tangent(x0: f64, gain: f64, noise: f64) -> (f64, f64) {
    let inner = x0 * gain + noise;
    (gain / (LN_2 * inner), inner.log2())
}

/// Tangent of `f3(p_d) = log2(p_d * gamma_bb + sigma_u^2)` at `p_d_n`,
/// evaluated at `p_d`.
pub fn taylor_f3(p_d: f64, p_d_n: f64, gamma_bb: f64, sigma_u_sq: f64) -> f64 {
    let (slope, value) = log_tangent(p_d_n, gamma_bb, sigma_u_sq);
    value + slope * (p_d - p_d_n)
}

/// Tangent of `f4(p_u) = log2(p_u * gamma3 + sigma_d^2)` at `p_u_n`.
pub fn taylor_f4(p_u: f64, p_u_n: f64, gamma3: f64, sigma_d_sq: f64) -> f64 {
    let (slope, value) = log_tangent(p_u_n, gamma3, sigma_d_sq);
    value + slope * (p_u - p_u_n)
}

pub fn dinkelbach_alpha(rate: f64, p_tot: f64) -> Result<f64> {
    if !(p_tot > 0.0) {
        return Err(Error::Domain(format!("total power {p_tot} must be positive")));
    }
    Ok(rate / p_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Maximize sum rate over total power.
    EnergyEfficiency,
    /// Maximize sum rate; the Dinkelbach parameter stays at zero.
    SumRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DinkelbachState {
    pub alpha: f64,
    pub point: PowerAllocation,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerStatus {
    Converged,
    MaxIterations,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIterRecord {
    pub iteration: usize,
    pub alpha: f64,
    pub p_u: f64,
    pub p_d: f64,
    /// Optimal value of the linearized subproblem.
    pub surrogate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerOptResult {
    pub allocation: PowerAllocation,
    pub alpha_trace: Vec<f64>,
    pub status: PowerStatus,
    /// Number of convex subproblems solved.
    pub iterations: usize,
    pub records: Vec<PowerIterRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSettings {
    /// Stop once the fractional increase of the tracked objective is below this.
    pub eps1: f64,
    pub max_outer: usize,
    pub objective: Objective,
    pub solver: SolverSettings,
}

impl Default for PowerSettings {
    fn default() -> Self {
        Self {
            eps1: 1e-5,
            max_outer: 50,
            objective: Objective::EnergyEfficiency,
            solver: SolverSettings { tolerance: 1e-9, max_iterations: 500 },
        }
    }
}

/// Everything the power subproblem sees for one fixed surface profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerProblem {
    /// Gains as seen in `duplex` mode.
    pub gains: EffectiveGains,
    pub noise: NoiseParams,
    pub constraints: RateConstraints,
    pub cost: PowerCost,
    pub duplex: Duplex,
}

impl PowerProblem {
    pub fn new(gains: EffectiveGains, num_elements: usize, sys: &SystemParams) -> Self {
        Self {
            gains: gains.for_duplex(sys.duplex),
            noise: sys.noise,
            constraints: sys.constraints,
            cost: PowerCost::new(num_elements, &sys.power, sys.duplex),
            duplex: sys.duplex,
        }
    }

    fn targets(&self) -> (f64, f64) {
        self.constraints.sinr_targets(self.duplex)
    }

    pub fn sum_rate(&self, p: &PowerAllocation) -> f64 {
        let (ru, rd) = crate::system::rates(p, &self.gains, &self.noise, self.duplex);
        ru + rd
    }

    pub fn energy_efficiency(&self, p: &PowerAllocation) -> f64 {
        self.sum_rate(p) / self.cost.eval(p)
    }

    /// Slacks of the two SINR constraints in linear form, each divided by its
    /// noise power.
    pub fn sinr_slacks(&self, p: &PowerAllocation) -> (f64, f64) {
        let g = &self.gains;
        let n = &self.noise;
        let (tu, td) = self.targets();
        (
            (p.p_u * g.gamma1 - tu * (p.p_d * g.gamma_bb + n.sigma_u_sq)) / n.sigma_u_sq,
            (p.p_d * g.gamma2 - td * (p.p_u * g.gamma3 + n.sigma_d_sq)) / n.sigma_d_sq,
        )
    }

    /// Rate thresholds and power boxes hold within [`FEASIBILITY_TOL`].
    pub fn is_feasible(&self, p: &PowerAllocation) -> bool {
        let c = &self.constraints;
        let (ru, rd) = crate::system::rates(p, &self.gains, &self.noise, self.duplex);
        ru >= c.r_u_th - FEASIBILITY_TOL
            && rd >= c.r_d_th - FEASIBILITY_TOL
            && p.p_u >= -FEASIBILITY_TOL
            && p.p_d >= -FEASIBILITY_TOL
            && p.p_u <= c.p_u_max + FEASIBILITY_TOL
            && p.p_d <= c.p_d_max + FEASIBILITY_TOL
    }

    /// The componentwise smallest powers meeting both SINR targets, ignoring
    /// the caps. `None` when no finite power meets them.
    pub fn min_power_point(&self) -> Option<PowerAllocation> {
        let g = &self.gains;
        let n = &self.noise;
        let (tu, td) = self.targets();
        let det = g.gamma1 * g.gamma2 - tu * td * g.gamma_bb * g.gamma3;
        let p_u = if tu > 0.0 { tu * (n.sigma_u_sq * g.gamma2 + g.gamma_bb * td * n.sigma_d_sq) } else { 0.0 };
        let p_d = if td > 0.0 { td * (n.sigma_d_sq * g.gamma1 + g.gamma3 * tu * n.sigma_u_sq) } else { 0.0 };
        if p_u == 0.0 && p_d == 0.0 {
            return Some(PowerAllocation::new(0.0, 0.0));
        }
        if !(det > 0.0) {
            return None;
        }
        Some(PowerAllocation::new(p_u / det, p_d / det))
    }

    /// A feasible starting allocation: half the caps if that already works,
    /// otherwise the minimum-power point scaled up halfway toward the caps.
    pub fn feasible_start(&self) -> Option<PowerAllocation> {
        let c = &self.constraints;
        let mid = PowerAllocation::new(0.5 * c.p_u_max, 0.5 * c.p_d_max);
        if self.is_feasible(&mid) {
            return Some(mid);
        }
        let min = self.min_power_point()?;
        let room_u = if min.p_u > 0.0 { c.p_u_max / min.p_u } else { f64::INFINITY };
        let room_d = if min.p_d > 0.0 { c.p_d_max / min.p_d } else { f64::INFINITY };
        let room = room_u.min(room_d);
        if !(room >= 1.0) {
            return None;
        }
        // Scaling the minimum point up keeps both SINR constraints satisfied.
        let scale = 0.5 * (1.0 + room);
        let p = PowerAllocation::new(min.p_u * scale, min.p_d * scale);
        self.is_feasible(&p).then_some(p)
    }

    /// Value of the linearized Dinkelbach objective at `p`.
    pub fn surrogate(&self, p: &PowerAllocation, alpha: f64, expansion: &PowerAllocation) -> f64 {
        let g = &self.gains;
        let n = &self.noise;
        let f1 = (p.p_d * g.gamma_bb + n.sigma_u_sq + p.p_u * g.gamma1).log2();
        let f2 = (p.p_u * g.gamma3 + n.sigma_d_sq + p.p_d * g.gamma2).log2();
        let f3 = taylor_f3(p.p_d, expansion.p_d, g.gamma_bb, n.sigma_u_sq);
        let f4 = taylor_f4(p.p_u, expansion.p_u, g.gamma3, n.sigma_d_sq);
        self.duplex.prelog() * (f1 + f2 - f3 - f4) - alpha * self.cost.eval(p)
    }

    /// Convex program over `(p_u, p_d)` whose objective equals
    /// [`Self::surrogate`]. Scalar 0 is `p_u`, scalar 1 is `p_d`.
    pub fn build_p3(&self, alpha: f64, expansion: &PowerAllocation) -> ConicProgram {
        let g = &self.gains;
        let n = &self.noise;
        let c = &self.constraints;
        let pre = self.duplex.prelog();
        let mut prog = ConicProgram::default();
        let pu = prog.add_scalar(0.0, c.p_u_max);
        let pd = prog.add_scalar(0.0, c.p_d_max);

        // Log arguments are divided by the noise so they start at one.
        prog.log_terms.push(LogTerm {
            weight: pre,
            arg: AffineExpr::constant(1.0)
                .scalar(pu, g.gamma1 / n.sigma_u_sq)
                .scalar(pd, g.gamma_bb / n.sigma_u_sq),
        });
        prog.log_terms.push(LogTerm {
            weight: pre,
            arg: AffineExpr::constant(1.0)
                .scalar(pu, g.gamma3 / n.sigma_d_sq)
                .scalar(pd, g.gamma2 / n.sigma_d_sq),
        });
        let (s3, v3) = log_tangent(expansion.p_d, g.gamma_bb, n.sigma_u_sq);
        let (s4, v4) = log_tangent(expansion.p_u, g.gamma3, n.sigma_d_sq);
        let constant = pre * (n.sigma_u_sq.log2() + n.sigma_d_sq.log2() - v3 + s3 * expansion.p_d - v4
            + s4 * expansion.p_u)
            - alpha * self.cost.constant;
        prog.linear = AffineExpr::constant(constant)
            .scalar(pu, -pre * s4 - alpha * self.cost.per_uplink)
            .scalar(pd, -pre * s3 - alpha * self.cost.per_downlink);

        let (tu, td) = self.targets();
        if tu > 0.0 {
            prog.inequalities.push(
                AffineExpr::constant(-1.0)
                    .scalar(pu, g.gamma1 / (tu * n.sigma_u_sq))
                    .scalar(pd, -g.gamma_bb / n.sigma_u_sq),
            );
        }
        if td > 0.0 {
            prog.inequalities.push(
                AffineExpr::constant(-1.0)
                    .scalar(pd, g.gamma2 / (td * n.sigma_d_sq))
                    .scalar(pu, -g.gamma3 / n.sigma_d_sq),
            );
        }
        prog
    }

    fn tracked(&self, objective: Objective, p: &PowerAllocation) -> f64 {
        match objective {
            Objective::EnergyEfficiency => self.energy_efficiency(p),
            Objective::SumRate => self.sum_rate(p),
        }
    }

    /// Dinkelbach iterations from a feasible `initial` allocation.
    ///
    /// `alpha_trace` holds the tracked objective (energy efficiency, or sum
    /// rate when `alpha` is frozen) after each accepted iterate, starting with
    /// the initial point. A subproblem that would decrease it ends the loop
    /// and keeps the previous point.
    pub fn optimize(&self, initial: PowerAllocation, settings: &PowerSettings) -> PowerOptResult {
        let mut result = PowerOptResult {
            allocation: initial,
            alpha_trace: Vec::new(),
            status: PowerStatus::Infeasible,
            iterations: 0,
            records: Vec::new(),
        };
        if !self.is_feasible(&initial) {
            return result;
        }
        let mut state = DinkelbachState { alpha: self.tracked(settings.objective, &initial), point: initial, iteration: 0 };
        result.alpha_trace.push(state.alpha);
        result.status = PowerStatus::MaxIterations;

        while state.iteration < settings.max_outer {
            let alpha = match settings.objective {
                Objective::EnergyEfficiency => state.alpha,
                Objective::SumRate => 0.0,
            };
            let mut prog = self.build_p3(alpha, &state.point);
            prog.initial = Some(convex::Point {
                scalars: nalgebra::DVector::from_vec(vec![state.point.p_u, state.point.p_d]),
                matrices: Vec::new(),
            });
            let sol = convex::solve(&prog, &settings.solver);
            state.iteration += 1;
            result.iterations = state.iteration;
            let (Some(x), Some(value)) = (sol.point.as_ref(), sol.objective_value) else {
                result.status = PowerStatus::NumericalFailure;
                break;
            };
            if sol.status != SolveStatus::Optimal {
                result.status = PowerStatus::NumericalFailure;
                break;
            }
            let next = PowerAllocation::new(
                x.scalars[0].clamp(0.0, self.constraints.p_u_max),
                x.scalars[1].clamp(0.0, self.constraints.p_d_max),
            );
            result.records.push(PowerIterRecord {
                iteration: state.iteration,
                alpha,
                p_u: next.p_u,
                p_d: next.p_d,
                surrogate: value,
            });
            let next_value = self.tracked(settings.objective, &next);
            if !self.is_feasible(&next) || next_value < state.alpha {
                result.status = PowerStatus::Converged;
                break;
            }
            let gain = (next_value - state.alpha) / state.alpha.abs().max(f64::MIN_POSITIVE);
            state.point = next;
            state.alpha = next_value;
            result.alpha_trace.push(next_value);
            if gain < settings.eps1 {
                result.status = PowerStatus::Converged;
                break;
            }
        }
        result.allocation = state.point;
        result
    }
}

/// Runs [`PowerProblem::optimize`] at the given gains.
pub fn optimize_power(
    initial: PowerAllocation,
    gains: EffectiveGains,
    num_elements: usize,
    sys: &SystemParams,
    settings: &PowerSettings,
) -> PowerOptResult {
    PowerProblem::new(gains, num_elements, sys).optimize(initial, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::PowerModelParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sys(r_u_th: f64, r_d_th: f64) -> SystemParams {
        SystemParams {
            noise: NoiseParams { sigma_u_sq: 1e-12, sigma_d_sq: 1e-12 },
            constraints: RateConstraints { r_u_th, r_d_th, p_u_max: 0.1, p_d_max: 1.0 },
            power: PowerModelParams { p_c: 1.0, p_s: 0.004, p_c0: 0.05, xi: 0.1, rho: 0.8 },
            duplex: Duplex::Full,
        }
    }

    fn gains() -> EffectiveGains {
        EffectiveGains { gamma1: 3e-10, gamma2: 5e-10, gamma3: 2e-11, gamma_bb: 1e-10 }
    }

    #[test]
    fn tangents_touch_at_expansion() {
        let (g, s) = (1e-10, 1e-12);
        assert!((taylor_f3(0.3, 0.3, g, s) - (0.3 * g + s).log2()).abs() < 1e-14);
        assert!((taylor_f4(0.05, 0.05, g, s) - (0.05 * g + s).log2()).abs() < 1e-14);
    }

    #[test]
    fn tangents_flat_without_coupling() {
        for p in [0.0, 0.2, 1.0] {
            assert_eq!(taylor_f3(p, 0.7, 0.0, 1e-12), 1e-12f64.log2());
            assert_eq!(taylor_f4(p, 0.01, 0.0, 2e-12), 2e-12f64.log2());
        }
    }

    #[test]
    fn tangents_overestimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = f64::INFINITY;
        for _ in 0..1000 {
            let g = 10f64.powf(rng.gen_range(-13.0..-8.0));
            let s = 10f64.powf(rng.gen_range(-13.0..-11.0));
            let (x, x0) = (rng.gen::<f64>(), rng.gen::<f64>());
            worst = worst.min(taylor_f3(x, x0, g, s) - (x * g + s).log2());
            worst = worst.min(taylor_f4(x, x0, g, s) - (x * g + s).log2());
        }
        assert!(worst >= -1e-12, "{worst}");
    }

    #[test]
    fn alpha_is_ratio() {
        assert_eq!(dinkelbach_alpha(0.0, 3.0).unwrap(), 0.0);
        assert_eq!(dinkelbach_alpha(4.0, 2.0).unwrap(), 2.0);
        assert!(dinkelbach_alpha(1.0, 0.0).is_err());
    }

    #[test]
    fn program_objective_equals_surrogate() {
        let prob = PowerProblem::new(gains(), 8, &sys(1.0, 3.0));
        let exp = PowerAllocation::new(0.04, 0.6);
        let prog = prob.build_p3(1.7, &exp);
        for (pu, pd) in [(0.01, 0.2), (0.09, 0.95), (0.04, 0.6)] {
            let p = PowerAllocation::new(pu, pd);
            let x = convex::Point { scalars: nalgebra::DVector::from_vec(vec![pu, pd]), matrices: vec![] };
            assert!((prog.objective(&x) - prob.surrogate(&p, 1.7, &exp)).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_minorizes_dinkelbach_objective() {
        let prob = PowerProblem::new(gains(), 8, &sys(0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let p = PowerAllocation::new(rng.gen::<f64>() * 0.1, rng.gen::<f64>());
            let e = PowerAllocation::new(rng.gen::<f64>() * 0.1, rng.gen::<f64>());
            let alpha = rng.gen::<f64>() * 5.0;
            let exact = prob.sum_rate(&p) - alpha * prob.cost.eval(&p);
            assert!(prob.surrogate(&p, alpha, &e) <= exact + 1e-12);
            let at = prob.sum_rate(&e) - alpha * prob.cost.eval(&e);
            assert!((prob.surrogate(&e, alpha, &e) - at).abs() < 1e-12);
        }
    }

    fn solve_p3(prob: &PowerProblem, alpha: f64, exp: &PowerAllocation) -> (PowerAllocation, f64) {
        let sol = convex::solve(&prob.build_p3(alpha, exp), &PowerSettings::default().solver);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let x = sol.point.unwrap();
        (PowerAllocation::new(x.scalars[0], x.scalars[1]), sol.objective_value.unwrap())
    }

    #[test]
    fn heavy_price_switches_off() {
        let prob = PowerProblem::new(gains(), 8, &sys(0.0, 0.0));
        let (p, _) = solve_p3(&prob, 1e6, &PowerAllocation::new(0.05, 0.5));
        assert!(p.p_u < 1e-6 && p.p_d < 1e-6, "{p:?}");
    }

    #[test]
    fn free_power_goes_to_caps() {
        let g = EffectiveGains { gamma3: 0.0, gamma_bb: 0.0, ..gains() };
        let prob = PowerProblem::new(g, 8, &sys(0.0, 0.0));
        let (p, _) = solve_p3(&prob, 0.0, &PowerAllocation::new(0.05, 0.5));
        assert!((p.p_u - 0.1).abs() < 1e-6 && (p.p_d - 1.0).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn p3_matches_surrogate_grid() {
        let prob = PowerProblem::new(gains(), 8, &sys(1.0, 3.0));
        let exp = prob.feasible_start().unwrap();
        // Half the current ratio keeps the optimal value well away from zero.
        let alpha = 0.5 * prob.energy_efficiency(&exp);
        let (_, value) = solve_p3(&prob, alpha, &exp);
        let mut best = f64::NEG_INFINITY;
        for i in 0..=200 {
            for j in 0..=200 {
                let p = PowerAllocation::new(0.1 * i as f64 / 200.0, j as f64 / 200.0);
                let (su, sd) = prob.sinr_slacks(&p);
                if su >= 0.0 && sd >= 0.0 {
                    best = best.max(prob.surrogate(&p, alpha, &exp));
                }
            }
        }
        assert!(value >= best - 1e-9);
        assert!(value - best <= 5e-3 * best.abs(), "{value} vs {best}");
    }

    #[test]
    fn min_power_point_meets_targets_with_equality() {
        let prob = PowerProblem::new(gains(), 8, &sys(1.0, 3.0));
        let p = prob.min_power_point().unwrap();
        let (su, sd) = prob.sinr_slacks(&p);
        assert!(su.abs() < 1e-9 && sd.abs() < 1e-9);
        let start = prob.feasible_start().unwrap();
        assert!(prob.is_feasible(&start));
    }

    #[test]
    fn unreachable_targets_have_no_start() {
        let prob = PowerProblem::new(gains(), 8, &sys(20.0, 20.0));
        assert!(prob.feasible_start().is_none());
        let r = prob.optimize(PowerAllocation::new(0.05, 0.5), &PowerSettings::default());
        assert_eq!(r.status, PowerStatus::Infeasible);
    }

    #[test]
    fn ascent_from_any_start() {
        let prob = PowerProblem::new(gains(), 8, &sys(0.0, 0.0));
        let start = PowerAllocation::new(0.07, 0.9);
        let r = prob.optimize(start, &PowerSettings::default());
        assert_eq!(r.status, PowerStatus::Converged);
        assert!(prob.energy_efficiency(&r.allocation) >= prob.energy_efficiency(&start));
        for w in r.alpha_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn restart_at_optimum_is_a_fixed_point() {
        let prob = PowerProblem::new(gains(), 8, &sys(1.0, 3.0));
        let first = prob.optimize(prob.feasible_start().unwrap(), &PowerSettings::default());
        let again = prob.optimize(first.allocation, &PowerSettings::default());
        assert!(again.iterations <= 2);
        let (a, b) = (first.alpha_trace.last().unwrap(), again.alpha_trace.last().unwrap());
        assert!((a - b).abs() <= 1e-5 * a);
    }

    #[test]
    fn frozen_alpha_maximizes_sum_rate() {
        let prob = PowerProblem::new(gains(), 8, &sys(1.0, 3.0));
        let settings = PowerSettings { objective: Objective::SumRate, ..PowerSettings::default() };
        let srm = prob.optimize(prob.feasible_start().unwrap(), &settings);
        let eem = prob.optimize(prob.feasible_start().unwrap(), &PowerSettings::default());
        assert!(prob.sum_rate(&srm.allocation) >= prob.sum_rate(&eem.allocation) - 1e-6);
        assert!(prob.energy_efficiency(&srm.allocation) <= prob.energy_efficiency(&eem.allocation) + 1e-9);
    }

    #[test]
    fn half_duplex_ignores_interference() {
        let mut s = sys(1.0, 3.0);
        s.duplex = Duplex::Half;
        let prob = PowerProblem::new(gains(), 8, &s);
        assert_eq!(prob.gains.gamma_bb, 0.0);
        assert_eq!(prob.gains.gamma3, 0.0);
        let r = prob.optimize(prob.feasible_start().unwrap(), &PowerSettings::default());
        assert_eq!(r.status, PowerStatus::Converged);
        assert!(prob.is_feasible(&r.allocation));
    }
}
