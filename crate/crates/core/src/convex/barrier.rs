//! Primal log-barrier interior-point method with structured Newton steps.
//!
//! The barrier Hessian is block diagonal (`X^-1 (.) X^-1` per matrix block,
//! diagonal for the scalar box) plus one rank-one term per log objective term
//! and per affine inequality. Newton systems are reduced to a dense system
//! whose size is the number of rank-one terms plus the number of equalities,
//! so a step costs a handful of `M x M` products per block.

use std::f64::consts::LN_2;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{
    ConicProgram, MatrixCoef, Point, ScalarVar, SolveStatus, Solution,
    SolverSettings,
};
use crate::{CMatrix, C64};

const BARRIER_GROWTH: f64 = 20.0;
const NEWTON_TOL: f64 = 1e-10;
/// Below this decrement, a step that fails to shrink it means the search
/// direction is dominated by roundoff.
const STALL_DECREMENT: f64 = 1e-4;
const MAX_CENTERING_STEPS: usize = 50;
const ARMIJO: f64 = 0.01;
const EQ_TOL: f64 = 1e-10;

/// An affine functional with coefficients merged per variable block.
#[derive(Debug, Clone)]
struct Functional {
    constant: f64,
    scalars: DVector<f64>,
    blocks: Vec<Option<MatrixCoef>>,
}

impl Functional {
    fn compile(expr: &super::AffineExpr, n_scalars: usize, dims: &[usize]) -> Self {
        let mut scalars = DVector::zeros(n_scalars);
        for &(i, c) in &expr.scalars {
            scalars[i] += c;
        }
        let mut blocks: Vec<Option<MatrixCoef>> = vec![None; dims.len()];
        for (b, coef) in &expr.matrices {
            let merged = match (blocks[*b].take(), coef) {
                (None, c) => c.clone(),
                (Some(MatrixCoef::Diagonal(mut a)), MatrixCoef::Diagonal(e)) => {
                    a.extend_from_slice(e);
                    MatrixCoef::Diagonal(a)
                }
                (Some(prev), c) => MatrixCoef::Dense(prev.to_dense(dims[*b]) + c.to_dense(dims[*b])),
            };
            blocks[*b] = Some(merged);
        }
        Self { constant: expr.constant, scalars, blocks }
    }

    /// Linear part applied to a point (no constant).
    fn apply(&self, p: &Point) -> f64 {
        let mut v = self.scalars.dot(&p.scalars);
        for (c, m) in self.blocks.iter().zip(&p.matrices) {
            if let Some(c) = c {
                v += c.eval(m);
            }
        }
        v
    }

    fn eval(&self, x: &Point) -> f64 {
        self.constant + self.apply(x)
    }

    /// Adds `scale` times the gradient of this functional into `g`.
    fn accumulate(&self, scale: f64, g: &mut Point) {
        g.scalars.axpy(scale, &self.scalars, 1.0);
        for (c, m) in self.blocks.iter().zip(g.matrices.iter_mut()) {
            match c {
                None => {}
                Some(MatrixCoef::Diagonal(entries)) => {
                    for &(k, v) in entries {
                        m[(k, k)] += C64::new(scale * v, 0.0);
                    }
                }
                Some(MatrixCoef::Dense(d)) => {
                    m.zip_apply(d, |a, b| *a += b * scale);
                }
            }
        }
    }

    fn with_scalar(mut self, extra: f64) -> Self {
        let n = self.scalars.len();
        self.scalars = self.scalars.insert_row(n, extra);
        self
    }
}

/// Compiled program; `log_terms` hold (weight, argument).
#[derive(Debug, Clone)]
struct Compiled {
    bounds: Vec<ScalarVar>,
    dims: Vec<usize>,
    log_terms: Vec<(f64, Functional)>,
    linear: Functional,
    equalities: Vec<Functional>,
    inequalities: Vec<Functional>,
}

impl Compiled {
    fn new(prog: &ConicProgram) -> Self {
        let ns = prog.scalars.len();
        let dims = &prog.matrix_dims;
        let f = |e| Functional::compile(e, ns, dims);
        Self {
            bounds: prog.scalars.clone(),
            dims: dims.clone(),
            log_terms: prog.log_terms.iter().map(|t| (t.weight, f(&t.arg))).collect(),
            linear: f(&prog.linear),
            equalities: prog.equalities.iter().map(f).collect(),
            inequalities: prog.inequalities.iter().map(f).collect(),
        }
    }

    fn barrier_degree(&self) -> f64 {
        (self.dims.iter().sum::<usize>() + self.inequalities.len() + 2 * self.bounds.len()) as f64
    }

    fn objective(&self, x: &Point) -> f64 {
        self.linear.eval(x)
            + self
                .log_terms
                .iter()
                .map(|(w, a)| w * a.eval(x).log2())
                .sum::<f64>()
    }

    fn zero_point(&self) -> Point {
        Point {
            scalars: DVector::zeros(self.bounds.len()),
            matrices: self.dims.iter().map(|&d| CMatrix::zeros(d, d)).collect(),
        }
    }

    /// Barrier objective `-t f(x) - sum log(...)`, or `None` outside the domain.
    fn barrier_value(&self, t: f64, x: &Point) -> Option<f64> {
        let mut v = 0.0;
        for (xi, b) in x.scalars.iter().zip(&self.bounds) {
            let lo = xi - b.lower;
            let hi = b.upper - xi;
            if !(lo > 0.0 && hi > 0.0) {
                return None;
            }
            v -= lo.ln() + hi.ln();
        }
        for m in &x.matrices {
            let chol = pd_cholesky(m)?;
            let l = chol.l_dirty();
            v -= 2.0 * (0..m.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>();
        }
        for s in &self.inequalities {
            let val = s.eval(x);
            if !(val > 0.0) {
                return None;
            }
            v -= val.ln();
        }
        let mut f = self.linear.eval(x);
        for (w, a) in &self.log_terms {
            let val = a.eval(x);
            if !(val > 0.0) {
                return None;
            }
            f += w * val.log2();
        }
        let total = v - t * f;
        total.is_finite().then_some(total)
    }
}

/// Cholesky factorization that rejects matrices which are not positive
/// definite. The complex `try_sqrt` never fails, so the factor's diagonal has
/// to be checked explicitly.
fn pd_cholesky(m: &CMatrix) -> Option<Cholesky<C64, Dyn>> {
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let ok = (0..m.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-12 * d.re
    });
    ok.then_some(chol)
}

fn hermitize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

fn point_axpy(y: &mut Point, a: f64, x: &Point) {
    y.scalars.axpy(a, &x.scalars, 1.0);
    for (ym, xm) in y.matrices.iter_mut().zip(&x.matrices) {
        ym.zip_apply(xm, |p, q| *p += q * a);
    }
}

/// Local quadratic model at the current iterate.
struct Local<'a> {
    x: &'a Point,
    /// Diagonal of the scalar-box barrier Hessian.
    scalar_curv: DVector<f64>,
}

impl Local<'_> {
    /// Applies the inverse of the block-diagonal Hessian part to a functional.
    fn solve_functional(&self, f: &Functional) -> Point {
        let scalars = f.scalars.component_div(&self.scalar_curv);
        let matrices = f
            .blocks
            .iter()
            .zip(&self.x.matrices)
            .map(|(c, x)| match c {
                None => CMatrix::zeros(x.nrows(), x.ncols()),
                Some(MatrixCoef::Diagonal(entries)) => outer_diag(x, entries),
                Some(MatrixCoef::Dense(c)) => {
                    let mut out = x * c * x;
                    hermitize(&mut out);
                    out
                }
            })
            .collect();
        Point { scalars, matrices }
    }

    fn solve_point(&self, g: &Point) -> Point {
        let scalars = g.scalars.component_div(&self.scalar_curv);
        let matrices = g
            .matrices
            .iter()
            .zip(&self.x.matrices)
            .map(|(gm, x)| {
                let mut out = x * gm * x;
                hermitize(&mut out);
                out
            })
            .collect();
        Point { scalars, matrices }
    }
}

/// `sum_k v_k * x[:, k] x[:, k]^H` for Hermitian `x`.
fn outer_diag(x: &CMatrix, entries: &[(usize, f64)]) -> CMatrix {
    let n = x.nrows();
    let mut out = CMatrix::zeros(n, n);
    for &(k, v) in entries {
        for j in 0..n {
            let xj = x[(j, k)].conj() * v;
            for i in 0..n {
                out[(i, j)] += x[(i, k)] * xj;
            }
        }
    }
    out
}

enum StepOutcome {
    Converged,
    Continue,
    Failed,
}

struct Solver<'a> {
    prog: &'a Compiled,
    steps: usize,
    max_steps: usize,
    prev_decrement: f64,
    /// Running equality multipliers. Solving only for their change keeps the
    /// reduced system's solution small, so its roundoff does not grow with t.
    multipliers: DVector<f64>,
}

impl<'a> Solver<'a> {
    fn new(prog: &'a Compiled, steps: usize, settings: &SolverSettings) -> Self {
        Self {
            prog,
            steps,
            max_steps: settings.max_iterations,
            prev_decrement: f64::INFINITY,
            multipliers: DVector::zeros(prog.equalities.len()),
        }
    }

    /// One Newton step on the barrier problem at parameter `t`.
    fn newton_step(&mut self, t: f64, x: &mut Point) -> StepOutcome {
        let p = self.prog;
        self.steps += 1;

        let mut factors = Vec::with_capacity(x.matrices.len());
        for m in &x.matrices {
            match pd_cholesky(m) {
                Some(c) => factors.push(c),
                None => return StepOutcome::Failed,
            }
        }
        let ns = p.bounds.len();
        let mut scalar_curv = DVector::zeros(ns);
        let mut g = p.zero_point();
        for i in 0..ns {
            let lo = x.scalars[i] - p.bounds[i].lower;
            let hi = p.bounds[i].upper - x.scalars[i];
            scalar_curv[i] = 1.0 / (lo * lo) + 1.0 / (hi * hi);
            g.scalars[i] = -1.0 / lo + 1.0 / hi;
        }
        // The -X^{-1} gradient of log det is folded in after the Hessian
        // solve, where it becomes -X and never needs an explicit inverse.
        p.linear.accumulate(-t, &mut g);

        // rank-one terms: (functional, weight)
        let mut low_rank: Vec<(&Functional, f64)> = Vec::new();
        for (w, a) in &p.log_terms {
            let val = a.eval(x);
            a.accumulate(-t * w / (LN_2 * val), &mut g);
            low_rank.push((a, t * w / (LN_2 * val * val)));
        }
        for s in &p.inequalities {
            let val = s.eval(x);
            s.accumulate(-1.0 / val, &mut g);
            low_rank.push((s, 1.0 / (val * val)));
        }

        if self.multipliers.len() != p.equalities.len() {
            self.multipliers = DVector::zeros(p.equalities.len());
        }
        for (f, nu) in p.equalities.iter().zip(self.multipliers.iter()) {
            f.accumulate(*nu, &mut g);
        }
        let local = Local { x, scalar_curv };
        let mut dinv_g = local.solve_point(&g);
        for (dm, xm) in dinv_g.matrices.iter_mut().zip(&x.matrices) {
            *dm -= xm;
        }
        let dinv_u: Vec<Point> = low_rank.iter().map(|(f, _)| local.solve_functional(f)).collect();
        let dinv_a: Vec<Point> = p.equalities.iter().map(|f| local.solve_functional(f)).collect();
        let eq_res: Vec<f64> = p.equalities.iter().map(|f| f.eval(x)).collect();

        let r = low_rank.len();
        let ne = p.equalities.len();
        let n = r + ne;
        let mut k = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        let funcs: Vec<&Functional> = low_rank.iter().map(|(f, _)| *f).chain(p.equalities.iter()).collect();
        let sols: Vec<&Point> = dinv_u.iter().chain(dinv_a.iter()).collect();
        for i in 0..n {
            for j in i..n {
                let v = funcs[i].apply(sols[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            let fg = funcs[i].apply(&dinv_g);
            rhs[i] = if i < r { -fg } else { eq_res[i - r] - fg };
        }
        for (i, (_, w)) in low_rank.iter().enumerate() {
            k[(i, i)] += 1.0 / w;
        }
        let Some(coef) = solve_symmetric(k, rhs) else {
            return StepOutcome::Failed;
        };
        for (nu, c) in self.multipliers.iter_mut().zip(coef.iter().skip(r)) {
            *nu += c;
        }

        let mut dx = dinv_g;
        for (c, s) in coef.iter().zip(&sols) {
            point_axpy(&mut dx, *c, s);
        }
        dx.scalars.neg_mut();
        for m in dx.matrices.iter_mut() {
            m.neg_mut();
        }

        let residual = eq_res.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        // dx^T H dx evaluated term by term; -g^T dx cancels badly for large t.
        let mut decrement: f64 = dx
            .scalars
            .iter()
            .zip(local.scalar_curv.iter())
            .map(|(d, c)| c * d * d)
            .sum();
        for (chol, dm) in factors.iter().zip(&dx.matrices) {
            let z = chol.solve(dm);
            decrement += z.transpose().dot(&z).re.max(0.0);
        }
        for (f, w) in &low_rank {
            let v = f.apply(&dx);
            decrement += w * v * v;
        }
        if !decrement.is_finite() {
            return StepOutcome::Failed;
        }
        let feasible_eq = residual <= EQ_TOL;
        let stalled = decrement < STALL_DECREMENT && decrement > 0.25 * self.prev_decrement;
        self.prev_decrement = decrement;
        if feasible_eq && (decrement / 2.0 <= NEWTON_TOL || stalled) {
            return StepOutcome::Converged;
        }

        // Inside the quadratic-convergence region a full step is taken
        // without comparing barrier values, which lose all precision there.
        let phi0 = if feasible_eq && decrement > 0.04 { p.barrier_value(t, x) } else { None };
        let mut step = 1.0;
        loop {
            let mut trial = x.clone();
            point_axpy(&mut trial, step, &dx);
            for m in trial.matrices.iter_mut() {
                hermitize(m);
            }
            if let Some(phi) = p.barrier_value(t, &trial) {
                let accept = match phi0 {
                    Some(phi0) => phi <= phi0 - ARMIJO * step * decrement,
                    None => true,
                };
                if accept {
                    *x = trial;
                    return StepOutcome::Continue;
                }
            }
            step *= 0.5;
            if step < 1e-14 {
                // No progress possible at this precision.
                return if feasible_eq { StepOutcome::Converged } else { StepOutcome::Failed };
            }
        }
    }

    fn center(&mut self, t: f64, x: &mut Point, stop: &dyn Fn(&Point) -> bool) -> Option<bool> {
        self.prev_decrement = f64::INFINITY;
        for _ in 0..MAX_CENTERING_STEPS {
            if self.steps >= self.max_steps {
                return None;
            }
            match self.newton_step(t, x) {
                StepOutcome::Converged => return Some(false),
                StepOutcome::Continue => {
                    if stop(x) {
                        return Some(true);
                    }
                }
                StepOutcome::Failed => return None,
            }
        }
        Some(false)
    }

    /// Barrier method from a domain point. Returns `Ok(early)` where `early`
    /// reports that `stop` fired, or `Err(())` on numerical failure.
    fn run(&mut self, x: &mut Point, tolerance: f64, stop: &dyn Fn(&Point) -> bool) -> Result<bool, ()> {
        let degree = self.prog.barrier_degree().max(1.0);
        let mut t = 1.0;
        loop {
            match self.center(t, x, stop) {
                None => return Err(()),
                Some(true) => return Ok(true),
                Some(false) => {}
            }
            if degree / t < tolerance {
                return Ok(false);
            }
            t *= BARRIER_GROWTH;
            self.multipliers *= BARRIER_GROWTH;
        }
    }
}

/// Solves a symmetric positive (semi)definite system after Jacobi scaling.
fn solve_symmetric(k: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    let n = k.nrows();
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let scale = DVector::from_fn(n, |i, _| {
        let d = k[(i, i)].abs();
        if d > 0.0 && d.is_finite() {
            1.0 / d.sqrt()
        } else {
            1.0
        }
    });
    let ks = DMatrix::from_fn(n, n, |i, j| k[(i, j)] * scale[i] * scale[j]);
    let rs = rhs.component_mul(&scale);
    let sol = match Cholesky::<f64, Dyn>::new(ks.clone()) {
        Some(c) => c.solve(&rs),
        None => ks.lu().solve(&rs)?,
    };
    let out = sol.component_mul(&scale);
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn default_start(prog: &ConicProgram) -> Point {
    Point {
        scalars: DVector::from_iterator(
            prog.scalars.len(),
            prog.scalars.iter().map(|b| 0.5 * (b.lower + b.upper)),
        ),
        matrices: prog.matrix_dims.iter().map(|&d| CMatrix::identity(d, d)).collect(),
    }
}

/// Pulls a candidate start strictly inside the scalar box and PSD cone.
fn interiorize(prog: &ConicProgram, mut x: Point) -> Point {
    for (v, b) in x.scalars.iter_mut().zip(&prog.scalars) {
        let width = b.upper - b.lower;
        *v = v.clamp(b.lower + 1e-3 * width, b.upper - 1e-3 * width);
    }
    for m in x.matrices.iter_mut() {
        hermitize(m);
        if pd_cholesky(m).is_none() {
            let n = m.nrows();
            let scale = (m.trace().re / n as f64).abs().max(1.0);
            let shifted = &*m * C64::new(0.9, 0.0) + CMatrix::identity(n, n) * C64::new(0.1 * scale, 0.0);
            *m = shifted;
        }
    }
    x
}

/// Returns true when `x` is strictly inside every inequality and log domain.
fn strictly_inside(p: &Compiled, x: &Point) -> bool {
    p.inequalities.iter().all(|s| s.eval(x) > 0.0) && p.log_terms.iter().all(|(_, a)| a.eval(x) > 0.0)
}

/// Finds a strictly feasible point by maximizing the smallest slack.
fn phase_one(p: &Compiled, x0: &Point, settings: &SolverSettings, steps: &mut usize) -> Result<Point, SolveStatus> {
    let slacks: Vec<f64> = p
        .inequalities
        .iter()
        .chain(p.log_terms.iter().map(|(_, a)| a))
        .map(|s| s.eval(x0))
        .collect();
    let min_slack = slacks.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = slacks.iter().map(|s| s.abs()).fold(1.0, f64::max);
    let tau = p.bounds.len();

    let mut bounds = p.bounds.clone();
    bounds.push(ScalarVar { lower: min_slack - 1.0 - 1e-3 * spread, upper: spread });
    let shifted = |f: &Functional| f.clone().with_scalar(-1.0);
    let mut linear = Functional {
        constant: 0.0,
        scalars: DVector::zeros(tau + 1),
        blocks: vec![None; p.dims.len()],
    };
    linear.scalars[tau] = 1.0;
    let aux = Compiled {
        bounds,
        dims: p.dims.clone(),
        log_terms: Vec::new(),
        linear,
        equalities: p.equalities.iter().map(|e| e.clone().with_scalar(0.0)).collect(),
        inequalities: p
            .inequalities
            .iter()
            .chain(p.log_terms.iter().map(|(_, a)| a))
            .map(shifted)
            .collect(),
    };
    let mut x = Point {
        scalars: x0.scalars.clone().insert_row(tau, min_slack - 1e-3 * spread.min(1.0) - 0.5),
        matrices: x0.matrices.clone(),
    };
    let mut solver = Solver::new(&aux, *steps, settings);
    let stop = |x: &Point| {
        x.scalars[tau] > 0.0 && {
            let inner = Point { scalars: x.scalars.rows(0, tau).into_owned(), matrices: x.matrices.clone() };
            strictly_inside(p, &inner) && p.equalities.iter().all(|e| e.eval(&inner).abs() <= 1e-6)
        }
    };
    let outcome = solver.run(&mut x, settings.tolerance, &stop);
    *steps = solver.steps;
    match outcome {
        Ok(true) => Ok(Point { scalars: x.scalars.rows(0, tau).into_owned(), matrices: x.matrices }),
        Ok(false) => Err(SolveStatus::Infeasible),
        Err(()) => Err(SolveStatus::NumericalFailure),
    }
}

/// Solves `prog` to the requested duality-gap tolerance.
pub fn solve(prog: &ConicProgram, settings: &SolverSettings) -> Solution {
    let compiled = Compiled::new(prog);
    let start = prog.initial.clone().unwrap_or_else(|| default_start(prog));
    let mut x = interiorize(prog, start);
    let mut steps = 0;

    if !strictly_inside(&compiled, &x) {
        match phase_one(&compiled, &x, settings, &mut steps) {
            Ok(p) => x = p,
            Err(status) => return Solution::failed(status, steps),
        }
    }

    let mut solver = Solver::new(&compiled, steps, settings);
    let outcome = solver.run(&mut x, settings.tolerance, &|_| false);
    let steps = solver.steps;
    match outcome {
        Ok(_) => {
            let objective = compiled.objective(&x);
            Solution { status: SolveStatus::Optimal, point: Some(x), objective_value: Some(objective), newton_steps: steps }
        }
        Err(()) => Solution::failed(SolveStatus::NumericalFailure, steps),
    }
}
