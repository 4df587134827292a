//! Solver-agnostic description of the two convex subproblem shapes and a
//! barrier interior-point solver for them.
//!
//! A [`ConicProgram`] maximizes `sum_i w_i * log2(a_i(x)) + l(x)` over a
//! vector of box-bounded scalars and a list of Hermitian PSD matrices, subject
//! to affine equalities and inequalities. Every affine map is an
//! [`AffineExpr`]; matrix coefficients act through `Re Tr(C X)`.

mod barrier;
mod embedding;

pub use barrier::solve;
pub use embedding::{real_embedding, real_embedding_extract};

use nalgebra::DVector;

use crate::CMatrix;

/// Coefficient of a matrix variable inside an affine functional.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixCoef {
    /// `sum_k c_k * X[k, k]`.
    Diagonal(Vec<(usize, f64)>),
    /// `Re Tr(C X)` for Hermitian `C`.
    Dense(CMatrix),
}

impl MatrixCoef {
    fn to_dense(&self, dim: usize) -> CMatrix {
        match self {
            MatrixCoef::Dense(c) => c.clone(),
            MatrixCoef::Diagonal(entries) => {
                let mut c = CMatrix::zeros(dim, dim);
                for &(k, v) in entries {
                    c[(k, k)] += crate::C64::new(v, 0.0);
                }
                c
            }
        }
    }

    fn eval(&self, x: &CMatrix) -> f64 {
        match self {
            MatrixCoef::Diagonal(entries) => entries.iter().map(|&(k, v)| v * x[(k, k)].re).sum(),
            MatrixCoef::Dense(c) => hermitian_inner(c, x),
        }
    }
}

/// `Re Tr(A B)` for Hermitian `A`, `B`.
pub fn hermitian_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    b.dotc(a).re
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub constant: f64,
    pub scalars: Vec<(usize, f64)>,
    pub matrices: Vec<(usize, MatrixCoef)>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, ..Self::default() }
    }

    pub fn scalar(mut self, var: usize, coef: f64) -> Self {
        self.scalars.push((var, coef));
        self
    }

    pub fn diagonal(mut self, block: usize, index: usize, coef: f64) -> Self {
        self.matrices.push((block, MatrixCoef::Diagonal(vec![(index, coef)])));
        self
    }

    pub fn dense(mut self, block: usize, coef: CMatrix) -> Self {
        self.matrices.push((block, MatrixCoef::Dense(coef)));
        self
    }

    pub fn eval(&self, x: &Point) -> f64 {
        self.constant
            + self.scalars.iter().map(|&(i, c)| c * x.scalars[i]).sum::<f64>()
            + self.matrices.iter().map(|(b, c)| c.eval(&x.matrices[*b])).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarVar {
    pub lower: f64,
    pub upper: f64,
}

/// `weight * log2(arg)`, with `weight > 0` for a concave objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTerm {
    pub weight: f64,
    pub arg: AffineExpr,
}

/// A point of the decision space.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub scalars: DVector<f64>,
    pub matrices: Vec<CMatrix>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    pub scalars: Vec<ScalarVar>,
    pub matrix_dims: Vec<usize>,
    pub log_terms: Vec<LogTerm>,
    pub linear: AffineExpr,
    /// Each expression is constrained to equal zero.
    pub equalities: Vec<AffineExpr>,
    /// Each expression is constrained to be non-negative.
    pub inequalities: Vec<AffineExpr>,
    /// Optional starting point; matrices should be positive definite and
    /// equalities satisfied. Inequalities may be violated (phase I repairs it).
    pub initial: Option<Point>,
}

impl ConicProgram {
    pub fn add_scalar(&mut self, lower: f64, upper: f64) -> usize {
        self.scalars.push(ScalarVar { lower, upper });
        self.scalars.len() - 1
    }

    pub fn add_matrix(&mut self, dim: usize) -> usize {
        self.matrix_dims.push(dim);
        self.matrix_dims.len() - 1
    }

    pub fn objective(&self, x: &Point) -> f64 {
        self.linear.eval(x)
            + self
                .log_terms
                .iter()
                .map(|t| t.weight * t.arg.eval(x).log2())
                .sum::<f64>()
    }

    /// Largest violation of the equalities, inequalities, bounds and PSD
    /// constraints at `x` (zero when feasible).
    pub fn infeasibility(&self, x: &Point) -> f64 {
        let mut worst: f64 = 0.0;
        for e in &self.equalities {
            worst = worst.max(e.eval(x).abs());
        }
        for e in &self.inequalities {
            worst = worst.max(-e.eval(x));
        }
        for (v, s) in x.scalars.iter().zip(&self.scalars) {
            worst = worst.max(s.lower - v).max(v - s.upper);
        }
        for m in &x.matrices {
            let eig = nalgebra::SymmetricEigen::new(m.clone());
            worst = worst.max(-eig.eigenvalues.min());
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Bound on the duality gap of the returned point.
    pub tolerance: f64,
    /// Cap on the total number of Newton steps.
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    pub point: Option<Point>,
    pub objective_value: Option<f64>,
    pub newton_steps: usize,
}

impl Solution {
    fn failed(status: SolveStatus, newton_steps: usize) -> Self {
        Self { status, point: None, objective_value: None, newton_steps }
    }
}
