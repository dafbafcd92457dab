//! Differentiable scalar objectives and their finite-difference Hessians.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A smooth function of a flat parameter vector with an analytic gradient.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, theta: &[f64]) -> f64;

    /// Writes the gradient into `grad` (overwriting it) and returns the value.
    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.dim()];
        self.value_and_gradient(theta, &mut grad);
        grad
    }
}

/// `base + alpha * extra`, evaluated term by term.
pub struct Combined<'a, A: ?Sized, B: ?Sized> {
    pub base: &'a A,
    pub extra: &'a B,
    pub alpha: f64,
}

impl<A: Objective + ?Sized, B: Objective + ?Sized> Objective for Combined<'_, A, B> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        self.base.value(theta) + self.alpha * self.extra.value(theta)
    }

    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut extra = vec![0.0; grad.len()];
        let a = self.base.value_and_gradient(theta, grad);
        let b = self.extra.value_and_gradient(theta, &mut extra);
        for (g, e) in grad.iter_mut().zip(&extra) {
            *g += self.alpha * e;
        }
        a + self.alpha * b
    }
}

pub const DEFAULT_HESSIAN_CAP: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianOptions {
    /// Largest parameter count for which a dense Hessian is formed.
    pub cap: usize,
    /// Central-difference step applied to the analytic gradient.
    pub step: f64,
}

impl Default for HessianOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_HESSIAN_CAP,
            step: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HessianMatrix {
    /// Symmetrized `(H + Hᵀ) / 2`.
    pub matrix: DMatrix<f64>,
    /// `max |H - Hᵀ|` of the raw finite-difference matrix.
    pub asymmetry: f64,
}

/// Column `j` is `(∇f(θ + h e_j) - ∇f(θ - h e_j)) / 2h`.
pub fn finite_difference_hessian<O: Objective + ?Sized>(
    objective: &O,
    theta: &[f64],
    options: HessianOptions,
) -> Result<HessianMatrix> {
    let dim = objective.dim();
    if dim > options.cap {
        return Err(Error::HessianTooLarge {
            params: dim,
            cap: options.cap,
        });
    }
    if theta.len() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            found: theta.len(),
        });
    }
    let h = options.step;
    let mut raw = DMatrix::zeros(dim, dim);
    let mut point = theta.to_vec();
    let mut plus = vec![0.0; dim];
    let mut minus = vec![0.0; dim];
    for j in 0..dim {
        point[j] = theta[j] + h;
        objective.value_and_gradient(&point, &mut plus);
        point[j] = theta[j] - h;
        objective.value_and_gradient(&point, &mut minus);
        point[j] = theta[j];
        for i in 0..dim {
            raw[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    let transpose = raw.transpose();
    let asymmetry = (&raw - &transpose).amax();
    let matrix = (raw + transpose) * 0.5;
    Ok(HessianMatrix { matrix, asymmetry })
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
