//! Linearization at the station and a continuous-time algebraic Riccati solver.
//!
//! The solver integrates the Riccati differential equation
//! `dP/ds = A'P + PA - P B R^-1 B' P + Q` from `P = 0` with classical RK4 until
//! the right-hand side vanishes to working precision.

use nalgebra::{Complex, DMatrix, SMatrix};

use crate::adp::{basis_index, CostWeights, PAIRS};
use crate::dynamics::{ParameterVector, VehicleParams};
use crate::error::{Error, Result};
use crate::linalg::{is_finite, symmetrize, Mat3, Mat6, Mat63, Vec21};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Mat6,
    pub b: Mat63,
}

/// Jacobian of the current-free residual model at `zeta = 0`.
///
/// Coriolis and quadratic damping forces are quadratic in the velocity, so only
/// the kinematics and linear damping survive.
pub fn linearize(params: &VehicleParams, theta: &ParameterVector) -> Result<LinearModel> {
    params.validate()?;
    let m_inv = (params.m_rb() + params.m_a())
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("mass matrix is singular".into()))?;
    let mut a = Mat6::zeros();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
    a.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(-(m_inv * Mat3::from_diagonal(&theta.linear_damping()))));
    let mut b = Mat63::zeros();
    b.fixed_view_mut::<3, 3>(3, 0).copy_from(&m_inv);
    Ok(LinearModel { a, b })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions {
    /// RK4 step in the backward time variable.
    pub step: f64,
    pub max_steps: usize,
    /// Stationarity threshold on `|dP/ds|_max`, relative to `max(1, |Q|_max)`.
    pub tolerance: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            step: 1e-2,
            max_steps: 1_000_000,
            tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CareSolution<const N: usize, const M: usize> {
    pub p: SMatrix<f64, N, N>,
    /// `K = R^-1 B' P`.
    pub k: SMatrix<f64, M, N>,
    pub steps: usize,
    /// Max-abs `dP/ds` recorded every 100 steps.
    pub rate_history: Vec<f64>,
}

pub fn care_residual<const N: usize, const M: usize>(
    a: &SMatrix<f64, N, N>,
    b: &SMatrix<f64, N, M>,
    q: &SMatrix<f64, N, N>,
    r_inv: &SMatrix<f64, M, M>,
    p: &SMatrix<f64, N, N>,
) -> SMatrix<f64, N, N> {
    let s = b * r_inv * b.transpose();
    a.transpose() * p + p * a - p * s * p + q
}

/// Stabilizing solution of `A'P + PA - P B R^-1 B' P + Q = 0`.
pub fn solve_care<const N: usize, const M: usize>(
    a: &SMatrix<f64, N, N>,
    b: &SMatrix<f64, N, M>,
    q: &SMatrix<f64, N, N>,
    r: &SMatrix<f64, M, M>,
    opts: &RiccatiOptions,
) -> Result<CareSolution<N, M>> {
    if !(is_finite(a) && is_finite(b) && is_finite(q) && is_finite(r)) {
        return Err(Error::InvalidParameter("Riccati data must be finite".into()));
    }
    if !(opts.step > 0.0) || !(opts.tolerance > 0.0) {
        return Err(Error::InvalidParameter("Riccati step and tolerance must be positive".into()));
    }
    let r_inv = r
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("R is singular".into()))?;
    let s = b * r_inv * b.transpose();
    let at = a.transpose();
    let rhs = |p: &SMatrix<f64, N, N>| at * p + p * a - p * s * p + q;
    let scale = q.abs().max().max(1.0);
    let h = opts.step;

    let mut p = SMatrix::<f64, N, N>::zeros();
    let mut history = Vec::new();
    let mut rate = f64::INFINITY;
    for step in 0..opts.max_steps {
        let k1 = rhs(&p);
        rate = k1.abs().max();
        if step % 100 == 0 {
            history.push(rate);
        }
        if rate <= opts.tolerance * scale {
            let p = symmetrize(&p);
            check_stabilizing(a, b, &r_inv, &p)?;
            return Ok(CareSolution {
                k: r_inv * b.transpose() * p,
                p,
                steps: step,
                rate_history: history,
            });
        }
        let k2 = rhs(&(p + k1 * (0.5 * h)));
        let k3 = rhs(&(p + k2 * (0.5 * h)));
        let k4 = rhs(&(p + k3 * h));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        p = symmetrize(&p);
        if !is_finite(&p) {
            return Err(Error::SolverNonConvergence { steps: step, residual: f64::INFINITY });
        }
    }
    Err(Error::SolverNonConvergence {
        steps: opts.max_steps,
        residual: rate,
    })
}

fn check_stabilizing<const N: usize, const M: usize>(
    a: &SMatrix<f64, N, N>,
    b: &SMatrix<f64, N, M>,
    r_inv: &SMatrix<f64, M, M>,
    p: &SMatrix<f64, N, N>,
) -> Result<()> {
    let acl = a - b * r_inv * b.transpose() * p;
    if closed_loop_eigenvalues(&acl).iter().any(|e| e.re >= 0.0) {
        return Err(Error::Precondition(
            "Riccati limit is not stabilizing; (A, B) may not be stabilizable".into(),
        ));
    }
    Ok(())
}

pub fn closed_loop_eigenvalues<const N: usize>(m: &SMatrix<f64, N, N>) -> Vec<Complex<f64>> {
    DMatrix::from_iterator(N, N, m.iter().copied())
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: Mat6,
    pub k: SMatrix<f64, 3, 6>,
}

impl RiccatiSolution {
    pub fn weights(&self) -> Vec21 {
        weights_from_p(&self.p)
    }

    pub fn residual(&self, model: &LinearModel, weights: &CostWeights) -> f64 {
        care_residual(&model.a, &model.b, weights.q(), weights.r_inv(), &self.p)
            .abs()
            .max()
    }
}

pub fn solve_are(model: &LinearModel, weights: &CostWeights) -> Result<RiccatiSolution> {
    solve_are_with(model, weights, &RiccatiOptions::default())
}

pub fn solve_are_with(
    model: &LinearModel,
    weights: &CostWeights,
    opts: &RiccatiOptions,
) -> Result<RiccatiSolution> {
    let sol = solve_care(&model.a, &model.b, weights.q(), weights.r(), opts)?;
    Ok(RiccatiSolution { p: sol.p, k: sol.k })
}

/// Weights with `W' sigma(zeta) = zeta' P zeta`.
pub fn weights_from_p(p: &Mat6) -> Vec21 {
    let p = symmetrize(p);
    Vec21::from_fn(|k, _| {
        let (i, j) = PAIRS[k];
        if i == j {
            p[(i, i)]
        } else {
            2.0 * p[(i, j)]
        }
    })
}

/// Inverse of [`weights_from_p`].
pub fn p_from_weights(w: &Vec21) -> Mat6 {
    Mat6::from_fn(|i, j| {
        let v = w[basis_index(i, j)];
        if i == j {
            v
        } else {
            0.5 * v
        }
    })
}
