//! Fixed-size matrix aliases and a few small helpers shared across modules.

use nalgebra::{SMatrix, SVector};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec6 = nalgebra::Vector6<f64>;
pub type Vec8 = SVector<f64, 8>;
pub type Vec21 = SVector<f64, 21>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat6 = nalgebra::Matrix6<f64>;
pub type Mat8 = SMatrix<f64, 8, 8>;
pub type Mat21 = SMatrix<f64, 21, 21>;
pub type Mat38 = SMatrix<f64, 3, 8>;
pub type Mat63 = SMatrix<f64, 6, 3>;
pub type Mat68 = SMatrix<f64, 6, 8>;
pub type Mat21x6 = SMatrix<f64, 21, 6>;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_range<const N: usize>(m: &SMatrix<f64, N, N>) -> (f64, f64) {
    let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_iterator(N, N, m.iter().copied()));
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Induced 2-norm of a rectangular matrix.
pub fn spectral_norm<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> f64 {
    let mtm = m.transpose() * m;
    let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_iterator(
        C,
        C,
        mtm.iter().copied(),
    ));
    eig.eigenvalues.iter().copied().fold(0.0, f64::max).max(0.0).sqrt()
}

pub fn is_finite<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> bool {
    m.iter().all(|v| v.is_finite())
}
