//! Closed-form covariance building blocks for the Markov orders
//! `alpha = 1` (exponential kernel) and `alpha = 2` (once differentiable
//! kernel): the stationary kernel and its cross-derivative matrix, the
//! bridge covariance (edge process pinned to zero boundary data), the
//! boundaryless edge covariance, boundary interpolation weights, and the
//! interval / circle specializations.
//!
//! All hyperbolic expressions are written in decaying-exponential form so
//! they stay finite for arbitrarily large `kappa * length`.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::collections::BTreeMap;

/// Smoothness order of the field; only the Markov cases are supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alpha {
    One,
    Two,
}

impl Alpha {
    pub fn order(self) -> usize {
        match self {
            Alpha::One => 1,
            Alpha::Two => 2,
        }
    }

    pub fn from_u32(a: u32) -> Result<Self> {
        match a {
            1 => Ok(Alpha::One),
            2 => Ok(Alpha::Two),
            _ => Err(Error::InvalidParams(format!("alpha must be 1 or 2, got {a}"))),
        }
    }
}

/// Boundary handling at a degree-1 vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Neumann-type condition; the variance inflates near the free end.
    Kirchhoff,
    /// Stationary condition: the endpoint keeps the free-space marginal.
    Stationary,
}

/// Per-degree-1-vertex boundary configuration, keyed by vertex label so it
/// survives graph surgeries.
#[derive(Clone, Debug)]
pub struct BoundaryConfig {
    pub default: BoundaryMode,
    pub overrides: BTreeMap<usize, BoundaryMode>,
}

impl BoundaryConfig {
    pub fn kirchhoff() -> Self {
        BoundaryConfig { default: BoundaryMode::Kirchhoff, overrides: BTreeMap::new() }
    }

    pub fn stationary() -> Self {
        BoundaryConfig { default: BoundaryMode::Stationary, overrides: BTreeMap::new() }
    }

    pub fn mode_at(&self, vertex_id: usize) -> BoundaryMode {
        self.overrides.get(&vertex_id).copied().unwrap_or(self.default)
    }
}

/// Field parameters. `sigma` is the observation-noise standard deviation
/// (0 means direct observations).
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub alpha: Alpha,
    pub kappa: f64,
    pub tau: f64,
    pub sigma: f64,
    pub boundary: BoundaryConfig,
}

impl ModelParams {
    pub fn new(alpha: Alpha, kappa: f64, tau: f64, sigma: f64) -> Result<Self> {
        let p = ModelParams { alpha, kappa, tau, sigma, boundary: BoundaryConfig::kirchhoff() };
        p.validate()?;
        Ok(p)
    }

    pub fn with_boundary(mut self, mode: BoundaryMode) -> Self {
        self.boundary.default = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::InvalidParams(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidParams(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidParams(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Free-space (stationary) variance of the field.
    pub fn stationary_variance(&self) -> f64 {
        matern_cov(self, 0.0)
    }
}

/// Stationary kernel at signed distance `h`.
pub fn matern_cov(p: &ModelParams, h: f64) -> f64 {
    let x = p.kappa * h.abs();
    match p.alpha {
        Alpha::One => (-x).exp() / (2.0 * p.kappa * p.tau * p.tau),
        Alpha::Two => (1.0 + x) * (-x).exp() / (4.0 * p.kappa.powi(3) * p.tau * p.tau),
    }
}

/// k-th derivative of the stationary kernel; alpha = 2 needs k <= 2,
/// alpha = 1 only ever uses k = 0 (its kernel matrix is 1x1).
fn matern_deriv(p: &ModelParams, h: f64, k: usize) -> f64 {
    let kap = p.kappa;
    match (p.alpha, k) {
        (_, 0) => matern_cov(p, h),
        (Alpha::Two, 1) => -h * (-kap * h.abs()).exp() / (4.0 * kap * p.tau * p.tau),
        (Alpha::Two, 2) => {
            (kap * h.abs() - 1.0) * (-kap * h.abs()).exp() / (4.0 * kap * p.tau * p.tau)
        }
        _ => unreachable!("derivative order {k} undefined for alpha {:?}", p.alpha),
    }
}

/// Cross-derivative kernel matrix: entry (i, j) is
/// `d^i/dt1^i d^j/dt2^j rho(t1 - t2)` for i, j in 0..alpha, i.e. the
/// cross-covariance of (u, u', ...) at t1 with (u, u', ...) at t2.
pub fn deriv_kernel_matrix(p: &ModelParams, t1: f64, t2: f64) -> DMatrix<f64> {
    let a = p.alpha.order();
    let h = t1 - t2;
    DMatrix::from_fn(a, a, |i, j| {
        let sign = if j % 2 == 1 { -1.0 } else { 1.0 };
        sign * matern_deriv(p, h, i + j)
    })
}

/// cosh(a) / sinh(l) for a >= 0, l > 0, in overflow-safe form.
fn cosh_over_sinh(a: f64, l: f64) -> f64 {
    debug_assert!(a >= 0.0 && l > 0.0);
    ((a - l).exp() + (-a - l).exp()) / (1.0 - (-2.0 * l).exp())
}

/// Per-edge kernel workspace: the stationary endpoint matrix and the
/// boundaryless middle matrix are factorized once and reused for all
/// evaluations on the edge.
pub struct EdgeKernel {
    params: ModelParams,
    pub ell: f64,
    /// Covariance of the stacked endpoint data (2 alpha x 2 alpha).
    pub endpoint_cov: DMatrix<f64>,
    chol_m: Cholesky<f64, Dyn>,
    chol_w: Cholesky<f64, Dyn>,
}

impl EdgeKernel {
    pub fn new(p: &ModelParams, ell: f64) -> Result<Self> {
        if !(ell.is_finite() && ell > 0.0) {
            return Err(Error::BadEdgeLength { edge: usize::MAX, length: ell });
        }
        let a = p.alpha.order();
        let r00 = deriv_kernel_matrix(p, 0.0, 0.0);
        let r0l = deriv_kernel_matrix(p, 0.0, ell);
        let rl0 = deriv_kernel_matrix(p, ell, 0.0);
        let mut m = DMatrix::zeros(2 * a, 2 * a);
        m.view_mut((0, 0), (a, a)).copy_from(&r00);
        m.view_mut((0, a), (a, a)).copy_from(&r0l);
        m.view_mut((a, 0), (a, a)).copy_from(&rl0);
        m.view_mut((a, a), (a, a)).copy_from(&r00);
        let chol_m = Cholesky::new(m.clone())
            .ok_or(Error::NotPositiveDefinite("stationary endpoint matrix"))?;
        let mut w = DMatrix::zeros(2 * a, 2 * a);
        w.view_mut((0, 0), (a, a)).copy_from(&r00);
        w.view_mut((0, a), (a, a)).copy_from(&(-&r0l));
        w.view_mut((a, 0), (a, a)).copy_from(&(-&rl0));
        w.view_mut((a, a), (a, a)).copy_from(&r00);
        let chol_w = Cholesky::new(w).ok_or(Error::Singular("boundaryless middle matrix"))?;
        Ok(EdgeKernel { params: p.clone(), ell, endpoint_cov: m, chol_m, chol_w })
    }

    pub fn alpha(&self) -> usize {
        self.params.alpha.order()
    }

    /// Cross-covariance of the endpoint data with the derivative vector at
    /// `t`: a (2 alpha x alpha) matrix.
    fn cross(&self, t: f64) -> DMatrix<f64> {
        let a = self.alpha();
        let top = deriv_kernel_matrix(&self.params, 0.0, t);
        let bot = deriv_kernel_matrix(&self.params, self.ell, t);
        let mut c = DMatrix::zeros(2 * a, a);
        c.view_mut((0, 0), (a, a)).copy_from(&top);
        c.view_mut((a, 0), (a, a)).copy_from(&bot);
        c
    }

    /// Boundary weight row `S(t)` (length 2 alpha): interpolation weights
    /// of the endpoint data, satisfying `B S = I`.
    pub fn s_row(&self, t: f64) -> DVector<f64> {
        let c = self.cross(t).column(0).into_owned();
        self.chol_m.solve(&c)
    }

    /// Weight matrix of the endpoint data for the whole derivative vector
    /// at `t`: row j interpolates the j-th derivative (alpha x 2 alpha).
    pub fn weights_matrix(&self, t: f64) -> DMatrix<f64> {
        self.chol_m.solve(&self.cross(t)).transpose()
    }

    /// Bridge covariance matrix of the derivative vectors at (t1, t2):
    /// the stationary kernel conditioned on zero endpoint data.
    pub fn bridge_matrix(&self, t1: f64, t2: f64) -> DMatrix<f64> {
        let c1 = self.cross(t1);
        let c2 = self.cross(t2);
        deriv_kernel_matrix(&self.params, t1, t2) - c1.transpose() * self.chol_m.solve(&c2)
    }

    /// Scalar bridge covariance (value-value entry).
    pub fn bridge(&self, t1: f64, t2: f64) -> f64 {
        self.bridge_matrix(t1, t2)[(0, 0)]
    }

    /// Multivariate boundaryless covariance at (t1, t2); its (0, 0) entry
    /// is the scalar boundaryless kernel.
    pub fn boundaryless(&self, t1: f64, t2: f64) -> DMatrix<f64> {
        let c1 = self.cross(t1);
        let c2 = self.cross(t2);
        deriv_kernel_matrix(&self.params, t1, t2) + c1.transpose() * self.chol_w.solve(&c2)
    }

    /// Precision matrix of the stationary endpoint data.
    pub fn endpoint_precision(&self) -> DMatrix<f64> {
        self.chol_m.inverse()
    }

    /// r(0,0)^{-1}, the single-endpoint marginal precision block.
    pub fn r00_inv(&self) -> DMatrix<f64> {
        let r00 = deriv_kernel_matrix(&self.params, 0.0, 0.0);
        Cholesky::new(r00).expect("r(0,0) is positive definite").inverse()
    }
}

/// Boundary weight row vector for an edge of length `ell`.
pub fn boundary_weights_s(p: &ModelParams, ell: f64, t: f64) -> Result<DVector<f64>> {
    Ok(EdgeKernel::new(p, ell)?.s_row(t))
}

/// Scalar bridge covariance on an edge of length `ell`.
pub fn bridge_cov(p: &ModelParams, ell: f64, t1: f64, t2: f64) -> Result<f64> {
    Ok(EdgeKernel::new(p, ell)?.bridge(t1, t2))
}

/// Multivariate boundaryless covariance on an edge of length `ell`.
pub fn boundaryless_cov(p: &ModelParams, ell: f64, t1: f64, t2: f64) -> Result<DMatrix<f64>> {
    Ok(EdgeKernel::new(p, ell)?.boundaryless(t1, t2))
}

/// Covariance of the field on a single interval `[0, ell]` with
/// Neumann (Kirchhoff) conditions at both ends.
pub fn interval_cov(p: &ModelParams, ell: f64, t1: f64, t2: f64) -> f64 {
    let kap = p.kappa;
    let big_l = kap * ell;
    match p.alpha {
        Alpha::One => {
            let h = (t1 - t2).abs();
            let v = (t1 + t2 - ell).abs();
            (cosh_over_sinh(kap * (ell - h), big_l) + cosh_over_sinh(kap * v, big_l))
                / (2.0 * kap * p.tau * p.tau)
        }
        Alpha::Two => {
            let kh = kap * (t1 - t2);
            let kv = kap * (t1 + t2);
            let c3 = 4.0 * kap.powi(3) * p.tau * p.tau;
            let term1 = (1.0 + kh.abs()) * (-kh.abs()).exp() / c3;
            let em = 1.0 - (-2.0 * big_l).exp();
            let bracket = (1.0 + kh) * (-kh - 2.0 * big_l).exp()
                + (1.0 - kh) * (kh - 2.0 * big_l).exp()
                + (1.0 + kv) * (-kv).exp()
                + (1.0 - kv) * (kv - 2.0 * big_l).exp();
            let term2 = bracket / (c3 * em);
            let f1 = (kap * (t1 - ell)).exp() + (-kap * (t1 + ell)).exp();
            let f2 = (kap * (t2 - ell)).exp() + (-kap * (t2 + ell)).exp();
            let term3 = ell * f1 * f2 / (2.0 * kap * kap * p.tau * p.tau * em * em);
            term1 + term2 + term3
        }
    }
}

/// Covariance of the field on a circle of circumference `ell`, via the
/// wrapped stationary kernel (all exponents non-positive).
pub fn circle_cov(p: &ModelParams, ell: f64, t1: f64, t2: f64) -> f64 {
    let kap = p.kappa;
    let mut d = (t1 - t2).abs() % ell;
    d = d.min(ell - d);
    match p.alpha {
        Alpha::One => {
            cosh_over_sinh(kap * (ell / 2.0 - d), kap * ell / 2.0) / (2.0 * kap * p.tau * p.tau)
        }
        Alpha::Two => {
            let q = (-kap * ell).exp();
            let g = 1.0 - q;
            let a = (-kap * d).exp() * ((1.0 + kap * d) / g + kap * ell * q / (g * g));
            let b = (kap * (d - ell)).exp() * ((1.0 - kap * d) / g + kap * ell / (g * g));
            (a + b) / (4.0 * kap.powi(3) * p.tau * p.tau)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use approx::assert_relative_eq;

    fn p(alpha: Alpha, kappa: f64, tau: f64) -> ModelParams {
        ModelParams::new(alpha, kappa, tau, 0.0).unwrap()
    }

    #[test]
    fn matern_values() {
        assert_relative_eq!(matern_cov(&p(Alpha::One, 2.0, 1.0), 0.0), 0.25);
        assert_relative_eq!(matern_cov(&p(Alpha::Two, 1.0, 1.0), 0.0), 0.25);
        assert!(matern_cov(&p(Alpha::One, 1.0, 1.0), 50.0) < 1e-20);
        let pm = p(Alpha::Two, 1.3, 0.7);
        assert_eq!(matern_cov(&pm, 0.4), matern_cov(&pm, -0.4));
        assert!(matern_cov(&pm, 0.1) > matern_cov(&pm, 0.2));
        assert_relative_eq!(
            matern_cov(&p(Alpha::Two, 1.0, 1.0), 1.0),
            2.0 * (-1.0f64).exp() / 4.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn deriv_matrix_against_finite_differences() {
        let pm = p(Alpha::Two, 1.7, 0.9);
        let delta = 1e-4;
        // distinct points: the kernel is smooth there, central differences
        // are O(delta^2); at coincident points the third derivative jumps
        // and the cross stencil is only O(delta) accurate
        for &(t1, t2, tol) in &[(0.3, 0.9, 1e-6), (1.2, 0.25, 1e-6), (0.6, 0.6, 1e-4)] {
            let m = deriv_kernel_matrix(&pm, t1, t2);
            let f = |a: f64, b: f64| matern_cov(&pm, a - b);
            let fd = [
                [f(t1, t2), (f(t1, t2 + delta) - f(t1, t2 - delta)) / (2.0 * delta)],
                [
                    (f(t1 + delta, t2) - f(t1 - delta, t2)) / (2.0 * delta),
                    (f(t1 + delta, t2 + delta) - f(t1 + delta, t2 - delta)
                        - f(t1 - delta, t2 + delta)
                        + f(t1 - delta, t2 - delta))
                        / (4.0 * delta * delta),
                ],
            ];
            for i in 0..2 {
                for j in 0..2 {
                    assert!(
                        (m[(i, j)] - fd[i][j]).abs() < tol,
                        "entry ({i},{j}) at ({t1},{t2}): {} vs fd {}",
                        m[(i, j)],
                        fd[i][j]
                    );
                }
            }
        }
        let m0 = deriv_kernel_matrix(&pm, 0.8, 0.8);
        assert_eq!(m0[(0, 1)], 0.0);
        assert_eq!(m0[(1, 0)], 0.0);
        assert!(m0[(1, 1)] > 0.0);
        let a = deriv_kernel_matrix(&pm, 0.3, 0.9);
        let b = deriv_kernel_matrix(&pm, 0.9, 0.3);
        assert_relative_eq!(a, b.transpose(), epsilon = 1e-14);
    }

    #[test]
    fn bridge_vanishes_at_endpoints_and_caps_variance() {
        for alpha in [Alpha::One, Alpha::Two] {
            let pm = p(alpha, 1.4, 0.8);
            let ek = EdgeKernel::new(&pm, 1.3).unwrap();
            for &t in &[0.0, 0.31, 0.9, 1.3] {
                assert!(ek.bridge(0.0, t).abs() < 1e-12);
                assert!(ek.bridge(1.3, t).abs() < 1e-12);
                assert!(ek.bridge(t, t) <= matern_cov(&pm, 0.0) + 1e-14);
            }
            if alpha == Alpha::Two {
                let b = ek.bridge_matrix(0.0, 0.77);
                assert!(b.amax() < 1e-12);
            }
        }
    }

    #[test]
    fn bridge_matches_dense_conditioning() {
        // condition a 3-point stationary vector on zero endpoint values
        let pm = p(Alpha::One, 1.0, 1.0);
        let pts = [0.0, 0.5, 1.0];
        let sig = DMatrix::from_fn(3, 3, |i, j| matern_cov(&pm, pts[i] - pts[j]));
        let s_bb = DMatrix::from_fn(2, 2, |i, j| sig[(2 * i, 2 * j)]);
        let s_mb = DMatrix::from_fn(1, 2, |_, j| sig[(1, 2 * j)]);
        let cond =
            sig[(1, 1)] - (&s_mb * s_bb.try_inverse().unwrap() * s_mb.transpose())[(0, 0)];
        assert_relative_eq!(bridge_cov(&pm, 1.0, 0.5, 0.5).unwrap(), cond, epsilon = 1e-12);
    }

    #[test]
    fn boundary_weights_interpolate() {
        let pm = p(Alpha::One, 1.0, 1.0);
        let ek = EdgeKernel::new(&pm, 1.0).unwrap();
        let s0 = ek.s_row(0.0);
        let s1 = ek.s_row(1.0);
        assert_relative_eq!(s0[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s0[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(s1[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(s1[1], 1.0, epsilon = 1e-12);
        // alpha = 1 mid-edge weights equal 2-point GP regression weights
        let g = ek.endpoint_cov.clone();
        let c = DVector::from_column_slice(&[matern_cov(&pm, 0.5), matern_cov(&pm, 0.5)]);
        let w = g.try_inverse().unwrap() * c;
        let s = ek.s_row(0.5);
        assert_relative_eq!(s[0], w[0], epsilon = 1e-12);
        assert_relative_eq!(s[1], w[1], epsilon = 1e-12);
    }

    #[test]
    fn boundary_weights_alpha2_satisfy_bs_identity() {
        let pm = p(Alpha::Two, 1.2, 0.9);
        let ek = EdgeKernel::new(&pm, 1.5).unwrap();
        let s0 = ek.s_row(0.0);
        let sl = ek.s_row(1.5);
        for k in 0..4 {
            assert_relative_eq!(s0[k], if k == 0 { 1.0 } else { 0.0 }, epsilon = 1e-9);
            assert_relative_eq!(sl[k], if k == 2 { 1.0 } else { 0.0 }, epsilon = 1e-9);
        }
        // derivative row via one-sided differences: S'(0) ~ e2
        let d = 1e-6;
        let sp0 = (ek.s_row(d) - ek.s_row(0.0)) / d;
        for k in 0..4 {
            assert!((sp0[k] - if k == 1 { 1.0 } else { 0.0 }).abs() < 1e-4);
        }
    }

    #[test]
    fn stationary_kernel_reconstruction() {
        // rho(t1 - t2) = bridge(t1, t2) + S(t1) M S(t2)^T
        for alpha in [Alpha::One, Alpha::Two] {
            let pm = p(alpha, 0.8, 1.1);
            let ek = EdgeKernel::new(&pm, 2.0).unwrap();
            for &(t1, t2) in &[(0.2, 1.7), (1.0, 1.0), (0.0, 1.3)] {
                let h = (ek.s_row(t1).transpose() * &ek.endpoint_cov * ek.s_row(t2))[(0, 0)];
                assert_relative_eq!(
                    ek.bridge(t1, t2) + h,
                    matern_cov(&pm, t1 - t2),
                    epsilon = 1e-11
                );
            }
        }
    }

    #[test]
    fn boundaryless_symmetry_and_endpoint_cov() {
        // the endpoint marginals agree once derivatives are taken in the
        // outward direction at each end (the far-end block is J r(0,0) J
        // with J = diag(1, -1) in running-coordinate orientation)
        for alpha in [Alpha::One, Alpha::Two] {
            let pm = p(alpha, 1.0, 1.0);
            let ek = EdgeKernel::new(&pm, 0.9).unwrap();
            let r00 = ek.boundaryless(0.0, 0.0);
            let rll = ek.boundaryless(0.9, 0.9);
            for i in 0..alpha.order() {
                for j in 0..alpha.order() {
                    let flip = if (i + j) % 2 == 1 { -1.0 } else { 1.0 };
                    assert_relative_eq!(r00[(i, j)], flip * rll[(i, j)], epsilon = 1e-11);
                }
            }
        }
        // alpha = 1, kappa = tau = 1, l = ln 2: endpoint covariance [[5,4],[4,5]]/3
        let pm = p(Alpha::One, 1.0, 1.0);
        let ell = 2.0f64.ln();
        let ek = EdgeKernel::new(&pm, ell).unwrap();
        assert_relative_eq!(ek.boundaryless(0.0, 0.0)[(0, 0)], 5.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(ek.boundaryless(0.0, ell)[(0, 0)], 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn interval_against_spectral_oracle() {
        let pm1 = p(Alpha::One, 1.0, 1.0);
        assert_relative_eq!(
            interval_cov(&pm1, 1.0, 0.0, 0.0),
            1.0 / 1.0f64.tanh(),
            epsilon = 1e-12
        );
        let pm = p(Alpha::Two, 1.3, 0.8);
        let (l, t1, t2) = (1.4, 0.3, 0.9);
        assert_relative_eq!(
            interval_cov(&pm, l, t1, t2),
            interval_cov(&pm, l, l - t1, l - t2),
            epsilon = 1e-12
        );
        for alpha in [Alpha::One, Alpha::Two] {
            let pm = p(alpha, 1.1, 0.9);
            for &(t1, t2) in &[(0.0, 0.0), (0.2, 1.1), (0.7, 0.7)] {
                let oracle = oracles::spectral_interval_cov(
                    alpha.order(),
                    pm.kappa,
                    pm.tau,
                    1.4,
                    t1,
                    t2,
                    200_000,
                );
                assert!(
                    (interval_cov(&pm, 1.4, t1, t2) - oracle).abs() < 1e-6,
                    "alpha {alpha:?} t ({t1},{t2})"
                );
            }
        }
    }

    #[test]
    fn circle_against_spectral_oracle() {
        let pm1 = p(Alpha::One, 1.0, 1.0);
        let ell = 2.0 * std::f64::consts::PI;
        assert_relative_eq!(
            circle_cov(&pm1, ell, 0.0, std::f64::consts::PI),
            1.0 / (2.0 * std::f64::consts::PI.sinh()),
            epsilon = 1e-12
        );
        let pm = p(Alpha::Two, 1.2, 0.8);
        let v1 = circle_cov(&pm, 5.0, 0.3, 0.3);
        let v2 = circle_cov(&pm, 5.0, 4.1, 4.1);
        assert_relative_eq!(v1, v2, epsilon = 1e-13);
        for alpha in [Alpha::One, Alpha::Two] {
            let pm = p(alpha, 1.2, 0.8);
            for &(t1, t2) in &[(0.3, 1.9), (0.0, 4.2), (2.0, 2.0)] {
                let oracle = oracles::spectral_circle_cov(
                    alpha.order(),
                    pm.kappa,
                    pm.tau,
                    5.0,
                    t1,
                    t2,
                    200_000,
                );
                assert!(
                    (circle_cov(&pm, 5.0, t1, t2) - oracle).abs() < 1e-6,
                    "alpha {alpha:?} t ({t1},{t2})"
                );
            }
        }
    }

    #[test]
    fn large_kappa_ell_stays_finite() {
        let pm = p(Alpha::One, 800.0, 1.0);
        let v = interval_cov(&pm, 1.0, 0.5, 0.5);
        assert!(v.is_finite() && v > 0.0);
        assert_relative_eq!(v, matern_cov(&pm, 0.0), epsilon = 1e-10);
        assert!(circle_cov(&pm, 1.0, 0.1, 0.6).is_finite());
        let pm2 = p(Alpha::Two, 900.0, 0.5);
        let v2 = interval_cov(&pm2, 1.0, 0.5, 0.51);
        assert!(v2.is_finite() && v2 > 0.0);
        assert!(EdgeKernel::new(&pm2, 1.0).is_ok());
    }

    #[test]
    fn kernels_strictly_positive_definite_on_point_sets() {
        let pts = [0.05, 0.21, 0.4, 0.63, 0.8, 0.97];
        for alpha in [Alpha::One, Alpha::Two] {
            let pm = p(alpha, 1.5, 0.9);
            let ek = EdgeKernel::new(&pm, 1.0).unwrap();
            let kernels: Vec<(&str, Box<dyn Fn(f64, f64) -> f64>)> = vec![
                ("matern", Box::new(|a, b| matern_cov(&pm, a - b))),
                ("interval", Box::new(|a, b| interval_cov(&pm, 1.0, a, b))),
                ("circle", Box::new(|a, b| circle_cov(&pm, 1.0, a, b))),
                ("bridge", Box::new(|a, b| ek.bridge(a, b))),
                ("boundaryless", Box::new(|a, b| ek.boundaryless(a, b)[(0, 0)])),
            ];
            for (name, k) in kernels {
                let m = DMatrix::from_fn(pts.len(), pts.len(), |i, j| k(pts[i], pts[j]));
                let eig = m.symmetric_eigenvalues();
                assert!(
                    eig.iter().all(|&v| v > 0.0),
                    "{name} kernel (alpha {alpha:?}) not strictly pd: min eig {}",
                    eig.min()
                );
            }
        }
    }
}
