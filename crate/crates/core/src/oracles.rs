//! Independent reference implementations used only by tests and the
//! acceptance suite: truncated spectral series on intervals and circles, a
//! finite-element discretization of the vertex-condition Laplacian on a
//! whole graph, textbook dense Gaussian conditioning, and quadrature for
//! the CRPS. Nothing here calls the production evaluators.

use crate::error::{Error, Result};
use crate::graph::{EdgeEnd, Location, MetricGraph};
use nalgebra::{DMatrix, DVector};

/// sum_{k >= 1} cos(k theta) / k^2 for theta in [0, 2 pi]
/// (Bernoulli polynomial B_2; classical Fourier table identity).
fn cos_sum_2(theta: f64) -> f64 {
    let pi = std::f64::consts::PI;
    pi * pi / 6.0 - pi * theta / 2.0 + theta * theta / 4.0
}

/// sum_{k >= 1} cos(k theta) / k^4 for theta in [0, 2 pi].
fn cos_sum_4(theta: f64) -> f64 {
    let pi = std::f64::consts::PI;
    pi.powi(4) / 90.0 - pi * pi * theta * theta / 12.0 + pi * theta.powi(3) / 12.0
        - theta.powi(4) / 48.0
}

/// One cosine mode of the eigen-series, Kummer-accelerated: the slowly
/// decaying w^{-2 alpha} part of (kappa^2 + w^2)^{-alpha} is summed in
/// closed form via `cos_sum_*`, the remainder decays two orders faster.
/// `w_of(i)` gives the i-th frequency `c * i`; theta = c * d is the phase.
fn accelerated_cos_series(alpha: usize, kappa: f64, c: f64, d: f64, n_terms: usize) -> f64 {
    let theta = (c * d).rem_euclid(2.0 * std::f64::consts::PI);
    let k2 = kappa * kappa;
    let mut rem = 0.0;
    for i in 1..=n_terms {
        let w2 = (c * i as f64) * (c * i as f64);
        let lam = k2 + w2;
        let cosw = (c * i as f64 * d).cos();
        // w^{-2a} - lam^{-a}, written with cancellation-free numerators
        let diff = match alpha {
            1 => k2 / (w2 * lam),
            2 => k2 * (k2 + 2.0 * w2) / (w2 * w2 * lam * lam),
            _ => panic!("alpha must be 1 or 2"),
        };
        rem -= diff * cosw;
    }
    let lead = match alpha {
        1 => cos_sum_2(theta) / c.powi(2),
        2 => cos_sum_4(theta) / c.powi(4),
        _ => unreachable!(),
    };
    lead + rem
}

/// Truncated Neumann eigenfunction series for the interval covariance:
/// tau^-2 sum_i (kappa^2 + (i pi / ell)^2)^-alpha phi_i(t1) phi_i(t2),
/// with the algebraic tail summed in closed form so the truncation error
/// decays like n_terms^{-(2 alpha + 1)}.
pub fn spectral_interval_cov(
    alpha: usize,
    kappa: f64,
    tau: f64,
    ell: f64,
    t1: f64,
    t2: f64,
    n_terms: usize,
) -> f64 {
    let c = std::f64::consts::PI / ell;
    // cos(w t1) cos(w t2) = (cos(w (t1 - t2)) + cos(w (t1 + t2))) / 2
    let s = kappa.powi(-2 * alpha as i32) / ell
        + (1.0 / ell)
            * (accelerated_cos_series(alpha, kappa, c, (t1 - t2).abs(), n_terms)
                + accelerated_cos_series(alpha, kappa, c, t1 + t2, n_terms));
    s / (tau * tau)
}

/// Truncated Fourier series for the circle covariance (sine and cosine
/// pairs combine into a cosine of the separation), tail-accelerated as in
/// [`spectral_interval_cov`].
pub fn spectral_circle_cov(
    alpha: usize,
    kappa: f64,
    tau: f64,
    ell: f64,
    t1: f64,
    t2: f64,
    n_terms: usize,
) -> f64 {
    let c = 2.0 * std::f64::consts::PI / ell;
    let s = kappa.powi(-2 * alpha as i32) / ell
        + (2.0 / ell) * accelerated_cos_series(alpha, kappa, c, (t1 - t2).abs(), n_terms);
    s / (tau * tau)
}

/// Mesh produced by [`fd_graph_cov`]: node locations, the node index of
/// each graph vertex, and the dense covariance on all mesh nodes.
pub struct FdMesh {
    pub locations: Vec<Location>,
    pub vertex_nodes: Vec<usize>,
    pub cov: DMatrix<f64>,
}

/// Finite-element (lumped-mass) discretization of the covariance
/// tau^-2 (kappa^2 - Laplacian)^-alpha on a mesh of width ~`h`, with the
/// vertex conditions built into the stiffness matrix. Converges to the
/// exact covariance as h -> 0.
pub fn fd_graph_cov(
    graph: &MetricGraph,
    alpha: usize,
    kappa: f64,
    tau: f64,
    h: f64,
) -> Result<FdMesh> {
    let nv = graph.n_vertices();
    let mut locations: Vec<Location> = Vec::new();
    let mut node_of_vertex: Vec<usize> = (0..nv).collect();
    for v in 0..nv {
        let he = graph.adjacency(v)[0];
        let e = graph.edge(he.edge);
        let t = if he.end == EdgeEnd::Start { 0.0 } else { e.length };
        locations.push(Location::new(e.id, t));
        node_of_vertex[v] = v;
    }
    // interior mesh nodes + element list
    let mut elements: Vec<(usize, usize, f64)> = Vec::new();
    for e in graph.edges() {
        let n_seg = ((e.length / h).round() as usize).max(1);
        let seg = e.length / n_seg as f64;
        let mut prev = e.from;
        for k in 1..n_seg {
            let node = locations.len();
            locations.push(Location::new(e.id, k as f64 * seg));
            elements.push((prev, node, seg));
            prev = node;
        }
        elements.push((prev, e.to, seg));
    }
    let n = locations.len();
    if n > 5000 {
        return Err(Error::InvalidParams(format!("fd mesh too large: {n} nodes")));
    }
    let mut stiff = DMatrix::zeros(n, n);
    let mut mass = DVector::zeros(n);
    for &(a, b, len) in &elements {
        stiff[(a, a)] += 1.0 / len;
        stiff[(b, b)] += 1.0 / len;
        stiff[(a, b)] -= 1.0 / len;
        stiff[(b, a)] -= 1.0 / len;
        mass[a] += len / 2.0;
        mass[b] += len / 2.0;
    }
    // generalized eigenproblem K phi = lambda M phi with diagonal M
    let d_inv_sqrt = mass.map(|m: f64| 1.0 / m.sqrt());
    let mut s = stiff;
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] *= d_inv_sqrt[i] * d_inv_sqrt[j];
        }
    }
    let eig: nalgebra::SymmetricEigen<f64, nalgebra::Dyn> = nalgebra::SymmetricEigen::new(s);
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k].max(0.0);
        let w = (kappa * kappa + lam).powi(-(alpha as i32));
        let phi: DVector<f64> = eig.eigenvectors.column(k).component_mul(&d_inv_sqrt);
        cov.ger(w, &phi, &phi, 1.0);
    }
    cov /= tau * tau;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(FdMesh { locations, vertex_nodes: node_of_vertex, cov })
}

/// Log-density of a centered multivariate normal.
pub fn mvn_logpdf(y: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let n = y.len();
    let chol = nalgebra::Cholesky::new(cov.clone())
        .ok_or(Error::NotPositiveDefinite("dense covariance"))?;
    let ld: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
    let z = chol.solve(&DVector::from_column_slice(y));
    let quad: f64 = z.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok(-0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - ld - 0.5 * quad)
}

/// Result of the dense constrained-Gaussian oracle.
pub struct DenseOracle {
    pub log_density: f64,
    pub post_mean: DVector<f64>,
    pub post_cov: DMatrix<f64>,
}

/// Textbook reference: a Gaussian with precision `q_tilde` is conditioned
/// on `K u = 0` (treated as an exact linear observation of zero), then on
/// `y = B u + e`, `e ~ N(0, sigma_obs)`. Returns the marginal log-density
/// of `y` and the posterior moments of `u`.
pub fn dense_constrained_oracle(
    q_tilde: &DMatrix<f64>,
    k: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma_obs: &DMatrix<f64>,
    y: &[f64],
) -> Result<DenseOracle> {
    let chol = nalgebra::Cholesky::new(q_tilde.clone())
        .ok_or(Error::NotPositiveDefinite("oracle prior precision"))?;
    let sig_u = chol.inverse();
    let sig_c = if k.nrows() > 0 {
        let sk = &sig_u * k.transpose();
        let s = k * &sk;
        let s_inv = s.try_inverse().ok_or(Error::Singular("oracle K Sigma K^T"))?;
        let c = &sig_u - &sk * s_inv * sk.transpose();
        (&c + c.transpose()) * 0.5
    } else {
        sig_u
    };
    let sig_y = b * &sig_c * b.transpose() + sigma_obs;
    let log_density = mvn_logpdf(y, &sig_y)?;
    let sy_inv = sig_y
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("oracle observation covariance"))?;
    let gain = &sig_c * b.transpose() * sy_inv;
    let post_mean = &gain * DVector::from_column_slice(y);
    let post_cov = &sig_c - &gain * b * &sig_c;
    let post_cov = (&post_cov + post_cov.transpose()) * 0.5;
    Ok(DenseOracle { log_density, post_mean, post_cov })
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// CRPS of a Gaussian predictive by direct quadrature of
/// integral (F(x) - 1{x >= y})^2 dx, split at the kink.
pub fn crps_quadrature(mean: f64, sd: f64, y: f64) -> f64 {
    if sd == 0.0 {
        return (y - mean).abs();
    }
    let lo = (mean - 14.0 * sd).min(y - 2.0 * sd);
    let hi = (mean + 14.0 * sd).max(y + 2.0 * sd);
    let f_left = |x: f64| {
        let v = normal_cdf((x - mean) / sd);
        v * v
    };
    let f_right = |x: f64| {
        let v = normal_cdf((x - mean) / sd) - 1.0;
        v * v
    };
    simpson(&f_left, lo, y, 20_000) + simpson(&f_right, y, hi, 20_000)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_series_structure() {
        let (kappa, tau, ell): (f64, f64, f64) = (2.0, 1.5, 3.0);
        // the i = 0 term alone is tau^-2 kappa^-2alpha / ell
        let brute = |n: usize, t1: f64, t2: f64| {
            let mut s = kappa.powi(-2) / ell;
            for i in 1..=n {
                let w = i as f64 * std::f64::consts::PI / ell;
                s += (2.0 / ell) * (kappa * kappa + w * w).recip()
                    * (w * t1).cos()
                    * (w * t2).cos();
            }
            s / (tau * tau)
        };
        assert_relative_eq!(brute(0, 0.4, 2.6), kappa.powi(-2) / ell / (tau * tau));
        // the tail-accelerated sum is the limit of brute-force partial sums
        let acc = spectral_interval_cov(1, kappa, tau, ell, 0.4, 2.6, 10_000);
        assert!((brute(2_000_000, 0.4, 2.6) - acc).abs() < 1e-6);
    }

    #[test]
    fn interval_series_value() {
        // coth(1) at the left end for alpha = 1, kappa = tau = ell = 1
        let v = spectral_interval_cov(1, 1.0, 1.0, 1.0, 0.0, 0.0, 400_000);
        assert!((v - 1.0 / 1.0f64.tanh()).abs() < 1e-5);
    }

    #[test]
    fn fd_mesh_is_symmetric_and_converges() {
        let g = MetricGraph::interval(1.0);
        let mesh = fd_graph_cov(&g, 1, 1.0, 1.0, 1.0 / 64.0).unwrap();
        assert!((mesh.cov.clone() - mesh.cov.transpose()).amax() < 1e-10);
        // compare against the interval series at the two original vertices
        let truth = spectral_interval_cov(1, 1.0, 1.0, 1.0, 0.0, 1.0, 200_000);
        let v01 = mesh.cov[(mesh.vertex_nodes[0], mesh.vertex_nodes[1])];
        assert!((v01 - truth).abs() < 5e-3);
    }

    #[test]
    fn oracle_without_constraints_is_prior() {
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 4.0]));
        let k = DMatrix::zeros(0, 2);
        let b = DMatrix::identity(2, 2);
        let s = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.5, 0.5]));
        let o = dense_constrained_oracle(&q, &k, &b, &s, &[0.3, -0.2]).unwrap();
        let expect = mvn_logpdf(
            &[0.3, -0.2],
            &DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.75])),
        )
        .unwrap();
        assert_relative_eq!(o.log_density, expect, epsilon = 1e-12);
    }

    #[test]
    fn crps_quadrature_standard_value() {
        // CRPS(N(0,1), 0) = (sqrt(2) - 1)/sqrt(pi)
        let exact = (2.0f64.sqrt() - 1.0) / std::f64::consts::PI.sqrt();
        assert!((crps_quadrature(0.0, 1.0, 0.0) - exact).abs() < 1e-9);
    }
}
