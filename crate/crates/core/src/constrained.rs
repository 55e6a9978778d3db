//! Exact algebra for Gaussian vectors under hard linear constraints:
//! constrained covariance, sampling, the marginal density of observations
//! given the constraints, and the posterior under observations plus
//! constraints. Everything global stays sparse; per-edge observation
//! blocks are handled by dense Cholesky.

use crate::assembly::ConstraintSystem;
use crate::error::{Error, Result};
use crate::sparse::{LdlFactor, SparseMat, SparseSym, SymTriplets};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

/// A Gaussian with block precision `q_tilde` under the hard constraints of
/// `cs`; holds the transformed precision and its factorized
/// unconstrained-block.
pub struct ConstrainedGaussian {
    pub q_tilde: SparseSym,
    pub cs: ConstraintSystem,
    pub q_star: SparseSym,
    pub q_star_uu: SparseSym,
    factor_uu: LdlFactor,
}

impl ConstrainedGaussian {
    pub fn new(q_tilde: SparseSym, cs: ConstraintSystem) -> Result<Self> {
        assert_eq!(q_tilde.n, cs.n_dofs);
        let q_star = cs.t.mul_sym(&q_tilde).mul_transpose_sym(&cs.t);
        let keep: Vec<usize> = (cs.n_constraints..cs.n_dofs).collect();
        let q_star_uu = q_star.submatrix(&keep);
        let factor_uu = LdlFactor::new(&q_star_uu)?;
        Ok(ConstrainedGaussian { q_tilde, cs, q_star, q_star_uu, factor_uu })
    }

    pub fn n_dofs(&self) -> usize {
        self.cs.n_dofs
    }

    pub fn n_constraints(&self) -> usize {
        self.cs.n_constraints
    }

    pub fn factor_uu(&self) -> &LdlFactor {
        &self.factor_uu
    }

    /// Dense reference path: `Sigma = A (Q^-1 - Q^-1 K^T (K Q^-1 K^T)^-1 K Q^-1) A^T`.
    /// Intended for small and medium systems.
    pub fn constrained_covariance(&self, a: &SparseMat) -> Result<DMatrix<f64>> {
        let full = self.constrained_covariance_full()?;
        let ad = a.to_dense();
        Ok(&ad * full * ad.transpose())
    }

    /// The constrained covariance on all dofs (dense reference path).
    pub fn constrained_covariance_full(&self) -> Result<DMatrix<f64>> {
        let qd = self.q_tilde.to_dense();
        let chol = Cholesky::new(qd).ok_or(Error::NotPositiveDefinite("block precision"))?;
        let sig = chol.inverse();
        if self.cs.n_constraints == 0 {
            return Ok(sig);
        }
        let kd = self.cs.k.to_dense();
        let sk = &sig * kd.transpose();
        let s = &kd * &sk;
        let s_chol =
            Cholesky::new(s).ok_or(Error::Singular("K Q^-1 K^T (redundant constraints)"))?;
        let corr = &sk * s_chol.inverse() * sk.transpose();
        let out = sig - corr;
        Ok((&out + out.transpose()) * 0.5)
    }

    /// Sparse-route covariance `A T_U^T (Q*_UU)^-1 T_U A^T` via one solve
    /// per selected row.
    pub fn constrained_covariance_sparse(&self, a: &SparseMat) -> DMatrix<f64> {
        let t_u = self.cs.t_u();
        let m = a.nrows;
        let cols: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut ai = vec![0.0; self.cs.n_dofs];
                for &(j, v) in &a.rows[i] {
                    ai[j] += v;
                }
                t_u.mul_vec(&ai)
            })
            .collect();
        let solved: Vec<Vec<f64>> = cols.iter().map(|c| self.factor_uu.solve(c)).collect();
        DMatrix::from_fn(m, m, |i, j| {
            cols[i].iter().zip(&solved[j]).map(|(x, y)| x * y).sum()
        })
    }

    /// Prior marginal variance of a single dof under the constraints.
    pub fn prior_variance_of_dof(&self, dof: usize) -> f64 {
        let col = self.cs.t_u_col(dof);
        let mut x = vec![0.0; self.q_star_uu.n];
        for &(i, v) in col {
            x[i] = v;
        }
        let s = self.factor_uu.solve(&x);
        x.iter().zip(&s).map(|(a, b)| a * b).sum()
    }

    /// Prior covariance block of an arbitrary dof subset, via one sparse
    /// solve per dof.
    pub fn prior_cov_of_dofs(&self, dofs: &[usize]) -> DMatrix<f64> {
        let m = self.q_star_uu.n;
        let cols: Vec<Vec<f64>> = dofs
            .iter()
            .map(|&d| {
                let mut x = vec![0.0; m];
                for &(i, v) in self.cs.t_u_col(d) {
                    x[i] = v;
                }
                x
            })
            .collect();
        let solved: Vec<Vec<f64>> = cols.iter().map(|c| self.factor_uu.solve(c)).collect();
        DMatrix::from_fn(dofs.len(), dofs.len(), |i, j| {
            cols[i].iter().zip(&solved[j]).map(|(a, b)| a * b).sum()
        })
    }

    /// Draw the full dof vector `U`; the constraints hold exactly.
    /// Standard normals are consumed in unconstrained-coordinate order.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.q_star_uu.n;
        let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let v = self.factor_uu.sample_transform(&z);
        self.cs.t_u().tr_mul_vec(&v)
    }

    /// Draw and select the per-vertex values `U_v = A U`.
    pub fn sample_vertex_values<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let u = self.sample(rng);
        (self.cs.a.mul_vec(&u), u)
    }
}

/// Block-diagonal observation covariance with cached Cholesky factors.
pub struct BlockDiagCov {
    pub n: usize,
    blocks: Vec<(usize, Cholesky<f64, Dyn>)>,
    log_det: f64,
}

impl BlockDiagCov {
    /// Blocks are (row offset, dense covariance); offsets must tile 0..n.
    pub fn new(blocks: Vec<(usize, DMatrix<f64>)>) -> Result<Self> {
        let mut n = 0;
        let mut log_det = 0.0;
        let mut chols = Vec::with_capacity(blocks.len());
        for (offset, m) in blocks {
            assert_eq!(offset, n, "blocks must tile contiguously");
            n += m.nrows();
            let chol =
                Cholesky::new(m).ok_or(Error::NotPositiveDefinite("observation block"))?;
            log_det += 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            chols.push((offset, chol));
        }
        Ok(BlockDiagCov { n, blocks: chols, log_det })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n);
        let mut out = vec![0.0; self.n];
        for (offset, chol) in &self.blocks {
            let m = chol.l().nrows();
            let x = chol.solve(&DVector::from_column_slice(&y[*offset..offset + m]));
            out[*offset..offset + m].copy_from_slice(x.as_slice());
        }
        out
    }

    fn block_ranges(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().map(|(o, c)| (*o, c.l().nrows())).collect()
    }
}

/// Observation model `y | U ~ N(B U, Sigma)` with block-diagonal `Sigma`.
pub struct GaussianObsModel {
    pub b: SparseMat,
    pub sigma: BlockDiagCov,
}

/// Intermediate quantities shared by the density and the posterior.
struct PosteriorCore {
    factor_hat: LdlFactor,
    b_star_vals: Vec<f64>,
    mu_tilde_u: Vec<f64>,
    resid: Vec<f64>,
    w: Vec<f64>,
}

fn build_core(
    cg: &ConstrainedGaussian,
    obs: &GaussianObsModel,
    b_constraint: &[f64],
    y: &[f64],
) -> Result<PosteriorCore> {
    let k = cg.n_constraints();
    let n = cg.n_dofs();
    assert_eq!(obs.b.ncols, n);
    assert_eq!(y.len(), obs.sigma.n);
    assert_eq!(obs.b.nrows, y.len());
    assert_eq!(b_constraint.len(), k);

    let b_star = obs.b.mul_transpose(&cg.cs.t);
    let b_star_c = b_star.select_col_range(0..k);
    let b_star_u = b_star.select_col_range(k..n);

    let b_nonzero = b_constraint.iter().any(|&v| v != 0.0);
    let (b_star_vals, mu_tilde_u, resid) = if b_nonzero {
        let b_star_vals = cg.cs.transform_b(b_constraint)?;
        // mu_tilde_U = -(Q*_UU)^-1 Q*_UC b*
        let m = n - k;
        let mut rhs = vec![0.0; m];
        for (j, &bv) in b_star_vals.iter().enumerate() {
            if bv != 0.0 {
                for (i, v) in cg.q_star.col(j) {
                    if i >= k {
                        rhs[i - k] += v * bv;
                    }
                }
            }
        }
        let mu = cg.factor_uu().solve(&rhs).iter().map(|v| -v).collect::<Vec<_>>();
        let mut r = y.to_vec();
        let shift_c = b_star_c.mul_vec(&b_star_vals);
        let shift_u = b_star_u.mul_vec(&mu);
        for i in 0..r.len() {
            r[i] -= shift_c[i] + shift_u[i];
        }
        (b_star_vals, mu, r)
    } else {
        (vec![0.0; k], vec![0.0; n - k], y.to_vec())
    };

    // Q_hat*_UU = Q*_UU + B*_U^T Sigma^-1 B*_U, accumulated block by block
    let m = n - k;
    let mut trip = SymTriplets::new(m);
    for j in 0..m {
        for (i, v) in cg.q_star_uu.col(j) {
            if i <= j {
                trip.add(i, j, v);
            }
        }
    }
    for (offset, len) in obs.sigma.block_ranges() {
        // local dense view of B*_U on this block's support
        let mut cols: Vec<usize> = Vec::new();
        for r in offset..offset + len {
            for &(j, _) in &b_star_u.rows[r] {
                cols.push(j);
            }
        }
        cols.sort_unstable();
        cols.dedup();
        if cols.is_empty() {
            continue;
        }
        let pos = |j: usize| cols.binary_search(&j).unwrap();
        let mut local = DMatrix::<f64>::zeros(len, cols.len());
        for (r_local, r) in (offset..offset + len).enumerate() {
            for &(j, v) in &b_star_u.rows[r] {
                local[(r_local, pos(j))] += v;
            }
        }
        // Sigma_block^-1 local via per-column solves
        let chol = &obs.sigma.blocks.iter().find(|(o, _)| *o == offset).unwrap().1;
        let solved = chol.solve(&local);
        let h = local.transpose() * solved;
        for a in 0..cols.len() {
            for b in a..cols.len() {
                trip.add(cols[a], cols[b], h[(a, b)]);
            }
        }
    }
    let q_hat = trip.build();
    let factor_hat = LdlFactor::new(&q_hat)?;

    let sig_inv_r = obs.sigma.solve(&resid);
    let w = b_star_u.tr_mul_vec(&sig_inv_r);
    Ok(PosteriorCore { factor_hat, b_star_vals, mu_tilde_u, resid, w })
}

/// Marginal log-density of `y` given the hard constraints `K U = b`:
/// the exact Gaussian integral over the unconstrained coordinates.
pub fn density_y_given_constraints(
    cg: &ConstrainedGaussian,
    obs: &GaussianObsModel,
    b_constraint: &[f64],
    y: &[f64],
) -> Result<f64> {
    let core = build_core(cg, obs, b_constraint, y)?;
    let n = y.len() as f64;
    let sig_inv_r = obs.sigma.solve(&core.resid);
    let quad_r: f64 = core.resid.iter().zip(&sig_inv_r).map(|(a, b)| a * b).sum();
    let quad_w = core.factor_hat.inv_quad(&core.w);
    Ok(-0.5 * n * (2.0 * std::f64::consts::PI).ln() + 0.5 * cg.factor_uu().log_det()
        - 0.5 * core.factor_hat.log_det()
        - 0.5 * obs.sigma.log_det()
        - 0.5 * quad_r
        + 0.5 * quad_w)
}

/// Posterior of `U` given constraints and observations.
pub struct Posterior {
    /// Posterior mean of the full dof vector.
    pub mean: Vec<f64>,
    factor_hat: LdlFactor,
}

impl Posterior {
    /// Posterior variance of one dof: `t^T Qhat^-1 t` with `t` the dof's
    /// column of `T_U`.
    pub fn variance_of_dof(&self, cs: &ConstraintSystem, dof: usize) -> f64 {
        let col = cs.t_u_col(dof);
        let mut x = vec![0.0; self.factor_hat.n()];
        for &(i, v) in col {
            x[i] = v;
        }
        let s = self.factor_hat.solve(&x);
        x.iter().zip(&s).map(|(a, b)| a * b).sum()
    }
}

/// Posterior mean and precision of `U | {K U = b, Y = y}`.
pub fn posterior_u(
    cg: &ConstrainedGaussian,
    obs: &GaussianObsModel,
    b_constraint: &[f64],
    y: &[f64],
) -> Result<Posterior> {
    let core = build_core(cg, obs, b_constraint, y)?;
    let delta = core.factor_hat.solve(&core.w);
    let mu_hat_u: Vec<f64> =
        core.mu_tilde_u.iter().zip(&delta).map(|(a, b)| a + b).collect();
    let k = cg.n_constraints();
    let mut star = vec![0.0; cg.n_dofs()];
    star[..k].copy_from_slice(&core.b_star_vals);
    star[k..].copy_from_slice(&mu_hat_u);
    let mean = cg.cs.t.tr_mul_vec(&star);
    Ok(Posterior { mean, factor_hat: core.factor_hat })
}
