//! Exact posterior mean and variance of the field at arbitrary graph
//! locations, for direct and noisy observations, plus marginal variance
//! maps. The alpha = 1 route works on the vertex precision of the
//! extended graph; the general route adds only the prediction targets as
//! vertices and uses the constrained-GMRF posterior.

use crate::assembly::{alpha1_vertex_precision, assemble_block_precision, build_constraints};
use crate::constrained::{posterior_u, BlockDiagCov, ConstrainedGaussian, GaussianObsModel};
use crate::error::{Error, Result};
use crate::graph::{Location, MetricGraph, LOCATION_SNAP_TOL};
use crate::kernels::{Alpha, EdgeKernel, ModelParams};
use crate::likelihood::ObservationSet;
use crate::sparse::{LdlFactor, SparseMat, SymTriplets};
use nalgebra::DMatrix;
use std::collections::BTreeMap;

/// Gaussian predictive at one location. `var` is the latent-field
/// variance, or latent plus noise when requested.
#[derive(Clone, Copy, Debug)]
pub struct GaussianPredictive {
    pub location: Location,
    pub mean: f64,
    pub var: f64,
}

/// Whether predictions describe the latent field or a new observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictKind {
    Latent,
    Observation,
}

/// Dispatch on alpha.
pub fn krig(
    graph: &MetricGraph,
    p: &ModelParams,
    obs: &ObservationSet,
    targets: &[Location],
    kind: PredictKind,
) -> Result<Vec<GaussianPredictive>> {
    match p.alpha {
        Alpha::One => krig_alpha1(graph, p, obs, targets, kind),
        Alpha::Two => krig_alphan(graph, p, obs, targets, kind),
    }
}

/// Do two locations name the same point of the graph?
fn same_point(graph: &MetricGraph, a: &Location, b: &Location) -> Result<bool> {
    match (graph.location_vertex(a)?, graph.location_vertex(b)?) {
        (Some(u), Some(v)) => Ok(u == v),
        (None, None) => {
            let (ea, ta) = graph.resolve(a)?;
            let (eb, tb) = graph.resolve(b)?;
            Ok(ea == eb && (ta - tb).abs() <= LOCATION_SNAP_TOL * graph.edge(ea).length)
        }
        _ => Ok(false),
    }
}

/// alpha = 1 kriging on the extended-graph vertex precision.
pub fn krig_alpha1(
    graph: &MetricGraph,
    p: &ModelParams,
    obs: &ObservationSet,
    targets: &[Location],
    kind: PredictKind,
) -> Result<Vec<GaussianPredictive>> {
    p.validate()?;
    if p.alpha != Alpha::One {
        return Err(Error::InvalidParams("krig_alpha1 requires alpha = 1".into()));
    }
    let n = obs.n();
    let noise_var = obs.sigma * obs.sigma;
    let all: Vec<Location> = obs.locations.iter().chain(targets).copied().collect();
    let (g2, vids, _) = graph.add_location_vertices(&all)?;
    let obs_vids = &vids[..n];
    let tgt_vids = &vids[n..];
    let q = alpha1_vertex_precision(&g2, p)?;
    let nv = g2.n_vertices();

    let mut out = Vec::with_capacity(targets.len());
    if obs.sigma == 0.0 {
        let mut obs_at = vec![usize::MAX; nv];
        for (i, &v) in obs_vids.iter().enumerate() {
            if obs_at[v] != usize::MAX {
                return Err(Error::InvalidObservations(
                    "duplicate direct observation locations".into(),
                ));
            }
            obs_at[v] = i;
        }
        let rest: Vec<usize> = (0..nv).filter(|v| obs_at[*v] == usize::MAX).collect();
        let mut pos_in_rest = vec![usize::MAX; nv];
        for (r, &v) in rest.iter().enumerate() {
            pos_in_rest[v] = r;
        }
        let q_rr = q.submatrix(&rest);
        let factor = LdlFactor::new(&q_rr)?;
        let mut x_full = vec![0.0; nv];
        for (i, &v) in obs_vids.iter().enumerate() {
            x_full[v] = obs.values[i];
        }
        let w_full = q.mul_vec(&x_full);
        let w_r: Vec<f64> = rest.iter().map(|&v| w_full[v]).collect();
        let mu_r: Vec<f64> = factor.solve(&w_r).iter().map(|v| -v).collect();
        for (k, &tv) in tgt_vids.iter().enumerate() {
            if obs_at[tv] != usize::MAX {
                // exact interpolation at an observed point
                out.push(GaussianPredictive {
                    location: targets[k],
                    mean: obs.values[obs_at[tv]],
                    var: 0.0,
                });
                continue;
            }
            let r = pos_in_rest[tv];
            let mut e = vec![0.0; rest.len()];
            e[r] = 1.0;
            let var = factor.solve(&e)[r];
            out.push(GaussianPredictive { location: targets[k], mean: mu_r[r], var });
        }
    } else {
        let s2_inv = 1.0 / noise_var;
        let mut trip = SymTriplets::new(nv);
        for j in 0..nv {
            for (i, v) in q.col(j) {
                if i <= j {
                    trip.add(i, j, v);
                }
            }
        }
        let mut rhs = vec![0.0; nv];
        for (i, &v) in obs_vids.iter().enumerate() {
            trip.add(v, v, s2_inv);
            rhs[v] += obs.values[i] * s2_inv;
        }
        let q_hat = trip.build();
        let factor = LdlFactor::new(&q_hat)?;
        let mu = factor.solve(&rhs);
        for (k, &tv) in tgt_vids.iter().enumerate() {
            let mut e = vec![0.0; nv];
            e[tv] = 1.0;
            let var = factor.solve(&e)[tv];
            out.push(GaussianPredictive { location: targets[k], mean: mu[tv], var });
        }
    }
    if kind == PredictKind::Observation {
        for g in &mut out {
            g.var += noise_var;
        }
    }
    Ok(out)
}

/// General-route kriging (alpha in {1, 2}): add the targets as vertices,
/// keep the observations in per-edge blocks, use the constrained posterior.
pub fn krig_alphan(
    graph: &MetricGraph,
    p: &ModelParams,
    obs: &ObservationSet,
    targets: &[Location],
    kind: PredictKind,
) -> Result<Vec<GaussianPredictive>> {
    p.validate()?;
    let noise_var = obs.sigma * obs.sigma;

    // exact-interpolation shortcut: a target that coincides with a direct
    // observation reproduces it with zero latent variance
    let mut shortcut: Vec<Option<usize>> = vec![None; targets.len()];
    if obs.sigma == 0.0 {
        for (k, t) in targets.iter().enumerate() {
            for (i, s) in obs.locations.iter().enumerate() {
                if same_point(graph, t, s)? {
                    shortcut[k] = Some(i);
                    break;
                }
            }
        }
    }

    let (g, mut obs_locs, tgt_locs) = {
        if p.alpha == Alpha::Two && graph.has_loops() {
            let (g, remap) = graph.split_loops();
            let ol = obs.locations.iter().map(|l| remap.map(*l)).collect::<Vec<_>>();
            let tl = targets.iter().map(|l| remap.map(*l)).collect::<Vec<_>>();
            (g, ol, tl)
        } else {
            (graph.clone(), obs.locations.clone(), targets.to_vec())
        }
    };
    // add the non-shortcut targets as vertices; observation coordinates
    // move with the split edges (shortcut targets would place a direct
    // observation exactly at a vertex and degenerate its bridge block)
    let ext_targets: Vec<Location> = tgt_locs
        .iter()
        .zip(&shortcut)
        .filter(|(_, s)| s.is_none())
        .map(|(l, _)| *l)
        .collect();
    let (g2, ext_vids, remap) = g.add_location_vertices(&ext_targets)?;
    for l in &mut obs_locs {
        *l = remap.map(*l);
    }
    let mut tgt_vids = vec![usize::MAX; targets.len()];
    let mut next = 0usize;
    for (k, s) in shortcut.iter().enumerate() {
        if s.is_none() {
            tgt_vids[k] = ext_vids[next];
            next += 1;
        }
    }

    let (q, dofs) = assemble_block_precision(&g2, p)?;
    let cs = build_constraints(&g2, p)?;
    let cg = ConstrainedGaussian::new(q, cs)?;

    // per-edge observation blocks
    let mut by_edge: BTreeMap<usize, Vec<(f64, usize)>> = BTreeMap::new();
    for (i, loc) in obs_locs.iter().enumerate() {
        let (e, t) = g2.resolve(loc)?;
        by_edge.entry(e).or_default().push((t, i));
    }
    let mut b = SparseMat::zeros(obs.n(), cg.n_dofs());
    let mut blocks = Vec::new();
    let mut offset = 0usize;
    let mut row = 0usize;
    let mut y = Vec::with_capacity(obs.n());
    for (e_idx, mut ts) in by_edge {
        ts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let e = g2.edge(e_idx);
        let ek = EdgeKernel::new(p, e.length)?;
        let edge_dofs = dofs.edge_dofs(e_idx);
        for &(t, i) in &ts {
            let s = ek.s_row(t);
            for (j, &d) in edge_dofs.iter().enumerate() {
                b.push_entry(row, d, s[j]);
            }
            y.push(obs.values[i]);
            row += 1;
        }
        let m = ts.len();
        let mut block = DMatrix::from_fn(m, m, |i, j| ek.bridge(ts[i].0, ts[j].0));
        for i in 0..m {
            block[(i, i)] += noise_var;
        }
        blocks.push((offset, block));
        offset += m;
    }
    let sigma = BlockDiagCov::new(blocks)?;
    let bc = vec![0.0; cg.n_constraints()];
    let post = posterior_u(&cg, &GaussianObsModel { b, sigma }, &bc, &y)?;

    let mut out = Vec::with_capacity(targets.len());
    for (k, &tv) in tgt_vids.iter().enumerate() {
        if let Some(i) = shortcut[k] {
            out.push(GaussianPredictive {
                location: targets[k],
                mean: obs.values[i],
                var: if kind == PredictKind::Observation { noise_var } else { 0.0 },
            });
            continue;
        }
        let he = g2.adjacency(tv)[0];
        let dof = cg.cs.dofs.value_dof(he.edge, he.end);
        let mean = post.mean[dof];
        let var = post.variance_of_dof(&cg.cs, dof);
        let extra = if kind == PredictKind::Observation { noise_var } else { 0.0 };
        out.push(GaussianPredictive { location: targets[k], mean, var: var + extra });
    }
    Ok(out)
}

/// Marginal prior variance on a per-edge grid with roughly `resolution`
/// points per unit length (endpoints always included). Locations are
/// reported in the coordinates of the input graph.
pub fn variance_map(
    graph: &MetricGraph,
    p: &ModelParams,
    resolution: f64,
) -> Result<Vec<(Location, f64)>> {
    p.validate()?;
    if !(resolution > 0.0) {
        return Err(Error::InvalidParams("resolution must be > 0".into()));
    }
    let (g, remap) = if p.alpha == Alpha::Two && graph.has_loops() {
        let (g, remap) = graph.split_loops();
        (g, Some(remap))
    } else {
        (graph.clone(), None)
    };
    let (q, dofs) = assemble_block_precision(&g, p)?;
    let cs = build_constraints(&g, p)?;
    let cg = ConstrainedGaussian::new(q, cs)?;
    let mut edge_cov: BTreeMap<usize, (EdgeKernel, DMatrix<f64>)> = BTreeMap::new();
    let mut out = Vec::new();
    for e in graph.edges() {
        let n_pts = ((e.length * resolution).ceil() as usize).max(1) + 1;
        for k in 0..n_pts {
            let t = e.length * k as f64 / (n_pts - 1) as f64;
            let loc = Location::new(e.id, t);
            let mapped = remap.as_ref().map_or(loc, |r| r.map(loc));
            let (e2, t2) = g.resolve(&mapped)?;
            if !edge_cov.contains_key(&e2) {
                let ek = EdgeKernel::new(p, g.edge(e2).length)?;
                let block = cg.prior_cov_of_dofs(&dofs.edge_dofs(e2));
                edge_cov.insert(e2, (ek, block));
            }
            let (ek, block) = &edge_cov[&e2];
            let s = ek.s_row(t2);
            let var = ek.bridge(t2, t2) + (s.transpose() * block * &s)[(0, 0)];
            out.push((loc, var));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{interval_cov, matern_cov, BoundaryMode};
    use crate::likelihood::field_covariance_dense;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn params(alpha: Alpha, kappa: f64, tau: f64, sigma: f64) -> ModelParams {
        ModelParams::new(alpha, kappa, tau, sigma).unwrap()
    }

    /// Dense GP-regression reference built on the joint covariance.
    fn dense_krige(
        graph: &MetricGraph,
        p: &ModelParams,
        obs: &ObservationSet,
        targets: &[Location],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = obs.n();
        let m = targets.len();
        let all: Vec<Location> = obs.locations.iter().chain(targets).copied().collect();
        let sig = field_covariance_dense(graph, p, &all).unwrap();
        let mut s_oo = sig.view((0, 0), (n, n)).into_owned();
        for i in 0..n {
            s_oo[(i, i)] += obs.sigma * obs.sigma;
        }
        let s_to = sig.view((n, 0), (m, n)).into_owned();
        let s_tt = sig.view((n, n), (m, m)).into_owned();
        let inv = s_oo.try_inverse().unwrap();
        let gain = &s_to * inv;
        let mean = &gain * nalgebra::DVector::from_column_slice(&obs.values);
        let cov = s_tt - gain * s_to.transpose();
        (mean.iter().copied().collect(), (0..m).map(|i| cov[(i, i)]).collect())
    }

    #[test]
    fn interpolates_direct_observations() {
        let g = MetricGraph::interval(1.0);
        let p = params(Alpha::One, 1.0, 1.0, 0.0);
        let obs = ObservationSet::new(
            vec![Location::new(0, 0.25), Location::new(0, 0.8)],
            vec![1.0, -0.5],
            0.0,
        )
        .unwrap();
        let tgt = vec![Location::new(0, 0.25)];
        for out in [
            krig_alpha1(&g, &p, &obs, &tgt, PredictKind::Latent).unwrap(),
            krig_alphan(&g, &p, &obs, &tgt, PredictKind::Latent).unwrap(),
        ] {
            assert_relative_eq!(out[0].mean, 1.0, epsilon = 1e-9);
            assert!(out[0].var.abs() < 1e-9);
        }
    }

    #[test]
    fn screening_far_from_data() {
        let g = MetricGraph::interval(30.0);
        let p = params(Alpha::One, 1.0, 1.0, 0.0);
        let obs =
            ObservationSet::new(vec![Location::new(0, 0.5)], vec![2.0], 0.0).unwrap();
        let tgt = vec![Location::new(0, 29.0)];
        let out = krig_alpha1(&g, &p, &obs, &tgt, PredictKind::Latent).unwrap();
        assert!(out[0].mean.abs() < 1e-9);
        let prior = interval_cov(&p, 30.0, 29.0, 29.0);
        assert_relative_eq!(out[0].var, prior, epsilon = 1e-6);
    }

    #[test]
    fn interval_matches_dense_gp() {
        let g = MetricGraph::interval(1.0);
        let p = params(Alpha::One, 1.3, 0.9, 0.0);
        let obs = ObservationSet::new(
            vec![Location::new(0, 0.2), Location::new(0, 0.9)],
            vec![0.7, -0.4],
            0.0,
        )
        .unwrap();
        let tgt = vec![Location::new(0, 0.55)];
        let (dm, dv) = dense_krige(&g, &p, &obs, &tgt);
        let out = krig_alpha1(&g, &p, &obs, &tgt, PredictKind::Latent).unwrap();
        assert_relative_eq!(out[0].mean, dm[0], epsilon = 1e-10);
        assert_relative_eq!(out[0].var, dv[0], epsilon = 1e-10);
    }

    #[test]
    fn alphan_matches_dense_gp_on_graph() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let g = MetricGraph::random_connected(&mut rng, 6, 2, false);
        for alpha in [Alpha::One, Alpha::Two] {
            let p = params(alpha, 1.0, 0.9, 0.2);
            let locs = g.random_locations(&mut rng, 14);
            let vals: Vec<f64> = (0..14).map(|_| rng.random_range(-1.0..1.0)).collect();
            let obs = ObservationSet::new(locs, vals, 0.2).unwrap();
            let tgt = g.random_locations(&mut rng, 5);
            let (dm, dv) = dense_krige(&g, &p, &obs, &tgt);
            let out = krig_alphan(&g, &p, &obs, &tgt, PredictKind::Latent).unwrap();
            for k in 0..tgt.len() {
                assert!(
                    (out[k].mean - dm[k]).abs() < 1e-8,
                    "alpha {alpha:?} mean {} vs {}",
                    out[k].mean,
                    dm[k]
                );
                assert!((out[k].var - dv[k]).abs() < 1e-8);
                // posterior variance never exceeds the prior variance
                let prior = field_covariance_dense(&g, &p, &tgt[k..k + 1]).unwrap()[(0, 0)];
                assert!(out[k].var <= prior + 1e-10);
            }
            // alpha = 1 routes agree with each other
            if alpha == Alpha::One {
                let out1 = krig_alpha1(&g, &p, &obs, &tgt, PredictKind::Latent).unwrap();
                for k in 0..tgt.len() {
                    assert!((out[k].mean - out1[k].mean).abs() < 1e-8);
                    assert!((out[k].var - out1[k].var).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn linearity_in_y_and_duplicate_targets() {
        let g = MetricGraph::parallel(&[1.0, 1.5]);
        let p = params(Alpha::Two, 1.1, 0.8, 0.1);
        let locs = vec![Location::new(0, 0.4), Location::new(1, 1.0)];
        let tgt = vec![Location::new(0, 0.7), Location::new(0, 0.7)];
        let obs1 = ObservationSet::new(locs.clone(), vec![1.0, 2.0], 0.1).unwrap();
        let obs2 = ObservationSet::new(locs, vec![2.0, 4.0], 0.1).unwrap();
        let o1 = krig_alphan(&g, &p, &obs1, &tgt, PredictKind::Latent).unwrap();
        let o2 = krig_alphan(&g, &p, &obs2, &tgt, PredictKind::Latent).unwrap();
        assert_relative_eq!(2.0 * o1[0].mean, o2[0].mean, epsilon = 1e-9);
        assert_relative_eq!(o1[0].var, o2[0].var, epsilon = 1e-12);
        assert_relative_eq!(o1[0].mean, o1[1].mean, epsilon = 1e-12);
        assert_relative_eq!(o1[0].var, o1[1].var, epsilon = 1e-12);
        // predictive variance adds the noise
        let op = krig_alphan(&g, &p, &obs1, &tgt, PredictKind::Observation).unwrap();
        assert_relative_eq!(op[0].var, o1[0].var + 0.01, epsilon = 1e-12);
    }

    #[test]
    fn variance_map_profiles() {
        // single edge, both ends stationary: flat at the free-space variance
        let g = MetricGraph::interval(2.0);
        let p1 = params(Alpha::One, 1.3, 0.9, 0.0).with_boundary(BoundaryMode::Stationary);
        for (_, v) in variance_map(&g, &p1, 8.0).unwrap() {
            assert_relative_eq!(v, matern_cov(&p1, 0.0), epsilon = 1e-10);
        }
        let p2 = params(Alpha::Two, 1.3, 0.9, 0.0).with_boundary(BoundaryMode::Stationary);
        for (_, v) in variance_map(&g, &p2, 8.0).unwrap() {
            assert!((v - matern_cov(&p2, 0.0)).abs() < 1e-8);
        }
        // Kirchhoff ends inflate the boundary variance to coth(kappa l)/(kappa tau^2)
        let pk = params(Alpha::One, 1.0, 1.0, 0.0);
        let vm = variance_map(&g, &pk, 4.0).unwrap();
        let at0 = vm.iter().find(|(l, _)| l.t == 0.0).unwrap().1;
        assert_relative_eq!(at0, 1.0 / (2.0f64).tanh(), epsilon = 1e-10);
        assert!(at0 > vm.iter().find(|(l, _)| (l.t - 1.0).abs() < 0.2).unwrap().1);
        // circle: constant variance
        let c = MetricGraph::circle(3.0);
        let vc = variance_map(&c, &pk, 5.0).unwrap();
        let v0 = vc[0].1;
        for (_, v) in &vc {
            assert_relative_eq!(*v, v0, epsilon = 1e-10);
        }
        let p2c = params(Alpha::Two, 1.0, 1.0, 0.0);
        let vc2 = variance_map(&c, &p2c, 5.0).unwrap();
        let w0 = vc2[0].1;
        for (_, v) in &vc2 {
            assert_relative_eq!(*v, w0, epsilon = 1e-9);
        }
    }
}
