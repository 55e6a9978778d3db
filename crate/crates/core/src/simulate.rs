//! Exact simulation of the field at arbitrary locations: the endpoint
//! data is drawn from the constrained GMRF, then each edge's interior is
//! filled in with an independent bridge draw conditioned on that data.
//! Observation synthesis adds iid Gaussian noise.

use crate::assembly::{assemble_block_precision, build_constraints};
use crate::constrained::ConstrainedGaussian;
use crate::error::Result;
use crate::graph::{Location, MetricGraph, LOCATION_SNAP_TOL};
use crate::kernels::{Alpha, EdgeKernel, ModelParams};
use crate::likelihood::ObservationSet;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

/// One exact draw of the field at the given locations. Draws are consumed
/// deterministically: endpoint dofs first, then per-edge bridges in edge
/// order with locations sorted along each edge.
pub fn simulate_field<R: Rng>(
    graph: &MetricGraph,
    p: &ModelParams,
    locations: &[Location],
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(simulate_field_vectors(graph, p, locations, rng)?
        .into_iter()
        .map(|v| v[0])
        .collect())
}

/// Like [`simulate_field`] but returns the full derivative vector
/// (value and, for alpha = 2, the first derivative) at each location.
pub fn simulate_field_vectors<R: Rng>(
    graph: &MetricGraph,
    p: &ModelParams,
    locations: &[Location],
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    p.validate()?;
    let a = p.alpha.order();
    let (g, locs) = if p.alpha == Alpha::Two && graph.has_loops() {
        let (g, remap) = graph.split_loops();
        let mapped = locations.iter().map(|l| remap.map(*l)).collect();
        (g, mapped)
    } else {
        (graph.clone(), locations.to_vec())
    };
    let (q, dofs) = assemble_block_precision(&g, p)?;
    let cs = build_constraints(&g, p)?;
    let cg = ConstrainedGaussian::new(q, cs)?;
    let u = cg.sample(rng);

    let mut out: Vec<DVector<f64>> = vec![DVector::zeros(a); locs.len()];
    // group by edge; vertex locations read the endpoint dofs directly
    let mut by_edge: BTreeMap<usize, Vec<(f64, usize)>> = BTreeMap::new();
    for (i, loc) in locs.iter().enumerate() {
        let (e_idx, t) = g.resolve(loc)?;
        let e = g.edge(e_idx);
        let tol = LOCATION_SNAP_TOL * e.length;
        if t <= tol || t >= e.length - tol {
            let block = dofs.edge_dofs(e_idx);
            let offset = if t <= tol { 0 } else { a };
            for j in 0..a {
                out[i][j] = u[block[offset + j]];
            }
        } else {
            by_edge.entry(e_idx).or_default().push((t, i));
        }
    }
    for (e_idx, mut ts) in by_edge {
        ts.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let e = g.edge(e_idx);
        let ek = EdgeKernel::new(p, e.length)?;
        let block = dofs.edge_dofs(e_idx);
        let b_data = DVector::from_fn(2 * a, |j, _| u[block[j]]);
        // deduplicate coincident points, then replicate the draw
        let tol = LOCATION_SNAP_TOL * e.length;
        let mut uniq: Vec<f64> = Vec::new();
        let mut uniq_of: Vec<usize> = Vec::with_capacity(ts.len());
        for &(t, _) in &ts {
            if uniq.last().map_or(true, |&u0| t - u0 > tol) {
                uniq.push(t);
            }
            uniq_of.push(uniq.len() - 1);
        }
        let m = uniq.len();
        // joint bridge covariance of the derivative vectors at the points
        let mut cov = DMatrix::zeros(a * m, a * m);
        for i in 0..m {
            for j in 0..m {
                cov.view_mut((a * i, a * j), (a, a))
                    .copy_from(&ek.bridge_matrix(uniq[i], uniq[j]));
            }
        }
        let chol = match Cholesky::new(cov.clone()) {
            Some(c) => c,
            None => {
                // numerical safety only; warn rather than silently biasing
                eprintln!(
                    "warning: bridge covariance on edge {} needed diagonal jitter",
                    e.id
                );
                let scale = 1e-12 * p.stationary_variance();
                for i in 0..a * m {
                    cov[(i, i)] += scale;
                }
                Cholesky::new(cov).expect("jittered bridge covariance")
            }
        };
        let z = DVector::from_fn(a * m, |_, _| rng.sample(StandardNormal));
        let draw = chol.l() * z;
        let weights: Vec<DMatrix<f64>> = uniq.iter().map(|&t| ek.weights_matrix(t)).collect();
        for (pos, &(_, i)) in ts.iter().enumerate() {
            let k = uniq_of[pos];
            let mean = &weights[k] * &b_data;
            for j in 0..a {
                out[i][j] = mean[j] + draw[a * k + j];
            }
        }
    }
    Ok(out)
}

/// Attach iid N(0, sigma^2) noise to a field draw, producing observations.
pub fn simulate_observations<R: Rng>(
    locations: &[Location],
    field: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<ObservationSet> {
    let values = field
        .iter()
        .map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ObservationSet::new(locations.to_vec(), values, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::interval_cov;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn vertex_locations_reduce_to_constrained_sample() {
        let g = MetricGraph::parallel(&[1.0, 0.8, 1.3]);
        let p = ModelParams::new(Alpha::One, 1.1, 0.9, 0.0).unwrap();
        let locs = vec![Location::new(0, 0.0), Location::new(0, 1.0)];
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let field = simulate_field(&g, &p, &locs, &mut rng).unwrap();
        let (q, _) = assemble_block_precision(&g, &p).unwrap();
        let cs = build_constraints(&g, &p).unwrap();
        let cg = ConstrainedGaussian::new(q, cs).unwrap();
        let mut rng2 = ChaCha12Rng::seed_from_u64(4);
        let (uv, _) = cg.sample_vertex_values(&mut rng2);
        assert!((field[0] - uv[0]).abs() < 1e-12);
        assert!((field[1] - uv[1]).abs() < 1e-12);
    }

    #[test]
    fn empirical_interval_covariance() {
        let g = MetricGraph::interval(1.0);
        let p = ModelParams::new(Alpha::One, 1.2, 1.0, 0.0).unwrap();
        let pts = [0.21, 0.5, 0.83];
        let locs: Vec<Location> = pts.iter().map(|&t| Location::new(0, t)).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let n = 30_000;
        let mut acc = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let f = simulate_field(&g, &p, &locs, &mut rng).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    acc[(i, j)] += f[i] * f[j];
                }
            }
        }
        acc /= n as f64;
        for i in 0..3 {
            for j in 0..3 {
                let truth = interval_cov(&p, 1.0, pts[i], pts[j]);
                let tol = 4.0 * (2.0 / n as f64).sqrt() * interval_cov(&p, 1.0, pts[i], pts[i]);
                assert!(
                    (acc[(i, j)] - truth).abs() < tol,
                    "cov({},{}) {} vs {}",
                    pts[i],
                    pts[j],
                    acc[(i, j)],
                    truth
                );
            }
        }
    }

    #[test]
    fn alpha2_value_and_derivative_moments() {
        let g = MetricGraph::interval(1.0);
        let p = ModelParams::new(Alpha::Two, 1.0, 1.0, 0.0).unwrap();
        let t = 0.37;
        let locs = vec![Location::new(0, t)];
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        let n = 30_000;
        let (mut vu, mut vd, mut cud) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let f = simulate_field_vectors(&g, &p, &locs, &mut rng).unwrap();
            vu += f[0][0] * f[0][0];
            vd += f[0][1] * f[0][1];
            cud += f[0][0] * f[0][1];
        }
        vu /= n as f64;
        vd /= n as f64;
        cud /= n as f64;
        let truth_u = interval_cov(&p, 1.0, t, t);
        // derivative variance and cross moment from the Neumann series
        let (mut truth_d, mut truth_ud) = (0.0, 0.0);
        for i in 1..1_000_000usize {
            let w = i as f64 * std::f64::consts::PI;
            let lam = (1.0 + w * w).powi(2);
            truth_d += 2.0 * w * w * (w * t).sin().powi(2) / lam;
            truth_ud -= 2.0 * w * (w * t).cos() * (w * t).sin() / lam;
        }
        let mc = 4.0 / (n as f64).sqrt();
        assert!((vu - truth_u).abs() < mc * truth_u * 1.5);
        assert!((vd - truth_d).abs() < mc * truth_d * 1.5);
        assert!((cud - truth_ud).abs() < mc * (truth_d * truth_u).sqrt() * 1.5);
    }

    #[test]
    fn observation_noise() {
        let locs = vec![Location::new(0, 0.5); 1];
        let field = vec![1.0];
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        // sigma = 0 is the identity
        let obs = simulate_observations(&locs, &field, 0.0, &mut rng).unwrap();
        assert_eq!(obs.values, field);
        // empirical noise variance
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let o = simulate_observations(&locs, &field, 0.3, &mut rng).unwrap();
            acc += (o.values[0] - 1.0) * (o.values[0] - 1.0);
        }
        acc /= n as f64;
        assert!((acc - 0.09).abs() < 0.002);
        // reproducibility
        let mut r1 = ChaCha12Rng::seed_from_u64(7);
        let mut r2 = ChaCha12Rng::seed_from_u64(7);
        let o1 = simulate_observations(&locs, &field, 0.3, &mut r1).unwrap();
        let o2 = simulate_observations(&locs, &field, 0.3, &mut r2).unwrap();
        assert_eq!(o1.values, o2.values);
    }

    #[test]
    fn coincident_locations_replicate() {
        let g = MetricGraph::interval(1.0);
        let p = ModelParams::new(Alpha::One, 1.0, 1.0, 0.0).unwrap();
        let locs = vec![Location::new(0, 0.4), Location::new(0, 0.4), Location::new(0, 0.7)];
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let f = simulate_field(&g, &p, &locs, &mut rng).unwrap();
        assert_eq!(f[0], f[1]);
        assert_ne!(f[0], f[2]);
    }

    #[test]
    fn loops_are_split_for_alpha2() {
        let g = MetricGraph::circle(2.0);
        let p = ModelParams::new(Alpha::Two, 1.0, 1.0, 0.0).unwrap();
        let locs = vec![Location::new(0, 0.3), Location::new(0, 1.7)];
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let f = simulate_field(&g, &p, &locs, &mut rng).unwrap();
        assert!(f.iter().all(|v| v.is_finite()));
    }
}
