//! Precision assembly for the edge-endpoint degrees of freedom: the
//! block-diagonal boundaryless precision, the Kirchhoff constraint matrix,
//! the vertex selector, the per-vertex orthogonal change of basis, and the
//! explicit alpha = 1 vertex precision.
//!
//! Degrees of freedom are stacked edge by edge as
//! `[u(start), u'(start), ..., u(end), u'(end), ...]`, `2 alpha` per edge.

use crate::error::{Error, Result};
use crate::graph::{EdgeEnd, HalfEdge, MetricGraph};
use crate::kernels::{Alpha, BoundaryMode, EdgeKernel, ModelParams};
use crate::sparse::{SparseMat, SparseSym, SymTriplets};
use nalgebra::DMatrix;

/// Layout of the stacked endpoint degrees of freedom.
#[derive(Clone, Copy, Debug)]
pub struct DofIndex {
    pub alpha: usize,
    pub n_edges: usize,
}

impl DofIndex {
    pub fn new(alpha: Alpha, n_edges: usize) -> Self {
        DofIndex { alpha: alpha.order(), n_edges }
    }

    pub fn dim(&self) -> usize {
        2 * self.alpha * self.n_edges
    }

    pub fn dof(&self, edge_idx: usize, end: EdgeEnd, order: usize) -> usize {
        debug_assert!(order < self.alpha);
        let base = 2 * self.alpha * edge_idx;
        match end {
            EdgeEnd::Start => base + order,
            EdgeEnd::End => base + self.alpha + order,
        }
    }

    pub fn value_dof(&self, edge_idx: usize, end: EdgeEnd) -> usize {
        self.dof(edge_idx, end, 0)
    }

    /// All 2 alpha dofs of one edge, start block then end block.
    pub fn edge_dofs(&self, edge_idx: usize) -> Vec<usize> {
        let base = 2 * self.alpha * edge_idx;
        (base..base + 2 * self.alpha).collect()
    }
}

fn is_stationary_end(graph: &MetricGraph, p: &ModelParams, v_idx: usize) -> bool {
    graph.degree(v_idx) == 1
        && p.boundary.mode_at(graph.vertex(v_idx).id) == BoundaryMode::Stationary
}

/// Endpoint precision of the boundaryless edge process: the stationary
/// endpoint precision minus half the single-point marginal precision at
/// each end. Equals the inverse of the boundaryless endpoint covariance.
pub fn edge_precision(p: &ModelParams, ell: f64) -> Result<DMatrix<f64>> {
    edge_precision_with_modes(p, ell, false, false)
}

/// Same with the correction optionally skipped per end (stationary
/// boundary mode keeps the free-space marginal at that end).
pub fn edge_precision_with_modes(
    p: &ModelParams,
    ell: f64,
    stationary_start: bool,
    stationary_end: bool,
) -> Result<DMatrix<f64>> {
    let ek = EdgeKernel::new(p, ell)?;
    let a = ek.alpha();
    let mut q = ek.endpoint_precision();
    let half_r00_inv = 0.5 * ek.r00_inv();
    if !stationary_start {
        let block = q.view((0, 0), (a, a)) - &half_r00_inv;
        q.view_mut((0, 0), (a, a)).copy_from(&block);
    }
    if !stationary_end {
        let block = q.view((a, a), (a, a)) - &half_r00_inv;
        q.view_mut((a, a), (a, a)).copy_from(&block);
    }
    Ok(q)
}

/// Block-diagonal precision of the stacked boundaryless edge processes.
/// Loops are allowed for alpha = 1; alpha = 2 requires `split_loops` first.
pub fn assemble_block_precision(
    graph: &MetricGraph,
    p: &ModelParams,
) -> Result<(SparseSym, DofIndex)> {
    p.validate()?;
    if p.alpha == Alpha::Two && graph.has_loops() {
        return Err(Error::LoopsNotSplit);
    }
    let dofs = DofIndex::new(p.alpha, graph.n_edges());
    let mut t = SymTriplets::new(dofs.dim());
    for (k, e) in graph.edges().iter().enumerate() {
        let q = edge_precision_with_modes(
            p,
            e.length,
            is_stationary_end(graph, p, e.from),
            is_stationary_end(graph, p, e.to),
        )?;
        t.add_sym_block(&dofs.edge_dofs(k), &q);
    }
    Ok((t.build(), dofs))
}

/// Sparse row: (dof index, coefficient) pairs.
pub type Row = Vec<(usize, f64)>;

/// Kirchhoff constraints, the vertex selector, and the change of basis.
pub struct ConstraintSystem {
    pub dofs: DofIndex,
    pub n_dofs: usize,
    /// Number of constraint rows k.
    pub n_constraints: usize,
    /// k x n constraint matrix (rows grouped by vertex).
    pub k: SparseMat,
    /// |V| x n selector of one value dof per vertex.
    pub a: SparseMat,
    /// n x n orthogonal change of basis; rows 0..k carry the constraints.
    pub t: SparseMat,
    /// Columns of T_U (rows k..n of T), for variance extraction.
    t_u_cols: Vec<Vec<(usize, f64)>>,
    /// Per-vertex lower-triangular Gram-Schmidt coefficient blocks
    /// (row offset, R) with K = R * T_C on that vertex.
    r_blocks: Vec<(usize, DMatrix<f64>)>,
}

impl ConstraintSystem {
    /// A constraint-free system on `n` scalar coordinates (T = I); lets the
    /// observation machinery run against an ordinary GMRF such as the
    /// alpha = 1 vertex precision.
    pub fn unconstrained(n: usize) -> Self {
        let mut t = SparseMat::zeros(n, n);
        let mut a = SparseMat::zeros(n, n);
        let mut t_u_cols = vec![Vec::new(); n];
        for i in 0..n {
            t.push_entry(i, i, 1.0);
            a.push_entry(i, i, 1.0);
            t_u_cols[i].push((i, 1.0));
        }
        ConstraintSystem {
            dofs: DofIndex { alpha: 1, n_edges: 0 },
            n_dofs: n,
            n_constraints: 0,
            k: SparseMat::zeros(0, n),
            a,
            t,
            t_u_cols,
            r_blocks: Vec::new(),
        }
    }

    /// Rows k..n of T.
    pub fn t_u(&self) -> SparseMat {
        let rows: Vec<usize> = (self.n_constraints..self.n_dofs).collect();
        self.t.select_rows(&rows)
    }

    /// Column `dof` of T_U as a sparse vector.
    pub fn t_u_col(&self, dof: usize) -> &[(usize, f64)] {
        &self.t_u_cols[dof]
    }

    /// Transform constraint values b into the leading coordinates
    /// b* = U*_C implied by K U = b.
    pub fn transform_b(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.n_constraints);
        let mut out = vec![0.0; self.n_constraints];
        for (offset, r) in &self.r_blocks {
            let m = r.nrows();
            // forward substitution on the lower-triangular block
            for i in 0..m {
                let mut v = b[offset + i];
                for j in 0..i {
                    v -= r[(i, j)] * out[offset + j];
                }
                let d = r[(i, i)];
                if d.abs() < 1e-300 {
                    return Err(Error::Singular("constraint transform"));
                }
                out[offset + i] = v / d;
            }
        }
        Ok(out)
    }
}

/// Build the Kirchhoff constraint rows of one vertex. Continuity chains the
/// value dofs of consecutive half-edges; the derivative-sum row carries the
/// outward orientation sign (+ at an edge start, - at an edge end).
fn vertex_constraint_rows(
    graph: &MetricGraph,
    p: &ModelParams,
    dofs: &DofIndex,
    v_idx: usize,
) -> Vec<Row> {
    let hes: &[HalfEdge] = graph.adjacency(v_idx);
    let mut rows = Vec::new();
    if graph.degree(v_idx) == 1
        && p.boundary.mode_at(graph.vertex(v_idx).id) == BoundaryMode::Stationary
    {
        return rows;
    }
    let first = hes[0];
    for he in &hes[1..] {
        rows.push(vec![
            (dofs.value_dof(first.edge, first.end), 1.0),
            (dofs.value_dof(he.edge, he.end), -1.0),
        ]);
    }
    if p.alpha == Alpha::Two {
        let row: Row = hes
            .iter()
            .map(|he| {
                let sign = if he.end == EdgeEnd::Start { 1.0 } else { -1.0 };
                (dofs.dof(he.edge, he.end, 1), sign)
            })
            .collect();
        rows.push(row);
    }
    rows
}

/// Build the constraint system for a graph: K, the selector A and the
/// orthogonal change of basis T (constrained coordinates first).
pub fn build_constraints(graph: &MetricGraph, p: &ModelParams) -> Result<ConstraintSystem> {
    let dofs = DofIndex::new(p.alpha, graph.n_edges());
    let n = dofs.dim();

    let mut a = SparseMat::zeros(graph.n_vertices(), n);
    for v in 0..graph.n_vertices() {
        let he = graph.adjacency(v)[0];
        a.push_entry(v, dofs.value_dof(he.edge, he.end), 1.0);
    }

    let rows_by_vertex: Vec<Vec<Row>> = (0..graph.n_vertices())
        .map(|v| vertex_constraint_rows(graph, p, &dofs, v))
        .collect();
    let (k, t, t_u_cols, r_blocks, n_constraints) = change_of_basis(n, &rows_by_vertex)?;
    Ok(ConstraintSystem { dofs, n_dofs: n, n_constraints, k, a, t, t_u_cols, r_blocks })
}

/// Construct the orthogonal change of basis for per-vertex constraint
/// groups: each group's rows are orthonormalized and completed to an
/// orthonormal basis of the dofs they touch; unconstrained dofs pass
/// through unchanged. Returns (K, T, columns of T_U, Gram-Schmidt blocks, k).
#[allow(clippy::type_complexity)]
pub fn change_of_basis(
    n_dofs: usize,
    rows_by_vertex: &[Vec<Row>],
) -> Result<(SparseMat, SparseMat, Vec<Vec<(usize, f64)>>, Vec<(usize, DMatrix<f64>)>, usize)> {
    let n_constraints: usize = rows_by_vertex.iter().map(|r| r.len()).sum();
    let mut k_mat = SparseMat::zeros(n_constraints, n_dofs);
    let mut t = SparseMat::zeros(n_dofs, n_dofs);
    let mut r_blocks = Vec::new();
    let mut constraint_row = 0usize;
    let mut completion_rows: Vec<Row> = Vec::new();
    let mut touched = vec![false; n_dofs];

    for rows in rows_by_vertex {
        if rows.is_empty() {
            continue;
        }
        // local dense block on the union of touched dofs
        let mut cols: Vec<usize> = rows.iter().flatten().map(|&(d, _)| d).collect();
        cols.sort_unstable();
        cols.dedup();
        let d_v = cols.len();
        let k_v = rows.len();
        let col_pos = |d: usize| cols.binary_search(&d).unwrap();
        let mut c = DMatrix::<f64>::zeros(k_v, d_v);
        for (i, row) in rows.iter().enumerate() {
            for &(d, v) in row {
                c[(i, col_pos(d))] += v;
            }
        }
        // Gram-Schmidt with coefficient record R (K = R * Q)
        let mut basis: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(d_v);
        let mut r = DMatrix::<f64>::zeros(k_v, k_v);
        for i in 0..k_v {
            let mut v = c.row(i).transpose();
            for (j, q) in basis.iter().enumerate() {
                let proj = v.dot(q);
                r[(i, j)] = proj;
                v -= proj * q;
            }
            let nrm = v.norm();
            if nrm < 1e-10 {
                return Err(Error::Singular("rank-deficient vertex constraint block"));
            }
            r[(i, i)] = nrm;
            basis.push(v / nrm);
        }
        // complete to an orthonormal basis of the touched subspace
        let mut completion = Vec::new();
        for c_idx in 0..d_v {
            let mut v = nalgebra::DVector::<f64>::zeros(d_v);
            v[c_idx] = 1.0;
            for q in basis.iter().chain(completion.iter()) {
                let proj = v.dot(q);
                v -= proj * q;
            }
            let nrm = v.norm();
            if nrm > 1e-8 {
                completion.push(v / nrm);
            }
            if basis.len() + completion.len() == d_v {
                break;
            }
        }
        debug_assert_eq!(basis.len() + completion.len(), d_v);
        for (i, row) in rows.iter().enumerate() {
            for &(d, v) in row {
                k_mat.push_entry(constraint_row + i, d, v);
            }
        }
        for (i, q) in basis.iter().enumerate() {
            for c_idx in 0..d_v {
                t.push_entry(constraint_row + i, cols[c_idx], q[c_idx]);
            }
        }
        for q in &completion {
            let mut row = Vec::new();
            for c_idx in 0..d_v {
                if q[c_idx] != 0.0 {
                    row.push((cols[c_idx], q[c_idx]));
                }
            }
            completion_rows.push(row);
        }
        r_blocks.push((constraint_row, r));
        for &d in &cols {
            touched[d] = true;
        }
        constraint_row += k_v;
    }

    // completion rows, then identity rows for untouched dofs
    let mut next = n_constraints;
    for row in completion_rows {
        for (d, v) in row {
            t.push_entry(next, d, v);
        }
        next += 1;
    }
    for d in 0..n_dofs {
        if !touched[d] {
            t.push_entry(next, d, 1.0);
            next += 1;
        }
    }
    debug_assert_eq!(next, n_dofs);

    // columns of T_U (rows n_constraints..n_dofs)
    let mut t_u_cols = vec![Vec::new(); n_dofs];
    for i in n_constraints..n_dofs {
        for &(d, v) in &t.rows[i] {
            t_u_cols[d].push((i - n_constraints, v));
        }
    }
    Ok((k_mat, t, t_u_cols, r_blocks, n_constraints))
}

/// Explicit vertex-value precision matrix for alpha = 1: exponential-form
/// diagonal/off-diagonal terms, a tanh term for loops, and the stationary
/// half-weight at stationary degree-1 vertices.
pub fn alpha1_vertex_precision(graph: &MetricGraph, p: &ModelParams) -> Result<SparseSym> {
    p.validate()?;
    if p.alpha != Alpha::One {
        return Err(Error::InvalidParams("vertex precision form requires alpha = 1".into()));
    }
    let scale = 2.0 * p.kappa * p.tau * p.tau;
    let mut trip = SymTriplets::new(graph.n_vertices());
    for e in graph.edges() {
        let q = (-p.kappa * e.length).exp();
        if e.from == e.to {
            let half = p.kappa * e.length / 2.0;
            trip.add(e.from, e.from, scale * half.tanh());
        } else {
            let diag = 0.5 + q * q / (1.0 - q * q);
            let off = -q / (1.0 - q * q);
            trip.add(e.from, e.from, scale * diag);
            trip.add(e.to, e.to, scale * diag);
            trip.add(e.from.min(e.to), e.from.max(e.to), scale * off);
        }
    }
    for v in 0..graph.n_vertices() {
        if is_stationary_end(graph, p, v) {
            trip.add(v, v, scale * 0.5);
        }
    }
    Ok(trip.build())
}
