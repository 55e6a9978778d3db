//! Metric-graph data model: construction and validation, locations on
//! edges, degree-2 surgery, loop splitting and geodesic distance.
//!
//! Vertices and edges carry external integer labels (preserved by all
//! surgeries); numerical code works with dense internal indices. Original
//! vertices keep their internal indices under `add_location_vertices` and
//! `split_loops` (new vertices are appended), which the inference layers
//! rely on. Graphs are immutable: surgeries return new graphs.

use crate::error::{Error, Result};
use std::collections::{BTreeMap, VecDeque};

pub type VertexId = usize;
pub type EdgeId = usize;

/// Relative tolerance for snapping a location to an edge endpoint and for
/// deduplicating coincident locations.
pub const LOCATION_SNAP_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct Vertex {
    pub id: VertexId,
    pub x: Option<f64>,
    pub y: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub id: EdgeId,
    /// Internal index of the start vertex (the t = 0 end).
    pub from: usize,
    /// Internal index of the end vertex (the t = length end).
    pub to: usize,
    pub length: f64,
}

/// Which end of an edge a half-edge sits at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EdgeEnd {
    Start,
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct HalfEdge {
    /// Internal edge index.
    pub edge: usize,
    pub end: EdgeEnd,
}

/// A position on the graph: arc-length coordinate `t` in `[0, length]` on
/// the edge with external id `edge`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location {
    pub edge: EdgeId,
    pub t: f64,
}

impl Location {
    pub fn new(edge: EdgeId, t: f64) -> Self {
        Location { edge, t }
    }
}

/// Record types used when building a graph from external data.
#[derive(Clone, Debug)]
pub struct VertexRec {
    pub id: VertexId,
    pub x: Option<f64>,
    pub y: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EdgeRec {
    pub id: EdgeId,
    pub from: VertexId,
    pub to: VertexId,
    pub length: f64,
}

/// Maps locations on a pre-surgery graph to locations on the result.
#[derive(Clone, Debug, Default)]
pub struct EdgeRemap {
    /// old edge id -> ordered segments (new edge id, t range on the old edge)
    segments: BTreeMap<EdgeId, Vec<(EdgeId, f64, f64)>>,
}

impl EdgeRemap {
    pub fn map(&self, loc: Location) -> Location {
        match self.segments.get(&loc.edge) {
            None => loc,
            Some(segs) => {
                for (k, &(id, t0, t1)) in segs.iter().enumerate() {
                    if loc.t <= t1 || k + 1 == segs.len() {
                        return Location::new(id, (loc.t - t0).max(0.0).min(t1 - t0));
                    }
                }
                unreachable!("remap segments cover the edge")
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct MetricGraph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<HalfEdge>>,
    vid_to_idx: BTreeMap<VertexId, usize>,
    eid_to_idx: BTreeMap<EdgeId, usize>,
}

impl MetricGraph {
    /// Build and validate a connected metric graph.
    pub fn build(vertices: Vec<VertexRec>, edges: Vec<EdgeRec>) -> Result<Self> {
        let mut vid_to_idx = BTreeMap::new();
        let mut vs = Vec::with_capacity(vertices.len());
        for rec in vertices {
            if vid_to_idx.insert(rec.id, vs.len()).is_some() {
                return Err(Error::DuplicateId(rec.id));
            }
            vs.push(Vertex { id: rec.id, x: rec.x, y: rec.y });
        }
        let mut eid_to_idx = BTreeMap::new();
        let mut es = Vec::with_capacity(edges.len());
        for rec in edges {
            if !(rec.length.is_finite() && rec.length > 0.0) {
                return Err(Error::BadEdgeLength { edge: rec.id, length: rec.length });
            }
            let from = *vid_to_idx
                .get(&rec.from)
                .ok_or(Error::DanglingEndpoint { edge: rec.id, vertex: rec.from })?;
            let to = *vid_to_idx
                .get(&rec.to)
                .ok_or(Error::DanglingEndpoint { edge: rec.id, vertex: rec.to })?;
            if eid_to_idx.insert(rec.id, es.len()).is_some() {
                return Err(Error::DuplicateId(rec.id));
            }
            es.push(Edge { id: rec.id, from, to, length: rec.length });
        }
        let mut adjacency = vec![Vec::new(); vs.len()];
        for (k, e) in es.iter().enumerate() {
            adjacency[e.from].push(HalfEdge { edge: k, end: EdgeEnd::Start });
            adjacency[e.to].push(HalfEdge { edge: k, end: EdgeEnd::End });
        }
        for adj in &mut adjacency {
            adj.sort();
        }
        let g = MetricGraph { vertices: vs, edges: es, adjacency, vid_to_idx, eid_to_idx };
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    /// Interval graph: one edge of the given length between two vertices.
    pub fn interval(length: f64) -> Self {
        MetricGraph::build(
            vec![
                VertexRec { id: 0, x: Some(0.0), y: Some(0.0) },
                VertexRec { id: 1, x: Some(length), y: Some(0.0) },
            ],
            vec![EdgeRec { id: 0, from: 0, to: 1, length }],
        )
        .expect("interval graph is valid")
    }

    /// Circle graph: a single loop of the given circumference.
    pub fn circle(length: f64) -> Self {
        MetricGraph::build(
            vec![VertexRec { id: 0, x: Some(0.0), y: Some(0.0) }],
            vec![EdgeRec { id: 0, from: 0, to: 0, length }],
        )
        .expect("circle graph is valid")
    }

    /// Path graph with the given edge lengths.
    pub fn path(lengths: &[f64]) -> Self {
        let vertices = (0..=lengths.len())
            .map(|i| VertexRec { id: i, x: Some(i as f64), y: Some(0.0) })
            .collect();
        let edges = lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| EdgeRec { id: i, from: i, to: i + 1, length: l })
            .collect();
        MetricGraph::build(vertices, edges).expect("path graph is valid")
    }

    /// Two vertices joined by `k` parallel edges of the given lengths.
    pub fn parallel(lengths: &[f64]) -> Self {
        let vertices = vec![
            VertexRec { id: 0, x: Some(0.0), y: Some(0.0) },
            VertexRec { id: 1, x: Some(1.0), y: Some(0.0) },
        ];
        let edges = lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| EdgeRec { id: i, from: 0, to: 1, length: l })
            .collect();
        MetricGraph::build(vertices, edges).expect("parallel graph is valid")
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, idx: usize) -> &Vertex {
        &self.vertices[idx]
    }

    pub fn edge(&self, idx: usize) -> &Edge {
        &self.edges[idx]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edge_index(&self, id: EdgeId) -> Result<usize> {
        self.eid_to_idx.get(&id).copied().ok_or(Error::UnknownEdge(id))
    }

    pub fn vertex_index(&self, id: VertexId) -> Option<usize> {
        self.vid_to_idx.get(&id).copied()
    }

    pub fn adjacency(&self, v_idx: usize) -> &[HalfEdge] {
        &self.adjacency[v_idx]
    }

    /// Half-edge degree: a loop contributes 2.
    pub fn degree(&self, v_idx: usize) -> usize {
        self.adjacency[v_idx].len()
    }

    pub fn is_loop(&self, edge_idx: usize) -> bool {
        self.edges[edge_idx].from == self.edges[edge_idx].to
    }

    pub fn has_loops(&self) -> bool {
        (0..self.n_edges()).any(|e| self.is_loop(e))
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// Validate a location and return (edge index, clamped t).
    pub fn resolve(&self, loc: &Location) -> Result<(usize, f64)> {
        let e = self.edge_index(loc.edge)?;
        let len = self.edges[e].length;
        if !loc.t.is_finite() || loc.t < -LOCATION_SNAP_TOL * len || loc.t > len * (1.0 + LOCATION_SNAP_TOL) {
            return Err(Error::InvalidLocation { edge: loc.edge, t: loc.t, len });
        }
        Ok((e, loc.t.clamp(0.0, len)))
    }

    /// Vertex index if the location sits (within snap tolerance) at an endpoint.
    pub fn location_vertex(&self, loc: &Location) -> Result<Option<usize>> {
        let (e, t) = self.resolve(loc)?;
        let edge = &self.edges[e];
        let tol = LOCATION_SNAP_TOL * edge.length;
        if t <= tol {
            Ok(Some(edge.from))
        } else if t >= edge.length - tol {
            Ok(Some(edge.to))
        } else {
            Ok(None)
        }
    }

    fn is_connected(&self) -> bool {
        if self.vertices.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.vertices.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for he in &self.adjacency[v] {
                let e = &self.edges[he.edge];
                let w = if he.end == EdgeEnd::Start { e.to } else { e.from };
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.vertices.len()
    }

    fn next_vertex_id(&self) -> VertexId {
        self.vertices.iter().map(|v| v.id).max().map_or(0, |m| m + 1)
    }

    fn next_edge_id(&self) -> EdgeId {
        self.edges.iter().map(|e| e.id).max().map_or(0, |m| m + 1)
    }

    fn interp_coord(&self, e: &Edge, t: f64) -> (Option<f64>, Option<f64>) {
        let (a, b) = (&self.vertices[e.from], &self.vertices[e.to]);
        let s = t / e.length;
        match (a.x, a.y, b.x, b.y) {
            (Some(ax), Some(ay), Some(bx), Some(by)) => {
                (Some(ax + s * (bx - ax)), Some(ay + s * (by - ay)))
            }
            _ => (None, None),
        }
    }

    /// Insert the given locations as vertices, splitting edges. Interior
    /// locations become degree-2 vertices; locations at (or within snap
    /// tolerance of) a vertex are deduplicated onto it. Returns the new
    /// graph, the vertex index each input location maps to, and the edge
    /// remap for translating other locations.
    ///
    /// Original vertices keep their internal indices.
    pub fn add_location_vertices(&self, locs: &[Location]) -> Result<(MetricGraph, Vec<usize>, EdgeRemap)> {
        // group strictly interior cut points by edge index
        let mut cuts: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        struct Pending {
            edge_idx: usize,
            t: f64,
        }
        let mut pending: Vec<Option<Pending>> = Vec::with_capacity(locs.len());
        let mut mapped = vec![usize::MAX; locs.len()];
        for (k, loc) in locs.iter().enumerate() {
            if let Some(v) = self.location_vertex(loc)? {
                mapped[k] = v;
                pending.push(None);
            } else {
                let (e, t) = self.resolve(loc)?;
                cuts.entry(e).or_default().push(t);
                pending.push(Some(Pending { edge_idx: e, t }));
            }
        }

        let mut vertices: Vec<VertexRec> = self
            .vertices
            .iter()
            .map(|v| VertexRec { id: v.id, x: v.x, y: v.y })
            .collect();
        let mut edges: Vec<EdgeRec> = Vec::with_capacity(self.n_edges() + locs.len());
        let mut next_vid = self.next_vertex_id();
        let mut next_eid = self.next_edge_id();
        let mut remap = EdgeRemap::default();
        // (edge_idx, cut t) -> new vertex position in `vertices`
        let mut cut_vertex: BTreeMap<usize, Vec<(f64, usize)>> = BTreeMap::new();

        for (e_idx, e) in self.edges.iter().enumerate() {
            let mut ts = match cuts.remove(&e_idx) {
                None => {
                    edges.push(EdgeRec {
                        id: e.id,
                        from: self.vertices[e.from].id,
                        to: self.vertices[e.to].id,
                        length: e.length,
                    });
                    continue;
                }
                Some(ts) => ts,
            };
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // dedup near-coincident cut points
            let tol = LOCATION_SNAP_TOL * e.length;
            let mut uniq: Vec<f64> = Vec::new();
            for t in ts {
                if uniq.last().map_or(true, |&u| t - u > tol) {
                    uniq.push(t);
                }
            }
            let mut here = Vec::new();
            for &t in &uniq {
                let (x, y) = self.interp_coord(e, t);
                vertices.push(VertexRec { id: next_vid, x, y });
                here.push((t, vertices.len() - 1));
                next_vid += 1;
            }
            // sub-edges; the remap segments cover [0, length]
            let mut segs = Vec::new();
            let mut prev_t = 0.0;
            let mut prev_vid = self.vertices[e.from].id;
            for &(t, vpos) in &here {
                let id = next_eid;
                next_eid += 1;
                edges.push(EdgeRec { id, from: prev_vid, to: vertices[vpos].id, length: t - prev_t });
                segs.push((id, prev_t, t));
                prev_t = t;
                prev_vid = vertices[vpos].id;
            }
            let id = next_eid;
            next_eid += 1;
            edges.push(EdgeRec { id, from: prev_vid, to: self.vertices[e.to].id, length: e.length - prev_t });
            segs.push((id, prev_t, e.length));
            remap.segments.insert(e.id, segs);
            cut_vertex.insert(e_idx, here);
        }

        let graph = MetricGraph::build(vertices, edges)?;
        for (k, p) in pending.iter().enumerate() {
            if let Some(p) = p {
                let here = &cut_vertex[&p.edge_idx];
                let tol = LOCATION_SNAP_TOL * self.edges[p.edge_idx].length;
                let (_, vpos) = here
                    .iter()
                    .find(|&&(t, _)| (t - p.t).abs() <= tol)
                    .expect("cut point recorded");
                mapped[k] = *vpos;
            }
        }
        Ok((graph, mapped, remap))
    }

    /// Split every loop at its midpoint; the result has no loops.
    pub fn split_loops(&self) -> (MetricGraph, EdgeRemap) {
        let locs: Vec<Location> = self
            .edges
            .iter()
            .filter(|e| self.vertices[e.from].id == self.vertices[e.to].id)
            .map(|e| Location::new(e.id, e.length / 2.0))
            .collect();
        let (g, _, remap) = self.add_location_vertices(&locs).expect("loop midpoints are valid");
        (g, remap)
    }

    /// Remove every degree-2 vertex whose two half-edges lie on distinct
    /// edges, merging the edges (a vertex carrying a single loop stays).
    pub fn merge_degree2(&self) -> MetricGraph {
        let mut vertices: Vec<VertexRec> = self
            .vertices
            .iter()
            .map(|v| VertexRec { id: v.id, x: v.x, y: v.y })
            .collect();
        let mut edges: Vec<EdgeRec> = self
            .edges
            .iter()
            .map(|e| EdgeRec {
                id: e.id,
                from: self.vertices[e.from].id,
                to: self.vertices[e.to].id,
                length: e.length,
            })
            .collect();
        let mut next_eid = self.next_edge_id();

        loop {
            let mut incident: BTreeMap<VertexId, Vec<(usize, bool)>> = BTreeMap::new();
            for v in &vertices {
                incident.insert(v.id, Vec::new());
            }
            for (k, e) in edges.iter().enumerate() {
                incident.get_mut(&e.from).unwrap().push((k, false));
                incident.get_mut(&e.to).unwrap().push((k, true));
            }
            let target = vertices.iter().find(|v| {
                let inc = &incident[&v.id];
                inc.len() == 2 && inc[0].0 != inc[1].0
            });
            let Some(v) = target else { break };
            let vid = v.id;
            let inc = incident[&vid].clone();
            let (k1, at_end1) = inc[0];
            let (k2, at_end2) = inc[1];
            // traverse e1 into v, then e2 out of v
            let e1 = edges[k1].clone();
            let e2 = edges[k2].clone();
            let start = if at_end1 { e1.from } else { e1.to };
            let finish = if at_end2 { e2.from } else { e2.to };
            let merged = EdgeRec {
                id: next_eid,
                from: start,
                to: finish,
                length: e1.length + e2.length,
            };
            next_eid += 1;
            let mut keep: Vec<EdgeRec> = edges
                .into_iter()
                .enumerate()
                .filter(|(k, _)| *k != k1 && *k != k2)
                .map(|(_, e)| e)
                .collect();
            keep.push(merged);
            edges = keep;
            vertices.retain(|u| u.id != vid);
        }
        MetricGraph::build(vertices, edges).expect("merge preserves validity")
    }

    /// Length of the shortest path between two locations.
    pub fn geodesic_distance(&self, a: &Location, b: &Location) -> Result<f64> {
        let (ea, ta) = self.resolve(a)?;
        let (eb, tb) = self.resolve(b)?;
        let mut best = f64::INFINITY;
        if ea == eb {
            best = (ta - tb).abs();
        }
        // via-endpoint paths
        let la = self.edges[ea].length;
        let lb = self.edges[eb].length;
        let ends_a = [(self.edges[ea].from, ta), (self.edges[ea].to, la - ta)];
        let ends_b = [(self.edges[eb].from, tb), (self.edges[eb].to, lb - tb)];
        for &(va, da) in &ends_a {
            let dist = self.dijkstra(va);
            for &(vb, db) in &ends_b {
                best = best.min(da + dist[vb] + db);
            }
        }
        Ok(best)
    }

    fn dijkstra(&self, source: usize) -> Vec<f64> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                self.0.partial_cmp(&other.0).unwrap().then(self.1.cmp(&other.1))
            }
        }
        let mut dist = vec![f64::INFINITY; self.n_vertices()];
        dist[source] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse(Item(0.0, source)));
        while let Some(Reverse(Item(d, v))) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for he in &self.adjacency[v] {
                let e = &self.edges[he.edge];
                let w = if he.end == EdgeEnd::Start { e.to } else { e.from };
                let nd = d + e.length;
                if nd < dist[w] {
                    dist[w] = nd;
                    heap.push(Reverse(Item(nd, w)));
                }
            }
        }
        dist
    }

    /// Random connected graph: a spanning tree over `n_vertices` plus
    /// `n_extra_edges` additional edges (possibly multi-edges or, when
    /// allowed, loops), with lengths in [0.5, 2).
    pub fn random_connected<R: rand::Rng>(
        rng: &mut R,
        n_vertices: usize,
        n_extra_edges: usize,
        allow_loops: bool,
    ) -> Self {
        assert!(n_vertices >= 1);
        let vertices = (0..n_vertices)
            .map(|i| VertexRec { id: i, x: None, y: None })
            .collect::<Vec<_>>();
        let mut edges = Vec::new();
        for v in 1..n_vertices {
            let u = rng.random_range(0..v);
            edges.push(EdgeRec {
                id: edges.len(),
                from: u,
                to: v,
                length: rng.random_range(0.5..2.0),
            });
        }
        for _ in 0..n_extra_edges {
            let u = rng.random_range(0..n_vertices);
            let v = rng.random_range(0..n_vertices);
            if u == v && !allow_loops {
                continue;
            }
            edges.push(EdgeRec {
                id: edges.len(),
                from: u,
                to: v,
                length: rng.random_range(0.5..2.0),
            });
        }
        if edges.is_empty() {
            // single vertex needs at least one loop to be a metric graph
            edges.push(EdgeRec { id: 0, from: 0, to: 0, length: rng.random_range(0.5..2.0) });
        }
        MetricGraph::build(vertices, edges).expect("tree plus extras is connected")
    }

    /// `n` uniformly random locations (by arc length) on the graph.
    pub fn random_locations<R: rand::Rng>(&self, rng: &mut R, n: usize) -> Vec<Location> {
        let total = self.total_length();
        (0..n)
            .map(|_| {
                let mut x = rng.random_range(0.0..total);
                for e in &self.edges {
                    if x <= e.length {
                        return Location::new(e.id, x);
                    }
                    x -= e.length;
                }
                let e = self.edges.last().unwrap();
                Location::new(e.id, e.length)
            })
            .collect()
    }

    /// Multiset of vertex degrees, sorted.
    pub fn degree_multiset(&self) -> Vec<usize> {
        let mut d: Vec<usize> = (0..self.n_vertices()).map(|v| self.degree(v)).collect();
        d.sort_unstable();
        d
    }

    /// Edge lengths, sorted.
    pub fn sorted_lengths(&self) -> Vec<f64> {
        let mut l: Vec<f64> = self.edges.iter().map(|e| e.length).collect();
        l.sort_by(|a, b| a.partial_cmp(b).unwrap());
        l
    }
}
