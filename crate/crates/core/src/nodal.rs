//! Nodal graphs: the zero locus of an eigensection as an embedded graph.
//!
//! Within each triangle the trivialized section is linear, so its zero set is
//! a segment; segments meet at edge crossings (always two per crossing, so
//! plain joints have degree two and are suppressed), at branch vertices, and
//! at clusters of near-zero vertices. Branch vertices get odd degree from
//! the sign-flip holonomy of their link ring; near-zero clusters model
//! interior critical zeros with even degree.

use crate::cuts::SignCochain;
use crate::geometry::{add3, scale, UnitVec3};
use crate::mesh::SphericalMesh;
use crate::operators::TwistedOperators;
use serde::Serialize;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NodalError {
    #[error("node degree at vertex {vertex} is ambiguous under threshold perturbation: {low_reading} vs {high_reading}")]
    UnresolvedNode { vertex: usize, low_reading: usize, high_reading: usize },
    #[error("triangle {0} is entirely below the zero threshold")]
    DegenerateTriangle(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NodeKind {
    /// Configuration point (its index).
    Branch(usize),
    /// Interior critical zero cluster.
    CriticalZero,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphNode {
    pub kind: NodeKind,
    pub position: [f64; 3],
    pub degree: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub tri: usize,
    pub a: [f64; 3],
    pub b: [f64; 3],
    /// Mesh edge ids carrying the endpoints, when they are edge crossings.
    pub edge_a: Option<usize>,
    pub edge_b: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct GraphArc {
    /// Node ids at the two ends; None for a free cycle.
    pub ends: Option<(usize, usize)>,
    pub segments: Vec<Segment>,
    /// Mesh edges crossed transversally by this arc.
    pub crossed_edges: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ZeroGraph {
    pub nodes: Vec<GraphNode>,
    pub arcs: Vec<GraphArc>,
    /// Free cycles (closed arcs through no node); each counts as one vertex
    /// and one edge in the Euler characteristic.
    pub free_cycles: usize,
    pub components: usize,
}

impl ZeroGraph {
    pub fn vertex_count(&self) -> usize {
        self.nodes.len() + self.free_cycles
    }

    pub fn edge_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64
    }

    /// Closed form from the node degree census: each node contributes
    /// 1 - deg/2 (degrees are summed as halves of arc endpoints).
    pub fn euler_closed_form(&self) -> f64 {
        let node_sum: f64 = self
            .nodes
            .iter()
            .map(|n| 1.0 - n.degree as f64 / 2.0)
            .sum();
        node_sum + self.free_cycles as f64 * (1.0 - 1.0)
    }

    pub fn cycle_count(&self) -> i64 {
        self.edge_count() as i64 - self.vertex_count() as i64 + self.components as i64
    }

    pub fn branch_degrees(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Branch(i) => Some((i, n.degree)),
                NodeKind::CriticalZero => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NodalParams {
    /// Zero-vertex threshold as a fraction of the sup norm.
    pub eps_zero: f64,
    /// Fail with UnresolvedNode when a junction-grade reading is unstable
    /// under threshold perturbation. Consumers that re-derive connectivity
    /// geometrically may disable this.
    pub strict: bool,
}

impl Default for NodalParams {
    fn default() -> Self {
        Self { eps_zero: 1e-6, strict: true }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum MicroId {
    Cross(usize), // mesh edge id
    Node(usize),  // graph node id
}

/// Extract the zero graph of a discrete section.
pub fn extract_zero_graph(
    f: &[f64],
    ops: &TwistedOperators,
    mesh: &SphericalMesh,
    signs: &SignCochain,
    params: &NodalParams,
) -> Result<ZeroGraph, NodalError> {
    let all = ops.expand(f);
    let sup = all.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = params.eps_zero * sup;

    // threshold-stability check: vertices whose zero/nonzero reading flips
    // under halving/doubling of the threshold must give the same ring count
    for v in 0..mesh.num_vertices() {
        if !params.strict || mesh.is_flagged[v] {
            continue;
        }
        let m = all[v].abs();
        if m >= 0.5 * eps && m < 2.0 * eps {
            let low = ring_crossings(&all, mesh, signs, v, 0.5 * eps);
            let high = ring_crossings(&all, mesh, signs, v, 2.0 * eps);
            // readings of 0, 1 or 2 only move a suppressed joint by one
            // triangle; a junction-grade reading must be stable
            if low != high && low.max(high) >= 3 {
                return Err(NodalError::UnresolvedNode {
                    vertex: v,
                    low_reading: low,
                    high_reading: high,
                });
            }
        }
    }

    let is_zero =
        |v: usize| -> bool { mesh.is_flagged[v] || all[v].abs() < eps };

    // graph nodes: flagged vertices, then clusters of unflagged zero vertices
    let mut node_of_vertex: HashMap<usize, usize> = HashMap::new();
    let mut nodes: Vec<GraphNode> = Vec::new();
    for (cfg_idx, &v) in mesh.flagged.iter().enumerate() {
        node_of_vertex.insert(v, nodes.len());
        nodes.push(GraphNode {
            kind: NodeKind::Branch(cfg_idx),
            position: mesh.vertices[v].as_array(),
            degree: 0,
        });
    }
    // cluster unflagged zero vertices by adjacency
    let mut zero_verts: Vec<usize> = (0..mesh.num_vertices())
        .filter(|&v| !mesh.is_flagged[v] && is_zero(v))
        .collect();
    zero_verts.sort_unstable();
    let mut visited: HashMap<usize, bool> = zero_verts.iter().map(|&v| (v, false)).collect();
    for &v0 in &zero_verts {
        if visited[&v0] {
            continue;
        }
        let mut comp = vec![v0];
        *visited.get_mut(&v0).unwrap() = true;
        let mut stack = vec![v0];
        while let Some(u) = stack.pop() {
            for w in mesh.vertex_neighbors(u) {
                if let Some(seen) = visited.get_mut(&w) {
                    if !*seen {
                        *seen = true;
                        comp.push(w);
                        stack.push(w);
                    }
                }
            }
        }
        let mut c = [0.0; 3];
        for &u in &comp {
            c = add3(c, mesh.vertices[u].as_array());
        }
        let c = scale(c, 1.0 / comp.len() as f64);
        let pos = UnitVec3::normalized(c[0], c[1], c[2]).unwrap();
        let id = nodes.len();
        nodes.push(GraphNode { kind: NodeKind::CriticalZero, position: pos.as_array(), degree: 0 });
        for &u in &comp {
            node_of_vertex.insert(u, id);
        }
    }

    // segments per triangle
    let mut segments: Vec<Segment> = Vec::new();
    let mut seg_ends: Vec<(MicroId, MicroId)> = Vec::new();
    let mut covered_zero_edge: HashMap<usize, ()> = HashMap::new();
    let crossing_point = |e: usize| -> [f64; 3] {
        let edge = mesh.edges[e];
        let (fa, fb) = (all[edge.a].abs(), all[edge.b].abs());
        let t = fa / (fa + fb);
        let p = add3(
            scale(mesh.vertices[edge.a].as_array(), 1.0 - t),
            scale(mesh.vertices[edge.b].as_array(), t),
        );
        let u = UnitVec3::normalized(p[0], p[1], p[2]).unwrap();
        u.as_array()
    };
    let edge_crosses = |e: usize| -> bool {
        let edge = mesh.edges[e];
        if is_zero(edge.a) || is_zero(edge.b) {
            return false;
        }
        all[edge.a] * signs.of_edge(e) * all[edge.b] < 0.0
    };

    for ti in 0..mesh.num_triangles() {
        let t = mesh.triangles[ti];
        let zeros: Vec<usize> = (0..3).filter(|&k| is_zero(t[k])).collect();
        match zeros.len() {
            0 => {
                let crossed: Vec<usize> = (0..3)
                    .filter_map(|k| {
                        let e = mesh.edge_id(t[k], t[(k + 1) % 3]).unwrap();
                        edge_crosses(e).then_some(e)
                    })
                    .collect();
                if crossed.len() == 2 {
                    segments.push(Segment {
                        tri: ti,
                        a: crossing_point(crossed[0]),
                        b: crossing_point(crossed[1]),
                        edge_a: Some(crossed[0]),
                        edge_b: Some(crossed[1]),
                    });
                    seg_ends.push((MicroId::Cross(crossed[0]), MicroId::Cross(crossed[1])));
                }
            }
            1 => {
                let zk = zeros[0];
                let (u, v) = (t[(zk + 1) % 3], t[(zk + 2) % 3]);
                let e = mesh.edge_id(u, v).unwrap();
                if edge_crosses(e) {
                    let node = node_of_vertex[&t[zk]];
                    segments.push(Segment {
                        tri: ti,
                        a: mesh.vertices[t[zk]].as_array(),
                        b: crossing_point(e),
                        edge_a: None,
                        edge_b: Some(e),
                    });
                    seg_ends.push((MicroId::Node(node), MicroId::Cross(e)));
                }
            }
            2 => {
                // nodal edge between the two zero corners; record once
                let (z1, z2) = (t[zeros[0]], t[zeros[1]]);
                let e = mesh.edge_id(z1, z2).unwrap();
                if covered_zero_edge.insert(e, ()).is_none() {
                    let (n1, n2) = (node_of_vertex[&z1], node_of_vertex[&z2]);
                    if n1 != n2 {
                        segments.push(Segment {
                            tri: ti,
                            a: mesh.vertices[z1].as_array(),
                            b: mesh.vertices[z2].as_array(),
                            edge_a: None,
                            edge_b: None,
                        });
                        seg_ends.push((MicroId::Node(n1), MicroId::Node(n2)));
                    }
                }
            }
            _ => return Err(NodalError::DegenerateTriangle(ti)),
        }
    }

    // link segments into arcs through degree-2 crossing joints
    let mut incident: HashMap<MicroId, Vec<usize>> = HashMap::new();
    for (si, (a, b)) in seg_ends.iter().enumerate() {
        incident.entry(*a).or_default().push(si);
        incident.entry(*b).or_default().push(si);
    }
    let mut seg_used = vec![false; segments.len()];
    let mut arcs: Vec<GraphArc> = Vec::new();

    // arcs anchored at nodes
    let node_ids: Vec<MicroId> = (0..nodes.len()).map(MicroId::Node).collect();
    for &start in &node_ids {
        let starts = incident.get(&start).cloned().unwrap_or_default();
        for s0 in starts {
            if seg_used[s0] {
                continue;
            }
            let arc = walk_arc(
                s0,
                start,
                &segments,
                &seg_ends,
                &incident,
                &mut seg_used,
            );
            arcs.push(arc);
        }
    }
    // remaining segments form free cycles
    let mut free_cycles = 0usize;
    for s0 in 0..segments.len() {
        if seg_used[s0] {
            continue;
        }
        let start = seg_ends[s0].0;
        let arc = walk_arc(s0, start, &segments, &seg_ends, &incident, &mut seg_used);
        debug_assert!(arc.ends.is_none());
        free_cycles += 1;
        arcs.push(arc);
    }

    // node degrees from arc endpoints
    for arc in &arcs {
        if let Some((a, b)) = arc.ends {
            nodes[a].degree += 1;
            nodes[b].degree += 1;
        }
    }
    // drop isolated critical-zero nodes (no incident arcs): they are plain
    // zeros of the interpolant, not graph vertices
    let keep: Vec<bool> = nodes
        .iter()
        .map(|n| n.degree > 0 || matches!(n.kind, NodeKind::Branch(_)))
        .collect();
    let mut remap = vec![usize::MAX; nodes.len()];
    let mut new_nodes = Vec::new();
    for (i, n) in nodes.into_iter().enumerate() {
        if keep[i] {
            remap[i] = new_nodes.len();
            new_nodes.push(n);
        }
    }
    let mut new_arcs = Vec::with_capacity(arcs.len());
    for mut arc in arcs {
        if let Some((a, b)) = arc.ends {
            arc.ends = Some((remap[a], remap[b]));
        }
        new_arcs.push(arc);
    }
    let nodes = new_nodes;
    let arcs = new_arcs;

    // components over nodes and free cycles
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let r = find(parent, parent[x]);
            parent[x] = r;
        }
        parent[x]
    }
    let mut isolated_branch = 0;
    for arc in &arcs {
        if let Some((a, b)) = arc.ends {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
    }
    let mut roots = std::collections::HashSet::new();
    for i in 0..nodes.len() {
        if nodes[i].degree == 0 {
            isolated_branch += 1;
            continue;
        }
        let r = find(&mut parent, i);
        roots.insert(r);
    }
    let components = roots.len() + free_cycles + isolated_branch;

    Ok(ZeroGraph { nodes, arcs, free_cycles, components })
}

fn walk_arc(
    s0: usize,
    start: MicroId,
    segments: &[Segment],
    seg_ends: &[(MicroId, MicroId)],
    incident: &HashMap<MicroId, Vec<usize>>,
    seg_used: &mut [bool],
) -> GraphArc {
    let mut chain = vec![s0];
    seg_used[s0] = true;
    let mut crossed = Vec::new();
    let mut cur_end = other_end(seg_ends[s0], start);
    if let MicroId::Cross(e) = start {
        crossed.push(e);
    }
    loop {
        match cur_end {
            MicroId::Node(_) => break,
            MicroId::Cross(e) => {
                crossed.push(e);
                let nexts = &incident[&cur_end];
                let next = nexts.iter().copied().find(|&s| !seg_used[s]);
                match next {
                    None => break, // closed cycle back at start
                    Some(s) => {
                        seg_used[s] = true;
                        chain.push(s);
                        cur_end = other_end(seg_ends[s], cur_end);
                    }
                }
            }
        }
    }
    let ends = match (start, cur_end) {
        (MicroId::Node(a), MicroId::Node(b)) => Some((a, b)),
        _ => None,
    };
    crossed.sort_unstable();
    crossed.dedup();
    GraphArc {
        ends,
        segments: chain.into_iter().map(|s| segments[s]).collect(),
        crossed_edges: crossed,
    }
}

fn other_end(ends: (MicroId, MicroId), this: MicroId) -> MicroId {
    if ends.0 == this {
        ends.1
    } else {
        ends.0
    }
}

/// Sign crossings around the link ring of a vertex, treating |f| < eps as
/// positive-side (used only for threshold-stability diagnostics).
fn ring_crossings(
    all: &[f64],
    mesh: &SphericalMesh,
    signs: &SignCochain,
    v: usize,
    eps: f64,
) -> usize {
    let mut count = 0;
    for (a, b) in mesh.vertex_link_edges(v) {
        if all[a].abs() < eps || all[b].abs() < eps {
            continue;
        }
        let e = mesh.edge_id(a, b).unwrap();
        if all[a] * signs.of_edge(e) * all[b] < 0.0 {
            count += 1;
        }
    }
    count
}

/// Both Euler characteristic computations: combinatorial V - E and the
/// degree-census closed form.
pub fn euler_characteristic(graph: &ZeroGraph) -> (i64, f64) {
    (graph.euler_characteristic(), graph.euler_closed_form())
}

#[derive(Debug, Clone, Serialize)]
pub struct VanishingCensus {
    /// Branch points whose graph degree is one (vanishing order zero).
    pub order_zero_count: usize,
    pub cycle_count: i64,
    /// Required lower bound for the k-th eigensection of an n-pair
    /// configuration: n+1 for the ground state, n+1-k above it.
    pub required: usize,
    pub passes: bool,
}

/// Census of order-zero branch points against the k-th eigensection bound.
pub fn vanishing_census(graph: &ZeroGraph, n_pairs: usize, k: usize) -> VanishingCensus {
    assert!(k >= 1);
    let order_zero_count = graph
        .branch_degrees()
        .iter()
        .filter(|(_, d)| *d == 1)
        .count();
    let required = if k == 1 {
        n_pairs + 1
    } else {
        (n_pairs + 1).saturating_sub(k)
    };
    let cycle_count = graph.cycle_count();
    VanishingCensus {
        order_zero_count,
        cycle_count,
        required,
        passes: order_zero_count >= required,
    }
}

/// The arc incident to a branch node, with its segments ordered outward
/// from that node (reversed if the node is the arc's far end).
pub fn arc_from_branch(graph: &ZeroGraph, cfg_idx: usize) -> Option<(usize, Vec<Segment>)> {
    let node = graph
        .nodes
        .iter()
        .position(|n| n.kind == NodeKind::Branch(cfg_idx))?;
    let (ai, arc) = graph
        .arcs
        .iter()
        .enumerate()
        .find(|(_, a)| matches!(a.ends, Some((x, y)) if x == node || y == node))?;
    let (x, _) = arc.ends.unwrap();
    let mut segs = arc.segments.clone();
    if x != node {
        segs.reverse();
        for s in segs.iter_mut() {
            std::mem::swap(&mut s.a, &mut s.b);
            std::mem::swap(&mut s.edge_a, &mut s.edge_b);
        }
    }
    Some((ai, segs))
}

/// Path of arcs joining two branch nodes, if one exists (BFS over nodes).
pub fn arc_path_between(
    graph: &ZeroGraph,
    from_branch: usize,
    to_branch: usize,
) -> Option<Vec<usize>> {
    let find_node = |cfg: usize| {
        graph
            .nodes
            .iter()
            .position(|n| n.kind == NodeKind::Branch(cfg))
    };
    let (a, b) = (find_node(from_branch)?, find_node(to_branch)?);
    let mut prev: HashMap<usize, (usize, usize)> = HashMap::new(); // node -> (prev node, arc)
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(a);
    let mut seen = std::collections::HashSet::new();
    seen.insert(a);
    while let Some(u) = queue.pop_front() {
        if u == b {
            let mut path = Vec::new();
            let mut cur = b;
            while cur != a {
                let (p, arc) = prev[&cur];
                path.push(arc);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        for (ai, arc) in graph.arcs.iter().enumerate() {
            if let Some((x, y)) = arc.ends {
                let next = if x == u {
                    y
                } else if y == u {
                    x
                } else {
                    continue;
                };
                if seen.insert(next) {
                    prev.insert(next, (u, ai));
                    queue.push_back(next);
                }
            }
        }
    }
    None
}

/// JSON export per the graph schema.
pub fn graph_to_json(graph: &ZeroGraph) -> serde_json::Value {
    serde_json::json!({
        "nodes": graph.nodes.iter().map(|n| serde_json::json!({
            "position": n.position,
            "kind": match n.kind { NodeKind::Branch(i) => format!("branch:{i}"), NodeKind::CriticalZero => "critical".into() },
            "degree": n.degree,
        })).collect::<Vec<_>>(),
        "edges": graph.arcs.iter().map(|a| serde_json::json!({
            "polyline": a.segments.iter().map(|s| s.a).chain(a.segments.last().map(|s| s.b)).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "summary": {
            "components": graph.components,
            "cycles": graph.cycle_count(),
            "chi": graph.euler_characteristic(),
        }
    })
}
