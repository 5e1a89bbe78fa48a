//! Cut systems and edge sign cochains.
//!
//! A cut system pairs the configuration points by vertex-disjoint edge paths.
//! Perturbing a path slightly to one side gives a curve from one point to its
//! partner; the edges that curve crosses are the "crossing set" and carry
//! sign -1. The resulting cochain has holonomy -1 around every configuration
//! point and +1 around every other vertex, which is the whole content of the
//! twisted bundle at the discrete level.

use crate::geometry::{dot3, scale, sub3, Configuration};
use crate::mesh::SphericalMesh;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use std::collections::{BinaryHeap, HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CutError {
    #[error("could not route disjoint cut paths after {attempts} attempts")]
    MatchingFailed { attempts: usize },
    #[error("holonomy violation at vertex {vertex}: expected {expected}, got {got}")]
    HolonomyViolation { vertex: usize, expected: i8, got: i8 },
}

#[derive(Debug, Clone)]
pub struct CutPath {
    /// Configuration-point indices of the two endpoints.
    pub pair: (usize, usize),
    /// Mesh vertex path from pair.0's vertex to pair.1's vertex.
    pub vertices: Vec<usize>,
    /// Edge ids whose sign flips because the perturbed path crosses them.
    pub crossing_edges: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CutSystem {
    pub paths: Vec<CutPath>,
    /// Unit tangent at each configuration point toward its path's first
    /// interior vertex (the reference ray for branch trivializations).
    pub ref_rays: Vec<[f64; 3]>,
}

impl CutSystem {
    pub fn empty() -> Self {
        Self { paths: Vec::new(), ref_rays: Vec::new() }
    }

    /// The path having configuration point `k` as an endpoint.
    pub fn path_of_point(&self, k: usize) -> Option<&CutPath> {
        self.paths.iter().find(|p| p.pair.0 == k || p.pair.1 == k)
    }

    pub fn all_path_vertices(&self) -> HashSet<usize> {
        self.paths.iter().flat_map(|p| p.vertices.iter().copied()).collect()
    }
}

/// Per-edge signs; +1 everywhere except the crossing set.
#[derive(Debug, Clone)]
pub struct SignCochain {
    pub sigma: Vec<i8>,
}

impl SignCochain {
    pub fn untwisted(mesh: &SphericalMesh) -> Self {
        Self { sigma: vec![1; mesh.num_edges()] }
    }

    pub fn of_edge(&self, e: usize) -> f64 {
        self.sigma[e] as f64
    }

    /// Product of signs around the link of a vertex.
    pub fn holonomy(&self, mesh: &SphericalMesh, v: usize) -> i8 {
        let mut h = 1i8;
        for (a, b) in mesh.vertex_link_edges(v) {
            let e = mesh.edge_id(a, b).expect("link edge exists");
            h *= self.sigma[e];
        }
        h
    }
}

/// Cyclic neighbor order around a vertex, following triangle orientation.
fn neighbor_cycle(mesh: &SphericalMesh, v: usize) -> Vec<usize> {
    let mut succ: HashMap<usize, usize> = HashMap::new();
    for &ti in &mesh.vertex_tris[v] {
        let t = mesh.triangles[ti];
        let i = t.iter().position(|&u| u == v).unwrap();
        let a = t[(i + 1) % 3];
        let b = t[(i + 2) % 3];
        succ.insert(a, b);
    }
    let mut cycle = Vec::with_capacity(succ.len());
    let &start = succ.keys().min().unwrap();
    let mut cur = start;
    loop {
        cycle.push(cur);
        cur = succ[&cur];
        if cur == start {
            break;
        }
        if cycle.len() > succ.len() {
            panic!("vertex star is not a single fan");
        }
    }
    cycle
}

/// Edges (v, x) for x strictly between `from` and `to` in the cyclic order
/// around v.
fn fan_edges(mesh: &SphericalMesh, v: usize, from: usize, to: usize) -> Vec<usize> {
    let cycle = neighbor_cycle(mesh, v);
    let n = cycle.len();
    let i0 = cycle.iter().position(|&u| u == from).expect("from in star");
    let mut out = Vec::new();
    let mut i = (i0 + 1) % n;
    while cycle[i] != to {
        out.push(mesh.edge_id(v, cycle[i]).expect("star edge exists"));
        i = (i + 1) % n;
        if i == i0 {
            panic!("to not in star of v");
        }
    }
    out
}

struct HeapEntry(f64, usize);
impl PartialEq for HeapEntry {
    fn eq(&self, o: &Self) -> bool {
        self.0 == o.0 && self.1 == o.1
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        // min-heap on (dist, vertex)
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

/// Shortest path between mesh vertices avoiding banned vertices and the
/// direct start-end edge (paths must have at least one interior vertex).
fn shortest_path(
    mesh: &SphericalMesh,
    start: usize,
    end: usize,
    banned: &HashSet<usize>,
) -> Option<Vec<usize>> {
    let n = mesh.num_vertices();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[start] = 0.0;
    heap.push(HeapEntry(0.0, start));
    while let Some(HeapEntry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == end {
            break;
        }
        for v in mesh.vertex_neighbors(u) {
            if banned.contains(&v) && v != end {
                continue;
            }
            if u == start && v == end {
                continue; // forbid the direct edge
            }
            let e = mesh.edge_id(u, v).unwrap();
            let nd = d + mesh.edges[e].length;
            if nd < dist[v] - 1e-15 {
                dist[v] = nd;
                prev[v] = u;
                heap.push(HeapEntry(nd, v));
            }
        }
    }
    if !dist[end].is_finite() {
        return None;
    }
    let mut path = vec![end];
    let mut cur = end;
    while cur != start {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    Some(path)
}

/// Greedy nearest-pair matching of configuration points, by ascending
/// pairwise distance.
fn greedy_pairs(config: &Configuration) -> Vec<(usize, usize)> {
    let pts = config.points();
    let mut dists: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            dists.push((crate::geometry::geodesic_distance(&pts[i], &pts[j]), i, j));
        }
    }
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used = vec![false; pts.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in dists {
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Build the cut system: greedy nearest-pair matching, each pair joined by a
/// shortest disjoint edge path, retrying pair orderings before failing.
pub fn build_cut_system(config: &Configuration, mesh: &SphericalMesh) -> Result<CutSystem, CutError> {
    build_cut_system_variant(config, mesh, 0)
}

/// Variant entry point: `variant` permutes the routing order (used to check
/// gauge invariance across different cut systems).
pub fn build_cut_system_variant(
    config: &Configuration,
    mesh: &SphericalMesh,
    variant: u64,
) -> Result<CutSystem, CutError> {
    if config.is_empty() {
        return Ok(CutSystem::empty());
    }
    let base_pairs = greedy_pairs(config);
    let mut attempts = 0;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xc07_5eed ^ variant);
    for attempt in 0..24 {
        attempts += 1;
        let mut pairs = base_pairs.clone();
        if attempt > 0 || variant > 0 {
            pairs.shuffle(&mut rng);
        }
        if let Some(cs) = try_route(config, mesh, &pairs) {
            return Ok(cs);
        }
    }
    Err(CutError::MatchingFailed { attempts })
}

fn try_route(
    config: &Configuration,
    mesh: &SphericalMesh,
    pairs: &[(usize, usize)],
) -> Option<CutSystem> {
    let mut banned: HashSet<usize> = mesh.flagged.iter().copied().collect();
    let mut paths = Vec::new();
    for &(i, j) in pairs {
        let (vi, vj) = (mesh.flagged[i], mesh.flagged[j]);
        banned.remove(&vi);
        banned.remove(&vj);
        let path = shortest_path(mesh, vi, vj, &banned)?;
        for &v in &path {
            banned.insert(v);
        }
        paths.push(CutPath { pair: (i, j), vertices: path, crossing_edges: Vec::new() });
    }
    // crossing sets from the fans at interior path vertices
    for p in paths.iter_mut() {
        let mut crossings = Vec::new();
        for w in p.vertices.windows(3) {
            let (prev, v, next) = (w[0], w[1], w[2]);
            crossings.extend(fan_edges(mesh, v, prev, next));
        }
        crossings.sort_unstable();
        p.crossing_edges = crossings;
    }
    // reference rays at each configuration point
    let mut ref_rays = vec![[0.0; 3]; config.len()];
    for p in &paths {
        for (cfg_idx, ends) in [(p.pair.0, (p.vertices[0], p.vertices[1])), (
            p.pair.1,
            (p.vertices[p.vertices.len() - 1], p.vertices[p.vertices.len() - 2]),
        )] {
            let base = mesh.vertices[ends.0].as_array();
            let toward = mesh.vertices[ends.1].as_array();
            let raw = sub3(toward, base);
            let tang = sub3(raw, scale(base, dot3(raw, base)));
            let n = crate::geometry::norm(tang);
            ref_rays[cfg_idx] = scale(tang, 1.0 / n.max(1e-300));
        }
    }
    Some(CutSystem { paths, ref_rays })
}

/// Sign cochain realized by a cut system, with holonomy validation.
///
/// Validity: every triangle without a flagged corner has sign product +1,
/// flagged vertices have link holonomy -1, and unflagged vertices whose link
/// polygon avoids the configuration (no flagged neighbor) have +1. The link
/// of a vertex adjacent to a flagged vertex passes through the puncture, so
/// its product is not a bundle invariant and is left unchecked.
pub fn edge_signs(cut: &CutSystem, mesh: &SphericalMesh) -> Result<SignCochain, CutError> {
    let mut sigma = vec![1i8; mesh.num_edges()];
    for p in &cut.paths {
        for &e in &p.crossing_edges {
            sigma[e] = -sigma[e];
        }
    }
    let cochain = SignCochain { sigma };
    for (ti, t) in mesh.triangles.iter().enumerate() {
        if t.iter().any(|&v| mesh.is_flagged[v]) {
            continue;
        }
        let mut prod = 1i8;
        for k in 0..3 {
            let e = mesh.edge_id(t[k], t[(k + 1) % 3]).expect("face edge");
            prod *= cochain.sigma[e];
        }
        if prod != 1 {
            return Err(CutError::HolonomyViolation { vertex: mesh.triangles[ti][0], expected: 1, got: prod });
        }
    }
    for v in 0..mesh.num_vertices() {
        let expected: i8 = if mesh.is_flagged[v] {
            -1
        } else if mesh.vertex_neighbors(v).iter().any(|&u| mesh.is_flagged[u]) {
            continue;
        } else {
            1
        };
        let got = cochain.holonomy(mesh, v);
        if got != expected {
            return Err(CutError::HolonomyViolation { vertex: v, expected, got });
        }
    }
    Ok(cochain)
}

/// Spread a relative sign field from `root` across the mesh, flipping across
/// the given flip edges, never traversing banned edges. Returns +1/-1 signs
/// (0 where unreached).
pub fn spread_signs(
    mesh: &SphericalMesh,
    flip_edges: &HashSet<usize>,
    banned_edges: &HashSet<usize>,
    root: usize,
    region: Option<&HashSet<usize>>,
) -> Vec<i8> {
    let mut sign = vec![0i8; mesh.num_vertices()];
    sign[root] = 1;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(root);
    while let Some(u) = queue.pop_front() {
        for v in mesh.vertex_neighbors(u) {
            if sign[v] != 0 {
                continue;
            }
            if let Some(r) = region {
                if !r.contains(&v) {
                    continue;
                }
            }
            let e = mesh.edge_id(u, v).unwrap();
            if banned_edges.contains(&e) {
                continue;
            }
            sign[v] = if flip_edges.contains(&e) { -sign[u] } else { sign[u] };
            queue.push_back(v);
        }
    }
    sign
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_configuration, UnitVec3};
    use crate::mesh::{build_mesh, MeshParams};

    fn antipodal_mesh() -> (Configuration, SphericalMesh) {
        let config = make_configuration(vec![UnitVec3::north(), UnitVec3::south()]).unwrap();
        let params = MeshParams { background_count: 900, grade_depth: 1, grade_radius: 0.3 };
        let mesh = build_mesh(&config, &params).unwrap();
        (config, mesh)
    }

    #[test]
    fn antipodal_single_path_pole_to_pole() {
        let (config, mesh) = antipodal_mesh();
        let cut = build_cut_system(&config, &mesh).unwrap();
        assert_eq!(cut.paths.len(), 1);
        let p = &cut.paths[0];
        assert_eq!(p.vertices[0], mesh.flagged[0]);
        assert_eq!(*p.vertices.last().unwrap(), mesh.flagged[1]);
        assert!(p.vertices.len() >= 3, "at least one interior vertex");
        assert!(!p.crossing_edges.is_empty());
    }

    #[test]
    fn antipodal_holonomy() {
        use rand::Rng;
        let (config, mesh) = antipodal_mesh();
        let cut = build_cut_system(&config, &mesh).unwrap();
        let signs = edge_signs(&cut, &mesh).unwrap();
        for &f in &mesh.flagged {
            assert_eq!(signs.holonomy(&mesh, f), -1);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut checked = 0;
        while checked < 50 {
            let v = rng.gen_range(0..mesh.num_vertices());
            // links of flagged-adjacent vertices pass through a puncture and
            // carry no invariant
            if mesh.is_flagged[v]
                || mesh.vertex_neighbors(v).iter().any(|&u| mesh.is_flagged[u])
            {
                continue;
            }
            assert_eq!(signs.holonomy(&mesh, v), 1);
            checked += 1;
        }
    }

    #[test]
    fn empty_configuration_all_plus() {
        let config = make_configuration(vec![]).unwrap();
        let params = MeshParams { background_count: 600, grade_depth: 0, grade_radius: 0.4 };
        let mesh = build_mesh(&config, &params).unwrap();
        let cut = build_cut_system(&config, &mesh).unwrap();
        let signs = edge_signs(&cut, &mesh).unwrap();
        assert!(signs.sigma.iter().all(|&s| s == 1));
    }

    #[test]
    fn triangle_holonomy_away_from_cuts() {
        let (config, mesh) = antipodal_mesh();
        let cut = build_cut_system(&config, &mesh).unwrap();
        let signs = edge_signs(&cut, &mesh).unwrap();
        let crossing: HashSet<usize> =
            cut.paths.iter().flat_map(|p| p.crossing_edges.iter().copied()).collect();
        let path_verts = cut.all_path_vertices();
        let mut away = 0;
        for (_, t) in mesh.triangles.iter().enumerate() {
            let touches = t.iter().any(|v| path_verts.contains(v));
            if touches {
                continue;
            }
            let mut prod = 1i8;
            let mut crosses = false;
            for k in 0..3 {
                let e = mesh.edge_id(t[k], t[(k + 1) % 3]).unwrap();
                if crossing.contains(&e) {
                    crosses = true;
                }
                prod *= signs.sigma[e];
            }
            if !crosses {
                assert_eq!(prod, 1);
                away += 1;
            }
        }
        assert!(away > 100);
    }

    #[test]
    fn tetrahedron_two_disjoint_paths() {
        let s = 1.0 / 3f64.sqrt();
        let config = make_configuration(vec![
            UnitVec3::normalized(s, s, s).unwrap(),
            UnitVec3::normalized(s, -s, -s).unwrap(),
            UnitVec3::normalized(-s, s, -s).unwrap(),
            UnitVec3::normalized(-s, -s, s).unwrap(),
        ])
        .unwrap();
        let params = MeshParams { background_count: 1200, grade_depth: 1, grade_radius: 0.3 };
        let mesh = build_mesh(&config, &params).unwrap();
        let cut = build_cut_system(&config, &mesh).unwrap();
        assert_eq!(cut.paths.len(), 2);
        let mut seen = HashSet::new();
        for p in &cut.paths {
            for &v in &p.vertices {
                assert!(seen.insert(v), "paths share vertex {v}");
            }
        }
        let mut endpoint_count = vec![0usize; 4];
        for p in &cut.paths {
            endpoint_count[p.pair.0] += 1;
            endpoint_count[p.pair.1] += 1;
        }
        assert_eq!(endpoint_count, vec![1, 1, 1, 1]);
        let signs = edge_signs(&cut, &mesh).unwrap();
        for &f in &mesh.flagged {
            assert_eq!(signs.holonomy(&mesh, f), -1);
        }
    }

    #[test]
    fn variant_cut_systems_validate() {
        let (config, mesh) = antipodal_mesh();
        for variant in 0..3 {
            let cut = build_cut_system_variant(&config, &mesh, variant).unwrap();
            assert!(edge_signs(&cut, &mesh).is_ok());
        }
    }
}
