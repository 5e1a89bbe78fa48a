//! Spherical triangulations conforming to a configuration, with graded
//! refinement near the configuration points.
//!
//! The mesh underlies the twisted operators: vertices carry lumped areas
//! (spherical triangle areas, so total mass is the sphere area), edges carry
//! cotangent weights, and the configuration points are flagged vertices.

use crate::geometry::{
    add3, cross, dot3, geodesic_distance, norm, scale, sub3, Configuration, UnitVec3,
};
use crate::hull::convex_hull;
use rand::Rng;
use rand::SeedableRng;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh degenerate: min angle {min_angle_deg:.2} deg below 5 deg")]
    MeshDegenerate { min_angle_deg: f64 },
    #[error("hull construction failed: {0}")]
    HullFailed(String),
    #[error("refinement did not terminate")]
    RefinementStalled,
    #[error("not enough points to mesh the sphere ({0})")]
    TooFewPoints(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct MeshParams {
    pub background_count: usize,
    pub grade_depth: usize,
    pub grade_radius: f64,
}

impl Default for MeshParams {
    fn default() -> Self {
        Self { background_count: 4000, grade_depth: 4, grade_radius: 0.4 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MeshEdge {
    pub a: usize,
    pub b: usize,
    pub tris: [usize; 2],
    pub cot_weight: f64,
    pub length: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct MeshQuality {
    pub min_angle_deg: f64,
    pub median_edge: f64,
    pub min_edge: f64,
    pub negative_weight_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct SphericalMesh {
    pub vertices: Vec<UnitVec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Vertex index of each configuration point, in configuration order.
    pub flagged: Vec<usize>,
    pub is_flagged: Vec<bool>,
    pub edges: Vec<MeshEdge>,
    pub edge_of: HashMap<(usize, usize), usize>,
    /// Lumped vertex areas from spherical triangle areas.
    pub vertex_area: Vec<f64>,
    pub tri_area: Vec<f64>,
    /// Min geodesic distance from each vertex to the configuration.
    pub vertex_config_dist: Vec<f64>,
    pub vertex_tris: Vec<Vec<usize>>,
    pub quality: MeshQuality,
    locator: Locator,
}

/// Spherical triangle area by the angle-excess formula.
pub fn spherical_area(a: &UnitVec3, b: &UnitVec3, c: &UnitVec3) -> f64 {
    let num = dot3(a.as_array(), cross(b.as_array(), c.as_array()));
    let den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * num.atan2(den).abs()
}

/// Fibonacci lattice of `count` points.
pub fn fibonacci_points(count: usize) -> Vec<UnitVec3> {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden);
            UnitVec3::normalized(r * phi.cos(), r * phi.sin(), z).unwrap()
        })
        .collect()
}

/// Background spacing estimate for a lattice of `count` points.
pub fn background_spacing(count: usize) -> f64 {
    (4.0 * std::f64::consts::PI / count as f64).sqrt()
}

/// Build the graded mesh for a configuration with a Fibonacci background.
pub fn build_mesh(config: &Configuration, params: &MeshParams) -> Result<SphericalMesh, MeshError> {
    let mut background = fibonacci_points(params.background_count);
    // deterministic jitter breaks cospherical quadruples in the lattice
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_a11);
    for p in background.iter_mut() {
        let (e1, e2) = crate::geometry::tangent_frame(p);
        let dx = rng.gen_range(-1.0..1.0) * 1e-7;
        let dy = rng.gen_range(-1.0..1.0) * 1e-7;
        *p = p.exp_map(add3(scale(e1, dx), scale(e2, dy)));
    }
    build_mesh_with_background(config, background, params)
}

/// Same as `build_mesh` with caller-provided background points (used for
/// equivariance checks; the caller owns any jitter).
pub fn build_mesh_with_background(
    config: &Configuration,
    background: Vec<UnitVec3>,
    params: &MeshParams,
) -> Result<SphericalMesh, MeshError> {
    let h_bg = background_spacing(background.len().max(1));
    let drop_tol = 0.35 * h_bg;
    let mut points: Vec<UnitVec3> = Vec::with_capacity(background.len() + config.len());
    let mut flagged = Vec::with_capacity(config.len());
    for p in config.points() {
        flagged.push(points.len());
        points.push(*p);
    }
    for b in background {
        let close = config
            .points()
            .iter()
            .any(|p| geodesic_distance(p, &b) < drop_tol);
        if !close {
            points.push(b);
        }
    }
    if points.len() < 4 {
        return Err(MeshError::TooFewPoints(points.len()));
    }
    let mut tris = None;
    for seed in [11u64, 12, 13] {
        match convex_hull(&points, seed) {
            Ok(t) => {
                tris = Some(t);
                break;
            }
            Err(e) => {
                if seed == 13 {
                    return Err(MeshError::HullFailed(e));
                }
            }
        }
    }
    let mut triangles = tris.unwrap();
    let mut vertices = points;

    refine(
        &mut vertices,
        &mut triangles,
        config,
        params.grade_depth,
        params.grade_radius,
    )?;

    finalize(vertices, triangles, flagged, config)
}

fn chord(a: &UnitVec3, b: &UnitVec3) -> f64 {
    norm(sub3(a.as_array(), b.as_array()))
}

/// Graded longest-edge bisection: round k targets edges below
/// h0 * 2^{-(k+1)} within distance grade_radius * 2^{-k} of the
/// configuration.
fn refine(
    vertices: &mut Vec<UnitVec3>,
    triangles: &mut Vec<[usize; 3]>,
    config: &Configuration,
    depth: usize,
    radius: f64,
) -> Result<(), MeshError> {
    if depth == 0 || config.is_empty() {
        return Ok(());
    }
    // median edge length of the initial mesh
    let mut lens: Vec<f64> = Vec::new();
    for t in triangles.iter() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if a < b {
                lens.push(chord(&vertices[a], &vertices[b]));
            }
        }
    }
    lens.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let h0 = lens[lens.len() / 2];

    let mut dist: Vec<f64> = vertices
        .iter()
        .map(|v| {
            config
                .points()
                .iter()
                .map(|p| geodesic_distance(v, p))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    // live triangle store with edge -> triangle ids map
    let mut alive: Vec<bool> = vec![true; triangles.len()];
    let mut edge_map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    for (ti, t) in triangles.iter().enumerate() {
        for k in 0..3 {
            edge_map.entry(key(t[k], t[(k + 1) % 3])).or_default().push(ti);
        }
    }

    let longest_edge = |t: &[usize; 3], vs: &[UnitVec3]| -> (usize, usize, f64) {
        let mut best = (t[0], t[1], chord(&vs[t[0]], &vs[t[1]]));
        for &(a, b) in &[(t[1], t[2]), (t[2], t[0])] {
            let l = chord(&vs[a], &vs[b]);
            // deterministic tie break on index pair
            if l > best.2 + 1e-15 || (l > best.2 - 1e-15 && key(a, b) < key(best.0, best.1)) {
                best = (a, b, l);
            }
        }
        best
    };

    let mut budget: i64 = 60_000_000;
    for round in 0..depth {
        let r_k = radius * 0.5f64.powi(round as i32);
        let target = h0 * 0.5f64.powi(round as i32 + 1);
        loop {
            let mut work: Vec<usize> = Vec::new();
            for (ti, t) in triangles.iter().enumerate() {
                if !alive[ti] {
                    continue;
                }
                let near = t.iter().any(|&v| dist[v] <= r_k);
                if !near {
                    continue;
                }
                let (_, _, l) = longest_edge(t, vertices);
                if l > target {
                    work.push(ti);
                }
            }
            if work.is_empty() {
                break;
            }
            for ti in work {
                if !alive[ti] {
                    continue;
                }
                // LEPP: walk to a mutually-longest pair, split, repeat until
                // the original triangle is gone.
                let mut guard = 0;
                while alive[ti] {
                    guard += 1;
                    budget -= 1;
                    if guard > 100_000 || budget < 0 {
                        return Err(MeshError::RefinementStalled);
                    }
                    let mut cur = ti;
                    loop {
                        let (a, b, _) = longest_edge(&triangles[cur], vertices);
                        let adj = &edge_map[&key(a, b)];
                        let other = adj.iter().copied().find(|&x| x != cur && alive[x]);
                        let other = match other {
                            Some(o) => o,
                            None => break, // should not happen on a closed surface
                        };
                        let (oa, ob, _) = longest_edge(&triangles[other], vertices);
                        if key(oa, ob) == key(a, b) {
                            // mutual longest edge: split it
                            split_edge(
                                vertices,
                                triangles,
                                &mut alive,
                                &mut edge_map,
                                &mut dist,
                                config,
                                a,
                                b,
                                cur,
                                other,
                            );
                            break;
                        }
                        cur = other;
                        budget -= 1;
                        if budget < 0 {
                            return Err(MeshError::RefinementStalled);
                        }
                    }
                }
            }
        }
    }
    // compact
    let mut new_tris = Vec::with_capacity(triangles.len());
    for (ti, t) in triangles.iter().enumerate() {
        if alive[ti] {
            new_tris.push(*t);
        }
    }
    *triangles = new_tris;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn split_edge(
    vertices: &mut Vec<UnitVec3>,
    triangles: &mut Vec<[usize; 3]>,
    alive: &mut Vec<bool>,
    edge_map: &mut HashMap<(usize, usize), Vec<usize>>,
    dist: &mut Vec<f64>,
    config: &Configuration,
    a: usize,
    b: usize,
    t1: usize,
    t2: usize,
) {
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mid = add3(vertices[a].as_array(), vertices[b].as_array());
    let m = UnitVec3::normalized(mid[0], mid[1], mid[2]).unwrap();
    let mi = vertices.len();
    vertices.push(m);
    dist.push(
        config
            .points()
            .iter()
            .map(|p| geodesic_distance(&m, p))
            .fold(f64::INFINITY, f64::min),
    );
    for &t in &[t1, t2] {
        alive[t] = false;
        let tv = triangles[t];
        for k in 0..3 {
            let e = key(tv[k], tv[(k + 1) % 3]);
            if let Some(list) = edge_map.get_mut(&e) {
                list.retain(|&x| x != t);
            }
        }
        // rotate so the split edge is (tv[0], tv[1]) in traversal order
        let mut u = tv;
        for _ in 0..3 {
            if key(u[0], u[1]) == key(a, b) {
                break;
            }
            u = [u[1], u[2], u[0]];
        }
        debug_assert_eq!(key(u[0], u[1]), key(a, b));
        for half in [[u[0], mi, u[2]], [mi, u[1], u[2]]] {
            let nt = triangles.len();
            triangles.push(half);
            alive.push(true);
            for k in 0..3 {
                edge_map
                    .entry(key(half[k], half[(k + 1) % 3]))
                    .or_default()
                    .push(nt);
            }
        }
    }
    edge_map.remove(&key(a, b));
}

/// Rebuild a mesh with identical combinatorics over smoothly moved vertices.
///
/// Each configuration point's displacement is realized as a rotation of its
/// whole neighborhood, blended to the identity with a smooth radial cutoff.
/// The plateau moves the graded core rigidly, so the discretization error is
/// differentiable along the displacement; only geometric quantities
/// (weights, areas, distances) change.
pub fn morph_flagged(
    mesh: &SphericalMesh,
    config_old: &Configuration,
    config_new: &Configuration,
) -> Result<SphericalMesh, MeshError> {
    use crate::geometry::{rotation_about, rotate_unit};
    let mut vertices = mesh.vertices.clone();
    let blend_radius = (0.45 * config_old.min_separation()).min(0.45);
    for (k, (p_old, p_new)) in config_old
        .points()
        .iter()
        .zip(config_new.points())
        .enumerate()
    {
        let axis_raw = p_old.cross(p_new);
        let s = norm(axis_raw);
        let angle = s.atan2(p_old.dot(p_new));
        if angle == 0.0 {
            continue;
        }
        let axis = scale(axis_raw, 1.0 / s.max(1e-300));
        let _ = k;
        for (vi, v) in vertices.iter_mut().enumerate() {
            let d = geodesic_distance(&mesh.vertices[vi], p_old);
            if d >= blend_radius {
                continue;
            }
            // plateau (chi = 1) on the inner quarter of the blend radius
            let w = crate::fields::chi(d / blend_radius);
            if w == 0.0 {
                continue;
            }
            let rot = rotation_about(axis, angle * w);
            *v = rotate_unit(&rot, v);
        }
    }
    finalize(vertices, mesh.triangles.clone(), mesh.flagged.clone(), config_new)
}

/// Rebuild a mesh from raw parts (import and cache paths).
pub fn mesh_from_parts(
    vertices: Vec<UnitVec3>,
    triangles: Vec<[usize; 3]>,
    flagged: Vec<usize>,
    config: &Configuration,
) -> Result<SphericalMesh, MeshError> {
    finalize(vertices, triangles, flagged, config)
}

fn finalize(
    vertices: Vec<UnitVec3>,
    triangles: Vec<[usize; 3]>,
    flagged: Vec<usize>,
    config: &Configuration,
) -> Result<SphericalMesh, MeshError> {
    let nv = vertices.len();
    let mut edge_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges: Vec<MeshEdge> = Vec::new();
    let mut tri_area = vec![0.0; triangles.len()];
    let mut vertex_area = vec![0.0; nv];
    let mut vertex_tris: Vec<Vec<usize>> = vec![Vec::new(); nv];
    let mut min_angle = f64::INFINITY;

    for (ti, t) in triangles.iter().enumerate() {
        let [a, b, c] = *t;
        let area = spherical_area(&vertices[a], &vertices[b], &vertices[c]);
        tri_area[ti] = area;
        for &v in t {
            vertex_area[v] += area / 3.0;
            vertex_tris[v].push(ti);
        }
        // flat corner angles for quality and cotangent weights
        let pa = vertices[a].as_array();
        let pb = vertices[b].as_array();
        let pc = vertices[c].as_array();
        let corners = [(pa, pb, pc), (pb, pc, pa), (pc, pa, pb)];
        for (p, q, r) in corners {
            let u = sub3(q, p);
            let v = sub3(r, p);
            let cosang = dot3(u, v) / (norm(u) * norm(v));
            let ang = cosang.clamp(-1.0, 1.0).acos();
            min_angle = min_angle.min(ang);
        }
        for k in 0..3 {
            let (u, v) = (t[k], t[(k + 1) % 3]);
            let e = (u.min(v), u.max(v));
            let id = *edge_of.entry(e).or_insert_with(|| {
                edges.push(MeshEdge {
                    a: e.0,
                    b: e.1,
                    tris: [usize::MAX; 2],
                    cot_weight: 0.0,
                    length: geodesic_distance(&vertices[e.0], &vertices[e.1]),
                });
                edges.len() - 1
            });
            let slot = if edges[id].tris[0] == usize::MAX { 0 } else { 1 };
            edges[id].tris[slot] = ti;
        }
    }
    // cotangent weights
    let mut negative = 0usize;
    for e in edges.iter_mut() {
        if e.tris[1] == usize::MAX {
            return Err(MeshError::HullFailed(format!(
                "edge ({},{}) has a single triangle",
                e.a, e.b
            )));
        }
        let mut w = 0.0;
        for &ti in &e.tris {
            let t = triangles[ti];
            let opp = *t.iter().find(|&&v| v != e.a && v != e.b).unwrap();
            let u = sub3(vertices[e.a].as_array(), vertices[opp].as_array());
            let v = sub3(vertices[e.b].as_array(), vertices[opp].as_array());
            let cot = dot3(u, v) / norm(cross(u, v)).max(1e-300);
            w += 0.5 * cot;
        }
        e.cot_weight = w;
        if w < 0.0 {
            negative += 1;
        }
    }
    let mut lens: Vec<f64> = edges.iter().map(|e| e.length).collect();
    lens.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let quality = MeshQuality {
        min_angle_deg: min_angle.to_degrees(),
        median_edge: lens[lens.len() / 2],
        min_edge: lens[0],
        negative_weight_fraction: negative as f64 / edges.len().max(1) as f64,
    };
    if quality.min_angle_deg < 5.0 {
        return Err(MeshError::MeshDegenerate { min_angle_deg: quality.min_angle_deg });
    }
    let mut is_flagged = vec![false; nv];
    for &f in &flagged {
        is_flagged[f] = true;
    }
    let vertex_config_dist: Vec<f64> = vertices
        .iter()
        .map(|v| {
            config
                .points()
                .iter()
                .map(|p| geodesic_distance(v, p))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let locator = Locator::build(&vertices, &triangles);
    Ok(SphericalMesh {
        vertices,
        triangles,
        flagged,
        is_flagged,
        edges,
        edge_of,
        vertex_area,
        tri_area,
        vertex_config_dist,
        vertex_tris,
        quality,
        locator,
    })
}

impl SphericalMesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices() as i64 - self.num_edges() as i64 + self.num_triangles() as i64
    }

    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_of.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn total_area(&self) -> f64 {
        self.tri_area.iter().sum()
    }

    /// Neighbor vertices of `v` (unsorted, without duplicates).
    pub fn vertex_neighbors(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for &ti in &self.vertex_tris[v] {
            for &u in &self.triangles[ti] {
                if u != v && !out.contains(&u) {
                    out.push(u);
                }
            }
        }
        out
    }

    /// Oriented link of vertex `v`: cycle of (neighbor, neighbor) edges
    /// opposite to `v`, one per incident triangle.
    pub fn vertex_link_edges(&self, v: usize) -> Vec<(usize, usize)> {
        self.vertex_tris[v]
            .iter()
            .map(|&ti| {
                let t = self.triangles[ti];
                let others: Vec<usize> = t.iter().copied().filter(|&u| u != v).collect();
                (others[0], others[1])
            })
            .collect()
    }

    /// Gradient of the linear interpolant with corner values on triangle t.
    pub fn element_gradient(&self, ti: usize, values: [f64; 3]) -> [f64; 3] {
        let t = self.triangles[ti];
        let p = [
            self.vertices[t[0]].as_array(),
            self.vertices[t[1]].as_array(),
            self.vertices[t[2]].as_array(),
        ];
        let n = cross(sub3(p[1], p[0]), sub3(p[2], p[0]));
        let two_area = norm(n);
        let nhat = scale(n, 1.0 / two_area.max(1e-300));
        let mut g = [0.0; 3];
        // grad(lambda_k) = nhat x (opposite edge) / (2 area)
        for k in 0..3 {
            let e = sub3(p[(k + 2) % 3], p[(k + 1) % 3]);
            let gl = scale(cross(nhat, e), 1.0 / two_area);
            g = add3(g, scale(gl, values[k]));
        }
        g
    }

    pub fn tri_centroid(&self, ti: usize) -> UnitVec3 {
        let t = self.triangles[ti];
        let s = add3(
            add3(
                self.vertices[t[0]].as_array(),
                self.vertices[t[1]].as_array(),
            ),
            self.vertices[t[2]].as_array(),
        );
        UnitVec3::normalized(s[0], s[1], s[2]).unwrap()
    }

    /// Locate the triangle containing direction `q`.
    pub fn locate(&self, q: &UnitVec3) -> Option<usize> {
        self.locator.locate(&self.vertices, &self.triangles, q)
    }

    /// Index of the mesh vertex nearest to `q` (linear scan fallback only in
    /// tests; uses the locator's triangle first).
    pub fn nearest_vertex(&self, q: &UnitVec3) -> usize {
        if let Some(ti) = self.locate(q) {
            let t = self.triangles[ti];
            return *t
                .iter()
                .min_by(|&&a, &&b| {
                    geodesic_distance(&self.vertices[a], q)
                        .partial_cmp(&geodesic_distance(&self.vertices[b], q))
                        .unwrap()
                })
                .unwrap();
        }
        (0..self.num_vertices())
            .min_by(|&a, &b| {
                geodesic_distance(&self.vertices[a], q)
                    .partial_cmp(&geodesic_distance(&self.vertices[b], q))
                    .unwrap()
            })
            .unwrap()
    }
}

/// Latitude-longitude bucket index over triangles.
#[derive(Debug, Clone)]
struct Locator {
    nlat: usize,
    nlon: usize,
    buckets: Vec<Vec<u32>>,
}

impl Locator {
    fn build(vertices: &[UnitVec3], triangles: &[[usize; 3]]) -> Self {
        let n = (triangles.len() as f64).sqrt().ceil() as usize;
        let nlat = (n / 2).clamp(8, 512);
        let nlon = n.clamp(8, 1024);
        let mut buckets = vec![Vec::new(); nlat * nlon];
        for (ti, t) in triangles.iter().enumerate() {
            let (lo_lat, hi_lat, lo_lon, hi_lon) =
                Self::tri_range(vertices, t, nlat, nlon);
            for la in lo_lat..=hi_lat {
                let mut lo = lo_lon as isize;
                let mut hi = hi_lon as isize;
                if hi - lo > nlon as isize / 2 {
                    // wrapped triangle: cover the whole ring (rare)
                    lo = 0;
                    hi = nlon as isize - 1;
                }
                for lon in lo..=hi {
                    let lon = ((lon % nlon as isize) + nlon as isize) as usize % nlon;
                    buckets[la * nlon + lon].push(ti as u32);
                }
            }
        }
        Self { nlat, nlon, buckets }
    }

    fn tri_range(
        vertices: &[UnitVec3],
        t: &[usize; 3],
        nlat: usize,
        nlon: usize,
    ) -> (usize, usize, usize, usize) {
        let mut lo_lat = usize::MAX;
        let mut hi_lat = 0;
        let mut lons = Vec::with_capacity(3);
        for &v in t {
            let (la, lo) = Self::cell_of(&vertices[v], nlat, nlon);
            lo_lat = lo_lat.min(la);
            hi_lat = hi_lat.max(la);
            lons.push(lo);
        }
        // pad by one cell
        let lo_lat = lo_lat.saturating_sub(1);
        let hi_lat = (hi_lat + 1).min(nlat - 1);
        lons.sort_unstable();
        let (mut lo_lon, mut hi_lon) = (lons[0], lons[2]);
        if hi_lon - lo_lon > nlon / 2 {
            // likely wraps the seam; expanded later in build
            lo_lon = 0;
            hi_lon = nlon - 1;
            return (lo_lat, hi_lat, lo_lon, hi_lon);
        }
        (lo_lat, hi_lat, lo_lon.saturating_sub(1), (hi_lon + 1).min(nlon - 1))
    }

    fn cell_of(p: &UnitVec3, nlat: usize, nlon: usize) -> (usize, usize) {
        let lat = p.z.clamp(-1.0, 1.0).acos(); // [0, pi]
        let lon = p.y.atan2(p.x) + std::f64::consts::PI; // [0, 2pi]
        let la = ((lat / std::f64::consts::PI) * nlat as f64) as usize;
        let lo = ((lon / (2.0 * std::f64::consts::PI)) * nlon as f64) as usize;
        (la.min(nlat - 1), lo.min(nlon - 1))
    }

    fn locate(
        &self,
        vertices: &[UnitVec3],
        triangles: &[[usize; 3]],
        q: &UnitVec3,
    ) -> Option<usize> {
        let (la, lo) = Self::cell_of(q, self.nlat, self.nlon);
        let inside = |ti: usize| -> bool {
            let t = triangles[ti];
            let tol = -1e-12;
            for k in 0..3 {
                let a = vertices[t[k]].as_array();
                let b = vertices[t[(k + 1) % 3]].as_array();
                if dot3(q.as_array(), cross(a, b)) < tol {
                    return false;
                }
            }
            true
        };
        for &ti in &self.buckets[la * self.nlon + lo] {
            if inside(ti as usize) {
                return Some(ti as usize);
            }
        }
        // neighborhood search, then full fallback
        for dla in -1i64..=1 {
            for dlo in -1i64..=1 {
                let la2 = (la as i64 + dla).clamp(0, self.nlat as i64 - 1) as usize;
                let lo2 = (((lo as i64 + dlo) % self.nlon as i64 + self.nlon as i64)
                    % self.nlon as i64) as usize;
                for &ti in &self.buckets[la2 * self.nlon + lo2] {
                    if inside(ti as usize) {
                        return Some(ti as usize);
                    }
                }
            }
        }
        (0..triangles.len()).find(|&ti| inside(ti))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_configuration;

    fn antipodal() -> Configuration {
        make_configuration(vec![UnitVec3::north(), UnitVec3::south()]).unwrap()
    }

    #[test]
    fn unrefined_mesh_counts_and_euler() {
        let params = MeshParams { background_count: 1000, grade_depth: 0, grade_radius: 0.4 };
        let mesh = build_mesh(&antipodal(), &params).unwrap();
        assert_eq!(mesh.num_vertices(), 1002);
        assert_eq!(mesh.euler_characteristic(), 2);
        assert_eq!(mesh.flagged.len(), 2);
        assert!(mesh.quality.min_angle_deg >= 5.0);
    }

    #[test]
    fn total_area_matches_sphere() {
        let params = MeshParams { background_count: 2000, grade_depth: 0, grade_radius: 0.4 };
        let mesh = build_mesh(&antipodal(), &params).unwrap();
        let area = mesh.total_area();
        let sphere = 4.0 * std::f64::consts::PI;
        assert!(
            (area - sphere).abs() / sphere < 1e-10,
            "spherical areas tile exactly: {area}"
        );
    }

    #[test]
    fn graded_refinement_shrinks_local_edges() {
        let coarse = MeshParams { background_count: 1500, grade_depth: 0, grade_radius: 0.4 };
        let mesh0 = build_mesh(&antipodal(), &coarse).unwrap();
        let mut counts = vec![mesh0.num_vertices()];
        let mut local_min = Vec::new();
        for depth in [2usize, 4] {
            let params = MeshParams { background_count: 1500, grade_depth: depth, grade_radius: 0.4 };
            let mesh = build_mesh(&antipodal(), &params).unwrap();
            counts.push(mesh.num_vertices());
            let near_min = mesh
                .edges
                .iter()
                .filter(|e| {
                    mesh.vertex_config_dist[e.a].min(mesh.vertex_config_dist[e.b]) < 0.05
                })
                .map(|e| e.length)
                .fold(f64::INFINITY, f64::min);
            local_min.push(near_min);
            assert_eq!(mesh.euler_characteristic(), 2);
            assert!(mesh.quality.min_angle_deg >= 5.0);
        }
        assert!(counts[1] > counts[0] && counts[2] > counts[1], "{counts:?}");
        let init_local = mesh0
            .edges
            .iter()
            .filter(|e| mesh0.vertex_config_dist[e.a].min(mesh0.vertex_config_dist[e.b]) < 0.05)
            .map(|e| e.length)
            .fold(f64::INFINITY, f64::min);
        assert!(
            local_min[1] <= init_local / 16.0 * 1.01,
            "depth-4 local edge {} vs initial {}",
            local_min[1],
            init_local
        );
    }

    #[test]
    fn tetrahedron_points_flagged() {
        let s = 1.0 / 3f64.sqrt();
        let config = make_configuration(vec![
            UnitVec3::normalized(s, s, s).unwrap(),
            UnitVec3::normalized(s, -s, -s).unwrap(),
            UnitVec3::normalized(-s, s, -s).unwrap(),
            UnitVec3::normalized(-s, -s, s).unwrap(),
        ])
        .unwrap();
        let params = MeshParams { background_count: 800, grade_depth: 1, grade_radius: 0.3 };
        let mesh = build_mesh(&config, &params).unwrap();
        assert_eq!(mesh.flagged.len(), 4);
        for (k, &f) in mesh.flagged.iter().enumerate() {
            assert!(mesh.is_flagged[f]);
            assert_eq!(
                geodesic_distance(&mesh.vertices[f], &config.points()[k]),
                0.0
            );
        }
    }

    #[test]
    fn locator_finds_containing_triangle() {
        use rand::SeedableRng;
        let params = MeshParams { background_count: 900, grade_depth: 2, grade_radius: 0.3 };
        let mesh = build_mesh(&antipodal(), &params).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let q = crate::geometry::tests_random_point(&mut rng);
            let ti = mesh.locate(&q).expect("point must be inside some triangle");
            let t = mesh.triangles[ti];
            for k in 0..3 {
                let a = mesh.vertices[t[k]].as_array();
                let b = mesh.vertices[t[(k + 1) % 3]].as_array();
                assert!(dot3(q.as_array(), cross(a, b)) > -1e-9);
            }
        }
    }

    #[test]
    fn element_gradient_of_linear_function() {
        let params = MeshParams { background_count: 600, grade_depth: 0, grade_radius: 0.4 };
        let mesh = build_mesh(&antipodal(), &params).unwrap();
        // f = z restricted to a triangle: gradient along the triangle plane
        for ti in [3usize, 77, 300] {
            let t = mesh.triangles[ti];
            let vals = [
                mesh.vertices[t[0]].z,
                mesh.vertices[t[1]].z,
                mesh.vertices[t[2]].z,
            ];
            let g = mesh.element_gradient(ti, vals);
            // check: g . (p_b - p_a) = f_b - f_a for all corner pairs
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                let d = sub3(
                    mesh.vertices[t[j]].as_array(),
                    mesh.vertices[t[i]].as_array(),
                );
                assert!((dot3(g, d) - (vals[j] - vals[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_configuration_untwisted_control() {
        let config = make_configuration(vec![]).unwrap();
        let params = MeshParams { background_count: 600, grade_depth: 0, grade_radius: 0.4 };
        let mesh = build_mesh(&config, &params).unwrap();
        assert_eq!(mesh.flagged.len(), 0);
        assert_eq!(mesh.euler_characteristic(), 2);
    }
}
