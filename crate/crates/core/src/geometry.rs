//! Points on the unit sphere, configurations of branch points, tangent data
//! and stereographic charts.
//!
//! Everything here is pure and immutable after construction. Distances are
//! geodesic (radians), computed with `atan2` so that antipodal and nearly
//! coincident pairs are handled without cancellation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two points closer than this (radians) are considered coincident.
pub const DUPLICATE_TOL: f64 = 1e-6;
/// Unit-norm enforcement tolerance for constructors.
pub const UNIT_TOL: f64 = 1e-12;
/// Unit-norm tolerance when loading external JSON (renormalized on load).
pub const LOAD_UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("configuration must have an even number of points, got {0}")]
    OddCount(usize),
    #[error("points {0} and {1} are closer than {DUPLICATE_TOL} rad")]
    DuplicatePoint(usize, usize),
    #[error("vector has norm {0}, not a unit vector")]
    NotUnit(f64),
    #[error("bump supports of matching field collide (min separation {min_sep}, band {band})")]
    SupportCollision { min_sep: f64, band: f64 },
}

/// A point of the unit sphere. Invariant: |v| = 1 within `UNIT_TOL`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitVec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitVec3 {
    /// Build from raw components, rejecting vectors away from the sphere.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = (x * x + y * y + z * z).sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(GeometryError::NotUnit(n));
        }
        Ok(Self { x, y, z })
    }

    /// Normalize an arbitrary nonzero vector onto the sphere.
    pub fn normalized(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = (x * x + y * y + z * z).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(GeometryError::NotUnit(n));
        }
        Ok(Self { x: x / n, y: y / n, z: z / n })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, o: &UnitVec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &UnitVec3) -> [f64; 3] {
        cross(self.as_array(), o.as_array())
    }

    pub fn north() -> Self {
        Self { x: 0.0, y: 0.0, z: 1.0 }
    }

    pub fn south() -> Self {
        Self { x: 0.0, y: 0.0, z: -1.0 }
    }

    pub fn antipode(&self) -> Self {
        Self { x: -self.x, y: -self.y, z: -self.z }
    }

    /// Geodesic exponential map: walk distance |v| along tangent v.
    /// `v` must be tangent at self; a zero v returns self.
    pub fn exp_map(&self, v: [f64; 3]) -> UnitVec3 {
        let t = norm(v);
        if t == 0.0 {
            return *self;
        }
        let d = [v[0] / t, v[1] / t, v[2] / t];
        let (c, s) = (t.cos(), t.sin());
        UnitVec3::normalized(
            c * self.x + s * d[0],
            c * self.y + s * d[1],
            c * self.z + s * d[2],
        )
        .expect("exp_map stays on the sphere")
    }
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

pub fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Arc distance in [0, pi], stable at both ends of the range.
pub fn geodesic_distance(a: &UnitVec3, b: &UnitVec3) -> f64 {
    let c = norm(a.cross(b));
    let d = a.dot(b);
    c.atan2(d)
}

/// An even set of distinct branch points.
///
/// The empty configuration is the untwisted control (plain Laplacian on the
/// sphere); it is permitted everywhere a configuration is consumed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Configuration {
    points: Vec<UnitVec3>,
    min_separation: f64,
}

impl Configuration {
    pub fn points(&self) -> &[UnitVec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of point pairs (the `n` of a 2n-point configuration).
    pub fn n_pairs(&self) -> usize {
        self.points.len() / 2
    }

    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }
}

/// Validate and package a list of points as a configuration.
pub fn make_configuration(points: Vec<UnitVec3>) -> Result<Configuration, GeometryError> {
    if points.len() % 2 != 0 {
        return Err(GeometryError::OddCount(points.len()));
    }
    for p in &points {
        let n = norm(p.as_array());
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(GeometryError::NotUnit(n));
        }
    }
    let mut min_sep = std::f64::consts::PI;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = geodesic_distance(&points[i], &points[j]);
            if d < DUPLICATE_TOL {
                return Err(GeometryError::DuplicatePoint(i, j));
            }
            min_sep = min_sep.min(d);
        }
    }
    Ok(Configuration { points, min_separation: min_sep })
}

/// Parse the external `{"points": [[x,y,z],...]}` form, renormalizing inputs
/// that are within `LOAD_UNIT_TOL` of the sphere.
pub fn configuration_from_json(text: &str) -> Result<Configuration, String> {
    #[derive(Deserialize)]
    struct Doc {
        points: Vec<[f64; 3]>,
    }
    let doc: Doc = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let mut pts = Vec::with_capacity(doc.points.len());
    for (i, p) in doc.points.iter().enumerate() {
        let n = norm(*p);
        if (n - 1.0).abs() > LOAD_UNIT_TOL {
            return Err(format!("point {i} has norm {n}, beyond load tolerance"));
        }
        pts.push(UnitVec3::normalized(p[0], p[1], p[2]).map_err(|e| e.to_string())?);
    }
    make_configuration(pts).map_err(|e| e.to_string())
}

pub fn configuration_to_json(config: &Configuration) -> String {
    let arrays: Vec<[f64; 3]> = config.points().iter().map(|p| p.as_array()).collect();
    serde_json::to_string_pretty(&serde_json::json!({ "points": arrays })).unwrap()
}

/// One tangent vector per configuration point; each orthogonal to its base.
#[derive(Debug, Clone)]
pub struct ConfigTangent {
    vectors: Vec<[f64; 3]>,
}

impl ConfigTangent {
    pub fn new(config: &Configuration, vectors: Vec<[f64; 3]>) -> Result<Self, GeometryError> {
        assert_eq!(vectors.len(), config.len(), "one tangent vector per point");
        for (p, v) in config.points().iter().zip(&vectors) {
            if dot3(p.as_array(), *v).abs() > UNIT_TOL * (1.0 + norm(*v)) {
                return Err(GeometryError::NotUnit(dot3(p.as_array(), *v)));
            }
        }
        Ok(Self { vectors })
    }

    pub fn zero(config: &Configuration) -> Self {
        Self { vectors: vec![[0.0; 3]; config.len()] }
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    pub fn norm(&self) -> f64 {
        self.vectors.iter().map(|v| dot3(*v, *v)).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { vectors: self.vectors.iter().map(|v| scale(*v, s)).collect() }
    }

    /// Project arbitrary per-point vectors onto the tangent planes.
    pub fn projected(config: &Configuration, raw: Vec<[f64; 3]>) -> Self {
        let vectors = config
            .points()
            .iter()
            .zip(raw)
            .map(|(p, v)| {
                let r = dot3(p.as_array(), v);
                sub3(v, scale(p.as_array(), r))
            })
            .collect();
        Self { vectors }
    }
}

/// Move every configuration point along its tangent vector by `t`.
pub fn displace_configuration(
    config: &Configuration,
    nu: &ConfigTangent,
    t: f64,
) -> Result<Configuration, GeometryError> {
    let pts = config
        .points()
        .iter()
        .zip(nu.vectors())
        .map(|(p, v)| p.exp_map(scale(*v, t)))
        .collect();
    make_configuration(pts)
}

/// Deterministic orthonormal tangent frame at `p`.
///
/// Gram-Schmidt against the coordinate axis with the smallest |component|
/// (lowest index on ties), second leg chosen so (e1, e2, p) is right-handed.
pub fn tangent_frame(p: &UnitVec3) -> ([f64; 3], [f64; 3]) {
    let comps = [p.x.abs(), p.y.abs(), p.z.abs()];
    let mut axis = 0;
    for a in 1..3 {
        if comps[a] < comps[axis] {
            axis = a;
        }
    }
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let d = dot3(e, p.as_array());
    let raw = sub3(e, scale(p.as_array(), d));
    let e1 = scale(raw, 1.0 / norm(raw));
    let e2 = cross(p.as_array(), e1);
    (e1, e2)
}

/// Scaled stereographic chart at `p`, projecting from the antipode.
///
/// z = 2 tan(theta/2) e^{i phi} in the frame at p, so z(p) = 0 and the
/// metric scale factor |dz| is exactly 1 at p. The round metric in the chart
/// is (1 + |z|^2/4)^{-2} |dz|^2.
#[derive(Debug, Clone)]
pub struct StereoChart {
    pub base: UnitVec3,
    pub e1: [f64; 3],
    pub e2: [f64; 3],
}

impl StereoChart {
    /// Map a sphere point (not the antipode of the base) to the plane.
    pub fn project(&self, q: &UnitVec3) -> (f64, f64) {
        let c = self.base.dot(q);
        let qa = q.as_array();
        let u = dot3(qa, self.e1);
        let v = dot3(qa, self.e2);
        // 2 tan(theta/2) = 2 sin(theta) / (1 + cos(theta)); (u,v) already
        // carries sin(theta) * direction.
        let f = 2.0 / (1.0 + c);
        (f * u, f * v)
    }

    /// Inverse of `project`.
    pub fn unproject(&self, z: (f64, f64)) -> UnitVec3 {
        let r2 = z.0 * z.0 + z.1 * z.1;
        let denom = 1.0 + r2 / 4.0;
        let c = (1.0 - r2 / 4.0) / denom;
        let s = 1.0 / denom;
        let mut out = scale(self.base.as_array(), c);
        out = add3(out, scale(self.e1, s * z.0));
        out = add3(out, scale(self.e2, s * z.1));
        UnitVec3::normalized(out[0], out[1], out[2]).expect("unproject stays on the sphere")
    }

    /// Conformal factor of the round metric at chart point z.
    pub fn metric_factor(&self, z: (f64, f64)) -> f64 {
        let r2 = z.0 * z.0 + z.1 * z.1;
        1.0 / (1.0 + r2 / 4.0)
    }

    /// Angle coordinate of q in the frame, in (-pi, pi].
    pub fn angle(&self, q: &UnitVec3) -> f64 {
        let qa = q.as_array();
        dot3(qa, self.e2).atan2(dot3(qa, self.e1))
    }
}

pub fn stereo_chart(p: &UnitVec3) -> StereoChart {
    let (e1, e2) = tangent_frame(p);
    StereoChart { base: *p, e1, e2 }
}

/// Values at `p` of the three rotation generator fields about the coordinate
/// axes.
pub fn rotation_fields(p: &UnitVec3) -> [[f64; 3]; 3] {
    [
        [0.0, -p.z, p.y],
        [p.z, 0.0, -p.x],
        [-p.y, p.x, 0.0],
    ]
}

/// Rotation generator field about axis `a` evaluated at an arbitrary point.
pub fn rotation_field_at(a: usize, p: [f64; 3]) -> [f64; 3] {
    match a {
        0 => [0.0, -p[2], p[1]],
        1 => [p[2], 0.0, -p[0]],
        2 => [-p[1], p[0], 0.0],
        _ => panic!("axis index out of range"),
    }
}

/// Rotation matrix taking `from` to `to` along the short great circle.
pub fn rotation_between(from: &UnitVec3, to: &UnitVec3) -> [[f64; 3]; 3] {
    let axis = from.cross(to);
    let s = norm(axis);
    let c = from.dot(to);
    if s < 1e-14 {
        if c > 0.0 {
            return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        }
        // Antipodal: rotate by pi about any axis orthogonal to `from`.
        let (e1, _) = tangent_frame(from);
        return rotation_about(e1, std::f64::consts::PI);
    }
    let k = scale(axis, 1.0 / s);
    rotation_about_cs(k, c, s)
}

pub fn rotation_about(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    rotation_about_cs(axis, angle.cos(), angle.sin())
}

fn rotation_about_cs(k: [f64; 3], c: f64, s: f64) -> [[f64; 3]; 3] {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let eps = levi_civita(i, j);
            r[i][j] = c * ((i == j) as u8 as f64) + (1.0 - c) * k[i] * k[j] - s * eps_dot(eps, k);
        }
    }
    r
}

fn levi_civita(i: usize, j: usize) -> [f64; 3] {
    // Row of the epsilon tensor: eps[i][j][k] as a vector in k.
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        if i == j || j == k || i == k {
            continue;
        }
        let perm = [i, j, k];
        *o = if perm == [0, 1, 2] || perm == [1, 2, 0] || perm == [2, 0, 1] {
            1.0
        } else {
            -1.0
        };
    }
    out
}

fn eps_dot(eps: [f64; 3], k: [f64; 3]) -> f64 {
    dot3(eps, k)
}

pub fn apply_rotation(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

pub fn rotate_unit(r: &[[f64; 3]; 3], p: &UnitVec3) -> UnitVec3 {
    let v = apply_rotation(r, p.as_array());
    UnitVec3::normalized(v[0], v[1], v[2]).expect("rotation preserves the sphere")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn uv(x: f64, y: f64, z: f64) -> UnitVec3 {
        UnitVec3::normalized(x, y, z).unwrap()
    }

    #[test]
    fn antipodal_pair_configuration() {
        let c = make_configuration(vec![UnitVec3::north(), UnitVec3::south()]).unwrap();
        assert!((c.min_separation() - PI).abs() < 1e-14);
    }

    #[test]
    fn coincident_points_rejected() {
        let e = make_configuration(vec![UnitVec3::north(), UnitVec3::north()]).unwrap_err();
        assert_eq!(e, GeometryError::DuplicatePoint(0, 1));
    }

    #[test]
    fn odd_count_rejected() {
        let e = make_configuration(vec![UnitVec3::north()]).unwrap_err();
        assert_eq!(e, GeometryError::OddCount(1));
    }

    #[test]
    fn tetrahedron_min_separation() {
        let s = 1.0 / 3f64.sqrt();
        let pts = vec![uv(s, s, s), uv(s, -s, -s), uv(-s, s, -s), uv(-s, -s, s)];
        let c = make_configuration(pts).unwrap();
        let expected = (-1.0f64 / 3.0).acos();
        assert!((c.min_separation() - expected).abs() < 1e-12);
        assert!((expected - 1.9106).abs() < 1e-4);
    }

    #[test]
    fn geodesic_distance_basics() {
        assert!((geodesic_distance(&UnitVec3::north(), &UnitVec3::south()) - PI).abs() < 1e-15);
        assert_eq!(geodesic_distance(&UnitVec3::north(), &UnitVec3::north()), 0.0);
        let a = uv(1.0, 0.0, 0.0);
        let b = uv(0.0, 1.0, 0.0);
        assert!((geodesic_distance(&a, &b) - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn chart_base_maps_to_origin() {
        let chart = stereo_chart(&UnitVec3::north());
        let z = chart.project(&UnitVec3::north());
        assert_eq!(z, (0.0, 0.0));
    }

    #[test]
    fn chart_first_order_is_geodesic_distance() {
        let chart = stereo_chart(&UnitVec3::north());
        for &r in &[0.05f64, 0.2, 0.5] {
            let q = chart.base.exp_map(scale(chart.e1, r));
            let (zx, zy) = chart.project(&q);
            assert!(zy.abs() < 1e-13, "real ray stays real");
            assert!((zx - r).abs() < r.powi(3), "z = r + O(r^3): {zx} vs {r}");
        }
    }

    #[test]
    fn chart_metric_factor_unit_at_base() {
        // Finite-difference check of pushforward lengths at the base point.
        let chart = stereo_chart(&uv(0.3, -0.5, 0.81));
        let h = 1e-5;
        for dir in [chart.e1, chart.e2] {
            let q = chart.base.exp_map(scale(dir, h));
            let (zx, zy) = chart.project(&q);
            let len = (zx * zx + zy * zy).sqrt();
            assert!((len / h - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn chart_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let chart = stereo_chart(&uv(0.1, 0.9, 0.4));
        for _ in 0..100 {
            let q = random_point(&mut rng);
            if geodesic_distance(&q, &chart.base.antipode()) < 0.2 {
                continue;
            }
            let back = chart.unproject(chart.project(&q));
            let err = norm(sub3(back.as_array(), q.as_array()));
            assert!(err < 1e-10, "round trip error {err}");
        }
        fn random_point(rng: &mut impl Rng) -> UnitVec3 {
            loop {
                let v = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                let n = norm(v);
                if n > 1e-3 && n < 1.0 {
                    return UnitVec3::normalized(v[0], v[1], v[2]).unwrap();
                }
            }
        }
    }

    #[test]
    fn rotation_field_values() {
        let f = rotation_fields(&uv(1.0, 0.0, 0.0));
        assert_eq!(f[2], [0.0, 1.0, 0.0]);
        let f = rotation_fields(&UnitVec3::north());
        assert_eq!(f[2], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn rotation_fields_are_tangent() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = super::tests_random_point(&mut rng);
            for v in rotation_fields(&p) {
                assert!(dot3(p.as_array(), v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rotation_fields_bracket_table() {
        // [d_a, d_b] = -eps_{abc} d_c, checked with finite-difference brackets.
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..20 {
            let p = super::tests_random_point(&mut rng).as_array();
            for a in 0..3 {
                for b in 0..3 {
                    if a == b {
                        continue;
                    }
                    let mut bracket = [0.0; 3];
                    for i in 0..3 {
                        // (u . grad) v - (v . grad) u by central differences.
                        let mut du = [0.0; 3];
                        let mut dv = [0.0; 3];
                        for j in 0..3 {
                            let mut pp = p;
                            pp[j] += h;
                            let mut pm = p;
                            pm[j] -= h;
                            du[j] = (rotation_field_at(a, pp)[i] - rotation_field_at(a, pm)[i])
                                / (2.0 * h);
                            dv[j] = (rotation_field_at(b, pp)[i] - rotation_field_at(b, pm)[i])
                                / (2.0 * h);
                        }
                        bracket[i] = dot3(rotation_field_at(a, p), dv)
                            - dot3(rotation_field_at(b, p), du);
                    }
                    let c = 3 - a - b;
                    let sign = if (a + 1) % 3 == b { -1.0 } else { 1.0 };
                    let expect = scale(rotation_field_at(c, p), sign);
                    for i in 0..3 {
                        assert!(
                            (bracket[i] - expect[i]).abs() < 1e-8,
                            "bracket [{a},{b}] component {i}: {} vs {}",
                            bracket[i],
                            expect[i]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn frame_is_orthonormal_right_handed() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = super::tests_random_point(&mut rng);
            let (e1, e2) = tangent_frame(&p);
            assert!((norm(e1) - 1.0).abs() < 1e-12);
            assert!((norm(e2) - 1.0).abs() < 1e-12);
            assert!(dot3(e1, e2).abs() < 1e-12);
            assert!(dot3(e1, p.as_array()).abs() < 1e-12);
            let n = cross(e1, e2);
            assert!(norm(sub3(n, p.as_array())) < 1e-12, "right-handed frame");
        }
    }

    #[test]
    fn exp_map_distance() {
        let p = uv(0.2, 0.3, 0.93);
        let (e1, _) = tangent_frame(&p);
        let q = p.exp_map(scale(e1, 0.7));
        assert!((geodesic_distance(&p, &q) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn config_json_round_trip() {
        let c = make_configuration(vec![UnitVec3::north(), UnitVec3::south()]).unwrap();
        let text = configuration_to_json(&c);
        let back = configuration_from_json(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back.min_separation() - PI).abs() < 1e-12);
    }
}

#[cfg(test)]
pub(crate) fn tests_random_point(rng: &mut impl rand::Rng) -> UnitVec3 {
    loop {
        let v = [
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n = norm(v);
        if n > 1e-3 && n <= 1.0 {
            return UnitVec3::normalized(v[0], v[1], v[2]).unwrap();
        }
    }
}
