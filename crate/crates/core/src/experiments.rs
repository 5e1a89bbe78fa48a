//! Configuration-space studies: exact two-point spectra, spectral flow,
//! gradient ascent of the lowest eigenvalue, packing configurations,
//! coalescence, and the pair-insertion identity.

use crate::asymptotics::{self, FitParams};
use crate::cuts::{build_cut_system, edge_signs, CutSystem, SignCochain};
use crate::eigensolver::{lowest_eigenpairs, EigenPair, SolverOptions};
use crate::geometry::{
    add3, dot3, geodesic_distance, make_configuration, norm, scale, sub3, tangent_frame,
    Configuration, UnitVec3,
};
use crate::mesh::{background_spacing, MeshParams, SphericalMesh};
use crate::nodal::{arc_path_between, extract_zero_graph, NodalParams};
use crate::operators::{assemble, TwistedOperators};
use crate::variation::{gradient_from_branch, solve_configuration, Solved, VariationError};
use rand::Rng;
use rand::SeedableRng;
use serde::Serialize;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("no nodal arc connects the inserted pair")]
    NoConnectingArc,
    #[error(transparent)]
    Variation(#[from] VariationError),
    #[error(transparent)]
    Fit(#[from] asymptotics::FitError),
    #[error(transparent)]
    Nodal(#[from] crate::nodal::NodalError),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error(transparent)]
    Cut(#[from] crate::cuts::CutError),
    #[error(transparent)]
    Solve(#[from] crate::eigensolver::SolveError),
    #[error("geometry error: {0}")]
    Geometry(String),
}

/// Exact spectrum entries (value, multiplicity).
#[derive(Debug, Clone, Serialize)]
pub struct C2ExactSpectrum {
    pub entries: Vec<(f64, usize)>,
}

/// Antipodal two-point spectrum: value m^2 - 1/4 with multiplicity 2m.
pub fn c2_antipodal_spectrum(m_max: usize) -> C2ExactSpectrum {
    assert!(m_max >= 1);
    C2ExactSpectrum {
        entries: (1..=m_max)
            .map(|m| ((m * m) as f64 - 0.25, 2 * m))
            .collect(),
    }
}

/// Coincident-limit spectrum: value m(m+1) with multiplicity 2m+1.
pub fn c2_coincident_spectrum(m_max: usize) -> C2ExactSpectrum {
    C2ExactSpectrum {
        entries: (0..=m_max)
            .map(|m| ((m * (m + 1)) as f64, 2 * m + 1))
            .collect(),
    }
}

impl C2ExactSpectrum {
    /// Values repeated by multiplicity, ascending.
    pub fn flattened(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for &(v, m) in &self.entries {
            out.extend(std::iter::repeat(v).take(m));
        }
        out
    }
}

/// Frame fixing the axis and longitude origin of the two-point closed forms.
#[derive(Debug, Clone, Copy)]
pub struct AxisFrame {
    pub axis: UnitVec3,
    pub e1: [f64; 3],
    pub e2: [f64; 3],
}

impl AxisFrame {
    pub fn for_axis(axis: UnitVec3) -> Self {
        let (e1, e2) = tangent_frame(&axis);
        Self { axis, e1, e2 }
    }

    pub fn colatitude(&self, x: &UnitVec3) -> f64 {
        geodesic_distance(&self.axis, x)
    }

    pub fn longitude(&self, x: &UnitVec3) -> f64 {
        let xa = x.as_array();
        dot3(xa, self.e2).atan2(dot3(xa, self.e1))
    }
}

/// Closed-form antipodal eigensection with eigenvalue m^2 - 1/4:
/// (sin theta)^{m-1/2} sin((m-1/2)(phi - alpha)), branch cut at phi = alpha.
pub fn c2_eigensection(m: usize, alpha: f64, frame: &AxisFrame, x: &UnitVec3) -> f64 {
    assert!(m >= 1);
    let theta = frame.colatitude(x);
    let phi = frame.longitude(x);
    let s = m as f64 - 0.5;
    let u = wrap_pos(phi - alpha);
    theta.sin().max(0.0).powf(s) * (s * u).sin()
}

/// Mass normalization constant: integral of the squared section.
pub fn c2_norm_sq(m: usize) -> f64 {
    // pi * int_0^pi sin^{2m} theta dtheta
    let mut int = std::f64::consts::PI / 2.0; // m = 1
    for k in 2..=m {
        int *= (2.0 * k as f64 - 1.0) / (2.0 * k as f64);
    }
    std::f64::consts::PI * int
}

fn wrap_pos(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x % two_pi;
    if y <= 0.0 {
        y += two_pi;
    }
    y
}

/// Sample a closed-form axis section into the discrete gauge of a sign
/// cochain, with optional exclusion holes (vertices where `keep` is zero
/// take value zero and block the gauge spread).
pub fn sample_axis_section(
    mesh: &SphericalMesh,
    signs: &SignCochain,
    frame: &AxisFrame,
    m: usize,
    alpha: f64,
    weight: &dyn Fn(&UnitVec3) -> f64,
) -> Vec<f64> {
    let nv = mesh.num_vertices();
    // analytic branch transport: -1 across the phi = alpha meridian
    let t_flip = |u: usize, v: usize| -> bool {
        let pu = wrap_pos(frame.longitude(&mesh.vertices[u]) - alpha);
        let pv = wrap_pos(frame.longitude(&mesh.vertices[v]) - alpha);
        (pu - pv).abs() > std::f64::consts::PI
    };
    let wvals: Vec<f64> = (0..nv).map(|v| weight(&mesh.vertices[v])).collect();
    // root: max weighted |f|
    let fvals: Vec<f64> = (0..nv)
        .map(|v| c2_eigensection(m, alpha, frame, &mesh.vertices[v]))
        .collect();
    let root = (0..nv)
        .max_by(|&a, &b| {
            let fa = (fvals[a] * wvals[a]).abs();
            let fb = (fvals[b] * wvals[b]).abs();
            fa.total_cmp(&fb).then(b.cmp(&a))
        })
        .unwrap();
    let mut sign = vec![0i8; nv];
    sign[root] = 1;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(root);
    while let Some(u) = queue.pop_front() {
        for v in mesh.vertex_neighbors(u) {
            if sign[v] != 0 || wvals[v] == 0.0 {
                continue;
            }
            let e = mesh.edge_id(u, v).unwrap();
            let mut s = sign[u] * signs.sigma[e];
            if t_flip(u, v) {
                s = -s;
            }
            sign[v] = s;
            queue.push_back(v);
        }
    }
    (0..nv)
        .map(|v| sign[v] as f64 * wvals[v] * fvals[v])
        .collect()
}

/// Restrict full-vertex values to the free index set of `ops`.
pub fn restrict_to_free(ops: &TwistedOperators, all: &[f64]) -> Vec<f64> {
    ops.vertex_of_free.iter().map(|&v| all[v]).collect()
}

/// Overlap of two sections living on different meshes of nearby
/// configurations, compared away from both cut systems.
///
/// Each section is gauge-spread over the complement of a band around the cut
/// paths (where both bundles are canonically identified), the first section
/// is interpolated onto the second mesh, and the masked mass inner product
/// is returned, normalized and absolute.
pub struct TransferContext<'a> {
    pub mesh: &'a SphericalMesh,
    pub cut: &'a CutSystem,
    pub ops: &'a TwistedOperators,
}

pub fn transfer_overlap(
    from: &TransferContext,
    f_from: &[f64],
    to: &TransferContext,
    f_to: &[f64],
    band: f64,
) -> f64 {
    let all_from = from.ops.expand(f_from);
    let all_to = to.ops.expand(f_to);
    let path_pts_from: Vec<UnitVec3> = from
        .cut
        .paths
        .iter()
        .flat_map(|p| p.vertices.iter().map(|&v| from.mesh.vertices[v]))
        .collect();
    let path_pts_to: Vec<UnitVec3> = to
        .cut
        .paths
        .iter()
        .flat_map(|p| p.vertices.iter().map(|&v| to.mesh.vertices[v]))
        .collect();
    let masked = |x: &UnitVec3| -> bool {
        path_pts_from
            .iter()
            .chain(&path_pts_to)
            .any(|p| geodesic_distance(p, x) < band)
    };
    let gauge = |mesh: &SphericalMesh, cut: &CutSystem, all: &[f64]| -> Vec<f64> {
        let crossing: HashSet<usize> = cut
            .paths
            .iter()
            .flat_map(|p| p.crossing_edges.iter().copied())
            .collect();
        let region: HashSet<usize> = (0..mesh.num_vertices())
            .filter(|&v| !masked(&mesh.vertices[v]))
            .collect();
        let root = region
            .iter()
            .copied()
            .max_by(|&a, &b| {
                all[a].abs().total_cmp(&all[b].abs()).then(b.cmp(&a))
            })
            .expect("unmasked region nonempty");
        let sgn = crate::cuts::spread_signs(mesh, &crossing, &HashSet::new(), root, Some(&region));
        (0..mesh.num_vertices())
            .map(|v| sgn[v] as f64 * all[v])
            .collect()
    };
    let g_from = gauge(from.mesh, from.cut, &all_from);
    let g_to = gauge(to.mesh, to.cut, &all_to);
    let mut dot_acc = 0.0;
    let mut n_from = 0.0;
    let mut n_to = 0.0;
    for v in 0..to.mesh.num_vertices() {
        if g_to[v] == 0.0 && all_to[v] != 0.0 {
            continue; // unreached gauge
        }
        let x = &to.mesh.vertices[v];
        if masked(x) {
            continue;
        }
        let Some(ti) = from.mesh.locate(x) else { continue };
        let t = from.mesh.triangles[ti];
        if t.iter().any(|&u| g_from[u] == 0.0 && all_from[u] != 0.0) {
            continue;
        }
        // barycentric interpolation on the located triangle
        let vals = [g_from[t[0]], g_from[t[1]], g_from[t[2]]];
        let interp = barycentric_interp(from.mesh, ti, x, vals);
        let w = to.mesh.vertex_area[v];
        dot_acc += w * interp * g_to[v];
        n_from += w * interp * interp;
        n_to += w * g_to[v] * g_to[v];
    }
    if n_from <= 0.0 || n_to <= 0.0 {
        return 0.0;
    }
    (dot_acc / (n_from.sqrt() * n_to.sqrt())).abs()
}

fn barycentric_interp(mesh: &SphericalMesh, ti: usize, x: &UnitVec3, vals: [f64; 3]) -> f64 {
    let t = mesh.triangles[ti];
    let p = [
        mesh.vertices[t[0]].as_array(),
        mesh.vertices[t[1]].as_array(),
        mesh.vertices[t[2]].as_array(),
    ];
    // gnomonic barycentric weights: areas of sub-triangles with x
    let w0 = norm(crate::geometry::cross(sub3(p[1], x.as_array()), sub3(p[2], x.as_array())));
    let w1 = norm(crate::geometry::cross(sub3(p[2], x.as_array()), sub3(p[0], x.as_array())));
    let w2 = norm(crate::geometry::cross(sub3(p[0], x.as_array()), sub3(p[1], x.as_array())));
    let s = w0 + w1 + w2;
    (w0 * vals[0] + w1 * vals[1] + w2 * vals[2]) / s.max(1e-300)
}

/// Mesh parameters adapted to the smallest pair separation.
pub fn params_for_separation(sep: f64, background: usize) -> MeshParams {
    let h0 = background_spacing(background);
    let mut depth = 2usize;
    while h0 * 0.5f64.powi(depth as i32) > sep / 6.0 && depth < 9 {
        depth += 1;
    }
    MeshParams { background_count: background, grade_depth: depth, grade_radius: 0.4 }
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowStep {
    pub points: Vec<[f64; 3]>,
    pub lambda: f64,
    pub gap: f64,
    pub grad_norm: f64,
    pub multiplicity: usize,
    pub step_size: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub enum FlowTermination {
    MultiplicityReached,
    GradientConverged,
    MaxIterations,
    LineSearchStalled,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowTrajectory {
    pub steps: Vec<FlowStep>,
    pub termination: FlowTermination,
}

#[derive(Debug, Clone, Copy)]
pub struct FlowParams {
    pub step: f64,
    pub max_iters: usize,
    pub mult_tol: f64,
    pub grad_tol: f64,
    pub background: usize,
    pub grade_depth: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            step: 0.05,
            max_iters: 60,
            mult_tol: 0.02,
            grad_tol: 1e-3,
            background: 3000,
            grade_depth: 3,
        }
    }
}

/// Retracted gradient ascent of the lowest eigenvalue.
pub fn flow_ascent(
    config0: &Configuration,
    params: &FlowParams,
    opts: &SolverOptions,
) -> Result<FlowTrajectory, ExperimentError> {
    let mut config = config0.clone();
    let mut steps: Vec<FlowStep> = Vec::new();
    let fit = FitParams::default();
    let mesh_params = MeshParams {
        background_count: params.background,
        grade_depth: params.grade_depth,
        grade_radius: 0.35,
    };
    let mut termination = FlowTermination::MaxIterations;
    for _ in 0..params.max_iters {
        let s = solve_configuration(&config, &mesh_params, 3, opts)?;
        let lam = s.pairs[0].eigenvalue;
        let gap = (s.pairs[1].eigenvalue - lam) / lam.abs().max(1.0);
        let multiplicity = if gap < params.mult_tol { 2 } else { 1 };
        if multiplicity > 1 {
            steps.push(FlowStep {
                points: config.points().iter().map(|p| p.as_array()).collect(),
                lambda: lam,
                gap,
                grad_norm: f64::NAN,
                multiplicity,
                step_size: 0.0,
            });
            termination = FlowTermination::MultiplicityReached;
            break;
        }
        let branch =
            asymptotics::extract_all(&s.pairs[0].section, &s.ops, &config, &s.mesh, &s.cut, &fit)?;
        let grad = gradient_from_branch(&branch);
        let gnorm = grad.norm();
        if gnorm < params.grad_tol {
            steps.push(FlowStep {
                points: config.points().iter().map(|p| p.as_array()).collect(),
                lambda: lam,
                gap,
                grad_norm: gnorm,
                multiplicity,
                step_size: 0.0,
            });
            termination = FlowTermination::GradientConverged;
            break;
        }
        let dir = grad.to_tangent(&config).scaled(1.0 / gnorm);
        // backtracking line search on the lowest eigenvalue
        let mut accepted: Option<(Configuration, f64, f64)> = None;
        let mut t = params.step;
        for _ in 0..6 {
            let cand = crate::geometry::displace_configuration(&config, &dir, t)
                .map_err(|e| ExperimentError::Geometry(e.to_string()))?;
            match solve_configuration(&cand, &mesh_params, 1, opts) {
                Ok(cs) => {
                    let cand_lam = cs.pairs[0].eigenvalue;
                    if cand_lam >= lam - 1e-8 {
                        accepted = Some((cand, cand_lam, t));
                        break;
                    }
                }
                Err(_) => {}
            }
            t *= 0.5;
        }
        steps.push(FlowStep {
            points: config.points().iter().map(|p| p.as_array()).collect(),
            lambda: lam,
            gap,
            grad_norm: gnorm,
            multiplicity,
            step_size: accepted.as_ref().map(|a| a.2).unwrap_or(0.0),
        });
        match accepted {
            Some((cand, _, _)) => {
                config = cand;
            }
            None => {
                termination = FlowTermination::LineSearchStalled;
                break;
            }
        }
    }
    Ok(FlowTrajectory { steps, termination })
}

/// Greedy maximal R-separated point set doubled into pairs at distance R/8.
pub fn packing_config(r_sep: f64) -> (Configuration, usize) {
    assert!((0.1..=1.5).contains(&r_sep), "R out of the supported range");
    let candidates = crate::mesh::fibonacci_points((40.0 / (r_sep * r_sep)) as usize + 20);
    let mut centers: Vec<UnitVec3> = Vec::new();
    for c in candidates {
        if centers.iter().all(|q| geodesic_distance(q, &c) >= r_sep) {
            centers.push(c);
        }
    }
    let mut points = Vec::with_capacity(centers.len() * 2);
    for q in &centers {
        let (e1, _) = tangent_frame(q);
        points.push(q.exp_map(scale(e1, r_sep / 16.0)));
        points.push(q.exp_map(scale(e1, -r_sep / 16.0)));
    }
    let count = centers.len();
    (make_configuration(points).expect("packing points distinct"), count)
}

#[derive(Debug, Clone, Serialize)]
pub struct PackingRow {
    pub r_sep: f64,
    pub centers: usize,
    pub num_points: usize,
    pub lambda1: f64,
    pub lambda_r_sq: f64,
    pub lambda_per_pair: f64,
}

/// Lowest eigenvalue across packing configurations.
pub fn packing_eigenvalue_study(
    r_list: &[f64],
    background: usize,
    opts: &SolverOptions,
) -> Result<Vec<PackingRow>, ExperimentError> {
    let mut rows = Vec::new();
    for &r_sep in r_list {
        let (config, centers) = packing_config(r_sep);
        let pair_sep = r_sep / 8.0;
        let mut params = params_for_separation(pair_sep, background);
        params.grade_radius = (r_sep / 3.0).min(0.4);
        let s = solve_configuration(&config, &params, 1, opts)?;
        let lambda1 = s.pairs[0].eigenvalue;
        rows.push(PackingRow {
            r_sep,
            centers,
            num_points: config.len(),
            lambda1,
            lambda_r_sq: lambda1 * r_sep * r_sep,
            lambda_per_pair: lambda1 / (config.n_pairs() as f64),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralFlowStep {
    pub separation: f64,
    pub tracked: Vec<f64>,
    pub swaps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralFlowResult {
    pub steps: Vec<SpectralFlowStep>,
    /// Values at the first step (largest separation).
    pub start_values: Vec<f64>,
    /// Values at the last step (smallest separation).
    pub end_values: Vec<f64>,
}

/// Track the lowest branches of the two-point problem from large to small
/// separation along a fixed great circle.
pub fn spectral_flow_c2(
    separations: &[f64],
    tracked_count: usize,
    background: usize,
    opts: &SolverOptions,
) -> Result<SpectralFlowResult, ExperimentError> {
    assert!(tracked_count >= 2);
    let solve_at = |sep: f64| -> Result<Solved, ExperimentError> {
        let half = sep / 2.0;
        let p1 = UnitVec3::normalized(half.sin(), 0.0, half.cos()).unwrap();
        let p2 = UnitVec3::normalized(-half.sin(), 0.0, half.cos()).unwrap();
        let config = make_configuration(vec![p1, p2])
            .map_err(|e| ExperimentError::Geometry(e.to_string()))?;
        let params = params_for_separation(sep.min(2.0), background);
        Ok(solve_configuration(&config, &params, tracked_count + 2, opts)?)
    };
    let mut steps: Vec<SpectralFlowStep> = Vec::new();
    let mut prev: Option<Solved> = None;
    let mut order: Vec<usize> = (0..tracked_count).collect(); // branch -> index in prev solve
    for &sep in separations {
        let cur = solve_at(sep)?;
        let band = 0.12f64.max(2.0 * background_spacing(background));
        let (tracked, swaps, new_order) = match &prev {
            None => ((0..tracked_count).map(|i| cur.pairs[i].eigenvalue).collect(), 0, (0..tracked_count).collect()),
            Some(p) => {
                let from_ctx = TransferContext { mesh: &p.mesh, cut: &p.cut, ops: &p.ops };
                let to_ctx = TransferContext { mesh: &cur.mesh, cut: &cur.cut, ops: &cur.ops };
                let mut tracked = Vec::with_capacity(tracked_count);
                let mut new_order = Vec::with_capacity(tracked_count);
                let mut swaps = 0;
                let mut taken = vec![false; cur.pairs.len()];
                for b in 0..tracked_count {
                    let prev_idx = order[b];
                    let mut best = (usize::MAX, 0.0f64);
                    for (j, cand) in cur.pairs.iter().enumerate() {
                        if taken[j] {
                            continue;
                        }
                        let ov = transfer_overlap(
                            &from_ctx,
                            &p.pairs[prev_idx].section,
                            &to_ctx,
                            &cand.section,
                            band,
                        );
                        if ov > best.1 {
                            best = (j, ov);
                        }
                    }
                    if best.0 == usize::MAX {
                        best = (b.min(cur.pairs.len() - 1), 0.0);
                    }
                    if best.1 < 0.7 {
                        swaps += 1;
                    }
                    taken[best.0] = true;
                    new_order.push(best.0);
                    tracked.push(cur.pairs[best.0].eigenvalue);
                }
                (tracked, swaps, new_order)
            }
        };
        steps.push(SpectralFlowStep { separation: sep, tracked: tracked.clone(), swaps });
        order = new_order;
        prev = Some(cur);
    }
    let start_values = steps.first().map(|s| s.tracked.clone()).unwrap_or_default();
    let end_values = steps.last().map(|s| s.tracked.clone()).unwrap_or_default();
    Ok(SpectralFlowResult { steps, start_values, end_values })
}

/// Geometric ladder of separations from `from` down to `to`.
pub fn separation_ladder(from: f64, to: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && from > to && to > 0.0);
    (0..count)
        .map(|i| from * (to / from).powf(i as f64 / (count - 1) as f64))
        .collect()
}

/// A base solve together with the same-mesh restriction used to compare a
/// configuration against the same configuration plus an inserted pair.
pub struct InsertionSolve {
    pub solved: Solved,
    /// Lowest eigenpairs of the base bundle assembled on the same mesh.
    pub base_ops: TwistedOperators,
    pub base_cut: CutSystem,
    pub base_signs: SignCochain,
    pub base_pairs: Vec<EigenPair>,
}

/// Solve base + pair at `x` with separation `s`, and the base problem on the
/// same mesh (the pair's vertices stay unpinned and untwisted there).
pub fn insertion_solve(
    base: &Configuration,
    x: &UnitVec3,
    s: f64,
    background: usize,
    k: usize,
    base_k: usize,
    opts: &SolverOptions,
) -> Result<InsertionSolve, ExperimentError> {
    insertion_solve_graded(base, x, s, background, k, base_k, 0, opts)
}

/// `insertion_solve` with extra rounds of graded refinement near the pair.
#[allow(clippy::too_many_arguments)]
pub fn insertion_solve_graded(
    base: &Configuration,
    x: &UnitVec3,
    s: f64,
    background: usize,
    k: usize,
    base_k: usize,
    extra_depth: usize,
    opts: &SolverOptions,
) -> Result<InsertionSolve, ExperimentError> {
    let (e1, _) = tangent_frame(x);
    let q_plus = x.exp_map(scale(e1, s / 2.0));
    let q_minus = x.exp_map(scale(e1, -s / 2.0));
    let mut pts = base.points().to_vec();
    pts.push(q_plus);
    pts.push(q_minus);
    let config = make_configuration(pts).map_err(|e| ExperimentError::Geometry(e.to_string()))?;
    let mut params = params_for_separation(s, background);
    params.grade_depth = (params.grade_depth + extra_depth).min(9);
    let solved = solve_configuration(&config, &params, k, opts)?;
    // base view of the same mesh: only the base points flagged
    let mut base_mesh = solved.mesh.clone();
    base_mesh.flagged.truncate(base.len());
    base_mesh.is_flagged = vec![false; base_mesh.num_vertices()];
    for &f in &base_mesh.flagged {
        base_mesh.is_flagged[f] = true;
    }
    let base_cut = build_cut_system(base, &base_mesh)?;
    let base_signs = edge_signs(&base_cut, &base_mesh)?;
    let base_ops = assemble(&base_mesh, &base_signs);
    let base_pairs = lowest_eigenpairs(&base_ops, base_k, opts)?;
    Ok(InsertionSolve { solved, base_ops, base_cut, base_signs, base_pairs })
}

#[derive(Debug, Clone, Serialize)]
pub struct CoalescenceRow {
    pub separation: f64,
    pub lambda_inserted: f64,
    /// Base lowest eigenvalue on the same mesh.
    pub lambda_base_same_mesh: f64,
    /// Base lowest eigenvalue on its own mesh (reference).
    pub lambda_base_reference: f64,
    /// Rayleigh quotient of the cutoff closed-form base section transferred
    /// into the inserted bundle (an upper bound for lambda_inserted).
    pub transfer_rayleigh: f64,
}

/// Coalescence study for the antipodal base: insert a pair at the equator
/// point of maximal base amplitude and shrink its separation.
pub fn coalesce_study_antipodal(
    separations: &[f64],
    background: usize,
    opts: &SolverOptions,
) -> Result<Vec<CoalescenceRow>, ExperimentError> {
    let base = make_configuration(vec![UnitVec3::north(), UnitVec3::south()])
        .map_err(|e| ExperimentError::Geometry(e.to_string()))?;
    let frame = AxisFrame::for_axis(UnitVec3::north());
    // base section with branch meridian at alpha = 0; max |f| at phi = pi
    let alpha = 0.0;
    let x = UnitVec3::normalized(-1.0, 0.0, 0.0).unwrap();
    // reference base eigenvalue on its own mesh
    let base_params = MeshParams { background_count: background, grade_depth: 4, grade_radius: 0.3 };
    let base_solved = solve_configuration(&base, &base_params, 1, opts)?;
    let lambda_base_reference = base_solved.pairs[0].eigenvalue;

    let mut rows = Vec::new();
    for &s in separations {
        let ins = insertion_solve(&base, &x, s, background, 1, 1, opts)?;
        let lambda_inserted = ins.solved.pairs[0].eigenvalue;
        let lambda_base_same_mesh = ins.base_pairs[0].eigenvalue;
        // transferred cutoff section: the inserted bundle's gauge, zero near
        // the pair (log cutoff on the distance to the pair)
        // hole radius 100 eps = 2.5 s covers both points jointly; capped so
        // the logarithmic transition band stays well formed at large s
        let eps = (s / 40.0).min(3.5e-3);
        let pair_pts = [
            ins.solved.config.points()[2],
            ins.solved.config.points()[3],
        ];
        let cutoff = |v: &UnitVec3| -> f64 {
            let d = pair_pts
                .iter()
                .map(|p| geodesic_distance(p, v))
                .fold(f64::INFINITY, f64::min);
            crate::fields::log_cutoff(d, eps)
        };
        let all = sample_axis_section(
            &ins.solved.mesh,
            &ins.solved.signs,
            &frame,
            1,
            alpha,
            &cutoff,
        );
        let free = restrict_to_free(&ins.solved.ops, &all);
        let transfer_rayleigh = ins.solved.ops.rayleigh(&free).unwrap_or(f64::NAN);
        rows.push(CoalescenceRow {
            separation: s,
            lambda_inserted,
            lambda_base_same_mesh,
            lambda_base_reference,
            transfer_rayleigh,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct PairIdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub product_integral: f64,
    pub lambda_inserted: f64,
    pub lambda_base: f64,
    /// Gauge-spread consistency violations (diagnostic; small counts sit on
    /// the sealed bridge and carry negligible weight).
    pub gauge_tears: usize,
    pub mesh_vertices: usize,
}

/// Pair-insertion identity: (E_p - E_q) int f_q f_p against the nodal-arc
/// boundary integral, with the product trivialized from the point of maximal
/// product amplitude and the arc joining the inserted pair as the cut.
pub fn pair_identity_check(
    base: &Configuration,
    x: &UnitVec3,
    s_sep: f64,
    background: usize,
    opts: &SolverOptions,
) -> Result<PairIdentityCheck, ExperimentError> {
    // the one-sided normal differences along the short arc are dominated by
    // the square-root ends, so grade well below the pair separation
    let ins = insertion_solve_graded(base, x, s_sep, background, 1, 2, 4, opts)?;
    let solved = &ins.solved;
    let f_p = &solved.pairs[0];
    let lambda_inserted = f_p.eigenvalue;
    let all_p = solved.ops.expand(&f_p.section);

    // Nodal arc joining the inserted pair (configuration indices 2n, 2n+1).
    // The junction at the insertion point is an avoided crossing in linear
    // interpolation: when no direct path exists, splice the two branch arcs
    // at their closest approach (the true zero set has an even-degree node
    // there, and the spliced polyline tracks it to interpolation accuracy).
    let pair_idx = (base.len(), base.len() + 1);
    let graph = extract_zero_graph(
        &f_p.section,
        &solved.ops,
        &solved.mesh,
        &solved.signs,
        &NodalParams { strict: false, ..NodalParams::default() },
    )?;
    // collect nodal segments near the pair and connect the two branch
    // points through a proximity graph on segment endpoints (the linear
    // interpolant fragments the junction into near-touching pieces)
    let x_mid = {
        let a = solved.config.points()[pair_idx.0];
        let b = solved.config.points()[pair_idx.1];
        let m = add3(a.as_array(), b.as_array());
        UnitVec3::normalized(m[0], m[1], m[2]).map_err(|e| ExperimentError::Geometry(e.to_string()))?
    };
    let near: Vec<crate::nodal::Segment> = graph
        .arcs
        .iter()
        .flat_map(|a| a.segments.iter().copied())
        .filter(|sg| {
            let m = scale(add3(sg.a, sg.b), 0.5);
            let mu = UnitVec3::normalized(m[0], m[1], m[2]).unwrap();
            geodesic_distance(&mu, &x_mid) < 1.5 * s_sep
        })
        .collect();
    let (sigma_segments, bridges) =
        connect_pair_through_segments(&solved.mesh, &near, &solved.config, pair_idx, 0.12 * s_sep)
            .ok_or(ExperimentError::NoConnectingArc)?;
    let mut sigma_edges: HashSet<usize> = sigma_segments
        .iter()
        .flat_map(|sg| [sg.edge_a, sg.edge_b])
        .flatten()
        .collect();
    // seal curtain holes where a segment endpoint sits on an interior mesh
    // vertex (zero-vertex passages have no crossing edge there)
    {
        let branch_pos = [
            solved.config.points()[pair_idx.0].as_array(),
            solved.config.points()[pair_idx.1].as_array(),
        ];
        let mut hole_points: Vec<[f64; 3]> = Vec::new();
        for (sg, which) in sigma_segments
            .iter()
            .flat_map(|sg| [(sg, 0usize), (sg, 1usize)])
        {
            let is_vertex_end = if which == 0 { sg.edge_a.is_none() } else { sg.edge_b.is_none() };
            if !is_vertex_end {
                continue;
            }
            let pos = if which == 0 { sg.a } else { sg.b };
            if branch_pos.iter().any(|b| norm(sub3(*b, pos)) < 1e-9) {
                continue; // branch ends are closed by their link crossings
            }
            hole_points.push(pos);
        }
        for pos in hole_points {
            let pu = UnitVec3::normalized(pos[0], pos[1], pos[2])
                .map_err(|e| ExperimentError::Geometry(e.to_string()))?;
            let vh = solved.mesh.nearest_vertex(&pu);
            for u in solved.mesh.vertex_neighbors(vh) {
                if let Some(e) = solved.mesh.edge_id(vh, u) {
                    sigma_edges.insert(e);
                }
            }
        }
    }
    // seal the gauge barrier at every proximity bridge
    for (b, gap) in &bridges {
        let bu = UnitVec3::normalized(b[0], b[1], b[2])
            .map_err(|e| ExperimentError::Geometry(e.to_string()))?;
        let near_b = solved.mesh.nearest_vertex(&bu);
        let local_h = solved
            .mesh
            .vertex_neighbors(near_b)
            .iter()
            .map(|&u| {
                let e = solved.mesh.edge_id(near_b, u).unwrap();
                solved.mesh.edges[e].length
            })
            .fold(f64::INFINITY, f64::min);
        let r_seal = (2.5 * local_h).max(1.5 * gap);
        for (eid, e) in solved.mesh.edges.iter().enumerate() {
            let da = geodesic_distance(&solved.mesh.vertices[e.a], &bu);
            let db = geodesic_distance(&solved.mesh.vertices[e.b], &bu);
            if da.min(db) < r_seal {
                sigma_edges.insert(eid);
            }
        }
    }

    // relative gauge between the two bundles on the arc complement
    let mesh = &solved.mesh;
    let rel_flip: HashSet<usize> = (0..mesh.num_edges())
        .filter(|&e| {
            (solved.signs.sigma[e] as i32) * (ins.base_signs.sigma[e] as i32) < 0
        })
        .collect();
    // root: vertex of maximal |f_p| * |base ground| product away from Sigma
    let base_all: Vec<Vec<f64>> = ins
        .base_pairs
        .iter()
        .map(|p| ins.base_ops.expand(&p.section))
        .collect();
    let root = (0..mesh.num_vertices())
        .max_by(|&a, &b| {
            let pa = (all_p[a] * base_all[0][a]).abs();
            let pb = (all_p[b] * base_all[0][b]).abs();
            pa.total_cmp(&pb).then(b.cmp(&a))
        })
        .unwrap();
    let eps_v = crate::cuts::spread_signs(mesh, &rel_flip, &sigma_edges, root, None);
    let mut gauge_tears = 0usize;
    for (eid, e) in mesh.edges.iter().enumerate() {
        if sigma_edges.contains(&eid) || eps_v[e.a] == 0 || eps_v[e.b] == 0 {
            continue;
        }
        let expect = if rel_flip.contains(&eid) { -eps_v[e.a] } else { eps_v[e.a] };
        if expect != eps_v[e.b] {
            gauge_tears += 1;
        }
    }

    // best base combination: maximize the trivialized product integral
    let mut overlaps = Vec::new();
    for b in &base_all {
        let mut o = 0.0;
        for v in 0..mesh.num_vertices() {
            if eps_v[v] == 0 {
                continue;
            }
            o += mesh.vertex_area[v] * (eps_v[v] as f64) * b[v] * all_p[v];
        }
        overlaps.push(o);
    }
    let onorm = overlaps.iter().map(|o| o * o).sum::<f64>().sqrt();
    let coeffs: Vec<f64> = overlaps.iter().map(|o| o / onorm.max(1e-300)).collect();
    let mut q_free = vec![0.0; ins.base_ops.num_free()];
    for (c, p) in coeffs.iter().zip(&ins.base_pairs) {
        for (qf, v) in q_free.iter_mut().zip(&p.section) {
            *qf += c * v;
        }
    }
    let lambda_base = ins.base_ops.rayleigh(&q_free).unwrap();
    let all_q = ins.base_ops.expand(&q_free);

    // product integral
    let mut product_integral = 0.0;
    for v in 0..mesh.num_vertices() {
        if eps_v[v] == 0 {
            continue;
        }
        product_integral += mesh.vertex_area[v] * (eps_v[v] as f64) * all_q[v] * all_p[v];
    }
    let lhs = (lambda_inserted - lambda_base) * product_integral;

    // boundary integral along the arc
    let rhs = nodal_boundary_integral(
        mesh,
        &solved.signs,
        &ins.base_signs,
        &all_p,
        &all_q,
        &sigma_segments,
        &eps_v,
    );
    let residual = (lhs - rhs).abs() / (lhs.abs() + rhs.abs()).max(1e-300);
    Ok(PairIdentityCheck {
        lhs,
        rhs,
        residual,
        product_integral,
        lambda_inserted,
        lambda_base,
        gauge_tears,
        mesh_vertices: mesh.num_vertices(),
    })
}



/// Connect two branch points through nodal segments, joining endpoints that
/// approach within a local tolerance. Returns the chain and the bridge
/// midpoints with their gaps.
fn connect_pair_through_segments(
    mesh: &SphericalMesh,
    segments: &[crate::nodal::Segment],
    config: &Configuration,
    pair_idx: (usize, usize),
    bridge_cap: f64,
) -> Option<(Vec<crate::nodal::Segment>, Vec<([f64; 3], f64)>)> {
    let n = segments.len();
    if n == 0 {
        return None;
    }
    let p_plus = config.points()[pair_idx.0].as_array();
    let p_minus = config.points()[pair_idx.1].as_array();
    let pt = |i: usize, end: usize| -> [f64; 3] {
        if end == 0 {
            segments[i].a
        } else {
            segments[i].b
        }
    };
    let seg_len = |i: usize| norm(sub3(segments[i].a, segments[i].b));
    let mut touching_plus = Vec::new();
    let mut touching_minus = Vec::new();
    for i in 0..n {
        for e in 0..2 {
            if norm(sub3(pt(i, e), p_plus)) < 1e-9 {
                touching_plus.push(i);
            }
            if norm(sub3(pt(i, e), p_minus)) < 1e-9 {
                touching_minus.push(i);
            }
        }
    }
    let &start = touching_plus.first()?;
    let target: HashSet<usize> = touching_minus.iter().copied().collect();
    if target.is_empty() {
        return None;
    }
    // Dijkstra minimizing total bridge length (exact shared endpoints are
    // free), so the path follows the arcs and crosses one short bridge at
    // the junction rather than hopping between parallel branches
    let mut dist = vec![f64::INFINITY; n];
    let mut prev: Vec<Option<(usize, Option<([f64; 3], f64)>)>> = vec![None; n];
    let mut heap: std::collections::BinaryHeap<(std::cmp::Reverse<u64>, usize)> =
        std::collections::BinaryHeap::new();
    let key = |d: f64| std::cmp::Reverse((d * 1e12) as u64);
    dist[start] = 0.0;
    heap.push((key(0.0), start));
    while let Some((_, u)) = heap.pop() {
        for v in 0..n {
            if v == u {
                continue;
            }
            let mut best: Option<(f64, [f64; 3])> = None;
            for eu in 0..2 {
                for ev in 0..2 {
                    let d = norm(sub3(pt(u, eu), pt(v, ev)));
                    if best.map_or(true, |(bd, _)| d < bd) {
                        let mid = scale(add3(pt(u, eu), pt(v, ev)), 0.5);
                        best = Some((d, mid));
                    }
                }
            }
            let (d, mid) = best.unwrap();
            let tol = (2.0 * seg_len(u).max(seg_len(v))).max(bridge_cap);
            if d > tol {
                continue;
            }
            let (w, bridge) = if d < 1e-9 { (0.0, None) } else { (d, Some((mid, d))) };
            if dist[u] + w < dist[v] - 1e-15 {
                dist[v] = dist[u] + w;
                prev[v] = Some((u, bridge));
                heap.push((key(dist[v]), v));
            }
        }
    }
    let mut found = target
        .iter()
        .copied()
        .filter(|&t| dist[t].is_finite())
        .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))?;
    let mut chain = vec![segments[found]];
    let mut bridges = Vec::new();
    while let Some((p, bridge)) = prev[found] {
        if let Some(b) = bridge {
            bridges.push(b);
        }
        chain.push(segments[p]);
        found = p;
    }
    chain.reverse();
    let _ = mesh;
    Some((chain, bridges))
}

/// Boundary integral -2 int_Sigma (f_q dn f_p - f_p dn f_q) over the nodal
/// polyline, in the product trivialization `eps_v`, with the normal of each
/// segment pointing away from its gauge anchor corner.
pub fn nodal_boundary_integral(
    mesh: &SphericalMesh,
    signs_p: &SignCochain,
    signs_q: &SignCochain,
    all_p: &[f64],
    all_q: &[f64],
    segments: &[crate::nodal::Segment],
    eps_v: &[i8],
) -> f64 {
    let mut rhs = 0.0;
    for seg in segments {
        let t = mesh.triangles[seg.tri];
        let anchor = (0..3)
            .filter(|&k| !mesh.is_flagged[t[k]] && eps_v[t[k]] != 0)
            .min_by_key(|&k| t[k]);
        let Some(anchor) = anchor else { continue };
        let pv = trivialized_anchor_values(mesh, signs_p, all_p, seg.tri, anchor);
        let qv = trivialized_anchor_values(mesh, signs_q, all_q, seg.tri, anchor);
        let gp = mesh.element_gradient(seg.tri, pv);
        let gq = mesh.element_gradient(seg.tri, qv);
        let mid = scale(add3(seg.a, seg.b), 0.5);
        let mid_n = norm(mid);
        let mid = scale(mid, 1.0 / mid_n);
        let fq_mid = interp_at(mesh, seg.tri, mid, qv);
        let fp_mid = interp_at(mesh, seg.tri, mid, pv);
        let tangent = sub3(seg.b, seg.a);
        let len = norm(tangent);
        if len == 0.0 {
            continue;
        }
        let tri_n = triangle_normal(mesh, seg.tri);
        let mut n_hat = crate::geometry::cross(tri_n, scale(tangent, 1.0 / len));
        let to_anchor = sub3(mesh.vertices[t[anchor]].as_array(), mid);
        if dot3(n_hat, to_anchor) > 0.0 {
            n_hat = scale(n_hat, -1.0);
        }
        let eps_a = eps_v[t[anchor]] as f64;
        rhs += -2.0 * len * eps_a * (fq_mid * dot3(gp, n_hat) - fp_mid * dot3(gq, n_hat));
    }
    rhs
}

fn triangle_normal(mesh: &SphericalMesh, ti: usize) -> [f64; 3] {
    let t = mesh.triangles[ti];
    let n = crate::geometry::cross(
        sub3(mesh.vertices[t[1]].as_array(), mesh.vertices[t[0]].as_array()),
        sub3(mesh.vertices[t[2]].as_array(), mesh.vertices[t[0]].as_array()),
    );
    scale(n, 1.0 / norm(n).max(1e-300))
}

/// Trivialized corner values anchored at a chosen corner slot.
fn trivialized_anchor_values(
    mesh: &SphericalMesh,
    signs: &SignCochain,
    all: &[f64],
    ti: usize,
    anchor: usize,
) -> [f64; 3] {
    let t = mesh.triangles[ti];
    let mut out = [0.0; 3];
    out[anchor] = all[t[anchor]];
    for k in 0..3 {
        if k == anchor {
            continue;
        }
        if mesh.is_flagged[t[k]] {
            out[k] = 0.0;
            continue;
        }
        let e = mesh.edge_id(t[anchor], t[k]).unwrap();
        out[k] = signs.of_edge(e) * all[t[k]];
    }
    out
}

fn interp_at(mesh: &SphericalMesh, ti: usize, x: [f64; 3], vals: [f64; 3]) -> f64 {
    let u = UnitVec3::normalized(x[0], x[1], x[2]).unwrap();
    barycentric_interp(mesh, ti, &u, vals)
}

/// Seeded random configuration of n pairs with a minimum separation.
pub fn random_configuration(n_pairs: usize, min_sep: f64, seed: u64) -> Configuration {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut pts: Vec<UnitVec3> = Vec::with_capacity(2 * n_pairs);
        let mut tries = 0;
        while pts.len() < 2 * n_pairs && tries < 4000 {
            tries += 1;
            let v = [
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let nn = norm(v);
            if nn < 1e-3 || nn > 1.0 {
                continue;
            }
            let cand = UnitVec3::normalized(v[0], v[1], v[2]).unwrap();
            if pts.iter().all(|p| geodesic_distance(p, &cand) >= min_sep) {
                pts.push(cand);
            }
        }
        if pts.len() == 2 * n_pairs {
            return make_configuration(pts).expect("separated points are distinct");
        }
    }
}
