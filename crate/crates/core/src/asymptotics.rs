//! Branch-point asymptotics of eigensections.
//!
//! Near a configuration point an eigensection has a leading half-integer
//! expansion Re(a z^{n+1/2}) in the scaled stereographic chart. This module
//! fits that expansion from annulus samples of the discrete section, in a
//! trivialization spread from a reference vertex that never crosses the
//! point's own cut, with the half-power branch anchored to the cut direction.

use crate::cuts::{spread_signs, CutSystem};
use crate::eigensolver::EigenPair;
use crate::geometry::{dot3, Configuration, StereoChart, UnitVec3};
use crate::mesh::SphericalMesh;
use crate::operators::TwistedOperators;
use serde::Serialize;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("only {got} usable annulus samples at point {point} (need {need})")]
    InsufficientSamples { point: usize, got: usize, need: usize },
    #[error("no expansion coefficient above threshold at point {point}")]
    AmbiguousOrder { point: usize },
    #[error("branch extraction failed: {0}")]
    ExtractionFailed(String),
}

#[derive(Debug, Clone, Copy)]
pub struct FitParams {
    /// Annulus radii in radians; `None` resolves from the mesh and
    /// configuration (see `resolve_annulus`).
    pub r_in: Option<f64>,
    pub r_out: Option<f64>,
    pub max_order: usize,
    pub rel_tol: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self { r_in: None, r_out: None, max_order: 3, rel_tol: 0.1 }
    }
}

/// Fitted expansion data at one branch point.
#[derive(Debug, Clone, Serialize)]
pub struct BranchData {
    pub point_index: usize,
    pub vanishing_order: usize,
    pub coeff_re: f64,
    pub coeff_im: f64,
    pub fit_residual: f64,
    /// Chart frame carried with the coefficient.
    pub frame_e1: [f64; 3],
    pub frame_e2: [f64; 3],
    /// All fitted complex coefficients by half-power order k -> a_k.
    pub all_coeffs: Vec<(f64, f64)>,
}

impl BranchData {
    pub fn coeff(&self) -> (f64, f64) {
        (self.coeff_re, self.coeff_im)
    }

    pub fn coeff_abs(&self) -> f64 {
        (self.coeff_re * self.coeff_re + self.coeff_im * self.coeff_im).sqrt()
    }

    /// Leading (k = 0) coefficient regardless of the detected order.
    pub fn order_zero_coeff(&self) -> (f64, f64) {
        self.all_coeffs[0]
    }
}

/// Annulus radii for a point: inner 4 local edge lengths, outer bounded by
/// 0.3 of the nearest-neighbor distance and 0.2 rad.
pub fn resolve_annulus(
    mesh: &SphericalMesh,
    config: &Configuration,
    cfg_idx: usize,
    fit: &FitParams,
) -> (f64, f64) {
    let vp = mesh.flagged[cfg_idx];
    let local_h = mesh
        .vertex_neighbors(vp)
        .iter()
        .map(|&u| {
            let e = mesh.edge_id(vp, u).unwrap();
            mesh.edges[e].length
        })
        .fold(f64::INFINITY, f64::min);
    let p = &config.points()[cfg_idx];
    let nn = config
        .points()
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != cfg_idx)
        .map(|(_, q)| crate::geometry::geodesic_distance(p, q))
        .fold(f64::INFINITY, f64::min);
    let r_in = fit.r_in.unwrap_or(4.0 * local_h);
    let r_out = fit.r_out.unwrap_or((0.3 * nn).min(0.2));
    (r_in, r_out)
}

/// Trivialized annulus samples around one configuration point.
struct AnnulusSamples {
    radius: Vec<f64>,
    angle: Vec<f64>,
    value: Vec<f64>,
    weight: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn collect_samples(
    section_all: &[f64],
    config: &Configuration,
    mesh: &SphericalMesh,
    cut: &CutSystem,
    cfg_idx: usize,
    chart: &StereoChart,
    r_in: f64,
    r_out: f64,
) -> Result<AnnulusSamples, FitError> {
    let own_path = cut.path_of_point(cfg_idx);
    let own_crossing: HashSet<usize> = own_path
        .map(|p| p.crossing_edges.iter().copied().collect())
        .unwrap_or_default();
    let other_crossing: HashSet<usize> = cut
        .paths
        .iter()
        .filter(|p| p.pair.0 != cfg_idx && p.pair.1 != cfg_idx)
        .flat_map(|p| p.crossing_edges.iter().copied())
        .collect();
    let own_path_vertices: HashSet<usize> =
        own_path.map(|p| p.vertices.iter().copied().collect()).unwrap_or_default();

    // BFS region: punctured disk slightly beyond the annulus
    let p = &config.points()[cfg_idx];
    let vp = mesh.flagged[cfg_idx];
    let region_list: Vec<usize> = (0..mesh.num_vertices())
        .filter(|&v| {
            v != vp && crate::geometry::geodesic_distance(&mesh.vertices[v], p) <= r_out * 1.05
        })
        .collect();
    let region: HashSet<usize> = region_list.iter().copied().collect();

    // branch anchor: cut direction in the chart frame
    let ray = cut.ref_rays[cfg_idx];
    let theta_cut = dot3(ray, chart.e2).atan2(dot3(ray, chart.e1));
    // angular wiggle of the cut path, for the exclusion sector
    let mut wiggle = 0.05f64;
    for &u in &own_path_vertices {
        let d = crate::geometry::geodesic_distance(&mesh.vertices[u], p);
        if d > 0.2 * r_in && d < 1.3 * r_out {
            let th = chart.angle(&mesh.vertices[u]);
            let dev = wrap_pm_pi(th - theta_cut).abs();
            wiggle = wiggle.max(dev + 0.05);
        }
    }
    let wiggle = wiggle.min(0.7);

    let in_annulus = |v: usize| {
        let d = crate::geometry::geodesic_distance(&mesh.vertices[v], p);
        d >= r_in && d <= r_out
    };
    // deterministic root: annulus vertex farthest from the cut sector
    let root = region_list
        .iter()
        .copied()
        .filter(|&v| in_annulus(v) && !own_path_vertices.contains(&v))
        .max_by(|&a, &b| {
            let da = wrap_pm_pi(chart.angle(&mesh.vertices[a]) - theta_cut).abs();
            let db = wrap_pm_pi(chart.angle(&mesh.vertices[b]) - theta_cut).abs();
            da.total_cmp(&db).then(b.cmp(&a))
        })
        .ok_or(FitError::InsufficientSamples { point: cfg_idx, got: 0, need: 30 })?;

    let sign = spread_signs(mesh, &other_crossing, &own_crossing, root, Some(&region));

    let mut out = AnnulusSamples {
        radius: Vec::new(),
        angle: Vec::new(),
        value: Vec::new(),
        weight: Vec::new(),
    };
    for &v in &region_list {
        if !in_annulus(v)
            || own_path_vertices.contains(&v)
            || mesh.is_flagged[v]
            || sign[v] == 0
        {
            continue;
        }
        let th = chart.angle(&mesh.vertices[v]);
        if wrap_pm_pi(th - theta_cut).abs() < wiggle {
            continue;
        }
        let (zx, zy) = chart.project(&mesh.vertices[v]);
        let r = (zx * zx + zy * zy).sqrt();
        let cont = theta_cut + wrap_pos(th - theta_cut);
        out.radius.push(r);
        out.angle.push(cont);
        out.value.push(sign[v] as f64 * section_all[v]);
        out.weight.push(mesh.vertex_area[v].sqrt());
    }
    Ok(out)
}

fn wrap_pm_pi(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x % two_pi;
    if y > std::f64::consts::PI {
        y -= two_pi;
    }
    if y < -std::f64::consts::PI {
        y += two_pi;
    }
    y
}

fn wrap_pos(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x % two_pi;
    if y <= 0.0 {
        y += two_pi;
    }
    y
}

/// Fit the half-integer expansion of `f` at configuration point `cfg_idx`
/// in the deterministic frame chart at that point.
pub fn extract_branch_data(
    f: &[f64],
    ops: &TwistedOperators,
    config: &Configuration,
    mesh: &SphericalMesh,
    cut: &CutSystem,
    cfg_idx: usize,
    fit: &FitParams,
) -> Result<BranchData, FitError> {
    let chart = crate::geometry::stereo_chart(&config.points()[cfg_idx]);
    extract_branch_data_with_chart(f, ops, config, mesh, cut, cfg_idx, fit, &chart)
}

#[allow(clippy::too_many_arguments)]
pub fn extract_branch_data_with_chart(
    f: &[f64],
    ops: &TwistedOperators,
    config: &Configuration,
    mesh: &SphericalMesh,
    cut: &CutSystem,
    cfg_idx: usize,
    fit: &FitParams,
    chart: &StereoChart,
) -> Result<BranchData, FitError> {
    let section_all = ops.expand(f);
    extract_from_vertex_values(&section_all, config, mesh, cut, cfg_idx, fit, chart)
}

/// Core fit over full-vertex values (pinned vertices zero).
pub fn extract_from_vertex_values(
    section_all: &[f64],
    config: &Configuration,
    mesh: &SphericalMesh,
    cut: &CutSystem,
    cfg_idx: usize,
    fit: &FitParams,
    chart: &StereoChart,
) -> Result<BranchData, FitError> {
    let (r_in, r_out) = resolve_annulus(mesh, config, cfg_idx, fit);
    if r_in >= r_out {
        return Err(FitError::ExtractionFailed(format!(
            "annulus empty at point {cfg_idx}: r_in {r_in} >= r_out {r_out}"
        )));
    }
    let samples =
        collect_samples(section_all, config, mesh, cut, cfg_idx, chart, r_in, r_out)?;
    let m = samples.radius.len();
    if m < 30 {
        return Err(FitError::InsufficientSamples { point: cfg_idx, got: m, need: 30 });
    }
    let orders = fit.max_order + 1;
    let ncols = 2 * orders;
    let mut a = nalgebra::DMatrix::zeros(m, ncols);
    let mut rhs = nalgebra::DVector::zeros(m);
    let mut fnorm = 0.0;
    for i in 0..m {
        let w = samples.weight[i];
        rhs[i] = w * samples.value[i];
        fnorm += rhs[i] * rhs[i];
        for k in 0..orders {
            let pw = samples.radius[i].powf(k as f64 + 0.5);
            let ang = (k as f64 + 0.5) * samples.angle[i];
            a[(i, 2 * k)] = w * pw * ang.cos();
            a[(i, 2 * k + 1)] = w * pw * ang.sin();
        }
    }
    let fnorm = fnorm.sqrt();
    // unit-norm columns so coefficient shares compare against the data norm
    let mut col_scale = vec![0.0; ncols];
    for c in 0..ncols {
        let s = a.column(c).norm();
        col_scale[c] = if s > 0.0 { s } else { 1.0 };
        for i in 0..m {
            a[(i, c)] /= col_scale[c];
        }
    }
    let svd = nalgebra::SVD::new(a.clone(), true, true);
    let sol = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| FitError::ExtractionFailed(e.to_string()))?;
    let resid = (&a * &sol - &rhs).norm() / fnorm.max(1e-300);

    let mut all_coeffs = Vec::with_capacity(orders);
    let mut order = None;
    for k in 0..orders {
        let c_re = sol[2 * k];
        let c_im = sol[2 * k + 1];
        let share = (c_re * c_re + c_im * c_im).sqrt();
        // f = Re(a z^{k+1/2}) = Re(a) cos((k+1/2)t) - Im(a) sin((k+1/2)t)
        let raw_re = c_re / col_scale[2 * k];
        let raw_im = -c_im / col_scale[2 * k + 1];
        all_coeffs.push((raw_re, raw_im));
        if order.is_none() && share >= fit.rel_tol * fnorm {
            order = Some(k);
        }
    }
    let order = order.ok_or(FitError::AmbiguousOrder { point: cfg_idx })?;
    let (coeff_re, coeff_im) = all_coeffs[order];
    Ok(BranchData {
        point_index: cfg_idx,
        vanishing_order: order,
        coeff_re,
        coeff_im,
        fit_residual: resid,
        frame_e1: chart.e1,
        frame_e2: chart.e2,
        all_coeffs,
    })
}

/// Branch data at every configuration point.
pub fn extract_all(
    f: &[f64],
    ops: &TwistedOperators,
    config: &Configuration,
    mesh: &SphericalMesh,
    cut: &CutSystem,
    fit: &FitParams,
) -> Result<Vec<BranchData>, FitError> {
    (0..config.len())
        .map(|i| extract_branch_data(f, ops, config, mesh, cut, i, fit))
        .collect()
}

/// Vanishing orders per point and the subset with order zero.
pub fn classify_vanishing(
    f: &[f64],
    ops: &TwistedOperators,
    config: &Configuration,
    mesh: &SphericalMesh,
    cut: &CutSystem,
    fit: &FitParams,
) -> Result<(Vec<usize>, Vec<usize>), FitError> {
    let data = extract_all(f, ops, config, mesh, cut, fit)?;
    let orders: Vec<usize> = data.iter().map(|d| d.vanishing_order).collect();
    let zero_set = orders
        .iter()
        .enumerate()
        .filter(|(_, &o)| o == 0)
        .map(|(i, _)| i)
        .collect();
    Ok((orders, zero_set))
}

#[derive(Debug, Clone)]
pub struct CriticalCombination {
    /// Coefficients over the supplied cluster basis (unit Euclidean norm,
    /// hence unit mass norm for an M-orthonormal basis).
    pub coefficients: Vec<f64>,
    /// Minimum of sum_p |a_p|^2 over unit combinations.
    pub minimum: f64,
    /// Minimum relative to the cluster average of the same quadratic form.
    pub relative: f64,
    /// Per-member, per-point order-zero coefficients used to build the form.
    pub coeffs: Vec<Vec<(f64, f64)>>,
}

/// Minimize sum_p |a_p(f)|^2 over unit mass-norm combinations of a cluster.
///
/// The order-zero coefficient is linear in the section, so the minimum is
/// the smallest eigenvalue of the induced symmetric form on the cluster.
pub fn critical_combination(
    cluster: &[&EigenPair],
    ops: &TwistedOperators,
    config: &Configuration,
    mesh: &SphericalMesh,
    cut: &CutSystem,
    fit: &FitParams,
) -> Result<CriticalCombination, FitError> {
    let n = cluster.len();
    assert!(n >= 1);
    let mut coeffs: Vec<Vec<(f64, f64)>> = Vec::with_capacity(n);
    for pair in cluster {
        let data = extract_all(&pair.section, ops, config, mesh, cut, fit)?;
        coeffs.push(data.iter().map(|d| d.order_zero_coeff()).collect());
    }
    let mut h = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..config.len() {
                s += coeffs[i][p].0 * coeffs[j][p].0 + coeffs[i][p].1 * coeffs[j][p].1;
            }
            h[(i, j)] = s;
        }
    }
    let trace_avg = (0..n).map(|i| h[(i, i)]).sum::<f64>() / n as f64;
    let eig = nalgebra::SymmetricEigen::new(h);
    let mut best = 0;
    for i in 1..n {
        if eig.eigenvalues[i] < eig.eigenvalues[best] {
            best = i;
        }
    }
    let minimum = eig.eigenvalues[best].max(0.0);
    let coefficients: Vec<f64> = eig.eigenvectors.column(best).iter().copied().collect();
    Ok(CriticalCombination {
        coefficients,
        minimum,
        relative: minimum / trace_avg.max(1e-300),
        coeffs,
    })
}

/// Assemble a linear combination of cluster sections.
pub fn combine_sections(cluster: &[&EigenPair], coeffs: &[f64]) -> Vec<f64> {
    let n = cluster[0].section.len();
    let mut out = vec![0.0; n];
    for (c, pair) in coeffs.iter().zip(cluster) {
        for (o, v) in out.iter_mut().zip(&pair.section) {
            *o += c * v;
        }
    }
    out
}
