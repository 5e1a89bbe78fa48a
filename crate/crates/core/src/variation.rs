//! Eigenvalue variation over configuration space.
//!
//! For a simple eigenvalue the derivative along a configuration tangent is a
//! pairing of the branch coefficients with the tangent; for a degenerate
//! cluster the one-sided slopes are the eigenvalues of a small symmetric
//! form built from the same coefficients. Both are checked here against
//! stress-energy quadratures and central finite differences on a morphed
//! mesh (identical combinatorics, moved branch vertices), which isolates the
//! configuration derivative from remeshing noise.

use crate::asymptotics::{self, BranchData};
use crate::cuts::{build_cut_system, edge_signs, CutSystem, SignCochain};
use crate::eigensolver::{lowest_eigenpairs, EigenPair, SolverOptions};
use crate::fields::TestField;
use crate::geometry::{
    add3, displace_configuration, dot3, scale, sub3, ConfigTangent, Configuration, UnitVec3,
};
use crate::mesh::{build_mesh, morph_flagged, spherical_area, MeshParams, SphericalMesh};
use crate::operators::{assemble, TwistedOperators};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VariationError {
    #[error("eigenvalue {index} sits in a cluster of size {size}; gradient undefined")]
    DegenerateCluster { index: usize, size: usize },
    #[error("branch extraction failed: {0}")]
    ExtractionFailed(#[from] asymptotics::FitError),
    #[error("branch tracking overlap {overlap:.3} below 0.7 at displacement {t}")]
    BranchSwap { overlap: f64, t: f64 },
    #[error("mesh rebuild failed during variation: {0}")]
    MeshRebuildFailed(#[from] crate::mesh::MeshError),
    #[error("cut construction failed during variation: {0}")]
    CutFailed(#[from] crate::cuts::CutError),
    #[error("solve failed during variation: {0}")]
    SolveFailed(#[from] crate::eigensolver::SolveError),
}

/// Differential of a simple eigenvalue over configuration space: one
/// 2-covector per configuration point in that point's chart frame.
#[derive(Debug, Clone)]
pub struct GradientCovector {
    /// (c1, c2) per point: pairing with a tangent v is c1 v1 + c2 v2 in the
    /// chart frame carried alongside.
    pub components: Vec<(f64, f64)>,
    pub frames: Vec<([f64; 3], [f64; 3])>,
}

impl GradientCovector {
    pub fn pair(&self, nu: &ConfigTangent) -> f64 {
        self.components
            .iter()
            .zip(&self.frames)
            .zip(nu.vectors())
            .map(|(((c1, c2), (e1, e2)), v)| c1 * dot3(*v, *e1) + c2 * dot3(*v, *e2))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.components
            .iter()
            .map(|(a, b)| a * a + b * b)
            .sum::<f64>()
            .sqrt()
    }

    /// Tangent vector (Riemannian gradient) dual to the covector.
    pub fn to_tangent(&self, config: &Configuration) -> ConfigTangent {
        let vectors = self
            .components
            .iter()
            .zip(&self.frames)
            .map(|((c1, c2), (e1, e2))| add3(scale(*e1, *c1), scale(*e2, *c2)))
            .collect();
        ConfigTangent::new(config, vectors).expect("frame vectors are tangent")
    }
}

/// The coefficient pairing constant for a simple eigenvalue.
const GRADIENT_CONST: f64 = std::f64::consts::PI / 2.0;
/// The boundary-term constant in the single-section divergence identity.
const DIVERGENCE_CONST: f64 = std::f64::consts::PI / 4.0;

/// Gradient covector of the `index`-th eigenvalue from its branch data.
/// Points with vanishing order >= 1 contribute exactly zero.
pub fn eigenvalue_gradient(
    eigenvalues: &[f64],
    index: usize,
    branch: &[BranchData],
) -> Result<GradientCovector, VariationError> {
    let lam = eigenvalues[index];
    let gap_tol = crate::eigensolver::DEFAULT_GAP_TOL * lam.abs().max(1.0);
    let cluster_size = eigenvalues
        .iter()
        .filter(|&&e| (e - lam).abs() <= gap_tol)
        .count();
    if cluster_size > 1 {
        return Err(VariationError::DegenerateCluster { index, size: cluster_size });
    }
    Ok(gradient_from_branch(branch))
}

pub fn gradient_from_branch(branch: &[BranchData]) -> GradientCovector {
    let mut components = Vec::with_capacity(branch.len());
    let mut frames = Vec::with_capacity(branch.len());
    for d in branch {
        if d.vanishing_order >= 1 {
            components.push((0.0, 0.0));
        } else {
            // pairing with v: (pi/2) Re(a^2 (v1 + i v2))
            let (re, im) = (d.coeff_re, d.coeff_im);
            let sq = (re * re - im * im, 2.0 * re * im);
            components.push((GRADIENT_CONST * sq.0, -GRADIENT_CONST * sq.1));
        }
        frames.push((d.frame_e1, d.frame_e2));
    }
    GradientCovector { components, frames }
}

/// Symmetric cluster form whose eigenvalues are the one-sided eigenvalue
/// slopes along `nu`.
#[derive(Debug, Clone)]
pub struct SplittingForm {
    pub matrix: nalgebra::DMatrix<f64>,
    pub slopes: Vec<f64>,
}

/// Build the splitting form of a degenerate cluster along `nu` from the
/// per-member order-zero branch coefficients.
pub fn splitting_form(
    cluster_branch: &[Vec<BranchData>],
    nu: &ConfigTangent,
) -> SplittingForm {
    let n = cluster_branch.len();
    let mut matrix = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for (di, dj) in cluster_branch[i].iter().zip(&cluster_branch[j]) {
                let v = nu.vectors()[di.point_index];
                let v1 = dot3(v, di.frame_e1);
                let v2 = dot3(v, di.frame_e2);
                let (ar, ai) = di.order_zero_coeff();
                let (br, bi) = dj.order_zero_coeff();
                // Re(a b (v1 + i v2))
                let pr = ar * br - ai * bi;
                let pi_ = ar * bi + ai * br;
                s += GRADIENT_CONST * (pr * v1 - pi_ * v2);
            }
            matrix[(i, j)] = s;
            matrix[(j, i)] = s;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(matrix.clone());
    let mut slopes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    slopes.sort_by(|a, b| a.total_cmp(b));
    SplittingForm { matrix, slopes }
}

/// Per-triangle stress-energy tensor of an eigenpair, as ambient symmetric
/// 3x3 matrices (the metric term uses the triangle-plane projector).
pub fn stress_energy(
    f: &[f64],
    lambda: f64,
    mesh: &SphericalMesh,
    signs: &SignCochain,
    ops: &TwistedOperators,
) -> Vec<[[f64; 3]; 3]> {
    let all = ops.expand(f);
    (0..mesh.num_triangles())
        .map(|ti| {
            let (grad, fc) = element_grad_value(mesh, signs, &all, ti);
            tensor_from(grad, grad, fc * fc, lambda, lambda, mesh, ti, true)
        })
        .collect()
}

/// Trivialized corner values and element gradient of a section on triangle
/// `ti`; returns (gradient, centroid value).
pub fn element_grad_value(
    mesh: &SphericalMesh,
    signs: &SignCochain,
    section_all: &[f64],
    ti: usize,
) -> ([f64; 3], f64) {
    let vals = trivialized_values(mesh, signs, section_all, ti);
    let grad = mesh.element_gradient(ti, vals);
    let fc = (vals[0] + vals[1] + vals[2]) / 3.0;
    (grad, fc)
}

/// Corner values of a discrete section in a deterministic triangle-local
/// gauge (anchored at the lowest unflagged corner).
pub fn trivialized_values(
    mesh: &SphericalMesh,
    signs: &SignCochain,
    section_all: &[f64],
    ti: usize,
) -> [f64; 3] {
    let t = mesh.triangles[ti];
    let anchor = (0..3)
        .filter(|&k| !mesh.is_flagged[t[k]])
        .min_by_key(|&k| t[k])
        .expect("triangle has an unflagged corner");
    let mut out = [0.0; 3];
    out[anchor] = section_all[t[anchor]];
    for k in 0..3 {
        if k == anchor {
            continue;
        }
        if mesh.is_flagged[t[k]] {
            out[k] = 0.0;
            continue;
        }
        let e = mesh.edge_id(t[anchor], t[k]).unwrap();
        out[k] = signs.of_edge(e) * section_all[t[k]];
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn tensor_from(
    g1: [f64; 3],
    g2: [f64; 3],
    ff: f64,
    l1: f64,
    l2: f64,
    mesh: &SphericalMesh,
    ti: usize,
    single: bool,
) -> [[f64; 3]; 3] {
    // single: T = g (x) g - 1/2 (|g|^2 - lambda f^2) P
    // pair:   S = g1 (x) g2 + g2 (x) g1 - (<g1,g2> - 1/2 (l1+l2) f f') P
    let t = mesh.triangles[ti];
    let n = crate::geometry::cross(
        sub3(mesh.vertices[t[1]].as_array(), mesh.vertices[t[0]].as_array()),
        sub3(mesh.vertices[t[2]].as_array(), mesh.vertices[t[0]].as_array()),
    );
    let nn = crate::geometry::norm(n);
    let nhat = scale(n, 1.0 / nn.max(1e-300));
    let dotg = dot3(g1, g2);
    let scalar = if single {
        0.5 * (dotg - l1 * ff)
    } else {
        dotg - 0.5 * (l1 + l2) * ff
    };
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let outer = if single {
                g1[i] * g1[j]
            } else {
                g1[i] * g2[j] + g2[i] * g1[j]
            };
            let proj = ((i == j) as u8 as f64) - nhat[i] * nhat[j];
            out[i][j] = outer - scalar * proj;
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// Scale used in the denominator of the residual.
    pub scale: f64,
}

/// Quadrature of sum over triangles of <nabla nu, tensor> with the tensor
/// piecewise constant and the field sampled on a subdivided triangle when
/// inside its support band.
fn field_tensor_quadrature(
    mesh: &SphericalMesh,
    field: &dyn TestField,
    tensor_of: &dyn Fn(usize) -> [[f64; 3]; 3],
    depth: usize,
) -> f64 {
    let mut acc = 0.0;
    for ti in 0..mesh.num_triangles() {
        let c = mesh.tri_centroid(ti);
        let t = mesh.triangles[ti];
        let touching = field.maybe_in_support(&c)
            || t.iter().any(|&v| field.maybe_in_support(&mesh.vertices[v]));
        if !touching {
            continue;
        }
        let tens = tensor_of(ti);
        let corners = [
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
        ];
        acc += subdivided_pairing(field, &tens, corners, depth);
    }
    acc
}

fn subdivided_pairing(
    field: &dyn TestField,
    tens: &[[f64; 3]; 3],
    corners: [UnitVec3; 3],
    depth: usize,
) -> f64 {
    if depth == 0 {
        let area = spherical_area(&corners[0], &corners[1], &corners[2]);
        let c = add3(
            add3(corners[0].as_array(), corners[1].as_array()),
            corners[2].as_array(),
        );
        let c = UnitVec3::normalized(c[0], c[1], c[2]).unwrap();
        return area * field.nabla_pairing(&c, tens);
    }
    let mids = [
        midpoint(&corners[0], &corners[1]),
        midpoint(&corners[1], &corners[2]),
        midpoint(&corners[2], &corners[0]),
    ];
    let mut acc = 0.0;
    for sub in [
        [corners[0], mids[0], mids[2]],
        [mids[0], corners[1], mids[1]],
        [mids[2], mids[1], corners[2]],
        [mids[0], mids[1], mids[2]],
    ] {
        acc += subdivided_pairing(field, tens, sub, depth - 1);
    }
    acc
}

fn midpoint(a: &UnitVec3, b: &UnitVec3) -> UnitVec3 {
    let s = add3(a.as_array(), b.as_array());
    UnitVec3::normalized(s[0], s[1], s[2]).unwrap()
}

/// Residual of the single-section divergence identity: the stress-energy
/// pairing integral against the boundary coefficient sum.
pub fn divergence_identity_residual(
    f: &[f64],
    lambda: f64,
    field: &dyn TestField,
    branch: &[BranchData],
    config: &Configuration,
    mesh: &SphericalMesh,
    signs: &SignCochain,
    ops: &TwistedOperators,
) -> IdentityCheck {
    let all = ops.expand(f);
    let lhs = field_tensor_quadrature(
        mesh,
        field,
        &|ti| {
            let (g, fc) = element_grad_value(mesh, signs, &all, ti);
            tensor_from(g, g, fc * fc, lambda, lambda, mesh, ti, true)
        },
        2,
    );
    let mut rhs = 0.0;
    for d in branch {
        if d.vanishing_order >= 1 {
            continue;
        }
        let v = field.value(&config.points()[d.point_index]);
        let v1 = dot3(v, d.frame_e1);
        let v2 = dot3(v, d.frame_e2);
        let (re, im) = (d.coeff_re, d.coeff_im);
        let sq = (re * re - im * im, 2.0 * re * im);
        rhs -= DIVERGENCE_CONST * (sq.0 * v1 - sq.1 * v2);
    }
    let scale_ref = ops.stiffness_energy(f) * 0.01;
    let residual = (lhs - rhs).abs() / (lhs.abs() + rhs.abs() + 1e-6 * scale_ref.max(1e-12));
    IdentityCheck { lhs, rhs, residual, scale: scale_ref }
}

/// Residual of the two-section identity with the cross term
/// -(1/2)(lambda' - lambda) int <nu, f df' - f' df>.
#[allow(clippy::too_many_arguments)]
pub fn pair_identity_residual(
    f: &[f64],
    fp: &[f64],
    lambda: f64,
    lambda_p: f64,
    field: &dyn TestField,
    branch: &[BranchData],
    branch_p: &[BranchData],
    config: &Configuration,
    mesh: &SphericalMesh,
    signs: &SignCochain,
    ops: &TwistedOperators,
) -> IdentityCheck {
    let all = ops.expand(f);
    let all_p = ops.expand(fp);
    let term1 = field_tensor_quadrature(
        mesh,
        field,
        &|ti| {
            let (g1, c1) = element_grad_value(mesh, signs, &all, ti);
            let (g2, c2) = element_grad_value(mesh, signs, &all_p, ti);
            tensor_from(g1, g2, c1 * c2, lambda, lambda_p, mesh, ti, false)
        },
        2,
    );
    // cross term quadrature: f and f' interpolated, gradients constant
    let mut cross = 0.0;
    for ti in 0..mesh.num_triangles() {
        let c = mesh.tri_centroid(ti);
        let t = mesh.triangles[ti];
        let touching = field.maybe_in_support(&c)
            || t.iter().any(|&v| field.maybe_in_support(&mesh.vertices[v]));
        if !touching {
            continue;
        }
        let (g1, c1) = element_grad_value(mesh, signs, &all, ti);
        let (g2, c2) = element_grad_value(mesh, signs, &all_p, ti);
        let w = sub3(scale(g2, c1), scale(g1, c2));
        let area = mesh.tri_area[ti];
        cross += area * dot3(field.value(&c), w);
    }
    let term2 = -0.5 * (lambda_p - lambda) * cross;
    let lhs = term1 + term2;
    let mut rhs = 0.0;
    for (d1, d2) in branch.iter().zip(branch_p) {
        let v = field.value(&config.points()[d1.point_index]);
        let v1 = dot3(v, d1.frame_e1);
        let v2 = dot3(v, d1.frame_e2);
        let (ar, ai) = d1.order_zero_coeff();
        let (br, bi) = d2.order_zero_coeff();
        let pr = ar * br - ai * bi;
        let pi_ = ar * bi + ai * br;
        rhs -= GRADIENT_CONST * (pr * v1 - pi_ * v2);
    }
    let scale_ref = (ops.stiffness_energy(f) * ops.stiffness_energy(fp)).sqrt() * 0.01;
    let residual = (lhs - rhs).abs() / (lhs.abs() + rhs.abs() + 1e-6 * scale_ref.max(1e-12));
    IdentityCheck { lhs, rhs, residual, scale: scale_ref }
}

/// A solved configuration: everything downstream modules need.
pub struct Solved {
    pub config: Configuration,
    pub mesh: SphericalMesh,
    pub cut: CutSystem,
    pub signs: SignCochain,
    pub ops: TwistedOperators,
    pub pairs: Vec<EigenPair>,
}

/// Build, cut, assemble and solve in one step.
pub fn solve_configuration(
    config: &Configuration,
    params: &MeshParams,
    k: usize,
    opts: &SolverOptions,
) -> Result<Solved, VariationError> {
    let mesh = build_mesh(config, params)?;
    let cut = build_cut_system(config, &mesh)?;
    let signs = edge_signs(&cut, &mesh)?;
    let ops = assemble(&mesh, &signs);
    let pairs = lowest_eigenpairs(&ops, k, opts)?;
    Ok(Solved { config: config.clone(), mesh, cut, signs, ops, pairs })
}

#[derive(Debug, Clone)]
pub struct FdSlope {
    pub slope: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub overlap_plus: f64,
    pub overlap_minus: f64,
}

/// Central-difference slope of eigenvalue branch `k` along `nu`.
///
/// Both displaced problems reuse the base mesh combinatorics and cut system
/// with only the flagged vertices moved, so the difference isolates the
/// configuration dependence. Branches are matched to the base eigenvector by
/// mass inner product; overlap below 0.7 reports a crossing.
pub fn fd_eigenvalue_slope(
    base: &Solved,
    nu: &ConfigTangent,
    h: f64,
    k: usize,
    opts: &SolverOptions,
) -> Result<FdSlope, VariationError> {
    assert!(h > 0.0);
    let solve_at = |t: f64| -> Result<(f64, f64), VariationError> {
        let cfg = displace_configuration(&base.config, nu, t)
            .map_err(|e| VariationError::MeshRebuildFailed(crate::mesh::MeshError::HullFailed(e.to_string())))?;
        let mesh = morph_flagged(&base.mesh, &base.config, &cfg)?;
        let ops = assemble(&mesh, &base.signs);
        let kk = (k + 3).min(ops.num_free() - 1);
        let pairs = lowest_eigenpairs(&ops, kk, opts)?;
        // match branch k by overlap against the base eigenvector
        let target = &base.pairs[k].section;
        let mut best = (0usize, 0.0f64);
        for (i, p) in pairs.iter().enumerate() {
            let ov = base.ops.mass_product(target, &p.section).abs();
            if ov > best.1 {
                best = (i, ov);
            }
        }
        if best.1 < 0.7 {
            return Err(VariationError::BranchSwap { overlap: best.1, t });
        }
        Ok((pairs[best.0].eigenvalue, best.1))
    };
    let (lp, op) = solve_at(h)?;
    let (lm, om) = solve_at(-h)?;
    Ok(FdSlope {
        slope: (lp - lm) / (2.0 * h),
        lambda_plus: lp,
        lambda_minus: lm,
        overlap_plus: op,
        overlap_minus: om,
    })
}

/// One-sided eigenvalue values of the lowest `count` branches at
/// displacement t (sorted ascending), for splitting-form checks.
pub fn one_sided_values(
    base: &Solved,
    nu: &ConfigTangent,
    t: f64,
    count: usize,
    opts: &SolverOptions,
) -> Result<Vec<f64>, VariationError> {
    let cfg = displace_configuration(&base.config, nu, t)
        .map_err(|e| VariationError::MeshRebuildFailed(crate::mesh::MeshError::HullFailed(e.to_string())))?;
    let mesh = morph_flagged(&base.mesh, &base.config, &cfg)?;
    let ops = assemble(&mesh, &base.signs);
    let pairs = lowest_eigenpairs(&ops, count, opts)?;
    Ok(pairs.iter().map(|p| p.eigenvalue).collect())
}

/// Stiffness energy of the sign-stripped section |f| (an honest function, so
/// no twisting), over all mesh edges with pinned values zero.
pub fn sign_stripped_energy(mesh: &SphericalMesh, section_all: &[f64]) -> f64 {
    mesh.edges
        .iter()
        .map(|e| {
            let d = section_all[e.a].abs() - section_all[e.b].abs();
            e.cot_weight * d * d
        })
        .sum()
}
