//! Lift of an eigensection to a homogeneous 1-form on R^3.
//!
//! An eigensection f with eigenvalue lambda extends to F = |x|^mu f(x/|x|)
//! with the radial power chosen so F is harmonic away from the branch rays;
//! nu = dF is then closed and coclosed, homogeneous of degree mu - 1, and
//! its regularity across the rays is controlled by the vanishing orders of
//! f at the configuration points.

use crate::cuts::{CutSystem, SignCochain};
use crate::geometry::{add3, dot3, geodesic_distance, norm, scale, sub3, UnitVec3};
use crate::mesh::SphericalMesh;
use crate::operators::TwistedOperators;
use serde::Serialize;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LiftError {
    #[error("negative eigenvalue {0}")]
    NegativeEigenvalue(f64),
    #[error("evaluation point within {0} rad of a branch ray")]
    OnBranchRay(f64),
}

/// Exponent mu = (1 + sqrt(1 + 4 lambda)) / 2.
pub fn homogeneity_exponent(lambda: f64) -> Result<f64, LiftError> {
    if lambda < 0.0 {
        return Err(LiftError::NegativeEigenvalue(lambda));
    }
    Ok(0.5 * (1.0 + (1.0 + 4.0 * lambda).sqrt()))
}

/// Radial power for which |x|^mu f(x/|x|) is harmonic when f has eigenvalue
/// lambda: the positive root of mu (mu + 1) = lambda.
pub fn harmonic_radial_exponent(lambda: f64) -> Result<f64, LiftError> {
    if lambda < 0.0 {
        return Err(LiftError::NegativeEigenvalue(lambda));
    }
    Ok(0.5 * (-1.0 + (1.0 + 4.0 * lambda).sqrt()))
}

/// A section of the twisted (or trivial) bundle over the sphere, evaluable
/// with a locally consistent branch on caps away from the branch points.
pub trait SectionField {
    /// Value and ambient tangential gradient at `u`, in the branch continued
    /// from `center` (the cap between them must avoid branch points).
    fn value_grad(&self, center: &UnitVec3, u: &UnitVec3) -> (f64, [f64; 3]);
    fn branch_directions(&self) -> Vec<UnitVec3>;
}

/// Closed-form antipodal eigensection family: amplitude * (sin theta)^{m-1/2}
/// sin((m-1/2)(phi - alpha)), eigenvalue m^2 - 1/4.
pub struct ClosedFormC2 {
    pub frame: crate::experiments::AxisFrame,
    pub m: usize,
    pub alpha: f64,
    pub amplitude: f64,
}

impl ClosedFormC2 {
    pub fn eigenvalue(&self) -> f64 {
        (self.m * self.m) as f64 - 0.25
    }
}

impl SectionField for ClosedFormC2 {
    fn value_grad(&self, center: &UnitVec3, u: &UnitVec3) -> (f64, [f64; 3]) {
        let k = self.frame.axis.as_array();
        let x = u.as_array();
        let c = dot3(k, x);
        let sin_theta = (1.0 - c * c).max(1e-30).sqrt();
        let s = self.m as f64 - 0.5;
        // longitude continued from the center
        let phi_c = self.frame.longitude(center);
        let phi_raw = self.frame.longitude(u);
        let phi = phi_c + wrap_pm_pi(phi_raw - phi_c);
        let u_ang = phi_of_branch(phi_c - self.alpha) + (phi - phi_c);
        let pw = sin_theta.powf(s);
        let val = self.amplitude * pw * (s * u_ang).sin();
        // gradient: d/dtheta e_theta + (1/sin theta) d/dphi e_phi
        let dtheta = self.amplitude * s * sin_theta.powf(s - 1.0) * c * (s * u_ang).sin();
        let dphi_over_sin = self.amplitude * s * sin_theta.powf(s - 1.0) * (s * u_ang).cos();
        let e_theta = scale(sub3(scale(x, c), k), 1.0 / sin_theta);
        let e_phi = scale(crate::geometry::cross(k, x), 1.0 / sin_theta);
        let grad = add3(scale(e_theta, dtheta), scale(e_phi, dphi_over_sin));
        (val, grad)
    }

    fn branch_directions(&self) -> Vec<UnitVec3> {
        vec![self.frame.axis, self.frame.axis.antipode()]
    }
}

fn phi_of_branch(x: f64) -> f64 {
    // representative of x in (0, 2 pi]
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x % two_pi;
    if y <= 0.0 {
        y += two_pi;
    }
    y
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

/// Degree-one spherical harmonic along an axis (untwisted control,
/// eigenvalue 2).
pub struct AxisHarmonic {
    pub axis: UnitVec3,
    pub amplitude: f64,
}

impl SectionField for AxisHarmonic {
    fn value_grad(&self, _center: &UnitVec3, u: &UnitVec3) -> (f64, [f64; 3]) {
        let k = self.axis.as_array();
        let x = u.as_array();
        let c = dot3(k, x);
        let val = self.amplitude * c;
        // tangential gradient of <k, u> on the sphere
        let grad = scale(sub3(k, scale(x, c)), self.amplitude);
        (val, grad)
    }

    fn branch_directions(&self) -> Vec<UnitVec3> {
        Vec::new()
    }
}

/// Discrete eigensection interpolated through local trivializations of the
/// cut gauge.
pub struct DiscreteSection<'a> {
    pub mesh: &'a SphericalMesh,
    pub signs: &'a SignCochain,
    pub cut: &'a CutSystem,
    pub values_all: Vec<f64>,
    pub config_points: Vec<UnitVec3>,
}

impl<'a> DiscreteSection<'a> {
    pub fn new(
        mesh: &'a SphericalMesh,
        signs: &'a SignCochain,
        cut: &'a CutSystem,
        ops: &TwistedOperators,
        section_free: &[f64],
        config: &crate::geometry::Configuration,
    ) -> Self {
        Self {
            mesh,
            signs,
            cut,
            values_all: ops.expand(section_free),
            config_points: config.points().to_vec(),
        }
    }

    /// Signed vertex values on a cap around `center`, spread across cut
    /// crossings (valid while the cap avoids the configuration points).
    fn cap_gauge(&self, center: &UnitVec3, radius: f64) -> Vec<i8> {
        let crossing: HashSet<usize> = self
            .cut
            .paths
            .iter()
            .flat_map(|p| p.crossing_edges.iter().copied())
            .collect();
        let region: HashSet<usize> = (0..self.mesh.num_vertices())
            .filter(|&v| geodesic_distance(&self.mesh.vertices[v], center) <= radius)
            .collect();
        let root = self.mesh.nearest_vertex(center);
        crate::cuts::spread_signs(self.mesh, &crossing, &HashSet::new(), root, Some(&region))
    }
}

impl<'a> SectionField for DiscreteSection<'a> {
    fn value_grad(&self, center: &UnitVec3, u: &UnitVec3) -> (f64, [f64; 3]) {
        let gauge = self.cap_gauge(center, 0.35);
        let ti = self.mesh.locate(u).expect("point on the sphere");
        let t = self.mesh.triangles[ti];
        let vals = [
            gauge[t[0]] as f64 * self.values_all[t[0]],
            gauge[t[1]] as f64 * self.values_all[t[1]],
            gauge[t[2]] as f64 * self.values_all[t[2]],
        ];
        let grad = self.mesh.element_gradient(ti, vals);
        // barycentric interpolation of the value
        let p = [
            self.mesh.vertices[t[0]].as_array(),
            self.mesh.vertices[t[1]].as_array(),
            self.mesh.vertices[t[2]].as_array(),
        ];
        let w0 = norm(crate::geometry::cross(sub3(p[1], u.as_array()), sub3(p[2], u.as_array())));
        let w1 = norm(crate::geometry::cross(sub3(p[2], u.as_array()), sub3(p[0], u.as_array())));
        let w2 = norm(crate::geometry::cross(sub3(p[0], u.as_array()), sub3(p[1], u.as_array())));
        let s = (w0 + w1 + w2).max(1e-300);
        let val = (w0 * vals[0] + w1 * vals[1] + w2 * vals[2]) / s;
        (val, grad)
    }

    fn branch_directions(&self) -> Vec<UnitVec3> {
        self.config_points.clone()
    }
}

/// The homogeneous 1-form nu = d(|x|^mu f(x/|x|)).
pub struct HarmonicLift<F: SectionField> {
    pub lambda: f64,
    /// Exponent reported by the correspondence formula.
    pub exponent: f64,
    /// Radial power actually used, making the extension harmonic.
    pub radial_power: f64,
    pub field: F,
    pub theta_excl: f64,
}

impl<F: SectionField> HarmonicLift<F> {
    pub fn new(lambda: f64, field: F, theta_excl: f64) -> Result<Self, LiftError> {
        Ok(Self {
            lambda,
            exponent: homogeneity_exponent(lambda)?,
            radial_power: harmonic_radial_exponent(lambda)?,
            field,
            theta_excl,
        })
    }

    /// Override the radial power (used for corruption sensitivity checks).
    pub fn with_radial_power(mut self, mu: f64) -> Self {
        self.radial_power = mu;
        self
    }

    fn check_rays(&self, u: &UnitVec3) -> Result<(), LiftError> {
        for b in self.field.branch_directions() {
            if geodesic_distance(&b, u) < self.theta_excl {
                return Err(LiftError::OnBranchRay(self.theta_excl));
            }
        }
        Ok(())
    }

    /// Cartesian components of nu at x (not on a branch ray).
    pub fn evaluate(&self, x: [f64; 3]) -> Result<[f64; 3], LiftError> {
        let r = norm(x);
        let u = UnitVec3::normalized(x[0], x[1], x[2])
            .map_err(|_| LiftError::OnBranchRay(0.0))?;
        self.check_rays(&u)?;
        Ok(self.evaluate_in_cap(&u, r, &u))
    }

    /// Components at radius r, direction u, with the branch continued from
    /// `center` (for finite-difference stencils).
    pub fn evaluate_in_cap(&self, center: &UnitVec3, r: f64, u: &UnitVec3) -> [f64; 3] {
        let mu = self.radial_power;
        let (f, g) = self.field.value_grad(center, u);
        let radial = scale(u.as_array(), mu * r.powf(mu - 1.0) * f);
        let tangential = scale(g, r.powf(mu - 1.0));
        add3(radial, tangential)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridResiduals {
    pub d_residual_h: f64,
    pub d_residual_h2: f64,
    pub delta_residual_h: f64,
    pub delta_residual_h2: f64,
    pub d_order: f64,
    pub delta_order: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GridParams {
    pub h: f64,
    pub radii: [f64; 2],
    pub directions: usize,
    pub seed: u64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self { h: 2e-3, radii: [0.9, 1.15], directions: 160, seed: 7 }
    }
}

/// Max-norm residuals of the finite-difference exterior derivative and
/// codifferential on spherical shells, at steps h and h/2, with observed
/// convergence orders.
pub fn closed_coclosed_residuals<F: SectionField>(
    lift: &HarmonicLift<F>,
    grid: &GridParams,
) -> GridResiduals {
    let dirs = sample_directions(lift, grid);
    let eval = |h: f64| -> (f64, f64) {
        let mut d_max = 0.0f64;
        let mut delta_max = 0.0f64;
        for u in &dirs {
            for &r in &grid.radii {
                let x = scale(u.as_array(), r);
                // Jacobian by central differences in the cap branch of u
                let mut jac = [[0.0; 3]; 3];
                for j in 0..3 {
                    let mut xp = x;
                    xp[j] += h;
                    let mut xm = x;
                    xm[j] -= h;
                    let rp = norm(xp);
                    let rm = norm(xm);
                    let up = UnitVec3::normalized(xp[0], xp[1], xp[2]).unwrap();
                    let um = UnitVec3::normalized(xm[0], xm[1], xm[2]).unwrap();
                    let vp = lift.evaluate_in_cap(u, rp, &up);
                    let vm = lift.evaluate_in_cap(u, rm, &um);
                    for i in 0..3 {
                        jac[i][j] = (vp[i] - vm[i]) / (2.0 * h);
                    }
                }
                let d_res = ((jac[0][1] - jac[1][0]).powi(2)
                    + (jac[1][2] - jac[2][1]).powi(2)
                    + (jac[2][0] - jac[0][2]).powi(2))
                .sqrt();
                let delta_res = (jac[0][0] + jac[1][1] + jac[2][2]).abs();
                d_max = d_max.max(d_res);
                delta_max = delta_max.max(delta_res);
            }
        }
        (d_max, delta_max)
    };
    let (d_h, delta_h) = eval(grid.h);
    let (d_h2, delta_h2) = eval(grid.h / 2.0);
    GridResiduals {
        d_residual_h: d_h,
        d_residual_h2: d_h2,
        delta_residual_h: delta_h,
        delta_residual_h2: delta_h2,
        d_order: (d_h / d_h2.max(1e-300)).log2(),
        delta_order: (delta_h / delta_h2.max(1e-300)).log2(),
    }
}

fn sample_directions<F: SectionField>(
    lift: &HarmonicLift<F>,
    grid: &GridParams,
) -> Vec<UnitVec3> {
    let rays = lift.field.branch_directions();
    crate::mesh::fibonacci_points(grid.directions * 2)
        .into_iter()
        .filter(|u| {
            rays.iter()
                .all(|b| geodesic_distance(b, u) > lift.theta_excl + 0.05)
        })
        .take(grid.directions)
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderFit {
    /// Fitted exponent of |nu| against angular distance to the ray.
    pub exponent: f64,
    pub samples: Vec<(f64, f64)>,
}

/// Fit |nu| ~ C * (angular distance)^e along directions approaching a branch
/// ray at |x| = 1.
pub fn holder_decay_fit<F: SectionField>(
    lift: &HarmonicLift<F>,
    ray: &UnitVec3,
    rho_max: f64,
    rho_min: f64,
    count: usize,
) -> HolderFit {
    let (e1, e2) = crate::geometry::tangent_frame(ray);
    let off = add3(scale(e1, 0.6), scale(e2, 0.8));
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let rho = rho_max * (rho_min / rho_max).powf(i as f64 / (count - 1) as f64);
        let u = ray.exp_map(scale(off, rho));
        let (f, g) = lift.field.value_grad(&u, &u);
        let mu = lift.radial_power;
        let nu = add3(scale(u.as_array(), mu * f), g);
        samples.push((rho, norm(nu)));
    }
    // least-squares slope of log|nu| vs log rho
    let n = samples.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(rho, v) in &samples {
        let x = rho.ln();
        let y = v.max(1e-300).ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let exponent = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    HolderFit { exponent, samples }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::AxisFrame;

    fn antipodal_m(m: usize) -> HarmonicLift<ClosedFormC2> {
        let field = ClosedFormC2 {
            frame: AxisFrame::for_axis(UnitVec3::north()),
            m,
            alpha: 0.4,
            amplitude: 1.0,
        };
        let lambda = field.eigenvalue();
        HarmonicLift::new(lambda, field, 0.1).unwrap()
    }

    #[test]
    fn exponent_formula() {
        assert_eq!(homogeneity_exponent(0.0).unwrap(), 1.0);
        assert_eq!(homogeneity_exponent(0.75).unwrap(), 1.5);
        assert_eq!(homogeneity_exponent(2.0).unwrap(), 2.0);
        assert!(matches!(
            homogeneity_exponent(-0.5),
            Err(LiftError::NegativeEigenvalue(_))
        ));
        // radial powers solving mu (mu + 1) = lambda
        assert_eq!(harmonic_radial_exponent(0.75).unwrap(), 0.5);
        assert_eq!(harmonic_radial_exponent(3.75).unwrap(), 1.5);
        assert_eq!(harmonic_radial_exponent(2.0).unwrap(), 1.0);
    }

    #[test]
    fn homogeneity_scaling_exact() {
        let lift = antipodal_m(1);
        let mu = lift.radial_power;
        let x = [0.7, -0.3, 0.45];
        let base = norm(lift.evaluate(x).unwrap());
        for c in [0.5f64, 2.0, 4.0] {
            let scaled = norm(lift.evaluate(scale(x, c)).unwrap());
            let expect = c.powf(mu - 1.0) * base;
            assert!(
                (scaled - expect).abs() / expect < 1e-6,
                "homogeneity at c={c}: {scaled} vs {expect}"
            );
        }
    }

    #[test]
    fn radial_component_vanishes_on_nodal_cone() {
        let lift = antipodal_m(1);
        // nodal meridian at phi = alpha = 0.4
        let (e1, e2) = crate::geometry::tangent_frame(&UnitVec3::north());
        let dir = add3(scale(e1, 0.4f64.cos()), scale(e2, 0.4f64.sin()));
        let u = UnitVec3::north().exp_map(scale(dir, 1.2));
        let nu = lift.evaluate(u.as_array()).unwrap();
        let radial = dot3(nu, u.as_array());
        assert!(radial.abs() < 1e-10, "radial component {radial}");
    }

    #[test]
    fn excludes_branch_rays() {
        let lift = antipodal_m(1);
        let near_axis = [0.01, 0.0, 2.0];
        assert!(matches!(
            lift.evaluate(near_axis),
            Err(LiftError::OnBranchRay(_))
        ));
    }

    #[test]
    fn closed_and_coclosed_with_matching_lambda() {
        let lift = antipodal_m(1);
        let grid = GridParams::default();
        let res = closed_coclosed_residuals(&lift, &grid);
        assert!(
            res.d_order >= 1.0,
            "d-residual order {} ({} -> {})",
            res.d_order,
            res.d_residual_h,
            res.d_residual_h2
        );
        assert!(
            res.delta_order >= 1.0,
            "delta-residual order {} ({} -> {})",
            res.delta_order,
            res.delta_residual_h,
            res.delta_residual_h2
        );
    }

    #[test]
    fn lambda_corruption_sensitivity() {
        let lift = antipodal_m(1);
        let grid = GridParams::default();
        let base = closed_coclosed_residuals(&lift, &grid);
        let corrupted = antipodal_m(1)
            .with_radial_power(harmonic_radial_exponent(0.75 + 0.2).unwrap());
        let bad = closed_coclosed_residuals(&corrupted, &grid);
        assert!(
            bad.delta_residual_h2 > 5.0 * base.delta_residual_h2,
            "sensitivity factor {}",
            bad.delta_residual_h2 / base.delta_residual_h2
        );
    }

    #[test]
    fn untwisted_harmonic_polynomial_control() {
        let field = AxisHarmonic { axis: UnitVec3::north(), amplitude: 0.8 };
        let lift = HarmonicLift::new(2.0, field, 0.0).unwrap();
        // radial power 1: F = 0.8 z exactly, so nu = 0.8 dz
        let nu = lift.evaluate([0.3, -0.2, 0.9]).unwrap();
        assert!((nu[0]).abs() < 1e-12 && (nu[1]).abs() < 1e-12);
        assert!((nu[2] - 0.8).abs() < 1e-12);
        let res = closed_coclosed_residuals(&lift, &GridParams::default());
        assert!(res.d_residual_h < 1e-9, "constant form d-residual {}", res.d_residual_h);
        assert!(res.delta_residual_h < 1e-9);
    }

    #[test]
    fn holder_exponents_by_order() {
        // order-zero points: |nu| grows like rho^{-1/2} toward the ray
        let m1 = antipodal_m(1);
        let fit1 = holder_decay_fit(&m1, &UnitVec3::north(), 0.6, 0.05, 12);
        assert!(
            (fit1.exponent + 0.5).abs() < 0.1,
            "m=1 exponent {} (expected about -1/2)",
            fit1.exponent
        );
        // critical order-one section: bounded with exponent about +1/2
        let m2 = antipodal_m(2);
        let fit2 = holder_decay_fit(&m2, &UnitVec3::north(), 0.6, 0.05, 12);
        assert!(
            fit2.exponent > 0.0,
            "critical lift must stay bounded: exponent {}",
            fit2.exponent
        );
        assert!((fit2.exponent - 0.5).abs() < 0.1);
    }

    #[test]
    fn discrete_section_lift_homogeneity() {
        use crate::eigensolver::SolverOptions;
        use crate::geometry::make_configuration;
        use crate::mesh::MeshParams;
        let config = make_configuration(vec![UnitVec3::north(), UnitVec3::south()]).unwrap();
        let params = MeshParams { background_count: 2500, grade_depth: 2, grade_radius: 0.3 };
        let s =
            crate::variation::solve_configuration(&config, &params, 1, &SolverOptions::default())
                .unwrap();
        let field = DiscreteSection::new(&s.mesh, &s.signs, &s.cut, &s.ops, &s.pairs[0].section, &s.config);
        let lift = HarmonicLift::new(s.pairs[0].eigenvalue, field, 0.1).unwrap();
        let x = [0.5, 0.6, 0.2];
        let base = norm(lift.evaluate(x).unwrap());
        let mu = lift.radial_power;
        for c in [0.5f64, 2.0, 4.0] {
            let v = norm(lift.evaluate(scale(x, c)).unwrap());
            assert!(
                (v - c.powf(mu - 1.0) * base).abs() / base < 1e-6,
                "discrete lift homogeneity at {c}"
            );
        }
    }
}
