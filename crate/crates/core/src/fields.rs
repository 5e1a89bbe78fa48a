//! Divergence-free test vector fields on the sphere.
//!
//! A bump field is an azimuthal rotation about an axis, windowed by a smooth
//! band profile in the polar angle. Such fields are divergence free for any
//! profile, and carry an explicit covariant derivative, which is what the
//! stress-energy pairings integrate against.

use crate::geometry::{
    self, cross, norm, scale, sub3, ConfigTangent, Configuration, GeometryError, UnitVec3,
};

/// Smooth non-increasing profile: 1 on (-inf, 1/4], 0 on [3/4, inf).
/// Quintic smoothstep in between (two continuous derivatives).
pub fn chi(t: f64) -> f64 {
    if t <= 0.25 {
        1.0
    } else if t >= 0.75 {
        0.0
    } else {
        let u = (t - 0.25) * 2.0;
        1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    }
}

/// Derivative of `chi`.
pub fn chi_prime(t: f64) -> f64 {
    if t <= 0.25 || t >= 0.75 {
        0.0
    } else {
        let u = (t - 0.25) * 2.0;
        -2.0 * 30.0 * u * u * (1.0 - u) * (1.0 - u)
    }
}

/// Logarithmic cutoff around a point set: 0 within distance `100 eps` of the
/// set, 1 beyond sqrt(100 eps). Requires 100 eps < 1 so the transition band
/// is nonempty.
pub fn log_cutoff(dist: f64, eps: f64) -> f64 {
    let inner = 100.0 * eps;
    assert!(inner < 0.9, "cutoff hole too large: {inner}");
    if dist <= inner {
        return 0.0;
    }
    chi(2.0 * dist.ln() / inner.ln() - 1.0)
}

/// Azimuthal band field about the axis through `q`.
///
/// Equal to `s` times the rotation generator about `q` where cos(theta) = r,
/// supported where |cos(theta) - r| < a.
#[derive(Debug, Clone)]
pub struct BumpField {
    pub q: UnitVec3,
    pub r: f64,
    pub a: f64,
    pub s: f64,
}

impl BumpField {
    pub fn new(q: UnitVec3, r: f64, a: f64, s: f64) -> Self {
        assert!(a > 0.0, "band width must be positive");
        assert!(r > -1.0 && r < 1.0, "band center must be interior");
        Self { q, r, a, s }
    }

    fn band(&self, cos_theta: f64) -> f64 {
        chi((cos_theta - self.r) / self.a) * chi((self.r - cos_theta) / self.a)
    }

    fn band_deriv(&self, cos_theta: f64) -> f64 {
        // d/d(cos theta) of the band profile.
        (chi_prime((cos_theta - self.r) / self.a) * chi((self.r - cos_theta) / self.a)
            - chi((cos_theta - self.r) / self.a) * chi_prime((self.r - cos_theta) / self.a))
            / self.a
    }

    /// Ambient value of the field at a sphere point.
    pub fn evaluate(&self, x: &UnitVec3) -> [f64; 3] {
        let c = self.q.dot(x);
        let w = self.band(c);
        if w == 0.0 {
            return [0.0; 3];
        }
        scale(cross(self.q.as_array(), x.as_array()), self.s * w)
    }

    /// Pairing of the covariant derivative with a symmetric ambient 2-tensor
    /// tangent at `x`. For a banded rotation field the pairing reduces to
    /// s * (d chi / d theta) * sin(theta) * T(e_theta, e_phi).
    pub fn nabla_contract(&self, x: &UnitVec3, t_sym: &[[f64; 3]; 3]) -> f64 {
        let c = self.q.dot(x);
        let sin_theta_sq = 1.0 - c * c;
        if sin_theta_sq <= 1e-28 {
            return 0.0;
        }
        let dband = self.band_deriv(c);
        if dband == 0.0 {
            return 0.0;
        }
        let sin_theta = sin_theta_sq.sqrt();
        // d chi / d theta = -sin(theta) * d chi / d cos(theta)
        let dchi_dtheta = -sin_theta * dband;
        let e_phi = scale(cross(self.q.as_array(), x.as_array()), 1.0 / sin_theta);
        let e_theta = scale(
            sub3(scale(x.as_array(), c), self.q.as_array()),
            1.0 / sin_theta,
        );
        let mut pairing = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                pairing += e_theta[i] * t_sym[i][j] * e_phi[j];
            }
        }
        self.s * dchi_dtheta * sin_theta * pairing
    }

    /// Support test (true where the field can be nonzero).
    pub fn in_support(&self, x: &UnitVec3) -> bool {
        (self.q.dot(x) - self.r).abs() < 0.75 * self.a
    }
}

/// A sum of bump fields with pairwise disjoint supports, one per
/// configuration point, matching prescribed tangent vectors up to positive
/// multiples.
#[derive(Debug, Clone)]
pub struct MatchingField {
    bumps: Vec<Option<BumpField>>,
    multipliers: Vec<f64>,
}

impl MatchingField {
    /// Positive multiplier of `v_k` realized at point k (0 for zero vectors).
    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn evaluate(&self, x: &UnitVec3) -> [f64; 3] {
        let mut out = [0.0; 3];
        for b in self.bumps.iter().flatten() {
            let v = b.evaluate(x);
            out = geometry::add3(out, v);
        }
        out
    }

    pub fn nabla_contract(&self, x: &UnitVec3, t_sym: &[[f64; 3]; 3]) -> f64 {
        self.bumps
            .iter()
            .flatten()
            .map(|b| b.nabla_contract(x, t_sym))
            .sum()
    }

    pub fn bumps(&self) -> impl Iterator<Item = &BumpField> {
        self.bumps.iter().flatten()
    }
}

/// Build the matching field for a configuration tangent.
///
/// Each nonzero tangent vector v_k gets a bump whose axis sits at distance
/// rho from p_k, perpendicular to v_k, so the azimuthal rotation at p_k runs
/// along +v_k. Supports live within 2.5 rho of their points, so separation
/// at least 5 rho keeps them disjoint.
pub fn matching_field(
    config: &Configuration,
    nu: &ConfigTangent,
) -> Result<MatchingField, GeometryError> {
    let min_sep = config.min_separation();
    let rho = (min_sep / 6.0).min(0.15);
    if rho < 5e-4 {
        return Err(GeometryError::SupportCollision {
            min_sep,
            band: rho,
        });
    }
    let mut bumps = Vec::with_capacity(config.len());
    let mut multipliers = Vec::with_capacity(config.len());
    for (p, v) in config.points().iter().zip(nu.vectors()) {
        let vn = norm(*v);
        if vn == 0.0 {
            bumps.push(None);
            multipliers.push(0.0);
            continue;
        }
        let vhat = scale(*v, 1.0 / vn);
        let yhat = cross(p.as_array(), vhat);
        let q = p.exp_map(scale(yhat, rho));
        let a = rho * rho.sin() / 4.0;
        let bump = BumpField::new(q, rho.cos(), a, vn);
        multipliers.push(rho.sin());
        bumps.push(Some(bump));
    }
    Ok(MatchingField { bumps, multipliers })
}

/// A smooth divergence-free test vector field with an analytic covariant
/// derivative pairing.
pub trait TestField {
    fn value(&self, x: &UnitVec3) -> [f64; 3];
    /// Pairing of the covariant derivative with a symmetric ambient tensor
    /// tangent at x.
    fn nabla_pairing(&self, x: &UnitVec3, t_sym: &[[f64; 3]; 3]) -> f64;
    /// Conservative support test (may return true outside the support).
    fn maybe_in_support(&self, x: &UnitVec3) -> bool;
}

impl TestField for BumpField {
    fn value(&self, x: &UnitVec3) -> [f64; 3] {
        self.evaluate(x)
    }
    fn nabla_pairing(&self, x: &UnitVec3, t_sym: &[[f64; 3]; 3]) -> f64 {
        self.nabla_contract(x, t_sym)
    }
    fn maybe_in_support(&self, x: &UnitVec3) -> bool {
        (self.q.dot(x) - self.r).abs() < self.a
    }
}

impl TestField for MatchingField {
    fn value(&self, x: &UnitVec3) -> [f64; 3] {
        self.evaluate(x)
    }
    fn nabla_pairing(&self, x: &UnitVec3, t_sym: &[[f64; 3]; 3]) -> f64 {
        self.nabla_contract(x, t_sym)
    }
    fn maybe_in_support(&self, x: &UnitVec3) -> bool {
        self.bumps().any(|b| (b.q.dot(x) - b.r).abs() < b.a)
    }
}

/// Tangent-plane-projected divergence by central differences (test aid).
pub fn fd_surface_divergence(field: &dyn Fn(&UnitVec3) -> [f64; 3], x: &UnitVec3, h: f64) -> f64 {
    let mut jac = [[0.0; 3]; 3];
    let xa = x.as_array();
    for j in 0..3 {
        let mut plus = xa;
        plus[j] += h;
        let mut minus = xa;
        minus[j] -= h;
        let fp = field(&UnitVec3::normalized(plus[0], plus[1], plus[2]).unwrap());
        let fm = field(&UnitVec3::normalized(minus[0], minus[1], minus[2]).unwrap());
        for i in 0..3 {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    // trace of P J P with P the tangent projector at x.
    let mut div = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let p_ij = ((i == j) as u8 as f64) - xa[i] * xa[j];
            div += p_ij * jac[j][i];
        }
    }
    div
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dot3, geodesic_distance, make_configuration};
    use rand::SeedableRng;

    #[test]
    fn chi_plateaus_and_midpoint() {
        assert_eq!(chi(0.0), 1.0);
        assert_eq!(chi(0.25), 1.0);
        assert_eq!(chi(0.75), 0.0);
        assert_eq!(chi(2.0), 0.0);
        assert!((chi(0.5) - 0.5).abs() < 1e-14);
        // monotone non-increasing
        let mut prev = chi(0.0);
        for i in 1..=100 {
            let v = chi(i as f64 / 100.0);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn chi_prime_matches_fd() {
        let h = 1e-6;
        for &t in &[0.3, 0.4, 0.5, 0.6, 0.7] {
            let fd = (chi(t + h) - chi(t - h)) / (2.0 * h);
            assert!((chi_prime(t) - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn bump_zero_outside_band() {
        let b = BumpField::new(UnitVec3::north(), 0.5, 0.1, 2.0);
        // cos(theta) = 0 is far outside |c - 0.5| < 0.1
        let x = UnitVec3::normalized(1.0, 0.0, 0.0).unwrap();
        assert_eq!(b.evaluate(&x), [0.0; 3]);
    }

    #[test]
    fn bump_center_is_azimuthal_rotation() {
        let s = 1.7;
        let b = BumpField::new(UnitVec3::north(), 0.5, 0.1, s);
        let sin_theta = (1.0f64 - 0.25).sqrt();
        let x = UnitVec3::normalized(sin_theta, 0.0, 0.5).unwrap();
        let v = b.evaluate(&x);
        // s * d/d phi = s * (k x x); magnitude s * sin(theta), azimuthal.
        let expect = scale(cross([0.0, 0.0, 1.0], x.as_array()), s);
        for i in 0..3 {
            assert!((v[i] - expect[i]).abs() < 1e-12);
        }
        assert!((norm(v) - s * sin_theta).abs() < 1e-12);
    }

    #[test]
    fn bump_is_divergence_free() {
        let b = BumpField::new(
            UnitVec3::normalized(0.3, -0.4, 0.86).unwrap(),
            0.2,
            0.3,
            1.3,
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let f = |x: &UnitVec3| b.evaluate(x);
        let mut checked = 0;
        for _ in 0..1000 {
            let x = crate::geometry::tests_random_point(&mut rng);
            let div = fd_surface_divergence(&f, &x, 1e-5);
            let scale_ref = norm(b.evaluate(&x)).max(1.0);
            assert!(div.abs() < 1e-6 * scale_ref, "divergence {div} at {x:?}");
            checked += 1;
        }
        assert_eq!(checked, 1000);
    }

    #[test]
    fn matching_field_hits_prescribed_vectors() {
        let config =
            make_configuration(vec![UnitVec3::north(), UnitVec3::south()]).unwrap();
        let v = vec![[1.0, 0.0, 0.0], [0.0; 3]];
        let nu = ConfigTangent::new(&config, v).unwrap();
        let mf = matching_field(&config, &nu).unwrap();
        let at_n = mf.evaluate(&UnitVec3::north());
        let m = mf.multipliers()[0];
        assert!(m > 0.0);
        assert!((at_n[0] - m).abs() < 1e-12);
        assert!(at_n[1].abs() < 1e-12 && at_n[2].abs() < 1e-12);
        // vanishes near the south pole
        let near_s = UnitVec3::normalized(0.05, 0.02, -0.99).unwrap();
        assert_eq!(mf.evaluate(&near_s), [0.0; 3]);
        // zero tangent -> zero field everywhere
        let zero = ConfigTangent::zero(&config);
        let mf0 = matching_field(&config, &zero).unwrap();
        assert_eq!(mf0.evaluate(&UnitVec3::north()), [0.0; 3]);
    }

    #[test]
    fn matching_field_supports_disjoint() {
        let config =
            make_configuration(vec![UnitVec3::north(), UnitVec3::south()]).unwrap();
        let v = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let nu = ConfigTangent::new(&config, v).unwrap();
        let mf = matching_field(&config, &nu).unwrap();
        let bumps: Vec<&BumpField> = mf.bumps().collect();
        assert_eq!(bumps.len(), 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..2000 {
            let x = crate::geometry::tests_random_point(&mut rng);
            let both = bumps[0].in_support(&x) && bumps[1].in_support(&x);
            assert!(!both, "supports overlap at {x:?}");
        }
    }

    #[test]
    fn nabla_contract_vanishes_on_plateau() {
        // Where the band is flat the field is a Killing rotation and the
        // symmetric pairing must vanish.
        let b = BumpField::new(UnitVec3::north(), 0.5, 0.4, 1.0);
        let sin_theta = (1.0f64 - 0.25).sqrt();
        let x = UnitVec3::normalized(sin_theta, 0.0, 0.5).unwrap();
        let t = [[1.0, 0.2, 0.0], [0.2, -0.5, 0.1], [0.0, 0.1, 0.4]];
        assert_eq!(b.nabla_contract(&x, &t), 0.0);
    }

    #[test]
    fn quadrature_against_gradient_vanishes() {
        // integral of <grad f, nu> should vanish for divergence-free nu;
        // crude Monte Carlo with a smooth f as a weak-form sanity check.
        let b = BumpField::new(
            UnitVec3::normalized(0.1, 0.2, 0.97).unwrap(),
            0.3,
            0.25,
            1.0,
        );
        let f = |x: &UnitVec3| x.x * x.y + 0.3 * x.z;
        let grad_f = |x: &UnitVec3| {
            let g = [x.y, x.x, 0.3];
            let r = dot3(g, x.as_array());
            sub3(g, scale(x.as_array(), r))
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let n = 400_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = crate::geometry::tests_random_point(&mut rng);
            acc += dot3(grad_f(&x), b.evaluate(&x));
        }
        let area = 4.0 * std::f64::consts::PI;
        let integral = acc / n as f64 * area;
        let scale_ref = {
            let mut s = 0.0;
            for _ in 0..10_000 {
                let x = crate::geometry::tests_random_point(&mut rng);
                s += norm(b.evaluate(&x)) * norm(grad_f(&x));
            }
            s / 10_000.0 * area
        };
        assert!(
            integral.abs() < 0.02 * scale_ref.max(1e-9),
            "integral {integral} vs scale {scale_ref}"
        );
    }

    #[test]
    fn geodesic_cutoff_plateaus() {
        let eps = 1e-4;
        assert_eq!(log_cutoff(100.0 * eps * 0.9, eps), 0.0);
        assert_eq!(log_cutoff((100.0 * eps).sqrt() * 1.1, eps), 1.0);
        let mid = log_cutoff(0.5 * ((100.0 * eps).sqrt() + 100.0 * eps), eps);
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn matching_field_antipodal_support_geometry() {
        // antipodal pair with v at north only: field is a positive multiple
        // of v at the north pole and identically zero on the southern cap.
        let config =
            make_configuration(vec![UnitVec3::north(), UnitVec3::south()]).unwrap();
        let nu = ConfigTangent::new(&config, vec![[1.0, 0.0, 0.0], [0.0; 3]]).unwrap();
        let mf = matching_field(&config, &nu).unwrap();
        for i in 0..50 {
            let t = i as f64 / 50.0;
            let x = UnitVec3::normalized(t.sin() * 0.3, t.cos() * 0.3, -1.0).unwrap();
            assert_eq!(mf.evaluate(&x), [0.0; 3]);
        }
        let at_n = mf.evaluate(&UnitVec3::north());
        assert!(at_n[0] > 0.0);
        let _ = geodesic_distance(&UnitVec3::north(), &UnitVec3::south());
    }
}
