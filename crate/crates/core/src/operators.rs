//! Assembly of the twisted stiffness and lumped mass operators.
//!
//! The stiffness quadratic form is sum_e w_e (f_i - sigma_e f_j)^2 over mesh
//! edges with cotangent weights; configuration vertices are pinned to zero
//! (the only value compatible with the sign ambiguity there), which
//! eliminates them from the free index set. Mass is the diagonal of lumped
//! vertex areas.

use crate::cuts::SignCochain;
use crate::linalg::CsrMatrix;
use crate::mesh::SphericalMesh;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("section has zero mass norm")]
    ZeroSection,
}

#[derive(Debug, Clone)]
pub struct TwistedOperators {
    pub stiffness: CsrMatrix,
    /// Diagonal lumped mass over free vertices.
    pub mass: Vec<f64>,
    /// free index -> mesh vertex
    pub vertex_of_free: Vec<usize>,
    /// mesh vertex -> free index (None at pinned vertices)
    pub free_of_vertex: Vec<Option<usize>>,
    pub negative_weight_fraction: f64,
}

pub fn assemble(mesh: &SphericalMesh, signs: &SignCochain) -> TwistedOperators {
    let nv = mesh.num_vertices();
    let mut free_of_vertex = vec![None; nv];
    let mut vertex_of_free = Vec::with_capacity(nv - mesh.flagged.len());
    for v in 0..nv {
        if !mesh.is_flagged[v] {
            free_of_vertex[v] = Some(vertex_of_free.len());
            vertex_of_free.push(v);
        }
    }
    let nf = vertex_of_free.len();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.num_edges() * 4);
    // structural diagonal so shifts stay valid even for isolated rows
    for i in 0..nf {
        triplets.push((i, i, 0.0));
    }
    for (eid, e) in mesh.edges.iter().enumerate() {
        let w = e.cot_weight;
        let s = signs.of_edge(eid);
        match (free_of_vertex[e.a], free_of_vertex[e.b]) {
            (Some(i), Some(j)) => {
                triplets.push((i, i, w));
                triplets.push((j, j, w));
                triplets.push((i, j, -w * s));
                triplets.push((j, i, -w * s));
            }
            (Some(i), None) | (None, Some(i)) => {
                // (f_i - sigma * 0)^2 contributes w f_i^2
                triplets.push((i, i, w));
            }
            (None, None) => {}
        }
    }
    let stiffness = CsrMatrix::from_triplets(nf, &triplets);
    let mass: Vec<f64> = vertex_of_free.iter().map(|&v| mesh.vertex_area[v]).collect();
    TwistedOperators {
        stiffness,
        mass,
        vertex_of_free,
        free_of_vertex,
        negative_weight_fraction: mesh.quality.negative_weight_fraction,
    }
}

impl TwistedOperators {
    pub fn num_free(&self) -> usize {
        self.vertex_of_free.len()
    }

    pub fn stiffness_energy(&self, f: &[f64]) -> f64 {
        self.stiffness.quadratic(f)
    }

    pub fn mass_product(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter()
            .zip(g)
            .zip(&self.mass)
            .map(|((a, b), m)| a * b * m)
            .sum()
    }

    pub fn mass_norm_sq(&self, f: &[f64]) -> f64 {
        self.mass_product(f, f)
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Squared Hilbert norm f^T S f + f^T M f.
    pub fn hilbert_norm_sq(&self, f: &[f64]) -> f64 {
        self.stiffness_energy(f) + self.mass_norm_sq(f)
    }

    pub fn rayleigh(&self, f: &[f64]) -> Result<f64, OperatorError> {
        let m = self.mass_norm_sq(f);
        if m <= 0.0 {
            return Err(OperatorError::ZeroSection);
        }
        Ok(self.stiffness_energy(f) / m)
    }

    /// Expand a free-vertex vector to all mesh vertices (zeros at pinned).
    pub fn expand(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.free_of_vertex.len()];
        for (i, &v) in self.vertex_of_free.iter().enumerate() {
            out[v] = f[i];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cuts::{build_cut_system, edge_signs};
    use crate::geometry::{make_configuration, UnitVec3};
    use crate::mesh::{build_mesh, MeshParams};

    fn untwisted(count: usize) -> (SphericalMesh, TwistedOperators) {
        let config = make_configuration(vec![]).unwrap();
        let params = MeshParams { background_count: count, grade_depth: 0, grade_radius: 0.4 };
        let mesh = build_mesh(&config, &params).unwrap();
        let signs = SignCochain::untwisted(&mesh);
        let ops = assemble(&mesh, &signs);
        (mesh, ops)
    }

    #[test]
    fn constant_has_zero_energy_untwisted() {
        let (_, ops) = untwisted(800);
        let f = vec![1.0; ops.num_free()];
        let e = ops.stiffness_energy(&f);
        assert!(e.abs() < 1e-10, "constant stiffness energy {e}");
    }

    #[test]
    fn total_mass_is_sphere_area() {
        let (_, ops) = untwisted(2000);
        let area = 4.0 * std::f64::consts::PI;
        assert!((ops.total_mass() - area).abs() / area < 0.005);
    }

    #[test]
    fn hilbert_norm_of_constant_is_area() {
        let (_, ops) = untwisted(1500);
        let f = vec![1.0; ops.num_free()];
        let n2 = ops.hilbert_norm_sq(&f);
        let area = 4.0 * std::f64::consts::PI;
        assert!((n2 - area).abs() / area < 0.005, "norm^2 {n2}");
        // quadratic scaling
        let g: Vec<f64> = f.iter().map(|x| 2.0 * x).collect();
        assert!((ops.hilbert_norm_sq(&g) - 4.0 * n2).abs() < 1e-9 * n2);
        assert_eq!(ops.hilbert_norm_sq(&vec![0.0; ops.num_free()]), 0.0);
    }

    #[test]
    fn rayleigh_zero_section_rejected() {
        let (_, ops) = untwisted(600);
        let f = vec![0.0; ops.num_free()];
        assert!(matches!(ops.rayleigh(&f), Err(OperatorError::ZeroSection)));
    }

    #[test]
    fn twisted_assembly_pins_flagged() {
        let config = make_configuration(vec![UnitVec3::north(), UnitVec3::south()]).unwrap();
        let params = MeshParams { background_count: 900, grade_depth: 1, grade_radius: 0.3 };
        let mesh = build_mesh(&config, &params).unwrap();
        let cut = build_cut_system(&config, &mesh).unwrap();
        let signs = edge_signs(&cut, &mesh).unwrap();
        let ops = assemble(&mesh, &signs);
        assert_eq!(ops.num_free(), mesh.num_vertices() - 2);
        for &f in &mesh.flagged {
            assert!(ops.free_of_vertex[f].is_none());
        }
    }
}
