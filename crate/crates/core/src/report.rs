//! Structured result documents: spectrum JSON, branch reports, mesh export
//! with its sidecar, and CSV rows for study tables.

use crate::asymptotics::BranchData;
use crate::cuts::{CutSystem, SignCochain};
use crate::eigensolver::{cluster_multiplicities, EigenPair, SpectrumCluster};
use crate::geometry::{Configuration, UnitVec3};
use crate::mesh::SphericalMesh;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumDoc {
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub clusters: Vec<ClusterDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterDoc {
    pub value: f64,
    pub multiplicity: usize,
}

pub fn spectrum_doc(pairs: &[EigenPair], gap_tol: f64) -> SpectrumDoc {
    let eigenvalues: Vec<f64> = pairs.iter().map(|p| p.eigenvalue).collect();
    let clusters: Vec<ClusterDoc> = cluster_multiplicities(&eigenvalues, gap_tol)
        .into_iter()
        .map(|c: SpectrumCluster| ClusterDoc { value: c.value, multiplicity: c.multiplicity })
        .collect();
    SpectrumDoc {
        eigenvalues,
        residuals: pairs.iter().map(|p| p.residual).collect(),
        clusters,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchPointDoc {
    pub point: usize,
    pub vanishing_order: usize,
    pub re_a: f64,
    pub im_a: f64,
    pub residual: f64,
    pub frame_e1: [f64; 3],
    pub frame_e2: [f64; 3],
}

pub fn branch_report(branch: &[BranchData]) -> Vec<BranchPointDoc> {
    branch
        .iter()
        .map(|d| BranchPointDoc {
            point: d.point_index,
            vanishing_order: d.vanishing_order,
            re_a: d.coeff_re,
            im_a: d.coeff_im,
            residual: d.fit_residual,
            frame_e1: d.frame_e1,
            frame_e2: d.frame_e2,
        })
        .collect()
}

/// ASCII OFF-like mesh text.
pub fn mesh_to_off(mesh: &SphericalMesh) -> String {
    let mut out = String::from("OFF\n");
    out.push_str(&format!(
        "{} {} {}\n",
        mesh.num_vertices(),
        mesh.num_triangles(),
        mesh.num_edges()
    ));
    for v in &mesh.vertices {
        out.push_str(&format!("{:.17} {:.17} {:.17}\n", v.x, v.y, v.z));
    }
    for t in &mesh.triangles {
        out.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    out
}

/// Sidecar JSON: flagged vertices, cut paths and the flipped edge list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshSidecar {
    pub flagged: Vec<usize>,
    pub cut_paths: Vec<Vec<usize>>,
    pub flipped_edges: Vec<(usize, usize)>,
}

pub fn mesh_sidecar(mesh: &SphericalMesh, cut: &CutSystem, signs: &SignCochain) -> MeshSidecar {
    MeshSidecar {
        flagged: mesh.flagged.clone(),
        cut_paths: cut.paths.iter().map(|p| p.vertices.clone()).collect(),
        flipped_edges: mesh
            .edges
            .iter()
            .enumerate()
            .filter(|(e, _)| signs.sigma[*e] == -1)
            .map(|(_, e)| (e.a, e.b))
            .collect(),
    }
}

/// Parse the OFF-like text back into parts.
pub fn mesh_from_off(
    text: &str,
    sidecar: &MeshSidecar,
    config: &Configuration,
) -> Result<SphericalMesh, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    if header.trim() != "OFF" {
        return Err("missing OFF header".into());
    }
    let counts: Vec<usize> = lines
        .next()
        .ok_or("missing counts")?
        .split_whitespace()
        .map(|s| s.parse().map_err(|e| format!("bad count: {e}")))
        .collect::<Result<_, _>>()?;
    let (nv, nf) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let l = lines.next().ok_or("missing vertex line")?;
        let xs: Vec<f64> = l
            .split_whitespace()
            .map(|s| s.parse().map_err(|e| format!("bad coord: {e}")))
            .collect::<Result<_, _>>()?;
        vertices
            .push(UnitVec3::normalized(xs[0], xs[1], xs[2]).map_err(|e| e.to_string())?);
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let l = lines.next().ok_or("missing face line")?;
        let xs: Vec<usize> = l
            .split_whitespace()
            .skip(1)
            .map(|s| s.parse().map_err(|e| format!("bad index: {e}")))
            .collect::<Result<_, _>>()?;
        triangles.push([xs[0], xs[1], xs[2]]);
    }
    crate::mesh::mesh_from_parts(vertices, triangles, sidecar.flagged.clone(), config)
        .map_err(|e| e.to_string())
}

/// Minimal CSV writer: header then rows, all fields pre-rendered.
pub fn to_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckRow {
    pub config_id: usize,
    pub direction_id: usize,
    pub formula_slope: f64,
    pub fd_slope: f64,
    pub relative_error: f64,
}

pub fn gradcheck_csv(rows: &[GradCheckRow]) -> String {
    to_csv(
        &["config_id", "direction_id", "formula_slope", "fd_slope", "relative_error"],
        &rows
            .iter()
            .map(|r| {
                vec![
                    r.config_id.to_string(),
                    r.direction_id.to_string(),
                    format!("{:.12e}", r.formula_slope),
                    format!("{:.12e}", r.fd_slope),
                    format!("{:.6e}", r.relative_error),
                ]
            })
            .collect::<Vec<_>>(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cuts::{build_cut_system, edge_signs};
    use crate::eigensolver::{lowest_eigenpairs, SolverOptions};
    use crate::geometry::make_configuration;
    use crate::mesh::{build_mesh, MeshParams};
    use crate::operators::assemble;

    #[test]
    fn spectrum_doc_round_trip() {
        let config = make_configuration(vec![UnitVec3::north(), UnitVec3::south()]).unwrap();
        let params = MeshParams { background_count: 1500, grade_depth: 2, grade_radius: 0.3 };
        let mesh = build_mesh(&config, &params).unwrap();
        let cut = build_cut_system(&config, &mesh).unwrap();
        let signs = edge_signs(&cut, &mesh).unwrap();
        let ops = assemble(&mesh, &signs);
        let pairs = lowest_eigenpairs(&ops, 4, &SolverOptions::default()).unwrap();
        let doc = spectrum_doc(&pairs, 0.08);
        let text = serde_json::to_string(&doc).unwrap();
        let back: SpectrumDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(back.eigenvalues.len(), 4);
        assert_eq!(back.clusters[0].multiplicity, 2);
    }

    #[test]
    fn mesh_off_round_trip() {
        let config = make_configuration(vec![UnitVec3::north(), UnitVec3::south()]).unwrap();
        let params = MeshParams { background_count: 700, grade_depth: 1, grade_radius: 0.3 };
        let mesh = build_mesh(&config, &params).unwrap();
        let cut = build_cut_system(&config, &mesh).unwrap();
        let signs = edge_signs(&cut, &mesh).unwrap();
        let off = mesh_to_off(&mesh);
        let sidecar = mesh_sidecar(&mesh, &cut, &signs);
        let back = mesh_from_off(&off, &sidecar, &config).unwrap();
        assert_eq!(back.num_vertices(), mesh.num_vertices());
        assert_eq!(back.num_triangles(), mesh.num_triangles());
        assert_eq!(back.flagged, mesh.flagged);
        // geometry survives the text round trip
        assert!((back.total_area() - mesh.total_area()).abs() < 1e-9);
    }

    #[test]
    fn csv_shape() {
        let rows = vec![GradCheckRow {
            config_id: 0,
            direction_id: 1,
            formula_slope: 0.5,
            fd_slope: 0.49,
            relative_error: 0.02,
        }];
        let text = gradcheck_csv(&rows);
        assert!(text.starts_with("config_id,direction_id"));
        assert_eq!(text.lines().count(), 2);
    }
}
