use z2eig_core::*;
use z2eig_core::experiments::*;
fn main() {
    let opts = eigensolver::SolverOptions::default();
    let base = geometry::make_configuration(vec![UnitVec3::north(), UnitVec3::south()]).unwrap();
    let x = UnitVec3::normalized(-1.0, 0.0, 0.0).unwrap();
    for bg in [8000usize, 10000] {
        let t = std::time::Instant::now();
        match pair_identity_check(&base, &x, 0.05, bg, &opts) {
            Ok(c) => println!("bg={bg}: verts={} tears={} lhs={:.5e} rhs={:.5e} residual={:.3} product={:.4} ({:?})",
                c.mesh_vertices, c.gauge_tears, c.lhs, c.rhs, c.residual, c.product_integral, t.elapsed()),
            Err(e) => println!("bg={bg}: FAILED: {e}"),
        }
    }
}
