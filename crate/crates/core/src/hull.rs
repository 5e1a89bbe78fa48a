//! Convex hull of points on the unit sphere by randomized incremental
//! insertion with conflict lists. For sphere points the hull triangulation
//! is the spherical Delaunay triangulation.

use crate::geometry::{cross, dot3, sub3, UnitVec3};
use rand::seq::SliceRandom;
use rand::SeedableRng;

const EPS_VISIBLE: f64 = 1e-13;

#[derive(Debug, Clone)]
struct Face {
    v: [usize; 3],
    /// nbr[k] is the face across edge (v[k], v[(k+1)%3]).
    nbr: [usize; 3],
    normal: [f64; 3],
    base: usize,
    dead: bool,
    conflicts: Vec<usize>,
}

fn face_normal(pts: &[[f64; 3]], v: &[usize; 3]) -> [f64; 3] {
    let ab = sub3(pts[v[1]], pts[v[0]]);
    let ac = sub3(pts[v[2]], pts[v[0]]);
    cross(ab, ac)
}

fn dist_above(pts: &[[f64; 3]], f: &Face, p: usize) -> f64 {
    dot3(f.normal, sub3(pts[p], pts[f.base]))
}

/// Compute the hull triangulation. Returns outward-oriented triangles over
/// the original point indices, or an error string on a degeneracy the
/// incremental construction could not resolve.
pub fn convex_hull(points: &[UnitVec3], seed: u64) -> Result<Vec<[usize; 3]>, String> {
    let n = points.len();
    if n < 4 {
        return Err(format!("hull needs at least 4 points, got {n}"));
    }
    let pts: Vec<[f64; 3]> = points.iter().map(|p| p.as_array()).collect();

    // Initial tetrahedron: spread-out quadruple.
    let i0 = 0;
    let i1 = (0..n)
        .max_by(|&a, &b| {
            let da = sq_dist(&pts, a, i0);
            let db = sq_dist(&pts, b, i0);
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    let i2 = (0..n)
        .max_by(|&a, &b| {
            let da = line_dist_sq(&pts, a, i0, i1);
            let db = line_dist_sq(&pts, b, i0, i1);
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    let base_normal = cross(sub3(pts[i1], pts[i0]), sub3(pts[i2], pts[i0]));
    let i3 = (0..n)
        .max_by(|&a, &b| {
            let da = dot3(base_normal, sub3(pts[a], pts[i0])).abs();
            let db = dot3(base_normal, sub3(pts[b], pts[i0])).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    let vol = dot3(base_normal, sub3(pts[i3], pts[i0]));
    if vol.abs() < 1e-12 {
        return Err("input points are nearly coplanar".into());
    }
    // orient (i0,i1,i2) so i3 is below
    let (a, b, c, d) = if vol < 0.0 {
        (i0, i1, i2, i3)
    } else {
        (i0, i2, i1, i3)
    };
    let mut faces: Vec<Face> = Vec::new();
    let quads = [[a, b, c], [a, c, d], [c, b, d], [b, a, d]];
    for v in quads {
        let normal = face_normal(&pts, &v);
        faces.push(Face { v, nbr: [usize::MAX; 3], normal, base: v[0], dead: false, conflicts: Vec::new() });
    }
    // stitch adjacency of the tetrahedron by matching reversed edges
    stitch_all(&mut faces);

    // assign conflicts
    let in_tet = [a, b, c, d];
    let mut order: Vec<usize> = (0..n).filter(|i| !in_tet.contains(i)).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    for &p in &order {
        let mut best = (0usize, f64::MIN);
        for (fi, f) in faces.iter().enumerate() {
            let dist = dist_above(&pts, f, p);
            if dist > best.1 {
                best = (fi, dist);
            }
        }
        if best.1 > EPS_VISIBLE {
            faces[best.0].conflicts.push(p);
        } else {
            return Err(format!("point {p} buried at initialization"));
        }
    }

    let mut assigned: Vec<usize> = vec![usize::MAX; n];
    for (fi, f) in faces.iter().enumerate() {
        for &p in &f.conflicts {
            assigned[p] = fi;
        }
    }

    for &p in &order {
        let start = assigned[p];
        if start == usize::MAX || faces[start].dead {
            return Err(format!("conflict tracking lost point {p}"));
        }
        insert_point(&pts, &mut faces, &mut assigned, p, start)?;
    }

    let mut out = Vec::new();
    let mut present = vec![false; n];
    for f in &faces {
        if !f.dead {
            out.push(f.v);
            for &v in &f.v {
                present[v] = true;
            }
        }
    }
    if let Some(missing) = (0..n).find(|&i| !present[i]) {
        return Err(format!("vertex {missing} missing from hull"));
    }
    Ok(out)
}

fn sq_dist(pts: &[[f64; 3]], a: usize, b: usize) -> f64 {
    let d = sub3(pts[a], pts[b]);
    dot3(d, d)
}

fn line_dist_sq(pts: &[[f64; 3]], p: usize, a: usize, b: usize) -> f64 {
    let ab = sub3(pts[b], pts[a]);
    let ap = sub3(pts[p], pts[a]);
    let c = cross(ab, ap);
    dot3(c, c) / dot3(ab, ab).max(1e-300)
}

fn stitch_all(faces: &mut [Face]) {
    let mut map = std::collections::HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            map.insert((f.v[k], f.v[(k + 1) % 3]), (fi, k));
        }
    }
    for fi in 0..faces.len() {
        for k in 0..3 {
            let key = (faces[fi].v[(k + 1) % 3], faces[fi].v[k]);
            faces[fi].nbr[k] = map[&key].0;
        }
    }
}

fn insert_point(
    pts: &[[f64; 3]],
    faces: &mut Vec<Face>,
    assigned: &mut [usize],
    p: usize,
    start: usize,
) -> Result<(), String> {
    // BFS the visible region
    let mut visible = Vec::new();
    let mut stack = vec![start];
    let mut mark = std::collections::HashSet::new();
    mark.insert(start);
    while let Some(fi) = stack.pop() {
        visible.push(fi);
        for k in 0..3 {
            let g = faces[fi].nbr[k];
            if !mark.contains(&g) && dist_above(pts, &faces[g], p) > EPS_VISIBLE {
                mark.insert(g);
                stack.push(g);
            }
        }
    }
    // horizon half-edges (u, v) with outside face g
    let mut horizon = Vec::new();
    for &fi in &visible {
        for k in 0..3 {
            let g = faces[fi].nbr[k];
            if !mark.contains(&g) {
                horizon.push((faces[fi].v[k], faces[fi].v[(k + 1) % 3], g));
            }
        }
    }
    if horizon.is_empty() {
        return Err(format!("empty horizon inserting point {p}"));
    }
    // collect orphans
    let mut orphans = Vec::new();
    for &fi in &visible {
        faces[fi].dead = true;
        orphans.extend(faces[fi].conflicts.drain(..));
    }
    orphans.retain(|&q| q != p && !faces[assigned[q]].dead || q != p && true);
    orphans.retain(|&q| q != p);
    orphans.sort_unstable();
    orphans.dedup();

    // cone of new faces from p over the horizon
    let mut pending: std::collections::HashMap<(usize, usize), (usize, usize)> =
        std::collections::HashMap::new();
    let mut new_faces = Vec::new();
    for &(u, v, g) in &horizon {
        let fid = faces.len();
        let vtx = [u, v, p];
        let normal = face_normal(pts, &vtx);
        faces.push(Face { v: vtx, nbr: [usize::MAX; 3], normal, base: u, dead: false, conflicts: Vec::new() });
        new_faces.push(fid);
        // edge 0: (u,v) pairs with g
        faces[fid].nbr[0] = g;
        let gf = &mut faces[g];
        for k in 0..3 {
            if gf.v[k] == v && gf.v[(k + 1) % 3] == u {
                gf.nbr[k] = fid;
            }
        }
        // edges (v,p) and (p,u) pair among new faces
        for (slot, key) in [(1usize, (v, p)), (2usize, (p, u))] {
            let rev = (key.1, key.0);
            if let Some((of, oslot)) = pending.remove(&rev) {
                faces[fid].nbr[slot] = of;
                faces[of].nbr[oslot] = fid;
            } else {
                pending.insert(key, (fid, slot));
            }
        }
    }
    if !pending.is_empty() {
        return Err(format!("horizon failed to close inserting point {p}"));
    }
    // reassign orphans
    for q in orphans {
        let mut best = (usize::MAX, EPS_VISIBLE);
        for &fid in &new_faces {
            let dist = dist_above(pts, &faces[fid], q);
            if dist > best.1 {
                best = (fid, dist);
            }
        }
        if best.0 == usize::MAX {
            return Err(format!("point {q} buried while inserting {p}"));
        }
        faces[best.0].conflicts.push(q);
        assigned[q] = best.0;
    }
    Ok(())
}
