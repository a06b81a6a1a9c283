//! Closest point on a triangle and barycentric un-pooling weights.

use crate::mesh::{add, dot, scale, sub, TriangleMesh, Vec3};

use super::sparse::SparseMatrix;

/// Closest point on triangle `abc` to `p` and its barycentric weights `(wa, wb, wc)`.
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, [f64; 3]) {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (add(a, scale(ab, v)), [1.0 - v, v, 0.0]);
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (add(a, scale(ac, w)), [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (add(b, scale(sub(c, b), w)), [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (add(a, add(scale(ab, v), scale(ac, w))), [1.0 - v - w, v, w])
}

/// `N_fine x N_coarse` matrix: each fine vertex as the barycentric combination
/// of the closest point on the coarse surface.
pub fn barycentric_up(fine: &TriangleMesh, coarse: &TriangleMesh) -> SparseMatrix {
    let cv = coarse.vertices();
    let rows = fine
        .vertices()
        .iter()
        .map(|&p| {
            let mut best = (f64::INFINITY, 0usize, [0.0; 3]);
            for (fi, f) in coarse.faces().iter().enumerate() {
                let (q, w) = closest_point_on_triangle(p, cv[f[0]], cv[f[1]], cv[f[2]]);
                let d = sub(p, q);
                let d2 = dot(d, d);
                if d2 < best.0 {
                    best = (d2, fi, w);
                }
            }
            let face = coarse.faces()[best.1];
            let clamped = best.2.map(|w| w.max(0.0));
            let total: f64 = clamped.iter().sum();
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(3);
            for k in 0..3 {
                let w = clamped[k] / total;
                if w > 0.0 {
                    match row.iter_mut().find(|(c, _)| *c == face[k]) {
                        Some(entry) => entry.1 += w,
                        None => row.push((face[k], w)),
                    }
                }
            }
            row
        })
        .collect();
    SparseMatrix::from_rows(coarse.n_vertices(), rows)
}
