//! Procedural meshes used as templates and test fixtures.

use std::collections::HashMap;

use super::{norm, scale, TriangleMesh, Vec3};

pub fn single_triangle() -> TriangleMesh {
    TriangleMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        vec![[0, 1, 2]],
    )
    .expect("valid triangle")
}

/// Regular tetrahedron with outward-facing windings.
pub fn tetrahedron() -> TriangleMesh {
    TriangleMesh::new(
        vec![
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ],
        vec![[1, 3, 2], [0, 2, 3], [0, 3, 1], [0, 1, 2]],
    )
    .expect("valid tetrahedron")
}

/// Unit icosphere. Subdivision `k` has `10 * 4^k + 2` vertices.
pub fn icosphere(subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| scale(*v, 1.0 / norm(*v)))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = scale(super::add(vertices[a], vertices[b]), 0.5);
                vertices.push(scale(m, 1.0 / norm(m)));
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    TriangleMesh::new(vertices, faces).expect("valid icosphere")
}

/// Icosphere stretched along the axes; the default cohort template uses (2, 1, 1) ratios.
pub fn ellipsoid(subdivisions: usize, radii: Vec3) -> TriangleMesh {
    let sphere = icosphere(subdivisions);
    let vertices = sphere
        .vertices()
        .iter()
        .map(|v| [v[0] * radii[0], v[1] * radii[1], v[2] * radii[2]])
        .collect();
    sphere.with_vertices(vertices).expect("same vertex count")
}

/// Flat `n x n` vertex grid over the unit square in the z = 0 plane, normals +z.
pub fn planar_grid(n: usize) -> TriangleMesh {
    assert!(n >= 2);
    let step = 1.0 / (n - 1) as f64;
    let mut vertices = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            vertices.push([i as f64 * step, j as f64 * step, 0.0]);
        }
    }
    let mut faces = Vec::new();
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let a = j * n + i;
            let b = a + 1;
            let c = a + n;
            let d = c + 1;
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    TriangleMesh::new(vertices, faces).expect("valid grid")
}
