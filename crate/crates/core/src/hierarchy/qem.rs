//! Quadric-error-metric decimation by edge contraction.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use ordered_float::OrderedFloat;

use crate::error::{Error, Result};
use crate::mesh::{add, cross, dot, norm, scale, sub, TriangleMesh, Vec3};

use super::sparse::SparseMatrix;

/// Symmetric 4x4 quadric, upper triangle stored row by row.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Quadric([f64; 10]);

impl Quadric {
    /// Squared-distance quadric of the plane `n·x + d = 0` (`n` unit length).
    pub fn from_plane(n: Vec3, d: f64) -> Self {
        let [a, b, c] = n;
        Quadric([
            a * a,
            a * b,
            a * c,
            a * d,
            b * b,
            b * c,
            b * d,
            c * c,
            c * d,
            d * d,
        ])
    }

    pub fn add(&self, other: &Quadric) -> Quadric {
        let mut q = self.0;
        for (x, y) in q.iter_mut().zip(other.0.iter()) {
            *x += y;
        }
        Quadric(q)
    }

    /// vᵀ Q v with v = (p, 1).
    pub fn error(&self, p: Vec3) -> f64 {
        let [a, b, c, d, e, f, g, h, i, j] = self.0;
        let [x, y, z] = p;
        a * x * x + 2.0 * b * x * y + 2.0 * c * x * z + 2.0 * d * x
            + e * y * y
            + 2.0 * f * y * z
            + 2.0 * g * y
            + h * z * z
            + 2.0 * i * z
            + j
    }

    /// Minimizer of the quadric, or `None` when the system is singular.
    pub fn optimum(&self) -> Option<Vec3> {
        let [a, b, c, d, e, f, g, h, i, _] = self.0;
        let m = [[a, b, c], [b, e, f], [c, f, h]];
        let rhs = [-d, -g, -i];
        let det = det3(m);
        if det.abs() < 1e-12 {
            return None;
        }
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let mut mk = m;
            for r in 0..3 {
                mk[r][k] = rhs[r];
            }
            *o = det3(mk) / det;
        }
        Some(out)
    }
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Result of one decimation level.
#[derive(Debug, Clone)]
pub struct Decimation {
    pub mesh: TriangleMesh,
    /// `N_coarse x N_fine`, uniform average over each contracted cluster.
    pub down: SparseMatrix,
    /// Fine-mesh index of the vertex that survived as each coarse vertex.
    pub survivors: Vec<usize>,
}

// Stand-in neighbor for boundary edges in the link condition.
const BOUNDARY: usize = usize::MAX;

struct State {
    positions: Vec<Vec3>,
    quadrics: Vec<Quadric>,
    alive: Vec<bool>,
    stamp: Vec<u64>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vertex_faces: Vec<Vec<usize>>,
    clusters: Vec<Vec<usize>>,
}

type HeapEntry = Reverse<(OrderedFloat<f64>, usize, usize, u64, u64)>;

impl State {
    fn neighbors(&self, v: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &f in &self.vertex_faces[v] {
            for &w in &self.faces[f] {
                if w != v {
                    out.insert(w);
                }
            }
        }
        out
    }

    /// Third vertices of faces on edge (a, b).
    fn edge_opposites(&self, a: usize, b: usize) -> Vec<usize> {
        self.vertex_faces[a]
            .iter()
            .filter(|&&f| self.faces[f].contains(&b))
            .map(|&f| *self.faces[f].iter().find(|&&w| w != a && w != b).unwrap())
            .collect()
    }

    /// Neighbors, plus `BOUNDARY` when the vertex lies on an open boundary.
    fn link(&self, v: usize) -> BTreeSet<usize> {
        let mut out = self.neighbors(v);
        if out.iter().any(|&w| self.edge_opposites(v, w).len() < 2) {
            out.insert(BOUNDARY);
        }
        out
    }

    fn contraction(&self, a: usize, b: usize) -> (f64, Vec3) {
        let q = self.quadrics[a].add(&self.quadrics[b]);
        let target = q.optimum().unwrap_or_else(|| {
            let (pa, pb) = (self.positions[a], self.positions[b]);
            let mid = scale(add(pa, pb), 0.5);
            let mut best = (q.error(pa), pa);
            for p in [pb, mid] {
                let e = q.error(p);
                if e < best.0 {
                    best = (e, p);
                }
            }
            best.1
        });
        (q.error(target).max(0.0), target)
    }

    fn push_edge(&self, heap: &mut BinaryHeap<HeapEntry>, a: usize, b: usize) {
        let (lo, hi) = (a.min(b), a.max(b));
        let (cost, _) = self.contraction(lo, hi);
        heap.push(Reverse((OrderedFloat(cost), lo, hi, self.stamp[lo], self.stamp[hi])));
    }

    fn is_legal(&self, a: usize, b: usize, target: Vec3) -> bool {
        // Link condition keeps the surface a 2-manifold.
        let mut opposite: BTreeSet<usize> = self.edge_opposites(a, b).into_iter().collect();
        if opposite.len() < 2 {
            opposite.insert(BOUNDARY);
        }
        let la = self.link(a);
        let lb = self.link(b);
        let common: BTreeSet<usize> = la.intersection(&lb).copied().collect();
        if common != opposite {
            return false;
        }
        // Surviving faces: no duplicates, no collapse to zero area, no flipped normals.
        let mut seen = BTreeSet::new();
        for &v in &[a, b] {
            for &f in &self.vertex_faces[v] {
                let face = self.faces[f];
                if face.contains(&a) && face.contains(&b) {
                    continue;
                }
                let renamed = face.map(|w| if w == b { a } else { w });
                let mut key = renamed;
                key.sort_unstable();
                if !seen.insert(key) {
                    return false;
                }
                let pos = |w: usize| if w == a || w == b { target } else { self.positions[w] };
                let before = tri_normal(
                    self.positions[face[0]],
                    self.positions[face[1]],
                    self.positions[face[2]],
                );
                let after = tri_normal(pos(face[0]), pos(face[1]), pos(face[2]));
                if dot(before, after) < 0.0 || norm(after) <= 1e-12 * norm(before) {
                    return false;
                }
            }
        }
        true
    }

    fn collapse(&mut self, a: usize, b: usize, target: Vec3) {
        self.positions[a] = target;
        self.quadrics[a] = self.quadrics[a].add(&self.quadrics[b]);
        let moved = std::mem::take(&mut self.clusters[b]);
        self.clusters[a].extend(moved);
        self.clusters[a].sort_unstable();
        let b_faces = std::mem::take(&mut self.vertex_faces[b]);
        for f in b_faces {
            if self.faces[f].contains(&a) {
                self.face_alive[f] = false;
                for &w in &self.faces[f] {
                    if w != b {
                        self.vertex_faces[w].retain(|&g| g != f);
                    }
                }
            } else {
                for w in self.faces[f].iter_mut() {
                    if *w == b {
                        *w = a;
                    }
                }
                self.vertex_faces[a].push(f);
            }
        }
        self.vertex_faces[a].sort_unstable();
        self.alive[b] = false;
        self.stamp[a] += 1;
        self.stamp[b] += 1;
    }
}

fn tri_normal(a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    cross(sub(b, a), sub(c, a))
}

/// Per-vertex quadrics summed over incident face planes.
pub fn vertex_quadrics(mesh: &TriangleMesh) -> Vec<Quadric> {
    let mut quadrics = vec![Quadric::default(); mesh.n_vertices()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let n = mesh.face_normal(fi);
        let len = norm(n);
        if len == 0.0 {
            continue;
        }
        let n = scale(n, 1.0 / len);
        let d = -dot(n, mesh.vertices()[f[0]]);
        let q = Quadric::from_plane(n, d);
        for &v in f {
            quadrics[v] = quadrics[v].add(&q);
        }
    }
    quadrics
}

/// Contracts edges in ascending quadric cost until `target` vertices remain.
///
/// The surviving endpoint of a contraction is the smaller index; it moves to
/// the optimal contraction point. Queue ties are broken by `(min, max)` endpoint.
pub fn qem_decimate(mesh: &TriangleMesh, target: usize) -> Result<Decimation> {
    let n = mesh.n_vertices();
    assert!(target >= 1, "target vertex count must be positive");
    if target >= n {
        return Ok(Decimation {
            mesh: mesh.clone(),
            down: SparseMatrix::identity(n),
            survivors: (0..n).collect(),
        });
    }
    let mut vertex_faces = vec![Vec::new(); n];
    for (fi, f) in mesh.faces().iter().enumerate() {
        for &v in f {
            vertex_faces[v].push(fi);
        }
    }
    let mut state = State {
        positions: mesh.vertices().to_vec(),
        quadrics: vertex_quadrics(mesh),
        alive: vec![true; n],
        stamp: vec![0; n],
        faces: mesh.faces().to_vec(),
        face_alive: vec![true; mesh.n_faces()],
        vertex_faces,
        clusters: (0..n).map(|v| vec![v]).collect(),
    };
    let mut heap = BinaryHeap::new();
    for (a, b) in mesh.edges() {
        state.push_edge(&mut heap, a, b);
    }
    let mut remaining = n;
    while remaining > target {
        let Some(Reverse((_, a, b, sa, sb))) = heap.pop() else {
            return Err(Error::DecimationStuck {
                reached: remaining,
                target,
            });
        };
        if !state.alive[a] || !state.alive[b] || state.stamp[a] != sa || state.stamp[b] != sb {
            continue;
        }
        let (_, p) = state.contraction(a, b);
        if !state.is_legal(a, b, p) {
            continue;
        }
        state.collapse(a, b, p);
        remaining -= 1;
        // Costs change around `a`; legality may change one ring further out.
        let ring = state.neighbors(a);
        for &w in &ring {
            state.push_edge(&mut heap, a, w);
        }
        for &w in &ring {
            for x in state.neighbors(w) {
                if x != a {
                    state.push_edge(&mut heap, w, x);
                }
            }
        }
    }

    let survivors: Vec<usize> = (0..n).filter(|&v| state.alive[v]).collect();
    let mut new_index = vec![usize::MAX; n];
    for (k, &v) in survivors.iter().enumerate() {
        new_index[v] = k;
    }
    let vertices = survivors.iter().map(|&v| state.positions[v]).collect();
    let faces = state
        .faces
        .iter()
        .zip(&state.face_alive)
        .filter(|(_, &alive)| alive)
        .map(|(f, _)| f.map(|v| new_index[v]))
        .collect();
    let coarse = TriangleMesh::new(vertices, faces)?;
    let down = SparseMatrix::from_rows(
        n,
        survivors
            .iter()
            .map(|&v| {
                let w = 1.0 / state.clusters[v].len() as f64;
                state.clusters[v].iter().map(|&c| (c, w)).collect()
            })
            .collect(),
    );
    Ok(Decimation {
        mesh: coarse,
        down,
        survivors,
    })
}
