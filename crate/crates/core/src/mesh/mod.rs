//! Indexed triangle meshes with a fixed template correspondence.
//!
//! Every shape in a cohort shares one face list; only vertex positions vary.
//! Adjacency is kept as sorted neighbor lists, never as a dense matrix.

mod io;
pub mod shapes;

use std::collections::{BTreeSet, HashMap, HashSet};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use io::{load_mesh, load_mesh_full, save_mesh, save_mesh_with, LoadedMesh, MeshFormat, PlyEncoding};

pub type Vec3 = [f64; 3];

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// A validated triangle mesh. Faces are counter-clockwise seen from outside.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Builds and validates a mesh.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = TriangleMesh { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.faces.is_empty() {
            return Err(Error::Validation("mesh has no faces".into()));
        }
        let mut referenced = vec![false; n];
        let mut directed = HashSet::with_capacity(self.faces.len() * 3);
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(Error::Validation(format!(
                        "face {fi} references vertex {v}, mesh has {n}"
                    )));
                }
                referenced[v] = true;
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Validation(format!("face {fi} is degenerate: {f:?}")));
            }
            for k in 0..3 {
                if !directed.insert((f[k], f[(k + 1) % 3])) {
                    return Err(Error::Validation(format!(
                        "inconsistent orientation: directed edge ({}, {}) used twice",
                        f[k],
                        f[(k + 1) % 3]
                    )));
                }
            }
        }
        if let Some(v) = referenced.iter().position(|r| !r) {
            return Err(Error::Validation(format!("vertex {v} is not referenced by any face")));
        }
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Validation("non-finite vertex coordinate".into()));
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Same topology, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Validation(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Validation("non-finite vertex coordinate".into()));
        }
        Ok(TriangleMesh {
            vertices,
            faces: self.faces.clone(),
        })
    }

    /// Positions flattened row-major into `N*3` values.
    pub fn flat_vertices(&self) -> Vec<f64> {
        self.vertices.iter().flatten().copied().collect()
    }

    /// Copy with every face winding reversed.
    pub fn flipped(&self) -> Self {
        TriangleMesh {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
        }
    }

    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        let mut edges = BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices() as i64 - self.edges().len() as i64 + self.n_faces() as i64
    }

    /// True when every edge is shared by exactly two oppositely oriented faces
    /// and every vertex has a single closed fan.
    pub fn is_closed_manifold(&self) -> bool {
        let mut directed = HashSet::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            for k in 0..3 {
                directed.insert((f[k], f[(k + 1) % 3]));
            }
        }
        if directed.iter().any(|&(a, b)| !directed.contains(&(b, a))) {
            return false;
        }
        let adjacency = derive_adjacency(self);
        (0..self.n_vertices()).all(|v| one_ring_ccw(self, &adjacency, v).is_ok())
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        let p = &self.vertices;
        cross(sub(p[b], p[a]), sub(p[c], p[a]))
    }

    /// Area-weighted unit vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![[0.0; 3]; self.n_vertices()];
        for (fi, f) in self.faces.iter().enumerate() {
            let n = self.face_normal(fi);
            for &v in f {
                normals[v] = add(normals[v], n);
            }
        }
        for n in &mut normals {
            let len = norm(*n);
            if len > 0.0 {
                *n = scale(*n, 1.0 / len);
            }
        }
        normals
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        norm(sub(hi, lo))
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edges();
        let total: f64 = edges
            .iter()
            .map(|&(a, b)| norm(sub(self.vertices[a], self.vertices[b])))
            .sum();
        total / edges.len() as f64
    }
}

/// Per-vertex sorted neighbor lists plus the undirected edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
    edges: BTreeSet<(usize, usize)>,
}

impl Adjacency {
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn n_vertices(&self) -> usize {
        self.neighbors.len()
    }

    pub fn contains_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Hop distance from `source` to every vertex; `usize::MAX` if unreachable.
    pub fn bfs_distances(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.neighbors.len()];
        let mut queue = std::collections::VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            for &w in &self.neighbors[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

pub fn derive_adjacency(mesh: &TriangleMesh) -> Adjacency {
    let edges = mesh.edges();
    let mut neighbors = vec![Vec::new(); mesh.n_vertices()];
    for &(a, b) in &edges {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    Adjacency { neighbors, edges }
}

/// Counter-clockwise cycle of the neighbors of `vertex`, starting at the
/// smallest neighbor index.
pub fn one_ring_ccw(mesh: &TriangleMesh, adjacency: &Adjacency, vertex: usize) -> Result<Vec<usize>> {
    let nonmanifold = |msg: String| Error::NonManifold { vertex, msg };
    // For a face (vertex, a, b) wound CCW, b follows a around `vertex`.
    let mut next: HashMap<usize, usize> = HashMap::new();
    let mut n_incident = 0;
    for f in mesh.faces() {
        if let Some(k) = f.iter().position(|&x| x == vertex) {
            n_incident += 1;
            let a = f[(k + 1) % 3];
            let b = f[(k + 2) % 3];
            if next.insert(a, b).is_some() {
                return Err(nonmanifold(format!("neighbor {a} starts two fan wedges")));
            }
        }
    }
    let ring = adjacency.neighbors(vertex);
    if ring.is_empty() {
        return Err(nonmanifold("isolated vertex".into()));
    }
    if n_incident != ring.len() {
        return Err(nonmanifold(format!(
            "{} incident faces but {} neighbors (open boundary or pinched fan)",
            n_incident,
            ring.len()
        )));
    }
    let start = ring[0];
    let mut cycle = Vec::with_capacity(ring.len());
    let mut current = start;
    loop {
        cycle.push(current);
        current = *next
            .get(&current)
            .ok_or_else(|| nonmanifold(format!("fan breaks after neighbor {current}")))?;
        if current == start {
            break;
        }
        if cycle.len() > ring.len() {
            return Err(nonmanifold("fan does not close".into()));
        }
    }
    if cycle.len() != ring.len() {
        return Err(nonmanifold(format!(
            "fan covers {} of {} neighbors",
            cycle.len(),
            ring.len()
        )));
    }
    Ok(cycle)
}

/// Identity of a template topology. Meshes with the same id share `N` and the face list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexCorrespondence {
    pub template_id: String,
    pub n_vertices: usize,
}

impl VertexCorrespondence {
    pub fn of(template: &TriangleMesh) -> Self {
        VertexCorrespondence {
            template_id: topology_hash(template),
            n_vertices: template.n_vertices(),
        }
    }

    pub fn check(&self, mesh: &TriangleMesh) -> Result<()> {
        if mesh.n_vertices() != self.n_vertices || topology_hash(mesh) != self.template_id {
            return Err(Error::Validation(format!(
                "mesh with {} vertices does not correspond to template {}",
                mesh.n_vertices(),
                self.template_id
            )));
        }
        Ok(())
    }
}

fn topology_hash(mesh: &TriangleMesh) -> String {
    let mut hasher = Sha256::new();
    hasher.update((mesh.n_vertices() as u64).to_le_bytes());
    for f in mesh.faces() {
        for &v in f {
            hasher.update((v as u64).to_le_bytes());
        }
    }
    crate::util::hex(&hasher.finalize()[..8])
}
