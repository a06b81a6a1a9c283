//! Multi-level template hierarchy: QEM pooling, barycentric un-pooling and
//! spiral tables per level, built once and cached.

mod barycentric;
mod qem;
mod sparse;

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::spiral::{build_spiral_table, read_array, SpiralTable};
use crate::util::sha256_hex;

pub use barycentric::{barycentric_up, closest_point_on_triangle};
pub use qem::{qem_decimate, vertex_quadrics, Decimation, Quadric};
pub use sparse::SparseMatrix;

const MAGIC: &[u8; 4] = b"TMHC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyConfig {
    /// Vertex reduction factor per pooling step.
    pub factors: Vec<usize>,
    /// Spiral length per level (`factors.len() + 1` entries, or one broadcast value).
    pub spiral_lengths: Vec<usize>,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            factors: vec![4, 4],
            spiral_lengths: vec![9],
        }
    }
}

impl HierarchyConfig {
    fn spiral_length(&self, level: usize) -> usize {
        match self.spiral_lengths.as_slice() {
            [l] => *l,
            ls => ls[level],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshHierarchy {
    meshes: Vec<TriangleMesh>,
    spirals: Vec<SpiralTable>,
    /// `down[k]`: level k -> level k+1.
    down: Vec<SparseMatrix>,
    /// `up[k]`: level k+1 -> level k.
    up: Vec<SparseMatrix>,
    key: String,
}

impl MeshHierarchy {
    pub fn n_levels(&self) -> usize {
        self.meshes.len()
    }

    pub fn mesh(&self, level: usize) -> &TriangleMesh {
        &self.meshes[level]
    }

    pub fn spirals(&self, level: usize) -> &SpiralTable {
        &self.spirals[level]
    }

    pub fn down(&self, level: usize) -> &SparseMatrix {
        &self.down[level]
    }

    pub fn up(&self, level: usize) -> &SparseMatrix {
        &self.up[level]
    }

    pub fn n_vertices(&self, level: usize) -> usize {
        self.meshes[level].n_vertices()
    }

    /// Identifies template + config; a cache is reused only when keys match.
    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let key = self.key.as_bytes();
        w.write_all(&(key.len() as u64).to_le_bytes())?;
        w.write_all(key)?;
        w.write_all(&(self.meshes.len() as u64).to_le_bytes())?;
        for (mesh, spirals) in self.meshes.iter().zip(&self.spirals) {
            w.write_all(&(mesh.n_vertices() as u64).to_le_bytes())?;
            w.write_all(&(mesh.n_faces() as u64).to_le_bytes())?;
            for c in mesh.vertices().iter().flatten() {
                w.write_all(&c.to_le_bytes())?;
            }
            for i in mesh.faces().iter().flatten() {
                w.write_all(&(*i as u64).to_le_bytes())?;
            }
            spirals.write_to(w)?;
        }
        for (d, u) in self.down.iter().zip(&self.up) {
            d.write_to(w)?;
            u.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let magic: [u8; 4] = read_array(r)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a hierarchy cache".into()));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != VERSION {
            return Err(Error::Format(format!("hierarchy cache version {version}")));
        }
        let key_len = u64::from_le_bytes(read_array(r)?) as usize;
        let mut key = vec![0u8; key_len];
        crate::spiral::read_exact(r, &mut key)?;
        let key = String::from_utf8(key).map_err(|_| Error::Format("bad cache key".into()))?;
        let n_levels = u64::from_le_bytes(read_array(r)?) as usize;
        let mut meshes = Vec::with_capacity(n_levels);
        let mut spirals = Vec::with_capacity(n_levels);
        for _ in 0..n_levels {
            let nv = u64::from_le_bytes(read_array(r)?) as usize;
            let nf = u64::from_le_bytes(read_array(r)?) as usize;
            let mut vertices = Vec::with_capacity(nv);
            for _ in 0..nv {
                let mut v = [0.0; 3];
                for c in &mut v {
                    *c = f64::from_le_bytes(read_array(r)?);
                }
                vertices.push(v);
            }
            let mut faces = Vec::with_capacity(nf);
            for _ in 0..nf {
                let mut f = [0usize; 3];
                for i in &mut f {
                    *i = u64::from_le_bytes(read_array(r)?) as usize;
                }
                faces.push(f);
            }
            meshes.push(TriangleMesh::new(vertices, faces)?);
            spirals.push(SpiralTable::read_from(r)?);
        }
        let mut down = Vec::new();
        let mut up = Vec::new();
        for _ in 1..n_levels {
            down.push(SparseMatrix::read_from(r)?);
            up.push(SparseMatrix::read_from(r)?);
        }
        Ok(MeshHierarchy {
            meshes,
            spirals,
            down,
            up,
            key,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
    }

    /// Loads the cache at `path` if it was built from the same template and config,
    /// otherwise builds and writes it.
    pub fn load_or_build(
        path: &Path,
        template: &TriangleMesh,
        config: &HierarchyConfig,
        rebuild: bool,
    ) -> Result<Self> {
        let key = cache_key(template, config);
        if !rebuild && path.exists() {
            if let Ok(h) = Self::load(path) {
                if h.key == key {
                    return Ok(h);
                }
            }
        }
        let h = build_hierarchy(template, config)?;
        h.save(path)?;
        Ok(h)
    }
}

fn cache_key(template: &TriangleMesh, config: &HierarchyConfig) -> String {
    let mut bytes = Vec::new();
    for c in template.vertices().iter().flatten() {
        bytes.extend_from_slice(&c.to_le_bytes());
    }
    for i in template.faces().iter().flatten() {
        bytes.extend_from_slice(&(*i as u64).to_le_bytes());
    }
    bytes.extend_from_slice(format!("{:?}|{:?}", config.factors, config.spiral_lengths).as_bytes());
    sha256_hex(&bytes)
}

/// Chains QEM decimation and barycentric un-pooling, one level per factor.
pub fn build_hierarchy(template: &TriangleMesh, config: &HierarchyConfig) -> Result<MeshHierarchy> {
    let n_levels = config.factors.len() + 1;
    if config.spiral_lengths.len() != 1 && config.spiral_lengths.len() != n_levels {
        return Err(Error::Validation(format!(
            "{} spiral lengths for {} levels",
            config.spiral_lengths.len(),
            n_levels
        )));
    }
    if let Some(f) = config.factors.iter().find(|&&f| f < 2) {
        return Err(Error::Validation(format!("reduction factor {f} must exceed 1")));
    }
    let mut meshes = vec![template.clone()];
    let mut down = Vec::new();
    let mut up = Vec::new();
    for &factor in &config.factors {
        let fine = meshes.last().expect("non-empty");
        let target = fine.n_vertices() / factor;
        if target < 4 {
            return Err(Error::Validation(format!(
                "level with {} vertices cannot be reduced by {factor}",
                fine.n_vertices()
            )));
        }
        let dec = qem_decimate(fine, target)?;
        up.push(barycentric_up(fine, &dec.mesh));
        down.push(dec.down);
        meshes.push(dec.mesh);
    }
    let spirals = meshes
        .iter()
        .enumerate()
        .map(|(level, m)| build_spiral_table(m, config.spiral_length(level), level))
        .collect::<Result<_>>()?;
    Ok(MeshHierarchy {
        meshes,
        spirals,
        down,
        up,
        key: cache_key(template, config),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes::{ellipsoid, icosphere};
    use crate::mesh::{norm, sub};

    #[test]
    fn default_levels_on_icosphere3() {
        let h = build_hierarchy(&icosphere(3), &HierarchyConfig::default()).unwrap();
        let counts: Vec<usize> = (0..h.n_levels()).map(|k| h.n_vertices(k)).collect();
        assert_eq!(counts, vec![642, 160, 40]);
        for k in 0..h.n_levels() {
            assert!(h.mesh(k).is_closed_manifold());
            assert_eq!(h.mesh(k).euler_characteristic(), 2);
            assert_eq!(h.spirals(k).n_vertices(), h.n_vertices(k));
        }
    }

    #[test]
    fn no_factors_is_single_level() {
        let h = build_hierarchy(&icosphere(1), &HierarchyConfig { factors: vec![], spiral_lengths: vec![9] })
            .unwrap();
        assert_eq!(h.n_levels(), 1);
    }

    #[test]
    fn up_rows_are_convex_and_survivors_can_be_exact() {
        let fine = icosphere(2);
        let dec = qem_decimate(&fine, 40).unwrap();
        let up = barycentric_up(&fine, &dec.mesh);
        for r in 0..up.rows() {
            let row: Vec<_> = up.row(r).collect();
            assert!(row.len() <= 3 && !row.is_empty());
            assert!(row.iter().all(|&(_, w)| w > 0.0));
            assert!((row.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // A fine vertex placed on a coarse corner maps with weight 1 to it.
        let moved: Vec<_> = fine
            .vertices()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                dec.survivors
                    .iter()
                    .position(|&s| s == i)
                    .map_or(*v, |k| dec.mesh.vertices()[k])
            })
            .collect();
        let fine_on_corners = fine.with_vertices(moved).unwrap();
        let up = barycentric_up(&fine_on_corners, &dec.mesh);
        for (k, &s) in dec.survivors.iter().enumerate() {
            let row: Vec<_> = up.row(s).collect();
            let p = dec.mesh.vertices()[k];
            let rebuilt = row.iter().fold([0.0; 3], |acc, &(c, w)| {
                crate::mesh::add(acc, crate::mesh::scale(dec.mesh.vertices()[c], w))
            });
            assert!(norm(sub(rebuilt, p)) < 1e-12);
            assert!(row.iter().any(|&(c, w)| (w - 1.0).abs() < 1e-12 && norm(sub(dec.mesh.vertices()[c], p)) == 0.0));
        }
    }

    #[test]
    fn up_residual_is_surface_distance() {
        let fine = ellipsoid(2, [2.0, 1.0, 1.0]);
        let dec = qem_decimate(&fine, 40).unwrap();
        let up = barycentric_up(&fine, &dec.mesh);
        let cv = dec.mesh.vertices();
        for (i, &p) in fine.vertices().iter().enumerate() {
            let q = up.row(i).fold([0.0; 3], |acc, (c, w)| {
                crate::mesh::add(acc, crate::mesh::scale(cv[c], w))
            });
            let brute = dec
                .mesh
                .faces()
                .iter()
                .map(|f| {
                    let (c, _) = closest_point_on_triangle(p, cv[f[0]], cv[f[1]], cv[f[2]]);
                    norm(sub(p, c))
                })
                .fold(f64::INFINITY, f64::min);
            assert!((norm(sub(p, q)) - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn up_down_round_trip_is_within_an_edge() {
        let template = ellipsoid(3, [2.0, 1.0, 1.0]);
        let h = build_hierarchy(&template, &HierarchyConfig::default()).unwrap();
        let mut x = template.flat_vertices();
        for k in 0..h.n_levels() - 1 {
            let fine_positions = h.mesh(k).flat_vertices();
            let pooled = h.down(k).apply(&fine_positions, 1, 3);
            let back = h.up(k).apply(&pooled, 1, 3);
            let max_disp = back
                .chunks(3)
                .zip(fine_positions.chunks(3))
                .map(|(a, b)| norm(sub([a[0], a[1], a[2]], [b[0], b[1], b[2]])))
                .fold(0.0, f64::max);
            let edge = h.mesh(k).mean_edge_length();
            assert!(max_disp < edge, "level {k}: {max_disp} >= {edge}");
            x = pooled;
        }
        assert_eq!(x.len(), h.n_vertices(h.n_levels() - 1) * 3);
    }

    #[test]
    fn cache_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let template = icosphere(2);
        let cfg = HierarchyConfig::default();
        let p = dir.path().join("h.bin");
        let a = MeshHierarchy::load_or_build(&p, &template, &cfg, false).unwrap();
        let bytes_a = std::fs::read(&p).unwrap();
        let b = MeshHierarchy::load_or_build(&p, &template, &cfg, false).unwrap();
        assert_eq!(a, b);
        let c = MeshHierarchy::load_or_build(&p, &template, &cfg, true).unwrap();
        assert_eq!(a, c);
        assert_eq!(bytes_a, std::fs::read(&p).unwrap());
    }
}
