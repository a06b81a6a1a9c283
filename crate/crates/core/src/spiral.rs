//! Fixed-length spiral vertex sequences, computed once per template level.
//!
//! A spiral starts at its center vertex, walks the first ring counter-clockwise
//! from the smallest neighbor index, then each further ring counter-clockwise,
//! entering it next to the last vertex of the previous ring.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{derive_adjacency, one_ring_ccw, Adjacency, TriangleMesh};

/// Padding index for spiral slots past the end of a connected component.
pub const FILLER: usize = usize::MAX;

const MAGIC: &[u8; 4] = b"SPRL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpiralTable {
    level: usize,
    length: usize,
    indices: Vec<usize>,
}

impl SpiralTable {
    pub fn level(&self) -> usize {
        self.level
    }

    /// Spiral length `l`.
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn n_vertices(&self) -> usize {
        self.indices.len() / self.length.max(1)
    }

    pub fn row(&self, v: usize) -> &[usize] {
        &self.indices[v * self.length..(v + 1) * self.length]
    }

    /// Row-major `N x l` indices, `FILLER` for padding.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn has_filler(&self) -> bool {
        self.indices.contains(&FILLER)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.level as u64).to_le_bytes())?;
        w.write_all(&(self.n_vertices() as u64).to_le_bytes())?;
        w.write_all(&(self.length as u64).to_le_bytes())?;
        for &i in &self.indices {
            let v: i64 = if i == FILLER { -1 } else { i as i64 };
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a spiral table".into()));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != VERSION {
            return Err(Error::Format(format!("spiral table version {version}")));
        }
        let level = u64::from_le_bytes(read_array(r)?) as usize;
        let n = u64::from_le_bytes(read_array(r)?) as usize;
        let length = u64::from_le_bytes(read_array(r)?) as usize;
        let mut indices = Vec::with_capacity(n * length);
        for _ in 0..n * length {
            let v = i64::from_le_bytes(read_array(r)?);
            indices.push(match v {
                -1 => FILLER,
                v if v >= 0 && (v as usize) < n => v as usize,
                v => return Err(Error::Format(format!("spiral index {v} out of range"))),
            });
        }
        Ok(SpiralTable {
            level,
            length,
            indices,
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
}

pub(crate) fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated binary data: {e}")))
}

pub(crate) fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

/// Spiral of `length` vertices around `vertex`.
pub fn build_spiral(
    mesh: &TriangleMesh,
    adjacency: &Adjacency,
    vertex: usize,
    length: usize,
) -> Result<Vec<usize>> {
    spiral_with(adjacency, vertex, length, |v| one_ring_ccw(mesh, adjacency, v))
}

fn spiral_with(
    adjacency: &Adjacency,
    center: usize,
    length: usize,
    mut ring_of: impl FnMut(usize) -> Result<Vec<usize>>,
) -> Result<Vec<usize>> {
    assert!(length >= 1, "spiral length must be positive");
    let mut spiral = vec![center];
    if length == 1 {
        return Ok(spiral);
    }
    let dist = adjacency.bfs_distances(center);
    let mut seen = vec![false; adjacency.n_vertices()];
    seen[center] = true;
    let mut ring = ring_of(center)?;
    let mut r = 1;
    while !ring.is_empty() && spiral.len() < length {
        for &v in &ring {
            seen[v] = true;
        }
        spiral.extend(ring.iter().take(length - spiral.len()));
        if spiral.len() == length {
            break;
        }
        r += 1;
        ring = next_ring(&ring, r, &dist, &mut seen, &mut ring_of)?;
    }
    spiral.resize(length, FILLER);
    Ok(spiral)
}

/// Orders the vertices at hop distance `r` by sweeping the previous ring,
/// starting from its last vertex, and collecting each vertex's outward fan in
/// counter-clockwise order.
fn next_ring(
    prev: &[usize],
    r: usize,
    dist: &[usize],
    seen: &mut [bool],
    ring_of: &mut impl FnMut(usize) -> Result<Vec<usize>>,
) -> Result<Vec<usize>> {
    let mut ring = Vec::new();
    let k = prev.len();
    for step in 0..k {
        let u = prev[(k - 1 + step) % k];
        let cycle = ring_of(u)?;
        let m = cycle.len();
        let outer = |p: usize| dist[cycle[p % m]] == r;
        let Some(start) = (0..m).find(|&p| outer(p) && !outer(p + m - 1)) else {
            continue;
        };
        for p in start..start + m {
            let w = cycle[p % m];
            if dist[w] == r && !seen[w] {
                seen[w] = true;
                ring.push(w);
            }
        }
    }
    Ok(ring)
}

/// Spiral rows for every vertex of `mesh`. Deterministic.
pub fn build_spiral_table(mesh: &TriangleMesh, length: usize, level: usize) -> Result<SpiralTable> {
    let adjacency = derive_adjacency(mesh);
    let rings: Vec<Vec<usize>> = (0..mesh.n_vertices())
        .map(|v| one_ring_ccw(mesh, &adjacency, v))
        .collect::<Result<_>>()?;
    let mut indices = Vec::with_capacity(mesh.n_vertices() * length);
    for v in 0..mesh.n_vertices() {
        indices.extend(spiral_with(&adjacency, v, length, |u| Ok(rings[u].clone()))?);
    }
    Ok(SpiralTable {
        level,
        length,
        indices,
    })
}
