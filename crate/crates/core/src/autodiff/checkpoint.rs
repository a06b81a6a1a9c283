//! Binary checkpoints: header then `(name, shape, raw f64)` records.

use std::path::Path;

use super::ParamStore;
use crate::error::{Error, Result};
use crate::spiral::{read_array, read_exact};

const MAGIC: &[u8; 4] = b"TMCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        Checkpoint {
            records: store
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.tensor.shape().to_vec(), p.tensor.to_vec()))
                .collect(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.records.push((name.into(), shape, data));
    }

    pub fn get(&self, name: &str) -> Option<&(String, Vec<usize>, Vec<f64>)> {
        self.records.iter().find(|r| r.0 == name)
    }

    /// Copies every store parameter from the record with the same name and shape.
    pub fn load_into(&self, store: &ParamStore) -> Result<()> {
        for p in store.params() {
            let (_, shape, data) = self
                .get(&p.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {}", p.name)))?;
            if shape.as_slice() != p.tensor.shape() {
                return Err(Error::shape("checkpoint", p.tensor.shape(), shape));
            }
            p.tensor.set_data(data);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for (name, shape, data) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let r = &mut &bytes[..];
        let magic: [u8; 4] = read_array(r)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint".into()));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version}")));
        }
        let n = u64::from_le_bytes(read_array(r)?) as usize;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let len = u32::from_le_bytes(read_array(r)?) as usize;
            let mut name = vec![0u8; len];
            read_exact(r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("bad record name".into()))?;
            let rank = u32::from_le_bytes(read_array(r)?) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(read_array(r)?) as usize);
            }
            let count: usize = shape.iter().product();
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(f64::from_le_bytes(read_array(r)?));
            }
            records.push((name, shape, data));
        }
        Ok(Checkpoint { records })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_exact_reload() {
        let mut store = ParamStore::new();
        store.register("a/w", &[2, 2], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap();
        store.register("b", &[3], vec![1.0, 2.0, 3.0]).unwrap();
        let ckpt = Checkpoint::from_store(&store);
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        store.get("b").unwrap().set_data(&[0.0; 3]);
        back.load_into(&store).unwrap();
        assert_eq!(store.get("b").unwrap().to_vec(), vec![1.0, 2.0, 3.0]);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
