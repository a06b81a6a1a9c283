//! Learnable building blocks: spiral convolution, mesh pooling, and a pre-norm
//! transformer encoder with learnable position embeddings.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::hierarchy::SparseMatrix;
use crate::spiral::SpiralTable;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine map `x W + b` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Linear {
            weight: store.xavier(&format!("{name}.weight"), fan_in, fan_out, rng)?,
            bias: store.constant(&format!("{name}.bias"), &[fan_out], 0.0)?,
        })
    }

    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Linear {
            weight: store.constant(&format!("{name}.weight"), &[fan_in, fan_out], 0.0)?,
            bias: store.constant(&format!("{name}.bias"), &[fan_out], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

/// `x_i <- γ(concat_{j in S(i, l)} x_j)` with γ an affine map, optionally followed by ELU.
#[derive(Debug, Clone)]
pub struct SpiralConv {
    table: Rc<Vec<usize>>,
    length: usize,
    n_vertices: usize,
    pub linear: Linear,
    pub activation: bool,
}

impl SpiralConv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        spirals: &SpiralTable,
        c_in: usize,
        c_out: usize,
        activation: bool,
        zero_init: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = spirals.length() * c_in;
        let linear = if zero_init {
            Linear::zeros(store, name, fan_in, c_out)?
        } else {
            Linear::new(store, name, fan_in, c_out, rng)?
        };
        Ok(SpiralConv {
            table: Rc::new(spirals.indices().to_vec()),
            length: spirals.length(),
            n_vertices: spirals.n_vertices(),
            linear,
            activation,
        })
    }

    /// `[B, N, C_in] -> [B, N, C_out]` (also accepts `[N, C_in]`).
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let s = features.shape();
        if s.len() < 2 || s[s.len() - 2] != self.n_vertices {
            return Err(Error::shape("spiral_conv", s, &[self.n_vertices]));
        }
        let gathered = features.gather_rows(self.table.clone(), self.length)?;
        let out = self.linear.forward(&gathered)?;
        Ok(if self.activation { out.elu() } else { out })
    }
}

/// Down-sampling by a fixed pooling matrix, `[B, N_k, C] -> [B, N_{k+1}, C]`.
pub fn pool(features: &Tensor, down: &Rc<SparseMatrix>) -> Result<Tensor> {
    features.spmm(down.clone())
}

/// Barycentric up-sampling, `[B, N_{k+1}, C] -> [B, N_k, C]`.
pub fn unpool(features: &Tensor, up: &Rc<SparseMatrix>) -> Result<Tensor> {
    features.spmm(up.clone())
}

/// Layer normalization over the last axis with learnable scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.constant(&format!("{name}.gamma"), &[width], 1.0)?,
            beta: store.constant(&format!("{name}.beta"), &[width], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(LAYER_NORM_EPS)?.mul(&self.gamma)?.add(&self.beta)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Validation(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            heads,
            query: Linear::new(store, &format!("{name}.query"), width, width, rng)?,
            key: Linear::new(store, &format!("{name}.key"), width, width, rng)?,
            value: Linear::new(store, &format!("{name}.value"), width, width, rng)?,
            output: Linear::new(store, &format!("{name}.output"), width, width, rng)?,
        })
    }

    /// Returns the `[S, D]` output and the `[heads, S, S]` attention weights.
    /// Keys flagged in `key_mask` receive zero weight from every query.
    pub fn forward(&self, x: &Tensor, key_mask: &[bool]) -> Result<(Tensor, Tensor)> {
        let s = x.shape();
        if s.len() != 2 || s[0] != key_mask.len() {
            return Err(Error::shape("attention", s, &[key_mask.len()]));
        }
        if key_mask.iter().all(|&m| m) {
            return Err(Error::AllMasked);
        }
        let (len, width) = (s[0], s[1]);
        let head_dim = width / self.heads;
        let split = |t: Tensor| -> Result<Tensor> {
            t.reshape(&[len, self.heads, head_dim])?.permute(&[1, 0, 2])
        };
        let q = split(self.query.forward(x)?)?;
        let k = split(self.key.forward(x)?)?.transpose()?;
        let v = split(self.value.forward(x)?)?;
        let scores = q.bmm(&k)?.scale(1.0 / (head_dim as f64).sqrt());
        let weights = scores.mask_last_axis(key_mask)?.softmax()?;
        let context = weights.bmm(&v)?.permute(&[1, 0, 2])?.reshape(&[len, width])?;
        Ok((self.output.forward(&context)?, weights))
    }
}

/// Pre-norm encoder block: `x + MHA(LN(x))`, then `x + MLP(LN(x))` with GELU.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(TransformerBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width)?,
            attention: MultiHeadAttention::new(store, &format!("{name}.attention"), width, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width)?,
            mlp_in: Linear::new(store, &format!("{name}.mlp_in"), width, width * mlp_ratio, rng)?,
            mlp_out: Linear::new(store, &format!("{name}.mlp_out"), width * mlp_ratio, width, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor, key_mask: &[bool]) -> Result<Tensor> {
        let (attended, _) = self.attention.forward(&self.norm1.forward(x)?, key_mask)?;
        let x = x.add(&attended)?;
        let hidden = self.mlp_in.forward(&self.norm2.forward(&x)?)?.gelu();
        x.add(&self.mlp_out.forward(&hidden)?)
    }
}

/// One learnable vector per visit slot.
#[derive(Debug, Clone)]
pub struct PositionEmbedding {
    pub table: Tensor,
}

impl PositionEmbedding {
    pub fn new(store: &mut ParamStore, name: &str, slots: usize, width: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(PositionEmbedding {
            table: store.normal(name, &[slots, width], 0.02, rng)?,
        })
    }

    pub fn slots(&self) -> usize {
        self.table.shape()[0]
    }
}

/// Bidirectional encoder: position embeddings, `L` pre-norm blocks, optional final norm.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub position: PositionEmbedding,
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: Option<LayerNorm>,
}

impl TransformerEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        slots: usize,
        width: usize,
        heads: usize,
        depth: usize,
        mlp_ratio: usize,
        final_norm: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let position = PositionEmbedding::new(store, &format!("{name}.position"), slots, width, rng)?;
        let blocks = (0..depth)
            .map(|i| TransformerBlock::new(store, &format!("{name}.block{i}"), width, heads, mlp_ratio, rng))
            .collect::<Result<_>>()?;
        let final_norm = if final_norm {
            Some(LayerNorm::new(store, &format!("{name}.final_norm"), width)?)
        } else {
            None
        };
        Ok(TransformerEncoder {
            position,
            blocks,
            final_norm,
        })
    }

    /// `[S, D] -> [S, D]`. Masked slots still produce outputs but are never attended to.
    pub fn forward(&self, seq: &Tensor, key_mask: &[bool]) -> Result<Tensor> {
        if seq.shape().len() != 2 || seq.shape()[0] != self.position.slots() || key_mask.len() != seq.shape()[0] {
            return Err(Error::shape("transformer_encode", seq.shape(), self.position.table.shape()));
        }
        if key_mask.iter().all(|&m| m) {
            return Err(Error::AllMasked);
        }
        let mut x = seq.add(&self.position.table)?;
        for block in &self.blocks {
            x = block.forward(&x, key_mask)?;
        }
        match &self.final_norm {
            Some(norm) => norm.forward(&x),
            None => Ok(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes::icosphere;
    use crate::spiral::{build_spiral_table, FILLER};
    use rand::{Rng, SeedableRng};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_spiral_of_length_one() {
        let mesh = icosphere(1);
        let table = build_spiral_table(&mesh, 1, 0).unwrap();
        let mut store = ParamStore::new();
        let conv = SpiralConv::new(&mut store, "c", &table, 3, 3, false, true, &mut rng()).unwrap();
        conv.linear.weight.set_data(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let x = random(&[42, 3], &mut rng());
        assert_eq!(conv.forward(&x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn constant_field_stays_constant_on_vertex_transitive_mesh() {
        // Every tetrahedron spiral of length 4 covers all vertices.
        let mesh = crate::mesh::shapes::tetrahedron();
        let table = build_spiral_table(&mesh, 4, 0).unwrap();
        assert!(!table.indices().contains(&FILLER));
        let mut store = ParamStore::new();
        let conv = SpiralConv::new(&mut store, "c", &table, 2, 5, true, false, &mut rng()).unwrap();
        let x = Tensor::from_vec(&[4, 2], [0.3, -1.2].repeat(4)).unwrap();
        let y = conv.forward(&x).unwrap().to_vec();
        for row in y.chunks(5) {
            for (a, b) in row.iter().zip(&y[..5]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooling_preserves_constants() {
        let m = Rc::new(SparseMatrix::from_rows(3, vec![vec![(0, 0.5), (1, 0.5)], vec![(2, 1.0)]]));
        let x = Tensor::from_vec(&[3, 2], vec![4.0, -1.0, 4.0, -1.0, 4.0, -1.0]).unwrap();
        assert_eq!(pool(&x, &m).unwrap().to_vec(), vec![4.0, -1.0, 4.0, -1.0]);
        let id = Rc::new(SparseMatrix::identity(3));
        assert_eq!(unpool(&x, &id).unwrap().to_vec(), x.to_vec());
        assert!(pool(&Tensor::zeros(&[4, 2]), &m).is_err());
    }

    #[test]
    fn attention_rows_sum_to_one_over_unmasked_keys() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 8, 2, &mut r).unwrap();
        let x = random(&[5, 8], &mut r);
        let mask = [false, true, false, true, false];
        let (_, w) = mha.forward(&x, &mask).unwrap();
        let w = w.to_vec();
        for row in w.chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert_eq!(row[1], 0.0);
            assert_eq!(row[3], 0.0);
        }
    }

    #[test]
    fn single_unmasked_key_returns_its_value() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 4, 2, &mut r).unwrap();
        let x = random(&[3, 4], &mut r);
        let (out, _) = mha.forward(&x, &[true, false, true]).unwrap();
        let v = mha.value.forward(&x.slice(0, 1, 2).unwrap()).unwrap();
        let expected = mha.output.forward(&v).unwrap().to_vec();
        for row in out.to_vec().chunks(4) {
            for (a, b) in row.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_blocks_adds_positions_only() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let enc = TransformerEncoder::new(&mut store, "t", 3, 4, 2, 0, 4, false, &mut r).unwrap();
        let x = random(&[3, 4], &mut r);
        let y = enc.forward(&x, &[false, false, true]).unwrap();
        let expected = x.add(&enc.position.table).unwrap();
        assert_eq!(y.to_vec(), expected.to_vec());
        assert!(matches!(enc.forward(&x, &[true; 3]), Err(Error::AllMasked)));
    }

    #[test]
    fn masked_slot_content_never_reaches_unmasked_outputs() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let enc = TransformerEncoder::new(&mut store, "t", 4, 8, 4, 2, 4, true, &mut r).unwrap();
        let x = random(&[4, 8], &mut r).to_vec();
        let mask = [false, true, false, true];
        let base = enc.forward(&Tensor::from_vec(&[4, 8], x.clone()).unwrap(), &mask).unwrap().to_vec();
        for _ in 0..5 {
            let mut noisy = x.clone();
            for slot in [1, 3] {
                for k in 0..8 {
                    noisy[slot * 8 + k] = r.random_range(-100.0..100.0);
                }
            }
            let out = enc.forward(&Tensor::from_vec(&[4, 8], noisy).unwrap(), &mask).unwrap().to_vec();
            for slot in [0, 2] {
                assert_eq!(out[slot * 8..(slot + 1) * 8], base[slot * 8..(slot + 1) * 8]);
            }
        }
    }
}
