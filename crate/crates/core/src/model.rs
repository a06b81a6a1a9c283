//! TransforMesh and its two reference architectures behind one prediction interface.
//!
//! Every variant shares a spiral-convolution mesh encoder (vertices to a `D`-vector)
//! and decoder (`D`-vector to a per-vertex deformation). TransforMesh places a masked
//! transformer between them; FCBN replaces it with a fully connected bottleneck over
//! the flattened sequence; MeshAE has no temporal component at all.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tensor};
use crate::config::{join, KeyValues};
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchyConfig, MeshHierarchy, SparseMatrix};
use crate::nn::{pool, unpool, LayerNorm, Linear, SpiralConv, TransformerEncoder};
use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    TransforMesh,
    Fcbn,
    MeshAe,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::TransforMesh => "transformesh",
            Variant::Fcbn => "fcbn",
            Variant::MeshAe => "meshae",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "transformesh" => Ok(Variant::TransforMesh),
            "fcbn" => Ok(Variant::Fcbn),
            "meshae" => Ok(Variant::MeshAe),
            _ => Err(format!("unknown variant `{s}` (transformesh, fcbn, meshae)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Transformer blocks (ignored by FCBN and MeshAE).
    pub depth: usize,
    /// Latent width `D`.
    pub width: usize,
    pub heads: usize,
    /// Visit slots `S`.
    pub slots: usize,
    pub mlp_ratio: usize,
    /// Spiral-conv channels per pooled level, finest first.
    pub channels: Vec<usize>,
    pub hierarchy: HierarchyConfig,
    pub final_norm: bool,
    /// Layer-normalize mesh latents before position embeddings are added.
    pub token_norm: bool,
    /// Detach the reference latent where it fills missing slots.
    pub stop_grad_missing: bool,
    /// Coordinate unit for encoder inputs and decoder outputs; `0` derives it as
    /// 5% of the template bounding-box diagonal.
    pub coord_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Named presets at the small scale used for tests and examples (`D = 64`, `h = 4`).
    pub fn desk(preset: &str) -> Result<Self> {
        let base = ModelConfig {
            variant: Variant::TransforMesh,
            depth: 1,
            width: 64,
            heads: 4,
            slots: 8,
            mlp_ratio: 4,
            channels: vec![16, 32],
            hierarchy: HierarchyConfig::default(),
            final_norm: true,
            token_norm: true,
            stop_grad_missing: false,
            coord_scale: 0.0,
            seed: 0,
        };
        let cfg = match preset {
            "ttm" => base,
            "stm" => ModelConfig { depth: 3, ..base },
            "btm" => ModelConfig { depth: 12, ..base },
            "fcbn" => ModelConfig {
                variant: Variant::Fcbn,
                depth: 0,
                ..base
            },
            "meshae" => ModelConfig {
                variant: Variant::MeshAe,
                depth: 0,
                ..base
            },
            _ => {
                return Err(Error::Validation(format!(
                    "unknown preset `{preset}` (ttm, stm, btm, fcbn, meshae)"
                )))
            }
        };
        Ok(cfg)
    }

    /// The same presets at `D = 512`, `h = 8`.
    pub fn full(preset: &str) -> Result<Self> {
        Ok(ModelConfig {
            width: 512,
            heads: 8,
            ..Self::desk(preset)?
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots < 2 {
            return Err(Error::Validation(format!("need at least 2 slots, got {}", self.slots)));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Validation(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.channels.len() != self.hierarchy.factors.len() {
            return Err(Error::Validation(format!(
                "{} channel entries for {} pooling steps",
                self.channels.len(),
                self.hierarchy.factors.len()
            )));
        }
        if self.coord_scale < 0.0 || !self.coord_scale.is_finite() {
            return Err(Error::Validation(format!("bad coord_scale {}", self.coord_scale)));
        }
        Ok(())
    }

    pub const KEYS: &'static [&'static str] = &[
        "variant",
        "depth",
        "width",
        "heads",
        "slots",
        "mlp_ratio",
        "channels",
        "pool_factors",
        "spiral_lengths",
        "final_norm",
        "token_norm",
        "stop_grad_missing",
        "coord_scale",
        "seed",
    ];

    /// Reads model keys from `kv`, falling back to `self` for absent keys.
    pub fn with_overrides(&self, kv: &KeyValues) -> Result<Self> {
        let cfg = ModelConfig {
            variant: kv.get("variant", self.variant)?,
            depth: kv.get("depth", self.depth)?,
            width: kv.get("width", self.width)?,
            heads: kv.get("heads", self.heads)?,
            slots: kv.get("slots", self.slots)?,
            mlp_ratio: kv.get("mlp_ratio", self.mlp_ratio)?,
            channels: kv.get_list("channels", self.channels.clone())?,
            hierarchy: HierarchyConfig {
                factors: kv.get_list("pool_factors", self.hierarchy.factors.clone())?,
                spiral_lengths: kv.get_list("spiral_lengths", self.hierarchy.spiral_lengths.clone())?,
            },
            final_norm: kv.get("final_norm", self.final_norm)?,
            token_norm: kv.get("token_norm", self.token_norm)?,
            stop_grad_missing: kv.get("stop_grad_missing", self.stop_grad_missing)?,
            coord_scale: kv.get("coord_scale", self.coord_scale)?,
            seed: kv.get("seed", self.seed)?,
        };
        cfg.validate().map_err(|e| Error::Config {
            file: kv.file().to_string(),
            key: "model".into(),
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new("model");
        kv.set("variant", self.variant);
        kv.set("depth", self.depth);
        kv.set("width", self.width);
        kv.set("heads", self.heads);
        kv.set("slots", self.slots);
        kv.set("mlp_ratio", self.mlp_ratio);
        kv.set("channels", join(&self.channels));
        kv.set("pool_factors", join(&self.hierarchy.factors));
        kv.set("spiral_lengths", join(&self.hierarchy.spiral_lengths));
        kv.set("final_norm", self.final_norm);
        kv.set("token_norm", self.token_norm);
        kv.set("stop_grad_missing", self.stop_grad_missing);
        kv.set("coord_scale", self.coord_scale);
        kv.set("seed", self.seed);
        kv
    }

    /// Closed-form trainable scalar count for a hierarchy with `level_sizes` vertices
    /// per level; agrees with the instantiated model's registry.
    pub fn parameter_count(&self, level_sizes: &[usize]) -> usize {
        let lengths = |k: usize| match self.hierarchy.spiral_lengths.as_slice() {
            [l] => *l,
            ls => ls[k],
        };
        let affine = |i: usize, o: usize| i * o + o;
        let d = self.width;
        let levels = self.channels.len();
        let coarse = level_sizes[levels] * self.channels.last().copied().unwrap_or(3);
        let mut n = 0;
        let mut c_in = 3;
        for (k, &c) in self.channels.iter().enumerate() {
            n += affine(lengths(k) * c_in, c);
            c_in = c;
        }
        n += affine(coarse, d) + affine(d, coarse);
        for k in (0..levels).rev() {
            let out = if k == 0 { 3 } else { self.channels[k - 1] };
            n += affine(lengths(k) * self.channels[k], out);
        }
        if levels == 0 {
            n += affine(lengths(0) * 3, 3);
        }
        n + match self.variant {
            Variant::MeshAe => 0,
            Variant::Fcbn => fcbn_dims(self.slots, d)
                .windows(2)
                .map(|w| affine(w[0], d) + affine(d, w[1]))
                .sum(),
            Variant::TransforMesh => {
                let h = d * self.mlp_ratio;
                let block = 4 * affine(d, d) + affine(d, h) + affine(h, d) + 4 * d;
                let norms = (self.final_norm as usize + self.token_norm as usize) * 2 * d;
                self.slots * d + self.depth * block + norms
            }
        }
    }
}

/// Block boundary widths of the fully connected bottleneck: `S·D -> S -> S·D -> S·D`.
fn fcbn_dims(slots: usize, width: usize) -> [usize; 4] {
    [slots * width, slots, slots * width, slots * width]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotStatus {
    Observed,
    Missing,
    /// Observed during training but replaced by the reference on input.
    Augmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub status: SlotStatus,
    pub month: u32,
    /// Flattened `N x 3` input vertices; ignored when missing.
    pub input: Vec<f64>,
    /// Flattened `N x 3` supervision target, when known.
    pub target: Option<Vec<f64>>,
}

/// One subject's visit sequence. Slot 0 holds the reference (baseline) mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub slots: Vec<Slot>,
}

impl SequenceBatch {
    pub fn reference(&self) -> &[f64] {
        &self.slots[0].input
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Slots that carry loss: observed or augmented with a known target.
    pub fn supervised(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.status != SlotStatus::Missing && s.target.is_some())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn key_mask(&self) -> Vec<bool> {
        self.slots.iter().map(|s| s.status == SlotStatus::Missing).collect()
    }

    fn validate(&self, n_coords: usize) -> Result<()> {
        let Some(first) = self.slots.first() else {
            return Err(Error::Validation("empty sequence".into()));
        };
        if first.status != SlotStatus::Observed {
            return Err(Error::Validation("slot 0 must be observed".into()));
        }
        for s in &self.slots {
            let bad_input = s.status != SlotStatus::Missing && s.input.len() != n_coords;
            let bad_target = s.target.as_ref().is_some_and(|t| t.len() != n_coords);
            if bad_input || bad_target {
                return Err(Error::shape("sequence_batch", &[s.input.len()], &[n_coords]));
            }
        }
        Ok(())
    }
}

/// Decoded output for a subset of slots.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub slots: Vec<usize>,
    /// `[M, N, 3]` predicted vertices.
    pub vertices: Tensor,
    /// `[M, N, 3]` deformation from the reference (or template for MeshAE).
    pub deltas: Tensor,
    /// SHA-256 of every vertex buffer the encoder consumed, in encoding order.
    pub input_hashes: Vec<String>,
}

#[derive(Debug, Clone)]
struct MeshEncoder {
    convs: Vec<SpiralConv>,
    down: Vec<Rc<SparseMatrix>>,
    head: Linear,
}

impl MeshEncoder {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let batch = x.shape()[0];
        let mut x = x.clone();
        for (conv, down) in self.convs.iter().zip(&self.down) {
            x = pool(&conv.forward(&x)?, down)?;
        }
        let flat = x.shape()[1] * x.shape()[2];
        self.head.forward(&x.reshape(&[batch, flat])?)
    }
}

#[derive(Debug, Clone)]
struct MeshDecoder {
    head: Linear,
    coarse: (usize, usize),
    /// Coarsest first.
    up: Vec<Rc<SparseMatrix>>,
    convs: Vec<SpiralConv>,
}

impl MeshDecoder {
    fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let batch = z.shape()[0];
        let mut x = self.head.forward(z)?.reshape(&[batch, self.coarse.0, self.coarse.1])?;
        for (k, conv) in self.convs.iter().enumerate() {
            if let Some(up) = self.up.get(k) {
                x = unpool(&x, up)?;
            }
            x = conv.forward(&x)?;
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
enum Temporal {
    Transformer(Option<LayerNorm>, TransformerEncoder),
    Fcbn(Vec<(Linear, Linear)>),
    None,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    template: Vec<f64>,
    n_vertices: usize,
    coord_scale: f64,
    encoder: MeshEncoder,
    decoder: MeshDecoder,
    temporal: Temporal,
}

impl Model {
    pub fn new(config: &ModelConfig, hierarchy: &MeshHierarchy) -> Result<Self> {
        config.validate()?;
        let levels = config.channels.len();
        if hierarchy.n_levels() != levels + 1 {
            return Err(Error::Validation(format!(
                "hierarchy has {} levels, channel plan needs {}",
                hierarchy.n_levels(),
                levels + 1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.width;

        let mut convs = Vec::new();
        let mut c_in = 3;
        for (k, &c) in config.channels.iter().enumerate() {
            let name = format!("encoder.conv{k}");
            convs.push(SpiralConv::new(&mut store, &name, hierarchy.spirals(k), c_in, c, true, false, &mut rng)?);
            c_in = c;
        }
        let down = (0..levels).map(|k| Rc::new(hierarchy.down(k).clone())).collect();
        let coarse = (hierarchy.n_vertices(levels), c_in);
        let encoder = MeshEncoder {
            convs,
            down,
            head: Linear::new(&mut store, "encoder.head", coarse.0 * coarse.1, d, &mut rng)?,
        };

        let head = Linear::new(&mut store, "decoder.head", d, coarse.0 * coarse.1, &mut rng)?;
        let mut convs = Vec::new();
        for k in (0..levels).rev() {
            let (c_in, c_out) = (config.channels[k], if k == 0 { 3 } else { config.channels[k - 1] });
            let name = format!("decoder.conv{k}");
            let last = k == 0;
            convs.push(SpiralConv::new(&mut store, &name, hierarchy.spirals(k), c_in, c_out, !last, last, &mut rng)?);
        }
        if levels == 0 {
            convs.push(SpiralConv::new(&mut store, "decoder.conv0", hierarchy.spirals(0), 3, 3, false, true, &mut rng)?);
        }
        let up = (0..levels).rev().map(|k| Rc::new(hierarchy.up(k).clone())).collect();
        let decoder = MeshDecoder {
            head,
            coarse,
            up,
            convs,
        };

        let temporal = match config.variant {
            Variant::TransforMesh => {
                let token_norm = if config.token_norm {
                    Some(LayerNorm::new(&mut store, "temporal.token_norm", d)?)
                } else {
                    None
                };
                let encoder = TransformerEncoder::new(
                    &mut store,
                    "temporal",
                    config.slots,
                    d,
                    config.heads,
                    config.depth,
                    config.mlp_ratio,
                    config.final_norm,
                    &mut rng,
                )?;
                Temporal::Transformer(token_norm, encoder)
            }
            Variant::Fcbn => {
                let dims = fcbn_dims(config.slots, d);
                let blocks = dims
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| {
                        Ok((
                            Linear::new(&mut store, &format!("fcbn.block{i}.in"), w[0], d, &mut rng)?,
                            Linear::new(&mut store, &format!("fcbn.block{i}.out"), d, w[1], &mut rng)?,
                        ))
                    })
                    .collect::<Result<_>>()?;
                Temporal::Fcbn(blocks)
            }
            Variant::MeshAe => Temporal::None,
        };

        let template_mesh = hierarchy.mesh(0);
        let coord_scale = if config.coord_scale > 0.0 {
            config.coord_scale
        } else {
            0.05 * template_mesh.bbox_diagonal()
        };
        Ok(Model {
            config: config.clone(),
            store,
            template: template_mesh.flat_vertices(),
            n_vertices: template_mesh.n_vertices(),
            coord_scale,
            encoder,
            decoder,
            temporal,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn template(&self) -> &[f64] {
        &self.template
    }

    pub fn coord_scale(&self) -> f64 {
        self.coord_scale
    }

    fn template_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.n_vertices, 3], self.template.clone()).expect("template shape")
    }

    /// `[B, N, 3]` vertices to `[B, D]` latents. Inputs are centered on the template
    /// and expressed in units of the coordinate scale.
    pub fn encode(&self, vertices: &Tensor) -> Result<Tensor> {
        let s = vertices.shape();
        if s.len() != 3 || s[1] != self.n_vertices || s[2] != 3 {
            return Err(Error::shape("encode_mesh", s, &[self.n_vertices, 3]));
        }
        let x = vertices.sub(&self.template_tensor())?.scale(1.0 / self.coord_scale);
        self.encoder.forward(&x)
    }

    /// `[B, D]` latents to `[B, N, 3]` deformation fields.
    pub fn decode(&self, latents: &Tensor) -> Result<Tensor> {
        let s = latents.shape();
        if s.len() != 2 || s[1] != self.config.width {
            return Err(Error::shape("decode_deformation", s, &[self.config.width]));
        }
        Ok(self.decoder.forward(latents)?.scale(self.coord_scale))
    }

    fn stack(&self, meshes: &[&[f64]]) -> Result<Tensor> {
        let data: Vec<f64> = meshes.iter().flat_map(|m| m.iter().copied()).collect();
        Tensor::from_vec(&[meshes.len(), self.n_vertices, 3], data)
    }

    /// Predicts the slots in `decode` (all slots when `None`).
    pub fn forward(&self, batch: &SequenceBatch, decode: Option<&[usize]>) -> Result<Prediction> {
        let n_coords = self.n_vertices * 3;
        batch.validate(n_coords)?;
        if self.config.variant == Variant::MeshAe {
            return self.forward_meshae_batch(batch, decode);
        }
        if batch.len() != self.config.slots {
            return Err(Error::shape("sequence_batch", &[batch.len()], &[self.config.slots]));
        }
        let all: Vec<usize> = (0..batch.len()).collect();
        let decode = decode.unwrap_or(&all).to_vec();
        if let Some(&bad) = decode.iter().find(|&&t| t >= batch.len()) {
            return Err(Error::Validation(format!("slot {bad} out of range")));
        }

        let encoded: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&t| batch.slots[t].status != SlotStatus::Missing)
            .collect();
        let inputs: Vec<&[f64]> = encoded.iter().map(|&t| batch.slots[t].input.as_slice()).collect();
        let input_hashes = inputs.iter().map(|m| hash_coords(m)).collect();
        let mut latents = self.encode(&self.stack(&inputs)?)?;

        // Encoded slot 0 sits in row 0; missing slots reuse it.
        let mut fill_row = 0;
        if self.config.stop_grad_missing {
            fill_row = encoded.len();
            latents = Tensor::concat(&[latents.clone(), latents.slice(0, 0, 1)?.detach()], 0)?;
        }
        let rows: Vec<usize> = all
            .iter()
            .map(|&t| encoded.iter().position(|&e| e == t).unwrap_or(fill_row))
            .collect();
        let tokens = latents.gather_rows(Rc::new(rows), 1)?.reshape(&[batch.len(), self.config.width])?;
        let mixed = self.mix(&tokens, &batch.key_mask())?;

        let chosen = mixed.gather_rows(Rc::new(decode.clone()), 1)?.reshape(&[decode.len(), self.config.width])?;
        let deltas = self.decode(&chosen)?;
        let reference = Tensor::from_vec(&[self.n_vertices, 3], batch.reference().to_vec())?;
        Ok(Prediction {
            slots: decode,
            vertices: deltas.add(&reference)?,
            deltas,
            input_hashes,
        })
    }

    fn mix(&self, tokens: &Tensor, key_mask: &[bool]) -> Result<Tensor> {
        match &self.temporal {
            Temporal::Transformer(norm, t) => match norm {
                Some(n) => t.forward(&n.forward(tokens)?, key_mask),
                None => t.forward(tokens, key_mask),
            },
            Temporal::Fcbn(blocks) => {
                let (s, d) = (tokens.shape()[0], tokens.shape()[1]);
                let mut x = tokens.reshape(&[1, s * d])?;
                for (i, (a, b)) in blocks.iter().enumerate() {
                    x = b.forward(&a.forward(&x)?.gelu())?;
                    if i + 1 < blocks.len() {
                        x = x.gelu();
                    }
                }
                x.reshape(&[s, d])
            }
            Temporal::None => Ok(tokens.clone()),
        }
    }

    /// MeshAE: reconstructs each requested slot's own input as template + decoded deformation.
    fn forward_meshae_batch(&self, batch: &SequenceBatch, decode: Option<&[usize]>) -> Result<Prediction> {
        let slots: Vec<usize> = match decode {
            Some(d) => d.to_vec(),
            None => (0..batch.len()).filter(|&t| batch.slots[t].status != SlotStatus::Missing).collect(),
        };
        let mut inputs = Vec::new();
        for &t in &slots {
            let s = batch.slots.get(t).ok_or_else(|| Error::Validation(format!("slot {t} out of range")))?;
            if s.status == SlotStatus::Missing {
                return Err(Error::Validation(format!("meshae cannot reconstruct missing slot {t}")));
            }
            inputs.push(s.input.as_slice());
        }
        let input_hashes = inputs.iter().map(|m| hash_coords(m)).collect();
        let (vertices, deltas) = self.reconstruct_tensor(&self.stack(&inputs)?)?;
        Ok(Prediction {
            slots,
            vertices,
            deltas,
            input_hashes,
        })
    }

    fn reconstruct_tensor(&self, vertices: &Tensor) -> Result<(Tensor, Tensor)> {
        let deltas = self.decode(&self.encode(vertices)?)?;
        Ok((deltas.add(&self.template_tensor())?, deltas))
    }

    /// MeshAE reconstruction of flattened `N x 3` meshes, as `[B, N, 3]`.
    pub fn reconstruct(&self, meshes: &[&[f64]]) -> Result<Tensor> {
        Ok(self.reconstruct_tensor(&self.stack(meshes)?)?.0)
    }
}

pub(crate) fn hash_coords(coords: &[f64]) -> String {
    let bytes: Vec<u8> = coords.iter().flat_map(|c| c.to_le_bytes()).collect();
    sha256_hex(&bytes)
}
