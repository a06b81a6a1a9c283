//! Loss, reference-substitution augmentation and the optimization loop.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{save_checkpoint, Adam, AdamConfig, Checkpoint, Tensor};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::model::{Model, Prediction, SequenceBatch, SlotStatus, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// `e^t` with `t` the slot index.
    ExpIndex,
    /// `e^min(t, cap)`.
    ExpCapped,
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMode::ExpIndex => "exp_index",
            WeightMode::ExpCapped => "exp_capped",
        })
    }
}

impl FromStr for WeightMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exp_index" => Ok(WeightMode::ExpIndex),
            "exp_capped" => Ok(WeightMode::ExpCapped),
            _ => Err(format!("unknown weight mode `{s}` (exp_index, exp_capped)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub weight_mode: WeightMode,
    pub cap: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1e-4,
            weight_mode: WeightMode::ExpCapped,
            cap: 4.0,
        }
    }
}

impl LossConfig {
    pub fn weight(&self, slot: usize) -> f64 {
        let t = slot as f64;
        match self.weight_mode {
            WeightMode::ExpIndex => t.exp(),
            WeightMode::ExpCapped => t.min(self.cap).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationConfig {
    pub p_substitute: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig { p_substitute: 0.15 }
    }
}

/// `sum_t e^{w(t)} mae(pred_t, true_t) - alpha * mae(pred_t, reference)` over the
/// decoded slots that are observed or augmented. Missing slots contribute nothing.
pub fn sequence_loss(pred: &Prediction, batch: &SequenceBatch, cfg: &LossConfig) -> Result<Tensor> {
    let rows: Vec<usize> = pred
        .slots
        .iter()
        .enumerate()
        .filter(|(_, &t)| {
            let s = &batch.slots[t];
            s.status != SlotStatus::Missing && s.target.is_some()
        })
        .map(|(r, _)| r)
        .collect();
    if rows.is_empty() {
        return Err(Error::NoSupervisedSlot);
    }
    let shape = pred.vertices.shape();
    let coords = shape[1] * shape[2];
    let selected = pred
        .vertices
        .reshape(&[shape[0], coords])?
        .gather_rows(Rc::new(rows.clone()), 1)?
        .reshape(&[rows.len(), coords])?;
    let mut targets = Vec::with_capacity(rows.len() * coords);
    let mut weights = Vec::with_capacity(rows.len());
    for &r in &rows {
        let t = pred.slots[r];
        targets.extend_from_slice(batch.slots[t].target.as_deref().expect("filtered"));
        weights.push(cfg.weight(t));
    }
    let targets = Tensor::from_vec(&[rows.len(), coords], targets)?;
    let weights = Tensor::from_vec(&[rows.len()], weights)?;
    let reference = Tensor::from_vec(&[coords], batch.reference().to_vec())?;

    let fit = selected.sub(&targets)?.abs().mean_axis(1)?.mul(&weights)?.sum();
    let magnitude = selected.sub(&reference)?.abs().mean_axis(1)?.sum();
    fit.sub(&magnitude.scale(cfg.alpha))
}

/// Each observed slot after the reference independently becomes augmented with
/// probability `p`: its input is replaced by the reference, its target kept.
pub fn augment_batch(batch: &SequenceBatch, cfg: &AugmentationConfig, rng: &mut impl Rng) -> SequenceBatch {
    let mut out = batch.clone();
    let reference = batch.reference().to_vec();
    for slot in out.slots.iter_mut().skip(1) {
        if slot.status == SlotStatus::Observed && rng.random::<f64>() < cfg.p_substitute {
            slot.status = SlotStatus::Augmented;
            if slot.target.is_none() {
                slot.target = Some(std::mem::take(&mut slot.input));
            }
            slot.input = reference.clone();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub augmentation: AugmentationConfig,
    /// Subjects per optimizer step.
    pub accumulate: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            augmentation: AugmentationConfig::default(),
            accumulate: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "epochs",
        "lr",
        "beta1",
        "beta2",
        "adam_eps",
        "alpha",
        "weight_mode",
        "weight_cap",
        "p_substitute",
        "accumulate",
        "train_seed",
    ];

    pub fn with_overrides(&self, kv: &KeyValues) -> Result<Self> {
        let cfg = TrainConfig {
            epochs: kv.get("epochs", self.epochs)?,
            adam: AdamConfig {
                lr: kv.get("lr", self.adam.lr)?,
                beta1: kv.get("beta1", self.adam.beta1)?,
                beta2: kv.get("beta2", self.adam.beta2)?,
                eps: kv.get("adam_eps", self.adam.eps)?,
            },
            loss: LossConfig {
                alpha: kv.get("alpha", self.loss.alpha)?,
                weight_mode: kv.get("weight_mode", self.loss.weight_mode)?,
                cap: kv.get("weight_cap", self.loss.cap)?,
            },
            augmentation: AugmentationConfig {
                p_substitute: kv.get("p_substitute", self.augmentation.p_substitute)?,
            },
            accumulate: kv.get("accumulate", self.accumulate)?,
            seed: kv.get("train_seed", self.seed)?,
        };
        let bad = |key: &str, msg: &str| Error::Config {
            file: kv.file().to_string(),
            key: key.into(),
            msg: msg.into(),
        };
        if cfg.loss.alpha < 0.0 {
            return Err(bad("alpha", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&cfg.augmentation.p_substitute) {
            return Err(bad("p_substitute", "must lie in [0, 1)"));
        }
        if cfg.accumulate == 0 {
            return Err(bad("accumulate", "must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new("train");
        kv.set("epochs", self.epochs);
        kv.set("lr", self.adam.lr);
        kv.set("beta1", self.adam.beta1);
        kv.set("beta2", self.adam.beta2);
        kv.set("adam_eps", self.adam.eps);
        kv.set("alpha", self.loss.alpha);
        kv.set("weight_mode", self.loss.weight_mode);
        kv.set("weight_cap", self.loss.cap);
        kv.set("p_substitute", self.augmentation.p_substitute);
        kv.set("accumulate", self.accumulate);
        kv.set("train_seed", self.seed);
        kv
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when no validation subjects were given.
    pub val_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters the model holds on return (0 = initial state).
    pub best_epoch: usize,
    pub best_loss: f64,
    pub steps: u64,
}

/// Where a run writes `train_log.csv`, `loss.csv`, `best.ckpt` and `last.ckpt`.
#[derive(Debug, Clone)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn best(&self) -> PathBuf {
        self.0.join("best.ckpt")
    }

    pub fn last(&self) -> PathBuf {
        self.0.join("last.ckpt")
    }
}

/// `None` for a subject with nothing to supervise.
fn subject_loss(model: &Model, batch: &SequenceBatch, cfg: &LossConfig) -> Result<Option<Tensor>> {
    let supervised = batch.supervised();
    if supervised.is_empty() {
        return Ok(None);
    }
    let pred = model.forward(batch, Some(&supervised))?;
    sequence_loss(&pred, batch, cfg).map(Some)
}

/// Fixed per-subject augmentation so validation loss is comparable across epochs.
fn validation_loss(model: &Model, val: &[SequenceBatch], cfg: &TrainConfig) -> Result<f64> {
    let aug = augmentation_for(model, cfg);
    let mut total = 0.0;
    let mut count = 0;
    for (i, b) in val.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0000_0000 ^ i as u64);
        if let Some(loss) = subject_loss(model, &augment_batch(b, &aug, &mut rng), &cfg.loss)? {
            total += loss.item();
            count += 1;
        }
    }
    Ok(if count == 0 { f64::NAN } else { total / count as f64 })
}

fn augmentation_for(model: &Model, cfg: &TrainConfig) -> AugmentationConfig {
    // MeshAE reconstructs its own input, so substituting the input would be meaningless.
    if model.config().variant == Variant::MeshAe {
        AugmentationConfig { p_substitute: 0.0 }
    } else {
        cfg.augmentation
    }
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:?}")
    }
}

fn write_logs(dir: &Path, log: &[EpochLog]) -> Result<()> {
    let mut full = String::from("epoch,train_loss,val_loss,wall_seconds\n");
    let mut losses = String::from("epoch,train_loss,val_loss\n");
    for e in log {
        let (t, v) = (fmt_float(e.train_loss), fmt_float(e.val_loss));
        full.push_str(&format!("{},{t},{v},{:.3}\n", e.epoch, e.wall_seconds));
        losses.push_str(&format!("{},{t},{v}\n", e.epoch));
    }
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("train_log.csv", &full)?;
    write("loss.csv", &losses)
}

/// Trains `model` in place. On return the model holds the parameters with the
/// lowest validation loss (training loss when `val` is empty); `last.ckpt` keeps
/// the final ones. A non-finite loss restores the last finite state, writes it as
/// `last.ckpt` and fails with [`Error::Divergence`].
pub fn train(
    model: &Model,
    train_set: &[SequenceBatch],
    val: &[SequenceBatch],
    cfg: &TrainConfig,
    run_dir: Option<&RunDir>,
) -> Result<TrainReport> {
    train_with(model, train_set, val, cfg, run_dir, &mut |_| Ok(()))
}

/// [`train`] with a hook called after every epoch, e.g. for progress output.
pub fn train_with(
    model: &Model,
    train_set: &[SequenceBatch],
    val: &[SequenceBatch],
    cfg: &TrainConfig,
    run_dir: Option<&RunDir>,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainReport> {
    if cfg.accumulate == 0 {
        return Err(Error::Validation("accumulate must be at least 1".into()));
    }
    if let Some(dir) = run_dir {
        fs::create_dir_all(&dir.0).map_err(|e| Error::io(&dir.0, e))?;
    }
    let store = model.params();
    let mut adam = Adam::new(store, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let aug = augmentation_for(model, cfg);
    let start = Instant::now();

    let mut best = store.snapshot();
    let mut best_epoch = 0;
    let mut best_loss = f64::INFINITY;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let save = |path: PathBuf| save_checkpoint(&Checkpoint::from_store(store), &path);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let before = store.snapshot();
        let (mut total, mut count, mut pending) = (0.0, 0usize, 0usize);
        store.zero_grad();
        for &i in &order {
            let batch = augment_batch(&train_set[i], &aug, &mut rng);
            let Some(loss) = subject_loss(model, &batch, &cfg.loss)? else {
                continue;
            };
            let value = loss.item();
            if !value.is_finite() {
                store.restore(&before);
                if let Some(dir) = run_dir {
                    write_logs(&dir.0, &log)?;
                    save(dir.last())?;
                }
                return Err(Error::Divergence { epoch, loss: value });
            }
            total += value;
            count += 1;
            loss.scale(1.0 / cfg.accumulate as f64).backward()?;
            pending += 1;
            if pending == cfg.accumulate {
                adam.step(store);
                store.zero_grad();
                pending = 0;
            }
        }
        if pending > 0 {
            adam.step(store);
            store.zero_grad();
        }
        let train_loss = if count == 0 { f64::NAN } else { total / count as f64 };
        let val_loss = if val.is_empty() {
            f64::NAN
        } else {
            validation_loss(model, val, cfg)?
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        on_epoch(log.last().expect("just pushed"))?;
        let score = if val.is_empty() { train_loss } else { val_loss };
        if score < best_loss {
            best_loss = score;
            best_epoch = epoch;
            best = store.snapshot();
            if let Some(dir) = run_dir {
                save(dir.best())?;
            }
        }
    }
    if let Some(dir) = run_dir {
        write_logs(&dir.0, &log)?;
        save(dir.last())?;
        if best_epoch == 0 {
            save(dir.best())?;
        }
    }
    store.restore(&best);
    Ok(TrainReport {
        log,
        best_epoch,
        best_loss,
        steps: adam.step,
    })
}


/// End-to-end finite-difference check of the TransforMesh loss on a toy problem:
/// a 12-vertex mesh pooled once, `S = 3` slots (observed, augmented, missing) and a
/// one-block transformer, with every parameter perturbed away from initialization.
pub fn toy_gradcheck(seed: u64, h: f64) -> Result<crate::autodiff::gradcheck::GradCheckReport> {
    use crate::autodiff::gradcheck::check_gradients;
    use crate::hierarchy::{build_hierarchy, HierarchyConfig};
    use crate::mesh::shapes::ellipsoid;
    use crate::model::{ModelConfig, Slot};

    let template = ellipsoid(0, [1.0, 0.6, 0.5]);
    let hcfg = HierarchyConfig {
        factors: vec![2],
        spiral_lengths: vec![7, 4],
    };
    let hierarchy = build_hierarchy(&template, &hcfg)?;
    let config = ModelConfig {
        width: 8,
        heads: 2,
        slots: 3,
        mlp_ratio: 2,
        channels: vec![4],
        hierarchy: hcfg,
        seed,
        ..ModelConfig::desk("ttm")?
    };
    let model = Model::new(&config, &hierarchy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.params().jitter(0.1, &mut rng);

    let base = template.flat_vertices();
    let mut mesh = |amp: f64| -> Vec<f64> { base.iter().map(|v| v + rng.random_range(-amp..amp)).collect() };
    let reference = mesh(0.05);
    let hidden = mesh(0.1);
    let batch = SequenceBatch {
        slots: vec![
            Slot {
                status: SlotStatus::Observed,
                month: 0,
                input: reference.clone(),
                target: Some(reference.clone()),
            },
            Slot {
                status: SlotStatus::Augmented,
                month: 6,
                input: reference,
                target: Some(hidden),
            },
            Slot {
                status: SlotStatus::Missing,
                month: 12,
                input: mesh(1.0),
                target: None,
            },
        ],
    };
    let params: Vec<Tensor> = model.params().params().iter().map(|p| p.tensor.clone()).collect();
    let loss_cfg = LossConfig::default();
    check_gradients(
        &params,
        || {
            let pred = model.forward(&batch, None)?;
            sequence_loss(&pred, &batch, &loss_cfg)
        },
        h,
        None,
    )
}
