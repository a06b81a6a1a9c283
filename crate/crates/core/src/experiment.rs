//! Evaluation protocols, anomaly heatmaps and the results-directory layout.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cohort::{atrophy_region, Subject, SCHEDULE};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::mesh::{save_mesh_with, MeshFormat, PlyEncoding, TriangleMesh};
use crate::model::{hash_coords, Model, SequenceBatch};
use crate::util::{median, median_abs_deviation, sha256_file};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Protocol {
    Interpolation,
    Extrapolation,
    Trajectory,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Interpolation, Protocol::Extrapolation, Protocol::Trajectory];
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Interpolation => "interpolation",
            Protocol::Extrapolation => "extrapolation",
            Protocol::Trajectory => "trajectory",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "interpolation" => Ok(Protocol::Interpolation),
            "extrapolation" => Ok(Protocol::Extrapolation),
            "trajectory" => Ok(Protocol::Trajectory),
            _ => Err(format!("unknown protocol `{s}`")),
        }
    }
}

/// Anything that fills in hidden slots of a sequence.
pub trait Predictor {
    fn name(&self) -> String;

    /// Flattened predictions for `slots`, plus hashes of every mesh buffer consumed.
    fn predict(&self, batch: &SequenceBatch, slots: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<String>)>;
}

impl Predictor for Model {
    fn name(&self) -> String {
        self.config().variant.to_string()
    }

    fn predict(&self, batch: &SequenceBatch, slots: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
        let p = self.forward(batch, Some(slots))?;
        let n = batch.reference().len();
        let flat = p.vertices.to_vec();
        Ok((flat.chunks(n).map(<[f64]>::to_vec).collect(), p.input_hashes))
    }
}

/// Predicts the reference mesh at every slot.
#[derive(Debug, Clone, Copy, Default)]
pub struct CopyReference;

impl Predictor for CopyReference {
    fn name(&self) -> String {
        "copy_reference".into()
    }

    fn predict(&self, batch: &SequenceBatch, slots: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
        let r = batch.reference();
        Ok((vec![r.to_vec(); slots.len()], vec![hash_coords(r)]))
    }
}

/// Mean absolute coordinate difference.
pub fn mae(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotError {
    pub subject: usize,
    pub slot: usize,
    pub month: u32,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolResult {
    pub protocol: Protocol,
    pub model: String,
    /// Per-(subject, slot) errors.
    pub slots: Vec<SlotError>,
    /// Per-subject error (the FME for trajectory), in subject order.
    pub subjects: Vec<(usize, f64)>,
    pub skipped: Vec<usize>,
    pub median: f64,
    pub mad: f64,
}

impl ProtocolResult {
    fn new(protocol: Protocol, model: String, slots: Vec<SlotError>, skipped: Vec<usize>) -> Self {
        let mut subjects: Vec<(usize, f64)> = Vec::new();
        for id in slots.iter().map(|e| e.subject).collect::<BTreeSet<_>>() {
            let errs: Vec<f64> = slots.iter().filter(|e| e.subject == id).map(|e| e.mae).collect();
            subjects.push((id, errs.iter().sum::<f64>() / errs.len() as f64));
        }
        let values: Vec<f64> = subjects.iter().map(|s| s.1).collect();
        let (median, mad) = if values.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (median(&values), median_abs_deviation(&values))
        };
        ProtocolResult {
            protocol,
            model,
            slots,
            subjects,
            skipped,
            median,
            mad,
        }
    }

    /// `subject,slot,month,mae,subject_mean`, unscaled.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject,slot,month,mae,subject_mean\n");
        for e in &self.slots {
            let mean = self.subjects.iter().find(|s| s.0 == e.subject).map_or(f64::NAN, |s| s.1);
            out.push_str(&format!("{},{},{},{:?},{:?}\n", e.subject, e.slot, e.month, e.mae, mean));
        }
        out
    }
}

/// Slots hidden and scored for one subject, or `None` when the subject is ineligible.
pub fn protocol_slots(protocol: Protocol, subject: &Subject) -> Option<(Vec<usize>, Vec<usize>)> {
    let observed = subject.observed_slots();
    match protocol {
        Protocol::Interpolation => {
            if observed.len() < 3 {
                return None;
            }
            // mu = floor(T / 2) with T the index of the last observed visit.
            let mu = observed[(observed.len() - 1) / 2];
            Some((vec![mu], vec![mu]))
        }
        Protocol::Extrapolation => {
            if observed.len() < 2 {
                return None;
            }
            let last = *observed.last().expect("non-empty");
            Some((vec![last], vec![last]))
        }
        Protocol::Trajectory => {
            let last_month = SCHEDULE[*observed.last().expect("slot 0 observed")];
            let scored: Vec<usize> = (0..SCHEDULE.len())
                .filter(|&t| SCHEDULE[t] >= 24 && SCHEDULE[t] <= last_month)
                .collect();
            if scored.is_empty() {
                return None;
            }
            Some(((1..SCHEDULE.len()).collect(), scored))
        }
    }
}

/// Runs one protocol over `subjects`, checking that no hidden mesh reaches the model.
pub fn run_protocol(protocol: Protocol, predictor: &dyn Predictor, subjects: &[&Subject]) -> Result<ProtocolResult> {
    let mut errors = Vec::new();
    let mut skipped = Vec::new();
    for s in subjects {
        let Some((hidden, scored)) = protocol_slots(protocol, s) else {
            skipped.push(s.id());
            continue;
        };
        let batch = s.evaluation_batch(&hidden);
        let (preds, consumed) = predictor.predict(&batch, &scored)?;
        for &t in &hidden {
            let h = hash_coords(&s.truth[t]);
            if consumed.contains(&h) && s.truth[t] != s.truth[0] {
                return Err(Error::Validation(format!(
                    "{}: hidden slot {t} reached the model during {protocol}",
                    s.name()
                )));
            }
        }
        for (pred, &t) in preds.iter().zip(&scored) {
            errors.push(SlotError {
                subject: s.id(),
                slot: t,
                month: SCHEDULE[t],
                mae: mae(pred, &s.truth[t]),
            });
        }
    }
    Ok(ProtocolResult::new(protocol, predictor.name(), errors, skipped))
}

pub fn run_interpolation(predictor: &dyn Predictor, subjects: &[&Subject]) -> Result<ProtocolResult> {
    run_protocol(Protocol::Interpolation, predictor, subjects)
}

pub fn run_extrapolation(predictor: &dyn Predictor, subjects: &[&Subject]) -> Result<ProtocolResult> {
    run_protocol(Protocol::Extrapolation, predictor, subjects)
}

pub fn run_trajectory(predictor: &dyn Predictor, subjects: &[&Subject]) -> Result<ProtocolResult> {
    run_protocol(Protocol::Trajectory, predictor, subjects)
}

/// `model,params,protocol,n_subjects,n_skipped,median,mad,median_x100,mad_x100`.
pub fn summary_csv(rows: &[(&ProtocolResult, usize)]) -> String {
    let mut out = String::from("model,params,protocol,n_subjects,n_skipped,median,mad,median_x100,mad_x100\n");
    for (r, params) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:?},{:?},{:.4},{:.4}\n",
            r.model,
            params,
            r.protocol,
            r.subjects.len(),
            r.skipped.len(),
            r.median,
            r.mad,
            r.median * 100.0,
            r.mad * 100.0
        ));
    }
    out
}

/// Anomaly statistics for one subject over its observed visits at or after 24 months.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyStats {
    pub subject: usize,
    pub visits: Vec<u32>,
    pub inside_mean: f64,
    pub outside_mean: f64,
}

impl AnomalyStats {
    pub fn ratio(&self) -> f64 {
        self.inside_mean / self.outside_mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport {
    pub subjects: Vec<AnomalyStats>,
    /// Subjects without an observed visit at 24 months or later.
    pub skipped: Vec<usize>,
}

impl AnomalyReport {
    /// Fraction of evaluated subjects whose inside/outside ratio reaches `threshold`.
    pub fn fraction_at_least(&self, threshold: f64) -> f64 {
        let hits = self.subjects.iter().filter(|s| s.ratio() >= threshold).count();
        hits as f64 / self.subjects.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject,visits,inside_mean,outside_mean,ratio\n");
        for s in &self.subjects {
            let visits: Vec<String> = s.visits.iter().map(u32::to_string).collect();
            out.push_str(&format!(
                "{},{},{:?},{:?},{:?}\n",
                s.subject,
                visits.join(" "),
                s.inside_mean,
                s.outside_mean,
                s.ratio()
            ));
        }
        out
    }
}

/// Linear blue-to-red ramp between `lo` and `hi`.
pub fn heat_colors(values: &[f64]) -> (Vec<[u8; 3]>, f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let colors = values
        .iter()
        .map(|&v| {
            let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
            let r = (255.0 * t).round() as u8;
            [r, 0, 255 - r]
        })
        .collect();
    (colors, lo, hi)
}

/// Per-vertex Euclidean error between flattened meshes.
pub fn vertex_errors(pred: &[f64], truth: &[f64]) -> Vec<f64> {
    pred.chunks(3)
        .zip(truth.chunks(3))
        .map(|(p, t)| ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2)).sqrt())
        .collect()
}

/// Reconstructs every observed visit of each subject and compares the per-vertex
/// error inside the true atrophy ball against the rest of the surface. Fails if any
/// evaluated subject was part of the model's training set. With `heatmap_dir`, writes
/// one vertex-colored PLY per subject and visit.
pub fn run_anomaly(
    model: &Model,
    training_ids: &BTreeSet<usize>,
    subjects: &[&Subject],
    template: &TriangleMesh,
    heatmap_dir: Option<&Path>,
) -> Result<AnomalyReport> {
    if let Some(s) = subjects.iter().find(|s| training_ids.contains(&s.id())) {
        return Err(Error::Manifest(format!("{} was used for training", s.name())));
    }
    if let Some(dir) = heatmap_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut report = AnomalyReport {
        subjects: Vec::new(),
        skipped: Vec::new(),
    };
    for s in subjects {
        let observed = s.observed_slots();
        let batch = s.evaluation_batch(&[]);
        let (preds, _) = model.predict(&batch, &observed)?;
        let region = atrophy_region(template, &s.spec);
        let (mut inside, mut outside) = ((0.0, 0usize), (0.0, 0usize));
        let mut visits = Vec::new();
        for (pred, &t) in preds.iter().zip(&observed) {
            let err = vertex_errors(pred, &s.truth[t]);
            if let Some(dir) = heatmap_dir {
                let (colors, lo, hi) = heat_colors(&err);
                let mesh = template.with_vertices(s.truth[t].chunks(3).map(|c| [c[0], c[1], c[2]]).collect())?;
                let comments = [format!("error_min {lo:?}"), format!("error_max {hi:?}")];
                let path = dir.join(format!("{}_month_{:03}.ply", s.name(), SCHEDULE[t]));
                save_mesh_with(&mesh, &path, MeshFormat::Ply, PlyEncoding::Ascii, Some(&colors), &comments)?;
            }
            if SCHEDULE[t] < 24 {
                continue;
            }
            visits.push(SCHEDULE[t]);
            for (e, &r) in err.iter().zip(&region) {
                let acc = if r { &mut inside } else { &mut outside };
                acc.0 += e;
                acc.1 += 1;
            }
        }
        if visits.is_empty() || inside.1 == 0 || outside.1 == 0 {
            report.skipped.push(s.id());
            continue;
        }
        report.subjects.push(AnomalyStats {
            subject: s.id(),
            visits,
            inside_mean: inside.0 / inside.1 as f64,
            outside_mean: outside.0 / outside.1 as f64,
        });
    }
    Ok(report)
}

/// `config.echo`, `MANIFEST`, `metrics/` and `heatmaps/` under one root.
#[derive(Debug, Clone)]
pub struct ResultsDir {
    root: PathBuf,
}

impl ResultsDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["metrics", "heatmaps"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(ResultsDir { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn heatmaps(&self) -> PathBuf {
        self.root.join("heatmaps")
    }

    fn write(&self, rel: &str, text: &str) -> Result<()> {
        let p = self.root.join(rel);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn write_config(&self, config: &KeyValues) -> Result<()> {
        self.write("config.echo", &config.to_text())
    }

    pub fn write_metrics(&self, name: &str, csv: &str) -> Result<()> {
        self.write(&format!("metrics/{name}.csv"), csv)
    }

    /// One `sha256  path` line per input file, in the given order.
    pub fn write_manifest(&self, inputs: &[PathBuf]) -> Result<()> {
        let mut text = String::new();
        for p in inputs {
            text.push_str(&format!("{}  {}\n", sha256_file(p)?, p.display()));
        }
        self.write("MANIFEST", &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, CohortConfig};

    fn cohort() -> crate::cohort::Cohort {
        generate_cohort(&CohortConfig {
            n_subjects: 60,
            template_subdivisions: 1,
            ..Default::default()
        })
        .unwrap()
    }

    fn subject_with(observed: &[usize]) -> Subject {
        let mut s = cohort().subjects[0].clone();
        s.spec.observed = (0..8).map(|t| observed.contains(&t)).collect();
        s
    }

    #[test]
    fn middle_and_last_visit_selection() {
        // Months [0, 12, 72] -> index 1 of 3 visits.
        let s = subject_with(&[0, 2, 7]);
        assert_eq!(protocol_slots(Protocol::Interpolation, &s), Some((vec![2], vec![2])));
        assert_eq!(protocol_slots(Protocol::Extrapolation, &s), Some((vec![7], vec![7])));
        let four = subject_with(&[0, 1, 3, 5]);
        assert_eq!(protocol_slots(Protocol::Interpolation, &four).unwrap().0, vec![1]);
        assert_eq!(protocol_slots(Protocol::Interpolation, &subject_with(&[0, 1])), None);
        assert_eq!(protocol_slots(Protocol::Extrapolation, &subject_with(&[0])), None);
    }

    #[test]
    fn trajectory_eligibility() {
        assert_eq!(protocol_slots(Protocol::Trajectory, &subject_with(&[0, 1])), None);
        let (hidden, scored) = protocol_slots(Protocol::Trajectory, &subject_with(&[0, 2, 6])).unwrap();
        assert_eq!(hidden, (1..8).collect::<Vec<_>>());
        assert_eq!(scored, vec![4, 5, 6]);
    }

    #[test]
    fn copy_reference_matches_closed_form() {
        let c = cohort();
        let subjects: Vec<&Subject> = c.subjects.iter().collect();
        for p in Protocol::ALL {
            let r = run_protocol(p, &CopyReference, &subjects).unwrap();
            for e in &r.slots {
                let s = &c.subjects[e.subject];
                assert_eq!(e.mae, mae(&s.truth[0], &s.truth[e.slot]));
            }
            let values: Vec<f64> = r.subjects.iter().map(|s| s.1).collect();
            assert_eq!(r.median, median(&values));
            assert_eq!(r.subjects.len() + r.skipped.len(), subjects.len());
        }
    }

    #[test]
    fn leaking_predictor_is_caught() {
        struct Peek<'a>(&'a Subject);
        impl Predictor for Peek<'_> {
            fn name(&self) -> String {
                "peek".into()
            }
            fn predict(&self, _: &SequenceBatch, slots: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
                let t = slots[0];
                Ok((vec![self.0.truth[t].clone()], vec![hash_coords(&self.0.truth[t])]))
            }
        }
        let s = subject_with(&[0, 1, 2]);
        assert!(run_extrapolation(&Peek(&s), &[&s]).is_err());
    }

    #[test]
    fn heat_color_endpoints() {
        let (c, lo, hi) = heat_colors(&[0.5, 2.0, 1.25]);
        assert_eq!((lo, hi), (0.5, 2.0));
        assert_eq!(c, vec![[0, 0, 255], [255, 0, 0], [128, 0, 127]]);
    }
}
