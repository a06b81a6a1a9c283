//! Synthetic longitudinal cohorts with known dynamics, missingness and anomaly regions.
//!
//! Every subject starts from the template warped by a few smooth Gaussian bumps. All
//! subjects then shrink slowly along their baseline normals (a saturating global
//! "aging" term); progressors additionally develop a focal inward dent that grows
//! linearly in time inside an atrophy ball. Each canonical month gets i.i.d.
//! Gaussian noise, and visits go missing through dropout plus sporadic absence.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::config::{join, KeyValues};
use crate::error::{Error, Result};
use crate::mesh::shapes::ellipsoid;
use crate::mesh::{load_mesh, norm, save_mesh_with, sub, MeshFormat, PlyEncoding, TriangleMesh, Vec3};
use crate::model::{SequenceBatch, Slot, SlotStatus};

/// Canonical visit months; one slot each.
pub const SCHEDULE: [u32; 8] = [0, 6, 12, 18, 24, 36, 48, 72];
pub const GENERATOR_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Group {
    Normal,
    Progressor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

macro_rules! text_enum {
    ($t:ty, $($v:path => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s { $($s => Ok($v),)+ _ => Err(format!("unexpected `{s}`")) }
            }
        }
    };
}

text_enum!(Group, Group::Normal => "normal", Group::Progressor => "progressor");
text_enum!(Split, Split::Train => "train", Split::Val => "val", Split::Test => "test");

/// Smooth displacement `vector * exp(-|x - center|^2 / (2 width^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: Vec3,
    pub width: f64,
    pub vector: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atrophy {
    /// Template vertex at the center of the ball.
    pub center: usize,
    pub radius: f64,
    /// Inward displacement per month at the center.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSpec {
    pub id: usize,
    pub group: Group,
    pub bumps: Vec<Bump>,
    /// Saturating inward shrinkage `amplitude * (1 - exp(-month / tau))`.
    pub aging_amplitude: f64,
    pub aging_tau: f64,
    pub atrophy: Option<Atrophy>,
    pub noise_sigma: f64,
    /// One flag per [`SCHEDULE`] month; slot 0 is always observed.
    pub observed: Vec<bool>,
    pub seed: u64,
}

impl SubjectSpec {
    /// Atrophy rate, zero for normal subjects.
    pub fn rate(&self) -> f64 {
        self.atrophy.map_or(0.0, |a| a.rate)
    }

    pub fn observed_slots(&self) -> Vec<usize> {
        (0..self.observed.len()).filter(|&t| self.observed[t]).collect()
    }

    fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new("subject.meta");
        kv.set("id", self.id);
        kv.set("group", self.group);
        kv.set("seed", self.seed);
        kv.set("noise_sigma", format!("{:?}", self.noise_sigma));
        kv.set("aging_amplitude", format!("{:?}", self.aging_amplitude));
        kv.set("aging_tau", format!("{:?}", self.aging_tau));
        let (center, radius, rate) = match self.atrophy {
            Some(a) => (a.center.to_string(), format!("{:?}", a.radius), format!("{:?}", a.rate)),
            None => ("none".into(), "0.0".into(), "0.0".into()),
        };
        kv.set("atrophy_center", center);
        kv.set("atrophy_radius", radius);
        kv.set("rate", rate);
        let months: Vec<u32> = self.observed_slots().iter().map(|&t| SCHEDULE[t]).collect();
        kv.set("schedule", join(&SCHEDULE));
        kv.set("observed_months", join(&months));
        let bumps: Vec<String> = self
            .bumps
            .iter()
            .map(|b| {
                [b.center[0], b.center[1], b.center[2], b.width, b.vector[0], b.vector[1], b.vector[2]]
                    .iter()
                    .map(|v| format!("{v:?}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        kv.set("bumps", bumps.join(";"));
        kv
    }

    fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let group: Group = kv.require("group")?;
        let atrophy = match kv.raw("atrophy_center") {
            Some("none") | None => None,
            Some(_) => Some(Atrophy {
                center: kv.require("atrophy_center")?,
                radius: kv.require("atrophy_radius")?,
                rate: kv.require("rate")?,
            }),
        };
        let months: Vec<u32> = kv.get_list("observed_months", vec![])?;
        let observed = SCHEDULE.iter().map(|m| months.contains(m)).collect();
        let bad = |msg: String| Error::Config {
            file: kv.file().to_string(),
            key: "bumps".into(),
            msg,
        };
        let mut bumps = Vec::new();
        for chunk in kv.raw("bumps").unwrap_or("").split(';').filter(|s| !s.is_empty()) {
            let v: Vec<f64> = chunk
                .split_whitespace()
                .map(|s| s.parse().map_err(|e| bad(format!("`{s}`: {e}"))))
                .collect::<Result<_>>()?;
            if v.len() != 7 {
                return Err(bad(format!("expected 7 numbers per bump, got {}", v.len())));
            }
            bumps.push(Bump {
                center: [v[0], v[1], v[2]],
                width: v[3],
                vector: [v[4], v[5], v[6]],
            });
        }
        Ok(SubjectSpec {
            id: kv.require("id")?,
            group,
            bumps,
            aging_amplitude: kv.require("aging_amplitude")?,
            aging_tau: kv.require("aging_tau")?,
            atrophy,
            noise_sigma: kv.require("noise_sigma")?,
            observed,
            seed: kv.require("seed")?,
        })
    }
}

/// Baseline shape before noise: template plus the subject's bumps.
pub fn baseline(template: &TriangleMesh, spec: &SubjectSpec) -> Vec<Vec3> {
    template
        .vertices()
        .iter()
        .map(|&p| {
            let mut q = p;
            for b in &spec.bumps {
                let d = norm(sub(p, b.center));
                let w = (-d * d / (2.0 * b.width * b.width)).exp();
                for k in 0..3 {
                    q[k] += w * b.vector[k];
                }
            }
            q
        })
        .collect()
}

/// Cosine taper: 1 on the inner half of the ball, falling smoothly to 0 at its edge.
pub fn falloff(distance: f64, radius: f64) -> f64 {
    let inner = 0.5 * radius;
    if distance <= inner {
        1.0
    } else if distance >= radius {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * (distance - inner) / (radius - inner)).cos())
    }
}

/// Vertices inside the subject's atrophy ball (measured on the noise-free baseline).
pub fn atrophy_region(template: &TriangleMesh, spec: &SubjectSpec) -> Vec<bool> {
    let base = baseline(template, spec);
    match spec.atrophy {
        None => vec![false; base.len()],
        Some(a) => base.iter().map(|&p| norm(sub(p, base[a.center])) < a.radius).collect(),
    }
}

/// Flattened `N x 3` meshes at every canonical month, observed or not.
pub fn generate_subject(template: &TriangleMesh, spec: &SubjectSpec) -> Vec<Vec<f64>> {
    let base = baseline(template, spec);
    let normals = template.with_vertices(base.clone()).expect("same topology").vertex_normals();
    let focal: Vec<f64> = match spec.atrophy {
        None => vec![0.0; base.len()],
        Some(a) => base.iter().map(|&p| falloff(norm(sub(p, base[a.center])), a.radius)).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    SCHEDULE
        .iter()
        .map(|&month| {
            let m = month as f64;
            let aging = if spec.aging_tau > 0.0 {
                spec.aging_amplitude * (1.0 - (-m / spec.aging_tau).exp())
            } else {
                0.0
            };
            let mut out = Vec::with_capacity(base.len() * 3);
            for (i, p) in base.iter().enumerate() {
                let inward = aging + spec.rate() * m * focal[i];
                for k in 0..3 {
                    let eps = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    out.push(p[k] - inward * normals[i][k] + eps);
                }
            }
            out
        })
        .collect()
}

/// Dropout plus sporadic absence: after each slot a subject stays enrolled with
/// probability `retention`, and an enrolled subject attends with probability `attendance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Missingness {
    pub retention: f64,
    pub attendance: f64,
}

impl Default for Missingness {
    /// Calibrated so the expected visit count is 3.25 of 8 and about 3% of subjects
    /// attend every session.
    fn default() -> Self {
        Missingness {
            retention: 0.777,
            attendance: 0.78,
        }
    }
}

impl Missingness {
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<bool> {
        let mut observed = vec![false; SCHEDULE.len()];
        observed[0] = true;
        for slot in observed.iter_mut().skip(1) {
            if rng.random::<f64>() >= self.retention {
                break;
            }
            *slot = rng.random::<f64>() < self.attendance;
        }
        observed
    }

    /// Exact expected number of visits, including the baseline.
    pub fn expected_visits(&self) -> f64 {
        1.0 + (1..SCHEDULE.len()).map(|k| self.retention.powi(k as i32) * self.attendance).sum::<f64>()
    }

    /// Exact probability of attending every session.
    pub fn complete_probability(&self) -> f64 {
        (self.retention * self.attendance).powi(SCHEDULE.len() as i32 - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortConfig {
    pub n_subjects: usize,
    pub fraction_progressors: f64,
    pub seed: u64,
    pub template_subdivisions: usize,
    /// Noise, bump amplitude, aging amplitude, radius and rates are fractions of the
    /// template bounding-box diagonal (rates per month).
    pub noise_fraction: f64,
    pub bump_count: usize,
    pub bump_amplitude: f64,
    pub aging_range: (f64, f64),
    pub aging_tau: f64,
    pub atrophy_rate_range: (f64, f64),
    pub atrophy_radius: f64,
    pub missingness: Missingness,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_subjects: 200,
            fraction_progressors: 0.4,
            seed: 42,
            template_subdivisions: 3,
            noise_fraction: 0.005,
            bump_count: 8,
            bump_amplitude: 0.05,
            aging_range: (0.025, 0.05),
            aging_tau: 24.0,
            atrophy_rate_range: (0.0012, 0.0025),
            atrophy_radius: 0.2,
            missingness: Missingness::default(),
        }
    }
}

impl CohortConfig {
    pub const KEYS: &'static [&'static str] = &[
        "n_subjects",
        "fraction_progressors",
        "seed",
        "template_subdivisions",
        "noise_fraction",
        "bump_count",
        "bump_amplitude",
        "aging_min",
        "aging_max",
        "aging_tau",
        "atrophy_rate_min",
        "atrophy_rate_max",
        "atrophy_radius",
        "retention",
        "attendance",
    ];

    pub fn with_overrides(&self, kv: &KeyValues) -> Result<Self> {
        let cfg = CohortConfig {
            n_subjects: kv.get("n_subjects", self.n_subjects)?,
            fraction_progressors: kv.get("fraction_progressors", self.fraction_progressors)?,
            seed: kv.get("seed", self.seed)?,
            template_subdivisions: kv.get("template_subdivisions", self.template_subdivisions)?,
            noise_fraction: kv.get("noise_fraction", self.noise_fraction)?,
            bump_count: kv.get("bump_count", self.bump_count)?,
            bump_amplitude: kv.get("bump_amplitude", self.bump_amplitude)?,
            aging_range: (kv.get("aging_min", self.aging_range.0)?, kv.get("aging_max", self.aging_range.1)?),
            aging_tau: kv.get("aging_tau", self.aging_tau)?,
            atrophy_rate_range: (
                kv.get("atrophy_rate_min", self.atrophy_rate_range.0)?,
                kv.get("atrophy_rate_max", self.atrophy_rate_range.1)?,
            ),
            atrophy_radius: kv.get("atrophy_radius", self.atrophy_radius)?,
            missingness: Missingness {
                retention: kv.get("retention", self.missingness.retention)?,
                attendance: kv.get("attendance", self.missingness.attendance)?,
            },
        };
        cfg.validate().map_err(|e| Error::Config {
            file: kv.file().to_string(),
            key: "cohort".into(),
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.n_subjects >= 10
            && (0.0..=1.0).contains(&self.fraction_progressors)
            && self.noise_fraction >= 0.0
            && self.aging_range.0 <= self.aging_range.1
            && self.atrophy_rate_range.0 > 0.0
            && self.atrophy_rate_range.0 <= self.atrophy_rate_range.1
            && self.atrophy_radius > 0.0
            && (0.0..=1.0).contains(&self.missingness.retention)
            && (0.0..=1.0).contains(&self.missingness.attendance);
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid cohort configuration {self:?}")))
        }
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new("cohort");
        kv.set("n_subjects", self.n_subjects);
        kv.set("fraction_progressors", self.fraction_progressors);
        kv.set("seed", self.seed);
        kv.set("template_subdivisions", self.template_subdivisions);
        kv.set("noise_fraction", self.noise_fraction);
        kv.set("bump_count", self.bump_count);
        kv.set("bump_amplitude", self.bump_amplitude);
        kv.set("aging_min", self.aging_range.0);
        kv.set("aging_max", self.aging_range.1);
        kv.set("aging_tau", self.aging_tau);
        kv.set("atrophy_rate_min", self.atrophy_rate_range.0);
        kv.set("atrophy_rate_max", self.atrophy_rate_range.1);
        kv.set("atrophy_radius", self.atrophy_radius);
        kv.set("retention", self.missingness.retention);
        kv.set("attendance", self.missingness.attendance);
        kv
    }

    /// The 2:1:1 ellipsoid all subjects are built on.
    pub fn template(&self) -> TriangleMesh {
        ellipsoid(self.template_subdivisions, [1.0, 0.5, 0.5])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub spec: SubjectSpec,
    pub split: Split,
    /// Flattened meshes at every [`SCHEDULE`] month.
    pub truth: Vec<Vec<f64>>,
}

impl Subject {
    pub fn id(&self) -> usize {
        self.spec.id
    }

    pub fn name(&self) -> String {
        format!("subject_{:04}", self.spec.id)
    }

    pub fn observed_slots(&self) -> Vec<usize> {
        self.spec.observed_slots()
    }

    /// Observed slots carry their mesh as input and target; the rest are missing.
    pub fn training_batch(&self) -> SequenceBatch {
        self.batch(&[], true)
    }

    /// Like [`Subject::training_batch`] with `hidden` slots forced missing and no
    /// targets anywhere, so nothing beyond the visible inputs reaches the model.
    pub fn evaluation_batch(&self, hidden: &[usize]) -> SequenceBatch {
        self.batch(hidden, false)
    }

    fn batch(&self, hidden: &[usize], targets: bool) -> SequenceBatch {
        let slots = SCHEDULE
            .iter()
            .enumerate()
            .map(|(t, &month)| {
                if self.spec.observed[t] && !hidden.contains(&t) {
                    Slot {
                        status: SlotStatus::Observed,
                        month,
                        input: self.truth[t].clone(),
                        target: targets.then(|| self.truth[t].clone()),
                    }
                } else {
                    Slot {
                        status: SlotStatus::Missing,
                        month,
                        input: Vec::new(),
                        target: None,
                    }
                }
            })
            .collect();
        SequenceBatch { slots }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub config: CohortConfig,
    pub template: TriangleMesh,
    pub subjects: Vec<Subject>,
}

fn subject_seed(cohort_seed: u64, id: usize) -> u64 {
    cohort_seed ^ (id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Template vertex nearest the designated anomaly site on the upper front of the ellipsoid.
pub fn anomaly_site(template: &TriangleMesh) -> usize {
    let (lo, hi) = template.bounding_box();
    let at = |k: usize, f: f64| 0.5 * (lo[k] + hi[k]) + f * (hi[k] - lo[k]);
    let target = [at(0, 0.275), at(1, 0.0), at(2, 0.42)];
    (0..template.n_vertices())
        .min_by(|&a, &b| {
            let da = norm(sub(template.vertices()[a], target));
            let db = norm(sub(template.vertices()[b], target));
            da.total_cmp(&db)
        })
        .expect("non-empty template")
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn draw_spec(id: usize, group: Group, template: &TriangleMesh, cfg: &CohortConfig, rng: &mut ChaCha8Rng) -> SubjectSpec {
    let diag = template.bbox_diagonal();
    let n = template.n_vertices();
    let mut bumps: Vec<Bump> = (0..cfg.bump_count)
        .map(|_| {
            let dir: [f64; 3] = UnitSphere.sample(rng);
            let size = rng.random_range(0.0..1.0);
            Bump {
                center: template.vertices()[rng.random_range(0..n)],
                width: rng.random_range(0.15..0.35) * diag,
                vector: dir.map(|c| c * size),
            }
        })
        .collect();
    // Rescale so the largest displacement over the template is the drawn amplitude.
    let amplitude = rng.random_range(0.5..1.0) * cfg.bump_amplitude * diag;
    let probe = SubjectSpec {
        id,
        group,
        bumps: bumps.clone(),
        aging_amplitude: 0.0,
        aging_tau: 0.0,
        atrophy: None,
        noise_sigma: 0.0,
        observed: vec![],
        seed: 0,
    };
    let peak = baseline(template, &probe)
        .iter()
        .zip(template.vertices())
        .map(|(&b, &t)| norm(sub(b, t)))
        .fold(0.0, f64::max);
    if peak > 0.0 {
        for b in &mut bumps {
            b.vector = b.vector.map(|c| c * amplitude / peak);
        }
    }
    let aging_amplitude = uniform(rng, cfg.aging_range) * diag;
    let atrophy = match group {
        Group::Normal => None,
        Group::Progressor => {
            let site = anomaly_site(template);
            let near: Vec<usize> = (0..n)
                .filter(|&v| norm(sub(template.vertices()[v], template.vertices()[site])) < 0.05 * diag)
                .collect();
            Some(Atrophy {
                center: near[rng.random_range(0..near.len())],
                radius: cfg.atrophy_radius * diag,
                rate: uniform(rng, cfg.atrophy_rate_range) * diag,
            })
        }
    };
    SubjectSpec {
        id,
        group,
        bumps,
        aging_amplitude,
        aging_tau: cfg.aging_tau,
        atrophy,
        noise_sigma: cfg.noise_fraction * diag,
        observed: cfg.missingness.sample(rng),
        seed: subject_seed(cfg.seed, id),
    }
}

/// Stratum key: group, and rate tercile within progressors.
fn strata(specs: &[SubjectSpec]) -> Vec<usize> {
    let mut rates: Vec<f64> = specs.iter().filter(|s| s.group == Group::Progressor).map(|s| s.rate()).collect();
    rates.sort_by(f64::total_cmp);
    specs
        .iter()
        .map(|s| match s.group {
            Group::Normal => 0,
            Group::Progressor => {
                let rank = rates.partition_point(|&r| r < s.rate());
                1 + (3 * rank / rates.len()).min(2)
            }
        })
        .collect()
}

/// Deterministic 70/15/15 split within each stratum.
fn assign_splits(specs: &[SubjectSpec], rng: &mut ChaCha8Rng) -> Vec<Split> {
    let keys = strata(specs);
    let mut splits = vec![Split::Train; specs.len()];
    for stratum in 0..4 {
        let mut members: Vec<usize> = (0..specs.len()).filter(|&i| keys[i] == stratum).collect();
        members.shuffle(rng);
        let k = members.len();
        let n_train = (0.70 * k as f64).round() as usize;
        let n_val = ((0.15 * k as f64).round() as usize).min(k - n_train);
        for (pos, &i) in members.iter().enumerate() {
            splits[i] = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    splits
}

pub fn generate_cohort(cfg: &CohortConfig) -> Result<Cohort> {
    cfg.validate()?;
    let template = cfg.template();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_prog = (cfg.fraction_progressors * cfg.n_subjects as f64).round() as usize;
    let mut ids: Vec<usize> = (0..cfg.n_subjects).collect();
    ids.shuffle(&mut rng);
    let mut groups = vec![Group::Normal; cfg.n_subjects];
    for &i in &ids[..n_prog] {
        groups[i] = Group::Progressor;
    }
    let specs: Vec<SubjectSpec> = (0..cfg.n_subjects)
        .map(|id| draw_spec(id, groups[id], &template, cfg, &mut rng))
        .collect();
    let splits = assign_splits(&specs, &mut rng);
    let subjects = specs
        .into_iter()
        .zip(splits)
        .map(|(spec, split)| Subject {
            truth: generate_subject(&template, &spec),
            spec,
            split,
        })
        .collect();
    Ok(Cohort {
        config: cfg.clone(),
        template,
        subjects,
    })
}

/// Summary statistics of the visit pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisitStats {
    pub mean_visits: f64,
    pub complete_fraction: f64,
}

impl Cohort {
    pub fn split(&self, split: Split) -> Vec<&Subject> {
        self.subjects.iter().filter(|s| s.split == split).collect()
    }

    pub fn visit_stats(&self) -> VisitStats {
        let n = self.subjects.len() as f64;
        let visits: usize = self.subjects.iter().map(|s| s.observed_slots().len()).sum();
        let complete = self.subjects.iter().filter(|s| s.spec.observed.iter().all(|&o| o)).count();
        VisitStats {
            mean_visits: visits as f64 / n,
            complete_fraction: complete as f64 / n,
        }
    }

    fn mesh(&self, coords: &[f64]) -> Result<TriangleMesh> {
        self.template.with_vertices(coords.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Writes the archive: `template.ply`, `cohort.manifest`, and per subject
    /// `month_{m:03}.ply` (observed), `gt_month_{m:03}.ply` (all) and `subject.meta`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        let write = |p: &Path, text: &str| fs::write(p, text).map_err(|e| Error::io(p, e));
        let ply = |mesh: &TriangleMesh, p: &Path| save_mesh_with(mesh, p, MeshFormat::Ply, PlyEncoding::BinaryLittleEndian, None, &[]);
        mkdir(dir)?;
        ply(&self.template, &dir.join("template.ply"))?;
        let mut manifest = format!("generator_version = {GENERATOR_VERSION}\n");
        manifest.push_str(&self.config.to_key_values().to_text());
        for s in &self.subjects {
            manifest.push_str(&format!("{} = {} {}\n", s.name(), s.split, s.spec.group));
            let sdir = dir.join(s.name());
            mkdir(&sdir)?;
            let mut meta = s.spec.to_key_values();
            meta.set("split", s.split);
            write(&sdir.join("subject.meta"), &meta.to_text())?;
            for (t, &month) in SCHEDULE.iter().enumerate() {
                let mesh = self.mesh(&s.truth[t])?;
                ply(&mesh, &sdir.join(format!("gt_month_{month:03}.ply")))?;
                if s.spec.observed[t] {
                    ply(&mesh, &sdir.join(format!("month_{month:03}.ply")))?;
                }
            }
        }
        write(&dir.join("cohort.manifest"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = KeyValues::load(&dir.join("cohort.manifest"))?;
        let config = CohortConfig::default().with_overrides(&manifest)?;
        let template = load_mesh(dir.join("template.ply"), MeshFormat::Ply)?;
        let mut subjects = Vec::new();
        for (key, _) in manifest.entries().iter().filter(|(k, _)| k.starts_with("subject_")) {
            let sdir = dir.join(key);
            let meta = KeyValues::load(&sdir.join("subject.meta"))?;
            let spec = SubjectSpec::from_key_values(&meta)?;
            let split = meta.require("split")?;
            let truth = SCHEDULE
                .iter()
                .map(|m| {
                    let mesh = load_mesh(sdir.join(format!("gt_month_{m:03}.ply")), MeshFormat::Ply)?;
                    if mesh.faces() != template.faces() {
                        return Err(Error::Validation(format!("{key}: topology differs from template")));
                    }
                    Ok(mesh.flat_vertices())
                })
                .collect::<Result<_>>()?;
            subjects.push(Subject { spec, split, truth });
        }
        Ok(Cohort {
            config,
            template,
            subjects,
        })
    }
}
