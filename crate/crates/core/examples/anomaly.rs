//! Train on normal subjects only, then map per-vertex reconstruction error on
//! progressors and compare it inside and outside the true atrophy region.

use std::collections::BTreeSet;

use transformesh::cohort::{generate_cohort, CohortConfig, Group, Split, Subject};
use transformesh::experiment::run_anomaly;
use transformesh::hierarchy::build_hierarchy;
use transformesh::model::{Model, ModelConfig};
use transformesh::training::{train, TrainConfig};

fn main() -> transformesh::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let cohort = generate_cohort(&CohortConfig {
        n_subjects: 80,
        ..CohortConfig::default()
    })?;
    let config = ModelConfig::desk("ttm")?;
    let hierarchy = build_hierarchy(&cohort.template, &config.hierarchy)?;
    let model = Model::new(&config, &hierarchy)?;

    let normals = |split| -> Vec<&Subject> {
        cohort.split(split).into_iter().filter(|s| s.spec.group == Group::Normal).collect()
    };
    let (tr, va) = (normals(Split::Train), normals(Split::Val));
    let batches = |s: &[&Subject]| s.iter().map(|s| s.training_batch()).collect::<Vec<_>>();
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    train(&model, &batches(&tr), &batches(&va), &cfg, None)?;

    let seen: BTreeSet<usize> = tr.iter().chain(&va).map(|s| s.id()).collect();
    let progressors: Vec<&Subject> = cohort.subjects.iter().filter(|s| s.spec.group == Group::Progressor).collect();
    let dir = std::env::temp_dir().join("transformesh_heatmaps");
    let report = run_anomaly(&model, &seen, &progressors, &cohort.template, Some(&dir))?;
    for s in &report.subjects {
        println!(
            "subject_{:04} months {:?}: inside {:.4} outside {:.4} ratio {:.2}",
            s.subject,
            s.visits,
            s.inside_mean,
            s.outside_mean,
            s.ratio()
        );
    }
    println!(
        "{:.0}% of {} progressors with ratio >= 1.5; heatmaps in {}",
        100.0 * report.fraction_at_least(1.5),
        report.subjects.len(),
        dir.display()
    );
    Ok(())
}
