//! Train a tiny TransforMesh on a small cohort and score the three protocols
//! against the copy-reference oracle.

use transformesh::cohort::{generate_cohort, CohortConfig, Split};
use transformesh::experiment::{run_protocol, CopyReference, Protocol};
use transformesh::hierarchy::build_hierarchy;
use transformesh::model::{Model, ModelConfig};
use transformesh::training::{train_with, TrainConfig};

fn main() -> transformesh::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let cohort = generate_cohort(&CohortConfig {
        n_subjects: 60,
        ..CohortConfig::default()
    })?;
    let config = ModelConfig::desk("ttm")?;
    let hierarchy = build_hierarchy(&cohort.template, &config.hierarchy)?;
    let model = Model::new(&config, &hierarchy)?;
    println!("ttm: {} parameters", model.params().n_scalars());

    let batches = |split| cohort.split(split).iter().map(|s| s.training_batch()).collect::<Vec<_>>();
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let report = train_with(&model, &batches(Split::Train), &batches(Split::Val), &cfg, None, &mut |e| {
        println!("epoch {:3}  train {:.4}  val {:.4}", e.epoch, e.train_loss, e.val_loss);
        Ok(())
    })?;
    println!("kept epoch {} (val {:.4})", report.best_epoch, report.best_loss);

    let test = cohort.split(Split::Test);
    for p in Protocol::ALL {
        let m = run_protocol(p, &model, &test)?;
        let c = run_protocol(p, &CopyReference, &test)?;
        println!(
            "{:>13}: ttm {:.3} ± {:.3}  copy-reference {:.3} ± {:.3}  (x100, {} subjects, {} skipped)",
            p.to_string(),
            100.0 * m.median,
            100.0 * m.mad,
            100.0 * c.median,
            100.0 * c.mad,
            m.subjects.len(),
            m.skipped.len()
        );
    }
    Ok(())
}
