//! Generate a small synthetic cohort and write it to disk.

use transformesh::cohort::{generate_cohort, CohortConfig, Group, Split};

fn main() -> transformesh::Result<()> {
    let cfg = CohortConfig {
        n_subjects: 40,
        ..CohortConfig::default()
    };
    let cohort = generate_cohort(&cfg)?;
    let stats = cohort.visit_stats();
    println!(
        "{} subjects, mean visits {:.2} (expected {:.2}), complete {:.1}%",
        cohort.subjects.len(),
        stats.mean_visits,
        cfg.missingness.expected_visits(),
        100.0 * stats.complete_fraction
    );
    for split in [Split::Train, Split::Val, Split::Test] {
        let subjects = cohort.split(split);
        let progressors = subjects.iter().filter(|s| s.spec.group == Group::Progressor).count();
        println!("{split}: {} subjects, {progressors} progressors", subjects.len());
    }
    let s = &cohort.subjects[0];
    println!("{} ({}) observed slots {:?}, rate {:.5}", s.name(), s.spec.group, s.observed_slots(), s.spec.rate());

    let dir = std::env::temp_dir().join("transformesh_cohort");
    cohort.save(&dir)?;
    println!("archive written to {}", dir.display());
    Ok(())
}
