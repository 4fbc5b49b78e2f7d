//! Writes a synthetic 10-class task and a ready-to-run experiment config,
//! then shows the class-subset, balancing and split pipeline on an
//! unbalanced pool.
//!
//!     cargo run --example prepare_dataset -- demo/
//!
//! `demo/experiment.toml` is then usable with the `hitl` binary.

use std::collections::BTreeMap;
use std::path::PathBuf;

use hitl_conformal::conformal::{LogitExample, LogitTable};
use hitl_conformal::data::{select_top_classes, split_cal_test, stratified_balance, SplitSpec};
use hitl_conformal::service::ExperimentConfig;
use hitl_conformal::synth::{write_demo_experiment, SyntheticModel};

fn main() -> hitl_conformal::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    let config = write_demo_experiment(&dir, 2024)?;
    let exp = ExperimentConfig::load(&config)?.resolve()?;
    println!("wrote {}", config.display());
    println!(
        "calibration n = {}, test n = {}, calibration fingerprint {}",
        exp.dataset.cal.len(),
        exp.dataset.test.len(),
        exp.calibration.fingerprint
    );
    println!(
        "top-{} empirical risk alpha_hat = {:.4}, stated coverage {:.1}%",
        exp.config.k,
        exp.alpha_hat,
        exp.stated_coverage * 100.0
    );

    // Keep the 5 most frequent classes of an unbalanced 8-class pool.
    let pool = SyntheticModel::new(8).iid_table(3000, 5, "pool-")?;
    let mut counts = BTreeMap::new();
    for ex in pool.examples() {
        *counts.entry(ex.true_label).or_insert(0usize) += 1;
    }
    let subset = select_top_classes(&counts, 5)?;
    let kept: Vec<LogitExample> = pool
        .examples()
        .iter()
        .filter_map(|ex| {
            let y = subset.remap(&ex.true_label)?;
            let logits = subset.original.iter().map(|&c| ex.logits[c]).collect();
            Some(LogitExample {
                example_id: ex.example_id.clone(),
                true_label: y,
                logits,
            })
        })
        .collect();
    let balanced = stratified_balance(&kept, 5, None, 9)?;
    let spec = SplitSpec {
        n_cal: 500,
        seed: 9,
        class_subset_size: 5,
    };
    let (cal, test) = split_cal_test(&balanced, &spec)?;
    let cal = LogitTable::new(subset.label_space.clone(), cal)?;
    let test = LogitTable::new(subset.label_space.clone(), test)?;
    let sub_dir = dir.join("subset");
    std::fs::create_dir_all(&sub_dir)?;
    cal.save(sub_dir.join("cal.ndjson"), sub_dir.join("labels.json"))?;
    test.save(sub_dir.join("test.ndjson"), sub_dir.join("labels.json"))?;
    println!(
        "subset of original classes {:?}: {} balanced, {} calibration / {} test, written to {}",
        subset.original,
        balanced.len(),
        cal.len(),
        test.len(),
        sub_dir.display()
    );
    Ok(())
}
