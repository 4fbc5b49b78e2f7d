//! Calibrates RAPS and canonical conformal sets on synthetic logits, matches
//! top-k coverage, and round-trips the frozen calibration file.
//!
//!     cargo run --example calibrate_raps -- [num_classes]

use hitl_conformal::conformal::{
    calibrate, evaluate_sets, match_coverage, CalibrationResult, RapsParams, ScoreMethod,
    SetBuilder,
};
use hitl_conformal::synth::SyntheticModel;

fn main() -> hitl_conformal::Result<()> {
    let m: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let model = SyntheticModel::new(m);
    let cal = model.iid_table(1000, 1, "cal-")?;
    let test = model.iid_table(1000, 2, "test-")?;
    let params = RapsParams {
        lambda: 0.01,
        k_reg: 2,
        temperature: 1.0,
        seed: 7,
        randomized: true,
    };

    println!(
        "{:<10} {:>6} {:>9} {:>9} {:>9}",
        "method", "alpha", "q_hat", "coverage", "avg size"
    );
    for method in [ScoreMethod::Canonical, ScoreMethod::Raps] {
        for alpha in [0.05, 0.1, 0.2] {
            let calib = calibrate(&cal, alpha, method, params)?;
            let q = calib.q_hat;
            let r = evaluate_sets(&test, &SetBuilder::Conformal(calib), 1)?;
            println!(
                "{:<10} {alpha:>6} {q:>9.4} {:>9.3} {:>9.2}",
                format!("{method:?}"),
                r.coverage,
                r.avg_size
            );
        }
    }

    println!();
    for k in 1..=3.min(m) {
        let (alpha_hat, calib) = match_coverage(&cal, k, params)?;
        let topk = SetBuilder::TopK {
            k,
            temperature: 1.0,
            stated_coverage: Some(1.0 - alpha_hat),
        };
        let a = evaluate_sets(&test, &topk, k)?;
        let b = evaluate_sets(&test, &SetBuilder::Conformal(calib), k)?;
        println!(
            "top-{k}: alpha_hat {alpha_hat:.3}  held-out coverage top-k {:.3} vs RAPS {:.3}  RAPS sizes {:?}",
            a.coverage, b.coverage, b.size_histogram
        );
    }

    // With 5 calibration points and alpha = 0.1 the quantile index exceeds n.
    let tiny = model.iid_table(5, 3, "tiny-")?;
    let calib = calibrate(&tiny, 0.1, ScoreMethod::Raps, params)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("calibration.json");
    calib.write(&path)?;
    println!("\n{}", std::fs::read_to_string(&path)?);
    assert_eq!(CalibrationResult::read(&path)?, calib);
    Ok(())
}
