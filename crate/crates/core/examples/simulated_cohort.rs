//! Runs a full simulated three-arm experiment over HTTP against an
//! in-process trial service, then analyzes it.
//!
//!     cargo run --release --example simulated_cohort -- [participants_per_arm]

use hitl_conformal::agents::{arm_moments, resolve_policies, simulate, CohortOptions};
use hitl_conformal::analysis::{report, Metric};
use hitl_conformal::conformal::Treatment;
use hitl_conformal::service::ExperimentConfig;
use hitl_conformal::synth::write_demo_experiment;

#[tokio::main]
async fn main() -> hitl_conformal::Result<()> {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20);
    let dir = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig::load(write_demo_experiment(dir.path(), 42)?)?;
    cfg.participants_per_arm = n;
    cfg.service.enforce_timing = false;
    cfg.service.fsync = false;
    let exp = cfg.resolve()?;

    let policies = resolve_policies(&exp, &exp.config.treatments)?;
    for (arm, p) in &policies {
        let expected = arm_moments(&exp, *arm)?.expected_accuracy(p);
        println!(
            "{:<9} adopt {:.3}  in-set skill {:.3}  base skill {:.3}  expected accuracy {:.3}",
            arm.as_str(),
            p.adopt_prob,
            p.in_set_skill,
            p.base_skill,
            expected
        );
    }

    let started = std::time::Instant::now();
    let lines = simulate(exp.clone(), &CohortOptions::new(exp.config.task_id.clone())).await?;
    println!("{} export lines in {:.1?}", lines.len(), started.elapsed());

    let r = report(&lines, &exp)?;
    for a in &r.arms {
        println!(
            "{:<9} n={:<3} accuracy {:.3} ± {:.3}   time {:.0} ms",
            a.arm.as_str(),
            a.n,
            a.accuracy_mean,
            a.accuracy_se.unwrap_or(f64::NAN),
            a.time_mean_ms
        );
    }
    for (g1, g2) in [
        (Treatment::Topk, Treatment::Control),
        (Treatment::Conformal, Treatment::Topk),
    ] {
        if let Some(res) = r
            .test(Metric::Accuracy, g1, g2)
            .and_then(|t| t.result.as_ref())
        {
            println!(
                "{} > {}: t = {:.2}, dof = {:.1}, p = {:.2e}, d = {:.2}",
                g1.as_str(),
                g2.as_str(),
                res.t_stat,
                res.dof,
                res.p_value,
                res.effect_size_d
            );
        }
    }
    for a in &r.adoption {
        println!("adoption {}: {:.3}", a.arm.as_str(), a.rate);
    }
    Ok(())
}
