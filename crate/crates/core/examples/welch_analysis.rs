//! Welch t tests and Cohen's d on per-participant accuracies.
//!
//! With a records file (as written by `hitl agents run`) every arm pair is
//! tested; without one, two synthetic groups are compared.
//!
//!     cargo run --example welch_analysis -- [records.ndjson]

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;

use hitl_conformal::analysis::observations;
use hitl_conformal::conformal::Treatment;
use hitl_conformal::service::read_export;
use hitl_conformal::stats::{welch_t_test, Tail};

fn main() -> hitl_conformal::Result<()> {
    let groups: BTreeMap<Treatment, Vec<f64>> = match std::env::args().nth(1) {
        Some(path) => {
            let lines = read_export(BufReader::new(File::open(path)?))?;
            let mut groups = BTreeMap::new();
            for o in observations(&lines).observations {
                groups
                    .entry(o.arm)
                    .or_insert_with(Vec::new)
                    .push(o.accuracy);
            }
            groups
        }
        None => BTreeMap::from([
            (
                Treatment::Control,
                vec![0.42, 0.38, 0.46, 0.40, 0.36, 0.44, 0.40, 0.34],
            ),
            (
                Treatment::Conformal,
                vec![0.62, 0.70, 0.58, 0.66, 0.64, 0.72, 0.60, 0.68],
            ),
        ]),
    };

    for (arm, xs) in &groups {
        println!(
            "{:<9} n={:<3} mean {:.3}",
            arm.as_str(),
            xs.len(),
            xs.iter().sum::<f64>() / xs.len() as f64
        );
    }
    let arms: Vec<_> = groups.keys().copied().collect();
    for (i, &a) in arms.iter().enumerate() {
        for &b in &arms[..i] {
            for tail in [Tail::OneSidedGreater, Tail::TwoSided] {
                match welch_t_test(&groups[&a], &groups[&b], tail) {
                    Ok(r) => println!(
                        "{} vs {} {tail:?}: t = {:.3}, dof = {:.2}, p = {:.3e}, d = {:.3}",
                        a.as_str(),
                        b.as_str(),
                        r.t_stat,
                        r.dof,
                        r.p_value,
                        r.effect_size_d
                    ),
                    Err(e) => println!("{} vs {}: {e}", a.as_str(), b.as_str()),
                }
            }
        }
    }
    Ok(())
}
