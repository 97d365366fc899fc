//! Bandwidth pilot: mean L2 error of the oracle DR curve at n = 5000 for a
//! range of constants `c` in `h = c n^(-1/4.5)`, on seeds disjoint from the
//! main experiment.
//!
//! cargo run --release -p drcut --example bandwidth_pilot [reps] [c1,c2,...]

use drcut::crossfit::PipelineConfig;
use drcut::experiment::{run_experiment, ExperimentConfig};

fn main() -> drcut::Result<()> {
    let reps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(40);
    println!("c,l2_mean,l2_sd,coverage95_at_w0");
    let cs: Vec<f64> = match std::env::args().nth(2) {
        Some(list) => list.split(',').filter_map(|s| s.parse().ok()).collect(),
        None => vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0],
    };
    for c in cs {
        let config = ExperimentConfig {
            replications: reps,
            estimators: vec!["dr-oracle".into()],
            seed: 777,
            pipeline: PipelineConfig {
                bandwidth_c: c,
                ..PipelineConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let out = run_experiment(&config)?;
        let s = &out.summary.estimators[0];
        let g0 = config.grid.index_of(config.checks.w0);
        let cov = s
            .coverage
            .iter()
            .find(|l| l.level == 0.95)
            .map_or(f64::NAN, |l| l.by_point[g0]);
        println!("{c},{:.4},{:.4},{cov:.3}", s.l2_mean, s.l2_sd);
    }
    Ok(())
}
