//! Mask-offset sweep on self-labels: shrink and grow the vision mask around
//! the target and watch the label error and its distribution distance.
//! Each grid point trains its own backbone, so this takes a few minutes.

use rvl::experiment::{run_sweep, Dataset, ExperimentConfig, SweepConfig, SweepKind, SweepTarget};

fn main() -> rvl::Result<()> {
    let mut cfg = ExperimentConfig { n_pairs: 400, n_cal: 32, ..ExperimentConfig::default() }.with_seed(2);
    cfg.ssl.steps = 200;
    cfg.sweep = SweepConfig {
        kind: SweepKind::MaskOffset,
        grid: vec![-2.0, 0.0, 2.0, 8.0, 64.0],
        target: SweepTarget::Labels,
        ..SweepConfig::default()
    };
    let ds = Dataset::synthesize(&cfg)?;
    println!("{:>7}  {:>7}  {:>7}  {:>9}  {:>9}", "offset", "p50 m", "p90 m", "D_W rng", "D_W ang");
    for r in run_sweep(&cfg, &ds)? {
        println!("{:>7}  {:>7.3}  {:>7.3}  {:>9.3}  {:>9.2}", r.setting, r.p50, r.p90, r.dw_range, r.dw_angle);
    }
    Ok(())
}
