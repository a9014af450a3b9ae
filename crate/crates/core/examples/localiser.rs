//! Train the radio-only localiser on groundtruth labels and report its error.

use rvl::experiment::{fit_localiser, groundtruth_labels, predict, score, Dataset, ExperimentConfig};
use rvl::localiser::LocaliserConfig;

fn main() -> rvl::Result<()> {
    let cfg = ExperimentConfig {
        n_pairs: 600,
        localiser: LocaliserConfig { epochs: 20, ..LocaliserConfig::default() },
        ..ExperimentConfig::default()
    };
    let ds = Dataset::synthesize(&cfg)?;
    let out = fit_localiser(&cfg, &ds, &ds.train, &groundtruth_labels(&ds))?;
    for (epoch, l) in out.losses.iter().enumerate().step_by(5) {
        println!("epoch {epoch:>2}  mse {l:.4}");
    }
    let est: Vec<_> = predict(&out.net, &ds, &ds.valid)?.into_iter().map(Some).collect();
    let (_, row) = score(&cfg, &ds, "supervised", &ds.valid, &est)?;
    println!("validation: p50 {:.3} m, p90 {:.3} m, MI {:.3}", row.p50, row.p90, row.mi);
    Ok(())
}
