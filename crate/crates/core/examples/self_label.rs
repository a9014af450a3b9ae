//! Full self-labelling step: train a backbone, read the target position off
//! the cross-modal attention map, then remove the constant offset using a few
//! groundtruth references.

use rvl::experiment::{label_dataset, train_ssl, Dataset, ExperimentConfig};
use rvl::metrics::ErrorStats;
use rvl::selflabel::pair_attention;

fn main() -> rvl::Result<()> {
    let cfg = ExperimentConfig { n_pairs: 320, n_cal: 32, ..ExperimentConfig::default() }.with_seed(4);
    let radio = &cfg.synth.radio;
    let ds = Dataset::synthesize(&cfg)?;
    let out = train_ssl(&cfg, cfg.ssl.flavour, &ds)?;
    let ssl = cfg.ssl_for(cfg.ssl.flavour);

    let (labels, cal) = label_dataset(&cfg, &out.model, &ssl, &ds)?;
    if let Some(c) = cal {
        println!("calibration from {} pairs: range {:+.2} m, azimuth {:+.2}°", c.n_cal, c.range_offset, c.azimuth_offset);
    }
    let errs: Vec<f64> = ds.valid.iter().map(|&id| labels[id as usize].bin_error(ds.pair(id), radio)).collect();
    let stats = ErrorStats::new(&errs)?;
    println!("validation self-label error: p50 {:.2} bins, p90 {:.2} bins over {} pairs", stats.p50, stats.p90, stats.count());

    let p = ds.pair(ds.valid[0]);
    let map = pair_attention(&out.model, &ssl, p)?;
    let (i, j) = map.argmax();
    println!("pair {}: attention peak at feature bin ({i}, {j}) of {}x{}, groundtruth heatmap bin {:?}", p.id, map.h, map.w, p.gt.heatmap_bin);
    Ok(())
}
