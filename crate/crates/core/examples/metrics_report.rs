//! Compare noisy and biased estimators against groundtruth with the report
//! metrics and print the CSV table.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rvl::metrics::{location_error, method_row, write_report, Windows};

fn main() -> rvl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let win = Windows { range: (5.0, 25.0), azimuth: (-45.0, 45.0), n_bins: 32 };
    let gt: Vec<(f64, f64)> = (0..500)
        .map(|i| (9.0 + 7.0 * (i as f64 * 0.618).fract(), -35.0 + 70.0 * (i as f64 * 0.382).fract()))
        .collect();
    let noise = Normal::new(0.0, 1.0).expect("unit sigma");
    let variants: [(&str, f64, f64); 4] = [("exact", 0.0, 0.0), ("noisy", 0.5, 0.0), ("biased", 0.0, 1.5), ("noisy_biased", 0.5, 1.5)];
    let mut rows = Vec::new();
    for (name, sigma, bias) in variants {
        let est: Vec<(f64, f64)> =
            gt.iter().map(|&(r, a)| (r + bias + sigma * noise.sample(&mut rng), a + 4.0 * sigma * noise.sample(&mut rng))).collect();
        let errs: Vec<f64> = est.iter().zip(&gt).map(|(e, g)| location_error(e.0, e.1, g.0, g.1)).collect();
        rows.push(method_row(name, &est, &gt, &errs, win)?);
    }
    let path = std::env::temp_dir().join("rvl-metrics.csv");
    write_report(&path, &rows)?;
    print!("{}", std::fs::read_to_string(&path).expect("report just written"));
    Ok(())
}
