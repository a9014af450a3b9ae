//! Synthesize a handful of radio-visual pairs and write them to disk.
//!
//! `cargo run --release --example synth_dataset -- /tmp/rvl-pairs 8`

use std::path::PathBuf;

use rvl::dataset::{read_dataset, synth_dataset, write_dataset, SynthConfig};

fn main() -> rvl::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("rvl-pairs"));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);

    let cfg = SynthConfig::default();
    let pairs = synth_dataset(&cfg, n, 42)?;
    write_dataset(&pairs, &root)?;

    println!("{:>3}  {:>8}  {:>9}  {:>9}  {:>14}", "id", "range m", "azimuth", "bin", "image box");
    for p in &pairs {
        let b = p.gt.bbox;
        println!(
            "{:>3}  {:>8.2}  {:>8.2}°  {:>9}  {:>14}",
            p.id,
            p.gt.range,
            p.gt.azimuth,
            format!("{:?}", p.gt.heatmap_bin),
            format!("r{}-{} c{}-{}", b.row_min, b.row_max, b.col_min, b.col_max)
        );
    }
    let back = read_dataset(&root)?;
    assert_eq!(back, pairs);
    println!("wrote and re-read {} pairs under {}", back.len(), root.display());
    Ok(())
}
