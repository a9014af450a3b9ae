use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvl::experiment::{
    jitter_bbox, run_sweep, Dataset, ExperimentConfig, SweepConfig, SweepKind, SweepTarget, DETECTOR_SIGMA_PX,
};
use rvl::ssl::SslConfig;

fn tiny() -> ExperimentConfig {
    ExperimentConfig {
        n_pairs: 40,
        n_cal: 10,
        ssl: SslConfig { steps: 6, batch: 4, ..SslConfig::default() },
        ..ExperimentConfig::default()
    }
    .with_seed(9)
}

fn sweep(kind: SweepKind, grid: &[f64]) -> SweepConfig {
    SweepConfig { kind, grid: grid.to_vec(), target: SweepTarget::Labels, ..SweepConfig::default() }
}

#[test]
fn zero_mask_noise_reproduces_clean_row() {
    let mut cfg = tiny();
    let ds = Dataset::synthesize(&cfg).unwrap();
    cfg.sweep = sweep(SweepKind::MaskNoise, &[0.0, 2.0]);
    let noisy = run_sweep(&cfg, &ds).unwrap();
    cfg.sweep = sweep(SweepKind::MaskOffset, &[0.0]);
    let clean = run_sweep(&cfg, &ds).unwrap();
    assert_eq!(noisy.len(), 2);
    assert_eq!((noisy[0].p50, noisy[0].p90, noisy[0].dw_range, noisy[0].dw_angle), (clean[0].p50, clean[0].p90, clean[0].dw_range, clean[0].dw_angle));
}

#[test]
fn mask_offset_grid_gives_one_row_per_point() {
    let mut cfg = tiny();
    let ds = Dataset::synthesize(&cfg).unwrap();
    cfg.sweep = sweep(SweepKind::MaskOffset, &[-2.0, 0.0, 2.0, 8.0]);
    let rows = run_sweep(&cfg, &ds).unwrap();
    assert_eq!(rows.iter().map(|r| r.setting).collect::<Vec<_>>(), vec![-2.0, 0.0, 2.0, 8.0]);
    assert!(rows.iter().all(|r| r.p50 <= r.p90 && r.dw_range >= 0.0 && r.dw_angle >= 0.0));
}

#[test]
fn empty_grid_is_a_config_error() {
    let mut cfg = tiny();
    let ds = Dataset::synthesize(&ExperimentConfig { n_pairs: 8, ..cfg.clone() }).unwrap();
    cfg.sweep = sweep(SweepKind::LabelDensity, &[]);
    assert!(run_sweep(&cfg, &ds).unwrap_err().is_config());
}

#[test]
fn default_detector_noise_matches_target_iou() {
    let cfg = ExperimentConfig::default();
    let ds = Dataset::synthesize(&ExperimentConfig { n_pairs: 400, ..cfg.clone() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ious: Vec<f64> = ds
        .pairs
        .iter()
        .map(|p| {
            let b = p.mask.bounding_box().unwrap();
            let j = jitter_bbox(&b, DETECTOR_SIGMA_PX, cfg.sweep.size_jitter, (p.image.height, p.image.width), &mut rng);
            b.iou(&j)
        })
        .collect();
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    assert!((mean - 0.94).abs() < 0.01, "mean IoU {mean}");
}
