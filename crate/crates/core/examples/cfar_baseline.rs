//! Statistical detection chain on a few heatmaps: CA-CFAR, DBSCAN, centroids,
//! then the genie-aided pick and the camera-gated fusion teacher.

use rvl::baselines::{detect, fusion_teacher, genie_select, ChainConfig};
use rvl::dataset::{synth_dataset, SynthConfig};
use rvl::metrics::location_error;

fn main() -> rvl::Result<()> {
    let cfg = SynthConfig::default();
    let chain = ChainConfig::default();
    for p in synth_dataset(&cfg, 6, 5)? {
        let dets = detect(&p.heatmap, &chain, &cfg.radio)?;
        let genie = genie_select(&dets, &p.gt);
        let fusion = fusion_teacher(p.id, &p.gt.bbox, &dets, &cfg.camera, &p.heatmap, &cfg.radio, chain.fusion_gate_deg);
        print!("pair {}: {} detections", p.id, dets.len());
        if let Some(d) = genie {
            print!(", genie {:.2} m / {:.1}° (error {:.2} m)", d.range, d.azimuth, location_error(d.range, d.azimuth, p.gt.range, p.gt.azimuth));
        }
        println!(
            ", fusion {:.2} m / {:.1}° (error {:.2} m)",
            fusion.range_est,
            fusion.azimuth_est,
            location_error(fusion.range_est, fusion.azimuth_est, p.gt.range, p.gt.azimuth)
        );
    }
    Ok(())
}
