//! Simulate the OFDM radar channel of one scene and look at both radar images:
//! the range-Doppler periodogram of a single antenna and the range-azimuth heatmap.

use rvl::radio::{periodogram, range_angle_heatmap, synth_channel, RadioConfig};
use rvl::scene::{generate_scene, SceneConfig};

const SHADES: &[u8] = b" .:-=+*#%@";

fn main() -> rvl::Result<()> {
    let radio = RadioConfig::desk();
    let scene = generate_scene(&SceneConfig::default(), 3)?;
    let t = scene.target();
    println!(
        "target at {:.2} m, {:.1}°, radial speed {:.2} m/s; {} parked cars",
        t.range(),
        t.azimuth_deg(),
        t.radial_speed,
        scene.clutter().count()
    );
    println!("range resolution {:.4} m, unambiguous range {:.1} m", radio.range_resolution(), radio.unambiguous_range());

    let ch = synth_channel(&scene, &radio, 3)?;
    let rd = periodogram(&ch, 0)?;
    let (r, d) = rd.argmax();
    println!("periodogram peak at range bin {r} ({:.2} m), Doppler bin {d}", r as f64 * radio.range_resolution());

    let hm = range_angle_heatmap(&ch, &radio)?;
    let (row, col) = hm.argmax();
    let (pr, pa) = radio.coords_of_bin(row as f64, col as f64);
    println!("heatmap peak at bin ({row}, {col}) = {pr:.2} m, {pa:.1}°; groundtruth bin {:?}", radio.bin_of(t.range(), t.azimuth_deg()));

    let db = hm.to_db_unit(30.0);
    for row in (0..hm.rows).rev().step_by(2) {
        let line: String = (0..hm.cols)
            .map(|c| SHADES[((db[row * hm.cols + c] * (SHADES.len() - 1) as f64).round() as usize).min(SHADES.len() - 1)] as char)
            .collect();
        println!("{:>5.1} m |{line}|", radio.range_of_row(row as f64));
    }
    Ok(())
}
