//! Point-scatterer scenes and their low-fidelity camera view.
//!
//! Frame convention: the sensor sits at the origin looking along +y, x grows to
//! the right, and azimuth is measured from +y (positive to the right).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::RadioConfig;

/// Parameters of the randomized parking-lot scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Scene width in meters; x spans `[-extent_x/2, extent_x/2]`.
    pub extent_x: f64,
    /// Scene depth in meters; y spans `[0, extent_y]`.
    pub extent_y: f64,
    pub n_clutter: usize,
    pub clutter_amp_range: (f64, f64),
    pub target_amp: f64,
    pub target_speed_range: (f64, f64),
    /// Lateral/longitudinal jitter of parked cars around their grid slot.
    pub placement_sigma: f64,
    /// Depth interval of the drivable band the target moves in.
    pub road_band: (f64, f64),
    /// Depth of each parking row.
    pub parking_rows: Vec<f64>,
    /// Slot spacing along a parking row.
    pub slot_pitch: f64,
    /// Radial window every scatterer must fall in.
    pub range_limits: (f64, f64),
    /// Largest |azimuth| of any scatterer.
    pub max_azimuth_deg: f64,
    /// Largest |azimuth| of the target.
    pub target_max_azimuth_deg: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            extent_x: 36.0,
            extent_y: 25.0,
            n_clutter: 8,
            clutter_amp_range: (0.25, 0.6),
            target_amp: 1.0,
            target_speed_range: (2.0, 8.0),
            placement_sigma: 0.10,
            road_band: (9.0, 16.0),
            parking_rows: vec![7.0, 19.0],
            slot_pitch: 3.0,
            range_limits: (5.5, 24.5),
            max_azimuth_deg: 40.0,
            target_max_azimuth_deg: 35.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent_x > 0.0 && self.extent_y > 0.0) {
            return Err(Error::config("scene.extent", "extents must be positive"));
        }
        let (lo, hi) = self.clutter_amp_range;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::config("scene.clutter_amp_range", "need 0 <= lo <= hi"));
        }
        if !(self.target_amp >= 0.0) {
            return Err(Error::config("scene.target_amp", "must be nonnegative"));
        }
        let (slo, shi) = self.target_speed_range;
        if !(slo.is_finite() && shi >= slo) {
            return Err(Error::config("scene.target_speed_range", "need lo <= hi"));
        }
        if !(self.placement_sigma >= 0.0) {
            return Err(Error::config("scene.placement_sigma", "must be nonnegative"));
        }
        let (near, far) = self.road_band;
        if !(near > 0.0 && far > near && far <= self.extent_y) {
            return Err(Error::config("scene.road_band", "need 0 < near < far <= extent_y"));
        }
        if !(self.slot_pitch > 0.0) {
            return Err(Error::config("scene.slot_pitch", "must be positive"));
        }
        let (rlo, rhi) = self.range_limits;
        if !(rlo >= 0.0 && rhi > rlo) {
            return Err(Error::config("scene.range_limits", "need 0 <= lo < hi"));
        }
        if !(self.max_azimuth_deg > 0.0 && self.max_azimuth_deg < 90.0) {
            return Err(Error::config("scene.max_azimuth_deg", "must lie in (0, 90)"));
        }
        if !(self.target_max_azimuth_deg > 0.0 && self.target_max_azimuth_deg <= self.max_azimuth_deg) {
            return Err(Error::config(
                "scene.target_max_azimuth_deg",
                "must lie in (0, max_azimuth_deg]",
            ));
        }
        Ok(())
    }

    /// Parking grid nodes that satisfy the range and azimuth limits.
    pub fn parking_slots(&self) -> Vec<(f64, f64)> {
        let n_per_row = (self.extent_x / self.slot_pitch).floor() as usize;
        let x0 = -self.extent_x / 2.0 + self.slot_pitch / 2.0;
        let mut slots = Vec::new();
        for &y in &self.parking_rows {
            for k in 0..n_per_row {
                let x = x0 + k as f64 * self.slot_pitch;
                if self.admits(x, y, self.max_azimuth_deg, 0.5) {
                    slots.push((x, y));
                }
            }
        }
        slots
    }

    fn admits(&self, x: f64, y: f64, max_az: f64, margin: f64) -> bool {
        let (r, az) = polar(x, y);
        let (rlo, rhi) = self.range_limits;
        let half = self.extent_x / 2.0;
        r >= rlo + margin
            && r <= rhi - margin
            && az.abs() <= max_az
            && x.abs() <= half
            && (0.0..=self.extent_y).contains(&y)
    }
}

/// `(range m, azimuth deg)` of a point in the sensor frame.
pub fn polar(x: f64, y: f64) -> (f64, f64) {
    (x.hypot(y), x.atan2(y).to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
    pub radial_speed: f64,
    pub is_target: bool,
}

impl Scatterer {
    pub fn range(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.x.atan2(self.y).to_degrees()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scatterers: Vec<Scatterer>,
    pub config: SceneConfig,
    pub seed: u64,
}

impl Scene {
    pub fn target(&self) -> &Scatterer {
        self.scatterers
            .iter()
            .find(|s| s.is_target)
            .expect("scene invariant: exactly one target")
    }

    pub fn clutter(&self) -> impl Iterator<Item = &Scatterer> {
        self.scatterers.iter().filter(|s| !s.is_target)
    }
}

/// Generate one scene: parked cars jittered around a regular grid plus one
/// moving target inside the drivable band.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let slots = config.parking_slots();
    if config.n_clutter > slots.len() {
        return Err(Error::config(
            "scene.n_clutter",
            format!("{} clutter cars requested but the grid only has {} slots", config.n_clutter, slots.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scatterers = Vec::with_capacity(config.n_clutter + 1);

    let chosen = if config.n_clutter > 0 {
        let mut idx = sample(&mut rng, slots.len(), config.n_clutter).into_vec();
        idx.sort_unstable();
        idx
    } else {
        Vec::new()
    };
    let jitter = Normal::new(0.0, config.placement_sigma.max(0.0)).expect("sigma is nonnegative");
    let (alo, ahi) = config.clutter_amp_range;
    for i in chosen {
        let (gx, gy) = slots[i];
        let (dx, dy) = if config.placement_sigma > 0.0 {
            (jitter.sample(&mut rng), jitter.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        let amplitude = if ahi > alo { rng.random_range(alo..=ahi) } else { alo };
        scatterers.push(Scatterer { x: gx + dx, y: gy + dy, amplitude, radial_speed: 0.0, is_target: false });
    }

    let (near, far) = config.road_band;
    let half = config.extent_x / 2.0;
    let (x, y) = loop {
        let y = rng.random_range(near..=far);
        let x = rng.random_range(-half..=half);
        if config.admits(x, y, config.target_max_azimuth_deg, 0.0) {
            break (x, y);
        }
    };
    let (slo, shi) = config.target_speed_range;
    let speed = if shi > slo { rng.random_range(slo..=shi) } else { slo };
    // The target drives left to right: velocity (speed, 0).
    let radial_speed = speed * x / x.hypot(y);
    scatterers.push(Scatterer { x, y, amplitude: config.target_amp, radial_speed, is_target: true });

    Ok(Scene { scatterers, config: config.clone(), seed })
}

/// Pinhole camera looking along +y from `camera_height_m` above the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub image_width: usize,
    pub image_height: usize,
    pub horizontal_fov_deg: f64,
    /// Apparent target width in pixels at 1 m range.
    pub target_pixel_size_at_1m: f64,
    pub camera_height_m: f64,
    /// Std of additive Gaussian pixel noise; 0 disables it.
    pub pixel_noise: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            image_width: 64,
            image_height: 48,
            horizontal_fov_deg: 90.0,
            target_pixel_size_at_1m: 60.0,
            camera_height_m: 1.5,
            pixel_noise: 0.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::config("camera.image_dims", "dimensions must be positive"));
        }
        if !(self.horizontal_fov_deg > 0.0 && self.horizontal_fov_deg < 180.0) {
            return Err(Error::config("camera.horizontal_fov_deg", "must lie in (0, 180)"));
        }
        if !(self.target_pixel_size_at_1m > 0.0) {
            return Err(Error::config("camera.target_pixel_size_at_1m", "must be positive"));
        }
        if !(self.pixel_noise >= 0.0) {
            return Err(Error::config("camera.pixel_noise", "must be nonnegative"));
        }
        Ok(())
    }

    fn tan_half_fov(&self) -> f64 {
        (self.horizontal_fov_deg.to_radians() / 2.0).tan()
    }

    pub fn focal_px(&self) -> f64 {
        self.image_width as f64 / 2.0 / self.tan_half_fov()
    }

    /// Continuous image column of a ray at `azimuth_deg`.
    pub fn column_of_azimuth(&self, azimuth_deg: f64) -> f64 {
        let w = self.image_width as f64;
        w / 2.0 * (1.0 + azimuth_deg.to_radians().tan() / self.tan_half_fov())
    }

    /// Inverse of [`CameraModel::column_of_azimuth`].
    pub fn azimuth_of_column(&self, column: f64) -> f64 {
        let w = self.image_width as f64;
        ((2.0 * column / w - 1.0) * self.tan_half_fov()).atan().to_degrees()
    }

    pub fn sees(&self, azimuth_deg: f64) -> bool {
        azimuth_deg.abs() < self.horizontal_fov_deg / 2.0
    }

    /// Box of a car at `(range, azimuth)`, clipped to the image; `None` when
    /// nothing of it lands on the sensor.
    pub fn project(&self, range: f64, azimuth_deg: f64) -> Option<BBox> {
        if !self.sees(azimuth_deg) || range <= 0.0 {
            return None;
        }
        let w = self.image_width as f64;
        let h = self.image_height as f64;
        let width = self.target_pixel_size_at_1m / range;
        let height = (0.5 * width).max(1.0);
        let col = self.column_of_azimuth(azimuth_deg);
        let bottom = h / 2.0 + self.focal_px() * self.camera_height_m / range;
        let c0 = (col - width / 2.0).floor();
        let c1 = (col + width / 2.0).ceil() - 1.0;
        let r1 = bottom.ceil() - 1.0;
        let r0 = (bottom - height).floor();
        let c0 = c0.max(0.0);
        let r0 = r0.max(0.0);
        let c1 = c1.min(w - 1.0);
        let r1 = r1.min(h - 1.0);
        if c1 < c0 || r1 < r0 {
            return None;
        }
        Some(BBox { col_min: c0 as usize, row_min: r0 as usize, col_max: c1 as usize, row_max: r1 as usize })
    }
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub col_min: usize,
    pub row_min: usize,
    pub col_max: usize,
    pub row_max: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }

    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn center_col(&self) -> f64 {
        (self.col_min + self.col_max + 1) as f64 / 2.0
    }

    pub fn center_row(&self) -> f64 {
        (self.row_min + self.row_max + 1) as f64 / 2.0
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let c0 = self.col_min.max(other.col_min);
        let c1 = self.col_max.min(other.col_max);
        let r0 = self.row_min.max(other.row_min);
        let r1 = self.row_max.min(other.row_max);
        if c1 < c0 || r1 < r0 {
            return 0.0;
        }
        let inter = ((c1 - c0 + 1) * (r1 - r0 + 1)) as f64;
        inter / ((self.area() + other.area()) as f64 - inter)
    }
}

/// Channel-major `C x H x W` pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    #[inline]
    pub fn idx(&self, c: usize, row: usize, col: usize) -> usize {
        (c * self.height + row) * self.width + col
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[self.idx(c, row, col)]
    }

    pub fn set(&mut self, c: usize, row: usize, col: usize, v: f64) {
        let i = self.idx(c, row, col);
        self.data[i] = v;
    }

    fn fill_rect(&mut self, bbox: &BBox, color: [f64; 3]) {
        for (c, &v) in color.iter().enumerate().take(self.channels) {
            for row in bbox.row_min..=bbox.row_max {
                let start = self.idx(c, row, bbox.col_min);
                self.data[start..=start + bbox.col_max - bbox.col_min].fill(v);
            }
        }
    }

    /// Element-wise product with a mask shared by all channels.
    pub fn masked(&self, mask: &Mask) -> Result<ImageGrid> {
        if mask.height != self.height || mask.width != self.width {
            return Err(Error::shape(
                "masked",
                format!("mask {}x{} vs image {}x{}", mask.height, mask.width, self.height, self.width),
            ));
        }
        let plane = self.height * self.width;
        let mut out = self.clone();
        for c in 0..self.channels {
            for (v, m) in out.data[c * plane..(c + 1) * plane].iter_mut().zip(&mask.data) {
                *v *= m;
            }
        }
        Ok(out)
    }
}

pub const TARGET_COLOR: [f64; 3] = [0.9, 0.25, 0.2];
pub const CLUTTER_COLOR: [f64; 3] = [0.45, 0.45, 0.5];
const GROUND_LEVEL: f64 = 0.1;

/// Flat-shaded render: ground plane, parked cars as dim boxes, target as a
/// bright box, painted far to near.
pub fn render_image(scene: &Scene, cam: &CameraModel) -> Result<ImageGrid> {
    cam.validate()?;
    let target = scene.target();
    if !cam.sees(target.azimuth_deg()) {
        return Err(Error::OutOfRange(format!(
            "target azimuth {:.2} deg outside camera fov {:.1} deg",
            target.azimuth_deg(),
            cam.horizontal_fov_deg
        )));
    }
    let (h, w) = (cam.image_height, cam.image_width);
    let mut img = ImageGrid::zeros(3, h, w);
    for c in 0..3 {
        for row in h / 2..h {
            let start = img.idx(c, row, 0);
            img.data[start..start + w].fill(GROUND_LEVEL);
        }
    }
    let mut order: Vec<&Scatterer> = scene.scatterers.iter().collect();
    order.sort_by(|a, b| b.range().total_cmp(&a.range()));
    for s in order {
        let Some(bbox) = cam.project(s.range(), s.azimuth_deg()) else {
            if s.is_target {
                return Err(Error::OutOfRange("target does not project onto the image".into()));
            }
            continue;
        };
        let color = if s.is_target { TARGET_COLOR } else { CLUTTER_COLOR };
        img.fill_rect(&bbox, color);
    }
    if cam.pixel_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x5eed_1a6e);
        let noise = Normal::new(0.0, cam.pixel_noise).expect("validated sigma");
        for v in &mut img.data {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub range: f64,
    pub azimuth: f64,
    pub bbox: BBox,
    pub heatmap_bin: (usize, usize),
}

/// Exact polar coordinates, image box and heatmap bin of the scene's target.
pub fn groundtruth_of(scene: &Scene, cam: &CameraModel, radio: &RadioConfig) -> Result<GroundTruth> {
    let t = scene.target();
    let (range, azimuth) = polar(t.x, t.y);
    let heatmap_bin = radio.bin_of(range, azimuth).ok_or_else(|| {
        Error::OutOfRange(format!(
            "target at {range:.3} m / {azimuth:.3} deg is outside the radar window {:?} / +-{} deg",
            radio.range_window,
            radio.azimuth_fov_deg / 2.0
        ))
    })?;
    let bbox = cam
        .project(range, azimuth)
        .ok_or_else(|| Error::OutOfRange(format!("target at {azimuth:.3} deg is not visible to the camera")))?;
    Ok(GroundTruth { range, azimuth, bbox, heatmap_bin })
}

/// Binary `H x W` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Mask {
    pub fn ones(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![1.0; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    /// Tight inclusive box around the nonzero entries.
    pub fn bounding_box(&self) -> Option<BBox> {
        let mut bb: Option<BBox> = None;
        for row in 0..self.height {
            for col in 0..self.width {
                if self.get(row, col) > 0.0 {
                    let b = bb.get_or_insert(BBox { col_min: col, row_min: row, col_max: col, row_max: row });
                    b.col_min = b.col_min.min(col);
                    b.col_max = b.col_max.max(col);
                    b.row_min = b.row_min.min(row);
                    b.row_max = b.row_max.max(row);
                }
            }
        }
        bb
    }
}

/// Padded box region clipped to the image; negative `pad` shrinks the box.
pub fn padded_box(bbox: &BBox, pad: i64, dims: (usize, usize)) -> Result<BBox> {
    let (h, w) = (dims.0 as i64, dims.1 as i64);
    let r0 = (bbox.row_min as i64 - pad).max(0);
    let r1 = (bbox.row_max as i64 + pad).min(h - 1);
    let c0 = (bbox.col_min as i64 - pad).max(0);
    let c1 = (bbox.col_max as i64 + pad).min(w - 1);
    if r1 < r0 || c1 < c0 {
        return Err(Error::Empty("mask: padded box shrank to nothing"));
    }
    Ok(BBox { col_min: c0 as usize, row_min: r0 as usize, col_max: c1 as usize, row_max: r1 as usize })
}

pub fn mask_from_bbox(bbox: &BBox, pad: i64, dims: (usize, usize)) -> Result<Mask> {
    let (h, w) = dims;
    if h == 0 || w == 0 {
        return Err(Error::shape("mask_from_bbox", "zero-sized dims"));
    }
    let b = padded_box(bbox, pad, dims)?;
    let mut mask = Mask { height: h, width: w, data: vec![0.0; h * w] };
    for row in b.row_min..=b.row_max {
        mask.data[row * w + b.col_min..=row * w + b.col_max].fill(1.0);
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radio() -> RadioConfig {
        RadioConfig::desk()
    }

    #[test]
    fn empty_clutter_leaves_only_target() {
        let cfg = SceneConfig { n_clutter: 0, ..Default::default() };
        let scene = generate_scene(&cfg, 1).unwrap();
        assert_eq!(scene.scatterers.len(), 1);
        assert!(scene.scatterers[0].is_target);
    }

    #[test]
    fn zero_sigma_puts_clutter_on_grid() {
        let cfg = SceneConfig { placement_sigma: 0.0, ..Default::default() };
        let slots = cfg.parking_slots();
        let scene = generate_scene(&cfg, 7).unwrap();
        for s in scene.clutter() {
            assert!(slots.iter().any(|&(x, y)| x == s.x && y == s.y), "{s:?} off grid");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SceneConfig::default();
        assert_eq!(generate_scene(&cfg, 42).unwrap(), generate_scene(&cfg, 42).unwrap());
        assert_ne!(generate_scene(&cfg, 42).unwrap(), generate_scene(&cfg, 43).unwrap());
    }

    #[test]
    fn too_many_clutter_cars_rejected() {
        let cfg = SceneConfig { n_clutter: 500, ..Default::default() };
        assert!(matches!(generate_scene(&cfg, 0), Err(Error::InvalidConfig { .. })));
    }

    #[test]
    fn every_scatterer_inside_window() {
        let cfg = SceneConfig::default();
        for seed in 0..50 {
            let scene = generate_scene(&cfg, seed).unwrap();
            assert_eq!(scene.scatterers.iter().filter(|s| s.is_target).count(), 1);
            for s in &scene.scatterers {
                assert!(s.range() > 5.0 && s.range() < 25.0, "{s:?}");
                assert!(s.amplitude >= 0.0);
            }
        }
    }

    fn single_target(x: f64, y: f64) -> Scene {
        Scene {
            scatterers: vec![Scatterer { x, y, amplitude: 1.0, radial_speed: 0.0, is_target: true }],
            config: SceneConfig::default(),
            seed: 0,
        }
    }

    #[test]
    fn boresight_target_is_centered() {
        let cam = CameraModel::default();
        let gt = groundtruth_of(&single_target(0.0, 10.0), &cam, &radio()).unwrap();
        assert_eq!(gt.range, 10.0);
        assert_eq!(gt.azimuth, 0.0);
        assert!((gt.bbox.center_col() - 32.0).abs() <= 1.0);
    }

    #[test]
    fn diagonal_target_geometry() {
        let wide_cam = CameraModel { horizontal_fov_deg: 120.0, ..Default::default() };
        let wide_radio = RadioConfig { azimuth_fov_deg: 120.0, ..radio() };
        let gt = groundtruth_of(&single_target(10.0, 10.0), &wide_cam, &wide_radio).unwrap();
        assert!((gt.range - 14.142135623730951).abs() < 1e-9);
        assert!((gt.azimuth - 45.0).abs() < 1e-9 || gt.azimuth == 45.0);
    }

    #[test]
    fn doubling_range_halves_width() {
        let cam = CameraModel { image_width: 256, image_height: 192, ..Default::default() };
        let near = cam.project(6.0, 0.0).unwrap();
        let far = cam.project(12.0, 0.0).unwrap();
        let half = near.width() as f64 / 2.0;
        assert!((far.width() as f64 - half).abs() <= 1.0, "{} vs {}", near.width(), far.width());
    }

    #[test]
    fn render_is_deterministic_and_marks_target() {
        let cam = CameraModel::default();
        let scene = generate_scene(&SceneConfig::default(), 3).unwrap();
        let a = render_image(&scene, &cam).unwrap();
        assert_eq!(a, render_image(&scene, &cam).unwrap());
        let gt = groundtruth_of(&scene, &cam, &radio()).unwrap();
        let (r, c) = (gt.bbox.row_max, gt.bbox.col_min);
        // Target is painted last among nearer-or-equal objects only if nothing occludes
        // its bottom-left corner; at least some of its box must carry the target color.
        let hits = (gt.bbox.row_min..=gt.bbox.row_max)
            .flat_map(|row| (gt.bbox.col_min..=gt.bbox.col_max).map(move |col| (row, col)))
            .filter(|&(row, col)| a.get(0, row, col) == TARGET_COLOR[0])
            .count();
        assert!(hits > 0, "target invisible near ({r},{c})");
    }

    #[test]
    fn target_outside_fov_is_rejected() {
        let cam = CameraModel { horizontal_fov_deg: 20.0, ..Default::default() };
        assert!(matches!(render_image(&single_target(10.0, 10.0), &cam), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn mask_padding_contract() {
        let bbox = BBox { col_min: 10, row_min: 10, col_max: 20, row_max: 20 };
        let dims = (48, 64);
        let m0 = mask_from_bbox(&bbox, 0, dims).unwrap();
        assert_eq!(m0.area(), bbox.area());

        let full = mask_from_bbox(&bbox, 64, dims).unwrap();
        assert!(full.data.iter().all(|&v| v == 1.0));

        let m5 = mask_from_bbox(&bbox, 5, dims).unwrap();
        for row in 0..48 {
            for col in 0..64 {
                let inside = (5..=25).contains(&row) && (5..=25).contains(&col);
                assert_eq!(m5.get(row, col), if inside { 1.0 } else { 0.0 }, "({row},{col})");
            }
        }
        assert!(mask_from_bbox(&bbox, -6, dims).is_err());
        assert_eq!(mask_from_bbox(&bbox, -5, dims).unwrap().area(), 1);
    }

    proptest::proptest! {
        #[test]
        fn mask_grows_with_pad(c0 in 0usize..60, r0 in 0usize..44, w in 0usize..10, h in 0usize..10,
                               p1 in -6i64..20, dp in 0i64..10) {
            let bbox = BBox { col_min: c0, row_min: r0, col_max: (c0 + w).min(63), row_max: (r0 + h).min(47) };
            let dims = (48, 64);
            if let Ok(small) = mask_from_bbox(&bbox, p1, dims) {
                let big = mask_from_bbox(&bbox, p1 + dp, dims).unwrap();
                for (a, b) in small.data.iter().zip(&big.data) {
                    proptest::prop_assert!(*a == 0.0 || *a == 1.0);
                    proptest::prop_assert!(a <= b);
                }
            }
        }
    }
}
