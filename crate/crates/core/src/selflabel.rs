//! Self-supervised target coordinates from cross-modal attention, offset
//! calibration and the localiser training set.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::RadioVisualPair;
use crate::error::{Error, Result};
use crate::radio::{Heatmap, RadioConfig};
use crate::ssl::{
    attention_map, crop_template, radio_input, rescale_index, template_window, vision_input, AttentionMap, Branch,
    SslConfig, SslModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Attention,
    CfarGenie,
    FusionTeacher,
    Groundtruth,
}

/// A target coordinate estimate for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfLabel {
    pub id: u64,
    pub range_est: f64,
    pub azimuth_est: f64,
    pub heatmap_bin_est: (usize, usize),
    pub source: LabelSource,
    pub calibrated: bool,
}

impl SelfLabel {
    /// Label at polar coordinates, snapped to the nearest in-grid bin.
    pub fn at(id: u64, range: f64, azimuth: f64, source: LabelSource, radio: &RadioConfig) -> Self {
        Self { id, range_est: range, azimuth_est: azimuth, heatmap_bin_est: nearest_bin(radio, range, azimuth), source, calibrated: false }
    }

    pub fn groundtruth(pair: &RadioVisualPair) -> Self {
        Self {
            id: pair.id,
            range_est: pair.gt.range,
            azimuth_est: pair.gt.azimuth,
            heatmap_bin_est: pair.gt.heatmap_bin,
            source: LabelSource::Groundtruth,
            calibrated: false,
        }
    }

    /// Euclidean distance to the pair's groundtruth in fractional heatmap bins.
    pub fn bin_error(&self, pair: &RadioVisualPair, radio: &RadioConfig) -> f64 {
        let dr = radio.row_of_range(self.range_est) - radio.row_of_range(pair.gt.range);
        let dc = radio.col_of_azimuth(self.azimuth_est) - radio.col_of_azimuth(pair.gt.azimuth);
        dr.hypot(dc)
    }
}

fn nearest_bin(radio: &RadioConfig, range: f64, azimuth: f64) -> (usize, usize) {
    let (rows, cols) = radio.heatmap_dims();
    let clamp = |v: f64, n: usize| v.round().clamp(0.0, (n - 1) as f64) as usize;
    (clamp(radio.row_of_range(range), rows), clamp(radio.col_of_azimuth(azimuth), cols))
}

/// Argmax of an attention map rescaled to the heatmap grid.
pub fn label_from_attention(id: u64, map: &AttentionMap, radio: &RadioConfig) -> Result<SelfLabel> {
    let first = map.data.first().ok_or(Error::Empty("attention map"))?;
    if map.data.iter().all(|v| v == first) {
        return Err(Error::NoPeak(format!("pair {id}: attention map is constant ({first})")));
    }
    if map.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("pair {id}: attention map")));
    }
    let (i, j) = map.argmax();
    let (rows, cols) = radio.heatmap_dims();
    let bin = (rescale_index(i, map.h, rows), rescale_index(j, map.w, cols));
    let (range, azimuth) = radio.coords_of_bin(bin.0 as f64, bin.1 as f64);
    Ok(SelfLabel { id, range_est: range, azimuth_est: azimuth, heatmap_bin_est: bin, source: LabelSource::Attention, calibrated: false })
}

/// Attention map of a pair under a trained backbone: the masked-vision
/// template around the mask box is slid over the radio features.
pub fn pair_attention(model: &SslModel, cfg: &SslConfig, pair: &RadioVisualPair) -> Result<AttentionMap> {
    let fr = model.features(Branch::Radio, &radio_input(pair, cfg.db_range))?;
    let fv = model.features(Branch::Vision, &vision_input(pair, true)?)?;
    let bbox = pair.mask.bounding_box().ok_or(Error::Empty("pair mask"))?;
    let image_dims = (pair.image.height, pair.image.width);
    let (rows, cols) = template_window(&bbox, 0, cfg.template_pad_bins, image_dims, (fr.h, fr.w))?;
    attention_map(&fr, &crop_template(&fv, rows, cols))
}

pub fn self_coordinates(model: &SslModel, cfg: &SslConfig, radio: &RadioConfig, pair: &RadioVisualPair) -> Result<SelfLabel> {
    label_from_attention(pair.id, &pair_attention(model, cfg, pair)?, radio)
}

pub fn self_label_all(model: &SslModel, cfg: &SslConfig, radio: &RadioConfig, pairs: &[RadioVisualPair]) -> Result<Vec<SelfLabel>> {
    pairs.iter().map(|p| self_coordinates(model, cfg, radio, p)).collect()
}

/// Additive offsets fitted on a reference subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub range_offset: f64,
    pub azimuth_offset: f64,
    pub n_cal: usize,
}

pub const MIN_CALIBRATION: usize = 10;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median `gt - est` per coordinate over `(label, pair)` references.
pub fn calibrate(reference: &[(&SelfLabel, &RadioVisualPair)]) -> Result<Calibration> {
    if reference.len() < MIN_CALIBRATION {
        return Err(Error::Insufficient(format!(
            "calibration needs at least {MIN_CALIBRATION} references, got {}",
            reference.len()
        )));
    }
    if let Some((l, p)) = reference.iter().find(|(l, p)| l.id != p.id) {
        return Err(Error::Consistency(format!("calibration label {} paired with record {}", l.id, p.id)));
    }
    let range_offset = median(reference.iter().map(|(l, p)| p.gt.range - l.range_est).collect());
    let azimuth_offset = median(reference.iter().map(|(l, p)| p.gt.azimuth - l.azimuth_est).collect());
    if !(range_offset.is_finite() && azimuth_offset.is_finite()) {
        return Err(Error::NonFinite("calibration offsets".into()));
    }
    Ok(Calibration { range_offset, azimuth_offset, n_cal: reference.len() })
}

pub fn apply_calibration(label: &SelfLabel, cal: &Calibration, radio: &RadioConfig) -> SelfLabel {
    let range = label.range_est + cal.range_offset;
    let azimuth = label.azimuth_est + cal.azimuth_offset;
    SelfLabel { heatmap_bin_est: nearest_bin(radio, range, azimuth), range_est: range, azimuth_est: azimuth, calibrated: true, ..label.clone() }
}

/// One localiser training record; `gt` is kept for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct LocRecord {
    pub id: u64,
    pub heatmap: Heatmap,
    pub label: (f64, f64),
    pub gt: (f64, f64),
}

/// Pairs each record with its label. Every pair needs a label and every label a pair.
pub fn build_loc_dataset(pairs: &[&RadioVisualPair], labels: &[SelfLabel]) -> Result<Vec<LocRecord>> {
    let by_id: HashMap<u64, &SelfLabel> = labels.iter().map(|l| (l.id, l)).collect();
    if by_id.len() != labels.len() {
        return Err(Error::Consistency("duplicate label ids".into()));
    }
    if labels.len() != pairs.len() {
        let ids: std::collections::HashSet<u64> = pairs.iter().map(|p| p.id).collect();
        if let Some(l) = labels.iter().find(|l| !ids.contains(&l.id)) {
            return Err(Error::Consistency(format!("label for id {} has no record", l.id)));
        }
    }
    pairs
        .iter()
        .map(|p| {
            let l = by_id.get(&p.id).ok_or_else(|| Error::Consistency(format!("record {} has no label", p.id)))?;
            Ok(LocRecord { id: p.id, heatmap: p.heatmap.clone(), label: (l.range_est, l.azimuth_est), gt: (p.gt.range, p.gt.azimuth) })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    id: u64,
    range_est: f64,
    azimuth_est: f64,
    source: LabelSource,
    calibrated: bool,
}

pub fn write_labels(path: &Path, labels: &[SelfLabel]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for l in labels {
        w.serialize(LabelRow { id: l.id, range_est: l.range_est, azimuth_est: l.azimuth_est, source: l.source, calibrated: l.calibrated })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path, radio: &RadioConfig) -> Result<Vec<SelfLabel>> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<LabelRow>()
        .map(|row| {
            let row = row?;
            let mut l = SelfLabel::at(row.id, row.range_est, row.azimuth_est, row.source, radio);
            l.calibrated = row.calibrated;
            Ok(l)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_pair, SynthConfig};
    use crate::ssl::{normalize_bins, FeatureMap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn radio() -> RadioConfig {
        RadioConfig::desk()
    }

    fn pair_with_gt(id: u64, range: f64, azimuth: f64) -> RadioVisualPair {
        let mut p = synth_pair(&small_cfg(), id, id).unwrap();
        p.gt.range = range;
        p.gt.azimuth = azimuth;
        p
    }

    fn small_cfg() -> SynthConfig {
        let mut c = SynthConfig::default();
        c.radio.n_sub = 64;
        c.radio.bandwidth_hz = 300e6;
        c.radio.array_x = 8;
        c.radio.array_y = 1;
        c.radio.symbol_duration_s = 1.25 * 64.0 / c.radio.bandwidth_hz;
        c.scene.n_clutter = 0;
        c
    }

    #[test]
    fn rescale_example() {
        let mut data = vec![0.0; 16 * 12];
        data[8 * 12 + 6] = 1.0;
        let map = AttentionMap { h: 16, w: 12, data };
        let mut r = radio();
        r.heatmap_rows = 480;
        r.heatmap_cols = 640;
        let l = label_from_attention(3, &map, &r).unwrap();
        assert_eq!(l.heatmap_bin_est, (255, 346));
        let (range, az) = r.coords_of_bin(255.0, 346.0);
        assert_eq!((l.range_est, l.azimuth_est), (range, az));
    }

    #[test]
    fn constant_map_has_no_peak() {
        let fr = FeatureMap { c: 2, h: 4, w: 4, data: (0..32).map(f64::from).collect() };
        let zero = FeatureMap { c: 2, h: 1, w: 1, data: vec![0.0; 2] };
        let map = attention_map(&fr, &zero).unwrap();
        assert!(matches!(label_from_attention(0, &map, &radio()), Err(Error::NoPeak(_))));
    }

    #[test]
    fn planted_template_recovers_groundtruth_bin() {
        let r = radio();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (h, w, c) = (12, 16, 6);
        for _ in 0..20 {
            let mut fr = FeatureMap { c, h, w, data: (0..c * h * w).map(|_| rng.random_range(0.0..0.2)).collect() };
            let (i, j) = (rng.random_range(0..h), rng.random_range(0..w));
            let v: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
            for (k, x) in v.iter().enumerate() {
                fr.data[(k * h + i) * w + j] = *x;
            }
            let template = FeatureMap { c, h: 1, w: 1, data: v };
            let map = attention_map(&normalize_bins(&fr), &template).unwrap();
            let l = label_from_attention(0, &map, &r).unwrap();
            let gt_bin = (rescale_index(i, h, 48), rescale_index(j, w, 64));
            assert_eq!(l.heatmap_bin_est, gt_bin);
        }
    }

    #[test]
    fn bin_coordinate_round_trip() {
        let r = radio();
        for row in 0..48 {
            for col in 0..64 {
                let (range, az) = r.coords_of_bin(row as f64, col as f64);
                let (br, bc) = nearest_bin(&r, range, az);
                assert!(br.abs_diff(row) <= 1 && bc.abs_diff(col) <= 1);
            }
        }
    }

    #[test]
    fn constant_bias_is_removed() {
        let r = radio();
        let pairs: Vec<RadioVisualPair> = (0..12).map(|i| pair_with_gt(i, 10.0 + i as f64 * 0.5, -20.0 + 3.0 * i as f64)).collect();
        let labels: Vec<SelfLabel> =
            pairs.iter().map(|p| SelfLabel::at(p.id, p.gt.range + 1.0, p.gt.azimuth - 2.0, LabelSource::Attention, &r)).collect();
        let refs: Vec<_> = labels.iter().zip(&pairs).collect();
        let cal = calibrate(&refs).unwrap();
        assert!((cal.range_offset + 1.0).abs() < 1e-12 && (cal.azimuth_offset - 2.0).abs() < 1e-12);
        let fixed: Vec<SelfLabel> = labels.iter().map(|l| apply_calibration(l, &cal, &r)).collect();
        let resid = median(fixed.iter().zip(&pairs).map(|(l, p)| (l.range_est - p.gt.range).abs()).collect());
        assert!(resid < 1e-12);
        assert!(fixed.iter().all(|l| l.calibrated));
        let refs2: Vec<_> = fixed.iter().zip(&pairs).collect();
        let again = calibrate(&refs2).unwrap();
        assert!(again.range_offset.abs() < 1e-12 && again.azimuth_offset.abs() < 1e-12);
    }

    #[test]
    fn unbiased_noise_gives_small_offsets() {
        let r = radio();
        let pairs: Vec<RadioVisualPair> = (0..16).map(|i| pair_with_gt(i, 12.0, 0.0)).collect();
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let labels: Vec<SelfLabel> = pairs
                .iter()
                .map(|p| SelfLabel::at(p.id, p.gt.range + noise.sample(&mut rng), p.gt.azimuth + noise.sample(&mut rng), LabelSource::Attention, &r))
                .collect();
            let refs: Vec<_> = labels.iter().zip(&pairs).collect();
            let cal = calibrate(&refs).unwrap();
            let bound = 3.0 * 0.5 / (16f64).sqrt() * 1.3;
            assert!(cal.range_offset.abs() < bound && cal.azimuth_offset.abs() < bound, "{cal:?}");
        }
    }

    #[test]
    fn median_offset_never_increases_total_absolute_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(10..40);
            let e: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..5.0) * rng.random_range(0.0..1.0f64).powi(3)).collect();
            let m = median(e.clone());
            let before: f64 = e.iter().map(|x| x.abs()).sum();
            let after: f64 = e.iter().map(|x| (x - m).abs()).sum();
            assert!(after <= before + 1e-12, "{e:?}");
        }
    }

    #[test]
    fn median_abs_error_can_grow_after_recentring() {
        let e = [-2.0, -1.0, 0.1, 0.2, 3.0];
        let m = median(e.to_vec());
        let before = median(e.iter().map(|x: &f64| x.abs()).collect());
        let after = median(e.iter().map(|x| (x - m).abs()).collect());
        assert!((before - 1.0).abs() < 1e-12 && (after - 1.1).abs() < 1e-12);
    }

    #[test]
    fn too_few_references_fail() {
        assert!(matches!(calibrate(&[]), Err(Error::Insufficient(_))));
    }

    #[test]
    fn loc_dataset_alignment() {
        let pairs: Vec<RadioVisualPair> = (0..6).map(|i| synth_pair(&small_cfg(), i, 100 + i).unwrap()).collect();
        let refs: Vec<&RadioVisualPair> = pairs.iter().collect();
        let gt: Vec<SelfLabel> = pairs.iter().map(SelfLabel::groundtruth).collect();
        let d = build_loc_dataset(&refs, &gt).unwrap();
        assert!(d.iter().all(|rec| rec.label == rec.gt));
        let half: Vec<&RadioVisualPair> = refs.iter().copied().step_by(2).collect();
        let half_labels: Vec<SelfLabel> = gt.iter().step_by(2).cloned().collect();
        assert_eq!(build_loc_dataset(&half, &half_labels).unwrap().len(), 3);
        assert!(build_loc_dataset(&half, &gt).is_err());
        assert!(build_loc_dataset(&refs, &half_labels).is_err());
    }

    #[test]
    fn label_csv_round_trip() {
        let r = radio();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        let mut l = SelfLabel::at(7, 12.5, -3.25, LabelSource::FusionTeacher, &r);
        l.calibrated = true;
        write_labels(&p, &[l.clone()]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("id,range_est,azimuth_est,source,calibrated\n7,12.5,-3.25,fusion_teacher,true"), "{text}");
        assert_eq!(read_labels(&p, &r).unwrap(), vec![l]);
    }
}
