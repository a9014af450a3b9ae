//! Paired radio/vision records: synthesis, on-disk records, splits and batching.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::{simulate_heatmap, Heatmap, RadioConfig};
use crate::rvhm;
use crate::scene::{
    generate_scene, groundtruth_of, mask_from_bbox, render_image, BBox, CameraModel, GroundTruth, ImageGrid, Mask,
    SceneConfig,
};

/// One synchronized heatmap/image record. Array payloads hold f32-representable values.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioVisualPair {
    pub id: u64,
    pub heatmap: Heatmap,
    pub image: ImageGrid,
    pub mask: Mask,
    pub gt: GroundTruth,
    pub seed: u64,
}

/// Everything needed to synthesize pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub scene: SceneConfig,
    pub camera: CameraModel,
    pub radio: RadioConfig,
    /// Image-pixel padding of the groundtruth mask.
    pub mask_pad: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { scene: SceneConfig::default(), camera: CameraModel::default(), radio: RadioConfig::desk(), mask_pad: 5 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.camera.validate()?;
        self.radio.validate()
    }
}

fn quantize(v: &mut [f64]) {
    for x in v {
        *x = *x as f32 as f64;
    }
}

/// Per-pair seed derived from a base seed and index (SplitMix64 finaliser).
pub fn pair_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Synthesizes one pair from `seed`.
pub fn synth_pair(cfg: &SynthConfig, id: u64, seed: u64) -> Result<RadioVisualPair> {
    let scene = generate_scene(&cfg.scene, seed)?;
    let gt = groundtruth_of(&scene, &cfg.camera, &cfg.radio)?;
    let mut heatmap = simulate_heatmap(&scene, &cfg.radio, seed)?;
    let mut image = render_image(&scene, &cfg.camera)?;
    quantize(&mut heatmap.data);
    quantize(&mut image.data);
    let mask = mask_from_bbox(&gt.bbox, cfg.mask_pad, (image.height, image.width))?;
    Ok(RadioVisualPair { id, heatmap, image, mask, gt, seed })
}

/// Synthesizes `n` pairs with ids `0..n` and seeds `pair_seed(base_seed, id)`.
pub fn synth_dataset(cfg: &SynthConfig, n: usize, base_seed: u64) -> Result<Vec<RadioVisualPair>> {
    cfg.validate()?;
    (0..n as u64).map(|id| synth_pair(cfg, id, pair_seed(base_seed, id))).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    id: u64,
    heatmap_dims: [usize; 2],
    image_dims: [usize; 3],
    range_m: f64,
    azimuth_deg: f64,
    bbox: [usize; 4],
    seed: u64,
    heatmap_bin: (usize, usize),
    mask_dims: [usize; 2],
}

pub fn record_dir(root: &Path, id: u64) -> PathBuf {
    root.join(format!("{id:06}"))
}

fn f32s(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Writes the record into `root/<id>/`.
pub fn write_pair(pair: &RadioVisualPair, root: &Path) -> Result<()> {
    let dir = record_dir(root, pair.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let b = pair.gt.bbox;
    let manifest = Manifest {
        id: pair.id,
        heatmap_dims: [pair.heatmap.rows, pair.heatmap.cols],
        image_dims: [pair.image.channels, pair.image.height, pair.image.width],
        range_m: pair.gt.range,
        azimuth_deg: pair.gt.azimuth,
        bbox: [b.col_min, b.row_min, b.col_max, b.row_max],
        seed: pair.seed,
        heatmap_bin: pair.gt.heatmap_bin,
        mask_dims: [pair.mask.height, pair.mask.width],
    };
    let h = &pair.heatmap;
    rvhm::write_file(&dir.join("heatmap.rvhm"), "heatmap", &[h.rows, h.cols], &f32s(&h.data))?;
    let im = &pair.image;
    rvhm::write_file(&dir.join("image.rvhm"), "image", &[im.channels, im.height, im.width], &f32s(&im.data))?;
    rvhm::write_file(&dir.join("mask.rvhm"), "mask", &[pair.mask.height, pair.mask.width], &f32s(&pair.mask.data))?;
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

fn load_array(dir: &Path, field: &str, expect: &[usize]) -> Result<Vec<f64>> {
    let (dims, data) = rvhm::read_file(&dir.join(format!("{field}.rvhm")), field)?;
    if dims != expect {
        return Err(Error::Consistency(format!("{field}: manifest dims {expect:?} but payload dims {dims:?}")));
    }
    Ok(data.into_iter().map(f64::from).collect())
}

/// Reads the record `root/<id>/`.
pub fn read_pair(root: &Path, id: u64) -> Result<RadioVisualPair> {
    let dir = record_dir(root, id);
    let path = dir.join("manifest.json");
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_slice(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
    if m.id != id {
        return Err(Error::Consistency(format!("record {id} holds manifest id {}", m.id)));
    }
    let [rows, cols] = m.heatmap_dims;
    let heatmap = Heatmap { rows, cols, data: load_array(&dir, "heatmap", &[rows, cols])? };
    let [c, h, w] = m.image_dims;
    let image = ImageGrid { channels: c, height: h, width: w, data: load_array(&dir, "image", &[c, h, w])? };
    let [mh, mw] = m.mask_dims;
    let mask = Mask { height: mh, width: mw, data: load_array(&dir, "mask", &[mh, mw])? };
    let [col_min, row_min, col_max, row_max] = m.bbox;
    let gt = GroundTruth {
        range: m.range_m,
        azimuth: m.azimuth_deg,
        bbox: BBox { col_min, row_min, col_max, row_max },
        heatmap_bin: m.heatmap_bin,
    };
    Ok(RadioVisualPair { id, heatmap, image, mask, gt, seed: m.seed })
}

/// Writes all pairs under `root` plus an `index.json` listing their ids.
pub fn write_dataset(pairs: &[RadioVisualPair], root: &Path) -> Result<()> {
    pairs.iter().try_for_each(|p| write_pair(p, root))?;
    let ids: Vec<u64> = pairs.iter().map(|p| p.id).collect();
    let path = root.join("index.json");
    let index = serde_json::json!({ "count": ids.len(), "ids": ids });
    fs::write(&path, serde_json::to_vec_pretty(&index)?).map_err(|e| Error::io(&path, e))
}

/// Reads every record directory under `root`, sorted by id.
pub fn read_dataset(root: &Path) -> Result<Vec<RadioVisualPair>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if let Some(id) = entry.file_name().to_str().and_then(|s| s.parse::<u64>().ok()) {
            if entry.path().join("manifest.json").exists() {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    ids.into_iter().map(|id| read_pair(root, id)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: 0 }
    }
}

/// Seeded shuffle, then the first `round(f*N)` ids train and the rest validate.
pub fn make_splits(ids: &[u64], spec: SplitSpec) -> Result<(Vec<u64>, Vec<u64>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::config("train_fraction", "must lie in (0, 1)"));
    }
    if ids.len() < 2 {
        return Err(Error::Insufficient(format!("splitting needs at least 2 ids, got {}", ids.len())));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = (spec.train_fraction * ids.len() as f64).round() as usize;
    let valid = shuffled.split_off(n_train);
    Ok((shuffled, valid))
}

/// One epoch of batches: seeded permutation, full batches only.
pub fn batches(ids: &[u64], batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<u64>>> {
    if batch_size < 2 {
        return Err(Error::config("batch", "contrastive batches need at least 2 samples"));
    }
    if batch_size > ids.len() {
        return Err(Error::Insufficient(format!("batch {batch_size} exceeds {} ids", ids.len())));
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(order.chunks_exact(batch_size).map(<[u64]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small_cfg() -> SynthConfig {
        let mut cfg = SynthConfig::default();
        cfg.radio.n_sub = 64;
        cfg.radio.bandwidth_hz = 300e6;
        cfg.radio.array_x = 8;
        cfg.radio.array_y = 1;
        cfg.radio.symbol_duration_s = 1.25 * 64.0 / cfg.radio.bandwidth_hz;
        cfg
    }

    #[test]
    fn synth_is_deterministic_and_quantized() {
        let cfg = small_cfg();
        let a = synth_pair(&cfg, 3, 42).unwrap();
        let b = synth_pair(&cfg, 3, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.heatmap.data.iter().all(|&v| v == v as f32 as f64));
        assert_eq!(a.mask.area(), crate::scene::padded_box(&a.gt.bbox, 5, (48, 64)).unwrap().area());
    }

    #[test]
    fn pair_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = synth_pair(&small_cfg(), 7, 9).unwrap();
        write_pair(&p, dir.path()).unwrap();
        let q = read_pair(dir.path(), 7).unwrap();
        assert_eq!(p.gt, q.gt);
        for (x, y) in p.heatmap.data.iter().zip(&q.heatmap.data).chain(p.image.data.iter().zip(&q.image.data)) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(p, q);
    }

    #[test]
    fn corrupt_records_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = synth_pair(&small_cfg(), 1, 5).unwrap();
        write_pair(&p, dir.path()).unwrap();
        let rec = record_dir(dir.path(), 1);
        let img = rec.join("image.rvhm");
        let bytes = fs::read(&img).unwrap();
        fs::write(&img, &bytes[..bytes.len() - 7]).unwrap();
        match read_pair(dir.path(), 1) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "image"),
            other => panic!("{other:?}"),
        }
        fs::write(&img, &bytes).unwrap();
        let mpath = rec.join("manifest.json");
        let text = fs::read_to_string(&mpath).unwrap();
        let mut m: serde_json::Value = serde_json::from_str(&text).unwrap();
        m["heatmap_dims"] = serde_json::json!([10, 10]);
        fs::write(&mpath, m.to_string()).unwrap();
        assert!(matches!(read_pair(dir.path(), 1), Err(Error::Consistency(_))));
        assert!(matches!(read_pair(dir.path(), 99), Err(Error::NotFound(_))));
    }

    #[test]
    fn split_examples() {
        let ids: Vec<u64> = (0..10).collect();
        let spec = SplitSpec { train_fraction: 0.8, seed: 4 };
        let (tr, va) = make_splits(&ids, spec).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        let (a, b): (BTreeSet<_>, BTreeSet<_>) = (tr.iter().collect(), va.iter().collect());
        assert!(a.is_disjoint(&b));
        assert_eq!(a.union(&b).copied().copied().collect::<Vec<_>>(), ids);
        assert_eq!(make_splits(&ids, spec).unwrap(), (tr, va));
        assert!(make_splits(&ids[..1], spec).is_err());
    }

    #[test]
    fn batch_examples() {
        let ids: Vec<u64> = (0..16).collect();
        let bs = batches(&ids, 8, 1).unwrap();
        assert_eq!(bs.len(), 2);
        for b in &bs {
            assert_eq!(b.iter().collect::<BTreeSet<_>>().len(), 8);
        }
        let ids17: Vec<u64> = (0..17).collect();
        assert_eq!(batches(&ids17, 8, 1).unwrap().len(), 2);
        assert_eq!(batches(&ids17, 8, 3).unwrap(), batches(&ids17, 8, 3).unwrap());
        assert!(batches(&ids, 17, 0).is_err());
        assert!(batches(&ids, 1, 0).is_err());
    }
}
