//! Statistical detection chain (CA-CFAR, DBSCAN, centroids, genie-aided
//! selection) and a camera-gated fusion teacher.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::{Heatmap, RadioConfig};
use crate::scene::{BBox, CameraModel, GroundTruth};
use crate::selflabel::{LabelSource, SelfLabel};

/// Floor added to every training-ring mean before thresholding.
pub const CFAR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CfarThreshold {
    /// Fixed scale factor.
    Alpha { alpha: f64 },
    /// Design false-alarm probability; the scale is derived per cell from its
    /// training-cell count, exact for exponentially distributed noise power.
    Pfa { pfa: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfarConfig {
    /// Guard half-widths `(rows, cols)`.
    pub guard: (usize, usize),
    /// Training-band widths `(rows, cols)` outside the guard.
    pub train: (usize, usize),
    pub threshold: CfarThreshold,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self { guard: (2, 2), train: (4, 4), threshold: CfarThreshold::Pfa { pfa: 1e-3 } }
    }
}

/// `alpha = N (P_fa^(-1/N) - 1)`.
pub fn cfar_alpha(n_train: usize, pfa: f64) -> f64 {
    let n = n_train as f64;
    n * (pfa.powf(-1.0 / n) - 1.0)
}

impl CfarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train.0 == 0 && self.train.1 == 0 {
            return Err(Error::config("cfar.train", "needs at least one training cell per axis"));
        }
        if self.train.0 == 0 || self.train.1 == 0 {
            return Err(Error::config("cfar.train", "training widths must be >= 1"));
        }
        match self.threshold {
            CfarThreshold::Alpha { alpha } if !(alpha > 1.0) => Err(Error::config("cfar.threshold.alpha", "must exceed 1")),
            CfarThreshold::Pfa { pfa } if !(pfa > 0.0 && pfa < 1.0) => Err(Error::config("cfar.threshold.pfa", "must lie in (0, 1)")),
            _ => Ok(()),
        }
    }

    fn half(&self) -> (usize, usize) {
        (self.guard.0 + self.train.0, self.guard.1 + self.train.1)
    }
}

/// Inclusive 2-D prefix sums with a zero border.
struct Integral {
    cols: usize,
    sum: Vec<f64>,
}

impl Integral {
    fn new(hm: &Heatmap) -> Self {
        let cols = hm.cols + 1;
        let mut sum = vec![0.0; (hm.rows + 1) * cols];
        for r in 0..hm.rows {
            let mut row_acc = 0.0;
            for c in 0..hm.cols {
                row_acc += hm.get(r, c);
                sum[(r + 1) * cols + c + 1] = sum[r * cols + c + 1] + row_acc;
            }
        }
        Self { cols, sum }
    }

    /// Sum over rows `r0..r1`, cols `c0..c1` (half-open).
    fn rect(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
        let s = |r: usize, c: usize| self.sum[r * self.cols + c];
        s(r1, c1) - s(r0, c1) - s(r1, c0) + s(r0, c0)
    }
}

fn clip(center: usize, half: usize, n: usize) -> (usize, usize) {
    (center.saturating_sub(half), (center + half + 1).min(n))
}

/// Cell-averaging CFAR detection bitmap (row-major). Windows are clipped at
/// the borders, so edge cells average over fewer training cells.
pub fn ca_cfar_2d(hm: &Heatmap, cfg: &CfarConfig) -> Result<Vec<bool>> {
    cfg.validate()?;
    let (hr, hc) = cfg.half();
    if 2 * hr + 1 > hm.rows || 2 * hc + 1 > hm.cols {
        return Err(Error::config(
            "cfar.window",
            format!("window {}x{} exceeds heatmap {}x{}", 2 * hr + 1, 2 * hc + 1, hm.rows, hm.cols),
        ));
    }
    let integral = Integral::new(hm);
    let mut alpha_cache: HashMap<usize, f64> = HashMap::new();
    let mut out = vec![false; hm.data.len()];
    for r in 0..hm.rows {
        let (or0, or1) = clip(r, hr, hm.rows);
        let (gr0, gr1) = clip(r, cfg.guard.0, hm.rows);
        for c in 0..hm.cols {
            let (oc0, oc1) = clip(c, hc, hm.cols);
            let (gc0, gc1) = clip(c, cfg.guard.1, hm.cols);
            let n = (or1 - or0) * (oc1 - oc0) - (gr1 - gr0) * (gc1 - gc0);
            let total = integral.rect(or0, or1, oc0, oc1) - integral.rect(gr0, gr1, gc0, gc1);
            let mean = total.max(0.0) / n as f64;
            let alpha = match cfg.threshold {
                CfarThreshold::Alpha { alpha } => alpha,
                CfarThreshold::Pfa { pfa } => *alpha_cache.entry(n).or_insert_with(|| cfar_alpha(n, pfa)),
            };
            out[r * hm.cols + c] = hm.get(r, c) > alpha * (mean + CFAR_EPS);
        }
    }
    Ok(out)
}

/// A detected bin in heatmap coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

pub fn detected_points(hm: &Heatmap, bitmap: &[bool]) -> Vec<Point> {
    bitmap
        .iter()
        .enumerate()
        .filter(|(_, &d)| d)
        .map(|(i, _)| Point { row: i / hm.cols, col: i % hm.cols, value: hm.data[i] })
        .collect()
}

pub const NOISE: i64 = -1;

fn dist2(a: &Point, b: &Point) -> f64 {
    (a.row as f64 - b.row as f64).powi(2) + (a.col as f64 - b.col as f64).powi(2)
}

/// DBSCAN on bin coordinates with a uniform grid index. Returns one label per
/// point: cluster ids from 0 in discovery order, [`NOISE`] otherwise.
pub fn dbscan(points: &[Point], eps: f64, min_pts: usize) -> Result<Vec<i64>> {
    if !(eps > 0.0) {
        return Err(Error::config("dbscan.eps", "must be positive"));
    }
    if min_pts == 0 {
        return Err(Error::config("dbscan.min_pts", "must be >= 1"));
    }
    let cell = |p: &Point| ((p.row as f64 / eps).floor() as i64, (p.col as f64 / eps).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let eps2 = eps * eps;
    let region = |i: usize| -> Vec<usize> {
        let (gr, gc) = cell(&points[i]);
        let mut out: Vec<usize> = (-1..=1)
            .flat_map(|dr| (-1..=1).map(move |dc| (gr + dr, gc + dc)))
            .filter_map(|k| grid.get(&k))
            .flatten()
            .copied()
            .filter(|&j| dist2(&points[i], &points[j]) <= eps2)
            .collect();
        out.sort_unstable();
        out
    };
    Ok(expand_clusters(points.len(), min_pts, region))
}

fn expand_clusters(n: usize, min_pts: usize, region: impl Fn(usize) -> Vec<usize>) -> Vec<i64> {
    const UNSEEN: i64 = -2;
    let mut labels = vec![UNSEEN; n];
    let mut next = 0;
    for i in 0..n {
        if labels[i] != UNSEEN {
            continue;
        }
        let seeds = region(i);
        if seeds.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = next;
        let mut queue: std::collections::VecDeque<usize> = seeds.into_iter().filter(|&j| j != i).collect();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = next;
            }
            if labels[j] != UNSEEN {
                continue;
            }
            labels[j] = next;
            let nb = region(j);
            if nb.len() >= min_pts {
                queue.extend(nb);
            }
        }
        next += 1;
    }
    labels
}

/// One cluster reduced to its value-weighted centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// Nearest bin to the centroid.
    pub bin: (usize, usize),
    pub centroid: (f64, f64),
    /// Peak value inside the cluster.
    pub value: f64,
    pub cluster: i64,
    pub range: f64,
    pub azimuth: f64,
}

/// Value-weighted centroids of every non-noise cluster, ordered by cluster id.
pub fn centroids(points: &[Point], labels: &[i64], radio: &RadioConfig) -> Result<Vec<Detection>> {
    if points.len() != labels.len() {
        return Err(Error::shape("centroids", format!("{} points vs {} labels", points.len(), labels.len())));
    }
    let n_clusters = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    let mut acc = vec![(0.0, 0.0, 0.0, f64::NEG_INFINITY, 0usize); n_clusters];
    for (p, &l) in points.iter().zip(labels) {
        if l < 0 {
            continue;
        }
        let a = &mut acc[l as usize];
        let w = p.value.max(0.0);
        a.0 += w * p.row as f64;
        a.1 += w * p.col as f64;
        a.2 += w;
        a.3 = a.3.max(p.value);
        a.4 += 1;
    }
    let (rows, cols) = radio.heatmap_dims();
    Ok(acc
        .into_iter()
        .enumerate()
        .filter(|(_, a)| a.4 > 0)
        .map(|(k, (sr, sc, sw, peak, count))| {
            let (r, c) = if sw > 0.0 {
                (sr / sw, sc / sw)
            } else {
                let members = points.iter().zip(labels).filter(|(_, &l)| l == k as i64);
                let (sr, sc) = members.fold((0.0, 0.0), |(a, b), (p, _)| (a + p.row as f64, b + p.col as f64));
                (sr / count as f64, sc / count as f64)
            };
            let (range, azimuth) = radio.coords_of_bin(r, c);
            let bin = ((r.round() as usize).min(rows - 1), (c.round() as usize).min(cols - 1));
            Detection { bin, centroid: (r, c), value: peak, cluster: k as i64, range, azimuth }
        })
        .collect())
}

/// Baseline detector settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub cfar: CfarConfig,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    /// Azimuth gate of the fusion teacher, degrees.
    pub fusion_gate_deg: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { cfar: CfarConfig::default(), dbscan_eps: 1.5, dbscan_min_pts: 1, fusion_gate_deg: 3.0 }
    }
}

/// CFAR, clustering and centroiding of one heatmap.
pub fn detect(hm: &Heatmap, cfg: &ChainConfig, radio: &RadioConfig) -> Result<Vec<Detection>> {
    let bitmap = ca_cfar_2d(hm, &cfg.cfar)?;
    let points = detected_points(hm, &bitmap);
    let labels = dbscan(&points, cfg.dbscan_eps, cfg.dbscan_min_pts)?;
    centroids(&points, &labels, radio)
}

/// Arc-length-weighted distance from a detection to groundtruth, meters.
pub fn genie_distance(d: &Detection, gt: &GroundTruth) -> f64 {
    let arc = (d.azimuth - gt.azimuth).to_radians() * gt.range;
    (d.range - gt.range).hypot(arc)
}

/// The detection closest to groundtruth; ties go to the larger value, then the lower row.
pub fn genie_select<'a>(detections: &'a [Detection], gt: &GroundTruth) -> Option<&'a Detection> {
    detections.iter().min_by(|a, b| {
        let (da, db) = (genie_distance(a, gt), genie_distance(b, gt));
        if (da - db).abs() > 1e-12 * da.max(db).max(1.0) {
            da.total_cmp(&db)
        } else {
            b.value.total_cmp(&a.value).then(a.bin.0.cmp(&b.bin.0)).then(a.bin.1.cmp(&b.bin.1))
        }
    })
}

/// Camera-gated teacher label: vision azimuth from the box center, the CFAR
/// centroid nearest in azimuth inside the gate, else the brightest row of the
/// heatmap column at the vision azimuth.
pub fn fusion_teacher(
    id: u64,
    bbox: &BBox,
    detections: &[Detection],
    cam: &CameraModel,
    hm: &Heatmap,
    radio: &RadioConfig,
    gate_deg: f64,
) -> SelfLabel {
    let az_v = cam.azimuth_of_column(bbox.center_col());
    let best = detections
        .iter()
        .filter(|d| (d.azimuth - az_v).abs() <= gate_deg)
        .min_by(|a, b| (a.azimuth - az_v).abs().total_cmp(&(b.azimuth - az_v).abs()).then(b.value.total_cmp(&a.value)));
    match best {
        Some(d) => SelfLabel::at(id, d.range, d.azimuth, LabelSource::FusionTeacher, radio),
        None => {
            let col = (radio.col_of_azimuth(az_v).round().max(0.0) as usize).min(hm.cols - 1);
            let column: Vec<f64> = (0..hm.rows).map(|r| hm.get(r, col)).collect();
            let row = crate::radio::argmax(&column);
            SelfLabel::at(id, radio.range_of_row(row as f64), az_v, LabelSource::FusionTeacher, radio)
        }
    }
}

#[derive(Debug, Serialize)]
struct DetectionRow {
    id: u64,
    row: usize,
    col: usize,
    range: f64,
    azimuth: f64,
    cluster: i64,
    value: f64,
}

/// Detections table; `items` pairs each record id with its detections.
pub fn write_detections(path: &Path, items: &[(u64, Vec<Detection>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (id, dets) in items {
        for d in dets {
            w.serialize(DetectionRow {
                id: *id,
                row: d.bin.0,
                col: d.bin.1,
                range: d.range,
                azimuth: d.azimuth,
                cluster: d.cluster,
                value: d.value,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
