use crate::autodiff::correlate_same;
use crate::error::{Error, Result};
use crate::scene::{padded_box, BBox};

use super::model::FeatureMap;

/// Cross-modal attention over feature bins, `h x w`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl AttentionMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.w + col]
    }

    /// First maximiser in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let i = crate::radio::argmax(&self.data);
        (i / self.w, i % self.w)
    }
}

/// Feature-bin window `(rows, cols)` covering the image box padded by
/// `pad_px` pixels, then by `pad_bins` feature bins, clipped to the grid.
pub fn template_window(
    bbox: &BBox,
    pad_px: i64,
    pad_bins: usize,
    image_dims: (usize, usize),
    feat_dims: (usize, usize),
) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let b = padded_box(bbox, pad_px, image_dims)?;
    let (sy, sx) = (image_dims.0 as f64 / feat_dims.0 as f64, image_dims.1 as f64 / feat_dims.1 as f64);
    let to_bin = |px: usize, s: f64, n: usize| ((px as f64 / s).floor() as usize).min(n - 1);
    let r0 = to_bin(b.row_min, sy, feat_dims.0).saturating_sub(pad_bins);
    let r1 = (to_bin(b.row_max, sy, feat_dims.0) + pad_bins).min(feat_dims.0 - 1);
    let c0 = to_bin(b.col_min, sx, feat_dims.1).saturating_sub(pad_bins);
    let c1 = (to_bin(b.col_max, sx, feat_dims.1) + pad_bins).min(feat_dims.1 - 1);
    Ok((r0..r1 + 1, c0..c1 + 1))
}

/// Crop of `f` (all channels) over the given bin window.
pub fn crop_template(f: &FeatureMap, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> FeatureMap {
    let mut data = Vec::with_capacity(f.c * rows.len() * cols.len());
    for c in 0..f.c {
        for r in rows.clone() {
            for col in cols.clone() {
                data.push(f.get(c, r, col));
            }
        }
    }
    FeatureMap { c: f.c, h: rows.len(), w: cols.len(), data }
}

/// Per-bin unit normalization over channels.
pub fn normalize_bins(f: &FeatureMap) -> FeatureMap {
    let plane = f.h * f.w;
    let mut out = f.clone();
    for n in 0..plane {
        let s: f64 = (0..f.c).map(|c| f.data[c * plane + n].powi(2)).sum();
        let norm = (s + 1e-12).sqrt();
        for c in 0..f.c {
            out.data[c * plane + n] /= norm;
        }
    }
    out
}

/// Same-size correlation of the per-bin-normalized radio features with the
/// Frobenius-normalized template.
pub fn attention_map(radio: &FeatureMap, template: &FeatureMap) -> Result<AttentionMap> {
    if template.c != radio.c || template.h > radio.h || template.w > radio.w {
        return Err(Error::shape(
            "attention_map",
            format!("radio {}x{}x{} vs template {}x{}x{}", radio.c, radio.h, radio.w, template.c, template.h, template.w),
        ));
    }
    if template.data.is_empty() {
        return Err(Error::Empty("attention template"));
    }
    let norm = (template.data.iter().map(|v| v * v).sum::<f64>() + 1e-12).sqrt();
    let t: Vec<f64> = template.data.iter().map(|v| v / norm).collect();
    let r = normalize_bins(radio);
    let data = correlate_same(&r.data, &[r.c, r.h, r.w], &t, &[template.c, template.h, template.w]);
    Ok(AttentionMap { h: radio.h, w: radio.w, data })
}

/// `S = max_n h_n`.
pub fn attention_score(map: &AttentionMap) -> f64 {
    map.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Feature bin `i` of `n` mapped to the centre of its block on an `N`-bin grid.
pub fn rescale_index(i: usize, n: usize, target: usize) -> usize {
    (((i as f64 + 0.5) * target as f64 / n as f64).floor() as usize).min(target - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        FeatureMap { c, h, w, data: (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect() }
    }

    #[test]
    fn matched_filter_identity() {
        let (c, h, w) = (4, 12, 16);
        let mut f = FeatureMap { c, h, w, data: vec![0.0; c * h * w] };
        f.data[(2 * h + 5) * w + 7] = 1.0;
        let t = FeatureMap { c, h: 1, w: 1, data: vec![0.0, 0.0, 1.0, 0.0] };
        let m = attention_map(&f, &t).unwrap();
        assert_eq!(m.argmax(), (5, 7));
        assert!((attention_score(&m) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_template_gives_zero_map() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let f = random_map(4, 6, 8, &mut r);
        let t = FeatureMap { c: 4, h: 2, w: 2, data: vec![0.0; 16] };
        assert!(attention_map(&f, &t).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_brute_force_sliding_dot() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (h, w) = (r.random_range(1..=8), r.random_range(1..=8));
            let (th, tw) = (r.random_range(1..=h), r.random_range(1..=w));
            let f = random_map(4, h, w, &mut r);
            let t = random_map(4, th, tw, &mut r);
            let m = attention_map(&f, &t).unwrap();
            let fnorm = normalize_bins(&f);
            let tn: f64 = t.data.iter().map(|v| v * v).sum::<f64>().sqrt();
            let (py, px) = ((th as i64 - 1) / 2, (tw as i64 - 1) / 2);
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let mut s = 0.0;
                    for dy in 0..th as i64 {
                        for dx in 0..tw as i64 {
                            let (yy, xx) = (y + dy - py, x + dx - px);
                            if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                                continue;
                            }
                            for c in 0..4 {
                                s += fnorm.get(c, yy as usize, xx as usize) * t.get(c, dy as usize, dx as usize) / tn;
                            }
                        }
                    }
                    assert!((m.get(y as usize, x as usize) - s).abs() < 1e-9);
                }
            }
            let brute_max = m.data.iter().copied().fold(f64::MIN, f64::max);
            let mean = m.data.iter().sum::<f64>() / m.data.len() as f64;
            assert_eq!(attention_score(&m), brute_max);
            assert!(attention_score(&m) >= mean);
        }
    }

    #[test]
    fn score_of_single_one() {
        let mut data = vec![0.0; 20];
        data[13] = 1.0;
        assert_eq!(attention_score(&AttentionMap { h: 4, w: 5, data }), 1.0);
    }

    #[test]
    fn rescale_example() {
        // bin (8, 6) on a 16 x 12 grid mapped to 480 x 640
        assert_eq!(rescale_index(8, 16, 480), 255);
        assert_eq!(rescale_index(6, 12, 640), 346);
        let direct = |i: f64, n: f64, t: f64| (i * (t / n) + t / n / 2.0).floor();
        assert_eq!(direct(8.0, 16.0, 480.0), 255.0);
        assert_eq!(direct(6.0, 12.0, 640.0), 346.0);
    }

    #[test]
    fn template_window_covers_padded_box() {
        let b = BBox { col_min: 20, row_min: 24, col_max: 24, row_max: 26 };
        let (rows, cols) = template_window(&b, 5, 1, (48, 64), (12, 16)).unwrap();
        // padded box rows 19..=31 -> bins 4..=7 -> 3..=8; cols 15..=29 -> bins 3..=7 -> 2..=8
        assert_eq!((rows, cols), (3..9, 2..9));
        let (rows, _) = template_window(&b, 100, 1, (48, 64), (12, 16)).unwrap();
        assert_eq!(rows, 0..12);
    }
}
