//! Localisation error statistics and distribution-deviation measures.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Cartesian distance in meters between two polar positions (azimuth in degrees).
pub fn location_error(range_a: f64, az_a: f64, range_b: f64, az_b: f64) -> f64 {
    let (xa, ya) = (range_a * az_a.to_radians().sin(), range_a * az_a.to_radians().cos());
    let (xb, yb) = (range_b * az_b.to_radians().sin(), range_b * az_b.to_radians().cos());
    (xa - xb).hypot(ya - yb)
}

/// Nearest-rank percentile: the `ceil(p*N)`-th smallest sample.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("percentile samples"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::OutOfRange(format!("percentile {p} outside (0, 1)")));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(nearest_rank(&s, p))
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub sorted: Vec<f64>,
    pub p50: f64,
    pub p90: f64,
    pub mean: f64,
}

impl ErrorStats {
    pub fn new(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Empty("error samples"));
        }
        if let Some(e) = errors.iter().find(|e| !e.is_finite()) {
            return Err(Error::NonFinite(format!("error sample {e}")));
        }
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        Ok(Self { p50: nearest_rank(&sorted, 0.5), p90: nearest_rank(&sorted, 0.9), mean, sorted })
    }

    pub fn count(&self) -> usize {
        self.sorted.len()
    }
}

/// Quadratic-cost 1-D Wasserstein distance between two empirical
/// distributions, `int_0^1 (F_a^-1(x) - F_b^-1(x))^2 dx`, integrated exactly
/// over the merged quantile breakpoints.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wasserstein samples"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (n, m) = (sa.len(), sb.len());
    let (mut i, mut j) = (0, 0);
    let mut x = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (next - x) * (sa[i] - sb[j]).powi(2);
        x = next;
        // advance whichever quantile step ends here, comparing i/n and j/m exactly
        let (ea, eb) = ((i + 1) * m, (j + 1) * n);
        if ea <= eb {
            i += 1;
        }
        if eb <= ea {
            j += 1;
        }
    }
    Ok(total)
}

/// Uniform-bin histogram over `[lo, hi]`; out-of-window samples land in the end bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(samples: &[f64], lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::config("metrics.n_bins", "need at least 2 bins"));
        }
        if !(hi > lo) {
            return Err(Error::config("metrics.window", "need lo < hi"));
        }
        let mut counts = vec![0; n_bins];
        for &s in samples {
            counts[bin_index(s, lo, hi, n_bins)] += 1;
        }
        Ok(Self { lo, hi, counts })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Normalized mass per bin.
    pub fn mass(&self) -> Vec<f64> {
        let t = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }
}

fn bin_index(x: f64, lo: f64, hi: f64, n: usize) -> usize {
    let f = ((x - lo) / (hi - lo) * n as f64).floor();
    if f.is_nan() || f < 0.0 {
        0
    } else {
        (f as usize).min(n - 1)
    }
}

pub const KL_EPS: f64 = 1e-9;

/// `sum p_i ln(p_i / (q_i + eps))` over bins with `p_i > 0`.
pub fn kl_div(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.lo != q.lo || p.hi != q.hi || p.n_bins() != q.n_bins() {
        return Err(Error::shape(
            "kl_div",
            format!("edges [{}, {}]x{} vs [{}, {}]x{}", p.lo, p.hi, p.n_bins(), q.lo, q.hi, q.n_bins()),
        ));
    }
    Ok(kl_mass(&p.mass(), &q.mass()))
}

fn kl_mass(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi / (qi + KL_EPS)).ln()).sum()
}

/// Plug-in mutual information of paired samples from an `n_bins x n_bins` joint histogram over `[lo, hi]^2`.
pub fn mutual_info(y: &[f64], y_hat: &[f64], lo: f64, hi: f64, n_bins: usize) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::shape("mutual_info", format!("{} vs {} samples", y.len(), y_hat.len())));
    }
    if y.len() < 2 {
        return Err(Error::Insufficient(format!("mutual information needs >= 2 pairs, got {}", y.len())));
    }
    let hy = Histogram::new(y, lo, hi, n_bins)?;
    let hx = Histogram::new(y_hat, lo, hi, n_bins)?;
    let occupied = |h: &Histogram| h.counts.iter().filter(|&&c| c > 0).count();
    if occupied(&hy) < 2 && occupied(&hx) < 2 {
        return Err(Error::Insufficient("all samples fall into a single bin".into()));
    }
    let mut joint = vec![0u64; n_bins * n_bins];
    for (&a, &b) in y.iter().zip(y_hat) {
        joint[bin_index(a, lo, hi, n_bins) * n_bins + bin_index(b, lo, hi, n_bins)] += 1;
    }
    let n = y.len() as f64;
    let (py, px) = (hy.mass(), hx.mass());
    let mut mi = 0.0;
    for i in 0..n_bins {
        for j in 0..n_bins {
            let c = joint[i * n_bins + j];
            if c > 0 {
                let pij = c as f64 / n;
                mi += pij * (pij / (py[i] * px[j])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// One row of the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub p50: f64,
    pub p90: f64,
    #[serde(rename = "D_W_range")]
    pub dw_range: f64,
    #[serde(rename = "D_W_angle")]
    pub dw_angle: f64,
    #[serde(rename = "D_KL")]
    pub d_kl: f64,
    #[serde(rename = "MI")]
    pub mi: f64,
}

/// Coordinate windows for the histogram-based measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Windows {
    pub range: (f64, f64),
    pub azimuth: (f64, f64),
    pub n_bins: usize,
}

/// Summarises estimates `(range, azimuth)` against groundtruth. `D_KL` and `MI`
/// average the range and azimuth values.
pub fn method_row(method: &str, est: &[(f64, f64)], gt: &[(f64, f64)], errors: &[f64], win: Windows) -> Result<MetricsRow> {
    if est.len() != gt.len() {
        return Err(Error::shape("method_row", format!("{} estimates vs {} groundtruth", est.len(), gt.len())));
    }
    let stats = ErrorStats::new(errors)?;
    let (er, ea): (Vec<f64>, Vec<f64>) = est.iter().copied().unzip();
    let (gr, ga): (Vec<f64>, Vec<f64>) = gt.iter().copied().unzip();
    let kl = |g: &[f64], e: &[f64], (lo, hi): (f64, f64)| -> Result<f64> {
        kl_div(&Histogram::new(g, lo, hi, win.n_bins)?, &Histogram::new(e, lo, hi, win.n_bins)?)
    };
    let mi = |g: &[f64], e: &[f64], (lo, hi): (f64, f64)| mutual_info(g, e, lo, hi, win.n_bins);
    Ok(MetricsRow {
        method: method.to_string(),
        p50: stats.p50,
        p90: stats.p90,
        dw_range: wasserstein_1d(&gr, &er)?,
        dw_angle: wasserstein_1d(&ga, &ea)?,
        d_kl: (kl(&gr, &er, win.range)? + kl(&ga, &ea, win.azimuth)?) / 2.0,
        mi: (mi(&gr, &er, win.range)? + mi(&ga, &ea, win.azimuth)?) / 2.0,
    })
}

pub fn write_report(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5).unwrap(), 5.0);
        assert_eq!(percentile(&v, 0.9).unwrap(), 9.0);
        assert!(percentile(&[], 0.5).is_err());
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        assert!((percentile(&u, 0.5).unwrap() - 0.5).abs() < 0.02);
        let s = ErrorStats::new(&v).unwrap();
        assert_eq!((s.p50, s.p90, s.count()), (5.0, 9.0, 10));
    }

    #[test]
    fn percentile_is_monotone() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let u: Vec<f64> = (0..37).map(|_| r.random::<f64>()).collect();
        let ps: Vec<f64> = (1..100).map(|i| percentile(&u, i as f64 / 100.0).unwrap()).collect();
        assert!(ps.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&[3.0], &[5.0]).unwrap(), 4.0);
        assert_eq!(wasserstein_1d(&[1.0, 2.0, 7.0], &[7.0, 1.0, 2.0]).unwrap(), 0.0);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a: Vec<f64> = (0..100).map(|_| r.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..100).map(|_| r.random_range(-1.0..5.0)).collect();
            let (mut sa, mut sb) = (a.clone(), b.clone());
            sa.sort_by(f64::total_cmp);
            sb.sort_by(f64::total_cmp);
            let oracle: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 100.0;
            let d = wasserstein_1d(&a, &b).unwrap();
            assert!((d - oracle).abs() < 1e-9);
            assert!((d - wasserstein_1d(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn wasserstein_unequal_counts_matches_fine_grid() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..7).map(|_| r.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..5).map(|_| r.random_range(0.0..1.0)).collect();
        // replicate each sample to a common count of 35
        let rep = |v: &[f64], k: usize| v.iter().flat_map(|&x| std::iter::repeat_n(x, k)).collect::<Vec<_>>();
        let (ra, rb) = (rep(&a, 5), rep(&b, 7));
        let (mut sa, mut sb) = (ra.clone(), rb.clone());
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        let oracle: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 35.0;
        assert!((wasserstein_1d(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let p = Histogram { lo: 0.0, hi: 1.0, counts: vec![4, 0] };
        let q = Histogram { lo: 0.0, hi: 1.0, counts: vec![1, 1] };
        assert!((kl_div(&p, &q).unwrap() - 2f64.ln()).abs() < 1e-8);
        assert_eq!(kl_div(&q, &q).unwrap(), kl_mass(&[0.5, 0.5], &[0.5, 0.5]));
        assert!(kl_div(&q, &q).unwrap().abs() < 1e-8);
        let other = Histogram { lo: 0.0, hi: 2.0, counts: vec![1, 1] };
        assert!(kl_div(&p, &other).is_err());
        let mut r = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a: Vec<u64> = (0..16).map(|_| r.random_range(0..20)).collect();
            let b: Vec<u64> = (0..16).map(|_| r.random_range(0..20)).collect();
            let (p, q) = (Histogram { lo: 0.0, hi: 1.0, counts: a.clone() }, Histogram { lo: 0.0, hi: 1.0, counts: b.clone() });
            let (ta, tb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
            let mut oracle = 0.0;
            for i in 0..16 {
                let (pi, qi) = (a[i] as f64 / ta, b[i] as f64 / tb);
                if pi > 0.0 {
                    oracle += pi * (pi / (qi + 1e-9)).ln();
                }
            }
            let k = kl_div(&p, &q).unwrap();
            assert!((k - oracle).abs() < 1e-9);
            assert!(k >= -1e-12);
        }
    }

    #[test]
    fn histogram_mass_sums_to_one() {
        let h = Histogram::new(&[0.1, 0.5, 0.9, 2.0, -1.0], 0.0, 1.0, 4).unwrap();
        assert_eq!(h.counts, vec![2, 0, 1, 2]);
        assert!((h.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(Histogram::new(&[0.0], 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn mutual_info_examples() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let y: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        let x: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        let indep = mutual_info(&y, &x, 0.0, 1.0, 32).unwrap();
        assert!(indep < 0.05, "{indep}");
        let same = mutual_info(&y, &y, 0.0, 1.0, 32).unwrap();
        assert!((same - 32f64.ln()).abs() < 0.02, "{same}");
        assert!(mutual_info(&[0.1, 0.1], &[0.1, 0.1], 0.0, 1.0, 32).is_err());
        assert!(mutual_info(&y[..1], &x[..1], 0.0, 1.0, 32).is_err());
    }

    #[test]
    fn groundtruth_labels_are_optimal() {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let gt: Vec<(f64, f64)> = (0..500).map(|_| (r.random_range(5.0..25.0), r.random_range(-40.0..40.0))).collect();
        let noisy: Vec<(f64, f64)> = gt.iter().map(|&(a, b)| (a + r.random_range(-2.0..2.0), b + r.random_range(-5.0..5.0))).collect();
        let win = Windows { range: (5.0, 25.0), azimuth: (-45.0, 45.0), n_bins: 32 };
        let err = |e: &[(f64, f64)]| e.iter().zip(&gt).map(|(a, b)| location_error(a.0, a.1, b.0, b.1)).collect::<Vec<_>>();
        let perfect = method_row("gt", &gt, &gt, &err(&gt), win).unwrap();
        let bad = method_row("noisy", &noisy, &gt, &err(&noisy), win).unwrap();
        assert_eq!((perfect.dw_range, perfect.dw_angle), (0.0, 0.0));
        assert!(perfect.d_kl.abs() < 1e-6);
        assert!(perfect.mi > bad.mi);
        assert!(bad.dw_range > 0.0 && bad.dw_angle > 0.0 && bad.d_kl >= 0.0);
        assert_eq!(perfect.p50, 0.0);
    }

    #[test]
    fn location_error_geometry() {
        assert!((location_error(10.0, 0.0, 10.0, 90.0) - 200f64.sqrt()).abs() < 1e-12);
        assert_eq!(location_error(7.0, 12.0, 7.0, 12.0), 0.0);
    }

    #[test]
    fn report_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let row = MetricsRow { method: "mcl".into(), p50: 1.0, p90: 2.0, dw_range: 0.1, dw_angle: 0.2, d_kl: 0.3, mi: 0.4 };
        write_report(&p, &[row]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("method,p50,p90,D_W_range,D_W_angle,D_KL,MI\n"), "{text}");
    }
}
