use nalgebra::DMatrix;

use super::model::FeatureMap;
use crate::error::{Error, Result};

/// Singular values (descending) of the centred covariance `1/N sum (z-zbar)(z-zbar)^T`.
pub fn covariance_spectrum(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::Insufficient(format!("covariance needs >= 2 samples, got {}", samples.len())));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::shape("covariance_spectrum", "samples differ in length"));
    }
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..d).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / n).collect();
    let centred = DMatrix::from_fn(d, samples.len(), |i, k| samples[k][i] - mean[i]);
    let cov = &centred * centred.transpose() / n;
    let mut sv: Vec<f64> = cov.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Concatenated spectra of every per-bin channel vector (`C`-dim) and every
/// per-channel unfolded spatial map (`h*w`-dim) across samples, sorted descending.
pub fn feature_spectra(maps: &[FeatureMap]) -> Result<Vec<f64>> {
    let first = maps.first().ok_or(Error::Empty("feature maps"))?;
    let (c, plane) = (first.c, first.h * first.w);
    if maps.iter().any(|m| (m.c, m.h, m.w) != (first.c, first.h, first.w)) {
        return Err(Error::shape("feature_spectra", "feature maps differ in shape"));
    }
    let mut all = Vec::with_capacity(plane * c + c * plane);
    for n in 0..plane {
        let z: Vec<Vec<f64>> = maps.iter().map(|m| (0..c).map(|ch| m.data[ch * plane + n]).collect()).collect();
        all.extend(covariance_spectrum(&z)?);
    }
    for ch in 0..c {
        let z: Vec<Vec<f64>> = maps.iter().map(|m| m.data[ch * plane..(ch + 1) * plane].to_vec()).collect();
        all.extend(covariance_spectrum(&z)?);
    }
    all.sort_by(|a, b| b.total_cmp(a));
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Cyclic Jacobi eigenvalues of a small symmetric matrix.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[i][j].powi(2)).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    #[test]
    fn identical_samples_have_zero_spectrum() {
        let s = vec![vec![1.0, -2.0, 3.0]; 6];
        assert!(covariance_spectrum(&s).unwrap().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn rank_one_construction() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
        let s: Vec<Vec<f64>> = (0..20).map(|_| {
            let a: f64 = r.random_range(-2.0..2.0);
            u.iter().map(|x| a * x).collect()
        }).collect();
        let sv = covariance_spectrum(&s).unwrap();
        assert!(sv[0] / sv[1].max(f64::MIN_POSITIVE) > 1e6, "{sv:?}");
    }

    #[test]
    fn matches_jacobi_oracle() {
        for seed in 0..20 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let mean: Vec<f64> = (0..4).map(|i| s.iter().map(|v| v[i]).sum::<f64>() / 5.0).collect();
            let cov: Vec<Vec<f64>> = (0..4)
                .map(|i| (0..4).map(|j| s.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / 5.0).collect())
                .collect();
            let oracle = jacobi_eigenvalues(cov);
            let sv = covariance_spectrum(&s).unwrap();
            for (a, b) in sv.iter().zip(&oracle) {
                assert!((a - b.max(0.0)).abs() < 1e-8, "{sv:?} vs {oracle:?}");
            }
        }
    }

    #[test]
    fn too_few_samples() {
        assert!(covariance_spectrum(&[vec![1.0]]).is_err());
    }

    #[test]
    fn feature_spectra_counts() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let maps: Vec<FeatureMap> = (0..4)
            .map(|_| FeatureMap { c: 3, h: 2, w: 2, data: (0..12).map(|_| r.random_range(-1.0..1.0)).collect() })
            .collect();
        let sv = feature_spectra(&maps).unwrap();
        assert_eq!(sv.len(), 4 * 3 + 3 * 4);
        assert!(sv.windows(2).all(|w| w[0] >= w[1]));
    }
}
