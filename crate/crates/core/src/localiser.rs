//! Radio-only regression network mapping a heatmap to `(range, azimuth)`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, OptimizerConfig, ParamStore, Tensor, Var};
use crate::dataset::batches;
use crate::error::{Error, Result};
use crate::radio::{Heatmap, RadioConfig};
use crate::selflabel::LocRecord;

/// Conv stages `(out_channels, kernel, stride)`, unpadded, then linear widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocaliserArch {
    pub convs: Vec<(usize, usize, usize)>,
    pub linears: Vec<usize>,
}

impl Default for LocaliserArch {
    fn default() -> Self {
        Self { convs: vec![(8, 4, 2), (16, 3, 2), (8, 2, 2), (32, 4, 1)], linears: vec![128, 16, 64, 64] }
    }
}

impl LocaliserArch {
    /// Feature shape after the conv stack, `None` when the input is too small.
    pub fn conv_output(&self, input: (usize, usize)) -> Option<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = (1, input.0, input.1);
        for &(cout, k, s) in &self.convs {
            if h < k || w < k || s == 0 {
                return None;
            }
            (c, h, w) = (cout, (h - k) / s + 1, (w - k) / s + 1);
        }
        Some((c, h, w))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocaliserConfig {
    pub arch: LocaliserArch,
    /// Dynamic range of the dB-scaled input heatmap.
    pub db_range: f64,
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for LocaliserConfig {
    fn default() -> Self {
        Self {
            arch: LocaliserArch::default(),
            db_range: 40.0,
            epochs: 30,
            batch: 32,
            optimizer: OptimizerConfig::Adam { lr: 1e-3 },
            seed: 0,
        }
    }
}

impl LocaliserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arch.convs.is_empty() || self.arch.linears.is_empty() {
            return Err(Error::config("localiser.arch", "needs at least one conv and one linear stage"));
        }
        if self.arch.convs.iter().any(|&(c, k, s)| c == 0 || k == 0 || s == 0) || self.arch.linears.contains(&0) {
            return Err(Error::config("localiser.arch", "sizes must be positive"));
        }
        if !(self.db_range > 0.0) {
            return Err(Error::config("localiser.db_range", "must be positive"));
        }
        if self.batch < 2 {
            return Err(Error::config("localiser.batch", "must be at least 2"));
        }
        if !(self.optimizer.lr() > 0.0) {
            return Err(Error::config("localiser.optimizer.lr", "must be positive"));
        }
        Ok(())
    }
}

/// Maps polar coordinates to `[0, 1]^2` by the radar window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub range_window: (f64, f64),
    pub fov_deg: f64,
}

impl Normalizer {
    pub fn of(radio: &RadioConfig) -> Self {
        Self { range_window: radio.range_window, fov_deg: radio.azimuth_fov_deg }
    }

    pub fn forward(&self, (range, az): (f64, f64)) -> [f64; 2] {
        let (lo, hi) = self.range_window;
        [(range - lo) / (hi - lo), az / self.fov_deg + 0.5]
    }

    /// Inverse map, clamped to the window.
    pub fn inverse(&self, y: [f64; 2]) -> (f64, f64) {
        let (lo, hi) = self.range_window;
        let (a, b) = (y[0].clamp(0.0, 1.0), y[1].clamp(0.0, 1.0));
        (lo + a * (hi - lo), (b - 0.5) * self.fov_deg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localiser {
    pub arch: LocaliserArch,
    pub input_dims: (usize, usize),
    pub db_range: f64,
    pub norm: Normalizer,
    pub params: ParamStore,
}

impl Localiser {
    pub fn init(cfg: &LocaliserConfig, input_dims: (usize, usize), norm: Normalizer) -> Result<Self> {
        cfg.validate()?;
        let (c, h, w) = cfg.arch.conv_output(input_dims).ok_or_else(|| {
            Error::config("localiser.arch", format!("input {input_dims:?} too small for the conv stack"))
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let mut cin = 1;
        for (i, &(cout, k, _)) in cfg.arch.convs.iter().enumerate() {
            let fan = cin * k * k;
            params.insert(format!("conv{i}.w"), Tensor::randn(&[cout, cin, k, k], (2.0 / fan as f64).sqrt(), &mut rng));
            params.insert(format!("conv{i}.b"), Tensor::zeros(&[cout]));
            cin = cout;
        }
        let mut din = c * h * w;
        for (i, &dout) in cfg.arch.linears.iter().chain(std::iter::once(&2)).enumerate() {
            params.insert(format!("fc{i}.w"), Tensor::randn(&[din, dout], (2.0 / din as f64).sqrt(), &mut rng));
            params.insert(format!("fc{i}.b"), Tensor::zeros(&[dout]));
            din = dout;
        }
        Ok(Self { arch: cfg.arch.clone(), input_dims, db_range: cfg.db_range, norm, params })
    }

    fn input(&self, heatmaps: &[&Heatmap]) -> Result<Tensor> {
        let (h, w) = self.input_dims;
        let mut data = Vec::with_capacity(heatmaps.len() * h * w);
        for hm in heatmaps {
            if (hm.rows, hm.cols) != self.input_dims {
                return Err(Error::shape("localiser", format!("heatmap {}x{}, network expects {h}x{w}", hm.rows, hm.cols)));
            }
            data.extend(hm.to_db_unit(self.db_range));
        }
        Tensor::new(vec![heatmaps.len(), 1, h, w], data)
    }

    /// Normalized outputs `[B, 2]`.
    fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let mut y = x;
        let mut v = vars.iter();
        for &(_, _, s) in &self.arch.convs {
            let (w, b) = (*v.next().expect("conv w"), *v.next().expect("conv b"));
            y = g.conv2d(y, w, Some(b), s, 0)?;
            y = g.relu(y);
        }
        let sh = g.shape(y).to_vec();
        y = g.reshape(y, &[sh[0], sh[1..].iter().product()])?;
        let n_fc = self.arch.linears.len() + 1;
        for i in 0..n_fc {
            let (w, b) = (*v.next().expect("fc w"), *v.next().expect("fc b"));
            y = g.matmul(y, w)?;
            y = g.bias_add(y, b)?;
            if i + 1 < n_fc {
                y = g.relu(y);
            }
        }
        Ok(y)
    }

    /// Predicted `(range m, azimuth deg)` per heatmap, clamped to the window.
    pub fn predict(&self, heatmaps: &[&Heatmap]) -> Result<Vec<(f64, f64)>> {
        let mut out = Vec::with_capacity(heatmaps.len());
        for chunk in heatmaps.chunks(64) {
            let mut g = Graph::new();
            let vars = self.params.bind_const(&mut g);
            let x = g.constant(self.input(chunk)?);
            let y = self.forward(&mut g, &vars, x)?;
            out.extend(g.value(y).data.chunks_exact(2).map(|p| self.norm.inverse([p[0], p[1]])));
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.params.save(dir)
    }

    /// Loads weights saved by [`Localiser::save`] into a freshly laid-out network.
    pub fn load(cfg: &LocaliserConfig, input_dims: (usize, usize), norm: Normalizer, dir: &Path) -> Result<Self> {
        let mut net = Self::init(cfg, input_dims, norm)?;
        let loaded = ParamStore::load(dir)?;
        let same = loaded.names().eq(net.params.names())
            && loaded.tensors().zip(net.params.tensors()).all(|(a, b)| a.shape == b.shape);
        if !same {
            return Err(Error::Consistency(format!("checkpoint {} does not match the localiser layout", dir.display())));
        }
        net.params = loaded;
        Ok(net)
    }
}

#[derive(Debug, Clone)]
pub struct LocaliserOutput {
    pub net: Localiser,
    pub losses: Vec<f64>,
}

/// MSE regression on normalized labels; one loss value per optimizer step.
pub fn train_localiser(cfg: &LocaliserConfig, records: &[LocRecord], norm: Normalizer) -> Result<LocaliserOutput> {
    let first = records.first().ok_or(Error::Empty("localiser training records"))?;
    let dims = (first.heatmap.rows, first.heatmap.cols);
    let mut net = Localiser::init(cfg, dims, norm)?;
    let mut opt = cfg.optimizer.build(&net.params);
    let idx: Vec<u64> = (0..records.len() as u64).collect();
    let batch = cfg.batch.min(records.len());
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        let epoch_seed = cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ epoch as u64;
        for b in batches(&idx, batch.max(2), epoch_seed)? {
            let recs: Vec<&LocRecord> = b.iter().map(|&i| &records[i as usize]).collect();
            let hms: Vec<&Heatmap> = recs.iter().map(|r| &r.heatmap).collect();
            let target: Vec<f64> = recs.iter().flat_map(|r| norm.forward(r.label)).collect();
            let mut g = Graph::new();
            let vars = net.params.bind(&mut g);
            let x = g.constant(net.input(&hms)?);
            let y = net.forward(&mut g, &vars, x)?;
            let t = g.constant(Tensor::new(vec![recs.len(), 2], target)?);
            let d = g.sub(y, t)?;
            let sq = g.mul(d, d)?;
            let loss = g.mean(sq);
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("localiser loss at epoch {epoch}")));
            }
            g.backward(loss)?;
            let grads = net.params.grads(&g, &vars);
            opt.step(&mut net.params, &grads)?;
            losses.push(lv);
        }
    }
    Ok(LocaliserOutput { net, losses })
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    id: u64,
    range_pred: f64,
    azimuth_pred: f64,
    range_gt: f64,
    azimuth_gt: f64,
}

/// CSV of `(id, prediction, groundtruth)` rows.
pub fn write_predictions(path: &Path, records: &[LocRecord], preds: &[(f64, f64)]) -> Result<()> {
    if records.len() != preds.len() {
        return Err(Error::shape("write_predictions", format!("{} records vs {} predictions", records.len(), preds.len())));
    }
    let mut w = csv::Writer::from_path(path)?;
    for (r, p) in records.iter().zip(preds) {
        w.serialize(PredictionRow { id: r.id, range_pred: p.0, azimuth_pred: p.1, range_gt: r.gt.0, azimuth_gt: r.gt.1 })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn norm() -> Normalizer {
        Normalizer::of(&RadioConfig::desk())
    }

    fn blob(row: usize, col: usize) -> Heatmap {
        let mut hm = Heatmap::zeros(48, 64);
        for r in 0..48 {
            for c in 0..64 {
                let d2 = (r as f64 - row as f64).powi(2) + (c as f64 - col as f64).powi(2);
                hm.data[r * 64 + c] = (-d2 / 4.0).exp() + 1e-3;
            }
        }
        hm
    }

    #[test]
    fn desk_arch_shapes() {
        assert_eq!(LocaliserArch::default().conv_output((48, 64)), Some((32, 2, 4)));
        assert_eq!(LocaliserArch::default().conv_output((8, 8)), None);
        let net = Localiser::init(&LocaliserConfig::default(), (48, 64), norm()).unwrap();
        assert_eq!(net.params.len(), 2 * (4 + 5));
        assert_eq!(net.params.get("fc4.w").unwrap().shape, vec![64, 2]);
    }

    #[test]
    fn normalizer_round_trip_and_clamp() {
        let n = norm();
        let y = n.forward((12.0, -17.5));
        let (r, a) = n.inverse(y);
        assert!((r - 12.0).abs() < 1e-12 && (a + 17.5).abs() < 1e-12);
        assert_eq!(n.inverse([-3.0, 9.0]), (n.range_window.0, n.fov_deg / 2.0));
    }

    #[test]
    fn predictions_stay_in_window() {
        let mut cfg = LocaliserConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..5 {
            cfg.seed = seed;
            let mut net = Localiser::init(&cfg, (48, 64), norm()).unwrap();
            for t in net.params.tensors_mut() {
                t.data.iter_mut().for_each(|v| *v *= 30.0);
            }
            let hm = blob(rng.random_range(0..48), rng.random_range(0..64));
            for (r, a) in net.predict(&[&hm]).unwrap() {
                assert!((5.0..=25.0).contains(&r) && (-45.0..=45.0).contains(&a));
            }
        }
    }

    #[test]
    fn wrong_dims_fail() {
        let net = Localiser::init(&LocaliserConfig::default(), (48, 64), norm()).unwrap();
        assert!(matches!(net.predict(&[&Heatmap::zeros(40, 64)]), Err(Error::Shape { .. })));
    }

    #[test]
    fn learns_blob_position_deterministically() {
        let radio = RadioConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let records: Vec<LocRecord> = (0..96)
            .map(|id| {
                let (r, c) = (rng.random_range(4..44), rng.random_range(4..60));
                let coords = radio.coords_of_bin(r as f64, c as f64);
                LocRecord { id, heatmap: blob(r, c), label: coords, gt: coords }
            })
            .collect();
        let cfg = LocaliserConfig { epochs: 15, batch: 16, ..Default::default() };
        let a = train_localiser(&cfg, &records, norm()).unwrap();
        let b = train_localiser(&cfg, &records, norm()).unwrap();
        assert_eq!(a.losses, b.losses);
        let head = a.losses[..3].iter().sum::<f64>();
        let tail = a.losses[a.losses.len() - 3..].iter().sum::<f64>();
        assert!(tail < 0.5 * head, "{head} -> {tail}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = LocaliserConfig::default();
        let net = Localiser::init(&cfg, (48, 64), norm()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        net.save(dir.path()).unwrap();
        let back = Localiser::load(&cfg, (48, 64), norm(), dir.path()).unwrap();
        let hm = blob(20, 30);
        let (p, q) = (net.predict(&[&hm]).unwrap()[0], back.predict(&[&hm]).unwrap()[0]);
        assert!((p.0 - q.0).abs() < 1e-4 && (p.1 - q.1).abs() < 1e-3);
    }
}
