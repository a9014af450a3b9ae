use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ema_update, Graph, OptimizerConfig, Var};
use crate::dataset::{batches, RadioVisualPair};
use crate::error::{Error, Result};

use super::attention::template_window;
use super::model::{BackboneArch, Bound, Branch, Pooling, SslModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavour {
    Cl,
    Mcl,
    Scl,
}

impl Flavour {
    pub fn name(self) -> &'static str {
        match self {
            Flavour::Cl => "cl",
            Flavour::Mcl => "mcl",
            Flavour::Scl => "scl",
        }
    }

    /// Whether the vision branch sees `mask * image` during training.
    pub fn masks_vision(self) -> bool {
        !matches!(self, Flavour::Cl)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslConfig {
    pub flavour: Flavour,
    /// Defaults to 0.07 for CL/MCL and 0.1 for SCL.
    pub temperature: Option<f64>,
    /// In-batch negatives only, so this must equal `batch` when given.
    pub queue_size: Option<usize>,
    /// Feature-bin margin around the mask when cropping the vision template.
    pub template_pad_bins: usize,
    pub ema: bool,
    pub ema_momentum: f64,
    pub embed_dim: usize,
    pub proj_hidden: usize,
    pub pooling: Pooling,
    pub arch: BackboneArch,
    pub mirror_vision_init: bool,
    /// Dynamic range of the log-compressed heatmap input.
    pub db_range: f64,
    pub steps: usize,
    pub batch: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            flavour: Flavour::Mcl,
            temperature: None,
            queue_size: None,
            template_pad_bins: 1,
            ema: false,
            ema_momentum: 0.99,
            embed_dim: 64,
            proj_hidden: 128,
            pooling: Pooling::Flatten,
            arch: BackboneArch::default(),
            mirror_vision_init: false,
            db_range: 8.0,
            steps: 300,
            batch: 8,
            optimizer: OptimizerConfig::Adam { lr: 1e-3 },
            seed: 0,
        }
    }
}

impl SslConfig {
    pub fn tau(&self) -> f64 {
        self.temperature.unwrap_or(match self.flavour {
            Flavour::Scl => 0.1,
            _ => 0.07,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau() > 0.0) {
            return Err(Error::config("ssl.temperature", "must be positive"));
        }
        if self.batch < 2 {
            return Err(Error::config("ssl.batch", "contrastive batches need at least 2 samples"));
        }
        if let Some(q) = self.queue_size {
            if q != self.batch {
                return Err(Error::config("ssl.queue_size", format!("must equal batch ({}), got {q}", self.batch)));
            }
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(Error::config("ssl.ema_momentum", "must lie in [0, 1)"));
        }
        if self.ema && self.flavour == Flavour::Scl {
            return Err(Error::config("ssl.ema", "momentum keys apply to projector flavours only"));
        }
        if self.embed_dim == 0 || self.proj_hidden == 0 {
            return Err(Error::config("ssl.embed_dim", "projector sizes must be positive"));
        }
        if !(self.db_range > 0.0) {
            return Err(Error::config("ssl.db_range", "must be positive"));
        }
        if !(self.optimizer.lr() > 0.0) {
            return Err(Error::config("ssl.optimizer.lr", "must be positive"));
        }
        self.arch.validate()
    }

    pub fn new_model(&self, input_dims: (usize, usize)) -> Result<SslModel> {
        let proj = (self.flavour != Flavour::Scl).then_some((self.proj_hidden, self.embed_dim));
        SslModel::init(&self.arch, input_dims, self.pooling, proj, self.mirror_vision_init, self.seed)
    }
}

/// Network input planes for one pair.
pub fn radio_input(pair: &RadioVisualPair, db_range: f64) -> Vec<f64> {
    pair.heatmap.to_db_unit(db_range)
}

pub fn vision_input(pair: &RadioVisualPair, masked: bool) -> Result<Vec<f64>> {
    Ok(if masked { pair.image.masked(&pair.mask)?.data } else { pair.image.data.clone() })
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: SslModel,
    pub losses: Vec<f64>,
}

struct Prepared {
    radio: Vec<f64>,
    vision: Vec<f64>,
    window: (std::ops::Range<usize>, std::ops::Range<usize>),
}

fn prepare(cfg: &SslConfig, model: &SslModel, pair: &RadioVisualPair) -> Result<Prepared> {
    let (_, h, w) = model.feature_dims();
    let dims = (pair.image.height, pair.image.width);
    if dims != model.input_dims || (pair.heatmap.rows, pair.heatmap.cols) != model.input_dims {
        return Err(Error::shape(
            "train_backbone",
            format!("pair {} has heatmap {}x{} / image {dims:?}, model expects {:?}", pair.id, pair.heatmap.rows, pair.heatmap.cols, model.input_dims),
        ));
    }
    let bbox = pair.mask.bounding_box().ok_or(Error::Empty("mask"))?;
    Ok(Prepared {
        radio: radio_input(pair, cfg.db_range),
        vision: vision_input(pair, cfg.flavour.masks_vision())?,
        window: template_window(&bbox, 0, cfg.template_pad_bins, dims, (h, w))?,
    })
}

/// In-graph `B x B` attention-score matrix `S[i][j] = S(r_i, v_j)`.
pub(crate) fn scl_scores(g: &mut Graph, fr: Var, fv: Var, windows: &[&(std::ops::Range<usize>, std::ops::Range<usize>)]) -> Result<Var> {
    let b = windows.len();
    let c = g.shape(fv)[1];
    let frn = g.normalize_l2(fr, 1)?;
    let radios: Vec<Var> = (0..b).map(|i| g.index(frn, i)).collect::<Result<_>>()?;
    let mut templates = Vec::with_capacity(b);
    for (j, (rows, cols)) in windows.iter().enumerate() {
        let fj = g.index(fv, j)?;
        let t = g.crop(fj, rows.clone(), cols.clone())?;
        let n = c * rows.len() * cols.len();
        let flat = g.reshape(t, &[1, n])?;
        let flat = g.normalize_l2(flat, 1)?;
        templates.push(g.reshape(flat, &[c, rows.len(), cols.len()])?);
    }
    let mut scores = Vec::with_capacity(b * b);
    for &r in &radios {
        for &t in &templates {
            let m = g.correlate2d_same(r, t)?;
            let n = g.value(m).numel();
            let m = g.reshape(m, &[n])?;
            scores.push(g.max_last(m)?);
        }
    }
    let s = g.stack(&scores)?;
    g.reshape(s, &[b, b])
}

fn bidirectional_ce(g: &mut Graph, logits: Var, logits_t: Var, b: usize) -> Result<Var> {
    let targets: Vec<usize> = (0..b).collect();
    let l1 = g.cross_entropy_rows(logits, &targets)?;
    let l2 = g.cross_entropy_rows(logits_t, &targets)?;
    let s = g.add(l1, l2)?;
    Ok(g.scale(s, 0.5))
}

fn batch_loss(
    cfg: &SslConfig,
    model: &SslModel,
    momentum: Option<&SslModel>,
    g: &mut Graph,
    bound: &Bound,
    items: &[&Prepared],
) -> Result<Var> {
    let b = items.len();
    let radio: Vec<&[f64]> = items.iter().map(|p| p.radio.as_slice()).collect();
    let vision: Vec<&[f64]> = items.iter().map(|p| p.vision.as_slice()).collect();
    let xr = g.constant(model.input(Branch::Radio, &radio)?);
    let xv = g.constant(model.input(Branch::Vision, &vision)?);
    let fr = model.encode(g, bound, Branch::Radio, xr)?;
    let fv = model.encode(g, bound, Branch::Vision, xv)?;
    let inv_tau = 1.0 / cfg.tau();
    match cfg.flavour {
        Flavour::Scl => {
            let windows: Vec<_> = items.iter().map(|p| &p.window).collect();
            let s = scl_scores(g, fr, fv, &windows)?;
            let logits = g.scale(s, inv_tau);
            let lt = g.transpose(logits)?;
            bidirectional_ce(g, logits, lt, b)
        }
        Flavour::Cl | Flavour::Mcl => {
            let qr = model.project(g, bound, Branch::Radio, fr)?;
            let qv = model.project(g, bound, Branch::Vision, fv)?;
            let (kr, kv) = match momentum {
                Some(m) => {
                    let (_, mb) = m.bind(g, false);
                    let fr_k = m.encode(g, &mb, Branch::Radio, xr)?;
                    let fv_k = m.encode(g, &mb, Branch::Vision, xv)?;
                    (m.project(g, &mb, Branch::Radio, fr_k)?, m.project(g, &mb, Branch::Vision, fv_k)?)
                }
                None => (qr, qv),
            };
            let kvt = g.transpose(kv)?;
            let krt = g.transpose(kr)?;
            let l_rv = g.matmul(qr, kvt)?;
            let l_rv = g.scale(l_rv, inv_tau);
            let l_vr = g.matmul(qv, krt)?;
            let l_vr = g.scale(l_vr, inv_tau);
            bidirectional_ce(g, l_rv, l_vr, b)
        }
    }
}

/// Loss of one batch and its gradient for every entry of `model.params`, in
/// store order. Momentum keys are not used here.
pub fn batch_loss_grads(cfg: &SslConfig, model: &SslModel, pairs: &[&RadioVisualPair]) -> Result<(f64, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let prepared: Vec<Prepared> = pairs.iter().map(|p| prepare(cfg, model, p)).collect::<Result<_>>()?;
    let items: Vec<&Prepared> = prepared.iter().collect();
    let mut g = Graph::new();
    let (vars, bound) = model.bind(&mut g, true);
    let loss = batch_loss(cfg, model, None, &mut g, &bound, &items)?;
    let value = g.value(loss).item();
    g.backward(loss)?;
    Ok((value, model.params.grads(&g, &vars)))
}

/// Trains both backbones (and projectors) with in-batch negatives.
/// `train_ids` index into `pairs` by `pair.id`.
pub fn train_backbone(cfg: &SslConfig, pairs: &[RadioVisualPair], train_ids: &[u64]) -> Result<TrainOutput> {
    cfg.validate()?;
    let first = pairs.first().ok_or(Error::Empty("training pairs"))?;
    let mut model = cfg.new_model((first.heatmap.rows, first.heatmap.cols))?;
    let by_id: HashMap<u64, &RadioVisualPair> = pairs.iter().map(|p| (p.id, p)).collect();
    let mut prepared = HashMap::with_capacity(train_ids.len());
    for id in train_ids {
        let p = by_id.get(id).ok_or_else(|| Error::Consistency(format!("train id {id} not in dataset")))?;
        prepared.insert(*id, prepare(cfg, &model, p)?);
    }
    let mut momentum = cfg.ema.then(|| model.clone());
    let mut opt = cfg.optimizer.build(&model.params);
    let per_epoch = train_ids.len() / cfg.batch;
    let mut epoch_batches = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if per_epoch == 0 || step % per_epoch == 0 {
            let epoch = (step / per_epoch.max(1)) as u64;
            epoch_batches = batches(train_ids, cfg.batch, cfg.seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ epoch)?;
        }
        let ids = &epoch_batches[step % per_epoch];
        let items: Vec<&Prepared> = ids.iter().map(|id| &prepared[id]).collect();
        let mut g = Graph::new();
        let (vars, bound) = model.bind(&mut g, true);
        let loss = batch_loss(cfg, &model, momentum.as_ref(), &mut g, &bound, &items)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{} loss diverged at step {step}", cfg.flavour.name())));
        }
        g.backward(loss)?;
        let grads = model.params.grads(&g, &vars);
        opt.step(&mut model.params, &grads)?;
        if let Some(m) = momentum.as_mut() {
            ema_update(&mut m.params, &model.params, cfg.ema_momentum)?;
        }
        losses.push(value);
    }
    Ok(TrainOutput { model, losses })
}

/// Writes the loss curve as `step,loss`.
pub fn write_loss_curve(path: &std::path::Path, losses: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
