use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Which input a backbone branch encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Radio,
    Vision,
}

impl Branch {
    pub fn prefix(self) -> &'static str {
        match self {
            Branch::Radio => "radio",
            Branch::Vision => "vision",
        }
    }

    pub fn in_channels(self) -> usize {
        match self {
            Branch::Radio => 1,
            Branch::Vision => 3,
        }
    }
}

/// How a projector collapses the `C x h x w` feature map before its MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Keep every bin: the MLP sees the flattened `C*h*w` vector.
    Flatten,
    /// Mean over bins: the MLP sees a `C` vector.
    GlobalAverage,
}

/// Convolutional stack shared by both branches: `3x3 conv -> ReLU -> avg-pool`
/// for every stage but the last, which is a plain linear conv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneArch {
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    /// Append normalized row/column coordinate planes to each input.
    pub coord_channels: bool,
    /// One set of conv weights for both branches; radio planes are replicated
    /// to the vision channel count.
    pub shared: bool,
}

impl Default for BackboneArch {
    fn default() -> Self {
        Self { channels: vec![8, 16, 32], kernel: 3, pool: 2, coord_channels: false, shared: true }
    }
}

impl BackboneArch {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config("ssl.arch.channels", "need at least one stage, all positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("ssl.arch.kernel", "must be odd"));
        }
        if self.pool == 0 {
            return Err(Error::config("ssl.arch.pool", "must be positive"));
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        *self.channels.last().expect("validated")
    }

    /// `(C, h, w)` for an `H x W` input.
    pub fn feature_dims(&self, input: (usize, usize)) -> (usize, usize, usize) {
        let f = self.pool.pow(self.channels.len() as u32 - 1);
        (self.feature_channels(), input.0 / f, input.1 / f)
    }

    fn input_channels(&self, branch: Branch) -> usize {
        let base = if self.shared { Branch::Vision.in_channels() } else { branch.in_channels() };
        base + if self.coord_channels { 2 } else { 0 }
    }

    fn conv_prefix(&self, branch: Branch) -> &'static str {
        if self.shared {
            "backbone"
        } else {
            branch.prefix()
        }
    }
}

/// Backbones for both branches plus optional projector heads.
#[derive(Debug, Clone, PartialEq)]
pub struct SslModel {
    pub arch: BackboneArch,
    pub input_dims: (usize, usize),
    pub pooling: Pooling,
    pub params: ParamStore,
}

/// Graph handles of one bound model.
pub struct Bound {
    convs: [Vec<(Var, Var)>; 2],
    projs: [Option<[Var; 4]>; 2],
}

fn he(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

impl SslModel {
    /// Fresh He-initialised model. `projector` is `Some((hidden, out))` for CL/MCL.
    /// With `mirror_vision` the vision convs start as copies of the radio convs
    /// (the first layer spread evenly over the colour planes).
    pub fn init(
        arch: &BackboneArch,
        input_dims: (usize, usize),
        pooling: Pooling,
        projector: Option<(usize, usize)>,
        mirror_vision: bool,
        seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        let (c, h, w) = arch.feature_dims(input_dims);
        if h == 0 || w == 0 {
            return Err(Error::config("ssl.arch", format!("input {input_dims:?} too small for {} stages", arch.channels.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let k = arch.kernel;
        let branches: &[Branch] = if arch.shared { &[Branch::Radio] } else { &[Branch::Radio, Branch::Vision] };
        for &branch in branches {
            let mut cin = arch.input_channels(branch);
            for (i, &cout) in arch.channels.iter().enumerate() {
                let name = format!("{}.conv{i}", arch.conv_prefix(branch));
                let wt = if mirror_vision && branch == Branch::Vision {
                    mirror_weights(params.get(&format!("radio.conv{i}.w")).expect("radio first"), cin, arch)
                } else {
                    he(&[cout, cin, k, k], cin * k * k, &mut rng)
                };
                params.insert(format!("{name}.w"), wt);
                params.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
                cin = cout;
            }
        }
        if let Some((hidden, out)) = projector {
            let din = match pooling {
                Pooling::Flatten => c * h * w,
                Pooling::GlobalAverage => c,
            };
            for branch in [Branch::Radio, Branch::Vision] {
                let p = format!("proj_{}", branch.prefix());
                params.insert(format!("{p}.l1.w"), he(&[din, hidden], din, &mut rng));
                params.insert(format!("{p}.l1.b"), Tensor::zeros(&[hidden]));
                params.insert(format!("{p}.l2.w"), he(&[hidden, out], hidden, &mut rng));
                params.insert(format!("{p}.l2.b"), Tensor::zeros(&[out]));
            }
        }
        Ok(Self { arch: arch.clone(), input_dims, pooling, params })
    }

    pub fn has_projector(&self) -> bool {
        self.params.get("proj_radio.l1.w").is_some()
    }

    pub fn feature_dims(&self) -> (usize, usize, usize) {
        self.arch.feature_dims(self.input_dims)
    }

    /// Binds the parameters onto `g`; `trainable` selects param vs constant leaves.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> (Vec<Var>, Bound) {
        let vars = if trainable { self.params.bind(g) } else { self.params.bind_const(g) };
        let pos = |name: String| -> Var {
            let i = self.params.names().position(|n| n == name).expect("layout fixed at init");
            vars[i]
        };
        let convs = [Branch::Radio, Branch::Vision].map(|b| {
            (0..self.arch.channels.len())
                .map(|i| {
                    let p = self.arch.conv_prefix(b);
                    (pos(format!("{p}.conv{i}.w")), pos(format!("{p}.conv{i}.b")))
                })
                .collect()
        });
        let projs = [Branch::Radio, Branch::Vision].map(|b| {
            self.has_projector().then(|| {
                let p = format!("proj_{}", b.prefix());
                [pos(format!("{p}.l1.w")), pos(format!("{p}.l1.b")), pos(format!("{p}.l2.w")), pos(format!("{p}.l2.b"))]
            })
        });
        (vars, Bound { convs, projs })
    }

    /// Assembles a `[B, Cin, H, W]` input from per-sample planes (each `in_channels * H * W`).
    pub fn input(&self, branch: Branch, samples: &[&[f64]]) -> Result<Tensor> {
        let (h, w) = self.input_dims;
        let plane = h * w;
        let cin = branch.in_channels();
        let ctot = self.arch.input_channels(branch);
        let mut data = Vec::with_capacity(samples.len() * ctot * plane);
        for s in samples {
            if s.len() != cin * plane {
                return Err(Error::shape(
                    "ssl input",
                    format!("{} sample of {} values, expected {cin}x{h}x{w}", branch.prefix(), s.len()),
                ));
            }
            let copies = if self.arch.shared { Branch::Vision.in_channels() / cin } else { 1 };
            for _ in 0..copies {
                data.extend_from_slice(s);
            }
            if self.arch.coord_channels {
                data.extend((0..plane).map(|i| (i / w) as f64 / h as f64 - 0.5));
                data.extend((0..plane).map(|i| (i % w) as f64 / w as f64 - 0.5));
            }
        }
        Tensor::new(vec![samples.len(), ctot, h, w], data)
    }

    /// Spatial features `[B, C, h, w]` of an input batch.
    pub fn encode(&self, g: &mut Graph, bound: &Bound, branch: Branch, x: Var) -> Result<Var> {
        let layers = &bound.convs[branch as usize];
        let pad = self.arch.kernel / 2;
        let mut y = x;
        for (i, &(w, b)) in layers.iter().enumerate() {
            y = g.conv2d(y, w, Some(b), 1, pad)?;
            if i + 1 < layers.len() {
                y = g.relu(y);
                y = g.avg_pool2d(y, self.arch.pool)?;
            }
        }
        Ok(y)
    }

    /// Unit-norm embeddings `[B, N]` from features `[B, C, h, w]`.
    pub fn project(&self, g: &mut Graph, bound: &Bound, branch: Branch, f: Var) -> Result<Var> {
        let [w1, b1, w2, b2] = bound.projs[branch as usize].ok_or(Error::config("ssl.flavour", "model has no projector"))?;
        let s = g.shape(f).to_vec();
        let z = match self.pooling {
            Pooling::Flatten => g.reshape(f, &[s[0], s[1] * s[2] * s[3]])?,
            Pooling::GlobalAverage => {
                let r = g.reshape(f, &[s[0], s[1], s[2] * s[3]])?;
                g.mean_last(r)?
            }
        };
        let h = g.matmul(z, w1)?;
        let h = g.bias_add(h, b1)?;
        let h = g.relu(h);
        let o = g.matmul(h, w2)?;
        let o = g.bias_add(o, b2)?;
        g.normalize_l2(o, 1)
    }

    /// Inference-only features for one sample.
    pub fn features(&self, branch: Branch, sample: &[f64]) -> Result<FeatureMap> {
        let mut g = Graph::new();
        let (_, bound) = self.bind(&mut g, false);
        let x = g.constant(self.input(branch, &[sample])?);
        let f = self.encode(&mut g, &bound, branch, x)?;
        let (c, h, w) = self.feature_dims();
        Ok(FeatureMap { c, h, w, data: g.value(f).data.clone() })
    }

    /// Inference-only embedding for one sample.
    pub fn embed(&self, branch: Branch, sample: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let (_, bound) = self.bind(&mut g, false);
        let x = g.constant(self.input(branch, &[sample])?);
        let f = self.encode(&mut g, &bound, branch, x)?;
        let q = self.project(&mut g, &bound, branch, f)?;
        Ok(g.value(q).data.clone())
    }
}

fn mirror_weights(radio: &Tensor, cin: usize, arch: &BackboneArch) -> Tensor {
    let (cout, rin, k) = (radio.shape[0], radio.shape[1], radio.shape[2]);
    if rin == cin {
        return radio.clone();
    }
    let extra = if arch.coord_channels { 2 } else { 0 };
    let (r_img, v_img) = (rin - extra, cin - extra);
    let mut t = Tensor::zeros(&[cout, cin, k, k]);
    for o in 0..cout {
        for ci in 0..cin {
            let (src, scale) = if ci < v_img { (0, 1.0 / v_img as f64) } else { (r_img + ci - v_img, 1.0) };
            for j in 0..k * k {
                t.data[(o * cin + ci) * k * k + j] = radio.data[(o * rin + src) * k * k + j] * scale * r_img as f64;
            }
        }
    }
    t
}

/// One sample's spatial encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.h + row) * self.w + col]
    }
}
