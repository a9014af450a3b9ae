//! Reverse-mode differentiation over dense 64-bit arrays.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! then sweeps the tape in reverse. Models keep their weights in a
//! [`ParamStore`], bind them onto a fresh graph each step, and hand the
//! collected gradients to an [`Optimizer`].

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{correlate_same, Graph, Var};
pub use optim::{Adam, Optimizer, OptimizerConfig, Sgd};
pub use params::ParamStore;
pub use tensor::Tensor;

/// Elementwise `m*avg + (1-m)*cur` over matching stores.
pub fn ema_update(avg: &mut ParamStore, cur: &ParamStore, m: f64) -> crate::Result<()> {
    if avg.len() != cur.len() {
        return Err(crate::Error::shape("ema_update", format!("{} vs {} params", avg.len(), cur.len())));
    }
    for (a, c) in avg.tensors_mut().zip(cur.tensors()) {
        if a.shape != c.shape {
            return Err(crate::Error::shape("ema_update", format!("{:?} vs {:?}", a.shape, c.shape)));
        }
        for (x, y) in a.data.iter_mut().zip(&c.data) {
            *x = m * *x + (1.0 - m) * y;
        }
    }
    Ok(())
}

/// Central finite-difference check of `f` at `params`; returns the worst
/// relative error `|a-n| / max(|a|+|n|, floor)` over all coordinates.
#[doc(hidden)]
pub fn max_grad_error(params: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Var, h: f64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars);
    g.backward(root).expect("scalar root");
    let analytic: Vec<Vec<f64>> =
        vars.iter().zip(params).map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.numel()])).collect();
    let eval = |ps: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|t| g.constant(t.clone())).collect();
        let r = f(&mut g, &vars);
        g.value(r).item()
    };
    let mut worst = 0.0f64;
    let mut ps = params.to_vec();
    for p in 0..ps.len() {
        for i in 0..ps[p].numel() {
            let x0 = ps[p].data[i];
            ps[p].data[i] = x0 + h;
            let up = eval(&ps);
            ps[p].data[i] = x0 - h;
            let dn = eval(&ps);
            ps[p].data[i] = x0;
            let num = (up - dn) / (2.0 * h);
            let a = analytic[p][i];
            worst = worst.max((a - num).abs() / (a.abs() + num.abs()).max(1e-3));
        }
    }
    worst
}
