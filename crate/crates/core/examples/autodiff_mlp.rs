//! Fit a two-layer perceptron to `y = sin(3x)` with the reverse-mode graph and Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvl::autodiff::{Graph, OptimizerConfig, ParamStore, Tensor};

fn main() -> rvl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 64;
    let hidden = 32;
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
    let x = Tensor::new(vec![n, 1], xs)?;
    let y = Tensor::new(vec![n, 1], ys)?;

    let mut params = ParamStore::new();
    params.insert("w1", Tensor::randn(&[1, hidden], 1.0, &mut rng));
    params.insert("b1", Tensor::zeros(&[hidden]));
    params.insert("w2", Tensor::randn(&[hidden, 1], (1.0 / hidden as f64).sqrt(), &mut rng));
    params.insert("b2", Tensor::zeros(&[1]));
    let mut opt = OptimizerConfig::Adam { lr: 0.02 }.build(&params);

    for step in 0..=600 {
        let mut g = Graph::new();
        let v = params.bind(&mut g);
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let h = g.matmul(xv, v[0])?;
        let h = g.bias_add(h, v[1])?;
        let h = g.tanh(h);
        let o = g.matmul(h, v[2])?;
        let o = g.bias_add(o, v[3])?;
        let e = g.sub(o, yv)?;
        let sq = g.mul(e, e)?;
        let loss = g.mean(sq);
        if step % 100 == 0 {
            println!("step {step:>3}  mse {:.5}", g.value(loss).item());
        }
        g.backward(loss)?;
        let grads = params.grads(&g, &v);
        opt.step(&mut params, &grads)?;
    }
    Ok(())
}
