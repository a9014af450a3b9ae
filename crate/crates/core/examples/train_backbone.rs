//! Train the masked cross-modal backbone on a small synthetic set and print
//! the loss curve. Takes about a minute in release mode.

use rvl::dataset::{make_splits, synth_dataset, SplitSpec, SynthConfig};
use rvl::ssl::{train_backbone, Flavour, SslConfig};

fn main() -> rvl::Result<()> {
    let flavour = match std::env::args().nth(1).as_deref() {
        Some("cl") => Flavour::Cl,
        Some("scl") => Flavour::Scl,
        _ => Flavour::Mcl,
    };
    let pairs = synth_dataset(&SynthConfig::default(), 160, 1)?;
    let ids: Vec<u64> = pairs.iter().map(|p| p.id).collect();
    let (train, _) = make_splits(&ids, SplitSpec::default())?;
    let cfg = SslConfig { flavour, steps: 150, ..SslConfig::default() };
    let out = train_backbone(&cfg, &pairs, &train)?;
    for (i, chunk) in out.losses.chunks(15).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("steps {:>3}-{:<3} {} loss {mean:.3}", i * 15, i * 15 + chunk.len() - 1, flavour.name());
    }
    println!("{} parameters, feature map {:?}", out.model.params.num_scalars(), out.model.feature_dims());
    Ok(())
}
