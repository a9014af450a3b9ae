//! Cross-modal contrastive learning between radio heatmaps and camera images.
//!
//! Three objectives share one pair of convolutional backbones:
//! [`Flavour::Cl`] contrasts projected embeddings of the full image,
//! [`Flavour::Mcl`] does the same with the image masked to the target, and
//! [`Flavour::Scl`] contrasts attention scores directly without projectors.

mod attention;
mod loss;
mod model;
mod subspace;
mod train;

pub use attention::{
    attention_map, attention_score, crop_template, normalize_bins, rescale_index, template_window, AttentionMap,
};
pub use loss::{loss_contrastive, loss_contrastive_batch, loss_scl};
pub use model::{BackboneArch, Branch, FeatureMap, Pooling, SslModel};
pub use subspace::{covariance_spectrum, feature_spectra};
pub use train::{batch_loss_grads, radio_input, train_backbone, vision_input, write_loss_curve, Flavour, SslConfig, TrainOutput};
