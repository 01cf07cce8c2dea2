//! The x-vector network family: TDNN and multi-scale dilated frame layers,
//! statistics / self-attentive / i-vector-attentive / Baum-Welch-attentive
//! pooling, utterance-level layers, softmax training and embedding
//! extraction.

mod config;
mod network;
mod train;

pub use config::{EmbedderConfig, LayerKind, LayerSpec, PoolingSpec, PoolingVariant, Preset, Scale};
pub use network::{
    attention_scores_ba, attention_scores_ia, attention_scores_sa, build_model, BaParams, EmbedderModel, SideInput,
};
pub use train::{batch_loss, train_embedder, TrainConfig, TrainingReport, TrainingUtterance};
