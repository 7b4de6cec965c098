//! Hypergraph propagation, attention trajectory encoding and next-POI scoring.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{
    decode_tensors, encode_tensors, load_checkpoint, round_to_storage, save_checkpoint, FORMAT_VERSION, MAGIC,
};
pub use forward::{
    encode_trajectory, propagate, score, score_instances, task_loss, task_loss_and_grad, NodeEmbeddings,
};
pub use params::{LayerParams, ModelConfig, ModelParams};

#[cfg(test)]
mod tests;
