//! Small deterministic neural-network kernel: dense batches, MLP with
//! optional batch norm, single-head self-attention over three slots, mean
//! pooling, sigmoid cross-entropy and Adam.

mod adam;
mod attention;
mod batchnorm;
mod embedding;
mod loss;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use attention::{
    mean_pool, mean_pool_backward, pooled_attention_batch, pooled_attention_batch_backward,
    self_attention, self_attention_backward, self_attention_cached, AttentionCache,
    AttentionGrads, AttentionParams, BatchAttentionCache, HISTORY_SLOTS,
};
pub use batchnorm::BatchNormState;
pub use embedding::EmbeddingTable;
pub use loss::{bce_loss, bce_with_logit, sigmoid, BceOutput, PROB_CLAMP};
pub use matrix::DenseMatrix;
pub use mlp::{
    mlp_backward, mlp_forward, mlp_infer, Activation, BnGrads, Layer, LayerGrads, MlpCache,
    MlpGrads, MlpNorms, MlpParams,
};


use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub const INIT_RANGE: f64 = 0.05;

/// Fills with uniform(-0.05, 0.05).
pub fn uniform_init<R: Rng + ?Sized>(values: &mut [f64], rng: &mut R) {
    for v in values {
        *v = rng.random_range(-INIT_RANGE..INIT_RANGE);
    }
}
