//! The tiny pre-training model, the complete model shared by the weekly
//! natural-domain pre-training and the daily ad fine-tune, the parameter
//! transfer rule between them, and checkpoint files.

mod checkpoint;
mod complete;
mod history;
mod tiny;
mod transfer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_KIND,
    CHECKPOINT_VERSION,
};
pub use complete::{complete_forward, CompleteConfig, CompleteModel, HistorySource};
pub use history::{HistoryTable, Histories};
pub use tiny::{tiny_forward, TinyConfig, TinyModel};
pub use transfer::{transfer_parameters, TransferVariant};

use crate::datagen::ImpressionSample;
use crate::error::Result;
use crate::nncore::{bce_with_logit, AdamState, DenseMatrix, EmbeddingTable};

/// What a named tensor holds; drives transfer and checkpoint flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Embedding,
    Attention,
    MlpWeight,
    MlpBias,
    BnAffine,
    BnRunning,
}

impl TensorKind {
    pub fn is_bn(self) -> bool {
        matches!(self, TensorKind::BnAffine | TensorKind::BnRunning)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Mean BCE over a batch and the per-row logit gradient of that mean.
pub(crate) fn batch_bce(logits: &[f64], samples: &[&ImpressionSample]) -> Result<(f64, Vec<f64>)> {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, s) in logits.iter().zip(samples) {
        let out = bce_with_logit(s.label as f64, *z)?;
        loss += out.loss;
        grads.push(out.dlogit / n);
    }
    Ok((loss / n, grads))
}

/// Writes the embeddings of `fields[t]` for every sample into columns
/// `t*d..(t+1)*d` of `x`.
pub(crate) fn gather_embeddings(
    tables: &[EmbeddingTable],
    rows: &[Vec<usize>],
    x: &mut DenseMatrix,
) {
    let d = tables.first().map_or(0, EmbeddingTable::dim);
    for (t, table) in tables.iter().enumerate() {
        for (i, &r) in rows[t].iter().enumerate() {
            x.row_mut(i)[t * d..(t + 1) * d].copy_from_slice(table.row(r));
        }
    }
}

/// Accumulates the input gradient of each field's columns per distinct row
/// and applies one lazy Adam update per touched row.
pub(crate) fn scatter_embedding_grads(
    tables: &mut [EmbeddingTable],
    names: &[String],
    rows: &[Vec<usize>],
    dx: &DenseMatrix,
    adam: &mut AdamState,
) -> Result<()> {
    let d = tables.first().map_or(0, EmbeddingTable::dim);
    let mut touched = Vec::new();
    let mut acc = Vec::new();
    for (t, table) in tables.iter_mut().enumerate() {
        let mut order: Vec<(usize, usize)> = rows[t].iter().enumerate().map(|(i, &r)| (r, i)).collect();
        order.sort_unstable();
        touched.clear();
        acc.clear();
        for &(row, i) in &order {
            if touched.last() != Some(&row) {
                touched.push(row);
                acc.extend(std::iter::repeat_n(0.0, d));
            }
            let base = acc.len() - d;
            for (a, v) in acc[base..].iter_mut().zip(&dx.row(i)[t * d..(t + 1) * d]) {
                *a += v;
            }
        }
        adam.update_table_rows(&names[t], table, &touched, &acc)?;
    }
    Ok(())
}
