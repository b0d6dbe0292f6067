use super::{CompleteModel, TensorKind};
use crate::error::{Error, Result};

/// Which parts of a pre-trained model seed the fine-tuned one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransferVariant {
    /// Embeddings, attention and MLP weights; batch norm starts fresh.
    #[default]
    All,
    EmbeddingsOnly,
    MlpWoBn,
    /// Everything including batch-norm affine and running statistics.
    AllWithBn,
}

impl TransferVariant {
    pub const ALL_VARIANTS: [TransferVariant; 4] = [
        TransferVariant::All,
        TransferVariant::EmbeddingsOnly,
        TransferVariant::MlpWoBn,
        TransferVariant::AllWithBn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransferVariant::All => "all",
            TransferVariant::EmbeddingsOnly => "embeddings_only",
            TransferVariant::MlpWoBn => "mlp_wo_bn",
            TransferVariant::AllWithBn => "all_with_bn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL_VARIANTS.into_iter().find(|v| v.as_str() == s)
    }

    pub fn copies(self, kind: TensorKind) -> bool {
        use TensorKind::*;
        match self {
            TransferVariant::All => !kind.is_bn(),
            TransferVariant::EmbeddingsOnly => kind == Embedding,
            TransferVariant::MlpWoBn => matches!(kind, MlpWeight | MlpBias),
            TransferVariant::AllWithBn => true,
        }
    }
}

/// Builds the fine-tune model from `source`, taking uncopied parameters from
/// the freshly initialized `target`. Batch norm is reset unless the variant
/// carries it over; the optimizer always restarts.
pub fn transfer_parameters(
    source: &CompleteModel,
    mut target: CompleteModel,
    variant: TransferVariant,
) -> Result<CompleteModel> {
    let src = source.tensors();
    let dst_layout = target.layout();
    if src.len() != dst_layout.len() {
        let i = src.len().min(dst_layout.len());
        let param = src
            .get(i)
            .map(|t| t.name.clone())
            .or_else(|| dst_layout.get(i).map(|(n, _)| n.clone()))
            .unwrap_or_default();
        return Err(Error::Transfer { param });
    }
    for (s, (name, shape)) in src.iter().zip(&dst_layout) {
        if &s.name != name || &s.shape != shape {
            return Err(Error::Transfer { param: s.name.clone() });
        }
    }
    if variant != TransferVariant::AllWithBn {
        target.norms.reset();
    }
    for (s, (_, kind, data)) in src.iter().zip(target.tensors_mut()) {
        if variant.copies(kind) {
            data.copy_from_slice(&s.data);
        }
    }
    target.reset_optimizer();
    Ok(target)
}
