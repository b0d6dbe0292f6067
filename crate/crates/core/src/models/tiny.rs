use rand::Rng;

use super::{batch_bce, gather_embeddings, scatter_embedding_grads};
use crate::datagen::{ImpressionSample, FIELD_NAMES, KEY_FIELDS};
use crate::embstore::{EmbeddingSnapshot, Side};
use crate::error::{Error, Result};
use crate::nncore::{
    mlp_backward, mlp_forward, mlp_infer, sigmoid, AdamConfig, AdamState, DenseMatrix,
    EmbeddingTable, MlpParams, Mode,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TinyConfig {
    pub vocabs: [usize; KEY_FIELDS],
    pub dim: usize,
    pub hidden: usize,
    pub learning_rate: f64,
}

/// Key-feature embeddings feeding a one-hidden-layer MLP; no batch norm.
#[derive(Debug, Clone)]
pub struct TinyModel {
    pub config: TinyConfig,
    pub tables: Vec<EmbeddingTable>,
    pub mlp: MlpParams,
    pub adam: AdamState,
    names: Vec<String>,
}

impl TinyModel {
    pub fn new<R: Rng + ?Sized>(config: TinyConfig, rng: &mut R) -> Self {
        let tables = config
            .vocabs
            .iter()
            .map(|&v| EmbeddingTable::init(v, config.dim, rng))
            .collect();
        let mlp = MlpParams::init(KEY_FIELDS * config.dim, &[config.hidden], rng);
        let adam = AdamState::new(AdamConfig::with_lr(config.learning_rate));
        let names = FIELD_NAMES[..KEY_FIELDS]
            .iter()
            .map(|n| format!("emb.{n}"))
            .collect();
        Self {
            config,
            tables,
            mlp,
            adam,
            names,
        }
    }

    pub fn input_width(&self) -> usize {
        KEY_FIELDS * self.config.dim
    }

    fn rows(&self, samples: &[&ImpressionSample]) -> Vec<Vec<usize>> {
        (0..KEY_FIELDS)
            .map(|t| {
                samples
                    .iter()
                    .map(|s| self.tables[t].row_index(s.key_fields()[t]))
                    .collect()
            })
            .collect()
    }

    fn input(&self, rows: &[Vec<usize>], n: usize) -> DenseMatrix {
        let mut x = DenseMatrix::zeros(n, self.input_width());
        gather_embeddings(&self.tables, rows, &mut x);
        x
    }

    pub fn predict_batch(&self, samples: &[&ImpressionSample]) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.input(&self.rows(samples), samples.len());
        Ok(mlp_infer(&x, &self.mlp, None)?.into_iter().map(sigmoid).collect())
    }

    /// One Adam step on the mean cross-entropy of `samples`; returns that loss.
    pub fn train_batch(&mut self, samples: &[&ImpressionSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::config("empty training batch"));
        }
        let rows = self.rows(samples);
        let x = self.input(&rows, samples.len());
        let (logits, cache) = mlp_forward(&x, &self.mlp, None, Mode::Train)?;
        let (loss, dlogits) = batch_bce(&logits, samples)?;
        let grads = mlp_backward(&cache, &self.mlp, &dlogits)?;

        self.adam.begin_step();
        for (i, (layer, g)) in self.mlp.layers_mut().iter_mut().zip(&grads.layers).enumerate() {
            self.adam
                .update(&format!("mlp.{i}.weight"), layer.weight.data_mut(), g.weight.data())?;
            self.adam.update(&format!("mlp.{i}.bias"), &mut layer.bias, &g.bias)?;
        }
        scatter_embedding_grads(&mut self.tables, &self.names, &rows, &grads.input, &mut self.adam)?;
        Ok(loss)
    }

    /// Trained (touched) rows of the user or item table as a month snapshot.
    pub fn snapshot(&self, side: Side, month_tag: u32) -> EmbeddingSnapshot {
        let table = match side {
            Side::User => &self.tables[0],
            Side::Item => &self.tables[1],
        };
        let mut snap = EmbeddingSnapshot::new(side, month_tag, self.config.dim);
        for id in 0..table.vocab() {
            if table.is_touched(id) {
                snap.entries
                    .insert(id as u64, table.row(id).iter().map(|&v| v as f32).collect());
            }
        }
        snap
    }
}

/// Click probability from the key fields only.
pub fn tiny_forward(model: &TinyModel, sample: &ImpressionSample) -> Result<f64> {
    Ok(model.predict_batch(&[sample])?[0])
}
