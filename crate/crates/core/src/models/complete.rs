use rand::Rng;

use super::{batch_bce, gather_embeddings, scatter_embedding_grads, Histories, NamedTensor, TensorKind};
use crate::datagen::{ImpressionSample, COMPLETE_FIELDS, FIELD_NAMES};
use crate::embstore::MergedTable;
use crate::error::{Error, Result};
use crate::nncore::{
    mean_pool, mlp_backward, mlp_forward, mlp_infer, pooled_attention_batch,
    pooled_attention_batch_backward, self_attention_cached, sigmoid, AdamConfig, AdamState,
    AttentionGrads, AttentionParams, BatchAttentionCache, BatchNormState, DenseMatrix, EmbeddingTable, MlpNorms, MlpParams, Mode,
    HISTORY_SLOTS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CompleteConfig {
    pub vocabs: [usize; COMPLETE_FIELDS],
    pub dim: usize,
    /// Width of the history embeddings fed through attention.
    pub history_dim: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// One attention block for both sides instead of one per side.
    pub shared_attention: bool,
    pub batch_norm: bool,
}

impl CompleteConfig {
    pub fn input_width(&self) -> usize {
        COMPLETE_FIELDS * self.dim + 2 * self.history_dim
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        format!(
            "vocabs={}\ndim={}\nhistory_dim={}\nhidden={}\nlearning_rate={}\nshared_attention={}\nbatch_norm={}\n",
            join(&self.vocabs),
            self.dim,
            self.history_dim,
            join(&self.hidden),
            self.learning_rate,
            self.shared_attention,
            self.batch_norm
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut vocabs = None;
        let mut dim = None;
        let mut hdim = None;
        let mut hidden = None;
        let mut lr = None;
        let mut shared = None;
        let mut bn = None;
        let list = |v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::config(format!("bad integer `{s}`"))))
                .collect()
        };
        let flag = |v: &str| -> Result<bool> {
            v.parse().map_err(|_| Error::config(format!("bad boolean `{v}`")))
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("malformed model config line `{line}`")))?;
            match k {
                "vocabs" => {
                    let v = list(v)?;
                    vocabs = Some(<[usize; COMPLETE_FIELDS]>::try_from(v).map_err(|v| {
                        Error::config(format!("expected {COMPLETE_FIELDS} vocab sizes, got {}", v.len()))
                    })?);
                }
                "dim" => dim = Some(list(v)?.first().copied().unwrap_or(0)),
                "history_dim" => hdim = Some(list(v)?.first().copied().unwrap_or(0)),
                "hidden" => hidden = Some(list(v)?),
                "learning_rate" => {
                    lr = Some(v.parse().map_err(|_| Error::config(format!("bad learning rate `{v}`")))?)
                }
                "shared_attention" => shared = Some(flag(v)?),
                "batch_norm" => bn = Some(flag(v)?),
                _ => return Err(Error::config(format!("unknown model config key `{k}`"))),
            }
        }
        match (vocabs, dim, hdim, hidden, lr, shared, bn) {
            (
                Some(vocabs),
                Some(dim),
                Some(history_dim),
                Some(hidden),
                Some(learning_rate),
                Some(shared_attention),
                Some(batch_norm),
            ) => {
                Ok(Self {
                    vocabs,
                    dim,
                    history_dim,
                    hidden,
                    learning_rate,
                    shared_attention,
                    batch_norm,
                })
            }
            _ => Err(Error::config("incomplete model config")),
        }
    }
}

/// Where the pooled per-side history vectors come from.
#[derive(Debug, Clone, Copy)]
pub enum HistorySource<'a> {
    /// Raw three-month triples, attended and pooled on the fly.
    Triples(&'a Histories),
    /// Pre-merged serving tables; absent ids pool to zero.
    Merged {
        user: &'a MergedTable,
        item: &'a MergedTable,
    },
}

/// Full-feature model shared by the weekly pre-training and the daily
/// fine-tune. MLP input is the field embeddings followed by the pooled
/// user history and the pooled item history.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteModel {
    pub config: CompleteConfig,
    pub tables: Vec<EmbeddingTable>,
    /// `[user, item]`, or a single shared block.
    pub attention: Vec<AttentionParams>,
    pub mlp: MlpParams,
    pub norms: MlpNorms,
    pub adam: AdamState,
    names: Vec<String>,
}

struct Assembled {
    rows: Vec<Vec<usize>>,
    x: DenseMatrix,
    /// `(side, samples, cache)`: the batch rows whose history triple is non-zero.
    attn: Vec<(usize, Vec<usize>, BatchAttentionCache)>,
}

fn attention_names(shared: bool) -> &'static [&'static str] {
    if shared {
        &["shared"]
    } else {
        &["user", "item"]
    }
}

impl CompleteModel {
    pub fn new<R: Rng + ?Sized>(config: CompleteConfig, rng: &mut R) -> Self {
        let tables = config
            .vocabs
            .iter()
            .map(|&v| EmbeddingTable::init(v, config.dim, rng))
            .collect();
        let attention = attention_names(config.shared_attention)
            .iter()
            .map(|_| AttentionParams::init(config.history_dim, rng))
            .collect();
        let mlp = MlpParams::init(config.input_width(), &config.hidden, rng);
        let norms = if config.batch_norm {
            MlpNorms::fresh_for(&mlp, true)
        } else {
            MlpNorms::none()
        };
        let adam = AdamState::new(AdamConfig::with_lr(config.learning_rate));
        let names = FIELD_NAMES.iter().map(|n| format!("emb.{n}")).collect();
        Self {
            config,
            tables,
            attention,
            mlp,
            norms,
            adam,
            names,
        }
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn attention_for(&self, side: usize) -> &AttentionParams {
        &self.attention[side.min(self.attention.len() - 1)]
    }

    fn assemble(&self, samples: &[&ImpressionSample], source: HistorySource<'_>, keep: bool) -> Result<Assembled> {
        let d = self.config.dim;
        let n = samples.len();
        let rows: Vec<Vec<usize>> = (0..COMPLETE_FIELDS)
            .map(|t| {
                samples
                    .iter()
                    .map(|s| self.tables[t].row_index(s.complete_fields()[t]))
                    .collect()
            })
            .collect();
        let mut x = DenseMatrix::zeros(n, self.config.input_width());
        gather_embeddings(&self.tables, &rows, &mut x);
        let mut attn = Vec::new();
        let h = self.config.history_dim;
        let base = COMPLETE_FIELDS * d;
        match source {
            HistorySource::Triples(hist) => {
                for (side, table) in [&hist.user, &hist.item].into_iter().enumerate() {
                    if !table.has_any() {
                        continue;
                    }
                    if table.dim() != h {
                        return Err(Error::config(format!(
                            "history dim {} does not match model history dim {h}",
                            table.dim()
                        )));
                    }
                    let col = base + side * h;
                    let mut idx = Vec::with_capacity(n);
                    let mut stacked = Vec::with_capacity(n * HISTORY_SLOTS * h);
                    for (i, s) in samples.iter().enumerate() {
                        let id = if side == 0 { s.user_id } else { s.item_id };
                        let triple = table.get(id);
                        // attention over an all-zero triple is exactly zero
                        if triple.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        idx.push(i);
                        stacked.extend_from_slice(triple);
                    }
                    if idx.is_empty() {
                        continue;
                    }
                    let e = DenseMatrix::from_vec(idx.len() * HISTORY_SLOTS, h, stacked)?;
                    let (pooled, cache) = pooled_attention_batch(e, self.attention_for(side))?;
                    for (r, &i) in idx.iter().enumerate() {
                        x.row_mut(i)[col..col + h].copy_from_slice(pooled.row(r));
                    }
                    if keep {
                        attn.push((side, idx, cache));
                    }
                }
            }
            HistorySource::Merged { user, item } => {
                for (side, table) in [user, item].into_iter().enumerate() {
                    if table.dim != h {
                        return Err(Error::config(format!(
                            "merged table dim {} does not match model history dim {h}",
                            table.dim
                        )));
                    }
                    let col = base + side * h;
                    for (i, s) in samples.iter().enumerate() {
                        let id = if side == 0 { s.user_id } else { s.item_id };
                        if let Some(v) = table.get(id as u64) {
                            x.row_mut(i)[col..col + h].copy_from_slice(v);
                        }
                    }
                }
            }
        }
        Ok(Assembled { rows, x, attn })
    }

    fn norms_opt(&self) -> Option<&MlpNorms> {
        (!self.norms.is_empty()).then_some(&self.norms)
    }

    /// Inference-mode click probabilities.
    pub fn predict_batch(&self, samples: &[&ImpressionSample], source: HistorySource<'_>) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let a = self.assemble(samples, source, false)?;
        Ok(mlp_infer(&a.x, &self.mlp, self.norms_opt())?
            .into_iter()
            .map(sigmoid)
            .collect())
    }

    /// One Adam step on the mean cross-entropy of `samples`; returns that loss.
    pub fn train_batch(&mut self, samples: &[&ImpressionSample], histories: &Histories) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::config("empty training batch"));
        }
        let a = self.assemble(samples, HistorySource::Triples(histories), true)?;
        let norms = if self.norms.is_empty() {
            None
        } else {
            Some(&mut self.norms)
        };
        let (logits, cache) = mlp_forward(&a.x, &self.mlp, norms, Mode::Train)?;
        let (loss, dlogits) = batch_bce(&logits, samples)?;
        let grads = mlp_backward(&cache, &self.mlp, &dlogits)?;

        let h = self.config.history_dim;
        let mut attn_grads: Vec<AttentionGrads> =
            self.attention.iter().map(|_| AttentionGrads::zeros(h)).collect();
        let base = COMPLETE_FIELDS * self.config.dim;
        for (side, idx, c) in &a.attn {
            let col = base + side * h;
            let mut dpooled = DenseMatrix::zeros(idx.len(), h);
            for (r, &i) in idx.iter().enumerate() {
                dpooled.row_mut(r).copy_from_slice(&grads.input.row(i)[col..col + h]);
            }
            let slot = (*side).min(self.attention.len() - 1);
            pooled_attention_batch_backward(c, &dpooled, &mut attn_grads[slot])?;
        }

        self.adam.begin_step();
        for (i, (layer, g)) in self.mlp.layers_mut().iter_mut().zip(&grads.layers).enumerate() {
            self.adam
                .update(&format!("mlp.{i}.weight"), layer.weight.data_mut(), g.weight.data())?;
            self.adam.update(&format!("mlp.{i}.bias"), &mut layer.bias, &g.bias)?;
        }
        if let (Some(bn), Some(g)) = (self.norms.input.as_mut(), &grads.input_bn) {
            self.adam.update("bn.input.gamma", &mut bn.gamma, &g.gamma)?;
            self.adam.update("bn.input.beta", &mut bn.beta, &g.beta)?;
        }
        for (i, (bn, g)) in self.norms.hidden.iter_mut().zip(&grads.hidden_bn).enumerate() {
            self.adam.update(&format!("bn.hidden.{i}.gamma"), &mut bn.gamma, &g.gamma)?;
            self.adam.update(&format!("bn.hidden.{i}.beta"), &mut bn.beta, &g.beta)?;
        }
        if !a.attn.is_empty() {
            let names = attention_names(self.config.shared_attention);
            for ((p, g), side) in self.attention.iter_mut().zip(&attn_grads).zip(names) {
                self.adam.update(&format!("attn.{side}.wq"), p.wq.data_mut(), g.wq.data())?;
                self.adam.update(&format!("attn.{side}.wk"), p.wk.data_mut(), g.wk.data())?;
                self.adam.update(&format!("attn.{side}.wv"), p.wv.data_mut(), g.wv.data())?;
            }
        }
        scatter_embedding_grads(&mut self.tables, &self.names, &a.rows, &grads.input, &mut self.adam)?;
        Ok(loss)
    }

    /// Every parameter and BN statistic in a fixed order.
    pub fn tensors(&self) -> Vec<NamedTensor> {
        let d = self.config.dim;
        let mut out = Vec::new();
        for (name, t) in self.names.iter().zip(&self.tables) {
            out.push(NamedTensor {
                name: name.clone(),
                kind: TensorKind::Embedding,
                shape: vec![t.n_rows(), d],
                data: t.data().to_vec(),
            });
        }
        for (p, side) in self.attention.iter().zip(attention_names(self.config.shared_attention)) {
            for (w, m) in [("wq", &p.wq), ("wk", &p.wk), ("wv", &p.wv)] {
                out.push(NamedTensor {
                    name: format!("attn.{side}.{w}"),
                    kind: TensorKind::Attention,
                    shape: vec![p.dim(), p.dim()],
                    data: m.data().to_vec(),
                });
            }
        }
        for (i, l) in self.mlp.layers().iter().enumerate() {
            out.push(NamedTensor {
                name: format!("mlp.{i}.weight"),
                kind: TensorKind::MlpWeight,
                shape: vec![l.in_dim(), l.out_dim()],
                data: l.weight.data().to_vec(),
            });
            out.push(NamedTensor {
                name: format!("mlp.{i}.bias"),
                kind: TensorKind::MlpBias,
                shape: vec![l.out_dim()],
                data: l.bias.clone(),
            });
        }
        for (prefix, bn) in bn_prefixes(&self.norms) {
            for (field, kind, data) in bn_fields(bn) {
                out.push(NamedTensor {
                    name: format!("{prefix}.{field}"),
                    kind,
                    shape: vec![data.len()],
                    data: data.to_vec(),
                });
            }
        }
        out
    }

    /// Mutable views matching [`Self::tensors`] one to one.
    pub(crate) fn tensors_mut(&mut self) -> Vec<(String, TensorKind, &mut [f64])> {
        let Self {
            config,
            tables,
            attention,
            mlp,
            norms,
            names,
            ..
        } = self;
        let mut out: Vec<(String, TensorKind, &mut [f64])> = Vec::new();
        for (name, t) in names.iter().zip(tables.iter_mut()) {
            out.push((name.clone(), TensorKind::Embedding, t.data_mut()));
        }
        for (p, side) in attention.iter_mut().zip(attention_names(config.shared_attention)) {
            let AttentionParams { wq, wk, wv } = p;
            out.push((format!("attn.{side}.wq"), TensorKind::Attention, wq.data_mut()));
            out.push((format!("attn.{side}.wk"), TensorKind::Attention, wk.data_mut()));
            out.push((format!("attn.{side}.wv"), TensorKind::Attention, wv.data_mut()));
        }
        for (i, l) in mlp.layers_mut().iter_mut().enumerate() {
            out.push((format!("mlp.{i}.weight"), TensorKind::MlpWeight, l.weight.data_mut()));
            out.push((format!("mlp.{i}.bias"), TensorKind::MlpBias, &mut l.bias));
        }
        let MlpNorms { input, hidden } = norms;
        let hidden_named = hidden.iter_mut().enumerate().map(|(i, bn)| (format!("bn.hidden.{i}"), bn));
        for (prefix, bn) in input.iter_mut().map(|bn| ("bn.input".to_string(), bn)).chain(hidden_named) {
            let BatchNormState {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } = bn;
            out.push((format!("{prefix}.gamma"), TensorKind::BnAffine, gamma.as_mut_slice()));
            out.push((format!("{prefix}.beta"), TensorKind::BnAffine, beta.as_mut_slice()));
            out.push((format!("{prefix}.running_mean"), TensorKind::BnRunning, running_mean.as_mut_slice()));
            out.push((format!("{prefix}.running_var"), TensorKind::BnRunning, running_var.as_mut_slice()));
        }
        out
    }

    /// `(name, shape)` of every tensor, used for structural comparison.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors().into_iter().map(|t| (t.name, t.shape)).collect()
    }

    /// Rounds every tensor through `f32`, the checkpoint payload precision.
    pub fn round_to_f32(&mut self) {
        for (_, _, data) in self.tensors_mut() {
            data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn reset_optimizer(&mut self) {
        self.adam = AdamState::new(AdamConfig::with_lr(self.config.learning_rate));
    }
}

fn bn_prefixes(norms: &MlpNorms) -> Vec<(String, &BatchNormState)> {
    norms
        .input
        .iter()
        .map(|bn| ("bn.input".to_string(), bn))
        .chain(
            norms
                .hidden
                .iter()
                .enumerate()
                .map(|(i, bn)| (format!("bn.hidden.{i}"), bn)),
        )
        .collect()
}

fn bn_fields(bn: &BatchNormState) -> [(&'static str, TensorKind, &[f64]); 4] {
    [
        ("gamma", TensorKind::BnAffine, &bn.gamma),
        ("beta", TensorKind::BnAffine, &bn.beta),
        ("running_mean", TensorKind::BnRunning, &bn.running_mean),
        ("running_var", TensorKind::BnRunning, &bn.running_var),
    ]
}

/// Inference-mode probability for one sample with explicit `3 × d`
/// user and item history triples.
pub fn complete_forward(
    model: &CompleteModel,
    sample: &ImpressionSample,
    history_u: &DenseMatrix,
    history_i: &DenseMatrix,
) -> Result<f64> {
    let d = model.dim();
    let hd = model.config.history_dim;
    for (name, h) in [("user", history_u), ("item", history_i)] {
        if h.shape() != (HISTORY_SLOTS, hd) {
            return Err(Error::config(format!(
                "{name} history must be {HISTORY_SLOTS}x{hd}, got {}x{}",
                h.rows(),
                h.cols()
            )));
        }
    }
    let mut x = DenseMatrix::zeros(1, model.config.input_width());
    let fields = sample.complete_fields();
    for (t, table) in model.tables.iter().enumerate() {
        x.row_mut(0)[t * d..(t + 1) * d].copy_from_slice(table.lookup(fields[t]));
    }
    let base = COMPLETE_FIELDS * d;
    for (side, h) in [history_u, history_i].into_iter().enumerate() {
        let (out, _) = self_attention_cached(h, model.attention_for(side))?;
        x.row_mut(0)[base + side * hd..base + (side + 1) * hd].copy_from_slice(&mean_pool(&out)?);
    }
    let logit = mlp_infer(&x, &model.mlp, model.norms_opt())?[0];
    Ok(sigmoid(logit))
}
