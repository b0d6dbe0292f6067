use rand::Rng;

use super::batchnorm::{bn_backward, bn_forward_infer, bn_forward_train, BatchNormState, BnCache};
use super::matrix::{gemm, DenseMatrix};
use super::{uniform_init, Mode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `in_dim × out_dim`
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Feed-forward stack ending in a single logit.
///
/// Every mutable borrow of the layers bumps `version`, which is how
/// [`mlp_backward`] detects a cache taken before the last update.
#[derive(Debug, Clone)]
pub struct MlpParams {
    layers: Vec<Layer>,
    version: u64,
}

impl PartialEq for MlpParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("MLP needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::config(format!(
                    "layer {i}: bias length {} != out_dim {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::config(format!(
                    "layer {i}: in_dim {} does not chain from previous out_dim {}",
                    l.in_dim(),
                    layers[i - 1].out_dim()
                )));
            }
        }
        if layers.last().map(Layer::out_dim) != Some(1) {
            return Err(Error::config("final MLP layer must have out_dim 1"));
        }
        Ok(Self { layers, version: 0 })
    }

    /// ReLU hidden layers of the given widths followed by a linear logit.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for (i, &width) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            let mut weight = DenseMatrix::zeros(prev, width);
            uniform_init(weight.data_mut(), rng);
            layers.push(Layer {
                weight,
                bias: vec![0.0; width],
                activation: if i < hidden.len() {
                    Activation::Relu
                } else {
                    Activation::Identity
                },
            });
            prev = width;
        }
        Self { layers, version: 0 }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::out_dim)
            .collect()
    }
}

/// Batch-norm placement for an MLP: optionally on the input, and either on
/// every hidden layer (before its activation) or none.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNorms {
    pub input: Option<BatchNormState>,
    pub hidden: Vec<BatchNormState>,
}

impl MlpNorms {
    pub fn none() -> Self {
        Self {
            input: None,
            hidden: Vec::new(),
        }
    }

    pub fn fresh_for(params: &MlpParams, with_input: bool) -> Self {
        Self {
            input: with_input.then(|| BatchNormState::fresh(params.in_dim())),
            hidden: params
                .hidden_dims()
                .into_iter()
                .map(BatchNormState::fresh)
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_none() && self.hidden.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BatchNormState> {
        self.input.iter().chain(self.hidden.iter())
    }

    pub fn reset(&mut self) {
        self.input.iter_mut().for_each(BatchNormState::reset);
        self.hidden.iter_mut().for_each(BatchNormState::reset);
    }

    fn validate(&self, p: &MlpParams) -> Result<()> {
        if let Some(bn) = &self.input {
            if bn.dim() != p.in_dim() {
                return Err(Error::config(format!(
                    "input BN dim {} != MLP in_dim {}",
                    bn.dim(),
                    p.in_dim()
                )));
            }
        }
        if !self.hidden.is_empty() {
            let dims = p.hidden_dims();
            if self.hidden.len() != dims.len()
                || self.hidden.iter().zip(&dims).any(|(bn, &d)| bn.dim() != d)
            {
                return Err(Error::config("hidden BN states do not match hidden layer widths"));
            }
        }
        Ok(())
    }
}

/// Intermediate values of a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    version: u64,
    mode: Mode,
    normalized: bool,
    input_bn: Option<BnCache>,
    /// Input to each layer (after input BN for layer 0).
    layer_inputs: Vec<DenseMatrix>,
    /// Output of each hidden layer after BN and activation.
    activations: Vec<DenseMatrix>,
    hidden_bn: Vec<Option<BnCache>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
    pub input_bn: Option<BnGrads>,
    pub hidden_bn: Vec<BnGrads>,
    pub input: DenseMatrix,
}

/// Runs the MLP over a batch and returns one logit per row.
///
/// In `Train` mode batch-norm layers use batch statistics and update their
/// running estimates; in `Infer` mode they read running statistics only.
pub fn mlp_forward(
    x: &DenseMatrix,
    p: &MlpParams,
    mut norms: Option<&mut MlpNorms>,
    mode: Mode,
) -> Result<(Vec<f64>, MlpCache)> {
    let batch = x.rows();
    if batch == 0 {
        return Err(Error::config("empty batch"));
    }
    if x.cols() != p.in_dim() {
        return Err(Error::config(format!(
            "input width {} != MLP in_dim {}",
            x.cols(),
            p.in_dim()
        )));
    }
    if let Some(n) = norms.as_deref() {
        n.validate(p)?;
        if mode == Mode::Train && !n.is_empty() && batch < 2 {
            return Err(Error::config("train-mode batch norm needs batch >= 2"));
        }
    }

    let normalized = norms.as_deref().is_some_and(|n| !n.is_empty());
    let mut a = x.clone();
    let mut input_bn = None;
    if let Some(bn) = norms.as_deref_mut().and_then(|n| n.input.as_mut()) {
        match mode {
            Mode::Train => input_bn = Some(bn_forward_train(&mut a, bn)),
            Mode::Infer => bn_forward_infer(&mut a, bn),
        }
    }

    let n_layers = p.layers.len();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut activations = Vec::with_capacity(n_layers - 1);
    let mut hidden_bn = Vec::with_capacity(n_layers - 1);
    for (li, layer) in p.layers.iter().enumerate() {
        let mut z = DenseMatrix::zeros(batch, layer.out_dim());
        for r in 0..batch {
            z.row_mut(r).copy_from_slice(&layer.bias);
        }
        gemm(&a, false, &layer.weight, false, &mut z, 1.0);

        let is_hidden = li + 1 < n_layers;
        let mut bn_cache = None;
        if is_hidden {
            if let Some(bn) = norms.as_deref_mut().and_then(|n| n.hidden.get_mut(li)) {
                match mode {
                    Mode::Train => bn_cache = Some(bn_forward_train(&mut z, bn)),
                    Mode::Infer => bn_forward_infer(&mut z, bn),
                }
            }
        }
        if layer.activation == Activation::Relu {
            z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        if !z.is_finite() {
            return Err(Error::numeric(
                format!("mlp layer {li}"),
                "non-finite activation",
            ));
        }
        layer_inputs.push(std::mem::replace(&mut a, z));
        if is_hidden {
            activations.push(a.clone());
            hidden_bn.push(bn_cache);
        }
    }
    let logits = a.into_vec();
    Ok((
        logits,
        MlpCache {
            version: p.version,
            mode,
            normalized,
            input_bn,
            layer_inputs,
            activations,
            hidden_bn,
        },
    ))
}

/// Inference without touching any state.
pub fn mlp_infer(x: &DenseMatrix, p: &MlpParams, norms: Option<&MlpNorms>) -> Result<Vec<f64>> {
    let mut owned = norms.cloned();
    mlp_forward(x, p, owned.as_mut(), Mode::Infer).map(|(l, _)| l)
}

/// Gradients of `Σ dlogits[i] · logit[i]` with respect to every parameter
/// and the input batch.
pub fn mlp_backward(cache: &MlpCache, p: &MlpParams, dlogits: &[f64]) -> Result<MlpGrads> {
    if cache.version != p.version {
        return Err(Error::StaleCache {
            cached: cache.version,
            current: p.version,
        });
    }
    if cache.mode == Mode::Infer && cache.normalized {
        return Err(Error::config("backward requires a train-mode forward cache"));
    }
    let batch = cache.layer_inputs[0].rows();
    if dlogits.len() != batch {
        return Err(Error::config(format!(
            "dlogits length {} != batch {batch}",
            dlogits.len()
        )));
    }

    let n_layers = p.layers.len();
    let mut grads = Vec::with_capacity(n_layers);
    let mut hidden_bn_grads = Vec::new();
    let mut dz = DenseMatrix::from_vec(batch, 1, dlogits.to_vec())?;
    for li in (0..n_layers).rev() {
        let layer = &p.layers[li];
        if li + 1 < n_layers {
            let act = &cache.activations[li];
            if layer.activation == Activation::Relu {
                for (g, &y) in dz.data_mut().iter_mut().zip(act.data()) {
                    if y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            if let Some(bc) = &cache.hidden_bn[li] {
                let (gamma, beta) = bn_backward(&mut dz, bc);
                hidden_bn_grads.push(BnGrads { gamma, beta });
            }
        }
        let input = &cache.layer_inputs[li];
        let mut dw = DenseMatrix::zeros(layer.in_dim(), layer.out_dim());
        gemm(input, true, &dz, false, &mut dw, 0.0);
        let mut db = vec![0.0; layer.out_dim()];
        for r in 0..batch {
            for (b, g) in db.iter_mut().zip(dz.row(r)) {
                *b += g;
            }
        }
        let mut da = DenseMatrix::zeros(batch, layer.in_dim());
        gemm(&dz, false, &layer.weight, true, &mut da, 0.0);
        grads.push(LayerGrads {
            weight: dw,
            bias: db,
        });
        dz = da;
    }
    grads.reverse();
    hidden_bn_grads.reverse();

    let input_bn = cache.input_bn.as_ref().map(|bc| {
        let (gamma, beta) = bn_backward(&mut dz, bc);
        BnGrads { gamma, beta }
    });
    Ok(MlpGrads {
        layers: grads,
        input_bn,
        hidden_bn: hidden_bn_grads,
        input: dz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_layer(w: f64, b: f64) -> MlpParams {
        MlpParams::new(vec![Layer {
            weight: DenseMatrix::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![b],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_value() {
        let x = DenseMatrix::from_rows(&[vec![2.0]]).unwrap();
        let (logits, _) = mlp_forward(&x, &one_layer(1.0, 0.0), None, Mode::Infer).unwrap();
        assert_eq!(logits, vec![2.0]);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = MlpParams::init(5, &[4, 3], &mut rng);
        for l in p.layers_mut() {
            l.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = DenseMatrix::from_vec(2, 5, (0..10).map(|v| v as f64).collect()).unwrap();
        let (logits, _) = mlp_forward(&x, &p, None, Mode::Infer).unwrap();
        assert_eq!(logits, vec![0.0, 0.0]);
    }

    #[test]
    fn single_sample_linear_weight_gradient_is_input_times_dlogit() {
        let p = MlpParams::new(vec![Layer {
            weight: DenseMatrix::from_vec(3, 1, vec![0.3, -0.2, 0.7]).unwrap(),
            bias: vec![0.1],
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = DenseMatrix::from_rows(&[vec![1.5, -2.0, 0.25]]).unwrap();
        let (_, cache) = mlp_forward(&x, &p, None, Mode::Train).unwrap();
        let g = mlp_backward(&cache, &p, &[0.4]).unwrap();
        assert_eq!(g.layers[0].weight.data(), &[1.5 * 0.4, -2.0 * 0.4, 0.25 * 0.4]);
        assert_eq!(g.layers[0].bias, vec![0.4]);
    }

    #[test]
    fn zero_dlogits_give_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = MlpParams::init(4, &[3], &mut rng);
        let mut norms = MlpNorms::fresh_for(&p, true);
        let x = DenseMatrix::from_vec(3, 4, (0..12).map(|v| (v as f64).cos()).collect()).unwrap();
        let (_, cache) = mlp_forward(&x, &p, Some(&mut norms), Mode::Train).unwrap();
        let g = mlp_backward(&cache, &p, &[0.0; 3]).unwrap();
        assert!(g.layers.iter().all(|l| l.weight.data().iter().all(|&v| v == 0.0)));
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.hidden_bn.iter().all(|b| b.gamma.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = MlpParams::init(2, &[2], &mut rng);
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (_, cache) = mlp_forward(&x, &p, None, Mode::Train).unwrap();
        p.layers_mut()[0].bias[0] += 1.0;
        assert!(matches!(
            mlp_backward(&cache, &p, &[1.0]),
            Err(Error::StaleCache { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let p = one_layer(1.0, 0.0);
        let x = DenseMatrix::zeros(1, 2);
        assert!(matches!(mlp_forward(&x, &p, None, Mode::Infer), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let p = one_layer(f64::MAX, 0.0);
        let x = DenseMatrix::from_rows(&[vec![f64::MAX]]).unwrap();
        match mlp_forward(&x, &p, None, Mode::Infer) {
            Err(Error::Numeric { location, .. }) => assert_eq!(location, "mlp layer 0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn train_bn_needs_two_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MlpParams::init(2, &[2], &mut rng);
        let mut norms = MlpNorms::fresh_for(&p, true);
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(mlp_forward(&x, &p, Some(&mut norms), Mode::Train).is_err());
    }

    #[test]
    fn infer_mode_leaves_running_stats_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MlpParams::init(3, &[4, 2], &mut rng);
        let mut norms = MlpNorms::fresh_for(&p, true);
        let x = DenseMatrix::from_vec(4, 3, (0..12).map(|v| v as f64 * 0.1).collect()).unwrap();
        mlp_forward(&x, &p, Some(&mut norms), Mode::Train).unwrap();
        let before = norms.clone();
        mlp_forward(&x, &p, Some(&mut norms), Mode::Infer).unwrap();
        assert_eq!(before, norms);
    }
}
