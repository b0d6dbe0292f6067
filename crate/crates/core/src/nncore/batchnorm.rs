use super::matrix::DenseMatrix;

/// Per-feature batch normalization with learned affine and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

impl BatchNormState {
    pub fn fresh(dim: usize) -> Self {
        Self::with_hyper(dim, DEFAULT_MOMENTUM, DEFAULT_EPSILON)
    }

    pub fn with_hyper(dim: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum,
            epsilon,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// True when every field equals the freshly-initialized state.
    pub fn is_fresh(&self) -> bool {
        self.gamma.iter().all(|&g| g == 1.0)
            && self.beta.iter().all(|&b| b == 0.0)
            && self.running_mean.iter().all(|&m| m == 0.0)
            && self.running_var.iter().all(|&v| v == 1.0)
    }

    pub fn reset(&mut self) {
        *self = Self::with_hyper(self.dim(), self.momentum, self.epsilon);
    }
}

/// Values retained by a train-mode normalization for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub xhat: DenseMatrix,
    pub inv_std: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Normalizes `x` in place with batch statistics and folds them into the
/// running estimates.
pub(crate) fn bn_forward_train(x: &mut DenseMatrix, bn: &mut BatchNormState) -> BnCache {
    let (n, d) = x.shape();
    let (mean, var) = column_moments(x);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.epsilon).sqrt()).collect();
    let mut xhat = DenseMatrix::zeros(n, d);
    for r in 0..n {
        let src = x.row_mut(r);
        let dst = xhat.row_mut(r);
        for c in 0..d {
            let h = (src[c] - mean[c]) * inv_std[c];
            dst[c] = h;
            src[c] = bn.gamma[c] * h + bn.beta[c];
        }
    }
    let unbias = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
    let m = bn.momentum;
    for c in 0..d {
        bn.running_mean[c] = (1.0 - m) * bn.running_mean[c] + m * mean[c];
        bn.running_var[c] = (1.0 - m) * bn.running_var[c] + m * var[c] * unbias;
    }
    BnCache {
        xhat,
        inv_std,
        gamma: bn.gamma.clone(),
    }
}

pub(crate) fn bn_forward_infer(x: &mut DenseMatrix, bn: &BatchNormState) {
    let (n, d) = x.shape();
    let scale: Vec<f64> = (0..d)
        .map(|c| bn.gamma[c] / (bn.running_var[c] + bn.epsilon).sqrt())
        .collect();
    for r in 0..n {
        let row = x.row_mut(r);
        for c in 0..d {
            row[c] = (row[c] - bn.running_mean[c]) * scale[c] + bn.beta[c];
        }
    }
}

/// Returns `(dgamma, dbeta)` and overwrites `dy` with the input gradient.
pub(crate) fn bn_backward(dy: &mut DenseMatrix, cache: &BnCache) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = dy.shape();
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for r in 0..n {
        let g = dy.row(r);
        let h = cache.xhat.row(r);
        for c in 0..d {
            dgamma[c] += g[c] * h[c];
            dbeta[c] += g[c];
        }
    }
    let nf = n as f64;
    for r in 0..n {
        let h = cache.xhat.row(r);
        let g = dy.row_mut(r);
        for c in 0..d {
            // sum(dxhat) = gamma*dbeta, sum(dxhat*xhat) = gamma*dgamma
            let dxhat = g[c] * cache.gamma[c];
            g[c] = cache.inv_std[c] / nf
                * (nf * dxhat - cache.gamma[c] * dbeta[c] - h[c] * cache.gamma[c] * dgamma[c]);
        }
    }
    (dgamma, dbeta)
}

fn column_moments(x: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    let nf = n as f64;
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![0.0; d];
    for r in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            let dv = v - m;
            *s += dv * dv;
        }
    }
    var.iter_mut().for_each(|s| *s /= nf);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_state_is_identity_in_infer_mode() {
        let bn = BatchNormState::fresh(3);
        assert!(bn.is_fresh());
        let mut x = DenseMatrix::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        bn_forward_infer(&mut x, &bn);
        for (a, b) in x.data().iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b / (1.0 + DEFAULT_EPSILON).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn train_mode_normalizes_columns() {
        let mut bn = BatchNormState::fresh(2);
        let mut x = DenseMatrix::from_rows(&[vec![1.0, 10.0], vec![3.0, 30.0], vec![5.0, 50.0]]).unwrap();
        bn_forward_train(&mut x, &mut bn);
        for c in 0..2 {
            let col: Vec<f64> = (0..3).map(|r| x.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
        }
        assert!((bn.running_mean[0] - 0.3).abs() < 1e-12);
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
    }
}
