use rand::Rng;

use super::matrix::{gemm, DenseMatrix};
use super::uniform_init;
use crate::error::{Error, Result};

/// Number of stacked monthly embeddings an attention block consumes.
pub const HISTORY_SLOTS: usize = 3;

/// Single-head projections for scaled dot-product self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
}

impl AttentionParams {
    pub fn new(wq: DenseMatrix, wk: DenseMatrix, wv: DenseMatrix) -> Result<Self> {
        let d = wq.rows();
        for (name, m) in [("wq", &wq), ("wk", &wk), ("wv", &wv)] {
            if m.shape() != (d, d) {
                return Err(Error::config(format!(
                    "attention {name} must be {d}x{d}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(Self { wq, wk, wv })
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut mk = || {
            let mut m = DenseMatrix::zeros(dim, dim);
            uniform_init(m.data_mut(), rng);
            m
        };
        let wq = mk();
        let wk = mk();
        let wv = mk();
        Self { wq, wk, wv }
    }

    /// `Wq = Wk = 0, Wv = I`: every query attends uniformly, values pass through.
    pub fn uniform_identity(dim: usize) -> Self {
        Self {
            wq: DenseMatrix::zeros(dim, dim),
            wk: DenseMatrix::zeros(dim, dim),
            wv: DenseMatrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    /// Stable 64-bit fingerprint over the exact bit patterns of all weights.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for m in [&self.wq, &self.wk, &self.wv] {
            for v in m.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
    /// Gradient with respect to the stacked input rows.
    pub input: DenseMatrix,
}

impl AttentionGrads {
    pub fn zeros(dim: usize) -> Self {
        Self {
            wq: DenseMatrix::zeros(dim, dim),
            wk: DenseMatrix::zeros(dim, dim),
            wv: DenseMatrix::zeros(dim, dim),
            input: DenseMatrix::zeros(HISTORY_SLOTS, dim),
        }
    }
}

/// Forward intermediates for one 3×d attention input.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    e: DenseMatrix,
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
    /// Row-stochastic 3×3 attention weights.
    weights: [[f64; HISTORY_SLOTS]; HISTORY_SLOTS],
}

impl AttentionCache {
    pub fn weights(&self) -> &[[f64; HISTORY_SLOTS]; HISTORY_SLOTS] {
        &self.weights
    }
}

fn check_shape(e: &DenseMatrix, p: &AttentionParams) -> Result<()> {
    if e.rows() != HISTORY_SLOTS {
        return Err(Error::config(format!(
            "self-attention expects {HISTORY_SLOTS} rows, got {}",
            e.rows()
        )));
    }
    if e.cols() != p.dim() {
        return Err(Error::config(format!(
            "attention dim {} does not match embedding dim {}",
            p.dim(),
            e.cols()
        )));
    }
    Ok(())
}

/// `softmax(Q Kᵀ / √d) · V` with `Q = e·Wq`, `K = e·Wk`, `V = e·Wv`.
pub fn self_attention(e: &DenseMatrix, p: &AttentionParams) -> Result<DenseMatrix> {
    self_attention_cached(e, p).map(|(out, _)| out)
}

pub fn self_attention_cached(
    e: &DenseMatrix,
    p: &AttentionParams,
) -> Result<(DenseMatrix, AttentionCache)> {
    check_shape(e, p)?;
    let d = p.dim();
    let q = e.matmul(&p.wq)?;
    let k = e.matmul(&p.wk)?;
    let v = e.matmul(&p.wv)?;
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights = [[0.0; HISTORY_SLOTS]; HISTORY_SLOTS];
    for i in 0..HISTORY_SLOTS {
        let mut scores = [0.0; HISTORY_SLOTS];
        for (j, s) in scores.iter_mut().enumerate() {
            *s = dot(q.row(i), k.row(j)) * scale;
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for s in &mut scores {
            *s = (*s - max).exp();
            z += *s;
        }
        for (w, s) in weights[i].iter_mut().zip(scores) {
            *w = s / z;
        }
    }
    let mut out = DenseMatrix::zeros(HISTORY_SLOTS, d);
    for i in 0..HISTORY_SLOTS {
        let row = out.row_mut(i);
        for j in 0..HISTORY_SLOTS {
            let w = weights[i][j];
            for (o, vv) in row.iter_mut().zip(v.row(j)) {
                *o += w * vv;
            }
        }
    }
    if !out.is_finite() {
        return Err(Error::numeric("self-attention", "non-finite output"));
    }
    Ok((
        out,
        AttentionCache {
            e: e.clone(),
            q,
            k,
            v,
            weights,
        },
    ))
}

/// Accumulates gradients of `Σ dout ⊙ out` into `grads`.
pub fn self_attention_backward(
    cache: &AttentionCache,
    p: &AttentionParams,
    dout: &DenseMatrix,
    grads: &mut AttentionGrads,
) -> Result<()> {
    let d = p.dim();
    if dout.shape() != (HISTORY_SLOTS, d) {
        return Err(Error::config("attention upstream gradient has wrong shape"));
    }
    let a = &cache.weights;
    let scale = 1.0 / (d as f64).sqrt();

    // dV = Aᵀ dout ; dA = dout Vᵀ
    let mut dv = DenseMatrix::zeros(HISTORY_SLOTS, d);
    let mut da = [[0.0; HISTORY_SLOTS]; HISTORY_SLOTS];
    for i in 0..HISTORY_SLOTS {
        for j in 0..HISTORY_SLOTS {
            da[i][j] = dot(dout.row(i), cache.v.row(j));
            let w = a[i][j];
            for (g, o) in dv.row_mut(j).iter_mut().zip(dout.row(i)) {
                *g += w * o;
            }
        }
    }
    // softmax backward, then the 1/√d scale
    let mut ds = [[0.0; HISTORY_SLOTS]; HISTORY_SLOTS];
    for i in 0..HISTORY_SLOTS {
        let inner: f64 = (0..HISTORY_SLOTS).map(|j| da[i][j] * a[i][j]).sum();
        for j in 0..HISTORY_SLOTS {
            ds[i][j] = a[i][j] * (da[i][j] - inner) * scale;
        }
    }
    // dQ = dS K ; dK = dSᵀ Q
    let mut dq = DenseMatrix::zeros(HISTORY_SLOTS, d);
    let mut dk = DenseMatrix::zeros(HISTORY_SLOTS, d);
    for i in 0..HISTORY_SLOTS {
        for j in 0..HISTORY_SLOTS {
            let s = ds[i][j];
            if s == 0.0 {
                continue;
            }
            for (g, kv) in dq.row_mut(i).iter_mut().zip(cache.k.row(j)) {
                *g += s * kv;
            }
            for (g, qv) in dk.row_mut(j).iter_mut().zip(cache.q.row(i)) {
                *g += s * qv;
            }
        }
    }
    // dW* += eᵀ d*, de += d* W*ᵀ
    for (w, dw, dm) in [
        (&p.wq, &mut grads.wq, &dq),
        (&p.wk, &mut grads.wk, &dk),
        (&p.wv, &mut grads.wv, &dv),
    ] {
        for r in 0..HISTORY_SLOTS {
            let er = cache.e.row(r);
            let gr = dm.row(r);
            for (a_idx, &ev) in er.iter().enumerate() {
                if ev == 0.0 {
                    continue;
                }
                for (o, g) in dw.row_mut(a_idx).iter_mut().zip(gr) {
                    *o += ev * g;
                }
            }
            let de = grads.input.row_mut(r);
            for (a_idx, o) in de.iter_mut().enumerate() {
                *o += dot(gr, w.row(a_idx));
            }
        }
    }
    Ok(())
}

/// Forward intermediates of [`pooled_attention_batch`].
#[derive(Debug, Clone)]
pub struct BatchAttentionCache {
    e: DenseMatrix,
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
    weights: Vec<[[f64; HISTORY_SLOTS]; HISTORY_SLOTS]>,
}

/// Self-attention followed by mean pooling for `n` inputs stacked into a
/// `3n × d` matrix. Returns the `n × d` pooled rows. Same result as
/// [`self_attention`] then [`mean_pool`] per input, up to summation order.
pub fn pooled_attention_batch(e: DenseMatrix, p: &AttentionParams) -> Result<(DenseMatrix, BatchAttentionCache)> {
    let d = p.dim();
    if e.cols() != d || e.rows() % HISTORY_SLOTS != 0 {
        return Err(Error::config(format!(
            "stacked attention input must be 3n x {d}, got {}x{}",
            e.rows(),
            e.cols()
        )));
    }
    let n = e.rows() / HISTORY_SLOTS;
    let q = e.matmul(&p.wq)?;
    let k = e.matmul(&p.wk)?;
    let v = e.matmul(&p.wv)?;
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights = Vec::with_capacity(n);
    let mut pooled = DenseMatrix::zeros(n, d);
    for s in 0..n {
        let r0 = s * HISTORY_SLOTS;
        let mut a = [[0.0; HISTORY_SLOTS]; HISTORY_SLOTS];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, w) in row.iter_mut().enumerate() {
                *w = dot(q.row(r0 + i), k.row(r0 + j)) * scale;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for w in row.iter_mut() {
                *w = (*w - max).exp();
                z += *w;
            }
            row.iter_mut().for_each(|w| *w /= z);
        }
        let out = pooled.row_mut(s);
        for j in 0..HISTORY_SLOTS {
            let c = (0..HISTORY_SLOTS).map(|i| a[i][j]).sum::<f64>() / HISTORY_SLOTS as f64;
            for (o, vv) in out.iter_mut().zip(v.row(r0 + j)) {
                *o += c * vv;
            }
        }
        weights.push(a);
    }
    if !pooled.is_finite() {
        return Err(Error::numeric("self-attention", "non-finite output"));
    }
    Ok((pooled, BatchAttentionCache { e, q, k, v, weights }))
}

/// Accumulates weight gradients of `Σ dpooled ⊙ pooled` into `grads`.
/// The input gradient is not computed.
pub fn pooled_attention_batch_backward(
    cache: &BatchAttentionCache,
    dpooled: &DenseMatrix,
    grads: &mut AttentionGrads,
) -> Result<()> {
    let d = cache.e.cols();
    let n = cache.weights.len();
    if dpooled.shape() != (n, d) {
        return Err(Error::config("pooled attention upstream gradient has wrong shape"));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut dq = DenseMatrix::zeros(n * HISTORY_SLOTS, d);
    let mut dk = DenseMatrix::zeros(n * HISTORY_SLOTS, d);
    let mut dv = DenseMatrix::zeros(n * HISTORY_SLOTS, d);
    for (s, a) in cache.weights.iter().enumerate() {
        let r0 = s * HISTORY_SLOTS;
        // every output row receives dpooled / 3
        let g: Vec<f64> = dpooled.row(s).iter().map(|x| x / HISTORY_SLOTS as f64).collect();
        let gv: Vec<f64> = (0..HISTORY_SLOTS).map(|j| dot(&g, cache.v.row(r0 + j))).collect();
        for j in 0..HISTORY_SLOTS {
            let c: f64 = (0..HISTORY_SLOTS).map(|i| a[i][j]).sum();
            for (o, x) in dv.row_mut(r0 + j).iter_mut().zip(&g) {
                *o = c * x;
            }
        }
        for i in 0..HISTORY_SLOTS {
            let inner: f64 = (0..HISTORY_SLOTS).map(|j| gv[j] * a[i][j]).sum();
            for j in 0..HISTORY_SLOTS {
                let ds = a[i][j] * (gv[j] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                for (o, kv) in dq.row_mut(r0 + i).iter_mut().zip(cache.k.row(r0 + j)) {
                    *o += ds * kv;
                }
                for (o, qv) in dk.row_mut(r0 + j).iter_mut().zip(cache.q.row(r0 + i)) {
                    *o += ds * qv;
                }
            }
        }
    }
    gemm(&cache.e, true, &dq, false, &mut grads.wq, 1.0);
    gemm(&cache.e, true, &dk, false, &mut grads.wk, 1.0);
    gemm(&cache.e, true, &dv, false, &mut grads.wv, 1.0);
    Ok(())
}

/// Column-wise mean over the three attention output rows.
pub fn mean_pool(x: &DenseMatrix) -> Result<Vec<f64>> {
    if x.rows() != HISTORY_SLOTS {
        return Err(Error::config(format!(
            "mean pooling expects {HISTORY_SLOTS} rows, got {}",
            x.rows()
        )));
    }
    let mut out = vec![0.0; x.cols()];
    for r in 0..HISTORY_SLOTS {
        for (o, v) in out.iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= HISTORY_SLOTS as f64);
    Ok(out)
}

/// Upstream gradient of [`mean_pool`]: each row receives `dy / 3`.
pub fn mean_pool_backward(dy: &[f64]) -> DenseMatrix {
    let mut g = DenseMatrix::zeros(HISTORY_SLOTS, dy.len());
    for r in 0..HISTORY_SLOTS {
        for (o, v) in g.row_mut(r).iter_mut().zip(dy) {
            *o = v / HISTORY_SLOTS as f64;
        }
    }
    g
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batch_matches_per_input_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 5;
        let p = AttentionParams::init(d, &mut rng);
        let inputs: Vec<DenseMatrix> = (0..7)
            .map(|_| {
                let mut m = DenseMatrix::zeros(HISTORY_SLOTS, d);
                m.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
                m
            })
            .collect();
        let stacked: Vec<f64> = inputs.iter().flat_map(|m| m.data().to_vec()).collect();
        let e = DenseMatrix::from_vec(7 * HISTORY_SLOTS, d, stacked).unwrap();
        let (pooled, cache) = pooled_attention_batch(e, &p).unwrap();
        let mut dpooled = DenseMatrix::zeros(7, d);
        dpooled.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let mut batched = AttentionGrads::zeros(d);
        pooled_attention_batch_backward(&cache, &dpooled, &mut batched).unwrap();

        let mut single = AttentionGrads::zeros(d);
        for (i, m) in inputs.iter().enumerate() {
            let (out, c) = self_attention_cached(m, &p).unwrap();
            let want = mean_pool(&out).unwrap();
            assert!(pooled.row(i).iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
            self_attention_backward(&c, &p, &mean_pool_backward(dpooled.row(i)), &mut single).unwrap();
        }
        for (a, b) in [(&batched.wq, &single.wq), (&batched.wk, &single.wk), (&batched.wv, &single.wv)] {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-12));
        }
        let bad = DenseMatrix::zeros(4, d);
        assert!(pooled_attention_batch(bad, &p).is_err());
    }

    #[test]
    fn mean_pool_examples() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(mean_pool(&x).unwrap(), vec![3.0, 4.0]);
        let same = DenseMatrix::from_rows(&[vec![0.3, -1.0], vec![0.3, -1.0], vec![0.3, -1.0]]).unwrap();
        let pooled = mean_pool(&same).unwrap();
        assert!((pooled[0] - 0.3).abs() < 1e-15 && (pooled[1] + 1.0).abs() < 1e-15);
        assert!(mean_pool(&DenseMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn identical_rows_give_v_times_wv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = AttentionParams::init(4, &mut rng);
        let v = vec![0.5, -1.0, 2.0, 0.25];
        let e = DenseMatrix::from_rows(&[v.clone(), v.clone(), v.clone()]).unwrap();
        let out = self_attention(&e, &p).unwrap();
        let expect = DenseMatrix::from_rows(&[v]).unwrap().matmul(&p.wv).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert!((out.get(r, c) - expect.get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_attention_returns_column_mean() {
        let p = AttentionParams::uniform_identity(2);
        let e = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 9.0]]).unwrap();
        let out = self_attention(&e, &p).unwrap();
        for r in 0..3 {
            assert!((out.get(r, 0) - 3.0).abs() < 1e-12);
            assert!((out.get(r, 1) - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_row_count_is_config_error() {
        let p = AttentionParams::uniform_identity(2);
        assert!(matches!(
            self_attention(&DenseMatrix::zeros(2, 2), &p),
            Err(Error::Config(_))
        ));
        assert!(self_attention(&DenseMatrix::zeros(3, 3), &p).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = AttentionParams::init(8, &mut rng);
            let mut e = DenseMatrix::zeros(3, 8);
            e.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-3.0..3.0));
            let (_, cache) = self_attention_cached(&e, &p).unwrap();
            for row in cache.weights() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
