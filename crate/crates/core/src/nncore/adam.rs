use std::collections::BTreeMap;

use super::embedding::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) {
    debug_assert!(t >= 1);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Moments for an embedding table, updated one row at a time. Each row keeps
/// its own step count so rows never touched by a gradient never move.
#[derive(Debug, Clone, PartialEq)]
struct RowMoments {
    width: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: Vec<u64>,
}

/// Optimizer state keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    dense: BTreeMap<String, Moments>,
    rows: BTreeMap<String, RowMoments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            dense: BTreeMap::new(),
            rows: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// True when no moment has been accumulated yet.
    pub fn is_fresh(&self) -> bool {
        self.t == 0 && self.dense.is_empty() && self.rows.is_empty()
    }

    /// Starts a new optimizer step; call once before the step's updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Dense update of a whole parameter at the current step.
    pub fn update(&mut self, name: &str, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_grads(name, params.len(), grads)?;
        if self.t == 0 {
            self.t = 1;
        }
        let mom = self.dense.entry(name.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
        });
        if mom.m.len() != params.len() {
            return Err(Error::config(format!(
                "adam moments for `{name}` have length {}, parameter has {}",
                mom.m.len(),
                params.len()
            )));
        }
        adam_step(params, grads, &mut mom.m, &mut mom.v, self.t, &self.config);
        Ok(())
    }

    fn row_moments(&mut self, name: &str, n_rows: usize, width: usize) -> Result<&mut RowMoments> {
        if !self.rows.contains_key(name) {
            self.rows.insert(
                name.to_string(),
                RowMoments {
                    width,
                    m: vec![0.0; n_rows * width],
                    v: vec![0.0; n_rows * width],
                    steps: vec![0; n_rows],
                },
            );
        }
        let mom = self.rows.get_mut(name).expect("inserted above");
        if mom.width != width || mom.steps.len() != n_rows {
            return Err(Error::config(format!("row moments for `{name}` do not match the table")));
        }
        Ok(mom)
    }

    /// Sparse update of one row of a `n_rows × width` table.
    pub fn update_row(
        &mut self,
        name: &str,
        n_rows: usize,
        row: usize,
        params: &mut [f64],
        grads: &[f64],
    ) -> Result<()> {
        let width = params.len();
        check_grads(name, width, grads)?;
        let config = self.config;
        let mom = self.row_moments(name, n_rows, width)?;
        if row >= n_rows {
            return Err(Error::config(format!("row update out of range for `{name}`")));
        }
        mom.step(row, params, grads, &config);
        Ok(())
    }

    /// Sparse update of `rows` of `table`; `grads` holds one row gradient
    /// per entry of `rows`, back to back.
    pub fn update_table_rows(
        &mut self,
        name: &str,
        table: &mut EmbeddingTable,
        rows: &[usize],
        grads: &[f64],
    ) -> Result<()> {
        let width = table.dim();
        check_grads(name, rows.len() * width, grads)?;
        let config = self.config;
        let n_rows = table.n_rows();
        let mom = self.row_moments(name, n_rows, width)?;
        for (&row, g) in rows.iter().zip(grads.chunks_exact(width)) {
            if row >= n_rows {
                return Err(Error::config(format!("row update out of range for `{name}`")));
            }
            mom.step(row, table.row_mut(row), g, &config);
        }
        Ok(())
    }
}

impl RowMoments {
    fn step(&mut self, row: usize, params: &mut [f64], grads: &[f64], config: &AdamConfig) {
        self.steps[row] += 1;
        let span = row * self.width..(row + 1) * self.width;
        adam_step(params, grads, &mut self.m[span.clone()], &mut self.v[span], self.steps[row], config);
    }
}

fn check_grads(name: &str, len: usize, grads: &[f64]) -> Result<()> {
    if grads.len() != len {
        return Err(Error::config(format!(
            "gradient for `{name}` has length {}, parameter has {len}",
            grads.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric(
            format!("parameter `{name}`"),
            format!("non-finite gradient at index {i}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut st = AdamState::new(AdamConfig::with_lr(0.1));
        let mut p = vec![1.0, -2.0, 3.0];
        for _ in 0..10 {
            st.begin_step();
            st.update("w", &mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamConfig::with_lr(0.01);
        let mut p = vec![0.0, 0.0, 0.0];
        let g = [3.0, -0.5, 1e-3];
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        adam_step(&mut p, &g, &mut m, &mut v, 1, &cfg);
        for (pi, gi) in p.iter().zip(g) {
            // mhat/sqrt(vhat) = g/|g| exactly at t=1, up to epsilon
            let expect = -0.01 * gi.signum() * gi.abs() / (gi.abs() + cfg.epsilon);
            assert!((pi - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut st = AdamState::new(AdamConfig::with_lr(0.1));
        let mut p = vec![0.0; 2];
        match st.update("mlp.0.weight", &mut p, &[0.0, f64::NAN]) {
            Err(Error::Numeric { location, .. }) => assert!(location.contains("mlp.0.weight")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn untouched_rows_stay_put() {
        let mut st = AdamState::new(AdamConfig::with_lr(0.1));
        let mut table = vec![0.5; 6];
        st.begin_step();
        st.update_row("emb", 3, 1, &mut table[2..4], &[1.0, 1.0]).unwrap();
        assert_eq!(&table[0..2], &[0.5, 0.5]);
        assert_eq!(&table[4..6], &[0.5, 0.5]);
        assert!(table[2] < 0.5);
    }
}
