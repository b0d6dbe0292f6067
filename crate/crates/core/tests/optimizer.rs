use ecdctr_core::nncore::{adam_step, AdamConfig, AdamState, EmbeddingTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(lr: f64) -> AdamConfig {
    AdamConfig::with_lr(lr)
}

/// Textbook Adam on one scalar, written out step by step.
fn reference(mut x: f64, grads: &[f64], c: &AdamConfig) -> f64 {
    let (mut m, mut v) = (0.0, 0.0);
    for (t, g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = c.beta1 * m + (1.0 - c.beta1) * g;
        v = c.beta2 * v + (1.0 - c.beta2) * g * g;
        let mhat = m / (1.0 - c.beta1.powi(t));
        let vhat = v / (1.0 - c.beta2.powi(t));
        x -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
    }
    x
}

#[test]
fn step_matches_reference() {
    let c = config(0.01);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grads: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let mut x = vec![0.5, -1.0, 2.0, 0.0];
    let start = x.clone();
    let (mut m, mut v) = (vec![0.0; 4], vec![0.0; 4]);
    for (t, g) in grads.iter().enumerate() {
        adam_step(&mut x, g, &mut m, &mut v, t as u64 + 1, &c);
    }
    for j in 0..4 {
        let col: Vec<f64> = grads.iter().map(|g| g[j]).collect();
        assert!((x[j] - reference(start[j], &col, &c)).abs() < 1e-14);
    }
}

#[test]
fn converges_on_a_quadratic() {
    // f(x) = Σ a_i (x_i - b_i)²
    let a = [1.0, 10.0, 0.1];
    let b = [3.0, -2.0, 0.5];
    let mut x = vec![0.0; 3];
    let mut st = AdamState::new(config(0.05));
    for _ in 0..5000 {
        let g: Vec<f64> = (0..3).map(|i| 2.0 * a[i] * (x[i] - b[i])).collect();
        st.begin_step();
        st.update("x", &mut x, &g).unwrap();
    }
    for i in 0..3 {
        assert!((x[i] - b[i]).abs() < 1e-3, "x{i} = {}", x[i]);
    }
    assert_eq!(st.step_count(), 5000);
}

#[test]
fn table_update_equals_row_by_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut a = EmbeddingTable::init(10, 3, &mut rng);
    let mut b = a.clone();
    let (mut sa, mut sb) = (AdamState::new(config(0.01)), AdamState::new(config(0.01)));
    for _ in 0..20 {
        let rows: Vec<usize> = {
            let mut r: Vec<usize> = (0..4).map(|_| rng.random_range(0..a.n_rows())).collect();
            r.sort_unstable();
            r.dedup();
            r
        };
        let grads: Vec<f64> = (0..rows.len() * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        sa.begin_step();
        sb.begin_step();
        sa.update_table_rows("t", &mut a, &rows, &grads).unwrap();
        for (k, &r) in rows.iter().enumerate() {
            let n = b.n_rows();
            sb.update_row("t", n, r, b.row_mut(r), &grads[k * 3..(k + 1) * 3]).unwrap();
        }
    }
    assert_eq!(a, b);
    assert!(sa.update_table_rows("t", &mut a, &[99], &[0.0; 3]).is_err());
}
