use ecdctr_core::datagen::{gen_world, Domain, ImpressionSample, WorldConfig, COMPLETE_FIELDS};
use ecdctr_core::embstore::{EmbeddingSnapshot, Side, SnapshotStore};
use ecdctr_core::models::{
    complete_forward, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
    tiny_forward, transfer_parameters, CompleteConfig, CompleteModel, Histories, HistorySource,
    TensorKind, TinyConfig, TinyModel, TransferVariant,
};
use ecdctr_core::nncore::{DenseMatrix, HISTORY_SLOTS};
use ecdctr_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn world_config() -> WorldConfig {
    WorldConfig {
        users: 400,
        items: 300,
        ad_items: 40,
        natural_per_month: 6000,
        ad_per_month: 3000,
        ..WorldConfig::default()
    }
}

fn samples(domain: Domain, volume: usize) -> (WorldConfig, Vec<ImpressionSample>) {
    let cfg = world_config();
    let w = gen_world(&cfg, 11).unwrap();
    let s = w.gen_impressions(domain, 0..30, volume).unwrap();
    (cfg, s)
}

fn complete_config(world: &WorldConfig, hidden: Vec<usize>) -> CompleteConfig {
    CompleteConfig {
        vocabs: world.field_vocabs(),
        dim: 16,
        history_dim: 16,
        hidden,
        learning_rate: 0.01,
        shared_attention: false,
        batch_norm: true,
    }
}

/// Three monthly snapshots per side with random vectors for a random subset of ids.
fn random_store(world: &WorldConfig, dim: usize, rng: &mut ChaCha8Rng) -> SnapshotStore {
    let mut store = SnapshotStore::new(3);
    for tag in 4..7 {
        for (side, n) in [(Side::User, world.users), (Side::Item, world.items)] {
            let mut snap = EmbeddingSnapshot::new(side, tag, dim);
            for id in 0..n as u64 {
                if rng.random_bool(0.8) {
                    let v = (0..dim).map(|_| rng.random_range(-0.5f32..0.5)).collect();
                    snap.insert(id, v).unwrap();
                }
            }
            store.put_snapshot(snap).unwrap();
        }
    }
    store
}

fn trained_model(steps: usize, hidden: Vec<usize>) -> (CompleteModel, Histories, Vec<ImpressionSample>, SnapshotStore) {
    let (world, s) = samples(Domain::Ad, 3000);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let store = random_store(&world, 16, &mut rng);
    let hist = Histories::from_store(&store, world.users, world.items, 3).unwrap();
    let mut model = CompleteModel::new(complete_config(&world, hidden), &mut rng);
    let refs: Vec<&ImpressionSample> = s.iter().collect();
    for b in refs.chunks(128).cycle().take(steps) {
        model.train_batch(b, &hist).unwrap();
    }
    (model, hist, s, store)
}

// ---------- independent reference computations ----------

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `x · W + b` with `W` stored `in × out` row-major.
fn affine(x: &[f64], w: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    (0..w.cols())
        .map(|j| b[j] + (0..w.rows()).map(|i| x[i] * w.get(i, j)).sum::<f64>())
        .collect()
}

fn attend_and_pool(e: &DenseMatrix, wq: &DenseMatrix, wk: &DenseMatrix, wv: &DenseMatrix) -> Vec<f64> {
    let d = e.cols();
    let zero = vec![0.0; d];
    let proj = |w: &DenseMatrix| -> Vec<Vec<f64>> { (0..3).map(|r| affine(e.row(r), w, &zero)).collect() };
    let (q, k, v) = (proj(wq), proj(wk), proj(wv));
    let mut pooled = vec![0.0; d];
    for qi in &q {
        let s: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let m = s.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
        for (j, vj) in v.iter().enumerate() {
            let a = (s[j] - m).exp() / z;
            for c in 0..d {
                pooled[c] += a * vj[c] / 3.0;
            }
        }
    }
    pooled
}

fn reference_complete(model: &CompleteModel, s: &ImpressionSample, hu: &DenseMatrix, hi: &DenseMatrix) -> f64 {
    let mut x = Vec::new();
    for (t, id) in s.complete_fields().iter().enumerate() {
        let table = &model.tables[t];
        let row = if (*id as usize) < table.vocab() { *id as usize } else { table.vocab() };
        x.extend_from_slice(table.row(row));
    }
    for (side, h) in [hu, hi].into_iter().enumerate() {
        let a = model.attention_for(side);
        x.extend(attend_and_pool(h, &a.wq, &a.wk, &a.wv));
    }
    let bn = |v: &mut Vec<f64>, st: &ecdctr_core::nncore::BatchNormState| {
        for (j, x) in v.iter_mut().enumerate() {
            *x = (*x - st.running_mean[j]) / (st.running_var[j] + st.epsilon).sqrt() * st.gamma[j] + st.beta[j];
        }
    };
    if let Some(st) = &model.norms.input {
        bn(&mut x, st);
    }
    let layers = model.mlp.layers();
    for (li, l) in layers.iter().enumerate() {
        x = affine(&x, &l.weight, &l.bias);
        if li + 1 < layers.len() {
            bn(&mut x, &model.norms.hidden[li]);
            x.iter_mut().for_each(|v| *v = relu(*v));
        }
    }
    sigmoid(x[0])
}

#[test]
pub fn history_triple_concatenates_to_forty_eight() {
    let (world, _) = samples(Domain::Ad, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let store = random_store(&world, 16, &mut rng);
    let e = store.lookup_history(Side::User, 3).unwrap();
    assert_eq!(e.shape(), (HISTORY_SLOTS, 16));
    assert_eq!(e.data().len(), 48);
    let cfg = complete_config(&world, vec![8]);
    assert_eq!(cfg.input_width(), COMPLETE_FIELDS * 16 + 2 * 16);
}

#[test]
pub fn complete_forward_matches_reference() {
    let (mut model, _, s, _) = trained_model(20, vec![32, 8]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // non-trivial running statistics
    for st in model.norms.input.iter_mut().chain(model.norms.hidden.iter_mut()) {
        st.running_mean.iter_mut().for_each(|m| *m = rng.random_range(-0.3..0.3));
        st.running_var.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
    }
    for sample in s.iter().take(200) {
        let hu = DenseMatrix::from_vec(3, 16, (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let hi = DenseMatrix::from_vec(3, 16, (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let got = complete_forward(&model, sample, &hu, &hi).unwrap();
        let want = reference_complete(&model, sample, &hu, &hi);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    let bad = DenseMatrix::zeros(2, 16);
    assert!(matches!(
        complete_forward(&model, &s[0], &bad, &bad),
        Err(Error::Config(_))
    ));
}

#[test]
pub fn batch_prediction_agrees_with_single_sample_forward() {
    let (model, hist, s, store) = trained_model(10, vec![16, 8]);
    let refs: Vec<&ImpressionSample> = s.iter().take(300).collect();
    let batch = model.predict_batch(&refs, HistorySource::Triples(&hist)).unwrap();
    for (p, sample) in batch.iter().zip(&refs) {
        let hu = store.lookup_history(Side::User, sample.user_id as u64).unwrap();
        let hi = store.lookup_history(Side::Item, sample.item_id as u64).unwrap();
        let one = complete_forward(&model, sample, &hu, &hi).unwrap();
        assert!((p - one).abs() < 1e-12);
    }
}

#[test]
pub fn tiny_forward_matches_reference() {
    let (world, s) = samples(Domain::Natural, 2000);
    let v = world.field_vocabs();
    let cfg = TinyConfig {
        vocabs: [v[0], v[1], v[2], v[3], v[4]],
        dim: 8,
        hidden: 12,
        learning_rate: 0.01,
    };
    let mut model = TinyModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(2));
    let refs: Vec<&ImpressionSample> = s.iter().collect();
    for b in refs.chunks(256) {
        model.train_batch(b).unwrap();
    }
    for sample in s.iter().take(300) {
        let mut x = Vec::new();
        for (t, id) in sample.key_fields().iter().enumerate() {
            x.extend_from_slice(model.tables[t].lookup(*id));
        }
        let l = model.mlp.layers();
        let h: Vec<f64> = affine(&x, &l[0].weight, &l[0].bias).into_iter().map(relu).collect();
        let want = sigmoid(affine(&h, &l[1].weight, &l[1].bias)[0]);
        let got = tiny_forward(&model, sample).unwrap();
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
pub fn tiny_snapshots_hold_only_seen_ids() {
    let (world, s) = samples(Domain::Natural, 500);
    let v = world.field_vocabs();
    let cfg = TinyConfig {
        vocabs: [v[0], v[1], v[2], v[3], v[4]],
        dim: 4,
        hidden: 4,
        learning_rate: 0.01,
    };
    let mut model = TinyModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(3));
    let refs: Vec<&ImpressionSample> = s.iter().collect();
    for b in refs.chunks(64) {
        model.train_batch(b).unwrap();
    }
    let snap = model.snapshot(Side::User, 2);
    let mut seen: Vec<u64> = s.iter().map(|x| x.user_id as u64).collect();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(snap.entries.keys().copied().collect::<Vec<_>>(), seen);
    assert_eq!(snap.month_tag, 2);
    for (id, v) in &snap.entries {
        let row = model.tables[0].lookup(*id as u32);
        assert!(v.iter().zip(row).all(|(a, b)| *a == *b as f32));
    }
}

#[test]
pub fn all_transfer_resets_bn_and_copies_everything_else_bitwise() {
    let (mut source, _, _, _) = trained_model(15, vec![16, 8]);
    source.round_to_f32();
    assert!(source.norms.iter().any(|bn| !bn.is_fresh()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cpm.ckpt");
    save_checkpoint(&source, &path).unwrap();
    let ckpt = load_checkpoint(&path).unwrap();

    let fresh = CompleteModel::new(source.config.clone(), &mut ChaCha8Rng::seed_from_u64(77));
    let out = transfer_parameters(&ckpt, fresh, TransferVariant::All).unwrap();
    assert!(out.norms.iter().all(|bn| bn.is_fresh()));
    assert!(out.adam.is_fresh());
    for (t, c) in out.tensors().iter().zip(ckpt.tensors()) {
        assert_eq!(t.name, c.name);
        if t.kind.is_bn() {
            continue;
        }
        let same = t.data.iter().zip(&c.data).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "{} differs from the checkpoint", t.name);
    }
}

#[test]
pub fn all_with_bn_transfer_reproduces_cpm_outputs() {
    let (mut source, hist, s, _) = trained_model(15, vec![16, 8]);
    source.round_to_f32();
    let fresh = CompleteModel::new(source.config.clone(), &mut ChaCha8Rng::seed_from_u64(78));
    let out = transfer_parameters(&source, fresh, TransferVariant::AllWithBn).unwrap();
    let refs: Vec<&ImpressionSample> = s.iter().take(500).collect();
    let a = source.predict_batch(&refs, HistorySource::Triples(&hist)).unwrap();
    let b = out.predict_batch(&refs, HistorySource::Triples(&hist)).unwrap();
    assert_eq!(a, b);
}

#[test]
pub fn partial_transfers_copy_only_their_kinds() {
    let (source, _, _, _) = trained_model(5, vec![16, 8]);
    for variant in [TransferVariant::EmbeddingsOnly, TransferVariant::MlpWoBn] {
        let fresh = CompleteModel::new(source.config.clone(), &mut ChaCha8Rng::seed_from_u64(79));
        let fresh_tensors = fresh.tensors();
        let out = transfer_parameters(&source, fresh, variant).unwrap();
        for ((t, src), init) in out.tensors().iter().zip(source.tensors()).zip(fresh_tensors) {
            let want = if variant.copies(t.kind) { &src.data } else { &init.data };
            if t.kind.is_bn() {
                continue;
            }
            assert_eq!(&t.data, want, "{variant:?} {}", t.name);
        }
        assert!(out.norms.iter().all(|bn| bn.is_fresh()));
    }
    assert!(TransferVariant::EmbeddingsOnly.copies(TensorKind::Embedding));
    assert!(!TransferVariant::EmbeddingsOnly.copies(TensorKind::Attention));
    assert!(TransferVariant::MlpWoBn.copies(TensorKind::MlpBias));
    assert!(!TransferVariant::MlpWoBn.copies(TensorKind::BnAffine));
}

#[test]
pub fn structural_mismatch_names_the_parameter() {
    let (source, _, _, _) = trained_model(1, vec![16, 8]);
    let mut cfg = source.config.clone();
    cfg.hidden = vec![16, 4];
    let other = CompleteModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(1));
    match transfer_parameters(&source, other, TransferVariant::All) {
        Err(Error::Transfer { param }) => assert_eq!(param, "mlp.1.weight"),
        other => panic!("expected transfer error, got {other:?}"),
    }
    let mut cfg = source.config.clone();
    cfg.shared_attention = true;
    let shared = CompleteModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(1));
    assert!(matches!(
        transfer_parameters(&source, shared, TransferVariant::All),
        Err(Error::Transfer { .. })
    ));
}

#[test]
pub fn checkpoint_round_trip_and_corruption() {
    let (mut model, _, _, _) = trained_model(5, vec![16, 8]);
    model.round_to_f32();
    let bytes = encode_checkpoint(&model).unwrap();
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back.tensors(), model.tensors());
    assert_eq!(back.config, model.config);
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(matches!(decode_checkpoint(&longer), Err(Error::Format { .. })));
    // snapshot kind byte
    let mut kind = bytes;
    kind[6] = 0;
    assert!(matches!(decode_checkpoint(&kind), Err(Error::Format { offset: 6, .. })));
}

#[test]
pub fn merged_tables_serve_the_same_scores() {
    let (model, hist, _, store) = trained_model(30, vec![32, 16]);
    let (world, _) = samples(Domain::Ad, 10);
    let w = gen_world(&world, 12).unwrap();
    let s = w.gen_impressions(Domain::Ad, 30..60, 10_000).unwrap();
    let refs: Vec<&ImpressionSample> = s.iter().collect();
    let user = store.merge_tables(Side::User, model.attention_for(0)).unwrap();
    let item = store.merge_tables(Side::Item, model.attention_for(1)).unwrap();
    let three = model.predict_batch(&refs, HistorySource::Triples(&hist)).unwrap();
    let merged = model
        .predict_batch(&refs, HistorySource::Merged { user: &user, item: &item })
        .unwrap();
    assert_eq!(three.len(), 10_000);
    let worst = three.iter().zip(&merged).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "max abs diff {worst}");
}
