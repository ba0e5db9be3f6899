use super::*;
use crate::data::{Domain, SyntheticShapes};
use crate::nets::{Family, FeatureBatch};

fn small_spec() -> EncoderSpec {
    EncoderSpec::new(Family::TinyCnn, 16)
}

fn stack(seed: u64) -> Stack {
    let enc = Encoder::build(&small_spec(), seed).unwrap();
    Stack::new(enc, vec![projection_head(16, seed + 1).unwrap()])
}

fn batch(n: usize, seed: u64) -> Tensor {
    let ds = SyntheticShapes::new(Domain::Primary, 32).generate(n, seed);
    images_to_tensor(ds.images()).unwrap()
}

#[test]
fn ntxent_rejects_single_pair() {
    let z = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
    assert!(matches!(ntxent_loss(&z, 0.5), Err(Error::Input(_))));
}

#[test]
fn ntxent_ignores_row_scale() {
    let data = vec![0.3, -0.2, 0.9, 0.1, 0.5, 0.4, -0.7, 0.2, 0.0, 1.0, 0.6, -0.3];
    let a = ntxent_loss(&Tensor::new(data.clone(), &[4, 3]), 0.5).unwrap().item();
    let scaled: Vec<f32> = data.iter().enumerate().map(|(i, v)| v * (1.0 + (i / 3) as f32 * 2.0)).collect();
    let b = ntxent_loss(&Tensor::new(scaled, &[4, 3]), 0.5).unwrap().item();
    assert!((a - b).abs() < 1e-6);
    assert!(a >= 0.0);
}

#[test]
fn queue_keeps_size_and_unit_norm() {
    let keys = FeatureBatch::new(4, 2, vec![2.0, 0.0, 0.0, 3.0, 1.0, 1.0, -1.0, 0.0]).unwrap();
    let mut q = FeatureQueue::from_keys(&keys).unwrap();
    q.enqueue(&Tensor::new(vec![0.0, 5.0, 4.0, 3.0], &[2, 2])).unwrap();
    assert_eq!(q.len(), 4);
    let k = q.keys();
    for i in 0..4 {
        let n: f32 = k.row(i).iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-6);
    }
    // the two oldest keys were replaced
    assert_eq!(k.row(0), &[0.0, 1.0]);
    assert_eq!(k.row(1), &[0.8, 0.6]);
    assert!(matches!(
        q.enqueue(&Tensor::new(vec![1.0; 6], &[3, 2])),
        Err(Error::Config(_))
    ));
}

fn moco_fixture(m: f32) -> (Stack, Stack, Stack, FeatureQueue) {
    let query = stack(3);
    let key = stack(4);
    let keys_before = key.clone();
    let mut rows = Vec::new();
    for i in 0..8 {
        rows.extend((0..8).map(|j| ((i * 8 + j) as f32 * 0.37).sin()));
    }
    let queue = FeatureQueue::from_keys(&FeatureBatch::new(8, 8, rows).unwrap()).unwrap();
    let _ = m;
    (query, key, keys_before, queue)
}

#[test]
fn moco_momentum_endpoints() {
    let x = batch(4, 1);
    let (mut q, mut k, before, mut queue) = moco_fixture(1.0);
    let mut opt = StackOptim::new(&q, 0.05, 0.0, 0.0);
    moco_step(&mut q, &mut k, &mut queue, &x, &x, 1.0, 0.2, &mut opt).unwrap();
    assert_eq!(k.encoder.params(), before.encoder.params());
    assert_eq!(k.heads[0].params(), before.heads[0].params());

    let (mut q, mut k, _, mut queue) = moco_fixture(0.0);
    let mut opt = StackOptim::new(&q, 0.05, 0.0, 0.0);
    moco_step(&mut q, &mut k, &mut queue, &x, &x, 0.0, 0.2, &mut opt).unwrap();
    assert_eq!(k.encoder.params().flatten(), q.encoder.params().flatten());
    assert_eq!(k.heads[0].params().flatten(), q.heads[0].params().flatten());
}

#[test]
fn moco_ema_is_convex() {
    let x = batch(4, 1);
    let (mut q, mut k, before, mut queue) = moco_fixture(0.7);
    let mut opt = StackOptim::new(&q, 0.05, 0.0, 0.0);
    moco_step(&mut q, &mut k, &mut queue, &x, &x, 0.7, 0.2, &mut opt).unwrap();
    let (old, new, online) = (before.encoder.params().flatten(), k.encoder.params().flatten(), q.encoder.params().flatten());
    for ((o, n), t) in old.iter().zip(&new).zip(&online) {
        let (lo, hi) = (o.min(*t), o.max(*t));
        assert!(*n >= lo - 1e-6 && *n <= hi + 1e-6);
    }
    assert_eq!(queue.len(), 8);
}

#[test]
fn moco_rejects_incompatible_batch() {
    let x = batch(3, 1);
    let (mut q, mut k, _, mut queue) = moco_fixture(0.9);
    let mut opt = StackOptim::new(&q, 0.05, 0.0, 0.0);
    let r = moco_step(&mut q, &mut k, &mut queue, &x, &x, 0.9, 0.2, &mut opt);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn byol_branch_endpoints() {
    let p = Tensor::new(vec![1.0, 2.0, -1.0, 0.5], &[2, 2]);
    let z = Tensor::new(vec![2.0, 4.0, -3.0, 1.5], &[2, 2]);
    assert!(byol_branch_loss(&p, &z).unwrap().item().abs() < 1e-6);
    let z = Tensor::new(vec![-2.0, -4.0, 3.0, -1.5], &[2, 2]);
    assert!((byol_branch_loss(&p, &z).unwrap().item() - 4.0).abs() < 1e-5);
}

fn cos64(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn byol_step_matches_loss_recomputation() {
    let enc = Encoder::build(&small_spec(), 5).unwrap();
    let mut online = Stack::new(enc.clone(), vec![projection_head(16, 6).unwrap(), predictor_head(16, 7).unwrap()]);
    let mut target = Stack::new(enc, vec![online.heads[0].clone()]);
    let (v1, v2) = (batch(4, 2), batch(4, 3));
    let both = Tensor::cat_rows(&[v1.clone(), v2.clone()]);
    let (p, _) = online.forward(&both, true, false);
    let (z, _) = target.forward(&both, true, false);
    let w = p.shape()[1];
    let row = |t: &Tensor, i: usize| t.data()[i * w..(i + 1) * w].to_vec();
    let mut expected = 0.0f64;
    for i in 0..4 {
        expected += (2.0 - 2.0 * cos64(&row(&p, i), &row(&z, i + 4))) / 4.0;
        expected += (2.0 - 2.0 * cos64(&row(&p, i + 4), &row(&z, i))) / 4.0;
    }
    let mut opt = StackOptim::new(&online, 0.01, 0.0, 0.0);
    let loss = byol_step(&mut online, &mut target, &v1, &v2, 0.9, &mut opt).unwrap();
    assert!(((loss as f64 - expected) / expected).abs() < 1e-5, "{loss} vs {expected}");
}

#[test]
fn simclr_pretraining_reduces_loss_and_is_deterministic() {
    let ds = SyntheticShapes::new(Domain::Primary, 32).generate(128, 4);
    let cfg = SslConfig {
        epochs: 4,
        batch_size: 32,
        queue_size: 64,
        ..SslConfig::default()
    };
    let a = pretrain(&ds, &small_spec(), &cfg, 9).unwrap();
    assert!(a.epoch_losses.last().unwrap() < a.epoch_losses.first().unwrap(), "{:?}", a.epoch_losses);
    let b = pretrain(&ds, &small_spec(), &cfg, 9).unwrap();
    assert_eq!(a.encoder.params().digest(), b.encoder.params().digest());
}

#[test]
fn moco_and_byol_pretraining_run() {
    let ds = SyntheticShapes::new(Domain::Primary, 32).generate(64, 4);
    for algorithm in [Algorithm::MocoV2, Algorithm::Byol] {
        let cfg = SslConfig {
            algorithm,
            epochs: 2,
            batch_size: 16,
            queue_size: 64,
            ..SslConfig::default()
        };
        let out = pretrain(&ds, &small_spec(), &cfg, 1).unwrap();
        assert_eq!(out.epoch_losses.len(), 2);
        assert!(out.epoch_losses.iter().all(|l| l.is_finite()));
    }
}

#[test]
fn empty_dataset_is_rejected() {
    let ds = Dataset::new("empty", vec![], None).unwrap();
    assert!(matches!(
        pretrain(&ds, &small_spec(), &SslConfig::default(), 0),
        Err(Error::Input(_))
    ));
}
