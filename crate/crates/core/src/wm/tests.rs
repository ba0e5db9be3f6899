use std::collections::BTreeMap;

use rand::Rng;

use super::*;
use crate::data::{images_to_tensor, Domain, SyntheticShapes};
use crate::nets::{Decoder, DecoderSpec, Encoder, EncoderSpec, Family};

const SHAPE: (usize, usize, usize) = (32, 32, 3);

#[test]
fn default_mask_is_19_square() {
    let m = make_mask(SHAPE, 0.35).unwrap();
    assert_eq!(m.side, 19);
    assert!((m.coverage() - 361.0 / 1024.0).abs() < 1e-6);
    assert!((m.coverage() - 0.35).abs() <= 0.02);
    // bottom-right placement
    assert_eq!(m.data[31 * 32 + 31], 1.0);
    assert_eq!(m.data[12 * 32 + 12], 0.0);
    assert_eq!(m.data[13 * 32 + 13], 1.0);
    assert_eq!(m, make_mask(SHAPE, 0.35).unwrap());
}

#[test]
fn full_coverage_and_oversize() {
    let m = make_mask(SHAPE, 1.0).unwrap();
    assert!(m.data.iter().all(|&v| v == 1.0));
    assert!(matches!(make_mask((8, 16, 3), 0.9), Err(Error::Config(_))));
    assert!(make_mask(SHAPE, 0.0).is_err());
}

#[test]
fn trigger_blend_arithmetic() {
    let x = Image::filled(32, 32, 3, 0.2);
    let t = Trigger::from_data(SHAPE, vec![0.8; 3 * 1024]).unwrap();
    let m = make_mask(SHAPE, 0.35).unwrap();
    let y = apply_trigger(&x, &t, &m).unwrap();
    for (i, (&v, &mk)) in y.data().iter().zip(&m.data).enumerate() {
        if mk == 1.0 {
            assert_eq!(v, 0.8, "pixel {i}");
        } else {
            assert_eq!(v.to_bits(), 0.2f32.to_bits(), "pixel {i}");
        }
    }
    let expected = 0.2 + 0.6 * (361.0 / 1024.0);
    assert!((y.mean() - expected).abs() < 1e-5);

    let zero = Mask {
        shape: SHAPE,
        side: 0,
        data: vec![0.0; 3 * 1024],
    };
    assert_eq!(apply_trigger(&x, &t, &zero).unwrap(), x);
    let one = make_mask(SHAPE, 1.0).unwrap();
    assert_eq!(apply_trigger(&x, &t, &one).unwrap().data(), &t.data[..]);
    let small = Image::filled(16, 16, 3, 0.0);
    assert!(matches!(apply_trigger(&small, &t, &m), Err(Error::Input(_))));
}

#[test]
fn trigger_pixels_outside_mask_are_untouched() {
    let (x, _) = SyntheticShapes::new(Domain::Primary, 32).render(3, 5);
    let t = Trigger::random(SHAPE, 9);
    let m = make_mask(SHAPE, 0.35).unwrap();
    let y = apply_trigger(&x, &t, &m).unwrap();
    for ((a, b), &mk) in x.data().iter().zip(y.data()).zip(&m.data) {
        if mk == 0.0 {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
    assert!(t.data.iter().all(|v| (0.0..1.0).contains(v)));
}

#[test]
fn secret_keys_are_unit_and_nearly_orthogonal() {
    let a = sample_sk(128, 1).unwrap();
    assert_eq!(a, sample_sk(128, 1).unwrap());
    let norm: f64 = a.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-6);
    // per pair P(|cos| >= 0.3) is below 1e-3 at m = 128
    let mut over = 0;
    for s in 0..1000u64 {
        let u = sample_sk(128, 2 * s + 10).unwrap();
        let v = sample_sk(128, 2 * s + 11).unwrap();
        let c: f32 = u.iter().zip(&v).map(|(p, q)| p * q).sum();
        over += (c.abs() >= 0.3) as usize;
    }
    assert!(over <= 5, "{over} of 1000 pairs reach |cos| 0.3");
    assert!(sample_sk(4, 0).is_err());
}

fn decoded(rows: &[&[f32]]) -> Tensor {
    let m = rows[0].len();
    Tensor::new(rows.iter().flat_map(|r| r.iter().copied()).collect(), &[rows.len(), m])
}

#[test]
fn loss_primitive_values() {
    let sk = [1.0, 0.0];
    let aligned = decoded(&[&[3.0, 0.0], &[0.5, 0.0]]);
    let ortho = decoded(&[&[0.0, 2.0], &[0.0, -1.0]]);
    let half = decoded(&[&[1.0, 0.0], &[0.0, 1.0]]);
    assert!((corr_from_decoded(&aligned, &sk).item() + 1.0).abs() < 1e-6);
    assert!(corr_from_decoded(&ortho, &sk).item().abs() < 1e-6);
    assert!((corr_from_decoded(&half, &sk).item() + 0.5).abs() < 1e-6);

    assert!(uncorr_from_decoded(&ortho, &sk).item().abs() < 1e-6);
    assert!((uncorr_from_decoded(&aligned, &sk).item() - 1.0).abs() < 1e-6);
    let cancel = decoded(&[&[0.6, 0.8], &[-0.6, 0.8]]);
    assert!(uncorr_from_decoded(&cancel, &sk).item().abs() < 1e-6);

    let a = decoded(&[&[1.0, 2.0], &[-1.0, 0.5]]);
    assert!((match_from_features(&a, &a).unwrap().item() + 1.0).abs() < 1e-6);
    assert!((match_from_features(&a, &a.neg()).unwrap().item() - 1.0).abs() < 1e-6);
    let b = decoded(&[&[-2.0, 1.0], &[0.5, 1.0]]);
    assert!(match_from_features(&a, &b).unwrap().item().abs() < 1e-6);
    assert!(match_from_features(&a, &decoded(&[&[1.0, 2.0, 3.0]])).is_err());
}

#[test]
fn watermark_rate_cases() {
    assert_eq!(watermark_rate(&[0.9; 10], 0.5), 1.0);
    assert_eq!(watermark_rate(&[0.9, 0.1], 0.5), 0.5);
    let sims = [0.2, -0.4, 0.7, 0.51, 0.5];
    assert_eq!(watermark_rate(&sims, -1.0), 1.0);
    let mut prev = 1.0;
    for i in 0..=20 {
        let th = -1.0 + 0.1 * i as f32;
        let wr = watermark_rate(&sims, th);
        assert!(wr <= prev);
        prev = wr;
    }
    // WR exactly at th_v is not enough
    let r = crate::eval::WatermarkReport::from_similarities(vec![0.9, 0.1], 0.5, 0.5);
    assert_eq!(r.wr, 0.5);
    assert!(!r.verdict);
}

fn toy_key(seed: u64) -> (Encoder, KeyTuple) {
    let enc = Encoder::build(&EncoderSpec::new(Family::TinyCnn, 16), seed).unwrap();
    let dec = Decoder::build(&DecoderSpec::scaled(16, 16), seed + 1).unwrap();
    let ds = SyntheticShapes::new(Domain::Primary, 32).generate(6, seed);
    let key = KeyTuple::new(
        ds.images().to_vec(),
        Trigger::random(SHAPE, seed),
        make_mask(SHAPE, 0.35).unwrap(),
        dec,
        sample_sk(16, seed).unwrap(),
        0.5,
        0.5,
    )
    .unwrap();
    (enc, key)
}

#[test]
fn verification_is_invariant_to_key_scale() {
    let (enc, mut key) = toy_key(3);
    let base = extract(&enc, &key).unwrap();
    assert_eq!(base.len(), 6);
    assert!(base.iter().all(|s| (-1.0..=1.0).contains(s)));
    for v in key.sk.iter_mut() {
        *v *= 7.5;
    }
    let scaled = extract(&enc, &key).unwrap();
    for (a, b) in base.iter().zip(&scaled) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn extract_rejects_width_mismatch() {
    let (_, key) = toy_key(3);
    let wide = Encoder::build(&EncoderSpec::new(Family::TinyCnn, 32), 0).unwrap();
    assert!(matches!(extract(&wide, &key), Err(Error::Input(_))));
}

#[test]
fn key_tuple_round_trip() {
    let (enc, key) = toy_key(4);
    let dir = tempfile::tempdir().unwrap();
    let mut prov = BTreeMap::new();
    prov.insert("run".into(), "test".into());
    key.save(dir.path(), prov).unwrap();
    let (back, manifest) = KeyTuple::load_with_manifest(dir.path()).unwrap();
    assert_eq!(manifest.num_samples, 6);
    assert_eq!(back.id(), key.id());
    assert_eq!(back.sk, key.sk);
    assert_eq!(back.verification, key.verification);
    assert_eq!(extract(&enc, &back).unwrap(), extract(&enc, &key).unwrap());

    let path = dir.path().join("trigger.bin");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&path, bytes).unwrap();
    match KeyTuple::load(dir.path()) {
        Err(Error::Integrity { field, .. }) => assert_eq!(field, "trigger.bin"),
        other => panic!("expected integrity error, got {other:?}"),
    }
}

/// Directional finite differences of the correlated loss with respect to
/// the trigger, through a real encoder and decoder.
#[test]
fn corr_loss_trigger_gradient() {
    let enc = Encoder::build(&EncoderSpec::new(Family::TinyCnn, 16), 1).unwrap().freeze_batchnorm();
    let dec = Decoder::build(&DecoderSpec::scaled(16, 16), 2).unwrap();
    let sk = sample_sk(16, 3).unwrap();
    let mask = make_mask(SHAPE, 0.35).unwrap();
    let ds = SyntheticShapes::new(Domain::Primary, 32).generate(2, 8);
    let x = images_to_tensor(ds.images()).unwrap();
    let trig = Trigger::random(SHAPE, 4);
    let loss_at = |data: &[f32], track: bool| {
        let t = Trigger::from_data(SHAPE, data.to_vec()).unwrap().to_tensor(track);
        let l = corr_loss(&x.blend(&t, &mask.data), &enc, &dec, &sk).unwrap();
        (l, t)
    };
    let (l, t) = loss_at(&trig.data, true);
    let g = l.backward().get(&t).unwrap().to_vec();
    // gradient is confined to the patch
    for (gv, &m) in g.iter().zip(&mask.data) {
        if m == 0.0 {
            assert_eq!(*gv, 0.0);
        }
    }
    // directions follow sign(g) with random magnitudes, so the directional
    // derivative is large compared with f32 roundoff in the loss
    let mut rng = crate::rng::rng_from(11);
    for _ in 0..3 {
        let dir: Vec<f32> = g
            .iter()
            .zip(&mask.data)
            .map(|(gv, &m)| m * gv.signum() * rng.gen_range(0.25f32..1.0))
            .collect();
        let shifted = |s: f32| -> f64 {
            let d: Vec<f32> = trig.data.iter().zip(&dir).map(|(t, v)| t + s * v).collect();
            loss_at(&d, false).0.item() as f64
        };
        let eps = 3e-4f32;
        let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps as f64);
        let an: f64 = g.iter().zip(&dir).map(|(a, b)| *a as f64 * *b as f64).sum();
        let rel = (fd - an).abs() / an.abs();
        assert!(rel < 1e-3, "directional derivative: fd {fd} analytic {an} rel {rel}");
    }
}
