use std::collections::BTreeMap;
use std::fs;

use proptest::prelude::*;

use super::*;
use crate::data::{Domain, SyntheticShapes};
use crate::tensor::Tensor;

fn images(n: usize) -> Vec<crate::data::Image> {
    SyntheticShapes::new(Domain::Primary, 32).generate(n, 1).images().to_vec()
}

#[test]
fn encoder_output_shapes() {
    let ims = images(5);
    for family in [Family::TinyCnn, Family::ResnetSmall, Family::ResnetWide] {
        let enc = Encoder::build(&EncoderSpec::new(family, 64), 3).unwrap();
        let f = enc.encode(&ims).unwrap();
        assert_eq!(f.shape(), (5, 64), "{}", family.as_str());
    }
    let wide = Encoder::build(&EncoderSpec::new(Family::ResnetWide, 96).with_adapter(64), 3).unwrap();
    assert_eq!(wide.encode(&ims).unwrap().shape(), (5, 64));
}

#[test]
fn build_is_deterministic_per_seed() {
    let spec = EncoderSpec::new(Family::ResnetSmall, 32);
    let a = Encoder::build(&spec, 11).unwrap();
    let b = Encoder::build(&spec, 11).unwrap();
    let c = Encoder::build(&spec, 12).unwrap();
    assert_eq!(a.params().digest(), b.params().digest());
    assert_ne!(a.params().digest(), c.params().digest());
}

#[test]
fn wrong_input_shape_is_rejected() {
    let enc = Encoder::build(&EncoderSpec::new(Family::TinyCnn, 16), 0).unwrap();
    let x = Tensor::zeros(&[2, 3, 16, 16]);
    assert!(matches!(enc.encode_tensor(&x), Err(Error::Input(_))));
}

#[test]
fn frozen_batchnorm_keeps_statistics_and_scales() {
    let mut enc = Encoder::build(&EncoderSpec::new(Family::TinyCnn, 16), 0)
        .unwrap()
        .freeze_batchnorm();
    assert!(enc.norm_frozen());
    assert!(enc
        .params()
        .iter()
        .filter(|p| p.kind.is_norm())
        .all(|p| !p.trainable));
    let before = enc.params().clone();
    let x = crate::data::images_to_tensor(&images(4)).unwrap();
    let (out, bound, upd) = enc.forward_train(&x);
    enc.apply_norm_updates(upd);
    assert_eq!(enc.params(), &before);
    // frozen layers behave as in inference
    let eval = enc.apply(&x);
    assert_eq!(out.data(), eval.data());
    let mut g = out.sum_all().backward();
    let grads = bound.grads(&mut g);
    for (p, g) in enc.params().iter().zip(&grads) {
        assert_eq!(p.trainable, g.is_some(), "{}", p.name);
    }
}

#[test]
fn training_pass_updates_running_statistics() {
    let mut enc = Encoder::build(&EncoderSpec::new(Family::TinyCnn, 16), 0).unwrap();
    let x = crate::data::images_to_tensor(&images(4)).unwrap();
    let (_, _, upd) = enc.forward_train(&x);
    assert!(!upd.is_empty());
    let idx = enc.params().index_of("features.0.bn.running_mean").unwrap();
    let before = enc.params().get(idx).data.clone();
    enc.apply_norm_updates(upd);
    assert_ne!(enc.params().get(idx).data, before);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let enc = Encoder::build(&EncoderSpec::new(Family::ResnetSmall, 32).with_adapter(16), 4)
        .unwrap()
        .freeze_batchnorm();
    let mut prov = BTreeMap::new();
    prov.insert("role".to_string(), "victim".to_string());
    let m = Checkpoint::save_encoder(dir.path(), &enc, prov).unwrap();
    let (back, m2) = Checkpoint::load_encoder_with_manifest(dir.path()).unwrap();
    assert_eq!(m, m2);
    assert_eq!(back.params().to_le_bytes(), enc.params().to_le_bytes());
    assert!(back.norm_frozen());
    let ims = images(3);
    assert_eq!(back.encode(&ims).unwrap(), enc.encode(&ims).unwrap());
    assert_eq!(Checkpoint::digest(dir.path()).unwrap(), m.blob_sha256);
}

#[test]
fn truncated_blob_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let enc = Encoder::build(&EncoderSpec::new(Family::TinyCnn, 16), 0).unwrap();
    Checkpoint::save_encoder(dir.path(), &enc, BTreeMap::new()).unwrap();
    let blob = dir.path().join("params.bin");
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
    match Checkpoint::load_encoder(dir.path()) {
        Err(Error::Integrity { field, .. }) => assert_eq!(field, "params.bin"),
        other => panic!("expected integrity error, got {other:?}"),
    }
}

#[test]
fn corrupted_blob_fails_digest() {
    let dir = tempfile::tempdir().unwrap();
    let enc = Encoder::build(&EncoderSpec::new(Family::TinyCnn, 16), 0).unwrap();
    Checkpoint::save_encoder(dir.path(), &enc, BTreeMap::new()).unwrap();
    let blob = dir.path().join("params.bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes[10] ^= 1;
    fs::write(&blob, &bytes).unwrap();
    assert!(matches!(Checkpoint::load_encoder(dir.path()), Err(Error::Integrity { .. })));
}

#[test]
fn decoder_shapes_and_width_check() {
    let dec = Decoder::build(&DecoderSpec::scaled(512, 128), 0).unwrap();
    assert_eq!(dec.mlp().spec().layer_widths, vec![512, 256, 128]);
    let f = FeatureBatch::new(4, 512, vec![0.1; 4 * 512]).unwrap();
    assert_eq!(dec.decode(&f).unwrap().shape(), (4, 128));
    let bad = FeatureBatch::new(4, 64, vec![0.1; 4 * 64]).unwrap();
    assert!(matches!(dec.decode(&bad), Err(Error::Input(_))));
}

#[test]
fn mlp_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mlp = Mlp::build(&DecoderSpec::scaled(64, 128), 9).unwrap();
    Checkpoint::save_mlp(dir.path(), &mlp, BTreeMap::new()).unwrap();
    let back = Checkpoint::load_mlp(dir.path()).unwrap();
    assert_eq!(back.params(), mlp.params());
    assert!(Checkpoint::load_encoder(dir.path()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn flatten_unflatten_round_trip(seed in 0u64..1000, scale in -3.0f32..3.0) {
        let mlp = Mlp::build(&DecoderSpec::scaled(16, 8), seed).unwrap();
        let mut p = mlp.params().clone();
        let flat: Vec<f32> = p.flatten().iter().map(|v| v * scale).collect();
        p.unflatten(&flat).unwrap();
        prop_assert_eq!(p.flatten(), flat);
        prop_assert!(p.unflatten(&[0.0; 3]).is_err());
    }
}
