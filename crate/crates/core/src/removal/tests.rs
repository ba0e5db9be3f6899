use super::*;
use crate::data::{Domain, SyntheticShapes};
use crate::nets::{EncoderSpec, Family, ParamKind};

fn encoder() -> Encoder {
    Encoder::build(&EncoderSpec::new(Family::TinyCnn, 16), 4).unwrap()
}

#[test]
fn slice_example() {
    let mut w = [0.5, -0.1, 0.3, -0.4];
    prune_slice(&mut w, 0.5);
    assert_eq!(w, [0.5, 0.0, 0.0, -0.4]);
}

#[test]
fn ties_follow_parameter_order() {
    let mut w = [0.2, -0.2, 0.2, 1.0];
    prune_slice(&mut w, 0.5);
    assert_eq!(w, [0.0, 0.0, 0.2, 1.0]);
}

#[test]
fn zero_ratio_is_identity() {
    let e = encoder();
    assert_eq!(prune(&e, 0.0).unwrap().params(), e.params());
}

#[test]
fn ratio_out_of_range() {
    assert!(matches!(prune(&encoder(), 1.0), Err(Error::Config(_))));
    assert!(matches!(prune(&encoder(), -0.1), Err(Error::Config(_))));
}

#[test]
fn only_conv_weights_change_and_counts_are_exact() {
    let e = encoder();
    let p = prune(&e, 0.3).unwrap();
    for (a, b) in e.params().iter().zip(p.params().iter()) {
        if a.kind == ParamKind::ConvWeight {
            let k = (0.3f64 * a.data.len() as f64).floor() as usize;
            let zeros = b.data.iter().filter(|v| **v == 0.0).count();
            assert_eq!(zeros, k, "{}", a.name);
        } else {
            assert_eq!(a.data, b.data, "{}", a.name);
        }
    }
}

#[test]
fn pruning_is_idempotent_and_monotone() {
    let e = encoder();
    let once = prune(&e, 0.4).unwrap();
    assert_eq!(prune(&once, 0.4).unwrap().params(), once.params());
    let nonzero = |enc: &Encoder| enc.params().iter().flat_map(|p| p.data.iter()).filter(|v| **v != 0.0).count();
    let counts: Vec<usize> = [0.1, 0.2, 0.3, 0.4, 0.5].iter().map(|&r| nonzero(&prune(&e, r).unwrap())).collect();
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
}

#[test]
fn finetune_edge_cases() {
    let victim = encoder();
    let handle = VictimHandle::from_encoder(&victim);
    let sur = Encoder::build(&EncoderSpec::new(Family::TinyCnn, 16), 9).unwrap();
    let empty = Dataset::new("empty", vec![], None).unwrap();
    let cfg = FinetuneConfig::default();
    assert!(matches!(finetune_under_victim(&sur, &handle, &empty, &cfg), Err(Error::Input(_))));
    let q = SyntheticShapes::new(Domain::Primary, 32).generate(32, 1);
    let none = FinetuneConfig { epochs: 0, ..cfg.clone() };
    assert_eq!(finetune_under_victim(&sur, &handle, &q, &none).unwrap().params(), sur.params());
    let some = FinetuneConfig { epochs: 2, batch_size: 16, ..cfg };
    assert_ne!(finetune_under_victim(&sur, &handle, &q, &some).unwrap().params(), sur.params());
}

#[test]
fn csv_layout() {
    let rows = vec![RemovalRow {
        encoder_id: "abc".into(),
        r: 0.3,
        finetuned: true,
        wr: 0.75,
        da: 0.5,
    }];
    assert_eq!(removal_csv(&rows), "encoder_id,r,finetuned,wr,da\nabc,0.3,1,0.7500,0.5000\n");
}
