use crate::error::{ensure, Result};
use crate::nets::{Decoder, Encoder};
use crate::tensor::Tensor;

/// Per-row cosine between decoded keys `[B, m]` and the secret key.
pub fn key_cosines(decoded: &Tensor, sk: &[f32]) -> Tensor {
    let (b, m) = decoded.dims2();
    assert_eq!(m, sk.len(), "decoded key width differs from sk");
    let mut rep = Vec::with_capacity(b * m);
    for _ in 0..b {
        rep.extend_from_slice(sk);
    }
    decoded.cosine_rows(&Tensor::new(rep, &[b, m]))
}

/// `-mean cos(decoded, sk)`.
pub fn corr_from_decoded(decoded: &Tensor, sk: &[f32]) -> Tensor {
    key_cosines(decoded, sk).mean_all().neg()
}

/// `(mean cos(decoded, sk))^2`: the mean is taken before squaring, so
/// opposite-signed similarities cancel.
pub fn uncorr_from_decoded(decoded: &Tensor, sk: &[f32]) -> Tensor {
    key_cosines(decoded, sk).mean_all().sqr()
}

/// `-mean cos(a, b)` over rows.
pub fn match_from_features(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure!(a.shape() == b.shape(), Input, "feature shapes differ: {:?} vs {:?}", a.shape(), b.shape());
    Ok(a.cosine_rows(b).mean_all().neg())
}

fn decode(batch: &Tensor, enc: &Encoder, dec: &Decoder) -> Result<Tensor> {
    enc.check_input(batch.shape())?;
    dec.mlp().check_input(enc.output_dim())?;
    Ok(dec.mlp().apply(&enc.apply(batch)))
}

/// Correlated loss of a batch under inference-mode networks. Gradients flow
/// to the batch (e.g. through a trigger) only.
pub fn corr_loss(batch: &Tensor, enc: &Encoder, dec: &Decoder, sk: &[f32]) -> Result<Tensor> {
    Ok(corr_from_decoded(&decode(batch, enc, dec)?, sk))
}

pub fn uncorr_loss(batch: &Tensor, enc: &Encoder, dec: &Decoder, sk: &[f32]) -> Result<Tensor> {
    Ok(uncorr_from_decoded(&decode(batch, enc, dec)?, sk))
}

pub fn match_loss(batch: &Tensor, e1: &Encoder, e2: &Encoder) -> Result<Tensor> {
    e1.check_input(batch.shape())?;
    e2.check_input(batch.shape())?;
    ensure!(
        e1.output_dim() == e2.output_dim(),
        Input,
        "encoder widths differ: {} vs {}",
        e1.output_dim(),
        e2.output_dim()
    );
    match_from_features(&e1.apply(batch), &e2.apply(batch))
}
