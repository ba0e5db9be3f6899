use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::{Bound, ParamKind, ParamVector};
use crate::tensor::Tensor;

pub(crate) const BN_EPS: f32 = 1e-5;
pub(crate) const BN_MOMENTUM: f32 = 0.1;

/// Batch statistics collected by normalization layers during a training pass.
#[derive(Debug, Default)]
pub struct NormUpdates {
    entries: Vec<NormStat>,
}

#[derive(Debug)]
struct NormStat {
    mean_idx: usize,
    var_idx: usize,
    mean: Vec<f32>,
    var: Vec<f32>,
    count: usize,
}

impl NormUpdates {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fold batch statistics into running buffers: `r <- (1 - m) r + m b`,
    /// with the variance bias-corrected by `n / (n - 1)`.
    pub(crate) fn apply(self, params: &mut ParamVector) {
        for s in self.entries {
            let corr = if s.count > 1 {
                s.count as f32 / (s.count - 1) as f32
            } else {
                1.0
            };
            let rm = &mut params.get_mut(s.mean_idx).data;
            for (r, b) in rm.iter_mut().zip(&s.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
            let rv = &mut params.get_mut(s.var_idx).data;
            for (r, b) in rv.iter_mut().zip(&s.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b * corr;
            }
        }
    }
}

/// State threaded through one forward pass.
pub struct Forward<'a> {
    bound: &'a Bound,
    params: &'a ParamVector,
    train: bool,
    updates: NormUpdates,
}

impl<'a> Forward<'a> {
    pub fn new(params: &'a ParamVector, bound: &'a Bound, train: bool) -> Self {
        Self {
            bound,
            params,
            train,
            updates: NormUpdates::default(),
        }
    }

    pub fn t(&self, idx: usize) -> &Tensor {
        self.bound.tensor(idx)
    }

    pub fn into_updates(self) -> NormUpdates {
        self.updates
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new<R: Rng>(
        ps: &mut ParamVector,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        let fan_in = cin * k * k;
        let w = ps.push(
            format!("{name}.weight"),
            ParamKind::ConvWeight,
            vec![cout, cin, k, k],
            he_normal(rng, fan_in, cout * fan_in),
        );
        let b = ps.push(format!("{name}.bias"), ParamKind::Bias, vec![cout], vec![0.0; cout]);
        Self {
            w,
            b,
            stride,
            pad: k / 2,
        }
    }

    pub fn forward(&self, x: &Tensor, f: &Forward) -> Tensor {
        x.conv2d(f.t(self.w), f.t(self.b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Norm {
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
}

impl Norm {
    pub fn new(ps: &mut ParamVector, name: &str, c: usize) -> Self {
        Self {
            gamma: ps.push(format!("{name}.weight"), ParamKind::NormScale, vec![c], vec![1.0; c]),
            beta: ps.push(format!("{name}.bias"), ParamKind::NormShift, vec![c], vec![0.0; c]),
            mean: ps.push(format!("{name}.running_mean"), ParamKind::RunningMean, vec![c], vec![0.0; c]),
            var: ps.push(format!("{name}.running_var"), ParamKind::RunningVar, vec![c], vec![1.0; c]),
        }
    }

    /// `frozen` forces stored statistics even in a training pass.
    pub fn forward(&self, x: &Tensor, f: &mut Forward, frozen: bool) -> Tensor {
        let use_batch = f.train && !frozen;
        let running = (!use_batch).then(|| {
            (
                f.params.get(self.mean).data.as_slice(),
                f.params.get(self.var).data.as_slice(),
            )
        });
        let out = x.batch_norm(f.t(self.gamma), f.t(self.beta), running, BN_EPS);
        if let Some((mean, var)) = out.batch_stats {
            let shape = x.shape();
            let count = shape[0] * shape[2..].iter().product::<usize>();
            f.updates.entries.push(NormStat {
                mean_idx: self.mean,
                var_idx: self.var,
                mean,
                var,
                count,
            });
        }
        out.out
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new<R: Rng>(ps: &mut ParamVector, rng: &mut R, name: &str, din: usize, dout: usize) -> Self {
        Self {
            w: ps.push(
                format!("{name}.weight"),
                ParamKind::LinearWeight,
                vec![dout, din],
                he_normal(rng, din, din * dout),
            ),
            b: ps.push(format!("{name}.bias"), ParamKind::Bias, vec![dout], vec![0.0; dout]),
        }
    }

    pub fn forward(&self, x: &Tensor, f: &Forward) -> Tensor {
        x.linear(f.t(self.w), f.t(self.b))
    }
}

fn he_normal<R: Rng>(rng: &mut R, fan_in: usize, n: usize) -> Vec<f32> {
    let std = (2.0 / fan_in as f32).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng)).collect()
}
