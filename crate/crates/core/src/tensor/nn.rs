//! Fused neural-network ops with hand-written backward passes.

use super::Tensor;

/// Guard inside every norm denominator.
pub const NORM_EPS: f32 = 1e-12;

pub struct BatchNormOutput {
    pub out: Tensor,
    /// Per-channel batch mean and biased variance; present in training mode.
    pub batch_stats: Option<(Vec<f32>, Vec<f32>)>,
}

fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "batch_norm expects [N, C, ...]");
    let n = shape[0];
    let c = shape[1];
    let spatial = shape[2..].iter().product::<usize>();
    (n, c, spatial)
}

impl Tensor {
    /// Batch normalization over every axis but the channel axis (axis 1).
    ///
    /// With `running = Some((mean, var))` the stored statistics are used and
    /// no batch statistics are returned.
    pub fn batch_norm(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        running: Option<(&[f32], &[f32])>,
        eps: f32,
    ) -> BatchNormOutput {
        let (n, c, sp) = channel_layout(self.shape());
        assert_eq!(gamma.shape(), [c]);
        assert_eq!(beta.shape(), [c]);
        let x = self.data();
        let m = (n * sp) as f64;
        let (mean, var, stats) = match running {
            Some((rm, rv)) => (rm.to_vec(), rv.to_vec(), None),
            None => {
                let mut mean = vec![0.0f32; c];
                let mut var = vec![0.0f32; c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for ni in 0..n {
                        s += x[(ni * c + ch) * sp..(ni * c + ch + 1) * sp]
                            .iter()
                            .map(|&v| v as f64)
                            .sum::<f64>();
                    }
                    let mu = s / m;
                    let mut ss = 0.0f64;
                    for ni in 0..n {
                        ss += x[(ni * c + ch) * sp..(ni * c + ch + 1) * sp]
                            .iter()
                            .map(|&v| (v as f64 - mu).powi(2))
                            .sum::<f64>();
                    }
                    mean[ch] = mu as f32;
                    var[ch] = (ss / m) as f32;
                }
                (mean.clone(), var.clone(), Some((mean, var)))
            }
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0f32; x.len()];
        let mut out = vec![0.0f32; x.len()];
        for ni in 0..n {
            for ch in 0..c {
                let r = (ni * c + ch) * sp..(ni * c + ch + 1) * sp;
                let (g, b) = (gamma.data()[ch], beta.data()[ch]);
                for i in r {
                    let h = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g * h + b;
                }
            }
        }
        let training = stats.is_some();
        let parents = vec![self.clone(), gamma.clone(), beta.clone()];
        let out = Tensor::from_op(out, self.shape().to_vec(), parents, move |g, ps| {
            let gamma = ps[1].data();
            let mut dgamma = vec![0.0f64; c];
            let mut dbeta = vec![0.0f64; c];
            for ni in 0..n {
                for ch in 0..c {
                    for i in (ni * c + ch) * sp..(ni * c + ch + 1) * sp {
                        dgamma[ch] += (g[i] * xhat[i]) as f64;
                        dbeta[ch] += g[i] as f64;
                    }
                }
            }
            let dx = ps[0].requires_grad().then(|| {
                let mut dx = vec![0.0f32; g.len()];
                for ch in 0..c {
                    let k = gamma[ch] * inv_std[ch];
                    // mean(dxhat) and mean(dxhat * xhat) are dbeta, dgamma scaled by gamma / m
                    let mean_d = (dbeta[ch] / m) as f32;
                    let mean_dx = (dgamma[ch] / m) as f32;
                    for ni in 0..n {
                        for i in (ni * c + ch) * sp..(ni * c + ch + 1) * sp {
                            dx[i] = if training {
                                k * (g[i] - mean_d - xhat[i] * mean_dx)
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
                dx
            });
            let dgamma = ps[1]
                .requires_grad()
                .then(|| dgamma.iter().map(|&v| v as f32).collect());
            let dbeta = ps[2]
                .requires_grad()
                .then(|| dbeta.iter().map(|&v| v as f32).collect());
            vec![dx, dgamma, dbeta]
        });
        BatchNormOutput {
            out,
            batch_stats: stats,
        }
    }

    /// Scale each row of a matrix to unit L2 norm.
    pub fn normalize_rows(&self) -> Tensor {
        let (n, d) = self.dims2();
        let norms: Vec<f32> = self
            .data()
            .chunks(d)
            .map(|r| l2(r).max(NORM_EPS))
            .collect();
        let mut out = self.to_vec();
        for (row, nr) in out.chunks_mut(d).zip(&norms) {
            row.iter_mut().for_each(|v| *v /= nr);
        }
        let y = out.clone();
        Tensor::from_op(out, vec![n, d], vec![self.clone()], move |g, ps| {
            let mut dx = vec![0.0; n * d];
            for i in 0..n {
                let r = i * d..(i + 1) * d;
                let nr = norms[i];
                let raw_norm = l2(&ps[0].data()[r.clone()]);
                if raw_norm > NORM_EPS {
                    let yg: f32 = y[r.clone()].iter().zip(&g[r.clone()]).map(|(a, b)| a * b).sum();
                    for j in r {
                        dx[j] = (g[j] - y[j] * yg) / nr;
                    }
                } else {
                    for j in r {
                        dx[j] = g[j] / nr;
                    }
                }
            }
            vec![Some(dx)]
        })
    }

    /// Row-wise cosine similarity of two equally shaped matrices: `[N]`.
    pub fn cosine_rows(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "cosine_rows shape mismatch");
        let (n, d) = self.dims2();
        let a = self.data();
        let b = other.data();
        let mut cos = vec![0.0f32; n];
        let mut na = vec![0.0f32; n];
        let mut nb = vec![0.0f32; n];
        for i in 0..n {
            let (ra, rb) = (&a[i * d..(i + 1) * d], &b[i * d..(i + 1) * d]);
            na[i] = l2(ra);
            nb[i] = l2(rb);
            cos[i] = dot(ra, rb) / (na[i] * nb[i]).max(NORM_EPS);
        }
        let out = cos.clone();
        Tensor::from_op(out, vec![n], vec![self.clone(), other.clone()], move |g, ps| {
            let a = ps[0].data();
            let b = ps[1].data();
            let grad_for = |x: &[f32], y: &[f32], nx: &[f32], ny: &[f32]| {
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    let den = nx[i] * ny[i];
                    let r = i * d..(i + 1) * d;
                    if den > NORM_EPS {
                        let self_term = cos[i] / (nx[i] * nx[i]);
                        for j in r {
                            dx[j] = g[i] * (y[j] / den - self_term * x[j]);
                        }
                    } else {
                        for j in r {
                            dx[j] = g[i] * y[j] / NORM_EPS;
                        }
                    }
                }
                dx
            };
            let da = ps[0].requires_grad().then(|| grad_for(a, b, &na, &nb));
            let db = ps[1].requires_grad().then(|| grad_for(b, a, &nb, &na));
            vec![da, db]
        })
    }

    /// Row-wise inner product: `[N]`.
    pub fn dot_rows(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "dot_rows shape mismatch");
        let (n, d) = self.dims2();
        let out = (0..n)
            .map(|i| dot(&self.data()[i * d..(i + 1) * d], &other.data()[i * d..(i + 1) * d]))
            .collect();
        Tensor::from_op(out, vec![n], vec![self.clone(), other.clone()], move |g, ps| {
            let scaled = |src: &[f32]| {
                let mut d_out = vec![0.0; n * d];
                for i in 0..n {
                    for j in i * d..(i + 1) * d {
                        d_out[j] = g[i] * src[j];
                    }
                }
                d_out
            };
            let da = ps[0].requires_grad().then(|| scaled(ps[1].data()));
            let db = ps[1].requires_grad().then(|| scaled(ps[0].data()));
            vec![da, db]
        })
    }

    /// Mean softmax cross-entropy of `[N, M]` logits against class indices.
    ///
    /// With `exclude_diagonal`, entry `(i, i)` is removed from row `i`'s
    /// softmax (used when a sample must not be its own candidate).
    pub fn cross_entropy(&self, targets: &[usize], exclude_diagonal: bool) -> Tensor {
        let (n, m) = self.dims2();
        assert_eq!(targets.len(), n, "cross_entropy target count");
        let x = self.data();
        let mut probs = vec![0.0f32; n * m];
        let mut total = 0.0f64;
        for i in 0..n {
            let row = &x[i * m..(i + 1) * m];
            let live = |j: usize| !(exclude_diagonal && i == j);
            assert!(targets[i] < m && live(targets[i]), "invalid target");
            let mx = (0..m)
                .filter(|&j| live(j))
                .map(|j| row[j])
                .fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0f64;
            for j in (0..m).filter(|&j| live(j)) {
                let e = ((row[j] - mx) as f64).exp();
                probs[i * m + j] = e as f32;
                z += e;
            }
            for j in 0..m {
                probs[i * m + j] = (probs[i * m + j] as f64 / z) as f32;
            }
            total += z.ln() + mx as f64 - row[targets[i]] as f64;
        }
        let targets = targets.to_vec();
        let loss = (total / n as f64) as f32;
        Tensor::from_op(vec![loss], vec![], vec![self.clone()], move |g, _| {
            let scale = g[0] / n as f32;
            let mut dx: Vec<f32> = probs.iter().map(|p| p * scale).collect();
            for (i, &t) in targets.iter().enumerate() {
                dx[i * m + t] -= scale;
            }
            vec![Some(dx)]
        })
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2(a: &[f32]) -> f32 {
    dot(a, a).sqrt()
}
