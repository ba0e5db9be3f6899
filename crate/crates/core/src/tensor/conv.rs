//! Spatial ops on NCHW tensors.

use super::{gemm, Tensor};

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

#[derive(Clone, Copy)]
struct Geom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }
}

/// Lower the input to a `[C*k*k, N*Ho*Wo]` patch matrix.
fn im2col(x: &[f32], g: Geom) -> Vec<f32> {
    let ncols = g.cols();
    let plane = g.ho * g.wo;
    let mut cols = vec![0.0; g.rows() * ncols];
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (c * g.k + ky) * g.k + kx;
                let row = &mut cols[r * ncols..(r + 1) * ncols];
                for n in 0..g.n {
                    let src = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    let dst = &mut row[n * plane..(n + 1) * plane];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[oy * g.wo + ox] = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f32], g: Geom) -> Vec<f32> {
    let ncols = g.cols();
    let plane = g.ho * g.wo;
    let mut x = vec![0.0; g.n * g.c * g.h * g.w];
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (c * g.k + ky) * g.k + kx;
                let row = &cols[r * ncols..(r + 1) * ncols];
                for n in 0..g.n {
                    let dst = &mut x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    let src = &row[n * plane..(n + 1) * plane];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[iy as usize * g.w + ix as usize] += src[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

impl Tensor {
    /// 2-d convolution. `self: [N, C, H, W]`, `weight: [O, C, k, k]`, `bias: [O]`.
    pub fn conv2d(&self, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (n, c, h, w) = self.dims4();
        let (o, wc, k, k2) = weight.dims4();
        assert_eq!(c, wc, "conv2d channel mismatch");
        assert_eq!(k, k2, "conv2d expects square kernels");
        assert_eq!(bias.shape(), [o], "conv2d bias shape");
        let g = Geom {
            n,
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: conv_out_dim(h, k, stride, pad),
            wo: conv_out_dim(w, k, stride, pad),
        };
        let plane = g.ho * g.wo;
        let kr = g.rows();
        let ncols = g.cols();
        let cols = im2col(self.data(), g);
        let mut y = vec![0.0; o * ncols];
        gemm(o, kr, ncols, weight.data(), false, &cols, false, &mut y, false);
        let mut out = vec![0.0; n * o * plane];
        for oc in 0..o {
            let b = bias.data()[oc];
            for ni in 0..n {
                let src = &y[oc * ncols + ni * plane..oc * ncols + (ni + 1) * plane];
                let dst = &mut out[(ni * o + oc) * plane..(ni * o + oc + 1) * plane];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d = s + b);
            }
        }
        let parents = vec![self.clone(), weight.clone(), bias.clone()];
        Tensor::from_op(out, vec![n, o, g.ho, g.wo], parents, move |gout, ps| {
            let mut gy = vec![0.0; o * ncols];
            for oc in 0..o {
                for ni in 0..n {
                    gy[oc * ncols + ni * plane..oc * ncols + (ni + 1) * plane]
                        .copy_from_slice(&gout[(ni * o + oc) * plane..(ni * o + oc + 1) * plane]);
                }
            }
            let dx = ps[0].requires_grad().then(|| {
                let mut dcols = vec![0.0; kr * ncols];
                gemm(kr, o, ncols, ps[1].data(), true, &gy, false, &mut dcols, false);
                col2im(&dcols, g)
            });
            let dw = ps[1].requires_grad().then(|| {
                let mut dw = vec![0.0; o * kr];
                gemm(o, ncols, kr, &gy, false, &cols, true, &mut dw, false);
                dw
            });
            let db = ps[2].requires_grad().then(|| {
                gy.chunks(ncols)
                    .map(|r| r.iter().map(|&v| v as f64).sum::<f64>() as f32)
                    .collect()
            });
            vec![dx, dw, db]
        })
    }

    /// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn max_pool2(&self) -> Tensor {
        let (n, c, h, w) = self.dims4();
        let (ho, wo) = (h / 2, w / 2);
        let mut out = vec![0.0; n * c * ho * wo];
        let mut arg = vec![0usize; out.len()];
        let x = self.data();
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    let o = (p * ho + oy) * wo + ox;
                    out[o] = x[best];
                    arg[o] = best;
                }
            }
        }
        let total = self.numel();
        Tensor::from_op(out, vec![n, c, ho, wo], vec![self.clone()], move |g, _| {
            let mut dx = vec![0.0; total];
            for (gi, &a) in g.iter().zip(&arg) {
                dx[a] += gi;
            }
            vec![Some(dx)]
        })
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&self) -> Tensor {
        let (n, c, h, w) = self.dims4();
        self.reshape(&[n * c, h * w]).mean_rows().reshape(&[n, c])
    }

    /// Per-sample blend `(1 - mask) * x + mask * patch`, where `patch` and
    /// `mask` share the per-sample shape of `x`.
    pub fn blend(&self, patch: &Tensor, mask: &[f32]) -> Tensor {
        let per = patch.numel();
        assert_eq!(mask.len(), per, "blend mask size");
        assert_eq!(self.numel() % per, 0, "blend sample size");
        assert_eq!(&self.shape()[1..], patch.shape(), "blend shape");
        let mut out = self.to_vec();
        for sample in out.chunks_mut(per) {
            for ((v, &t), &m) in sample.iter_mut().zip(patch.data()).zip(mask) {
                *v = (1.0 - m) * *v + m * t;
            }
        }
        let mask = mask.to_vec();
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone(), patch.clone()], move |g, ps| {
            let dx = ps[0].requires_grad().then(|| {
                let mut d = g.to_vec();
                for s in d.chunks_mut(per) {
                    s.iter_mut().zip(&mask).for_each(|(v, m)| *v *= 1.0 - m);
                }
                d
            });
            let dp = ps[1].requires_grad().then(|| {
                let mut d = vec![0.0; per];
                for s in g.chunks(per) {
                    d.iter_mut()
                        .zip(s)
                        .zip(&mask)
                        .for_each(|((acc, gv), m)| *acc += gv * m);
                }
                d
            });
            vec![dx, dp]
        })
    }
}
