use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Central-difference check of every input element of every leaf.
fn gradcheck(shapes: &[&[usize]], seed: u64, f: impl Fn(&[Tensor]) -> Tensor) {
    let inputs: Vec<Vec<f32>> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| rand_vec(s.iter().product(), seed + i as u64))
        .collect();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .zip(shapes)
        .map(|(d, s)| Tensor::param(d.clone(), s))
        .collect();
    let loss = f(&leaves);
    let grads = loss.backward();
    let eps = 1e-2f32;
    for (li, (data, shape)) in inputs.iter().zip(shapes).enumerate() {
        let analytic = grads.get(&leaves[li]).expect("leaf gradient").to_vec();
        for j in 0..data.len() {
            let eval = |delta: f32| {
                let ts: Vec<Tensor> = inputs
                    .iter()
                    .zip(shapes)
                    .enumerate()
                    .map(|(k, (d, s))| {
                        let mut d = d.clone();
                        if k == li {
                            d[j] += delta;
                        }
                        Tensor::new(d, s)
                    })
                    .collect();
                f(&ts).item() as f64
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps as f64);
            let a = analytic[j] as f64;
            assert!(
                (a - fd).abs() <= 2e-2 * fd.abs().max(1.0),
                "leaf {li} elem {j}: analytic {a} vs fd {fd} (shape {shape:?})"
            );
        }
    }
}

#[test]
fn elementwise_and_reductions_gradients() {
    gradcheck(&[&[3, 4], &[3, 4]], 1, |t| {
        t[0].mul(&t[1]).add(&t[0].sqr()).sub(&t[1].scale(0.5)).mean_all()
    });
    gradcheck(&[&[2, 5]], 2, |t| t[0].abs().add_scalar(0.3).mean_rows().sqr().sum_all());
}

#[test]
fn matmul_gradients() {
    gradcheck(&[&[3, 4], &[4, 2]], 3, |t| t[0].matmul(&t[1]).sqr().mean_all());
    gradcheck(&[&[3, 4], &[5, 4]], 4, |t| t[0].matmul_t(&t[1]).sqr().mean_all());
    gradcheck(&[&[3, 4], &[2, 4], &[2]], 5, |t| t[0].linear(&t[1], &t[2]).sqr().mean_all());
}

#[test]
fn conv_gradients() {
    gradcheck(&[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]], 6, |t| {
        t[0].conv2d(&t[1], &t[2], 1, 1).sqr().mean_all()
    });
    gradcheck(&[&[2, 2, 6, 6], &[2, 2, 3, 3], &[2]], 7, |t| {
        t[0].conv2d(&t[1], &t[2], 2, 1).sqr().mean_all()
    });
}

#[test]
fn conv_matches_direct_loop() {
    let (n, c, h, w, o, k) = (2, 3, 5, 4, 2, 3);
    let x = rand_vec(n * c * h * w, 11);
    let wt = rand_vec(o * c * k * k, 12);
    let b = rand_vec(o, 13);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let y = Tensor::new(x.clone(), &[n, c, h, w]).conv2d(
            &Tensor::new(wt.clone(), &[o, c, k, k]),
            &Tensor::new(b.clone(), &[o]),
            stride,
            pad,
        );
        let (_, _, ho, wo) = y.dims4();
        for ni in 0..n {
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[oc];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += x[((ni * c + ci) * h + iy as usize) * w + ix as usize]
                                            * wt[((oc * c + ci) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        let got = y.data()[((ni * o + oc) * ho + oy) * wo + ox];
                        assert!((got - acc).abs() < 1e-5, "{got} vs {acc}");
                    }
                }
            }
        }
    }
}

#[test]
fn pooling_and_blend_gradients() {
    gradcheck(&[&[2, 2, 4, 4]], 8, |t| t[0].max_pool2().sqr().mean_all());
    gradcheck(&[&[2, 3, 2, 2]], 9, |t| t[0].global_avg_pool().sqr().sum_all());
    let mask: Vec<f32> = (0..12).map(|i| (i % 3 == 0) as u8 as f32).collect();
    gradcheck(&[&[2, 3, 2, 2], &[3, 2, 2]], 10, move |t| {
        t[0].blend(&t[1], &mask).sqr().mean_all()
    });
}

#[test]
fn batch_norm_gradients() {
    gradcheck(&[&[3, 2, 2, 2], &[2], &[2]], 14, |t| {
        let y = t[0].batch_norm(&t[1], &t[2], None, 1e-5).out;
        y.mul(&y.add_scalar(0.7)).mean_all()
    });
    let rm = [0.1f32, -0.2];
    let rv = [0.5f32, 1.5];
    gradcheck(&[&[3, 2, 2, 2], &[2], &[2]], 15, move |t| {
        t[0].batch_norm(&t[1], &t[2], Some((&rm, &rv)), 1e-5).out.sqr().mean_all()
    });
}

#[test]
fn normalized_similarity_gradients() {
    gradcheck(&[&[3, 4]], 16, |t| t[0].normalize_rows().sqr().mean_rows().add(&t[0].normalize_rows().mean_rows()).sum_all());
    gradcheck(&[&[3, 4], &[3, 4]], 17, |t| t[0].cosine_rows(&t[1]).sqr().sum_all());
    gradcheck(&[&[3, 4], &[3, 4]], 18, |t| t[0].dot_rows(&t[1]).sqr().sum_all());
}

#[test]
fn cross_entropy_gradients() {
    gradcheck(&[&[3, 4]], 19, |t| t[0].cross_entropy(&[1, 3, 0], false));
    gradcheck(&[&[4, 4]], 20, |t| t[0].cross_entropy(&[1, 0, 3, 2], true));
}

#[test]
fn shape_ops_gradients() {
    gradcheck(&[&[2, 3], &[1, 3]], 21, |t| {
        Tensor::cat_rows(&[t[0].clone(), t[1].clone()]).slice_rows(1, 2).sqr().sum_all()
    });
    gradcheck(&[&[2, 3], &[2, 1]], 22, |t| Tensor::cat_cols(&t[0], &t[1]).reshape(&[8]).sqr().sum_all());
}

#[test]
fn constants_do_not_retain_graph() {
    let a = Tensor::new(vec![1.0, 2.0], &[2]);
    let b = a.sqr().add(&a).sum_all();
    assert!(!b.requires_grad());
    assert!(b.backward().get(&a).is_none());
}

#[test]
fn shared_subexpression_accumulates() {
    let x = Tensor::param(vec![3.0], &[1]);
    let y = x.mul(&x).add(&x).sum_all();
    let g = y.backward();
    assert_eq!(g.get(&x).unwrap(), &[7.0]);
}
