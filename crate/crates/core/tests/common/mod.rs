//! Independent f64 reference implementations. Nothing here calls into the
//! library's tensor code.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

pub fn unit(a: &[f64]) -> Vec<f64> {
    let n = dot(a, a).sqrt();
    a.iter().map(|x| x / n).collect()
}

pub fn rows(x: &[f64], d: usize) -> Vec<&[f64]> {
    x.chunks(d).collect()
}

pub fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// NT-Xent over 2N rows where `2k` and `2k + 1` are positives: mean over
/// anchors of `-log(exp(s_ip / tau) / sum_{j != i} exp(s_ij / tau))`.
pub fn ntxent(z: &[f64], d: usize, tau: f64) -> f64 {
    let r = rows(z, d);
    let n = r.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += (cos(r[i], r[j]) / tau).exp();
            }
        }
        total += -(cos(r[i], r[i ^ 1]) / tau) + denom.ln();
    }
    total / n as f64
}

/// MoCo InfoNCE: positives are `k[i]`, negatives every queue row.
pub fn moco(q: &[f64], k: &[f64], queue: &[f64], d: usize, tau: f64) -> f64 {
    let (q, k, queue) = (rows(q, d), rows(k, d), rows(queue, d));
    let mut total = 0.0;
    for i in 0..q.len() {
        let qi = unit(q[i]);
        let pos = dot(&qi, &unit(k[i])) / tau;
        let mut denom = pos.exp();
        for n in &queue {
            denom += (dot(&qi, &unit(n)) / tau).exp();
        }
        total += -pos + denom.ln();
    }
    total / q.len() as f64
}

/// Symmetric BYOL loss for `p` and `z` of `2B` rows (view 1 then view 2).
pub fn byol(p: &[f64], z: &[f64], d: usize) -> f64 {
    let (p, z) = (rows(p, d), rows(z, d));
    let b = p.len() / 2;
    let mut total = 0.0;
    for i in 0..b {
        total += (2.0 - 2.0 * cos(p[i], z[i + b])) / b as f64;
        total += (2.0 - 2.0 * cos(p[i + b], z[i])) / b as f64;
    }
    total
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = x[i];
            x[i] = v + eps;
            let hi = f(&x);
            x[i] = v - eps;
            let lo = f(&x);
            x[i] = v;
            (hi - lo) / (2.0 * eps)
        })
        .collect()
}

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

/// Largest elementwise gap, relative to the largest reference magnitude.
pub fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
