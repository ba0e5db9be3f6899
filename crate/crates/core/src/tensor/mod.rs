//! A small reverse-mode autodiff engine over dense `f32` tensors.
//!
//! Tensors are immutable, reference-counted graph nodes. An operation whose
//! inputs do not require gradients produces a plain constant and drops its
//! inputs immediately, so inference runs without retaining a graph.
//!
//! Shape mismatches inside the engine are programming errors and panic; the
//! public model APIs validate user input before reaching this layer.

mod conv;
mod gemm;
mod nn;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

pub use conv::conv_out_dim;
pub(crate) use gemm::gemm;

type BackwardFn = Box<dyn Fn(&[f32], &[Tensor]) -> Vec<Option<Vec<f32>>>>;

thread_local! {
    static NEXT_ID: Cell<usize> = const { Cell::new(0) };
}

fn next_id() -> usize {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Default)]
pub struct Gradients {
    map: HashMap<usize, Vec<f32>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f32]> {
        self.map.get(&t.id()).map(Vec::as_slice)
    }

    pub fn take(&mut self, t: &Tensor) -> Option<Vec<f32>> {
        self.map.remove(&t.id())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn leaf(data: Vec<f32>, shape: Vec<usize>, requires_grad: bool) -> Self {
        assert_eq!(
            data.len(),
            numel(&shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// A constant tensor.
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Self {
        Self::leaf(data, shape.to_vec(), false)
    }

    /// A leaf that accumulates gradients.
    pub fn param(data: Vec<f32>, shape: &[usize]) -> Self {
        Self::leaf(data, shape.to_vec(), true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(vec![0.0; numel(shape)], shape)
    }

    pub fn scalar(v: f32) -> Self {
        Self::new(vec![v], &[])
    }

    pub(crate) fn from_op<F>(data: Vec<f32>, shape: Vec<usize>, parents: Vec<Tensor>, backward: F) -> Self
    where
        F: Fn(&[f32], &[Tensor]) -> Vec<Option<Vec<f32>>> + 'static,
    {
        debug_assert_eq!(data.len(), numel(&shape));
        if parents.iter().any(Tensor::requires_grad) {
            Tensor(Rc::new(Node {
                id: next_id(),
                shape,
                data,
                requires_grad: true,
                parents,
                backward: Some(Box::new(backward)),
            }))
        } else {
            Self::leaf(data, shape, false)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Copy of the values with no gradient history.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.to_vec(), self.shape())
    }

    /// Rows of a tensor whose first axis is the batch axis.
    pub fn rows(&self) -> usize {
        self.0.shape.first().copied().unwrap_or(1)
    }

    fn row_len(&self) -> usize {
        self.numel() / self.rows().max(1)
    }

    /// Reverse-mode sweep from a single-element tensor.
    pub fn backward(&self) -> Gradients {
        assert_eq!(self.numel(), 1, "backward() requires a scalar");
        let mut grads = Gradients::default();
        if !self.requires_grad() {
            return grads;
        }
        let order = self.topo_order();
        grads.map.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(bw) = node.0.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads.map.remove(&node.id()) else {
                continue;
            };
            let parent_grads = bw(&g, &node.0.parents);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (p, pg) in node.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), p.numel());
                match grads.map.get_mut(&p.id()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    None => {
                        grads.map.insert(p.id(), pg);
                    }
                }
            }
        }
        grads
    }

    fn topo_order(&self) -> Vec<Tensor> {
        let mut visited = HashSet::new();
        let mut order = Vec::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.0.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    // ----- shape ops -----

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(numel(shape), self.numel(), "reshape {:?} -> {:?}", self.shape(), shape);
        Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], |g, _| {
            vec![Some(g.to_vec())]
        })
    }

    /// Concatenate along the first axis.
    pub fn cat_rows(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let tail = &parts[0].shape()[1..];
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(&p.shape()[1..], tail, "cat_rows trailing shape mismatch");
            data.extend_from_slice(p.data());
            rows += p.rows();
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(tail);
        let lens: Vec<usize> = parts.iter().map(Tensor::numel).collect();
        Tensor::from_op(data, shape, parts.to_vec(), move |g, _| {
            let mut off = 0;
            lens.iter()
                .map(|&l| {
                    let s = g[off..off + l].to_vec();
                    off += l;
                    Some(s)
                })
                .collect()
        })
    }

    /// Concatenate two matrices along the column axis.
    pub fn cat_cols(a: &Tensor, b: &Tensor) -> Tensor {
        let (n, ca) = a.dims2();
        let (nb, cb) = b.dims2();
        assert_eq!(n, nb, "cat_cols row mismatch");
        let w = ca + cb;
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&a.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&b.data()[i * cb..(i + 1) * cb]);
        }
        Tensor::from_op(data, vec![n, w], vec![a.clone(), b.clone()], move |g, _| {
            let mut ga = Vec::with_capacity(n * ca);
            let mut gb = Vec::with_capacity(n * cb);
            for i in 0..n {
                ga.extend_from_slice(&g[i * w..i * w + ca]);
                gb.extend_from_slice(&g[i * w + ca..(i + 1) * w]);
            }
            vec![Some(ga), Some(gb)]
        })
    }

    /// Rows `start..start + len` along the first axis.
    pub fn slice_rows(&self, start: usize, len: usize) -> Tensor {
        assert!(start + len <= self.rows(), "slice_rows out of range");
        let rl = self.row_len();
        let total = self.numel();
        let data = self.data()[start * rl..(start + len) * rl].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        Tensor::from_op(data, shape, vec![self.clone()], move |g, _| {
            let mut full = vec![0.0; total];
            full[start * rl..(start + len) * rl].copy_from_slice(g);
            vec![Some(full)]
        })
    }

    pub fn dims2(&self) -> (usize, usize) {
        match self.shape() {
            [a, b] => (*a, *b),
            s => panic!("expected a matrix, got shape {s:?}"),
        }
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        match self.shape() {
            [a, b, c, d] => (*a, *b, *c, *d),
            s => panic!("expected a 4-d tensor, got shape {s:?}"),
        }
    }

    // ----- elementwise -----

    fn zip_same(&self, other: &Tensor, what: &str) {
        assert_eq!(self.shape(), other.shape(), "{what}: shape mismatch");
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_same(other, "add");
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], |g, _| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        })
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_same(other, "sub");
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], |g, _| {
            vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
        })
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.zip_same(other, "mul");
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], |g, ps| {
            let da = ps[0]
                .requires_grad()
                .then(|| g.iter().zip(ps[1].data()).map(|(g, b)| g * b).collect());
            let db = ps[1]
                .requires_grad()
                .then(|| g.iter().zip(ps[0].data()).map(|(g, a)| g * a).collect());
            vec![da, db]
        })
    }

    pub fn scale(&self, k: f32) -> Tensor {
        let data = self.data().iter().map(|v| v * k).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            vec![Some(g.iter().map(|v| v * k).collect())]
        })
    }

    pub fn add_scalar(&self, k: f32) -> Tensor {
        let data = self.data().iter().map(|v| v + k).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |g, _| {
            vec![Some(g.to_vec())]
        })
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn sqr(&self) -> Tensor {
        let data = self.data().iter().map(|v| v * v).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |g, ps| {
            vec![Some(g.iter().zip(ps[0].data()).map(|(g, x)| 2.0 * g * x).collect())]
        })
    }

    pub fn abs(&self) -> Tensor {
        let data = self.data().iter().map(|v| v.abs()).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |g, ps| {
            vec![Some(
                g.iter()
                    .zip(ps[0].data())
                    .map(|(g, x)| if *x > 0.0 { *g } else if *x < 0.0 { -g } else { 0.0 })
                    .collect(),
            )]
        })
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|v| v.max(0.0)).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |g, ps| {
            vec![Some(
                g.iter()
                    .zip(ps[0].data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
            )]
        })
    }

    // ----- reductions -----

    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data().iter().map(|&v| v as f64).sum();
        let n = self.numel();
        Tensor::from_op(vec![s as f32], vec![], vec![self.clone()], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum_all().scale(1.0 / n as f32)
    }

    /// Mean over every axis except the first: `[N, ...] -> [N]`.
    pub fn mean_rows(&self) -> Tensor {
        let n = self.rows();
        let rl = self.row_len();
        let data = self
            .data()
            .chunks(rl)
            .map(|r| (r.iter().map(|&v| v as f64).sum::<f64>() / rl as f64) as f32)
            .collect();
        Tensor::from_op(data, vec![n], vec![self.clone()], move |g, _| {
            let mut out = Vec::with_capacity(n * rl);
            for &gi in g {
                out.extend(std::iter::repeat(gi / rl as f32).take(rl));
            }
            vec![Some(out)]
        })
    }

    // ----- linear algebra -----

    /// `[N, K] x [K, M] -> [N, M]`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (n, k) = self.dims2();
        let (k2, m) = other.dims2();
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, self.data(), false, other.data(), false, &mut out, false);
        Tensor::from_op(out, vec![n, m], vec![self.clone(), other.clone()], move |g, ps| {
            let da = ps[0].requires_grad().then(|| {
                let mut d = vec![0.0; n * k];
                gemm(n, m, k, g, false, ps[1].data(), true, &mut d, false);
                d
            });
            let db = ps[1].requires_grad().then(|| {
                let mut d = vec![0.0; k * m];
                gemm(k, n, m, ps[0].data(), true, g, false, &mut d, false);
                d
            });
            vec![da, db]
        })
    }

    /// `[N, K] x [M, K]^T -> [N, M]`.
    pub fn matmul_t(&self, other: &Tensor) -> Tensor {
        let (n, k) = self.dims2();
        let (m, k2) = other.dims2();
        assert_eq!(k, k2, "matmul_t inner dims");
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, self.data(), false, other.data(), true, &mut out, false);
        Tensor::from_op(out, vec![n, m], vec![self.clone(), other.clone()], move |g, ps| {
            let da = ps[0].requires_grad().then(|| {
                let mut d = vec![0.0; n * k];
                gemm(n, m, k, g, false, ps[1].data(), false, &mut d, false);
                d
            });
            let db = ps[1].requires_grad().then(|| {
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, g, true, ps[0].data(), false, &mut d, false);
                d
            });
            vec![da, db]
        })
    }

    /// Affine map `x W^T + b` with `W: [out, in]`.
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Tensor {
        let (n, _) = self.dims2();
        let (o, _) = weight.dims2();
        assert_eq!(bias.shape(), [o], "linear bias shape");
        let y = self.matmul_t(weight);
        let mut data = y.to_vec();
        for row in data.chunks_mut(o) {
            row.iter_mut().zip(bias.data()).for_each(|(v, b)| *v += b);
        }
        Tensor::from_op(data, vec![n, o], vec![y, bias.clone()], move |g, ps| {
            let db = ps[1].requires_grad().then(|| {
                let mut d = vec![0.0; o];
                for row in g.chunks(o) {
                    d.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                d
            });
            vec![Some(g.to_vec()), db]
        })
    }
}

#[cfg(test)]
mod tests;
