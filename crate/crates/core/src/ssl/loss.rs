use crate::error::{ensure, Error, Result};
use crate::nets::FeatureBatch;
use crate::tensor::Tensor;

fn finite(loss: Tensor, what: &str) -> Result<Tensor> {
    if loss.item().is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!("{what} is not finite")))
    }
}

/// Normalized-temperature cross-entropy over `2N` projections, where rows
/// `2k` and `2k + 1` are the two views of sample `k`.
pub fn ntxent_loss(z: &Tensor, tau: f32) -> Result<Tensor> {
    let (rows, _) = z.dims2();
    ensure!(tau > 0.0, Config, "temperature must be positive, got {tau}");
    ensure!(rows % 2 == 0, Input, "NT-Xent needs an even number of rows, got {rows}");
    ensure!(rows >= 4, Input, "NT-Xent needs at least 2 pairs so negatives exist, got {} pair(s)", rows / 2);
    let zn = z.normalize_rows();
    let logits = zn.matmul_t(&zn).scale(1.0 / tau);
    let targets: Vec<usize> = (0..rows).map(|i| i ^ 1).collect();
    finite(logits.cross_entropy(&targets, true), "NT-Xent loss")
}

/// Fixed-capacity FIFO of unit-norm keys. Keys are written batch-wise into
/// a ring, overwriting the oldest batch.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureQueue {
    dim: usize,
    capacity: usize,
    data: Vec<f32>,
    head: usize,
}

impl FeatureQueue {
    /// Fill the queue from `keys`, normalizing each row.
    pub fn from_keys(keys: &FeatureBatch) -> Result<Self> {
        ensure!(keys.rows() > 0, Config, "queue must hold at least one key");
        let t = keys.to_tensor().normalize_rows();
        Ok(Self {
            dim: keys.dim(),
            capacity: keys.rows(),
            data: t.to_vec(),
            head: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.capacity
    }

    pub fn is_empty(&self) -> bool {
        self.capacity == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn keys(&self) -> FeatureBatch {
        FeatureBatch::new(self.capacity, self.dim, self.data.clone()).expect("consistent queue")
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[self.capacity, self.dim])
    }

    /// Replace the oldest `B` keys with `keys` (normalized).
    pub fn enqueue(&mut self, keys: &Tensor) -> Result<()> {
        let (b, d) = keys.dims2();
        ensure!(d == self.dim, Input, "key width {d} differs from queue width {}", self.dim);
        ensure!(
            b > 0 && self.capacity % b == 0,
            Config,
            "queue size {} is not a multiple of batch size {b}",
            self.capacity
        );
        let kn = keys.detach().normalize_rows();
        let start = self.head * d;
        self.data[start..start + b * d].copy_from_slice(kn.data());
        self.head = (self.head + b) % self.capacity;
        Ok(())
    }
}

/// Contrastive loss of queries against their positive keys and the queue
/// negatives: mean over the batch of `-log softmax([q.k+, q.queue] / tau)[0]`.
/// Queries and keys are unit-normalized; keys carry no gradient.
pub fn moco_loss(q: &Tensor, k: &Tensor, queue: &FeatureQueue, tau: f32) -> Result<Tensor> {
    ensure!(tau > 0.0, Config, "temperature must be positive, got {tau}");
    ensure!(q.shape() == k.shape(), Input, "query/key shapes differ: {:?} vs {:?}", q.shape(), k.shape());
    let (b, d) = q.dims2();
    ensure!(d == queue.dim(), Input, "query width {d} differs from queue width {}", queue.dim());
    let qn = q.normalize_rows();
    let kn = k.detach().normalize_rows();
    let pos = qn.dot_rows(&kn).reshape(&[b, 1]);
    let neg = qn.matmul_t(&queue.to_tensor());
    let logits = Tensor::cat_cols(&pos, &neg).scale(1.0 / tau);
    finite(logits.cross_entropy(&vec![0; b], false), "MoCo loss")
}

/// One BYOL branch: mean over rows of `2 - 2 cos(p, z)`, with `z` detached.
pub fn byol_branch_loss(p: &Tensor, z: &Tensor) -> Result<Tensor> {
    ensure!(p.shape() == z.shape(), Input, "prediction/target shapes differ: {:?} vs {:?}", p.shape(), z.shape());
    let cos = p.cosine_rows(&z.detach());
    finite(cos.scale(-2.0).add_scalar(2.0).mean_all(), "BYOL loss")
}
