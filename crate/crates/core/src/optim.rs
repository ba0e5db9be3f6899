use crate::nets::{ParamGrads, ParamVector};

pub trait Optimizer {
    /// Update every trainable parameter that has a gradient. Frozen
    /// parameters and buffers are never written.
    fn step(&mut self, params: &mut ParamVector, grads: &ParamGrads);

    fn lr(&self) -> f32;
}

fn state_for(state: &mut Vec<Vec<f32>>, params: &ParamVector) {
    if state.len() != params.len() {
        *state = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
    }
}

/// Stochastic gradient descent with optional heavy-ball momentum.
#[derive(Clone, Debug)]
pub struct Sgd {
    lr: f32,
    momentum: f32,
    weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(lr: f32) -> Self {
        Self::with_momentum(lr, 0.0)
    }

    pub fn with_momentum(lr: f32, momentum: f32) -> Self {
        Self {
            lr,
            momentum,
            weight_decay: 0.0,
            velocity: Vec::new(),
        }
    }

    pub fn weight_decay(mut self, wd: f32) -> Self {
        self.weight_decay = wd;
        self
    }

    /// Update a bare buffer that is not part of a network, such as an
    /// input-space pattern. Uses its own single velocity slot.
    pub fn step_slice(&mut self, data: &mut [f32], grad: &[f32]) {
        assert_eq!(data.len(), grad.len(), "gradient size");
        if self.velocity.len() != 1 || self.velocity[0].len() != data.len() {
            self.velocity = vec![vec![0.0; data.len()]];
        }
        for ((w, &gi), v) in data.iter_mut().zip(grad).zip(self.velocity[0].iter_mut()) {
            *v = self.momentum * *v + gi + self.weight_decay * *w;
            *w -= self.lr * *v;
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamVector, grads: &ParamGrads) {
        state_for(&mut self.velocity, params);
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(i);
            let Some(g) = g else { continue };
            if !p.trainable {
                continue;
            }
            let vel = &mut self.velocity[i];
            for ((w, &gi), v) in p.data.iter_mut().zip(g).zip(vel.iter_mut()) {
                let d = gi + self.weight_decay * *w;
                *v = self.momentum * *v + d;
                *w -= self.lr * *v;
            }
        }
    }

    fn lr(&self) -> f32 {
        self.lr
    }
}

/// Adaptive moment estimation.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamVector, grads: &ParamGrads) {
        state_for(&mut self.m, params);
        state_for(&mut self.v, params);
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(i);
            let Some(g) = g else { continue };
            if !p.trainable {
                continue;
            }
            for (j, (w, &gi)) in p.data.iter_mut().zip(g).enumerate() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    fn lr(&self) -> f32 {
        self.lr
    }
}

/// In-place EMA toward `online`: `target <- m * target + (1 - m) * online`,
/// applied to every entry including buffers.
pub fn ema_update(target: &mut ParamVector, online: &ParamVector, momentum: f32) {
    assert_eq!(target.len(), online.len(), "EMA over mismatched networks");
    for (t, o) in target.iter_mut().zip(online.iter()) {
        debug_assert_eq!(t.shape, o.shape);
        if momentum == 1.0 {
            continue;
        }
        for (tv, &ov) in t.data.iter_mut().zip(&o.data) {
            *tv = momentum * *tv + (1.0 - momentum) * ov;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ParamKind;

    fn two_params() -> ParamVector {
        let mut p = ParamVector::new();
        p.push("a".into(), ParamKind::LinearWeight, vec![2], vec![1.0, -1.0]);
        p.push("bn.weight".into(), ParamKind::NormScale, vec![1], vec![1.0]);
        p
    }

    #[test]
    fn sgd_skips_frozen_params() {
        let mut p = two_params();
        p.get_mut(1).trainable = false;
        let grads = vec![Some(vec![1.0, 2.0]), Some(vec![5.0])];
        let mut opt = Sgd::new(0.1);
        opt.step(&mut p, &grads);
        assert_eq!(p.get(0).data, vec![0.9, -1.2]);
        assert_eq!(p.get(1).data, vec![1.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = two_params();
        let grads = vec![Some(vec![0.3, -4.0]), None];
        Adam::new(0.01).step(&mut p, &grads);
        assert!((p.get(0).data[0] - 0.99).abs() < 1e-6);
        assert!((p.get(0).data[1] + 0.99).abs() < 1e-6);
    }

    #[test]
    fn ema_endpoints() {
        let online = two_params();
        let mut target = two_params();
        target.get_mut(0).data = vec![3.0, 3.0];
        let before = target.clone();
        ema_update(&mut target, &online, 1.0);
        assert_eq!(target, before);
        ema_update(&mut target, &online, 0.0);
        assert_eq!(target.flatten(), online.flatten());
    }
}
