//! Optimizers (Adam, SGD with optional Nesterov momentum) and the
//! polynomial learning-rate schedule.

use crate::tensor::{Gradients, Parameterized, Scalar, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd {
        lr: f64,
        momentum: f64,
        nesterov: bool,
    },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Fidelity profile: heavy-momentum Nesterov SGD.
    pub fn sgd_nesterov() -> Self {
        OptimizerKind::Sgd {
            lr: 0.01,
            momentum: 0.99,
            nesterov: true,
        }
    }

    pub fn base_lr(&self) -> f64 {
        match self {
            OptimizerKind::Adam { lr, .. } => *lr,
            OptimizerKind::Sgd { lr, .. } => *lr,
        }
    }
}

/// lr(t) = base * (1 - t/T)^power; equals base at t = 0 and 0 at t = T.
pub fn poly_lr(base: f64, t: usize, total: usize, power: f64) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = 1.0 - (t as f64 / total as f64).min(1.0);
    base * frac.powf(power)
}

struct Slot<T> {
    m: Tensor<T>,
    v: Tensor<T>,
}

/// Optimizer state keyed by parameter id.
pub struct Optimizer<T: Scalar> {
    pub kind: OptimizerKind,
    state: HashMap<u64, Slot<T>>,
    step_count: usize,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            state: HashMap::new(),
            step_count: 0,
        }
    }

    /// One update over every parameter that received a gradient, at the
    /// scheduled learning rate `lr`.
    pub fn step<M: Parameterized<T>>(&mut self, model: &mut M, grads: &Gradients<T>, lr: f64) {
        self.step_count += 1;
        let t = self.step_count;
        let kind = self.kind;
        let state = &mut self.state;
        model.visit_mut(&mut |p| {
            let grad = match grads.of_param(p) {
                Some(gt) => gt,
                None => return,
            };
            match kind {
                OptimizerKind::Adam {
                    beta1, beta2, eps, ..
                } => {
                    let slot = state.entry(p.id()).or_insert_with(|| Slot {
                        m: Tensor::zeros(p.value.shape()),
                        v: Tensor::zeros(p.value.shape()),
                    });
                    let b1 = T::from_f64(beta1);
                    let b2 = T::from_f64(beta2);
                    let one = T::one();
                    let bc1 = T::from_f64(1.0 - beta1.powi(t as i32));
                    let bc2 = T::from_f64(1.0 - beta2.powi(t as i32));
                    let lr_t = T::from_f64(lr);
                    let epsv = T::from_f64(eps);
                    for i in 0..grad.numel() {
                        let gv = grad.data()[i];
                        let m = b1 * slot.m.data()[i] + (one - b1) * gv;
                        let v = b2 * slot.v.data()[i] + (one - b2) * gv * gv;
                        slot.m.data_mut()[i] = m;
                        slot.v.data_mut()[i] = v;
                        let mhat = m / bc1;
                        let vhat = v / bc2;
                        p.value.data_mut()[i] =
                            p.value.data()[i] - lr_t * mhat / (vhat.sqrt() + epsv);
                    }
                }
                OptimizerKind::Sgd {
                    momentum, nesterov, ..
                } => {
                    let slot = state.entry(p.id()).or_insert_with(|| Slot {
                        m: Tensor::zeros(p.value.shape()),
                        v: Tensor::zeros(&[0]),
                    });
                    let mu = T::from_f64(momentum);
                    let lr_t = T::from_f64(lr);
                    for i in 0..grad.numel() {
                        let gv = grad.data()[i];
                        let vel = mu * slot.m.data()[i] + gv;
                        slot.m.data_mut()[i] = vel;
                        let update = if nesterov { gv + mu * vel } else { vel };
                        p.value.data_mut()[i] = p.value.data()[i] - lr_t * update;
                    }
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_schedule_endpoints() {
        assert_eq!(poly_lr(0.01, 0, 100, 0.9), 0.01);
        assert!(poly_lr(0.01, 100, 100, 0.9).abs() < 1e-15);
        let mid = poly_lr(0.01, 50, 100, 0.9);
        assert!(mid > 0.0 && mid < 0.01);
    }

    #[test]
    fn adam_reduces_a_quadratic() {
        use crate::tensor::{Graph, Param};
        struct One {
            p: Param<f64>,
        }
        impl Parameterized<f64> for One {
            fn visit(&self, f: &mut dyn FnMut(&Param<f64>)) {
                f(&self.p);
            }
            fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
                f(&mut self.p);
            }
        }
        let mut m = One {
            p: Param::new("x", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap()),
        };
        let mut opt = Optimizer::new(OptimizerKind::adam(0.1));
        let loss_of = |m: &One| -> f64 { m.p.value.data().iter().map(|v| v * v).sum() };
        let initial = loss_of(&m);
        for _ in 0..50 {
            let mut g = Graph::new();
            let x = g.param(&m.p);
            let sq = g.mul(x, x).unwrap();
            let loss = g.sum_all(sq).unwrap();
            let grads = g.backward(loss).unwrap();
            opt.step(&mut m, &grads, 0.1);
        }
        assert!(loss_of(&m) < initial * 0.05);
    }
}
