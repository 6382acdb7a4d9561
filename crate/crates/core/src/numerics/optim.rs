use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use super::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer over a [`ParamStore`]. Frozen parameters are never
/// touched, whatever their gradient buffers hold.
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store
            .iter()
            .map(|(_, p)| vec![T::zero(); p.value.numel()])
            .collect();
        let v = match kind {
            OptimizerKind::Adam { .. } => zeros.clone(),
            OptimizerKind::Sgd => Vec::new(),
        };
        let m = match kind {
            OptimizerKind::Adam { .. } => zeros,
            OptimizerKind::Sgd => Vec::new(),
        };
        Self {
            kind,
            lr,
            step: 0,
            m,
            v,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let lr = T::lit(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for p in store.iter_mut().filter(|p| !p.frozen) {
                    for (w, &g) in p.value.data_mut().iter_mut().zip(&p.grad) {
                        *w = *w - lr * g;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                let t = self.step as i32;
                let c1 = T::one() - T::lit(beta1.powi(t));
                let c2 = T::one() - T::lit(beta2.powi(t));
                for (i, p) in store.iter_mut().enumerate() {
                    if p.frozen {
                        continue;
                    }
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (j, (w, &g)) in p.value.data_mut().iter_mut().zip(&p.grad).enumerate() {
                        m[j] = b1 * m[j] + (T::one() - b1) * g;
                        v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        *w = *w - lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }
}
