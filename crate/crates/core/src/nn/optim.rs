use serde::{Deserialize, Serialize};

use super::TensorSet;

/// Optimizer family; the paper names only the learning rate, so adam-style
/// is the default with sgd-momentum as the alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    AdamStyle,
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerParams {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        OptimizerParams {
            kind: OptimizerKind::AdamStyle,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
        }
    }
}

/// First/second-moment state shaped like the model it updates.
pub struct Optimizer<T: TensorSet> {
    params: OptimizerParams,
    m: T,
    v: T,
    t: u64,
}

impl<T: TensorSet> Optimizer<T> {
    /// `zeros` must produce a zero tensor set shaped like the model.
    pub fn new(params: OptimizerParams, mut zeros: impl FnMut() -> T) -> Self {
        Optimizer { params, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn step(&mut self, model: &mut T, grads: &T, lr: f64) {
        self.t += 1;
        let gt = grads.named_tensors();
        let mt = self.m.tensors_mut();
        let vt = self.v.tensors_mut();
        let pt = model.tensors_mut();
        match self.params.kind {
            OptimizerKind::AdamStyle => {
                let (b1, b2, eps) = (self.params.beta1, self.params.beta2, self.params.eps);
                let bc1 = 1.0 - b1.powi(self.t as i32);
                let bc2 = 1.0 - b2.powi(self.t as i32);
                for (((mut p, mut m), mut v), (_, g)) in
                    pt.into_iter().zip(mt).zip(vt).zip(gt)
                {
                    ndarray::Zip::from(&mut p)
                        .and(&mut m)
                        .and(&mut v)
                        .and(&g)
                        .for_each(|p, m, v, g| {
                            *m = b1 * *m + (1.0 - b1) * g;
                            *v = b2 * *v + (1.0 - b2) * g * g;
                            let m_hat = *m / bc1;
                            let v_hat = *v / bc2;
                            *p -= lr * m_hat / (v_hat.sqrt() + eps);
                        });
                }
            }
            OptimizerKind::SgdMomentum => {
                let mu = self.params.momentum;
                for ((mut p, mut m), (_, g)) in pt.into_iter().zip(mt).zip(gt) {
                    ndarray::Zip::from(&mut p).and(&mut m).and(&g).for_each(|p, m, g| {
                        *m = mu * *m + g;
                        *p -= lr * *m;
                    });
                }
            }
        }
    }
}
