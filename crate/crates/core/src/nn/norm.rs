use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};

use super::TensorSet;

const EPS: f64 = 1e-6;

/// Row-wise layer normalization with learnable scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub struct NormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm { gamma: Array1::ones(dim), beta: Array1::zeros(dim) }
    }

    pub fn zeros_like(&self) -> Self {
        LayerNorm {
            gamma: Array1::zeros(self.gamma.raw_dim()),
            beta: Array1::zeros(self.beta.raw_dim()),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, NormCache) {
        let n = x.ncols() as f64;
        let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
        let mut x_hat = x - &mean.view().insert_axis(Axis(1));
        let var = x_hat.mapv(|v| v * v).mean_axis(Axis(1)).expect("non-empty rows");
        let inv_std = var.mapv(|v| 1.0 / (v + EPS).sqrt());
        x_hat *= &inv_std.view().insert_axis(Axis(1));
        let y = &x_hat * &self.gamma + &self.beta;
        let _ = n;
        (y, NormCache { x_hat, inv_std })
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x).0
    }

    pub fn backward(&self, cache: &NormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        let w = dy.ncols() as f64;
        grad.gamma += &(dy * &cache.x_hat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));

        // dx = inv_std ⊙ (dx̂ − mean(dx̂) − x̂ ⊙ mean(dx̂ ⊙ x̂)) per row
        let dx_hat = dy * &self.gamma;
        let mean_dx_hat = dx_hat.mean_axis(Axis(1)).expect("non-empty rows");
        let mean_dx_hat_xhat = (&dx_hat * &cache.x_hat)
            .mean_axis(Axis(1))
            .expect("non-empty rows");
        let mut dx = dx_hat;
        dx -= &mean_dx_hat.view().insert_axis(Axis(1));
        dx -= &(&cache.x_hat * &mean_dx_hat_xhat.view().insert_axis(Axis(1)));
        dx *= &cache.inv_std.view().insert_axis(Axis(1));
        let _ = w;
        dx
    }
}

impl TensorSet for LayerNorm {
    fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![
            ("gamma".into(), self.gamma.view().into_dyn()),
            ("beta".into(), self.beta.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![self.gamma.view_mut().into_dyn(), self.beta.view_mut().into_dyn()]
    }
}
