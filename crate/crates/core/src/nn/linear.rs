use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TensorSet;

/// Dense layer `y = x Wᵀ + b` applied row-wise to an (n × in) input.
#[derive(Debug, Clone)]
pub struct Linear {
    /// (out × in)
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Forward cache: the input rows.
pub struct LinearCache {
    x: Array2<f64>,
}

impl Linear {
    /// Xavier-normal weights, zero bias.
    pub fn init<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let std = (2.0 / (in_dim + out_dim) as f64).sqrt();
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        });
        Linear { w, b: Array1::zeros(out_dim) }
    }

    pub fn zeros_like(&self) -> Self {
        Linear { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.raw_dim()) }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LinearCache) {
        let y = x.dot(&self.w.t()) + &self.b;
        (y, LinearCache { x: x.clone() })
    }

    /// Inference-only forward without caching.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    pub fn backward(&self, cache: &LinearCache, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &dy.t().dot(&cache.x);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }
}

impl TensorSet for Linear {
    fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![
            ("w".into(), self.w.view().into_dyn()),
            ("b".into(), self.b.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![self.w.view_mut().into_dyn(), self.b.view_mut().into_dyn()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Linear::init(3, 4, &mut rng);
        let x = Array2::from_shape_fn((2, 4), |_| rng.gen_range(-1.0..1.0f64));
        // scalar objective: sum of squares of outputs
        let objective = |l: &Linear, x: &Array2<f64>| -> f64 {
            l.apply(x).iter().map(|v| v * v).sum()
        };
        let (y, cache) = layer.forward(&x);
        let dy = y.mapv(|v| 2.0 * v);
        let mut grad = layer.zeros_like();
        let dx = layer.backward(&cache, &dy, &mut grad);

        let h = 1e-6;
        for i in 0..3 {
            for j in 0..4 {
                let mut lp = layer.clone();
                lp.w[[i, j]] += h;
                let mut lm = layer.clone();
                lm.w[[i, j]] -= h;
                let fd = (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * h);
                assert!((grad.w[[i, j]] - fd).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }
        for (i, j) in [(0usize, 0usize), (1, 3)] {
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            let fd = (objective(&layer, &xp) - objective(&layer, &xm)) / (2.0 * h);
            assert!((dx[[i, j]] - fd).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }
}
