//! RBF kernels and biased MMD² estimators.
//!
//! Every separation-loss term is an MMD² between a learnable center
//! (a one-row distribution) and a batch of embeddings, so the estimator is
//! the biased V-statistic: the unbiased U-statistic is undefined on a
//! one-sample side. Kernels are sums of RBFs, which keeps every MMD² value
//! in `[0, 2B]` for `B` bandwidths; the far terms of the loss enter with a
//! negative sign and rely on that bound.
//!
//! Convention: `k_b(x, y) = exp(-||x - y||² / (2 σ_b²))` and
//! [`median_heuristic`] returns the σ² scale, i.e. `median(||·||²) / 2`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel family. Only RBF sums are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Rbf,
}

/// How bandwidths are obtained at training time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthMode {
    /// Use `bandwidths` as given.
    Fixed,
    /// Refit `bandwidths` from a probe batch once per epoch, then freeze.
    MedianHeuristic,
}

/// A sum-of-RBF kernel. `bandwidths` holds σ² values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidths: Vec<f64>,
    pub mode: BandwidthMode,
}

/// Multipliers applied to a median-heuristic σ² to form the bandwidth set.
pub const BANDWIDTH_MULTIPLIERS: [f64; 3] = [0.5, 1.0, 2.0];

impl KernelSpec {
    pub fn fixed(bandwidths: Vec<f64>) -> Result<Self> {
        let spec = KernelSpec {
            kind: KernelKind::Rbf,
            bandwidths,
            mode: BandwidthMode::Fixed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Single-bandwidth kernel, mostly for tests and closed-form checks.
    pub fn single(sigma_sq: f64) -> Result<Self> {
        Self::fixed(vec![sigma_sq])
    }

    /// The production default: {0.5, 1, 2} × σ², median-heuristic mode.
    pub fn multiscale(sigma_sq: f64) -> Result<Self> {
        let spec = KernelSpec {
            kind: KernelKind::Rbf,
            bandwidths: BANDWIDTH_MULTIPLIERS.iter().map(|m| m * sigma_sq).collect(),
            mode: BandwidthMode::MedianHeuristic,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bandwidths.is_empty() {
            return Err(Error::Config("kernel bandwidth list is empty".into()));
        }
        if let Some(b) = self.bandwidths.iter().find(|b| !(**b > 0.0) || !b.is_finite()) {
            return Err(Error::Config(format!("kernel bandwidth {b} is not positive")));
        }
        Ok(())
    }

    /// Number of summed RBF components; bounds every kernel value.
    pub fn components(&self) -> usize {
        self.bandwidths.len()
    }

    /// k(x, y) from a squared distance.
    fn eval_d2(&self, d2: f64) -> f64 {
        self.bandwidths.iter().map(|s2| (-d2 / (2.0 * s2)).exp()).sum()
    }

    /// Σ_b k_b(x, y) / σ_b², the per-pair weight in kernel gradients.
    fn grad_weight_d2(&self, d2: f64) -> f64 {
        self.bandwidths.iter().map(|s2| (-d2 / (2.0 * s2)).exp() / s2).sum()
    }
}

/// A batch of embeddings treated as an empirical distribution (n × d).
#[derive(Debug, Clone)]
pub struct BatchDistribution {
    samples: Array2<f64>,
}

impl BatchDistribution {
    pub fn new(samples: Array2<f64>) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::shape("n >= 1 samples", "empty batch"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite embedding in batch".into()));
        }
        Ok(BatchDistribution { samples })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::shape("n >= 1 samples", "empty batch"));
        }
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let samples = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::shape("rectangular rows", e.to_string()))?;
        Self::new(samples)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty batches
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }
}

fn check_dims(dx: usize, dy: usize) -> Result<()> {
    if dx != dy {
        return Err(Error::shape(format!("embedding dim {dx}"), format!("{dy}")));
    }
    Ok(())
}

/// Squared distance between two rows, accumulated coordinate-major so the
/// result is bit-identical under operand swap.
fn row_d2(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Full kernel matrix K[i][j] = k(X_i, Y_j).
pub fn kernel_matrix(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, spec: &KernelSpec) -> Result<Array2<f64>> {
    check_dims(x.ncols(), y.ncols())?;
    spec.validate()?;
    let mut k = Array2::zeros((x.nrows(), y.nrows()));
    for (i, xi) in x.rows().into_iter().enumerate() {
        for (j, yj) in y.rows().into_iter().enumerate() {
            k[[i, j]] = spec.eval_d2(row_d2(xi, yj));
        }
    }
    Ok(k)
}

/// Sum of kernel values over all row pairs of `x` × `y`, added in sorted
/// order. Sorting makes the sum a function of the value multiset alone, so
/// `mmd2(X, Y) == mmd2(Y, X)` holds bitwise.
fn sorted_pair_sum(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, spec: &KernelSpec) -> f64 {
    let mut vals: Vec<f64> = Vec::with_capacity(x.nrows() * y.nrows());
    for xi in x.rows() {
        for yj in y.rows() {
            vals.push(spec.eval_d2(row_d2(xi, yj)));
        }
    }
    vals.sort_unstable_by(f64::total_cmp);
    vals.iter().sum()
}

/// Biased (V-statistic) MMD² between two batches:
/// `mean k(X,X) - 2 mean k(X,Y) + mean k(Y,Y)`.
///
/// Non-negative up to rounding and bounded by `2B` for `B` RBF components.
pub fn mmd2(x: &BatchDistribution, y: &BatchDistribution, spec: &KernelSpec) -> Result<f64> {
    check_dims(x.dim(), y.dim())?;
    spec.validate()?;
    let (n, m) = (x.len() as f64, y.len() as f64);
    let kxx = sorted_pair_sum(x.view(), x.view(), spec) / (n * n);
    let kyy = sorted_pair_sum(y.view(), y.view(), spec) / (m * m);
    let kxy = sorted_pair_sum(x.view(), y.view(), spec) / (n * m);
    Ok(kxx + kyy - 2.0 * kxy)
}

/// MMD² together with its gradients w.r.t. every row of `x` and `y`.
pub fn mmd2_with_grad(
    x: &BatchDistribution,
    y: &BatchDistribution,
    spec: &KernelSpec,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let value = mmd2(x, y, spec)?;
    let (xv, yv) = (x.view(), y.view());
    let (n, m) = (x.len() as f64, y.len() as f64);
    let mut gx = Array2::zeros(xv.raw_dim());
    let mut gy = Array2::zeros(yv.raw_dim());

    // d k(x,y) / dx = -w(d²) (x - y) with w = Σ_b k_b / σ_b².
    for (i, xi) in xv.rows().into_iter().enumerate() {
        for (j, xj) in xv.rows().into_iter().enumerate() {
            if i == j {
                continue;
            }
            let w = spec.grad_weight_d2(row_d2(xi, xj));
            let scale = 2.0 / (n * n) * w;
            for (k, (a, b)) in xi.iter().zip(xj.iter()).enumerate() {
                gx[[i, k]] -= scale * (a - b);
            }
        }
        for yj in yv.rows() {
            let w = spec.grad_weight_d2(row_d2(xi, yj));
            let scale = 2.0 / (n * m) * w;
            for (k, (a, b)) in xi.iter().zip(yj.iter()).enumerate() {
                gx[[i, k]] += scale * (a - b);
            }
        }
    }
    for (j, yj) in yv.rows().into_iter().enumerate() {
        for (l, yl) in yv.rows().into_iter().enumerate() {
            if j == l {
                continue;
            }
            let w = spec.grad_weight_d2(row_d2(yj, yl));
            let scale = 2.0 / (m * m) * w;
            for (k, (a, b)) in yj.iter().zip(yl.iter()).enumerate() {
                gy[[j, k]] -= scale * (a - b);
            }
        }
        for xi in xv.rows() {
            let w = spec.grad_weight_d2(row_d2(yj, xi));
            let scale = 2.0 / (n * m) * w;
            for (k, (a, b)) in yj.iter().zip(xi.iter()).enumerate() {
                gy[[j, k]] += scale * (a - b);
            }
        }
    }
    Ok((value, gx, gy))
}

/// MMD² between a single center point and a batch: the one-row special case
/// of [`mmd2`] that every loss term uses.
pub fn center_mmd2(c: ArrayView1<'_, f64>, e: &BatchDistribution, spec: &KernelSpec) -> Result<f64> {
    let cb = BatchDistribution::new(c.insert_axis(ndarray::Axis(0)).to_owned())?;
    mmd2(&cb, e, spec)
}

/// [`center_mmd2`] with gradients w.r.t. the center and the batch rows.
pub fn center_mmd2_with_grad(
    c: ArrayView1<'_, f64>,
    e: &BatchDistribution,
    spec: &KernelSpec,
) -> Result<(f64, Array1<f64>, Array2<f64>)> {
    let cb = BatchDistribution::new(c.insert_axis(ndarray::Axis(0)).to_owned())?;
    let (v, gc, ge) = mmd2_with_grad(&cb, e, spec)?;
    Ok((v, gc.row(0).to_owned(), ge))
}

/// Median of pairwise squared distances over the pooled sample, halved to
/// the σ² scale of `exp(-||·||² / (2σ²))`. Returns 1.0 when all points
/// coincide (or fewer than two points are supplied).
pub fn median_heuristic(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    let mut d2s: Vec<f64> = Vec::new();
    let rows: Vec<ArrayView1<'_, f64>> = x.rows().into_iter().chain(y.rows()).collect();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            d2s.push(row_d2(rows[i], rows[j]));
        }
    }
    if d2s.is_empty() {
        return 1.0;
    }
    d2s.sort_unstable_by(f64::total_cmp);
    let mid = d2s.len() / 2;
    let median = if d2s.len() % 2 == 1 {
        d2s[mid]
    } else {
        0.5 * (d2s[mid - 1] + d2s[mid])
    };
    if median > 0.0 {
        median / 2.0
    } else {
        1.0
    }
}
