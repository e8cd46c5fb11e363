//! The composite center-separation loss trained in stage 1.
//!
//! Five learnable centers anchor the five image groups (original, two
//! attacks, two corruptions). Each loss term is a signed sum of
//! center-vs-batch MMD² values: `close` terms pull a center toward its own
//! group's embeddings, `far` terms push centers and foreign groups apart.
//!
//! - `L1` separates original from all modified groups,
//! - `L2` separates intentional (attack) from unintentional (corruption),
//! - `L3` separates the two noises within each intent group,
//! - `L_det = β L1 + γ L2 + δ L3` with `β + γ + δ = 1`.
//!
//! All values and gradients are plain f64 math over embedding batches; the
//! backbone receives the batch gradients, the optimizer receives the center
//! gradients.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmd::{center_mmd2_with_grad, BatchDistribution, KernelSpec};

/// Number of image groups / centers.
pub const GROUPS: usize = 5;

/// Canonical group order shared by centers, quintuples and head labels.
pub const GROUP_NAMES: [&str; GROUPS] = ["original", "attack-1", "attack-2", "corruption-1", "corruption-2"];

/// Five learnable d-dimensional centers, one per image group. Row `k`
/// anchors group `k` in [`GROUP_NAMES`] order.
#[derive(Debug, Clone)]
pub struct CenterSet {
    centers: Array2<f64>,
    pub trainable: bool,
}

impl CenterSet {
    pub fn new(centers: Array2<f64>) -> Result<Self> {
        if centers.nrows() != GROUPS {
            return Err(Error::shape("5 center rows", format!("{}", centers.nrows())));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite center".into()));
        }
        Ok(CenterSet { centers, trainable: true })
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.centers
    }

    pub fn rows_mut(&mut self) -> &mut Array2<f64> {
        &mut self.centers
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }
}

/// Centers drawn from a standard normal scaled by 1/√d; deterministic
/// under `seed`.
pub fn init_centers(d: usize, seed: u64) -> Result<CenterSet> {
    if d < 2 {
        return Err(Error::Config(format!("embedding dimension {d} < 2")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (d as f64).sqrt();
    let mut centers = Array2::zeros((GROUPS, d));
    for v in centers.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = z * scale;
    }
    CenterSet::new(centers)
}

/// Regularization and mixing weights of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // The reported experiment configuration.
        LossWeights { alpha: 0.3, beta: 1.0 / 3.0, gamma: 1.0 / 3.0, delta: 1.0 / 3.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma), ("delta", self.delta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} = {v} must be non-negative")));
            }
        }
        let sum = self.beta + self.gamma + self.delta;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "beta + gamma + delta = {sum}, must equal 1"
            )));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(Error::Config(format!("alpha = {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// Index-aligned embedding batches for the five groups.
#[derive(Debug, Clone)]
pub struct EmbeddingQuintuple {
    batches: [BatchDistribution; GROUPS],
}

impl EmbeddingQuintuple {
    pub fn new(
        e_org: BatchDistribution,
        e_a1: BatchDistribution,
        e_a2: BatchDistribution,
        e_u1: BatchDistribution,
        e_u2: BatchDistribution,
    ) -> Result<Self> {
        let batches = [e_org, e_a1, e_a2, e_u1, e_u2];
        let n = batches[0].len();
        let d = batches[0].dim();
        for (k, b) in batches.iter().enumerate() {
            if b.len() != n || b.dim() != d {
                return Err(Error::shape(
                    format!("all batches {n}×{d}"),
                    format!("group {k} is {}×{}", b.len(), b.dim()),
                ));
            }
        }
        Ok(EmbeddingQuintuple { batches })
    }

    pub fn group(&self, k: usize) -> &BatchDistribution {
        &self.batches[k]
    }

    pub fn batch_size(&self) -> usize {
        self.batches[0].len()
    }

    pub fn dim(&self) -> usize {
        self.batches[0].dim()
    }
}

/// Gradients of a loss value w.r.t. the centers and the five batches.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub centers: Array2<f64>,
    pub batches: [Array2<f64>; GROUPS],
}

impl LossGrads {
    fn zeros(q: &EmbeddingQuintuple, c: &CenterSet) -> Self {
        let b = || Array2::zeros((q.batch_size(), q.dim()));
        LossGrads {
            centers: Array2::zeros(c.rows().raw_dim()),
            batches: [b(), b(), b(), b(), b()],
        }
    }

    fn scaled_add(&mut self, other: &LossGrads, w: f64) {
        self.centers.scaled_add(w, &other.centers);
        for (mine, theirs) in self.batches.iter_mut().zip(&other.batches) {
            mine.scaled_add(w, theirs);
        }
    }
}

/// A loss value with its gradients.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grads: LossGrads,
}

/// One MMD term: center `center` against batch `batch`, weighted by `sign`.
type Term = (usize, usize, f64);

fn accumulate_terms(
    q: &EmbeddingQuintuple,
    c: &CenterSet,
    spec: &KernelSpec,
    terms: &[Term],
) -> Result<LossOutput> {
    if q.dim() != c.dim() {
        return Err(Error::shape(
            format!("embedding dim {}", c.dim()),
            format!("{}", q.dim()),
        ));
    }
    let mut value = 0.0;
    let mut grads = LossGrads::zeros(q, c);
    for &(ck, bk, w) in terms {
        let (v, gc, ge) = center_mmd2_with_grad(c.rows().row(ck), q.group(bk), spec)?;
        value += w * v;
        let mut row = grads.centers.row_mut(ck);
        row.scaled_add(w, &gc);
        grads.batches[bk].scaled_add(w, &ge);
    }
    Ok(LossOutput { value, grads })
}

/// The close pairs shared by every loss: (C_k, group k).
fn close_terms(from: usize, weight: f64) -> Vec<Term> {
    (from..GROUPS).map(|k| (k, k, weight)).collect()
}

/// Original vs. modified separation:
/// `α · L1_close − (1−α) · (L1_farorg + L1_farmod)`.
pub fn loss_l1(
    q: &EmbeddingQuintuple,
    c: &CenterSet,
    alpha: f64,
    spec: &KernelSpec,
) -> Result<LossOutput> {
    check_alpha(alpha)?;
    let mut terms = close_terms(0, alpha);
    for k in 1..GROUPS {
        terms.push((k, 0, -(1.0 - alpha))); // modified centers away from originals
        terms.push((0, k, -(1.0 - alpha))); // original center away from modified batches
    }
    accumulate_terms(q, c, spec, &terms)
}

/// Intentional vs. unintentional separation:
/// `α · L2_close − (1−α) · L2_far` with the cross-intent far pairs
/// (C₁↔corruption-1, C₂↔corruption-2, C₃↔attack-1, C₄↔attack-2).
pub fn loss_l2(
    q: &EmbeddingQuintuple,
    c: &CenterSet,
    alpha: f64,
    spec: &KernelSpec,
) -> Result<LossOutput> {
    check_alpha(alpha)?;
    let mut terms = close_terms(1, alpha);
    for (ck, bk) in [(1, 3), (2, 4), (3, 1), (4, 2)] {
        terms.push((ck, bk, -(1.0 - alpha)));
    }
    accumulate_terms(q, c, spec, &terms)
}

/// Within-intent separation: same close pairs as `L2`, far pairs swapped
/// inside each group (C₁↔attack-2, C₂↔attack-1, C₃↔corruption-2,
/// C₄↔corruption-1).
pub fn loss_l3(
    q: &EmbeddingQuintuple,
    c: &CenterSet,
    alpha: f64,
    spec: &KernelSpec,
) -> Result<LossOutput> {
    check_alpha(alpha)?;
    let mut terms = close_terms(1, alpha);
    for (ck, bk) in [(1, 2), (2, 1), (3, 4), (4, 3)] {
        terms.push((ck, bk, -(1.0 - alpha)));
    }
    accumulate_terms(q, c, spec, &terms)
}

/// The composite detection loss with per-term values retained for logging.
#[derive(Debug, Clone)]
pub struct DetLossOutput {
    pub value: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub grads: LossGrads,
}

/// `L_det = β L1 + γ L2 + δ L3`.
pub fn loss_det(
    q: &EmbeddingQuintuple,
    c: &CenterSet,
    w: &LossWeights,
    spec: &KernelSpec,
) -> Result<DetLossOutput> {
    w.validate()?;
    let l1 = loss_l1(q, c, w.alpha, spec)?;
    let l2 = loss_l2(q, c, w.alpha, spec)?;
    let l3 = loss_l3(q, c, w.alpha, spec)?;
    let mut grads = LossGrads::zeros(q, c);
    grads.scaled_add(&l1.grads, w.beta);
    grads.scaled_add(&l2.grads, w.gamma);
    grads.scaled_add(&l3.grads, w.delta);
    Ok(DetLossOutput {
        value: w.beta * l1.value + w.gamma * l2.value + w.delta * l3.value,
        l1: l1.value,
        l2: l2.value,
        l3: l3.value,
        grads,
    })
}

/// 5×5 matrix of pairwise center MMD² values (singleton vs singleton),
/// logged each epoch to track separation.
pub fn inter_center_mmd2(c: &CenterSet, spec: &KernelSpec) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((GROUPS, GROUPS));
    for i in 0..GROUPS {
        for j in 0..GROUPS {
            if i == j {
                continue;
            }
            let e = BatchDistribution::new(c.rows().row(j).insert_axis(ndarray::Axis(0)).to_owned())?;
            m[[i, j]] = crate::mmd::center_mmd2(c.rows().row(i), &e, spec)?;
        }
    }
    Ok(m)
}

/// Mean of the off-diagonal entries of [`inter_center_mmd2`].
pub fn mean_off_diagonal(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += m[[i, j]];
            }
        }
    }
    sum / (n * (n - 1)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Oracle: closed-form RBF sums composed per the loss definitions,
    /// scalar arithmetic only.
    struct Naive<'a> {
        centers: Vec<Vec<f64>>,
        batches: Vec<Vec<Vec<f64>>>,
        bw: &'a [f64],
    }

    impl Naive<'_> {
        fn k(&self, a: &[f64], b: &[f64]) -> f64 {
            let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
            self.bw.iter().map(|s2| (-d2 / (2.0 * s2)).exp()).sum()
        }

        fn center_batch(&self, ck: usize, bk: usize) -> f64 {
            let c = &self.centers[ck];
            let e = &self.batches[bk];
            let n = e.len() as f64;
            let b = self.bw.len() as f64; // k(c, c) = B
            let mut kce = 0.0;
            for row in e {
                kce += self.k(c, row);
            }
            let mut kee = 0.0;
            for a in e {
                for bb in e {
                    kee += self.k(a, bb);
                }
            }
            b - 2.0 * kce / n + kee / (n * n)
        }

        fn l1(&self, alpha: f64) -> f64 {
            let close: f64 = (0..5).map(|k| self.center_batch(k, k)).sum();
            let farorg: f64 = (1..5).map(|k| self.center_batch(k, 0)).sum();
            let farmod: f64 = (1..5).map(|k| self.center_batch(0, k)).sum();
            alpha * close - (1.0 - alpha) * (farorg + farmod)
        }

        fn l2(&self, alpha: f64) -> f64 {
            let close: f64 = (1..5).map(|k| self.center_batch(k, k)).sum();
            let far = self.center_batch(1, 3)
                + self.center_batch(2, 4)
                + self.center_batch(3, 1)
                + self.center_batch(4, 2);
            alpha * close - (1.0 - alpha) * far
        }

        fn l3(&self, alpha: f64) -> f64 {
            let close: f64 = (1..5).map(|k| self.center_batch(k, k)).sum();
            let far = self.center_batch(1, 2)
                + self.center_batch(2, 1)
                + self.center_batch(3, 4)
                + self.center_batch(4, 3);
            alpha * close - (1.0 - alpha) * far
        }
    }

    fn random_setup(seed: u64, n: usize, d: usize) -> (EmbeddingQuintuple, CenterSet, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect()
        };
        let batches: Vec<Vec<Vec<f64>>> = (0..5).map(|_| rows(n)).collect();
        let centers: Vec<Vec<f64>> = rows(5);
        let q = EmbeddingQuintuple::new(
            BatchDistribution::from_rows(&batches[0]).unwrap(),
            BatchDistribution::from_rows(&batches[1]).unwrap(),
            BatchDistribution::from_rows(&batches[2]).unwrap(),
            BatchDistribution::from_rows(&batches[3]).unwrap(),
            BatchDistribution::from_rows(&batches[4]).unwrap(),
        )
        .unwrap();
        let flat: Vec<f64> = centers.iter().flatten().copied().collect();
        let c = CenterSet::new(Array2::from_shape_vec((5, d), flat).unwrap()).unwrap();
        (q, c, centers, batches)
    }

    #[test]
    fn l1_zero_when_everything_coincides() {
        let d = 3;
        let point = vec![0.4, -0.9, 1.1];
        let batch = || BatchDistribution::from_rows(&vec![point.clone(); 4]).unwrap();
        let q = EmbeddingQuintuple::new(batch(), batch(), batch(), batch(), batch()).unwrap();
        let c = CenterSet::new(Array2::from_shape_fn((5, d), |(_, j)| point[j])).unwrap();
        let spec = KernelSpec::fixed(vec![0.5, 1.0]).unwrap();
        let out = loss_l1(&q, &c, 0.3, &spec).unwrap();
        assert!(out.value.abs() <= 1e-12);
    }

    #[test]
    fn l1_alpha_one_is_close_term() {
        let (q, c, centers, batches) = random_setup(5, 6, 2);
        let bw = vec![0.8, 1.7];
        let spec = KernelSpec::fixed(bw.clone()).unwrap();
        let naive = Naive { centers, batches, bw: &bw };
        let close: f64 = (0..5).map(|k| naive.center_batch(k, k)).sum();
        let out = loss_l1(&q, &c, 1.0, &spec).unwrap();
        assert_relative_eq!(out.value, close, max_relative = 1e-9);
    }

    #[test]
    fn losses_match_naive_oracle() {
        for seed in 0..8u64 {
            let (q, c, centers, batches) = random_setup(seed, 5, 2);
            let bw = vec![1.0];
            let spec = KernelSpec::fixed(bw.clone()).unwrap();
            let naive = Naive { centers, batches, bw: &bw };
            let alpha = 0.3;
            assert_relative_eq!(
                loss_l1(&q, &c, alpha, &spec).unwrap().value,
                naive.l1(alpha),
                max_relative = 1e-9
            );
            assert_relative_eq!(
                loss_l2(&q, &c, alpha, &spec).unwrap().value,
                naive.l2(alpha),
                max_relative = 1e-9
            );
            assert_relative_eq!(
                loss_l3(&q, &c, alpha, &spec).unwrap().value,
                naive.l3(alpha),
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn l2_collapses_when_attacks_equal_corruptions() {
        // identical attack/corruption batches and all-equal centers make
        // close and far terms coincide: L2 = (2α − 1) · L2_close.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 2;
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let org = BatchDistribution::from_rows(&rows).unwrap();
        let q = EmbeddingQuintuple::new(
            org.clone(),
            org.clone(),
            org.clone(),
            org.clone(),
            org.clone(),
        )
        .unwrap();
        let c = CenterSet::new(Array2::from_shape_fn((5, d), |(_, j)| [0.7, -0.4][j])).unwrap();
        let spec = KernelSpec::fixed(vec![0.9]).unwrap();
        for alpha in [0.0, 0.3, 0.8] {
            let l2 = loss_l2(&q, &c, alpha, &spec).unwrap().value;
            let close = loss_l2(&q, &c, 1.0, &spec).unwrap().value;
            assert_relative_eq!(l2, (2.0 * alpha - 1.0) * close, max_relative = 1e-9);
        }
    }

    #[test]
    fn l2_alpha_zero_is_nonpositive_and_bounded() {
        let (q, c, _, _) = random_setup(21, 6, 3);
        let spec = KernelSpec::fixed(vec![0.5, 1.0]).unwrap();
        let v = loss_l2(&q, &c, 0.0, &spec).unwrap().value;
        let bound = 4.0 * 2.0 * spec.components() as f64;
        assert!(v <= 0.0 && v >= -bound);
    }

    #[test]
    fn l3_within_group_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d = 2;
        let mut rows = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
        };
        let org = BatchDistribution::from_rows(&rows(4)).unwrap();
        let a = BatchDistribution::from_rows(&rows(4)).unwrap();
        let u = BatchDistribution::from_rows(&rows(4)).unwrap();
        let q = EmbeddingQuintuple::new(org, a.clone(), a, u.clone(), u).unwrap();
        // C1 = C2 and C3 = C4
        let c1: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c3: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c0: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let flat: Vec<f64> = [c0, c1.clone(), c1, c3.clone(), c3].concat();
        let c = CenterSet::new(Array2::from_shape_vec((5, d), flat).unwrap()).unwrap();
        let spec = KernelSpec::fixed(vec![1.2]).unwrap();
        for alpha in [0.2, 0.5, 0.9] {
            let l3 = loss_l3(&q, &c, alpha, &spec).unwrap().value;
            let close = loss_l3(&q, &c, 1.0, &spec).unwrap().value;
            assert_relative_eq!(l3, (2.0 * alpha - 1.0) * close, max_relative = 1e-9);
        }
    }

    #[test]
    fn l3_close_equals_l2_close() {
        let (q, c, _, _) = random_setup(41, 5, 2);
        let spec = KernelSpec::fixed(vec![0.7]).unwrap();
        let l3 = loss_l3(&q, &c, 1.0, &spec).unwrap().value;
        let l2 = loss_l2(&q, &c, 1.0, &spec).unwrap().value;
        assert_relative_eq!(l3, l2, max_relative = 1e-12);
    }

    #[test]
    fn det_weight_structure() {
        let (q, c, _, _) = random_setup(51, 4, 2);
        let spec = KernelSpec::fixed(vec![1.0]).unwrap();
        let w1 = LossWeights { alpha: 0.3, beta: 1.0, gamma: 0.0, delta: 0.0 };
        let det = loss_det(&q, &c, &w1, &spec).unwrap();
        let l1 = loss_l1(&q, &c, 0.3, &spec).unwrap();
        assert_eq!(det.value, l1.value);

        let w = LossWeights::default();
        let det = loss_det(&q, &c, &w, &spec).unwrap();
        let expect = (det.l1 + det.l2 + det.l3) / 3.0;
        assert!((det.value - expect).abs() <= 1e-12);
    }

    #[test]
    fn det_rejects_bad_weights() {
        let (q, c, _, _) = random_setup(61, 3, 2);
        let spec = KernelSpec::fixed(vec![1.0]).unwrap();
        let w = LossWeights { alpha: 0.3, beta: 0.5, gamma: 0.5, delta: 0.5 };
        assert!(loss_det(&q, &c, &w, &spec).is_err());
        assert!(loss_l1(&q, &c, 1.5, &spec).is_err());
    }

    fn fd_check(
        f: &dyn Fn(&EmbeddingQuintuple, &CenterSet) -> f64,
        q: &EmbeddingQuintuple,
        c: &CenterSet,
        grads: &LossGrads,
    ) {
        let h = 1e-4;
        // centers
        for i in 0..GROUPS {
            for j in 0..c.dim() {
                let mut cp = c.clone();
                cp.rows_mut()[[i, j]] += h;
                let mut cm = c.clone();
                cm.rows_mut()[[i, j]] -= h;
                let fd = (f(q, &cp) - f(q, &cm)) / (2.0 * h);
                let denom = fd.abs().max(1e-6);
                assert!(
                    ((grads.centers[[i, j]] - fd) / denom).abs() <= 1e-4,
                    "center ({i},{j}): analytic {} vs fd {fd}",
                    grads.centers[[i, j]]
                );
            }
        }
        // one batch is enough to exercise the embedding path
        for bk in [0usize, 3] {
            for i in 0..q.batch_size() {
                for j in 0..q.dim() {
                    let perturb = |delta: f64| -> EmbeddingQuintuple {
                        let mut mats: Vec<Array2<f64>> =
                            (0..GROUPS).map(|g| q.group(g).view().to_owned()).collect();
                        mats[bk][[i, j]] += delta;
                        let mut it = mats.into_iter().map(|m| BatchDistribution::new(m).unwrap());
                        EmbeddingQuintuple::new(
                            it.next().unwrap(),
                            it.next().unwrap(),
                            it.next().unwrap(),
                            it.next().unwrap(),
                            it.next().unwrap(),
                        )
                        .unwrap()
                    };
                    let fd = (f(&perturb(h), c) - f(&perturb(-h), c)) / (2.0 * h);
                    let denom = fd.abs().max(1e-6);
                    assert!(
                        ((grads.batches[bk][[i, j]] - fd) / denom).abs() <= 1e-4,
                        "batch {bk} ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = KernelSpec::fixed(vec![0.6, 1.3]).unwrap();
        let (q, c, _, _) = random_setup(71, 3, 2);
        let alpha = 0.3;
        let out = loss_l1(&q, &c, alpha, &spec).unwrap();
        fd_check(&|q, c| loss_l1(q, c, alpha, &spec).unwrap().value, &q, &c, &out.grads);
        let out = loss_l2(&q, &c, alpha, &spec).unwrap();
        fd_check(&|q, c| loss_l2(q, c, alpha, &spec).unwrap().value, &q, &c, &out.grads);
        let out = loss_l3(&q, &c, alpha, &spec).unwrap();
        fd_check(&|q, c| loss_l3(q, c, alpha, &spec).unwrap().value, &q, &c, &out.grads);
        let w = LossWeights { alpha, beta: 0.5, gamma: 0.2, delta: 0.3 };
        let out = loss_det(&q, &c, &w, &spec).unwrap();
        fd_check(&|q, c| loss_det(q, c, &w, &spec).unwrap().value, &q, &c, &out.grads);
    }

    #[test]
    fn one_center_step_descends() {
        let (q, mut c, _, _) = random_setup(81, 6, 3);
        let spec = KernelSpec::fixed(vec![1.0]).unwrap();
        let w = LossWeights::default();
        let before = loss_det(&q, &c, &w, &spec).unwrap();
        let step = 1e-3;
        let update = before.grads.centers.mapv(|g| -step * g);
        *c.rows_mut() += &update;
        let after = loss_det(&q, &c, &w, &spec).unwrap();
        assert!(after.value < before.value);
    }

    #[test]
    fn permutation_equivariance() {
        let (q, c, _, batches) = random_setup(91, 5, 2);
        let spec = KernelSpec::fixed(vec![0.9, 1.8]).unwrap();
        let base = loss_det(&q, &c, &LossWeights::default(), &spec).unwrap().value;
        // reverse the rows of the attack-1 batch
        let mut permuted = batches.clone();
        permuted[1].reverse();
        let qp = EmbeddingQuintuple::new(
            BatchDistribution::from_rows(&permuted[0]).unwrap(),
            BatchDistribution::from_rows(&permuted[1]).unwrap(),
            BatchDistribution::from_rows(&permuted[2]).unwrap(),
            BatchDistribution::from_rows(&permuted[3]).unwrap(),
            BatchDistribution::from_rows(&permuted[4]).unwrap(),
        )
        .unwrap();
        let perm = loss_det(&qp, &c, &LossWeights::default(), &spec).unwrap().value;
        assert_eq!(base.to_bits(), perm.to_bits());
    }

    #[test]
    fn init_centers_contract() {
        let a = init_centers(128, 42).unwrap();
        let b = init_centers(128, 42).unwrap();
        assert_eq!(a.rows(), b.rows());
        assert_eq!(a.rows().dim(), (5, 128));
        for row in a.rows().rows() {
            let norm = row.dot(&row).sqrt();
            assert!((norm - 1.0).abs() < 0.2, "row norm {norm}");
        }
        assert!(init_centers(1, 0).is_err());
    }

    #[test]
    fn inter_center_matrix_is_symmetric_nonneg() {
        let c = init_centers(16, 7).unwrap();
        let spec = KernelSpec::fixed(vec![0.5, 1.0]).unwrap();
        let m = inter_center_mmd2(&c, &spec).unwrap();
        for i in 0..GROUPS {
            assert_eq!(m[[i, i]], 0.0);
            for j in 0..GROUPS {
                assert!((m[[i, j]] - m[[j, i]]).abs() <= 1e-12);
                assert!(m[[i, j]] >= -1e-12);
            }
        }
        assert!(mean_off_diagonal(&m) > 0.0);
    }

    #[test]
    fn quintuple_rejects_mismatched_batches() {
        let a = BatchDistribution::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let b = BatchDistribution::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!(EmbeddingQuintuple::new(a.clone(), b, a.clone(), a.clone(), a).is_err());
    }

    #[test]
    fn centers_reject_wrong_row_count() {
        assert!(CenterSet::new(array![[0.0, 0.0], [1.0, 1.0]]).is_err());
    }
}
