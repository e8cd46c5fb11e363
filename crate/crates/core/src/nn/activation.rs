use ndarray::{Array1, Array2, Axis};

const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
const GELU_C: f64 = 0.044715;

/// Tanh-approximated GELU, elementwise.
pub fn gelu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + (SQRT_2_OVER_PI * (v + GELU_C * v * v * v)).tanh()))
}

/// dy ⊙ gelu'(x) given the pre-activation input.
pub fn gelu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = x.mapv(|v| {
        let u = SQRT_2_OVER_PI * (v + GELU_C * v * v * v);
        let t = u.tanh();
        0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * v * v)
    });
    dx *= dy;
    dx
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    dx *= dy;
    dx
}

/// Row-wise softmax, numerically shifted by the row max.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy over a batch of logit rows, with the gradient w.r.t.
/// the logits: `(softmax − onehot) / n`.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    assert_eq!(logits.nrows(), labels.len(), "one label per logit row");
    let n = logits.nrows() as f64;
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        loss -= row[y].max(1e-300).ln();
    }
    loss /= n;
    let mut grad = probs;
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
    }
    grad.mapv_inplace(|v| v / n);
    (loss, grad)
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(&row.to_owned()) == y)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

pub fn argmax(row: &Array1<f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[allow(dead_code)]
pub fn row_sums(x: &Array2<f64>) -> Array1<f64> {
    x.sum_axis(Axis(1))
}
