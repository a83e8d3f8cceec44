//! Circle loss over edit-operation grids:
//!
//! ```text
//! log(1 + sum_{pos} exp(-s)) + log(1 + sum_{neg} exp(s))
//! ```
//!
//! summed over operations. Positives are the gold cells of the operation,
//! negatives every other in-range cell of its grid.

use ndarray::Array2;

use super::ScoreGrid;
use crate::supervision::{EditMatrix, EditOp};

/// `log(1 + sum exp(x))` and its gradient `exp(x) / (1 + sum exp(x))`,
/// with the implicit zero logit included in the max shift.
fn log1p_sum_exp(xs: &[f64]) -> (f64, Vec<f64>) {
    let m = xs.iter().copied().fold(0.0f64, f64::max);
    let z = (-m).exp() + xs.iter().map(|x| (x - m).exp()).sum::<f64>();
    let grads = xs.iter().map(|x| (x - m).exp() / z).collect();
    (m + z.ln(), grads)
}

/// Loss of one grid and its gradient with respect to the scores.
pub fn circle_loss_grad(values: &Array2<f64>, gold: &EditMatrix, op: EditOp) -> (f64, Array2<f64>) {
    let (rows, cols) = values.dim();
    let mut is_pos = Array2::<bool>::from_elem((rows, cols), false);
    for (r, c) in gold.cells_of(op) {
        is_pos[[r, c]] = true;
    }
    let mut pos_idx = Vec::new();
    let mut pos_x = Vec::new();
    let mut neg_idx = Vec::new();
    let mut neg_x = Vec::new();
    for ((r, c), &s) in values.indexed_iter() {
        // Substitute never applies to the sentinel column, so it is neither.
        if op == EditOp::Substitute && c + 1 == cols {
            continue;
        }
        if is_pos[[r, c]] {
            pos_idx.push((r, c));
            pos_x.push(-s);
        } else {
            neg_idx.push((r, c));
            neg_x.push(s);
        }
    }
    let (lp, gp) = log1p_sum_exp(&pos_x);
    let (ln, gn) = log1p_sum_exp(&neg_x);
    let mut grad = Array2::zeros((rows, cols));
    for (&(r, c), g) in pos_idx.iter().zip(gp) {
        grad[[r, c]] = -g;
    }
    for (&(r, c), g) in neg_idx.iter().zip(gn) {
        grad[[r, c]] = g;
    }
    (lp + ln, grad)
}

/// Total loss over all grids against `gold`.
pub fn circle_loss(grids: &[ScoreGrid], gold: &EditMatrix) -> f64 {
    grids
        .iter()
        .map(|g| circle_loss_grad(&g.values, gold, g.op).0)
        .sum()
}
