//! Mean enhanced-alignment measure (E-measure).
//!
//! The soft prediction is binarized at the 256 thresholds `k / 256`,
//! `k = 1..=256`, and the enhanced-alignment score is averaged over them.
//! Thresholds are strictly positive and never exceed 1, so a binary
//! prediction equal to the ground truth scores exactly 1. Scores are
//! normalized by the pixel count, keeping them in `[0, 1]`.

use ndarray::ArrayView2;

use crate::{check_inputs, MetricError};

pub const E_MEASURE_THRESHOLDS: usize = 256;

pub fn e_measure(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<f64, MetricError> {
    let curve = e_measure_curve(pred, gt)?;
    Ok(curve.iter().sum::<f64>() / curve.len() as f64)
}

/// Per-threshold scores; entry `k - 1` belongs to threshold `k / 256`.
pub fn e_measure_curve(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<Vec<f64>, MetricError> {
    check_inputs(pred, gt)?;
    let bins = E_MEASURE_THRESHOLDS;
    // `p >= k / 256` exactly when `floor(256 p) >= k`; scaling by a power of two is exact.
    let mut fg_hist = vec![0usize; bins + 1];
    let mut bg_hist = vec![0usize; bins + 1];
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let b = ((p * bins as f64).floor() as usize).min(bins);
        if g {
            fg_hist[b] += 1;
        } else {
            bg_hist[b] += 1;
        }
    }

    let n = gt.len();
    let gt_fg: usize = fg_hist.iter().sum();
    let nf = n as f64;
    let mean_gt = gt_fg as f64 / nf;

    let mut curve = vec![0.0; bins];
    let (mut tp, mut fp) = (0usize, 0usize);
    for k in (1..=bins).rev() {
        tp += fg_hist[k];
        fp += bg_hist[k];
        let pred_fg = tp + fp;
        let pred_bg = n - pred_fg;
        let score_sum = if gt_fg == 0 {
            pred_bg as f64
        } else if gt_fg == n {
            pred_fg as f64
        } else {
            let fn_ = gt_fg - tp;
            let tn = pred_bg - fn_;
            let mean_pred = pred_fg as f64 / nf;
            let parts = [
                (tp, 1.0 - mean_pred, 1.0 - mean_gt),
                (fp, 1.0 - mean_pred, -mean_gt),
                (fn_, -mean_pred, 1.0 - mean_gt),
                (tn, -mean_pred, -mean_gt),
            ];
            parts
                .iter()
                .map(|&(count, a, b)| count as f64 * enhanced(a, b))
                .sum()
        };
        curve[k - 1] = score_sum / nf;
    }
    Ok(curve)
}

fn enhanced(pred_dev: f64, gt_dev: f64) -> f64 {
    let denom = pred_dev * pred_dev + gt_dev * gt_dev;
    let align = if denom == 0.0 {
        0.0
    } else {
        2.0 * pred_dev * gt_dev / denom
    };
    (align + 1.0) * (align + 1.0) / 4.0
}
