//! Structure measure (S-measure).
//!
//! `S = alpha * S_object + (1 - alpha) * S_region`, with the usual degenerate
//! branches: an all-background ground truth scores `1 - mean(pred)` and an
//! all-foreground one scores `mean(pred)`. Negative combined scores clamp to 0.

use ndarray::{s, ArrayView2};

use crate::{check_inputs, MetricError};

pub const S_MEASURE_ALPHA: f64 = 0.5;

pub fn s_measure(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<f64, MetricError> {
    s_measure_with_alpha(pred, gt, S_MEASURE_ALPHA)
}

pub fn s_measure_with_alpha(
    pred: ArrayView2<f64>,
    gt: ArrayView2<bool>,
    alpha: f64,
) -> Result<f64, MetricError> {
    check_inputs(pred, gt)?;
    let n = gt.len();
    let fg = gt.iter().filter(|&&g| g).count();
    if fg == 0 {
        return Ok(1.0 - mean(pred.iter().copied()));
    }
    if fg == n {
        return Ok(mean(pred.iter().copied()));
    }
    let score = alpha * object_score(pred, gt, fg, n) + (1.0 - alpha) * region_score(pred, gt);
    Ok(score.max(0.0))
}

fn object_score(pred: ArrayView2<f64>, gt: ArrayView2<bool>, fg: usize, n: usize) -> f64 {
    let u = fg as f64 / n as f64;
    let fg_vals: Vec<f64> = pred
        .iter()
        .zip(gt.iter())
        .filter(|(_, &g)| g)
        .map(|(&p, _)| p)
        .collect();
    let bg_vals: Vec<f64> = pred
        .iter()
        .zip(gt.iter())
        .filter(|(_, &g)| !g)
        .map(|(&p, _)| 1.0 - p)
        .collect();
    u * similarity(&fg_vals) + (1.0 - u) * similarity(&bg_vals)
}

fn similarity(values: &[f64]) -> f64 {
    let x = mean(values.iter().copied());
    let sigma = sample_std(values, x);
    2.0 * x / (x * x + 1.0 + sigma)
}

/// Splits both maps at the (rounded) foreground centroid and combines the
/// per-quadrant SSIM scores weighted by quadrant area.
fn region_score(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> f64 {
    let (h, w) = gt.dim();
    let (cx, cy) = centroid(gt);
    let quadrants = [
        (0..cy, 0..cx),
        (0..cy, cx..w),
        (cy..h, 0..cx),
        (cy..h, cx..w),
    ];
    let mut weighted = 0.0;
    for (rows, cols) in quadrants {
        let area = rows.len() * cols.len();
        if area == 0 {
            continue;
        }
        let p = pred.slice(s![rows.clone(), cols.clone()]);
        let g = gt.slice(s![rows, cols]);
        weighted += area as f64 * ssim(p, g);
    }
    weighted / (h * w) as f64
}

/// Split point one past the rounded centroid, so the centroid row/column
/// belongs to the top/left quadrants.
fn centroid(gt: ArrayView2<bool>) -> (usize, usize) {
    let mut sum_r = 0.0;
    let mut sum_c = 0.0;
    let mut count = 0.0;
    for ((r, c), &g) in gt.indexed_iter() {
        if g {
            sum_r += r as f64;
            sum_c += c as f64;
            count += 1.0;
        }
    }
    let cy = (sum_r / count).round_ties_even() as usize;
    let cx = (sum_c / count).round_ties_even() as usize;
    (cx + 1, cy + 1)
}

fn ssim(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> f64 {
    let n = pred.len();
    let x = mean(pred.iter().copied());
    let y = mean(gt.iter().map(|&g| f64::from(u8::from(g))));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let dp = p - x;
        let dg = f64::from(u8::from(g)) - y;
        sxx += dp * dp;
        syy += dg * dg;
        sxy += dp * dg;
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let (sxx, syy, sxy) = (sxx / denom, syy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / beta
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn as_pred(gt: &Array2<bool>) -> Array2<f64> {
        gt.mapv(|g| if g { 1.0 } else { 0.0 })
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = Array2::from_shape_fn((9, 7), |(r, c)| r > 2 && c < 4);
        assert_eq!(s_measure(as_pred(&gt).view(), gt.view()).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_ground_truths() {
        let empty = Array2::from_elem((4, 4), false);
        let full = Array2::from_elem((4, 4), true);
        let pred = Array2::from_elem((4, 4), 0.25);
        assert_eq!(s_measure(pred.view(), empty.view()).unwrap(), 0.75);
        assert_eq!(s_measure(pred.view(), full.view()).unwrap(), 0.25);
    }

    #[test]
    fn centroid_on_last_column_leaves_empty_quadrants() {
        let gt = Array2::from_shape_fn((4, 4), |(_, c)| c == 3);
        let score = s_measure(as_pred(&gt).view(), gt.view()).unwrap();
        assert_eq!(score, 1.0);
    }
}
