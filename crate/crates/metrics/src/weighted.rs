//! Weighted F-measure.
//!
//! Errors are first spread along the ground-truth structure (background
//! errors take the value of their nearest foreground pixel, then a 7x7
//! Gaussian with sigma 5 smooths them; foreground pixels keep the smaller of
//! the raw and smoothed error). Background errors are then up-weighted with
//! distance from the object, `2 - exp(ln(0.5) / 5 * d)`, and the weighted
//! precision and recall are combined with `beta^2 = 1`.

use ndarray::{Array2, ArrayView2};

use crate::distance::nearest_foreground;
use crate::{check_inputs, MetricError};

const GAUSS_SIZE: usize = 7;
const GAUSS_SIGMA: f64 = 5.0;

pub fn weighted_fbeta(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<f64, MetricError> {
    weighted_fbeta_with_beta2(pred, gt, 1.0)
}

pub fn weighted_fbeta_with_beta2(
    pred: ArrayView2<f64>,
    gt: ArrayView2<bool>,
    beta2: f64,
) -> Result<f64, MetricError> {
    check_inputs(pred, gt)?;
    if !gt.iter().any(|&g| g) {
        return Ok(0.0);
    }
    let (h, w) = gt.dim();
    let nearest = nearest_foreground(gt);
    let err = Array2::from_shape_fn((h, w), |(r, c)| {
        (pred[[r, c]] - if gt[[r, c]] { 1.0 } else { 0.0 }).abs()
    });
    let spread = Array2::from_shape_fn((h, w), |(r, c)| {
        if gt[[r, c]] {
            err[[r, c]]
        } else {
            let (nr, nc) = nearest.index[[r, c]];
            err[[nr, nc]]
        }
    });
    let smoothed = gaussian_blur(&spread);

    let (mut fg_count, mut fg_err, mut bg_err) = (0.0, 0.0, 0.0);
    for ((r, c), &g) in gt.indexed_iter() {
        let e = err[[r, c]];
        if g {
            let ea = smoothed[[r, c]];
            fg_err += if ea < e { ea } else { e };
            fg_count += 1.0;
        } else {
            let importance = 2.0 - ((0.5f64).ln() / 5.0 * nearest.distance(r, c)).exp();
            bg_err += e * importance;
        }
    }

    let tp = fg_count - fg_err;
    let recall = 1.0 - fg_err / fg_count;
    let precision = if tp + bg_err > 0.0 { tp / (tp + bg_err) } else { 0.0 };
    let denom = recall + beta2 * precision;
    Ok(if denom > 0.0 {
        (1.0 + beta2) * recall * precision / denom
    } else {
        0.0
    })
}

/// Separable 7x7 Gaussian, zero padding outside the map.
fn gaussian_blur(src: &Array2<f64>) -> Array2<f64> {
    let half = (GAUSS_SIZE / 2) as isize;
    let raw: Vec<f64> = (-half..=half)
        .map(|x| (-((x * x) as f64) / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let kernel: Vec<f64> = raw.iter().map(|v| v / total).collect();

    let (h, w) = src.dim();
    let pass = |input: &Array2<f64>, vertical: bool| {
        Array2::from_shape_fn((h, w), |(r, c)| {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let off = k as isize - half;
                let (rr, cc) = if vertical {
                    (r as isize + off, c as isize)
                } else {
                    (r as isize, c as isize + off)
                };
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    acc += kv * input[[rr as usize, cc as usize]];
                }
            }
            acc
        })
    };
    pass(&pass(src, true), false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = Array2::from_shape_fn((10, 12), |(r, c)| (3..7).contains(&r) && (2..9).contains(&c));
        let pred = gt.mapv(|g| if g { 1.0 } else { 0.0 });
        assert_eq!(weighted_fbeta(pred.view(), gt.view()).unwrap(), 1.0);
    }

    #[test]
    fn empty_ground_truth_scores_zero() {
        let gt = Array2::from_elem((4, 4), false);
        let pred = Array2::from_elem((4, 4), 0.0);
        assert_eq!(weighted_fbeta(pred.view(), gt.view()).unwrap(), 0.0);
    }

    #[test]
    fn all_zero_prediction_scores_zero() {
        let gt = Array2::from_shape_fn((40, 40), |(r, c)| (10..30).contains(&r) && (10..30).contains(&c));
        let pred = Array2::from_elem((40, 40), 0.0);
        let fw = weighted_fbeta(pred.view(), gt.view()).unwrap();
        assert!(fw < 1e-9, "{fw}");
    }
}
