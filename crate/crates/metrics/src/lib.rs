//! Evaluation metrics for camouflaged object detection.
//!
//! All metrics take a soft prediction in `[0, 1]` and a binary ground truth of
//! the same shape, and return a score in `[0, 1]`:
//!
//! - [`mae`]: mean absolute error (lower is better)
//! - [`s_measure`]: structure measure with object- and region-aware terms, `alpha = 0.5`
//! - [`e_measure`]: enhanced-alignment measure averaged over 256 thresholds
//! - [`weighted_fbeta`]: weighted F-measure with `beta^2 = 1`
//!
//! A perfect prediction scores exactly `(S, E, Fw, MAE) = (1, 1, 1, 0)`.

mod distance;
mod enhanced;
mod error;
mod report;
mod structure;
mod weighted;

use ndarray::ArrayView2;

pub use distance::{nearest_foreground, NearestForeground};
pub use enhanced::{e_measure, e_measure_curve, E_MEASURE_THRESHOLDS};
pub use error::MetricError;
pub use report::{MetricAccumulator, MetricReport, SampleMetrics};
pub use structure::{s_measure, s_measure_with_alpha, S_MEASURE_ALPHA};
pub use weighted::{weighted_fbeta, weighted_fbeta_with_beta2};

/// Mean absolute error between a soft prediction and a binary ground truth.
pub fn mae(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<f64, MetricError> {
    check_inputs(pred, gt)?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(gt.iter())
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(sum / n)
}

/// All four metrics for one sample.
pub fn evaluate_sample(
    pred: ArrayView2<f64>,
    gt: ArrayView2<bool>,
) -> Result<SampleMetrics, MetricError> {
    Ok(SampleMetrics {
        s_alpha: s_measure(pred, gt)?,
        e_phi: e_measure(pred, gt)?,
        f_w_beta: weighted_fbeta(pred, gt)?,
        mae: mae(pred, gt)?,
    })
}

pub(crate) fn check_inputs(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<(), MetricError> {
    if pred.dim() != gt.dim() {
        return Err(MetricError::ShapeMismatch {
            pred: pred.dim(),
            gt: gt.dim(),
        });
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(&v) = pred.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(MetricError::OutOfRange(v));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn mae_fixed_points() {
        let gt = Array2::from_shape_fn((4, 4), |(i, j)| (i + j) % 2 == 0);
        let perfect = gt.mapv(|g| if g { 1.0 } else { 0.0 });
        let inverted = perfect.mapv(|v| 1.0 - v);
        assert_eq!(mae(perfect.view(), gt.view()).unwrap(), 0.0);
        assert_eq!(mae(inverted.view(), gt.view()).unwrap(), 1.0);

        let zeros = Array2::from_elem((5, 3), false);
        let quarter = Array2::from_elem((5, 3), 0.25);
        assert_eq!(mae(quarter.view(), zeros.view()).unwrap(), 0.25);
    }

    #[test]
    fn rejects_bad_inputs() {
        let gt = Array2::from_elem((2, 2), false);
        let pred = Array2::from_elem((2, 3), 0.0);
        assert!(matches!(
            mae(pred.view(), gt.view()),
            Err(MetricError::ShapeMismatch { .. })
        ));
        let pred = Array2::from_elem((2, 2), 1.5);
        assert!(matches!(
            s_measure(pred.view(), gt.view()),
            Err(MetricError::OutOfRange(_))
        ));
    }
}
