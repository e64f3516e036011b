//! Training objective: boundary-weighted BCE + IoU on mask logits and Dice
//! on edge logits.

use candle_core::Tensor;

use crate::error::{LgsanError, Result};
use crate::ops;

pub const DICE_EPS: f64 = 1e-6;

/// Local-mean window for the boundary weights: `max(3, H / 17)`, made odd.
pub fn boundary_window(h: usize) -> usize {
    let k = (h / 17).max(3);
    if k % 2 == 0 {
        k + 1
    } else {
        k
    }
}

pub fn check_binary(gt: &Tensor) -> Result<()> {
    let bad = gt
        .flatten_all()?
        .to_dtype(candle_core::DType::F64)?
        .to_vec1::<f64>()?
        .into_iter()
        .find(|&v| v != 0.0 && v != 1.0);
    match bad {
        Some(v) => Err(LgsanError::Data(format!("ground truth must be binary, found {v}"))),
        None => Ok(()),
    }
}

fn per_sample_sum(x: &Tensor) -> Result<Tensor> {
    Ok(x.flatten_from(1)?.sum(1)?)
}

/// Weighted BCE + weighted IoU per sample, averaged over the batch. Weights
/// are `1 + 5 |mean_k(gt) - gt|`, large near object boundaries.
pub fn weighted_structure_loss(logit: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if logit.dims() != gt.dims() {
        return Err(LgsanError::Shape(format!("logit {:?} vs ground truth {:?}", logit.dims(), gt.dims())));
    }
    check_binary(gt)?;
    let (_, _, h, _) = logit.dims4()?;
    let weight = (((ops::box_filter(gt, boundary_window(h))? - gt)?.abs()? * 5.0)? + 1.0)?;

    // max(x, 0) - x g + log(1 + exp(-|x|))
    let bce = ((logit.relu()? - (logit * gt)?)? + ((logit.abs()?.neg()?.exp()? + 1.0)?.log())?)?;
    let wbce = (per_sample_sum(&(&bce * &weight)?)? / per_sample_sum(&weight)?)?;

    let p = ops::sigmoid(logit)?;
    let inter = per_sample_sum(&((&p * gt)? * &weight)?)?;
    let union = per_sample_sum(&((&p + gt)? * &weight)?)?;
    let wiou = (1.0 - ((&inter + 1.0)? / ((union - &inter)? + 1.0)?)?)?;
    Ok((wbce + wiou)?.mean(0)?)
}

/// `1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)` per sample, averaged.
pub fn dice_loss(logit: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if logit.dims() != gt.dims() {
        return Err(LgsanError::Shape(format!("logit {:?} vs edge map {:?}", logit.dims(), gt.dims())));
    }
    let p = ops::sigmoid(logit)?;
    let num = ((per_sample_sum(&(&p * gt)?)? * 2.0)? + DICE_EPS)?;
    let den = ((per_sample_sum(&p)? + per_sample_sum(gt)?)? + DICE_EPS)?;
    Ok((1.0 - (num / den)?)?.mean(0)?)
}
