//! Differentiable tensor helpers that candle does not provide in the needed form.

use candle_core::{DType, Device, Result, Tensor, D};

/// Row `o` holds the bilinear weights of output sample `o` over `inp` inputs
/// (half-pixel centers, edge clamped). Returned transposed, `(inp, out)`.
fn interp_matrix_t(out: usize, inp: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f64; inp * out];
    let scale = inp as f64 / out as f64;
    for o in 0..out {
        let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        let l = s - i0 as f64;
        m[i0 * out + o] += 1.0 - l;
        m[i1 * out + o] += l;
    }
    Tensor::from_vec(m, (inp, out), device)?.to_dtype(dtype)
}

/// Bilinear resize of an NCHW tensor, expressed as two matmuls so it has a
/// backward pass.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if (h, w) == (oh, ow) {
        return Ok(x.clone());
    }
    let (dtype, dev) = (x.dtype(), x.device());
    let y = x
        .contiguous()?
        .reshape((b * c * h, w))?
        .matmul(&interp_matrix_t(ow, w, dtype, dev)?)?;
    let y = y
        .reshape((b * c, h, ow))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b * c * ow, h))?
        .matmul(&interp_matrix_t(oh, h, dtype, dev)?)?;
    y.reshape((b * c, ow, oh))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b, c, oh, ow))
}

pub fn resize_like(x: &Tensor, like: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = like.dims4()?;
    resize_bilinear(x, h, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Zeros,
    Reflect,
}

fn reflect_pad1(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let x = Tensor::cat(&[x.narrow(2, 1, 1)?, x.clone(), x.narrow(2, h - 2, 1)?], 2)?;
    Tensor::cat(&[x.narrow(3, 1, 1)?, x.clone(), x.narrow(3, w - 2, 1)?], 3)
}

/// 3x3 mean filter, stride 1, same size. Zero padding keeps the 1/9 divisor
/// at the border.
pub fn avg_pool3(x: &Tensor, mode: PadMode) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.contiguous()?.reshape((b * c, 1, h, w))?;
    let kernel = Tensor::full(1.0 / 9.0, (1, 1, 3, 3), x.device())?.to_dtype(x.dtype())?;
    let y = match mode {
        PadMode::Zeros => flat.conv2d(&kernel, 1, 1, 1, 1)?,
        PadMode::Reflect => reflect_pad1(&flat)?.conv2d(&kernel, 0, 1, 1, 1)?,
    };
    y.reshape((b, c, h, w))
}

/// Mean filter with an odd `k x k` window, zero padding, divisor `k^2`.
pub fn box_filter(x: &Tensor, k: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.contiguous()?.reshape((b * c, 1, h, w))?;
    let kernel =
        Tensor::full(1.0 / (k * k) as f64, (1, 1, k, k), x.device())?.to_dtype(x.dtype())?;
    flat.conv2d(&kernel, k / 2, 1, 1, 1)?.reshape((b, c, h, w))
}

/// Softmax whose max-shift is excluded from the graph.
pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let m = x.max_keepdim(dim)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    e.broadcast_div(&e.sum_keepdim(dim)?)
}

/// `x / sqrt(sum(x^2) + 1e-24)` along `dim`. The floor keeps the backward pass
/// finite for all-zero vectors.
pub fn l2_normalize(x: &Tensor, dim: usize) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(dim)? + 1e-24)?.sqrt()?;
    x.broadcast_div(&norm)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    candle_nn::ops::sigmoid(x)
}

/// Normalizes over the last dimension, biased variance.
pub fn layer_norm_last(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    centered
        .broadcast_div(&(var + eps)?.sqrt()?)?
        .broadcast_mul(gamma)?
        .broadcast_add(beta)
}

/// `x.conv2d` with a guard for candle 0.9's tiled CPU kernel, which takes
/// any input whose strides equal the channels-last strides as channels-last.
/// A contiguous NCHW tensor with `C == H == W` matches that test and is read
/// in the wrong order, so such inputs are re-laid out as real channels-last
/// memory first.
pub fn conv2d(x: &Tensor, weight: &Tensor, padding: usize, stride: usize) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    let x = if c > 1 && x.stride() == [h * w * c, w * c, c, 1] {
        x.permute((0, 2, 3, 1))?.contiguous()?.permute((0, 3, 1, 2))?
    } else {
        x.clone()
    };
    x.conv2d(weight, padding, stride, 1, 1)
}

/// Per-pixel normalization across channels of an NCHW tensor.
pub fn channel_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let c = gamma.dim(0)?;
    let mean = x.mean_keepdim(1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(1)?;
    centered
        .broadcast_div(&(var + eps)?.sqrt()?)?
        .broadcast_mul(&gamma.reshape((1, c, 1, 1))?)?
        .broadcast_add(&beta.reshape((1, c, 1, 1))?)
}

/// NCHW -> (B, HW, C).
pub fn to_tokens(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    x.reshape((b, c, h * w))?.transpose(1, 2)?.contiguous()
}

/// (B, HW, C) -> NCHW.
pub fn from_tokens(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (b, _, c) = t.dims3()?;
    t.transpose(1, 2)?.contiguous()?.reshape((b, c, h, w))
}
