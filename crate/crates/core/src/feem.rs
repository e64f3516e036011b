//! Edge branch: top-down fusion of the pyramid with spatial edge enhancement,
//! then a Fourier high-pass that yields the edge feature map.

use candle_core::Tensor;

use crate::backbone::Pyramid;
use crate::error::{shape_err, Result};
use crate::fft::HighPass;
use crate::nn::{join, BatchNorm2d, Conv2d, ConvNormAct, ParamStore};
use crate::ops::{self, PadMode};

/// `x + sigmoid(bn(conv1x1(x - avgpool3(x))))`. The weight map is added, not
/// multiplied, so the output minus the input lies in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct EdgeEnhancer {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub pad: PadMode,
}

impl EdgeEnhancer {
    pub fn new(ps: &mut ParamStore, path: &str, channels: usize, pad: PadMode) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::pointwise(ps, &join(path, "conv"), channels, channels, true)?,
            bn: BatchNorm2d::new(ps, &join(path, "bn"), channels)?,
            pad,
        })
    }

    /// Returns `(x - avgpool3(x), enhanced)`.
    pub fn forward_parts(&self, x: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        let (_, _, h, w) = x.dims4()?;
        if h < 3 || w < 3 {
            return shape_err(format!("edge enhancer needs at least 3x3 maps, got {h}x{w}"));
        }
        let diff = (x - ops::avg_pool3(x, self.pad)?)?;
        let weight = ops::sigmoid(&self.bn.forward(&self.conv.forward(&diff)?, train)?)?;
        let out = (x + weight)?;
        Ok((diff, out))
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.forward_parts(x, train)?.1)
    }
}

/// Prediction head: 3x3 conv, ReLU, 1x1 conv to one logit channel, at the
/// requested output resolution. With `full_res` the features are upsampled
/// before the head, otherwise the logit is.
#[derive(Debug, Clone)]
pub struct Head {
    conv: Conv2d,
    out: Conv2d,
    full_res: bool,
}

impl Head {
    pub fn new(ps: &mut ParamStore, path: &str, cin: usize, hidden: usize, full_res: bool) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(ps, &join(path, "conv"), cin, hidden, 3, 1, 1, true)?,
            out: Conv2d::pointwise(ps, &join(path, "out"), hidden, 1, true)?,
            full_res,
        })
    }

    pub fn forward(&self, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        if self.full_res {
            let x = ops::resize_bilinear(x, h, w)?;
            Ok(self.out.forward(&self.conv.forward(&x)?.relu()?)?)
        } else {
            let y = self.out.forward(&self.conv.forward(x)?.relu()?)?;
            Ok(ops::resize_bilinear(&y, h, w)?)
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeemOutput {
    /// `f1'..f4'`, finest first.
    pub fused: [Tensor; 4],
    /// Non-negative edge features at 1/4 scale.
    pub e: Tensor,
    /// Edge logits at input resolution.
    pub e_logit: Tensor,
}

#[derive(Debug, Clone)]
pub struct Feem {
    fuse: [ConvNormAct; 4],
    enhance: [EdgeEnhancer; 3],
    proj: Conv2d,
    high_pass: HighPass,
    head: Head,
    channels: usize,
}

pub struct FeemDims {
    pub pyramid: [usize; 4],
    pub attn: usize,
    pub channels: usize,
    pub head_hidden: usize,
    pub full_res_head: bool,
}

impl Feem {
    pub fn new(ps: &mut ParamStore, path: &str, d: &FeemDims, cutoff_ratio: f64, pad: PadMode) -> Result<Self> {
        let ce = d.channels;
        let p = d.pyramid;
        let f = |ps: &mut ParamStore, i: usize, cin: usize| ConvNormAct::new(ps, &join(path, &format!("fuse{i}")), cin, ce, 1);
        let e = |ps: &mut ParamStore, i: usize| EdgeEnhancer::new(ps, &join(path, &format!("enhance{i}")), ce, pad);
        Ok(Self {
            fuse: [f(ps, 1, ce + p[0])?, f(ps, 2, ce + p[1])?, f(ps, 3, ce + p[2])?, f(ps, 4, p[3] + d.attn)?],
            enhance: [e(ps, 1)?, e(ps, 2)?, e(ps, 3)?],
            proj: Conv2d::pointwise(ps, &join(path, "proj"), ce, ce, true)?,
            high_pass: HighPass::new(cutoff_ratio)?,
            head: Head::new(ps, &join(path, "head"), ce, d.head_hidden, d.full_res_head)?,
            channels: ce,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `f4' = Conv(Cat(Up(f4), attn))`, then for `i = 3, 2, 1`:
    /// `fi' = Enh(Conv(Cat(Up(f(i+1)'), fi)))`.
    pub fn fuse_topdown(&self, pyr: &Pyramid, attn: &Tensor, train: bool) -> Result<[Tensor; 4]> {
        let dims = |t: &Tensor| -> Result<(usize, usize)> {
            let (_, _, h, w) = t.dims4()?;
            Ok((h, w))
        };
        let (ah, aw) = dims(attn)?;
        let (h3, w3) = dims(&pyr.f[2])?;
        if (ah, aw) != (h3, w3) {
            return shape_err(format!("fusion stage 4: attn is {ah}x{aw} but f3 is {h3}x{w3}"));
        }
        for i in 0..3 {
            let (hi, wi) = dims(&pyr.f[i])?;
            let (hn, wn) = dims(&pyr.f[i + 1])?;
            if (hi, wi) != (hn * 2, wn * 2) {
                return shape_err(format!("fusion stage {}: f{} is {hi}x{wi}, expected twice f{} ({hn}x{wn})", i + 1, i + 1, i + 2));
            }
        }
        let f4 = self.fuse[3].forward(&Tensor::cat(&[ops::resize_like(&pyr.f[3], attn)?, attn.clone()], 1)?)?;
        let mut prev = f4.clone();
        let mut out: Vec<Tensor> = Vec::with_capacity(3);
        for i in (0..3).rev() {
            let up = ops::resize_like(&prev, &pyr.f[i])?;
            let fused = self.fuse[i].forward(&Tensor::cat(&[up, pyr.f[i].clone()], 1)?)?;
            prev = self.enhance[i].forward(&fused, train)?;
            out.push(prev.clone());
        }
        Ok([out[2].clone(), out[1].clone(), out[0].clone(), f4])
    }

    /// Projects `f1'` and keeps its rectified high-frequency part. The
    /// projection is channel-wise linear, so it commutes with the per-channel
    /// filter and the result stays non-negative.
    pub fn edge_features(&self, f1: &Tensor) -> Result<Tensor> {
        self.high_pass.forward(&self.proj.forward(f1)?)
    }

    pub fn forward(&self, pyr: &Pyramid, attn: &Tensor, out_hw: (usize, usize), train: bool) -> Result<FeemOutput> {
        let fused = self.fuse_topdown(pyr, attn, train)?;
        let e = self.edge_features(&fused[0])?;
        let e_logit = self.head.forward(&e, out_hw.0, out_hw.1)?;
        Ok(FeemOutput { fused, e, e_logit })
    }
}
