//! Language grounding: prompt embedding, a small visual encoder with
//! text-modulated multi-scale fusion, a text-conditioned mask decoder, mask
//! gating of features, and a transformer over the fused features.

use candle_core::{DType, Device, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{LgsanError, Result};
use crate::nn::{join, ChannelNorm, Conv2d, ConvNormAct, LayerNorm, Linear, ParamStore};
use crate::ops;

/// Deterministic hashed text embedding. Every token maps to a seeded
/// Gaussian vector; the category word (the last token) carries full weight
/// and the template words a quarter, and the sum is L2-normalized.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub dim: usize,
    pub seed: u64,
}

const TEMPLATE_WEIGHT: f64 = 0.25;

impl TextEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    pub fn tokens(prompt: &str) -> Vec<String> {
        prompt
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        (0..self.dim)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect()
    }

    pub fn encode(&self, prompt: &str) -> Result<Vec<f64>> {
        let tokens = Self::tokens(prompt);
        let Some(last) = tokens.len().checked_sub(1) else {
            return Err(LgsanError::Data(format!("prompt {prompt:?} has no tokens")));
        };
        let mut v = vec![0.0; self.dim];
        for (i, tok) in tokens.iter().enumerate() {
            let wgt = if i == last { 1.0 } else { TEMPLATE_WEIGHT };
            for (acc, t) in v.iter_mut().zip(self.token_vector(tok)) {
                *acc += wgt * t;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        Ok(v)
    }

    /// `(B, dim)` tensor of encoded prompts.
    pub fn encode_batch(&self, prompts: &[String], dtype: DType, device: &Device) -> Result<Tensor> {
        let mut flat = Vec::with_capacity(prompts.len() * self.dim);
        for p in prompts {
            flat.extend(self.encode(p)?);
        }
        Ok(Tensor::from_vec(flat, (prompts.len(), self.dim), device)?.to_dtype(dtype)?)
    }
}

/// Residual gating `f * (1 + m)` with the mask resized to the feature map.
pub fn mgfa(feature: &Tensor, m1: &Tensor) -> Result<Tensor> {
    let m = ops::resize_like(m1, feature)?;
    Ok(feature.broadcast_mul(&(m + 1.0)?)?)
}

#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
}

impl TransformerBlock {
    pub fn new(ps: &mut ParamStore, path: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(ps, &join(path, "ln1"), dim)?,
            qkv: Linear::new(ps, &join(path, "qkv"), dim, 3 * dim)?,
            proj: Linear::new(ps, &join(path, "proj"), dim, dim)?,
            ln2: LayerNorm::new(ps, &join(path, "ln2"), dim)?,
            fc1: Linear::new(ps, &join(path, "fc1"), dim, mlp_ratio * dim)?,
            fc2: Linear::new(ps, &join(path, "fc2"), mlp_ratio * dim, dim)?,
            heads,
        })
    }

    /// Tokens `(B, N, C)` in, tokens out, plus the attention weights
    /// `(B, heads, N, N)`.
    pub fn forward_with_weights(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, n, c) = x.dims3()?;
        let d = c / self.heads;
        let qkv = self
            .qkv
            .forward(&self.ln1.forward(x)?)?
            .reshape((b, n, 3, self.heads, d))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (d as f64).sqrt())?;
        let weights = ops::softmax(&scores, 3)?;
        let att = weights
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, n, c))?;
        let x = (x + self.proj.forward(&att)?)?;
        let hidden = self.fc1.forward(&self.ln2.forward(&x)?)?.gelu()?;
        let x = (&x + self.fc2.forward(&hidden)?)?;
        Ok((x, weights))
    }
}

#[derive(Debug, Clone)]
pub struct GroundingOutput {
    /// Fused visual features at 1/16 scale.
    pub attn_vis: Tensor,
    /// Mask logits at input resolution; the mask is their sigmoid.
    pub m1_logit: Tensor,
    pub m1: Tensor,
    /// `attn_vis` gated by the mask.
    pub attn_vis_gated: Tensor,
    /// Transformer output on the gated features.
    pub attn: Tensor,
}

#[derive(Debug, Clone)]
pub struct Grounding {
    patch: Conv2d,
    patch_norm: ChannelNorm,
    tap2: ConvNormAct,
    tap3: ConvNormAct,
    lateral: [Conv2d; 3],
    text_gate: Linear,
    fuse: ConvNormAct,
    film: Linear,
    up1: ConvNormAct,
    up2: ConvNormAct,
    logit: Conv2d,
    blocks: Vec<TransformerBlock>,
    channels: usize,
}

pub struct GroundingDims {
    pub text_dim: usize,
    pub visual: usize,
    pub attn: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Grounding {
    pub fn new(ps: &mut ParamStore, path: &str, d: &GroundingDims) -> Result<Self> {
        let (cv, ca) = (d.visual, d.attn);
        let lat = |ps: &mut ParamStore, i: usize| Conv2d::pointwise(ps, &join(path, &format!("lateral{i}")), cv, ca, true);
        Ok(Self {
            patch: Conv2d::new(ps, &join(path, "patch"), 3, cv, 8, 8, 0, true)?,
            patch_norm: ChannelNorm::new(ps, &join(path, "patch_norm"), cv)?,
            tap2: ConvNormAct::new(ps, &join(path, "tap2"), cv, cv, 2)?,
            tap3: ConvNormAct::new(ps, &join(path, "tap3"), cv, cv, 2)?,
            lateral: [lat(ps, 1)?, lat(ps, 2)?, lat(ps, 3)?],
            text_gate: Linear::new(ps, &join(path, "text_gate"), d.text_dim, ca)?,
            fuse: ConvNormAct::new(ps, &join(path, "fuse"), ca, ca, 1)?,
            film: Linear::new(ps, &join(path, "film"), d.text_dim, 2 * ca)?,
            up1: ConvNormAct::new(ps, &join(path, "up1"), ca, ca / 2, 1)?,
            up2: ConvNormAct::new(ps, &join(path, "up2"), ca / 2, ca / 2, 1)?,
            logit: Conv2d::pointwise(ps, &join(path, "logit"), ca / 2, 1, true)?,
            blocks: (0..d.depth)
                .map(|i| TransformerBlock::new(ps, &join(path, &format!("block{i}")), ca, d.heads, d.mlp_ratio))
                .collect::<Result<_>>()?,
            channels: ca,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Multi-scale visual taps at 1/8, 1/16 and 1/32.
    fn taps(&self, image: &Tensor) -> Result<[Tensor; 3]> {
        let x = ((image - 0.5)? * 2.0)?;
        let t1 = self.patch_norm.forward(&self.patch.forward(&x)?)?.relu()?;
        let t2 = self.tap2.forward(&t1)?;
        let t3 = self.tap3.forward(&t2)?;
        Ok([t1, t2, t3])
    }

    fn unsqueeze_hw(v: &Tensor) -> Result<Tensor> {
        Ok(v.unsqueeze(D::Minus1)?.unsqueeze(D::Minus1)?)
    }

    /// `text` is `(B, text_dim)`.
    pub fn forward(&self, image: &Tensor, text: &Tensor) -> Result<GroundingOutput> {
        let (_, _, h, w) = image.dims4()?;
        let [t1, t2, t3] = self.taps(image)?;
        let gate = Self::unsqueeze_hw(&self.text_gate.forward(text)?)?;
        let top = self.lateral[2].forward(&t3)?.broadcast_mul(&(gate + 1.0)?)?;
        let mid = self.lateral[1].forward(&t2)?;
        let fine = self.lateral[0].forward(&t1)?;
        let sum = ((&mid + ops::resize_like(&top, &mid)?)? + ops::resize_like(&fine, &mid)?)?;
        let attn_vis = self.fuse.forward(&sum)?;

        let film = self.film.forward(text)?;
        let ca = self.channels;
        let scale = Self::unsqueeze_hw(&film.narrow(1, 0, ca)?)?;
        let shift = Self::unsqueeze_hw(&film.narrow(1, ca, ca)?)?;
        let d = attn_vis.broadcast_mul(&(scale + 1.0)?)?.broadcast_add(&shift)?.relu()?;
        let (_, _, hd, wd) = d.dims4()?;
        let d = self.up1.forward(&ops::resize_bilinear(&d, hd * 2, wd * 2)?)?;
        let d = self.up2.forward(&ops::resize_bilinear(&d, hd * 4, wd * 4)?)?;
        let m1_logit = ops::resize_bilinear(&self.logit.forward(&d)?, h, w)?;
        let m1 = ops::sigmoid(&m1_logit)?;

        let attn_vis_gated = mgfa(&attn_vis, &m1)?;
        let attn = self.transform(&attn_vis_gated)?;
        Ok(GroundingOutput { attn_vis, m1_logit, m1, attn_vis_gated, attn })
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.transform_with_weights(x)?.0)
    }

    /// Runs every block, returning the last attention weight matrix too.
    pub fn transform_with_weights(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (_, _, h, w) = x.dims4()?;
        let mut t = ops::to_tokens(x)?;
        let mut weights = Vec::new();
        for b in &self.blocks {
            let (next, wts) = b.forward_with_weights(&t)?;
            t = next;
            weights.push(wts);
        }
        Ok((ops::from_tokens(&t, h, w)?, weights))
    }
}
