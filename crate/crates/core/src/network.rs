//! Full model: backbone, optional grounding and edge branches, coarse-to-fine
//! decoder, prediction heads and the composite loss.

use candle_core::{DType, Device, Tensor};

use crate::backbone::{Pyramid, PyramidExtractor, TinyBackbone, PYRAMID_STRIDE};
use crate::cglrm::Cglrm;
use crate::config::{AblationFlags, RunConfig};
use crate::error::{LgsanError, Result};
use crate::feem::{Feem, FeemDims, Head};
use crate::grounding::{mgfa, Grounding, GroundingDims, TextEncoder};
use crate::loss::{dice_loss, weighted_structure_loss};
use crate::nn::{join, Conv2d, ConvNormAct, ParamStore};
use crate::ops;
use crate::saam::{Saam, SaamDims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Output {
    O1,
    O2,
    O3,
    O4,
    M1,
    Oe,
}

impl Output {
    pub const ALL: [Output; 6] = [Output::O1, Output::O2, Output::O3, Output::O4, Output::M1, Output::Oe];

    pub fn name(&self) -> &'static str {
        match self {
            Output::O1 => "O1",
            Output::O2 => "O2",
            Output::O3 => "O3",
            Output::O4 => "O4",
            Output::M1 => "M1",
            Output::Oe => "Oe",
        }
    }
}

/// Logit maps at input resolution for every output the configuration has.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub logits: Vec<(Output, Tensor)>,
    /// Non-fatal wiring notes, e.g. a missing edge input.
    pub warnings: Vec<String>,
}

impl Predictions {
    pub fn logit(&self, which: Output) -> Option<&Tensor> {
        self.logits.iter().find(|(o, _)| *o == which).map(|(_, t)| t)
    }

    /// Sigmoid-space map in `[0, 1]`.
    pub fn prob(&self, which: Output) -> Result<Option<Tensor>> {
        self.logit(which).map(ops::sigmoid).transpose().map_err(Into::into)
    }

    pub fn outputs(&self) -> Vec<Output> {
        self.logits.iter().map(|(o, _)| *o).collect()
    }

    fn crop(self, h: usize, w: usize) -> Result<Self> {
        let logits = self
            .logits
            .into_iter()
            .map(|(o, t)| Ok((o, t.narrow(2, 0, h)?.narrow(3, 0, w)?)))
            .collect::<Result<_>>()?;
        Ok(Self { logits, warnings: self.warnings })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// Boundary-weighted BCE + IoU for each mask output present.
    pub structure: Vec<(Output, f64)>,
    pub dice: Option<f64>,
    pub lambda: f64,
    pub total: f64,
    /// Outputs whose terms were dropped because the configuration lacks them.
    pub dropped: Vec<Output>,
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "total={:.6}", self.total)?;
        for (o, v) in &self.structure {
            write!(f, " {}={:.6}", o.name(), v)?;
        }
        if let Some(d) = self.dice {
            write!(f, " dice={d:.6} lambda={}", self.lambda)?;
        }
        if !self.dropped.is_empty() {
            let names: Vec<_> = self.dropped.iter().map(Output::name).collect();
            write!(f, " dropped={}", names.join(","))?;
        }
        Ok(())
    }
}

/// Sum of the structure losses on O1..O4 and M1 against the mask plus
/// `lambda` times the Dice loss of Oe against the edge map. Returns the
/// differentiable total and its per-term values.
pub fn total_loss(preds: &Predictions, gt_mask: &Tensor, gt_edge: &Tensor, lambda: f64) -> Result<(Tensor, LossBreakdown)> {
    let mut total: Option<Tensor> = None;
    let mut structure = Vec::new();
    let mut dropped = Vec::new();
    let mut add = |t: Tensor| -> Result<()> {
        total = Some(match total.take() {
            Some(acc) => (acc + t)?,
            None => t,
        });
        Ok(())
    };
    for o in [Output::O1, Output::O2, Output::O3, Output::O4, Output::M1] {
        match preds.logit(o) {
            Some(l) => {
                let v = weighted_structure_loss(l, gt_mask)?;
                structure.push((o, scalar(&v)?));
                add(v)?;
            }
            None => dropped.push(o),
        }
    }
    let dice = match preds.logit(Output::Oe) {
        Some(l) => {
            let d = dice_loss(l, gt_edge)?;
            let dv = scalar(&d)?;
            add((d * lambda)?)?;
            Some(dv)
        }
        None => {
            dropped.push(Output::Oe);
            None
        }
    };
    let total = total.ok_or_else(|| LgsanError::Config("model has no outputs".into()))?;
    let tv = scalar(&total)?;
    Ok((total, LossBreakdown { structure, dice, lambda, total: tv, dropped }))
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[derive(Debug, Clone)]
struct StructuredStage {
    reduce: ConvNormAct,
    saam: Saam,
    cglrm: Cglrm,
}

#[derive(Debug, Clone)]
enum Decoder {
    /// CGLRM -> SAAM -> CGLRM on the coarsest map, then SAAM + CGLRM per scale.
    Structured {
        reduce4: ConvNormAct,
        pre4: Cglrm,
        saam4: Saam,
        post4: Cglrm,
        stages: Vec<StructuredStage>,
    },
    /// Concatenate-and-convolve at each scale, with edge features added when present.
    Plain {
        reduce4: ConvNormAct,
        stages: Vec<ConvNormAct>,
        edge_proj: Option<Vec<Conv2d>>,
    },
}

pub struct Lgsan {
    flags: AblationFlags,
    pad_to_multiple: bool,
    lambda: f64,
    backbone: Box<dyn PyramidExtractor>,
    text: TextEncoder,
    grounding: Option<Grounding>,
    attn_plain: Option<Conv2d>,
    feem: Option<Feem>,
    decoder: Decoder,
    heads: Vec<Head>,
    feem_channels: usize,
    dtype: DType,
    device: Device,
}

impl Lgsan {
    pub fn new(cfg: &RunConfig, ps: &mut ParamStore) -> Result<Self> {
        let backbone = TinyBackbone::new(ps, "backbone", cfg.backbone.channels, cfg.backbone.depth)?;
        Self::with_backbone(cfg, ps, Box::new(backbone))
    }

    /// Builds the model around any pyramid extractor with matching widths.
    pub fn with_backbone(cfg: &RunConfig, ps: &mut ParamStore, backbone: Box<dyn PyramidExtractor>) -> Result<Self> {
        cfg.validate()?;
        let flags = cfg.effective_flags();
        let pc = backbone.channels();
        let ca = cfg.grounding.attn_channels;
        let cd = cfg.model.decoder_channels;
        let ce = cfg.feem.channels;
        let hidden = cfg.model.head_channels;
        let full_res = cfg.model.full_res_heads;

        let (grounding, attn_plain) = if flags.grounding {
            let dims = GroundingDims {
                text_dim: cfg.grounding.text_dim,
                visual: cfg.grounding.visual_channels,
                attn: ca,
                depth: cfg.transformer.depth,
                heads: cfg.transformer.heads,
                mlp_ratio: cfg.transformer.mlp_ratio,
            };
            (Some(Grounding::new(ps, "grounding", &dims)?), None)
        } else {
            (None, Some(Conv2d::pointwise(ps, "attn_plain", pc[2], ca, true)?))
        };

        let feem = if flags.edge {
            let dims = FeemDims { pyramid: pc, attn: ca, channels: ce, head_hidden: hidden, full_res_head: full_res };
            Some(Feem::new(ps, "feem", &dims, cfg.feem.cutoff_ratio, cfg.feem.padding_mode)?)
        } else {
            None
        };

        let reduce4 = ConvNormAct::new(ps, "decoder.reduce4", pc[3] + ca, cd, 1)?;
        let decoder = if flags.structure {
            let r = cfg.cglrm.reduction;
            let shared = cfg.cglrm.shared_local_weights;
            let pre4 = Cglrm::new(ps, "decoder.pre4", cd, r, shared)?;
            let saam4 = Saam::new(ps, "decoder.saam4", &SaamDims { channels: cd, guide_m: ca, guide_e: ce, dim: cfg.saam.dim })?;
            let post4 = Cglrm::new(ps, "decoder.post4", cd, r, shared)?;
            let mut stages = Vec::new();
            for i in (0..3).rev() {
                let p = format!("decoder.stage{}", i + 1);
                stages.push(StructuredStage {
                    reduce: ConvNormAct::new(ps, &join(&p, "reduce"), cd + pc[i], cd, 1)?,
                    saam: Saam::new(ps, &join(&p, "saam"), &SaamDims { channels: cd, guide_m: cd, guide_e: ce, dim: cfg.saam.dim })?,
                    cglrm: Cglrm::new(ps, &join(&p, "cglrm"), cd, r, shared)?,
                });
            }
            Decoder::Structured { reduce4, pre4, saam4, post4, stages }
        } else {
            let mut stages = Vec::new();
            for i in (0..3).rev() {
                stages.push(ConvNormAct::new(ps, &format!("decoder.stage{}.reduce", i + 1), cd + pc[i], cd, 1)?);
            }
            let edge_proj = if flags.edge {
                Some(
                    (0..3)
                        .rev()
                        .map(|i| Conv2d::pointwise(ps, &format!("decoder.stage{}.edge_proj", i + 1), ce, cd, true))
                        .collect::<Result<_>>()?,
                )
            } else {
                None
            };
            Decoder::Plain { reduce4, stages, edge_proj }
        };

        let mut heads = Vec::new();
        for i in 1..=3 {
            heads.push(Head::new(ps, &format!("heads.o{i}"), cd, hidden, full_res)?);
        }
        heads.push(Head::new(ps, "heads.o4", ca, hidden, full_res)?);

        Ok(Self {
            flags,
            pad_to_multiple: cfg.model.pad_to_multiple,
            lambda: cfg.lambda,
            backbone,
            text: TextEncoder::new(cfg.grounding.text_dim, cfg.grounding.text_seed),
            grounding,
            attn_plain,
            feem,
            decoder,
            heads,
            feem_channels: ce,
            dtype: ps.dtype(),
            device: ps.device().clone(),
        })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn flags(&self) -> AblationFlags {
        self.flags
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    pub fn outputs(&self) -> Vec<Output> {
        let mut v = vec![Output::O1, Output::O2, Output::O3, Output::O4];
        if self.flags.grounding {
            v.push(Output::M1);
        }
        if self.flags.edge {
            v.push(Output::Oe);
        }
        v
    }

    /// Runs the network on `(B, 3, H, W)` images in `[0, 1]`. `prompts` has
    /// one entry per image and is ignored without grounding.
    pub fn forward(&self, image: &Tensor, prompts: &[String], train: bool) -> Result<Predictions> {
        let (b, _, _, _) = image.dims4()?;
        let text = if self.flags.grounding {
            if prompts.len() != b {
                return Err(LgsanError::Shape(format!("{} prompts for a batch of {b}", prompts.len())));
            }
            Some(self.text.encode_batch(prompts, self.dtype, &self.device)?)
        } else {
            None
        };
        self.forward_with_text(image, text.as_ref(), train)
    }

    /// Like [`Lgsan::forward`] with a precomputed `(B, text_dim)` embedding.
    pub fn forward_with_text(&self, image: &Tensor, text: Option<&Tensor>, train: bool) -> Result<Predictions> {
        let (_, _, h, w) = image.dims4()?;
        let (ph, pw) = (h.next_multiple_of(PYRAMID_STRIDE), w.next_multiple_of(PYRAMID_STRIDE));
        if self.pad_to_multiple && (ph, pw) != (h, w) {
            let padded = image.pad_with_zeros(2, 0, ph - h)?.pad_with_zeros(3, 0, pw - w)?;
            return self.forward_inner(&padded, text, train)?.crop(h, w);
        }
        self.forward_inner(image, text, train)
    }

    fn forward_inner(&self, image: &Tensor, text: Option<&Tensor>, train: bool) -> Result<Predictions> {
        let (b, _, h, w) = image.dims4()?;
        let mut warnings = Vec::new();
        let mut logits = Vec::new();
        let pyr = self.backbone.extract(image)?;

        let (pyr, attn) = match (&self.grounding, &self.attn_plain) {
            (Some(g), _) => {
                let text = text.ok_or_else(|| LgsanError::Config("grounding needs a text embedding".into()))?;
                let out = g.forward(image, text)?;
                logits.push((Output::M1, out.m1_logit.clone()));
                let gated = pyr.map(|f| mgfa(f, &out.m1))?;
                (gated, out.attn)
            }
            (None, Some(conv)) => {
                let attn = conv.forward(&pyr.f[2])?;
                (pyr, attn)
            }
            (None, None) => unreachable!("either grounding or the plain projection exists"),
        };

        let edge = match &self.feem {
            Some(feem) => {
                let out = feem.forward(&pyr, &attn, (h, w), train)?;
                logits.push((Output::Oe, out.e_logit));
                Some(out.e)
            }
            None => None,
        };

        let cams = self.decode(&pyr, &attn, edge.as_ref(), b, &mut warnings)?;
        let mut os = Vec::with_capacity(4);
        for (i, cam) in cams.iter().enumerate() {
            os.push((ALL_O[i], self.heads[i].forward(cam, h, w)?));
        }
        os.push((Output::O4, self.heads[3].forward(&attn, h, w)?));
        os.extend(logits);
        os.sort_by_key(|(o, _)| *o);
        Ok(Predictions { logits: os, warnings })
    }

    /// Returns `cam1..cam3`, finest first.
    fn decode(&self, pyr: &Pyramid, attn: &Tensor, edge: Option<&Tensor>, batch: usize, warnings: &mut Vec<String>) -> Result<Vec<Tensor>> {
        let attn4 = ops::resize_like(attn, &pyr.f[3])?;
        let mut cams = Vec::with_capacity(3);
        match &self.decoder {
            Decoder::Structured { reduce4, pre4, saam4, post4, stages } => {
                let e = match edge {
                    Some(e) => e.clone(),
                    None => {
                        warnings.push("structure decoder without edge branch: using a zero edge map".into());
                        let (_, _, h1, w1) = pyr.f[0].dims4()?;
                        Tensor::zeros((batch, self.feem_channels, h1, w1), self.dtype, &self.device)?
                    }
                };
                let x = reduce4.forward(&Tensor::cat(&[pyr.f[3].clone(), attn4], 1)?)?;
                let mut cam = post4.forward(&saam4.forward(&pre4.forward(&x)?, attn, &e)?)?;
                for (stage, i) in stages.iter().zip([2usize, 1, 0]) {
                    let up = ops::resize_like(&cam, &pyr.f[i])?;
                    let fbar = stage.reduce.forward(&Tensor::cat(&[up, pyr.f[i].clone()], 1)?)?;
                    cam = stage.cglrm.forward(&stage.saam.forward(&fbar, &cam, &e)?)?;
                    cams.push(cam.clone());
                }
            }
            Decoder::Plain { reduce4, stages, edge_proj } => {
                let mut cam = reduce4.forward(&Tensor::cat(&[pyr.f[3].clone(), attn4], 1)?)?;
                for (k, (stage, i)) in stages.iter().zip([2usize, 1, 0]).enumerate() {
                    let up = ops::resize_like(&cam, &pyr.f[i])?;
                    cam = stage.forward(&Tensor::cat(&[up, pyr.f[i].clone()], 1)?)?;
                    if let (Some(proj), Some(e)) = (edge_proj, edge) {
                        cam = (cam + proj[k].forward(&ops::resize_like(e, &pyr.f[i])?)?)?;
                    }
                    cams.push(cam.clone());
                }
            }
        }
        cams.reverse();
        Ok(cams)
    }

    pub fn loss(&self, preds: &Predictions, gt_mask: &Tensor, gt_edge: &Tensor) -> Result<(Tensor, LossBreakdown)> {
        total_loss(preds, gt_mask, gt_edge, self.lambda)
    }
}

const ALL_O: [Output; 3] = [Output::O1, Output::O2, Output::O3];
