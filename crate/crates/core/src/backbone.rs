//! Four-scale convolutional feature pyramid (strides 4, 8, 16, 32).

use candle_core::Tensor;

use crate::error::{shape_err, Result};
use crate::nn::{join, ConvNormAct, ParamStore};

/// Features at 1/4, 1/8, 1/16 and 1/32 of the input resolution.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub f: [Tensor; 4],
}

impl Pyramid {
    pub fn map(&self, mut op: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Self> {
        Ok(Self { f: [op(&self.f[0])?, op(&self.f[1])?, op(&self.f[2])?, op(&self.f[3])?] })
    }
}

/// Anything that turns an image batch into a [`Pyramid`]. A pretrained
/// encoder can be plugged in through this trait without touching the rest of
/// the network.
pub trait PyramidExtractor: Send + Sync {
    fn channels(&self) -> [usize; 4];
    fn extract(&self, image: &Tensor) -> Result<Pyramid>;
}

pub const PYRAMID_STRIDE: usize = 32;

pub fn check_input_size(image: &Tensor) -> Result<()> {
    let (_, c, h, w) = image.dims4()?;
    if c != 3 {
        return shape_err(format!("expected 3 input channels, got {c}"));
    }
    if h == 0 || w == 0 || h % PYRAMID_STRIDE != 0 || w % PYRAMID_STRIDE != 0 {
        return shape_err(format!(
            "input {h}x{w} is not divisible by {PYRAMID_STRIDE}; pad to a multiple of {PYRAMID_STRIDE}"
        ));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Residual(ConvNormAct);

impl Residual {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok((x + self.0.forward(x)?)?)
    }
}

#[derive(Debug, Clone)]
struct Stage {
    down: Vec<ConvNormAct>,
    blocks: Vec<Residual>,
}

/// Strided conv stages with channel norm and ReLU; the first stage
/// downsamples twice.
#[derive(Debug, Clone)]
pub struct TinyBackbone {
    stages: Vec<Stage>,
    channels: [usize; 4],
}

impl TinyBackbone {
    pub fn new(ps: &mut ParamStore, path: &str, channels: [usize; 4], depth: usize) -> Result<Self> {
        let mut stages = Vec::with_capacity(4);
        let mut cin = 3;
        for (i, &c) in channels.iter().enumerate() {
            let sp = join(path, &format!("stage{}", i + 1));
            let mut down = Vec::new();
            if i == 0 {
                down.push(ConvNormAct::new(ps, &join(&sp, "down0"), cin, c, 2)?);
                down.push(ConvNormAct::new(ps, &join(&sp, "down1"), c, c, 2)?);
            } else {
                down.push(ConvNormAct::new(ps, &join(&sp, "down0"), cin, c, 2)?);
            }
            let blocks = (0..depth)
                .map(|d| Ok(Residual(ConvNormAct::new(ps, &join(&sp, &format!("block{d}")), c, c, 1)?)))
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage { down, blocks });
            cin = c;
        }
        Ok(Self { stages, channels })
    }
}

impl PyramidExtractor for TinyBackbone {
    fn channels(&self) -> [usize; 4] {
        self.channels
    }

    fn extract(&self, image: &Tensor) -> Result<Pyramid> {
        check_input_size(image)?;
        let mut x = ((image - 0.5)? * 2.0)?;
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            for d in &stage.down {
                x = d.forward(&x)?;
            }
            for b in &stage.blocks {
                x = b.forward(&x)?;
            }
            outs.push(x.clone());
        }
        let [a, b, c, d]: [Tensor; 4] = outs.try_into().expect("four stages");
        Ok(Pyramid { f: [a, b, c, d] })
    }
}
