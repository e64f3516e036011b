//! Coarse-guided local refinement: channel and spatial attention produce a
//! global guidance map, the input is cut into four quadrants that are each
//! refined under that guidance, and the result is fused back with a residual.

use candle_core::Tensor;

use crate::error::Result;
use crate::nn::{join, Conv2d, ParamStore};
use crate::ops;

/// Four quadrants in the order top-left, top-right, bottom-left,
/// bottom-right, plus the original size so padding can be undone.
#[derive(Debug, Clone)]
pub struct QuadSplit {
    pub parts: [Tensor; 4],
    pub h: usize,
    pub w: usize,
}

/// Splits into quadrants of size `ceil(H/2) x ceil(W/2)`, zero-padding odd
/// sizes at the bottom and right.
pub fn spatial_split(x: &Tensor) -> Result<QuadSplit> {
    let (_, _, h, w) = x.dims4()?;
    let padded = x.pad_with_zeros(2, 0, h % 2)?.pad_with_zeros(3, 0, w % 2)?;
    let (hh, hw) = (h.div_ceil(2), w.div_ceil(2));
    let part = |r: usize, c: usize| -> Result<Tensor> { Ok(padded.narrow(2, r * hh, hh)?.narrow(3, c * hw, hw)?) };
    Ok(QuadSplit { parts: [part(0, 0)?, part(0, 1)?, part(1, 0)?, part(1, 1)?], h, w })
}

pub fn spatial_merge(q: &QuadSplit) -> Result<Tensor> {
    let [tl, tr, bl, br] = &q.parts;
    let top = Tensor::cat(&[tl, tr], 3)?;
    let bottom = Tensor::cat(&[bl, br], 3)?;
    Ok(Tensor::cat(&[top, bottom], 2)?.narrow(2, 0, q.h)?.narrow(3, 0, q.w)?)
}

#[derive(Debug, Clone)]
pub struct Cglrm {
    ca_fc1: Conv2d,
    ca_fc2: Conv2d,
    sa: Conv2d,
    local: Vec<Conv2d>,
    fuse: Conv2d,
    out: Conv2d,
}

impl Cglrm {
    pub fn new(ps: &mut ParamStore, path: &str, channels: usize, reduction: usize, shared_local: bool) -> Result<Self> {
        let c = channels;
        let hidden = (c / reduction).max(1);
        let n_local = if shared_local { 1 } else { 4 };
        Ok(Self {
            ca_fc1: Conv2d::pointwise(ps, &join(path, "ca_fc1"), c, hidden, false)?,
            ca_fc2: Conv2d::pointwise(ps, &join(path, "ca_fc2"), hidden, c, false)?,
            sa: Conv2d::new(ps, &join(path, "sa"), 2, 1, 7, 1, 3, false)?,
            local: (0..n_local)
                .map(|i| Conv2d::new(ps, &join(path, &format!("local{i}")), c, c, 3, 1, 1, true))
                .collect::<Result<_>>()?,
            fuse: Conv2d::new(ps, &join(path, "fuse"), 2 * c, c, 3, 1, 1, true)?,
            out: Conv2d::new(ps, &join(path, "out"), c, c, 3, 1, 1, true)?,
        })
    }

    /// `sigmoid(MLP(avgpool(x)) + MLP(maxpool(x)))`, shape `(B, C, 1, 1)`.
    pub fn channel_attention(&self, x: &Tensor) -> Result<Tensor> {
        let mlp = |v: &Tensor| -> Result<Tensor> { self.ca_fc2.forward(&self.ca_fc1.forward(v)?.relu()?) };
        let avg = x.mean_keepdim(3)?.mean_keepdim(2)?;
        let max = x.max_keepdim(3)?.max_keepdim(2)?;
        Ok(ops::sigmoid(&(mlp(&avg)? + mlp(&max)?)?)?)
    }

    /// `sigmoid(conv7x7([mean_c(x); max_c(x)]))`, shape `(B, 1, H, W)`.
    pub fn spatial_attention(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = Tensor::cat(&[x.mean_keepdim(1)?, x.max_keepdim(1)?], 1)?;
        Ok(ops::sigmoid(&self.sa.forward(&pooled)?)?)
    }

    /// `g = SA(CA(x) * x) * (CA(x) * x)`.
    pub fn global_guidance(&self, x: &Tensor) -> Result<Tensor> {
        let x_ca = x.broadcast_mul(&self.channel_attention(x)?)?;
        Ok(x_ca.broadcast_mul(&self.spatial_attention(&x_ca)?)?)
    }

    /// `x_hat_i = ReLU(Conv(x_i * sigmoid(g_i)))` for each quadrant, in order.
    pub fn local_refine(&self, x: &Tensor, g: &Tensor) -> Result<QuadSplit> {
        let xs = spatial_split(x)?;
        let gs = spatial_split(g)?;
        let mut parts = Vec::with_capacity(4);
        for i in 0..4 {
            let conv = &self.local[if self.local.len() == 1 { 0 } else { i }];
            let gated = (&xs.parts[i] * ops::sigmoid(&gs.parts[i])?)?;
            parts.push(conv.forward(&gated)?.relu()?);
        }
        let parts: [Tensor; 4] = parts.try_into().expect("four quadrants");
        Ok(QuadSplit { parts, h: xs.h, w: xs.w })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.global_guidance(x)?;
        let local = spatial_merge(&self.local_refine(x, &g)?)?;
        let fused = self.fuse.forward(&Tensor::cat(&[local, g], 1)?)?.relu()?;
        Ok((self.out.forward(&fused)? + x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn flat(t: &Tensor) -> Vec<f64> {
        t.flatten_all().unwrap().to_vec1::<f64>().unwrap()
    }

    #[test]
    fn quadrants_of_a_counting_grid() {
        let x = Tensor::arange(0f64, 16.0, &Device::Cpu).unwrap().reshape((1, 1, 4, 4)).unwrap();
        let q = spatial_split(&x).unwrap();
        let got: Vec<Vec<f64>> = q.parts.iter().map(flat).collect();
        assert_eq!(got, vec![vec![0., 1., 4., 5.], vec![2., 3., 6., 7.], vec![8., 9., 12., 13.], vec![10., 11., 14., 15.]]);
    }

    #[test]
    fn odd_sizes_pad_and_crop_back() {
        let x = Tensor::randn(0f64, 1.0, (1, 2, 5, 5), &Device::Cpu).unwrap();
        let q = spatial_split(&x).unwrap();
        assert!(q.parts.iter().all(|p| p.dims() == [1, 2, 3, 3]));
        assert_eq!(flat(&spatial_merge(&q).unwrap()), flat(&x));
    }

    #[test]
    fn channel_weights_lie_in_unit_interval() {
        let mut ps = ParamStore::new(0, DType::F64, Device::Cpu);
        let m = Cglrm::new(&mut ps, "m", 4, 2, true).unwrap();
        let x = Tensor::randn(0f64, 5.0, (2, 4, 6, 6), &Device::Cpu).unwrap();
        let ca = flat(&m.channel_attention(&x).unwrap());
        assert!(ca.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zeroed_refinement_is_the_identity() {
        let mut ps = ParamStore::new(0, DType::F64, Device::Cpu);
        let m = Cglrm::new(&mut ps, "m", 4, 2, false).unwrap();
        ps.zero_prefix("m.out").unwrap();
        let x = Tensor::randn(0f64, 1.0, (1, 4, 7, 5), &Device::Cpu).unwrap();
        assert_eq!(flat(&m.forward(&x).unwrap()), flat(&x));
    }

    #[test]
    fn quadrants_refine_independently() {
        let mut ps = ParamStore::new(3, DType::F64, Device::Cpu);
        let m = Cglrm::new(&mut ps, "m", 3, 1, true).unwrap();
        let x = Tensor::randn(0f64, 1.0, (1, 3, 8, 8), &Device::Cpu).unwrap();
        let g = m.global_guidance(&x).unwrap();
        let mut q = spatial_split(&x).unwrap();
        q.parts[0] = q.parts[0].zeros_like().unwrap();
        let x0 = spatial_merge(&q).unwrap();
        let a = m.local_refine(&x, &g).unwrap();
        let b = m.local_refine(&x0, &g).unwrap();
        assert_ne!(flat(&a.parts[0]), flat(&b.parts[0]));
        for i in 1..4 {
            assert_eq!(flat(&a.parts[i]), flat(&b.parts[i]));
        }
    }
}
