//! Ideal radial high-pass filter in the 2-D Fourier domain.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{LgsanError, Result};

/// Removes every frequency bin whose wrapped radial distance from DC is at
/// most `cutoff_ratio * min(H, W) / 2`, per channel, returning the real part.
///
/// The filter is a real, even mask, so the operator is self-adjoint and the
/// backward pass reuses the forward.
#[derive(Debug, Clone, Copy)]
pub struct HighPass {
    pub cutoff_ratio: f64,
}

impl HighPass {
    pub fn new(cutoff_ratio: f64) -> Result<Self> {
        if !(cutoff_ratio > 0.0 && cutoff_ratio < 1.0) {
            return Err(LgsanError::Config(format!(
                "fft cutoff_ratio must lie in (0, 1), got {cutoff_ratio}"
            )));
        }
        Ok(Self { cutoff_ratio })
    }

    pub fn keeps(&self, h: usize, w: usize, u: usize, v: usize) -> bool {
        let fu = u.min(h - u) as f64;
        let fv = v.min(w - v) as f64;
        (fu * fu + fv * fv).sqrt() > self.cutoff_ratio * h.min(w) as f64 / 2.0
    }

    /// Filter without the trailing rectification.
    pub fn linear(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        if h < 2 || w < 2 {
            return Err(LgsanError::Shape(format!(
                "fft high-pass needs spatial dims >= 2, got {h}x{w}"
            )));
        }
        Ok(x.contiguous()?.apply_op1(*self)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.linear(x)?.relu()?)
    }

    fn filter_planes(&self, data: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut planner = FftPlanner::<f64>::new();
        let (row_fwd, row_inv) = (planner.plan_fft_forward(w), planner.plan_fft_inverse(w));
        let (col_fwd, col_inv) = (planner.plan_fft_forward(h), planner.plan_fft_inverse(h));
        let mask: Vec<bool> = (0..h * w).map(|i| self.keeps(h, w, i / w, i % w)).collect();
        let norm = (h * w) as f64;

        let mut out = Vec::with_capacity(data.len());
        let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
        let mut col = vec![Complex64::new(0.0, 0.0); h];
        for plane in data.chunks_exact(h * w) {
            for (b, &v) in buf.iter_mut().zip(plane) {
                *b = Complex64::new(v, 0.0);
            }
            for row in buf.chunks_exact_mut(w) {
                row_fwd.process(row);
            }
            for c in 0..w {
                for r in 0..h {
                    col[r] = buf[r * w + c];
                }
                col_fwd.process(&mut col);
                for (r, z) in col.iter_mut().enumerate() {
                    if !mask[r * w + c] {
                        *z = Complex64::new(0.0, 0.0);
                    }
                }
                col_inv.process(&mut col);
                for r in 0..h {
                    buf[r * w + c] = col[r];
                }
            }
            for row in buf.chunks_exact_mut(w) {
                row_inv.process(row);
            }
            out.extend(buf.iter().map(|z| z.re / norm));
        }
        out
    }
}

impl CustomOp1 for HighPass {
    fn name(&self) -> &'static str {
        "fft-highpass"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (_, _, h, w) = layout.shape().dims4()?;
        let (start, end) = layout
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("fft-highpass expects contiguous input".into()))?;
        let out = match storage {
            CpuStorage::F64(s) => CpuStorage::F64(self.filter_planes(&s[start..end], h, w)),
            CpuStorage::F32(s) => {
                let d: Vec<f64> = s[start..end].iter().map(|&v| v as f64).collect();
                CpuStorage::F32(self.filter_planes(&d, h, w).into_iter().map(|v| v as f32).collect())
            }
            other => candle_core::bail!("fft-highpass: unsupported dtype {:?}", other.dtype()),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.contiguous()?.apply_op1(*self)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn rejects_cutoff_outside_unit_interval() {
        for bad in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(HighPass::new(bad), Err(LgsanError::Config(_))));
        }
    }

    #[test]
    fn constant_plane_is_removed() {
        let x = Tensor::full(2.5f64, (1, 3, 8, 6), &Device::Cpu).unwrap();
        let y = HighPass::new(0.25).unwrap().forward(&x).unwrap();
        let m = y.abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(m < 1e-12);
    }

    #[test]
    fn f32_and_f64_agree() {
        let v: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 / 7.0).collect();
        let x = Tensor::from_vec(v, (1, 1, 8, 8), &Device::Cpu).unwrap();
        let hp = HighPass::new(0.3).unwrap();
        let a = hp.linear(&x).unwrap();
        let b = hp.linear(&x.to_dtype(candle_core::DType::F32).unwrap()).unwrap();
        let d = (a - b.to_dtype(candle_core::DType::F64).unwrap()).unwrap();
        assert!(d.abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap() < 1e-5);
    }
}
