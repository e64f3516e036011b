//! Guided linear attention. Queries are modulated by semantic guidance,
//! keys by edge guidance, and attention is summarized as a `C' x C'` matrix
//! so cost grows linearly with the number of positions.

use candle_core::Tensor;

use crate::error::{shape_err, Result};
use crate::nn::{join, Conv2d, ParamStore};
use crate::ops;

/// Intermediates of one attention pass, all token-major.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// `(B, C', HW)`, softmax over positions.
    pub a: Tensor,
    /// `(B, C', C')`.
    pub av: Tensor,
    /// `(B, HW, C')`.
    pub out: Tensor,
}

/// `out = Q (softmax_tokens(K^T) V)` for `(B, HW, C')` inputs.
pub fn linear_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<AttentionTrace> {
    let (b, n, c) = k.dims3()?;
    if q.dims3()? != (b, n, c) || v.dims3()?.0 != b || v.dims3()?.1 != n {
        return shape_err(format!(
            "attention operands disagree: q {:?}, k {:?}, v {:?}",
            q.dims(),
            k.dims(),
            v.dims()
        ));
    }
    let a = ops::softmax(&k.transpose(1, 2)?.contiguous()?, 2)?;
    let av = a.matmul(&v.contiguous()?)?;
    let out = q.contiguous()?.matmul(&av)?;
    Ok(AttentionTrace { a, av, out })
}

#[derive(Debug, Clone)]
pub struct Saam {
    q: Conv2d,
    k: Conv2d,
    v: Conv2d,
    m_proj: Conv2d,
    e_proj: Conv2d,
    out: Conv2d,
    dim: usize,
}

pub struct SaamDims {
    pub channels: usize,
    pub guide_m: usize,
    pub guide_e: usize,
    pub dim: usize,
}

impl Saam {
    pub fn new(ps: &mut ParamStore, path: &str, d: &SaamDims) -> Result<Self> {
        let pw = |ps: &mut ParamStore, name: &str, cin: usize, cout: usize, bias: bool| {
            Conv2d::pointwise(ps, &join(path, name), cin, cout, bias)
        };
        Ok(Self {
            q: pw(ps, "q", d.channels, d.dim, true)?,
            k: pw(ps, "k", d.channels, d.dim, true)?,
            v: pw(ps, "v", d.channels, d.dim, false)?,
            m_proj: pw(ps, "m_proj", d.guide_m, d.dim, true)?,
            e_proj: pw(ps, "e_proj", d.guide_e, d.dim, true)?,
            out: pw(ps, "out", d.dim, d.channels, false)?,
            dim: d.dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Guidance maps are resized to `x` and projected to `C'` channels, then
    /// `Q = Norm(Conv(x) * M)`, `K = Norm(Conv(x) * E)`, `V = Conv(x)`.
    pub fn guided_qkv(&self, x: &Tensor, m: &Tensor, e: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let m = self.m_proj.forward(&ops::resize_like(m, x)?)?;
        let e = self.e_proj.forward(&ops::resize_like(e, x)?)?;
        let q = ops::l2_normalize(&ops::to_tokens(&(self.q.forward(x)? * m)?)?, 2)?;
        let k = ops::l2_normalize(&ops::to_tokens(&(self.k.forward(x)? * e)?)?, 2)?;
        let v = ops::to_tokens(&self.v.forward(x)?)?;
        Ok((q, k, v))
    }

    pub fn forward_traced(&self, x: &Tensor, m: &Tensor, e: &Tensor) -> Result<(Tensor, AttentionTrace)> {
        let (_, _, h, w) = x.dims4()?;
        let (q, k, v) = self.guided_qkv(x, m, e)?;
        let trace = linear_attention(&q, &k, &v)?;
        let y = self.out.forward(&ops::from_tokens(&trace.out, h, w)?)?;
        Ok(((x + y)?, trace))
    }

    pub fn forward(&self, x: &Tensor, m: &Tensor, e: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(x, m, e)?.0)
    }
}
