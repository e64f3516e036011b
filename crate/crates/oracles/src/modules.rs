//! Scalar-loop references for the network building blocks.

use crate::{sigmoid, Nchw};

/// Direct convolution (cross-correlation) with zero padding.
/// `weight` is `[co][ci][kh][kw]`.
pub fn conv2d(
    x: &Nchw,
    weight: &[f64],
    bias: Option<&[f64]>,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Nchw {
    let ci = x.c;
    assert_eq!(weight.len(), co * ci * k * k);
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut out = Nchw::zeros(x.n, co, oh, ow);
    for n in 0..x.n {
        for o in 0..co {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for i in 0..ci {
                        for kr in 0..k {
                            for kc in 0..k {
                                let rr = (r * stride + kr) as isize - pad as isize;
                                let cc = (c * stride + kc) as isize - pad as isize;
                                if rr < 0 || cc < 0 || rr >= x.h as isize || cc >= x.w as isize {
                                    continue;
                                }
                                let wv = weight[((o * ci + i) * k + kr) * k + kc];
                                acc += wv * x.at(n, i, rr as usize, cc as usize);
                            }
                        }
                    }
                    out.set(n, o, r, c, acc);
                }
            }
        }
    }
    out
}

pub fn concat_channels(a: &Nchw, b: &Nchw) -> Nchw {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w));
    let mut out = Nchw::zeros(a.n, a.c + b.c, a.h, a.w);
    for n in 0..a.n {
        for c in 0..a.c + b.c {
            for r in 0..a.h {
                for col in 0..a.w {
                    let v = if c < a.c {
                        a.at(n, c, r, col)
                    } else {
                        b.at(n, c - a.c, r, col)
                    };
                    out.set(n, c, r, col, v);
                }
            }
        }
    }
    out
}

pub fn map(x: &Nchw, f: impl Fn(f64) -> f64) -> Nchw {
    Nchw {
        data: x.data.iter().map(|&v| f(v)).collect(),
        ..x.clone()
    }
}

pub fn zip(a: &Nchw, b: &Nchw, f: impl Fn(f64, f64) -> f64) -> Nchw {
    assert_eq!(a.dims(), b.dims());
    Nchw {
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        ..a.clone()
    }
}

/// Bilinear resize, half-pixel centers, no antialiasing.
pub fn resize_bilinear(x: &Nchw, oh: usize, ow: usize) -> Nchw {
    let src = |o: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Nchw::zeros(x.n, x.c, oh, ow);
    for n in 0..x.n {
        for c in 0..x.c {
            for r in 0..oh {
                let (r0, r1, lr) = src(r, oh, x.h);
                for col in 0..ow {
                    let (c0, c1, lc) = src(col, ow, x.w);
                    let v = (1.0 - lr) * ((1.0 - lc) * x.at(n, c, r0, c0) + lc * x.at(n, c, r0, c1))
                        + lr * ((1.0 - lc) * x.at(n, c, r1, c0) + lc * x.at(n, c, r1, c1));
                    out.set(n, c, r, col, v);
                }
            }
        }
    }
    out
}

/// 3x3 mean, stride 1. Zero padding counts the padded cells in the divisor;
/// reflect padding mirrors without repeating the edge.
pub fn avg_pool3(x: &Nchw, reflect: bool) -> Nchw {
    let mut out = Nchw::zeros(x.n, x.c, x.h, x.w);
    let refl = |i: isize, len: usize| -> Option<usize> {
        if i >= 0 && (i as usize) < len {
            Some(i as usize)
        } else if !reflect {
            None
        } else if i < 0 {
            Some((-i) as usize)
        } else {
            Some(2 * (len - 1) - i as usize)
        }
    };
    for n in 0..x.n {
        for c in 0..x.c {
            for r in 0..x.h {
                for col in 0..x.w {
                    let mut acc = 0.0;
                    for dr in -1..=1isize {
                        for dc in -1..=1isize {
                            if let (Some(rr), Some(cc)) =
                                (refl(r as isize + dr, x.h), refl(col as isize + dc, x.w))
                            {
                                acc += x.at(n, c, rr, cc);
                            }
                        }
                    }
                    out.set(n, c, r, col, acc / 9.0);
                }
            }
        }
    }
    out
}

/// Batch normalization over (N, H, W) per channel. `running = None` uses
/// the biased batch statistics.
pub fn batch_norm(
    x: &Nchw,
    gamma: &[f64],
    beta: &[f64],
    running: Option<(&[f64], &[f64])>,
    eps: f64,
) -> Nchw {
    let mut out = x.clone();
    let count = (x.n * x.h * x.w) as f64;
    for c in 0..x.c {
        let (mean, var) = match running {
            Some((m, v)) => (m[c], v[c]),
            None => {
                let mut s = 0.0;
                for n in 0..x.n {
                    for r in 0..x.h {
                        for col in 0..x.w {
                            s += x.at(n, c, r, col);
                        }
                    }
                }
                let m = s / count;
                let mut v = 0.0;
                for n in 0..x.n {
                    for r in 0..x.h {
                        for col in 0..x.w {
                            v += (x.at(n, c, r, col) - m).powi(2);
                        }
                    }
                }
                (m, v / count)
            }
        };
        for n in 0..x.n {
            for r in 0..x.h {
                for col in 0..x.w {
                    let v = (x.at(n, c, r, col) - mean) / (var + eps).sqrt() * gamma[c] + beta[c];
                    out.set(n, c, r, col, v);
                }
            }
        }
    }
    out
}

/// Per-pixel layer normalization across channels.
pub fn channel_norm(x: &Nchw, gamma: &[f64], beta: &[f64], eps: f64) -> Nchw {
    let mut out = x.clone();
    for n in 0..x.n {
        for r in 0..x.h {
            for col in 0..x.w {
                let vals: Vec<f64> = (0..x.c).map(|c| x.at(n, c, r, col)).collect();
                let m = vals.iter().sum::<f64>() / x.c as f64;
                let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / x.c as f64;
                for c in 0..x.c {
                    out.set(n, c, r, col, (vals[c] - m) / (v + eps).sqrt() * gamma[c] + beta[c]);
                }
            }
        }
    }
    out
}

/// 3x3 conv (no bias) -> channel norm -> ReLU.
pub struct ConvNormActWeights {
    pub weight: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub out_channels: usize,
}

pub fn conv_norm_act(x: &Nchw, p: &ConvNormActWeights) -> Nchw {
    let y = conv2d(x, &p.weight, None, p.out_channels, 3, 1, 1);
    map(&channel_norm(&y, &p.gamma, &p.beta, 1e-5), |v| v.max(0.0))
}

pub struct EdgeEnhanceWeights {
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub running: Option<(Vec<f64>, Vec<f64>)>,
    pub reflect: bool,
}

/// Returns `(x - pool(x), x + sigmoid(bn(conv1x1(x - pool(x)))))`.
pub fn edge_enhance(x: &Nchw, p: &EdgeEnhanceWeights) -> (Nchw, Nchw) {
    let pooled = avg_pool3(x, p.reflect);
    let diff = zip(x, &pooled, |a, b| a - b);
    let conv = conv2d(&diff, &p.conv_w, Some(&p.conv_b), x.c, 1, 1, 0);
    let running = p.running.as_ref().map(|(m, v)| (m.as_slice(), v.as_slice()));
    let bn = batch_norm(&conv, &p.bn_gamma, &p.bn_beta, running, 1e-5);
    let out = zip(x, &bn, |a, b| a + sigmoid(b));
    (diff, out)
}

/// Ideal radial high-pass through an explicit O(H^2 W^2) DFT per plane.
/// Bins with wrapped radial frequency `<= cutoff * min(H, W) / 2` are zeroed.
pub fn fft_highpass(x: &Nchw, cutoff_ratio: f64, relu: bool) -> Nchw {
    use std::f64::consts::PI;
    let (h, w) = (x.h, x.w);
    let radius = cutoff_ratio * h.min(w) as f64 / 2.0;
    let mut out = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            let mut re = vec![0.0; h * w];
            let mut im = vec![0.0; h * w];
            for u in 0..h {
                for v in 0..w {
                    let fu = u.min(h - u) as f64;
                    let fv = v.min(w - v) as f64;
                    if (fu * fu + fv * fv).sqrt() <= radius {
                        continue;
                    }
                    let (mut sr, mut si) = (0.0, 0.0);
                    for r in 0..h {
                        for col in 0..w {
                            let ang = -2.0 * PI * (u as f64 * r as f64 / h as f64 + v as f64 * col as f64 / w as f64);
                            let val = x.at(n, c, r, col);
                            sr += val * ang.cos();
                            si += val * ang.sin();
                        }
                    }
                    re[u * w + v] = sr;
                    im[u * w + v] = si;
                }
            }
            for r in 0..h {
                for col in 0..w {
                    let mut acc = 0.0;
                    for u in 0..h {
                        for v in 0..w {
                            let ang = 2.0 * PI * (u as f64 * r as f64 / h as f64 + v as f64 * col as f64 / w as f64);
                            acc += re[u * w + v] * ang.cos() - im[u * w + v] * ang.sin();
                        }
                    }
                    let val = acc / (h * w) as f64;
                    out.set(n, c, r, col, if relu { val.max(0.0) } else { val });
                }
            }
        }
    }
    out
}

/// Token matrices, `[batch][token][channel]`.
pub type Tokens = Vec<Vec<Vec<f64>>>;

pub fn to_tokens(x: &Nchw) -> Tokens {
    (0..x.n)
        .map(|n| {
            (0..x.h * x.w)
                .map(|t| (0..x.c).map(|c| x.at(n, c, t / x.w, t % x.w)).collect())
                .collect()
        })
        .collect()
}

pub fn from_tokens(t: &Tokens, h: usize, w: usize) -> Nchw {
    let c = t[0][0].len();
    let mut out = Nchw::zeros(t.len(), c, h, w);
    for (n, batch) in t.iter().enumerate() {
        for (i, tok) in batch.iter().enumerate() {
            for (ch, &v) in tok.iter().enumerate() {
                out.set(n, ch, i / w, i % w, v);
            }
        }
    }
    out
}

fn l2_normalize_tokens(t: &mut Tokens) {
    for batch in t.iter_mut() {
        for tok in batch.iter_mut() {
            let norm = tok.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            tok.iter_mut().for_each(|v| *v /= norm);
        }
    }
}

/// `Q = Norm(qx * m)`, `K = Norm(kx * e)`, `V = vx` where the inputs are the
/// already-convolved features and projected guidance maps.
pub fn guided_qkv(qx: &Nchw, kx: &Nchw, vx: &Nchw, m: &Nchw, e: &Nchw) -> (Tokens, Tokens, Tokens) {
    let mut q = to_tokens(&zip(qx, m, |a, b| a * b));
    let mut k = to_tokens(&zip(kx, e, |a, b| a * b));
    l2_normalize_tokens(&mut q);
    l2_normalize_tokens(&mut k);
    (q, k, to_tokens(vx))
}

/// `out = Q (softmax_tokens(K^T) V)` computed with explicit loops.
pub fn linear_attention(q: &Tokens, k: &Tokens, v: &Tokens) -> Tokens {
    let mut out = Vec::new();
    for b in 0..q.len() {
        let n = k[b].len();
        let c = k[b][0].len();
        let cv = v[b][0].len();
        // A[ch][t] = softmax over t of K[t][ch]
        let mut a = vec![vec![0.0; n]; c];
        for ch in 0..c {
            let mx = (0..n).map(|t| k[b][t][ch]).fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = (0..n).map(|t| (k[b][t][ch] - mx).exp()).sum();
            for t in 0..n {
                a[ch][t] = (k[b][t][ch] - mx).exp() / denom;
            }
        }
        let mut av = vec![vec![0.0; cv]; c];
        for ch in 0..c {
            for j in 0..cv {
                av[ch][j] = (0..n).map(|t| a[ch][t] * v[b][t][j]).sum();
            }
        }
        let res: Vec<Vec<f64>> = (0..q[b].len())
            .map(|t| (0..cv).map(|j| (0..c).map(|ch| q[b][t][ch] * av[ch][j]).sum()).collect())
            .collect();
        out.push(res);
    }
    out
}

pub struct SaamWeights {
    pub q_w: Vec<f64>,
    pub q_b: Vec<f64>,
    pub k_w: Vec<f64>,
    pub k_b: Vec<f64>,
    pub v_w: Vec<f64>,
    pub m_w: Vec<f64>,
    pub m_b: Vec<f64>,
    pub e_w: Vec<f64>,
    pub e_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub dim: usize,
}

pub fn saam_forward(x: &Nchw, m: &Nchw, e: &Nchw, p: &SaamWeights) -> Nchw {
    let m = conv2d(&resize_bilinear(m, x.h, x.w), &p.m_w, Some(&p.m_b), p.dim, 1, 1, 0);
    let e = conv2d(&resize_bilinear(e, x.h, x.w), &p.e_w, Some(&p.e_b), p.dim, 1, 1, 0);
    let qx = conv2d(x, &p.q_w, Some(&p.q_b), p.dim, 1, 1, 0);
    let kx = conv2d(x, &p.k_w, Some(&p.k_b), p.dim, 1, 1, 0);
    let vx = conv2d(x, &p.v_w, None, p.dim, 1, 1, 0);
    let (q, k, v) = guided_qkv(&qx, &kx, &vx, &m, &e);
    let att = from_tokens(&linear_attention(&q, &k, &v), x.h, x.w);
    let proj = conv2d(&att, &p.out_w, None, x.c, 1, 1, 0);
    zip(x, &proj, |a, b| a + b)
}

pub struct CglrmWeights {
    /// `[hidden][c]` and `[c][hidden]`, no biases.
    pub ca_w1: Vec<f64>,
    pub ca_w2: Vec<f64>,
    pub ca_hidden: usize,
    /// `[1][2][7][7]`, no bias.
    pub sa_w: Vec<f64>,
    /// One `(weight, bias)` per quadrant; a single entry is shared by all four.
    pub local: Vec<(Vec<f64>, Vec<f64>)>,
    pub fuse_w: Vec<f64>,
    pub fuse_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

/// Channel attention weights `[n][c]`.
pub fn channel_attention(x: &Nchw, p: &CglrmWeights) -> Vec<Vec<f64>> {
    let hw = (x.h * x.w) as f64;
    let mlp = |v: &[f64]| -> Vec<f64> {
        let hidden: Vec<f64> = (0..p.ca_hidden)
            .map(|j| (0..x.c).map(|c| p.ca_w1[j * x.c + c] * v[c]).sum::<f64>().max(0.0))
            .collect();
        (0..x.c)
            .map(|c| (0..p.ca_hidden).map(|j| p.ca_w2[c * p.ca_hidden + j] * hidden[j]).sum())
            .collect()
    };
    (0..x.n)
        .map(|n| {
            let mut avg = vec![0.0; x.c];
            let mut mx = vec![f64::NEG_INFINITY; x.c];
            for c in 0..x.c {
                for r in 0..x.h {
                    for col in 0..x.w {
                        let v = x.at(n, c, r, col);
                        avg[c] += v / hw;
                        mx[c] = mx[c].max(v);
                    }
                }
            }
            let (a, b) = (mlp(&avg), mlp(&mx));
            (0..x.c).map(|c| sigmoid(a[c] + b[c])).collect()
        })
        .collect()
}

/// Spatial attention map, `[n][1][h][w]`.
pub fn spatial_attention(x: &Nchw, sa_w: &[f64]) -> Nchw {
    let mut pooled = Nchw::zeros(x.n, 2, x.h, x.w);
    for n in 0..x.n {
        for r in 0..x.h {
            for col in 0..x.w {
                let vals: Vec<f64> = (0..x.c).map(|c| x.at(n, c, r, col)).collect();
                pooled.set(n, 0, r, col, vals.iter().sum::<f64>() / x.c as f64);
                pooled.set(n, 1, r, col, vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            }
        }
    }
    map(&conv2d(&pooled, sa_w, None, 1, 7, 1, 3), sigmoid)
}

/// `g = SA(CA(x) * x) * (CA(x) * x)`.
pub fn global_guidance(x: &Nchw, p: &CglrmWeights) -> Nchw {
    let ca = channel_attention(x, p);
    let mut x_ca = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            for r in 0..x.h {
                for col in 0..x.w {
                    x_ca.set(n, c, r, col, ca[n][c] * x.at(n, c, r, col));
                }
            }
        }
    }
    let sa = spatial_attention(&x_ca, &p.sa_w);
    let mut g = x_ca.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            for r in 0..x.h {
                for col in 0..x.w {
                    g.set(n, c, r, col, sa.at(n, 0, r, col) * x_ca.at(n, c, r, col));
                }
            }
        }
    }
    g
}

/// Quadrants in order TL, TR, BL, BR after zero-padding to even size at the
/// bottom/right.
pub fn split(x: &Nchw) -> [Nchw; 4] {
    let (hh, hw) = (x.h.div_ceil(2), x.w.div_ceil(2));
    let part = |r0: usize, c0: usize| {
        let mut p = Nchw::zeros(x.n, x.c, hh, hw);
        for n in 0..x.n {
            for c in 0..x.c {
                for r in 0..hh {
                    for col in 0..hw {
                        let (rr, cc) = (r0 + r, c0 + col);
                        if rr < x.h && cc < x.w {
                            p.set(n, c, r, col, x.at(n, c, rr, cc));
                        }
                    }
                }
            }
        }
        p
    };
    [part(0, 0), part(0, hw), part(hh, 0), part(hh, hw)]
}

pub fn merge(parts: &[Nchw; 4], h: usize, w: usize) -> Nchw {
    let (hh, hw) = (parts[0].h, parts[0].w);
    let mut out = Nchw::zeros(parts[0].n, parts[0].c, h, w);
    for n in 0..out.n {
        for c in 0..out.c {
            for r in 0..h {
                for col in 0..w {
                    let q = (r / hh) * 2 + col / hw;
                    out.set(n, c, r, col, parts[q].at(n, c, r % hh, col % hw));
                }
            }
        }
    }
    out
}

/// Locally refined quadrants `x_hat_i = relu(conv3x3(x_i * sigmoid(g_i)))`.
pub fn local_refine(x: &Nchw, g: &Nchw, p: &CglrmWeights) -> [Nchw; 4] {
    let xs = split(x);
    let gs = split(g);
    std::array::from_fn(|i| {
        let (w, b) = &p.local[if p.local.len() == 1 { 0 } else { i }];
        let gated = zip(&xs[i], &gs[i], |a, gv| a * sigmoid(gv));
        map(&conv2d(&gated, w, Some(b), x.c, 3, 1, 1), |v| v.max(0.0))
    })
}

pub fn cglrm_forward(x: &Nchw, p: &CglrmWeights) -> Nchw {
    let g = global_guidance(x, p);
    let local = merge(&local_refine(x, &g, p), x.h, x.w);
    let fuse = map(
        &conv2d(&concat_channels(&local, &g), &p.fuse_w, Some(&p.fuse_b), x.c, 3, 1, 1),
        |v| v.max(0.0),
    );
    let out = conv2d(&fuse, &p.out_w, Some(&p.out_b), x.c, 3, 1, 1);
    zip(&out, x, |a, b| a + b)
}

/// Weighted BCE + weighted IoU on one `[n][1][h][w]` logit map, with weights
/// `1 + 5 |mean_k(gt) - gt|` (zero-padded `k x k` mean, divisor `k^2`).
pub fn structure_loss(logits: &Nchw, gt: &Nchw, window: usize) -> f64 {
    let half = (window / 2) as isize;
    let mut total = 0.0;
    for n in 0..logits.n {
        let (mut wbce_num, mut wsum, mut inter, mut union) = (0.0, 0.0, 0.0, 0.0);
        for r in 0..logits.h {
            for c in 0..logits.w {
                let mut acc = 0.0;
                for dr in -half..=half {
                    for dc in -half..=half {
                        let (rr, cc) = (r as isize + dr, c as isize + dc);
                        if rr >= 0 && cc >= 0 && rr < logits.h as isize && cc < logits.w as isize {
                            acc += gt.at(n, 0, rr as usize, cc as usize);
                        }
                    }
                }
                let g = gt.at(n, 0, r, c);
                let weight = 1.0 + 5.0 * (acc / (window * window) as f64 - g).abs();
                let x = logits.at(n, 0, r, c);
                let p = sigmoid(x);
                let bce = -(g * p.ln() + (1.0 - g) * (1.0 - p).ln());
                wbce_num += weight * bce;
                wsum += weight;
                inter += p * g * weight;
                union += (p + g) * weight;
            }
        }
        let wbce = wbce_num / wsum;
        let wiou = 1.0 - (inter + 1.0) / (union - inter + 1.0);
        total += wbce + wiou;
    }
    total / logits.n as f64
}

pub fn dice_loss(logits: &Nchw, gt: &Nchw, eps: f64) -> f64 {
    let per = logits.c * logits.h * logits.w;
    let mut total = 0.0;
    for n in 0..logits.n {
        let (mut pg, mut ps, mut gs) = (0.0, 0.0, 0.0);
        for i in 0..per {
            let p = sigmoid(logits.data[n * per + i]);
            let g = gt.data[n * per + i];
            pg += p * g;
            ps += p;
            gs += g;
        }
        total += 1.0 - (2.0 * pg + eps) / (ps + gs + eps);
    }
    total / logits.n as f64
}

/// Morphological gradient: 3x3 dilation XOR 3x3 erosion; outside the image
/// counts as background.
pub fn morph_edge(h: usize, w: usize, mask: &[bool]) -> Vec<bool> {
    let get = |r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && r < h as isize && c < w as isize && mask[r as usize * w + c as usize]
    };
    let mut out = vec![false; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut any = false;
            let mut all = true;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let v = get(r + dr, c + dc);
                    any |= v;
                    all &= v;
                }
            }
            out[r as usize * w + c as usize] = any ^ all;
        }
    }
    out
}
