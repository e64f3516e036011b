//! Literal metric formulas over row-major `h x w` slices.

const ALPHA: f64 = 0.5;

pub fn mae(pred: &[f64], gt: &[bool]) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.len() {
        let g = if gt[i] { 1.0 } else { 0.0 };
        total += (pred[i] - g).abs();
    }
    total / pred.len() as f64
}

pub fn s_measure(h: usize, w: usize, pred: &[f64], gt: &[bool]) -> f64 {
    let n = h * w;
    let gt_mean = gt.iter().filter(|g| **g).count() as f64 / n as f64;
    if gt_mean == 0.0 {
        return 1.0 - pred.iter().sum::<f64>() / n as f64;
    }
    if gt_mean == 1.0 {
        return pred.iter().sum::<f64>() / n as f64;
    }

    // Object term: foreground map pred*gt over gt, background map (1-pred)(1-gt) over 1-gt.
    let mut fg_vals = Vec::new();
    let mut bg_vals = Vec::new();
    for i in 0..n {
        let g = if gt[i] { 1.0 } else { 0.0 };
        if gt[i] {
            fg_vals.push(pred[i] * g);
        } else {
            bg_vals.push((1.0 - pred[i]) * (1.0 - g));
        }
    }
    let s_obj = |vals: &[f64]| {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        2.0 * m / (m * m + 1.0 + sd)
    };
    let object = gt_mean * s_obj(&fg_vals) + (1.0 - gt_mean) * s_obj(&bg_vals);

    // Region term: centroid split.
    let mut ys = 0.0;
    let mut xs = 0.0;
    let mut cnt = 0.0;
    for r in 0..h {
        for c in 0..w {
            if gt[r * w + c] {
                ys += r as f64;
                xs += c as f64;
                cnt += 1.0;
            }
        }
    }
    let x = round_half_even(xs / cnt) as usize + 1;
    let y = round_half_even(ys / cnt) as usize + 1;
    let blocks = [(0, y, 0, x), (0, y, x, w), (y, h, 0, x), (y, h, x, w)];
    let mut region = 0.0;
    for (r0, r1, c0, c1) in blocks {
        let mut p = Vec::new();
        let mut g = Vec::new();
        for r in r0..r1 {
            for c in c0..c1 {
                p.push(pred[r * w + c]);
                g.push(if gt[r * w + c] { 1.0 } else { 0.0 });
            }
        }
        if p.is_empty() {
            continue;
        }
        let weight = p.len() as f64 / n as f64;
        region += weight * ssim(&p, &g);
    }
    (ALPHA * object + (1.0 - ALPHA) * region).max(0.0)
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let x = p.iter().sum::<f64>() / n;
    let y = g.iter().sum::<f64>() / n;
    let dof = if p.len() > 1 { n - 1.0 } else { 1.0 };
    let sx = p.iter().map(|v| (v - x).powi(2)).sum::<f64>() / dof;
    let sy = g.iter().map(|v| (v - y).powi(2)).sum::<f64>() / dof;
    let sxy = p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / dof;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / beta
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn round_half_even(v: f64) -> f64 {
    let f = v.floor();
    let diff = v - f;
    if diff > 0.5 {
        f + 1.0
    } else if diff < 0.5 {
        f
    } else if (f as i64) % 2 == 0 {
        f
    } else {
        f + 1.0
    }
}

/// Mean E-measure: for every threshold `k/256`, build the binary map, the
/// per-pixel alignment matrix and its enhanced version, and average.
pub fn e_measure(pred: &[f64], gt: &[bool]) -> f64 {
    let n = pred.len();
    let gt_f: Vec<f64> = gt.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
    let gt_fg = gt_f.iter().sum::<f64>();
    let mut total = 0.0;
    for k in 1..=256 {
        let thr = k as f64 / 256.0;
        let fm: Vec<f64> = pred.iter().map(|&p| if p >= thr { 1.0 } else { 0.0 }).collect();
        let enhanced_sum: f64 = if gt_fg == 0.0 {
            fm.iter().map(|v| 1.0 - v).sum()
        } else if gt_fg == n as f64 {
            fm.iter().sum()
        } else {
            let mu_fm = fm.iter().sum::<f64>() / n as f64;
            let mu_gt = gt_fg / n as f64;
            let mut s = 0.0;
            for i in 0..n {
                let a = fm[i] - mu_fm;
                let b = gt_f[i] - mu_gt;
                let align = if a * a + b * b == 0.0 {
                    0.0
                } else {
                    2.0 * a * b / (a * a + b * b)
                };
                s += (align + 1.0).powi(2) / 4.0;
            }
            s
        };
        total += enhanced_sum / n as f64;
    }
    total / 256.0
}

/// Nearest foreground pixel by exhaustive search, key `(d^2, col, row)`.
pub fn nearest_foreground(h: usize, w: usize, gt: &[bool]) -> Vec<Option<(u64, usize, usize)>> {
    let mut out = vec![None; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut best: Option<(u64, usize, usize)> = None;
            for rr in 0..h {
                for cc in 0..w {
                    if !gt[rr * w + cc] {
                        continue;
                    }
                    let d2 = (r.abs_diff(rr).pow(2) + c.abs_diff(cc).pow(2)) as u64;
                    let key = (d2, cc, rr);
                    if best.is_none_or(|b| key < b) {
                        best = Some(key);
                    }
                }
            }
            out[r * w + c] = best;
        }
    }
    out
}

pub fn weighted_fbeta(h: usize, w: usize, pred: &[f64], gt: &[bool]) -> f64 {
    if !gt.iter().any(|g| *g) {
        return 0.0;
    }
    let n = h * w;
    let nearest = nearest_foreground(h, w, gt);
    let e: Vec<f64> = (0..n)
        .map(|i| (pred[i] - if gt[i] { 1.0 } else { 0.0 }).abs())
        .collect();
    let mut et = e.clone();
    for i in 0..n {
        if !gt[i] {
            let (_, c, r) = nearest[i].unwrap();
            et[i] = e[r * w + c];
        }
    }
    // fspecial('gaussian', 7, 5), normalized to unit sum.
    let mut k = [[0.0; 7]; 7];
    let mut ksum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (x, y) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(x * x + y * y) / (2.0 * 25.0)).exp();
            ksum += *v;
        }
    }
    let mut ea = vec![0.0; n];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut acc = 0.0;
            for (i, row) in k.iter().enumerate() {
                for (j, kv) in row.iter().enumerate() {
                    let rr = r + i as isize - 3;
                    let cc = c + j as isize - 3;
                    if rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize {
                        acc += kv / ksum * et[rr as usize * w + cc as usize];
                    }
                }
            }
            ea[r as usize * w + c as usize] = acc;
        }
    }
    let mut ew = vec![0.0; n];
    for i in 0..n {
        let min_e_ea = if gt[i] && ea[i] < e[i] { ea[i] } else { e[i] };
        let b = if gt[i] {
            1.0
        } else {
            let d = (nearest[i].unwrap().0 as f64).sqrt();
            2.0 - ((0.5f64).ln() / 5.0 * d).exp()
        };
        ew[i] = min_e_ea * b;
    }
    let fg = gt.iter().filter(|g| **g).count() as f64;
    let tpw = fg - (0..n).filter(|&i| gt[i]).map(|i| ew[i]).sum::<f64>();
    let fpw = (0..n).filter(|&i| !gt[i]).map(|i| ew[i]).sum::<f64>();
    let r = 1.0 - (0..n).filter(|&i| gt[i]).map(|i| ew[i]).sum::<f64>() / fg;
    let p = if tpw + fpw > 0.0 { tpw / (tpw + fpw) } else { 0.0 };
    if r + p > 0.0 {
        2.0 * r * p / (r + p)
    } else {
        0.0
    }
}
