//! Exact Euclidean distance to the nearest foreground pixel, with the index
//! of that pixel.
//!
//! Two separable passes (column scan, then a lower envelope of parabolas per
//! row) in integer arithmetic. Ties are resolved by the key
//! `(squared distance, column, row)`, smallest first, which makes the nearest
//! pixel well defined for every background pixel.

use ndarray::{Array2, ArrayView2};

#[derive(Debug, Clone)]
pub struct NearestForeground {
    /// Squared distance to the nearest foreground pixel; `u64::MAX` when the
    /// mask has no foreground at all.
    pub dist2: Array2<u64>,
    /// `(row, col)` of the nearest foreground pixel.
    pub index: Array2<(usize, usize)>,
}

impl NearestForeground {
    pub fn distance(&self, r: usize, c: usize) -> f64 {
        (self.dist2[[r, c]] as f64).sqrt()
    }
}

pub fn nearest_foreground(mask: ArrayView2<bool>) -> NearestForeground {
    let (h, w) = mask.dim();
    const NONE: usize = usize::MAX;

    // Column pass: nearest foreground row within each column, upper row on ties.
    let mut col_dist = Array2::<u64>::from_elem((h, w), u64::MAX);
    let mut col_row = Array2::<usize>::from_elem((h, w), NONE);
    for c in 0..w {
        let mut above = NONE;
        let mut above_of = vec![NONE; h];
        for r in 0..h {
            if mask[[r, c]] {
                above = r;
            }
            above_of[r] = above;
        }
        let mut below = NONE;
        for r in (0..h).rev() {
            if mask[[r, c]] {
                below = r;
            }
            let a = above_of[r];
            let choice = match (a != NONE, below != NONE) {
                (false, false) => None,
                (true, false) => Some(a),
                (false, true) => Some(below),
                (true, true) => Some(if r - a <= below - r { a } else { below }),
            };
            if let Some(src) = choice {
                col_dist[[r, c]] = r.abs_diff(src) as u64;
                col_row[[r, c]] = src;
            }
        }
    }

    let mut dist2 = Array2::<u64>::from_elem((h, w), u64::MAX);
    let mut index = Array2::from_elem((h, w), (NONE, NONE));
    let mut sites: Vec<usize> = Vec::with_capacity(w);
    let mut starts: Vec<usize> = Vec::with_capacity(w);
    for r in 0..h {
        let g = |u: usize| col_dist[[r, u]];
        let cost = |x: usize, u: usize| {
            let dx = x.abs_diff(u) as u64;
            dx * dx + g(u) * g(u)
        };
        // Last column at which `a` is at least as close as `b` (a < b), floor division.
        let sep = |a: usize, b: usize| -> i64 {
            let (ai, bi) = (a as i64, b as i64);
            let (ga, gb) = (g(a) as i64, g(b) as i64);
            (bi * bi - ai * ai + gb * gb - ga * ga).div_euclid(2 * (bi - ai))
        };

        sites.clear();
        starts.clear();
        for u in (0..w).filter(|&u| g(u) != u64::MAX) {
            while let (Some(&s), Some(&t)) = (sites.last(), starts.last()) {
                if cost(t, s) > cost(t, u) {
                    sites.pop();
                    starts.pop();
                } else {
                    break;
                }
            }
            match sites.last() {
                None => {
                    sites.push(u);
                    starts.push(0);
                }
                Some(&s) => {
                    let start = 1 + sep(s, u);
                    if start < w as i64 {
                        sites.push(u);
                        starts.push(start as usize);
                    }
                }
            }
        }
        if sites.is_empty() {
            continue;
        }
        let mut q = sites.len() - 1;
        for x in (0..w).rev() {
            let u = sites[q];
            dist2[[r, x]] = cost(x, u);
            index[[r, x]] = (col_row[[r, u]], u);
            if x == starts[q] && q > 0 {
                q -= 1;
            }
        }
    }
    NearestForeground { dist2, index }
}
