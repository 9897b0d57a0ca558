//! Brute-force reference implementations shared by the integration tests.
//! Everything here is plain nested loops over `f64`, independent of the
//! crate's kernels.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Geometry of a direct convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.kh) / self.stride + 1,
            (self.w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }
}

/// Seven nested loops: batch, output channel, output row, output column,
/// input channel within the group, kernel row, kernel column.
pub fn direct_conv(x: &[f64], weight: &[f64], bias: Option<&[f64]>, g: ConvGeom) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let cg = g.c / g.groups;
    let og = g.o / g.groups;
    let mut out = vec![0.0; g.n * g.o * ho * wo];
    for n in 0..g.n {
        for o in 0..g.o {
            let group = o / og;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for ci in 0..cg {
                        let c = group * cg + ci;
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                let xv = x[((n * g.c + c) * g.h + iy as usize) * g.w + ix as usize];
                                let wv = weight[((o * cg + ci) * g.kh + ky) * g.kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((n * g.o + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

/// `a (r x k) * b (k x c)`.
pub fn matmul_loop(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i * k + t] * b[t * c + j];
            }
            out[i * c + j] = acc;
        }
    }
    out
}

/// Per-(n, c) spatial mean as sum / (h * w).
pub fn gap_loop(x: &[f64], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for i in 0..n * c {
        let mut s = 0.0;
        for p in 0..h * w {
            s += x[i * h * w + p];
        }
        out[i] = s / (h * w) as f64;
    }
    out
}

/// `x (n x i) * w (i x o) + b`.
pub fn linear_loop(x: &[f64], w: &[f64], b: Option<&[f64]>, n: usize, i: usize, o: usize) -> Vec<f64> {
    let mut out = matmul_loop(x, w, n, i, o);
    if let Some(b) = b {
        for r in 0..n {
            for j in 0..o {
                out[r * o + j] += b[j];
            }
        }
    }
    out
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Mean over rows of `log(sum_j exp(l_j)) - l_label`, summed directly.
pub fn cross_entropy_direct(logits: &[f64], labels: &[usize], k: usize) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &logits[r * k..(r + 1) * k];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += z.ln() - row[y];
    }
    total / n as f64
}

/// Squeeze (pool), one relu FC per branch, merge by concat or sum, excite,
/// sigmoid. Branch weights are `c x b`, excite is `m x c`.
pub struct GateOracle<'a> {
    pub branches: Vec<(&'a [f64], &'a [f64])>,
    pub excite: (&'a [f64], &'a [f64]),
    pub sum_merge: bool,
}

impl GateOracle<'_> {
    pub fn gates(&self, u: &[f64], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
        let b = self.branches[0].1.len();
        let z = gap_loop(u, n, c, h, w);
        let outs: Vec<Vec<f64>> = self
            .branches
            .iter()
            .map(|(wt, bias)| {
                linear_loop(&z, wt, Some(bias), n, c, b)
                    .into_iter()
                    .map(|v| v.max(0.0))
                    .collect()
            })
            .collect();
        let (m, merged) = if self.sum_merge {
            let mut acc = vec![0.0; n * b];
            for o in &outs {
                for (a, v) in acc.iter_mut().zip(o) {
                    *a += v;
                }
            }
            (b, acc)
        } else {
            let m = b * outs.len();
            let mut cat = vec![0.0; n * m];
            for r in 0..n {
                for (i, o) in outs.iter().enumerate() {
                    cat[r * m + i * b..r * m + (i + 1) * b].copy_from_slice(&o[r * b..(r + 1) * b]);
                }
            }
            (m, cat)
        };
        linear_loop(&merged, self.excite.0, Some(self.excite.1), n, m, c)
            .into_iter()
            .map(sigmoid)
            .collect()
    }
}
