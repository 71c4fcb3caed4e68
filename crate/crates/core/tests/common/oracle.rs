//! Reference implementations used only by tests.
//!
//! Everything here is written against nalgebra and plain loops so that it
//! shares no numerical code with the library under test.

#![allow(dead_code)]

use nalgebra::DMatrix;

/// Cores in `(left, mode, right)` layout, row-major over `(a, i, b)`.
#[derive(Debug, Clone)]
pub struct OracleCore {
    pub left: usize,
    pub mode: usize,
    pub right: usize,
    pub data: Vec<f64>,
}

impl OracleCore {
    pub fn at(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[(a * self.mode + i) * self.right + b]
    }
}

#[derive(Debug, Clone)]
pub struct OracleTt {
    pub ranks: Vec<usize>,
    pub cores: Vec<OracleCore>,
}

/// Smallest `r >= 1` whose discarded tail energy is within `budget`.
fn truncation_rank(sigma: &[f64], budget: f64) -> usize {
    let n = sigma.len();
    let mut r = n;
    let mut tail = 0.0;
    while r > 1 {
        let next = tail + sigma[r - 1] * sigma[r - 1];
        if next > budget {
            break;
        }
        tail = next;
        r -= 1;
    }
    r
}

/// Sequential truncated-SVD tensor train with the same per-step budget rule.
pub fn oracle_tt(dims: &[usize], data: &[f64], epsilon: f64) -> OracleTt {
    let n_steps = dims.len() - 1;
    let norm_sq: f64 = data.iter().map(|x| x * x).sum();
    let budget = epsilon * epsilon * norm_sq / n_steps as f64;

    if norm_sq == 0.0 {
        return OracleTt {
            ranks: vec![1; n_steps],
            cores: dims
                .iter()
                .map(|&d| OracleCore {
                    left: 1,
                    mode: d,
                    right: 1,
                    data: vec![0.0; d],
                })
                .collect(),
        };
    }

    let mut ranks = Vec::new();
    let mut cores = Vec::new();
    let mut r_prev = 1;
    let mut rest = data.to_vec();
    for &dim in &dims[..n_steps] {
        let rows = r_prev * dim;
        let cols = rest.len() / rows;
        let m = DMatrix::from_row_slice(rows, cols, &rest);
        let svd = m.svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let r = truncation_rank(&sigma, budget);

        let mut core = vec![0.0; rows * r];
        for row in 0..rows {
            for (j, &src) in order.iter().take(r).enumerate() {
                core[row * r + j] = u[(row, src)];
            }
        }
        cores.push(OracleCore {
            left: r_prev,
            mode: dim,
            right: r,
            data: core,
        });
        let mut next = vec![0.0; r * cols];
        for (j, &src) in order.iter().take(r).enumerate() {
            for c in 0..cols {
                next[j * cols + c] = sigma[j] * vt[(src, c)];
            }
        }
        rest = next;
        ranks.push(r);
        r_prev = r;
    }
    cores.push(OracleCore {
        left: r_prev,
        mode: dims[n_steps],
        right: 1,
        data: rest,
    });
    OracleTt { ranks, cores }
}

/// Dense tensor from a core chain, one entry at a time.
pub fn naive_reconstruct(cores: &[OracleCore]) -> Vec<f64> {
    let dims: Vec<usize> = cores.iter().map(|c| c.mode).collect();
    let total: usize = dims.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; dims.len()];
    for _ in 0..total {
        // Row vector of length `right` carried across the chain.
        let mut v = vec![1.0];
        for (c, &i) in cores.iter().zip(&idx) {
            let mut w = vec![0.0; c.right];
            for (a, va) in v.iter().enumerate() {
                for (b, wb) in w.iter_mut().enumerate() {
                    *wb += va * c.at(a, i, b);
                }
            }
            v = w;
        }
        out.push(v[0]);
        for k in (0..dims.len()).rev() {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    out
}

pub fn rel_err(reference: &[f64], approx: &[f64]) -> f64 {
    let num: f64 = reference.iter().zip(approx).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = reference.iter().map(|a| a * a).sum();
    (num / den).sqrt()
}

/// `(r1, r2)` of a window of hidden states folded as `(W, d1, d2, d3)`.
pub fn oracle_window_ranks(rows: &[Vec<f64>], d1: usize, d2: usize, epsilon: f64) -> (usize, usize) {
    let d_hid = rows[0].len();
    let d3 = d_hid / (d1 * d2);
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    let tt = oracle_tt(&[rows.len(), d1, d2, d3], &data, epsilon);
    (tt.ranks[0], tt.ranks[1])
}

/// Shannon entropy (nats) of softmax(z), computed directly.
pub fn oracle_entropy(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    -e.iter()
        .map(|x| x / s)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Mean of `rows` by a corrected two-pass scheme.
pub fn two_pass_mean(rows: &[&[f64]]) -> Vec<f64> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x / n;
        }
    }
    let mut corr = vec![0.0; d];
    for r in rows {
        for ((c, x), m) in corr.iter_mut().zip(r.iter()).zip(&mean) {
            *c += x - m;
        }
    }
    mean.iter().zip(&corr).map(|(m, c)| m + c / n).collect()
}

/// Replays the routing rules over precomputed per-step inputs.
/// Returns the step at which the counter first reaches `collapse_window`.
pub fn first_termination(low_rank: &[bool], collapse_window: usize) -> Option<usize> {
    let mut run = 0;
    for (t, &low) in low_rank.iter().enumerate() {
        run = if low { run + 1 } else { 0 };
        if run >= collapse_window {
            return Some(t);
        }
    }
    None
}
