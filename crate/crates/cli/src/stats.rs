//! Wilcoxon signed-rank test for paired samples.

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Largest number of non-zero differences handled by exact enumeration.
pub const EXACT_MAX_N: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Pairs with a non-zero difference.
    pub n: usize,
    pub zeros_dropped: usize,
    /// Rank sum of the positive differences `a - b`.
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided.
    pub p_value: f64,
    pub method: Method,
}

/// Midranks of `|d|`, doubled so ties stay integral.
fn doubled_midranks(abs: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&i, &j| abs[i].total_cmp(&abs[j]));
    let mut ranks = vec![0; abs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean; doubled that is i + j + 2.
        for &k in &idx[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided signed-rank test on the differences `a - b`. Zero differences
/// are dropped and tied magnitudes share their midrank. Exact for up to
/// [`EXACT_MAX_N`] non-zero pairs, normal approximation with continuity and
/// tie corrections above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    if a.len() != b.len() {
        return Err(CliError::Stats(format!("paired samples differ in length ({} vs {})", a.len(), b.len())));
    }
    if let Some(i) = a.iter().chain(b).position(|v| !v.is_finite()) {
        return Err(CliError::Stats(format!("non-finite sample at position {i}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let zeros_dropped = a.len() - d.len();
    if d.is_empty() {
        return Err(CliError::Stats("degenerate sample: every paired difference is zero".into()));
    }
    let ranks = doubled_midranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w2: u64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total2: u64 = ranks.iter().sum();
    let n = d.len();
    let (p_value, method) = if n <= EXACT_MAX_N { (exact_p(&ranks, w2), Method::Exact) } else { (normal_p(&ranks, w2), Method::Normal) };
    Ok(Wilcoxon {
        n,
        zeros_dropped,
        w_plus: w2 as f64 / 2.0,
        w_minus: (total2 - w2) as f64 / 2.0,
        p_value,
        method,
    })
}

/// Counts sign assignments by their doubled positive rank sum.
fn exact_p(ranks: &[u64], w2: u64) -> f64 {
    let total: usize = ranks.iter().sum::<u64>() as usize;
    let mut ways = vec![0u64; total + 1];
    ways[0] = 1;
    for &r in ranks {
        let r = r as usize;
        for s in (r..=total).rev() {
            ways[s] += ways[s - r];
        }
    }
    let all = (1u64 << ranks.len()) as f64;
    let w = w2 as usize;
    let lower: u64 = ways[..=w].iter().sum();
    let upper: u64 = ways[w..].iter().sum();
    (2.0 * lower.min(upper) as f64 / all).min(1.0)
}

fn normal_p(ranks: &[u64], w2: u64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let mut ties = 0.0;
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        ties += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w2 as f64 / 2.0 - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}
