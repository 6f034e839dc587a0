//! Numerically stable helpers for quantities kept in log space.

/// Smallest log-partition value written to tables. States from which no
/// terminal can be reached have `Z = 0`; they are stored at this floor and
/// flagged instead of carrying `-inf`.
pub const LOG_Z_FLOOR: f64 = -745.0;

/// `log(sum(exp(x)))` without overflow. Returns `-inf` for an empty slice or
/// when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalized probabilities proportional to `exp(x)`.
///
/// A row whose entries are all `-inf` has no mass anywhere; it falls back to
/// the uniform distribution so that every returned row is a distribution.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let lse = log_sum_exp(xs);
    if lse == f64::NEG_INFINITY {
        return vec![1.0 / xs.len() as f64; xs.len()];
    }
    let mut probs: Vec<f64> = xs.iter().map(|&x| (x - lse).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    probs
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
