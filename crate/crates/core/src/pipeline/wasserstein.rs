use crate::{Error, Result};

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Order-1 Wasserstein distance between two empirical distributions.
///
/// Integrates |F⁻¹ₐ(t) − F⁻¹ᵦ(t)| over t ∈ [0,1] exactly: both quantile
/// functions are step functions with breakpoints at i/n and j/m, walked
/// in merged order with integer arithmetic.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Validation("wasserstein distance needs non-empty samples".into()));
    }
    let (a, b) = (sorted(a), sorted(b));
    let (n, m) = (a.len() as u128, b.len() as u128);
    // positions measured in units of 1/(n·m)
    let (mut i, mut j) = (0usize, 0usize);
    let mut t: u128 = 0;
    let mut total = 0.0;
    let end = n * m;
    while t < end {
        let next_a = (i as u128 + 1) * m;
        let next_b = (j as u128 + 1) * n;
        let next = next_a.min(next_b);
        total += (next - t) as f64 * (a[i] - b[j]).abs();
        t = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    Ok(total / end as f64)
}
