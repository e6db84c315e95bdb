//! Evaluation metrics: PSNR, sparsification curves with their area, and
//! Spearman rank correlation.

use crate::error::{check_len, Result, SviglError};

/// `10·log10(peak² / MSE)`; `+∞` for identical inputs.
pub fn psnr(estimate: &[f64], reference: &[f64], peak: f64) -> Result<f64> {
    check_len(reference.len(), estimate.len())?;
    if estimate.is_empty() {
        return Err(SviglError::EmptyInput);
    }
    let mse = estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / estimate.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SPARSIFICATION_STEPS: usize = 20;

/// Normalized sparsification curve at fractions `k/20`, `k = 0..19`.
///
/// At fraction `k/20` the `⌊k·n/20⌋` sites with the largest uncertainty are
/// removed (ties broken by index) and the mean error of the rest is
/// reported, divided by the mean error over all sites. All-zero errors give
/// an all-zero curve.
pub fn sparsification_curve(errors: &[f64], uncertainty: &[f64]) -> Result<Vec<f64>> {
    check_len(errors.len(), uncertainty.len())?;
    let n = errors.len();
    if n == 0 {
        return Err(SviglError::EmptyInput);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainty[b].total_cmp(&uncertainty[a]));

    // suffix[j] = sum of errors of sites order[j..]
    let mut suffix = vec![0.0; n + 1];
    for j in (0..n).rev() {
        suffix[j] = suffix[j + 1] + errors[order[j]];
    }
    let full = suffix[0] / n as f64;
    Ok((0..SPARSIFICATION_STEPS)
        .map(|k| {
            if full == 0.0 {
                return 0.0;
            }
            let removed = k * n / SPARSIFICATION_STEPS;
            suffix[removed] / (n - removed) as f64 / full
        })
        .collect())
}

/// Trapezoid area under a curve sampled at spacing `1/20`.
pub fn curve_auc(curve: &[f64]) -> f64 {
    if curve.len() < 2 {
        return 0.0;
    }
    let h = 1.0 / SPARSIFICATION_STEPS as f64;
    let total: f64 = curve.iter().sum();
    h * (total - 0.5 * (curve[0] + curve[curve.len() - 1]))
}

pub fn sparsification_auc(errors: &[f64], uncertainty: &[f64]) -> Result<f64> {
    Ok(curve_auc(&sparsification_curve(errors, uncertainty)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// Set when either input has constant ranks; `rho` is then 0.
    pub degenerate: bool,
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = avg;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Spearman> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(SviglError::EmptyInput);
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(Spearman {
            rho: 0.0,
            degenerate: true,
        });
    }
    Ok(Spearman {
        rho: (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}
