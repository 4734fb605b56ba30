//! Paired statistical tests and bootstrap effect intervals.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Largest effective sample for which the Wilcoxon null is enumerated.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Default bootstrap resample count.
pub const DEFAULT_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("no observations")]
    Empty,
    #[error("at least {needed} observations are required, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("confidence level must lie strictly between 0 and 1")]
    Level,
    #[error("non-finite observation")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    /// Every delta was zero.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive deltas.
    pub statistic: f64,
    pub w_minus: f64,
    pub p_two_sided: f64,
    pub n_effective: usize,
    pub method: WilcoxonMethod,
}

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test. Zero deltas are dropped; the null
/// distribution is enumerated exactly for up to 25 non-zero deltas and
/// approximated by a tie- and continuity-corrected normal beyond that.
pub fn wilcoxon_signed_rank(deltas: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if deltas.is_empty() {
        return Err(StatsError::Empty);
    }
    if deltas.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nonzero: Vec<f64> = deltas.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            w_minus: 0.0,
            p_two_sided: 1.0,
            n_effective: 0,
            method: WilcoxonMethod::Degenerate,
        });
    }
    let magnitudes: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus: f64 = nonzero.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).fold(0.0, |a, r| a + r);
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let (p, method) = if n <= WILCOXON_EXACT_MAX {
        (exact_p(&ranks, w_plus), WilcoxonMethod::Exact)
    } else {
        (normal_p(&magnitudes, n, w_plus), WilcoxonMethod::Normal)
    };
    Ok(WilcoxonResult { statistic: w_plus, w_minus, p_two_sided: p, n_effective: n, method })
}

/// Enumerates the sign-flip distribution of W+ over doubled (integer) ranks.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| libm::round(r * 2.0) as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let observed = libm::round(w_plus * 2.0) as usize;
    let le: f64 = counts[..=observed].iter().sum();
    let ge: f64 = counts[observed..].iter().sum();
    let all = libm::pow(2.0, ranks.len() as f64);
    (2.0 * le.min(ge) / all).min(1.0)
}

fn normal_p(magnitudes: &[f64], n: usize, w_plus: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / libm::sqrt(var);
    libm::erfc(z / core::f64::consts::SQRT_2).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// Discordant pairs that improved.
    pub b: u64,
    /// Discordant pairs that worsened.
    pub c: u64,
    pub p_exact: f64,
    pub p_chi2_corrected: f64,
}

fn ln_choose(n: u64, k: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// `P(X <= k)` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_half_cdf(k: u64, n: u64) -> f64 {
    if k >= n {
        return 1.0;
    }
    if n <= 120 {
        let mut c: u128 = 1;
        let mut sum: u128 = 1;
        for i in 1..=k {
            c = c * (n - i + 1) as u128 / i as u128;
            sum += c;
        }
        return sum as f64 / libm::pow(2.0, n as f64);
    }
    let ln2n = n as f64 * core::f64::consts::LN_2;
    let logs: Vec<f64> = (0..=k).map(|i| ln_choose(n, i) - ln2n).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| libm::exp(l - top)).sum();
    libm::exp(top + libm::log(sum)).min(1.0)
}

/// McNemar's test on discordant counts: exact two-sided binomial p and the
/// continuity-corrected chi-square p.
pub fn mcnemar(b: u64, c: u64) -> McNemarResult {
    let n = b + c;
    if n == 0 {
        return McNemarResult { b, c, p_exact: 1.0, p_chi2_corrected: 1.0 };
    }
    let p_exact = (2.0 * binomial_half_cdf(b.min(c), n)).min(1.0);
    let diff = (b.abs_diff(c) as f64 - 1.0).max(0.0);
    let chi2 = diff * diff / n as f64;
    let p_chi2_corrected = libm::erfc(libm::sqrt(chi2 / 2.0)).min(1.0);
    McNemarResult { b, c, p_exact, p_chi2_corrected }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

/// Linear-interpolation quantile of sorted data (the common "type 7").
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean of the deltas with a seeded percentile-bootstrap interval.
pub fn mean_effect_ci(deltas: &[f64], level: f64, resamples: usize, seed: u64) -> Result<EffectCi, StatsError> {
    if deltas.len() < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: deltas.len() });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::Level);
    }
    if resamples == 0 {
        return Err(StatsError::InsufficientData { needed: 1, got: 0 });
    }
    if deltas.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = deltas.len();
    let mean = deltas.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| deltas[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(EffectCi {
        mean,
        lo: quantile_sorted(&means, alpha),
        hi: quantile_sorted(&means, 1.0 - alpha),
        level,
        resamples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilcoxon_examples() {
        let zeros = wilcoxon_signed_rank(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((zeros.p_two_sided, zeros.n_effective, zeros.method), (1.0, 0, WilcoxonMethod::Degenerate));
        let ones = wilcoxon_signed_rank(&[1.0; 10]).unwrap();
        assert_eq!(ones.p_two_sided, 0.001953125);
        assert_eq!(ones.statistic, 55.0);
        assert_eq!(wilcoxon_signed_rank(&[3.0, -3.0]).unwrap().p_two_sided, 1.0);
        assert_eq!(wilcoxon_signed_rank(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn normal_path_is_used_beyond_25() {
        let deltas: Vec<f64> = (1..=40).map(|i| if i % 4 == 0 { -(i as f64) } else { i as f64 }).collect();
        let r = wilcoxon_signed_rank(&deltas).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Normal);
        assert!(r.p_two_sided > 0.0 && r.p_two_sided < 0.05);
    }

    #[test]
    fn mcnemar_examples() {
        assert_eq!(mcnemar(5, 5).p_exact, 1.0);
        assert_eq!(mcnemar(0, 0).p_exact, 1.0);
        let r = mcnemar(27, 7);
        assert!((r.p_exact - 0.0008213953115046024).abs() < 1e-15, "{}", r.p_exact);
        assert!((r.p_chi2_corrected - 0.0011260). abs() < 1e-5, "{}", r.p_chi2_corrected);
        assert_eq!(mcnemar(7, 27).p_exact, r.p_exact);
    }

    #[test]
    fn large_binomial_matches_log_path() {
        let small = binomial_half_cdf(50, 120);
        let ln2n = 120.0 * core::f64::consts::LN_2;
        let direct: f64 = (0..=50u64).map(|i| libm::exp(ln_choose(120, i) - ln2n)).sum();
        assert!((small - direct).abs() < 1e-12);
        assert!(binomial_half_cdf(100, 400) < 1e-20);
    }

    #[test]
    fn bootstrap_examples() {
        let c = mean_effect_ci(&[4.0; 12], 0.95, 2_000, 1).unwrap();
        assert_eq!((c.mean, c.lo, c.hi), (4.0, 4.0, 4.0));
        let alt: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let c = mean_effect_ci(&alt, 0.95, 2_000, 9).unwrap();
        assert_eq!(c.mean, 0.0);
        assert!(c.lo < 0.0 && c.hi > 0.0);
        assert_eq!(mean_effect_ci(&alt, 0.95, 2_000, 9).unwrap(), c);
        assert!(matches!(mean_effect_ci(&[1.0], 0.95, 10, 0), Err(StatsError::InsufficientData { .. })));
    }
}
