use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest sample accepted by [`paired_stats`].
pub const MIN_PAIRS: usize = 5;

/// Paired comparison of two equally long samples, differences taken `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedStats {
    pub n: usize,
    pub mean_diff: f64,
    /// Pairs with `a > b`, `a < b` and `a == b`.
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    /// Exact two-sided sign-test p-value, ties dropped.
    pub sign_test_p: f64,
    /// Wilcoxon signed-rank sums over non-zero differences (average ranks
    /// for tied magnitudes); the statistic is the smaller of the two.
    pub wilcoxon_w_plus: f64,
    pub wilcoxon_w_minus: f64,
    pub wilcoxon_statistic: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); zero for one value.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// `P(|K - n/2| >= |k - n/2|)` for `K ~ Binomial(n, 1/2)`, two-sided.
pub fn sign_test_p(positive: usize, negative: usize) -> f64 {
    let n = positive + negative;
    if n == 0 {
        return 1.0;
    }
    let k = positive.min(negative);
    let ln2 = std::f64::consts::LN_2;
    let mut ln_choose = 0.0;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        tail += (ln_choose - n as f64 * ln2).exp();
    }
    (2.0 * tail).min(1.0)
}

pub fn paired_stats(a: &[f64], b: &[f64]) -> Result<PairedStats> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < MIN_PAIRS {
        return Err(Error::Contract(format!(
            "paired statistics need at least {MIN_PAIRS} pairs, got {}",
            a.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("paired differences".into()));
    }
    let positive = diffs.iter().filter(|&&d| d > 0.0).count();
    let negative = diffs.iter().filter(|&&d| d < 0.0).count();

    let mut nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    nonzero.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let (mut w_plus, mut w_minus) = (0.0, 0.0);
    let mut i = 0;
    while i < nonzero.len() {
        let mut j = i;
        while j + 1 < nonzero.len() && nonzero[j + 1].abs() == nonzero[i].abs() {
            j += 1;
        }
        // Ranks are 1-based; tied magnitudes share the average rank.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for d in &nonzero[i..=j] {
            if *d > 0.0 {
                w_plus += rank;
            } else {
                w_minus += rank;
            }
        }
        i = j + 1;
    }

    Ok(PairedStats {
        n: a.len(),
        mean_diff: mean(&diffs),
        positive,
        negative,
        ties: a.len() - positive - negative,
        sign_test_p: sign_test_p(positive, negative),
        wilcoxon_w_plus: w_plus,
        wilcoxon_w_minus: w_minus,
        wilcoxon_statistic: w_plus.min(w_minus),
    })
}
