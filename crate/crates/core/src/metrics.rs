//! ROC-AUC, the paired DeLong comparison, paired t-test and Pearson correlation.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Average (1-based) ranks with ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
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

fn check_scores(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        bail!(Shape, "{} scores but {} labels", scores.len(), labels.len());
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        bail!(Domain, "label {l} is not 0 or 1");
    }
    if scores.iter().any(|s| s.is_nan()) {
        bail!(Domain, "NaN score");
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Mann-Whitney AUC with half credit for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<RocResult> {
    let (m, n) = check_scores(scores, labels)?;
    if m == 0 || n == 0 {
        bail!(
            Eval,
            "AUC needs both classes ({m} positives, {n} negatives)"
        );
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (m * (m + 1)) as f64 / 2.0;
    Ok(RocResult {
        auc: u / (m as f64 * n as f64),
        positives: m,
        negatives: n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeLongComparison {
    pub auc_a: f64,
    pub auc_b: f64,
    /// Estimated variance of `auc_a - auc_b`.
    pub variance: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Placement values of one model: for each positive the fraction of negatives
/// it beats, for each negative the fraction of positives that beat it.
fn placements(scores: &[f64], labels: &[u8], m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(s, _)| *s)
        .collect();
    let all = midranks(scores);
    let all_pos: Vec<f64> = all
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| *r)
        .collect();
    let all_neg: Vec<f64> = all
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(r, _)| *r)
        .collect();
    let within_pos = midranks(&pos);
    let within_neg = midranks(&neg);
    let v10: Vec<f64> = all_pos
        .iter()
        .zip(&within_pos)
        .map(|(r, w)| (r - w) / n as f64)
        .collect();
    let v01: Vec<f64> = all_neg
        .iter()
        .zip(&within_neg)
        .map(|(r, w)| 1.0 - (r - w) / m as f64)
        .collect();
    (v10, v01)
}

fn sample_variance(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64
}

/// Paired DeLong test of two models scored on the same instances.
///
/// The variance of the AUC difference is taken directly from the per-instance
/// placement differences, so swapping the models negates `z` exactly.
pub fn delong(scores_a: &[f64], scores_b: &[f64], labels: &[u8]) -> Result<DeLongComparison> {
    if scores_a.len() != scores_b.len() {
        bail!(
            Shape,
            "model score vectors differ in length ({} vs {})",
            scores_a.len(),
            scores_b.len()
        );
    }
    let (m, n) = check_scores(scores_a, labels)?;
    check_scores(scores_b, labels)?;
    if m < 2 || n < 2 {
        bail!(
            Eval,
            "DeLong needs at least 2 positives and 2 negatives ({m}, {n})"
        );
    }
    let auc_a = auc(scores_a, labels)?.auc;
    let auc_b = auc(scores_b, labels)?.auc;
    let (v10a, v01a) = placements(scores_a, labels, m, n);
    let (v10b, v01b) = placements(scores_b, labels, m, n);
    let d10: Vec<f64> = v10a.iter().zip(&v10b).map(|(a, b)| a - b).collect();
    let d01: Vec<f64> = v01a.iter().zip(&v01b).map(|(a, b)| a - b).collect();
    let variance = sample_variance(&d10) / m as f64 + sample_variance(&d01) / n as f64;
    let diff = auc_a - auc_b;
    if variance <= 0.0 {
        if diff == 0.0 {
            return Ok(DeLongComparison {
                auc_a,
                auc_b,
                variance: 0.0,
                z: 0.0,
                p_value: 1.0,
            });
        }
        bail!(
            Degenerate,
            "AUCs differ ({auc_a} vs {auc_b}) but the difference has zero variance"
        );
    }
    let z = diff / variance.sqrt();
    Ok(DeLongComparison {
        auc_a,
        auc_b,
        variance,
        z,
        p_value: normal_two_sided(z),
    })
}

pub fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

const BETA_TOLERANCE: f64 = 1e-10;
const BETA_MAX_ITER: usize = 10_000;

/// Continued fraction of the regularized incomplete beta (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < BETA_TOLERANCE {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p_value: f64,
    pub mean_difference: f64,
}

/// Paired t-test on `a - b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        bail!(
            Shape,
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        );
    }
    if a.len() < 2 {
        bail!(
            EmptyInput,
            "paired t-test needs at least 2 pairs, got {}",
            a.len()
        );
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let df = d.len() - 1;
    if d.iter().all(|&v| v == 0.0) {
        return Ok(TTest {
            t: 0.0,
            df,
            p_value: 1.0,
            mean_difference: 0.0,
        });
    }
    let var = sample_variance(&d);
    if var <= 0.0 {
        bail!(
            Degenerate,
            "all paired differences equal {mean}; t is undefined"
        );
    }
    let t = mean / (var / n).sqrt();
    Ok(TTest {
        t,
        df,
        p_value: student_t_two_sided(t, df as f64),
        mean_difference: mean,
    })
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        bail!(
            Shape,
            "pearson inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        );
    }
    if x.len() < 2 {
        bail!(EmptyInput, "pearson needs at least 2 points");
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        bail!(Degenerate, "pearson input is constant");
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
