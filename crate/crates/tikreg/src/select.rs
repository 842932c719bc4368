//! Rules for picking a regularisation strength from a cross-validation
//! curve: the plain grid minimum, a memoised golden-section/parabolic search
//! that avoids evaluating the whole grid, the one-standard-error rule, and a
//! chi-square quantile rule. All rules operate on grid indices and break
//! ties toward the *largest* lambda, i.e. the most regularised candidate.

use std::collections::BTreeMap;

use crate::crossval::{CvCurve, CvStrategy};
use crate::error::{Error, Result};
use crate::model::LambdaGrid;

/// Default significance level for [`chi_square_rule`].
pub const DEFAULT_CHI_SQUARE_ALPHA: f64 = 0.2;

/// Which rule produced a [`SelectionResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    MinPress,
    MinGcv,
    OneSe,
    ChiSquare,
}

impl SelectionRule {
    /// Stable label used in serialised output.
    pub fn label(&self) -> &'static str {
        match self {
            SelectionRule::MinPress => "min_press",
            SelectionRule::MinGcv => "min_gcv",
            SelectionRule::OneSe => "one_se",
            SelectionRule::ChiSquare => "chi_square",
        }
    }
}

/// A chosen lambda together with the rule that chose it.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub rule: SelectionRule,
    pub lambda: f64,
    pub index: usize,
    /// Value of the rule's own criterion at the chosen grid point: the curve
    /// value for the minimum rules, mean squared error for the one-SE rule,
    /// and the scaled PRESS ratio for the chi-square rule.
    pub criterion_value: f64,
    /// Number of distinct curve evaluations the rule consumed.
    pub evaluations_used: usize,
}

/// Index of the smallest curve value for one response; ties go to the
/// larger lambda.
pub fn grid_minimum(curve: &CvCurve, response: usize) -> Result<SelectionResult> {
    check_response(curve, response)?;
    let n_lambda = curve.grid.len();
    let mut best = 0;
    for l in 1..n_lambda {
        if curve.press[(l, response)] <= curve.press[(best, response)] {
            best = l;
        }
    }
    Ok(SelectionResult {
        rule: minimum_rule_tag(curve),
        lambda: curve.grid.values()[best],
        index: best,
        criterion_value: curve.press[(best, response)],
        evaluations_used: n_lambda,
    })
}

fn minimum_rule_tag(curve: &CvCurve) -> SelectionRule {
    if curve.strategy == CvStrategy::Gcv {
        SelectionRule::MinGcv
    } else {
        SelectionRule::MinPress
    }
}

/// Finds a local minimum of `evaluator` over the grid indices without
/// evaluating every point: golden-section bracketing with a parabolic
/// interpolation step when the sampled points support one, followed by a
/// downhill walk so the result is never worse than either neighbour.
/// Evaluations are memoised; on a unimodal curve the result is the global
/// minimum at a fraction of the grid's cost. Multimodal curves may yield a
/// local minimum — callers wanting the exact optimum must pay for
/// [`grid_minimum`] on a fully evaluated curve instead.
pub fn min_press_search<F>(mut evaluator: F, grid: &LambdaGrid) -> Result<SelectionResult>
where
    F: FnMut(usize) -> f64,
{
    let len = grid.len();
    if len < 4 {
        return Err(Error::InvalidArgument {
            what: format!("the search needs a grid of at least 4 points, got {len}"),
        });
    }

    let mut memo: BTreeMap<usize, f64> = BTreeMap::new();
    let mut evals = 0usize;
    let mut eval = |i: usize, memo: &mut BTreeMap<usize, f64>, evals: &mut usize| -> f64 {
        *memo.entry(i).or_insert_with(|| {
            *evals += 1;
            evaluator(i)
        })
    };

    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let (mut lo, mut hi) = (0usize, len - 1);
    eval(lo, &mut memo, &mut evals);
    eval(hi, &mut memo, &mut evals);

    while hi - lo >= 4 {
        // Parabolic step: if the best sampled point sits strictly between
        // two sampled neighbours, the parabola through the three suggests
        // where the minimum lies. Accept the suggestion only when it is a
        // new interior index and actually narrows the bracket.
        if let Some((u, b, w)) = best_with_neighbours(&memo, lo, hi) {
            if let Some(candidate) = parabolic_vertex(&memo, u, b, w, lo, hi) {
                if !memo.contains_key(&candidate) {
                    eval(candidate, &mut memo, &mut evals);
                    if let Some((new_lo, new_hi)) = bracket_from_samples(&memo, lo, hi) {
                        if new_hi - new_lo < hi - lo {
                            lo = new_lo;
                            hi = new_hi;
                            continue;
                        }
                    }
                }
            }
        }

        // Golden-section step on integer indices.
        let span = (hi - lo) as f64;
        let mut x1 = lo + ((1.0 - INVPHI) * span).round() as usize;
        let mut x2 = lo + (INVPHI * span).round() as usize;
        x1 = x1.clamp(lo + 1, hi - 1);
        x2 = x2.clamp(lo + 1, hi - 1);
        if x2 <= x1 {
            // Rounding collision; span >= 4 guarantees room for two
            // distinct interior points.
            x1 = lo + (hi - lo) / 3;
            x2 = hi - (hi - lo) / 3;
            if x2 <= x1 {
                x2 = x1 + 1;
            }
        }
        let f1 = eval(x1, &mut memo, &mut evals);
        let f2 = eval(x2, &mut memo, &mut evals);
        if f1 <= f2 {
            hi = x2;
        } else {
            lo = x1;
        }
    }

    // The bracket is small now; evaluate it exhaustively, ties toward the
    // larger lambda.
    let mut best = lo;
    let mut f_best = eval(lo, &mut memo, &mut evals);
    for i in (lo + 1)..=hi {
        let f = eval(i, &mut memo, &mut evals);
        if f <= f_best {
            best = i;
            f_best = f;
        }
    }

    // Downhill verification: never return a point that a neighbour beats.
    loop {
        if best + 1 < len && eval(best + 1, &mut memo, &mut evals) < f_best {
            best += 1;
            f_best = memo[&best];
        } else if best > 0 && eval(best - 1, &mut memo, &mut evals) < f_best {
            best -= 1;
            f_best = memo[&best];
        } else {
            break;
        }
    }

    Ok(SelectionResult {
        rule: SelectionRule::MinPress,
        lambda: grid.values()[best],
        index: best,
        criterion_value: f_best,
        evaluations_used: evals,
    })
}

/// Best sampled index in `[lo, hi]` together with its sampled neighbours,
/// provided it lies strictly between them.
fn best_with_neighbours(
    memo: &BTreeMap<usize, f64>,
    lo: usize,
    hi: usize,
) -> Option<(usize, usize, usize)> {
    let mut best: Option<usize> = None;
    for (&i, &f) in memo.range(lo..=hi) {
        if best.is_none_or(|b| f <= memo[&b]) {
            best = Some(i);
        }
    }
    let b = best?;
    if b <= lo || b >= hi {
        return None;
    }
    let u = *memo.range(lo..b).next_back()?.0;
    let w = *memo.range((b + 1)..=hi).next()?.0;
    Some((u, b, w))
}

/// Integer vertex of the parabola through three sampled points, when it is
/// well-defined and lands strictly inside the bracket.
fn parabolic_vertex(
    memo: &BTreeMap<usize, f64>,
    u: usize,
    b: usize,
    w: usize,
    lo: usize,
    hi: usize,
) -> Option<usize> {
    let (xu, xb, xw) = (u as f64, b as f64, w as f64);
    let (fu, fb, fw) = (memo[&u], memo[&b], memo[&w]);
    let num = (xb - xu).powi(2) * (fb - fw) - (xb - xw).powi(2) * (fb - fu);
    let den = (xb - xu) * (fb - fw) - (xb - xw) * (fb - fu);
    if den.abs() < 1e-300 {
        return None;
    }
    let vertex = xb - 0.5 * num / den;
    if !vertex.is_finite() {
        return None;
    }
    let candidate = vertex.round() as i64;
    if candidate <= lo as i64 || candidate >= hi as i64 {
        return None;
    }
    Some(candidate as usize)
}

/// Narrows `[lo, hi]` to the sampled neighbours of the best sampled point;
/// on a unimodal curve the minimum cannot lie outside that range.
fn bracket_from_samples(
    memo: &BTreeMap<usize, f64>,
    lo: usize,
    hi: usize,
) -> Option<(usize, usize)> {
    let mut best: Option<usize> = None;
    for (&i, &f) in memo.range(lo..=hi) {
        if best.is_none_or(|b| f <= memo[&b]) {
            best = Some(i);
        }
    }
    let b = best?;
    let new_lo = if b > lo {
        memo.range(lo..b).next_back().map_or(lo, |(&i, _)| i)
    } else {
        lo
    };
    let new_hi = if b < hi {
        memo.range((b + 1)..=hi).next().map_or(hi, |(&i, _)| i)
    } else {
        hi
    };
    Some((new_lo, new_hi))
}

/// One-standard-error rule: at the curve minimum, take the per-sample
/// squared cross-validated residuals `e_i`, compute `SE = sd(e) / sqrt(n)`
/// (sample standard deviation), and choose the largest lambda whose mean
/// squared error `PRESS/n` stays within `PRESS_min/n + SE`.
///
/// Working on the raw PRESS scale with `SE_raw = sd(e) * sqrt(n)` selects
/// the same index — both sides of the comparison pick up the same factor n —
/// so no scale switch is exposed.
pub fn one_se_rule(curve: &CvCurve, response: usize) -> Result<SelectionResult> {
    check_response(curve, response)?;
    let minimum = grid_minimum(curve, response)?;
    let residuals = &curve.cv_residuals[minimum.index];
    let n = residuals.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument {
            what: format!("the one-SE rule needs at least 2 samples, got {n}"),
        });
    }
    let squared: Vec<f64> = residuals
        .column(response)
        .iter()
        .map(|r| r * r)
        .collect();
    let mean = squared.iter().sum::<f64>() / n as f64;
    let var = squared.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let threshold = curve.press[(minimum.index, response)] / n as f64 + se;

    let mut chosen = minimum.index;
    for l in (minimum.index + 1)..curve.grid.len() {
        if curve.press[(l, response)] / n as f64 <= threshold {
            chosen = l;
        }
    }
    Ok(SelectionResult {
        rule: SelectionRule::OneSe,
        lambda: curve.grid.values()[chosen],
        index: chosen,
        criterion_value: curve.press[(chosen, response)] / n as f64,
        evaluations_used: curve.grid.len(),
    })
}

/// Chi-square rule: choose the largest lambda whose scaled PRESS ratio
/// `n * PRESS_min / PRESS(lambda)` stays at or above the lower
/// `alpha`-quantile of the chi-square distribution with `n` degrees of
/// freedom. Degrades gracefully to the curve minimum if no grid point
/// qualifies (possible for alpha close to 1, where the quantile exceeds n).
pub fn chi_square_rule(curve: &CvCurve, response: usize, alpha: f64) -> Result<SelectionResult> {
    check_response(curve, response)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument {
            what: format!("alpha must lie strictly between 0 and 1, got {alpha}"),
        });
    }
    let minimum = grid_minimum(curve, response)?;
    let n = curve.cv_residuals[minimum.index].nrows();
    let press_min = curve.press[(minimum.index, response)];
    let quantile = chi_square_quantile(n as f64, alpha)?;

    let mut chosen = minimum.index;
    for l in (0..curve.grid.len()).rev() {
        let ratio = n as f64 * press_min / curve.press[(l, response)];
        if ratio >= quantile {
            if l >= minimum.index {
                chosen = l;
            }
            break;
        }
    }
    let ratio = n as f64 * press_min / curve.press[(chosen, response)];
    Ok(SelectionResult {
        rule: SelectionRule::ChiSquare,
        lambda: curve.grid.values()[chosen],
        index: chosen,
        criterion_value: ratio,
        evaluations_used: curve.grid.len(),
    })
}

fn check_response(curve: &CvCurve, response: usize) -> Result<()> {
    if curve.grid.is_empty() || curve.press.nrows() == 0 {
        return Err(Error::Empty {
            what: "cross-validation curve",
        });
    }
    if response >= curve.press.ncols() {
        return Err(Error::InvalidArgument {
            what: format!(
                "response index {response} out of range for {} responses",
                curve.press.ncols()
            ),
        });
    }
    Ok(())
}

/// Lower `alpha`-quantile of the chi-square distribution with `dof` degrees
/// of freedom, i.e. the `x` solving `P(dof/2, x/2) = alpha` where `P` is the
/// regularized lower incomplete gamma function. Bisection, accurate to
/// about 1e-12 relative.
pub fn chi_square_quantile(dof: f64, alpha: f64) -> Result<f64> {
    if !(dof > 0.0 && dof.is_finite()) {
        return Err(Error::InvalidArgument {
            what: format!("degrees of freedom must be positive and finite, got {dof}"),
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument {
            what: format!("alpha must lie strictly between 0 and 1, got {alpha}"),
        });
    }

    let a = dof / 2.0;
    let cdf = |x: f64| gamma_p(a, x / 2.0);

    // Bracket the quantile: the mean is dof, so start a few standard
    // deviations above it and expand if needed.
    let mut hi = dof + 10.0 * (2.0 * dof).sqrt() + 10.0;
    let mut expansions = 0;
    while cdf(hi) < alpha {
        hi *= 2.0;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::Contract {
                what: "chi-square quantile bracketing failed to enclose alpha".into(),
            });
        }
    }
    let mut lo = 0.0_f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gamma_p(a, mid / 2.0) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Regularized lower incomplete gamma function `P(a, x)`: series expansion
/// for `x < a + 1`, Lentz continued fraction for the upper tail otherwise.
fn gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        // P(a,x) = x^a e^-x / Gamma(a) * sum_k x^k / (a (a+1) ... (a+k))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut denom = a;
        for _ in 0..600 {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum * log_prefix.exp()).clamp(0.0, 1.0)
    } else {
        // Q(a,x) via modified Lentz on the standard continued fraction.
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..600 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        (1.0 - log_prefix.exp() * h).clamp(0.0, 1.0)
    }
}

/// Natural log of the gamma function, Lanczos approximation (g = 7, nine
/// coefficients), with the reflection formula below 0.5.
fn ln_gamma(x: f64) -> f64 {
    use std::f64::consts::PI;
    #[allow(clippy::excessive_precision)] // published table, kept verbatim
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
