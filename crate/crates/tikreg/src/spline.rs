//! Cheap PRESS-curve estimation: evaluate the curve exactly at a small set
//! of knots, interpolate the rest with a natural cubic spline over
//! `log10(lambda)`, and add knots adaptively where leave-one-knot-out
//! validation says the interpolant is not yet trustworthy.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::LambdaGrid;

/// Default relative validation tolerance for [`spline_press_estimate`].
pub const DEFAULT_SPLINE_REL_TOL: f64 = 1e-3;

/// Number of log-equidistant starting knots.
pub const SPLINE_STARTING_KNOTS: usize = 8;

/// A natural cubic spline interpolator: piecewise cubics with continuous
/// first and second derivatives and zero curvature at both ends.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots, solved at construction.
    y2: Vec<f64>,
}

impl CubicSpline {
    /// Builds the spline through `(xs[i], ys[i])`. `xs` must be strictly
    /// increasing with at least two points.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                what: "spline knots",
                expected: format!("{} ordinates", xs.len()),
                found: ys.len().to_string(),
            });
        }
        if xs.len() < 2 {
            return Err(Error::InvalidArgument {
                what: format!("a spline needs at least 2 knots, got {}", xs.len()),
            });
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "spline knots".into(),
            });
        }
        for i in 1..xs.len() {
            if xs[i] <= xs[i - 1] {
                return Err(Error::InvalidArgument {
                    what: format!("spline abscissae must be strictly increasing at index {i}"),
                });
            }
        }

        // Tridiagonal solve for the second derivatives, natural boundary
        // conditions: forward sweep then back substitution.
        let n = xs.len();
        let mut y2 = vec![0.0; n];
        let mut u = vec![0.0; n];
        for i in 1..n - 1 {
            let sig = (xs[i] - xs[i - 1]) / (xs[i + 1] - xs[i - 1]);
            let p = sig * y2[i - 1] + 2.0;
            y2[i] = (sig - 1.0) / p;
            let slope_diff = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
                - (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1]);
            u[i] = (6.0 * slope_diff / (xs[i + 1] - xs[i - 1]) - sig * u[i - 1]) / p;
        }
        for k in (1..n - 1).rev() {
            y2[k] = y2[k] * y2[k + 1] + u[k];
        }

        Ok(Self { xs, ys, y2 })
    }

    /// Evaluates the spline at `x`. Outside the knot range the boundary
    /// polynomial is extended.
    pub fn evaluate(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let mut lo = 0;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.xs[mid] > x {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let h = self.xs[hi] - self.xs[lo];
        let a = (self.xs[hi] - x) / h;
        let b = (x - self.xs[lo]) / h;
        a * self.ys[lo]
            + b * self.ys[hi]
            + ((a * a * a - a) * self.y2[lo] + (b * b * b - b) * self.y2[hi]) * h * h / 6.0
    }
}

/// An adaptively refined spline approximation of a PRESS curve.
#[derive(Debug, Clone)]
pub struct SplineEstimate {
    /// Grid indices of the knots, strictly increasing.
    pub knot_indices: Vec<usize>,
    /// Lambda values at the knots.
    pub knot_lambdas: Vec<f64>,
    /// Exact curve values at the knots.
    pub knot_values: Vec<f64>,
    /// Largest relative leave-one-knot-out error seen in the final
    /// validation pass.
    pub max_validated_rel_error: f64,
    /// Number of exact curve evaluations consumed.
    pub evaluations_used: usize,
    spline: CubicSpline,
    log_lambdas: Vec<f64>,
}

impl SplineEstimate {
    /// Estimated curve value at a grid index.
    pub fn evaluate_index(&self, index: usize) -> f64 {
        self.spline.evaluate(self.log_lambdas[index])
    }

    /// Estimated curve value at an arbitrary positive lambda.
    pub fn evaluate_lambda(&self, lambda: f64) -> f64 {
        self.spline.evaluate(lambda.log10())
    }

    /// The full estimated curve, one value per grid index.
    pub fn estimate_curve(&self) -> Vec<f64> {
        (0..self.log_lambdas.len())
            .map(|i| self.evaluate_index(i))
            .collect()
    }
}

/// Approximates an expensive curve over the grid from as few exact
/// evaluations as possible.
///
/// Starts from [`SPLINE_STARTING_KNOTS`] log-equidistant knots. Each round
/// interpolates with a natural cubic spline on `log10(lambda)` and validates
/// every interior knot by predicting it from a spline fitted *without* it;
/// wherever that prediction misses the exact value by more than `rel_tol`
/// (relatively), the midpoint indices toward both neighbouring knots are
/// added. Stops when every interior knot validates or no midpoints are left
/// to add, so the worst case degenerates to the exact curve.
pub fn spline_press_estimate<F>(
    mut evaluator: F,
    grid: &LambdaGrid,
    rel_tol: f64,
) -> Result<SplineEstimate>
where
    F: FnMut(usize) -> f64,
{
    let len = grid.len();
    if len < SPLINE_STARTING_KNOTS {
        return Err(Error::InvalidArgument {
            what: format!("spline estimation needs a grid of at least {SPLINE_STARTING_KNOTS} points, got {len}"),
        });
    }
    if !rel_tol.is_finite() || rel_tol <= 0.0 {
        return Err(Error::InvalidArgument {
            what: format!("relative tolerance must be positive, got {rel_tol}"),
        });
    }
    if grid.contains_zero() {
        return Err(Error::InvalidArgument {
            what: "spline estimation works on log10(lambda); the grid must not contain 0".into(),
        });
    }

    let log_lambdas: Vec<f64> = grid.values().iter().map(|l| l.log10()).collect();

    let mut knots: BTreeSet<usize> = (0..SPLINE_STARTING_KNOTS)
        .map(|k| (k as f64 * (len - 1) as f64 / (SPLINE_STARTING_KNOTS - 1) as f64).round() as usize)
        .collect();

    let mut values: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    let mut evaluations = 0usize;
    let mut max_error;
    loop {
        for &i in &knots {
            values.entry(i).or_insert_with(|| {
                evaluations += 1;
                evaluator(i)
            });
        }
        let idx: Vec<usize> = knots.iter().copied().collect();

        // Validate each interior knot by removing it and predicting it from
        // the remaining ones.
        max_error = 0.0_f64;
        let mut failing: Vec<usize> = Vec::new();
        let scale = idx
            .iter()
            .map(|i| values[i].abs())
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        for pos in 1..idx.len() - 1 {
            let xs: Vec<f64> = idx
                .iter()
                .enumerate()
                .filter(|(q, _)| *q != pos)
                .map(|(_, &i)| log_lambdas[i])
                .collect();
            let ys: Vec<f64> = idx
                .iter()
                .enumerate()
                .filter(|(q, _)| *q != pos)
                .map(|(_, &i)| values[&i])
                .collect();
            let reduced = CubicSpline::new(xs, ys)?;
            let exact = values[&idx[pos]];
            let predicted = reduced.evaluate(log_lambdas[idx[pos]]);
            let rel = (predicted - exact).abs() / exact.abs().max(1e-12 * scale);
            max_error = max_error.max(rel);
            if rel > rel_tol {
                failing.push(pos);
            }
        }

        if failing.is_empty() {
            break;
        }

        // Densify around every failing knot: midpoints toward both
        // neighbours, which doubles the local knot density.
        let mut inserted = false;
        for &pos in &failing {
            let here = idx[pos];
            let left = idx[pos - 1];
            let right = idx[pos + 1];
            for candidate in [(left + here) / 2, (here + right) / 2] {
                if candidate != left && candidate != here && candidate != right {
                    inserted |= knots.insert(candidate);
                }
            }
        }
        if !inserted {
            // Neighbouring indices are already adjacent everywhere it
            // matters; nothing finer exists on this grid.
            break;
        }
    }

    let knot_indices: Vec<usize> = knots.iter().copied().collect();
    let xs: Vec<f64> = knot_indices.iter().map(|&i| log_lambdas[i]).collect();
    let ys: Vec<f64> = knot_indices.iter().map(|&i| values[&i]).collect();
    let spline = CubicSpline::new(xs, ys.clone())?;
    Ok(SplineEstimate {
        knot_lambdas: knot_indices.iter().map(|&i| grid.values()[i]).collect(),
        knot_values: ys,
        knot_indices,
        max_validated_rel_error: max_error,
        evaluations_used: evaluations,
        spline,
        log_lambdas,
    })
}
