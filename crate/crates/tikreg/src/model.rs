//! Penalised least-squares model families.
//!
//! The fit minimises `||X b - y||^2 + lambda * ||L b||^2` with an unpenalised
//! intercept, for a whole grid of `lambda` values at once. Centring the data
//! absorbs the intercept, the regularisation operator reduces the problem to
//! standard form, and one compact SVD of the transformed predictors then
//! yields coefficients, fitted values, leverages, and effective degrees of
//! freedom for every `lambda`. After the decomposition the marginal cost per
//! grid point depends on `n` and the rank only — not on the number of
//! predictors — which is what makes dense grids and repeated cross-validation
//! sweeps affordable.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{center_columns, compact_svd, ensure_finite, CompactSvd, DEFAULT_RANK_TOL};
use crate::regularization::{
    build_operator, sample_column_sds, RegKind, RegularizationOperator, RegularizationSpec,
};

/// Immutable design matrix / response pair, optionally with segment labels
/// for grouped cross-validation. Rows are observations.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    segments: Option<Vec<usize>>,
    num_segments: usize,
}

impl Dataset {
    /// Creates a dataset without segment labels.
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        Self::build(x, y, None)
    }

    /// Creates a dataset with one segment label per row. Labels must be
    /// `1..=K` with every segment non-empty.
    pub fn with_segments(x: DMatrix<f64>, y: DMatrix<f64>, segments: Vec<usize>) -> Result<Self> {
        Self::build(x, y, Some(segments))
    }

    fn build(x: DMatrix<f64>, y: DMatrix<f64>, segments: Option<Vec<usize>>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || x.ncols() == 0 {
            return Err(Error::Empty { what: "predictors" });
        }
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(Error::Empty { what: "responses" });
        }
        if y.nrows() != n {
            return Err(Error::DimensionMismatch {
                what: "responses",
                expected: format!("{n} rows"),
                found: y.nrows().to_string(),
            });
        }
        if n < 2 {
            return Err(Error::InvalidArgument {
                what: format!("at least 2 observations are required, got {n}"),
            });
        }
        ensure_finite(&x, "predictors")?;
        ensure_finite(&y, "responses")?;

        let num_segments = match &segments {
            None => 0,
            Some(labels) => {
                if labels.len() != n {
                    return Err(Error::InvalidSegments {
                        what: format!("expected {n} labels, got {}", labels.len()),
                    });
                }
                let k = *labels.iter().max().expect("non-empty");
                if labels.contains(&0) {
                    return Err(Error::InvalidSegments {
                        what: "labels must be 1-based".into(),
                    });
                }
                let mut seen = vec![false; k];
                for &l in labels {
                    seen[l - 1] = true;
                }
                if let Some(missing) = seen.iter().position(|&s| !s) {
                    return Err(Error::InvalidSegments {
                        what: format!("segment {} is empty; labels must be dense 1..=K", missing + 1),
                    });
                }
                k
            }
        };

        Ok(Dataset {
            x,
            y,
            segments,
            num_segments,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of predictors.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of response columns.
    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn segments(&self) -> Option<&[usize]> {
        self.segments.as_deref()
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    /// Row indices of each segment, indexed by `label - 1`. Errors when the
    /// dataset carries no labels.
    pub fn segment_rows(&self) -> Result<Vec<Vec<usize>>> {
        let labels = self.segments.as_ref().ok_or(Error::MissingSegments)?;
        let mut rows = vec![Vec::new(); self.num_segments];
        for (i, &l) in labels.iter().enumerate() {
            rows[l - 1].push(i);
        }
        Ok(rows)
    }
}

/// Strictly increasing grid of penalty strengths. `lambda = 0` (an exact
/// least-squares fit) must be requested explicitly via [`LambdaGrid::with_zero`]
/// and is only accepted at fit time when the centred predictors have full
/// rank `min(n - 1, p)`.
#[derive(Debug, Clone)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    /// Grid of strictly positive, strictly increasing values.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::validate(&values, false)?;
        Ok(LambdaGrid { values })
    }

    /// Like [`LambdaGrid::new`] but permits the first value to be exactly zero.
    pub fn with_zero(values: Vec<f64>) -> Result<Self> {
        Self::validate(&values, true)?;
        Ok(LambdaGrid { values })
    }

    /// `count` values spread geometrically over `[min, max]`, both inclusive.
    pub fn log_spaced(min: f64, max: f64, count: usize) -> Result<Self> {
        if min <= 0.0 || !min.is_finite() || !max.is_finite() {
            return Err(Error::InvalidArgument {
                what: format!("log-spaced grid needs 0 < min <= max, got [{min}, {max}]"),
            });
        }
        Self::spaced(min, max, count, |t| {
            10f64.powf(min.log10() + t * (max.log10() - min.log10()))
        })
    }

    /// `count` values spread arithmetically over `[min, max]`, both inclusive.
    pub fn linear_spaced(min: f64, max: f64, count: usize) -> Result<Self> {
        if min <= 0.0 || !min.is_finite() || !max.is_finite() {
            return Err(Error::InvalidArgument {
                what: format!("linear grid needs 0 < min <= max, got [{min}, {max}]"),
            });
        }
        Self::spaced(min, max, count, |t| min + t * (max - min))
    }

    fn spaced(min: f64, max: f64, count: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument {
                what: "grid needs at least one value".into(),
            });
        }
        if count == 1 {
            if min != max {
                return Err(Error::InvalidArgument {
                    what: "a single-point grid needs min == max".into(),
                });
            }
            return Self::new(vec![min]);
        }
        if max <= min {
            return Err(Error::InvalidArgument {
                what: format!("grid needs max > min, got [{min}, {max}]"),
            });
        }
        let mut values = Vec::with_capacity(count);
        for i in 0..count {
            let t = i as f64 / (count - 1) as f64;
            values.push(f(t));
        }
        // Pin endpoints exactly; the interpolation can round the last step.
        values[0] = min;
        values[count - 1] = max;
        Self::new(values)
    }

    fn validate(values: &[f64], zero_ok: bool) -> Result<()> {
        if values.is_empty() {
            return Err(Error::Empty { what: "lambda grid" });
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidArgument {
                    what: format!("lambda[{i}] = {v} is not finite"),
                });
            }
            let lower_ok = if i == 0 && zero_ok { v >= 0.0 } else { v > 0.0 };
            if !lower_ok {
                return Err(Error::InvalidArgument {
                    what: format!(
                        "lambda[{i}] = {v} must be positive{}",
                        if i == 0 { " (use with_zero for an exact fit)" } else { "" }
                    ),
                });
            }
            if i > 0 && values[i] <= values[i - 1] {
                return Err(Error::InvalidArgument {
                    what: format!(
                        "lambda grid must be strictly increasing, got {} after {}",
                        values[i],
                        values[i - 1]
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn contains_zero(&self) -> bool {
        self.values[0] == 0.0
    }
}

/// Everything computed per grid point for an already centred, standard-form
/// system: shrinkage factors, coefficient spectra, fitted values, leverages,
/// degrees of freedom, and the fitted residual sum of squares.
pub(crate) struct StandardFormFit {
    pub svd: CompactSvd,
    /// Shrinkage factors `d_j = s_j^2 / (s_j^2 + lambda)`, `r x len(grid)`.
    pub d: DMatrix<f64>,
    /// Coefficient spectra `c = (s + lambda/s)^-1 U' y_work`, one `r x q` per lambda.
    pub c: Vec<DMatrix<f64>>,
    /// Fitted values of the working system, one `n x q` per lambda.
    pub fitted: Vec<DMatrix<f64>>,
    /// Hat-matrix diagonals (without any centring correction), `n x len(grid)`.
    pub leverages: DMatrix<f64>,
    /// Effective degrees of freedom `1 + sum_j d_j`, one per lambda.
    pub df: DVector<f64>,
    /// Working residual sum of squares, `len(grid) x q`.
    pub rss: DMatrix<f64>,
    /// The working responses the fit was computed from, `n x q`.
    pub y_work: DMatrix<f64>,
}

struct PerLambda {
    d: DVector<f64>,
    c: DMatrix<f64>,
    fitted: DMatrix<f64>,
    leverage: DVector<f64>,
    df: f64,
    rss: RowDVector<f64>,
}

impl StandardFormFit {
    /// Fits the working system `x_work` (already centred and transformed) to
    /// `y_work` over the grid. `full_rank_dim` is the rank that lambda = 0
    /// requires, i.e. `min(n - 1, p)` of the original data.
    pub(crate) fn compute(
        x_work: &DMatrix<f64>,
        y_work: DMatrix<f64>,
        grid: &LambdaGrid,
        rank_tol: f64,
        full_rank_dim: usize,
    ) -> Result<Self> {
        let svd = compact_svd(x_work, rank_tol)?;
        if grid.contains_zero() && svd.rank() < full_rank_dim {
            return Err(Error::RankDeficient {
                rank: svd.rank(),
                full: full_rank_dim,
            });
        }
        Ok(Self::from_svd(svd, y_work, grid))
    }

    /// Same fit, starting from a precomputed decomposition. The per-lambda
    /// work below touches only `n`- and rank-sized quantities, so sweeping
    /// even very dense grids stays cheap for wide predictor matrices.
    pub(crate) fn from_svd(svd: CompactSvd, y_work: DMatrix<f64>, grid: &LambdaGrid) -> Self {
        let r = svd.rank();
        let uty = svd.u.transpose() * &y_work;
        let mut us = svd.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= svd.s[j];
        }
        let uu = svd.u.map(|v| v * v);

        let n_lambda = grid.len();
        let per: Vec<PerLambda> = grid
            .values()
            .par_iter()
            .map(|&lambda| {
                let mut d = DVector::zeros(r);
                let mut inv_denom = DVector::zeros(r);
                for j in 0..r {
                    let s = svd.s[j];
                    let denom = s + lambda / s;
                    d[j] = s / denom;
                    inv_denom[j] = 1.0 / denom;
                }
                let mut c = uty.clone();
                for (j, mut row) in c.row_iter_mut().enumerate() {
                    row *= inv_denom[j];
                }
                let fitted = &us * &c;
                let leverage = &uu * &d;
                let df = 1.0 + d.sum();
                let resid = &y_work - &fitted;
                let rss = RowDVector::from_iterator(
                    resid.ncols(),
                    resid.column_iter().map(|col| col.norm_squared()),
                );
                PerLambda {
                    d,
                    c,
                    fitted,
                    leverage,
                    df,
                    rss,
                }
            })
            .collect();

        let n = y_work.nrows();
        let q = y_work.ncols();
        let mut d = DMatrix::zeros(r, n_lambda);
        let mut leverages = DMatrix::zeros(n, n_lambda);
        let mut df = DVector::zeros(n_lambda);
        let mut rss = DMatrix::zeros(n_lambda, q);
        let mut c = Vec::with_capacity(n_lambda);
        let mut fitted = Vec::with_capacity(n_lambda);
        for (l, item) in per.into_iter().enumerate() {
            d.set_column(l, &item.d);
            leverages.set_column(l, &item.leverage);
            df[l] = item.df;
            rss.set_row(l, &item.rss);
            c.push(item.c);
            fitted.push(item.fitted);
        }

        StandardFormFit {
            svd,
            d,
            c,
            fitted,
            leverages,
            df,
            rss,
            y_work,
        }
    }

    pub(crate) fn residuals(&self, index: usize) -> DMatrix<f64> {
        &self.y_work - &self.fitted[index]
    }
}

/// Reusable decomposition of a dataset under one regularisation operator.
/// Building it costs the SVD; fitting any number of grids afterwards is
/// cheap. Useful when searching over lambda or comparing grids.
pub struct FitContext {
    op: Arc<RegularizationOperator>,
    svd: CompactSvd,
    /// `x_means L^-1 V`, used to restore intercepts without touching `p`-sized
    /// vectors per lambda.
    mean_spectrum: RowDVector<f64>,
    y_means: RowDVector<f64>,
    y_centred: DMatrix<f64>,
    n: usize,
    p: usize,
    q: usize,
    full_rank_dim: usize,
}

impl FitContext {
    pub fn new(data: &Dataset, reg: &RegularizationSpec) -> Result<Self> {
        Self::with_rank_tol(data, reg, DEFAULT_RANK_TOL)
    }

    pub fn with_rank_tol(data: &Dataset, reg: &RegularizationSpec, rank_tol: f64) -> Result<Self> {
        let (x_centred, x_means) = center_columns(data.x())?;
        let (y_centred, y_means) = center_columns(data.y())?;
        let sds;
        let column_sds = if reg.kind == RegKind::Standardize {
            sds = sample_column_sds(&x_centred)?;
            Some(&sds)
        } else {
            None
        };
        let op = build_operator(reg, data.p(), column_sds)?;
        let x_work = op.to_standard_form(&x_centred)?;
        let svd = compact_svd(&x_work, rank_tol)?;

        let means_std = op.to_standard_form(&DMatrix::from_rows(&[x_means]))?;
        let mean_spectrum = (means_std * &svd.v).row(0).into_owned();

        Ok(FitContext {
            op: Arc::new(op),
            svd,
            mean_spectrum,
            y_means,
            y_centred,
            n: data.n(),
            p: data.p(),
            q: data.q(),
            full_rank_dim: data.n().saturating_sub(1).min(data.p()),
        })
    }

    /// Fits the family for `grid`, reusing the stored decomposition.
    pub fn fit(&self, grid: &LambdaGrid) -> Result<ModelFamily> {
        if grid.contains_zero() && self.svd.rank() < self.full_rank_dim {
            return Err(Error::RankDeficient {
                rank: self.svd.rank(),
                full: self.full_rank_dim,
            });
        }

        let fit = StandardFormFit::from_svd(self.svd.clone(), self.y_centred.clone(), grid);

        // b0 = y_means - x_means * b; the second term reduces to the stored
        // spectrum row times c, so no p-length work is needed per lambda.
        let mut intercepts = DMatrix::zeros(grid.len(), self.q);
        for l in 0..grid.len() {
            let shift = &self.mean_spectrum * &fit.c[l];
            for (col, &m) in self.y_means.iter().enumerate() {
                intercepts[(l, col)] = m - shift[col];
            }
        }

        Ok(ModelFamily {
            fit,
            op: Arc::clone(&self.op),
            grid: grid.clone(),
            y_means: self.y_means.clone(),
            intercepts,
            n: self.n,
            p: self.p,
            q: self.q,
        })
    }
}

/// A fitted family: one model per grid value, sharing a single decomposition.
pub struct ModelFamily {
    pub(crate) fit: StandardFormFit,
    /// Shared, not cloned: the identity operator alone holds a dense `p x p`
    /// matrix, which must not be copied per fit on wide data.
    pub(crate) op: Arc<RegularizationOperator>,
    grid: LambdaGrid,
    y_means: RowDVector<f64>,
    /// `len(grid) x q` intercepts.
    intercepts: DMatrix<f64>,
    n: usize,
    p: usize,
    q: usize,
}

/// Centres the data, applies the regularisation operator, and fits the whole
/// grid from a single compact SVD.
pub fn fit_family(
    data: &Dataset,
    reg: &RegularizationSpec,
    grid: &LambdaGrid,
) -> Result<ModelFamily> {
    if grid.is_empty() {
        return Err(Error::Empty { what: "lambda grid" });
    }
    FitContext::new(data, reg)?.fit(grid)
}

impl ModelFamily {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn grid(&self) -> &LambdaGrid {
        &self.grid
    }

    pub fn svd(&self) -> &CompactSvd {
        &self.fit.svd
    }

    /// Shrinkage factors `d_j(lambda)`, `rank x len(grid)`.
    pub fn shrinkage_factors(&self) -> &DMatrix<f64> {
        &self.fit.d
    }

    /// Hat-matrix diagonals per lambda (`n x len(grid)`), excluding the
    /// intercept correction `1/n` that cross-validation adds separately.
    pub fn leverages(&self) -> &DMatrix<f64> {
        &self.fit.leverages
    }

    /// Effective degrees of freedom per lambda: `1 + sum_j d_j(lambda)`.
    pub fn degrees_of_freedom(&self) -> &DVector<f64> {
        &self.fit.df
    }

    /// Residual sum of squares of the fitted models, `len(grid) x q`.
    pub fn fitted_rss(&self) -> &DMatrix<f64> {
        &self.fit.rss
    }

    pub fn y_means(&self) -> &RowDVector<f64> {
        &self.y_means
    }

    /// Fitted values on the original response scale, `n x q`.
    pub fn fitted(&self, index: usize) -> DMatrix<f64> {
        let mut out = self.fit.fitted[index].clone();
        for (col, &m) in self.y_means.iter().enumerate() {
            out.column_mut(col).add_scalar_mut(m);
        }
        out
    }

    /// Training residuals `y - fitted`, `n x q`. Identical on the centred and
    /// original scales because the intercept absorbs the means.
    pub fn residuals(&self, index: usize) -> DMatrix<f64> {
        self.fit.residuals(index)
    }

    /// Coefficients on the original predictor scale together with the
    /// intercept row, for grid entry `index`.
    pub fn coefficients_at(&self, index: usize) -> Result<(DMatrix<f64>, RowDVector<f64>)> {
        self.check_index(index)?;
        let beta = &self.fit.svd.v * &self.fit.c[index];
        let b = self.op.back_transform(&beta)?;
        Ok((b, self.intercepts.row(index).into_owned()))
    }

    /// Predicts responses for new rows using the model at grid entry `index`.
    pub fn predict(&self, index: usize, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_index(index)?;
        if x_new.ncols() != self.p {
            return Err(Error::DimensionMismatch {
                what: "prediction input",
                expected: format!("{} columns", self.p),
                found: x_new.ncols().to_string(),
            });
        }
        ensure_finite(x_new, "prediction input")?;
        let (b, b0) = self.coefficients_at(index)?;
        let mut out = x_new * b;
        for (col, &intercept) in b0.iter().enumerate() {
            out.column_mut(col).add_scalar_mut(intercept);
        }
        Ok(out)
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.grid.len() {
            return Err(Error::InvalidArgument {
                what: format!(
                    "grid index {index} out of range for {} lambda values",
                    self.grid.len()
                ),
            });
        }
        Ok(())
    }
}
