//! Cross-validation curves without refitting.
//!
//! All strategies here reuse the single decomposition behind a
//! [`ModelFamily`] instead of re-estimating the model per fold:
//!
//! * [`loocv_press`] — leave-one-out residuals from a per-sample leverage
//!   update; the `1/n` term accounts for the unpenalised intercept.
//! * [`gcv_curve`] — generalised cross-validation, replacing individual
//!   leverages with their average.
//! * [`segcv_press_implicit`] — leave-segment-out residuals from small
//!   symmetric block solves, one per (segment, lambda).
//! * [`segcv_press_explicit`] — the literal hold-out refit. Slow by design;
//!   it exists as the ground truth the implicit path is checked against.
//! * [`vircv_press`] — an orthogonal per-segment transform that concentrates
//!   each segment's information, after which leave-one-out on the transformed
//!   rows approximates (and for segments of identical rows, exactly
//!   reproduces) leave-segment-out at leave-one-out cost.
//!
//! Every curve reports `press` as the column-wise sum of squared
//! cross-validated residuals, one column per response.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    center_columns, compact_svd, orthonormal_completion_seeded, DEFAULT_COMPLETION_SEED,
    DEFAULT_RANK_TOL,
};
use crate::model::{Dataset, LambdaGrid, ModelFamily, StandardFormFit};
use crate::regularization::{
    build_operator, sample_column_sds, RegKind, RegularizationSpec,
};

/// Smallest admissible cross-validation denominator `1 - leverage - correction`.
pub const MIN_CV_DENOMINATOR: f64 = 1e-12;

/// Which estimator produced a [`CvCurve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvStrategy {
    Loocv,
    Gcv,
    SegcvImplicit,
    SegcvExplicit,
    Vircv,
}

/// A cross-validation curve over a lambda grid.
#[derive(Debug, Clone)]
pub struct CvCurve {
    pub strategy: CvStrategy,
    pub grid: LambdaGrid,
    /// Sum of squared cross-validated residuals, `len(grid) x q`.
    pub press: DMatrix<f64>,
    /// GCV values when the strategy provides them as a by-product.
    pub gcv: Option<DMatrix<f64>>,
    /// Cross-validated residuals, one `n x q` matrix per lambda. For
    /// [`CvStrategy::Vircv`] these live on the transformed row basis.
    pub cv_residuals: Vec<DMatrix<f64>>,
}

impl CvCurve {
    /// PRESS column for one response.
    pub fn press_for(&self, response: usize) -> DVector<f64> {
        self.press.column(response).into_owned()
    }
}

/// Leave-one-out PRESS for every lambda in the family's grid.
///
/// The cross-validated residual for sample `i` is
/// `(y_i - yhat_i) / (1 - h_i - 1/n)`; no refits happen. Errors when any
/// denominator falls to [`MIN_CV_DENOMINATOR`] or below, naming the sample.
pub fn loocv_press(family: &ModelFamily) -> Result<CvCurve> {
    let n = family.n();
    if n < 3 {
        return Err(Error::InvalidArgument {
            what: format!("leave-one-out needs at least 3 observations, got {n}"),
        });
    }
    let corrections = DVector::from_element(n, 1.0 / n as f64);
    let (cv_residuals, press) =
        corrected_quotients(&family.fit, family.grid(), &corrections)?;
    let gcv = gcv_values(&family.fit, family.grid(), n)?;
    Ok(CvCurve {
        strategy: CvStrategy::Loocv,
        grid: family.grid().clone(),
        press,
        gcv: Some(gcv),
        cv_residuals,
    })
}

/// Generalised cross-validation: `GCV(lambda) = RSS / (1 - df/n)^2`. The
/// reported `cv_residuals` are the fitted residuals scaled by the common
/// factor, so `press` remains their column-wise sum of squares.
pub fn gcv_curve(family: &ModelFamily) -> Result<CvCurve> {
    let n = family.n();
    let gcv = gcv_values(&family.fit, family.grid(), n)?;
    let n_lambda = family.grid().len();
    let mut cv_residuals = Vec::with_capacity(n_lambda);
    for l in 0..n_lambda {
        let factor = 1.0 - family.fit.df[l] / n as f64;
        cv_residuals.push(family.fit.residuals(l) / factor);
    }
    Ok(CvCurve {
        strategy: CvStrategy::Gcv,
        grid: family.grid().clone(),
        press: gcv.clone(),
        gcv: Some(gcv),
        cv_residuals,
    })
}

/// Leave-segment-out PRESS computed from the full fit: for each segment the
/// held-out residuals solve `(I - H_block - 1/n) r_cv = r`, a symmetric
/// system of segment size. Equivalent to [`segcv_press_explicit`] up to
/// rounding, at a fraction of the cost.
pub fn segcv_press_implicit(family: &ModelFamily, data: &Dataset) -> Result<CvCurve> {
    if family.n() != data.n() {
        return Err(Error::DimensionMismatch {
            what: "family/dataset pairing",
            expected: format!("{} rows", family.n()),
            found: data.n().to_string(),
        });
    }
    let segments = data.segment_rows()?;
    check_cv_segments(&segments, data.n())?;

    let n = data.n();
    let q = family.q();
    let inv_n = 1.0 / n as f64;
    let u = &family.fit.svd.u;
    let grid = family.grid();

    let per_lambda: Vec<Result<(DMatrix<f64>, Vec<f64>)>> = grid
        .values()
        .par_iter()
        .enumerate()
        .map(|(l, &lambda)| {
            let resid = family.fit.residuals(l);
            let d = family.fit.d.column(l);
            let sqrt_d = d.map(|v| v.sqrt());
            let mut cv = DMatrix::zeros(n, q);
            let mut press = vec![0.0; q];
            for (k, rows) in segments.iter().enumerate() {
                let nk = rows.len();
                // W holds the segment's rows of U with columns scaled by
                // sqrt(d); the hat block is then W W'.
                let mut w = DMatrix::zeros(nk, u.ncols());
                for (a, &row) in rows.iter().enumerate() {
                    for j in 0..u.ncols() {
                        w[(a, j)] = u[(row, j)] * sqrt_d[j];
                    }
                }
                let mut m = &w * w.transpose();
                for e in m.iter_mut() {
                    *e = -*e - inv_n;
                }
                for a in 0..nk {
                    m[(a, a)] += 1.0;
                }

                for resp in 0..q {
                    let rhs = DVector::from_fn(nk, |a, _| resid[(rows[a], resp)]);
                    let sol = crate::linalg::solve_small_symmetric(&m, &rhs).map_err(|e| {
                        Error::SegmentSolve {
                            segment: k + 1,
                            lambda,
                            source: Box::new(e),
                        }
                    })?;
                    for (a, &row) in rows.iter().enumerate() {
                        cv[(row, resp)] = sol[a];
                        press[resp] += sol[a] * sol[a];
                    }
                }
            }
            Ok((cv, press))
        })
        .collect();

    assemble_curve(CvStrategy::SegcvImplicit, grid, q, per_lambda, None)
}

/// Which standard deviations the explicit refit uses for the standardize
/// operator. Irrelevant for the data-independent kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SdScaling {
    /// Re-estimate from the held-in rows of each fold (the honest default).
    #[default]
    PerFold,
    /// Reuse the full-data standard deviations, keeping the penalty matrix
    /// fixed across folds; this is the convention under which the implicit
    /// path is an exact identity.
    FullData,
}

/// Options for [`segcv_press_explicit_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ExplicitOptions {
    pub sd_scaling: SdScaling,
}

/// Leave-segment-out PRESS by literally refitting without each segment and
/// predicting its rows. Every fold re-centres (and, by default,
/// re-standardises) using held-in rows only.
pub fn segcv_press_explicit(
    data: &Dataset,
    reg: &RegularizationSpec,
    grid: &LambdaGrid,
) -> Result<CvCurve> {
    segcv_press_explicit_with(data, reg, grid, ExplicitOptions::default())
}

/// [`segcv_press_explicit`] with control over the scaling convention.
pub fn segcv_press_explicit_with(
    data: &Dataset,
    reg: &RegularizationSpec,
    grid: &LambdaGrid,
    options: ExplicitOptions,
) -> Result<CvCurve> {
    let segments = data.segment_rows()?;
    check_cv_segments(&segments, data.n())?;
    let n = data.n();
    for (k, rows) in segments.iter().enumerate() {
        if n - rows.len() < 2 {
            return Err(Error::InvalidSegments {
                what: format!(
                    "holding out segment {} leaves {} rows; at least 2 are required",
                    k + 1,
                    n - rows.len()
                ),
            });
        }
    }

    let full_sds;
    let sds_override = if reg.kind == RegKind::Standardize
        && options.sd_scaling == SdScaling::FullData
    {
        let (x_centred, _) = center_columns(data.x())?;
        full_sds = sample_column_sds(&x_centred)?;
        Some(&full_sds)
    } else {
        None
    };

    let q = data.q();
    let per_fold: Vec<Result<(usize, Vec<DMatrix<f64>>)>> = segments
        .par_iter()
        .enumerate()
        .map(|(k, out_rows)| {
            let in_rows: Vec<usize> =
                (0..n).filter(|i| !out_rows.contains(i)).collect();
            let preds = refit_and_predict(data, &in_rows, out_rows, reg, sds_override, grid)
                .map_err(|e| match e {
                    e @ Error::SegmentSolve { .. } => e,
                    other => Error::SegmentSolve {
                        segment: k + 1,
                        lambda: f64::NAN,
                        source: Box::new(other),
                    },
                })?;
            Ok((k, preds))
        })
        .collect();

    let n_lambda = grid.len();
    let mut cv_residuals = vec![DMatrix::<f64>::zeros(n, q); n_lambda];
    let mut press = DMatrix::<f64>::zeros(n_lambda, q);
    for fold in per_fold {
        let (k, preds) = fold?;
        let rows = &segments[k];
        for (l, pred) in preds.into_iter().enumerate() {
            for (a, &row) in rows.iter().enumerate() {
                for resp in 0..q {
                    let r = data.y()[(row, resp)] - pred[(a, resp)];
                    cv_residuals[l][(row, resp)] = r;
                    press[(l, resp)] += r * r;
                }
            }
        }
    }

    Ok(CvCurve {
        strategy: CvStrategy::SegcvExplicit,
        grid: grid.clone(),
        press,
        gcv: None,
        cv_residuals,
    })
}

/// Refits on `in_rows` only and returns predictions for `out_rows`, one
/// `n_out x q` matrix per lambda. The intercept (and optionally the scaling)
/// comes from the held-in rows alone.
fn refit_and_predict(
    data: &Dataset,
    in_rows: &[usize],
    out_rows: &[usize],
    reg: &RegularizationSpec,
    sds_override: Option<&DVector<f64>>,
    grid: &LambdaGrid,
) -> Result<Vec<DMatrix<f64>>> {
    let p = data.p();
    let x_in = sub_rows(data.x(), in_rows);
    let y_in = sub_rows(data.y(), in_rows);
    let (x_centred, x_means) = center_columns(&x_in)?;
    let (y_centred, y_means) = center_columns(&y_in)?;

    let fold_sds;
    let sds = if reg.kind == RegKind::Standardize {
        match sds_override {
            Some(s) => Some(s),
            None => {
                fold_sds = sample_column_sds(&x_centred)?;
                Some(&fold_sds)
            }
        }
    } else {
        None
    };
    let op = build_operator(reg, p, sds)?;
    let x_work = op.to_standard_form(&x_centred)?;
    let full_rank_dim = (in_rows.len() - 1).min(p);
    let fit = StandardFormFit::compute(&x_work, y_centred, grid, DEFAULT_RANK_TOL, full_rank_dim)?;

    let mut x_out = sub_rows(data.x(), out_rows);
    for (j, mut col) in x_out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-x_means[j]);
    }

    let mut out = Vec::with_capacity(grid.len());
    for l in 0..grid.len() {
        let beta = &fit.svd.v * &fit.c[l];
        let b = op.back_transform(&beta)?;
        let mut pred = &x_out * &b;
        for (resp, &m) in y_means.iter().enumerate() {
            pred.column_mut(resp).add_scalar_mut(m);
        }
        out.push(pred);
    }
    Ok(out)
}

/// The orthogonal block transform behind [`vircv_press`]: one square factor
/// per segment (the segment's left singular vectors, completed to a full
/// basis) plus the per-row centring weights `m` it induces.
#[derive(Debug, Clone)]
pub struct VircvTransform {
    blocks: Vec<(Vec<usize>, DMatrix<f64>)>,
    m: DVector<f64>,
}

impl VircvTransform {
    /// Centring weights: `m_i = ((T' 1)_i)^2`. They sum to `n` and replace
    /// the uniform `1/n` leverage correction after the transform.
    pub fn m(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Applies `T'` to a matrix with one row per observation.
    pub fn apply(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(a.nrows(), a.ncols());
        for (rows, u) in &self.blocks {
            let sub = sub_rows(a, rows);
            let transformed = u.transpose() * sub;
            for (a_ix, &row) in rows.iter().enumerate() {
                out.row_mut(row).copy_from(&transformed.row(a_ix));
            }
        }
        out
    }
}

/// Builds the virtual-CV transform from the (uncentred) segment rows using
/// the default completion seed.
pub fn build_vircv_transform(data: &Dataset) -> Result<VircvTransform> {
    build_vircv_transform_seeded(data, DEFAULT_COMPLETION_SEED)
}

/// [`build_vircv_transform`] with an explicit seed for the orthonormal
/// completion of rank-deficient segments.
pub fn build_vircv_transform_seeded(data: &Dataset, seed: u64) -> Result<VircvTransform> {
    let segments = data.segment_rows()?;
    let mut blocks = Vec::with_capacity(segments.len());
    let mut m = DVector::zeros(data.n());
    for (k, rows) in segments.iter().enumerate() {
        let xk = sub_rows(data.x(), rows);
        let svd = compact_svd(&xk, DEFAULT_RANK_TOL)?;
        // Stride the seed per segment so completions draw distinct streams.
        let u = orthonormal_completion_seeded(
            &svd.u,
            seed.wrapping_add((k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        )?;
        for (a, &row) in rows.iter().enumerate() {
            let col_sum: f64 = u.column(a).iter().sum();
            m[row] = col_sum * col_sum;
        }
        blocks.push((rows.clone(), u));
    }
    Ok(VircvTransform { blocks, m })
}

/// Virtual cross-validation: centre the data, rotate each segment onto its
/// own singular basis, and run the leave-one-out update on the transformed
/// rows with the induced centring weights `m_i/n` in place of `1/n`.
///
/// For segments of identical rows this reproduces leave-segment-out exactly;
/// in general it is a cheap approximation with leave-one-out cost. The
/// standardize kind scales by the standard deviations of the *original*
/// centred predictors, so the penalty matches the other strategies.
pub fn vircv_press(
    data: &Dataset,
    reg: &RegularizationSpec,
    grid: &LambdaGrid,
) -> Result<CvCurve> {
    vircv_press_seeded(data, reg, grid, DEFAULT_COMPLETION_SEED)
}

/// [`vircv_press`] with an explicit completion seed.
pub fn vircv_press_seeded(
    data: &Dataset,
    reg: &RegularizationSpec,
    grid: &LambdaGrid,
    seed: u64,
) -> Result<CvCurve> {
    let transform = build_vircv_transform_seeded(data, seed)?;
    let (x_centred, _) = center_columns(data.x())?;
    let (y_centred, _) = center_columns(data.y())?;

    let sds;
    let column_sds = if reg.kind == RegKind::Standardize {
        sds = sample_column_sds(&x_centred)?;
        Some(&sds)
    } else {
        None
    };
    let op = build_operator(reg, data.p(), column_sds)?;

    let x_t = transform.apply(&x_centred);
    let y_t = transform.apply(&y_centred);
    let x_work = op.to_standard_form(&x_t)?;
    let full_rank_dim = (data.n() - 1).min(data.p());
    let fit = StandardFormFit::compute(&x_work, y_t, grid, DEFAULT_RANK_TOL, full_rank_dim)?;

    let n = data.n();
    let corrections = transform.m() / n as f64;
    let (cv_residuals, press) = corrected_quotients(&fit, grid, &corrections)?;
    let gcv = gcv_values(&fit, grid, n)?;
    Ok(CvCurve {
        strategy: CvStrategy::Vircv,
        grid: grid.clone(),
        press,
        gcv: Some(gcv),
        cv_residuals,
    })
}

/// Shared residual-scaling core for the leverage-based strategies:
/// `cv_i = resid_i / (1 - h_i - correction_i)`, with the denominator guard.
fn corrected_quotients(
    fit: &StandardFormFit,
    grid: &LambdaGrid,
    corrections: &DVector<f64>,
) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>)> {
    let n = corrections.len();
    let q = fit.y_work.ncols();
    let per_lambda: Vec<Result<(DMatrix<f64>, Vec<f64>)>> = grid
        .values()
        .par_iter()
        .enumerate()
        .map(|(l, &lambda)| {
            let mut cv = fit.residuals(l);
            let mut press = vec![0.0; q];
            for i in 0..n {
                let denom = 1.0 - fit.leverages[(i, l)] - corrections[i];
                if denom <= MIN_CV_DENOMINATOR {
                    return Err(Error::LeverageOverflow {
                        sample: i,
                        lambda,
                        denominator: denom,
                    });
                }
                for resp in 0..q {
                    let v = cv[(i, resp)] / denom;
                    cv[(i, resp)] = v;
                    press[resp] += v * v;
                }
            }
            Ok((cv, press))
        })
        .collect();

    let mut cv_residuals = Vec::with_capacity(grid.len());
    let mut press = DMatrix::zeros(grid.len(), q);
    for (l, item) in per_lambda.into_iter().enumerate() {
        let (cv, p) = item?;
        for (resp, &v) in p.iter().enumerate() {
            press[(l, resp)] = v;
        }
        cv_residuals.push(cv);
    }
    Ok((cv_residuals, press))
}

fn gcv_values(fit: &StandardFormFit, grid: &LambdaGrid, n: usize) -> Result<DMatrix<f64>> {
    let q = fit.rss.ncols();
    let mut gcv = DMatrix::zeros(grid.len(), q);
    for l in 0..grid.len() {
        let factor = 1.0 - fit.df[l] / n as f64;
        if factor <= 0.0 {
            return Err(Error::Degenerate {
                what: format!(
                    "effective degrees of freedom reach n at lambda = {:.6e}; GCV is undefined",
                    grid.values()[l]
                ),
            });
        }
        for resp in 0..q {
            gcv[(l, resp)] = fit.rss[(l, resp)] / (factor * factor);
        }
    }
    Ok(gcv)
}

fn assemble_curve(
    strategy: CvStrategy,
    grid: &LambdaGrid,
    q: usize,
    per_lambda: Vec<Result<(DMatrix<f64>, Vec<f64>)>>,
    gcv: Option<DMatrix<f64>>,
) -> Result<CvCurve> {
    let mut cv_residuals = Vec::with_capacity(grid.len());
    let mut press = DMatrix::zeros(grid.len(), q);
    for (l, item) in per_lambda.into_iter().enumerate() {
        let (cv, p) = item?;
        for (resp, &v) in p.iter().enumerate() {
            press[(l, resp)] = v;
        }
        cv_residuals.push(cv);
    }
    Ok(CvCurve {
        strategy,
        grid: grid.clone(),
        press,
        gcv,
        cv_residuals,
    })
}

fn check_cv_segments(segments: &[Vec<usize>], n: usize) -> Result<()> {
    if segments.len() < 2 {
        return Err(Error::InvalidSegments {
            what: "segmented cross-validation needs at least 2 segments".into(),
        });
    }
    for (k, rows) in segments.iter().enumerate() {
        if rows.len() >= n {
            return Err(Error::InvalidSegments {
                what: format!("segment {} covers every row", k + 1),
            });
        }
    }
    Ok(())
}

fn sub_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}
