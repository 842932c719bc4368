//! Regularisation operators for the penalty term `lambda * ||L b||^2` and the
//! change of variables that reduces any invertible `L` to the identity case.
//!
//! Four operator kinds are supported:
//!
//! * `Identity` — plain ridge, `L = I`.
//! * `Standardize` — `L = diag(sd_j)`, penalising standardised coefficients.
//! * `Derivative1` / `Derivative2` — first/second-difference stencils that
//!   penalise roughness of the coefficient vector, completed to full rank by
//!   orthonormalised polynomial rows scaled with `sqrt(epsilon)` so the
//!   near-null-space (constant, respectively constant+linear, coefficient
//!   profiles) stays almost free.
//!
//! With `X~ = X L^-1` the penalised problem becomes standard ridge in the
//! transformed coordinates `beta = L b`; [`RegularizationOperator::back_transform`]
//! maps solutions back.

use nalgebra::{DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::ensure_finite;

/// Default weight for the rank-completion rows of the derivative operators.
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Default relative floor for standard deviations in the standardize kind:
/// the effective floor is `sigma_floor * max(sd)`.
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-12;

/// Relative residual bound for applying `L^-1`; solves worse than this make
/// the operator count as ill-conditioned.
pub const TRANSFORM_RESIDUAL_BOUND: f64 = 1e-8;

/// Which penalty matrix to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    Identity,
    Standardize,
    Derivative1,
    Derivative2,
}

/// Declarative description of a regularisation operator; turned into a
/// concrete matrix (plus cached solvers) by [`build_operator`].
#[derive(Debug, Clone, Copy)]
pub struct RegularizationSpec {
    pub kind: RegKind,
    /// Completion-row weight for the derivative kinds (must be positive).
    pub epsilon: f64,
    /// Relative standard-deviation floor for the standardize kind.
    pub sigma_floor: f64,
}

impl RegularizationSpec {
    pub fn identity() -> Self {
        Self::with_kind(RegKind::Identity)
    }

    pub fn standardize() -> Self {
        Self::with_kind(RegKind::Standardize)
    }

    pub fn derivative1() -> Self {
        Self::with_kind(RegKind::Derivative1)
    }

    pub fn derivative2() -> Self {
        Self::with_kind(RegKind::Derivative2)
    }

    pub fn with_kind(kind: RegKind) -> Self {
        RegularizationSpec {
            kind,
            epsilon: DEFAULT_EPSILON,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
        }
    }

    pub fn epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn sigma_floor(mut self, sigma_floor: f64) -> Self {
        self.sigma_floor = sigma_floor;
        self
    }
}

#[derive(Clone)]
enum Solver {
    /// `L = I`: both directions are the identity.
    Identity,
    /// `L = diag(d)`: solves are element-wise divisions.
    Diagonal(DVector<f64>),
    /// General invertible `L`: cached LU factorisations of `L` and `L'`.
    Factored {
        lu_l: nalgebra::LU<f64, Dyn, Dyn>,
        lu_lt: nalgebra::LU<f64, Dyn, Dyn>,
    },
}

/// A concrete `p x p` penalty matrix with cached solve capability for
/// applying `L^-1` from either side.
#[derive(Clone)]
pub struct RegularizationOperator {
    kind: RegKind,
    l: DMatrix<f64>,
    solver: Solver,
}

/// Builds the operator for `p` coefficients. `column_sds` is required by the
/// standardize kind (standard deviations of the centred predictor columns)
/// and ignored otherwise.
pub fn build_operator(
    spec: &RegularizationSpec,
    p: usize,
    column_sds: Option<&DVector<f64>>,
) -> Result<RegularizationOperator> {
    if p == 0 {
        return Err(Error::Empty {
            what: "regularisation operator",
        });
    }
    match spec.kind {
        RegKind::Identity => Ok(RegularizationOperator {
            kind: spec.kind,
            l: DMatrix::identity(p, p),
            solver: Solver::Identity,
        }),
        RegKind::Standardize => {
            let sds = column_sds.ok_or_else(|| Error::InvalidArgument {
                what: "standardize regularisation needs column standard deviations".into(),
            })?;
            if sds.len() != p {
                return Err(Error::DimensionMismatch {
                    what: "column standard deviations",
                    expected: p.to_string(),
                    found: sds.len().to_string(),
                });
            }
            if !(spec.sigma_floor > 0.0 && spec.sigma_floor.is_finite()) {
                return Err(Error::InvalidArgument {
                    what: format!("sigma_floor must be positive, got {}", spec.sigma_floor),
                });
            }
            let sd_max = sds.iter().fold(0.0_f64, |acc, v| acc.max(*v));
            let floor = spec.sigma_floor * sd_max;
            let diag = DVector::from_iterator(p, sds.iter().map(|&sd| sd.max(floor)));
            if diag.iter().any(|&d| d <= 0.0 || !d.is_finite()) {
                return Err(Error::InvalidArgument {
                    what: "standard deviations are zero or non-finite even after flooring \
                           (are all predictor columns constant?)"
                        .into(),
                });
            }
            Ok(RegularizationOperator {
                kind: spec.kind,
                l: DMatrix::from_diagonal(&diag),
                solver: Solver::Diagonal(diag),
            })
        }
        RegKind::Derivative1 | RegKind::Derivative2 => {
            if p < 3 {
                return Err(Error::InvalidArgument {
                    what: format!("derivative regularisation needs p >= 3, got {p}"),
                });
            }
            if !(spec.epsilon > 0.0 && spec.epsilon.is_finite()) {
                return Err(Error::InvalidArgument {
                    what: format!("epsilon must be positive, got {}", spec.epsilon),
                });
            }
            let order = if spec.kind == RegKind::Derivative1 { 1 } else { 2 };
            let mut l = DMatrix::<f64>::zeros(p, p);
            let stencil: &[f64] = if order == 1 { &[1.0, -1.0] } else { &[1.0, -2.0, 1.0] };
            for i in 0..p - order {
                for (off, &coef) in stencil.iter().enumerate() {
                    l[(i, i + off)] = coef;
                }
            }
            // The stencil rows annihilate polynomial profiles up to degree
            // order-1; append those directions as orthonormal rows with a
            // small weight so L is invertible but barely penalises them.
            let basis = legendre_rows(p, order - 1);
            let w = spec.epsilon.sqrt();
            for k in 0..order {
                for j in 0..p {
                    l[(p - order + k, j)] = w * basis[(k, j)];
                }
            }
            let lu_l = l.clone().lu();
            let lu_lt = l.transpose().lu();
            Ok(RegularizationOperator {
                kind: spec.kind,
                l,
                solver: Solver::Factored { lu_l, lu_lt },
            })
        }
    }
}

/// Orthonormal polynomial rows: evaluates the monomials `1, x, ..., x^degree`
/// on the uniform grid of `p` points over `[-1, 1]` and orthonormalises the
/// columns by QR. Row `k` of the result is the degree-`k` basis function,
/// sign-fixed so its value at the right grid end is positive.
pub fn legendre_rows(p: usize, degree: usize) -> DMatrix<f64> {
    assert!(p > degree, "need at least degree+1 grid points");
    let mut monomials = DMatrix::<f64>::zeros(p, degree + 1);
    for i in 0..p {
        let x = if p == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (p - 1) as f64 };
        let mut pow = 1.0;
        for k in 0..=degree {
            monomials[(i, k)] = pow;
            pow *= x;
        }
    }
    let qr = monomials.qr();
    let mut q = qr.q();
    for k in 0..=degree {
        if q[(p - 1, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q.transpose()
}

impl RegularizationOperator {
    pub fn kind(&self) -> RegKind {
        self.kind
    }

    /// Number of coefficients the operator acts on.
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// The penalty matrix `L` itself.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `L * b`, the penalised quantity; handy for computing `||L b||`.
    pub fn apply(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        &self.l * b
    }

    /// Transforms predictors to standard form: `X~ = X L^-1`, so ridge with
    /// the identity penalty on `X~` is equivalent to the `L`-penalised
    /// problem on `X`.
    pub fn to_standard_form(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p = self.dim();
        if x.ncols() != p {
            return Err(Error::DimensionMismatch {
                what: "standard-form transform",
                expected: format!("{p} predictor columns"),
                found: x.ncols().to_string(),
            });
        }
        ensure_finite(x, "predictors for standard-form transform")?;
        match &self.solver {
            Solver::Identity => Ok(x.clone()),
            Solver::Diagonal(d) => {
                let mut out = x.clone();
                for (j, mut col) in out.column_iter_mut().enumerate() {
                    col /= d[j];
                }
                Ok(out)
            }
            Solver::Factored { lu_lt, .. } => {
                // X~ L = X  <=>  L' X~' = X'
                let xt = lu_lt
                    .solve(&x.transpose())
                    .ok_or_else(|| Error::SingularSystem {
                        what: "regularisation operator".into(),
                        condition: f64::INFINITY,
                    })?;
                let out = xt.transpose();
                let denom = x.norm().max(f64::MIN_POSITIVE);
                let rel = (&out * &self.l - x).norm() / denom;
                if rel > TRANSFORM_RESIDUAL_BOUND {
                    return Err(Error::IllConditioned {
                        what: "standard-form transform".into(),
                        residual: rel,
                        bound: TRANSFORM_RESIDUAL_BOUND,
                    });
                }
                Ok(out)
            }
        }
    }

    /// Maps standard-form coefficients back: `b = L^-1 beta`. Accepts a
    /// matrix so multiple responses (or lambda values) transform in one call.
    pub fn back_transform(&self, beta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p = self.dim();
        if beta.nrows() != p {
            return Err(Error::DimensionMismatch {
                what: "coefficient back-transform",
                expected: format!("{p} rows"),
                found: beta.nrows().to_string(),
            });
        }
        ensure_finite(beta, "coefficients to back-transform")?;
        match &self.solver {
            Solver::Identity => Ok(beta.clone()),
            Solver::Diagonal(d) => {
                let mut out = beta.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= d[i];
                }
                Ok(out)
            }
            Solver::Factored { lu_l, .. } => {
                let out = lu_l.solve(beta).ok_or_else(|| Error::SingularSystem {
                    what: "regularisation operator".into(),
                    condition: f64::INFINITY,
                })?;
                let denom = beta.norm().max(f64::MIN_POSITIVE);
                let rel = (&self.l * &out - beta).norm() / denom;
                if rel > TRANSFORM_RESIDUAL_BOUND {
                    return Err(Error::IllConditioned {
                        what: "coefficient back-transform".into(),
                        residual: rel,
                        bound: TRANSFORM_RESIDUAL_BOUND,
                    });
                }
                Ok(out)
            }
        }
    }
}

/// Sample standard deviations (n-1 denominator) of the columns of an already
/// centred matrix; the inputs the standardize kind expects.
pub fn sample_column_sds(centred: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = centred.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument {
            what: format!("standard deviations need at least 2 rows, got {n}"),
        });
    }
    Ok(DVector::from_iterator(
        centred.ncols(),
        centred
            .column_iter()
            .map(|c| (c.norm_squared() / (n - 1) as f64).sqrt()),
    ))
}
