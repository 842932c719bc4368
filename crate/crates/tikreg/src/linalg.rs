//! Dense linear-algebra kernels the rest of the crate is built on: column
//! centring, compact (rank-truncated) SVD, weighted squared-row sums, small
//! symmetric solves, and orthonormal completion of a partial basis.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Relative cutoff below which singular values are treated as zero:
/// component `j` is dropped when `s_j <= rank_tol * s_max`.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Default seed for the Gaussian draws in [`orthonormal_completion`]. Fixed
/// so a completed basis — and everything computed from it — is reproducible
/// run to run.
pub const DEFAULT_COMPLETION_SEED: u64 = 0x5eed_cab1e;

/// Condition-estimate ceiling for [`solve_small_symmetric`]; beyond it the
/// system is reported as singular instead of solved.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative residual (`|u s v' - m| / |m|`) above which an SVD attempt is
/// considered inconsistent and recomputed by the fallback.
pub const SVD_CONSISTENCY_BOUND: f64 = 1e-9;

/// Relative residual bound a small symmetric solve must satisfy.
pub const SOLVE_RESIDUAL_BOUND: f64 = 1e-9;

pub(crate) fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what: what.into() })
    }
}

/// Subtracts the column mean from every column. Returns the centred matrix
/// together with the row vector of means so fits can restore the intercept.
pub fn center_columns(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, RowDVector<f64>)> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::Empty {
            what: "matrix to centre",
        });
    }
    ensure_finite(m, "matrix to centre")?;
    let means = RowDVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.mean()));
    let mut centred = m.clone();
    for (j, mut col) in centred.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    Ok((centred, means))
}

/// Compact singular value decomposition `m = u * diag(s) * v'` keeping only
/// components with `s_j > rank_tol * s_max`.
///
/// `u` is `n x r` and `v` is `p x r`, both with orthonormal columns; `s` is
/// strictly positive and sorted in descending order. Columns are
/// sign-canonicalised (the entry of largest magnitude in each left vector is
/// made positive) so repeated runs and row-permuted inputs produce comparable
/// factors.
#[derive(Debug, Clone)]
pub struct CompactSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl CompactSvd {
    /// Number of retained components.
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Multiplies the factors back together; used by consistency checks.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.s) * self.v.transpose()
    }
}

/// Computes the [`CompactSvd`] of `m`. Pass [`DEFAULT_RANK_TOL`] unless a
/// different truncation threshold is required.
pub fn compact_svd(m: &DMatrix<f64>, rank_tol: f64) -> Result<CompactSvd> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::Empty {
            what: "matrix to decompose",
        });
    }
    ensure_finite(m, "matrix to decompose")?;
    if !rank_tol.is_finite() || rank_tol < 0.0 {
        return Err(Error::InvalidArgument {
            what: format!("rank tolerance must be finite and non-negative, got {rank_tol}"),
        });
    }

    let (rows, cols) = m.shape();
    let m_norm = m.norm();

    // The iterative bidiagonal solver is fast but can return *inconsistent*
    // factors (orthonormal u and v with wrong singular values) on exactly
    // degenerate inputs such as matrices with repeated rows. Verify the
    // reconstruction and fall back to one-sided Jacobi — slower but
    // unconditionally stable — whenever the attempt fails the check.
    let attempt = nalgebra::SVD::try_new(m.clone(), true, true, 5.0 * f64::EPSILON, 10_000)
        .and_then(|svd| {
            let u = svd.u?;
            let v = svd.v_t?.transpose();
            let sv = svd.singular_values;
            let residual = (&u * DMatrix::from_diagonal(&sv) * v.transpose() - m).norm();
            (residual <= SVD_CONSISTENCY_BOUND * m_norm).then_some((u, sv, v))
        });
    let (u_full, sv, v_full) = match attempt {
        Some(f) => f,
        None => {
            let f = jacobi_svd(m);
            let residual =
                (&f.0 * DMatrix::from_diagonal(&f.1) * f.2.transpose() - m).norm();
            if residual > SVD_CONSISTENCY_BOUND * m_norm {
                return Err(Error::SvdNoConvergence { rows, cols });
            }
            f
        }
    };

    // Singular values are sorted descending, so truncation is a prefix.
    let s_max = sv[0];
    let r = sv.iter().take_while(|&&s| s > rank_tol * s_max && s > 0.0).count();

    let mut u = u_full.columns(0, r).into_owned();
    let mut v = v_full.columns(0, r).into_owned();
    let s = DVector::from_iterator(r, sv.iter().take(r).copied());

    // Sign canonicalisation: flip each (u_j, v_j) pair so the largest-magnitude
    // entry of u_j is positive. The product u s v' is unchanged.
    for j in 0..r {
        let col = u.column(j);
        let mut pivot = 0;
        let mut best = 0.0_f64;
        for (i, &val) in col.iter().enumerate() {
            if val.abs() > best {
                best = val.abs();
                pivot = i;
            }
        }
        if u[(pivot, j)] < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }

    Ok(CompactSvd { u, s, v })
}

/// One-sided Jacobi SVD: returns `(u, s, v)` with `u` of size `n x k`,
/// `v` of size `p x k`, `k = min(n, p)`, and `s` sorted descending. Columns
/// of the working copy are rotated pairwise until mutually orthogonal, which
/// always converges; exactly-zero singular values come out as zero columns
/// in `u`. Quadratic in the smaller dimension per sweep, so this only runs
/// as the fallback path of [`compact_svd`].
fn jacobi_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (n, p) = m.shape();
    if n < p {
        // Tall orientation keeps the rotation loop over the smaller side.
        let (u, s, v) = jacobi_svd(&m.transpose());
        return (v, s, u);
    }

    let mut w = m.clone();
    let mut v = DMatrix::<f64>::identity(p, p);
    let tol = 1e-14;
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..p {
            for j in (i + 1)..p {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for row in 0..n {
                    let wi = w[(row, i)];
                    let wj = w[(row, j)];
                    alpha += wi * wi;
                    beta += wj * wj;
                    gamma += wi * wj;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for row in 0..n {
                    let wi = w[(row, i)];
                    let wj = w[(row, j)];
                    w[(row, i)] = c * wi - s * wj;
                    w[(row, j)] = s * wi + c * wj;
                }
                for row in 0..p {
                    let vi = v[(row, i)];
                    let vj = v[(row, j)];
                    v[(row, i)] = c * vi - s * vj;
                    v[(row, j)] = s * vi + c * vj;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values; normalise and sort descending.
    let mut order: Vec<usize> = (0..p).collect();
    let norms: Vec<f64> = (0..p).map(|j| w.column(j).norm()).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms"));

    let mut u = DMatrix::zeros(n, p);
    let mut v_sorted = DMatrix::zeros(p, p);
    let mut s = DVector::zeros(p);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = norms[src];
        if norms[src] > 0.0 {
            u.column_mut(dst).copy_from(&(w.column(src) / norms[src]));
        }
        v_sorted.column_mut(dst).copy_from(&v.column(src));
    }
    (u, s, v_sorted)
}

/// Row sums of the squared entries of `u` weighted by `w`:
/// `out_i = sum_j u_ij^2 * w_j`. With `u` the left singular factor and `w`
/// the shrinkage weights this is the vector of hat-matrix diagonals.
pub fn hadamard_square_rowsums(u: &DMatrix<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    if u.ncols() != w.len() {
        return Err(Error::DimensionMismatch {
            what: "weighted squared-row sums",
            expected: format!("{} weights (one per column)", u.ncols()),
            found: w.len().to_string(),
        });
    }
    let mut out = DVector::zeros(u.nrows());
    for (j, col) in u.column_iter().enumerate() {
        let wj = w[j];
        for (i, &val) in col.iter().enumerate() {
            out[i] += val * val * wj;
        }
    }
    Ok(out)
}

/// Solves the symmetric system `a * x = b` for small `a` (cross-validation
/// segment blocks). Tries Cholesky first, falls back to a symmetric
/// eigendecomposition when the matrix is not positive definite, and reports
/// a singular-system error when the condition estimate exceeds
/// [`MAX_CONDITION`] or the solution cannot meet [`SOLVE_RESIDUAL_BOUND`].
pub fn solve_small_symmetric(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            what: "symmetric solve",
            expected: "a square matrix".into(),
            found: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            what: "symmetric solve right-hand side",
            expected: format!("length {}", a.nrows()),
            found: b.len().to_string(),
        });
    }
    ensure_finite(a, "symmetric solve matrix")?;

    let scale = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let mut asym = 0.0_f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > 1e-8 * (1.0 + scale) {
        return Err(Error::Contract {
            what: format!("matrix is not symmetric (max asymmetry {asym:.3e})"),
        });
    }

    let b_norm = b.norm();
    if let Some(chol) = nalgebra::Cholesky::new(a.clone()) {
        let mut x = chol.solve(b);
        // One step of iterative refinement keeps mildly ill-conditioned
        // blocks inside the residual contract.
        let resid = b - a * &x;
        x += chol.solve(&resid);
        if (b - a * &x).norm() <= SOLVE_RESIDUAL_BOUND * b_norm.max(f64::MIN_POSITIVE) {
            return Ok(x);
        }
    }

    // Not positive definite (or Cholesky lost too much accuracy): fall back
    // to an eigendecomposition, which also yields the condition estimate.
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let e_max = eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let e_min = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    let condition = if e_min > 0.0 { e_max / e_min } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::SingularSystem {
            what: "small symmetric solve".into(),
            condition,
        });
    }

    let mut coeffs = eig.eigenvectors.transpose() * b;
    for (c, &e) in coeffs.iter_mut().zip(eig.eigenvalues.iter()) {
        *c /= e;
    }
    let x = &eig.eigenvectors * coeffs;
    let rel = (b - a * &x).norm() / b_norm.max(f64::MIN_POSITIVE);
    if rel > SOLVE_RESIDUAL_BOUND {
        return Err(Error::SingularSystem {
            what: format!("small symmetric solve (relative residual {rel:.3e})"),
            condition,
        });
    }
    Ok(x)
}

/// Extends a matrix with orthonormal columns to a full square orthogonal
/// matrix, keeping the given columns untouched in the leading positions.
/// The complement is built from seeded Gaussian draws followed by two passes
/// of modified Gram-Schmidt, so the result is deterministic.
pub fn orthonormal_completion(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    orthonormal_completion_seeded(u, DEFAULT_COMPLETION_SEED)
}

/// [`orthonormal_completion`] with an explicit seed for the Gaussian draws.
pub fn orthonormal_completion_seeded(u: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    let (n, k) = u.shape();
    if n == 0 {
        return Err(Error::Empty {
            what: "matrix to complete",
        });
    }
    if k > n {
        return Err(Error::DimensionMismatch {
            what: "orthonormal completion",
            expected: format!("at most {n} columns"),
            found: k.to_string(),
        });
    }
    ensure_finite(u, "matrix to complete")?;

    let gram = u.transpose() * u;
    let gram_err = (&gram - DMatrix::<f64>::identity(k, k))
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if gram_err > 1e-8 {
        return Err(Error::Contract {
            what: format!("completion input columns are not orthonormal (max deviation {gram_err:.3e})"),
        });
    }

    if k == n {
        return Ok(u.clone());
    }

    let mut q = DMatrix::<f64>::zeros(n, n);
    q.columns_mut(0, k).copy_from(u);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for j in k..n {
        let mut attempts = 0;
        loop {
            let mut g = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
            // Two Gram-Schmidt passes: the second mops up the rounding the
            // first leaves behind, keeping the basis orthonormal to ~1e-15.
            for _ in 0..2 {
                for c in 0..j {
                    let qc = q.column(c);
                    let proj = qc.dot(&g);
                    g.axpy(-proj, &qc.clone_owned(), 1.0);
                }
            }
            let norm = g.norm();
            if norm > 1e-8 {
                g /= norm;
                q.column_mut(j).copy_from(&g);
                break;
            }
            attempts += 1;
            if attempts > 64 {
                return Err(Error::Contract {
                    what: "could not draw an independent completion direction".into(),
                });
            }
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn center_subtracts_column_means() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (c, means) = center_columns(&m).unwrap();
        assert_eq!(means, RowDVector::from_row_slice(&[2.0, 3.0]));
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, 1.0]));
    }

    #[test]
    fn center_single_entry_and_constant_column() {
        let m = DMatrix::from_row_slice(1, 1, &[5.0]);
        let (c, means) = center_columns(&m).unwrap();
        assert_eq!(c[(0, 0)], 0.0);
        assert_eq!(means[0], 5.0);

        let m = DMatrix::from_element(4, 1, 3.25);
        let (c, _) = center_columns(&m).unwrap();
        assert!(c.iter().all(|&v| v == 0.0), "constant column must centre to zeros");
    }

    #[test]
    fn center_rejects_empty_input() {
        let m = DMatrix::<f64>::zeros(0, 3);
        assert!(matches!(center_columns(&m), Err(Error::Empty { .. })));
    }

    #[test]
    fn compact_svd_of_diagonal_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]);
        let svd = compact_svd(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(svd.rank(), 2);
        assert_relative_eq!(svd.s[0], 3.0, max_relative = 1e-14);
        assert_relative_eq!(svd.s[1], 2.0, max_relative = 1e-14);
        // Sign canonicalisation pins the factors to the identity exactly.
        assert_relative_eq!(svd.u, DMatrix::identity(2, 2), epsilon = 1e-14);
        assert_relative_eq!(svd.v, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn compact_svd_truncates_rank_deficient_matrix() {
        let m = DMatrix::from_element(2, 2, 1.0);
        let svd = compact_svd(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(svd.rank(), 1, "[[1,1],[1,1]] has rank one");
        assert_relative_eq!(svd.s[0], 2.0, max_relative = 1e-14);
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(svd.u[(0, 0)], inv_sqrt2, max_relative = 1e-12);
        assert_relative_eq!(svd.u[(1, 0)], inv_sqrt2, max_relative = 1e-12);
    }

    #[test]
    fn compact_svd_reconstructs_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_matrix(&mut rng, 6, 4);
        let svd = compact_svd(&m, DEFAULT_RANK_TOL).unwrap();
        let err = (&m - svd.reconstruct()).norm();
        assert!(
            err <= 1e-10 * svd.s[0],
            "reconstruction error {err:.3e} exceeds 1e-10 * s_max"
        );
    }

    #[test]
    fn compact_svd_factors_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, p) in &[(5usize, 3usize), (3, 5), (8, 8), (12, 2)] {
            let m = random_matrix(&mut rng, n, p);
            let svd = compact_svd(&m, DEFAULT_RANK_TOL).unwrap();
            let r = svd.rank();
            let ut_u = svd.u.transpose() * &svd.u;
            let vt_v = svd.v.transpose() * &svd.v;
            let du = (ut_u - DMatrix::<f64>::identity(r, r)).norm();
            let dv = (vt_v - DMatrix::<f64>::identity(r, r)).norm();
            assert!(du < 1e-10 && dv < 1e-10, "factors drifted from orthonormal");
            for j in 1..r {
                assert!(svd.s[j - 1] >= svd.s[j], "singular values must be descending");
                assert!(svd.s[j] > 0.0);
            }
        }
    }

    #[test]
    fn hadamard_square_rowsums_examples() {
        let u = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let h = hadamard_square_rowsums(&u, &DVector::from_row_slice(&[1.0, 1.0])).unwrap();
        assert_eq!(h, DVector::from_row_slice(&[5.0, 25.0]));

        let id = DMatrix::<f64>::identity(2, 2);
        let h = hadamard_square_rowsums(&id, &DVector::from_row_slice(&[0.25, 4.0])).unwrap();
        assert_eq!(h, DVector::from_row_slice(&[0.25, 4.0]));

        let h = hadamard_square_rowsums(&u, &DVector::zeros(2)).unwrap();
        assert_eq!(h, DVector::zeros(2));
    }

    #[test]
    fn hadamard_square_rowsums_checks_dimensions() {
        let u = DMatrix::<f64>::identity(2, 2);
        let err = hadamard_square_rowsums(&u, &DVector::zeros(3));
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn solve_small_symmetric_examples() {
        let a = DMatrix::<f64>::identity(3, 3);
        let b = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        assert_eq!(solve_small_symmetric(&a, &b).unwrap(), b);

        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let b = DVector::from_row_slice(&[2.0, 8.0]);
        let x = solve_small_symmetric(&a, &b).unwrap();
        assert_relative_eq!(x, DVector::from_row_slice(&[1.0, 2.0]), epsilon = 1e-12);
    }

    #[test]
    fn solve_small_symmetric_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let g = random_matrix(&mut rng, 5, 5);
            let a = &g * g.transpose() + DMatrix::<f64>::identity(5, 5);
            let b = DVector::from_fn(5, |_, _| rng.random::<f64>() - 0.5);
            let x = solve_small_symmetric(&a, &b).unwrap();
            let rel = (&b - &a * &x).norm() / b.norm();
            assert!(rel <= SOLVE_RESIDUAL_BOUND, "residual {rel:.3e} out of contract");
        }
    }

    #[test]
    fn solve_small_symmetric_rejects_singular_and_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_row_slice(&[1.0, 0.0]);
        assert!(matches!(
            solve_small_symmetric(&a, &b),
            Err(Error::SingularSystem { .. })
        ));

        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            solve_small_symmetric(&a, &b),
            Err(Error::Contract { .. })
        ));
    }

    #[test]
    fn solve_small_symmetric_handles_indefinite_blocks() {
        // Indefinite but well-conditioned: Cholesky fails, the eigen fallback
        // must still produce a solution within the residual contract.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let b = DVector::from_row_slice(&[3.0, -4.0]);
        let x = solve_small_symmetric(&a, &b).unwrap();
        assert_relative_eq!(x, DVector::from_row_slice(&[-4.0, 3.0]), epsilon = 1e-12);
    }

    #[test]
    fn orthonormal_completion_of_unit_vector() {
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let q = orthonormal_completion(&u).unwrap();
        assert_eq!(q.column(0), u.column(0));
        assert_relative_eq!(q[(0, 1)].abs(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(q[(1, 1)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn orthonormal_completion_returns_square_input_unchanged() {
        let u = DMatrix::<f64>::identity(3, 3);
        let q = orthonormal_completion(&u).unwrap();
        assert_eq!(q, u);
    }

    #[test]
    fn orthonormal_completion_produces_orthogonal_basis() {
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let u = DMatrix::from_column_slice(4, 2, &[
            inv_sqrt2, inv_sqrt2, 0.0, 0.0, //
            0.0, 0.0, inv_sqrt2, -inv_sqrt2,
        ]);
        let q = orthonormal_completion(&u).unwrap();
        let err = (q.transpose() * &q - DMatrix::<f64>::identity(4, 4)).norm();
        assert!(err < 1e-10, "completed basis not orthogonal: {err:.3e}");
        assert_eq!(q.columns(0, 2), u.columns(0, 2), "input columns must be preserved");
    }

    #[test]
    fn orthonormal_completion_is_deterministic() {
        let u = DMatrix::from_column_slice(5, 1, &[1.0, 0.0, 0.0, 0.0, 0.0]);
        let a = orthonormal_completion_seeded(&u, 99).unwrap();
        let b = orthonormal_completion_seeded(&u, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn orthonormal_completion_rejects_non_orthonormal_input() {
        let u = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]);
        assert!(matches!(
            orthonormal_completion(&u),
            Err(Error::Contract { .. })
        ));
    }

    /// Three distinct rows, each repeated three times and centred: exactly
    /// rank 2 with repeated rows, a pattern the iterative bidiagonal solver
    /// is known to mangle (it can return orthonormal factors whose product
    /// is not the input). The consistency check must route such inputs to
    /// the fallback and still produce a genuine decomposition.
    #[test]
    fn compact_svd_survives_exactly_repeated_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(112);
        let p = 5;
        let mut m = DMatrix::zeros(9, p);
        for block in 0..3 {
            let row: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            for rep in 0..3 {
                for j in 0..p {
                    m[(block * 3 + rep, j)] = row[j];
                }
            }
        }
        let (centred, _) = center_columns(&m).unwrap();
        let svd = compact_svd(&centred, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(svd.rank(), 2);
        let resid = (svd.reconstruct() - &centred).norm() / centred.norm();
        assert!(resid < 1e-12, "inconsistent factors: residual {resid:.3e}");
        let gram = svd.u.transpose() * &svd.u;
        assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn jacobi_fallback_produces_a_genuine_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for (n, p) in [(7, 4), (4, 7), (6, 6)] {
            let m = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
            let (u, s, v) = jacobi_svd(&m);
            let resid = (&u * DMatrix::from_diagonal(&s) * v.transpose() - &m).norm();
            assert!(resid < 1e-12 * m.norm(), "({n},{p}): residual {resid:.3e}");
            let k = n.min(p);
            assert!((u.transpose() * &u - DMatrix::identity(k, k)).norm() < 1e-12);
            assert!((v.transpose() * &v - DMatrix::identity(k, k)).norm() < 1e-12);
            for j in 1..k {
                assert!(s[j] <= s[j - 1], "singular values must be sorted");
            }
            // Cross-check the values against the library's primary path.
            let reference = compact_svd(&m, DEFAULT_RANK_TOL).unwrap();
            for j in 0..reference.rank() {
                assert_relative_eq!(s[j], reference.s[j], max_relative = 1e-10);
            }
        }
    }
}
