//! Symmetric and positive-definite linear algebra primitives.
//!
//! Every spectral quantity in the crate goes through [`sym_eig`]: eigenvalues of
//! nonsymmetric products such as `G S^-1`, `S T^-1` or `S Q` are always obtained
//! from a symmetric matrix similar to the product, never from a general
//! nonsymmetric eigensolver.
//!
//! ```text
//! A = V diag(λ) Vᵗ,   λ₁ ≥ λ₂ ≥ … ≥ λₙ
//! A^p = V diag(λ^p) Vᵗ            p ∈ {1/2, -1/2, -1}
//! P⁽ʳ⁾_A = V I_r Vᵗ               (orthogonal, top-r eigenvectors)
//! P⁽ʳ⁾_M = F^-1/2 P⁽ʳ⁾_{F^1/2 M F^-1/2} F^1/2   (oblique, M similar to a symmetric matrix)
//! ```
//!
//! Eigenvectors are sign-normalized so that the first component whose magnitude
//! exceeds `1e-12` is positive, which makes every output reproducible bit for bit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Default relative tolerance of the symmetry check in [`sym_eig`].
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Default relative positive-definiteness floor: eigenvalues must exceed `EPS_PSD * λ_max`.
pub const EPS_PSD: f64 = 1e-10;
/// Default relative eigenvalue gap required for a rank-r projector.
pub const EPS_GAP: f64 = 1e-12;
/// Condition number above which [`spd_inverse`] logs a warning.
pub const CONDITION_WARNING: f64 = 1e10;

const EIG_EPS: f64 = 1e-15;
const EIG_MAX_ITER: usize = 10_000;
const SIGN_EPS: f64 = 1e-12;

/// Eigendecomposition of a symmetric matrix, values sorted non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector paired with `values[i]`.
    pub vectors: Mat,
}

impl EigenPair {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max(&self) -> f64 {
        self.values[0]
    }

    pub fn min(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `V diag(f(λ)) Vᵗ`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.dim();
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            let w = f(v);
            scaled.column_mut(j).scale_mut(w);
        }
        let mut out = &scaled * self.vectors.transpose();
        symmetrize_in_place(&mut out);
        debug_assert_eq!(out.nrows(), n);
        out
    }

    /// Orthogonal projector onto the span of the first `r` eigenvectors.
    fn leading_projector(&self, r: usize) -> Mat {
        let vr = self.vectors.columns(0, r);
        let mut p = &vr * vr.transpose();
        symmetrize_in_place(&mut p);
        p
    }
}

/// Largest absolute entry.
pub fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}

/// Largest `|a_ij - a_ji|`.
pub fn asymmetry(a: &Mat) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize_in_place(a: &mut Mat) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(a: &Mat) -> Mat {
    let mut out = a.clone();
    symmetrize_in_place(&mut out);
    out
}

/// `‖a - b‖_F / max(‖b‖_F, tiny)`.
pub fn rel_frobenius(a: &Mat, b: &Mat) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}

fn check_square(a: &Mat) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: "square matrix".into(),
            found: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    if a.nrows() == 0 {
        return Err(Error::DimensionMismatch {
            expected: "n >= 1".into(),
            found: "0x0".into(),
        });
    }
    Ok(a.nrows())
}

/// Checks entrywise symmetry against `tol * max|a_ij|`.
pub fn check_symmetric(a: &Mat, tol: f64) -> Result<()> {
    check_square(a)?;
    let tolerance = tol * max_abs(a);
    let asym = asymmetry(a);
    if asym > tolerance {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance,
        });
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix.
///
/// The input is checked for symmetry (relative tolerance [`SYMMETRY_TOL`]) and
/// then symmetrized before decomposition. Values come back sorted
/// non-increasing; each eigenvector has its first non-negligible component
/// positive.
pub fn sym_eig(a: &Mat) -> Result<EigenPair> {
    check_symmetric(a, SYMMETRY_TOL)?;
    let n = a.nrows();
    if n == 1 {
        return Ok(EigenPair {
            values: vec![a[(0, 0)]],
            vectors: Mat::identity(1, 1),
        });
    }
    let sym = symmetrized(a);
    let eig = nalgebra::SymmetricEigen::try_new(sym, EIG_EPS, EIG_MAX_ITER)
        .ok_or(Error::ConvergenceFailure)?;

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort: equal eigenvalues keep the solver's order.
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::ConvergenceFailure);
    }
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: DVector<f64> = eig.eigenvectors.column(src).into_owned();
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        if let Some(first) = col.iter().find(|x| x.abs() > SIGN_EPS) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(dst, &col);
    }
    Ok(EigenPair { values, vectors })
}

/// Matrix powers supported by [`psd_power`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Power {
    Sqrt,
    InvSqrt,
    Inverse,
}

impl Power {
    pub fn exponent(self) -> f64 {
        match self {
            Power::Sqrt => 0.5,
            Power::InvSqrt => -0.5,
            Power::Inverse => -1.0,
        }
    }
}

/// `A^p` for symmetric PSD `A`, with the default floor [`EPS_PSD`].
pub fn psd_power(a: &Mat, p: Power) -> Result<Mat> {
    psd_power_with(a, p, EPS_PSD)
}

/// `A^p` with an explicit relative positive-definiteness floor.
///
/// Negative powers require every eigenvalue above `eps_psd * λ_max`. The
/// square root accepts eigenvalues down to `-eps_psd * λ_max` and clamps them
/// to zero.
pub fn psd_power_with(a: &Mat, p: Power, eps_psd: f64) -> Result<Mat> {
    let eig = sym_eig(a)?;
    power_from_eig(&eig, p, eps_psd)
}

pub(crate) fn power_from_eig(eig: &EigenPair, p: Power, eps_psd: f64) -> Result<Mat> {
    let lmax = eig.max();
    let lmin = eig.min();
    match p {
        Power::Sqrt => {
            let floor = -eps_psd * lmax.abs();
            if lmin < floor {
                return Err(Error::NotPositiveDefinite {
                    min_eigenvalue: lmin,
                });
            }
            Ok(eig.map_values(|v| v.max(0.0).sqrt()))
        }
        Power::InvSqrt | Power::Inverse => {
            if !(lmax > 0.0) || lmin <= eps_psd * lmax {
                return Err(Error::NotPositiveDefinite {
                    min_eigenvalue: lmin,
                });
            }
            let e = p.exponent();
            Ok(eig.map_values(|v| v.powf(e)))
        }
    }
}

/// PD-checked inverse of a symmetric matrix. Logs a warning when the
/// condition number exceeds [`CONDITION_WARNING`].
pub fn spd_inverse(a: &Mat) -> Result<Mat> {
    let eig = sym_eig(a)?;
    let inv = power_from_eig(&eig, Power::Inverse, EPS_PSD)?;
    let cond = eig.max() / eig.min();
    if cond > CONDITION_WARNING {
        log::warn!("inverting an ill-conditioned {}x{} matrix (condition number {cond:.3e})", a.nrows(), a.ncols());
    }
    Ok(inv)
}

fn check_rank(r: usize, n: usize) -> Result<()> {
    if r < 1 || r > n {
        return Err(Error::RankOutOfRange { rank: r, max: n });
    }
    Ok(())
}

fn check_gap(values: &[f64], r: usize, eps_gap: f64) -> Result<()> {
    if r < values.len() {
        let gap = values[r - 1] - values[r];
        let tolerance = eps_gap * values[0].abs();
        if !(gap > tolerance) {
            return Err(Error::DegenerateGap {
                rank: r,
                gap,
                tolerance,
            });
        }
    }
    Ok(())
}

/// Orthogonal projector onto the eigenvectors of the `r` largest eigenvalues.
///
/// Returns the exact identity when `r == n`.
pub fn top_r_orth_projector(a: &Mat, r: usize) -> Result<Mat> {
    top_r_orth_projector_with(a, r, EPS_GAP)
}

pub fn top_r_orth_projector_with(a: &Mat, r: usize, eps_gap: f64) -> Result<Mat> {
    let n = check_square(a)?;
    check_rank(r, n)?;
    if r == n {
        check_symmetric(a, SYMMETRY_TOL)?;
        return Ok(Mat::identity(n, n));
    }
    let eig = sym_eig(a)?;
    check_gap(&eig.values, r, eps_gap)?;
    Ok(eig.leading_projector(r))
}

/// Oblique projector together with the spectrum of the matrix it projects.
#[derive(Debug, Clone)]
pub struct ObliqueProjector {
    pub matrix: Mat,
    /// Eigenvalues of `M`, non-increasing (equal to those of the symmetric core).
    pub spectrum: Vec<f64>,
}

/// Oblique projector onto the principal `r`-dimensional eigenspace of `M`.
///
/// `M` must satisfy `M = F^-1/2 A F^1/2` for a symmetric `A`, where `F` is the
/// supplied SPD `factor`. The core `A = F^1/2 M F^-1/2` is formed, verified to
/// be symmetric, and its orthogonal projector is mapped back:
/// `P = F^-1/2 P_A F^1/2 = U I_r U^-1` with `U = F^-1/2 V`.
pub fn top_r_oblique_projector(m: &Mat, factor: &Mat, r: usize) -> Result<Mat> {
    oblique_projector(m, factor, r, EPS_GAP).map(|p| p.matrix)
}

pub fn oblique_projector(m: &Mat, factor: &Mat, r: usize, eps_gap: f64) -> Result<ObliqueProjector> {
    let n = check_square(m)?;
    if factor.shape() != m.shape() {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{n} factor"),
            found: format!("{}x{}", factor.nrows(), factor.ncols()),
        });
    }
    check_rank(r, n)?;
    let f_eig = sym_eig(factor).map_err(|e| Error::NotSimilarizable(e.to_string()))?;
    let f_half = power_from_eig(&f_eig, Power::Sqrt, EPS_PSD)
        .and_then(|h| power_from_eig(&f_eig, Power::InvSqrt, EPS_PSD).map(|ih| (h, ih)))
        .map_err(|e| Error::NotSimilarizable(format!("factor is not positive definite: {e}")))?;
    let (f_sqrt, f_inv_sqrt) = f_half;

    let core = &f_sqrt * m * &f_inv_sqrt;
    check_symmetric(&core, SYMMETRY_TOL).map_err(|e| Error::NotSimilarizable(e.to_string()))?;
    let eig = sym_eig(&core)?;
    check_gap(&eig.values, r, eps_gap)?;
    let matrix = if r == n {
        Mat::identity(n, n)
    } else {
        &f_inv_sqrt * eig.leading_projector(r) * &f_sqrt
    };
    Ok(ObliqueProjector {
        matrix,
        spectrum: eig.values,
    })
}

/// Sum of the `r` largest eigenvalues of a symmetric matrix.
pub fn top_r_eigen_sum(a: &Mat, r: usize) -> Result<f64> {
    let n = check_square(a)?;
    check_rank(r, n)?;
    let eig = sym_eig(a)?;
    Ok(eig.values[..r].iter().sum())
}

/// Singular-value ratio `σ_min / σ_max` of a tall matrix (0 for a zero matrix).
pub fn singular_ratio(a: &Mat) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if max > 0.0 {
        min / max
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        symmetrized(&(&a + a.transpose()))
    }

    fn random_spd(n: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        symmetrized(&(&b * b.transpose() + Mat::identity(n, n) * 0.5))
    }

    #[test]
    fn identity_eigenvalues() {
        let e = sym_eig(&Mat::identity(3, 3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_eigenpairs_are_permuted_identity() {
        let a = Mat::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let e = sym_eig(&a).unwrap();
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        let expected = Mat::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert!((e.vectors - expected).abs().max() < 1e-15);
    }

    #[test]
    fn random_symmetric_reconstructs() {
        let a = random_symmetric(6, 11);
        let e = sym_eig(&a).unwrap();
        let rebuilt = e.map_values(|v| v);
        // Direct multiplication V Λ Vᵗ, independent of map_values.
        let lam = Mat::from_diagonal(&DVector::from_vec(e.values.clone()));
        let direct = &e.vectors * lam * e.vectors.transpose();
        assert!(rel_frobenius(&direct, &a) < 1e-9);
        assert!(rel_frobenius(&rebuilt, &a) < 1e-9);
        let vtv = e.vectors.transpose() * &e.vectors;
        assert!((vtv - Mat::identity(6, 6)).abs().max() < 1e-10);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sign_convention_and_determinism() {
        let a = random_symmetric(8, 3);
        let e1 = sym_eig(&a).unwrap();
        let e2 = sym_eig(&a).unwrap();
        assert_eq!(e1, e2);
        for j in 0..8 {
            let first = e1.vectors.column(j).iter().copied().find(|x| x.abs() > SIGN_EPS).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(sym_eig(&a), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn psd_power_trivial_cases() {
        let i4 = Mat::identity(4, 4);
        assert!((psd_power(&i4, Power::InvSqrt).unwrap() - &i4).abs().max() < 1e-15);
        let d = Mat::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = psd_power(&d, Power::Sqrt).unwrap();
        assert!((s - Mat::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).abs().max() < 1e-14);
    }

    #[test]
    fn psd_square_root_squares_back() {
        let a = random_spd(5, 9);
        let s = psd_power(&a, Power::Sqrt).unwrap();
        assert!(rel_frobenius(&(&s * &s), &a) < 1e-9);
        let inv = psd_power(&a, Power::Inverse).unwrap();
        assert!((&a * inv - Mat::identity(5, 5)).abs().max() < 1e-8);
    }

    #[test]
    fn negative_power_of_singular_matrix_fails() {
        let a = Mat::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        match psd_power(&a, Power::InvSqrt) {
            Err(Error::NotPositiveDefinite { min_eigenvalue }) => assert_eq!(min_eigenvalue, 0.0),
            other => panic!("unexpected {other:?}"),
        }
        // the square root of a PSD matrix is fine
        assert!(psd_power(&a, Power::Sqrt).is_ok());
        let neg = Mat::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(psd_power(&neg, Power::Sqrt).is_err());
    }

    #[test]
    fn orth_projector_trivial_cases() {
        let d = Mat::from_diagonal(&DVector::from_vec(vec![5.0, 3.0, 1.0]));
        let p = top_r_orth_projector(&d, 2).unwrap();
        let expected = Mat::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
        assert!((p - expected).abs().max() < 1e-15);
        let a = random_spd(4, 2);
        assert_eq!(top_r_orth_projector(&a, 4).unwrap(), Mat::identity(4, 4));
    }

    #[test]
    fn orth_projector_axioms() {
        let a = random_spd(6, 21);
        let p = top_r_orth_projector(&a, 3).unwrap();
        assert!((p.trace() - 3.0).abs() < 1e-9);
        assert!((&p * &p - &p).abs().max() < 1e-9);
        assert!((&p * &a - &a * &p).abs().max() < 1e-8);
    }

    #[test]
    fn orth_projector_errors() {
        let a = Mat::identity(3, 3);
        assert!(matches!(top_r_orth_projector(&a, 0), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(top_r_orth_projector(&a, 4), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(top_r_orth_projector(&a, 1), Err(Error::DegenerateGap { .. })));
    }

    #[test]
    fn oblique_projector_reduces_to_orthogonal_for_symmetric_input() {
        let a = random_spd(5, 4);
        let p_obl = top_r_oblique_projector(&a, &Mat::identity(5, 5), 2).unwrap();
        let p_orth = top_r_orth_projector(&a, 2).unwrap();
        assert!((p_obl - p_orth).abs().max() < 1e-9);

        let d = Mat::from_diagonal(&DVector::from_vec(vec![0.9, 0.5, 0.1]));
        let p = top_r_oblique_projector(&d, &Mat::identity(3, 3), 1).unwrap();
        let expected = Mat::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert!((p - expected).abs().max() < 1e-15);
    }

    #[test]
    fn oblique_projector_from_known_factors() {
        let q = random_spd(4, 17);
        let d = Mat::from_diagonal(&DVector::from_vec(vec![0.8, 0.6, 0.3, 0.1]));
        let q_half = psd_power(&q, Power::Sqrt).unwrap();
        let q_ihalf = psd_power(&q, Power::InvSqrt).unwrap();
        let m = &q_ihalf * &d * &q_half;
        let p = top_r_oblique_projector(&m, &q, 2).unwrap();
        let pattern = Mat::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]));
        let expected = &q_ihalf * pattern * &q_half;
        assert!((&p - &expected).abs().max() < 1e-8);
        assert!((&p * &p - &p).abs().max() < 1e-8);
        assert!((&p * &m - &m * &p).abs().max() < 1e-8);
    }

    #[test]
    fn oblique_projector_rejects_bad_factor() {
        let m = Mat::identity(2, 2);
        let bad = Mat::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(
            top_r_oblique_projector(&m, &bad, 1),
            Err(Error::NotSimilarizable(_))
        ));
        // not similar to a symmetric matrix through the identity
        let nonsym = Mat::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        assert!(matches!(
            top_r_oblique_projector(&nonsym, &Mat::identity(2, 2), 1),
            Err(Error::NotSimilarizable(_))
        ));
    }
}
