//! Multi-source neural activity indices.
//!
//! For a candidate source set `θ` with gain matrix `H = H(θ)` (`m × l`):
//!
//! ```text
//! G = Hᵗ N⁻¹ H        S = Hᵗ R⁻¹ H        T = Hᵗ R⁻¹ N R⁻¹ H
//! Q = S⁻¹ - G⁻¹
//!
//! MAI      = tr(G S⁻¹) - l                MPZ      = tr(S T⁻¹) - l
//! MAI_ext  = Σ_{i≤r} λ_i(G S⁻¹) - r       MPZ_ext  = Σ_{i≤r} λ_i(S T⁻¹) - r
//! ```
//!
//! The reduced-rank indices equal the full-rank ones when `l ≤ r`; for `l > r`
//!
//! ```text
//! MAI_MVP(θ, r) = Σ_{i≤r} λ_i(G S⁻¹) - r
//! MPZ_MVP(θ, r) = tr(S T⁻¹ P⁽ʳ⁾_{SQ}) - r
//! ```
//!
//! where `P⁽ʳ⁾_{SQ} = Q^{-1/2} P⁽ʳ⁾_{S̃} Q^{1/2}` is the oblique projector onto
//! the principal subspace of `S Q`, and `X̃ = Q^{1/2} X Q^{1/2}`. These are the
//! production paths. The `*_definitional` functions evaluate the same indices
//! from the tilde matrices and an orthogonal projector,
//! `tr(G̃ S̃⁻¹ P⁽ʳ⁾_{S̃}) - r` and `tr(S̃ T̃⁻¹ P⁽ʳ⁾_{S̃}) - r`, and exist for
//! cross-checking.
//!
//! Eigenvalues of `G S⁻¹`, `S T⁻¹` and `S Q` come from the symmetric similar
//! matrices `S^{-1/2} G S^{-1/2}`, `T^{-1/2} S T^{-1/2}` and `Q^{1/2} S Q^{1/2}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{subset_leadfield, Covariance, LeadField, SourceSet};
use crate::numerics::{self, Mat, Power};

/// Tolerance on the `(0, 1)` bound for the spectrum of `S Q`.
const SQ_SPECTRUM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Mai,
    Mpz,
    MaiMvp,
    MpzMvp,
}

impl IndexKind {
    pub const ALL: [IndexKind; 4] = [IndexKind::Mai, IndexKind::Mpz, IndexKind::MaiMvp, IndexKind::MpzMvp];

    pub fn is_reduced_rank(self) -> bool {
        matches!(self, IndexKind::MaiMvp | IndexKind::MpzMvp)
    }

    pub fn name(self) -> &'static str {
        match self {
            IndexKind::Mai => "mai",
            IndexKind::Mpz => "mpz",
            IndexKind::MaiMvp => "mai_mvp",
            IndexKind::MpzMvp => "mpz_mvp",
        }
    }
}

impl std::str::FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mai" => Ok(IndexKind::Mai),
            "mpz" => Ok(IndexKind::Mpz),
            "mai_mvp" => Ok(IndexKind::MaiMvp),
            "mpz_mvp" => Ok(IndexKind::MpzMvp),
            other => Err(Error::InvalidParameter(format!("unknown index kind '{other}'"))),
        }
    }
}

/// Covariance-derived matrices shared by every candidate evaluation.
#[derive(Debug, Clone)]
pub struct KernelContext {
    n_inv: Mat,
    r_inv: Mat,
    r_inv_n_r_inv: Mat,
}

impl KernelContext {
    pub fn new(r: &Covariance, n: &Covariance) -> Result<Self> {
        if r.dim() != n.dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("{0}x{0}", r.dim()),
                found: format!("{0}x{0}", n.dim()),
            });
        }
        let n_inv = numerics::spd_inverse(n.matrix())?;
        let r_inv = numerics::spd_inverse(r.matrix())?;
        let r_inv_n_r_inv = numerics::symmetrized(&(&r_inv * n.matrix() * &r_inv));
        Ok(Self {
            n_inv,
            r_inv,
            r_inv_n_r_inv,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_inv.nrows()
    }

    /// Kernel for an explicit gain matrix `H` (full column rank assumed).
    pub fn kernel_for_gains(&self, h: &Mat, source_set: SourceSet) -> Result<IndexKernel> {
        if h.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} rows", self.dim()),
                found: format!("{} rows", h.nrows()),
            });
        }
        let ht = h.transpose();
        let g = numerics::symmetrized(&(&ht * &self.n_inv * h));
        let s = numerics::symmetrized(&(&ht * &self.r_inv * h));
        let t = numerics::symmetrized(&(&ht * &self.r_inv_n_r_inv * h));
        IndexKernel::from_parts(g, s, t, source_set)
    }

    pub fn kernel(&self, lf: &LeadField, theta: &SourceSet) -> Result<IndexKernel> {
        let h = subset_leadfield(lf, theta)?;
        self.kernel_for_gains(&h, theta.clone())
    }
}

/// `G`, `S`, `T`, `Q` for one candidate source set, with cached powers.
///
/// Construction requires `Q ≻ 0`, which for PD `G` and `S` is equivalent to `G ≻ S`.
#[derive(Debug, Clone)]
pub struct IndexKernel {
    g: Mat,
    s: Mat,
    t: Mat,
    q: Mat,
    source_set: SourceSet,
    s_inv: Mat,
    g_inv: Mat,
    q_sqrt: Mat,
    q_inv_sqrt: Mat,
}

impl IndexKernel {
    pub fn from_parts(g: Mat, s: Mat, t: Mat, source_set: SourceSet) -> Result<Self> {
        let l = g.nrows();
        for (name, m) in [("S", &s), ("T", &t)] {
            if m.shape() != (l, l) {
                return Err(Error::DimensionMismatch {
                    expected: format!("{l}x{l} {name}"),
                    found: format!("{}x{}", m.nrows(), m.ncols()),
                });
            }
        }
        let g_inv = numerics::spd_inverse(&g)?;
        let s_inv = numerics::spd_inverse(&s)?;
        numerics::spd_inverse(&t)?;
        let q = numerics::symmetrized(&(&s_inv - &g_inv));
        let q_eig = numerics::sym_eig(&q)?;
        let not_pd = || Error::QNotPositiveDefinite {
            indices: source_set.indices().to_vec(),
            min_eigenvalue: q_eig.min(),
        };
        let q_sqrt = numerics::power_from_eig(&q_eig, Power::Sqrt, numerics::EPS_PSD).map_err(|_| not_pd())?;
        let q_inv_sqrt = numerics::power_from_eig(&q_eig, Power::InvSqrt, numerics::EPS_PSD).map_err(|_| not_pd())?;
        Ok(Self {
            g,
            s,
            t,
            q,
            source_set,
            s_inv,
            g_inv,
            q_sqrt,
            q_inv_sqrt,
        })
    }

    /// Builds the kernel at `θ` from scratch. Prefer [`KernelContext`] when evaluating many candidates.
    pub fn build(lf: &LeadField, theta: &SourceSet, r: &Covariance, n: &Covariance) -> Result<Self> {
        KernelContext::new(r, n)?.kernel(lf, theta)
    }

    pub fn l(&self) -> usize {
        self.g.nrows()
    }

    pub fn g(&self) -> &Mat {
        &self.g
    }

    pub fn s(&self) -> &Mat {
        &self.s
    }

    pub fn t(&self) -> &Mat {
        &self.t
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn s_inv(&self) -> &Mat {
        &self.s_inv
    }

    pub fn g_inv(&self) -> &Mat {
        &self.g_inv
    }

    pub fn q_sqrt(&self) -> &Mat {
        &self.q_sqrt
    }

    pub fn q_inv_sqrt(&self) -> &Mat {
        &self.q_inv_sqrt
    }

    pub fn source_set(&self) -> &SourceSet {
        &self.source_set
    }

    /// `Q^{1/2} X Q^{1/2}`.
    pub fn tilde(&self, x: &Mat) -> Mat {
        numerics::symmetrized(&(&self.q_sqrt * x * &self.q_sqrt))
    }

    /// Eigenvalues of `G S⁻¹`, non-increasing.
    pub fn gs_spectrum(&self) -> Result<Vec<f64>> {
        let s_isqrt = numerics::psd_power(&self.s, Power::InvSqrt)?;
        Ok(numerics::sym_eig(&numerics::symmetrized(&(&s_isqrt * &self.g * &s_isqrt)))?.values)
    }

    /// Eigenvalues of `S T⁻¹`, non-increasing.
    pub fn st_spectrum(&self) -> Result<Vec<f64>> {
        let t_isqrt = numerics::psd_power(&self.t, Power::InvSqrt)?;
        Ok(numerics::sym_eig(&numerics::symmetrized(&(&t_isqrt * &self.s * &t_isqrt)))?.values)
    }
}

fn check_rank(r: usize, max: usize) -> Result<()> {
    if r < 1 || r > max {
        return Err(Error::RankOutOfRange { rank: r, max });
    }
    Ok(())
}

/// `tr(G S⁻¹) - l`.
pub fn mai(k: &IndexKernel) -> f64 {
    (&k.g * &k.s_inv).trace() - k.l() as f64
}

/// `tr(S T⁻¹) - l`.
pub fn mpz(k: &IndexKernel) -> Result<f64> {
    let t_inv = numerics::spd_inverse(&k.t)?;
    Ok((&k.s * t_inv).trace() - k.l() as f64)
}

/// Sum of the `r` largest eigenvalues of `G S⁻¹`, minus `r`. Requires `1 ≤ r ≤ l`.
pub fn mai_ext(k: &IndexKernel, r: usize) -> Result<f64> {
    check_rank(r, k.l())?;
    Ok(k.gs_spectrum()?[..r].iter().sum::<f64>() - r as f64)
}

/// Sum of the `r` largest eigenvalues of `S T⁻¹`, minus `r`. Requires `1 ≤ r ≤ l`.
pub fn mpz_ext(k: &IndexKernel, r: usize) -> Result<f64> {
    check_rank(r, k.l())?;
    Ok(k.st_spectrum()?[..r].iter().sum::<f64>() - r as f64)
}

/// Reduced-rank multi-source activity index.
pub fn mai_mvp(k: &IndexKernel, r: usize) -> Result<f64> {
    if r < 1 {
        return Err(Error::RankOutOfRange { rank: r, max: k.l() });
    }
    if k.l() <= r {
        return Ok(mai(k));
    }
    mai_ext(k, r)
}

/// Reduced-rank multi-source pseudo-Z index.
pub fn mpz_mvp(k: &IndexKernel, r: usize) -> Result<f64> {
    if r < 1 {
        return Err(Error::RankOutOfRange { rank: r, max: k.l() });
    }
    if k.l() <= r {
        return mpz(k);
    }
    let p = sq_oblique_projector(k, r)?;
    let t_inv = numerics::spd_inverse(&k.t)?;
    Ok((&k.s * t_inv * p).trace() - r as f64)
}

/// `P⁽ʳ⁾_{SQ}` through the `Q^{1/2}` similarity, asserting that the spectrum of `S Q` lies in `(0, 1)`.
pub fn sq_oblique_projector(k: &IndexKernel, r: usize) -> Result<Mat> {
    let sq = &k.s * &k.q;
    let proj = numerics::oblique_projector(&sq, &k.q, r, numerics::EPS_GAP)?;
    let hi = proj.spectrum[0];
    let lo = proj.spectrum[proj.spectrum.len() - 1];
    if hi >= 1.0 + SQ_SPECTRUM_SLACK || lo <= -SQ_SPECTRUM_SLACK {
        return Err(Error::KernelInvariant(format!(
            "eigenvalues of S Q must lie in (0, 1), found [{lo:.6e}, {hi:.6e}]"
        )));
    }
    Ok(proj.matrix)
}

/// `MAI_MVP` from the tilde matrices and the orthogonal projector of `S̃`.
pub fn mai_mvp_definitional(k: &IndexKernel, r: usize) -> Result<f64> {
    if r < 1 {
        return Err(Error::RankOutOfRange { rank: r, max: k.l() });
    }
    let gt = k.tilde(&k.g);
    let st = k.tilde(&k.s);
    let st_inv = numerics::spd_inverse(&st)?;
    if k.l() <= r {
        return Ok((&gt * &st_inv).trace() - k.l() as f64);
    }
    let p = numerics::top_r_orth_projector(&st, r)?;
    Ok((gt * st_inv * p).trace() - r as f64)
}

/// `MPZ_MVP` from the tilde matrices and the orthogonal projector of `S̃`.
pub fn mpz_mvp_definitional(k: &IndexKernel, r: usize) -> Result<f64> {
    if r < 1 {
        return Err(Error::RankOutOfRange { rank: r, max: k.l() });
    }
    let st = k.tilde(&k.s);
    let tt = k.tilde(&k.t);
    let tt_inv = numerics::spd_inverse(&tt)?;
    if k.l() <= r {
        return Ok((&st * &tt_inv).trace() - k.l() as f64);
    }
    let p = numerics::top_r_orth_projector(&st, r)?;
    Ok((st * tt_inv * p).trace() - r as f64)
}

/// Evaluates `kind` at rank `r` (ignored by the full-rank indices).
pub fn evaluate(kind: IndexKind, k: &IndexKernel, r: usize) -> Result<f64> {
    match kind {
        IndexKind::Mai => Ok(mai(k)),
        IndexKind::Mpz => mpz(k),
        IndexKind::MaiMvp => mai_mvp(k, r),
        IndexKind::MpzMvp => mpz_mvp(k, r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synth_scenario, CovKind, NoiseKind, ScenarioSpec};
    use crate::spectrum::rn_eigenvalues;
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&DVector::from_vec(v.to_vec()))
    }

    fn scalar_kernel() -> IndexKernel {
        let lf = LeadField::new(Mat::identity(3, 3)).unwrap();
        let r = Covariance::new(diag(&[2.0, 1.0, 1.0]), CovKind::Data).unwrap();
        let n = Covariance::new(Mat::identity(3, 3), CovKind::Noise).unwrap();
        IndexKernel::build(&lf, &SourceSet::new(vec![0], 3).unwrap(), &r, &n).unwrap()
    }

    #[test]
    fn scalar_hand_computation() {
        let k = scalar_kernel();
        assert!((k.g()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((k.s()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((k.t()[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((k.q()[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((mai(&k) - 1.0).abs() < 1e-14);
        assert!((mpz(&k).unwrap() - 1.0).abs() < 1e-14);
        assert!((mai_ext(&k, 1).unwrap() - mai(&k)).abs() < 1e-14);
    }

    #[test]
    fn no_signal_means_q_not_pd() {
        let lf = LeadField::new(Mat::identity(3, 3)).unwrap();
        let n = Covariance::new(Mat::identity(3, 3), CovKind::Noise).unwrap();
        let r = n.clone().with_kind(CovKind::Data);
        let err = IndexKernel::build(&lf, &SourceSet::new(vec![1], 3).unwrap(), &r, &n).unwrap_err();
        assert!(matches!(err, Error::QNotPositiveDefinite { .. }));
    }

    #[test]
    fn kernel_at_truth_recovers_q0() {
        let sc = synth_scenario(&ScenarioSpec::new(10, 14, vec![1.5, 0.8, 1.1], 5).correlation(0.3)).unwrap();
        let k = IndexKernel::build(&sc.leadfield, &sc.true_sources, &sc.data, &sc.noise).unwrap();
        assert!(numerics::rel_frobenius(k.q(), &sc.q0) < 1e-7);
    }

    #[test]
    fn optimum_values_match_spectrum() {
        let sc = synth_scenario(
            &ScenarioSpec::new(12, 16, vec![2.0, 1.0, 0.6], 8)
                .noise(NoiseKind::SeededSpd)
                .correlation(0.2),
        )
        .unwrap();
        let lam = rn_eigenvalues(&sc.data, &sc.noise).unwrap();
        let k = IndexKernel::build(&sc.leadfield, &sc.true_sources, &sc.data, &sc.noise).unwrap();
        let full: f64 = lam[..3].iter().sum::<f64>() - 3.0;
        assert!((mai(&k) - full).abs() < 1e-8);
        assert!((mpz(&k).unwrap() - mai(&k)).abs() < 1e-8);
        for r in 1..=3 {
            let expected: f64 = lam[..r].iter().sum::<f64>() - r as f64;
            assert!((mai_mvp(&k, r).unwrap() - expected).abs() < 1e-8);
            assert!((mpz_mvp(&k, r).unwrap() - expected).abs() < 1e-8);
            assert!((mpz_ext(&k, r).unwrap() - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn small_sets_use_full_rank_forms() {
        let k = scalar_kernel();
        assert_eq!(mai_mvp(&k, 3).unwrap(), mai(&k));
        assert_eq!(mpz_mvp(&k, 1).unwrap(), mpz(&k).unwrap());
        assert!(matches!(mai_mvp(&k, 0), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(mpz_mvp(&k, 0), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(mai_ext(&k, 2), Err(Error::RankOutOfRange { .. })));
    }

    #[test]
    fn index_kind_parsing() {
        assert_eq!("mpz-mvp".parse::<IndexKind>().unwrap(), IndexKind::MpzMvp);
        assert_eq!("MAI".parse::<IndexKind>().unwrap(), IndexKind::Mai);
        assert!("foo".parse::<IndexKind>().is_err());
        assert_eq!(serde_json::to_string(&IndexKind::MaiMvp).unwrap(), "\"mai_mvp\"");
    }
}
