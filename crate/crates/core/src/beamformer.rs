//! LCMV and MV-PURE spatial filters, their application and reconstruction MSE.
//!
//! ```text
//! W_LCMV_R = S₀⁻¹ H₀ᵗ R⁻¹            S₀ = H₀ᵗ R⁻¹ H₀
//! W_LCMV_N = G₀⁻¹ H₀ᵗ N⁻¹            G₀ = H₀ᵗ N⁻¹ H₀
//! W⁽ʳ⁾_MVP_R = P⁽ʳ⁾_{S₀} W_LCMV_R     W⁽ʳ⁾_MVP_N = P⁽ʳ⁾_{G₀} W_LCMV_N
//! ```
//!
//! `P⁽ʳ⁾_X` is the orthogonal projector onto the span of the eigenvectors of the
//! `r` largest eigenvalues of `X`. Both LCMV forms coincide when
//! `R = H₀Q₀H₀ᵗ + N` holds exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CovKind, Covariance, Epochs, Scenario, SourceSet};
use crate::numerics::{self, Mat, Power};

/// Relative singular-value cutoff used for the numerical rank of `W`.
pub const WEIGHT_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    LcmvR,
    LcmvN,
    MvpR,
    MvpN,
}

impl FilterKind {
    pub fn flavor(self) -> Flavor {
        match self {
            FilterKind::LcmvR | FilterKind::MvpR => Flavor::R,
            FilterKind::LcmvN | FilterKind::MvpN => Flavor::N,
        }
    }

    pub fn is_reduced_rank(self) -> bool {
        matches!(self, FilterKind::MvpR | FilterKind::MvpN)
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "lcmv_r" => Ok(FilterKind::LcmvR),
            "lcmv_n" => Ok(FilterKind::LcmvN),
            "mvp_r" => Ok(FilterKind::MvpR),
            "mvp_n" => Ok(FilterKind::MvpN),
            other => Err(Error::InvalidParameter(format!("unknown filter kind '{other}'"))),
        }
    }
}

/// Which covariance a filter is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flavor {
    R,
    N,
}

impl Flavor {
    fn expected_kind(self) -> CovKind {
        match self {
            Flavor::R => CovKind::Data,
            Flavor::N => CovKind::Noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFilter {
    /// `l × m` weights.
    pub weights: Mat,
    pub kind: FilterKind,
    pub rank: usize,
    pub source_set: SourceSet,
    /// `‖W H₀ - P‖_max`, with `P = I` for LCMV and the construction projector for MV-PURE.
    pub gain_check: f64,
}

impl SpatialFilter {
    pub fn n_sources(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.weights.ncols()
    }

    /// Numerical rank of the weights at `WEIGHT_RANK_TOL · σ_max`.
    pub fn numerical_rank(&self) -> usize {
        let sv = self.weights.singular_values();
        let max = sv.max();
        sv.iter().filter(|&&x| x > WEIGHT_RANK_TOL * max).count()
    }
}

fn check_gains(h0: &Mat, c: &Covariance, source_set: &SourceSet) -> Result<()> {
    if h0.nrows() != c.dim() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} rows in H0", c.dim()),
            found: format!("{}", h0.nrows()),
        });
    }
    if h0.ncols() != source_set.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} columns in H0", source_set.len()),
            found: format!("{}", h0.ncols()),
        });
    }
    let ratio = numerics::singular_ratio(h0);
    if ratio <= crate::model::SUBSET_RANK_TOL {
        return Err(Error::RankDeficientSubset {
            indices: source_set.indices().to_vec(),
            ratio,
        });
    }
    Ok(())
}

fn check_kind(c: &Covariance, flavor: Flavor) -> Result<()> {
    if c.kind() != flavor.expected_kind() {
        return Err(Error::CovarianceKindMismatch {
            expected: format!("{:?}", flavor),
            found: c.kind().to_string(),
        });
    }
    Ok(())
}

/// `(Hᵗ C⁻¹ H)⁻¹ Hᵗ C⁻¹` together with `Hᵗ C⁻¹ H`.
fn lcmv_parts(h0: &Mat, c: &Covariance) -> Result<(Mat, Mat)> {
    let c_inv = numerics::spd_inverse(c.matrix())?;
    let ht_cinv = h0.transpose() * c_inv;
    let kernel = numerics::symmetrized(&(&ht_cinv * h0));
    let w = numerics::spd_inverse(&kernel)? * ht_cinv;
    Ok((w, kernel))
}

/// LCMV filter built from the data (`Flavor::R`) or noise (`Flavor::N`) covariance.
pub fn make_lcmv(h0: &Mat, c: &Covariance, flavor: Flavor, source_set: SourceSet) -> Result<SpatialFilter> {
    check_kind(c, flavor)?;
    check_gains(h0, c, &source_set)?;
    let l = h0.ncols();
    let (weights, _) = lcmv_parts(h0, c)?;
    let gain_check = (&weights * h0 - Mat::identity(l, l)).abs().max();
    let kind = match flavor {
        Flavor::R => FilterKind::LcmvR,
        Flavor::N => FilterKind::LcmvN,
    };
    Ok(SpatialFilter {
        weights,
        kind,
        rank: l,
        source_set,
        gain_check,
    })
}

/// Rank-`r` MV-PURE filter `P⁽ʳ⁾ W_LCMV`, with the projector taken from `S₀` (R flavor) or `G₀` (N flavor).
pub fn make_mvp(
    h0: &Mat,
    r_cov: &Covariance,
    n_cov: &Covariance,
    r: usize,
    flavor: Flavor,
    source_set: SourceSet,
) -> Result<SpatialFilter> {
    check_kind(r_cov, Flavor::R)?;
    check_kind(n_cov, Flavor::N)?;
    if r_cov.dim() != n_cov.dim() {
        return Err(Error::DimensionMismatch {
            expected: format!("{0}x{0}", r_cov.dim()),
            found: format!("{0}x{0}", n_cov.dim()),
        });
    }
    let c = match flavor {
        Flavor::R => r_cov,
        Flavor::N => n_cov,
    };
    check_gains(h0, c, &source_set)?;
    let l = h0.ncols();
    if r < 1 || r > l {
        return Err(Error::RankOutOfRange { rank: r, max: l });
    }
    let (lcmv, kernel) = lcmv_parts(h0, c)?;
    let p = numerics::top_r_orth_projector(&kernel, r)?;
    let weights = &p * lcmv;
    let gain_check = (&weights * h0 - &p).abs().max();
    let kind = match flavor {
        Flavor::R => FilterKind::MvpR,
        Flavor::N => FilterKind::MvpN,
    };
    Ok(SpatialFilter {
        weights,
        kind,
        rank: r,
        source_set,
        gain_check,
    })
}

/// Builds any filter kind; `rank` is ignored for the LCMV kinds.
pub fn make_filter(
    kind: FilterKind,
    h0: &Mat,
    r_cov: &Covariance,
    n_cov: &Covariance,
    rank: usize,
    source_set: SourceSet,
) -> Result<SpatialFilter> {
    match kind {
        FilterKind::LcmvR => make_lcmv(h0, r_cov, Flavor::R, source_set),
        FilterKind::LcmvN => make_lcmv(h0, n_cov, Flavor::N, source_set),
        FilterKind::MvpR => make_mvp(h0, r_cov, n_cov, rank, Flavor::R, source_set),
        FilterKind::MvpN => make_mvp(h0, r_cov, n_cov, rank, Flavor::N, source_set),
    }
}

/// `W · data` for an `m × n_times` matrix.
pub fn apply_filter(w: &SpatialFilter, data: &Mat) -> Result<Mat> {
    if data.nrows() != w.n_channels() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} channels", w.n_channels()),
            found: format!("{}", data.nrows()),
        });
    }
    Ok(&w.weights * data)
}

/// Applies the filter to every epoch.
pub fn apply_to_epochs(w: &SpatialFilter, epochs: &Epochs) -> Result<Vec<Mat>> {
    if epochs.n_channels() != w.n_channels() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} channels", w.n_channels()),
            found: format!("{}", epochs.n_channels()),
        });
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok(epochs.data().par_iter().map(|e| &w.weights * e).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok(epochs.data().iter().map(|e| &w.weights * e).collect())
    }
}

/// Reconstruction MSE of `w` against the scenario's true sources.
///
/// Un-normalized: `tr(W R Wᵗ) - 2 tr(W H₀ Q₀) + tr(Q₀)`.
/// Normalized (unit-covariance sources, `H̃₀ = H₀ Q₀^{1/2}`): `tr(W R Wᵗ) - 2 tr(W H̃₀) + l₀`.
pub fn filter_mse(w: &SpatialFilter, scenario: &Scenario, normalized: bool) -> Result<f64> {
    if w.source_set.indices() != scenario.true_sources.indices() {
        return Err(Error::SourceSetMismatch {
            filter: w.source_set.indices().to_vec(),
            truth: scenario.true_sources.indices().to_vec(),
        });
    }
    if w.n_channels() != scenario.data.dim() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} channels", scenario.data.dim()),
            found: format!("{}", w.n_channels()),
        });
    }
    let wm = &w.weights;
    let power = (wm * scenario.data.matrix() * wm.transpose()).trace();
    let h0 = scenario.h0();
    if normalized {
        let q_sqrt = numerics::psd_power(&scenario.q0, Power::Sqrt)?;
        Ok(power - 2.0 * (wm * h0 * q_sqrt).trace() + scenario.l0() as f64)
    } else {
        Ok(power - 2.0 * (wm * h0 * &scenario.q0).trace() + scenario.q0.trace())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synth_scenario, NoiseKind, ScenarioSpec};
    use nalgebra::DVector;

    fn cov(m: Mat, kind: CovKind) -> Covariance {
        Covariance::new(m, kind).unwrap()
    }

    fn scenario() -> Scenario {
        synth_scenario(
            &ScenarioSpec::new(12, 16, vec![2.0, 1.2, 0.7], 4)
                .noise(NoiseKind::SeededSpd)
                .correlation(0.25),
        )
        .unwrap()
    }

    #[test]
    fn identity_gains_give_identity_filter() {
        let c = cov(Mat::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 0.5])), CovKind::Data);
        let set = SourceSet::new(vec![0, 1, 2], 3).unwrap();
        let w = make_lcmv(&Mat::identity(3, 3), &c, Flavor::R, set).unwrap();
        assert!((w.weights.clone() - Mat::identity(3, 3)).abs().max() < 1e-14);
    }

    #[test]
    fn scalar_filter() {
        let h = Mat::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = cov(Mat::identity(2, 2), CovKind::Noise);
        let w = make_lcmv(&h, &c, Flavor::N, SourceSet::new(vec![0], 1).unwrap()).unwrap();
        assert_eq!(w.weights, Mat::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_eq!(w.rank, 1);
    }

    #[test]
    fn flavor_must_match_kind() {
        let h = Mat::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = cov(Mat::identity(2, 2), CovKind::Noise);
        let err = make_lcmv(&h, &c, Flavor::R, SourceSet::new(vec![0], 1).unwrap()).unwrap_err();
        assert!(matches!(err, Error::CovarianceKindMismatch { .. }));
    }

    #[test]
    fn lcmv_forms_agree_on_exact_model() {
        let sc = scenario();
        let h0 = sc.h0();
        let wr = make_lcmv(&h0, &sc.data, Flavor::R, sc.true_sources.clone()).unwrap();
        let wn = make_lcmv(&h0, &sc.noise, Flavor::N, sc.true_sources.clone()).unwrap();
        assert!((wr.weights - wn.weights).abs().max() < 1e-7);
        assert!(wr.gain_check < 1e-7);
    }

    #[test]
    fn full_rank_mvp_is_lcmv() {
        let sc = scenario();
        let h0 = sc.h0();
        for flavor in [Flavor::R, Flavor::N] {
            let c = if flavor == Flavor::R { &sc.data } else { &sc.noise };
            let lcmv = make_lcmv(&h0, c, flavor, sc.true_sources.clone()).unwrap();
            let mvp = make_mvp(&h0, &sc.data, &sc.noise, 3, flavor, sc.true_sources.clone()).unwrap();
            assert!((lcmv.weights - mvp.weights).abs().max() < 1e-10);
        }
    }

    #[test]
    fn reduced_rank_gain_is_projector() {
        let sc = scenario();
        let h0 = sc.h0();
        let w = make_mvp(&h0, &sc.data, &sc.noise, 2, Flavor::R, sc.true_sources.clone()).unwrap();
        // explicit projector from the eigenvectors of S0
        let r_inv = numerics::spd_inverse(sc.data.matrix()).unwrap();
        let s0 = numerics::symmetrized(&(h0.transpose() * r_inv * &h0));
        let e = numerics::sym_eig(&s0).unwrap();
        let u = e.vectors.columns(0, 2);
        let p = &u * u.transpose();
        assert!((&w.weights * &h0 - p).abs().max() < 1e-7);
        assert_eq!(w.numerical_rank(), 2);
        assert!(make_mvp(&h0, &sc.data, &sc.noise, 4, Flavor::R, sc.true_sources.clone()).is_err());
    }

    #[test]
    fn application_matches_naive_product() {
        let sc = scenario();
        let w = make_lcmv(&sc.h0(), &sc.data, Flavor::R, sc.true_sources.clone()).unwrap();
        let data = Mat::from_fn(12, 7, |i, j| ((i * 7 + j) as f64).sin());
        let out = apply_filter(&w, &data).unwrap();
        for i in 0..3 {
            for j in 0..7 {
                let mut acc = 0.0;
                for k in 0..12 {
                    acc += w.weights[(i, k)] * data[(k, j)];
                }
                assert!((out[(i, j)] - acc).abs() < 1e-12);
            }
        }
        assert_eq!(apply_filter(&w, &Mat::zeros(12, 4)).unwrap(), Mat::zeros(3, 4));
        assert!(apply_filter(&w, &Mat::zeros(11, 4)).is_err());
    }

    #[test]
    fn zero_filter_mse() {
        let sc = scenario();
        let w = SpatialFilter {
            weights: Mat::zeros(3, 12),
            kind: FilterKind::LcmvR,
            rank: 3,
            source_set: sc.true_sources.clone(),
            gain_check: 0.0,
        };
        assert!((filter_mse(&w, &sc, false).unwrap() - sc.q0.trace()).abs() < 1e-12);
        assert!((filter_mse(&w, &sc, true).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mse_requires_true_sources() {
        let sc = scenario();
        let mut w = make_lcmv(&sc.h0(), &sc.data, Flavor::R, sc.true_sources.clone()).unwrap();
        w.source_set = SourceSet::new(vec![0, 1, 2], 16).unwrap();
        if w.source_set.indices() != sc.true_sources.indices() {
            assert!(matches!(filter_mse(&w, &sc, true), Err(Error::SourceSetMismatch { .. })));
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("mvp-r".parse::<FilterKind>().unwrap(), FilterKind::MvpR);
        assert_eq!("LCMV_N".parse::<FilterKind>().unwrap(), FilterKind::LcmvN);
        assert!("mvp".parse::<FilterKind>().is_err());
    }
}
