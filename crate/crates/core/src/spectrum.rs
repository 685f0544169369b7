//! Eigen-spectrum of `R N⁻¹`: number of active sources and joint rank.
//!
//! With `R = H₀Q₀H₀ᵗ + N` every eigenvalue of `R N⁻¹` is at least one and
//! exactly `l₀` of them exceed one. Eigenvalues are computed from the
//! symmetric similar matrix `N^{-1/2} R N^{-1/2}`.
//!
//! Rank selection keeps the eigenvalues with `λ_i - 1 ≥ threshold` (default
//! `1/2`, i.e. `λ_i ≥ 3/2`). Components beyond that boundary lower the filter
//! MSE when truncated and cost only `ε = Σ_{i>r₀} (λ_i - 1)` of index value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Covariance;
use crate::numerics::{self, Power};

pub const DEFAULT_L0_THRESHOLD: f64 = 0.1;
pub const DEFAULT_RANK_THRESHOLD: f64 = 0.5;

/// Which rule [`suggest_rank_with`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankRule {
    /// `λ_i - 1 ≥ threshold`.
    #[default]
    Corrected,
    /// `λ_i ≥ threshold` taken literally; with `threshold = 1/2` every
    /// eigenvalue qualifies and the rule always returns `l0`.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub l0_threshold: f64,
    pub rank_threshold: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            l0_threshold: DEFAULT_L0_THRESHOLD,
            rank_threshold: DEFAULT_RANK_THRESHOLD,
        }
    }
}

/// Spectrum of `R N⁻¹` with the derived source count and rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub lambdas: Vec<f64>,
    pub l0_est: usize,
    pub r_opt: usize,
    pub thresholds: Thresholds,
}

impl SpectrumReport {
    /// Rank to use downstream: `r_opt`, or `l0_est` when no eigenvalue cleared the rank threshold.
    pub fn effective_rank(&self) -> usize {
        if self.r_opt == 0 {
            self.l0_est
        } else {
            self.r_opt
        }
    }

    /// Two-column CSV `index,lambda` with 1-based indices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,lambda\n");
        for (i, l) in self.lambdas.iter().enumerate() {
            out.push_str(&format!("{},{:.17e}\n", i + 1, l));
        }
        out
    }
}

/// Eigenvalues of `R N⁻¹`, non-increasing.
pub fn rn_eigenvalues(r: &Covariance, n: &Covariance) -> Result<Vec<f64>> {
    if r.dim() != n.dim() {
        return Err(Error::DimensionMismatch {
            expected: format!("{0}x{0}", r.dim()),
            found: format!("{0}x{0}", n.dim()),
        });
    }
    let n_isqrt = numerics::psd_power(n.matrix(), Power::InvSqrt)?;
    let whitened = numerics::symmetrized(&(&n_isqrt * r.matrix() * &n_isqrt));
    Ok(numerics::sym_eig(&whitened)?.values)
}

/// Number of eigenvalues above `1 + threshold`.
pub fn estimate_num_sources(lambdas: &[f64], l0_threshold: f64) -> usize {
    lambdas
        .iter()
        .rposition(|&l| l > 1.0 + l0_threshold)
        .map_or(0, |i| i + 1)
}

/// Largest `i ≤ l0` with `λ_i - 1 ≥ rank_threshold`, or 0.
pub fn suggest_rank(lambdas: &[f64], l0: usize, rank_threshold: f64) -> usize {
    suggest_rank_with(lambdas, l0, rank_threshold, RankRule::Corrected)
}

pub fn suggest_rank_with(lambdas: &[f64], l0: usize, threshold: f64, rule: RankRule) -> usize {
    let l0 = l0.min(lambdas.len());
    let offset = match rule {
        RankRule::Corrected => 1.0,
        RankRule::Printed => 0.0,
    };
    lambdas[..l0]
        .iter()
        .rposition(|&l| l - offset >= threshold)
        .map_or(0, |i| i + 1)
}

/// `ε = Σ_{i=r0+1}^{l0} (λ_i - 1)`, the index value given up at the true sources by rank `r0`.
pub fn epsilon_resolution_loss(lambdas: &[f64], l0: usize, r0: usize) -> Result<f64> {
    if l0 > lambdas.len() {
        return Err(Error::RankOutOfRange {
            rank: l0,
            max: lambdas.len(),
        });
    }
    if r0 < 1 || r0 > l0 {
        return Err(Error::RankOutOfRange { rank: r0, max: l0 });
    }
    Ok(lambdas[r0..l0].iter().map(|l| l - 1.0).sum())
}

/// Full spectral analysis with the given thresholds and rank rule.
pub fn analyze(r: &Covariance, n: &Covariance, thresholds: Thresholds, rule: RankRule) -> Result<SpectrumReport> {
    let lambdas = rn_eigenvalues(r, n)?;
    let l0_est = estimate_num_sources(&lambdas, thresholds.l0_threshold);
    let r_opt = suggest_rank_with(&lambdas, l0_est, thresholds.rank_threshold, rule);
    Ok(SpectrumReport {
        lambdas,
        l0_est,
        r_opt,
        thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synth_scenario, CovKind, ScenarioSpec};
    use crate::numerics::Mat;

    #[test]
    fn equal_covariances_give_unit_spectrum() {
        let c = Covariance::new(Mat::identity(4, 4) * 2.0, CovKind::Data).unwrap();
        let l = rn_eigenvalues(&c, &c).unwrap();
        assert!(l.iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert_eq!(estimate_num_sources(&l, 0.1), 0);
    }

    #[test]
    fn rank_one_scenario_spectrum() {
        // unit-norm column, Q0 = q^2 = 2 -> λ1 = 1 + 2 = 3
        let sc = synth_scenario(&ScenarioSpec::new(6, 4, vec![2f64.sqrt()], 3)).unwrap();
        let l = rn_eigenvalues(&sc.data, &sc.noise).unwrap();
        assert!((l[0] - 3.0).abs() < 1e-12);
        assert!(l[1..].iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert_eq!(estimate_num_sources(&l, 0.1), 1);
    }

    #[test]
    fn source_count_threshold() {
        assert_eq!(estimate_num_sources(&[3.0, 1.0, 1.0], 0.1), 1);
        assert_eq!(estimate_num_sources(&[1.0, 1.0, 1.0], 0.1), 0);
        assert_eq!(estimate_num_sources(&[5.0, 2.0, 1.05, 1.0], 0.1), 2);
    }

    #[test]
    fn rank_suggestion() {
        assert_eq!(suggest_rank(&[4.0, 3.0, 1.2, 1.0], 3, 0.5), 2);
        assert_eq!(suggest_rank(&[1.0, 1.0, 1.0], 0, 0.5), 0);
        assert_eq!(suggest_rank(&[1.4, 1.3], 2, 0.5), 0);
        // the literal rule keeps everything
        assert_eq!(suggest_rank_with(&[4.0, 3.0, 1.2, 1.0], 3, 0.5, RankRule::Printed), 3);
    }

    #[test]
    fn epsilon_loss() {
        assert_eq!(epsilon_resolution_loss(&[4.0, 2.0, 1.1], 3, 3).unwrap(), 0.0);
        assert!((epsilon_resolution_loss(&[4.0, 2.0, 1.1], 3, 1).unwrap() - 1.1).abs() < 1e-15);
        assert_eq!(epsilon_resolution_loss(&[1.0; 4], 3, 2).unwrap(), 0.0);
        assert!(epsilon_resolution_loss(&[2.0, 1.0], 2, 0).is_err());
        assert!(epsilon_resolution_loss(&[2.0, 1.0], 3, 1).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let a = Covariance::new(Mat::identity(3, 3), CovKind::Data).unwrap();
        let b = Covariance::new(Mat::identity(4, 4), CovKind::Noise).unwrap();
        assert!(matches!(rn_eigenvalues(&a, &b), Err(Error::DimensionMismatch { .. })));
        let z = Covariance::new(Mat::zeros(3, 3), CovKind::Noise).unwrap();
        assert!(matches!(rn_eigenvalues(&a, &z), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn report_csv_and_effective_rank() {
        let r = SpectrumReport {
            lambdas: vec![1.4, 1.3, 1.0],
            l0_est: 2,
            r_opt: 0,
            thresholds: Thresholds::default(),
        };
        assert_eq!(r.effective_rank(), 2);
        assert!(r.to_csv().starts_with("index,lambda\n1,"));
        assert_eq!(r.to_csv().lines().count(), 4);
    }
}
