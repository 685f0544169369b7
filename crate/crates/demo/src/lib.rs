//! Browser demo for `mvpure`.
//!
//! Every operation takes a JSON parameter object and returns a JSON result so the same
//! functions back the wasm exports and the native tests.

use mvpure::beamformer::{filter_mse, make_filter, FilterKind};
use mvpure::indices::IndexKind;
use mvpure::localizer::{localize_iterative, LocalizeConfig};
use mvpure::model::{
    covariance_of_columns, draw_samples, regularize, synth_scenario, CovKind, Covariance, NoiseKind, Scenario,
    ScenarioSpec,
};
use mvpure::spectrum::{analyze, epsilon_resolution_loss, RankRule, Thresholds};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub channels: usize,
    pub candidates: usize,
    pub snr: Vec<f64>,
    pub noise: NoiseKind,
    pub correlation: f64,
    pub separation: f64,
    pub seed: u64,
    /// Samples used to estimate `R` and `N`; 0 uses the exact covariances.
    pub samples: usize,
    /// Diagonal loading of the estimated covariances.
    pub reg: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            channels: 24,
            candidates: 40,
            snr: vec![1.5, 1.0, 0.6],
            noise: NoiseKind::SeededSpd,
            correlation: 0.2,
            separation: 20.0,
            seed: 1,
            samples: 0,
            reg: 0.0,
        }
    }
}

struct Prepared {
    scenario: Scenario,
    r: Covariance,
    n: Covariance,
}

fn prepare(p: &ScenarioParams) -> mvpure::Result<Prepared> {
    let spec = ScenarioSpec::new(p.channels, p.candidates, p.snr.clone(), p.seed)
        .noise(p.noise)
        .correlation(p.correlation)
        .separation(p.separation);
    let scenario = synth_scenario(&spec)?;
    let (r, n) = if p.samples == 0 {
        (scenario.data.clone(), scenario.noise.clone())
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x5eed);
        let y = draw_samples(&scenario, p.samples, true, &mut rng)?;
        let e = draw_samples(&scenario, p.samples, false, &mut rng)?;
        (covariance_of_columns(&y, CovKind::Data)?, covariance_of_columns(&e, CovKind::Noise)?)
    };
    let (r, n) = if p.reg > 0.0 {
        (regularize(&r, p.reg)?, regularize(&n, p.reg)?)
    } else {
        (r, n)
    };
    Ok(Prepared { scenario, r, n })
}

fn parse<T: for<'de> Deserialize<'de>>(json: &str) -> Result<T, String> {
    let json = if json.trim().is_empty() { "{}" } else { json };
    serde_json::from_str(json).map_err(|e| format!("invalid parameters: {e}"))
}

fn emit<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct SpectrumParams {
    #[serde(flatten)]
    scenario: ScenarioParams,
    l0_threshold: f64,
    rank_threshold: f64,
    rank_rule: RankRule,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        let t = Thresholds::default();
        Self {
            scenario: ScenarioParams::default(),
            l0_threshold: t.l0_threshold,
            rank_threshold: t.rank_threshold,
            rank_rule: RankRule::Corrected,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SpectrumView {
    pub lambdas: Vec<f64>,
    pub l0_true: usize,
    pub l0_est: usize,
    pub r_opt: usize,
    /// Index value lost at the true sources for each rank `1..=l0_est`.
    pub resolution_loss: Vec<f64>,
}

/// Eigenvalues of `R N⁻¹` with the estimated source count, suggested rank and the resolution loss per rank.
pub fn spectrum_explorer(params: &str) -> Result<String, String> {
    let p: SpectrumParams = parse(params)?;
    let prep = prepare(&p.scenario).map_err(|e| e.to_string())?;
    let th = Thresholds {
        l0_threshold: p.l0_threshold,
        rank_threshold: p.rank_threshold,
    };
    let rep = analyze(&prep.r, &prep.n, th, p.rank_rule).map_err(|e| e.to_string())?;
    let resolution_loss = (1..=rep.l0_est)
        .map(|r| epsilon_resolution_loss(&rep.lambdas, rep.l0_est, r))
        .collect::<mvpure::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    emit(&SpectrumView {
        l0_true: prep.scenario.l0(),
        lambdas: rep.lambdas,
        l0_est: rep.l0_est,
        r_opt: rep.r_opt,
        resolution_loss,
    })
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct LocalizeParams {
    #[serde(flatten)]
    scenario: ScenarioParams,
    index: IndexKind,
    /// 0 takes the suggested rank.
    rank: usize,
    /// 0 takes the spectral estimate.
    n_sources: usize,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        Self {
            scenario: ScenarioParams::default(),
            index: IndexKind::MpzMvp,
            rank: 0,
            n_sources: 0,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct StepView {
    pub step: usize,
    pub selected: usize,
    /// Index value for every candidate; `null` for sources already selected or skipped.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Serialize)]
pub struct LocalizeView {
    pub true_sources: Vec<usize>,
    pub found: Vec<usize>,
    pub rank: usize,
    pub steps: Vec<StepView>,
}

/// Runs the iterative search and returns the index value of every candidate at every step.
pub fn localization_steps(params: &str) -> Result<String, String> {
    let p: LocalizeParams = parse(params)?;
    let prep = prepare(&p.scenario).map_err(|e| e.to_string())?;
    let rep = analyze(&prep.r, &prep.n, Thresholds::default(), RankRule::Corrected).map_err(|e| e.to_string())?;
    let n_sources = if p.n_sources == 0 { rep.l0_est } else { p.n_sources };
    if n_sources == 0 {
        return Err("no active sources detected; set n_sources".into());
    }
    let rank = if p.rank == 0 {
        rep.effective_rank().clamp(1, n_sources)
    } else {
        p.rank
    };
    let cfg = LocalizeConfig::new(p.index, n_sources, rank).recording(true);
    let res = localize_iterative(&prep.scenario.leadfield, &prep.r, &prep.n, &cfg).map_err(|e| e.to_string())?;
    let s = prep.scenario.leadfield.n_sources();
    let steps = res
        .index_trace
        .iter()
        .map(|t| {
            let mut values = vec![None; s];
            for c in t.candidates.iter().flatten() {
                values[c.candidate] = c.value;
            }
            StepView {
                step: t.step,
                selected: t.selected,
                values,
            }
        })
        .collect();
    emit(&LocalizeView {
        true_sources: prep.scenario.true_sources.indices().to_vec(),
        found: res.sources,
        rank: res.rank_used,
        steps,
    })
}

#[derive(Debug, Serialize)]
pub struct MseView {
    pub ranks: Vec<usize>,
    pub mvp_r: Vec<f64>,
    pub mvp_n: Vec<f64>,
    pub lcmv_r: f64,
    pub lcmv_n: f64,
    pub lambdas: Vec<f64>,
}

/// Reconstruction MSE at the true sources for every MV-PURE rank, both flavors, against the LCMV baselines.
///
/// Filters are built from the (possibly estimated) covariances; the error is measured against the true model.
pub fn mse_curves(params: &str) -> Result<String, String> {
    let p: ScenarioParams = parse(params)?;
    let prep = prepare(&p).map_err(|e| e.to_string())?;
    let sc = &prep.scenario;
    let h0 = sc.h0();
    let l0 = sc.l0();
    let mse = |kind: FilterKind, r: usize| -> mvpure::Result<f64> {
        let w = make_filter(kind, &h0, &prep.r, &prep.n, r, sc.true_sources.clone())?;
        filter_mse(&w, sc, false)
    };
    let run = || -> mvpure::Result<MseView> {
        let ranks: Vec<usize> = (1..=l0).collect();
        Ok(MseView {
            mvp_r: ranks.iter().map(|&r| mse(FilterKind::MvpR, r)).collect::<mvpure::Result<_>>()?,
            mvp_n: ranks.iter().map(|&r| mse(FilterKind::MvpN, r)).collect::<mvpure::Result<_>>()?,
            lcmv_r: mse(FilterKind::LcmvR, l0)?,
            lcmv_n: mse(FilterKind::LcmvN, l0)?,
            lambdas: mvpure::spectrum::rn_eigenvalues(&prep.r, &prep.n)?[..l0].to_vec(),
            ranks,
        })
    };
    emit(&run().map_err(|e| e.to_string())?)
}

#[cfg(target_arch = "wasm32")]
mod wasm {
    use wasm_bindgen::prelude::*;

    #[wasm_bindgen(js_name = spectrumExplorer)]
    pub fn spectrum_explorer(params: &str) -> Result<String, JsError> {
        super::spectrum_explorer(params).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = localizationSteps)]
    pub fn localization_steps(params: &str) -> Result<String, JsError> {
        super::localization_steps(params).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = mseCurves)]
    pub fn mse_curves(params: &str) -> Result<String, JsError> {
        super::mse_curves(params).map_err(|e| JsError::new(&e))
    }
}
