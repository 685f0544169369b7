use std::path::{Path, PathBuf};

use log::{info, warn};
use mvpure::beamformer::{apply_filter, apply_to_epochs, make_filter, FilterKind};
use mvpure::indices::IndexKind;
use mvpure::io::{self, Tensor};
use mvpure::localizer::{localize_iterative, LocalizationResult, LocalizeConfig};
use mvpure::model::{
    regularize, sample_covariance, simulate_epochs, subset_leadfield, synth_scenario, CovKind, Covariance,
    EpochDesign, Epochs, LeadField, NoiseKind, ScenarioSpec,
};
use mvpure::numerics::{self, Mat};
use mvpure::spectrum::{analyze, RankRule, SpectrumReport, Thresholds};
use mvpure::verify::{run_suite, VerifyOptions};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::{CliError, InputArgs, LocalizeArgs, ReconstructArgs, SimulateArgs, SpectrumArgs, VerifyArgs};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MVPURE_THREADS";

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn existing<'a>(path: &'a Path, flag: &str) -> Result<&'a Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(usage(format!("{flag}: {} does not exist", path.display())))
    }
}

fn parse_kind<T: std::str::FromStr<Err = mvpure::Error>>(value: &str, flag: &str) -> Result<T, CliError> {
    value.parse().map_err(|e| usage(format!("{flag}: {e}")))
}

/// Requested thread count after applying the `MVPURE_THREADS` cap. 0 means "all available".
pub fn thread_width(requested: usize) -> Result<usize, CliError> {
    let cap = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
            (n > 0).then_some(n)
        }
        _ => None,
    };
    Ok(match (requested, cap) {
        (0, Some(c)) => c,
        (r, Some(c)) => r.min(c),
        (r, None) => r,
    })
}

/// Input flags merged with the config file; flags win.
struct Inputs {
    leadfield: Option<PathBuf>,
    data_cov: Option<PathBuf>,
    noise_cov: Option<PathBuf>,
    scenario: Option<PathBuf>,
    epochs: Option<PathBuf>,
    noise_window: Option<[f64; 2]>,
    data_window: Option<[f64; 2]>,
}

impl Inputs {
    fn merge(a: &InputArgs, cfg: &PipelineConfig) -> Self {
        Self {
            leadfield: a.leadfield.clone().or_else(|| cfg.leadfield.clone()),
            data_cov: a.data_cov.clone().or_else(|| cfg.data_cov.clone()),
            noise_cov: a.noise_cov.clone().or_else(|| cfg.noise_cov.clone()),
            scenario: a.scenario.clone().or_else(|| cfg.scenario.clone()),
            epochs: a.epochs.clone().or_else(|| cfg.epochs.clone()),
            noise_window: a.noise_window.or(cfg.windows.noise),
            data_window: a.data_window.or(cfg.windows.data),
        }
    }

    fn leadfield(&self) -> Result<LeadField, CliError> {
        if let Some(p) = &self.leadfield {
            return Ok(LeadField::new(io::read_matrix(existing(p, "--leadfield")?)?)?);
        }
        if let Some(dir) = &self.scenario {
            return Ok(io::load_scenario(existing(dir, "--scenario")?)?.leadfield);
        }
        Err(usage("a lead field is required: pass --leadfield or --scenario"))
    }

    fn epochs(&self) -> Result<Option<Epochs>, CliError> {
        match &self.epochs {
            Some(p) => {
                existing(p, "--epochs")?;
                existing(&io::sidecar_path(p), "--epochs (sidecar)")?;
                Ok(Some(io::read_epochs(p)?))
            }
            None => Ok(None),
        }
    }

    /// `(R, N)` from explicit covariance files, a scenario directory or epochs with windows, in that order.
    fn covariances(&self, epochs: Option<&Epochs>) -> Result<(Covariance, Covariance), CliError> {
        match (&self.data_cov, &self.noise_cov) {
            (Some(r), Some(n)) => {
                let r = io::read_covariance(existing(r, "--data-cov")?, CovKind::Data)?;
                let n = io::read_covariance(existing(n, "--noise-cov")?, CovKind::Noise)?;
                return Ok((r, n));
            }
            (Some(_), None) => return Err(usage("--data-cov needs --noise-cov")),
            (None, Some(_)) => return Err(usage("--noise-cov needs --data-cov")),
            (None, None) => {}
        }
        if let Some(dir) = &self.scenario {
            let sc = io::load_scenario(existing(dir, "--scenario")?)?;
            return Ok((sc.data, sc.noise));
        }
        if let Some(ep) = epochs {
            let nw = self
                .noise_window
                .ok_or_else(|| usage("--noise-window is required with --epochs"))?;
            let dw = self
                .data_window
                .ok_or_else(|| usage("--data-window is required with --epochs"))?;
            let n = sample_covariance(ep, nw, CovKind::Noise)?;
            let r = sample_covariance(ep, dw, CovKind::Data)?;
            info!("covariances from {} noise and {} data samples", n.n_samples(), r.n_samples());
            return Ok((r, n));
        }
        Err(usage(
            "covariances are required: pass --data-cov and --noise-cov, --scenario, or --epochs with windows",
        ))
    }
}

fn reg_value(flag: Option<f64>, cfg: &PipelineConfig, default: f64) -> Result<f64, CliError> {
    let g = flag.or(cfg.reg).unwrap_or(default);
    if g < 0.0 || !g.is_finite() {
        return Err(usage(format!("--reg must be a non-negative number, got {g}")));
    }
    Ok(g)
}

fn load_regularized(inputs: &Inputs, epochs: Option<&Epochs>, gamma: f64) -> Result<(Covariance, Covariance), CliError> {
    let (r, n) = inputs.covariances(epochs)?;
    if gamma > 0.0 {
        Ok((regularize(&r, gamma)?, regularize(&n, gamma)?))
    } else {
        Ok((r, n))
    }
}

fn warn_if_identical(r: &Covariance, n: &Covariance) {
    if r.dim() == n.dim() && numerics::rel_frobenius(r.matrix(), n.matrix()) < 1e-12 {
        warn!("data and noise covariances are identical; no source activity can be detected");
    }
}

fn thresholds(l0: Option<f64>, rank: Option<f64>, cfg: &PipelineConfig) -> Thresholds {
    let d = Thresholds::default();
    Thresholds {
        l0_threshold: l0.or(cfg.thresholds.l0).unwrap_or(d.l0_threshold),
        rank_threshold: rank.or(cfg.thresholds.rank).unwrap_or(d.rank_threshold),
    }
}

fn rank_rule(flag: Option<&str>, cfg: &PipelineConfig) -> Result<RankRule, CliError> {
    match flag {
        Some("corrected") => Ok(RankRule::Corrected),
        Some("printed") => Ok(RankRule::Printed),
        Some(other) => Err(usage(format!("--rank-rule: expected 'corrected' or 'printed', got '{other}'"))),
        None => Ok(cfg.rank_rule.unwrap_or_default()),
    }
}

fn print_spectrum_summary(rep: &SpectrumReport) {
    let shown: Vec<String> = rep.lambdas.iter().take(8).map(|l| format!("{l:.4}")).collect();
    let more = if rep.lambdas.len() > 8 { ", ..." } else { "" };
    println!("eigenvalues of R N^-1: [{}{more}]", shown.join(", "));
    println!("estimated sources: {}  suggested rank: {}", rep.l0_est, rep.r_opt);
}

pub fn simulate(a: &SimulateArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let sim = &cfg.simulate;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| usage("--out DIR is required"))?;
    let seed = a.seed.or(cfg.seed).unwrap_or(7);
    let m = a.channels.or(sim.channels).unwrap_or(32);
    let s = a.candidates.or(sim.candidates).unwrap_or(64);
    let snr = a
        .snr
        .clone()
        .or_else(|| sim.snr.clone())
        .unwrap_or_else(|| vec![1.5, 1.0, 0.7]);
    if let Some(l0) = a.n_sources.or(sim.n_sources) {
        if l0 != snr.len() {
            return Err(usage(format!(
                "--n-sources is {l0} but --snr lists {} amplitudes",
                snr.len()
            )));
        }
    }
    let noise = match a.noise.as_deref() {
        Some("white") => NoiseKind::White,
        Some("seeded-spd") => NoiseKind::SeededSpd,
        Some(other) => return Err(usage(format!("--noise: expected 'white' or 'seeded-spd', got '{other}'"))),
        None => sim.noise.unwrap_or(NoiseKind::White),
    };
    let spec = ScenarioSpec::new(m, s, snr, seed)
        .noise(noise)
        .correlation(a.correlation.or(sim.correlation).unwrap_or(0.0))
        .separation(a.separation.or(sim.separation).unwrap_or(0.0));
    let sc = synth_scenario(&spec)?;
    let design = EpochDesign {
        n_epochs: a.n_epochs.or(sim.n_epochs).unwrap_or(60),
        n_times: a.n_times.or(sim.n_times).unwrap_or(200),
        sfreq: a.sfreq.or(sim.sfreq).unwrap_or(250.0),
        t0: a.t0.or(sim.t0).unwrap_or(-0.2),
        seed: seed.wrapping_add(1),
    };
    let epochs = simulate_epochs(&sc, &design)?;
    io::save_scenario(&out, &sc)?;
    io::write_epochs(&out.join("epochs.mvpm"), &epochs)?;
    println!(
        "wrote {}: {} channels, {} candidates, true sources {:?}",
        out.display(),
        m,
        s,
        sc.true_sources.indices()
    );
    let rep = analyze(&sc.data, &sc.noise, Thresholds::default(), RankRule::Corrected)?;
    print_spectrum_summary(&rep);
    Ok(())
}

pub fn spectrum(a: &SpectrumArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let inputs = Inputs::merge(&a.input, cfg);
    let epochs = inputs.epochs()?;
    let (r, n) = load_regularized(&inputs, epochs.as_ref(), reg_value(a.reg, cfg, 0.0)?)?;
    warn_if_identical(&r, &n);
    let th = thresholds(a.l0_threshold, a.rank_threshold, cfg);
    let rep = analyze(&r, &n, th, rank_rule(a.rank_rule.as_deref(), cfg)?)?;
    if rep.l0_est == 0 {
        warn!("no eigenvalue exceeds 1 + {}", th.l0_threshold);
    }
    match a.out.clone().or_else(|| cfg.out.clone()) {
        Some(prefix) => {
            let json = with_suffix(&prefix, "json");
            let csv = with_suffix(&prefix, "csv");
            io::write_json(&json, &rep)?;
            std::fs::write(&csv, rep.to_csv()).map_err(|e| mvpure::Error::Io {
                path: csv.display().to_string(),
                message: e.to_string(),
            })?;
            print_spectrum_summary(&rep);
        }
        None => println!("{}", to_json(&rep)),
    }
    Ok(())
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize")
}

pub fn localize(a: &LocalizeArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let inputs = Inputs::merge(&a.input, cfg);
    let lf = inputs.leadfield()?;
    let epochs = inputs.epochs()?;
    let (r, n) = load_regularized(&inputs, epochs.as_ref(), reg_value(a.reg, cfg, 0.0)?)?;
    warn_if_identical(&r, &n);
    let kind: IndexKind = parse_kind(a.index.as_deref().or(cfg.index.as_deref()).unwrap_or("mpz-mvp"), "--index")?;

    let n_sources = a.n_sources.or(cfg.n_sources);
    let rank = a.rank.or(cfg.rank);
    let (n_sources, rank) = match (n_sources, rank) {
        (Some(l), Some(r)) => (l, r),
        _ => {
            let th = thresholds(None, None, cfg);
            let rep = analyze(&r, &n, th, cfg.rank_rule.unwrap_or_default())?;
            let l = n_sources.unwrap_or(rep.l0_est);
            if l == 0 {
                return Err(usage("no active sources detected in the spectrum; pass --n-sources"));
            }
            let r = rank.unwrap_or_else(|| rep.effective_rank().clamp(1, l));
            info!("spectrum suggests {} sources, rank {}", rep.l0_est, rep.effective_rank());
            (l, r)
        }
    };
    let width = thread_width(a.threads.or(cfg.threads).unwrap_or(0))?;
    let lc = LocalizeConfig::new(kind, n_sources, rank)
        .width(width)
        .recording(a.record_candidates);
    let result = localize_iterative(&lf, &r, &n, &lc)?;
    for s in &result.skipped {
        warn!("step {}: skipped candidate {} ({})", s.step, s.candidate, s.reason);
    }
    match a.out.clone().or_else(|| cfg.out.clone()) {
        Some(p) => {
            io::write_json(&p, &result)?;
            println!("sources {:?} written to {}", result.sources, p.display());
        }
        None => println!("{}", result.to_json()),
    }
    Ok(())
}

#[derive(Serialize)]
struct ReconstructionSidecar<'a> {
    kind: FilterKind,
    rank: usize,
    gain_check: f64,
    sources: &'a [usize],
    per_epoch: bool,
}

fn mean_epoch(ep: &Epochs) -> Mat {
    let mut sum = Mat::zeros(ep.n_channels(), ep.n_times());
    for e in ep.data() {
        sum += e;
    }
    sum / ep.n_epochs() as f64
}

pub fn reconstruct(a: &ReconstructArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let inputs = Inputs::merge(&a.input, cfg);
    let lf = inputs.leadfield()?;
    let sources_path = a
        .sources
        .clone()
        .or_else(|| cfg.sources.clone())
        .ok_or_else(|| usage("--sources is required (a localization result)"))?;
    let result: LocalizationResult = io::read_json(existing(&sources_path, "--sources")?)?;
    let set = result.source_set(lf.n_sources())?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| usage("--out is required"))?;
    let epochs = inputs
        .epochs()?
        .ok_or_else(|| usage("--epochs is required: the filter is applied to epoch data"))?;
    if epochs.n_channels() != lf.n_channels() {
        return Err(usage(format!(
            "--epochs has {} channels but the lead field has {}",
            epochs.n_channels(),
            lf.n_channels()
        )));
    }

    let (r, n) = inputs.covariances(Some(&epochs))?;
    let gamma = reg_value(a.reg, cfg, 0.05)?;
    let r = if gamma > 0.0 { regularize(&r, gamma)? } else { r };
    let kind: FilterKind = parse_kind(a.filter.as_deref().or(cfg.filter.as_deref()).unwrap_or("mvp-r"), "--filter")?;
    let rank = a.rank.or(cfg.rank).unwrap_or(result.rank_used.min(set.len()));
    let h0 = subset_leadfield(&lf, &set)?;
    let w = make_filter(kind, &h0, &r, &n, rank, set)?;
    if w.gain_check > 1e-6 {
        warn!("filter gain constraint residual {:.3e}", w.gain_check);
    }

    let tensor = if a.per_epoch {
        let blocks = apply_to_epochs(&w, &epochs)?;
        let (l, t) = (w.n_sources(), epochs.n_times());
        let mut data = Vec::with_capacity(blocks.len() * l * t);
        for b in &blocks {
            for i in 0..l {
                data.extend(b.row(i).iter());
            }
        }
        Tensor::new(vec![blocks.len(), l, t], data)?
    } else {
        Tensor::from_matrix(&apply_filter(&w, &mean_epoch(&epochs))?)
    };
    io::write_tensor(&out, &tensor)?;
    let side = ReconstructionSidecar {
        kind,
        rank: w.rank,
        gain_check: w.gain_check,
        sources: w.source_set.indices(),
        per_epoch: a.per_epoch,
    };
    io::write_json(&io::sidecar_path(&out), &side)?;
    println!(
        "{} source time series ({:?} filter, rank {}) written to {}",
        w.n_sources(),
        kind,
        w.rank,
        out.display()
    );
    Ok(())
}

pub fn verify(a: &VerifyArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let opts = VerifyOptions {
        seed: a.seed.or(cfg.seed).unwrap_or(VerifyOptions::default().seed),
        break_unbiasedness: a.break_unbiasedness,
        parallel_width: thread_width(a.threads.or(cfg.threads).unwrap_or(0))?,
    };
    let report = run_suite(&opts);
    print!("{}", report.table());
    if let Some(p) = &a.json {
        io::write_json(p, &report)?;
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed == 0 {
        println!("all {} checks passed", report.checks.len());
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{failed} of {} checks failed",
            report.checks.len()
        )))
    }
}
