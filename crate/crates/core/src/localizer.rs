//! Greedy iterative source discovery and an exhaustive oracle.
//!
//! The greedy search grows `θ` one source at a time. At step `l` it evaluates
//! the index on `θ ∪ {i}` for every source `i` not yet selected and keeps the
//! maximizer; ties go to the lowest candidate index. The MV-PURE indices use
//! their full-rank form while `l ≤ r` and the reduced-rank form afterwards.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indices::{evaluate, IndexKind, KernelContext};
use crate::model::{Covariance, LeadField, SourceSet};

pub const DEFAULT_COMBO_LIMIT: u128 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizeConfig {
    pub index_kind: IndexKind,
    pub rank: usize,
    pub n_sources: usize,
    /// Worker threads for the candidate sweep; 0 uses all available parallelism.
    pub parallel_width: usize,
    /// Keep every candidate's value in the trace.
    pub record_candidates: bool,
}

impl LocalizeConfig {
    pub fn new(index_kind: IndexKind, n_sources: usize, rank: usize) -> Self {
        Self {
            index_kind,
            rank,
            n_sources,
            parallel_width: 0,
            record_candidates: false,
        }
    }

    pub fn width(mut self, parallel_width: usize) -> Self {
        self.parallel_width = parallel_width;
        self
    }

    pub fn recording(mut self, record: bool) -> Self {
        self.record_candidates = record;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateValue {
    pub candidate: usize,
    /// `None` when the candidate was skipped.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub selected: usize,
    pub best_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<CandidateValue>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCandidate {
    pub step: usize,
    pub candidate: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankFallback {
    pub step: usize,
    pub candidate: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    /// Selected sources in discovery order.
    pub sources: Vec<usize>,
    pub index_trace: Vec<TraceEntry>,
    pub index_kind: IndexKind,
    pub rank_used: usize,
    pub skipped: Vec<SkippedCandidate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rank_fallbacks: Vec<RankFallback>,
}

impl LocalizationResult {
    pub fn source_set(&self, n_sources: usize) -> Result<SourceSet> {
        SourceSet::new(self.sources.clone(), n_sources)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("localization result is always serializable")
    }
}

enum Outcome {
    Value { value: f64, fallback_rank: Option<usize> },
    Skipped(String),
}

fn check_dimensions(lf: &LeadField, r_cov: &Covariance, n_cov: &Covariance, l0: usize, r: usize) -> Result<()> {
    let (m, s) = (lf.n_channels(), lf.n_sources());
    if r_cov.dim() != m || n_cov.dim() != m {
        return Err(Error::DimensionMismatch {
            expected: format!("{m}x{m} covariances"),
            found: format!("{0}x{0} and {1}x{1}", r_cov.dim(), n_cov.dim()),
        });
    }
    if l0 < 1 || l0 > (m - 1).min(s) {
        return Err(Error::InfeasibleDimensions(format!(
            "need 1 <= n_sources <= min(m - 1, s) = {}, got {l0}",
            (m - 1).min(s)
        )));
    }
    if r < 1 || r > l0 {
        return Err(Error::InfeasibleDimensions(format!("need 1 <= rank <= {l0}, got {r}")));
    }
    Ok(())
}

/// Index value at `θ`, retrying once at `r - 1` when the rank-`r` projector is degenerate.
fn score(ctx: &KernelContext, lf: &LeadField, theta: &SourceSet, kind: IndexKind, r: usize) -> Result<Outcome> {
    let kernel = match ctx.kernel(lf, theta) {
        Ok(k) => k,
        Err(e) if e.is_numerical() => return Ok(Outcome::Skipped(e.to_string())),
        Err(e) => return Err(e),
    };
    let attempt = |rank: usize| match evaluate(kind, &kernel, rank) {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(Error::KernelInvariant(format!("non-finite index value {v}"))),
        Err(e) => Err(e),
    };
    let outcome = match attempt(r) {
        Err(Error::DegenerateGap { .. }) if r > 1 => attempt(r - 1).map(|value| (value, Some(r - 1))),
        other => other.map(|value| (value, None)),
    };
    match outcome {
        Ok((value, fallback_rank)) => Ok(Outcome::Value { value, fallback_rank }),
        Err(e) if e.is_numerical() => Ok(Outcome::Skipped(e.to_string())),
        Err(e) => Err(e),
    }
}

fn run_in_pool<T: Send>(width: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    #[cfg(feature = "parallel")]
    {
        if width == 0 {
            return Ok(job());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(width)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("cannot build thread pool: {e}")))?;
        Ok(pool.install(job))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = width;
        Ok(job())
    }
}

fn map_ordered<I: Sync, T: Send>(items: &[I], f: impl Fn(&I) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Position of the largest value; the first one wins ties.
fn argmax(values: impl Iterator<Item = Option<f64>>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best
}

/// Greedy iterative localization.
pub fn localize_iterative(
    lf: &LeadField,
    r_cov: &Covariance,
    n_cov: &Covariance,
    cfg: &LocalizeConfig,
) -> Result<LocalizationResult> {
    check_dimensions(lf, r_cov, n_cov, cfg.n_sources, cfg.rank)?;
    let ctx = KernelContext::new(r_cov, n_cov)?;
    run_in_pool(cfg.parallel_width, || greedy(&ctx, lf, cfg))?
}

fn greedy(ctx: &KernelContext, lf: &LeadField, cfg: &LocalizeConfig) -> Result<LocalizationResult> {
    let mut selected: Vec<usize> = Vec::with_capacity(cfg.n_sources);
    let mut trace = Vec::with_capacity(cfg.n_sources);
    let mut skipped = Vec::new();
    let mut rank_fallbacks = Vec::new();

    for step in 1..=cfg.n_sources {
        let candidates: Vec<usize> = (0..lf.n_sources()).filter(|i| !selected.contains(i)).collect();
        let outcomes = map_ordered(&candidates, |&i| {
            let mut theta = selected.clone();
            theta.push(i);
            score(ctx, lf, &SourceSet::from_unchecked(theta), cfg.index_kind, cfg.rank)
        });
        let mut values = Vec::with_capacity(candidates.len());
        for (&candidate, outcome) in candidates.iter().zip(outcomes) {
            match outcome? {
                Outcome::Value { value, fallback_rank } => {
                    if let Some(rank) = fallback_rank {
                        warn!("step {step}: candidate {candidate} evaluated at rank {rank} after a degenerate gap");
                        rank_fallbacks.push(RankFallback { step, candidate, rank });
                    }
                    values.push(Some(value));
                }
                Outcome::Skipped(reason) => {
                    debug!("step {step}: skipping candidate {candidate}: {reason}");
                    skipped.push(SkippedCandidate {
                        step,
                        candidate,
                        reason,
                    });
                    values.push(None);
                }
            }
        }
        let (pos, best_value) = argmax(values.iter().copied()).ok_or(Error::AllCandidatesDegenerate(step))?;
        let chosen = candidates[pos];
        selected.push(chosen);
        trace.push(TraceEntry {
            step,
            selected: chosen,
            best_value,
            candidates: cfg.record_candidates.then(|| {
                candidates
                    .iter()
                    .zip(&values)
                    .map(|(&candidate, &value)| CandidateValue { candidate, value })
                    .collect()
            }),
        });
    }

    Ok(LocalizationResult {
        sources: selected,
        index_trace: trace,
        index_kind: cfg.index_kind,
        rank_used: cfg.rank,
        skipped,
        rank_fallbacks,
    })
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Exhaustive search over every `n_sources`-subset. The lexicographically first maximizer wins ties.
pub fn localize_bruteforce(
    lf: &LeadField,
    r_cov: &Covariance,
    n_cov: &Covariance,
    cfg: &LocalizeConfig,
    combo_limit: u128,
) -> Result<LocalizationResult> {
    check_dimensions(lf, r_cov, n_cov, cfg.n_sources, cfg.rank)?;
    let (s, l) = (lf.n_sources(), cfg.n_sources);
    let count = binomial(s, l);
    if count > combo_limit {
        return Err(Error::ComboLimitExceeded {
            s,
            l,
            count,
            limit: combo_limit,
        });
    }
    let ctx = KernelContext::new(r_cov, n_cov)?;
    let combos = combinations(s, l);
    let outcomes = run_in_pool(cfg.parallel_width, || {
        map_ordered(&combos, |c| {
            score(&ctx, lf, &SourceSet::from_unchecked(c.clone()), cfg.index_kind, cfg.rank)
        })
    })?;

    let mut values = Vec::with_capacity(combos.len());
    let mut skipped = Vec::new();
    let mut rank_fallbacks = Vec::new();
    for (pos, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            Outcome::Value { value, fallback_rank } => {
                if let Some(rank) = fallback_rank {
                    rank_fallbacks.push(RankFallback {
                        step: l,
                        candidate: pos,
                        rank,
                    });
                }
                values.push(Some(value));
            }
            Outcome::Skipped(reason) => {
                skipped.push(SkippedCandidate {
                    step: l,
                    candidate: pos,
                    reason,
                });
                values.push(None);
            }
        }
    }
    let (pos, best_value) = argmax(values.iter().copied()).ok_or(Error::AllCandidatesDegenerate(l))?;
    Ok(LocalizationResult {
        sources: combos[pos].clone(),
        index_trace: vec![TraceEntry {
            step: l,
            selected: pos,
            best_value,
            candidates: None,
        }],
        index_kind: cfg.index_kind,
        rank_used: cfg.rank,
        skipped,
        rank_fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::IndexKernel;
    use crate::model::{synth_scenario, ScenarioSpec};

    #[test]
    fn binomials() {
        assert_eq!(binomial(12, 3), 220);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(binomial(1000, 500), u128::MAX);
    }

    #[test]
    fn lexicographic_combinations() {
        let c = combinations(4, 2);
        assert_eq!(c, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax([Some(1.0), Some(2.0), Some(2.0)].into_iter()), Some((1, 2.0)));
        assert_eq!(argmax([None, None].into_iter()), None);
    }

    #[test]
    fn recovers_two_separated_sources() {
        let sc = synth_scenario(&ScenarioSpec::new(10, 12, vec![1.0, 0.8], 11).separation(30.0)).unwrap();
        let cfg = LocalizeConfig::new(IndexKind::MpzMvp, 2, 2);
        let res = localize_iterative(&sc.leadfield, &sc.data, &sc.noise, &cfg).unwrap();
        let found = SourceSet::new(res.sources.clone(), 12).unwrap();
        assert!(found.same_set(&sc.true_sources));
        let bf = localize_bruteforce(&sc.leadfield, &sc.data, &sc.noise, &cfg, DEFAULT_COMBO_LIMIT).unwrap();
        assert!(SourceSet::new(bf.sources, 12).unwrap().same_set(&sc.true_sources));
    }

    #[test]
    fn single_source_is_direct_argmax() {
        let sc = synth_scenario(&ScenarioSpec::new(8, 10, vec![1.3], 2)).unwrap();
        let cfg = LocalizeConfig::new(IndexKind::Mai, 1, 1).recording(true);
        let res = localize_iterative(&sc.leadfield, &sc.data, &sc.noise, &cfg).unwrap();
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..10 {
            let k = IndexKernel::build(&sc.leadfield, &SourceSet::new(vec![i], 10).unwrap(), &sc.data, &sc.noise);
            if let Ok(k) = k {
                let v = crate::indices::mai(&k);
                if v > best.1 {
                    best = (i, v);
                }
            }
        }
        assert_eq!(res.sources, vec![best.0]);
        assert_eq!(res.index_trace[0].candidates.as_ref().unwrap().len(), 10);
    }

    #[test]
    fn forced_outcome_when_all_sources_requested() {
        let sc = synth_scenario(&ScenarioSpec::new(6, 3, vec![1.0, 1.0, 1.0], 4)).unwrap();
        let cfg = LocalizeConfig::new(IndexKind::Mai, 3, 3);
        let res = localize_iterative(&sc.leadfield, &sc.data, &sc.noise, &cfg).unwrap();
        let mut sorted = res.sources.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
        let bf = localize_bruteforce(&sc.leadfield, &sc.data, &sc.noise, &cfg, 1).unwrap();
        assert_eq!(bf.sources, vec![0, 1, 2]);
    }

    #[test]
    fn dimension_and_limit_errors() {
        let sc = synth_scenario(&ScenarioSpec::new(6, 12, vec![1.0], 4)).unwrap();
        let bad_rank = LocalizeConfig::new(IndexKind::MaiMvp, 2, 3);
        assert!(matches!(
            localize_iterative(&sc.leadfield, &sc.data, &sc.noise, &bad_rank),
            Err(Error::InfeasibleDimensions(_))
        ));
        let too_many = LocalizeConfig::new(IndexKind::Mai, 6, 1);
        assert!(matches!(
            localize_iterative(&sc.leadfield, &sc.data, &sc.noise, &too_many),
            Err(Error::InfeasibleDimensions(_))
        ));
        let cfg = LocalizeConfig::new(IndexKind::Mai, 3, 3);
        assert!(matches!(
            localize_bruteforce(&sc.leadfield, &sc.data, &sc.noise, &cfg, 100),
            Err(Error::ComboLimitExceeded { count: 220, .. })
        ));
    }

    #[test]
    fn width_does_not_change_result() {
        let sc = synth_scenario(&ScenarioSpec::new(10, 12, vec![1.0, 0.7, 0.5], 21)).unwrap();
        let base = LocalizeConfig::new(IndexKind::MpzMvp, 3, 2).recording(true);
        let one = localize_iterative(&sc.leadfield, &sc.data, &sc.noise, &base.width(1)).unwrap();
        let four = localize_iterative(&sc.leadfield, &sc.data, &sc.noise, &base.width(4)).unwrap();
        assert_eq!(one.to_json(), four.to_json());
    }
}
