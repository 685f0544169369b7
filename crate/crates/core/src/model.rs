//! Forward model and covariance data model.
//!
//! Measurements follow `y = H₀ q₀ + n` with `q₀` and `n` uncorrelated,
//! zero-mean and weakly stationary, so the data covariance is
//!
//! ```text
//! R = H₀ Q₀ H₀ᵗ + N
//! ```
//!
//! Sources have fixed orientation: one lead-field column per candidate.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Mat, Power};

/// Smallest-to-largest singular value ratio below which a column subset is rank deficient.
pub const SUBSET_RANK_TOL: f64 = 1e-10;
/// Conditioning guard for synthetic true-source lead fields.
pub const SYNTH_CONDITION_GUARD: f64 = 0.05;

const COV_SYMMETRY_TOL: f64 = 1e-10;
const COV_PSD_TOL: f64 = 1e-10;
const MAX_REDRAWS: usize = 10_000;

/// Sensor gains of every fixed-orientation candidate source, `m × s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadField {
    gains: Mat,
    channel_names: Vec<String>,
    source_positions: Option<Vec<[f64; 3]>>,
}

impl LeadField {
    /// Lead field with generated channel names `CH001`, `CH002`, ...
    pub fn new(gains: Mat) -> Result<Self> {
        let names = (1..=gains.nrows()).map(|i| format!("CH{i:03}")).collect();
        Self::with_metadata(gains, names, None)
    }

    pub fn with_metadata(
        gains: Mat,
        channel_names: Vec<String>,
        source_positions: Option<Vec<[f64; 3]>>,
    ) -> Result<Self> {
        let (m, s) = gains.shape();
        if m < 2 || s < 1 {
            return Err(Error::InvalidLeadField(format!(
                "need at least 2 channels and 1 source, got {m}x{s}"
            )));
        }
        if channel_names.len() != m {
            return Err(Error::InvalidLeadField(format!(
                "{} channel names for {m} channels",
                channel_names.len()
            )));
        }
        if let Some(pos) = &source_positions {
            if pos.len() != s {
                return Err(Error::InvalidLeadField(format!(
                    "{} source positions for {s} sources",
                    pos.len()
                )));
            }
        }
        if gains.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidLeadField("non-finite gain".into()));
        }
        for j in 0..s {
            if gains.column(j).iter().all(|&x| x == 0.0) {
                return Err(Error::InvalidLeadField(format!("column {j} is all zeros")));
            }
        }
        Ok(Self {
            gains,
            channel_names,
            source_positions,
        })
    }

    /// Random lead field whose columns are uniform on the unit sphere of `R^m`.
    pub fn random_unit_sphere(m: usize, s: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut gains = Mat::zeros(m, s);
        for j in 0..s {
            gains.set_column(j, &random_unit_vector(m, rng));
        }
        Self::new(gains)
    }

    pub fn gains(&self) -> &Mat {
        &self.gains
    }

    pub fn n_channels(&self) -> usize {
        self.gains.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.gains.ncols()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn source_positions(&self) -> Option<&[[f64; 3]]> {
        self.source_positions.as_deref()
    }
}

fn random_unit_vector(m: usize, rng: &mut impl Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Ordered list of distinct candidate-source indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceSet(Vec<usize>);

impl SourceSet {
    /// Validates distinctness and that each index is below `n_sources`.
    pub fn new(indices: Vec<usize>, n_sources: usize) -> Result<Self> {
        for (pos, &i) in indices.iter().enumerate() {
            if i >= n_sources {
                return Err(Error::InvalidSourceSet(format!(
                    "index {i} out of range for {n_sources} candidate sources"
                )));
            }
            if indices[..pos].contains(&i) {
                return Err(Error::InvalidSourceSet(format!("duplicate index {i}")));
            }
        }
        Ok(Self(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.contains(&i)
    }

    /// Set equality, ignoring order.
    pub fn same_set(&self, other: &SourceSet) -> bool {
        let mut a = self.0.clone();
        let mut b = other.0.clone();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }

    pub(crate) fn from_unchecked(v: Vec<usize>) -> SourceSet {
        SourceSet(v)
    }
}

/// Columns of the lead field at the given sources, in source-set order.
///
/// Fails with [`Error::RankDeficientSubset`] when the columns are not linearly
/// independent (`σ_min ≤ 1e-10 σ_max`).
pub fn subset_leadfield(lf: &LeadField, theta: &SourceSet) -> Result<Mat> {
    let (m, s) = lf.gains.shape();
    if theta.is_empty() {
        return Err(Error::InvalidSourceSet("empty source set".into()));
    }
    if let Some(&bad) = theta.indices().iter().find(|&&i| i >= s) {
        return Err(Error::InvalidSourceSet(format!(
            "index {bad} out of range for {s} candidate sources"
        )));
    }
    if theta.len() > m {
        return Err(Error::InvalidSourceSet(format!(
            "{} sources exceed {m} channels",
            theta.len()
        )));
    }
    let h = lf.gains.select_columns(theta.indices());
    let ratio = numerics::singular_ratio(&h);
    if !(ratio > SUBSET_RANK_TOL) {
        return Err(Error::RankDeficientSubset {
            indices: theta.indices().to_vec(),
            ratio,
        });
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovKind {
    /// Data covariance `R`.
    Data,
    /// Noise covariance `N`.
    Noise,
}

impl std::fmt::Display for CovKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovKind::Data => "data",
            CovKind::Noise => "noise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Regularization {
    pub gamma: f64,
    pub applied: bool,
}

/// Symmetric PSD `m × m` covariance with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    matrix: Mat,
    kind: CovKind,
    regularization: Regularization,
    n_samples: usize,
}

impl Covariance {
    /// Analytic covariance (`n_samples = 0`).
    pub fn new(matrix: Mat, kind: CovKind) -> Result<Self> {
        Self::from_samples(matrix, kind, 0)
    }

    pub fn from_samples(matrix: Mat, kind: CovKind, n_samples: usize) -> Result<Self> {
        numerics::check_symmetric(&matrix, COV_SYMMETRY_TOL)?;
        let matrix = numerics::symmetrized(&matrix);
        let eig = numerics::sym_eig(&matrix)?;
        if eig.min() < -COV_PSD_TOL * eig.max().abs().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: eig.min(),
            });
        }
        Ok(Self {
            matrix,
            kind,
            regularization: Regularization::default(),
            n_samples,
        })
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn kind(&self) -> CovKind {
        self.kind
    }

    pub fn regularization(&self) -> Regularization {
        self.regularization
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(numerics::sym_eig(&self.matrix)?.min())
    }

    /// Fails with [`Error::NotPositiveDefinite`] unless strictly PD.
    pub fn ensure_positive_definite(&self) -> Result<()> {
        let eig = numerics::sym_eig(&self.matrix)?;
        if !(eig.max() > 0.0) || eig.min() <= numerics::EPS_PSD * eig.max() {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: eig.min(),
            });
        }
        Ok(())
    }

    pub fn with_kind(mut self, kind: CovKind) -> Self {
        self.kind = kind;
        self
    }
}

/// Scaled diagonal loading: `C + gamma * (tr(C)/m) * I`.
pub fn regularize(c: &Covariance, gamma: f64) -> Result<Covariance> {
    if !(gamma >= 0.0) {
        return Err(Error::NegativeGamma(gamma));
    }
    let m = c.dim();
    let load = gamma * c.matrix.trace() / m as f64;
    let mut out = c.clone();
    for i in 0..m {
        out.matrix[(i, i)] += load;
    }
    out.regularization = Regularization {
        gamma,
        applied: true,
    };
    Ok(out)
}

/// Epoched sensor data: `n_epochs` matrices of shape `m × n_times`.
#[derive(Debug, Clone, PartialEq)]
pub struct Epochs {
    data: Vec<Mat>,
    sfreq: f64,
    t0: f64,
}

impl Epochs {
    pub fn new(data: Vec<Mat>, sfreq: f64, t0: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidParameter("at least one epoch is required".into()));
        }
        if !(sfreq > 0.0) || !t0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sampling frequency must be positive and t0 finite (sfreq={sfreq}, t0={t0})"
            )));
        }
        let shape = data[0].shape();
        if shape.1 < 2 {
            return Err(Error::InvalidParameter("epochs need at least 2 time samples".into()));
        }
        if let Some(bad) = data.iter().find(|e| e.shape() != shape) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", shape.0, shape.1),
                found: format!("{}x{}", bad.nrows(), bad.ncols()),
            });
        }
        Ok(Self { data, sfreq, t0 })
    }

    pub fn data(&self) -> &[Mat] {
        &self.data
    }

    pub fn sfreq(&self) -> f64 {
        self.sfreq
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn n_epochs(&self) -> usize {
        self.data.len()
    }

    pub fn n_channels(&self) -> usize {
        self.data[0].nrows()
    }

    pub fn n_times(&self) -> usize {
        self.data[0].ncols()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.sfreq
    }

    /// Sample indices with `start ≤ t ≤ end` (half-sample-free inclusive bounds).
    pub fn window_indices(&self, start: f64, end: f64) -> Vec<usize> {
        let tol = 1e-9 / self.sfreq;
        (0..self.n_times())
            .filter(|&k| {
                let t = self.time(k);
                t >= start - tol && t <= end + tol
            })
            .collect()
    }
}

/// Unbiased covariance of all in-window samples across epochs.
///
/// Each channel is de-meaned over the pooled window samples; the divisor is `n - 1`.
pub fn sample_covariance(epochs: &Epochs, window: [f64; 2], kind: CovKind) -> Result<Covariance> {
    let [start, end] = window;
    let idx = if start <= end {
        epochs.window_indices(start, end)
    } else {
        Vec::new()
    };
    if idx.is_empty() {
        return Err(Error::EmptyWindow { start, end });
    }
    let n = idx.len() * epochs.n_epochs();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let m = epochs.n_channels();
    let mut pooled = Mat::zeros(m, n);
    for (e, ep) in epochs.data.iter().enumerate() {
        for (j, &k) in idx.iter().enumerate() {
            pooled.set_column(e * idx.len() + j, &ep.column(k));
        }
    }
    covariance_of_columns(&pooled, kind)
}

/// Unbiased covariance of the columns of `samples` (`m × n`), de-meaned per row.
pub fn covariance_of_columns(samples: &Mat, kind: CovKind) -> Result<Covariance> {
    let (m, n) = samples.shape();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mut centered = samples.clone();
    for i in 0..m {
        let mean = centered.row(i).sum() / n as f64;
        centered.row_mut(i).add_scalar_mut(-mean);
    }
    let c = (&centered * centered.transpose()) / (n as f64 - 1.0);
    Covariance::from_samples(numerics::symmetrized(&c), kind, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// `N = I_m`.
    White,
    /// Seeded dense SPD noise covariance normalized to `tr(N) = m`.
    SeededSpd,
}

/// Parameters of a synthetic ground-truth scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub m: usize,
    pub s: usize,
    pub l0: usize,
    /// Source amplitudes; `Q₀` has diagonal `source_snr²`.
    pub source_snr: Vec<f64>,
    pub noise_kind: NoiseKind,
    /// Pairwise correlation coefficient between sources, in `[0, 1)`.
    pub correlation: f64,
    /// Minimum angle in degrees between any two true-source lead-field columns (0 disables).
    #[serde(default)]
    pub min_separation_deg: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(m: usize, s: usize, source_snr: Vec<f64>, seed: u64) -> Self {
        Self {
            m,
            s,
            l0: source_snr.len(),
            source_snr,
            noise_kind: NoiseKind::White,
            correlation: 0.0,
            min_separation_deg: 0.0,
            seed,
        }
    }

    pub fn noise(mut self, kind: NoiseKind) -> Self {
        self.noise_kind = kind;
        self
    }

    pub fn correlation(mut self, rho: f64) -> Self {
        self.correlation = rho;
        self
    }

    pub fn separation(mut self, degrees: f64) -> Self {
        self.min_separation_deg = degrees;
        self
    }
}

/// A fully specified synthetic instance with analytic covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub leadfield: LeadField,
    pub true_sources: SourceSet,
    /// Source covariance `Q₀` (`l₀ × l₀`, SPD).
    pub q0: Mat,
    /// Noise covariance `N`.
    pub noise: Covariance,
    /// Data covariance `R = H₀ Q₀ H₀ᵗ + N`.
    pub data: Covariance,
    pub seed: u64,
}

impl Scenario {
    /// Assembles a scenario, computing `R` from the other parts.
    pub fn assemble(
        leadfield: LeadField,
        true_sources: SourceSet,
        q0: Mat,
        noise: Covariance,
        seed: u64,
    ) -> Result<Self> {
        let h0 = subset_leadfield(&leadfield, &true_sources)?;
        if q0.shape() != (h0.ncols(), h0.ncols()) {
            return Err(Error::DimensionMismatch {
                expected: format!("{0}x{0} source covariance", h0.ncols()),
                found: format!("{}x{}", q0.nrows(), q0.ncols()),
            });
        }
        let q_eig = numerics::sym_eig(&q0)?;
        if q_eig.min() <= 0.0 {
            return Err(Error::Q0NotPD(q_eig.min()));
        }
        if noise.dim() != leadfield.n_channels() {
            return Err(Error::DimensionMismatch {
                expected: format!("{0}x{0} noise covariance", leadfield.n_channels()),
                found: format!("{0}x{0}", noise.dim()),
            });
        }
        let signal = numerics::symmetrized(&(&h0 * &q0 * h0.transpose()));
        let r = Covariance::new(signal + noise.matrix(), CovKind::Data)?;
        Ok(Self {
            leadfield,
            true_sources,
            q0,
            noise: noise.with_kind(CovKind::Noise),
            data: r,
            seed,
        })
    }

    pub fn l0(&self) -> usize {
        self.true_sources.len()
    }

    /// `H₀`, the lead field restricted to the true sources.
    pub fn h0(&self) -> Mat {
        self.leadfield.gains().select_columns(self.true_sources.indices())
    }

    /// `H̃₀ = H₀ Q₀^{1/2}`, the gain matrix of the equivalent model with unit-covariance sources.
    pub fn whitened_gains(&self) -> Result<Mat> {
        Ok(self.h0() * numerics::psd_power(&self.q0, Power::Sqrt)?)
    }
}

/// Builds a seeded synthetic scenario.
///
/// True-source columns are re-drawn until `σ_min(H₀) > 0.05 σ_max(H₀)` and,
/// when requested, every pair of true-source columns is at least
/// `min_separation_deg` apart.
pub fn synth_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    let ScenarioSpec {
        m,
        s,
        l0,
        ref source_snr,
        noise_kind,
        correlation,
        min_separation_deg,
        seed,
    } = *spec;
    if l0 < 1 || l0 + 1 > m || l0 > s {
        return Err(Error::InfeasibleDimensions(format!(
            "need 1 <= l0 <= min(m-1, s), got m={m}, s={s}, l0={l0}"
        )));
    }
    if source_snr.len() != l0 {
        return Err(Error::InvalidParameter(format!(
            "{} source amplitudes for {l0} sources",
            source_snr.len()
        )));
    }
    if source_snr.iter().any(|&q| !(q > 0.0) || !q.is_finite()) {
        return Err(Error::InvalidParameter("source amplitudes must be positive".into()));
    }
    if !(0.0..1.0).contains(&correlation) {
        return Err(Error::InvalidParameter(format!(
            "correlation must lie in [0, 1), got {correlation}"
        )));
    }
    if !(0.0..90.0).contains(&min_separation_deg) {
        return Err(Error::InvalidParameter(format!(
            "separation must lie in [0, 90) degrees, got {min_separation_deg}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gains = LeadField::random_unit_sphere(m, s, &mut rng)?.gains;

    let mut pool: Vec<usize> = (0..s).collect();
    let mut sources = Vec::with_capacity(l0);
    for _ in 0..l0 {
        let k = rng.random_range(0..pool.len());
        sources.push(pool.swap_remove(k));
    }

    let max_cos = min_separation_deg.to_radians().cos();
    let mut accepted = false;
    for _ in 0..MAX_REDRAWS {
        let h0 = gains.select_columns(&sources);
        if numerics::singular_ratio(&h0) > SYNTH_CONDITION_GUARD && separated(&h0, max_cos) {
            accepted = true;
            break;
        }
        for &j in &sources {
            gains.set_column(j, &random_unit_vector(m, &mut rng));
        }
    }
    if !accepted {
        return Err(Error::InfeasibleDimensions(format!(
            "could not draw {l0} well-conditioned sources in R^{m} with separation {min_separation_deg} deg"
        )));
    }

    let mut q0 = Mat::zeros(l0, l0);
    for i in 0..l0 {
        for j in 0..l0 {
            let qi = source_snr[i] * source_snr[i];
            let qj = source_snr[j] * source_snr[j];
            q0[(i, j)] = if i == j { qi } else { correlation * (qi * qj).sqrt() };
        }
    }
    let q_min = numerics::sym_eig(&q0)?.min();
    if q_min <= 0.0 {
        return Err(Error::Q0NotPD(q_min));
    }

    let noise = match noise_kind {
        NoiseKind::White => Mat::identity(m, m),
        NoiseKind::SeededSpd => seeded_spd_noise(m, &mut rng),
    };
    let noise = Covariance::new(noise, CovKind::Noise)?;
    Scenario::assemble(
        LeadField::new(gains)?,
        SourceSet::from_unchecked(sources),
        q0,
        noise,
        seed,
    )
}

fn separated(h0: &Mat, max_cos: f64) -> bool {
    let l = h0.ncols();
    for i in 0..l {
        for j in (i + 1)..l {
            let a = h0.column(i);
            let b = h0.column(j);
            let cos = a.dot(&b).abs() / (a.norm() * b.norm());
            if cos > max_cos {
                return false;
            }
        }
    }
    true
}

/// Dense SPD matrix `B Bᵗ / (2m) + I/2`, rescaled so that `tr = m`.
fn seeded_spd_noise(m: usize, rng: &mut impl Rng) -> Mat {
    let b = Mat::from_fn(m, 2 * m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut n = &b * b.transpose() / (2 * m) as f64 + Mat::identity(m, m) * 0.5;
    let scale = m as f64 / n.trace();
    n *= scale;
    numerics::symmetrized(&n)
}

/// Draws `n` independent measurement vectors `y = H₀ q₀ + n` (or noise only), `m × n`.
pub fn draw_samples(scenario: &Scenario, n: usize, with_signal: bool, rng: &mut impl Rng) -> Result<Mat> {
    let m = scenario.leadfield.n_channels();
    let noise_half = numerics::psd_power(scenario.noise.matrix(), Power::Sqrt)?;
    let z = Mat::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut y = noise_half * z;
    if with_signal {
        let l0 = scenario.l0();
        let src = scenario.whitened_gains()?;
        let u = Mat::from_fn(l0, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        y += src * u;
    }
    Ok(y)
}

/// Layout of simulated epochs: samples with `t < 0` carry noise only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochDesign {
    pub n_epochs: usize,
    pub n_times: usize,
    pub sfreq: f64,
    pub t0: f64,
    pub seed: u64,
}

/// Simulates epochs from a scenario: pre-stimulus noise, post-stimulus signal plus noise.
pub fn simulate_epochs(scenario: &Scenario, design: &EpochDesign) -> Result<Epochs> {
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let m = scenario.leadfield.n_channels();
    let mut data = Vec::with_capacity(design.n_epochs);
    let n_pre = (0..design.n_times)
        .filter(|&k| design.t0 + (k as f64) / design.sfreq < 0.0)
        .count();
    for _ in 0..design.n_epochs {
        let mut ep = Mat::zeros(m, design.n_times);
        if n_pre > 0 {
            let pre = draw_samples(scenario, n_pre, false, &mut rng)?;
            ep.columns_mut(0, n_pre).copy_from(&pre);
        }
        if design.n_times > n_pre {
            let post = draw_samples(scenario, design.n_times - n_pre, true, &mut rng)?;
            ep.columns_mut(n_pre, design.n_times - n_pre).copy_from(&post);
        }
        data.push(ep);
    }
    Epochs::new(data, design.sfreq, design.t0)
}

/// Data covariance when sources and noise are correlated,
/// `R = H₀Q₀H₀ᵗ + N + H₀C + CᵗH₀ᵗ` with `C = ρ Q₀^{1/2} Z N^{1/2}` and `Z` having
/// orthonormal rows. The joint covariance stays PSD for `|ρ| < 1`.
pub fn correlated_data_covariance(scenario: &Scenario, rho: f64, seed: u64) -> Result<Covariance> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("|rho| must be < 1, got {rho}")));
    }
    let m = scenario.leadfield.n_channels();
    let l0 = scenario.l0();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Mat::from_fn(m, l0, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z = g.qr().q().transpose();
    let cross = numerics::psd_power(&scenario.q0, Power::Sqrt)?
        * z
        * numerics::psd_power(scenario.noise.matrix(), Power::Sqrt)?
        * rho;
    let h0 = scenario.h0();
    let hc = &h0 * &cross;
    let r = scenario.data.matrix() + &hc + hc.transpose();
    Covariance::new(numerics::symmetrized(&r), CovKind::Data)
}
