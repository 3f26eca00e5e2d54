//! Seeded experiment harness: planted instances, noise, trials, campaigns.
//!
//! Trial `i` of a campaign uses a PCG-64 generator seeded with `seed + i`,
//! so every report field except wall-clock runtime is a pure function of the
//! configuration.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dictionaries::{
    blackbody_atoms, bspline_atoms_with_step, gaussian_pulse_atoms, oscillator_atoms, spectrum_grid,
    DEFAULT_KNOT_SPACING, DEFAULT_PULSE_SHARPNESS, DEFAULT_PULSE_SPACING, DEFAULT_TEMPERATURES,
};
use crate::error::{Error, Result};
use crate::hilbert::{SampledSignal, SamplingGrid, DEFAULT_ACCEPT_TOL, DEFAULT_PINV_REL_TOL};
use crate::oblique::{build_oblique_batch, Dictionary};
use crate::pursuit::{run_pursuit, DecompositionResult, NonNegative, PursuitParams, TerminationReason};

/// Relative size of single-precision rounding, `2^-24`.
pub const SINGLE_PRECISION_UNIT: f64 = 5.960_464_477_539_063e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Oscillators,
    Spectrum,
}

/// How the noise percentage maps to the per-sample distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NoiseMode {
    /// `σ_t = (p/100)·|f_t|`.
    #[default]
    #[serde(rename = "stddev")]
    StdDevPercent,
    /// `σ_t² = (p/100)·|f_t|`.
    #[serde(rename = "variance")]
    VariancePercent,
}

/// Problem definition shared by every trial of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Experiment,
    pub seed: u64,
    pub trials: usize,
    pub grid_points: usize,
    /// Planted sparsity K.
    pub sparsity: usize,
    pub single_precision: bool,
    /// A trial succeeds when the support is exact and the relative error of
    /// the recovered component is at most this.
    pub success_threshold: f64,
    /// Campaign passes when the success rate reaches this.
    pub min_success_rate: f64,
    pub coeff_min: f64,
    pub coeff_max: f64,

    // oscillators
    pub freq_min: u32,
    pub freq_max: u32,
    pub pulse_count: usize,
    pub pulse_spacing: f64,
    pub pulse_sharpness: f64,
    pub active_pulses: usize,
    pub pulse_amp_min: f64,
    pub pulse_amp_max: f64,

    // spectrum
    pub domain_length: f64,
    pub knot_spacing: f64,
    pub translate_step: f64,
    pub temperatures: Vec<f64>,
    /// Peak height of the summed blackbody background.
    pub background_peak: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: Experiment::Oscillators,
            seed: 1,
            trials: 20,
            grid_points: 2001,
            sparsity: 20,
            single_precision: true,
            success_threshold: 1e-4,
            min_success_rate: 0.95,
            coeff_min: 0.1,
            coeff_max: 1.0,
            freq_min: 1,
            freq_max: 100,
            pulse_count: 100,
            pulse_spacing: DEFAULT_PULSE_SPACING,
            pulse_sharpness: DEFAULT_PULSE_SHARPNESS,
            active_pulses: 50,
            pulse_amp_min: 0.1,
            pulse_amp_max: 1.0,
            domain_length: 3.0,
            knot_spacing: DEFAULT_KNOT_SPACING,
            translate_step: DEFAULT_KNOT_SPACING,
            temperatures: DEFAULT_TEMPERATURES.to_vec(),
            background_peak: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub percent: f64,
    pub mode: NoiseMode,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            percent: 0.0,
            mode: NoiseMode::StdDevPercent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PursuitConfig {
    /// Forward-selection budget r; defaults to twice the planted sparsity,
    /// capped at the dictionary size.
    pub max_rank: Option<usize>,
    /// Fixed stopping residual; when absent it is `delta_eta · √N · σ̂`.
    pub delta: Option<f64>,
    pub delta_eta: f64,
    pub accept_tol: f64,
    pub pinv_rel_tol: f64,
    pub max_swap_stage: usize,
    pub nonneg: bool,
}

impl Default for PursuitConfig {
    fn default() -> Self {
        Self {
            max_rank: None,
            delta: None,
            delta_eta: 1.0,
            accept_tol: DEFAULT_ACCEPT_TOL,
            pinv_rel_tol: DEFAULT_PINV_REL_TOL,
            max_swap_stage: 2,
            nonneg: false,
        }
    }
}

/// Everything a trial or campaign needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub experiment: ExperimentConfig,
    pub noise: NoiseConfig,
    pub pursuit: PursuitConfig,
}

impl TrialConfig {
    /// K=20 of 100 oscillators, 50 of 100 pulses, 2001 points, single precision.
    pub fn oscillators_desk() -> Self {
        Self::default()
    }

    /// K=12 of 51 B-splines on `[0, 3]` over a five-blackbody background,
    /// 1% per-sample noise.
    pub fn spectrum_desk() -> Self {
        let mut cfg = Self::default();
        let e = &mut cfg.experiment;
        e.kind = Experiment::Spectrum;
        e.grid_points = 3000;
        e.sparsity = 12;
        e.single_precision = false;
        e.success_threshold = 0.03;
        e.min_success_rate = 0.9;
        e.coeff_min = 0.0;
        e.coeff_max = 1.0;
        cfg.noise = NoiseConfig {
            percent: 1.0,
            mode: NoiseMode::StdDevPercent,
        };
        // At η = 1, δ equals the expected residual of the true support and
        // the forward phase often stops on a wrong one.
        cfg.pursuit.delta_eta = 0.5;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if e.trials == 0 {
            return bad("trials must be ≥ 1".into());
        }
        if e.sparsity == 0 {
            return bad("sparsity must be ≥ 1".into());
        }
        if !(self.noise.percent >= 0.0) {
            return bad(format!("noise percent must be ≥ 0, got {}", self.noise.percent));
        }
        if !(e.coeff_min <= e.coeff_max) {
            return bad("coeff_min must not exceed coeff_max".into());
        }
        match e.kind {
            Experiment::Oscillators => {
                if e.freq_min == 0 || e.freq_max < e.freq_min {
                    return bad(format!("invalid frequency range [{}, {}]", e.freq_min, e.freq_max));
                }
                let m = (e.freq_max - e.freq_min + 1) as usize;
                if e.sparsity > m {
                    return bad(format!("sparsity {} exceeds dictionary size {m}", e.sparsity));
                }
                if e.active_pulses > e.pulse_count {
                    return bad(format!(
                        "active_pulses {} exceeds pulse_count {}",
                        e.active_pulses, e.pulse_count
                    ));
                }
                if !(e.pulse_amp_min <= e.pulse_amp_max) {
                    return bad("pulse_amp_min must not exceed pulse_amp_max".into());
                }
            }
            Experiment::Spectrum => {
                if !(e.background_peak >= 0.0) {
                    return bad("background_peak must be ≥ 0".into());
                }
            }
        }
        if let Some(r) = self.pursuit.max_rank {
            if r < e.sparsity {
                return bad(format!("max_rank {r} is below sparsity {}", e.sparsity));
            }
        }
        if let Some(d) = self.pursuit.delta {
            if !(d >= 0.0) {
                return bad("delta must be ≥ 0".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    pub fn grid(&self) -> Result<SamplingGrid> {
        let e = &self.experiment;
        match e.kind {
            Experiment::Oscillators => SamplingGrid::new(0.0, 1.0, e.grid_points),
            Experiment::Spectrum => spectrum_grid(e.domain_length, e.grid_points),
        }
    }

    /// `V` and `W⊥` spanning sets for this experiment.
    pub fn dictionaries(&self) -> Result<Workbench> {
        self.dictionaries_on(self.grid()?)
    }

    /// The experiment's dictionaries sampled on an arbitrary grid.
    pub fn dictionaries_on(&self, grid: SamplingGrid) -> Result<Workbench> {
        self.validate()?;
        let e = &self.experiment;
        let (v_atoms, wperp_atoms) = match e.kind {
            Experiment::Oscillators => {
                let freqs: Vec<u32> = (e.freq_min..=e.freq_max).collect();
                (
                    oscillator_atoms(&freqs, grid)?,
                    gaussian_pulse_atoms(e.pulse_count, e.pulse_spacing, e.pulse_sharpness, grid)?,
                )
            }
            Experiment::Spectrum => (
                bspline_atoms_with_step(e.domain_length, e.knot_spacing, e.translate_step, grid)?,
                blackbody_atoms(&e.temperatures, grid)?,
            ),
        };
        if e.sparsity > v_atoms.len() {
            return Err(Error::InvalidArgument(format!(
                "sparsity {} exceeds dictionary size {}",
                e.sparsity,
                v_atoms.len()
            )));
        }
        Ok(Workbench {
            v_atoms: Arc::new(v_atoms),
            wperp_atoms: Arc::new(wperp_atoms),
        })
    }

    /// Pursuit parameters for an observed signal.
    pub fn pursuit_params(&self, observed: &SampledSignal, atom_count: usize) -> PursuitParams {
        let p = &self.pursuit;
        let k = self.experiment.sparsity;
        PursuitParams {
            max_rank: p.max_rank.unwrap_or(2 * k).min(atom_count),
            sparsity: Some(k),
            delta: p.delta.unwrap_or_else(|| {
                p.delta_eta * (observed.len() as f64).sqrt() * self.noise_scale(observed)
            }),
            accept_tol: p.accept_tol,
            max_swap_stage: p.max_swap_stage,
            constraint: p
                .nonneg
                .then(|| Arc::new(NonNegative::default()) as Arc<dyn crate::pursuit::ReconstructionConstraint>),
        }
    }

    /// Per-sample noise scale `σ̂` implied by the configuration, combining
    /// the additive noise model with single-precision rounding.
    pub fn noise_scale(&self, observed: &SampledSignal) -> f64 {
        let n = observed.len() as f64;
        let rms = observed.norm() / n.sqrt();
        let frac = self.noise.percent / 100.0;
        let additive = match self.noise.mode {
            NoiseMode::StdDevPercent => frac * rms,
            NoiseMode::VariancePercent => {
                let mean_abs = observed.values().iter().map(|v| v.abs()).sum::<f64>() / n;
                (frac * mean_abs).sqrt()
            }
        };
        let rounding = if self.experiment.single_precision {
            SINGLE_PRECISION_UNIT * rms
        } else {
            0.0
        };
        additive.hypot(rounding)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Dictionaries built once and shared by all trials.
#[derive(Debug, Clone)]
pub struct Workbench {
    pub v_atoms: Arc<Dictionary>,
    pub wperp_atoms: Arc<Dictionary>,
}

/// Zero-mean normal perturbation with per-sample scale set by `mode`.
pub fn add_noise<R: Rng + ?Sized>(f: &SampledSignal, p: f64, mode: NoiseMode, rng: &mut R) -> Result<SampledSignal> {
    if !(p >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise percent must be ≥ 0, got {p}")));
    }
    if p == 0.0 {
        return Ok(f.clone());
    }
    let frac = p / 100.0;
    let standard = Normal::new(0.0, 1.0).expect("unit normal");
    let values = f.values().map(|v| {
        let sigma = match mode {
            NoiseMode::StdDevPercent => frac * v.abs(),
            NoiseMode::VariancePercent => (frac * v.abs()).sqrt(),
        };
        if sigma == 0.0 {
            v
        } else {
            v + sigma * standard.sample(rng)
        }
    });
    SampledSignal::from_vector(*f.grid(), values)
}

/// Ground truth and observation for one trial.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    /// Sorted planted indices into the `V` dictionary.
    pub support: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub f_v: SampledSignal,
    pub f_wperp: SampledSignal,
    /// `f_v + f_wperp` before noise and rounding.
    pub clean: SampledSignal,
    /// Additive noise, before rounding.
    pub noise: SampledSignal,
    pub observed: SampledSignal,
}

fn draw_support<R: Rng + ?Sized>(rng: &mut R, m: usize, k: usize) -> Vec<usize> {
    let mut s = sample(rng, m, k).into_vec();
    s.sort_unstable();
    s
}

fn draw_coeffs<R: Rng + ?Sized>(rng: &mut R, k: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..k)
        .map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) })
        .collect()
}

/// Draw a planted instance from `rng`.
pub fn plant_instance<R: Rng + ?Sized>(cfg: &TrialConfig, bench: &Workbench, rng: &mut R) -> Result<PlantedInstance> {
    let e = &cfg.experiment;
    let support = draw_support(rng, bench.v_atoms.len(), e.sparsity);
    let coeffs = draw_coeffs(rng, support.len(), e.coeff_min, e.coeff_max);
    let f_v = bench.v_atoms.combine(&support, &coeffs)?;
    let f_wperp = match e.kind {
        Experiment::Oscillators => {
            let active = draw_support(rng, bench.wperp_atoms.len(), e.active_pulses);
            let amps = draw_coeffs(rng, active.len(), e.pulse_amp_min, e.pulse_amp_max);
            bench.wperp_atoms.combine(&active, &amps)?
        }
        Experiment::Spectrum => {
            let all: Vec<usize> = (0..bench.wperp_atoms.len()).collect();
            let raw = bench.wperp_atoms.combine(&all, &vec![1.0; all.len()])?;
            let peak = raw.values().max();
            if peak > 0.0 {
                raw.scaled(e.background_peak / peak)
            } else {
                raw
            }
        }
    };
    let clean = f_v.add(&f_wperp)?;
    let noisy = add_noise(&clean, cfg.noise.percent, cfg.noise.mode, rng)?;
    let noise = noisy.sub(&clean)?;
    let observed = if e.single_precision {
        noisy.to_single_precision()
    } else {
        noisy
    };
    Ok(PlantedInstance {
        support,
        coeffs,
        f_v,
        f_wperp,
        clean,
        noise,
        observed,
    })
}

/// `||a - b|| / ||b||`, or `||a||` when `b = 0`.
pub fn relative_error(a: &SampledSignal, b: &SampledSignal) -> f64 {
    let diff: DVector<f64> = a.values() - b.values();
    let denom = b.norm();
    if denom > 0.0 {
        diff.norm() / denom
    } else {
        diff.norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub true_support: Vec<usize>,
    pub recovered_support: Vec<usize>,
    pub support_exact: bool,
    pub relative_l2_error: f64,
    pub residual: f64,
    pub delta: f64,
    pub swaps: usize,
    pub stage: usize,
    pub termination_reason: TerminationReason,
    pub success: bool,
    /// Minimum over maximum of the recovered component.
    pub min_over_max: f64,
    pub runtime_ms: f64,
}

/// A trial with its planted truth and full decomposition.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub report: TrialReport,
    pub instance: PlantedInstance,
    pub result: DecompositionResult,
}

fn run_trial_on(cfg: &TrialConfig, bench: &Workbench, trial: usize, seed: u64) -> Result<TrialOutcome> {
    let start = Instant::now();
    let mut rng = Pcg64::seed_from_u64(seed);
    let instance = plant_instance(cfg, bench, &mut rng)?;
    let params = cfg.pursuit_params(&instance.observed, bench.v_atoms.len());
    let result = run_pursuit(&bench.v_atoms, &bench.wperp_atoms, &instance.observed, &params)?;
    let mut recovered = result.selected.clone();
    recovered.sort_unstable();
    let support_exact = recovered == instance.support;
    let relative_l2_error = relative_error(&result.component_v, &instance.f_v);
    let v = result.component_v.values();
    let max = v.max();
    let min_over_max = if max > 0.0 { v.min() / max } else { 0.0 };
    let report = TrialReport {
        trial,
        seed,
        true_support: instance.support.clone(),
        recovered_support: recovered,
        support_exact,
        relative_l2_error,
        residual: result.final_residual,
        delta: params.delta,
        swaps: result.swaps_performed,
        stage: result.stage_reached,
        termination_reason: result.termination_reason,
        success: support_exact && relative_l2_error <= cfg.experiment.success_threshold,
        min_over_max,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(TrialOutcome {
        report,
        instance,
        result,
    })
}

fn check_kind(cfg: &TrialConfig, kind: Experiment) -> Result<()> {
    if cfg.experiment.kind == kind {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "config describes a {:?} experiment, not {kind:?}",
            cfg.experiment.kind
        )))
    }
}

/// One oscillator/pulse-noise trial.
pub fn run_oscillator_trial(cfg: &TrialConfig, seed: u64) -> Result<TrialOutcome> {
    check_kind(cfg, Experiment::Oscillators)?;
    run_trial_on(cfg, &cfg.dictionaries()?, 0, seed)
}

/// One spectrum/blackbody-background trial.
pub fn run_spectrum_trial(cfg: &TrialConfig, seed: u64) -> Result<TrialOutcome> {
    check_kind(cfg, Experiment::Spectrum)?;
    run_trial_on(cfg, &cfg.dictionaries()?, 0, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub experiment: Experiment,
    pub noise_mode: NoiseMode,
    pub noise_percent: f64,
    pub config_hash: String,
    pub config: TrialConfig,
    pub n_trials: usize,
    pub success_count: usize,
    pub success_rate: f64,
    pub error_p50: f64,
    pub error_p90: f64,
    pub error_max: f64,
    pub trials: Vec<TrialReport>,
}

impl CampaignReport {
    /// The same report with runtime fields zeroed, for reproducibility checks.
    pub fn without_runtime(&self) -> CampaignReport {
        let mut out = self.clone();
        for t in &mut out.trials {
            t.runtime_ms = 0.0;
        }
        out
    }

    pub fn passes(&self) -> bool {
        self.success_rate >= self.config.experiment.min_success_rate
    }

    /// SHA-256 of the report with runtime fields zeroed. Equal for reruns of
    /// the same configuration.
    pub fn result_hash(&self) -> String {
        let json = serde_json::to_vec(&self.without_runtime()).expect("report serializes");
        hex(&Sha256::digest(&json))
    }

    /// One row per trial.
    pub fn trials_csv(&self) -> String {
        let mut out = String::from(
            "trial,seed,support_exact,success,relative_l2_error,residual,delta,swaps,stage,termination_reason,min_over_max,runtime_ms,true_support,recovered_support\n",
        );
        let join = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        for t in &self.trials {
            out.push_str(&format!(
                "{},{},{},{},{:e},{:e},{:e},{},{},{:?},{:e},{:.3},{},{}\n",
                t.trial,
                t.seed,
                t.support_exact,
                t.success,
                t.relative_l2_error,
                t.residual,
                t.delta,
                t.swaps,
                t.stage,
                t.termination_reason,
                t.min_over_max,
                t.runtime_ms,
                join(&t.true_support),
                join(&t.recovered_support),
            ));
        }
        out
    }
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Run `cfg.experiment.trials` trials with seeds `seed, seed+1, ...`.
pub fn run_campaign(cfg: &TrialConfig) -> Result<CampaignReport> {
    cfg.validate()?;
    let bench = cfg.dictionaries()?;
    let base = cfg.experiment.seed;
    let trials: Vec<TrialReport> = (0..cfg.experiment.trials)
        .into_par_iter()
        .map(|i| run_trial_on(cfg, &bench, i, base.wrapping_add(i as u64)).map(|o| o.report))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(cfg, trials))
}

fn aggregate(cfg: &TrialConfig, trials: Vec<TrialReport>) -> CampaignReport {
    let mut errors: Vec<f64> = trials.iter().map(|t| t.relative_l2_error).collect();
    errors.sort_by(f64::total_cmp);
    let success_count = trials.iter().filter(|t| t.success).count();
    CampaignReport {
        experiment: cfg.experiment.kind,
        noise_mode: cfg.noise.mode,
        noise_percent: cfg.noise.percent,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        n_trials: trials.len(),
        success_count,
        success_rate: success_count as f64 / trials.len() as f64,
        error_p50: percentile(&errors, 50.0),
        error_p90: percentile(&errors, 90.0),
        error_max: errors.last().copied().unwrap_or(f64::NAN),
        trials,
    }
}

/// Full-dictionary batch projection against pursuit on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub seed: u64,
    pub batch_error: f64,
    pub pursuit_error: f64,
    pub condition_number: f64,
    pub numeric_rank: usize,
    pub atom_count: usize,
    pub pursuit_support_exact: bool,
}

pub fn conditioning_comparison(cfg: &TrialConfig) -> Result<ConditioningReport> {
    cfg.validate()?;
    let bench = cfg.dictionaries()?;
    let seed = cfg.experiment.seed;
    let outcome = run_trial_on(cfg, &bench, 0, seed)?;
    let (projector, condition) =
        build_oblique_batch(&bench.v_atoms, &bench.wperp_atoms, cfg.pursuit.pinv_rel_tol)?;
    let batch_v = projector.apply(&outcome.instance.observed)?;
    Ok(ConditioningReport {
        seed,
        batch_error: relative_error(&batch_v, &outcome.instance.f_v),
        pursuit_error: outcome.report.relative_l2_error,
        condition_number: condition.condition_number,
        numeric_rank: condition.numeric_rank,
        atom_count: bench.v_atoms.len(),
        pursuit_support_exact: outcome.report.support_exact,
    })
}
