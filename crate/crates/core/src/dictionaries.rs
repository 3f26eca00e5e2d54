//! Atom generators for the oscillator and spectrum experiments.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{SampledSignal, SamplingGrid};
use crate::oblique::{AtomLabel, Dictionary};

/// First radiation constant, erg cm² s⁻¹.
pub const PLANCK_C1: f64 = 3.7419e-6;
/// Second radiation constant, cm K.
pub const PLANCK_C2: f64 = 1.4288;
/// Micrometres to centimetres.
pub const UM_TO_CM: f64 = 1e-4;

pub const DEFAULT_PULSE_SHARPNESS: f64 = 100_000.0;
pub const DEFAULT_PULSE_SPACING: f64 = 0.0025;
pub const DEFAULT_PULSE_COUNT: usize = 400;
pub const DEFAULT_TEMPERATURES: [f64; 5] = [3000.0, 3500.0, 4000.0, 4500.0, 5000.0];
pub const DEFAULT_KNOT_SPACING: f64 = 0.0625;

/// Parameters of one atom family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum AtomSpec {
    DampedOscillator { frequencies: Vec<u32> },
    GaussianPulse { count: usize, spacing: f64, sharpness: f64 },
    CubicBSpline { domain_length: f64, knot_spacing: f64, translate_step: f64 },
    Blackbody { temperatures: Vec<f64> },
}

impl AtomSpec {
    pub fn generate(&self, grid: SamplingGrid) -> Result<Dictionary> {
        match self {
            AtomSpec::DampedOscillator { frequencies } => oscillator_atoms(frequencies, grid),
            AtomSpec::GaussianPulse {
                count,
                spacing,
                sharpness,
            } => gaussian_pulse_atoms(*count, *spacing, *sharpness, grid),
            AtomSpec::CubicBSpline {
                domain_length,
                knot_spacing,
                translate_step,
            } => bspline_atoms_with_step(*domain_length, *knot_spacing, *translate_step, grid),
            AtomSpec::Blackbody { temperatures } => blackbody_atoms(temperatures, grid),
        }
    }
}

/// `e^{-t} cos(π n t)`.
pub fn damped_oscillator(n: u32, t: f64) -> f64 {
    (-t).exp() * (std::f64::consts::PI * n as f64 * t).cos()
}

/// One damped oscillator per frequency `n ≥ 1`.
pub fn oscillator_atoms(freqs: &[u32], grid: SamplingGrid) -> Result<Dictionary> {
    if freqs.is_empty() {
        return Err(Error::InvalidArgument("no oscillator frequencies given".into()));
    }
    let mut seen = HashSet::new();
    for &n in freqs {
        if n == 0 {
            return Err(Error::InvalidArgument("oscillator frequency must be ≥ 1".into()));
        }
        if !seen.insert(n) {
            return Err(Error::InvalidArgument(format!("duplicate oscillator frequency {n}")));
        }
    }
    let atoms = freqs
        .iter()
        .map(|&n| SampledSignal::from_fn(grid, |t| damped_oscillator(n, t)))
        .collect::<Result<Vec<_>>>()?;
    let labels = freqs.iter().map(|&n| AtomLabel::Oscillator { frequency: n }).collect();
    Dictionary::new(grid, atoms, labels)
}

/// `exp(-a (t - spacing·j)²)` for `j = 1..=count`.
pub fn gaussian_pulse_atoms(count: usize, spacing: f64, sharpness: f64, grid: SamplingGrid) -> Result<Dictionary> {
    if count == 0 {
        return Err(Error::InvalidArgument("pulse count must be ≥ 1".into()));
    }
    if !(spacing > 0.0) || !(sharpness > 0.0) {
        return Err(Error::InvalidArgument("pulse spacing and sharpness must be > 0".into()));
    }
    let last = spacing * count as f64;
    if spacing < grid.start() || last > grid.stop() {
        return Err(Error::InvalidArgument(format!(
            "pulse centres [{spacing}, {last}] fall outside the grid [{}, {}]",
            grid.start(),
            grid.stop()
        )));
    }
    let mut atoms = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for j in 1..=count {
        let center = spacing * j as f64;
        atoms.push(SampledSignal::from_fn(grid, |t| (-sharpness * (t - center).powi(2)).exp())?);
        labels.push(AtomLabel::Pulse {
            index: j as u32,
            center,
        });
    }
    Dictionary::new(grid, atoms, labels)
}

/// Centred cardinal cubic B-spline with unit knot spacing, support `[-2, 2]`.
pub fn cubic_bspline(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        0.0
    }
}

/// Range of translate indices `k` whose support `(k·step - 2b, k·step + 2b)`
/// meets `(0, L)`.
pub fn bspline_translates(domain_length: f64, knot_spacing: f64, translate_step: f64) -> std::ops::RangeInclusive<i64> {
    let lo = ((-2.0 * knot_spacing) / translate_step).floor() as i64 + 1;
    let hi = ((domain_length + 2.0 * knot_spacing) / translate_step).ceil() as i64 - 1;
    lo..=hi
}

/// Translates of the cubic B-spline on `[0, L]`, translate step equal to the
/// knot spacing.
pub fn bspline_atoms(domain_length: f64, knot_spacing: f64, grid: SamplingGrid) -> Result<Dictionary> {
    bspline_atoms_with_step(domain_length, knot_spacing, knot_spacing, grid)
}

/// Translates `B((x - k·step) / b)` whose support meets `[0, L]`. Translates
/// that overhang the ends are kept and sampled only on the grid.
pub fn bspline_atoms_with_step(
    domain_length: f64,
    knot_spacing: f64,
    translate_step: f64,
    grid: SamplingGrid,
) -> Result<Dictionary> {
    if !(knot_spacing > 0.0) || !(translate_step > 0.0) {
        return Err(Error::InvalidArgument("knot spacing and translate step must be > 0".into()));
    }
    if domain_length / knot_spacing < 1.0 {
        return Err(Error::InvalidArgument("domain must span at least one knot interval".into()));
    }
    let mut atoms = Vec::new();
    let mut labels = Vec::new();
    for k in bspline_translates(domain_length, knot_spacing, translate_step) {
        let center = k as f64 * translate_step;
        let atom = SampledSignal::from_fn(grid, |x| cubic_bspline((x - center) / knot_spacing))?;
        if atom.norm() == 0.0 {
            // support falls between grid points
            continue;
        }
        atoms.push(atom);
        labels.push(AtomLabel::BSpline { translate: k, center });
    }
    Dictionary::new(grid, atoms, labels)
}

/// Planck spectral radiance `C₁ / (λ⁵ (e^{C₂/(λT)} - 1))` with `λ` in cm.
pub fn planck(lambda_cm: f64, temperature: f64) -> f64 {
    let x = PLANCK_C2 / (lambda_cm * temperature);
    let denom = x.exp_m1();
    if denom.is_infinite() {
        return 0.0;
    }
    PLANCK_C1 / (lambda_cm.powi(5) * denom)
}

/// One blackbody curve per temperature; the grid is in μm and must be
/// strictly positive.
pub fn blackbody_atoms(temps: &[f64], grid: SamplingGrid) -> Result<Dictionary> {
    if temps.is_empty() {
        return Err(Error::InvalidArgument("no blackbody temperatures given".into()));
    }
    if let Some(t) = temps.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {t}")));
    }
    if grid.start() <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "blackbody grid must start above λ = 0, got {}",
            grid.start()
        )));
    }
    let atoms = temps
        .iter()
        .map(|&temp| SampledSignal::from_fn(grid, |l| planck(l * UM_TO_CM, temp)))
        .collect::<Result<Vec<_>>>()?;
    let labels = temps.iter().map(|&t| AtomLabel::Blackbody { temperature: t }).collect();
    Dictionary::new(grid, atoms, labels)
}

/// Weight of frequency `n` in the legacy register.
pub fn legacy_weight(n: u32) -> f64 {
    1.0 / (1.0 + 0.7 * (n as f64 - 75.0).powi(2))
}

/// `Σ_{n=1}^{100} e^{-t} cos(π n t) / (1 + 0.7 (n - 75)²)`.
pub fn legacy_weighted_register(grid: SamplingGrid) -> Result<SampledSignal> {
    SampledSignal::from_fn(grid, |t| (1..=100).map(|n| legacy_weight(n) * damped_oscillator(n, t)).sum())
}

/// Grid `h, 2h, ..., L` with `h = L / count`, avoiding `λ = 0`.
pub fn spectrum_grid(domain_length: f64, count: usize) -> Result<SamplingGrid> {
    SamplingGrid::new(domain_length / count as f64, domain_length, count)
}
