//! TOML config files layered over built-in presets, then flag overrides.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use obpursuit::simulate::{Experiment, ExperimentConfig, NoiseConfig, NoiseMode, PursuitConfig, TrialConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Effective configuration of one invocation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub experiment: ExperimentConfig,
    pub pursuit: PursuitConfig,
    pub noise: NoiseConfig,
    pub output: OutputConfig,
}

impl CliConfig {
    fn preset(kind: Experiment) -> Self {
        let trial = match kind {
            Experiment::Oscillators => TrialConfig::oscillators_desk(),
            Experiment::Spectrum => TrialConfig::spectrum_desk(),
        };
        Self {
            experiment: trial.experiment,
            pursuit: trial.pursuit,
            noise: trial.noise,
            output: OutputConfig::default(),
        }
    }

    pub fn trial(&self) -> TrialConfig {
        TrialConfig {
            experiment: self.experiment.clone(),
            noise: self.noise,
            pursuit: self.pursuit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseModeArg {
    Stddev,
    Variance,
}

impl From<NoiseModeArg> for NoiseMode {
    fn from(m: NoiseModeArg) -> Self {
        match m {
            NoiseModeArg::Stddev => NoiseMode::StdDevPercent,
            NoiseModeArg::Variance => NoiseMode::VariancePercent,
        }
    }
}

/// Flags shared by every subcommand. Each one overrides a single config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML file with [experiment], [pursuit], [noise] and [output] tables
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// experiment.seed
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// experiment.trials
    #[arg(long, global = true, value_name = "N")]
    pub trials: Option<usize>,
    /// noise.percent
    #[arg(long, global = true, value_name = "P")]
    pub noise: Option<f64>,
    /// noise.mode
    #[arg(long, global = true, value_enum)]
    pub noise_mode: Option<NoiseModeArg>,
    /// pursuit.delta
    #[arg(long, global = true, value_name = "X")]
    pub delta: Option<f64>,
    /// pursuit.max_rank
    #[arg(long, global = true, value_name = "R")]
    pub max_rank: Option<usize>,
    /// experiment.sparsity
    #[arg(long, global = true, value_name = "K")]
    pub sparsity: Option<usize>,
    /// pursuit.max_swap_stage
    #[arg(long, global = true, value_name = "S")]
    pub swap_stages: Option<usize>,
    /// pursuit.nonneg
    #[arg(long, global = true)]
    pub nonneg: bool,
    /// experiment.single_precision
    #[arg(long, global = true)]
    pub single_precision: bool,
    /// output.dir
    #[arg(long, global = true, value_name = "PATH")]
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut CliConfig) {
        let e = &mut cfg.experiment;
        if let Some(v) = self.seed {
            e.seed = v;
        }
        if let Some(v) = self.trials {
            e.trials = v;
        }
        if let Some(v) = self.sparsity {
            e.sparsity = v;
        }
        if self.single_precision {
            e.single_precision = true;
        }
        if let Some(v) = self.noise {
            cfg.noise.percent = v;
        }
        if let Some(v) = self.noise_mode {
            cfg.noise.mode = v.into();
        }
        let p = &mut cfg.pursuit;
        if let Some(v) = self.delta {
            p.delta = Some(v);
        }
        if let Some(v) = self.max_rank {
            p.max_rank = Some(v);
        }
        if let Some(v) = self.swap_stages {
            p.max_swap_stage = v;
        }
        if self.nonneg {
            p.nonneg = true;
        }
        if let Some(v) = &self.out_dir {
            cfg.output.dir = v.clone();
        }
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn file_kind(table: &toml::Table) -> Result<Option<Experiment>, String> {
    match table.get("experiment").and_then(|e| e.get("kind")) {
        None => Ok(None),
        Some(v) => Experiment::deserialize(v.clone())
            .map(Some)
            .map_err(|e| format!("experiment.kind: {e}")),
    }
}

/// Parses `text` over the preset for `kind` (or the file's own kind when
/// `kind` is `None`).
pub fn parse_layered(text: &str, kind: Option<Experiment>) -> Result<CliConfig, String> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let declared = file_kind(&table)?;
    if let (Some(want), Some(got)) = (kind, declared) {
        if want != got {
            return Err(format!("config declares experiment.kind = {got:?}, this command runs {want:?}"));
        }
    }
    let preset = CliConfig::preset(kind.or(declared).unwrap_or(Experiment::Oscillators));
    let mut base = toml::Table::try_from(&preset).map_err(|e| e.to_string())?;
    merge(&mut base, table);
    CliConfig::deserialize(base).map_err(|e| e.to_string())
}

pub fn resolve(overrides: &Overrides, kind: Option<Experiment>) -> Result<CliConfig, String> {
    let mut cfg = match &overrides.config {
        Some(path) => {
            let text = read(path)?;
            parse_layered(&text, kind).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => CliConfig::preset(kind.unwrap_or(Experiment::Oscillators)),
    };
    overrides.apply(&mut cfg);
    cfg.trial().validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_layer_over_preset() {
        let cfg = parse_layered("[experiment]\nsparsity = 7\n[noise]\nmode = \"variance\"\n", None).unwrap();
        assert_eq!(cfg.experiment.sparsity, 7);
        assert_eq!(cfg.noise.mode, NoiseMode::VariancePercent);
        assert_eq!(cfg.experiment.grid_points, TrialConfig::oscillators_desk().experiment.grid_points);
    }

    #[test]
    fn file_kind_selects_preset() {
        let cfg = parse_layered("[experiment]\nkind = \"spectrum\"\n", None).unwrap();
        assert_eq!(cfg.trial(), TrialConfig::spectrum_desk());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_layered("[experiment]\nsparsty = 7\n", None).is_err());
        assert!(parse_layered("[plotting]\nx = 1\n", None).is_err());
        assert!(parse_layered("[output]\ndir = \"a\"\nformat = \"png\"\n", None).is_err());
    }

    #[test]
    fn kind_conflict_is_an_error() {
        assert!(parse_layered("[experiment]\nkind = \"spectrum\"\n", Some(Experiment::Oscillators)).is_err());
    }

    #[test]
    fn flags_beat_file() {
        let mut cfg = parse_layered("[experiment]\nseed = 3\n[pursuit]\nmax_swap_stage = 1\n", None).unwrap();
        let o = Overrides {
            seed: Some(9),
            swap_stages: Some(4),
            noise_mode: Some(NoiseModeArg::Variance),
            nonneg: true,
            ..Default::default()
        };
        o.apply(&mut cfg);
        assert_eq!(cfg.experiment.seed, 9);
        assert_eq!(cfg.pursuit.max_swap_stage, 4);
        assert_eq!(cfg.noise.mode, NoiseMode::VariancePercent);
        assert!(cfg.pursuit.nonneg);
    }

    #[test]
    fn preset_round_trips_through_toml() {
        for kind in [Experiment::Oscillators, Experiment::Spectrum] {
            let p = CliConfig::preset(kind);
            let text = toml::to_string(&p).unwrap();
            assert_eq!(parse_layered(&text, Some(kind)).unwrap(), p);
        }
    }
}
