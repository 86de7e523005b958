//! Argument structs shared by the subcommands, plus the flag → config
//! merge. Precedence, lowest to highest: config file or preset, then
//! `POWERDSE_*` environment variables, then explicit flags.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, ValueEnum};
use powerdse::attack::AttackKind;
use powerdse::filters::FilterKind;
use powerdse::presets;
use powerdse::scenario::ScenarioConfig;
use powerdse::{Error, Result};

/// Scenario selection and overrides shared by `run`, `batch`, and
/// `calibrate`.
#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Scenario config TOML file (mutually exclusive with --preset).
    #[arg(long, value_name = "PATH", env = "POWERDSE_CONFIG")]
    pub config: Option<PathBuf>,

    /// Built-in preset name; `powerdse list-presets` shows the choices.
    #[arg(long, value_name = "NAME", env = "POWERDSE_PRESET")]
    pub preset: Option<String>,

    /// Base RNG seed override.
    #[arg(long, env = "POWERDSE_SEED")]
    pub seed: Option<u64>,

    /// Filters to run, comma separated (ekf, ckf, sckf).
    #[arg(long, value_delimiter = ',', env = "POWERDSE_FILTERS")]
    pub filters: Vec<String>,

    /// Attack override: `none` strips the attack, any other kind rewrites
    /// the kind of the configured [attack] table.
    #[arg(long, value_enum, env = "POWERDSE_ATTACK")]
    pub attack: Option<AttackChoice>,

    /// Chi-square significance level override; clears any explicit
    /// chi2_threshold from the config so the (1 - alpha) quantile wins.
    #[arg(long, env = "POWERDSE_ALPHA")]
    pub alpha: Option<f64>,
}

impl SelectArgs {
    /// Load the selected scenario, apply the overrides, and validate.
    pub fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "--config and --preset are mutually exclusive; pass exactly one",
                ))
            }
            (None, None) => {
                return Err(Error::config(
                    "no scenario selected: pass --config <PATH> or --preset <NAME>",
                ))
            }
            (Some(path), None) => ScenarioConfig::from_file(path).map_err(|e| match e {
                // The bare I/O message does not name the file; a missing or
                // unreadable config is a configuration problem either way.
                Error::Io(io) => {
                    Error::config(format!("cannot read config {}: {io}", path.display()))
                }
                other => other,
            })?,
            (None, Some(name)) => presets::load(name)?,
        };
        self.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply the override flags to an already-loaded config.
    fn apply(&self, cfg: &mut ScenarioConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            cfg.noise.seed = seed;
        }
        if !self.filters.is_empty() {
            let mut kinds: Vec<FilterKind> = Vec::new();
            for name in &self.filters {
                let kind = FilterKind::from_str(name)?;
                if !kinds.contains(&kind) {
                    kinds.push(kind);
                }
            }
            cfg.filters = kinds;
        }
        if let Some(choice) = self.attack {
            match choice.to_kind() {
                None => cfg.attack = None,
                Some(kind) => match cfg.attack.as_mut() {
                    Some(spec) => spec.kind = kind,
                    None => {
                        return Err(Error::config(format!(
                            "--attack {choice} needs an [attack] table in the config to \
                             override; only `--attack none` works without one"
                        )))
                    }
                },
            }
        }
        if let Some(alpha) = self.alpha {
            cfg.detector.alpha = alpha;
            cfg.detector.chi2_threshold = None;
        }
        Ok(())
    }
}

/// Value of the `--attack` override flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackChoice {
    /// Remove any configured attack.
    None,
    Random,
    Dos,
    Replay,
    Fdi,
}

impl AttackChoice {
    fn to_kind(self) -> Option<AttackKind> {
        match self {
            AttackChoice::None => None,
            AttackChoice::Random => Some(AttackKind::Random),
            AttackChoice::Dos => Some(AttackKind::Dos),
            AttackChoice::Replay => Some(AttackKind::Replay),
            AttackChoice::Fdi => Some(AttackKind::Fdi),
        }
    }
}

impl fmt::Display for AttackChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AttackChoice::None => "none",
            AttackChoice::Random => "random",
            AttackChoice::Dos => "dos",
            AttackChoice::Replay => "replay",
            AttackChoice::Fdi => "fdi",
        };
        f.write_str(name)
    }
}

/// Arguments of `powerdse run`.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub select: SelectArgs,

    /// Output directory for trace.csv, metrics.json, and config.toml.
    #[arg(long, value_name = "DIR", default_value = "out", env = "POWERDSE_OUT")]
    pub out: PathBuf,
}

/// Arguments of `powerdse batch`.
#[derive(Debug, Args)]
pub struct BatchArgs {
    #[command(flatten)]
    pub select: SelectArgs,

    /// Output directory for summary.json and config.toml.
    #[arg(long, value_name = "DIR", default_value = "out", env = "POWERDSE_OUT")]
    pub out: PathBuf,

    /// Number of Monte-Carlo repetitions, overriding the config.
    #[arg(long, env = "POWERDSE_RUNS")]
    pub runs: Option<usize>,
}

/// Arguments of `powerdse calibrate`.
#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub select: SelectArgs,

    /// Detector config file to write.
    #[arg(long, value_name = "PATH", default_value = "detector.toml", env = "POWERDSE_OUT")]
    pub out: PathBuf,

    /// Number of attack-free calibration runs, overriding the config's
    /// Monte-Carlo count.
    #[arg(long, env = "POWERDSE_RUNS")]
    pub runs: Option<usize>,

    /// Leading stretch of each run to discard, in seconds, so initial
    /// convergence does not inflate the threshold.
    #[arg(long, value_name = "SECONDS", default_value_t = 1.0)]
    pub skip_transient: f64,
}

/// Arguments of `powerdse plot`.
#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Trace CSV produced by `powerdse run`.
    #[arg(long, value_name = "PATH")]
    pub trace: PathBuf,

    /// Output SVG path; defaults to the trace path with an .svg extension.
    #[arg(long, value_name = "PATH", env = "POWERDSE_OUT")]
    pub out: Option<PathBuf>,

    /// Channels to draw, comma separated; empty means all state channels.
    /// Valid: delta, domega, eq_prime, ed_prime, y, g, d.
    #[arg(long, value_delimiter = ',', env = "POWERDSE_CHANNELS")]
    pub channels: Vec<String>,

    /// Config file supplying the detector thresholds drawn on the g and d
    /// panels. Without it the g panel falls back to the chi-square quantile
    /// at alpha = 0.01 and the d panel gets no threshold line.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub config: Option<PathBuf>,

    /// Preset name supplying the detector thresholds, as --config.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn select(preset: &str) -> SelectArgs {
        SelectArgs {
            config: None,
            preset: Some(preset.to_string()),
            seed: None,
            filters: Vec::new(),
            attack: None,
            alpha: None,
        }
    }

    #[test]
    fn load_requires_exactly_one_source() {
        let mut args = select("scenario1");
        args.config = Some(PathBuf::from("x.toml"));
        let err = args.load().unwrap_err().to_string();
        assert!(err.contains("mutually exclusive"), "got: {err}");

        args.config = None;
        args.preset = None;
        let err = args.load().unwrap_err().to_string();
        assert!(err.contains("no scenario selected"), "got: {err}");
    }

    #[test]
    fn overrides_reach_the_config() {
        let mut args = select("scenario1");
        args.seed = Some(777);
        args.filters = vec!["ckf".into(), "ekf".into(), "ckf".into()];
        args.alpha = Some(0.05);
        let cfg = args.load().unwrap();
        assert_eq!(cfg.noise.seed, 777);
        assert_eq!(cfg.filters, [FilterKind::Ckf, FilterKind::Ekf]);
        assert_eq!(cfg.detector.alpha, 0.05);
        assert_eq!(cfg.detector.chi2_threshold, None);
    }

    #[test]
    fn attack_overrides_strip_or_rewrite() {
        let mut args = select("scenario4-dos");
        args.attack = Some(AttackChoice::None);
        let cfg = args.load().unwrap();
        assert!(cfg.attack.is_none());

        let mut args = select("scenario4-dos");
        args.attack = Some(AttackChoice::Random);
        let cfg = args.load().unwrap();
        assert_eq!(cfg.attack.unwrap().kind, AttackKind::Random);

        // scenario1 has no [attack] table to rewrite.
        let mut args = select("scenario1");
        args.attack = Some(AttackChoice::Dos);
        let err = args.load().unwrap_err().to_string();
        assert!(err.contains("[attack] table"), "got: {err}");
    }

    #[test]
    fn unknown_filter_names_are_rejected() {
        let mut args = select("scenario1");
        args.filters = vec!["ukf".into()];
        let err = args.load().unwrap_err().to_string();
        assert!(err.contains("unknown filter"), "got: {err}");
    }

    #[test]
    fn missing_config_file_error_names_the_path() {
        let args = SelectArgs {
            config: Some(PathBuf::from("/no/such/file.toml")),
            preset: None,
            seed: None,
            filters: Vec::new(),
            attack: None,
            alpha: None,
        };
        let err = args.load().unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got: {err:?}");
        assert!(err.to_string().contains("/no/such/file.toml"));
    }
}
