//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so a
//! config file only lists what differs. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use splitlbi::baselines::{BaselineKind, BaselineSpec};
use splitlbi::selection::{Criterion, ForwardPolicy, ImportanceWeights};
use splitlbi::{PenaltyKind, SlbiHyper};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Expand,
    Prune,
    Eval,
    PathExport,
    SynthCheck,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Train,
        Command::Expand,
        Command::Prune,
        Command::Eval,
        Command::PathExport,
        Command::SynthCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Expand => "expand",
            Command::Prune => "prune",
            Command::Eval => "eval",
            Command::PathExport => "path-export",
            Command::SynthCheck => "synth-check",
        }
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown command `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            _ => Err(CliError::Config(format!("unknown dataset `{s}`"))),
        }
    }
}

/// Baseline optimizer selection; `None` trains with the split iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineChoice {
    None,
    Sgd,
    SgdL2,
    SgdL1,
    SgdGroupLasso,
    FsEps,
}

impl BaselineChoice {
    const NAMES: [(BaselineChoice, &'static str); 6] = [
        (BaselineChoice::None, "none"),
        (BaselineChoice::Sgd, "sgd"),
        (BaselineChoice::SgdL2, "sgd_l2"),
        (BaselineChoice::SgdL1, "sgd_l1"),
        (BaselineChoice::SgdGroupLasso, "sgd_gl"),
        (BaselineChoice::FsEps, "fs_eps"),
    ];

    fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(c, _)| *c == self).expect("listed").1
    }
}

impl FromStr for BaselineChoice {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Self::NAMES
            .iter()
            .find(|(_, n)| *n == s)
            .map(|(c, _)| *c)
            .ok_or_else(|| CliError::Config(format!("unknown baseline `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub arch: String,
    /// Unpenalized biases on conv and dense layers.
    pub use_bias: bool,
    pub dataset: DatasetKind,
    /// Empty means `$SPLITLBI_DATA_DIR`.
    pub data_dir: String,
    /// Training samples kept; 0 keeps all.
    pub limit: usize,
    /// 0 disables the validation split.
    pub val_fraction: f64,
    pub penalized: Vec<(String, PenaltyKind)>,
    pub hyper: SlbiHyper,
    /// `None` tracks `0.01 / kappa`.
    pub alpha: Option<f64>,
    pub restore_best: bool,
    pub forward: bool,
    pub forward_layer: String,
    pub policy: ForwardPolicy,
    pub weights: ImportanceWeights,
    pub criteria: Vec<Criterion>,
    pub rates: Vec<f64>,
    /// Empty means every penalized layer.
    pub prune_layers: Vec<String>,
    pub baseline: BaselineChoice,
    pub baseline_coef: f64,
    pub baseline_lr: f64,
    pub seed: u64,
    pub out_dir: String,
    /// Empty means `<out_dir>/checkpoint.json`.
    pub checkpoint: String,
    /// Empty means `<out_dir>/path.csv`.
    pub path_csv: String,
    pub synth_seeds: usize,
    pub synth_cases: usize,
    pub synth_prox_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Train,
            arch: "conv:5x5x5-pool:2-flatten-fc:10".into(),
            use_bias: true,
            dataset: DatasetKind::Mnist,
            data_dir: String::new(),
            limit: 0,
            val_fraction: 0.2,
            penalized: vec![("conv1".into(), PenaltyKind::GroupLasso)],
            hyper: SlbiHyper::default(),
            alpha: None,
            restore_best: true,
            forward: false,
            forward_layer: "conv1".into(),
            policy: ForwardPolicy::default(),
            weights: ImportanceWeights::default(),
            criteria: vec![Criterion::Score, Criterion::Magnitude, Criterion::Random],
            rates: vec![0.0, 0.25, 0.5, 0.75, 0.9, 0.95],
            prune_layers: Vec::new(),
            baseline: BaselineChoice::None,
            baseline_coef: 0.0,
            baseline_lr: 0.01,
            seed: 1,
            out_dir: "out".into(),
            checkpoint: String::new(),
            path_csv: String::new(),
            synth_seeds: 20,
            synth_cases: 1000,
            synth_prox_threshold: 1.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn parse_list<T>(v: &str, item: impl Fn(&str) -> Result<T, CliError>) -> Result<Vec<T>, CliError> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(item).collect()
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

/// Keys in print order.
pub const KEYS: &[&str] = &[
    "command",
    "arch",
    "use_bias",
    "dataset",
    "data_dir",
    "limit",
    "val_fraction",
    "penalized",
    "kappa",
    "nu",
    "alpha",
    "batch_size",
    "epochs",
    "patience",
    "restore_best",
    "forward",
    "forward_layer",
    "threshold",
    "filters_per_expansion",
    "max_filters",
    "cooldown",
    "lambda1",
    "lambda2",
    "normalize",
    "criteria",
    "rates",
    "prune_layers",
    "baseline",
    "baseline_coef",
    "baseline_lr",
    "seed",
    "out_dir",
    "checkpoint",
    "path_csv",
    "synth_seeds",
    "synth_cases",
    "synth_prox_threshold",
];

impl RunConfig {
    /// Parses config text; later lines override earlier ones.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` pair.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "command" => self.command = v.parse()?,
            "arch" => self.arch = v.to_string(),
            "use_bias" => self.use_bias = parse_bool(key, v)?,
            "dataset" => self.dataset = v.parse()?,
            "data_dir" => self.data_dir = v.to_string(),
            "limit" => self.limit = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "penalized" => {
                self.penalized = parse_list(v, |item| {
                    let (name, kind) = item
                        .split_once(':')
                        .ok_or_else(|| CliError::Config(format!("`penalized`: expected layer:kind, got `{item}`")))?;
                    let kind = kind
                        .parse::<PenaltyKind>()
                        .map_err(|e| CliError::Config(format!("`penalized`: {e}")))?;
                    Ok((name.to_string(), kind))
                })?
            }
            "kappa" => self.hyper.kappa = parse(key, v)?,
            "nu" => self.hyper.nu = parse(key, v)?,
            "alpha" => self.alpha = if v == "auto" { None } else { Some(parse(key, v)?) },
            "batch_size" => self.hyper.batch_size = parse(key, v)?,
            "epochs" => self.hyper.epochs = parse(key, v)?,
            "patience" => {
                let p: usize = parse(key, v)?;
                self.hyper.patience = (p > 0).then_some(p);
            }
            "restore_best" => self.restore_best = parse_bool(key, v)?,
            "forward" => self.forward = parse_bool(key, v)?,
            "forward_layer" => self.forward_layer = v.to_string(),
            "threshold" => self.policy.threshold = parse(key, v)?,
            "filters_per_expansion" => self.policy.filters_per_expansion = parse(key, v)?,
            "max_filters" => self.policy.max_filters = parse(key, v)?,
            "cooldown" => self.policy.cooldown = parse(key, v)?,
            "lambda1" => self.weights.lambda1 = parse(key, v)?,
            "lambda2" => self.weights.lambda2 = parse(key, v)?,
            "normalize" => self.weights.normalize = parse_bool(key, v)?,
            "criteria" => {
                self.criteria = parse_list(v, |c| c.parse().map_err(|e: splitlbi::Error| CliError::Config(e.to_string())))?
            }
            "rates" => self.rates = parse_list(v, |r| parse("rates", r))?,
            "prune_layers" => self.prune_layers = parse_list(v, |s| Ok(s.to_string()))?,
            "baseline" => self.baseline = v.parse()?,
            "baseline_coef" => self.baseline_coef = parse(key, v)?,
            "baseline_lr" => self.baseline_lr = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out_dir" => self.out_dir = v.to_string(),
            "checkpoint" => self.checkpoint = v.to_string(),
            "path_csv" => self.path_csv = v.to_string(),
            "synth_seeds" => self.synth_seeds = parse(key, v)?,
            "synth_cases" => self.synth_cases = parse(key, v)?,
            "synth_prox_threshold" => self.synth_prox_threshold = parse(key, v)?,
            other => return Err(CliError::Config(format!("unknown key `{other}`"))),
        }
        self.hyper.alpha = self.alpha.unwrap_or(0.01 / self.hyper.kappa);
        Ok(())
    }

    /// Value of `key` in its file representation.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "command" => self.command.name().to_string(),
            "arch" => self.arch.clone(),
            "use_bias" => self.use_bias.to_string(),
            "dataset" => self.dataset.name().to_string(),
            "data_dir" => self.data_dir.clone(),
            "limit" => self.limit.to_string(),
            "val_fraction" => self.val_fraction.to_string(),
            "penalized" => join(&self.penalized, |(n, k)| format!("{n}:{k}")),
            "kappa" => self.hyper.kappa.to_string(),
            "nu" => self.hyper.nu.to_string(),
            "alpha" => self.alpha.map_or("auto".into(), |a| a.to_string()),
            "batch_size" => self.hyper.batch_size.to_string(),
            "epochs" => self.hyper.epochs.to_string(),
            "patience" => self.hyper.patience.unwrap_or(0).to_string(),
            "restore_best" => self.restore_best.to_string(),
            "forward" => self.forward.to_string(),
            "forward_layer" => self.forward_layer.clone(),
            "threshold" => self.policy.threshold.to_string(),
            "filters_per_expansion" => self.policy.filters_per_expansion.to_string(),
            "max_filters" => self.policy.max_filters.to_string(),
            "cooldown" => self.policy.cooldown.to_string(),
            "lambda1" => self.weights.lambda1.to_string(),
            "lambda2" => self.weights.lambda2.to_string(),
            "normalize" => self.weights.normalize.to_string(),
            "criteria" => join(&self.criteria, |c| c.name().to_string()),
            "rates" => join(&self.rates, f64::to_string),
            "prune_layers" => self.prune_layers.join(","),
            "baseline" => self.baseline.name().to_string(),
            "baseline_coef" => self.baseline_coef.to_string(),
            "baseline_lr" => self.baseline_lr.to_string(),
            "seed" => self.seed.to_string(),
            "out_dir" => self.out_dir.clone(),
            "checkpoint" => self.checkpoint.clone(),
            "path_csv" => self.path_csv.clone(),
            "synth_seeds" => self.synth_seeds.to_string(),
            "synth_cases" => self.synth_cases.to_string(),
            "synth_prox_threshold" => self.synth_prox_threshold.to_string(),
            _ => return None,
        };
        Some(s)
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .map(|k| (k.to_string(), self.get(k).expect("every listed key has a value")))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: splitlbi::Error| CliError::Config(e.to_string());
        self.hyper.validate().map_err(cfg)?;
        self.policy.validate().map_err(cfg)?;
        self.weights.validate().map_err(cfg)?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(CliError::Config(format!("val_fraction {} not in [0, 1)", self.val_fraction)));
        }
        if let Some(r) = self.rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(CliError::Config(format!("removal rate {r} not in [0, 1)")));
        }
        if self.baseline != BaselineChoice::None {
            self.baseline_spec().validate().map_err(cfg)?;
        }
        if !(self.synth_prox_threshold > 0.0) {
            return Err(CliError::Config("synth_prox_threshold must be positive".into()));
        }
        Ok(())
    }

    pub fn baseline_spec(&self) -> BaselineSpec {
        let coef = self.baseline_coef;
        let kind = match self.baseline {
            BaselineChoice::None | BaselineChoice::Sgd => BaselineKind::Sgd,
            BaselineChoice::SgdL2 => BaselineKind::SgdL2 { coef },
            BaselineChoice::SgdL1 => BaselineKind::SgdL1Prox { coef },
            BaselineChoice::SgdGroupLasso => BaselineKind::SgdGroupLassoProx { coef },
            BaselineChoice::FsEps => BaselineKind::FsEps { epsilon: coef },
        };
        BaselineSpec {
            kind,
            lr: self.baseline_lr,
            batch_size: self.hyper.batch_size,
            epochs: self.hyper.epochs,
        }
    }

    pub fn out_path(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.is_empty() {
            self.out_path().join("checkpoint.json")
        } else {
            PathBuf::from(&self.checkpoint)
        }
    }

    pub fn path_csv_path(&self) -> PathBuf {
        if self.path_csv.is_empty() {
            self.out_path().join("path.csv")
        } else {
            PathBuf::from(&self.path_csv)
        }
    }

    pub fn data_path(&self) -> Result<PathBuf, CliError> {
        if !self.data_dir.is_empty() {
            return Ok(PathBuf::from(&self.data_dir));
        }
        std::env::var("SPLITLBI_DATA_DIR")
            .map(PathBuf::from)
            .map_err(|_| CliError::Config("no data_dir given and SPLITLBI_DATA_DIR is unset".into()))
    }
}

impl fmt::Display for RunConfig {
    /// Every key, one per line, in [`KEYS`] order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in KEYS {
            writeln!(f, "{k} = {}", self.get(k).expect("every listed key has a value"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_step_size_rule() {
        let c = RunConfig::default();
        assert_eq!(c.hyper.alpha, 0.01 / c.hyper.kappa);
        assert_eq!(c.hyper.nu, 10.0);
        let c = RunConfig::parse("kappa = 4").unwrap();
        assert_eq!(c.hyper.alpha, 0.0025);
        assert_eq!(c.get("alpha").unwrap(), "auto");
    }

    #[test]
    fn print_parse_is_a_fixed_point() {
        let text = "command = prune\nkappa = 3\nnu = 20\nalpha = 0.1\npenalized = conv2:group, fc1:lasso\nrates = 0,0.5,0.95\ncriteria = sc,e\npatience = 0\n";
        let c = RunConfig::parse(text).unwrap();
        let printed = c.to_string();
        let again = RunConfig::parse(&printed).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_string(), printed);
        assert_eq!(c.hyper.patience, None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(RunConfig::parse("kapa = 1"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("kappa = -1"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("rates = 0,1"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("just words"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("penalized = conv1:ridge"), Err(CliError::Config(_))));
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# header\n\nseed = 7 # trailing\n").unwrap();
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = RunConfig::default();
        for k in KEYS {
            let v = c.get(k).unwrap();
            c.set(k, &v).unwrap();
        }
        assert_eq!(c, RunConfig::default());
    }
}
