use std::collections::BTreeMap;
use std::fs;

use serde::{Deserialize, Serialize};

use splitlbi::baselines::train_baseline;
use splitlbi::checkpoint::{Checkpoint, Meta};
use splitlbi::data::{load_cifar10, load_mnist, split_validation, Dataset};
use splitlbi::penalty::support;
use splitlbi::selection::{compute_importance, layer_order, prune_curve, ForwardSelector, PruneReport};
use splitlbi::slbi::{run_training, EpochHook, Validator};
use splitlbi::{LayerSpec, Network, PenaltyKind, SeededRng, SlbiLayerState, SolutionPath, SplitLbi};

use crate::artifacts::OutDir;
use crate::config::{BaselineChoice, Command, DatasetKind, RunConfig};
use crate::synth::cmd_synth_check;
use crate::CliError;

// independent RNG streams derived from the run seed
const STREAM_SPLIT: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_PRUNE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub test_acc_dense: f64,
    pub test_acc_sparse: f64,
    pub param_count: usize,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    /// Output channels of every conv layer.
    pub conv_filters: BTreeMap<String, usize>,
    /// Active groups of every penalized layer.
    pub support: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_acc_dense: f64,
    pub test_acc_sparse: f64,
    pub param_count: usize,
    pub nonzero_param_count: usize,
}

/// Runs the configured command.
pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    match cfg.command {
        Command::Train | Command::Expand => {
            let m = cmd_train(cfg)?;
            Ok(format!(
                "dense {:.4} sparse {:.4} params {} epochs {}",
                m.test_acc_dense, m.test_acc_sparse, m.param_count, m.epochs_run
            ))
        }
        Command::Prune => {
            let r = cmd_prune(cfg)?;
            Ok(r.curve
                .iter()
                .map(|p| format!("{} {:.2} {:.4}", p.criterion, p.rate, p.accuracy))
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::Eval => {
            let r = cmd_eval(cfg)?;
            Ok(format!(
                "dense {:.4} sparse {:.4} nonzero {}/{}",
                r.test_acc_dense, r.test_acc_sparse, r.nonzero_param_count, r.param_count
            ))
        }
        Command::PathExport => {
            cmd_path_export(cfg)?;
            Ok(format!("exported to {}", cfg.out_dir))
        }
        Command::SynthCheck => {
            let report = cmd_synth_check(cfg)?;
            let text = report.lines().join("\n");
            if report.all_passed() {
                Ok(text)
            } else {
                Err(CliError::CheckFailed(text))
            }
        }
    }
}

struct Data {
    train: Dataset<f32>,
    val: Option<Dataset<f32>>,
    test: Dataset<f32>,
}

fn load_data(cfg: &RunConfig) -> Result<Data, CliError> {
    let dir = cfg.data_path()?;
    let (mut train, test) = match cfg.dataset {
        DatasetKind::Mnist => load_mnist::<f32>(&dir)?,
        DatasetKind::Cifar10 => load_cifar10::<f32>(&dir)?,
    };
    if cfg.limit > 0 {
        train = train.limit(cfg.limit)?;
    }
    if cfg.val_fraction > 0.0 {
        let mut rng = SeededRng::new(cfg.seed).stream(STREAM_SPLIT);
        let (tr, va) = split_validation(&train, cfg.val_fraction, &mut rng)?;
        return Ok(Data {
            train: tr,
            val: Some(va),
            test,
        });
    }
    Ok(Data { train, val: None, test })
}

fn layer_index(net: &Network<f32>, name: &str) -> Result<usize, CliError> {
    net.layer_by_name(name)
        .ok_or_else(|| CliError::Config(format!("no layer named `{name}` in this architecture")))
}

fn metrics(net: &Network<f32>, states: &[SlbiLayerState<f32>], test: &Dataset<f32>) -> Result<Metrics, CliError> {
    let opt = SplitLbi::new(Default::default(), states.to_vec())?;
    let sparse = opt.sparse_model(net)?;
    let mut conv_filters = BTreeMap::new();
    for (i, l) in net.layers().iter().enumerate() {
        if let LayerSpec::Conv { out_channels, .. } = l.spec {
            conv_filters.insert(net.name_of(i), out_channels);
        }
    }
    let mut active = BTreeMap::new();
    for s in states {
        let n = support(&s.gamma, &s.spec)?.into_iter().filter(|&a| a).count();
        active.insert(net.name_of(s.layer_index), n);
    }
    Ok(Metrics {
        test_acc_dense: net.accuracy(test)?,
        test_acc_sparse: sparse.accuracy(test)?,
        param_count: net.param_count(),
        epochs_run: 0,
        best_epoch: None,
        stopped_early: false,
        conv_filters,
        support: active,
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Io(e.to_string()))
}

/// Trains with the split iteration (or the configured baseline) and writes
/// checkpoint, path CSV, expansion log, metrics and manifest.
pub fn cmd_train(cfg: &RunConfig) -> Result<Metrics, CliError> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let out = OutDir::create(&cfg.out_path())?;
    let root = SeededRng::new(cfg.seed);
    let mut net: Network<f32> = Network::from_arch(&cfg.arch, data.train.sample_shape(), cfg.use_bias, &mut root.stream(STREAM_INIT))?;
    let penalized = cfg
        .penalized
        .iter()
        .map(|(name, kind)| Ok((layer_index(&net, name)?, *kind)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut rng = root.stream(STREAM_TRAIN);

    let mut path = SolutionPath::default();
    let mut expansion_log = String::new();
    let mut states = Vec::new();
    let (mut epochs_run, mut best_epoch, mut stopped_early) = (cfg.hyper.epochs, None, false);

    if cfg.baseline == BaselineChoice::None {
        let mut opt = SplitLbi::for_model(cfg.hyper, &net, &penalized)?;
        let mut selector = if cfg.forward || cfg.command == Command::Expand {
            let layer = layer_index(&net, &cfg.forward_layer)?;
            if !penalized.iter().any(|&(l, k)| l == layer && k == PenaltyKind::GroupLasso) {
                return Err(CliError::Config(format!(
                    "forward selection needs `{}` in `penalized` with kind group",
                    cfg.forward_layer
                )));
            }
            Some(ForwardSelector::new(cfg.policy, layer)?)
        } else {
            None
        };
        let mut hooks: Vec<&mut dyn EpochHook<f32, Network<f32>>> = Vec::new();
        if let Some(s) = selector.as_mut() {
            hooks.push(s);
        }
        let mut val_acc = |m: &Network<f32>| m.accuracy(data.val.as_ref().expect("checked below"));
        let validator: Option<&mut Validator<'_, Network<f32>>> = match data.val {
            Some(_) => Some(&mut val_acc),
            None => None,
        };
        let outcome = run_training(&mut net, &mut opt, &data.train, &mut rng, validator, &mut hooks)?;
        drop(hooks);
        epochs_run = outcome.epochs_run;
        stopped_early = outcome.stopped_early;
        path = outcome.path;
        if let Some(best) = outcome.best {
            best_epoch = Some(best.epoch);
            if cfg.restore_best {
                net = best.model;
                opt.states = best.states;
            }
        }
        if let Some(s) = &selector {
            expansion_log = s.log_jsonl()?;
        }
        states = opt.states;
    } else {
        let layers: Vec<usize> = penalized.iter().map(|&(l, _)| l).collect();
        train_baseline(&mut net, &cfg.baseline_spec(), &layers, &data.train, &mut rng)?;
    }

    let mut m = metrics(&net, &states, &data.test)?;
    m.epochs_run = epochs_run;
    m.best_epoch = best_epoch;
    m.stopped_early = stopped_early;

    let meta = Meta {
        epoch: best_epoch.filter(|_| cfg.restore_best).unwrap_or(epochs_run),
        seed: cfg.seed,
        hyperparams: cfg.to_map(),
    };
    let mut ck = Checkpoint::new(&net, meta);
    if cfg.baseline == BaselineChoice::None {
        ck = ck.with_states(&states).with_path(path.summary());
    }
    out.write("checkpoint.json", ck.to_json()?)?;
    out.write("path.csv", path.to_csv()?)?;
    out.write("expansions.jsonl", expansion_log)?;
    out.write("metrics.json", to_json(&m)?)?;
    out.write("config.txt", cfg.to_string())?;
    out.seal()?;
    Ok(m)
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    let p = cfg.checkpoint_path();
    Checkpoint::load(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
}

/// Sweeps removal rates for every configured criterion and writes the
/// ranking and curve CSVs.
pub fn cmd_prune(cfg: &RunConfig) -> Result<PruneReport, CliError> {
    cfg.validate()?;
    let ck = load_checkpoint(cfg)?;
    let retrain = |what: &str| {
        CliError::Config(format!(
            "checkpoint {} has no {what}; retrain with the split iteration (not a baseline) to prune by path importance",
            cfg.checkpoint_path().display()
        ))
    };
    let states: Vec<SlbiLayerState<f32>> = ck.states().map_err(|_| retrain("optimizer state (Z, Gamma)"))?;
    let summary = ck.path_summary().map_err(|_| retrain("solution path"))?;
    if summary.total_epochs == 0 {
        return Err(retrain("recorded epochs"));
    }
    let net: Network<f32> = ck.network()?;
    let data = load_data(cfg)?;
    let importance = compute_importance(summary, &net, &states, cfg.weights)?;

    let names: Vec<String> = if cfg.prune_layers.is_empty() {
        states.iter().map(|s| net.name_of(s.layer_index)).collect()
    } else {
        cfg.prune_layers.clone()
    };
    let mut targets = Vec::new();
    for name in &names {
        let l = layer_index(&net, name)?;
        let s = states
            .iter()
            .find(|s| s.layer_index == l)
            .ok_or_else(|| CliError::Config(format!("layer `{name}` was not penalized during training")))?;
        targets.push((l, s.spec.clone()));
    }

    let mut curve = Vec::new();
    for (ci, &criterion) in cfg.criteria.iter().enumerate() {
        let mut rng = SeededRng::new(cfg.seed).stream(STREAM_PRUNE + ci as u64);
        let layers: Vec<_> = targets
            .iter()
            .map(|(l, spec)| (*l, spec.clone(), layer_order(&importance, *l, criterion, cfg.weights, &mut rng)))
            .collect();
        curve.extend(prune_curve(&net, &layers, &cfg.rates, &data.test, criterion.name())?);
    }
    let ranking = importance
        .into_iter()
        .filter(|i| targets.iter().any(|(l, _)| *l == i.layer_index))
        .collect();
    let report = PruneReport { ranking, curve };

    let out = OutDir::create(&cfg.out_path())?;
    out.write("prune_ranking.csv", report.ranking_csv()?)?;
    out.write("prune_curve.csv", report.curve_csv()?)?;
    out.seal()?;
    Ok(report)
}

/// Test accuracy of a checkpoint with dense and support-projected weights.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    cfg.validate()?;
    let ck = load_checkpoint(cfg)?;
    let net: Network<f32> = ck.network()?;
    let states: Vec<SlbiLayerState<f32>> = ck.states().unwrap_or_default();
    let data = load_data(cfg)?;
    let m = metrics(&net, &states, &data.test)?;
    let report = EvalReport {
        test_acc_dense: m.test_acc_dense,
        test_acc_sparse: m.test_acc_sparse,
        param_count: net.param_count(),
        nonzero_param_count: net.nonzero_param_count(),
    };
    let out = OutDir::create(&cfg.out_path())?;
    out.write("eval.json", to_json(&report)?)?;
    out.seal()?;
    Ok(report)
}

/// Re-reads a path CSV and writes per-epoch support sizes and the
/// first-entry table.
pub fn cmd_path_export(cfg: &RunConfig) -> Result<SolutionPath, CliError> {
    let src = cfg.path_csv_path();
    let text = fs::read_to_string(&src).map_err(|e| CliError::Io(format!("{}: {e}", src.display())))?;
    let path = SolutionPath::from_csv(&text)?;

    let mut support_csv = String::from("epoch,layer,support_size,groups\n");
    for rec in path.records() {
        for l in &rec.layers {
            support_csv.push_str(&format!("{},{},{},{}\n", rec.epoch, l.layer, l.support_size(), l.gamma_norm.len()));
        }
    }
    let never = path.num_epochs() + 1;
    let mut entry_csv = String::from("layer,group,first_entry_epoch,E\n");
    for layer in path.layers() {
        for (g, e) in path.first_entry(layer).unwrap_or_default().iter().enumerate() {
            let first = e.map_or(String::new(), |v| v.to_string());
            entry_csv.push_str(&format!("{layer},{g},{first},{}\n", e.unwrap_or(never)));
        }
    }
    let out = OutDir::create(&cfg.out_path())?;
    out.write("support.csv", support_csv)?;
    out.write("first_entry.csv", entry_csv)?;
    out.seal()?;
    Ok(path)
}
