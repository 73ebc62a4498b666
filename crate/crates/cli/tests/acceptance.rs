//! Acceptance suite: one PASS/FAIL line per criterion at pinned tolerances.
//! MNIST criteria read `MNIST_DIR` (default `/root/data/mnist`) and report
//! SKIP when the files are absent.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use splitlbi::checkpoint::Checkpoint;
use splitlbi::data::gen_synth;
use splitlbi::linear::{LinearData, LinearModel};
use splitlbi::penalty::{moreau_check, prox};
use splitlbi::selection::prune_by_rank;
use splitlbi::slbi::run_training;
use splitlbi::{
    Batch, GroupIndex, Model, Network, PenaltyKind, PenaltySpec, SeededRng, SlbiHyper, SlbiLayerState, SolutionPath,
    SplitLbi, Tensor,
};
use splitlbi_cli::artifacts::verify_manifest;
use splitlbi_cli::{cmd_prune, cmd_train, Metrics, RunConfig};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<Outcome, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn mnist_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var("MNIST_DIR").unwrap_or_else(|_| "/root/data/mnist".into()));
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
        .iter()
        .all(|f| dir.join(f).is_file())
        .then_some(dir)
}

fn config(name: &str, data: &Path, out: &Path) -> Result<RunConfig, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    let mut cfg = RunConfig::load(&path).map_err(|e| e.to_string())?;
    cfg.data_dir = data.display().to_string();
    cfg.out_dir = out.display().to_string();
    Ok(cfg)
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------- 1

/// `argmin_{c ≥ 0} ½(c − r)² + λc`, by bisection on the derivative.
fn ray_min(r: f64, lambda: f64) -> f64 {
    if r <= lambda {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, r);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - r + lambda < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Minimizer of `½‖x − z‖² + κ Σ_g ‖x_g‖`, one group at a time along the ray
/// through `z_g`.
fn brute_prox(z: &[f64], kappa: f64, groups: &[Vec<usize>]) -> Vec<f64> {
    let mut x = vec![0.0; z.len()];
    for g in groups {
        let r = g.iter().map(|&i| z[i] * z[i]).sum::<f64>().sqrt();
        let c = ray_min(r, 1.0);
        for &i in g {
            x[i] = if r > 0.0 { kappa * c * z[i] / r } else { 0.0 };
        }
    }
    x
}

fn criterion_prox() -> Check {
    let start = Instant::now();
    let mut rng = SeededRng::new(11);
    let (mut worst, mut moreau_bad): (f64, usize) = (0.0, 0);
    for case in 0..1000 {
        let rows = 1 + rng.below(4);
        let cols = 1 + rng.below(5);
        let kind = if case % 2 == 0 { PenaltyKind::Lasso } else { PenaltyKind::GroupLasso };
        let scale = 0.1 + 3.0 * rng.uniform();
        let z = Tensor::from_fn(&[rows, cols], |_| scale * rng.normal());
        let kappa = 0.05 + 20.0 * rng.uniform();
        let groups: Vec<Vec<usize>> = match kind {
            PenaltyKind::Lasso => (0..rows * cols).map(|i| vec![i]).collect(),
            PenaltyKind::GroupLasso => (0..rows).map(|r| (r * cols..(r + 1) * cols).collect()).collect(),
        };
        let spec = PenaltySpec::for_weight(kind, &[rows, cols]);
        let got = prox(&z, kappa, &spec).map_err(|e| e.to_string())?;
        let want = brute_prox(z.data(), kappa, &groups);
        worst = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        if !moreau_check(&z, &got, kappa, &spec) {
            moreau_bad += 1;
        }
    }
    let t = start.elapsed();
    Ok(verdict(
        worst <= 1e-8 && moreau_bad == 0 && t < Duration::from_secs(10),
        format!("1000 cases, max |prox - oracle| {worst:.2e} (tol 1e-8), moreau failures {moreau_bad}, {:.2}s (< 10s)", secs(t)),
    ))
}

// ---------------------------------------------------------------- 2

fn max_rel_grad_error(arch: &str, input: [usize; 3], seed: u64) -> Result<(f64, usize), String> {
    let mut rng = SeededRng::new(seed);
    let mut net: Network<f64> = Network::from_arch(arch, input, true, &mut rng).map_err(|e| e.to_string())?;
    for l in net.param_layers() {
        if let Some(b) = net.params_mut(l).and_then(|p| p.bias.as_mut()) {
            b.data_mut().iter_mut().for_each(|v| *v = 0.1 * rng.normal());
        }
    }
    let [c, h, w] = input;
    let n = 3;
    let inputs = Tensor::from_fn(&[n, c, h, w], |_| rng.uniform());
    let labels = (0..n).map(|_| rng.below(net.num_classes())).collect();
    let batch = Batch::new(inputs, labels).map_err(|e| e.to_string())?;
    let (_, grads) = net.loss_and_grad(&batch).map_err(|e| e.to_string())?;
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for layer in net.param_layers() {
        let g = grads.get(layer).ok_or("missing gradient")?;
        for bias in [false, true] {
            let analytic = if bias { g.bias.as_ref().map_or(&[][..], |b| b.data()) } else { g.weight.data() };
            for (i, &a) in analytic.iter().enumerate() {
                let loss_at = |delta: f64| -> Result<f64, String> {
                    let mut m = net.clone();
                    let p = m.params_mut(layer).ok_or("missing params")?;
                    let t = if bias { p.bias.as_mut().ok_or("missing bias")? } else { &mut p.weight };
                    t.data_mut()[i] += delta;
                    m.loss(&batch).map_err(|e| e.to_string())
                };
                let numeric = (loss_at(eps)? - loss_at(-eps)?) / (2.0 * eps);
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            }
        }
    }
    Ok((worst, net.param_count()))
}

fn criterion_gradients() -> Check {
    let start = Instant::now();
    let nets: [(&str, [usize; 3]); 4] = [
        ("flatten-fc:7-fc:4", [1, 4, 4]),
        ("conv:3x3x3p1-pool:2-flatten-fc:3", [2, 6, 6]),
        ("conv:2x3x2s2p1-pool:2s1-conv:3x2x2-flatten-fc:3", [1, 9, 8]),
        ("conv:2x3x3p1-pool:2-conv:3x3x3-pool:2-flatten-fc:6-fc:4", [1, 12, 12]),
    ];
    let mut worst: f64 = 0.0;
    let mut sizes = Vec::new();
    for (k, (arch, input)) in nets.iter().enumerate() {
        let (err, params) = max_rel_grad_error(arch, *input, 100 + k as u64)?;
        worst = worst.max(err);
        sizes.push(params);
    }
    let t = start.elapsed();
    let small = sizes.iter().all(|&p| p <= 500);
    Ok(verdict(
        worst < 1e-4 && small && t < Duration::from_secs(30),
        format!("{} nets ({sizes:?} params), max rel error {worst:.2e} (< 1e-4), {:.2}s (< 30s)", nets.len(), secs(t)),
    ))
}

// ---------------------------------------------------------------- 3

/// Deterministic Split LBI on `(1/2n)‖y − Xw‖²`, written against the
/// textbook recurrence on plain vectors.
fn reference_split_lbi(
    x: &[f64],
    y: &[f64],
    groups: &[Vec<usize>],
    (kappa, nu, alpha): (f64, f64, f64),
    steps: usize,
) -> Vec<[Vec<f64>; 3]> {
    let (n, p) = (y.len(), x.len() / y.len());
    let (mut w, mut z, mut gamma) = (vec![0.0; p], vec![0.0; p], vec![0.0; p]);
    let mut trace = Vec::new();
    for _ in 0..steps {
        let resid: Vec<f64> = (0..n).map(|i| (0..p).map(|j| x[i * p + j] * w[j]).sum::<f64>() - y[i]).collect();
        let grad: Vec<f64> = (0..p).map(|j| (0..n).map(|i| resid[i] * x[i * p + j]).sum::<f64>() / n as f64).collect();
        let gap: Vec<f64> = (0..p).map(|j| (w[j] - gamma[j]) / nu).collect();
        for j in 0..p {
            w[j] -= kappa * alpha * (grad[j] + gap[j]);
            z[j] += alpha * gap[j];
        }
        for g in groups {
            let norm = g.iter().map(|&j| z[j] * z[j]).sum::<f64>().sqrt();
            for &j in g {
                gamma[j] = if norm > 1.0 { kappa * (norm - 1.0) / norm * z[j] } else { 0.0 };
            }
        }
        trace.push([w.clone(), z.clone(), gamma.clone()]);
    }
    trace
}

fn criterion_split_lbi() -> Check {
    let (n, p, steps) = (60, 12, 200);
    let mut worst: f64 = 0.0;
    let mut entered = 0;
    let cases = [
        (PenaltyKind::Lasso, 1, (10.0, 1.0, 0.01)),
        (PenaltyKind::GroupLasso, 3, (5.0, 2.0, 0.02)),
    ];
    for (kind, width, hyper_vals) in cases {
        for seed in 0..3 {
            let mut rng = SeededRng::new(300 + seed);
            let task = gen_synth(n, p, 3, 2.0, 0.1, &mut rng).map_err(|e| e.to_string())?;
            let groups: Vec<Vec<usize>> = (0..p / width).map(|g| (g * width..(g + 1) * width).collect()).collect();
            let mut state = SlbiLayerState::new(0, &[1, p], kind);
            state.spec = PenaltySpec {
                kind,
                groups: GroupIndex::explicit(groups.clone(), p).map_err(|e| e.to_string())?,
            };
            let mut hyper = SlbiHyper::new(hyper_vals.0, hyper_vals.1);
            hyper.alpha = hyper_vals.2;
            let mut opt = SplitLbi::new(hyper, vec![state]).map_err(|e| e.to_string())?;
            let mut model = LinearModel::zeros(p);
            let data = LinearData::new(task.x.clone(), task.y.clone()).map_err(|e| e.to_string())?;
            let batch = data.all();
            let trace = reference_split_lbi(task.x.data(), &task.y, &groups, hyper_vals, steps);
            for [w, z, gamma] in &trace {
                opt.step(&mut model, &batch).map_err(|e| e.to_string())?;
                let s = &opt.states[0];
                let got_w = model.params(0).ok_or("missing params")?.weight.data();
                for (a, b) in [(got_w, w), (s.z.data(), z), (s.gamma.data(), gamma)] {
                    worst = a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(worst, f64::max);
                }
            }
            if trace.last().is_some_and(|[_, _, g]| g.iter().any(|&v| v != 0.0)) {
                entered += 1;
            }
        }
    }
    Ok(verdict(
        worst <= 1e-10 && entered == 6,
        format!("6 runs x {steps} steps (lasso and group), max |W,Z,Gamma - reference| {worst:.2e} (tol 1e-10), non-null paths {entered}/6"),
    ))
}

// ---------------------------------------------------------------- 4

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
fn pairwise_auc(scores: &[f64], truth: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &pi) in truth.iter().enumerate() {
        for (j, &pj) in truth.iter().enumerate() {
            if pi && !pj {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn criterion_support_recovery() -> Check {
    let start = Instant::now();
    let (n, p, s) = (200, 50, 5);
    let mut aucs = Vec::new();
    for seed in 0..20 {
        let mut rng = SeededRng::new(400 + seed);
        let task = gen_synth(n, p, s, 2.0, 0.1, &mut rng).map_err(|e| e.to_string())?;
        let data = LinearData::new(task.x, task.y).map_err(|e| e.to_string())?;
        let mut model = LinearModel::zeros(p);
        let mut hyper = SlbiHyper::new(10.0, 1.0);
        hyper.batch_size = n;
        hyper.epochs = 3000;
        let mut opt = SplitLbi::for_model(hyper, &model, &[(0, PenaltyKind::Lasso)]).map_err(|e| e.to_string())?;
        let out = run_training(&mut model, &mut opt, &data, &mut rng, None, &mut []).map_err(|e| e.to_string())?;
        let never = out.path.num_epochs() + 1;
        let entry = out.path.first_entry("linear").ok_or("no path for layer `linear`")?;
        let scores: Vec<f64> = entry.iter().map(|e| -(e.unwrap_or(never) as f64)).collect();
        let truth: Vec<bool> = (0..p).map(|j| task.support.contains(&j)).collect();
        aucs.push(pairwise_auc(&scores, &truth));
    }
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let t = start.elapsed();
    Ok(verdict(
        mean >= 0.95 && t < Duration::from_secs(120),
        format!("mean AUC {mean:.4} over 20 seeds (>= 0.95), min {:.4}, {:.1}s (< 120s)", aucs.iter().cloned().fold(1.0, f64::min), secs(t)),
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_forward(tmp: &Path) -> Check {
    let Some(data) = mnist_dir() else {
        return Ok(Outcome::Skip("MNIST files not found".into()));
    };
    let start = Instant::now();
    let cfg = config("mnist_forward.cfg", &data, &tmp.join("forward"))?;
    let m = cmd_train(&cfg).map_err(|e| e.to_string())?;
    let filters = m.conv_filters.get("conv1").copied().unwrap_or(0);
    let t = start.elapsed();
    Ok(verdict(
        (5..=15).contains(&filters) && m.test_acc_dense >= 0.97 && t < Duration::from_secs(45 * 60),
        format!(
            "conv1 filters {filters} (in [5, 15]), test accuracy {:.4} (>= 0.97), {} epochs, {:.0}s (< 45 min)",
            m.test_acc_dense,
            m.epochs_run,
            secs(t)
        ),
    ))
}

// ---------------------------------------------------------------- 6

/// Group order from a ranking CSV (`layer,group,M,E,Sc,rank`), best first.
fn order_from_ranking(csv: &str, layer: &str) -> Vec<usize> {
    let mut rows: Vec<(usize, usize)> = csv
        .lines()
        .skip(1)
        .filter_map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            (f[0] == layer).then(|| (f[5].parse().unwrap(), f[1].parse().unwrap()))
        })
        .collect();
    rows.sort_unstable();
    rows.into_iter().map(|(_, g)| g).collect()
}

fn criterion_backward(tmp: &Path) -> Check {
    let Some(data) = mnist_dir() else {
        return Ok(Outcome::Skip("MNIST files not found".into()));
    };
    let start = Instant::now();
    let out = tmp.join("lenet");
    let mut cfg = config("lenet_mnist.cfg", &data, &out)?;
    cmd_train(&cfg).map_err(|e| e.to_string())?;

    cfg.out_dir = tmp.join("lenet_prune").display().to_string();
    cfg.checkpoint = out.join("checkpoint.json").display().to_string();
    cfg.criteria = vec!["sc".parse().map_err(|e: splitlbi::Error| e.to_string())?];
    cfg.prune_layers = vec!["fc2".into(), "fc1".into(), "conv3".into()];
    cfg.rates = vec![0.0];
    cmd_prune(&cfg).map_err(|e| e.to_string())?;
    let ranking = fs::read_to_string(tmp.join("lenet_prune/prune_ranking.csv")).map_err(|e| e.to_string())?;

    let ck = Checkpoint::load(&out.join("checkpoint.json")).map_err(|e| e.to_string())?;
    let net: Network<f32> = ck.network().map_err(|e| e.to_string())?;
    let states: Vec<SlbiLayerState<f32>> = ck.states().map_err(|e| e.to_string())?;
    let (_, test) = splitlbi::data::load_mnist::<f32>(&data).map_err(|e| e.to_string())?;
    let dense = net.accuracy(&test).map_err(|e| e.to_string())?;
    let prune = |net: &Network<f32>, name: &str, rate: f64| -> Result<Network<f32>, String> {
        let l = net.layer_by_name(name).ok_or(format!("no layer {name}"))?;
        let spec = &states.iter().find(|s| s.layer_index == l).ok_or("layer not penalized")?.spec;
        prune_by_rank(net, l, spec, &order_from_ranking(&ranking, name), rate).map_err(|e| e.to_string())
    };

    let f7 = prune(&net, "fc2", 0.95)?;
    let w = f7.weight(f7.layer_by_name("fc2").ok_or("no fc2")?).map_err(|e| e.to_string())?;
    let kept = w.data().iter().filter(|&&v| v != 0.0).count() as f64 / w.len() as f64;
    let acc_f7 = f7.accuracy(&test).map_err(|e| e.to_string())?;
    let drop = dense - acc_f7;

    let f6 = prune(&net, "fc1", 0.95)?;
    let mut combined = None;
    for rate in [0.5, 0.6, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95] {
        let both = prune(&f6, "conv3", rate)?;
        let frac = both.nonzero_param_count() as f64 / both.param_count() as f64;
        if frac <= 0.20 {
            combined = Some((rate, frac, both.accuracy(&test).map_err(|e| e.to_string())?));
            break;
        }
    }
    let t = secs(start.elapsed());
    let Some((rate, frac, acc_both)) = combined else {
        return Ok(Outcome::Fail("no conv3 rate with fc1 at 0.95 reaches 20% of parameters".into()));
    };
    Ok(verdict(
        kept <= 0.05 && drop <= 0.01 && acc_both >= 0.975,
        format!(
            "dense {dense:.4}; fc2 keeps {:.2}% of weights, accuracy {acc_f7:.4} (drop {:.2} pts <= 1.0); \
             fc1 at 0.95 + conv3 at {rate} keeps {:.2}% of all params (<= 20%), accuracy {acc_both:.4} (>= 0.975); {t:.0}s",
            100.0 * kept,
            100.0 * drop,
            100.0 * frac
        ),
    ))
}

// ---------------------------------------------------------------- 7

fn criterion_ordering(tmp: &Path) -> Check {
    let Some(data) = mnist_dir() else {
        return Ok(Outcome::Skip("MNIST files not found".into()));
    };
    let start = Instant::now();
    let mut sums = [0.0; 3];
    let mut per_seed = Vec::new();
    for seed in 1..=5u64 {
        let out = tmp.join(format!("desk_{seed}"));
        let mut cfg = config("desk_prune.cfg", &data, &out)?;
        cfg.seed = seed;
        cmd_train(&cfg).map_err(|e| e.to_string())?;
        let report = cmd_prune(&cfg).map_err(|e| e.to_string())?;
        let mut accs = [f64::NAN; 3];
        for p in report.curve.iter().filter(|p| p.rate == 0.5) {
            let slot = ["sc", "m", "random"].iter().position(|c| *c == p.criterion);
            if let Some(k) = slot {
                accs[k] = p.accuracy;
            }
        }
        for k in 0..3 {
            sums[k] += accs[k];
        }
        per_seed.push(format!("{:.3}/{:.3}/{:.3}", accs[0], accs[1], accs[2]));
    }
    let [sc, m, random] = sums.map(|s| s / 5.0);
    Ok(verdict(
        sc >= m && m >= random && sc - random >= 0.02,
        format!(
            "mean accuracy at 50% removal Sc {sc:.4} >= M {m:.4} >= random {random:.4}, gap {:.2} pts (>= 2); per seed Sc/M/random [{}]; {:.0}s",
            100.0 * (sc - random),
            per_seed.join(", "),
            secs(start.elapsed())
        ),
    ))
}

// ---------------------------------------------------------------- 8

fn criterion_reproducible(tmp: &Path) -> Check {
    let Some(data) = mnist_dir() else {
        return Ok(Outcome::Skip("MNIST files not found".into()));
    };
    let out = tmp.join("repro");
    let mut cfg = config("desk_prune.cfg", &data, &out)?;
    cfg.limit = 2000;
    cfg.hyper.epochs = 2;
    let files = ["path.csv", "metrics.json", "checkpoint.json", "manifest.json"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        cmd_train(&cfg).map_err(|e| e.to_string())?;
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| fs::read(out.join(f))).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        runs.push(bytes);
        fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
    }
    let differing: Vec<&str> = files.iter().zip(runs[0].iter().zip(&runs[1])).filter(|(_, (a, b))| a != b).map(|(f, _)| *f).collect();
    let nonempty = runs[0][0].len() > 100;
    Ok(verdict(
        differing.is_empty() && nonempty,
        format!("two runs, compared {files:?}; differing {differing:?}"),
    ))
}

// ---------------------------------------------------------------- 9

/// CIFAR-10 binary batches whose class is encoded as a colour and position
/// pattern plus noise.
fn write_fake_cifar(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let mut rng = SeededRng::new(900);
    let mut batch = |count: usize| {
        let mut bytes = Vec::with_capacity(count * 3073);
        for _ in 0..count {
            let label = rng.below(10);
            bytes.push(label as u8);
            for ch in 0..3 {
                for px in 0..1024 {
                    let (row, col) = (px / 32, px % 32);
                    let on = (row / 8 + col / 8 + ch) % 10 == label || (ch == label % 3 && row / 4 == label % 8);
                    let base = if on { 200.0 } else { 40.0 };
                    bytes.push((base + 30.0 * rng.normal()).clamp(0.0, 255.0) as u8);
                }
            }
        }
        bytes
    };
    for k in 1..=5 {
        fs::write(dir.join(format!("data_batch_{k}.bin")), batch(60)).map_err(|e| e.to_string())?;
    }
    fs::write(dir.join("test_batch.bin"), batch(100)).map_err(|e| e.to_string())
}

fn criterion_cifar(tmp: &Path) -> Check {
    let data = tmp.join("cifar_data");
    write_fake_cifar(&data)?;
    let out = tmp.join("cifar");
    let cfg = config("cifar_reduced.cfg", &data, &out)?;
    let m: Metrics = cmd_train(&cfg).map_err(|e| e.to_string())?;
    let finite = m.test_acc_dense.is_finite() && m.test_acc_sparse.is_finite();
    let csv = fs::read_to_string(out.join("path.csv")).map_err(|e| e.to_string())?;
    let path = SolutionPath::from_csv(&csv).map_err(|e| e.to_string())?;
    let ck = Checkpoint::load(&out.join("checkpoint.json")).map_err(|e| e.to_string())?;
    let net: Network<f32> = ck.network().map_err(|e| e.to_string())?;
    let bad = verify_manifest(&out).map_err(|e| e.to_string())?;
    Ok(verdict(
        finite && m.epochs_run == 2 && path.num_epochs() == 2 && net.param_count() == m.param_count && bad.is_empty(),
        format!(
            "synthetic CIFAR-format files, {} epochs, path epochs {}, dense {:.3}, sparse {:.3}, checkpoint reloads, manifest mismatches {bad:?}",
            m.epochs_run,
            path.num_epochs(),
            m.test_acc_dense,
            m.test_acc_sparse
        ),
    ))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("1 prox oracle", Box::new(criterion_prox)),
        ("2 gradient check", Box::new(criterion_gradients)),
        ("3 split LBI reference", Box::new(criterion_split_lbi)),
        ("4 support recovery", Box::new(criterion_support_recovery)),
        ("5 MNIST forward selection", Box::new(|| criterion_forward(tmp.path()))),
        ("6 LeNet backward selection", Box::new(|| criterion_backward(tmp.path()))),
        ("7 criterion ordering", Box::new(|| criterion_ordering(tmp.path()))),
        ("8 reproducibility", Box::new(|| criterion_reproducible(tmp.path()))),
        ("9 reduced CIFAR run", Box::new(|| criterion_cifar(tmp.path()))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let line = match run() {
            Ok(Outcome::Pass(d)) => format!("PASS {name}: {d}"),
            Ok(Outcome::Skip(d)) => format!("SKIP {name}: {d}"),
            Ok(Outcome::Fail(d)) => {
                failed += 1;
                format!("FAIL {name}: {d}")
            }
            Err(e) => {
                failed += 1;
                format!("FAIL {name}: error: {e}")
            }
        };
        println!("{line}");
    }
    println!("{} of {} criteria failed", failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
