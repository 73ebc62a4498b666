//! Self-checks on synthetic problems: the proximal map against a
//! one-dimensional oracle, the stochastic iteration against plain Split LBI,
//! and support recovery on sparse linear regression.

use splitlbi::data::gen_synth;
use splitlbi::linear::{auc, LinearData, LinearModel};
use splitlbi::penalty::{moreau_check, prox, shrink};
use splitlbi::slbi::run_training;
use splitlbi::{GroupIndex, Model, PenaltyKind, PenaltySpec, SeededRng, SlbiHyper, SlbiLayerState, SplitLbi, Tensor};

use crate::config::RunConfig;
use crate::CliError;

pub const PROX_TOL: f64 = 1e-8;
pub const EQUIV_TOL: f64 = 1e-10;
pub const AUC_MIN: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthReport {
    pub checks: Vec<Check>,
    pub seed_aucs: Vec<f64>,
}

impl SynthReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail))
            .collect()
    }
}

/// Minimizer of `½(c − r)² + c` over `c ≥ 0`, by bisection on the
/// one-sided derivative `c − r + 1`.
fn ray_oracle(r: f64) -> f64 {
    let slope = |c: f64| c - r + 1.0;
    if slope(0.0) >= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, r);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn prox_battery(cases: usize, threshold: f64, rng: &mut SeededRng) -> Result<(Check, Check), CliError> {
    let mut worst: f64 = 0.0;
    let mut moreau_failures = 0;
    for _ in 0..cases {
        let len = 1 + rng.below(6);
        let scale = 0.1 + 3.0 * rng.uniform();
        let z = Tensor::from_fn(&[len], |_| scale * rng.normal());
        let spec = PenaltySpec {
            kind: PenaltyKind::GroupLasso,
            groups: GroupIndex::explicit(vec![(0..len).collect()], len)?,
        };
        let r = z.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let c = ray_oracle(r);
        let candidate = shrink(&z, threshold, &spec)?;
        for (got, zi) in candidate.data().iter().zip(z.data()) {
            let want = if r > 0.0 { c * zi / r } else { 0.0 };
            worst = worst.max((got - want).abs());
        }

        let kappa = 0.1 + 10.0 * rng.uniform();
        let gamma = if threshold == 1.0 {
            prox(&z, kappa, &spec)?
        } else {
            candidate.map(|v| v * kappa)
        };
        if !moreau_check(&z, &gamma, kappa, &spec) {
            moreau_failures += 1;
        }
    }
    let oracle = Check {
        name: "prox_oracle".into(),
        passed: worst <= PROX_TOL,
        detail: format!("{cases} cases, max deviation {worst:.3e} (tol {PROX_TOL:e})"),
    };
    let moreau = Check {
        name: "moreau".into(),
        passed: moreau_failures == 0,
        detail: format!("{moreau_failures} of {cases} cases violate the decomposition"),
    };
    Ok((oracle, moreau))
}

/// Plain full-batch Split LBI on `(1/2n)‖y − Xw‖²` with singleton groups.
fn reference_path(x: &[f64], y: &[f64], p: usize, kappa: f64, nu: f64, alpha: f64, steps: usize) -> Vec<Vec<f64>> {
    let n = y.len();
    let (mut w, mut z, mut gamma) = (vec![0.0; p], vec![0.0; p], vec![0.0; p]);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut grad = vec![0.0; p];
        for (i, yi) in y.iter().enumerate() {
            let row = &x[i * p..(i + 1) * p];
            let resid: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - yi;
            for j in 0..p {
                grad[j] += resid * row[j] / n as f64;
            }
        }
        for j in 0..p {
            let gap = (w[j] - gamma[j]) / nu;
            w[j] -= kappa * alpha * (grad[j] + gap);
            z[j] += alpha * gap;
            gamma[j] = kappa * z[j].signum() * (z[j].abs() - 1.0).max(0.0);
        }
        out.push(w.clone());
    }
    out
}

fn equivalence(rng: &mut SeededRng) -> Result<Check, CliError> {
    let (n, p, steps) = (60, 12, 200);
    let (kappa, nu, alpha) = (10.0, 1.0, 0.01);
    let task = gen_synth(n, p, 3, 2.0, 0.1, rng)?;
    let data = LinearData::new(task.x.clone(), task.y.clone())?;
    let mut model = LinearModel::zeros(p);
    let mut hyper = SlbiHyper::new(kappa, nu);
    hyper.alpha = alpha;
    let mut opt = SplitLbi::new(hyper, vec![SlbiLayerState::new(0, &[1, p], PenaltyKind::Lasso)])?;
    let expected = reference_path(task.x.data(), &task.y, p, kappa, nu, alpha, steps);
    let batch = data.all();
    let mut worst: f64 = 0.0;
    for want in &expected {
        opt.step(&mut model, &batch)?;
        let got = model.params(0).expect("linear layer").weight.data();
        worst = got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    Ok(Check {
        name: "split_lbi_equivalence".into(),
        passed: worst <= EQUIV_TOL,
        detail: format!("{steps} steps, max deviation {worst:.3e} (tol {EQUIV_TOL:e})"),
    })
}

/// AUC of first-entry order against the true support for one seed.
pub fn recovery_auc(seed: u64) -> Result<f64, CliError> {
    let (n, p, s) = (200, 50, 5);
    let mut rng = SeededRng::new(seed);
    let task = gen_synth(n, p, s, 2.0, 0.1, &mut rng)?;
    let data = LinearData::new(task.x, task.y)?;
    let mut model = LinearModel::zeros(p);
    let mut hyper = SlbiHyper::new(10.0, 1.0);
    hyper.batch_size = n;
    hyper.epochs = 3000;
    let mut opt = SplitLbi::for_model(hyper, &model, &[(0, PenaltyKind::Lasso)])?;
    let out = run_training(&mut model, &mut opt, &data, &mut rng, None, &mut [])?;
    let never = out.path.num_epochs() + 1;
    let scores: Vec<f64> = out
        .path
        .first_entry("linear")
        .unwrap_or_default()
        .iter()
        .map(|e| -(e.unwrap_or(never) as f64))
        .collect();
    let truth: Vec<bool> = (0..p).map(|j| task.support.contains(&j)).collect();
    Ok(auc(&scores, &truth)?)
}

/// Runs every check. Failed checks are reported, not raised.
pub fn cmd_synth_check(cfg: &RunConfig) -> Result<SynthReport, CliError> {
    cfg.validate()?;
    let root = SeededRng::new(cfg.seed);
    let (oracle, moreau) = prox_battery(cfg.synth_cases, cfg.synth_prox_threshold, &mut root.stream(0))?;
    let equiv = equivalence(&mut root.stream(1))?;

    let seed_aucs = (0..cfg.synth_seeds as u64)
        .map(|k| recovery_auc(cfg.seed.wrapping_mul(1000).wrapping_add(k)))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = seed_aucs.iter().sum::<f64>() / seed_aucs.len().max(1) as f64;
    let recovery = Check {
        name: "support_recovery".into(),
        passed: !seed_aucs.is_empty() && mean >= AUC_MIN,
        detail: format!(
            "mean AUC {mean:.4} over {} seeds (min {AUC_MIN}); per seed [{}]",
            seed_aucs.len(),
            seed_aucs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(", ")
        ),
    };
    Ok(SynthReport {
        checks: vec![oracle, moreau, equiv, recovery],
        seed_aucs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_oracle_matches_closed_points() {
        assert_eq!(ray_oracle(0.5), 0.0);
        assert!((ray_oracle(3.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_threshold_is_reported() {
        let mut rng = SeededRng::new(4);
        let (oracle, moreau) = prox_battery(50, 0.9, &mut rng).unwrap();
        assert!(!oracle.passed);
        assert!(!moreau.passed);
        let (oracle, moreau) = prox_battery(50, 1.0, &mut rng).unwrap();
        assert!(oracle.passed, "{}", oracle.detail);
        assert!(moreau.passed, "{}", moreau.detail);
    }

    #[test]
    fn equivalence_holds() {
        assert!(equivalence(&mut SeededRng::new(2)).unwrap().passed);
    }
}
