//! The stochastic iteration on one squared-loss linear layer with a full
//! batch must coincide with plain Split LBI.

use splitlbi::data::gen_synth;
use splitlbi::linear::{LinearData, LinearModel};
use splitlbi::{GroupIndex, Model, PenaltyKind, PenaltySpec, SeededRng, SlbiHyper, SlbiLayerState, SplitLbi};

/// Split LBI on `(1/2n)‖y − Xw‖² + (1/2ν)‖w − γ‖²`, coded on plain vectors.
struct Reference {
    w: Vec<f64>,
    z: Vec<f64>,
    gamma: Vec<f64>,
}

impl Reference {
    fn step(&mut self, x: &[f64], y: &[f64], groups: &[Vec<usize>], kappa: f64, nu: f64, alpha: f64) {
        let p = self.w.len();
        let n = y.len();
        let mut grad = vec![0.0; p];
        for (i, yi) in y.iter().enumerate() {
            let row = &x[i * p..(i + 1) * p];
            let pred: f64 = (0..p).map(|j| row[j] * self.w[j]).sum();
            for j in 0..p {
                grad[j] += (pred - yi) * row[j] / n as f64;
            }
        }
        let w_old = self.w.clone();
        for j in 0..p {
            self.w[j] = w_old[j] - kappa * alpha * (grad[j] + (w_old[j] - self.gamma[j]) / nu);
            self.z[j] += alpha * (w_old[j] - self.gamma[j]) / nu;
        }
        for g in groups {
            let norm = g.iter().map(|&j| self.z[j] * self.z[j]).sum::<f64>().sqrt();
            let factor = if norm > 1.0 { kappa * (1.0 - 1.0 / norm) } else { 0.0 };
            for &j in g {
                self.gamma[j] = factor * self.z[j];
            }
        }
    }
}

fn run(seed: u64, groups: Vec<Vec<usize>>, kind: PenaltyKind, kappa: f64, nu: f64, alpha: f64) {
    let (n, p) = (60, 12);
    let mut rng = SeededRng::new(seed);
    let task = gen_synth(n, p, 3, 2.0, 0.1, &mut rng).unwrap();
    let data = LinearData::new(task.x.clone(), task.y.clone()).unwrap();
    let mut model = LinearModel::zeros(p);
    let mut state = SlbiLayerState::new(0, &[1, p], kind);
    state.spec = PenaltySpec {
        kind,
        groups: GroupIndex::explicit(groups.clone(), p).unwrap(),
    };
    let mut hyper = SlbiHyper::new(kappa, nu);
    hyper.alpha = alpha;
    let mut opt = SplitLbi::new(hyper, vec![state]).unwrap();
    let mut reference = Reference {
        w: vec![0.0; p],
        z: vec![0.0; p],
        gamma: vec![0.0; p],
    };
    let batch = data.all();
    let mut entered = false;
    for step in 0..200 {
        opt.step(&mut model, &batch).unwrap();
        reference.step(task.x.data(), &task.y, &groups, kappa, nu, alpha);
        let s = &opt.states[0];
        let cmp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        let w = model.params(0).unwrap().weight.data().to_vec();
        let err = cmp(&w, &reference.w).max(cmp(s.z.data(), &reference.z)).max(cmp(s.gamma.data(), &reference.gamma));
        assert!(err <= 1e-10, "seed {seed} step {step}: deviation {err:e}");
        entered |= reference.gamma.iter().any(|&g| g != 0.0);
    }
    assert!(entered, "path never left the null model; the comparison is vacuous");
}

#[test]
fn lasso_matches_reference() {
    let singletons: Vec<Vec<usize>> = (0..12).map(|j| vec![j]).collect();
    for seed in 0..5 {
        run(seed, singletons.clone(), PenaltyKind::Lasso, 10.0, 1.0, 0.01);
    }
}

#[test]
fn group_lasso_matches_reference() {
    let blocks: Vec<Vec<usize>> = (0..4).map(|g| (3 * g..3 * g + 3).collect()).collect();
    for seed in 0..5 {
        run(seed, blocks.clone(), PenaltyKind::GroupLasso, 5.0, 2.0, 0.02);
    }
}
