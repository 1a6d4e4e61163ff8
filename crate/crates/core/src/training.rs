//! AUC-driven training of the unrolled models: subsampled soft-AUC loss,
//! central finite-difference gradients over the flattened parameters,
//! AdamW with decoupled weight decay, a soft-to-hard beta homotopy, k-fold
//! cross-validation, and log-grid search for the classical solvers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{auc, normalize_scores, subsampled_soft_auc, LabeledScores};
use crate::scenario::{unfold_time, Scenario};
use crate::solvers::{
    run_to_convergence, tbsca_ad, tbsca_ad_aug, RegParams, SolverState, SolverVariant,
};
use crate::unrolled::{default_rank, forward_from, init_state, ModelParams};

/// Piecewise-constant learning rate: the initial value is multiplied by
/// `decay` at every boundary step.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub boundaries: Vec<usize>,
}

impl LrSchedule {
    /// Six equal segments decaying from `initial` to `initial * decay^5`.
    pub fn six_segments(initial: f64, decay: f64, n_steps: usize) -> Self {
        let boundaries = (1..6).map(|s| s * n_steps / 6).collect();
        Self {
            initial,
            decay,
            boundaries,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        let drops = self.boundaries.iter().filter(|&&b| step >= b).count() as i32;
        self.initial * self.decay.powi(drops)
    }
}

/// Weight decay that drops from `high` to `low` at `drop_step`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightDecaySchedule {
    pub high: f64,
    pub low: f64,
    pub drop_step: usize,
}

impl WeightDecaySchedule {
    pub fn at(&self, step: usize) -> f64 {
        if step >= self.drop_step {
            self.low
        } else {
            self.high
        }
    }
}

/// Soft-to-hard annealing of the loss sharpness.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSchedule {
    pub beta0: f64,
    pub i0: usize,
    pub beta1: f64,
    pub i1: usize,
}

/// `beta0` until `i0`, `beta1` from `i1`, geometric interpolation between
/// (the natural path for a scale parameter); continuous and non-decreasing.
pub fn beta_schedule(step: usize, cfg: &BetaSchedule) -> f64 {
    if step <= cfg.i0 {
        cfg.beta0
    } else if step >= cfg.i1 {
        cfg.beta1
    } else {
        let frac = (step - cfg.i0) as f64 / (cfg.i1 - cfg.i0) as f64;
        cfg.beta0 * (cfg.beta1 / cfg.beta0).powf(frac)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub n_steps: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub weight_decay: WeightDecaySchedule,
    pub beta: BetaSchedule,
    pub k_sub: usize,
    pub seed: u64,
    /// Relative central-difference perturbation.
    pub fd_step: f64,
    pub eval_every: usize,
}

impl TrainConfig {
    /// Protocol defaults scaled to a step budget: lr 0.01 decaying by 0.25
    /// over six segments, weight decay 0.05 dropping to 0.01 at 70% of the
    /// budget, and the beta homotopy from 10 to 100 between 25% and 55%.
    pub fn scaled(n_steps: usize, batch_size: usize, k_sub: usize, seed: u64) -> Self {
        Self {
            n_steps,
            batch_size,
            lr: LrSchedule::six_segments(0.01, 0.25, n_steps),
            weight_decay: WeightDecaySchedule {
                high: 0.05,
                low: 0.01,
                drop_step: n_steps * 7 / 10,
            },
            beta: BetaSchedule {
                beta0: 10.0,
                i0: n_steps / 4,
                beta1: 100.0,
                i1: n_steps * 55 / 100,
            },
            k_sub,
            seed,
            fd_step: 1e-4,
            eval_every: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.k_sub == 0 || self.eval_every == 0 {
            return Err(Error::arg("batch_size, k_sub and eval_every must be positive"));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::arg("fd_step must be positive"));
        }
        if !(self.beta.beta0 > 0.0 && self.beta.beta1 > 0.0) {
            return Err(Error::arg("beta endpoints must be positive"));
        }
        if self.n_steps > 0 && !(self.beta.i0 < self.beta.i1 && self.beta.i1 <= self.n_steps) {
            return Err(Error::arg("need i0 < i1 <= n_steps"));
        }
        Ok(())
    }
}

/// One scenario with the seed that fixes its forward-pass initialization.
#[derive(Clone, Copy)]
pub struct TrainItem<'a> {
    pub scenario: &'a Scenario,
    pub init_seed: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58476D1CE4E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Seed for dataset item `idx` under a base seed.
pub fn item_seed(base: u64, idx: usize) -> u64 {
    splitmix(base ^ (idx as u64).wrapping_mul(0xA24BAED4963EE407))
}

/// Scores of a finished state against a scenario's ground truth.
fn labeled_scores(state: &SolverState, scenario: &Scenario) -> Result<LabeledScores> {
    let scores = unfold_time(&normalize_scores(&state.a));
    let truth = unfold_time(&scenario.truth_mask());
    LabeledScores::from_matrix(&scores, &truth)
}

/// Negative mean subsampled beta-soft AUC over the batch.  Scenarios with
/// no ground-truth anomalies are skipped with a warning; the mean runs over
/// the included scenarios only.
pub fn loss(params: &ModelParams, batch: &[TrainItem<'_>], beta: f64, k_sub: usize) -> Result<f64> {
    let mut terms: Vec<f64> = Vec::with_capacity(batch.len());
    for item in batch {
        if item.scenario.anomaly_count() == 0 {
            log::warn!("skipping scenario without ground-truth anomalies in loss");
            continue;
        }
        let obs = item.scenario.observation();
        let rank = params
            .rank
            .unwrap_or_else(|| default_rank(obs.y.dims().0, obs.y.dims().1, obs.y.dims().2));
        let init = init_state(&obs, rank, item.init_seed)?;
        let state = forward_from(&obs, params, init)?;
        let scores = labeled_scores(&state, item.scenario)?;
        terms.push(subsampled_soft_auc(&scores, beta, k_sub)?);
    }
    if terms.is_empty() {
        return Err(Error::arg("loss: no scenario in the batch has anomalies"));
    }
    // Batch-order-independent mean.
    let n = terms.len();
    terms.sort_unstable_by(f64::total_cmp);
    Ok(-(terms.iter().sum::<f64>() / n as f64))
}

/// Mean exact AUC of a model over scenarios (validation metric).
pub fn evaluate_model(params: &ModelParams, scenarios: &[Scenario], seed_base: u64) -> Result<f64> {
    if scenarios.is_empty() {
        return Err(Error::arg("evaluate_model: empty scenario set"));
    }
    let aucs: Vec<Result<f64>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(idx, scn)| {
            let obs = scn.observation();
            let rank = params
                .rank
                .unwrap_or_else(|| default_rank(obs.y.dims().0, obs.y.dims().1, obs.y.dims().2));
            let init = init_state(&obs, rank, item_seed(seed_base, idx))?;
            let state = forward_from(&obs, params, init)?;
            auc(&labeled_scores(&state, scn)?)
        })
        .collect();
    let mut total = 0.0;
    for a in &aucs {
        match a {
            Ok(v) => total += v,
            Err(e) => return Err(Error::arg(format!("evaluate_model: {e}"))),
        }
    }
    Ok(total / scenarios.len() as f64)
}

/// Central finite differences of an arbitrary functional; coordinates whose
/// probes come back non-finite get a zero gradient and are counted.
/// Probes run concurrently; the result is deterministic.
pub fn fd_gradient(
    f: impl Fn(&[f64]) -> f64 + Sync,
    theta: &[f64],
    fd_step: f64,
) -> (Vec<f64>, usize) {
    let n = theta.len();
    let probes: Vec<f64> = (0..2 * n)
        .into_par_iter()
        .map(|p| {
            let k = p / 2;
            let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
            let h = fd_step * theta[k].abs().max(1.0);
            let mut probe = theta.to_vec();
            probe[k] += sign * h;
            f(&probe)
        })
        .collect();
    let mut grad = vec![0.0; n];
    let mut saturated = 0usize;
    for k in 0..n {
        let (plus, minus) = (probes[2 * k], probes[2 * k + 1]);
        if plus.is_finite() && minus.is_finite() {
            let h = fd_step * theta[k].abs().max(1.0);
            grad[k] = (plus - minus) / (2.0 * h);
        } else {
            saturated += 1;
        }
    }
    (grad, saturated)
}

/// FD gradient of the training loss at `theta` (flattened parameters).
pub fn grad_estimate(
    template: &ModelParams,
    theta: &[f64],
    batch: &[TrainItem<'_>],
    beta: f64,
    k_sub: usize,
    fd_step: f64,
) -> Result<(Vec<f64>, usize)> {
    // Surface real errors from the unperturbed point; probe failures are
    // treated as saturation.
    loss(&template.unflatten(theta)?, batch, beta, k_sub)?;
    let f = |t: &[f64]| -> f64 {
        match template.unflatten(t) {
            Ok(p) => loss(&p, batch, beta, k_sub).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        }
    };
    Ok(fd_gradient(f, theta, fd_step))
}

/// Adam moment estimates with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AdamW step: bias-corrected moments plus `lr * wd * theta` decay
/// applied outside the adaptive term.
pub fn adamw_step(opt: &mut OptimizerState, theta: &mut [f64], grad: &[f64], lr: f64, wd: f64) {
    assert_eq!(theta.len(), grad.len());
    assert_eq!(theta.len(), opt.m.len());
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for k in 0..theta.len() {
        opt.m[k] = opt.beta1 * opt.m[k] + (1.0 - opt.beta1) * grad[k];
        opt.v[k] = opt.beta2 * opt.v[k] + (1.0 - opt.beta2) * grad[k] * grad[k];
        let m_hat = opt.m[k] / bc1;
        let v_hat = opt.v[k] / bc2;
        theta[k] -= lr * (m_hat / (v_hat.sqrt() + opt.eps)) + lr * wd * theta[k];
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub loss: f64,
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<HistoryRow>,
    pub optimizer: OptimizerState,
}

/// Minibatch training loop.  Batch order comes from a seeded shuffle per
/// epoch; the loss, gradients and schedules are all deterministic, so two
/// runs with the same inputs produce identical histories.
pub fn train(
    train_set: &[Scenario],
    val_set: Option<&[Scenario]>,
    template: &ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::arg("train: empty training set"));
    }
    let items: Vec<TrainItem<'_>> = train_set
        .iter()
        .enumerate()
        .map(|(i, s)| TrainItem {
            scenario: s,
            init_seed: item_seed(cfg.seed, i),
        })
        .collect();

    let mut params = template.clone();
    let mut theta = params.flatten();
    let mut opt = OptimizerState::new(theta.len());
    let mut history = Vec::new();

    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    let mut cursor = 0usize;
    for step in 0..cfg.n_steps {
        // Refill the epoch order on demand with a seeded shuffle.
        if cursor + cfg.batch_size.min(items.len()) > order.len() {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..items.len()).collect();
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ 0xE10C ^ epoch));
            perm.shuffle(&mut rng);
            order = perm;
            cursor = 0;
            epoch += 1;
        }
        let take = cfg.batch_size.min(items.len());
        let batch: Vec<TrainItem<'_>> = order[cursor..cursor + take]
            .iter()
            .map(|&i| items[i])
            .collect();
        cursor += take;

        let beta = beta_schedule(step, &cfg.beta);
        let lr = cfg.lr.at(step);
        let wd = cfg.weight_decay.at(step);
        let step_loss = loss(&params, &batch, beta, cfg.k_sub)?;
        let (grad, _saturated) =
            grad_estimate(&params, &theta, &batch, beta, cfg.k_sub, cfg.fd_step)?;
        adamw_step(&mut opt, &mut theta, &grad, lr, wd);
        params = params.unflatten(&theta)?;

        let val_auc = match val_set {
            Some(vs) if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.n_steps => {
                Some(evaluate_model(&params, vs, cfg.seed ^ 0xEA11)?)
            }
            _ => None,
        };
        history.push(HistoryRow {
            step,
            loss: step_loss,
            val_auc,
        });
    }
    Ok(TrainOutcome {
        params,
        history,
        optimizer: opt,
    })
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub params: ModelParams,
    pub val_auc: f64,
}

#[derive(Clone, Debug)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    pub sd: f64,
}

/// k-fold cross-validation over contiguous deterministic folds; reports the
/// mean and sample standard deviation of the per-fold validation AUC.
pub fn cross_validate(
    dataset: &[Scenario],
    template: &ModelParams,
    cfg: &TrainConfig,
    k_folds: usize,
) -> Result<CrossValidation> {
    if k_folds < 2 {
        return Err(Error::arg("cross-validation needs at least 2 folds"));
    }
    if dataset.len() < k_folds {
        return Err(Error::arg("dataset smaller than the fold count"));
    }
    let n = dataset.len();
    let mut folds = Vec::new();
    for f in 0..k_folds {
        let lo = f * n / k_folds;
        let hi = (f + 1) * n / k_folds;
        let val: Vec<Scenario> = dataset[lo..hi].to_vec();
        let train_set: Vec<Scenario> = dataset[..lo]
            .iter()
            .chain(dataset[hi..].iter())
            .cloned()
            .collect();
        let outcome = train(&train_set, Some(&val), template, cfg)?;
        let val_auc = evaluate_model(&outcome.params, &val, cfg.seed ^ 0xEA11)?;
        folds.push(FoldResult {
            params: outcome.params,
            val_auc,
        });
    }
    let mean = folds.iter().map(|f| f.val_auc).sum::<f64>() / k_folds as f64;
    let var = folds
        .iter()
        .map(|f| (f.val_auc - mean).powi(2))
        .sum::<f64>()
        / (k_folds - 1) as f64;
    Ok(CrossValidation {
        folds,
        mean,
        sd: var.sqrt(),
    })
}

/// Inclusive log-space axis `min, min+step, ..., max`.
pub fn log_axis(min: f64, max: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut v = min;
    while v <= max + 1e-9 {
        out.push(v);
        v += step;
    }
    out
}

#[derive(Clone, Debug)]
pub struct GridSpec {
    pub log_lambda: Vec<f64>,
    pub log_mu: Vec<f64>,
    /// Optional third axis; the augmented solver uses `nu_default` when absent.
    pub log_nu: Option<Vec<f64>>,
    pub nu_default: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub log_lambda: f64,
    pub log_mu: f64,
    pub log_nu: Option<f64>,
    pub auc: f64,
}

#[derive(Clone, Debug)]
pub struct GridSearchResult {
    pub best: GridPoint,
    pub grid: Vec<GridPoint>,
}

/// Which classical solver a grid search tunes, and for how many iterations.
#[derive(Clone, Copy, Debug)]
pub struct ClassicalSpec {
    pub variant: SolverVariant,
    pub iterations: Option<usize>,
    pub rank: Option<usize>,
}

/// Runs a classical solver with scalar regularization on one scenario and
/// returns the achieved AUC.
pub fn classical_auc(
    scn: &Scenario,
    spec: &ClassicalSpec,
    lambda: f64,
    mu: f64,
    nu: f64,
    init_seed: u64,
) -> Result<f64> {
    let obs = scn.observation();
    let (e, t1, t2) = obs.y.dims();
    let rank = spec.rank.unwrap_or_else(|| default_rank(e, t1, t2));
    let init = init_state(&obs, rank, init_seed)?;
    let reg = RegParams::scalar(lambda, mu, nu, &obs)?;
    let state = match (spec.variant, spec.iterations) {
        (SolverVariant::Td, Some(l)) => tbsca_ad(&obs, &reg, l, init)?,
        (SolverVariant::Aug { nonneg }, Some(l)) => tbsca_ad_aug(&obs, &reg, l, init, nonneg)?,
        (variant, None) => run_to_convergence(&obs, &reg, init, variant, None, None)?,
    };
    auc(&labeled_scores(&state, scn)?)
}

/// Exhaustive log-grid search maximizing the mean AUC over `dataset`.
/// Ties resolve to the smallest `log_lambda`, then `log_mu`, then `log_nu`.
pub fn grid_search(
    spec: &ClassicalSpec,
    grid: &GridSpec,
    dataset: &[Scenario],
    seed: u64,
) -> Result<GridSearchResult> {
    if dataset.is_empty() {
        return Err(Error::arg("grid_search: empty dataset"));
    }
    if grid.log_lambda.is_empty() || grid.log_mu.is_empty() {
        return Err(Error::arg("grid_search: empty grid"));
    }
    let nus: Vec<Option<f64>> = match &grid.log_nu {
        Some(axis) if !axis.is_empty() => axis.iter().copied().map(Some).collect(),
        _ => vec![None],
    };
    let mut cells = Vec::new();
    for &la in &grid.log_lambda {
        for &mu in &grid.log_mu {
            for &nu in &nus {
                cells.push((la, mu, nu));
            }
        }
    }
    let points: Vec<Result<GridPoint>> = cells
        .par_iter()
        .map(|&(la, mu, nu)| {
            let lambda = la.exp();
            let mu_v = mu.exp();
            let nu_v = nu.map(f64::exp).unwrap_or(grid.nu_default);
            let mut total = 0.0;
            for (idx, scn) in dataset.iter().enumerate() {
                total += classical_auc(scn, spec, lambda, mu_v, nu_v, item_seed(seed, idx))?;
            }
            Ok(GridPoint {
                log_lambda: la,
                log_mu: mu,
                log_nu: nu,
                auc: total / dataset.len() as f64,
            })
        })
        .collect();
    let mut grid_out = Vec::with_capacity(points.len());
    for p in points {
        grid_out.push(p?);
    }
    let mut best = grid_out[0].clone();
    for p in &grid_out[1..] {
        if p.auc > best.auc {
            best = p.clone();
        }
    }
    Ok(GridSearchResult {
        best,
        grid: grid_out,
    })
}

/// Emits `step\tloss\tval_auc` rows (empty cell when no evaluation ran).
pub fn write_history_tsv(history: &[HistoryRow], mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "step\tloss\tval_auc")?;
    for row in history {
        match row.val_auc {
            Some(v) => writeln!(out, "{}\t{}\t{}", row.step, row.loss, v)?,
            None => writeln!(out, "{}\t{}\t", row.step, row.loss)?,
        }
    }
    Ok(())
}

/// Emits `log_lambda\tlog_mu\tauc` rows (plus `log_nu` when swept).
pub fn write_heatmap_tsv(grid: &[GridPoint], mut out: impl std::io::Write) -> std::io::Result<()> {
    let with_nu = grid.iter().any(|p| p.log_nu.is_some());
    if with_nu {
        writeln!(out, "log_lambda\tlog_mu\tlog_nu\tauc")?;
    } else {
        writeln!(out, "log_lambda\tlog_mu\tauc")?;
    }
    for p in grid {
        match p.log_nu {
            Some(nu) => writeln!(out, "{}\t{}\t{}\t{}", p.log_lambda, p.log_mu, nu, p.auc)?,
            None => writeln!(out, "{}\t{}\t{}", p.log_lambda, p.log_mu, p.auc)?,
        }
    }
    Ok(())
}
