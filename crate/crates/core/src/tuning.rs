//! Successive halving and Hyperband over INN hyperparameters.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DesignParams, LabeledDataset, N_LABELS};
use crate::flow::{InnConfig, InnModel};
use crate::losses::LossWeights;
use crate::surrogate::SurrogateTriple;
use crate::training::{InnTrainer, LrSchedule, TrainConfig};
use crate::workflow::{filter_designs, generate_candidates, target_seed, TargetGrid, WorkflowError};

#[derive(Debug, thiserror::Error)]
pub enum TuningError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub blocks: usize,
    pub hidden_width: usize,
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub lambda_z: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        let w = LossWeights::default();
        let inn = InnConfig::default();
        Self {
            learning_rate: 1e-3,
            batch_size: 200,
            blocks: inn.blocks,
            hidden_width: inn.hidden_width,
            lambda_x: w.x,
            lambda_y: w.y,
            lambda_z: w.z,
        }
    }
}

impl HyperParams {
    pub fn inn_config(&self, seed: u64) -> InnConfig {
        InnConfig {
            blocks: self.blocks,
            hidden_width: self.hidden_width,
            seed,
            ..InnConfig::default()
        }
    }

    /// Training setup whose learning-rate drops sit at thirds of `horizon`
    /// epochs, independent of the rung budget.
    pub fn train_config(&self, epochs: usize, horizon: usize, seed: u64) -> TrainConfig {
        let mut drops: Vec<usize> = [horizon / 3, 2 * horizon / 3].into_iter().filter(|&e| e > 0 && e < epochs).collect();
        drops.dedup();
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            schedule: LrSchedule {
                initial: self.learning_rate,
                drop_factor: 10.0,
                drop_epochs: drops,
            },
            loss_weights: LossWeights {
                x: self.lambda_x,
                y: self.lambda_y,
                z: self.lambda_z,
            },
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperparamSpace {
    pub learning_rate: (f64, f64),
    pub batch_sizes: Vec<usize>,
    pub blocks: (usize, usize),
    pub hidden_width: (usize, usize),
    pub lambda: (f64, f64),
}

impl Default for HyperparamSpace {
    fn default() -> Self {
        Self {
            learning_rate: (1e-4, 1e-2),
            batch_sizes: vec![50, 100, 200, 400],
            blocks: (4, 12),
            hidden_width: (32, 256),
            lambda: (1e1, 1e4),
        }
    }
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
}

impl HyperparamSpace {
    pub fn validate(&self) -> Result<(), TuningError> {
        let ok_log = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !ok_log(self.learning_rate)
            || !ok_log(self.lambda)
            || self.batch_sizes.is_empty()
            || self.batch_sizes.contains(&0)
            || self.blocks.0 == 0
            || self.blocks.0 > self.blocks.1
            || self.hidden_width.0 == 0
            || self.hidden_width.0 > self.hidden_width.1
        {
            return Err(TuningError::Invalid(format!("malformed search space {self:?}")));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> HyperParams {
        HyperParams {
            learning_rate: log_uniform(rng, self.learning_rate),
            batch_size: self.batch_sizes[rng.random_range(0..self.batch_sizes.len())],
            blocks: rng.random_range(self.blocks.0..=self.blocks.1),
            hidden_width: rng.random_range(self.hidden_width.0..=self.hidden_width.1),
            lambda_x: log_uniform(rng, self.lambda),
            lambda_y: log_uniform(rng, self.lambda),
            lambda_z: log_uniform(rng, self.lambda),
        }
    }

    pub fn contains(&self, h: &HyperParams) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        within(h.learning_rate, self.learning_rate)
            && self.batch_sizes.contains(&h.batch_size)
            && (self.blocks.0..=self.blocks.1).contains(&h.blocks)
            && (self.hidden_width.0..=self.hidden_width.1).contains(&h.hidden_width)
            && [h.lambda_x, h.lambda_y, h.lambda_z].iter().all(|&l| within(l, self.lambda))
    }
}

/// Scores a configuration after training it for `epochs` epochs. Lower is better.
pub trait Evaluator {
    fn evaluate(&mut self, config_index: usize, params: &HyperParams, epochs: usize) -> Result<f64, TuningError>;
}

/// One (bracket, rung, config) evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub bracket: usize,
    pub rung: usize,
    pub config: usize,
    /// `None` when the objective was not finite.
    pub objective: Option<f64>,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalvingOutcome {
    pub best: usize,
    pub best_objective: f64,
    /// Config indices evaluated at each rung.
    pub rungs: Vec<Vec<usize>>,
    pub trace: Vec<TraceRecord>,
    pub epochs_consumed: usize,
}

fn rank_key(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Trains every config at `budgets[0]`, keeps the best `max(1, ⌊n/η⌋)` and
/// repeats at each following budget. Each evaluation trains from scratch.
pub fn successive_halving(
    configs: &[(usize, HyperParams)],
    budgets: &[usize],
    eta: usize,
    bracket: usize,
    evaluator: &mut dyn Evaluator,
) -> Result<HalvingOutcome, TuningError> {
    if configs.is_empty() {
        return Err(TuningError::Invalid("no configurations to evaluate".into()));
    }
    if eta < 2 || budgets.is_empty() || budgets[0] == 0 || budgets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(TuningError::Invalid(format!(
            "need η ≥ 2 and positive, strictly increasing budgets; got η = {eta}, {budgets:?}"
        )));
    }
    let mut alive: Vec<usize> = (0..configs.len()).collect();
    let mut trace = Vec::new();
    let mut rungs = Vec::new();
    let mut consumed = 0;
    let mut last = Vec::new();
    for (rung, &epochs) in budgets.iter().enumerate() {
        let mut scored = Vec::with_capacity(alive.len());
        for &i in &alive {
            let (id, ref hp) = configs[i];
            let obj = evaluator.evaluate(id, hp, epochs)?;
            consumed += epochs;
            trace.push(TraceRecord {
                bracket,
                rung,
                config: id,
                objective: obj.is_finite().then_some(obj),
                epochs,
            });
            scored.push((i, rank_key(obj)));
        }
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        rungs.push(alive.iter().map(|&i| configs[i].0).collect());
        last = scored.clone();
        let keep = (scored.len() / eta).max(1);
        alive = scored[..keep].iter().map(|&(i, _)| i).collect();
    }
    let (best, best_objective) = last[0];
    Ok(HalvingOutcome {
        best: configs[best].0,
        best_objective,
        rungs,
        trace,
        epochs_consumed: consumed,
    })
}

/// One bracket of the Hyperband schedule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: usize,
    /// `(n_i, r_i)` per rung.
    pub rungs: Vec<(usize, usize)>,
}

impl Bracket {
    pub fn epochs(&self) -> usize {
        self.rungs.iter().map(|(n, r)| n * r).sum()
    }
}

/// ⌊log_η R⌋ by integer arithmetic.
fn int_log(r: usize, eta: usize) -> usize {
    let mut s = 0;
    let mut p = eta;
    while p <= r {
        s += 1;
        p = match p.checked_mul(eta) {
            Some(v) => v,
            None => break,
        };
    }
    s
}

/// Bracket table for max budget `r_max` and reduction factor `eta`:
/// `s_max + 1` brackets, `n = ⌈(s_max + 1) η^s / (s + 1)⌉`, `r = R η^{−s}`.
pub fn hyperband_schedule(r_max: usize, eta: usize) -> Result<Vec<Bracket>, TuningError> {
    if eta < 2 || r_max < eta {
        return Err(TuningError::Invalid(format!("need η ≥ 2 and R ≥ η, got R = {r_max}, η = {eta}")));
    }
    let s_max = int_log(r_max, eta);
    let pow = |e: usize| eta.pow(e as u32);
    Ok((0..=s_max)
        .rev()
        .map(|s| {
            let n = ((s_max + 1) * pow(s)).div_ceil(s + 1);
            let rungs = (0..=s)
                .map(|i| {
                    let n_i = n / pow(i);
                    let r_i = (r_max * pow(i) / pow(s)).max(1);
                    (n_i, r_i)
                })
                .collect();
            Bracket { s, rungs }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbandOutcome {
    pub best: HyperParams,
    pub best_config: usize,
    pub best_objective: f64,
    pub brackets: Vec<HalvingOutcome>,
    pub configs: Vec<HyperParams>,
    pub epochs_consumed: usize,
}

impl HyperbandOutcome {
    pub fn trace(&self) -> impl Iterator<Item = &TraceRecord> {
        self.brackets.iter().flat_map(|b| b.trace.iter())
    }

    /// One JSON object per line.
    pub fn write_trace(&self, mut w: impl Write) -> Result<(), TuningError> {
        for rec in self.trace() {
            serde_json::to_writer(&mut w, rec)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Runs every bracket with freshly sampled configurations, numbered in
/// sampling order across brackets.
pub fn hyperband(
    space: &HyperparamSpace,
    r_max: usize,
    eta: usize,
    seed: u64,
    evaluator: &mut dyn Evaluator,
) -> Result<HyperbandOutcome, TuningError> {
    space.validate()?;
    let schedule = hyperband_schedule(r_max, eta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut configs = Vec::new();
    let mut brackets = Vec::new();
    for (b, bracket) in schedule.iter().enumerate() {
        let n = bracket.rungs[0].0;
        let batch: Vec<(usize, HyperParams)> = (0..n)
            .map(|_| {
                let hp = space.sample(&mut rng);
                configs.push(hp.clone());
                (configs.len() - 1, hp)
            })
            .collect();
        let budgets: Vec<usize> = bracket.rungs.iter().map(|r| r.1).collect();
        let out = successive_halving(&batch, &budgets, eta, b, evaluator)?;
        log::info!("bracket {b}: best config {} objective {:.4e}", out.best, out.best_objective);
        brackets.push(out);
    }
    let winner = brackets
        .iter()
        .min_by(|a, b| a.best_objective.total_cmp(&b.best_objective).then(a.best.cmp(&b.best)))
        .expect("at least one bracket");
    Ok(HyperbandOutcome {
        best: configs[winner.best].clone(),
        best_config: winner.best,
        best_objective: winner.best_objective,
        epochs_consumed: brackets.iter().map(|b| b.epochs_consumed).sum(),
        brackets,
        configs,
    })
}

/// Per-label MAE of surrogate-predicted labels of generated, valid designs,
/// and the mean of those MAEs divided by the label spans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeScore {
    pub mae: [f64; N_LABELS],
    /// `f64::INFINITY` when no generated design was valid.
    pub objective: f64,
    pub valid: usize,
    pub generated: usize,
}

/// Generates `per_target` designs for every grid target and scores them through `predict`.
pub fn generative_objective(
    model: &InnModel,
    predict: &dyn Fn(&[DesignParams]) -> Result<Vec<[f64; N_LABELS]>, WorkflowError>,
    grid: &TargetGrid,
    spans: &[f64; N_LABELS],
    per_target: usize,
    seed: u64,
) -> Result<GenerativeScore, WorkflowError> {
    let mut sum = [0.0; N_LABELS];
    let mut valid = 0;
    let mut generated = 0;
    for (i, t) in grid.vectors().iter().enumerate() {
        let cands = generate_candidates(model, t, per_target, target_seed(seed, i))?;
        let kept = filter_designs(&cands);
        generated += kept.total;
        if kept.valid.is_empty() {
            continue;
        }
        for y in predict(&kept.valid)? {
            for k in 0..N_LABELS {
                sum[k] += (y[k] - t[k]).abs();
            }
        }
        valid += kept.valid.len();
    }
    if valid == 0 {
        return Ok(GenerativeScore {
            mae: [f64::INFINITY; N_LABELS],
            objective: f64::INFINITY,
            valid,
            generated,
        });
    }
    let mae = sum.map(|s| s / valid as f64);
    let objective = (0..N_LABELS).map(|k| mae[k] / spans[k]).sum::<f64>() / N_LABELS as f64;
    Ok(GenerativeScore {
        mae,
        objective,
        valid,
        generated,
    })
}

/// Trains an INN per request on a fixed dataset and scores it with the surrogates.
pub struct InnEvaluator<'a> {
    pub data: &'a LabeledDataset,
    pub surrogates: &'a SurrogateTriple,
    pub grid: TargetGrid,
    pub spans: [f64; N_LABELS],
    pub per_target: usize,
    /// Epoch count at which learning-rate drops are placed.
    pub horizon: usize,
    pub seed: u64,
}

impl Evaluator for InnEvaluator<'_> {
    fn evaluate(&mut self, config_index: usize, params: &HyperParams, epochs: usize) -> Result<f64, TuningError> {
        let seed = target_seed(self.seed, config_index);
        let cfg = params.train_config(epochs, self.horizon, seed);
        let mut trainer = InnTrainer::new(self.data, params.inn_config(seed), cfg).map_err(WorkflowError::from)?;
        if let Err(e) = trainer.train_epochs(epochs) {
            log::warn!("config {config_index} diverged: {e}");
            return Ok(f64::INFINITY);
        }
        let (model, _) = trainer.into_parts();
        let predict = |xs: &[DesignParams]| -> Result<Vec<[f64; N_LABELS]>, WorkflowError> {
            Ok(self.surrogates.predict_labels(xs)?.into_iter().map(|y| y.to_array()).collect())
        };
        let score = generative_objective(&model, &predict, &self.grid, &self.spans, self.per_target, self.seed)?;
        Ok(score.objective)
    }
}
