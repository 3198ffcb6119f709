//! Adam optimization, learning-rate schedule, bidirectional INN training and
//! plain MLP regression.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainError, LabeledDataset, NormalizationStats, Standardizer, N_LABELS, N_PARAMS};
use crate::flow::{sample_latent, FlowError, InnConfig, InnModel};
use crate::losses::{mmd2_graph, mse_graph, LossError, LossWeights, DEFAULT_BANDWIDTHS};
use crate::numgrad::nn::Mlp;
use crate::numgrad::{Graph, NodeId, NumError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset has {rows} rows, need at least {needed}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("optimizer expects {expected} tensors, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("parameter {index}: shape {param:?} but gradient {grad:?}")]
    ParamShape {
        index: usize,
        param: (usize, usize),
        grad: (usize, usize),
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Piecewise-constant learning rate divided by `drop_factor` at each listed epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub drop_factor: f64,
    pub drop_epochs: Vec<usize>,
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        let drops = self.drop_epochs.iter().filter(|&&e| epoch >= e).count();
        self.initial / self.drop_factor.powi(drops as i32)
    }

    fn validate(&self, epochs: usize) -> Result<(), TrainError> {
        if !(self.initial.is_finite() && self.initial > 0.0) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.initial)));
        }
        if !(self.drop_factor.is_finite() && self.drop_factor >= 1.0) {
            return Err(TrainError::Config(format!("drop factor {} must be ≥ 1", self.drop_factor)));
        }
        if self.drop_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TrainError::Config("drop epochs must be strictly increasing".into()));
        }
        if let Some(&last) = self.drop_epochs.last() {
            if last >= epochs {
                return Err(TrainError::Config(format!("drop epoch {last} is not below {epochs} epochs")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub loss_weights: LossWeights,
    pub bandwidths: Vec<f64>,
    /// Global gradient-norm bound; `f64::INFINITY` disables clipping.
    #[serde(with = "clip_serde")]
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3000,
            batch_size: 200,
            schedule: LrSchedule {
                initial: 1e-3,
                drop_factor: 10.0,
                drop_epochs: vec![1000, 2000],
            },
            weight_decay: 2e-5,
            loss_weights: LossWeights::default(),
            bandwidths: DEFAULT_BANDWIDTHS.to_vec(),
            grad_clip: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// 300 epochs with drops at 100 and 200.
    pub fn desk() -> Self {
        Self::default().with_epochs(300)
    }

    /// Same settings with the schedule drops placed at one and two thirds of `epochs`.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self.schedule.drop_epochs = [epochs / 3, 2 * epochs / 3]
            .into_iter()
            .filter(|&e| e > 0 && e < epochs)
            .collect();
        self.schedule.drop_epochs.dedup();
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch size must be positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(TrainError::Config("weight decay must be non-negative".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(TrainError::Config("gradient clip must be positive".into()));
        }
        self.loss_weights.validate_non_negative()?;
        self.schedule.validate(self.epochs)
    }
}

mod clip_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.schedule.at(epoch)
}

/// Adam moments for an ordered list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.rows(), p.cols()), Tensor::zeros(p.rows(), p.cols())))
            .unzip();
        Self {
            m,
            v,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the norm before scaling.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Magnitude below which weights and first moments are set to zero.
///
/// Weights that receive no gradient decay geometrically under weight decay;
/// left alone they end up subnormal and every product with them takes a slow
/// microcode path.
pub const FLUSH: f64 = 1e-100;

fn flush(v: f64, below: f64) -> f64 {
    if v.abs() < below { 0.0 } else { v }
}

/// One bias-corrected Adam update with coupled L2 weight decay.
/// Results smaller than [`FLUSH`] in magnitude are stored as zero.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor>,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    let params: Vec<&mut Tensor> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::ParamCount {
            expected: state.m.len(),
            got: params.len().max(grads.len()),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(TrainError::ParamShape {
                index: i,
                param: p.shape(),
                grad: g.shape(),
            });
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let step = lr / c1;
    let inv_c2 = 1.0 / c2;
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(moments) {
        let lanes = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((w, &gk), (mk, vk)) in lanes {
            let g = gk + weight_decay * *w;
            *mk = flush(b1 * *mk + (1.0 - b1) * g, FLUSH);
            *vk = flush(b2 * *vk + (1.0 - b2) * g * g, FLUSH * FLUSH);
            *w = flush(*w - step * *mk / ((*vk * inv_c2).sqrt() + eps), FLUSH);
        }
    }
    Ok(())
}

/// λ-weighted epoch means of the three loss terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub l_y: f64,
    pub l_z: f64,
    pub l_x: f64,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

impl EpochRecord {
    pub fn total(&self) -> f64 {
        self.l_y + self.l_z + self.l_x
    }
}

/// Resumable bidirectional trainer: each call to [`InnTrainer::train_epochs`]
/// continues the schedule, optimizer state and random stream where the last
/// one stopped.
pub struct InnTrainer {
    model: InnModel,
    config: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    x: Tensor,
    y: Tensor,
    epoch: usize,
    history: Vec<EpochRecord>,
    started: Instant,
}

impl InnTrainer {
    pub fn new(dataset: &LabeledDataset, inn: InnConfig, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(TrainError::Domain(DomainError::Domain("training dataset is empty".into())));
        }
        let needed = 2 * config.batch_size;
        if dataset.len() < needed {
            return Err(TrainError::TooFewRows {
                rows: dataset.len(),
                needed,
            });
        }
        let xs = dataset.x_rows();
        let ys = dataset.y_rows();
        let stats = NormalizationStats::fit(&xs, &ys)?;
        let x = stats.x.normalize_tensor(&Tensor::from_rows(&xs, N_PARAMS)?);
        let y = stats.y.normalize_tensor(&Tensor::from_rows(&ys, N_LABELS)?);
        let model = InnModel::new(inn, stats, config.loss_weights)?;
        let adam = AdamState::new(model.params());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            config,
            adam,
            rng,
            x,
            y,
            epoch: 0,
            history: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn model(&self) -> &InnModel {
        &self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn into_parts(self) -> (InnModel, Vec<EpochRecord>) {
        (self.model, self.history)
    }

    /// Runs `n` more epochs.
    pub fn train_epochs(&mut self, n: usize) -> Result<(), TrainError> {
        for _ in 0..n {
            self.run_epoch()?;
        }
        Ok(())
    }

    fn run_epoch(&mut self) -> Result<(), TrainError> {
        let lr = self.config.schedule.at(self.epoch);
        let mut order: Vec<usize> = (0..self.x.rows()).collect();
        order.shuffle(&mut self.rng);
        let bs = self.config.batch_size;
        let (mut sy, mut sz, mut sx) = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for chunk in order.chunks(bs) {
            if chunk.len() < 2 {
                continue;
            }
            let xb = self.x.gather_rows(chunk);
            let yb = self.y.gather_rows(chunk);
            let (ly, lz, lx) = self.step(&xb, &yb, lr)?;
            sy += ly;
            sz += lz;
            sx += lx;
            batches += 1;
        }
        let k = batches.max(1) as f64;
        let rec = EpochRecord {
            epoch: self.epoch,
            lr,
            l_y: sy / k,
            l_z: sz / k,
            l_x: sx / k,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        if !rec.total().is_finite() {
            return Err(TrainError::NonFinite { epoch: self.epoch });
        }
        log::debug!(
            "epoch {} lr {:.1e} L_y {:.4e} L_z {:.4e} L_x {:.4e}",
            rec.epoch,
            rec.lr,
            rec.l_y,
            rec.l_z,
            rec.l_x
        );
        self.history.push(rec);
        self.epoch += 1;
        Ok(())
    }

    /// One optimizer update on the sum of the supervised, latent and
    /// generative terms; returns the three weighted values.
    fn step(&mut self, xb: &Tensor, yb: &Tensor, lr: f64) -> Result<(f64, f64, f64), TrainError> {
        let w = self.config.loss_weights;
        let bw = &self.config.bandwidths;
        let mut g = Graph::new();
        let bound = self.model.bind(&mut g);
        let mut terms: Vec<NodeId> = Vec::with_capacity(3);
        let (mut ly_val, mut lz_val, mut lx_val) = (0.0, 0.0, 0.0);
        if w.y > 0.0 || w.z > 0.0 {
            let xi = g.constant(xb.clone());
            let out = self.model.forward_graph(&mut g, xi, &bound)?;
            if w.y > 0.0 {
                let y_pred = g.select_cols(out, &[0, 1, 2])?;
                let yt = g.constant(yb.clone());
                let ly = mse_graph(&mut g, y_pred, yt)?;
                let ly = g.scale(ly, w.y);
                ly_val = g.scalar_value(ly);
                terms.push(ly);
            }
            if w.z > 0.0 {
                let z_pred = g.select_cols(out, &[3, 4, 5])?;
                let zs = g.constant(sample_latent(xb.rows(), &mut self.rng));
                let lz = mmd2_graph(&mut g, z_pred, zs, bw)?;
                let lz = g.scale(lz, w.z);
                lz_val = g.scalar_value(lz);
                terms.push(lz);
            }
        }
        if w.x > 0.0 {
            let z = sample_latent(yb.rows(), &mut self.rng);
            let yz = g.constant(yb.concat_cols(&z)?);
            let x_gen = self.model.inverse_graph(&mut g, yz, &bound)?;
            let xd = g.constant(xb.clone());
            let lx = mmd2_graph(&mut g, x_gen, xd, bw)?;
            let lx = g.scale(lx, w.x);
            lx_val = g.scalar_value(lx);
            terms.push(lx);
        }
        let Some((&first, rest)) = terms.split_first() else {
            return Ok((0.0, 0.0, 0.0));
        };
        let mut root = first;
        for &t in rest {
            root = g.add(root, t)?;
        }
        let mut grads = g.backward(root)?;
        let mut gs: Vec<Tensor> = bound.iter().map(|&id| grads.take(id)).collect();
        clip_global_norm(&mut gs, self.config.grad_clip);
        adam_step(self.model.params_mut(), &gs, &mut self.adam, lr, self.config.weight_decay)?;
        Ok((ly_val, lz_val, lx_val))
    }
}

/// Trains for `config.epochs` epochs from a fresh initialization.
pub fn train_inn(
    dataset: &LabeledDataset,
    inn: InnConfig,
    config: &TrainConfig,
) -> Result<(InnModel, Vec<EpochRecord>), TrainError> {
    let mut t = InnTrainer::new(dataset, inn, config.clone())?;
    t.train_epochs(config.epochs)?;
    Ok(t.into_parts())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 100,
            schedule: LrSchedule {
                initial: 1e-3,
                drop_factor: 10.0,
                drop_epochs: vec![1000],
            },
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl MlpTrainConfig {
    /// Same optimizer settings over `epochs`, with the single drop halfway.
    pub fn with_epochs(epochs: usize) -> Self {
        let mut c = Self::default();
        c.epochs = epochs;
        c.schedule.drop_epochs = if epochs >= 2 { vec![epochs / 2] } else { vec![] };
        c
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch size must be positive".into()));
        }
        self.schedule.validate(self.epochs)
    }
}

/// Standardized-input, standardized-output scalar regressor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub net: Mlp,
    pub x_stats: Standardizer,
    pub y_stats: Standardizer,
}

impl Regressor {
    /// Predictions for raw-unit input rows.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>, NumError> {
        let out = self.net.forward(&self.x_stats.normalize_tensor(x))?;
        Ok(self.y_stats.denormalize_tensor(&out).into_data())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_mse: f64,
    pub train_mae: f64,
    pub test_mse: Option<f64>,
    pub test_mae: Option<f64>,
}

fn errors(pred: &[f64], target: &[f64]) -> (f64, f64) {
    let n = pred.len().max(1) as f64;
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let mae = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    (mse, mae)
}

/// MSE training of `widths = [in, hidden.., 1]` on raw-unit data; errors in the report are in raw units.
pub fn train_mlp(
    x: &Tensor,
    y: &[f64],
    test: Option<(&Tensor, &[f64])>,
    widths: &[usize],
    config: &MlpTrainConfig,
) -> Result<(Regressor, FitReport), TrainError> {
    config.validate()?;
    if x.rows() == 0 {
        return Err(TrainError::Domain(DomainError::Domain("training dataset is empty".into())));
    }
    if x.rows() != y.len() || widths.first() != Some(&x.cols()) || widths.last() != Some(&1) {
        return Err(TrainError::Config(format!(
            "inputs {:?}, {} targets and widths {widths:?} are inconsistent",
            x.shape(),
            y.len()
        )));
    }
    let xrows: Vec<&[f64]> = x.iter_rows().collect();
    let x_stats = Standardizer::fit_lenient(&xrows)?;
    let yrows: Vec<[f64; 1]> = y.iter().map(|&v| [v]).collect();
    let y_stats = Standardizer::fit_lenient(&yrows)?;
    let xs = x_stats.normalize_tensor(x);
    let ys = y_stats.normalize_tensor(&Tensor::new(y.len(), 1, y.to_vec())?);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Mlp::new(widths, &mut rng, false);
    let mut adam = AdamState::new(net.params());
    let mut order: Vec<usize> = (0..xs.rows()).collect();
    for epoch in 0..config.epochs {
        let lr = config.schedule.at(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let bound = net.bind(&mut g);
            let xi = g.constant(xs.gather_rows(chunk));
            let yi = g.constant(ys.gather_rows(chunk));
            let out = net.forward_graph(&mut g, xi, &bound)?;
            let loss = mse_graph(&mut g, out, yi)?;
            if !g.scalar_value(loss).is_finite() {
                return Err(TrainError::NonFinite { epoch });
            }
            let mut grads = g.backward(loss)?;
            let gs: Vec<Tensor> = bound.iter().map(|&id| grads.take(id)).collect();
            adam_step(net.params_mut(), &gs, &mut adam, lr, config.weight_decay)?;
        }
    }
    let model = Regressor { net, x_stats, y_stats };
    let (train_mse, train_mae) = errors(&model.predict(x)?, y);
    let (test_mse, test_mae) = match test {
        Some((tx, ty)) => {
            let (a, b) = errors(&model.predict(tx)?, ty);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    Ok((
        model,
        FitReport {
            train_mse,
            train_mae,
            test_mse,
            test_mae,
        },
    ))
}
