//! Invertible network built from affine coupling blocks.
//!
//! Each stage permutes the six standardized coordinates, splits them into
//! halves `u1 = (0, 1, 2)` and `u2 = (3, 4, 5)` and applies
//!
//! ```text
//! v1 = u1 · exp(s2(u2)) + t2(u2)
//! v2 = u2 · exp(s1(v1)) + t1(v1)
//! ```
//!
//! with every scale passed through `α·tanh(s/α)`. The first three output
//! coordinates are the standardized labels, the last three the latent code.
//!
//! Two evaluation paths exist: direct tensor code for inference and a taped
//! path on a [`Graph`] for training. They compute the same function.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{NormalizationStats, N_LABELS, N_PARAMS};
use crate::losses::LossWeights;
use crate::numgrad::nn::Mlp;
use crate::numgrad::{Graph, NodeId, NumError, Tensor};
use crate::persist::{self, PersistError};

pub const FLOW_DIM: usize = N_PARAMS;
pub const LATENT_DIM: usize = FLOW_DIM - N_LABELS;
const HALF: usize = FLOW_DIM / 2;
const FIRST: [usize; HALF] = [0, 1, 2];
const SECOND: [usize; HALF] = [3, 4, 5];

pub const MODEL_KIND: &str = "inn";

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{context}: expected {expected} columns, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnConfig {
    pub blocks: usize,
    pub hidden_width: usize,
    /// Hidden layers per subnetwork; the subnet has `hidden_layers + 1` linear layers.
    pub hidden_layers: usize,
    /// Scale clamp amplitude α.
    pub clamp: f64,
    /// Seeds permutations and initial weights.
    pub seed: u64,
}

impl Default for InnConfig {
    fn default() -> Self {
        Self {
            blocks: 10,
            hidden_width: 115,
            hidden_layers: 2,
            clamp: 2.0,
            seed: 0,
        }
    }
}

impl InnConfig {
    pub fn subnet_widths(&self) -> Vec<usize> {
        let mut w = vec![HALF];
        w.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        w.push(HALF);
        w
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.blocks == 0 || self.hidden_width == 0 {
            return Err(FlowError::Invalid("blocks and hidden width must be positive".into()));
        }
        if !(self.clamp.is_finite() && self.clamp > 0.0) {
            return Err(FlowError::Invalid(format!("clamp {} must be positive", self.clamp)));
        }
        Ok(())
    }
}

/// Fixed coordinate permutation: output column `i` is input column `perm[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    forward: Vec<usize>,
    #[serde(skip)]
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn new(forward: Vec<usize>) -> Result<Self, FlowError> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (i, &p) in forward.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(FlowError::Invalid(format!("{forward:?} is not a permutation")));
            }
            inverse[p] = i;
        }
        Ok(Self { forward, inverse })
    }

    pub fn identity(n: usize) -> Self {
        let v: Vec<usize> = (0..n).collect();
        Self {
            forward: v.clone(),
            inverse: v,
        }
    }

    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        Self::new(v).expect("shuffle yields a permutation")
    }

    pub fn indices(&self) -> &[usize] {
        &self.forward
    }

    pub fn apply(&self, t: &Tensor) -> Tensor {
        t.select_cols(&self.forward)
    }

    pub fn apply_inverse(&self, t: &Tensor) -> Tensor {
        t.select_cols(&self.inverse)
    }

    fn rebuild_inverse(&mut self) -> Result<(), FlowError> {
        *self = Self::new(std::mem::take(&mut self.forward))?;
        Ok(())
    }
}

/// Affine coupling with four subnetworks, each mapping 3 → 3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingBlock {
    pub s1: Mlp,
    pub s2: Mlp,
    pub t1: Mlp,
    pub t2: Mlp,
    pub clamp: f64,
}

fn clamp_plain(s: &Tensor, alpha: f64) -> Tensor {
    s.map(|v| alpha * (v / alpha).tanh())
}

fn clamp_graph(g: &mut Graph, s: NodeId, alpha: f64) -> NodeId {
    let a = g.scale(s, 1.0 / alpha);
    let a = g.tanh(a);
    g.scale(a, alpha)
}

fn split(u: &Tensor) -> (Tensor, Tensor) {
    (u.select_cols(&FIRST), u.select_cols(&SECOND))
}

fn check_input(t: &Tensor, context: &'static str) -> Result<(), FlowError> {
    if t.cols() != FLOW_DIM {
        return Err(FlowError::Dimension {
            context,
            expected: FLOW_DIM,
            got: t.cols(),
        });
    }
    if !t.is_finite() {
        return Err(FlowError::NonFinite(context));
    }
    Ok(())
}

impl CouplingBlock {
    /// Random hidden layers, zeroed output layers: starts as the identity.
    pub fn new(widths: &[usize], clamp: f64, rng: &mut impl Rng) -> Self {
        Self {
            s1: Mlp::new(widths, rng, true),
            s2: Mlp::new(widths, rng, true),
            t1: Mlp::new(widths, rng, true),
            t2: Mlp::new(widths, rng, true),
            clamp,
        }
    }

    pub fn subnets(&self) -> [&Mlp; 4] {
        [&self.s1, &self.s2, &self.t1, &self.t2]
    }

    fn subnets_mut(&mut self) -> [&mut Mlp; 4] {
        [&mut self.s1, &mut self.s2, &mut self.t1, &mut self.t2]
    }

    /// Output and per-sample log-determinant.
    pub fn forward(&self, u: &Tensor) -> Result<(Tensor, Vec<f64>), FlowError> {
        check_input(u, "coupling forward")?;
        let (u1, u2) = split(u);
        let s2 = clamp_plain(&self.s2.forward(&u2)?, self.clamp);
        let t2 = self.t2.forward(&u2)?;
        let v1 = Tensor::from_fn(u.rows(), HALF, |r, c| u1.get(r, c) * s2.get(r, c).exp() + t2.get(r, c));
        let s1 = clamp_plain(&self.s1.forward(&v1)?, self.clamp);
        let t1 = self.t1.forward(&v1)?;
        let v2 = Tensor::from_fn(u.rows(), HALF, |r, c| u2.get(r, c) * s1.get(r, c).exp() + t1.get(r, c));
        let log_det = (0..u.rows())
            .map(|r| s1.row(r).iter().chain(s2.row(r)).sum())
            .collect();
        Ok((v1.concat_cols(&v2)?, log_det))
    }

    pub fn inverse(&self, v: &Tensor) -> Result<Tensor, FlowError> {
        check_input(v, "coupling inverse")?;
        let (v1, v2) = split(v);
        let s1 = clamp_plain(&self.s1.forward(&v1)?, self.clamp);
        let t1 = self.t1.forward(&v1)?;
        let u2 = Tensor::from_fn(v.rows(), HALF, |r, c| (v2.get(r, c) - t1.get(r, c)) * (-s1.get(r, c)).exp());
        let s2 = clamp_plain(&self.s2.forward(&u2)?, self.clamp);
        let t2 = self.t2.forward(&u2)?;
        let u1 = Tensor::from_fn(v.rows(), HALF, |r, c| (v1.get(r, c) - t2.get(r, c)) * (-s2.get(r, c)).exp());
        Ok(u1.concat_cols(&u2)?)
    }

    fn params_per_subnet(&self) -> usize {
        2 * self.s1.layers().len()
    }

    /// `bound` holds the leaves of s1, s2, t1, t2 in that order.
    pub fn forward_graph(&self, g: &mut Graph, u: NodeId, bound: &[NodeId]) -> Result<NodeId, FlowError> {
        let k = self.params_per_subnet();
        let (bs1, bs2, bt1, bt2) = (&bound[..k], &bound[k..2 * k], &bound[2 * k..3 * k], &bound[3 * k..4 * k]);
        let u1 = g.select_cols(u, &FIRST)?;
        let u2 = g.select_cols(u, &SECOND)?;
        let s2 = self.s2.forward_graph(g, u2, bs2)?;
        let s2 = clamp_graph(g, s2, self.clamp);
        let t2 = self.t2.forward_graph(g, u2, bt2)?;
        let e2 = g.exp(s2);
        let v1 = g.mul(u1, e2)?;
        let v1 = g.add(v1, t2)?;
        let s1 = self.s1.forward_graph(g, v1, bs1)?;
        let s1 = clamp_graph(g, s1, self.clamp);
        let t1 = self.t1.forward_graph(g, v1, bt1)?;
        let e1 = g.exp(s1);
        let v2 = g.mul(u2, e1)?;
        let v2 = g.add(v2, t1)?;
        Ok(g.concat_cols(v1, v2)?)
    }

    pub fn inverse_graph(&self, g: &mut Graph, v: NodeId, bound: &[NodeId]) -> Result<NodeId, FlowError> {
        let k = self.params_per_subnet();
        let (bs1, bs2, bt1, bt2) = (&bound[..k], &bound[k..2 * k], &bound[2 * k..3 * k], &bound[3 * k..4 * k]);
        let v1 = g.select_cols(v, &FIRST)?;
        let v2 = g.select_cols(v, &SECOND)?;
        let s1 = self.s1.forward_graph(g, v1, bs1)?;
        let s1 = clamp_graph(g, s1, self.clamp);
        let t1 = self.t1.forward_graph(g, v1, bt1)?;
        let d2 = g.sub(v2, t1)?;
        let n1 = g.scale(s1, -1.0);
        let e1 = g.exp(n1);
        let u2 = g.mul(d2, e1)?;
        let s2 = self.s2.forward_graph(g, u2, bs2)?;
        let s2 = clamp_graph(g, s2, self.clamp);
        let t2 = self.t2.forward_graph(g, u2, bt2)?;
        let d1 = g.sub(v1, t2)?;
        let n2 = g.scale(s2, -1.0);
        let e2 = g.exp(n2);
        let u1 = g.mul(d1, e2)?;
        Ok(g.concat_cols(u1, u2)?)
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.subnets().into_iter().flat_map(Mlp::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.subnets_mut().into_iter().flat_map(Mlp::params_mut)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowStage {
    pub permutation: Permutation,
    pub coupling: CouplingBlock,
}

/// The trained (or freshly initialized) invertible network together with the
/// standardization it expects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnModel {
    pub config: InnConfig,
    pub stages: Vec<FlowStage>,
    pub stats: NormalizationStats,
    pub loss_weights: LossWeights,
}

impl InnModel {
    /// Seeded permutations and weights; the flow starts as a pure permutation.
    pub fn new(config: InnConfig, stats: NormalizationStats, loss_weights: LossWeights) -> Result<Self, FlowError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let widths = config.subnet_widths();
        let stages = (0..config.blocks)
            .map(|_| FlowStage {
                permutation: Permutation::random(FLOW_DIM, &mut rng),
                coupling: CouplingBlock::new(&widths, config.clamp, &mut rng),
            })
            .collect();
        let m = Self {
            config,
            stages,
            stats,
            loss_weights,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        self.config.validate()?;
        if self.stages.len() != self.config.blocks {
            return Err(FlowError::Invalid(format!(
                "config declares {} blocks, found {}",
                self.config.blocks,
                self.stages.len()
            )));
        }
        let widths = self.config.subnet_widths();
        for (i, st) in self.stages.iter().enumerate() {
            if st.permutation.indices().len() != FLOW_DIM {
                return Err(FlowError::Invalid(format!("block {i}: permutation has wrong length")));
            }
            for net in st.coupling.subnets() {
                if net.widths() != widths {
                    return Err(FlowError::Invalid(format!(
                        "block {i}: subnet widths {:?}, expected {widths:?}",
                        net.widths()
                    )));
                }
            }
            if st.coupling.clamp != self.config.clamp {
                return Err(FlowError::Invalid(format!("block {i}: clamp differs from config")));
            }
        }
        if self.stats.x.dim() != FLOW_DIM || self.stats.y.dim() != N_LABELS {
            return Err(FlowError::Invalid("normalization statistics have wrong dimension".into()));
        }
        Ok(())
    }

    /// Standardized `x` (N×6) to `[y, z]` (N×6).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, FlowError> {
        Ok(self.forward_with_log_det(x)?.0)
    }

    pub fn forward_with_log_det(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>), FlowError> {
        check_input(x, "inn forward")?;
        let mut h = x.clone();
        let mut log_det = vec![0.0; x.rows()];
        for st in &self.stages {
            let (out, ld) = st.coupling.forward(&st.permutation.apply(&h))?;
            h = out;
            log_det.iter_mut().zip(ld).for_each(|(a, b)| *a += b);
        }
        Ok((h, log_det))
    }

    /// Per-sample log-determinant of the forward Jacobian.
    pub fn log_det_jacobian(&self, x: &Tensor) -> Result<Vec<f64>, FlowError> {
        Ok(self.forward_with_log_det(x)?.1)
    }

    /// Standardized `(y, z)` predictions.
    pub fn forward_split(&self, x: &Tensor) -> Result<(Tensor, Tensor), FlowError> {
        let out = self.forward(x)?;
        Ok((out.select_cols(&FIRST), out.select_cols(&SECOND)))
    }

    /// `[y, z]` (N×6) back to standardized `x`.
    pub fn inverse(&self, yz: &Tensor) -> Result<Tensor, FlowError> {
        check_input(yz, "inn inverse")?;
        let mut h = yz.clone();
        for st in self.stages.iter().rev() {
            h = st.permutation.apply_inverse(&st.coupling.inverse(&h)?);
        }
        Ok(h)
    }

    /// Raw-unit label predictions for raw-unit designs.
    pub fn predict_labels(&self, x_raw: &Tensor) -> Result<Tensor, FlowError> {
        let (y, _) = self.forward_split(&self.stats.x.normalize_tensor(x_raw))?;
        Ok(self.stats.y.denormalize_tensor(&y))
    }

    /// Designs in raw units for one raw-unit label target and a batch of
    /// latent draws (N×3). N_H is left continuous.
    pub fn generate(&self, y_target: [f64; N_LABELS], z: &Tensor) -> Result<Tensor, FlowError> {
        if z.cols() != LATENT_DIM {
            return Err(FlowError::Dimension {
                context: "latent batch",
                expected: LATENT_DIM,
                got: z.cols(),
            });
        }
        let y = self.stats.y.normalize(&y_target);
        let yz = Tensor::from_fn(z.rows(), FLOW_DIM, |r, c| if c < N_LABELS { y[c] } else { z.get(r, c - N_LABELS) });
        let x = self.inverse(&yz)?;
        Ok(self.stats.x.denormalize_tensor(&x))
    }

    /// Leaves for every trainable tensor, in [`InnModel::params`] order.
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params().map(|p| g.leaf(p.clone())).collect()
    }

    fn stage_slices<'a>(&self, bound: &'a [NodeId]) -> std::slice::Chunks<'a, NodeId> {
        let per_stage = bound.len() / self.stages.len().max(1);
        bound.chunks(per_stage.max(1))
    }

    pub fn forward_graph(&self, g: &mut Graph, x: NodeId, bound: &[NodeId]) -> Result<NodeId, FlowError> {
        debug_assert_eq!(bound.len(), self.param_tensor_count());
        let mut h = x;
        for (st, b) in self.stages.iter().zip(self.stage_slices(bound)) {
            h = g.select_cols(h, st.permutation.indices())?;
            h = st.coupling.forward_graph(g, h, b)?;
        }
        Ok(h)
    }

    pub fn inverse_graph(&self, g: &mut Graph, yz: NodeId, bound: &[NodeId]) -> Result<NodeId, FlowError> {
        debug_assert_eq!(bound.len(), self.param_tensor_count());
        let mut h = yz;
        for (st, b) in self.stages.iter().zip(self.stage_slices(bound)).rev() {
            h = st.coupling.inverse_graph(g, h, b)?;
            h = g.select_cols(h, &st.permutation.inverse)?;
        }
        Ok(h)
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.stages.iter().flat_map(|s| s.coupling.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.stages.iter_mut().flat_map(|s| s.coupling.params_mut())
    }

    pub fn param_tensor_count(&self) -> usize {
        self.params().count()
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    pub fn to_json(&self) -> Result<String, FlowError> {
        Ok(persist::to_model_json(MODEL_KIND, self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, FlowError> {
        let mut m: InnModel = persist::from_model_json(MODEL_KIND, text)?;
        for st in &mut m.stages {
            st.permutation.rebuild_inverse()?;
        }
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FlowError> {
        std::fs::write(path, self.to_json()?).map_err(PersistError::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FlowError> {
        let text = std::fs::read_to_string(path).map_err(PersistError::from)?;
        Self::from_json(&text)
    }
}

/// `n` standard-normal latent draws (N×3).
pub fn sample_latent(n: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(n, LATENT_DIM, |_, _| rng.sample(StandardNormal))
}
