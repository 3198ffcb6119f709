use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WorkflowError;
use crate::domain::{DesignParams, LabelName, PerformanceLabels, Standardizer, N_LABELS, N_PARAMS};
use crate::flow::{sample_latent, InnModel};
use crate::surrogate::SurrogateTriple;

/// Per-label target values; their cross product is the evaluation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetGrid {
    #[serde(rename = "U_M")]
    pub unmixedness: Vec<f64>,
    #[serde(rename = "dp_rel")]
    pub pressure_loss: Vec<f64>,
    #[serde(rename = "G")]
    pub growth_rate: Vec<f64>,
}

impl Default for TargetGrid {
    fn default() -> Self {
        Self {
            unmixedness: vec![0.02, 0.06, 0.1],
            pressure_loss: vec![0.033, 0.04, 0.045],
            growth_rate: vec![-0.5, 0.0, 0.5],
        }
    }
}

impl TargetGrid {
    pub fn values(&self, label: LabelName) -> &[f64] {
        match label {
            LabelName::Unmixedness => &self.unmixedness,
            LabelName::PressureLoss => &self.pressure_loss,
            LabelName::GrowthRate => &self.growth_rate,
        }
    }

    /// Cross product with G varying fastest.
    pub fn vectors(&self) -> Vec<[f64; N_LABELS]> {
        let mut out = Vec::new();
        for &u in &self.unmixedness {
            for &dp in &self.pressure_loss {
                for &g in &self.growth_rate {
                    out.push([u, dp, g]);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), WorkflowError> {
        for label in LabelName::ALL {
            if self.values(label).is_empty() {
                return Err(WorkflowError::Invalid(format!("no target values for {label}")));
            }
        }
        for t in self.vectors() {
            PerformanceLabels::from_array(t).validate()?;
        }
        Ok(())
    }
}

/// Source of label predictions used to rank candidates.
pub trait LabelPredictor {
    fn predict(&self, xs: &[DesignParams]) -> Result<Vec<[f64; N_LABELS]>, WorkflowError>;
}

impl LabelPredictor for SurrogateTriple {
    fn predict(&self, xs: &[DesignParams]) -> Result<Vec<[f64; N_LABELS]>, WorkflowError> {
        Ok(self.predict_labels(xs)?.into_iter().map(|y| y.to_array()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub valid: Vec<DesignParams>,
    pub total: usize,
}

impl FilterOutcome {
    pub fn yield_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.valid.len() as f64 / self.total as f64
        }
    }
}

/// Keeps candidates inside the design space after rounding N_H.
pub fn filter_designs(candidates: &[[f64; N_PARAMS]]) -> FilterOutcome {
    let valid = candidates
        .iter()
        .filter_map(|&c| DesignParams::try_from_continuous(c).ok())
        .collect();
    FilterOutcome {
        valid,
        total: candidates.len(),
    }
}

/// Euclidean distance between label vectors after dividing by `spans`.
pub fn normalized_distance(pred: &[f64; N_LABELS], target: &[f64; N_LABELS], spans: &[f64; N_LABELS]) -> f64 {
    pred.iter()
        .zip(target)
        .zip(spans)
        .map(|((p, t), s)| ((p - t) / s).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Greedy max-min selection of `k` points, starting from index 0.
/// Ties go to the lower index.
pub fn farthest_point(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let k = k.min(points.len());
    if k == 0 {
        return Vec::new();
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut chosen = vec![0];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist(p, &points[0])).collect();
    nearest[0] = f64::NEG_INFINITY;
    while chosen.len() < k {
        let mut best = None;
        for (i, &d) in nearest.iter().enumerate() {
            if d > f64::NEG_INFINITY && best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let Some((next, _)) = best else { break };
        chosen.push(next);
        nearest[next] = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if nearest[i] > f64::NEG_INFINITY {
                nearest[i] = nearest[i].min(dist(p, &points[next]));
            }
        }
    }
    chosen
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub keep_fraction: f64,
    pub k: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            keep_fraction: 0.2,
            k: 15,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), WorkflowError> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) || self.k == 0 {
            return Err(WorkflowError::Invalid(format!(
                "keep fraction {} must lie in (0, 1] and k must be positive",
                self.keep_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub designs: Vec<DesignParams>,
    pub predicted: Vec<[f64; N_LABELS]>,
    pub pool_size: usize,
    /// Fewer than `k` valid designs were available.
    pub shortfall: bool,
}

/// Ranks by predicted distance to `target`, keeps the best fraction (never
/// fewer than `k`) and picks `k` spread-out designs from that pool.
pub fn prevalidate_select(
    valid: &[DesignParams],
    predicted: &[[f64; N_LABELS]],
    target: &[f64; N_LABELS],
    spans: &[f64; N_LABELS],
    config: &SelectionConfig,
) -> Result<Selection, WorkflowError> {
    config.validate()?;
    if valid.len() != predicted.len() {
        return Err(WorkflowError::Invalid(format!(
            "{} designs but {} predictions",
            valid.len(),
            predicted.len()
        )));
    }
    let mut order: Vec<usize> = (0..valid.len()).collect();
    let score: Vec<f64> = predicted.iter().map(|p| normalized_distance(p, target, spans)).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
    let n = valid.len();
    let shortfall = n < config.k;
    let by_fraction = (config.keep_fraction * n as f64).ceil() as usize;
    let pool_size = by_fraction.max(config.k).min(n);
    let pool = &order[..pool_size];
    let rows: Vec<[f64; N_PARAMS]> = pool.iter().map(|&i| valid[i].to_array()).collect();
    let coords: Vec<Vec<f64>> = match Standardizer::fit_lenient(&rows) {
        Ok(st) => rows.iter().map(|r| st.normalize(r)).collect(),
        Err(_) => Vec::new(),
    };
    let picks = farthest_point(&coords, config.k);
    if shortfall {
        log::warn!("only {n} valid designs for target {target:?}, wanted {}", config.k);
    }
    Ok(Selection {
        designs: picks.iter().map(|&j| valid[pool[j]]).collect(),
        predicted: picks.iter().map(|&j| predicted[pool[j]]).collect(),
        pool_size,
        shortfall,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub count: usize,
    pub selection: SelectionConfig,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            count: 5000,
            selection: SelectionConfig::default(),
            seed: 0,
        }
    }
}

/// Everything produced for one target vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetOutcome {
    pub target: [f64; N_LABELS],
    pub generated: usize,
    pub valid: usize,
    pub selection: Selection,
}

impl TargetOutcome {
    pub fn yield_rate(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.valid as f64 / self.generated as f64
        }
    }
}

/// Raw INN candidates for `target`; the latent draws depend only on `seed`.
pub fn generate_candidates(
    model: &InnModel,
    target: &[f64; N_LABELS],
    count: usize,
    seed: u64,
) -> Result<Vec<[f64; N_PARAMS]>, WorkflowError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_latent(count, &mut rng);
    let x = model.generate(*target, &z)?;
    Ok(x.iter_rows()
        .map(|r| {
            let mut a = [0.0; N_PARAMS];
            a.copy_from_slice(r);
            a
        })
        .collect())
}

/// Filter, predict and select for one target from raw candidates.
pub fn select_from_candidates(
    candidates: &[[f64; N_PARAMS]],
    predictor: &dyn LabelPredictor,
    target: &[f64; N_LABELS],
    spans: &[f64; N_LABELS],
    config: &SelectionConfig,
) -> Result<TargetOutcome, WorkflowError> {
    let filtered = filter_designs(candidates);
    let predicted = predictor.predict(&filtered.valid)?;
    let selection = prevalidate_select(&filtered.valid, &predicted, target, spans, config)?;
    Ok(TargetOutcome {
        target: *target,
        generated: filtered.total,
        valid: filtered.valid.len(),
        selection,
    })
}

/// Seed for the `index`-th target of a run.
pub fn target_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64 + 1)
}

/// Generate, filter, prevalidate and select for every grid target.
pub fn run_inn_protocol(
    model: &InnModel,
    predictor: &dyn LabelPredictor,
    grid: &TargetGrid,
    spans: &[f64; N_LABELS],
    config: &GenerationConfig,
) -> Result<Vec<TargetOutcome>, WorkflowError> {
    grid.validate()?;
    grid.vectors()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let cands = generate_candidates(model, t, config.count, target_seed(config.seed, i))?;
            select_from_candidates(&cands, predictor, t, spans, &config.selection)
        })
        .collect()
}
