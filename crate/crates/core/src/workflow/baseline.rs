use serde::{Deserialize, Serialize};

use super::{select_from_candidates, target_seed, LabelPredictor, SelectionConfig, TargetGrid, TargetOutcome, WorkflowError};
use crate::domain::{DesignParams, N_LABELS};
use crate::gp::{gp_inverse_design, GpConfig, GpCandidate, GpTriple, NelderMeadConfig};

impl LabelPredictor for GpTriple {
    fn predict(&self, xs: &[DesignParams]) -> Result<Vec<[f64; N_LABELS]>, WorkflowError> {
        Ok(xs.iter().map(|x| self.predict_mean(&x.to_array())).collect())
    }
}

/// Which model ranks GP candidates before selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prevalidation {
    /// GP candidates ranked by the GPs themselves.
    #[default]
    Gp,
    /// GP candidates ranked by the surrogates, like INN candidates.
    Surrogate,
}

/// Which model labels the selected GP designs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineLabels {
    #[default]
    Surrogate,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub n_starts: usize,
    pub gp: GpConfig,
    pub nelder_mead: NelderMeadConfig,
    pub selection: SelectionConfig,
    pub prevalidation: Prevalidation,
    pub labels: BaselineLabels,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            n_starts: 2000,
            gp: GpConfig::default(),
            nelder_mead: NelderMeadConfig::default(),
            selection: SelectionConfig::default(),
            prevalidation: Prevalidation::Gp,
            labels: BaselineLabels::Surrogate,
            seed: 0,
        }
    }
}

/// GP termination points and the selection made from them for one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpTargetRun {
    pub candidates: Vec<GpCandidate>,
    pub outcome: TargetOutcome,
}

/// GP inversion per grid target followed by the shared filter and selection step.
pub fn run_gp_protocol(
    gps: &GpTriple,
    ranker: &dyn LabelPredictor,
    grid: &TargetGrid,
    spans: &[f64; N_LABELS],
    config: &BaselineConfig,
) -> Result<Vec<GpTargetRun>, WorkflowError> {
    grid.validate()?;
    grid.vectors()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let candidates =
                gp_inverse_design(gps, t, spans, config.n_starts, target_seed(config.seed, i), &config.nelder_mead)?;
            let raw: Vec<_> = candidates.iter().map(|c| c.x).collect();
            let outcome = select_from_candidates(&raw, ranker, t, spans, &config.selection)?;
            Ok(GpTargetRun { candidates, outcome })
        })
        .collect()
}
