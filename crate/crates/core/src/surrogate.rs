//! Per-label forward surrogates and surrogate-based dataset augmentation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{
    latin_hypercube_sample, DesignParams, DomainError, LabeledDataset, LabeledRow, PerformanceLabels,
    Provenance, N_LABELS, N_PARAMS,
};
use crate::numgrad::{NumError, Tensor};
use crate::persist::{self, PersistError};
use crate::training::{train_mlp, FitReport, MlpTrainConfig, Regressor, TrainError};

pub const MODEL_KIND: &str = "surrogate";
pub const SURROGATE_WIDTHS: [usize; 6] = [N_PARAMS, 200, 200, 100, 50, 1];

#[derive(Debug, thiserror::Error)]
pub enum SurrogateError {
    #[error("need at least {needed} training rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("invalid surrogate: {0}")]
    Invalid(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub widths: Vec<usize>,
    pub train: MlpTrainConfig,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            widths: SURROGATE_WIDTHS.to_vec(),
            train: MlpTrainConfig::default(),
        }
    }
}

/// Train and test mean absolute error for each label, in label units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub n_train: usize,
    pub n_test: usize,
    pub train_mae: [f64; N_LABELS],
    pub test_mae: Option<[f64; N_LABELS]>,
}

/// Independent regressors for U_M, dp_rel and G.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateTriple {
    pub models: [Regressor; N_LABELS],
}

/// Σ|p − t| / n.
pub fn mean_absolute_error(pred: &[f64], truth: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

fn design_tensor(xs: &[DesignParams]) -> Tensor {
    let rows: Vec<[f64; N_PARAMS]> = xs.iter().map(|x| x.to_array()).collect();
    Tensor::from_rows(&rows, N_PARAMS).expect("fixed-width rows")
}

/// Fits one surrogate per label on `train`; `test` may be empty.
pub fn train_surrogates(
    train: &LabeledDataset,
    test: &LabeledDataset,
    config: &SurrogateConfig,
) -> Result<(SurrogateTriple, SurrogateReport), SurrogateError> {
    if train.len() < 2 {
        return Err(SurrogateError::TooFewRows {
            needed: 2,
            got: train.len(),
        });
    }
    if config.widths.first() != Some(&N_PARAMS) || config.widths.last() != Some(&1) {
        return Err(SurrogateError::Invalid(format!(
            "widths must run from {N_PARAMS} to 1, got {:?}",
            config.widths
        )));
    }
    train.validate()?;
    test.validate()?;
    let x = design_tensor(&train.rows.iter().map(|r| r.x).collect::<Vec<_>>());
    let tx = design_tensor(&test.rows.iter().map(|r| r.x).collect::<Vec<_>>());
    let mut models = Vec::with_capacity(N_LABELS);
    let mut train_mae = [0.0; N_LABELS];
    let mut test_mae = [0.0; N_LABELS];
    for k in 0..N_LABELS {
        let y: Vec<f64> = train.rows.iter().map(|r| r.y.to_array()[k]).collect();
        let ty: Vec<f64> = test.rows.iter().map(|r| r.y.to_array()[k]).collect();
        let mut cfg = config.train.clone();
        cfg.seed = config.train.seed.wrapping_add(k as u64);
        let held_out = (!test.is_empty()).then_some((&tx, ty.as_slice()));
        let (model, FitReport { train_mae: tr, test_mae: te, .. }) =
            train_mlp(&x, &y, held_out, &config.widths, &cfg)?;
        log::info!("surrogate {k}: train MAE {tr:.4e}, test MAE {te:?}");
        train_mae[k] = tr;
        test_mae[k] = te.unwrap_or(0.0);
        models.push(model);
    }
    let models: [Regressor; N_LABELS] = models.try_into().map_err(|_| SurrogateError::Invalid("label count".into()))?;
    let report = SurrogateReport {
        n_train: train.len(),
        n_test: test.len(),
        train_mae,
        test_mae: (!test.is_empty()).then_some(test_mae),
    };
    Ok((SurrogateTriple { models }, report))
}

impl SurrogateTriple {
    /// Labels for valid designs; any out-of-range design is an error.
    pub fn predict_labels(&self, xs: &[DesignParams]) -> Result<Vec<PerformanceLabels>, SurrogateError> {
        for x in xs {
            x.validate()?;
        }
        self.predict_unchecked(&design_tensor(xs))
    }

    /// Labels for raw-unit rows without a range check.
    pub fn predict_unchecked(&self, x: &Tensor) -> Result<Vec<PerformanceLabels>, SurrogateError> {
        if x.cols() != N_PARAMS {
            return Err(SurrogateError::Invalid(format!(
                "expected {N_PARAMS} columns, got {}",
                x.cols()
            )));
        }
        let cols = [
            self.models[0].predict(x)?,
            self.models[1].predict(x)?,
            self.models[2].predict(x)?,
        ];
        Ok((0..x.rows())
            .map(|i| PerformanceLabels::new(cols[0][i], cols[1][i], cols[2][i]))
            .collect())
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        for (k, m) in self.models.iter().enumerate() {
            if m.net.input_dim() != N_PARAMS || m.net.output_dim() != 1 {
                return Err(SurrogateError::Invalid(format!(
                    "surrogate {k} maps {} -> {}",
                    m.net.input_dim(),
                    m.net.output_dim()
                )));
            }
            if m.x_stats.dim() != N_PARAMS || m.y_stats.dim() != 1 {
                return Err(SurrogateError::Invalid(format!("surrogate {k} has mismatched statistics")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, SurrogateError> {
        Ok(persist::to_model_json(MODEL_KIND, self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SurrogateError> {
        let t: Self = persist::from_model_json(MODEL_KIND, text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SurrogateError> {
        Ok(persist::write_model(path, MODEL_KIND, self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SurrogateError> {
        let t: Self = persist::read_model(path, MODEL_KIND)?;
        t.validate()?;
        Ok(t)
    }
}

/// `n` Latin-hypercube designs labeled by the surrogates, appended to `base`.
pub fn augment_dataset(
    triple: &SurrogateTriple,
    base: &LabeledDataset,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset, SurrogateError> {
    let xs = latin_hypercube_sample(n, seed)?;
    let mut rows = base.rows.clone();
    rows.reserve(n);
    for chunk in xs.chunks(4096) {
        let ys = triple.predict_labels(chunk)?;
        rows.extend(chunk.iter().zip(ys).map(|(&x, y)| LabeledRow { x, y }));
    }
    Ok(LabeledDataset::new(rows, Provenance::SurrogateAugmented))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{oracle_dataset, Oracle};

    fn quick() -> SurrogateConfig {
        SurrogateConfig {
            widths: vec![6, 16, 1],
            train: MlpTrainConfig {
                batch_size: 20,
                ..MlpTrainConfig::with_epochs(20)
            },
        }
    }

    #[test]
    fn mae_by_hand() {
        let p = [0.1, 0.2, 0.3, 0.4, 0.5];
        let t = [0.0, 0.25, 0.3, 0.1, 1.0];
        let hand = (0.1 + 0.05 + 0.0 + 0.3 + 0.5) / 5.0;
        assert!((mean_absolute_error(&p, &t) - hand).abs() < 1e-12);
    }

    #[test]
    fn too_few_rows() {
        let d = oracle_dataset(1, 0, &Oracle::deterministic()).unwrap();
        let empty = LabeledDataset::new(vec![], Provenance::Oracle);
        assert!(matches!(
            train_surrogates(&d, &empty, &quick()),
            Err(SurrogateError::TooFewRows { .. })
        ));
    }

    #[test]
    fn out_of_range_design_is_rejected() {
        let d = oracle_dataset(60, 1, &Oracle::deterministic()).unwrap();
        let (train, test) = d.split_at(50);
        let (triple, report) = train_surrogates(&train, &test, &quick()).unwrap();
        assert_eq!(report.n_test, 10);
        let mut x = DesignParams::midpoint();
        assert_eq!(triple.predict_labels(&[x]).unwrap().len(), 1);
        x.lance_diameter_ratio = 0.6;
        assert!(matches!(triple.predict_labels(&[x]), Err(SurrogateError::Domain(_))));
    }

    #[test]
    fn augmentation_is_a_union() {
        let d = oracle_dataset(40, 2, &Oracle::deterministic()).unwrap();
        let empty = LabeledDataset::new(vec![], Provenance::Oracle);
        let (triple, report) = train_surrogates(&d, &empty, &quick()).unwrap();
        assert!(report.test_mae.is_none());
        let aug = augment_dataset(&triple, &d, 25, 3).unwrap();
        assert_eq!(aug.len(), 65);
        assert_eq!(aug.provenance, Provenance::SurrogateAugmented);
        assert_eq!(&aug.rows[..40], &d.rows[..]);
        aug.validate().unwrap();
    }

    #[test]
    fn json_roundtrip() {
        let d = oracle_dataset(30, 4, &Oracle::deterministic()).unwrap();
        let empty = LabeledDataset::new(vec![], Provenance::Oracle);
        let (triple, _) = train_surrogates(&d, &empty, &quick()).unwrap();
        let back = SurrogateTriple::from_json(&triple.to_json().unwrap()).unwrap();
        assert_eq!(back, triple);
        assert!(crate::flow::InnModel::from_json(&triple.to_json().unwrap()).is_err());
    }
}
