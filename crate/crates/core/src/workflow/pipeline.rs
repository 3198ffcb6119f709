use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    compare, label_outcomes, render_comparison, render_validation, run_gp_protocol, target_seed,
    validation_report, BaselineConfig, BaselineLabels, ComparisonRow, GenerationConfig, LabelPredictor, Prevalidation,
    TargetGrid, TargetOutcome, ValidationReport, WorkflowError,
};
use crate::domain::{format_float, oracle_dataset, LabeledDataset, Oracle, DATASET_HEADER, N_LABELS, N_PARAMS};
use crate::flow::{InnConfig, InnModel};
use crate::gp::{GpCandidate, GpTriple};
use crate::persist::file_sha256;
use crate::surrogate::{augment_dataset, train_surrogates, SurrogateConfig, SurrogateReport, SurrogateTriple};
use crate::training::{InnTrainer, MlpTrainConfig, TrainConfig};
use crate::tuning::{hyperband, HyperParams, HyperparamSpace, HyperbandOutcome, InnEvaluator};

pub const DATASET_FILE: &str = "dataset.csv";
pub const SURROGATE_FILE: &str = "surrogates.json";
pub const SURROGATE_REPORT_FILE: &str = "surrogate_report.json";
pub const AUGMENTED_FILE: &str = "augmented.csv";
pub const TUNING_TRACE_FILE: &str = "tuning_trace.jsonl";
pub const TUNING_RESULT_FILE: &str = "tuning.json";
pub const TUNED_CONFIG_FILE: &str = "tuned_config.json";
pub const INN_FILE: &str = "inn.json";
pub const HISTORY_FILE: &str = "training_history.json";
pub const SELECTED_FILE: &str = "selected.json";
pub const VALIDATION_FILE: &str = "validation.json";
pub const BASELINE_FILE: &str = "baseline.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    pub space: HyperparamSpace,
    pub max_epochs: usize,
    pub eta: usize,
    /// Generated designs per target when scoring a configuration.
    pub per_target: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            space: HyperparamSpace::default(),
            max_epochs: 243,
            eta: 3,
            per_target: 200,
        }
    }
}

/// Settings for every stage. Stage seeds are derived from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub n_oracle: usize,
    pub n_train: usize,
    pub n_augment: usize,
    pub surrogate: SurrogateConfig,
    pub inn: InnConfig,
    pub training: TrainConfig,
    pub tuning: TuningConfig,
    pub generation: GenerationConfig,
    pub grid: TargetGrid,
    pub baseline: BaselineConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_oracle: 1295,
            n_train: 1000,
            n_augment: 20_000,
            surrogate: SurrogateConfig::default(),
            inn: InnConfig::default(),
            training: TrainConfig::desk(),
            tuning: TuningConfig::default(),
            generation: GenerationConfig::default(),
            grid: TargetGrid::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Data = 1,
    Surrogate,
    Augment,
    Inn,
    Generate,
    Baseline,
    Tune,
}

impl PipelineConfig {
    /// Tiny models and budgets; runs in seconds, for smoke tests only.
    pub fn smoke() -> Self {
        let mut c = Self {
            n_oracle: 240,
            n_train: 200,
            n_augment: 400,
            ..Self::default()
        };
        c.surrogate.widths = vec![N_PARAMS, 32, 32, 1];
        c.surrogate.train = MlpTrainConfig::with_epochs(20);
        c.inn.blocks = 3;
        c.inn.hidden_width = 24;
        c.training = c.training.with_epochs(4);
        c.training.batch_size = 100;
        c.tuning.max_epochs = 3;
        c.tuning.per_target = 20;
        c.tuning.space.batch_sizes = vec![50, 100];
        c.tuning.space.blocks = (2, 3);
        c.tuning.space.hidden_width = (8, 24);
        c.generation.count = 300;
        c.baseline.n_starts = 10;
        c.baseline.gp.max_rows = 100;
        c
    }

    pub fn stage_seed(&self, stage_id: u64) -> u64 {
        target_seed(self.seed, stage_id as usize)
    }

    fn seed_for(&self, stage: Stage) -> u64 {
        self.stage_seed(stage as u64)
    }

    /// Copy with every nested seed derived from `seed`.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.surrogate.train.seed = c.seed_for(Stage::Surrogate);
        c.inn.seed = c.seed_for(Stage::Inn);
        c.training.seed = c.seed_for(Stage::Inn).wrapping_add(1);
        c.generation.seed = c.seed_for(Stage::Generate);
        c.baseline.seed = c.seed_for(Stage::Baseline);
        c
    }

    /// Copy using `h` for the INN architecture and training setup; epochs and
    /// learning-rate drop epochs are kept.
    pub fn with_hyperparams(&self, h: &HyperParams) -> Self {
        let mut c = self.clone();
        c.inn.blocks = h.blocks;
        c.inn.hidden_width = h.hidden_width;
        c.training.batch_size = h.batch_size;
        c.training.schedule.initial = h.learning_rate;
        c.training.loss_weights.x = h.lambda_x;
        c.training.loss_weights.y = h.lambda_y;
        c.training.loss_weights.z = h.lambda_z;
        c
    }

    pub fn validate(&self) -> Result<(), WorkflowError> {
        if self.n_train < 2 || self.n_train > self.n_oracle {
            return Err(WorkflowError::Invalid(format!(
                "training split {} must lie in [2, {}]",
                self.n_train, self.n_oracle
            )));
        }
        self.grid.validate()?;
        self.generation.selection.validate()?;
        self.baseline.selection.validate()?;
        self.training.validate()?;
        self.inn.validate()?;
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, WorkflowError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Seeds, configuration and content hashes of every artifact written so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config: &PipelineConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            files: BTreeMap::new(),
        }
    }
}

/// Combined results of the validation and baseline stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub surrogates: Option<SurrogateReport>,
    pub inn: ValidationReport,
    pub inn_yield: f64,
    pub gp: Option<ValidationReport>,
    pub gp_yield: Option<f64>,
    pub comparison: Vec<ComparisonRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineArtifacts {
    pub prevalidation: Prevalidation,
    pub labels: BaselineLabels,
    pub outcomes: Vec<TargetOutcome>,
    pub validation: ValidationReport,
    pub comparison: Vec<ComparisonRow>,
}

/// Working directory of one pipeline run.
pub struct Workspace {
    dir: PathBuf,
    config: PipelineConfig,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, WorkflowError> {
    let text = fs::read_to_string(path)
        .map_err(|e| WorkflowError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), WorkflowError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_candidates(path: &Path, rows: &[[f64; N_PARAMS]], residuals: Option<&[f64]>) -> Result<(), WorkflowError> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    let header = DATASET_HEADER.split(',').take(N_PARAMS).collect::<Vec<_>>().join(",");
    if residuals.is_some() {
        writeln!(w, "{header},residual")?;
    } else {
        writeln!(w, "{header}")?;
    }
    for (i, r) in rows.iter().enumerate() {
        let mut line = r.iter().map(|v| format_float(*v)).collect::<Vec<_>>().join(",");
        if let Some(res) = residuals {
            line.push(',');
            line.push_str(&format_float(res[i]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>, config: PipelineConfig) -> Result<Self, WorkflowError> {
        let config = config.resolved();
        config.validate()?;
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, config })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn manifest(&self) -> RunManifest {
        match read_json::<RunManifest>(&self.path(MANIFEST_FILE)) {
            Ok(m) if m.config == self.config => m,
            _ => RunManifest::new(&self.config),
        }
    }

    /// Hashes `names` (files or directories) into the manifest.
    fn record(&self, names: &[String], stage: &str, seconds: f64) -> Result<(), WorkflowError> {
        let mut m = self.manifest();
        for name in names {
            let p = self.path(name);
            if p.is_dir() {
                let mut entries: Vec<_> = fs::read_dir(&p)?.collect::<Result<_, _>>()?;
                entries.sort_by_key(|e| e.file_name());
                for e in entries {
                    let key = format!("{name}/{}", e.file_name().to_string_lossy());
                    m.files.insert(key, file_sha256(e.path())?);
                }
            } else {
                m.files.insert(name.clone(), file_sha256(&p)?);
            }
        }
        write_json(&self.path(MANIFEST_FILE), &m)?;
        let tp = self.path(TIMINGS_FILE);
        let mut timings: BTreeMap<String, f64> = read_json(&tp).unwrap_or_default();
        timings.insert(stage.to_string(), seconds);
        write_json(&tp, &timings)?;
        log::info!("{stage} finished in {seconds:.1}s");
        Ok(())
    }

    pub fn dataset(&self) -> Result<LabeledDataset, WorkflowError> {
        Ok(LabeledDataset::read(self.path(DATASET_FILE))?)
    }

    /// Label spans of the oracle dataset.
    pub fn spans(&self) -> Result<[f64; N_LABELS], WorkflowError> {
        Ok(self.dataset()?.label_spans())
    }

    pub fn surrogates(&self) -> Result<SurrogateTriple, WorkflowError> {
        Ok(SurrogateTriple::load(self.path(SURROGATE_FILE))?)
    }

    pub fn inn(&self) -> Result<InnModel, WorkflowError> {
        Ok(InnModel::load(self.path(INN_FILE))?)
    }

    pub fn datagen(&self) -> Result<LabeledDataset, WorkflowError> {
        let t = Instant::now();
        let d = oracle_dataset(self.config.n_oracle, self.config.seed_for(Stage::Data), &Oracle::deterministic())?;
        d.write(self.path(DATASET_FILE))?;
        self.record(&[DATASET_FILE.into()], "datagen", t.elapsed().as_secs_f64())?;
        Ok(d)
    }

    pub fn train_surrogates(&self) -> Result<(SurrogateTriple, SurrogateReport), WorkflowError> {
        let t = Instant::now();
        let (train, test) = self.dataset()?.split_at(self.config.n_train);
        let (triple, report) = train_surrogates(&train, &test, &self.config.surrogate)?;
        triple.save(self.path(SURROGATE_FILE))?;
        write_json(&self.path(SURROGATE_REPORT_FILE), &report)?;
        self.record(
            &[SURROGATE_FILE.into(), SURROGATE_REPORT_FILE.into()],
            "train-surrogates",
            t.elapsed().as_secs_f64(),
        )?;
        Ok((triple, report))
    }

    /// Oracle training rows plus `n_augment` surrogate-labeled rows.
    pub fn augment(&self) -> Result<LabeledDataset, WorkflowError> {
        let t = Instant::now();
        let (train, _) = self.dataset()?.split_at(self.config.n_train);
        let aug = augment_dataset(&self.surrogates()?, &train, self.config.n_augment, self.config.seed_for(Stage::Augment))?;
        aug.write(self.path(AUGMENTED_FILE))?;
        self.record(&[AUGMENTED_FILE.into()], "augment", t.elapsed().as_secs_f64())?;
        Ok(aug)
    }

    /// Hyperband on the oracle training rows, scored through the surrogates.
    pub fn tune(&self) -> Result<HyperbandOutcome, WorkflowError> {
        let t = Instant::now();
        let data = self.dataset()?;
        let spans = data.label_spans();
        let (train, _) = data.split_at(self.config.n_train);
        let surrogates = self.surrogates()?;
        let tc = &self.config.tuning;
        let mut ev = InnEvaluator {
            data: &train,
            surrogates: &surrogates,
            grid: self.config.grid.clone(),
            spans,
            per_target: tc.per_target,
            horizon: tc.max_epochs,
            seed: self.config.seed_for(Stage::Tune),
        };
        let out = hyperband(&tc.space, tc.max_epochs, tc.eta, self.config.seed_for(Stage::Tune), &mut ev)
            .map_err(|e| WorkflowError::Invalid(e.to_string()))?;
        let mut f = fs::File::create(self.path(TUNING_TRACE_FILE))?;
        out.write_trace(&mut f).map_err(|e| WorkflowError::Invalid(e.to_string()))?;
        write_json(&self.path(TUNING_RESULT_FILE), &out)?;
        write_json(&self.path(TUNED_CONFIG_FILE), &self.config.with_hyperparams(&out.best))?;
        self.record(
            &[TUNING_TRACE_FILE.into(), TUNING_RESULT_FILE.into(), TUNED_CONFIG_FILE.into()],
            "tune",
            t.elapsed().as_secs_f64(),
        )?;
        Ok(out)
    }

    pub fn train_inn(&self) -> Result<InnModel, WorkflowError> {
        let t = Instant::now();
        let data = LabeledDataset::read(self.path(AUGMENTED_FILE))?;
        let mut trainer = InnTrainer::new(&data, self.config.inn.clone(), self.config.training.clone())?;
        let step = 10.max(self.config.training.epochs / 30);
        while trainer.epochs_done() < self.config.training.epochs {
            let n = step.min(self.config.training.epochs - trainer.epochs_done());
            trainer.train_epochs(n)?;
            if let Some(h) = trainer.history().last() {
                log::info!(
                    "epoch {} lr {:.1e} L_y {:.3e} L_z {:.3e} L_x {:.3e}",
                    h.epoch + 1,
                    h.lr,
                    h.l_y,
                    h.l_z,
                    h.l_x
                );
            }
        }
        let (model, history) = trainer.into_parts();
        model.save(self.path(INN_FILE))?;
        write_json(&self.path(HISTORY_FILE), &history)?;
        self.record(&[INN_FILE.into(), HISTORY_FILE.into()], "train-inn", t.elapsed().as_secs_f64())?;
        Ok(model)
    }

    /// Generates, filters and selects designs for every grid target.
    pub fn generate(&self) -> Result<Vec<TargetOutcome>, WorkflowError> {
        let t = Instant::now();
        let model = self.inn()?;
        let surrogates = self.surrogates()?;
        let spans = self.spans()?;
        let cdir = self.path("candidates");
        fs::create_dir_all(&cdir)?;
        let gen = &self.config.generation;
        let mut outcomes = Vec::new();
        for (i, target) in self.config.grid.vectors().iter().enumerate() {
            let cands = super::generate_candidates(&model, target, gen.count, target_seed(gen.seed, i))?;
            write_candidates(&cdir.join(format!("target_{i:02}.csv")), &cands, None)?;
            outcomes.push(super::select_from_candidates(&cands, &surrogates, target, &spans, &gen.selection)?);
        }
        write_json(&self.path(SELECTED_FILE), &outcomes)?;
        self.record(&["candidates".into(), SELECTED_FILE.into()], "generate", t.elapsed().as_secs_f64())?;
        Ok(outcomes)
    }

    /// Oracle labels for the selected INN designs.
    pub fn validate_selected(&self) -> Result<ValidationReport, WorkflowError> {
        let t = Instant::now();
        let outcomes: Vec<TargetOutcome> = read_json(&self.path(SELECTED_FILE))?;
        let spans = self.spans()?;
        let oracle = Oracle::deterministic();
        let mut err = None;
        let labeled = label_outcomes(&outcomes, |o| {
            o.selection
                .designs
                .iter()
                .filter_map(|x| match oracle.evaluate(x) {
                    Ok(y) => Some(y.to_array()),
                    Err(e) => {
                        err.get_or_insert(e);
                        None
                    }
                })
                .collect()
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        let report = validation_report(&labeled, &spans);
        write_json(&self.path(VALIDATION_FILE), &report)?;
        self.record(&[VALIDATION_FILE.into()], "validate", t.elapsed().as_secs_f64())?;
        Ok(report)
    }

    pub fn baseline(&self) -> Result<BaselineArtifacts, WorkflowError> {
        let t = Instant::now();
        let data = self.dataset()?;
        let spans = data.label_spans();
        let (train, _) = data.split_at(self.config.n_train);
        let cfg = &self.config.baseline;
        let gps = GpTriple::fit(&train, &cfg.gp)?;
        let surrogates = self.surrogates()?;
        let ranker: &dyn LabelPredictor = match cfg.prevalidation {
            Prevalidation::Gp => &gps,
            Prevalidation::Surrogate => &surrogates,
        };
        let runs = run_gp_protocol(&gps, ranker, &self.config.grid, &spans, cfg)?;
        let gdir = self.path("gp_candidates");
        fs::create_dir_all(&gdir)?;
        for (i, r) in runs.iter().enumerate() {
            let xs: Vec<[f64; N_PARAMS]> = r.candidates.iter().map(|c: &GpCandidate| c.x).collect();
            let res: Vec<f64> = r.candidates.iter().map(|c| c.residual).collect();
            write_candidates(&gdir.join(format!("target_{i:02}.csv")), &xs, Some(&res))?;
        }
        let outcomes: Vec<TargetOutcome> = runs.into_iter().map(|r| r.outcome).collect();
        let oracle = Oracle::deterministic();
        let labeled = label_outcomes(&outcomes, |o| match cfg.labels {
            BaselineLabels::Surrogate => surrogates
                .predict(&o.selection.designs)
                .unwrap_or_default(),
            BaselineLabels::Oracle => o
                .selection
                .designs
                .iter()
                .filter_map(|x| oracle.evaluate(x).ok().map(|y| y.to_array()))
                .collect(),
        });
        let validation = validation_report(&labeled, &spans);
        let inn: ValidationReport = read_json(&self.path(VALIDATION_FILE))?;
        let comparison = compare(&inn, &validation);
        let art = BaselineArtifacts {
            prevalidation: cfg.prevalidation,
            labels: cfg.labels,
            outcomes,
            validation,
            comparison,
        };
        write_json(&self.path(BASELINE_FILE), &art)?;
        self.record(&["gp_candidates".into(), BASELINE_FILE.into()], "baseline", t.elapsed().as_secs_f64())?;
        Ok(art)
    }

    /// JSON and plain-text report from whichever stage outputs exist.
    pub fn report(&self) -> Result<(Report, String), WorkflowError> {
        let t = Instant::now();
        let inn: ValidationReport = read_json(&self.path(VALIDATION_FILE))?;
        let selected: Vec<TargetOutcome> = read_json(&self.path(SELECTED_FILE))?;
        let surrogates: Option<SurrogateReport> = read_json(&self.path(SURROGATE_REPORT_FILE)).ok();
        let baseline: Option<BaselineArtifacts> = if self.path(BASELINE_FILE).exists() {
            Some(read_json(&self.path(BASELINE_FILE))?)
        } else {
            None
        };
        let mean_yield = |o: &[TargetOutcome]| {
            if o.is_empty() {
                0.0
            } else {
                o.iter().map(TargetOutcome::yield_rate).sum::<f64>() / o.len() as f64
            }
        };
        let report = Report {
            surrogates,
            inn: inn.clone(),
            inn_yield: mean_yield(&selected),
            gp: baseline.as_ref().map(|b| b.validation.clone()),
            gp_yield: baseline.as_ref().map(|b| mean_yield(&b.outcomes)),
            comparison: baseline.as_ref().map(|b| b.comparison.clone()).unwrap_or_default(),
        };
        let mut text = String::new();
        if let Some(s) = &report.surrogates {
            text.push_str(&format!(
                "surrogate test MAE: U_M {:.4e}  dp_rel {:.4e}  G {:.4e}\n\n",
                s.test_mae.map_or(f64::NAN, |m| m[0]),
                s.test_mae.map_or(f64::NAN, |m| m[1]),
                s.test_mae.map_or(f64::NAN, |m| m[2]),
            ));
        }
        text.push_str(&format!("INN designs (oracle labels), mean yield {:.1}%\n", 100.0 * report.inn_yield));
        text.push_str(&render_validation(&report.inn));
        if let (Some(gp), Some(y)) = (&report.gp, report.gp_yield) {
            text.push_str(&format!("\nGP designs, mean yield {:.1}%\n", 100.0 * y));
            text.push_str(&render_validation(gp));
            text.push_str("\nMAE comparison\n");
            text.push_str(&render_comparison(&report.comparison));
        }
        write_json(&self.path(REPORT_FILE), &report)?;
        fs::write(self.path(REPORT_TEXT_FILE), &text)?;
        self.record(&[REPORT_FILE.into(), REPORT_TEXT_FILE.into()], "report", t.elapsed().as_secs_f64())?;
        Ok((report, text))
    }

    /// Every stage except tuning, in order.
    pub fn run_all(&self, with_baseline: bool) -> Result<Report, WorkflowError> {
        self.datagen()?;
        self.train_surrogates()?;
        self.augment()?;
        self.train_inn()?;
        self.generate()?;
        self.validate_selected()?;
        if with_baseline {
            self.baseline()?;
        }
        Ok(self.report()?.0)
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<RunManifest, WorkflowError> {
    read_json(&dir.as_ref().join(MANIFEST_FILE))
}
