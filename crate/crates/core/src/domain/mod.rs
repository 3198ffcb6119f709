//! Combustor parameterization, design-space sampling, the analytic label
//! oracle and dataset persistence.

mod dataset;
mod lhs;
mod oracle;
mod params;
mod stats;

pub use dataset::{format_float, format_row, LabeledDataset, LabeledRow, Provenance, DATASET_HEADER};
pub use lhs::{latin_hypercube_sample, latin_hypercube_unit};
pub use oracle::{growth_rate_from_eigenfrequency, hole_factor, time_lag, Oracle};
pub use params::{
    mass_flows, vortex_generator_count, DependentGeometry, DesignParams, LabelName,
    OperatingPoint, ParamName, ParamRange, PerformanceLabels, CHAMBER_LENGTH_MM, DUMP_RATIO,
    N_LABELS, N_PARAMS, PARAM_RANGES, SPECIFIC_GAS_CONSTANT_AIR,
};
pub use stats::{NormalizationStats, Standardizer};


#[derive(Debug, thiserror::Error)]
pub enum DomainError {
    #[error("{param} = {value} outside [{}, {}]", range.min, range.max)]
    OutOfRange {
        param: ParamName,
        value: f64,
        range: ParamRange,
    },
    #[error("label {label} = {value} is not admissible")]
    InvalidLabel { label: LabelName, value: f64 },
    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<DomainError>,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("normalization: {0}")]
    Stats(String),
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Samples `n` designs by Latin hypercube and labels them with `oracle`.
pub fn oracle_dataset(n: usize, seed: u64, oracle: &Oracle) -> Result<LabeledDataset, DomainError> {
    let xs = latin_hypercube_sample(n, seed)?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 0x9e37_79b9);
    let rows = xs
        .into_iter()
        .map(|x| {
            let y = if oracle.is_noisy() {
                oracle.evaluate_noisy(&x, &mut rng)?
            } else {
                oracle.evaluate(&x)?
            };
            Ok(LabeledRow { x, y })
        })
        .collect::<Result<Vec<_>, DomainError>>()?;
    Ok(LabeledDataset::new(rows, Provenance::Oracle))
}
