use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{DesignParams, ParamName, N_PARAMS, PARAM_RANGES};
use super::DomainError;

/// Latin hypercube on the unit cube: for every dimension, each of the `n`
/// equal strata holds exactly one sample.
pub fn latin_hypercube_unit(n: usize, dims: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; dims]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        strata.shuffle(rng);
        for (row, &s) in out.iter_mut().zip(&strata) {
            let jitter: f64 = rng.random();
            row[d] = (s as f64 + jitter) / n as f64;
        }
    }
    out
}

/// Stratified designs over the full design space.
///
/// The hole count is drawn on `[1.5, 10.5)` and rounded, so every integer
/// 2..=10 covers an equal share of its stratum column.
pub fn latin_hypercube_sample(n: usize, seed: u64) -> Result<Vec<DesignParams>, DomainError> {
    if n == 0 {
        return Err(DomainError::Domain(
            "latin hypercube needs at least one sample".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = latin_hypercube_unit(n, N_PARAMS, &mut rng);
    Ok(unit.iter().map(|u| design_from_unit(u)).collect())
}

fn design_from_unit(u: &[f64]) -> DesignParams {
    let mut v = [0.0; N_PARAMS];
    for (i, name) in ParamName::ALL.iter().enumerate() {
        v[i] = match name {
            ParamName::HoleCount => (1.5 + 9.0 * u[i]).round().clamp(2.0, 10.0),
            _ => PARAM_RANGES[i].from_unit(u[i]),
        };
    }
    DesignParams::from_continuous(v)
}
