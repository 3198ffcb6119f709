//! Gaussian-process forward models and Nelder-Mead inversion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    DesignParams, DomainError, LabeledDataset, Standardizer, N_LABELS, N_PARAMS, PARAM_RANGES,
};

const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Debug, thiserror::Error)]
pub enum GpError {
    #[error("kernel matrix is not positive definite even with jitter {jitter}")]
    Conditioning { jitter: f64 },
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("objective is not finite at the starting point")]
    NonFiniteStart,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// k(a, b) = σ² exp(−‖a − b‖² / (2ℓ²)), plus `noise` on the diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise: f64,
}

impl RbfKernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_variance * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub length_scales: Vec<f64>,
    pub signal_variances: Vec<f64>,
    pub noises: Vec<f64>,
    /// Only the first `max_rows` training rows enter the kernel matrix.
    pub max_rows: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            length_scales: vec![0.1, 0.2, 0.5, 1.0, 2.0],
            signal_variances: vec![0.5, 1.0, 2.0],
            noises: vec![1e-6, 1e-4, 1e-2],
            max_rows: 300,
        }
    }
}

/// In-place lower Cholesky factor of a row-major SPD matrix; `false` if not SPD.
pub fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            let (ri, rj) = (&a[i * n..i * n + j], &a[j * n..j * n + j]);
            s -= ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

/// Solves L v = b.
fn forward_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut v = b.to_vec();
    for i in 0..n {
        let s: f64 = l[i * n..i * n + i].iter().zip(&v[..i]).map(|(a, b)| a * b).sum();
        v[i] = (v[i] - s) / l[i * n + i];
    }
    v
}

/// Solves Lᵀ x = b.
fn backward_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Exact GP regression of one scalar label on standardized inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub kernel: RbfKernel,
    pub x_stats: Standardizer,
    pub y_mean: f64,
    pub y_scale: f64,
    /// Standardized training inputs, row-major.
    inputs: Vec<f64>,
    n: usize,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    pub jitter: f64,
    pub log_marginal_likelihood: f64,
}

struct Factored {
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
    lml: f64,
}

fn factor(inputs: &[f64], n: usize, y: &[f64], kernel: &RbfKernel) -> Result<Factored, GpError> {
    let mut base = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = kernel.eval(&inputs[i * N_PARAMS..(i + 1) * N_PARAMS], &inputs[j * N_PARAMS..(j + 1) * N_PARAMS]);
            base[i * n + j] = k;
            base[j * n + i] = k;
        }
    }
    for jitter in JITTER_LADDER {
        let mut a = base.clone();
        for i in 0..n {
            a[i * n + i] += kernel.noise + jitter;
        }
        if cholesky(&mut a, n) {
            let alpha = backward_solve(&a, n, &forward_solve(&a, n, y));
            let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
            let logdet: f64 = (0..n).map(|i| a[i * n + i].ln()).sum();
            let lml = -0.5 * fit - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            return Ok(Factored {
                chol: a,
                alpha,
                jitter,
                lml,
            });
        }
    }
    Err(GpError::Conditioning {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

impl GpModel {
    /// Fits with fixed kernel hyperparameters.
    pub fn fit_with(x: &[[f64; N_PARAMS]], y: &[f64], kernel: RbfKernel) -> Result<Self, GpError> {
        Self::prepare(x, y)?.finish(kernel)
    }

    /// Grid search maximizing the log marginal likelihood.
    pub fn fit(x: &[[f64; N_PARAMS]], y: &[f64], config: &GpConfig) -> Result<Self, GpError> {
        let n = x.len().min(config.max_rows.max(2));
        let prep = Self::prepare(&x[..n.min(x.len())], &y[..n.min(y.len())])?;
        let mut best: Option<(f64, RbfKernel)> = None;
        for &length_scale in &config.length_scales {
            for &signal_variance in &config.signal_variances {
                for &noise in &config.noises {
                    let kernel = RbfKernel {
                        signal_variance,
                        length_scale,
                        noise,
                    };
                    let Ok(f) = factor(&prep.inputs, prep.n, &prep.targets, &kernel) else {
                        continue;
                    };
                    if best.is_none_or(|(b, _)| f.lml > b) {
                        best = Some((f.lml, kernel));
                    }
                }
            }
        }
        let Some((_, kernel)) = best else {
            return Err(GpError::Conditioning {
                jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
            });
        };
        prep.finish(kernel)
    }

    fn prepare(x: &[[f64; N_PARAMS]], y: &[f64]) -> Result<Prepared, GpError> {
        if x.len() < 2 {
            return Err(GpError::TooFewRows { needed: 2, got: x.len() });
        }
        if x.len() != y.len() {
            return Err(GpError::Invalid(format!("{} inputs but {} targets", x.len(), y.len())));
        }
        let x_stats = Standardizer::fit_lenient(x)?;
        let y_rows: Vec<[f64; 1]> = y.iter().map(|&v| [v]).collect();
        let y_st = Standardizer::fit_lenient(&y_rows)?;
        let inputs: Vec<f64> = x.iter().flat_map(|r| x_stats.normalize(r)).collect();
        let targets: Vec<f64> = y.iter().map(|v| (v - y_st.mean[0]) / y_st.std[0]).collect();
        Ok(Prepared {
            x_stats,
            y_mean: y_st.mean[0],
            y_scale: y_st.std[0],
            inputs,
            targets,
            n: x.len(),
        })
    }

    /// Number of rows in the kernel matrix.
    pub fn n_train(&self) -> usize {
        self.n
    }

    fn cross<'a>(&'a self, z: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        let k = self.kernel;
        let c = -0.5 / (k.length_scale * k.length_scale);
        self.inputs.chunks_exact(N_PARAMS).map(move |row| {
            let d2: f64 = row.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            k.signal_variance * (c * d2).exp()
        })
    }

    /// Posterior mean for one raw-unit input.
    pub fn predict_mean(&self, x: &[f64; N_PARAMS]) -> f64 {
        let z = self.x_stats.normalize(x);
        let m: f64 = self.cross(&z).zip(&self.alpha).map(|(k, a)| k * a).sum();
        self.y_mean + self.y_scale * m
    }

    /// Posterior mean and variance (raw label units) per row.
    pub fn predict(&self, xs: &[[f64; N_PARAMS]]) -> Vec<(f64, f64)> {
        xs.iter()
            .map(|x| {
                let z = self.x_stats.normalize(x);
                let ks: Vec<f64> = self.cross(&z).collect();
                let m: f64 = ks.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
                let v = forward_solve(&self.chol, self.n, &ks);
                let var = (self.kernel.signal_variance - v.iter().map(|t| t * t).sum::<f64>()).max(0.0);
                (self.y_mean + self.y_scale * m, var * self.y_scale * self.y_scale)
            })
            .collect()
    }
}

struct Prepared {
    x_stats: Standardizer,
    y_mean: f64,
    y_scale: f64,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    n: usize,
}

impl Prepared {
    fn finish(self, kernel: RbfKernel) -> Result<GpModel, GpError> {
        let f = factor(&self.inputs, self.n, &self.targets, &kernel)?;
        Ok(GpModel {
            kernel,
            x_stats: self.x_stats,
            y_mean: self.y_mean,
            y_scale: self.y_scale,
            inputs: self.inputs,
            n: self.n,
            chol: f.chol,
            alpha: f.alpha,
            jitter: f.jitter,
            log_marginal_likelihood: f.lml,
        })
    }
}

/// One GP per label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpTriple {
    pub models: [GpModel; N_LABELS],
}

impl GpTriple {
    pub fn fit(data: &LabeledDataset, config: &GpConfig) -> Result<Self, GpError> {
        let x = data.x_rows();
        let y = data.y_rows();
        let fit = |k: usize| {
            let col: Vec<f64> = y.iter().map(|r| r[k]).collect();
            let m = GpModel::fit(&x, &col, config)?;
            log::info!(
                "gp {k}: sigma2 {} length {} noise {} lml {:.2}",
                m.kernel.signal_variance,
                m.kernel.length_scale,
                m.kernel.noise,
                m.log_marginal_likelihood
            );
            Ok::<_, GpError>(m)
        };
        Ok(Self {
            models: [fit(0)?, fit(1)?, fit(2)?],
        })
    }

    pub fn predict_mean(&self, x: &[f64; N_PARAMS]) -> [f64; N_LABELS] {
        [
            self.models[0].predict_mean(x),
            self.models[1].predict_mean(x),
            self.models[2].predict_mean(x),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadConfig {
    pub max_iter: usize,
    /// Stop once every vertex lies within this ∞-norm distance of the best.
    pub tolerance: f64,
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tolerance: 1e-8,
            initial_step: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best value after each iteration.
    pub best_trace: Vec<f64>,
}

fn clip(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Simplex search with reflection 1, expansion 2, contraction 0.5 and
/// shrink 0.5. Every candidate vertex is clipped to `bounds`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    bounds: &[(f64, f64)],
    config: &NelderMeadConfig,
) -> Result<NelderMeadResult, GpError> {
    let d = x0.len();
    if bounds.len() != d || d == 0 {
        return Err(GpError::Invalid(format!("{} bounds for {d} coordinates", bounds.len())));
    }
    let mut start = x0.to_vec();
    clip(&mut start, bounds);
    let f0 = f(&start);
    if !f0.is_finite() {
        return Err(GpError::NonFiniteStart);
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.clone(), f0)];
    for i in 0..d {
        let mut v = start.clone();
        let (lo, hi) = bounds[i];
        let step = config.initial_step * (hi - lo).max(f64::MIN_POSITIVE);
        v[i] = if v[i] + step <= hi { v[i] + step } else { v[i] - step };
        clip(&mut v, bounds);
        let fv = f(&v);
        simplex.push((v, fv));
    }
    let sort = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    sort(&mut simplex);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let toward = |from: &[f64], to: &[f64], t: f64| -> Vec<f64> {
        from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect()
    };
    while iterations < config.max_iter {
        let size = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if size < config.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut centroid = vec![0.0; d];
        for (v, _) in &simplex[..d] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / d as f64;
            }
        }
        let worst = simplex[d].clone();
        let mut xr = toward(&centroid, &worst.0, -1.0);
        clip(&mut xr, bounds);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let mut xe = toward(&centroid, &worst.0, -2.0);
            clip(&mut xe, bounds);
            let fe = f(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let mut xc = toward(&centroid, &xr, 0.5);
                clip(&mut xc, bounds);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let mut xc = toward(&centroid, &worst.0, 0.5);
                clip(&mut xc, bounds);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (v, fv) in simplex.iter_mut().skip(1) {
                    *v = toward(&best, v, 0.5);
                    clip(v, bounds);
                    *fv = f(v);
                }
            }
        }
        sort(&mut simplex);
        trace.push(simplex[0].1);
    }
    let (x, value) = simplex.swap_remove(0);
    Ok(NelderMeadResult {
        x,
        value,
        iterations,
        converged,
        best_trace: trace,
    })
}

/// A Nelder-Mead termination point in raw design units with N_H continuous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpCandidate {
    pub x: [f64; N_PARAMS],
    pub residual: f64,
}

fn to_raw(u: &[f64]) -> [f64; N_PARAMS] {
    let mut x = [0.0; N_PARAMS];
    for (i, r) in PARAM_RANGES.iter().enumerate() {
        x[i] = r.from_unit(u[i]);
    }
    x
}

/// Squared range-normalized residual of the GP means against `target`.
pub fn inverse_objective(gps: &GpTriple, x: &[f64; N_PARAMS], target: &[f64; N_LABELS], spans: &[f64; N_LABELS]) -> f64 {
    let y = gps.predict_mean(x);
    y.iter().zip(target).zip(spans).map(|((p, t), s)| ((p - t) / s).powi(2)).sum()
}

/// Minimizes the GP residual from `n_starts` uniform starts in the design
/// box; returns every termination point.
pub fn gp_inverse_design(
    gps: &GpTriple,
    target: &[f64; N_LABELS],
    spans: &[f64; N_LABELS],
    n_starts: usize,
    seed: u64,
    config: &NelderMeadConfig,
) -> Result<Vec<GpCandidate>, GpError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = [(0.0, 1.0); N_PARAMS];
    let mut out = Vec::with_capacity(n_starts);
    for _ in 0..n_starts {
        let u0: Vec<f64> = (0..N_PARAMS).map(|_| rng.random::<f64>()).collect();
        let res = nelder_mead(|u| inverse_objective(gps, &to_raw(u), target, spans), &u0, &bounds, config)?;
        out.push(GpCandidate {
            x: to_raw(&res.x),
            residual: res.value,
        });
    }
    Ok(out)
}

/// Design form of candidates that survive N_H rounding and the range check.
pub fn valid_candidates(cands: &[GpCandidate]) -> Vec<DesignParams> {
    cands
        .iter()
        .filter_map(|c| DesignParams::try_from_continuous(c.x).ok())
        .collect()
}
