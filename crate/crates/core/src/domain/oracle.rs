//! Closed-form stand-in for the CFD and acoustic-network label workflow.
//!
//! Every label is a smooth function of the parameters mapped onto [0, 1]:
//!
//! ```text
//! dp_rel = 0.030 + 0.010 r_D² + 0.008 (1 − r_A) + 0.002 r_D (1 − r_A)
//! H(N_H) = 0.5 + 0.5 ((N_H − 8) / 6)²
//! U_M    = 0.012 + 0.14 H(N_H) exp(−1.2 r_L) (1 − 0.3 r_D) (0.7 + 0.3 r_A)
//! tau    = (D_M R_L − 80) / (540 − 80)
//! G      = (1.1 − 0.6 r_P) cos(2π (1.3 tau + 0.9 r_P)) − 0.1
//! ```
//!
//! Blockage (large lance, small free area) raises the pressure loss and
//! improves mixing; unmixedness bottoms out at eight holes and decays with
//! tube length; the growth rate oscillates with the convective time lag
//! `D_M·R_L` and is damped by a longer plenum.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{DesignParams, PerformanceLabels};
use super::DomainError;

/// Ground-truth label oracle. Deterministic unless `noise_sigma` is non-zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    /// Additive Gaussian noise per label `(U_M, dp_rel, G)`; zero disables it.
    pub noise_sigma: [f64; 3],
}

pub fn hole_factor(hole_count: u32) -> f64 {
    let d = (hole_count as f64 - 8.0) / 6.0;
    0.5 + 0.5 * d * d
}

/// Normalized convective time lag of the premixing tube.
pub fn time_lag(x: &DesignParams) -> f64 {
    (x.mixing_tube_diameter * x.length_ratio - 80.0) / (540.0 - 80.0)
}

impl Oracle {
    pub fn deterministic() -> Self {
        Self::default()
    }

    pub fn with_noise(noise_sigma: [f64; 3]) -> Self {
        Self { noise_sigma }
    }

    /// Noise-free labels. Fails if any coordinate is outside the design space.
    pub fn evaluate(&self, x: &DesignParams) -> Result<PerformanceLabels, DomainError> {
        x.validate()?;
        Ok(evaluate_unchecked(x))
    }

    /// Labels plus the configured Gaussian scatter.
    pub fn evaluate_noisy(
        &self,
        x: &DesignParams,
        rng: &mut impl Rng,
    ) -> Result<PerformanceLabels, DomainError> {
        let clean = self.evaluate(x)?.to_array();
        let mut out = clean;
        for (v, &sigma) in out.iter_mut().zip(&self.noise_sigma) {
            if sigma > 0.0 {
                let n = Normal::new(0.0, sigma).map_err(|e| DomainError::Domain(e.to_string()))?;
                *v += n.sample(rng);
            }
        }
        Ok(PerformanceLabels::from_array(out))
    }

    pub fn is_noisy(&self) -> bool {
        self.noise_sigma.iter().any(|&s| s > 0.0)
    }
}

fn evaluate_unchecked(x: &DesignParams) -> PerformanceLabels {
    let [r_a, _, _, r_d, r_l, r_p] = x.to_unit();

    let dp_rel = 0.030 + 0.010 * r_d * r_d + 0.008 * (1.0 - r_a) + 0.002 * r_d * (1.0 - r_a);

    let u_m = 0.012
        + 0.14
            * hole_factor(x.hole_count)
            * (-1.2 * r_l).exp()
            * (1.0 - 0.3 * r_d)
            * (0.7 + 0.3 * r_a);

    let tau = time_lag(x);
    let phase = 2.0 * std::f64::consts::PI * (1.3 * tau + 0.9 * r_p);
    let g = (1.1 - 0.6 * r_p) * phase.cos() - 0.1;

    PerformanceLabels::new(u_m, dp_rel, g)
}

/// Growth rate from a complex eigenfrequency: `exp(−2π ω_im / ω_re) − 1`.
pub fn growth_rate_from_eigenfrequency(omega_real: f64, omega_imag: f64) -> Result<f64, DomainError> {
    if omega_real == 0.0 || !omega_real.is_finite() {
        return Err(DomainError::Domain(format!(
            "real part of the eigenfrequency must be finite and non-zero, got {omega_real}"
        )));
    }
    Ok((-2.0 * std::f64::consts::PI * omega_imag / omega_real).exp() - 1.0)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::domain::params::{ParamName, PARAM_RANGES};

    fn oracle() -> Oracle {
        Oracle::deterministic()
    }

    fn with(mut x: DesignParams, name: ParamName, v: f64) -> DesignParams {
        let mut a = x.to_array();
        a[name.index()] = v;
        x = DesignParams::from_continuous(a);
        x
    }

    #[test]
    fn pressure_loss_minimum_corner() {
        let x = with(DesignParams::midpoint(), ParamName::LanceDiameterRatio, 0.35);
        let x = with(x, ParamName::AreaRatio, 0.83);
        let y = oracle().evaluate(&x).unwrap();
        assert!((y.pressure_loss - 0.030).abs() < 1e-15);
    }

    #[test]
    fn eight_holes_mix_better_than_two() {
        let a = with(DesignParams::midpoint(), ParamName::HoleCount, 8.0);
        let b = with(DesignParams::midpoint(), ParamName::HoleCount, 2.0);
        let ua = oracle().evaluate(&a).unwrap().unmixedness;
        let ub = oracle().evaluate(&b).unwrap().unmixedness;
        assert!(ua < ub);
        assert_eq!(hole_factor(8), 0.5);
        assert_eq!(hole_factor(2), 1.0);
    }

    #[test]
    fn midpoint_matches_hand_evaluation() {
        // r = 0.5 everywhere, N_H = 6, D_M·R_L = 32.5·8 = 260
        let y = oracle().evaluate(&DesignParams::midpoint()).unwrap();
        let dp = 0.030 + 0.010 * 0.25 + 0.008 * 0.5 + 0.002 * 0.25;
        let h = 0.5 + 0.5 * (1.0 / 3.0) * (1.0 / 3.0);
        let um = 0.012 + 0.14 * h * (-0.6f64).exp() * 0.85 * 0.85;
        let tau = 180.0 / 460.0;
        let g = 0.8 * (2.0 * PI * (1.3 * tau + 0.45)).cos() - 0.1;
        assert!((y.pressure_loss - dp).abs() < 1e-12);
        assert!((y.pressure_loss - 0.037).abs() < 1e-12);
        assert!((y.unmixedness - um).abs() < 1e-12);
        assert!((y.growth_rate - g).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_design_is_rejected_by_name() {
        let x = with(DesignParams::midpoint(), ParamName::PlenumLength, 950.0);
        let err = oracle().evaluate(&x).unwrap_err();
        assert!(err.to_string().contains("L_P"));
    }

    #[test]
    fn labels_stay_in_documented_bands_at_corners() {
        // all 2^5 continuous corners × N_H ∈ {2..10}
        for mask in 0..32u32 {
            for n_h in 2..=10u32 {
                let mut v = [0.0; 6];
                let cont = [0usize, 2, 3, 4, 5];
                for (bit, &i) in cont.iter().enumerate() {
                    let r = PARAM_RANGES[i];
                    v[i] = if mask >> bit & 1 == 1 { r.max } else { r.min };
                }
                v[1] = n_h as f64;
                let y = oracle().evaluate(&DesignParams::from_continuous(v)).unwrap();
                assert!(y.pressure_loss >= 0.030 && y.pressure_loss <= 0.050);
                assert!(y.unmixedness > 0.012 && y.unmixedness < 0.16);
                assert!(y.growth_rate > -1.2 && y.growth_rate < 1.1);
            }
        }
    }

    #[test]
    fn noise_mode_is_off_by_default() {
        let mut rng = rand::rng();
        let x = DesignParams::midpoint();
        let a = oracle().evaluate_noisy(&x, &mut rng).unwrap();
        assert_eq!(a, oracle().evaluate(&x).unwrap());
        let noisy = Oracle::with_noise([0.0, 0.0, 0.1]);
        assert!(noisy.is_noisy());
        let b = noisy.evaluate_noisy(&x, &mut rng).unwrap();
        assert_eq!(a.pressure_loss, b.pressure_loss);
    }

    #[test]
    fn growth_rate_conversions() {
        assert_eq!(growth_rate_from_eigenfrequency(100.0, 0.0).unwrap(), 0.0);
        let im = -540.0 * 2f64.ln() / (2.0 * PI);
        assert!((growth_rate_from_eigenfrequency(540.0, im).unwrap() - 1.0).abs() < 1e-12);
        let g = growth_rate_from_eigenfrequency(540.0, 54.0).unwrap();
        assert!((g - ((-0.2 * PI).exp() - 1.0)).abs() < 1e-15);
        assert!((g + 0.4665).abs() < 1e-4);
        assert!(growth_rate_from_eigenfrequency(0.0, 1.0).is_err());
    }
}
