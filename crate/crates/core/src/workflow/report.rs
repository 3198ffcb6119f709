use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::TargetOutcome;
use crate::domain::{LabelName, N_LABELS};

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Achieved labels of the designs selected for one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledTarget {
    pub target: [f64; N_LABELS],
    pub labels: Vec<[f64; N_LABELS]>,
}

/// Statistics of one label over every design whose target held `target` for that label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelValueRow {
    pub label: LabelName,
    pub target: f64,
    pub n: usize,
    /// Mean and spread after clipping G at 1. Absent without designs
    /// (the spread needs two).
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub mae: Option<f64>,
    pub normalized_mae: Option<f64>,
    /// Share of designs whose G sign matches a non-zero G target.
    pub sign_agreement: Option<f64>,
    pub clipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: Vec<LabelValueRow>,
    pub designs: usize,
    pub g_clipped: usize,
}

impl ValidationReport {
    pub fn row(&self, label: LabelName, target: f64) -> Option<&LabelValueRow> {
        self.rows.iter().find(|r| r.label == label && r.target == target)
    }
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Groups achieved labels by label and target value. MAE uses unclipped values.
pub fn validation_report(results: &[LabeledTarget], spans: &[f64; N_LABELS]) -> ValidationReport {
    let mut rows = Vec::new();
    let mut g_clipped = 0;
    for label in LabelName::ALL {
        let k = label.index();
        for value in distinct(results.iter().map(|r| r.target[k])) {
            let achieved: Vec<f64> = results
                .iter()
                .filter(|r| r.target[k] == value)
                .flat_map(|r| r.labels.iter().map(move |y| y[k]))
                .collect();
            let mut clipped = 0;
            let shown: Vec<f64> = achieved
                .iter()
                .map(|&v| {
                    if label == LabelName::GrowthRate && v > 1.0 {
                        clipped += 1;
                        1.0
                    } else {
                        v
                    }
                })
                .collect();
            let n = achieved.len();
            let mae = (n > 0).then(|| mean(&achieved.iter().map(|v| (v - value).abs()).collect::<Vec<_>>()));
            let sign_agreement = (label == LabelName::GrowthRate && value != 0.0 && !achieved.is_empty()).then(|| {
                achieved.iter().filter(|v| v.signum() == value.signum() && **v != 0.0).count() as f64
                    / achieved.len() as f64
            });
            if label == LabelName::GrowthRate {
                g_clipped += clipped;
            }
            rows.push(LabelValueRow {
                label,
                target: value,
                n,
                mean: (n > 0).then(|| mean(&shown)),
                std: (n > 1).then(|| sample_std(&shown)),
                mae,
                normalized_mae: mae.map(|m| m / spans[k]),
                sign_agreement,
                clipped,
            });
        }
    }
    ValidationReport {
        rows,
        designs: results.iter().map(|r| r.labels.len()).sum(),
        g_clipped,
    }
}

/// Attaches achieved labels to each selection.
pub fn label_outcomes(
    outcomes: &[TargetOutcome],
    mut labeler: impl FnMut(&TargetOutcome) -> Vec<[f64; N_LABELS]>,
) -> Vec<LabeledTarget> {
    outcomes
        .iter()
        .map(|o| LabeledTarget {
            target: o.target,
            labels: labeler(o),
        })
        .collect()
}

/// One label value compared across the two methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: LabelName,
    pub target: f64,
    /// Absent when the method selected no designs for this value.
    pub eps_inn: Option<f64>,
    pub eps_gp: Option<f64>,
    /// (ε_GP − ε_INN) / ε_GP in percent; absent when either error is
    /// missing or ε_GP alone is zero.
    pub delta_pct: Option<f64>,
}

impl ComparisonRow {
    /// A method without designs loses to one with designs.
    pub fn inn_not_worse(&self) -> bool {
        match (self.eps_inn, self.eps_gp) {
            (Some(a), Some(b)) => a <= b,
            (Some(_), None) => true,
            (None, _) => false,
        }
    }
}

pub fn relative_difference_pct(eps_inn: f64, eps_gp: f64) -> Option<f64> {
    if eps_gp == 0.0 {
        (eps_inn == 0.0).then_some(0.0)
    } else {
        Some(100.0 * (eps_gp - eps_inn) / eps_gp)
    }
}

pub fn compare(inn: &ValidationReport, gp: &ValidationReport) -> Vec<ComparisonRow> {
    inn.rows
        .iter()
        .filter_map(|a| {
            let b = gp.row(a.label, a.target)?;
            Some(ComparisonRow {
                label: a.label,
                target: a.target,
                eps_inn: a.mae,
                eps_gp: b.mae,
                delta_pct: a.mae.zip(b.mae).and_then(|(i, g)| relative_difference_pct(i, g)),
            })
        })
        .collect()
}

fn sci(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "-".into())
}

pub fn render_validation(report: &ValidationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<7} {:>8} {:>5} {:>11} {:>11} {:>11} {:>8} {:>6}",
        "label", "target", "n", "mean", "std", "MAE", "MAE/rng", "sign"
    );
    for r in &report.rows {
        let sign = r.sign_agreement.map(|v| format!("{:.0}%", 100.0 * v)).unwrap_or_else(|| "-".into());
        let pct = r.normalized_mae.map(|v| format!("{:.2}%", 100.0 * v)).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<7} {:>8} {:>5} {:>11} {:>11} {:>11} {:>8} {:>6}",
            r.label.symbol(),
            r.target,
            r.n,
            sci(r.mean),
            sci(r.std),
            sci(r.mae),
            pct,
            sign
        );
    }
    let _ = writeln!(s, "designs: {}, G values clipped at 1: {}", report.designs, report.g_clipped);
    s
}

pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<7} {:>8} {:>11} {:>11} {:>9}", "label", "target", "eps_GP", "eps_INN", "delta");
    for r in rows {
        let d = r.delta_pct.map(|v| format!("{v:.2}%")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<7} {:>8} {:>11} {:>11} {:>9}",
            r.label.symbol(),
            r.target,
            sci(r.eps_gp),
            sci(r.eps_inn),
            d
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_row_fixture() {
        let labels = vec![
            [0.02, 0.030, 0.4],
            [0.03, 0.035, 0.6],
            [0.01, 0.040, 1.5],
            [0.02, 0.045, -0.2],
            [0.04, 0.033, 0.5],
        ];
        let results = vec![LabeledTarget {
            target: [0.02, 0.04, 0.5],
            labels: labels.clone(),
        }];
        let spans = [0.1, 0.02, 2.0];
        let rep = validation_report(&results, &spans);
        assert_eq!(rep.rows.len(), 3);

        let um = rep.row(LabelName::Unmixedness, 0.02).unwrap();
        let hand_mean = (0.02 + 0.03 + 0.01 + 0.02 + 0.04) / 5.0;
        let hand_var = [0.02, 0.03, 0.01, 0.02, 0.04].iter().map(|v: &f64| (v - hand_mean).powi(2)).sum::<f64>() / 4.0;
        let hand_mae = (0.0 + 0.01 + 0.01 + 0.0 + 0.02) / 5.0;
        assert!((um.mean.unwrap() - hand_mean).abs() < 1e-12);
        assert!((um.std.unwrap() - hand_var.sqrt()).abs() < 1e-12);
        assert!((um.mae.unwrap() - hand_mae).abs() < 1e-12);
        assert!((um.normalized_mae.unwrap() - hand_mae / 0.1).abs() < 1e-12);

        let g = rep.row(LabelName::GrowthRate, 0.5).unwrap();
        assert_eq!(g.clipped, 1);
        let shown = [0.4, 0.6, 1.0, -0.2, 0.5];
        assert!((g.mean.unwrap() - shown.iter().sum::<f64>() / 5.0).abs() < 1e-12);
        let hand_g_mae = (0.1 + 0.1 + 1.0 + 0.7 + 0.0) / 5.0;
        assert!((g.mae.unwrap() - hand_g_mae).abs() < 1e-12);
        assert_eq!(g.sign_agreement, Some(0.8));
        assert_eq!(rep.g_clipped, 1);

        let eps_inn = 0.01;
        let eps_gp = 0.04;
        assert!((relative_difference_pct(eps_inn, eps_gp).unwrap() - 75.0).abs() < 1e-12);
    }

    #[test]
    fn identical_reports_give_zero_delta() {
        let results = vec![LabeledTarget {
            target: [0.06, 0.04, 0.0],
            labels: vec![[0.05, 0.041, 0.1], [0.07, 0.039, -0.1]],
        }];
        let rep = validation_report(&results, &[1.0; 3]);
        let rows = compare(&rep, &rep);
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.delta_pct == Some(0.0) && r.inn_not_worse()));
        assert!(rep.row(LabelName::GrowthRate, 0.0).unwrap().sign_agreement.is_none());
    }

    #[test]
    fn perfect_designs_have_zero_spread() {
        let results = vec![LabeledTarget {
            target: [0.02, 0.033, -0.5],
            labels: vec![[0.02, 0.033, -0.5]; 15],
        }];
        let rep = validation_report(&results, &[1.0; 3]);
        for r in &rep.rows {
            assert!(r.std.unwrap() < 1e-15);
            assert!((r.mean.unwrap() - r.target).abs() < 1e-15);
            assert_eq!(r.mae, Some(0.0));
        }
    }

    #[test]
    fn grid_report_has_nine_rows() {
        let grid = super::super::TargetGrid::default();
        let results: Vec<LabeledTarget> = grid
            .vectors()
            .into_iter()
            .map(|t| LabeledTarget { target: t, labels: vec![t] })
            .collect();
        let rep = validation_report(&results, &[1.0; 3]);
        assert_eq!(rep.rows.len(), 9);
        assert!(rep.rows.iter().all(|r| r.n == 9));
        assert!(render_validation(&rep).lines().count() >= 10);
    }

    #[test]
    fn empty_target_has_no_error_and_loses() {
        let results = vec![
            LabeledTarget {
                target: [0.02, 0.04, 0.5],
                labels: vec![],
            },
            LabeledTarget {
                target: [0.06, 0.04, 0.5],
                labels: vec![[0.06, 0.04, 0.5]],
            },
        ];
        let inn = validation_report(&results, &[1.0; 3]);
        let row = inn.row(LabelName::Unmixedness, 0.02).unwrap();
        assert_eq!((row.n, row.mae, row.mean, row.std), (0, None, None, None));
        assert_eq!(inn.row(LabelName::Unmixedness, 0.06).unwrap().std, None);
        let gp = validation_report(
            &[LabeledTarget {
                target: [0.02, 0.04, 0.5],
                labels: vec![[0.03, 0.04, 0.5]],
            }],
            &[1.0; 3],
        );
        let cmp = compare(&inn, &gp);
        let um = cmp.iter().find(|r| r.label == LabelName::Unmixedness).unwrap();
        assert!(!um.inn_not_worse());
        assert_eq!(um.delta_pct, None);
        assert!(render_validation(&inn).contains('-'));
    }
}
