use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{DesignParams, PerformanceLabels, N_LABELS, N_PARAMS};
use super::DomainError;

pub const DATASET_HEADER: &str = "R_A,N_H,D_M,R_D,R_L,L_P,U_M,dp_rel,G";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Oracle,
    SurrogateAugmented,
}

impl Provenance {
    fn tag(self) -> &'static str {
        match self {
            Provenance::Oracle => "oracle",
            Provenance::SurrogateAugmented => "surrogate-augmented",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "oracle" => Some(Provenance::Oracle),
            "surrogate-augmented" => Some(Provenance::SurrogateAugmented),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub x: DesignParams,
    pub y: PerformanceLabels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub rows: Vec<LabeledRow>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(rows: Vec<LabeledRow>, provenance: Provenance) -> Self {
        Self { rows, provenance }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        for (i, r) in self.rows.iter().enumerate() {
            r.x.validate().map_err(|e| DomainError::Row {
                row: i,
                source: Box::new(e),
            })?;
        }
        Ok(())
    }

    pub fn x_rows(&self) -> Vec<[f64; N_PARAMS]> {
        self.rows.iter().map(|r| r.x.to_array()).collect()
    }

    pub fn y_rows(&self) -> Vec<[f64; N_LABELS]> {
        self.rows.iter().map(|r| r.y.to_array()).collect()
    }

    /// Observed `(min, max)` of each label.
    pub fn label_ranges(&self) -> [(f64, f64); N_LABELS] {
        let mut out = [(f64::INFINITY, f64::NEG_INFINITY); N_LABELS];
        for r in &self.rows {
            for (o, v) in out.iter_mut().zip(r.y.to_array()) {
                o.0 = o.0.min(v);
                o.1 = o.1.max(v);
            }
        }
        out
    }

    /// `max − min` of each label.
    pub fn label_spans(&self) -> [f64; N_LABELS] {
        self.label_ranges().map(|(lo, hi)| hi - lo)
    }

    /// First `n_train` rows and the remainder.
    pub fn split_at(&self, n_train: usize) -> (LabeledDataset, LabeledDataset) {
        let n = n_train.min(self.rows.len());
        (
            LabeledDataset::new(self.rows[..n].to_vec(), self.provenance),
            LabeledDataset::new(self.rows[n..].to_vec(), self.provenance),
        )
    }

    pub fn write_to(&self, w: impl Write) -> Result<(), DomainError> {
        self.validate()?;
        let mut w = BufWriter::new(w);
        writeln!(w, "# provenance={}", self.provenance.tag())?;
        writeln!(w, "{DATASET_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{}", format_row(&r.x, &r.y.to_array()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DomainError> {
        let f = fs::File::create(path)?;
        self.write_to(f)
    }

    pub fn read_from(r: impl Read) -> Result<Self, DomainError> {
        let reader = BufReader::new(r);
        let mut provenance = Provenance::Oracle;
        let mut header_seen = false;
        let mut rows = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let line = line.trim_end_matches('\r');
            if !header_seen {
                if let Some(comment) = line.strip_prefix('#') {
                    if let Some(tag) = comment.trim().strip_prefix("provenance=") {
                        provenance = Provenance::parse(tag.trim()).ok_or_else(|| {
                            DomainError::Parse {
                                line: line_no,
                                message: format!("unknown provenance '{tag}'"),
                            }
                        })?;
                    }
                    continue;
                }
                if line != DATASET_HEADER {
                    return Err(DomainError::Parse {
                        line: line_no,
                        message: format!("expected header '{DATASET_HEADER}', found '{line}'"),
                    });
                }
                header_seen = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let row = parse_row(line, line_no)?;
            row.x.validate().map_err(|e| DomainError::Row {
                row: rows.len(),
                source: Box::new(e),
            })?;
            rows.push(row);
        }
        if !header_seen {
            return Err(DomainError::Parse {
                line: 1,
                message: "missing header".into(),
            });
        }
        Ok(Self { rows, provenance })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, DomainError> {
        let f = fs::File::open(path)?;
        Self::read_from(f)
    }
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// One CSV row of parameters followed by label-like values.
pub fn format_row(x: &DesignParams, tail: &[f64]) -> String {
    let mut fields = Vec::with_capacity(N_PARAMS + tail.len());
    for (i, v) in x.to_array().iter().enumerate() {
        if i == 1 {
            fields.push(x.hole_count.to_string());
        } else {
            fields.push(format_float(*v));
        }
    }
    fields.extend(tail.iter().map(|&v| format_float(v)));
    fields.join(",")
}

fn parse_row(line: &str, line_no: usize) -> Result<LabeledRow, DomainError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != N_PARAMS + N_LABELS {
        return Err(DomainError::Parse {
            line: line_no,
            message: format!("expected {} fields, found {}", N_PARAMS + N_LABELS, fields.len()),
        });
    }
    let mut v = [0.0; N_PARAMS + N_LABELS];
    for (i, f) in fields.iter().enumerate() {
        v[i] = if i == 1 {
            f.trim()
                .parse::<u32>()
                .map(f64::from)
                .map_err(|e| DomainError::Parse {
                    line: line_no,
                    message: format!("N_H must be an integer: '{f}' ({e})"),
                })?
        } else {
            f.trim().parse::<f64>().map_err(|e| DomainError::Parse {
                line: line_no,
                message: format!("field {} '{f}': {e}", i + 1),
            })?
        };
    }
    let mut xs = [0.0; N_PARAMS];
    xs.copy_from_slice(&v[..N_PARAMS]);
    Ok(LabeledRow {
        x: DesignParams::from_continuous(xs),
        y: PerformanceLabels::new(v[6], v[7], v[8]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{latin_hypercube_sample, Oracle, ParamName};

    fn oracle_dataset(n: usize, seed: u64) -> LabeledDataset {
        let o = Oracle::deterministic();
        let rows = latin_hypercube_sample(n, seed)
            .unwrap()
            .into_iter()
            .map(|x| LabeledRow {
                y: o.evaluate(&x).unwrap(),
                x,
            })
            .collect();
        LabeledDataset::new(rows, Provenance::Oracle)
    }

    #[test]
    fn roundtrip_is_lossless() {
        let ds = oracle_dataset(1295, 3);
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let back = LabeledDataset::read_from(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn header_mismatch_is_a_parse_error() {
        let text = "R_A,N_H,D_M,R_D,R_L,L_P,U_M,G,dp_rel\n";
        let err = LabeledDataset::read_from(text.as_bytes()).unwrap_err();
        assert!(matches!(err, DomainError::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn out_of_range_row_names_the_parameter() {
        let text = format!("{DATASET_HEADER}\n0.9,4,30,0.4,8,500,0.05,0.04,0.1\n");
        let err = LabeledDataset::read_from(text.as_bytes()).unwrap_err();
        match &err {
            DomainError::Row { source, .. } => match source.as_ref() {
                DomainError::OutOfRange { param, .. } => assert_eq!(*param, ParamName::AreaRatio),
                other => panic!("{other:?}"),
            },
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("R_A"));
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = format!("{DATASET_HEADER}\n0.7,4,30,0.4,8,500,0.05,0.04,0.1\n0.7,4,abc,0.4,8,500,0.05,0.04,0.1\n");
        match LabeledDataset::read_from(text.as_bytes()).unwrap_err() {
            DomainError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn provenance_survives_roundtrip() {
        let mut ds = oracle_dataset(5, 1);
        ds.provenance = Provenance::SurrogateAugmented;
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap() == DATASET_HEADER);
        assert_eq!(
            LabeledDataset::read_from(&buf[..]).unwrap().provenance,
            Provenance::SurrogateAugmented
        );
    }

    #[test]
    fn float_format_has_17_significant_digits() {
        let s = format_float(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }
}
