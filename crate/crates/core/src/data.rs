//! Longitudinal observations `(subject, t, y)`.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub subject: i64,
    pub t: f64,
    pub y: f64,
}

/// Discretely sampled curves. Subjects are indexed densely in order of
/// first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct LongData {
    records: Vec<Record>,
    subject_of: Vec<usize>,
    sizes: Vec<usize>,
}

impl LongData {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut index: HashMap<i64, usize> = HashMap::new();
        let mut sizes = Vec::new();
        let mut subject_of = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !(0.0..=1.0).contains(&r.t) {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    message: format!("time {} outside [0, 1]", r.t),
                });
            }
            if !r.y.is_finite() {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    message: format!("non-finite response {}", r.y),
                });
            }
            let next = sizes.len();
            let s = *index.entry(r.subject).or_insert(next);
            if s == sizes.len() {
                sizes.push(0);
            }
            sizes[s] += 1;
            subject_of.push(s);
        }
        Ok(Self {
            records,
            subject_of,
            sizes,
        })
    }

    pub fn from_columns(subjects: &[i64], ts: &[f64], ys: &[f64]) -> Result<Self> {
        if subjects.len() != ts.len() || ts.len() != ys.len() {
            return Err(Error::LengthMismatch {
                left: subjects.len(),
                right: ts.len().max(ys.len()),
            });
        }
        Self::new(
            subjects
                .iter()
                .zip(ts)
                .zip(ys)
                .map(|((&subject, &t), &y)| Record { subject, t, y })
                .collect(),
        )
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Total number of observations `N`.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of subjects `n`.
    pub fn n_subjects(&self) -> usize {
        self.sizes.len()
    }

    /// Observation counts `m_i`.
    pub fn subject_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `n / sum(1 / m_i)`.
    pub fn harmonic_mean_m(&self) -> f64 {
        let inv: f64 = self.sizes.iter().map(|&m| 1.0 / m as f64).sum();
        self.sizes.len() as f64 / inv
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }

    /// Per-observation weights `1 / (n m_i)`; they sum to one.
    pub fn obs_weights(&self) -> Vec<f64> {
        let n = self.n_subjects() as f64;
        self.subject_of
            .iter()
            .map(|&s| 1.0 / (n * self.sizes[s] as f64))
            .collect()
    }

    /// Reads CSV with header `id,t,y`. Line numbers in errors are 1-based
    /// file lines.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(csv_error)?.clone();
        let expected = ["id", "t", "y"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `id,t,y`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(csv_error)?;
            let line = row.position().map_or(0, |p| p.line());
            let field = |i: usize| row.get(i).unwrap_or("");
            let subject: i64 = field(0).parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid subject id `{}`", field(0)),
            })?;
            let t: f64 = field(1).parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid time `{}`", field(1)),
            })?;
            let y: f64 = field(2).parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid response `{}`", field(2)),
            })?;
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Parse {
                    line,
                    message: format!("time {t} outside [0, 1]"),
                });
            }
            if !y.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite response {y}"),
                });
            }
            records.push(Record { subject, t, y });
        }
        Self::new(records)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "t", "y"]).map_err(csv_error)?;
        for r in &self.records {
            w.write_record([
                r.subject.to_string(),
                format!("{:.16e}", r.t),
                format!("{:.16e}", r.y),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_counts() {
        let d = LongData::from_columns(&[7, 7, 3, 7], &[0.1, 0.2, 0.3, 0.4], &[1.0, 2.0, 3.0, 4.0])
            .unwrap();
        assert_eq!(d.n_subjects(), 2);
        assert_eq!(d.subject_sizes(), &[3, 1]);
        assert_eq!(d.len(), 4);
        assert!((d.harmonic_mean_m() - 2.0 / (1.0 / 3.0 + 1.0)).abs() < 1e-15);
        let w = d.obs_weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn csv_roundtrip_and_line_numbers() {
        let text = "id,t,y\n1,0.5,2.0\n1,0.25,-1\n2,1.0,3\n";
        let d = LongData::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = LongData::from_csv_reader(buf.as_slice()).unwrap();
        assert_eq!(back, d);

        let bad = "id,t,y\n1,0.5,2.0\n1,1.5,2.0\n";
        match LongData::from_csv_reader(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_empty_and_bad_header() {
        assert_eq!(
            LongData::from_csv_reader("id,t,y\n".as_bytes()),
            Err(Error::EmptyData)
        );
        assert!(LongData::from_csv_reader("".as_bytes()).is_err());
        assert!(matches!(
            LongData::from_csv_reader("a,b,c\n1,0.5,1\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
