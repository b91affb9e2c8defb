//! Discretely observed allele-frequency paths and their CSV form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observations `(t_i, x_i)` with `t_0 = 0`, one frequency per locus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub times: Vec<f64>,
    /// `values[i][k]`: frequency at locus `k` at time `times[i]`.
    pub values: Vec<Vec<f64>>,
}

impl ObservationSeries {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let s = ObservationSeries { times, values };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::arg("times and values differ in length"));
        }
        if self.times.len() < 2 {
            return Err(Error::arg("a series needs at least one increment"));
        }
        if self.times[0] != 0.0 {
            return Err(Error::arg(format!("first observation time must be 0, got {}", self.times[0])));
        }
        let loci = self.values[0].len();
        if loci == 0 {
            return Err(Error::arg("observations have no loci"));
        }
        for (i, row) in self.values.iter().enumerate() {
            if row.len() != loci {
                return Err(Error::arg(format!("row {i} has {} loci, expected {loci}", row.len())));
            }
            for &v in row {
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::BoundaryState { value: v });
                }
            }
            if i > 0 && !(self.times[i] > self.times[i - 1]) {
                return Err(Error::arg(format!("times must increase strictly (row {i})")));
            }
        }
        Ok(())
    }

    pub fn loci(&self) -> usize {
        self.values[0].len()
    }

    pub fn increments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn gap(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    /// Single-locus series for column `k`.
    pub fn column(&self, k: usize) -> ObservationSeries {
        ObservationSeries {
            times: self.times.clone(),
            values: self.values.iter().map(|r| vec![r[k]]).collect(),
        }
    }

    /// CSV text with header `time,x1,...,xL`. Values use the shortest
    /// representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for k in 0..self.loci() {
            write!(out, ",x{}", k + 1).unwrap();
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.values) {
            write!(out, "{t}").unwrap();
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parse the CSV form. Blank lines and lines starting with `#` are
    /// skipped. Errors name the offending line (1-based).
    pub fn from_csv(text: &str) -> std::result::Result<Self, CsvError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        });
        let (hidx, header) = lines.next().ok_or(CsvError { line: 1, msg: "empty file".into() })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols[0] != "time" {
            return Err(CsvError {
                line: hidx + 1,
                msg: "header must be time,x1[,x2,...]".into(),
            });
        }
        let loci = cols.len() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != loci + 1 {
                return Err(CsvError {
                    line: lineno,
                    msg: format!("expected {} fields, found {}", loci + 1, fields.len()),
                });
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| CsvError {
                    line: lineno,
                    msg: format!("not a number: {s:?}"),
                })
            };
            let t = parse(fields[0])?;
            if let Some(&prev) = times.last() {
                if !(t > prev) {
                    return Err(CsvError {
                        line: lineno,
                        msg: format!("time {t} does not increase"),
                    });
                }
            } else if t != 0.0 {
                return Err(CsvError {
                    line: lineno,
                    msg: format!("first time must be 0, got {t}"),
                });
            }
            let mut row = Vec::with_capacity(loci);
            for f in &fields[1..] {
                let v = parse(f)?;
                if !(v > 0.0 && v < 1.0) {
                    return Err(CsvError {
                        line: lineno,
                        msg: format!("frequency {v} is not strictly inside (0, 1)"),
                    });
                }
                row.push(v);
            }
            times.push(t);
            values.push(row);
        }
        if times.len() < 2 {
            return Err(CsvError {
                line: text.lines().count().max(1),
                msg: "need at least two observations".into(),
            });
        }
        Ok(ObservationSeries { times, values })
    }
}

/// Dataset parse failure at a given line.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct CsvError {
    pub line: usize,
    pub msg: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let s = ObservationSeries::new(
            vec![0.0, 1.0, 2.0],
            vec![vec![0.1, 0.2], vec![0.30000000000000004, 0.5], vec![1e-9, 0.999]],
        )
        .unwrap();
        let text = s.to_csv();
        assert!(text.starts_with("time,x1,x2\n0,0.1,0.2\n"));
        assert_eq!(ObservationSeries::from_csv(&text).unwrap(), s);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let e = ObservationSeries::from_csv("time,x1\n0,0.2\n1,1.0\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = ObservationSeries::from_csv("time,x1\n0,0.2\n1,abc\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = ObservationSeries::from_csv("t,x\n").unwrap_err();
        assert_eq!(e.line, 1);
        let e = ObservationSeries::from_csv("time,x1\n0,0.2\n0,0.3\n").unwrap_err();
        assert_eq!(e.line, 3);
    }

    #[test]
    fn comment_lines_are_skipped() {
        let s = ObservationSeries::from_csv("# generated\ntime,x1\n# note\n0,0.2\n1,0.3\n").unwrap();
        assert_eq!(s.values, vec![vec![0.2], vec![0.3]]);
        let e = ObservationSeries::from_csv("# a\n# b\nt,x\n").unwrap_err();
        assert_eq!(e.line, 3);
    }

    proptest::proptest! {
        #[test]
        fn csv_round_trip_any_series(
            gaps in proptest::collection::vec(1e-3f64..10.0, 1..20),
            loci in 1usize..4,
            seed in proptest::prelude::any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut times = vec![0.0];
            for g in &gaps {
                times.push(times.last().unwrap() + g);
            }
            let values: Vec<Vec<f64>> = times
                .iter()
                .map(|_| (0..loci).map(|_| rng.random_range(1e-12..1.0 - 1e-12)).collect())
                .collect();
            let s = ObservationSeries::new(times, values).unwrap();
            proptest::prop_assert_eq!(ObservationSeries::from_csv(&s.to_csv()).unwrap(), s);
        }
    }
}
