//! Survival data containers and CSV serialization.

use std::path::Path;

use crate::error::{CoxError, Result};

/// One observation: follow-up time on [0,1], event indicator, covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    /// Event or censoring time in [0, 1].
    pub y: f64,
    /// 1 if `y` is an event time, 0 if censored.
    pub delta: u8,
    /// Covariate vector, shared dimension across the dataset.
    pub z: Vec<f64>,
}

impl Subject {
    pub fn new(y: f64, delta: u8, z: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&y) {
            return Err(CoxError::Domain(format!("subject time {y} outside [0,1]")));
        }
        if delta > 1 {
            return Err(CoxError::Domain(format!("delta {delta} not in {{0,1}}")));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(CoxError::Domain("non-finite covariate".into()));
        }
        Ok(Self { y, delta, z })
    }
}

/// A dataset of i.i.d. `(y, delta, z)` triples with common covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    subjects: Vec<Subject>,
    p: usize,
}

impl SurvivalDataset {
    pub fn new(subjects: Vec<Subject>, p: usize) -> Result<Self> {
        if let Some(s) = subjects.iter().find(|s| s.z.len() != p) {
            return Err(CoxError::Domain(format!(
                "covariate dimension mismatch: expected {p}, got {}",
                s.z.len()
            )));
        }
        Ok(Self { subjects, p })
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Number of events.
    pub fn event_count(&self) -> usize {
        self.subjects.iter().filter(|s| s.delta == 1).count()
    }

    /// Fraction of censored subjects.
    pub fn censored_fraction(&self) -> f64 {
        if self.subjects.is_empty() {
            return 0.0;
        }
        1.0 - self.event_count() as f64 / self.n() as f64
    }

    /// Inner products `theta' z_i` for all subjects.
    pub fn linear_predictor(&self, theta: &[f64]) -> Vec<f64> {
        self.subjects
            .iter()
            .map(|s| dot(theta, &s.z))
            .collect()
    }

    /// Write as CSV with header `y,delta,z1,...,zp`. Floats are written in
    /// shortest round-trip form, so read-back is bit-identical.
    pub fn to_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string(), "delta".to_string()];
        header.extend((1..=self.p).map(|j| format!("z{j}")));
        w.write_record(&header)?;
        for s in &self.subjects {
            let mut rec = vec![s.y.to_string(), s.delta.to_string()];
            rec.extend(s.z.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.to_csv(std::fs::File::create(path)?)
    }

    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "y" || &headers[1] != "delta" {
            return Err(CoxError::Parse(
                "expected CSV header starting with y,delta".into(),
            ));
        }
        let p = headers.len() - 2;
        let mut subjects = Vec::new();
        for record in r.records() {
            let record = record?;
            if record.len() != p + 2 {
                return Err(CoxError::Parse(format!(
                    "row has {} fields, expected {}",
                    record.len(),
                    p + 2
                )));
            }
            let y: f64 = parse_field(&record[0])?;
            let delta: u8 = record[1]
                .parse()
                .map_err(|_| CoxError::Parse(format!("bad delta field {:?}", &record[1])))?;
            let z = record
                .iter()
                .skip(2)
                .map(parse_field)
                .collect::<Result<Vec<f64>>>()?;
            subjects.push(Subject::new(y, delta, z)?);
        }
        Self::new(subjects, p)
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?)
    }
}

fn parse_field(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| CoxError::Parse(format!("bad numeric field {s:?}")))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SurvivalDataset {
        let subjects = vec![
            Subject::new(0.25, 1, vec![0.5, -1.0]).unwrap(),
            Subject::new(1.0, 0, vec![0.1234567890123456, 2.0]).unwrap(),
            Subject::new(0.7071067811865476, 1, vec![-0.3, 0.0]).unwrap(),
        ];
        SurvivalDataset::new(subjects, 2).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let data = toy();
        let mut buf = Vec::new();
        data.to_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y,delta,z1,z2\n"));
        let back = SurvivalDataset::from_csv(&buf[..]).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn rejects_bad_subjects() {
        assert!(Subject::new(1.5, 1, vec![0.0]).is_err());
        assert!(Subject::new(0.5, 2, vec![0.0]).is_err());
        assert!(Subject::new(0.5, 0, vec![f64::NAN]).is_err());
        let s = Subject::new(0.5, 0, vec![0.0]).unwrap();
        assert!(SurvivalDataset::new(vec![s], 2).is_err());
    }

    #[test]
    fn censored_fraction_counts() {
        let data = toy();
        assert_eq!(data.event_count(), 2);
        assert!((data.censored_fraction() - 1.0 / 3.0).abs() < 1e-15);
    }
}
