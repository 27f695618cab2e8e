//! Implied-volatility surfaces on a maturity x strike grid.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maturities (years) and strikes (spot normalized to one).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct SurfaceSpec {
    maturities: Vec<f64>,
    strikes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    maturities: Vec<f64>,
    strikes: Vec<f64>,
}

impl TryFrom<RawSpec> for SurfaceSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        Self::new(raw.maturities, raw.strikes)
    }
}

impl From<SurfaceSpec> for RawSpec {
    fn from(s: SurfaceSpec) -> Self {
        RawSpec {
            maturities: s.maturities,
            strikes: s.strikes,
        }
    }
}

fn strictly_increasing_positive(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(format!("{name} must not be empty")));
    }
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::invalid(format!("{name} must be positive and finite")));
    }
    if v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

impl SurfaceSpec {
    pub fn new(maturities: Vec<f64>, strikes: Vec<f64>) -> Result<Self> {
        strictly_increasing_positive("maturities", &maturities)?;
        strictly_increasing_positive("strikes", &strikes)?;
        Ok(Self { maturities, strikes })
    }

    /// Maturities 0.3 to 1.8 in steps of 0.3 plus 2.0; strikes 0.70 to 1.30
    /// in steps of 0.05.
    pub fn standard() -> Self {
        let maturities = vec![0.3, 0.6, 0.9, 1.2, 1.5, 1.8, 2.0];
        let strikes = (0..13).map(|i| (70.0 + 5.0 * i as f64) / 100.0).collect();
        Self::new(maturities, strikes).expect("standard grid is valid")
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn strikes(&self) -> &[f64] {
        &self.strikes
    }

    pub fn rows(&self) -> usize {
        self.maturities.len()
    }

    pub fn cols(&self) -> usize {
        self.strikes.len()
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(maturity, strike)` of cell `(i, j)`.
    pub fn cell(&self, i: usize, j: usize) -> (f64, f64) {
        (self.maturities[i], self.strikes[j])
    }
}

/// Quotes in row-major order: maturities are rows, strikes columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSurface", into = "RawSurface")]
pub struct VolSurface {
    spec: SurfaceSpec,
    quotes: Vec<f64>,
    weights: Vec<f64>,
    valid: Vec<bool>,
}

/// JSON form: invalid quotes are `null`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSurface {
    spec: SurfaceSpec,
    quotes: Vec<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<Vec<f64>>>,
}

impl TryFrom<RawSurface> for VolSurface {
    type Error = Error;

    fn try_from(raw: RawSurface) -> Result<Self> {
        let (rows, cols) = (raw.spec.rows(), raw.spec.cols());
        let shape_ok = |m: usize, lens: Vec<usize>| m == rows && lens.iter().all(|&l| l == cols);
        if !shape_ok(raw.quotes.len(), raw.quotes.iter().map(Vec::len).collect()) {
            return Err(Error::invalid("quote matrix shape does not match the spec"));
        }
        let valid: Vec<bool> = raw.quotes.iter().flatten().map(Option::is_some).collect();
        let quotes = raw.quotes.iter().flatten().map(|q| q.unwrap_or(f64::NAN)).collect();
        let weights = match raw.weights {
            Some(w) => {
                if !shape_ok(w.len(), w.iter().map(Vec::len).collect()) {
                    return Err(Error::invalid("weight matrix shape does not match the spec"));
                }
                w.into_iter().flatten().collect()
            }
            None => vec![1.0; rows * cols],
        };
        VolSurface::new(raw.spec, quotes, weights, valid)
    }
}

impl From<VolSurface> for RawSurface {
    fn from(s: VolSurface) -> Self {
        let cols = s.spec.cols();
        let quotes = s
            .quotes
            .chunks(cols)
            .zip(s.valid.chunks(cols))
            .map(|(q, v)| q.iter().zip(v).map(|(&q, &ok)| ok.then_some(q)).collect())
            .collect();
        let weights = s
            .weights
            .iter()
            .any(|&w| w != 1.0)
            .then(|| s.weights.chunks(cols).map(<[f64]>::to_vec).collect());
        RawSurface {
            spec: s.spec,
            quotes,
            weights,
        }
    }
}

impl VolSurface {
    pub fn new(spec: SurfaceSpec, quotes: Vec<f64>, weights: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = spec.len();
        if quotes.len() != n || weights.len() != n || valid.len() != n {
            return Err(Error::invalid(format!(
                "surface needs {n} quotes, weights and flags; got {}, {}, {}",
                quotes.len(),
                weights.len(),
                valid.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        for (k, (&q, &ok)) in quotes.iter().zip(&valid).enumerate() {
            if ok && !(q.is_finite() && q > 0.0) {
                return Err(Error::invalid(format!(
                    "valid quote {q} at cell ({}, {}) must be positive",
                    k / spec.cols(),
                    k % spec.cols()
                )));
            }
        }
        let quotes = quotes
            .into_iter()
            .zip(&valid)
            .map(|(q, &ok)| if ok { q } else { f64::NAN })
            .collect();
        Ok(Self { spec, quotes, weights, valid })
    }

    /// Every cell valid, unit weights.
    pub fn from_quotes(spec: SurfaceSpec, quotes: Vec<f64>) -> Result<Self> {
        let n = spec.len();
        Self::new(spec, quotes, vec![1.0; n], vec![true; n])
    }

    /// Cells with `None` are invalid.
    pub fn from_optional(spec: SurfaceSpec, quotes: &[Option<f64>]) -> Result<Self> {
        let n = spec.len();
        let valid: Vec<bool> = quotes.iter().map(Option::is_some).collect();
        let q = quotes.iter().map(|q| q.unwrap_or(f64::NAN)).collect();
        Self::new(spec, q, vec![1.0; n], valid)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        let s = Self::new(self.spec.clone(), self.quotes.clone(), weights, self.valid.clone())?;
        self.weights = s.weights;
        Ok(self)
    }

    pub fn spec(&self) -> &SurfaceSpec {
        &self.spec
    }

    /// Row-major quotes; invalid cells hold NaN.
    pub fn quotes(&self) -> &[f64] {
        &self.quotes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn quote(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.spec.cols() + j;
        self.valid[k].then_some(self.quotes[k])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Write as CSV: header `maturity,<strikes...>`, one row per maturity,
    /// invalid cells empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["maturity".to_string()];
        header.extend(self.spec.strikes.iter().map(|k| k.to_string()));
        w.write_record(&header)?;
        for (i, t) in self.spec.maturities.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend((0..self.spec.cols()).map(|j| self.quote(i, j).map_or(String::new(), |q| q.to_string())));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::Format(format!("not a number: {s:?}")))
        };
        let strikes = r
            .headers()?
            .iter()
            .skip(1)
            .map(parse)
            .collect::<Result<Vec<_>>>()?;
        let mut maturities = Vec::new();
        let mut quotes = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut it = rec.iter();
            maturities.push(parse(it.next().unwrap_or(""))?);
            for cell in it {
                quotes.push(if cell.trim().is_empty() { None } else { Some(parse(cell)?) });
            }
        }
        let spec = SurfaceSpec::new(maturities, strikes)?;
        if quotes.len() != spec.len() {
            return Err(Error::Format("ragged surface CSV".into()));
        }
        Self::from_optional(spec, &quotes)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Anything that maps a flattened parameter vector to a vol surface.
pub trait VolModel: Sync {
    fn vol_surface(&self, theta: &[f64], spec: &SurfaceSpec) -> Result<VolSurface>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid() {
        let s = SurfaceSpec::standard();
        assert_eq!(s.rows(), 7);
        assert_eq!(s.cols(), 13);
        assert_eq!(s.strikes()[0], 0.7);
        assert_eq!(s.strikes()[12], 1.3);
        assert_eq!(s.strikes()[6], 1.0);
    }

    #[test]
    fn spec_validation() {
        assert!(SurfaceSpec::new(vec![0.5, 0.3], vec![1.0]).is_err());
        assert!(SurfaceSpec::new(vec![0.0], vec![1.0]).is_err());
        assert!(SurfaceSpec::new(vec![1.0], vec![]).is_err());
        assert!(serde_json::from_str::<SurfaceSpec>(r#"{"maturities":[1.0],"strikes":[-1.0]}"#).is_err());
    }

    #[test]
    fn json_and_csv_round_trip() {
        let spec = SurfaceSpec::new(vec![0.5, 1.0], vec![0.9, 1.0, 1.1]).unwrap();
        let s = VolSurface::from_optional(spec, &[Some(0.2), None, Some(0.25), Some(0.3), Some(0.31), Some(0.32)]).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("null"));
        let back: VolSurface = serde_json::from_str(&json).unwrap();
        assert_eq!(back.quotes()[0], 0.2);
        assert!(!back.valid()[1]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("maturity,0.9,1,1.1\n0.5,0.2,,0.25\n"));
        let back = VolSurface::read_csv(&buf[..]).unwrap();
        assert_eq!(back.valid(), s.valid());
        assert_eq!(back.quote(1, 2), Some(0.32));
    }

    #[test]
    fn rejects_bad_quotes() {
        let spec = SurfaceSpec::new(vec![1.0], vec![1.0]).unwrap();
        assert!(VolSurface::from_quotes(spec.clone(), vec![-0.1]).is_err());
        assert!(VolSurface::from_quotes(spec.clone(), vec![0.1, 0.2]).is_err());
        assert!(VolSurface::new(spec, vec![0.1], vec![-1.0], vec![true]).is_err());
    }
}
