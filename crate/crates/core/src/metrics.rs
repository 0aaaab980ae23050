//! Continual-learning metrics over the lower-triangular evaluation matrix.
//!
//! `sr[i][j]` is the performance on segment `j`'s task measured right after
//! training segment `i` (`j <= i`, both 1-based in files, 0-based here).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lower-triangular matrix of post-segment evaluations.
///
/// Every entry may be written exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct SrMatrix {
    k: usize,
    rows: Vec<Vec<Option<f64>>>,
}

impl SrMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            rows: (0..k).map(|i| vec![None; i + 1]).collect(),
        }
    }

    /// Builds a complete matrix from rows of lengths `1, 2, ..., k`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::shape("sr matrix row", i + 1, row.len()));
            }
            for (j, v) in row.into_iter().enumerate() {
                m.set(i, j, v)?;
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if i >= self.k || j > i {
            return Err(Error::InvalidInput(format!("sr index ({i}, {j}) outside the lower triangle of size {}", self.k)));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("sr entry"));
        }
        let slot = &mut self.rows[i][j];
        if slot.is_some() {
            return Err(Error::Invariant(format!("sr[{i}][{j}] written twice")));
        }
        *slot = Some(value);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.get(i).and_then(|r| r.get(j)).copied().flatten()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().flatten().all(Option::is_some)
    }

    /// Number of rows whose entries are all present, counted from the top.
    pub fn complete_rows(&self) -> usize {
        self.rows
            .iter()
            .take_while(|r| r.iter().all(Option::is_some))
            .count()
    }

    pub fn diagonal(&self) -> Result<Vec<f64>> {
        (0..self.k)
            .map(|i| self.get(i, i).ok_or_else(|| missing(i, i)))
            .collect()
    }

    fn dense(&self) -> Result<Vec<Vec<f64>>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .map(|(j, v)| v.ok_or_else(|| missing(i, j)))
                    .collect()
            })
            .collect()
    }

    /// Entries as `(i, j, value)` with 1-based indices, row-major.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                if let Some(v) = v {
                    out.push((i + 1, j + 1, *v));
                }
            }
        }
        out
    }

    /// `i,j,value` CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,value\n");
        for (i, j, v) in self.entries() {
            s.push_str(&format!("{i},{j},{v}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "i,j,value" => {}
            other => return Err(Error::format("sr_matrix.csv", format!("bad header {other:?}"))),
        }
        let mut cells = Vec::new();
        for (n, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::format("sr_matrix.csv", format!("line {}: {line:?}", n + 2));
            if parts.len() != 3 {
                return Err(bad());
            }
            let i: usize = parts[0].parse().map_err(|_| bad())?;
            let j: usize = parts[1].parse().map_err(|_| bad())?;
            let v: f64 = parts[2].parse().map_err(|_| bad())?;
            if i == 0 || j == 0 {
                return Err(bad());
            }
            cells.push((i - 1, j - 1, v));
        }
        let k = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
        let mut m = Self::new(k);
        for (i, j, v) in cells {
            m.set(i, j, v)
                .map_err(|e| Error::format("sr_matrix.csv", e.to_string()))?;
        }
        if !m.is_complete() {
            return Err(Error::format("sr_matrix.csv", "lower triangle is incomplete"));
        }
        Ok(m)
    }
}

fn missing(i: usize, j: usize) -> Error {
    Error::InvalidInput(format!("sr[{}][{}] is missing", i + 1, j + 1))
}

/// Mean over rows of the row mean.
pub fn asr(sr: &SrMatrix) -> Result<f64> {
    let rows = sr.dense()?;
    if rows.is_empty() {
        return Err(Error::InvalidInput("empty sr matrix".into()));
    }
    let total: f64 = rows
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .sum();
    Ok(total / rows.len() as f64)
}

/// Which earlier segments enter the forgetting sum of row `i`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgettingScope {
    /// `j < i`, matching the `1/(i-1)` normaliser.
    #[default]
    Previous,
    /// `j <= i`, still divided by `i - 1`.
    Inclusive,
}

/// Forgetting measure: average drop from the best earlier evaluation.
///
/// Negative contributions (backward transfer) are kept.
pub fn fm(sr: &SrMatrix) -> Result<f64> {
    fm_with(sr, ForgettingScope::Previous)
}

pub fn fm_with(sr: &SrMatrix, scope: ForgettingScope) -> Result<f64> {
    let rows = sr.dense()?;
    let k = rows.len();
    if k < 2 {
        return Err(Error::InvalidInput("forgetting needs at least two segments".into()));
    }
    let mut total = 0.0;
    for i in 1..k {
        let upper = match scope {
            ForgettingScope::Previous => i,
            ForgettingScope::Inclusive => i + 1,
        };
        let mut row = 0.0;
        for j in 0..upper {
            // Peak over l in {j..i-1}; rows above j have no entry for j. For
            // j == i (inclusive scope) there is no earlier row, so the term is 0.
            let peak = (j..i).map(|l| rows[l][j]).fold(f64::NEG_INFINITY, f64::max);
            if peak.is_finite() {
                row += peak - rows[i][j];
            }
        }
        total += row / i as f64;
    }
    Ok(total / (k - 1) as f64)
}

/// Mean of the diagonal.
pub fn fwt(sr: &SrMatrix) -> Result<f64> {
    let d = sr.diagonal()?;
    if d.is_empty() {
        return Err(Error::InvalidInput("empty sr matrix".into()));
    }
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Average normalised return; the same aggregation as [`asr`].
pub fn ar(normalized: &SrMatrix) -> Result<f64> {
    asr(normalized)
}

/// Random and reference (human-analog) return anchors of one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnNorm {
    pub r_random: f64,
    pub r_reference: f64,
}

impl ReturnNorm {
    pub fn new(r_random: f64, r_reference: f64) -> Result<Self> {
        let n = Self { r_random, r_reference };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.r_random.is_finite() || !self.r_reference.is_finite() {
            return Err(Error::NonFinite("return anchors"));
        }
        if self.r_random == self.r_reference {
            return Err(Error::InvalidInput("reference and random returns coincide".into()));
        }
        Ok(())
    }
}

/// `(r_agent - r_random) / (r_reference - r_random)`; unbounded on both sides.
pub fn normalized_return(r_agent: f64, norm: &ReturnNorm) -> Result<f64> {
    norm.validate()?;
    Ok((r_agent - norm.r_random) / (norm.r_reference - norm.r_random))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub asr: f64,
    pub fm: Option<f64>,
    pub fwt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ar: Option<f64>,
    pub per_segment_diagonal: Vec<f64>,
    pub seed: u64,
}

impl MetricSummary {
    /// `ar` is filled in when the matrix holds normalised returns.
    pub fn compute(sr: &SrMatrix, seed: u64, normalized_returns: bool) -> Result<Self> {
        let asr_v = asr(sr)?;
        Ok(Self {
            asr: asr_v,
            fm: if sr.k() >= 2 { Some(fm(sr)?) } else { None },
            fwt: fwt(sr)?,
            ar: normalized_returns.then_some(asr_v),
            per_segment_diagonal: sr.diagonal()?,
            seed,
        })
    }
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
