//! Matched-sample data model, CSV ingestion and standardization.
//!
//! A [`MatchedSample`] holds `I` matched sets of `K + 1` units each. Units are
//! addressed by `(set, slot)`; storage is row-major with unit index
//! `set * (K + 1) + slot`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const COL_SET_ID: &str = "set_id";
pub const COL_TREATED: &str = "treated";
pub const COL_UNIT_ID: &str = "unit_id";
pub const COL_OUTCOME: &str = "outcome";

const RESERVED: [&str; 4] = [COL_SET_ID, COL_TREATED, COL_UNIT_ID, COL_OUTCOME];

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSample {
    num_sets: usize,
    controls_per_set: usize,
    covariate_names: Vec<String>,
    covariates: Vec<f64>,
    treatment: Vec<bool>,
    set_ids: Vec<String>,
    unit_ids: Option<Vec<String>>,
    outcomes: Option<Vec<f64>>,
}

/// Column-major building block for [`MatchedSample::new`]: one matched set.
#[derive(Debug, Clone)]
pub struct SetUnits {
    pub set_id: String,
    pub covariates: Vec<Vec<f64>>,
    pub treated: Vec<bool>,
    pub unit_ids: Option<Vec<String>>,
    pub outcomes: Option<Vec<f64>>,
}

impl MatchedSample {
    /// Assembles and validates a sample from per-set unit lists.
    pub fn new(covariate_names: Vec<String>, sets: Vec<SetUnits>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::invalid("no matched sets"));
        }
        let dim = covariate_names.len();
        if dim == 0 {
            return Err(Error::invalid("no covariate columns"));
        }
        let sizes: Vec<usize> = sets.iter().map(|s| s.covariates.len()).collect();
        let size = sizes[0];
        if sizes.iter().any(|&s| s != size) {
            let mut distinct = sizes.clone();
            distinct.sort_unstable();
            distinct.dedup();
            return Err(Error::InconsistentK { sizes: distinct });
        }
        if size < 2 {
            return Err(Error::SetSizeMismatch {
                set_id: sets[0].set_id.clone(),
                found: size,
                expected: 2,
            });
        }
        let has_unit_ids = sets.iter().all(|s| s.unit_ids.is_some());
        let has_outcomes = sets.iter().all(|s| s.outcomes.is_some());

        let mut covariates = Vec::with_capacity(sets.len() * size * dim);
        let mut treatment = Vec::with_capacity(sets.len() * size);
        let mut set_ids = Vec::with_capacity(sets.len());
        let mut unit_ids = has_unit_ids.then(Vec::new);
        let mut outcomes = has_outcomes.then(Vec::new);
        let mut row = 0usize;
        for set in sets {
            let count = set.treated.iter().filter(|&&z| z).count();
            if count != 1 {
                return Err(Error::TreatedCountViolation {
                    set_id: set.set_id,
                    count,
                });
            }
            if set.treated.len() != size {
                return Err(Error::invalid("treatment vector length differs from set size"));
            }
            for x in &set.covariates {
                row += 1;
                if x.len() != dim {
                    return Err(Error::invalid(format!(
                        "unit has {} covariates, expected {dim}",
                        x.len()
                    )));
                }
                if let Some(j) = x.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteCovariate {
                        row,
                        column: covariate_names[j].clone(),
                    });
                }
                covariates.extend_from_slice(x);
            }
            treatment.extend_from_slice(&set.treated);
            if let (Some(acc), Some(ids)) = (unit_ids.as_mut(), set.unit_ids) {
                acc.extend(ids);
            }
            if let (Some(acc), Some(ys)) = (outcomes.as_mut(), set.outcomes) {
                acc.extend(ys);
            }
            set_ids.push(set.set_id);
        }
        Ok(MatchedSample {
            num_sets: set_ids.len(),
            controls_per_set: size - 1,
            covariate_names,
            covariates,
            treatment,
            set_ids,
            unit_ids,
            outcomes,
        })
    }

    /// `I`
    pub fn num_sets(&self) -> usize {
        self.num_sets
    }

    /// `K`
    pub fn controls_per_set(&self) -> usize {
        self.controls_per_set
    }

    /// `K + 1`
    pub fn set_size(&self) -> usize {
        self.controls_per_set + 1
    }

    pub fn num_units(&self) -> usize {
        self.num_sets * self.set_size()
    }

    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn set_ids(&self) -> &[String] {
        &self.set_ids
    }

    pub fn unit_ids(&self) -> Option<&[String]> {
        self.unit_ids.as_deref()
    }

    #[inline]
    pub fn unit_index(&self, set: usize, slot: usize) -> usize {
        set * self.set_size() + slot
    }

    #[inline]
    pub fn unit(&self, set: usize, slot: usize) -> &[f64] {
        self.row(self.unit_index(set, slot))
    }

    #[inline]
    pub fn row(&self, unit: usize) -> &[f64] {
        let d = self.dim();
        &self.covariates[unit * d..(unit + 1) * d]
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn is_treated(&self, set: usize, slot: usize) -> bool {
        self.treatment[self.unit_index(set, slot)]
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    /// Slot of the treated unit in each set.
    pub fn treated_slot(&self, set: usize) -> usize {
        (0..self.set_size())
            .find(|&j| self.is_treated(set, j))
            .expect("validated: one treated unit per set")
    }

    pub fn outcomes(&self) -> Option<&[f64]> {
        self.outcomes.as_deref()
    }

    pub fn outcome(&self, set: usize, slot: usize) -> Option<f64> {
        self.outcomes.as_ref().map(|y| y[self.unit_index(set, slot)])
    }

    /// Same units and structure with a new covariate matrix.
    pub fn with_covariates(&self, names: Vec<String>, covariates: Vec<f64>) -> Result<Self> {
        if covariates.len() != self.num_units() * names.len() || names.is_empty() {
            return Err(Error::invalid("covariate matrix shape mismatch"));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite covariate"));
        }
        Ok(MatchedSample {
            covariate_names: names,
            covariates,
            ..self.clone()
        })
    }

    /// Same covariates with treatment labels replaced (one treated per set still required).
    pub fn with_treatment(&self, treatment: Vec<bool>) -> Result<Self> {
        if treatment.len() != self.num_units() {
            return Err(Error::invalid("treatment vector length mismatch"));
        }
        for i in 0..self.num_sets {
            let k1 = self.set_size();
            let count = treatment[i * k1..(i + 1) * k1].iter().filter(|&&z| z).count();
            if count != 1 {
                return Err(Error::TreatedCountViolation {
                    set_id: self.set_ids[i].clone(),
                    count,
                });
            }
        }
        Ok(MatchedSample {
            treatment,
            ..self.clone()
        })
    }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// How to pick covariate columns out of a CSV header.
#[derive(Debug, Clone, Default)]
pub struct CovariateSelection {
    /// Column names or `*`-glob patterns. Empty selects every non-reserved column.
    pub patterns: Vec<String>,
}

impl CovariateSelection {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn from_patterns<S: AsRef<str>>(patterns: &[S]) -> Self {
        CovariateSelection {
            patterns: patterns.iter().map(|p| p.as_ref().to_string()).collect(),
        }
    }

    pub(crate) fn resolve(&self, header: &[String], reserved: &[&str]) -> Result<Vec<usize>> {
        if self.patterns.is_empty() {
            return Ok((0..header.len())
                .filter(|&i| !reserved.contains(&header[i].as_str()))
                .collect());
        }
        let mut picked = Vec::new();
        for pattern in &self.patterns {
            let before = picked.len();
            for (i, name) in header.iter().enumerate() {
                if !reserved.contains(&name.as_str()) && glob_match(pattern, name) && !picked.contains(&i) {
                    picked.push(i);
                }
            }
            if picked.len() == before && !pattern.contains('*') {
                return Err(Error::MissingColumn(pattern.clone()));
            }
        }
        Ok(picked)
    }
}

/// Minimal `*` glob.
pub(crate) fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let mut rest = text;
    for (k, part) in parts.iter().enumerate() {
        if k == 0 {
            match rest.strip_prefix(part) {
                Some(r) => rest = r,
                None => return false,
            }
        } else if k == parts.len() - 1 {
            return rest.ends_with(part);
        } else {
            match rest.find(part) {
                Some(pos) => rest = &rest[pos + part.len()..],
                None => return false,
            }
        }
    }
    true
}

pub(crate) fn column_index(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

pub(crate) fn parse_f64(value: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = value.trim().parse().map_err(|_| Error::BadValue {
        row,
        column: column.to_string(),
        value: value.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFiniteCovariate {
            row,
            column: column.to_string(),
        });
    }
    Ok(v)
}

pub(crate) fn parse_treated(value: &str, row: usize) -> Result<bool> {
    match value.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(Error::BadValue {
            row,
            column: COL_TREATED.to_string(),
            value: other.to_string(),
        }),
    }
}

pub fn parse_matched_csv(path: impl AsRef<Path>, selection: &CovariateSelection) -> Result<MatchedSample> {
    let file = std::fs::File::open(path)?;
    read_matched_csv(file, selection)
}

/// Reads a matched-set CSV. Rows may appear in any order; sets are ordered by
/// first appearance and slots by row order within a set.
pub fn read_matched_csv<R: Read>(reader: R, selection: &CovariateSelection) -> Result<MatchedSample> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let set_col = column_index(&header, COL_SET_ID).ok_or_else(|| Error::MissingColumn(COL_SET_ID.into()))?;
    let treated_col =
        column_index(&header, COL_TREATED).ok_or_else(|| Error::MissingColumn(COL_TREATED.into()))?;
    let unit_col = column_index(&header, COL_UNIT_ID);
    let outcome_col = column_index(&header, COL_OUTCOME);
    let cov_cols = selection.resolve(&header, &RESERVED)?;
    if cov_cols.is_empty() {
        return Err(Error::invalid("no covariate columns selected"));
    }
    let names: Vec<String> = cov_cols.iter().map(|&i| header[i].clone()).collect();

    let mut order: Vec<String> = Vec::new();
    let mut by_set: HashMap<String, SetUnits> = HashMap::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let field = |i: usize| record.get(i).unwrap_or("");
        let set_id = field(set_col).to_string();
        let x = cov_cols
            .iter()
            .map(|&c| parse_f64(field(c), row, &header[c]))
            .collect::<Result<Vec<f64>>>()?;
        let z = parse_treated(field(treated_col), row)?;
        let y = outcome_col
            .map(|c| parse_f64(field(c), row, COL_OUTCOME))
            .transpose()?;
        let entry = by_set.entry(set_id.clone()).or_insert_with(|| {
            order.push(set_id.clone());
            SetUnits {
                set_id: set_id.clone(),
                covariates: Vec::new(),
                treated: Vec::new(),
                unit_ids: unit_col.map(|_| Vec::new()),
                outcomes: outcome_col.map(|_| Vec::new()),
            }
        });
        entry.covariates.push(x);
        entry.treated.push(z);
        if let (Some(ids), Some(c)) = (entry.unit_ids.as_mut(), unit_col) {
            ids.push(field(c).to_string());
        }
        if let (Some(ys), Some(y)) = (entry.outcomes.as_mut(), y) {
            ys.push(y);
        }
    }

    let sets: Vec<SetUnits> = order
        .iter()
        .map(|id| by_set.remove(id).expect("set recorded"))
        .collect();
    // Report treated-count violations before size problems: they are the more
    // specific diagnosis for a malformed set.
    for s in &sets {
        let count = s.treated.iter().filter(|&&z| z).count();
        if count != 1 {
            return Err(Error::TreatedCountViolation {
                set_id: s.set_id.clone(),
                count,
            });
        }
    }
    MatchedSample::new(names, sets)
}

/// Writes `set_id[,unit_id],treated,<covariates>[,outcome]`.
pub fn write_matched_csv<W: Write>(sample: &MatchedSample, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![COL_SET_ID.to_string()];
    if sample.unit_ids.is_some() {
        header.push(COL_UNIT_ID.into());
    }
    header.push(COL_TREATED.into());
    header.extend(sample.covariate_names.iter().cloned());
    if sample.outcomes.is_some() {
        header.push(COL_OUTCOME.into());
    }
    wtr.write_record(&header)?;
    for i in 0..sample.num_sets {
        for j in 0..sample.set_size() {
            let u = sample.unit_index(i, j);
            let mut rec = vec![sample.set_ids[i].clone()];
            if let Some(ids) = &sample.unit_ids {
                rec.push(ids[u].clone());
            }
            rec.push(if sample.treatment[u] { "1" } else { "0" }.into());
            rec.extend(sample.row(u).iter().map(|v| v.to_string()));
            if let Some(y) = &sample.outcomes {
                rec.push(y[u].to_string());
            }
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnScaling {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Standardization {
    pub columns: Vec<ColumnScaling>,
    /// Zero-variance columns removed before clustering.
    pub dropped: Vec<String>,
}

/// Column mean and population SD (divide by n) over all units.
pub(crate) fn column_moments(data: &[f64], n: usize, d: usize, col: usize) -> (f64, f64) {
    let mean = (0..n).map(|u| data[u * d + col]).sum::<f64>() / n as f64;
    let var = (0..n).map(|u| (data[u * d + col] - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Centers each covariate at 0 and scales it to unit population SD across all
/// units. Zero-variance columns are dropped and listed in the returned record.
pub fn standardize(sample: &MatchedSample) -> Result<(MatchedSample, Standardization)> {
    let n = sample.num_units();
    let d = sample.dim();
    let mut record = Standardization::default();
    let mut kept = Vec::new();
    for c in 0..d {
        let (mean, sd) = column_moments(&sample.covariates, n, d, c);
        let name = sample.covariate_names[c].clone();
        if sd <= 1e-12 * mean.abs().max(1.0) {
            record.dropped.push(name);
        } else {
            kept.push(c);
            record.columns.push(ColumnScaling { name, mean, sd });
        }
    }
    if kept.is_empty() {
        return Err(Error::invalid("every covariate column has zero variance"));
    }
    let k = kept.len();
    let mut data = vec![0.0; n * k];
    for u in 0..n {
        for (new_c, (&c, scale)) in kept.iter().zip(&record.columns).enumerate() {
            data[u * k + new_c] = (sample.covariates[u * d + c] - scale.mean) / scale.sd;
        }
    }
    let names = record.columns.iter().map(|c| c.name.clone()).collect();
    Ok((sample.with_covariates(names, data)?, record))
}
