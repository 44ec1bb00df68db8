//! Pair matching of an unmatched cohort and covariate balance diagnostics.

use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    column_index, parse_f64, parse_treated, CovariateSelection, MatchedSample, SetUnits, COL_OUTCOME, COL_SET_ID,
    COL_TREATED, COL_UNIT_ID,
};
use crate::numerics::{cholesky_solve, inv_sqrt, SymMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    covariate_names: Vec<String>,
    covariates: Vec<f64>,
    treatment: Vec<bool>,
    unit_ids: Option<Vec<String>>,
    outcomes: Option<Vec<f64>>,
}

impl Cohort {
    pub fn new(
        covariate_names: Vec<String>,
        covariates: Vec<f64>,
        treatment: Vec<bool>,
        unit_ids: Option<Vec<String>>,
        outcomes: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = treatment.len();
        let d = covariate_names.len();
        if d == 0 {
            return Err(Error::invalid("no covariate columns"));
        }
        if covariates.len() != n * d {
            return Err(Error::invalid(format!(
                "expected {} covariate values for {n} units and {d} columns, got {}",
                n * d,
                covariates.len()
            )));
        }
        if let Some(pos) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCovariate {
                row: pos / d + 1,
                column: covariate_names[pos % d].clone(),
            });
        }
        let treated = treatment.iter().filter(|&&z| z).count();
        if treated == 0 || treated == n {
            return Err(Error::invalid("cohort needs at least one treated and one control unit"));
        }
        if unit_ids.as_ref().is_some_and(|ids| ids.len() != n) || outcomes.as_ref().is_some_and(|y| y.len() != n) {
            return Err(Error::invalid("unit ids and outcomes must have one entry per unit"));
        }
        Ok(Cohort {
            covariate_names,
            covariates,
            treatment,
            unit_ids,
            outcomes,
        })
    }

    pub fn num_units(&self) -> usize {
        self.treatment.len()
    }

    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn row(&self, u: usize) -> &[f64] {
        let d = self.dim();
        &self.covariates[u * d..(u + 1) * d]
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn outcomes(&self) -> Option<&[f64]> {
        self.outcomes.as_deref()
    }

    pub fn unit_ids(&self) -> Option<&[String]> {
        self.unit_ids.as_deref()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.num_units()).filter(|&u| self.treatment[u]).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.num_units()).filter(|&u| !self.treatment[u]).collect()
    }

    fn column(&self, c: usize) -> Vec<f64> {
        let d = self.dim();
        (0..self.num_units()).map(|u| self.covariates[u * d + c]).collect()
    }
}

pub fn parse_cohort_csv(path: impl AsRef<Path>, selection: &CovariateSelection) -> Result<Cohort> {
    let file = std::fs::File::open(path)?;
    read_cohort_csv(file, selection)
}

/// Reads `treated[,unit_id][,outcome],<covariates>` (column order free).
pub fn read_cohort_csv<R: Read>(reader: R, selection: &CovariateSelection) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let treated_col =
        column_index(&header, COL_TREATED).ok_or_else(|| Error::MissingColumn(COL_TREATED.into()))?;
    let unit_col = column_index(&header, COL_UNIT_ID);
    let outcome_col = column_index(&header, COL_OUTCOME);
    let cov_cols = selection.resolve(&header, &[COL_SET_ID, COL_TREATED, COL_UNIT_ID, COL_OUTCOME])?;
    if cov_cols.is_empty() {
        return Err(Error::invalid("no covariate columns selected"));
    }
    let names = cov_cols.iter().map(|&i| header[i].clone()).collect();
    let mut covariates = Vec::new();
    let mut treatment = Vec::new();
    let mut ids = unit_col.map(|_| Vec::new());
    let mut outcomes = outcome_col.map(|_| Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let field = |i: usize| record.get(i).unwrap_or("");
        for &c in &cov_cols {
            covariates.push(parse_f64(field(c), row, &header[c])?);
        }
        treatment.push(parse_treated(field(treated_col), row)?);
        if let (Some(v), Some(c)) = (ids.as_mut(), unit_col) {
            v.push(field(c).to_string());
        }
        if let (Some(v), Some(c)) = (outcomes.as_mut(), outcome_col) {
            v.push(parse_f64(field(c), row, COL_OUTCOME)?);
        }
    }
    Cohort::new(names, covariates, treatment, ids, outcomes)
}

// ---------------------------------------------------------------------------
// Propensity score
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensityFit {
    /// Intercept first, then one slope per covariate.
    pub coefficients: Vec<f64>,
    #[serde(skip)]
    pub fitted: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub ridge: f64,
    /// Separation (or a singular information matrix) forced a ridge penalty.
    pub ridge_fallback: bool,
}

const SEPARATION_RIDGE: f64 = 1e-4;
const SEPARATION_COEF: f64 = 30.0;

/// Main-effects logistic regression by iteratively reweighted least squares.
/// The intercept is never penalized.
pub fn fit_propensity(cohort: &Cohort, max_irls_iters: usize, ridge: f64) -> Result<PropensityFit> {
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be nonnegative"));
    }
    let n = cohort.num_units();
    let d = cohort.dim();
    if n <= d + 1 {
        return Err(Error::invalid(format!("need more than {} units to fit {d} covariates", d + 1)));
    }
    let first = irls(cohort, max_irls_iters, ridge);
    match first {
        Some(fit) if !separated(&fit) || ridge >= SEPARATION_RIDGE => Ok(fit),
        None if ridge >= SEPARATION_RIDGE => Err(Error::Numeric("logistic regression failed".into())),
        _ => {
            let mut fit = irls(cohort, max_irls_iters, SEPARATION_RIDGE)
                .ok_or_else(|| Error::Numeric("logistic regression failed even with ridge penalty".into()))?;
            fit.ridge_fallback = true;
            Ok(fit)
        }
    }
}

fn separated(fit: &PropensityFit) -> bool {
    fit.coefficients.iter().any(|b| b.abs() > SEPARATION_COEF)
        || fit.fitted.iter().all(|&p| p < 1e-8 || p > 1.0 - 1e-8)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn penalized_loglik(cohort: &Cohort, beta: &[f64], ridge: f64) -> f64 {
    let d = cohort.dim();
    let mut ll = 0.0;
    for u in 0..cohort.num_units() {
        let eta = beta[0] + cohort.row(u).iter().zip(&beta[1..]).map(|(x, b)| x * b).sum::<f64>();
        // log σ(η) = −log(1 + e^{−η}); log(1 − σ(η)) = −log(1 + e^{η})
        let z = if cohort.treatment[u] { eta } else { -eta };
        ll -= if z > 0.0 { (-z).exp().ln_1p() } else { -z + z.exp().ln_1p() };
    }
    ll - 0.5 * ridge * beta[1..=d].iter().map(|b| b * b).sum::<f64>()
}

fn irls(cohort: &Cohort, max_iters: usize, ridge: f64) -> Option<PropensityFit> {
    let n = cohort.num_units();
    let d = cohort.dim();
    let p = d + 1;
    let mut beta = vec![0.0; p];
    let mut ll = penalized_loglik(cohort, &beta, ridge);
    let mut converged = false;
    let mut iterations = 0;
    let mut x = vec![0.0; p];
    for it in 0..max_iters {
        iterations = it + 1;
        let mut info = vec![0.0; p * p];
        let mut score = vec![0.0; p];
        for u in 0..n {
            x[0] = 1.0;
            x[1..].copy_from_slice(cohort.row(u));
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = sigmoid(eta);
            let w = mu * (1.0 - mu);
            let r = if cohort.treatment[u] { 1.0 } else { 0.0 } - mu;
            for a in 0..p {
                score[a] += x[a] * r;
                for b in a..p {
                    info[a * p + b] += w * x[a] * x[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[a * p + b] = info[b * p + a];
            }
        }
        for a in 1..p {
            info[a * p + a] += ridge;
            score[a] -= ridge * beta[a];
        }
        let step = cholesky_solve(&info, p, &score)?;
        let mut t = 1.0;
        let mut next;
        loop {
            next = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect::<Vec<_>>();
            let ll_next = penalized_loglik(cohort, &next, ridge);
            if ll_next >= ll - 1e-12 * ll.abs() || t < 1e-10 {
                ll = ll_next;
                break;
            }
            t *= 0.5;
        }
        let change = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = next;
        if !beta.iter().all(|b| b.is_finite()) {
            return None;
        }
        if change <= 1e-8 {
            converged = true;
            break;
        }
        if beta.iter().any(|b| b.abs() > 1e3) {
            break;
        }
    }
    let fitted = (0..n)
        .map(|u| sigmoid(beta[0] + cohort.row(u).iter().zip(&beta[1..]).map(|(x, b)| x * b).sum::<f64>()))
        .collect();
    Some(PropensityFit {
        coefficients: beta,
        fitted,
        iterations,
        converged,
        ridge,
        ridge_fallback: false,
    })
}

// ---------------------------------------------------------------------------
// Assignment
// ---------------------------------------------------------------------------

/// Minimum-cost rectangular assignment: each of the `rows` is assigned a
/// distinct column, `rows ≤ cols`. Shortest augmenting paths with dual
/// potentials. Returns the column of every row.
pub fn solve_assignment(cost: &[f64], rows: usize, cols: usize) -> Result<Vec<usize>> {
    if rows > cols {
        return Err(Error::invalid(format!("cannot assign {rows} rows to {cols} columns")));
    }
    if cost.len() != rows * cols {
        return Err(Error::invalid("cost matrix has the wrong size"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("cost matrix has non-finite entries"));
    }
    let inf = f64::INFINITY;
    // 1-based rows and columns; index 0 is the virtual source.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    let mut minv = vec![inf; cols + 1];
    let mut used = vec![false; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0;
        minv.fill(inf);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = &cost[(i0 - 1) * cols..i0 * cols];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![usize::MAX; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Within-column average ranks (1-based), ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &k in &order[start..=end] {
            ranks[k] = rank;
        }
        start = end + 1;
    }
    ranks
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Covariates mapped so Euclidean distance equals Mahalanobis distance under
/// the pooled sample covariance of the whole cohort.
fn mahalanobis_coordinates(cohort: &Cohort, robust: bool) -> Result<Vec<f64>> {
    let n = cohort.num_units();
    let d = cohort.dim();
    let mut data = cohort.covariates.clone();
    if robust {
        for c in 0..d {
            for (u, r) in average_ranks(&cohort.column(c)).into_iter().enumerate() {
                data[u * d + c] = r;
            }
        }
    }
    let mean: Vec<f64> = (0..d).map(|c| (0..n).map(|u| data[u * d + c]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; d * d];
    for u in 0..n {
        for p in 0..d {
            let a = data[u * d + p] - mean[p];
            for q in p..d {
                cov[p * d + q] += a * (data[u * d + q] - mean[q]);
            }
        }
    }
    for p in 0..d {
        for q in p..d {
            cov[p * d + q] /= (n - 1) as f64;
            cov[q * d + p] = cov[p * d + q];
        }
    }
    let w = inv_sqrt(&SymMatrix::symmetrized(d, cov))?;
    let mut out = Vec::with_capacity(n * d);
    for u in 0..n {
        out.extend(w.mul_vec(&data[u * d..(u + 1) * d]));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    Mahalanobis,
    Pscore,
    MahalanobisCaliper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Optimal,
    /// Greedy nearest neighbour, treated units in decreasing propensity order.
    Greedy,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MatchOptions {
    pub distance: Distance,
    pub algorithm: Algorithm,
    pub caliper_sd: f64,
    pub robust: bool,
    /// Match controls to treated units when controls are the smaller group.
    pub swap_roles: bool,
    pub max_irls_iters: usize,
    pub ridge: f64,
}

impl MatchOptions {
    pub fn new(distance: Distance) -> Self {
        MatchOptions {
            distance,
            algorithm: Algorithm::Optimal,
            caliper_sd: 0.2,
            robust: false,
            swap_roles: false,
            max_irls_iters: 50,
            ridge: 0.0,
        }
    }
}

/// The matchers exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    /// Optimal pairs on Mahalanobis distance.
    Maha,
    /// Optimal pairs on the estimated propensity score.
    Pscore,
    /// Optimal pairs on Mahalanobis distance within a propensity caliper.
    Opt,
    /// Greedy nearest neighbour on the estimated propensity score.
    Nn,
}

impl MatcherKind {
    pub fn options(self) -> MatchOptions {
        match self {
            MatcherKind::Maha => MatchOptions::new(Distance::Mahalanobis),
            MatcherKind::Pscore => MatchOptions::new(Distance::Pscore),
            MatcherKind::Opt => MatchOptions::new(Distance::MahalanobisCaliper),
            MatcherKind::Nn => MatchOptions {
                algorithm: Algorithm::Greedy,
                ..MatchOptions::new(Distance::Pscore)
            },
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MatcherKind::Maha => "maha",
            MatcherKind::Pscore => "pscore",
            MatcherKind::Opt => "opt",
            MatcherKind::Nn => "nn",
        }
    }
}

pub const CALIPER_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, Serialize)]
pub struct MatchResult {
    #[serde(skip)]
    pub sample: MatchedSample,
    /// `(treated, control)` cohort row indices, in set order.
    pub pairs: Vec<(usize, usize)>,
    pub total_distance: f64,
    pub propensity: Option<PropensityFit>,
    pub roles_swapped: bool,
}

struct DistanceModel {
    coords: Option<Vec<f64>>,
    pscore: Option<Vec<f64>>,
    pscore_sd: f64,
    caliper_sd: f64,
    dim: usize,
}

impl DistanceModel {
    fn cost(&self, a: usize, b: usize) -> f64 {
        let maha = |c: &Vec<f64>| {
            let d = self.dim;
            c[a * d..(a + 1) * d]
                .iter()
                .zip(&c[b * d..(b + 1) * d])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        match (&self.coords, &self.pscore) {
            (Some(c), None) => maha(c),
            (None, Some(p)) => (p[a] - p[b]).abs(),
            (Some(c), Some(p)) => {
                let excess = ((p[a] - p[b]).abs() - self.caliper_sd * self.pscore_sd) / self.pscore_sd;
                maha(c) + CALIPER_PENALTY * excess.max(0.0)
            }
            (None, None) => unreachable!("distance model without components"),
        }
    }
}

/// Pair each treated unit with a distinct control.
pub fn pair_match(cohort: &Cohort, options: &MatchOptions) -> Result<MatchResult> {
    let mut anchors = cohort.treated_indices();
    let mut pool = cohort.control_indices();
    let mut roles_swapped = false;
    if anchors.len() > pool.len() {
        if !options.swap_roles {
            return Err(Error::invalid(format!(
                "{} treated units but only {} controls",
                anchors.len(),
                pool.len()
            )));
        }
        std::mem::swap(&mut anchors, &mut pool);
        roles_swapped = true;
    }
    if !(options.caliper_sd > 0.0) {
        return Err(Error::invalid("caliper must be positive"));
    }

    let needs_pscore = matches!(options.distance, Distance::Pscore | Distance::MahalanobisCaliper)
        || options.algorithm == Algorithm::Greedy;
    let propensity = if needs_pscore {
        Some(fit_propensity(cohort, options.max_irls_iters, options.ridge)?)
    } else {
        None
    };
    let pscore = propensity.as_ref().map(|f| f.fitted.clone());
    let pscore_sd = pscore.as_deref().map(sample_sd).unwrap_or(1.0);
    let coords = match options.distance {
        Distance::Pscore => None,
        _ => Some(mahalanobis_coordinates(cohort, options.robust)?),
    };
    let model = DistanceModel {
        coords,
        pscore: match options.distance {
            Distance::Mahalanobis => None,
            _ => pscore.clone(),
        },
        pscore_sd: if pscore_sd > 0.0 { pscore_sd } else { 1.0 },
        caliper_sd: options.caliper_sd,
        dim: cohort.dim(),
    };

    let rows = anchors.len();
    let cols = pool.len();
    let cost: Vec<f64> = anchors
        .par_iter()
        .flat_map_iter(|&a| pool.iter().map(move |&b| (a, b)))
        .map(|(a, b)| model.cost(a, b))
        .collect();

    let assignment = match options.algorithm {
        Algorithm::Optimal => solve_assignment(&cost, rows, cols)?,
        Algorithm::Greedy => {
            let p = pscore.as_ref().expect("greedy matching fits a propensity score");
            greedy_assignment(&cost, rows, cols, |r| p[anchors[r]])
        }
    };
    let total_distance = assignment.iter().enumerate().map(|(r, &c)| cost[r * cols + c]).sum();
    let pairs: Vec<(usize, usize)> = assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| {
            if roles_swapped {
                (pool[c], anchors[r])
            } else {
                (anchors[r], pool[c])
            }
        })
        .collect();
    let sample = pairs_to_sample(cohort, &pairs)?;
    Ok(MatchResult {
        sample,
        pairs,
        total_distance,
        propensity,
        roles_swapped,
    })
}

fn greedy_assignment(cost: &[f64], rows: usize, cols: usize, priority: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| priority(b).total_cmp(&priority(a)).then(a.cmp(&b)));
    let mut taken = vec![false; cols];
    let mut out = vec![0; rows];
    for r in order {
        let row = &cost[r * cols..(r + 1) * cols];
        let best = (0..cols)
            .filter(|&c| !taken[c])
            .min_by(|&a, &b| row[a].total_cmp(&row[b]))
            .expect("rows ≤ cols");
        taken[best] = true;
        out[r] = best;
    }
    out
}

/// Builds the matched-pair sample: set `s` holds the treated unit then its
/// control.
pub fn pairs_to_sample(cohort: &Cohort, pairs: &[(usize, usize)]) -> Result<MatchedSample> {
    let sets = pairs
        .iter()
        .enumerate()
        .map(|(s, &(t, c))| SetUnits {
            set_id: (s + 1).to_string(),
            covariates: vec![cohort.row(t).to_vec(), cohort.row(c).to_vec()],
            treated: vec![cohort.treatment[t], cohort.treatment[c]],
            unit_ids: Some(vec![unit_label(cohort, t), unit_label(cohort, c)]),
            outcomes: cohort.outcomes.as_ref().map(|y| vec![y[t], y[c]]),
        })
        .collect();
    MatchedSample::new(cohort.covariate_names.clone(), sets)
}

fn unit_label(cohort: &Cohort, u: usize) -> String {
    match &cohort.unit_ids {
        Some(ids) => ids[u].clone(),
        None => (u + 1).to_string(),
    }
}

// ---------------------------------------------------------------------------
// Balance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub mean_treated: f64,
    pub mean_control_matched: f64,
    /// Absolute SMD over the unmatched cohort.
    pub smd_before: f64,
    /// Absolute SMD over the matched sample.
    pub smd_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceTable {
    pub rows: Vec<BalanceRow>,
    /// After-matching absolute SMD of the first covariate.
    pub smd_x1: f64,
    /// Median after-matching absolute SMD across covariates.
    pub median_abs_smd: f64,
}

fn mean_var(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Standardized mean differences before and after matching. The denominator
/// is `sqrt((s²_t + s²_c)/2)` from the unmatched cohort.
pub fn balance_table(cohort: &Cohort, matched: &MatchedSample) -> Result<BalanceTable> {
    let mut rows = Vec::with_capacity(cohort.dim());
    for (c, name) in cohort.covariate_names.iter().enumerate() {
        let mc = matched
            .covariate_names()
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| Error::MissingColumn(name.clone()))?;
        let col = cohort.column(c);
        let (mt, vt) = mean_var((0..col.len()).filter(|&u| cohort.treatment[u]).map(|u| col[u]));
        let (mc0, vc) = mean_var((0..col.len()).filter(|&u| !cohort.treatment[u]).map(|u| col[u]));
        let sd = ((vt + vc) / 2.0).sqrt();
        let d = matched.dim();
        let data = matched.covariates();
        let treat = matched.treatment();
        let (mt_after, _) = mean_var((0..matched.num_units()).filter(|&u| treat[u]).map(|u| data[u * d + mc]));
        let (mc_after, _) = mean_var((0..matched.num_units()).filter(|&u| !treat[u]).map(|u| data[u * d + mc]));
        let smd = |diff: f64| if sd > 0.0 { (diff / sd).abs() } else { 0.0 };
        rows.push(BalanceRow {
            covariate: name.clone(),
            mean_treated: mt_after,
            mean_control_matched: mc_after,
            smd_before: smd(mt - mc0),
            smd_after: smd(mt_after - mc_after),
        });
    }
    let mut after: Vec<f64> = rows.iter().map(|r| r.smd_after).collect();
    Ok(BalanceTable {
        smd_x1: rows[0].smd_after,
        median_abs_smd: median(&mut after),
        rows,
    })
}

pub fn write_balance_csv<W: std::io::Write>(table: &BalanceTable, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["covariate", "mean_treated", "mean_control_matched", "smd_before", "smd_after"])?;
    for r in &table.rows {
        wtr.write_record([
            r.covariate.clone(),
            r.mean_treated.to_string(),
            r.mean_control_matched.to_string(),
            r.smd_before.to_string(),
            r.smd_after.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort(rows: &[(&[f64], bool)]) -> Cohort {
        let d = rows[0].0.len();
        Cohort::new(
            (1..=d).map(|k| format!("X{k}")).collect(),
            rows.iter().flat_map(|r| r.0.iter().copied()).collect(),
            rows.iter().map(|r| r.1).collect(),
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn assignment_small() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        assert_eq!(solve_assignment(&cost, 3, 3).unwrap(), vec![1, 0, 2]);
        let rect = [5.0, 1.0, 9.0, 1.0, 2.0, 9.0];
        assert_eq!(solve_assignment(&rect, 2, 3).unwrap(), vec![1, 0]);
        assert!(solve_assignment(&rect, 3, 2).is_err());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn obvious_pairs() {
        let c = cohort(&[
            (&[0.0, 0.0], true),
            (&[10.0, 0.0], true),
            (&[0.0, 10.0], true),
            (&[0.1, 10.2], false),
            (&[0.2, -0.1], false),
            (&[9.8, 0.3], false),
        ]);
        let m = pair_match(&c, &MatchOptions::new(Distance::Mahalanobis)).unwrap();
        assert_eq!(m.pairs, vec![(0, 4), (1, 5), (2, 3)]);
        assert_eq!(m.sample.num_sets(), 3);
    }

    #[test]
    fn more_treated_than_controls() {
        let c = cohort(&[(&[0.0], true), (&[1.0], true), (&[2.0], false), (&[0.5], true)]);
        let opts = MatchOptions::new(Distance::Mahalanobis);
        assert!(pair_match(&c, &opts).is_err());
        let m = pair_match(&c, &MatchOptions { swap_roles: true, ..opts }).unwrap();
        assert!(m.roles_swapped);
        assert_eq!(m.pairs, vec![(1, 2)]);
    }

    #[test]
    fn identical_groups_balance() {
        let c = cohort(&[
            (&[1.0, 2.0], true),
            (&[1.0, 2.0], false),
            (&[3.0, 0.0], true),
            (&[3.0, 0.0], false),
            (&[0.0, 5.0], true),
            (&[0.0, 5.0], false),
        ]);
        let m = pair_match(&c, &MatchOptions::new(Distance::Mahalanobis)).unwrap();
        let b = balance_table(&c, &m.sample).unwrap();
        assert!(b.rows.iter().all(|r| r.smd_after == 0.0));
    }

    #[test]
    fn separated_propensity_uses_ridge() {
        let c = cohort(&[
            (&[-3.0], false),
            (&[-2.0], false),
            (&[-1.0], false),
            (&[1.0], true),
            (&[2.0], true),
            (&[3.0], true),
        ]);
        let fit = fit_propensity(&c, 50, 0.0).unwrap();
        assert!(fit.ridge_fallback);
        assert_eq!(fit.ridge, SEPARATION_RIDGE);
        assert!(fit.coefficients.iter().all(|b| b.is_finite()));
    }

    #[test]
    fn cohort_csv() {
        let text = "unit_id,treated,X1,X2,outcome\na,1,0.5,1,3\nb,0,0.1,2,1\nc,0,0.3,0,2\n";
        let c = read_cohort_csv(text.as_bytes(), &CovariateSelection::all()).unwrap();
        assert_eq!(c.covariate_names(), ["X1", "X2"]);
        assert_eq!(c.treated_indices(), vec![0]);
        assert_eq!(c.outcomes().unwrap(), [3.0, 1.0, 2.0]);
        let bad = "treated,X1\n1,0.5\n2,0.1\n";
        assert!(matches!(
            read_cohort_csv(bad.as_bytes(), &CovariateSelection::all()),
            Err(Error::BadValue { row: 2, .. })
        ));
    }
}
