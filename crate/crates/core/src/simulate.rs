//! Monte Carlo harness: simulated cohorts, matching, clustering tests and
//! outcome-analysis accuracy, aggregated per factorial cell.

use rand::distr::{Bernoulli, Distribution};
use rand_distr::{Binomial, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostic::{run_diagnostic, DiagnosticConfig};
use crate::error::{Error, Result};
use crate::infer::{null_p_two_sided, Centering, Mode};
use crate::matching::{balance_table, pair_match, Cohort, MatcherKind};
use crate::metric::MetricForm;
use crate::model::MatchedSample;
use crate::rng::{derive_seed, rng_from_seed};

pub const TRUE_EFFECT: f64 = 2.0;
const TREATED_PROB: f64 = 1.0 / 3.0;

#[derive(Debug, Clone)]
pub struct SimulatedCohort {
    /// Observed covariates, treatment and outcome.
    pub cohort: Cohort,
    pub r_control: Vec<f64>,
    pub r_treated: Vec<f64>,
}

/// `Z ~ Bernoulli(1/3)`, `X | Z ~ N(c·Z·e₁, I_d)`,
/// `R_C = X₁² + 0.5·X₂ − X₃ + ε` with `ε ~ N(0, 1)`, `R_T = R_C + 2`.
pub fn generate_cohort(n: usize, d: usize, c: f64, seed: u64) -> Result<SimulatedCohort> {
    if d < 3 {
        return Err(Error::invalid(format!("the outcome model needs d ≥ 3, got {d}")));
    }
    if n < 10 {
        return Err(Error::invalid(format!("need n ≥ 10, got {n}")));
    }
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("shift c must be finite and ≥ 0, got {c}")));
    }
    let mut rng = rng_from_seed(seed);
    let coin = Bernoulli::new(TREATED_PROB).expect("valid probability");
    let mut covariates = Vec::with_capacity(n * d);
    let mut treatment = Vec::with_capacity(n);
    let mut r_control = Vec::with_capacity(n);
    let mut r_treated = Vec::with_capacity(n);
    let mut observed = Vec::with_capacity(n);
    for _ in 0..n {
        let z = coin.sample(&mut rng);
        let start = covariates.len();
        for k in 0..d {
            let e: f64 = StandardNormal.sample(&mut rng);
            covariates.push(if k == 0 && z { e + c } else { e });
        }
        let x = &covariates[start..];
        let eps: f64 = StandardNormal.sample(&mut rng);
        let rc = x[0] * x[0] + 0.5 * x[1] - x[2] + eps;
        let rt = rc + TRUE_EFFECT;
        treatment.push(z);
        r_control.push(rc);
        r_treated.push(rt);
        observed.push(if z { rt } else { rc });
    }
    let names = (1..=d).map(|k| format!("X{k}")).collect();
    let cohort = Cohort::new(names, covariates, treatment, None, Some(observed))?;
    Ok(SimulatedCohort {
        cohort,
        r_control,
        r_treated,
    })
}

/// Median of the Walsh averages `(D_i + D_j)/2, i ≤ j` of the within-pair
/// differences `D_i = R_treated − R_control`.
pub fn hodges_lehmann(matched: &MatchedSample) -> Result<f64> {
    if matched.controls_per_set() != 1 {
        return Err(Error::invalid("the Hodges-Lehmann estimate needs matched pairs"));
    }
    if matched.outcomes().is_none() {
        return Err(Error::invalid("matched sample has no outcome column"));
    }
    let diffs: Vec<f64> = (0..matched.num_sets())
        .map(|i| {
            let t = matched.treated_slot(i);
            matched.outcome(i, t).unwrap() - matched.outcome(i, 1 - t).unwrap()
        })
        .collect();
    Ok(walsh_median(&diffs))
}

pub fn walsh_median(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let mut walsh = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            walsh.push(0.5 * (diffs[i] + diffs[j]));
        }
    }
    let m = walsh.len();
    let (_, &mut hi, _) = walsh.select_nth_unstable_by(m / 2, f64::total_cmp);
    if m % 2 == 1 {
        hi
    } else {
        let lo = walsh[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClustererKind {
    Vanilla,
    Metric,
    Both,
}

impl ClustererKind {
    fn vanilla(self) -> bool {
        matches!(self, ClustererKind::Vanilla | ClustererKind::Both)
    }

    fn metric(self) -> bool {
        matches!(self, ClustererKind::Metric | ClustererKind::Both)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimCellConfig {
    pub n: usize,
    pub d: usize,
    pub c: f64,
    pub matcher: MatcherKind,
    pub clusterer: ClustererKind,
    /// Metric learned by the metric clusterer.
    pub metric_form: MetricForm,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub standardize: bool,
    pub mode: Mode,
    pub centering: Centering,
}

impl SimCellConfig {
    pub fn new(n: usize, d: usize, c: f64, matcher: MatcherKind, seed: u64) -> Self {
        SimCellConfig {
            n,
            d,
            c,
            matcher,
            clusterer: ClustererKind::Both,
            metric_form: MetricForm::Diagonal,
            reps: 100,
            alpha: 0.05,
            seed,
            restarts: 10,
            max_iter: 100,
            standardize: true,
            mode: Mode::Exact,
            centering: Centering::Centered,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.restarts == 0 || self.max_iter == 0 {
            return Err(Error::invalid("restarts and max_iter must be at least 1"));
        }
        if self.metric_form == MetricForm::Euclidean && self.clusterer.metric() {
            return Err(Error::invalid("the metric clusterer needs a learned metric form"));
        }
        Ok(())
    }

    fn diagnostic(&self, form: MetricForm, seed: u64) -> DiagnosticConfig {
        let mut cfg = DiagnosticConfig::new(form, seed);
        cfg.kmeans.restarts = self.restarts;
        cfg.kmeans.max_iter = self.max_iter;
        cfg.standardize = self.standardize;
        cfg.alpha = self.alpha;
        cfg.mode = self.mode;
        cfg.centering = self.centering;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmRecord {
    pub t: u64,
    pub p_exact: f64,
    pub reject: bool,
    pub rsv: f64,
    pub degenerate_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepMetrics {
    pub num_pairs: usize,
    pub smd_x1: f64,
    pub smd_median: f64,
    pub hl: f64,
    pub vanilla: Option<ArmRecord>,
    pub metric: Option<ArmRecord>,
    pub propensity_ridge_fallback: bool,
    pub roles_swapped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub metrics: Option<RepMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimCellResult {
    pub config: SimCellConfig,
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub smd_x1: f64,
    pub smd_median: f64,
    pub hl_est: f64,
    pub mse: f64,
    pub power_van: Option<f64>,
    pub power_met: Option<f64>,
    pub rejections_van: Option<usize>,
    pub rejections_met: Option<usize>,
    pub rsv_van: Option<f64>,
    pub rsv_met: Option<f64>,
    pub records: Vec<RepRecord>,
}

fn arm(sample: &MatchedSample, cfg: &DiagnosticConfig) -> Result<ArmRecord> {
    let (summary, v) = run_diagnostic(sample, cfg)?;
    Ok(ArmRecord {
        t: v.t,
        p_exact: v.p_exact,
        reject: v.reject,
        rsv: v.rsv.rsv,
        degenerate_fallbacks: summary.degenerate_fallbacks,
    })
}

fn run_rep(config: &SimCellConfig, rep: usize) -> RepRecord {
    let seed = derive_seed(config.seed, rep as u64);
    let result = (|| -> Result<RepMetrics> {
        let sim = generate_cohort(config.n, config.d, config.c, derive_seed(seed, 0))?;
        let options = crate::matching::MatchOptions {
            swap_roles: true,
            ..config.matcher.options()
        };
        let matched = pair_match(&sim.cohort, &options)?;
        let balance = balance_table(&sim.cohort, &matched.sample)?;
        let hl = hodges_lehmann(&matched.sample)?;
        let vanilla = config
            .clusterer
            .vanilla()
            .then(|| arm(&matched.sample, &config.diagnostic(MetricForm::Euclidean, derive_seed(seed, 1))))
            .transpose()?;
        let metric = config
            .clusterer
            .metric()
            .then(|| arm(&matched.sample, &config.diagnostic(config.metric_form, derive_seed(seed, 2))))
            .transpose()?;
        Ok(RepMetrics {
            num_pairs: matched.sample.num_sets(),
            smd_x1: balance.smd_x1,
            smd_median: balance.median_abs_smd,
            hl,
            vanilla,
            metric,
            propensity_ridge_fallback: matched.propensity.as_ref().is_some_and(|p| p.ridge_fallback),
            roles_swapped: matched.roles_swapped,
        })
    })();
    match result {
        Ok(m) => RepRecord {
            rep,
            seed,
            metrics: Some(m),
            error: None,
        },
        Err(e) => RepRecord {
            rep,
            seed,
            metrics: None,
            error: Some(e.to_string()),
        },
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Runs every replication of one cell. Replications run in parallel with
/// seeds derived from the cell seed; aggregation follows replication order.
pub fn run_cell(config: &SimCellConfig) -> Result<SimCellResult> {
    config.validate()?;
    let records: Vec<RepRecord> = (0..config.reps).into_par_iter().map(|r| run_rep(config, r)).collect();
    Ok(aggregate(*config, records))
}

fn aggregate(config: SimCellConfig, records: Vec<RepRecord>) -> SimCellResult {
    let ok: Vec<&RepMetrics> = records.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let n_ok = ok.len();
    let arm_stats = |pick: fn(&RepMetrics) -> Option<&ArmRecord>| {
        let arms: Vec<&ArmRecord> = ok.iter().filter_map(|m| pick(m)).collect();
        if arms.is_empty() {
            return (None, None, None);
        }
        let rejections = arms.iter().filter(|a| a.reject).count();
        (
            Some(rejections as f64 / arms.len() as f64),
            Some(rejections),
            Some(mean(arms.iter().map(|a| a.rsv))),
        )
    };
    let (power_van, rejections_van, rsv_van) = arm_stats(|m| m.vanilla.as_ref());
    let (power_met, rejections_met, rsv_met) = arm_stats(|m| m.metric.as_ref());
    SimCellResult {
        config,
        reps_ok: n_ok,
        reps_failed: records.len() - n_ok,
        smd_x1: mean(ok.iter().map(|m| m.smd_x1)),
        smd_median: mean(ok.iter().map(|m| m.smd_median)),
        hl_est: mean(ok.iter().map(|m| m.hl)),
        mse: mean(ok.iter().map(|m| (m.hl - TRUE_EFFECT).powi(2))),
        power_van,
        power_met,
        rejections_van,
        rejections_met,
        rsv_van,
        rsv_met,
        records,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeControl {
    pub num_sets: u64,
    pub controls_per_set: u64,
    pub reps: usize,
    pub alpha: f64,
    pub rejections: usize,
    pub rate: f64,
}

/// Rejection rate of the exact two-sided test when `t` is drawn from its
/// randomization distribution `Binomial(I, 1/(K+1))`.
pub fn size_control(i: u64, k: u64, reps: usize, alpha: f64, seed: u64) -> Result<SizeControl> {
    if reps == 0 || i == 0 || k == 0 {
        return Err(Error::invalid("size control needs I, K and reps ≥ 1"));
    }
    let dist = Binomial::new(i, 1.0 / (k as f64 + 1.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let rejected: Vec<bool> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let t = dist.sample(&mut rng_from_seed(derive_seed(seed, r as u64)));
            null_p_two_sided(i, k, t, Centering::Centered).map(|p| p < alpha)
        })
        .collect::<Result<_>>()?;
    let rejections = rejected.iter().filter(|&&r| r).count();
    Ok(SizeControl {
        num_sets: i,
        controls_per_set: k,
        reps,
        alpha,
        rejections,
        rate: rejections as f64 / reps as f64,
    })
}
