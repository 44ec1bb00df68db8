//! End-to-end randomization diagnostic for one matched sample: cluster,
//! count `t`, then p-values, decision and residual sensitivity value.

use serde::Serialize;

use crate::cluster::{cluster_test_statistic, KMeansConfig};
use crate::error::Result;
use crate::infer::{self, Centering, Decision, Mode, RsvResult};
use crate::metric::{run_metric_kmeans, MetricForm, MetricKMeansConfig, MetricMatrix};
use crate::model::{standardize, MatchedSample, Standardization};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DiagnosticConfig {
    pub form: MetricForm,
    pub kmeans: KMeansConfig,
    pub standardize: bool,
    pub alpha: f64,
    pub decision: Decision,
    pub centering: Centering,
    /// p-value flavour used for the decision and the RSV.
    pub mode: Mode,
}

impl DiagnosticConfig {
    pub fn new(form: MetricForm, seed: u64) -> Self {
        DiagnosticConfig {
            form,
            kmeans: KMeansConfig {
                seed,
                ..KMeansConfig::default()
            },
            standardize: true,
            alpha: 0.05,
            decision: Decision::PValue,
            centering: Centering::Centered,
            mode: Mode::Exact,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusteringSummary {
    pub t: u64,
    pub restart: usize,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub metric: Option<MetricMatrix>,
    pub degenerate_fallbacks: usize,
    pub standardization: Option<Standardization>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub t: u64,
    pub num_sets: u64,
    pub controls_per_set: u64,
    pub p_exact: f64,
    pub p_asymptotic: f64,
    pub reject: bool,
    pub rsv: RsvResult,
}

/// Runs the chosen clusterer and returns the statistic with run details.
pub fn cluster_statistic(sample: &MatchedSample, config: &DiagnosticConfig) -> Result<ClusteringSummary> {
    let (working, standardization) = if config.standardize {
        let (s, record) = standardize(sample)?;
        (s, Some(record))
    } else {
        (sample.clone(), None)
    };
    let run = run_metric_kmeans(&working, &MetricKMeansConfig::new(config.form, config.kmeans))?;
    let t = cluster_test_statistic(run.partition(), &working) as u64;
    Ok(ClusteringSummary {
        t,
        restart: run.run.restart,
        iterations: run.run.state.iteration,
        converged: run.run.converged,
        objective: run.run.state.objective,
        metric: (config.form != MetricForm::Euclidean).then_some(run.metric),
        degenerate_fallbacks: run.degenerate_fallbacks,
        standardization,
    })
}

/// p-values, decision and RSV for an observed statistic.
pub fn verdict(i: u64, k: u64, t: u64, config: &DiagnosticConfig) -> Result<Verdict> {
    let p_exact = infer::bounding_p_two_sided(i, k, t, 1.0, Mode::Exact, config.centering)?;
    let p_asymptotic = infer::bounding_p_two_sided(i, k, t, 1.0, Mode::Asymptotic, config.centering)?;
    let reject = match config.decision {
        Decision::PValue => {
            let p = match config.mode {
                Mode::Exact => p_exact,
                Mode::Asymptotic => p_asymptotic,
            };
            p < config.alpha
        }
        Decision::Quantile => infer::quantile_reject(i, k, t, 1.0, config.alpha)?,
    };
    let rsv = infer::residual_sensitivity_value(i, k, t, config.alpha, config.mode, config.centering)?;
    Ok(Verdict {
        t,
        num_sets: i,
        controls_per_set: k,
        p_exact,
        p_asymptotic,
        reject,
        rsv,
    })
}

pub fn run_diagnostic(sample: &MatchedSample, config: &DiagnosticConfig) -> Result<(ClusteringSummary, Verdict)> {
    let summary = cluster_statistic(sample, config)?;
    let v = verdict(
        sample.num_sets() as u64,
        sample.controls_per_set() as u64,
        summary.t,
        config,
    )?;
    Ok((summary, v))
}
