//! Metric learning with cannot-link side information.
//!
//! The learned metric `‖x − y‖_A = sqrt((x − y)ᵀ A (x − y))` minimizes
//!
//! ```text
//! g(A) = Σ_{Π1} ‖x − c1‖²_A + Σ_{Π2} ‖x − c2‖²_A − ln Σ_{pairs} ‖x_ij − x_ij'‖_A
//! ```
//!
//! over `A ⪰ 0`, where the pairs are every within-set pair of units (for
//! `K = 1` exactly the matched pairs). `g` is convex; its minimizer has
//! similar-term value 1/2, and reported metrics are rescaled so the similar
//! term equals 1. Cluster assignments only compare distances, so rescaling
//! never changes a partition.

use rayon::prelude::*;
use serde::Serialize;

use crate::cluster::{self, ClusterState, KMeansConfig, KMeansRun, Partition};
use crate::error::{Error, Result};
use crate::model::MatchedSample;
use crate::numerics::{cholesky_solve, inv_sqrt, psd_project, SymMatrix};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricForm {
    Euclidean,
    Diagonal,
    Full,
    Dform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    None,
    Newton,
    ProjectedGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricMatrix {
    pub a: SymMatrix,
    pub form: MetricForm,
    /// Diagonal of `D` for the D-form, one weight per (whitened) covariate.
    pub dform_weights: Option<Vec<f64>>,
    pub solver: SolverPath,
    /// `g` at every accepted iterate (before rescaling).
    #[serde(skip)]
    pub g_trace: Vec<f64>,
}

impl MetricMatrix {
    pub fn euclidean(dim: usize) -> Self {
        MetricMatrix {
            a: SymMatrix::identity(dim),
            form: MetricForm::Euclidean,
            dform_weights: None,
            solver: SolverPath::None,
            g_trace: Vec::new(),
        }
    }

    pub fn from_matrix(a: SymMatrix, form: MetricForm) -> Self {
        MetricMatrix {
            a,
            form,
            dform_weights: None,
            solver: SolverPath::None,
            g_trace: Vec::new(),
        }
    }
}

/// `‖x − y‖_A`, with the quadratic form clamped at zero.
pub fn dist_a(x: &[f64], y: &[f64], metric: &MetricMatrix) -> Result<f64> {
    if x.len() != y.len() || x.len() != metric.a.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {} vs metric {}",
            x.len(),
            y.len(),
            metric.a.dim()
        )));
    }
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(metric.a.quad_form(&diff).max(0.0).sqrt())
}

/// Sufficient statistics of `g` for one (partition, centers) configuration.
#[derive(Debug, Clone)]
pub struct MetricProblem {
    dim: usize,
    /// `Σ (x − c)(x − c)ᵀ` over both clusters.
    scatter: SymMatrix,
    /// Within-set differences, row-major `n_pairs × dim`.
    diffs: Vec<f64>,
}

impl MetricProblem {
    pub fn new(sample: &MatchedSample, partition: &Partition, c1: &[f64], c2: &[f64]) -> Self {
        let d = sample.dim();
        let mut scatter = vec![0.0; d * d];
        let mut r = vec![0.0; d];
        for i in 0..sample.num_sets() {
            for j in 0..sample.set_size() {
                let c = if partition.in_pi1(i, j) { c1 } else { c2 };
                for (k, (x, m)) in sample.unit(i, j).iter().zip(c).enumerate() {
                    r[k] = x - m;
                }
                for p in 0..d {
                    for q in p..d {
                        scatter[p * d + q] += r[p] * r[q];
                    }
                }
            }
        }
        for p in 0..d {
            for q in 0..p {
                scatter[p * d + q] = scatter[q * d + p];
            }
        }
        let k1 = sample.set_size();
        let mut diffs = Vec::with_capacity(sample.num_sets() * k1 * (k1 - 1) / 2 * d);
        for i in 0..sample.num_sets() {
            for j in 0..k1 {
                for jj in (j + 1)..k1 {
                    diffs.extend(sample.unit(i, j).iter().zip(sample.unit(i, jj)).map(|(a, b)| a - b));
                }
            }
        }
        MetricProblem {
            dim: d,
            scatter: SymMatrix::symmetrized(d, scatter),
            diffs,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn pairs(&self) -> impl Iterator<Item = &[f64]> {
        self.diffs.chunks(self.dim)
    }

    /// Similar-pair term `tr(A · scatter)`.
    pub fn similar_term(&self, a: &SymMatrix) -> f64 {
        a.dot(&self.scatter)
    }

    /// Dissimilar-pair sum `Σ ‖δ‖_A`.
    pub fn dissimilar_sum(&self, a: &SymMatrix) -> f64 {
        self.pairs().map(|delta| a.quad_form(delta).max(0.0).sqrt()).sum()
    }

    pub fn value(&self, a: &SymMatrix) -> Result<f64> {
        let f = self.dissimilar_sum(a);
        if !(f > 0.0) {
            return Err(Error::DegenerateMetric);
        }
        Ok(self.similar_term(a) - f.ln())
    }

    /// `g(A)` and `∂g/∂A`.
    pub fn value_and_grad(&self, a: &SymMatrix) -> Result<(f64, SymMatrix)> {
        let d = self.dim;
        let mut f = 0.0;
        let mut df = vec![0.0; d * d];
        for delta in self.pairs() {
            let norm = a.quad_form(delta).max(0.0).sqrt();
            f += norm;
            if norm > 0.0 {
                let w = 0.5 / norm;
                for p in 0..d {
                    for q in p..d {
                        df[p * d + q] += w * delta[p] * delta[q];
                    }
                }
            }
        }
        if !(f > 0.0) {
            return Err(Error::DegenerateMetric);
        }
        let mut grad = self.scatter.as_slice().to_vec();
        for p in 0..d {
            for q in p..d {
                grad[p * d + q] -= df[p * d + q] / f;
                grad[q * d + p] = grad[p * d + q];
            }
        }
        Ok((self.similar_term(a) - f.ln(), SymMatrix::symmetrized(d, grad)))
    }

    // Diagonal specializations. `w` below is the elementwise square of a
    // within-set difference.

    fn diag_value(&self, a: &[f64]) -> Option<f64> {
        let s = self.scatter.diag();
        let sim: f64 = a.iter().zip(&s).map(|(x, y)| x * y).sum();
        let f: f64 = self
            .pairs()
            .map(|delta| delta.iter().zip(a).map(|(x, w)| w * x * x).sum::<f64>().max(0.0).sqrt())
            .sum();
        (f > 0.0).then(|| sim - f.ln())
    }

    fn diag_grad_hess(&self, a: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let d = self.dim;
        let s = self.scatter.diag();
        let mut f = 0.0;
        let mut df = vec![0.0; d];
        let mut d2f = vec![0.0; d * d];
        let mut w = vec![0.0; d];
        for delta in self.pairs() {
            for k in 0..d {
                w[k] = delta[k] * delta[k];
            }
            let n2: f64 = w.iter().zip(a).map(|(x, y)| x * y).sum();
            if !(n2 > 0.0) {
                continue;
            }
            let n = n2.sqrt();
            f += n;
            let c1 = 0.5 / n;
            let c3 = 0.25 / (n2 * n);
            for k in 0..d {
                df[k] += c1 * w[k];
                if w[k] == 0.0 {
                    continue;
                }
                for l in k..d {
                    d2f[k * d + l] += c3 * w[k] * w[l];
                }
            }
        }
        if !(f > 0.0) {
            return None;
        }
        let sim: f64 = a.iter().zip(&s).map(|(x, y)| x * y).sum();
        let grad: Vec<f64> = (0..d).map(|k| s[k] - df[k] / f).collect();
        let mut hess = vec![0.0; d * d];
        for k in 0..d {
            for l in k..d {
                let h = d2f[k * d + l] / f + df[k] * df[l] / (f * f);
                hess[k * d + l] = h;
                hess[l * d + k] = h;
            }
        }
        Some((sim - f.ln(), grad, hess))
    }
}

/// `g(A)` and its gradient for the given configuration.
pub fn g_objective(
    a: &SymMatrix,
    sample: &MatchedSample,
    partition: &Partition,
    c1: &[f64],
    c2: &[f64],
) -> Result<(f64, SymMatrix)> {
    MetricProblem::new(sample, partition, c1, c2).value_and_grad(a)
}

fn rescale_to_boundary(problem: &MetricProblem, a: SymMatrix) -> (SymMatrix, f64) {
    let sim = problem.similar_term(&a);
    if sim > 0.0 && sim.is_finite() {
        (a.scaled(1.0 / sim), 1.0 / sim)
    } else {
        (a, 1.0)
    }
}

const NEWTON_TOL: f64 = 1e-12;

/// Raw diagonal minimizer of `g` (no boundary rescaling).
pub(crate) fn minimize_diagonal(problem: &MetricProblem, max_newton_iters: usize) -> Result<(Vec<f64>, SolverPath, Vec<f64>)> {
    let d = problem.dim;
    let s = problem.scatter.diag();
    let total: f64 = s.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateMetric);
    }
    let mut a = vec![1.0 / (2.0 * total); d];
    let mut g = problem.diag_value(&a).ok_or(Error::DegenerateMetric)?;
    let mut trace = vec![g];

    for _ in 0..max_newton_iters {
        let (_, grad, hess) = problem.diag_grad_hess(&a).ok_or(Error::DegenerateMetric)?;
        let floor = 1e-12 * a.iter().cloned().fold(0.0, f64::max);
        // Entries pinned at the floor with the gradient pushing outward stay put.
        let free: Vec<usize> = (0..d).filter(|&k| a[k] > floor * (1.0 + 1e-9) || grad[k] < 0.0).collect();
        if free.is_empty() {
            break;
        }
        let sub_grad: Vec<f64> = free.iter().map(|&k| grad[k]).collect();
        let mut sub_hess = Vec::with_capacity(free.len() * free.len());
        for &k in &free {
            sub_hess.extend(free.iter().map(|&l| hess[k * d + l]));
        }
        let Some(sub_step) = newton_direction(&sub_grad, &sub_hess, free.len()) else {
            return projected_gradient_diagonal(problem, a, trace, max_newton_iters.max(200));
        };
        let mut step = vec![0.0; d];
        for (&k, v) in free.iter().zip(sub_step) {
            step[k] = v;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = a.iter().zip(&step).map(|(x, dx)| (x + t * dx).max(floor)).collect();
            if let Some(gc) = problem.diag_value(&cand) {
                let decrease: f64 = grad.iter().zip(cand.iter().zip(&a)).map(|(gk, (c, x))| gk * (c - x)).sum();
                if gc <= g + 1e-4 * decrease.min(0.0) {
                    accepted = Some((cand, gc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, gc)) = accepted else { break };
        let change = g - gc;
        a = cand;
        g = gc;
        trace.push(g);
        if change <= NEWTON_TOL * (1.0 + g.abs()) {
            break;
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateMetric);
    }
    Ok((a, SolverPath::Newton, trace))
}

fn newton_direction(grad: &[f64], hess: &[f64], d: usize) -> Option<Vec<f64>> {
    let scale = (0..d).map(|k| hess[k * d + k]).fold(0.0, f64::max);
    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut damping = 0.0;
    for _ in 0..12 {
        let mut h = hess.to_vec();
        for k in 0..d {
            h[k * d + k] += damping;
        }
        if let Some(step) = cholesky_solve(&h, d, &neg) {
            return Some(step);
        }
        damping = if damping == 0.0 { 1e-12 * scale.max(f64::MIN_POSITIVE) } else { damping * 100.0 };
    }
    None
}

fn projected_gradient_diagonal(
    problem: &MetricProblem,
    mut a: Vec<f64>,
    mut trace: Vec<f64>,
    max_iters: usize,
) -> Result<(Vec<f64>, SolverPath, Vec<f64>)> {
    let mut g = problem.diag_value(&a).ok_or(Error::DegenerateMetric)?;
    let mut eta = 0.1;
    for _ in 0..max_iters {
        let (_, grad, _) = problem.diag_grad_hess(&a).ok_or(Error::DegenerateMetric)?;
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        let anorm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            break;
        }
        let floor = 1e-12 * a.iter().cloned().fold(0.0, f64::max);
        let mut accepted = false;
        while eta > 1e-20 {
            let step = eta * anorm / gnorm;
            let cand: Vec<f64> = a.iter().zip(&grad).map(|(x, gk)| (x - step * gk).max(floor)).collect();
            if let Some(gc) = problem.diag_value(&cand) {
                if gc <= g {
                    let change = g - gc;
                    a = cand;
                    g = gc;
                    trace.push(g);
                    accepted = change > 1e-8 * (1.0 + g.abs());
                    eta = (eta * 2.0).min(1.0);
                    break;
                }
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((a, SolverPath::ProjectedGradient, trace))
}

/// Diagonal metric by safeguarded Newton–Raphson, rescaled to the boundary.
pub fn learn_metric_diagonal(
    sample: &MatchedSample,
    partition: &Partition,
    centers: (&[f64], &[f64]),
    max_newton_iters: usize,
) -> Result<MetricMatrix> {
    let problem = MetricProblem::new(sample, partition, centers.0, centers.1);
    learn_diagonal_on(&problem, max_newton_iters)
}

fn learn_diagonal_on(problem: &MetricProblem, max_newton_iters: usize) -> Result<MetricMatrix> {
    let (a, solver, g_trace) = minimize_diagonal(problem, max_newton_iters)?;
    let (a, _) = rescale_to_boundary(problem, SymMatrix::diagonal(&a));
    Ok(MetricMatrix {
        a,
        form: MetricForm::Diagonal,
        dform_weights: None,
        solver,
        g_trace,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct FullMetricConfig {
    /// Initial step, relative to `‖A‖_F / ‖∇g‖_F`.
    pub step: f64,
    pub max_iters: usize,
}

impl Default for FullMetricConfig {
    fn default() -> Self {
        FullMetricConfig {
            step: 0.5,
            max_iters: 200,
        }
    }
}

/// Full PSD metric by projected gradient descent with step halving.
pub fn learn_metric_full(
    sample: &MatchedSample,
    partition: &Partition,
    centers: (&[f64], &[f64]),
    config: &FullMetricConfig,
) -> Result<MetricMatrix> {
    if sample.dim() > 50 {
        return Err(Error::invalid("full metric learning supports at most 50 covariates"));
    }
    let problem = MetricProblem::new(sample, partition, centers.0, centers.1);
    learn_full_on(&problem, config, None)
}

fn learn_full_on(problem: &MetricProblem, config: &FullMetricConfig, warm: Option<&SymMatrix>) -> Result<MetricMatrix> {
    if !(config.step > 0.0) {
        return Err(Error::invalid("step must be positive"));
    }
    let d = problem.dim;
    let mut a = match warm {
        Some(a0) => a0.clone(),
        None => {
            let tr = problem.scatter.diag().iter().sum::<f64>();
            if !(tr > 0.0) {
                return Err(Error::DegenerateMetric);
            }
            SymMatrix::identity(d).scaled(1.0 / (2.0 * tr))
        }
    };
    let (mut g, mut grad) = problem.value_and_grad(&a)?;
    let mut trace = vec![g];
    let mut eta = config.step;
    for _ in 0..config.max_iters {
        let gnorm = grad.frobenius();
        if gnorm == 0.0 {
            break;
        }
        let base = a.frobenius() / gnorm;
        let mut accepted = None;
        while eta > 1e-20 {
            let cand = psd_project(&a.add_scaled(&grad, -eta * base))?;
            match problem.value_and_grad(&cand) {
                Ok((gc, gradc)) if gc <= g => {
                    accepted = Some((cand, gc, gradc));
                    break;
                }
                _ => eta *= 0.5,
            }
        }
        let Some((cand, gc, gradc)) = accepted else { break };
        let change = g - gc;
        a = cand;
        g = gc;
        grad = gradc;
        trace.push(g);
        if change <= 1e-8 * (1.0 + g.abs()) {
            break;
        }
        eta = (eta * 2.0).min(config.step * 4.0);
    }
    let (a, _) = rescale_to_boundary(problem, a);
    Ok(MetricMatrix {
        a,
        form: MetricForm::Full,
        dform_weights: None,
        solver: SolverPath::ProjectedGradient,
        g_trace: trace,
    })
}

/// Population covariance of all units.
pub(crate) fn covariance(sample: &MatchedSample) -> SymMatrix {
    let n = sample.num_units();
    let d = sample.dim();
    let x = sample.covariates();
    let mean: Vec<f64> = (0..d).map(|k| (0..n).map(|u| x[u * d + k]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; d * d];
    for u in 0..n {
        let row = &x[u * d..(u + 1) * d];
        for p in 0..d {
            for q in p..d {
                cov[p * d + q] += (row[p] - mean[p]) * (row[q] - mean[q]);
            }
        }
    }
    for p in 0..d {
        for q in p..d {
            cov[p * d + q] /= n as f64;
            cov[q * d + p] = cov[p * d + q];
        }
    }
    SymMatrix::symmetrized(d, cov)
}

/// Whitening transform `S^{-1/2}` of the pooled covariance.
pub fn whitening(sample: &MatchedSample) -> Result<SymMatrix> {
    inv_sqrt(&covariance(sample))
}

fn whiten(sample: &MatchedSample, w: &SymMatrix) -> Result<MatchedSample> {
    let d = sample.dim();
    let mut data = Vec::with_capacity(sample.covariates().len());
    for u in 0..sample.num_units() {
        data.extend(w.mul_vec(sample.row(u)));
    }
    let names = (0..d).map(|k| format!("w{}", k + 1)).collect();
    sample.with_covariates(names, data)
}

/// `A = (S^{-1/2})ᵀ D S^{-1/2}` with diagonal `D` learned in whitened
/// coordinates.
pub fn learn_metric_dform(
    sample: &MatchedSample,
    partition: &Partition,
    centers: (&[f64], &[f64]),
    max_newton_iters: usize,
) -> Result<MetricMatrix> {
    let w = whitening(sample)?;
    learn_dform_with(sample, &w, partition, centers, max_newton_iters)
}

fn learn_dform_with(
    sample: &MatchedSample,
    w: &SymMatrix,
    partition: &Partition,
    centers: (&[f64], &[f64]),
    max_newton_iters: usize,
) -> Result<MetricMatrix> {
    let white = whiten(sample, w)?;
    let c1 = w.mul_vec(centers.0);
    let c2 = w.mul_vec(centers.1);
    let problem = MetricProblem::new(&white, partition, &c1, &c2);
    let diag = learn_diagonal_on(&problem, max_newton_iters)?;
    let weights = diag.a.diag();
    let a = diag.a.congruence(w);
    Ok(MetricMatrix {
        a,
        form: MetricForm::Dform,
        dform_weights: Some(weights),
        solver: diag.solver,
        g_trace: diag.g_trace,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct MetricKMeansConfig {
    pub kmeans: KMeansConfig,
    pub form: MetricForm,
    pub max_newton_iters: usize,
    pub full: FullMetricConfig,
}

impl MetricKMeansConfig {
    pub fn new(form: MetricForm, kmeans: KMeansConfig) -> Self {
        MetricKMeansConfig {
            kmeans,
            form,
            max_newton_iters: 50,
            full: FullMetricConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricKMeansRun {
    pub run: KMeansRun,
    /// Metric learned at the last iteration of the winning restart.
    pub metric: MetricMatrix,
    /// Iterations (across all restarts) where learning was degenerate and
    /// Euclidean assignment was used instead.
    pub degenerate_fallbacks: usize,
}

impl MetricKMeansRun {
    pub fn partition(&self) -> &Partition {
        self.run.partition()
    }
}

struct Learner<'a> {
    form: MetricForm,
    cfg: &'a MetricKMeansConfig,
    whitener: Option<SymMatrix>,
}

impl Learner<'_> {
    fn learn(&self, sample: &MatchedSample, state: &ClusterState, warm: Option<&MetricMatrix>) -> Result<MetricMatrix> {
        let centers = (state.center1.as_slice(), state.center2.as_slice());
        match self.form {
            MetricForm::Euclidean => Ok(MetricMatrix::euclidean(sample.dim())),
            MetricForm::Diagonal => learn_metric_diagonal(sample, &state.partition, centers, self.cfg.max_newton_iters),
            MetricForm::Full => {
                let problem = MetricProblem::new(sample, &state.partition, centers.0, centers.1);
                learn_full_on(&problem, &self.cfg.full, warm.map(|m| &m.a))
            }
            MetricForm::Dform => learn_dform_with(
                sample,
                self.whitener.as_ref().expect("whitener prepared"),
                &state.partition,
                centers,
                self.cfg.max_newton_iters,
            ),
        }
    }
}

/// Constrained 2-means where each assignment pass uses a metric re-learned
/// against the current partition and centers.
pub fn run_metric_kmeans(sample: &MatchedSample, config: &MetricKMeansConfig) -> Result<MetricKMeansRun> {
    let k = &config.kmeans;
    assert!(k.max_iter >= 1 && k.restarts >= 1);
    if config.form == MetricForm::Euclidean {
        return Ok(MetricKMeansRun {
            run: cluster::run_constrained_kmeans(sample, None, k),
            metric: MetricMatrix::euclidean(sample.dim()),
            degenerate_fallbacks: 0,
        });
    }
    if config.form == MetricForm::Full && sample.dim() > 50 {
        return Err(Error::invalid("full metric learning supports at most 50 covariates"));
    }
    let learner = Learner {
        form: config.form,
        cfg: config,
        whitener: match config.form {
            MetricForm::Dform => Some(whitening(sample)?),
            _ => None,
        },
    };

    let runs: Vec<(ClusterState, bool, MetricMatrix, usize)> = (0..k.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(k.seed, r as u64));
            let mut state = cluster::init_partition(sample, &mut rng, None);
            let mut fallbacks = 0;
            let mut last: Option<MetricMatrix> = None;
            let mut converged = false;
            for _ in 0..k.max_iter {
                let learned = learner.learn(sample, &state, last.as_ref());
                let metric_a = match &learned {
                    Ok(m) => Some(&m.a),
                    Err(_) => {
                        fallbacks += 1;
                        None
                    }
                };
                let next = cluster::assign_step(&state, sample, metric_a, &mut rng);
                if let Ok(m) = learned {
                    last = Some(m);
                }
                let fixed = next.partition == state.partition;
                state = next;
                if fixed {
                    converged = true;
                    break;
                }
            }
            let metric = last.unwrap_or_else(|| MetricMatrix::euclidean(sample.dim()));
            let problem = MetricProblem::new(sample, &state.partition, &state.center1, &state.center2);
            state.objective = problem.value(&metric.a).unwrap_or(f64::INFINITY);
            (state, converged, metric, fallbacks)
        })
        .collect();

    let degenerate_fallbacks = runs.iter().map(|r| r.3).sum();
    let mut metrics = Vec::with_capacity(runs.len());
    let plain: Vec<(ClusterState, bool)> = runs
        .into_iter()
        .map(|(s, c, m, _)| {
            metrics.push(m);
            (s, c)
        })
        .collect();
    let run = cluster::select_best(plain);
    let metric = metrics.swap_remove(run.restart);
    Ok(MetricKMeansRun {
        run,
        metric,
        degenerate_fallbacks,
    })
}
