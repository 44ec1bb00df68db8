//! Constrained 2-means clustering under the cannot-link / multiple-controls
//! constraint: every matched set contributes exactly one unit to cluster 1.
//!
//! Nothing in this module reads treatment labels. The only consumer of
//! labels is [`cluster_test_statistic`], which is applied to a finished
//! partition.

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::model::MatchedSample;
use crate::numerics::SymMatrix;
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// Output of a constrained clustering: the slot of the Π1 member in each set.
/// Π2 is every other unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Partition {
    pi1_slot: Vec<usize>,
    set_size: usize,
}

impl Partition {
    pub fn new(pi1_slot: Vec<usize>, set_size: usize) -> Self {
        assert!(pi1_slot.iter().all(|&s| s < set_size), "slot out of range");
        Partition { pi1_slot, set_size }
    }

    pub fn num_sets(&self) -> usize {
        self.pi1_slot.len()
    }

    pub fn pi1_slots(&self) -> &[usize] {
        &self.pi1_slot
    }

    pub fn in_pi1(&self, set: usize, slot: usize) -> bool {
        self.pi1_slot[set] == slot
    }

    /// `(set, slot)` members of Π1.
    pub fn pi1(&self) -> Vec<(usize, usize)> {
        self.pi1_slot.iter().copied().enumerate().collect()
    }

    /// `(set, slot)` members of Π2.
    pub fn pi2(&self) -> Vec<(usize, usize)> {
        let k1 = self.set_size;
        self.pi1_slot
            .iter()
            .enumerate()
            .flat_map(|(i, &s)| (0..k1).filter(move |&j| j != s).map(move |j| (i, j)))
            .collect()
    }

    /// Per-unit membership in Π1, indexed like the sample's units.
    pub fn membership(&self) -> Vec<bool> {
        let k1 = self.set_size;
        let mut out = vec![false; self.pi1_slot.len() * k1];
        for (i, &s) in self.pi1_slot.iter().enumerate() {
            out[i * k1 + s] = true;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterState {
    pub partition: Partition,
    pub center1: Vec<f64>,
    pub center2: Vec<f64>,
    pub iteration: usize,
    /// Within-cluster sum of squared distances under the active metric.
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KMeansConfig {
    pub seed: u64,
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            seed: 0,
            max_iter: 100,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KMeansRun {
    pub state: ClusterState,
    /// Index of the winning restart.
    pub restart: usize,
    pub converged: bool,
    pub restart_objectives: Vec<f64>,
}

impl KMeansRun {
    pub fn partition(&self) -> &Partition {
        &self.state.partition
    }
}

/// Squared distance `(x − c)ᵀ A (x − c)`; Euclidean when `metric` is `None`.
#[inline]
pub(crate) fn sq_dist(x: &[f64], c: &[f64], metric: Option<&SymMatrix>, buf: &mut Vec<f64>) -> f64 {
    match metric {
        None => x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum(),
        Some(a) => {
            buf.clear();
            buf.extend(x.iter().zip(c).map(|(p, q)| p - q));
            a.quad_form(buf).max(0.0)
        }
    }
}

/// Means of Π1 and Π2.
pub fn centers(sample: &MatchedSample, partition: &Partition) -> (Vec<f64>, Vec<f64>) {
    let d = sample.dim();
    let mut c1 = vec![0.0; d];
    let mut c2 = vec![0.0; d];
    for i in 0..sample.num_sets() {
        for j in 0..sample.set_size() {
            let target = if partition.in_pi1(i, j) { &mut c1 } else { &mut c2 };
            for (t, v) in target.iter_mut().zip(sample.unit(i, j)) {
                *t += v;
            }
        }
    }
    let n1 = sample.num_sets() as f64;
    let n2 = (sample.num_sets() * sample.controls_per_set()) as f64;
    c1.iter_mut().for_each(|v| *v /= n1);
    c2.iter_mut().for_each(|v| *v /= n2);
    (c1, c2)
}

/// Within-cluster scatter of `partition` around the given centers.
pub fn objective(
    sample: &MatchedSample,
    partition: &Partition,
    c1: &[f64],
    c2: &[f64],
    metric: Option<&SymMatrix>,
) -> f64 {
    let mut buf = Vec::with_capacity(sample.dim());
    let mut total = 0.0;
    for i in 0..sample.num_sets() {
        for j in 0..sample.set_size() {
            let c = if partition.in_pi1(i, j) { c1 } else { c2 };
            total += sq_dist(sample.unit(i, j), c, metric, &mut buf);
        }
    }
    total
}

fn state_for(sample: &MatchedSample, partition: Partition, iteration: usize, metric: Option<&SymMatrix>) -> ClusterState {
    let (c1, c2) = centers(sample, &partition);
    let objective = objective(sample, &partition, &c1, &c2, metric);
    ClusterState {
        partition,
        center1: c1,
        center2: c2,
        iteration,
        objective,
    }
}

/// Places one uniformly random slot per set in Π1.
pub fn init_partition(sample: &MatchedSample, rng: &mut Rng, metric: Option<&SymMatrix>) -> ClusterState {
    let k1 = sample.set_size();
    let slots = (0..sample.num_sets()).map(|_| rng.random_range(0..k1)).collect();
    state_for(sample, Partition::new(slots, k1), 0, metric)
}

/// Chooses the Π1 member of one set given each unit's squared distances to
/// the two centers.
///
/// Exactly one unit strictly nearer `c1` takes Π1. With no strict
/// preference but some exact ties, the lowest-slot tied unit takes Π1.
/// Otherwise the constraint is violated and the slot is drawn uniformly.
fn choose_pi1(d1: &[f64], d2: &[f64], rng: &mut Rng) -> usize {
    let mut strict = None;
    let mut strict_count = 0;
    let mut first_tie = None;
    for (j, (a, b)) in d1.iter().zip(d2).enumerate() {
        if a < b {
            strict_count += 1;
            strict.get_or_insert(j);
        } else if a == b && first_tie.is_none() {
            first_tie = Some(j);
        }
    }
    match (strict_count, first_tie) {
        (1, _) => strict.expect("counted"),
        (0, Some(j)) => j,
        _ => rng.random_range(0..d1.len()),
    }
}

/// One assignment pass against the frozen centers of `state`, followed by a
/// center update.
pub fn assign_step(
    state: &ClusterState,
    sample: &MatchedSample,
    metric: Option<&SymMatrix>,
    rng: &mut Rng,
) -> ClusterState {
    let k1 = sample.set_size();
    let mut buf = Vec::with_capacity(sample.dim());
    let mut d1 = vec![0.0; k1];
    let mut d2 = vec![0.0; k1];
    let mut slots = Vec::with_capacity(sample.num_sets());
    for i in 0..sample.num_sets() {
        for j in 0..k1 {
            let x = sample.unit(i, j);
            d1[j] = sq_dist(x, &state.center1, metric, &mut buf);
            d2[j] = sq_dist(x, &state.center2, metric, &mut buf);
        }
        slots.push(choose_pi1(&d1, &d2, rng));
    }
    let partition = Partition::new(slots, k1);
    debug_assert_eq!(partition.membership().iter().filter(|&&m| m).count(), sample.num_sets());
    state_for(sample, partition, state.iteration + 1, metric)
}

/// Iterates assignment and center updates from `state` until the partition is
/// a fixed point or `max_iter` assignment passes have run.
pub(crate) fn iterate(
    mut state: ClusterState,
    sample: &MatchedSample,
    metric: Option<&SymMatrix>,
    max_iter: usize,
    rng: &mut Rng,
) -> (ClusterState, bool) {
    for _ in 0..max_iter {
        let next = assign_step(&state, sample, metric, rng);
        let fixed = next.partition == state.partition;
        state = next;
        if fixed {
            return (state, true);
        }
    }
    (state, false)
}

/// Best-of-`restarts` constrained 2-means. `metric = None` is the Euclidean
/// (vanilla) algorithm. Restarts run on the ambient rayon pool; each uses its
/// own derived seed so the result is independent of the worker count.
pub fn run_constrained_kmeans(sample: &MatchedSample, metric: Option<&SymMatrix>, config: &KMeansConfig) -> KMeansRun {
    assert!(config.max_iter >= 1 && config.restarts >= 1);
    let runs: Vec<(ClusterState, bool)> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(config.seed, r as u64));
            let init = init_partition(sample, &mut rng, metric);
            iterate(init, sample, metric, config.max_iter, &mut rng)
        })
        .collect();
    select_best(runs)
}

pub(crate) fn select_best(runs: Vec<(ClusterState, bool)>) -> KMeansRun {
    let restart_objectives: Vec<f64> = runs.iter().map(|(s, _)| s.objective).collect();
    let best = restart_objectives
        .iter()
        .enumerate()
        .fold(0, |best, (r, &obj)| if obj < restart_objectives[best] { r } else { best });
    let (state, converged) = runs.into_iter().nth(best).expect("at least one restart");
    KMeansRun {
        state,
        restart: best,
        converged,
        restart_objectives,
    }
}

/// `t = |Π1 ∩ T|`: the number of sets whose Π1 member is the treated unit.
pub fn cluster_test_statistic(partition: &Partition, sample: &MatchedSample) -> usize {
    assert_eq!(partition.num_sets(), sample.num_sets());
    (0..sample.num_sets())
        .filter(|&i| sample.is_treated(i, partition.pi1_slots()[i]))
        .count()
}
