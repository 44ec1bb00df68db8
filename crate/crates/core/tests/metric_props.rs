use matchdiag_core::cluster::*;
use matchdiag_core::metric::*;
use matchdiag_core::model::{MatchedSample, SetUnits};
use matchdiag_core::numerics::{min_eigenvalue, sym_eig, SymMatrix};
use matchdiag_core::rng::{derive_seed, rng_from_seed, Rng};
use matchdiag_core::Error;
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sample_of(sets: Vec<Vec<Vec<f64>>>) -> MatchedSample {
    let d = sets[0][0].len();
    let sets = sets
        .into_iter()
        .enumerate()
        .map(|(i, covariates)| SetUnits {
            set_id: i.to_string(),
            treated: (0..covariates.len()).map(|j| j == 0).collect(),
            covariates,
            unit_ids: None,
            outcomes: None,
        })
        .collect();
    MatchedSample::new((0..d).map(|k| format!("x{k}")).collect(), sets).unwrap()
}

/// Gaussian sets with per-coordinate scales, treated slot drawn at random.
fn random_sample(seed: u64, i: usize, k1: usize, scales: &[f64]) -> MatchedSample {
    let mut rng = rng_from_seed(seed);
    let sets = (0..i)
        .map(|_| {
            (0..k1)
                .map(|_| scales.iter().map(|s| s * normal(&mut rng)).collect())
                .collect()
        })
        .collect();
    let s = sample_of(sets);
    let k1 = s.set_size();
    let mut treatment = vec![false; s.num_units()];
    for set in 0..s.num_sets() {
        treatment[set * k1 + rng.random_range(0..k1)] = true;
    }
    s.with_treatment(treatment).unwrap()
}

fn random_state(sample: &MatchedSample, seed: u64) -> ClusterState {
    init_partition(sample, &mut rng_from_seed(seed), None)
}

fn instance(inst: u64) -> (MatchedSample, ClusterState) {
    let mut rng = rng_from_seed(derive_seed(500, inst));
    let d = 1 + (inst as usize % 4);
    let k1 = 2 + (inst as usize % 3);
    let i = 5 + rng.random_range(0..40);
    let scales: Vec<f64> = (0..d).map(|_| 0.2 + 3.0 * rng.random::<f64>()).collect();
    let sample = random_sample(derive_seed(600, inst), i, k1, &scales);
    let state = random_state(&sample, inst);
    (sample, state)
}

fn centers_of(state: &ClusterState) -> (&[f64], &[f64]) {
    (&state.center1, &state.center2)
}

#[test]
fn diagonal_newton_descends_on_random_instances() {
    for inst in 0..50 {
        let (sample, state) = instance(inst);
        let m = learn_metric_diagonal(&sample, &state.partition, centers_of(&state), 50).unwrap();
        assert!(!m.g_trace.is_empty());
        for w in m.g_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()), "instance {inst}: {} -> {}", w[0], w[1]);
        }
        assert!(m.a.is_diagonal());
        assert!(m.a.diag().iter().all(|&a| a >= 0.0));
        let problem = MetricProblem::new(&sample, &state.partition, &state.center1, &state.center2);
        assert!((problem.similar_term(&m.a) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn full_projected_gradient_descends_on_random_instances() {
    for inst in 0..50 {
        let (sample, state) = instance(inst);
        let m = learn_metric_full(&sample, &state.partition, centers_of(&state), &FullMetricConfig::default()).unwrap();
        for w in m.g_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()), "instance {inst}: {} -> {}", w[0], w[1]);
        }
        assert!(min_eigenvalue(&m.a).unwrap() >= -1e-10);
    }
}

fn random_psd(rng: &mut Rng, d: usize) -> SymMatrix {
    let b: Vec<f64> = (0..d * d).map(|_| normal(rng)).collect();
    let mut data = vec![0.0; d * d];
    for p in 0..d {
        for q in 0..d {
            data[p * d + q] = (0..d).map(|k| b[p * d + k] * b[q * d + k]).sum();
        }
    }
    SymMatrix::from_row_major(d, data).unwrap()
}

#[test]
fn quadrupled_metric_gives_identical_partitions() {
    for inst in 0..50u64 {
        let (sample, state) = instance(inst);
        let mut rng = rng_from_seed(derive_seed(700, inst));
        let a = if inst % 2 == 0 {
            learn_metric_diagonal(&sample, &state.partition, centers_of(&state), 50).unwrap().a
        } else {
            random_psd(&mut rng, sample.dim())
        };
        let a4 = a.scaled(4.0);
        let one = assign_step(&state, &sample, Some(&a), &mut rng_from_seed(inst));
        let four = assign_step(&state, &sample, Some(&a4), &mut rng_from_seed(inst));
        assert_eq!(one.partition, four.partition, "instance {inst}");

        let cfg = KMeansConfig {
            seed: inst,
            max_iter: 100,
            restarts: 3,
        };
        let r1 = run_constrained_kmeans(&sample, Some(&a), &cfg);
        let r4 = run_constrained_kmeans(&sample, Some(&a4), &cfg);
        assert_eq!(r1.partition(), r4.partition(), "instance {inst}");
    }
}

/// Similar-term coefficient Σ (x − c)² of a one-dimensional configuration.
fn scatter_1d(sample: &MatchedSample, p: &Partition) -> f64 {
    let (c1, c2) = centers(sample, p);
    let mut q = 0.0;
    for i in 0..sample.num_sets() {
        for j in 0..sample.set_size() {
            let c = if p.pi1_slots()[i] == j { c1[0] } else { c2[0] };
            q += (sample.unit(i, j)[0] - c).powi(2);
        }
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn one_dimensional_optimum_has_closed_form(
        xs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..30),
        seed in any::<u64>(),
    ) {
        prop_assume!(xs.iter().any(|(a, b)| (a - b).abs() > 1e-3));
        let sample = sample_of(xs.iter().map(|&(a, b)| vec![vec![a], vec![b]]).collect());
        let state = random_state(&sample, seed);
        let q = scatter_1d(&sample, &state.partition);
        prop_assume!(q > 1e-6);
        let m = learn_metric_diagonal(&sample, &state.partition, centers_of(&state), 50).unwrap();
        let a = m.a.get(0, 0);
        prop_assert!((a - 1.0 / q).abs() <= 1e-6 * (1.0 / q), "a {} vs 1/q {}", a, 1.0 / q);
        // Before rescaling the optimum is 1/(2q): g* = 1/2 − ln(√(1/(2q)) Σw).
        let w: f64 = xs.iter().map(|(a, b)| (a - b).abs()).sum();
        let g_star = 0.5 - ((1.0 / (2.0 * q)).sqrt() * w).ln();
        let g_last = *m.g_trace.last().unwrap();
        prop_assert!((g_last - g_star).abs() <= 1e-6 * (1.0 + g_star.abs()));
    }
}

#[test]
fn coordinate_symmetric_data_gets_equal_weights() {
    let mut rng = rng_from_seed(31);
    let mut sets = Vec::new();
    for _ in 0..60 {
        let u: Vec<f64> = (0..3).map(|_| normal(&mut rng)).collect();
        let v: Vec<f64> = (0..3).map(|_| normal(&mut rng)).collect();
        sets.push(vec![u.clone(), v.clone()]);
        sets.push(vec![vec![u[1], u[0], u[2]], vec![v[1], v[0], v[2]]]);
    }
    let sample = sample_of(sets);
    let state = random_state(&sample, 2);
    // Mirror the partition so it is symmetric too.
    let slots: Vec<usize> = (0..sample.num_sets()).map(|i| state.partition.pi1_slots()[i - i % 2]).collect();
    let p = Partition::new(slots, 2);
    let (c1, c2) = centers(&sample, &p);
    let m = learn_metric_diagonal(&sample, &p, (&c1, &c2), 50).unwrap();
    let a = m.a.diag();
    assert!((a[0] - a[1]).abs() <= 0.05 * a[0].max(a[1]), "{a:?}");
}

/// Sets whose units differ by ±`gap` on coordinate 0 and by noise elsewhere,
/// partitioned along coordinate 0.
fn separated_on_first(seed: u64, i: usize, d: usize, gap: f64) -> (MatchedSample, Partition) {
    let mut rng = rng_from_seed(seed);
    let sets = (0..i)
        .map(|_| {
            let mut hi: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let mut lo: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            hi[0] = gap + 0.1 * normal(&mut rng);
            lo[0] = -gap + 0.1 * normal(&mut rng);
            vec![hi, lo]
        })
        .collect();
    let sample = sample_of(sets);
    let p = Partition::new(vec![0; i], 2);
    (sample, p)
}

#[test]
fn separating_coordinate_dominates_and_matches_grid_search() {
    let (sample, p) = separated_on_first(4, 40, 3, 1.0);
    let (c1, c2) = centers(&sample, &p);
    let m = learn_metric_diagonal(&sample, &p, (&c1, &c2), 50).unwrap();
    let a = m.a.diag();
    let rest = a[1..].iter().cloned().fold(0.0, f64::max);
    assert!(a[0] >= 5.0 * rest, "{a:?}");

    // Log-spaced grid over each diagonal entry.
    let problem = MetricProblem::new(&sample, &p, &c1, &c2);
    let grid: Vec<f64> = (0..=60).map(|k| 10f64.powf(-4.0 + 6.0 * k as f64 / 60.0)).collect();
    let mut best = f64::INFINITY;
    for &x in &grid {
        for &y in &grid {
            for &z in &grid {
                if let Ok(v) = problem.value(&SymMatrix::diagonal(&[x, y, z])) {
                    best = best.min(v);
                }
            }
        }
    }
    let learned = *m.g_trace.last().unwrap();
    assert!(learned <= best + 1e-9, "newton {learned} vs grid {best}");
}

#[test]
fn full_metric_on_spherical_data_is_nearly_scalar() {
    let sample = random_sample(12, 3000, 2, &[1.0, 1.0, 1.0]);
    let state = random_state(&sample, 5);
    let m = learn_metric_full(&sample, &state.partition, centers_of(&state), &FullMetricConfig::default()).unwrap();
    let e = sym_eig(&m.a).unwrap();
    let alpha = e.eigenvalues.iter().sum::<f64>() / 3.0;
    let spectral = e.eigenvalues.iter().map(|l| (l - alpha).abs()).fold(0.0, f64::max);
    assert!(spectral <= 0.1 * alpha, "{:?}", e.eigenvalues);
}

#[test]
fn full_metric_matches_diagonal_optimum_on_axis_aligned_data() {
    let sample = random_sample(21, 200, 2, &[1.0, 3.0]);
    let state = random_state(&sample, 9);
    let diag = learn_metric_diagonal(&sample, &state.partition, centers_of(&state), 50).unwrap();
    let full = learn_metric_full(&sample, &state.partition, centers_of(&state), &FullMetricConfig::default()).unwrap();
    let gd = *diag.g_trace.last().unwrap();
    let gf = *full.g_trace.last().unwrap();
    assert!((gf - gd).abs() <= 1e-3, "full {gf} vs diagonal {gd}");
}

#[test]
fn dform_on_whitened_data_reduces_to_diagonal() {
    let raw = random_sample(8, 80, 2, &[1.0, 2.0, 0.5]);
    let w = whitening(&raw).unwrap();
    let mut data = Vec::new();
    for u in 0..raw.num_units() {
        data.extend(w.mul_vec(raw.row(u)));
    }
    let white = raw.with_covariates(raw.covariate_names().to_vec(), data).unwrap();
    let state = random_state(&white, 3);
    let d = learn_metric_diagonal(&white, &state.partition, centers_of(&state), 50).unwrap();
    let f = learn_metric_dform(&white, &state.partition, centers_of(&state), 50).unwrap();
    let weights = f.dform_weights.as_ref().unwrap();
    for k in 0..3 {
        assert!((weights[k] - d.a.get(k, k)).abs() <= 1e-6 * d.a.max_abs(), "{weights:?} vs {:?}", d.a.diag());
        for l in 0..3 {
            assert!((f.a.get(k, l) - d.a.get(k, l)).abs() <= 1e-6 * d.a.max_abs());
        }
    }
}

#[test]
fn dform_highlights_the_unbalanced_covariate() {
    let (sample, p) = separated_on_first(17, 60, 4, 1.5);
    // Move the separating coordinate to position 2.
    let mut data = Vec::new();
    for u in 0..sample.num_units() {
        let mut r = sample.row(u).to_vec();
        r.swap(0, 2);
        data.extend(r);
    }
    let sample = sample.with_covariates(sample.covariate_names().to_vec(), data).unwrap();
    let (c1, c2) = centers(&sample, &p);
    let m = learn_metric_dform(&sample, &p, (&c1, &c2), 50).unwrap();
    let weights = m.dform_weights.unwrap();
    assert!(weights.iter().all(|&w| w >= 0.0));
    let argmax = (0..4).max_by(|&a, &b| weights[a].total_cmp(&weights[b])).unwrap();
    assert_eq!(argmax, 2, "{weights:?}");
    // A = W D W with the whitening transform.
    let w = whitening(&sample).unwrap();
    let rebuilt = SymMatrix::diagonal(&weights).congruence(&w);
    for k in 0..4 {
        for l in 0..4 {
            assert!((rebuilt.get(k, l) - m.a.get(k, l)).abs() <= 1e-9 * (1.0 + m.a.max_abs()));
        }
    }
}

#[test]
fn dform_rejects_duplicated_column() {
    let raw = random_sample(2, 20, 2, &[1.0, 1.0]);
    let mut data = Vec::new();
    for u in 0..raw.num_units() {
        let r = raw.row(u);
        data.extend([r[0], r[1], r[0]]);
    }
    let dup = raw
        .with_covariates(vec!["a".into(), "b".into(), "c".into()], data)
        .unwrap();
    let state = random_state(&dup, 1);
    assert!(matches!(
        learn_metric_dform(&dup, &state.partition, centers_of(&state), 50),
        Err(Error::SingularMatrix { .. })
    ));
}

#[test]
fn euclidean_form_reproduces_vanilla_run() {
    let sample = random_sample(40, 50, 3, &[1.0, 2.0]);
    let cfg = KMeansConfig {
        seed: 6,
        ..KMeansConfig::default()
    };
    let vanilla = run_constrained_kmeans(&sample, None, &cfg);
    let via_metric = run_metric_kmeans(&sample, &MetricKMeansConfig::new(MetricForm::Euclidean, cfg)).unwrap();
    assert_eq!(vanilla.partition(), via_metric.partition());
    assert_eq!(vanilla.state.objective.to_bits(), via_metric.run.state.objective.to_bits());
    assert_eq!(vanilla.restart_objectives, via_metric.run.restart_objectives);
}

/// Treated units sit one unit higher on a low-noise coordinate; the remaining
/// coordinates carry large unrelated noise.
fn anisotropic(seed: u64, i: usize) -> MatchedSample {
    let mut rng = rng_from_seed(seed);
    let sets = (0..i)
        .map(|_| {
            let unit = |rng: &mut Rng, shift: f64| -> Vec<f64> {
                let mut x = vec![shift + 0.2 * normal(rng)];
                x.extend((0..4).map(|_| 5.0 * normal(rng)));
                x
            };
            let t = unit(&mut rng, 1.0);
            let c = unit(&mut rng, 0.0);
            vec![t, c]
        })
        .collect();
    sample_of(sets)
}

#[test]
fn metric_run_recovers_signal_hidden_by_noisy_axes() {
    let mut wins = 0;
    for seed in 0..100u64 {
        let sample = anisotropic(derive_seed(900, seed), 100);
        let cfg = KMeansConfig {
            seed,
            max_iter: 100,
            restarts: 5,
        };
        let vanilla = run_constrained_kmeans(&sample, None, &cfg);
        let metric = run_metric_kmeans(&sample, &MetricKMeansConfig::new(MetricForm::Diagonal, cfg)).unwrap();
        let half = sample.num_sets() as f64 / 2.0;
        let tv = cluster_test_statistic(vanilla.partition(), &sample) as f64;
        let tm = cluster_test_statistic(metric.partition(), &sample) as f64;
        if (tm - half).abs() > (tv - half).abs() {
            wins += 1;
        }
    }
    assert!(wins >= 80, "metric run ahead on {wins}/100 seeds");
}

#[test]
fn metric_run_ignores_treatment_labels() {
    for form in [MetricForm::Diagonal, MetricForm::Full, MetricForm::Dform] {
        for inst in 0..5u64 {
            let sample = random_sample(300 + inst, 30, 2 + inst as usize % 2, &[1.0, 0.5, 2.0]);
            let k1 = sample.set_size();
            let mut rng = rng_from_seed(inst);
            let mut treatment = vec![false; sample.num_units()];
            for s in 0..sample.num_sets() {
                treatment[s * k1 + rng.random_range(0..k1)] = true;
            }
            let relabeled = sample.with_treatment(treatment).unwrap();
            let cfg = MetricKMeansConfig::new(
                form,
                KMeansConfig {
                    seed: 11,
                    max_iter: 30,
                    restarts: 3,
                },
            );
            let a = run_metric_kmeans(&sample, &cfg).unwrap();
            let b = run_metric_kmeans(&relabeled, &cfg).unwrap();
            assert_eq!(a.partition(), b.partition());
            assert_eq!(a.metric, b.metric);
            assert_eq!(a.run.state.objective.to_bits(), b.run.state.objective.to_bits());
        }
    }
}
