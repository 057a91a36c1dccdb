//! Reference values computed by independent means: Monte Carlo, brute force
//! and cross-backend agreement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use netwelfare::config::{BackendChoice, CoefBox, EstimatorKind};
use netwelfare::crossfit::{crossfit_nuisance, make_folds};
use netwelfare::data::InterferenceDegree;
use netwelfare::exposure::Neighborhood;
use netwelfare::graph::Graph;
use netwelfare::nuisance::{fit_logistic, fit_outcome};
use netwelfare::pipeline::{fit_nuisances, NuisanceOptions, PropensitySource};
use netwelfare::policy::{
    encode_milp, parse_lp, solve, solve_branch_bound, solve_exact_cells, solve_heuristic, write_lp, BnbOptions,
    CellOptions, HeuristicOptions, PolicyClass, SolveOptions,
};
use netwelfare::sim::{
    baseline_ewm, baseline_random, correct_features, derived_rng, draw_world, gen_barabasi_albert, gen_geometric,
    run_benchmark, run_replication, simulate_outcomes_with_noise, true_mean, BenchConfig, Coefficients, DgpSpec,
    NetworkKind, World, CLASS_METHODS,
};
use netwelfare::welfare::{welfare_plugin, EffectTable, EstimationFrame, MeanTable};

fn erdos_renyi(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, edges, false).unwrap()
}

fn one_degree_hoods(g: &Graph) -> Vec<Neighborhood> {
    (0..g.n_nodes()).map(|i| Neighborhood::of(g, i, InterferenceDegree::One).unwrap()).collect()
}

fn random_table(g: &Graph, rng: &mut impl Rng) -> EffectTable {
    EffectTable::from_fn(g.n_nodes(), one_degree_hoods(g), |_, _| rng.random_range(0.0..1.0))
}

fn zero_noise_world(n: usize, coefs: &Coefficients, seed: u64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (graph, x) = gen_geometric(n, &mut rng).unwrap();
    let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let y = simulate_outcomes_with_noise(&graph, &x, &d, coefs, &vec![0.0; n]).unwrap();
    World { graph, x, d, y }
}

const COEFS: Coefficients = Coefficients { beta1: 1.0, beta2: -1.0, mu: 1.0, beta3: 1.5 };

#[test]
fn erdos_renyi_coloring_is_proper() {
    let g = erdos_renyi(50, 0.1, &mut ChaCha8Rng::seed_from_u64(3));
    let c = g.greedy_coloring();
    assert!(c.n_colors <= g.max_degree() + 1);
    for (i, j) in g.edges() {
        assert_ne!(c.colors[i], c.colors[j]);
    }
}

#[test]
fn geometric_average_degree_band() {
    for seed in 0..50 {
        let (g, _) = gen_geometric(100, &mut derived_rng(seed, &[7])).unwrap();
        let avg = 2.0 * g.n_edges() as f64 / 100.0;
        assert!((1.0..=6.0).contains(&avg), "seed {seed}: average degree {avg}");
    }
}

#[test]
fn barabasi_albert_is_heavier_tailed_than_erdos_renyi() {
    let mut wins = 0;
    for seed in 0..100 {
        let ba = gen_barabasi_albert(200, &mut derived_rng(seed, &[1])).unwrap();
        let p = ba.n_edges() as f64 / (200.0 * 199.0 / 2.0);
        let er = erdos_renyi(200, p, &mut derived_rng(seed, &[2]));
        wins += usize::from(ba.max_degree() > er.max_degree());
    }
    assert!(wins >= 80, "BA max degree larger in {wins} of 100 pairs");
}

#[test]
fn outcome_noise_has_unit_variance() {
    // node 0 has three neighbors; the noise of node 0 mixes four draws
    let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)], false).unwrap();
    let x = vec![vec![0.0; 4]; 4];
    let d = vec![false; 4];
    let zero = Coefficients::zero_spillover(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 100_000;
    let (mut s, mut ss) = (0.0, 0.0);
    for _ in 0..draws {
        let eta: Vec<f64> = (0..4).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let y = simulate_outcomes_with_noise(&g, &x, &d, &zero, &eta).unwrap()[0];
        s += y;
        ss += y * y;
    }
    let var = ss / draws as f64 - (s / draws as f64).powi(2);
    assert!((var - 1.0).abs() < 0.02, "variance {var}");
}

#[test]
fn logistic_recovers_independent_and_binary_designs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let z: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
    let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let m = fit_logistic(&z, &d).unwrap();
    assert!(m.coefficients[0].abs() < 3.0 * m.std_errors[0], "{:?}", m);
    assert!(m.coefficients[1].abs() < 3.0 * m.std_errors[1], "{:?}", m);

    let n = 20_000;
    let z: Vec<Vec<f64>> = (0..n).map(|i| vec![f64::from(u8::from(i % 2 == 0))]).collect();
    let d: Vec<bool> = z.iter().map(|r| rng.random_bool(if r[0] == 1.0 { 0.8 } else { 0.2 })).collect();
    let m = fit_logistic(&z, &d).unwrap();
    assert!((m.prob(&[1.0]) - 0.8).abs() < 0.02);
    assert!((m.prob(&[0.0]) - 0.2).abs() < 0.02);
}

#[test]
fn outcome_model_recovers_simulated_mean() {
    let spec = DgpSpec { n: 2000, network: NetworkKind::Geometric, coefficients: COEFS, treat_prob: 0.5 };
    let world = draw_world(&spec, &mut derived_rng(8, &[0])).unwrap();
    let ds = world.dataset().unwrap();
    let model = fit_outcome(&ds, &ds.sample_ids(), &correct_features()).unwrap();
    let frame = EstimationFrame::new(&ds, &ds.sample_ids()).unwrap();
    let means = MeanTable::from_model(&frame, &model);
    let (mut resid, mut err) = (0.0, 0.0);
    for (u, e) in frame.realized.iter().enumerate() {
        let e = e.unwrap();
        let fit = means.grids[u].get(e);
        let truth = true_mean(&COEFS, world.x[u][0], world.graph.degree(u), e.d, e.s1);
        resid += (world.y[u] - fit).powi(2);
        err += (fit - truth).powi(2);
    }
    let n = 2000.0;
    // the noise variance is one, so the residual mean square sits near one
    assert!(resid / n < 1.1, "residual mean square {}", resid / n);
    assert!(err / n < 0.1 * (resid / n), "estimation error {}", err / n);
}

#[test]
fn zero_noise_crossfit_is_exact() {
    let world = zero_noise_world(400, &COEFS, 21);
    let ds = world.dataset().unwrap();
    let folds = make_folds(&ds, 1).unwrap();
    let cf = crossfit_nuisance(&ds, &folds, &correct_features()).unwrap();
    let frame = EstimationFrame::new(&ds, &ds.sample_ids()).unwrap();
    let means = cf.means(&frame).unwrap();
    for (u, hood) in frame.hoods.iter().enumerate() {
        for d in [false, true] {
            for s in 0..=hood.l1() {
                let e = netwelfare::Exposure { d, s1: s, s2: 0 };
                let truth = true_mean(&COEFS, world.x[u][0], hood.l1(), d, s);
                assert!((means.grids[u].get(e) - truth).abs() < 1e-6, "unit {u} at {e:?}");
            }
        }
    }
}

#[test]
fn zero_noise_plugin_matches_true_welfare() {
    let world = zero_noise_world(150, &COEFS, 4);
    let ds = world.dataset().unwrap();
    let model = fit_outcome(&ds, &ds.sample_ids(), &correct_features()).unwrap();
    let frame = EstimationFrame::new(&ds, &ds.sample_ids()).unwrap();
    let means = MeanTable::from_model(&frame, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let policy: Vec<bool> = (0..150).map(|_| rng.random_bool(0.4)).collect();
        let est = welfare_plugin(&frame, &policy, &means).unwrap();
        assert!((est.value - world.true_welfare(&COEFS, &policy)).abs() < 1e-8);
    }
}

#[test]
fn heuristic_reaches_ninety_five_percent_of_exact() {
    let class = PolicyClass::linear(2, &CoefBox::default()).unwrap();
    for seed in 0..100 {
        let mut rng = derived_rng(seed, &[9]);
        let g = erdos_renyi(10, 0.3, &mut rng);
        let x: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let table = random_table(&g, &mut rng);
        let exact = solve_exact_cells(&table, &x, &class, None, &CellOptions::default()).unwrap();
        let h = solve_heuristic(&table, &x, &class, None, seed, &HeuristicOptions::default()).unwrap();
        assert!(h.value >= 0.95 * exact.value, "seed {seed}: {} vs {}", h.value, exact.value);
        assert!(h.value <= exact.value + 1e-12);
    }
}

#[test]
fn branch_and_bound_matches_enumeration() {
    let class = PolicyClass::explicit();
    for seed in 0..20 {
        let mut rng = derived_rng(seed, &[10]);
        let g = erdos_renyi(12, 0.25, &mut rng);
        let table = EffectTable::from_fn(12, one_degree_hoods(&g), |_, _| rng.random_range(-1.0..1.0));
        let exact = solve_exact_cells(&table, &[], &class, None, &CellOptions::default()).unwrap();
        let program = encode_milp(&table, &[], &class, None).unwrap();
        let bnb = solve_branch_bound(&program, &BnbOptions::default()).unwrap();
        assert!(bnb.certified);
        assert!((bnb.value - exact.value).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn lp_objective_round_trips_at_full_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = erdos_renyi(8, 0.4, &mut rng);
    let table = random_table(&g, &mut rng);
    let program = encode_milp(&table, &[], &PolicyClass::explicit(), Some(0.5)).unwrap();
    let parsed = parse_lp(&write_lp(&program)).unwrap();
    let expected: Vec<(String, f64)> =
        program.objective.iter().map(|&(j, c)| (program.variables[j].name.clone(), c)).collect();
    assert_eq!(parsed.objective, expected);
    assert_eq!(parsed.constant, program.objective_constant);
    let cap = parsed.rows.iter().find(|r| r.name == "capacity").unwrap();
    assert_eq!(cap.rhs, 4.0);
}

#[test]
fn oracle_bounds_every_class_method() {
    let cfg = BenchConfig { random_reps: 2, ..BenchConfig::default() };
    for rep in 0..4 {
        let records = run_replication(&cfg, rep, 60).unwrap();
        let oracle = records.iter().find(|r| r.method == "oracle").unwrap().welfare;
        for r in records.iter().filter(|r| CLASS_METHODS.contains(&r.method.as_str())) {
            assert!(r.welfare <= oracle + 1e-12, "rep {rep}: {} {} > oracle {oracle}", r.method, r.welfare);
        }
    }
}

#[test]
fn random_baseline_variance_shrinks_with_reps() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let weights: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
    let welfare = |a: &[bool]| a.iter().zip(&weights).filter(|(t, _)| **t).map(|(_, w)| w).sum::<f64>();
    let variance = |reps: usize, rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..300).map(|_| baseline_random(40, 0.3, reps, rng, welfare)).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let ratio = variance(10, &mut rng) / variance(1000, &mut rng);
    assert!((100.0 / 3.0..=300.0).contains(&ratio), "variance ratio {ratio}");
}

#[test]
/// Compares the outcome-model rule; the doubly robust one carries the
/// variance of exact-exposure weights and lands lower at this size.
fn zero_spillover_networked_and_plain_rules_agree() {
    let cfg = BenchConfig { sizes: vec![100], reps: 30, zero_spillover: true, random_reps: 1, ..BenchConfig::default() };
    let res = run_benchmark(&cfg).unwrap();
    let welfare = |m: &str| -> Vec<f64> { res.records.iter().filter(|r| r.method == m).map(|r| r.welfare).collect() };
    let diff: Vec<f64> = welfare("newm_plugin").iter().zip(welfare("ewm_aipw")).map(|(a, b)| a - b).collect();
    let k = diff.len() as f64;
    let mean = diff.iter().sum::<f64>() / k;
    let sd = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    assert!(mean.abs() <= 3.0 * sd / k.sqrt() + 1e-12, "paired difference {mean}, sd {sd}");
}

#[test]
fn negative_spillover_favors_the_networked_rule() {
    // treating a unit hurts its neighbors regardless of x1
    let coefs = Coefficients { beta1: 0.0, beta2: 0.0, mu: -1.0, beta3: 1.5 };
    let class = PolicyClass::linear(2, &CoefBox::default()).unwrap();
    let (mut newm, mut ewm) = (Vec::new(), Vec::new());
    for rep in 0..50u64 {
        let spec = DgpSpec { n: 100, network: NetworkKind::Geometric, coefficients: coefs, treat_prob: 0.5 };
        let train = draw_world(&spec, &mut derived_rng(rep, &[1])).unwrap();
        let eval = draw_world(&spec, &mut derived_rng(rep, &[2])).unwrap();
        let ds = train.dataset().unwrap();
        let opts = NuisanceOptions {
            features: correct_features(),
            crossfit_radius: None,
            trim: 0.01,
            propensity: PropensitySource::Fitted,
            ignore_network: false,
        };
        let table = fit_nuisances(&ds, &opts).unwrap().effect_table(EstimatorKind::Aipw).unwrap();
        let so = SolveOptions { backend: BackendChoice::Cells, ..SolveOptions::default() };
        let a = solve(&table, &ds.policy_matrix(), &class, &so).unwrap().policy.assign_rows(&eval.policy_rows()).unwrap();
        newm.push(eval.true_welfare(&coefs, &a));
        let b = baseline_ewm(&ds, &class, None, 0.01).unwrap().assign_rows(&eval.policy_rows()).unwrap();
        ewm.push(eval.true_welfare(&coefs, &b));
    }
    let (mn, me) = (netwelfare::sim::median(&newm), netwelfare::sim::median(&ewm));
    assert!(mn > me, "median NEWM {mn} vs EWM {me}");
}
