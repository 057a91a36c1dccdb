//! Synthetic networks and outcomes, baselines, and the Monte Carlo benchmark
//! comparing network-aware policy learning with methods that ignore the
//! network.
//!
//! Outcome model:
//! `Y_i = |N_i|^-1 (X_i b1 + X_i b2 D_i + mu) sum_{k in N_i} D_k + X_i b3 D_i + eps_i`
//! with `eps_i = eta_i / sqrt(2) + sum_{k in N_i} eta_k / sqrt(2 |N_i|)`, where
//! `X_i` is the first covariate and `|N_i|` is one for isolated units.

use std::io::Write as _;
use std::path::Path;

use log::info;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BackendChoice, CoefBox, EstimatorKind};
use crate::data::{Dataset, InterferenceDegree, Role, UnitRecord, XColumn};
use crate::error::{Error, Result};
use crate::exposure::{Exposure, Neighborhood};
use crate::graph::{Graph, NodeId};
use crate::nuisance::{Factor, FeatureMap};
use crate::pipeline::{fit_nuisances, NuisanceOptions, PropensitySource};
use crate::policy::{solve, Policy, PolicyClass, SolveOptions};
use crate::welfare::{mean_sequential, EffectTable};

/// Number of simulated covariates.
pub const N_COVARIATES: usize = 4;

/// Network generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Geometric,
    BarabasiAlbert,
}

impl std::str::FromStr for NetworkKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(Self::Geometric),
            "barabasi" | "barabasi_albert" | "ba" => Ok(Self::BarabasiAlbert),
            other => Err(Error::Config(format!("unknown network generator `{other}`"))),
        }
    }
}

/// Outcome coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub beta1: f64,
    pub beta2: f64,
    pub mu: f64,
    pub beta3: f64,
}

impl Coefficients {
    /// `beta1, beta2, mu` uniform on `{-1, 1}`, `beta3` uniform on `{-1.5, 1.5}`.
    pub fn draw(rng: &mut impl Rng) -> Self {
        let mut sign = || if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let (beta1, beta2, mu) = (sign(), sign(), sign());
        Coefficients { beta1, beta2, mu, beta3: 1.5 * sign() }
    }

    pub fn zero_spillover(beta3: f64) -> Self {
        Coefficients { beta1: 0.0, beta2: 0.0, mu: 0.0, beta3 }
    }
}

/// Data-generating process of one simulated world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub network: NetworkKind,
    pub coefficients: Coefficients,
    /// Probability of treatment, independent across units.
    pub treat_prob: f64,
}

/// A simulated sample: covariates, network, treatments and outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub graph: Graph,
    pub x: Vec<Vec<f64>>,
    pub d: Vec<bool>,
    pub y: Vec<f64>,
}

fn uniform_covariates(n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..N_COVARIATES).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Connection radius `sqrt(4 / (2.75 n))`.
pub fn geometric_radius(n: usize) -> f64 {
    (4.0 / (2.75 * n as f64)).sqrt()
}

/// Geometric graph on covariates 2 and 4: `i ~ j` when
/// `|x_i2 - x_j2| / 2 + |x_i4 - x_j4| / 2 <= r_n`.
pub fn geometric_graph(x: &[Vec<f64>]) -> Graph {
    let n = x.len();
    let r = geometric_radius(n);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if (x[i][1] - x[j][1]).abs() / 2.0 + (x[i][3] - x[j][3]).abs() / 2.0 <= r {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, edges, false).expect("generated edges are valid")
}

/// Draws covariates and the geometric graph built from them.
pub fn gen_geometric(n: usize, rng: &mut impl Rng) -> Result<(Graph, Vec<Vec<f64>>)> {
    if n < 2 {
        return Err(Error::Config("geometric networks need n >= 2".into()));
    }
    let x = uniform_covariates(n, rng);
    Ok((geometric_graph(&x), x))
}

/// Erdos-Renyi core on `ceil(n/5)` nodes with edge probability `10/n`, then
/// every further node attaches one edge to an existing node chosen with
/// probability proportional to its degree (uniformly while the graph has no
/// edges).
pub fn gen_barabasi_albert(n: usize, rng: &mut impl Rng) -> Result<Graph> {
    if n < 10 {
        return Err(Error::Config("Barabasi-Albert networks need n >= 10".into()));
    }
    let core = n.div_ceil(5);
    let p = (10.0 / n as f64).min(1.0);
    let mut edges = Vec::new();
    // endpoint list: each node appears once per incident edge
    let mut ends: Vec<NodeId> = Vec::new();
    for i in 0..core {
        for j in i + 1..core {
            if rng.random_bool(p) {
                edges.push((i, j));
                ends.extend([i, j]);
            }
        }
    }
    for v in core..n {
        let w = if ends.is_empty() { rng.random_range(0..v) } else { ends[rng.random_range(0..ends.len())] };
        edges.push((w, v));
        ends.extend([w, v]);
    }
    Graph::from_edges(n, edges, false)
}

/// Conditional mean of unit `i` given its own treatment and treated-neighbor count.
pub fn true_mean(coefs: &Coefficients, x1: f64, degree: usize, d: bool, s: usize) -> f64 {
    let dd = f64::from(u8::from(d));
    let spill = (x1 * coefs.beta1 + x1 * coefs.beta2 * dd + coefs.mu) * s as f64 / degree.max(1) as f64;
    spill + x1 * coefs.beta3 * dd
}

/// Outcomes for given noise draws `eta`.
pub fn simulate_outcomes_with_noise(
    graph: &Graph,
    x: &[Vec<f64>],
    d: &[bool],
    coefs: &Coefficients,
    eta: &[f64],
) -> Result<Vec<f64>> {
    let n = graph.n_nodes();
    if d.len() != n || x.len() != n || eta.len() != n {
        return Err(Error::Input(format!("simulate_outcomes: inputs must have length {n}")));
    }
    Ok((0..n)
        .map(|i| {
            let nb = graph.adj(i);
            let l = nb.len().max(1) as f64;
            let s = nb.iter().filter(|&&k| d[k]).count();
            let noise = eta[i] / 2f64.sqrt() + nb.iter().map(|&k| eta[k]).sum::<f64>() / (2.0 * l).sqrt();
            true_mean(coefs, x[i][0], nb.len(), d[i], s) + noise
        })
        .collect())
}

pub fn simulate_outcomes(
    graph: &Graph,
    x: &[Vec<f64>],
    d: &[bool],
    coefs: &Coefficients,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let eta: Vec<f64> = (0..graph.n_nodes()).map(|_| rng.sample(StandardNormal)).collect();
    simulate_outcomes_with_noise(graph, x, d, coefs, &eta)
}

/// Draws a full world from the DGP.
pub fn draw_world(spec: &DgpSpec, rng: &mut impl Rng) -> Result<World> {
    let (graph, x) = match spec.network {
        NetworkKind::Geometric => gen_geometric(spec.n, rng)?,
        NetworkKind::BarabasiAlbert => {
            let g = gen_barabasi_albert(spec.n, rng)?;
            (g, uniform_covariates(spec.n, rng))
        }
    };
    let d: Vec<bool> = (0..spec.n).map(|_| rng.random_bool(spec.treat_prob)).collect();
    let y = simulate_outcomes(&graph, &x, &d, &spec.coefficients, rng)?;
    Ok(World { graph, x, d, y })
}

pub fn covariate_names() -> Vec<String> {
    (1..=N_COVARIATES).map(|j| format!("x{j}")).collect()
}

impl World {
    /// Dataset with every node a sample unit and policy covariates `x1, x2`.
    pub fn dataset(&self) -> Result<Dataset> {
        let units = (0..self.graph.n_nodes())
            .map(|i| UnitRecord {
                id: i,
                outcome: Some(self.y[i]),
                treatment: Some(self.d[i]),
                covariates: self.x[i].clone(),
                policy_covariates: vec![],
                role: Role::Sample,
                rho: 1.0,
            })
            .collect();
        Dataset::new(
            self.graph.clone(),
            units,
            covariate_names(),
            vec![XColumn::Covariate(0), XColumn::Covariate(1)],
            None,
            InterferenceDegree::One,
        )
    }

    /// Welfare `(1/n) sum_i m_i(assignment)` under the true conditional mean.
    pub fn true_welfare(&self, coefs: &Coefficients, assignment: &[bool]) -> f64 {
        let terms: Vec<f64> = (0..self.graph.n_nodes())
            .map(|i| {
                let nb = self.graph.adj(i);
                let s = nb.iter().filter(|&&k| assignment[k]).count();
                true_mean(coefs, self.x[i][0], nb.len(), assignment[i], s)
            })
            .collect();
        mean_sequential(&terms)
    }

    /// Effect table holding the true conditional mean.
    pub fn true_table(&self, coefs: &Coefficients) -> EffectTable {
        let n = self.graph.n_nodes();
        let hoods: Vec<Neighborhood> = (0..n)
            .map(|i| Neighborhood { unit: i, first: self.graph.adj(i).to_vec(), second: vec![] })
            .collect();
        EffectTable::from_fn(n, hoods, |u, e: Exposure| true_mean(coefs, self.x[u][0], self.graph.degree(u), e.d, e.s1))
    }

    /// Policy covariates `(x1, x2)` of every node.
    pub fn policy_rows(&self) -> Vec<Vec<f64>> {
        self.x.iter().map(|r| r[..2].to_vec()).collect()
    }
}

/// Outcome basis matching the simulated conditional mean.
pub fn correct_features() -> FeatureMap {
    use Factor::*;
    let x1 = Z(0);
    FeatureMap::from_factor_terms(
        vec![vec![], vec![D], vec![Frac1], vec![x1, Frac1], vec![D, x1, Frac1], vec![D, x1]],
        &covariate_names(),
    )
}

/// Treats the `floor(K n)` highest-degree units; ties go to the smaller id.
pub fn baseline_degree_centrality(graph: &Graph, k: f64) -> Vec<bool> {
    let all: Vec<NodeId> = (0..graph.n_nodes()).collect();
    degree_centrality_among(graph, &all, k)
}

/// Degree targeting restricted to `units`: the `floor(K |units|)` members of
/// highest degree are treated.
pub fn degree_centrality_among(graph: &Graph, units: &[NodeId], k: f64) -> Vec<bool> {
    let count = crate::policy::capacity_limit(Some(k), units.len()).unwrap_or(units.len()).min(units.len());
    let mut order = units.to_vec();
    order.sort_by(|&a, &b| graph.degree(b).cmp(&graph.degree(a)).then(a.cmp(&b)));
    let mut a = vec![false; graph.n_nodes()];
    order.iter().take(count).for_each(|&i| a[i] = true);
    a
}

/// Mean welfare over `reps` uniformly random sets of `floor(K n)` treated units.
pub fn baseline_random(n: usize, k: f64, reps: usize, rng: &mut impl Rng, welfare: impl FnMut(&[bool]) -> f64) -> f64 {
    let all: Vec<NodeId> = (0..n).collect();
    random_among(n, &all, k, reps, rng, welfare)
}

/// Random seeding restricted to `units`.
pub fn random_among(
    n_nodes: usize,
    units: &[NodeId],
    k: f64,
    reps: usize,
    rng: &mut impl Rng,
    mut welfare: impl FnMut(&[bool]) -> f64,
) -> f64 {
    let count = crate::policy::capacity_limit(Some(k), units.len()).unwrap_or(units.len()).min(units.len());
    let draws: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let mut a = vec![false; n_nodes];
            sample(rng, units.len(), count).iter().for_each(|j| a[units[j]] = true);
            welfare(&a)
        })
        .collect();
    mean_sequential(&draws)
}

/// Policy maximizing the no-interference AIPW criterion over the class.
pub fn baseline_ewm(dataset: &Dataset, class: &PolicyClass, capacity: Option<f64>, trim: f64) -> Result<Policy> {
    let opts = NuisanceOptions {
        features: FeatureMap::no_interference(&dataset.covariate_names),
        crossfit_radius: None,
        trim,
        propensity: PropensitySource::Fitted,
        ignore_network: true,
    };
    let table = fit_nuisances(dataset, &opts)?.effect_table(EstimatorKind::Aipw)?;
    let so = SolveOptions { capacity, ..SolveOptions::default() };
    Ok(solve(&table, &dataset.policy_matrix(), class, &so)?.policy)
}

/// Coefficient redraw protocol across sample sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redraw {
    /// One coefficient draw per replication, shared by every sample size.
    PerReplication,
    /// A fresh coefficient draw for every (replication, sample size).
    PerSampleSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub network: NetworkKind,
    pub seed: u64,
    pub trim: f64,
    /// Treated share used by the degree and random baselines.
    pub baseline_share: f64,
    pub random_reps: usize,
    pub redraw: Redraw,
    pub crossfit_radius: Option<usize>,
    pub backend: BackendChoice,
    /// Forces `beta1 = beta2 = mu = 0`.
    pub zero_spillover: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![100, 200],
            reps: 50,
            network: NetworkKind::Geometric,
            seed: 0,
            trim: 0.01,
            baseline_share: 0.5,
            random_reps: 20,
            redraw: Redraw::PerReplication,
            crossfit_radius: None,
            backend: BackendChoice::Auto,
            zero_spillover: false,
        }
    }
}

/// Methods reported by the benchmark, in output order.
pub const METHODS: [&str; 7] = ["newm_aipw", "newm_plugin", "ewm_aipw", "ewm_ipw", "degree", "random", "oracle"];

/// Methods whose policies belong to the linear class (bounded by the oracle).
pub const CLASS_METHODS: [&str; 4] = ["newm_aipw", "newm_plugin", "ewm_aipw", "ewm_ipw"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub rep: usize,
    pub n: usize,
    pub method: String,
    pub welfare: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub n: usize,
    pub method: String,
    pub median_welfare: f64,
    pub median_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub config: BenchConfig,
    pub records: Vec<BenchRecord>,
    pub summary: Vec<MethodSummary>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream id derived from a tuple of labels.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts.iter().fold(0x1234_5678, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Generator for `(master seed, labels...)`.
pub fn derived_rng(master: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream_id(parts));
    rng
}

const TAG_COEF: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_EVAL: u64 = 3;
const TAG_RANDOM: u64 = 4;

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m == 0 {
        f64::NAN
    } else if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Out-of-sample welfare of every method for one replication and size.
pub fn run_replication(cfg: &BenchConfig, rep: usize, n: usize) -> Result<Vec<BenchRecord>> {
    let coef_parts: Vec<u64> = match cfg.redraw {
        Redraw::PerReplication => vec![TAG_COEF, rep as u64],
        Redraw::PerSampleSize => vec![TAG_COEF, rep as u64, n as u64],
    };
    let mut coefs = Coefficients::draw(&mut derived_rng(cfg.seed, &coef_parts));
    if cfg.zero_spillover {
        coefs = Coefficients::zero_spillover(coefs.beta3);
    }
    let spec = DgpSpec { n, network: cfg.network, coefficients: coefs, treat_prob: 0.5 };
    let train = draw_world(&spec, &mut derived_rng(cfg.seed, &[TAG_TRAIN, rep as u64, n as u64]))?;
    let eval = draw_world(&spec, &mut derived_rng(cfg.seed, &[TAG_EVAL, rep as u64, n as u64]))?;
    let ds = train.dataset()?;
    let class = PolicyClass::linear(2, &CoefBox::default())?.with_covariates(vec!["x1".into(), "x2".into()]);
    let so = SolveOptions { backend: cfg.backend, seed: stream_id(&[rep as u64, n as u64]), ..SolveOptions::default() };
    let x_train = ds.policy_matrix();
    let x_eval = eval.policy_rows();

    let newm = NuisanceOptions {
        features: correct_features(),
        crossfit_radius: cfg.crossfit_radius,
        trim: cfg.trim,
        propensity: PropensitySource::Fitted,
        ignore_network: false,
    };
    let ewm = NuisanceOptions {
        features: FeatureMap::no_interference(&ds.covariate_names),
        crossfit_radius: None,
        trim: cfg.trim,
        propensity: PropensitySource::Fitted,
        ignore_network: true,
    };
    let ewm_known = NuisanceOptions { propensity: PropensitySource::Known(spec.treat_prob), ..ewm.clone() };
    let newm_fit = fit_nuisances(&ds, &newm)?;
    let ewm_fit = fit_nuisances(&ds, &ewm)?;
    let ewm_known_fit = fit_nuisances(&ds, &ewm_known)?;
    let tables = [
        ("newm_aipw", newm_fit.effect_table(EstimatorKind::Aipw)?),
        ("newm_plugin", newm_fit.effect_table(EstimatorKind::Plugin)?),
        ("ewm_aipw", ewm_fit.effect_table(EstimatorKind::Aipw)?),
        ("ewm_ipw", ewm_known_fit.effect_table(EstimatorKind::Ipw)?),
    ];
    let mut out = Vec::new();
    let mut push = |method: &str, welfare: f64| out.push(BenchRecord { rep, n, method: method.into(), welfare });
    for (name, table) in &tables {
        let policy = solve(table, &x_train, &class, &so)?.policy;
        let a = policy.assign_rows(&x_eval)?;
        push(name, eval.true_welfare(&coefs, &a));
    }
    let deg = baseline_degree_centrality(&eval.graph, cfg.baseline_share);
    push("degree", eval.true_welfare(&coefs, &deg));
    let mut rng = derived_rng(cfg.seed, &[TAG_RANDOM, rep as u64, n as u64]);
    push("random", baseline_random(n, cfg.baseline_share, cfg.random_reps, &mut rng, |a| eval.true_welfare(&coefs, a)));
    let oracle = solve(&eval.true_table(&coefs), &x_eval, &class, &so)?;
    push("oracle", eval.true_welfare(&coefs, &oracle.assignment));
    Ok(out)
}

/// Runs every (replication, size) pair in parallel and aggregates in a fixed order.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchResult> {
    let jobs: Vec<(usize, usize)> = (0..cfg.reps).flat_map(|r| cfg.sizes.iter().map(move |&n| (r, n))).collect();
    let results: Vec<Vec<BenchRecord>> = jobs.par_iter().map(|&(r, n)| run_replication(cfg, r, n)).collect::<Result<_>>()?;
    let records: Vec<BenchRecord> = results.into_iter().flatten().collect();
    let mut summary = Vec::new();
    for &n in &cfg.sizes {
        let oracle: Vec<f64> = records.iter().filter(|r| r.n == n && r.method == "oracle").map(|r| r.welfare).collect();
        for m in METHODS {
            let w: Vec<f64> = records.iter().filter(|r| r.n == n && r.method == m).map(|r| r.welfare).collect();
            let regret: Vec<f64> = w.iter().zip(&oracle).map(|(a, o)| o - a).collect();
            summary.push(MethodSummary { n, method: m.into(), median_welfare: median(&w), median_regret: median(&regret) });
        }
    }
    info!("benchmark finished: {} records", records.len());
    Ok(BenchResult { config: cfg.clone(), records, summary })
}

impl BenchResult {
    pub fn summary_for(&self, n: usize, method: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.n == n && s.method == method)
    }

    /// Writes `rep,n,method,welfare`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rep", "n", "method", "welfare"])?;
        for r in &self.records {
            w.write_record([r.rep.to_string(), r.n.to_string(), r.method.clone(), format!("{:?}", r.welfare)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &serde_json::json!({ "config": self.config, "summary": self.summary }))?;
        writeln!(f)?;
        Ok(())
    }
}
