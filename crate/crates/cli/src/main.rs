use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use netwelfare::config::ExperimentConfig;
use netwelfare::data::{load_dataset, Role};
use netwelfare::error::{Error, ErrorClass, Result};
use netwelfare::nuisance::{fit_outcome, fit_treatment, PropensityTable};
use netwelfare::pipeline::{build_program, fit_and_optimize, fit_nuisances, nuisance_options};
use netwelfare::policy::{export_lp, parse_lp};
use netwelfare::policy::{capacity_limit, treated_count, Policy};
use netwelfare::sim::{self, BenchConfig, Coefficients, DgpSpec, NetworkKind, Redraw};
use netwelfare::welfare::{welfare_aipw, welfare_plugin, EstimationFrame, MeanTable};
use netwelfare::Dataset;

#[derive(Parser)]
#[command(name = "netwelfare", version, about = "Policy learning under network interference")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command. Flags override values from `--config`.
#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    nodes: Option<String>,
    #[arg(long, global = true)]
    edges: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    capacity: Option<String>,
    #[arg(long, global = true)]
    estimator: Option<String>,
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true)]
    trim: Option<String>,
    #[arg(long = "x-columns", global = true)]
    x_columns: Option<String>,
    #[arg(long = "crossfit-radius", global = true)]
    crossfit_radius: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and write nodes/edges CSV files.
    Simulate {
        #[arg(long, default_value = "geometric")]
        dgp: String,
        #[arg(long)]
        n: usize,
        #[arg(long = "out-dir", default_value = ".")]
        out_dir: PathBuf,
        /// Share of units (highest ids) marked as policy targets.
        #[arg(long = "target-fraction", default_value_t = 0.0)]
        target_fraction: f64,
    },
    /// Fit nuisance models and report propensity diagnostics.
    Fit {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the cross-fitting fold assignment as CSV.
        #[arg(long = "folds-out")]
        folds_out: Option<PathBuf>,
    },
    /// Fit nuisances and maximize estimated welfare over the policy class.
    Optimize {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write `id,treat` for every node.
        #[arg(long = "assignment-out")]
        assignment_out: Option<PathBuf>,
        #[arg(long = "export-lp")]
        export_lp: Option<PathBuf>,
    },
    /// Estimate the welfare of a given policy on the target units.
    Evaluate {
        /// Policy JSON, or a report from `optimize`.
        #[arg(long)]
        policy: PathBuf,
        /// Comma-separated: degree, random, treat_all, treat_none.
        #[arg(long, default_value = "")]
        baselines: String,
        #[arg(long = "random-reps", default_value_t = 20)]
        random_reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo comparison of policy learning methods.
    Benchmark {
        #[arg(long, default_value = "100,200")]
        sizes: String,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value = "geometric")]
        network: String,
        /// `per_replication` or `per_sample_size`.
        #[arg(long, default_value = "per_replication")]
        redraw: String,
        #[arg(long = "random-reps", default_value_t = 20)]
        random_reps: usize,
        #[arg(long = "baseline-share", default_value_t = 0.5)]
        baseline_share: f64,
        #[arg(long = "out-dir", default_value = ".")]
        out_dir: PathBuf,
    },
    /// Write the integer program in LP format.
    ExportLp {
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Integrity => 3,
        ErrorClass::Numerical => 4,
        ErrorClass::Backend => 5,
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    let flags: [(&str, Option<String>); 8] = [
        ("nodes", c.nodes.clone()),
        ("edges", c.edges.clone()),
        ("seed", c.seed.map(|s| s.to_string())),
        ("capacity", c.capacity.clone()),
        ("estimator", c.estimator.clone()),
        ("backend", c.backend.clone()),
        ("trim", c.trim.clone()),
        ("x_columns", c.x_columns.clone()),
    ];
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    if let Some(r) = c.crossfit_radius {
        cfg.crossfit = true;
        cfg.crossfit_radius = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_seed(cfg: &ExperimentConfig, command: &str) -> Result<u64> {
    cfg.seed
        .ok_or_else(|| Error::Config(format!("`{command}` is stochastic and needs --seed (or `seed` in the config)")))
}

fn load(cfg: &ExperimentConfig) -> Result<Dataset> {
    let (nodes, edges) = cfg.validate_inputs()?;
    load_dataset(nodes, edges, cfg)
}

fn check_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::Config(format!("output directory {} does not exist", dir.display())))
    }
}

fn check_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => check_dir(p),
        _ => Ok(()),
    }
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig, dgp: &str, n: usize, out_dir: &Path, target_fraction: f64) -> Result<()> {
    let seed = require_seed(cfg, "simulate")?;
    let network: NetworkKind = dgp.parse()?;
    if !(0.0..1.0).contains(&target_fraction) {
        return Err(Error::Config(format!("target-fraction must lie in [0, 1), got {target_fraction}")));
    }
    check_dir(out_dir)?;
    let coefficients = Coefficients::draw(&mut sim::derived_rng(seed, &[0]));
    let spec = DgpSpec { n, network, coefficients, treat_prob: 0.5 };
    let world = sim::draw_world(&spec, &mut sim::derived_rng(seed, &[1]))?;
    let mut ds = world.dataset()?;
    let n_target = (target_fraction * n as f64).floor() as usize;
    for u in ds.units.iter_mut().skip(n - n_target) {
        u.role = Role::Target;
    }
    ds.write_csv(out_dir.join("nodes.csv"), out_dir.join("edges.csv"))?;
    emit(&json!({ "seed": seed, "dgp": spec, "targets": n_target }), Some(&out_dir.join("dgp.json")))?;
    info!("wrote {n} nodes and {} edges to {}", ds.graph.n_edges(), out_dir.display());
    Ok(())
}

fn cmd_fit(cfg: &ExperimentConfig, out: Option<&Path>, folds_out: Option<&Path>) -> Result<()> {
    let ds = load(cfg)?;
    out.map(check_parent).transpose()?;
    folds_out.map(check_parent).transpose()?;
    let opts = nuisance_options(&ds, cfg)?;
    let nu = fit_nuisances(&ds, &opts)?;
    if folds_out.is_some() && nu.folds.is_none() {
        return Err(Error::Config("--folds-out needs cross-fitting (--crossfit-radius)".into()));
    }
    let propensity = nu.propensity.as_ref().map(|p| {
        let min = p.diagnostics().iter().map(|d| d.min).fold(f64::INFINITY, f64::min);
        json!({
            "trim": cfg.trim,
            "min": if min.is_finite() { Some(min) } else { None },
            "trimmed_cells": p.trimmed_entries(),
            "bucketed": p.bucketed,
        })
    });
    let report = json!({
        "units": nu.frame.len(),
        "features": opts.features.names(),
        "outcome_coefficients": nu.outcome.as_ref().map(|m| &m.coefficients),
        "treatment": nu.treatment,
        "crossfit": nu.folds.as_ref().map(|f| json!({
            "radius": f.radius,
            "folds": f.n_folds(),
            "fallbacks": nu.crossfit.as_ref().map(|c| c.fallbacks.len()),
        })),
        "propensity": propensity,
    });
    if let (Some(p), Some(f)) = (folds_out, &nu.folds) {
        f.write_csv(p)?;
    }
    emit(&report, out)
}

fn cmd_optimize(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    assignment_out: Option<&Path>,
    lp_out: Option<&Path>,
) -> Result<()> {
    if matches!(cfg.backend, netwelfare::BackendChoice::Heuristic | netwelfare::BackendChoice::Auto) {
        require_seed(cfg, "optimize")?;
    }
    let ds = load(cfg)?;
    for p in [out, assignment_out, lp_out].into_iter().flatten() {
        check_parent(p)?;
    }
    let report = fit_and_optimize(&ds, cfg)?;
    let program = lp_out.map(|_| build_program(&ds, cfg)).transpose()?;
    let units = report.table.units();
    let summary = json!({
        "policy": report.solve.policy,
        "backend": report.solve.backend,
        "estimator": cfg.estimator,
        "value": report.solve.value,
        "certified": report.solve.certified,
        "explored": report.solve.explored,
        "units": units.len(),
        "treated": treated_count(&report.solve.assignment, &units),
        "capacity_limit": capacity_limit(cfg.capacity, units.len()),
        "capacity_diagnostic": report.capacity,
        "crossfit_folds": report.nuisances.folds.as_ref().map(|f| f.n_folds()),
    });
    if let (Some(path), Some(program)) = (lp_out, &program) {
        export_lp(program, path)?;
        parse_lp(&std::fs::read_to_string(path)?)?;
    }
    if let Some(p) = assignment_out {
        let mut w = csv::Writer::from_path(p).map_err(Error::from)?;
        w.write_record(["id", "treat"]).map_err(Error::from)?;
        for (i, &a) in report.solve.assignment.iter().enumerate() {
            w.write_record([i.to_string(), u8::from(a).to_string()]).map_err(Error::from)?;
        }
        w.flush()?;
    }
    emit(&summary, out)
}

fn read_policy(path: &Path) -> Result<Policy> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read policy file {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)?;
    let v = v.get("policy").cloned().unwrap_or(v);
    Ok(serde_json::from_value(v)?)
}

#[derive(Serialize)]
struct EvalRow {
    policy: String,
    treated: usize,
    plugin: f64,
    aipw: Option<f64>,
}

fn cmd_evaluate(cfg: &ExperimentConfig, policy: &Path, baselines: &str, random_reps: usize, out: Option<&Path>) -> Result<()> {
    let baselines: Vec<&str> = baselines.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    for b in &baselines {
        if !["degree", "random", "treat_all", "treat_none"].contains(b) {
            return Err(Error::Config(format!("unknown baseline `{b}`")));
        }
    }
    let seed = if baselines.contains(&"random") { Some(require_seed(cfg, "evaluate --baselines random")?) } else { None };
    let policy = read_policy(policy)?;
    let ds = load(cfg)?;
    out.map(check_parent).transpose()?;
    let targets = ds.target_ids();
    if targets.is_empty() {
        return Err(Error::Integrity("no units with role `target` to evaluate on".into()));
    }
    let sample = ds.sample_ids();
    let opts = nuisance_options(&ds, cfg)?;
    let outcome = fit_outcome(&ds, &sample, &opts.features)?;
    let frame = EstimationFrame::new(&ds, &targets)?;
    let means = MeanTable::from_model(&frame, &outcome);
    let observed = targets.iter().all(|&i| ds.units[i].outcome.is_some() && ds.units[i].treatment.is_some());
    let propensity = if observed {
        let t = fit_treatment(&ds, &sample)?;
        Some(PropensityTable::build(&frame.hoods, |_, node| t.prob(&ds.units[node].covariates), ds.tau.as_ref(), cfg.trim)?)
    } else {
        info!("target units lack outcomes or treatments; reporting the plug-in estimate only");
        None
    };
    let row = |name: String, a: &[bool]| -> Result<EvalRow> {
        Ok(EvalRow {
            policy: name,
            treated: treated_count(a, &targets),
            plugin: welfare_plugin(&frame, a, &means)?.value,
            aipw: propensity.as_ref().map(|p| welfare_aipw(&frame, a, &means, p).map(|w| w.value)).transpose()?,
        })
    };
    let mut rows = vec![row("policy".into(), &policy.assign(&ds)?)?];
    let n = ds.n_nodes();
    let share = cfg.capacity.unwrap_or(0.5);
    for b in baselines {
        match b {
            "treat_all" => rows.push(row(b.into(), &vec![true; n])?),
            "treat_none" => rows.push(row(b.into(), &vec![false; n])?),
            "degree" => rows.push(row(b.into(), &sim::degree_centrality_among(&ds.graph, &targets, share))?),
            _ => {
                // identical draws for both estimators
                let draw = |f: &dyn Fn(&[bool]) -> f64| {
                    let mut rng = sim::derived_rng(seed.expect("checked above"), &[2]);
                    sim::random_among(n, &targets, share, random_reps, &mut rng, f)
                };
                let plugin = draw(&|a| welfare_plugin(&frame, a, &means).map(|w| w.value).unwrap_or(f64::NAN));
                let aipw = propensity
                    .as_ref()
                    .map(|p| draw(&|a| welfare_aipw(&frame, a, &means, p).map(|w| w.value).unwrap_or(f64::NAN)));
                let treated = capacity_limit(Some(share), targets.len()).unwrap_or(0);
                rows.push(EvalRow { policy: b.into(), treated, plugin, aipw });
            }
        }
    }
    emit(&json!({ "targets": targets.len(), "rows": rows }), out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_benchmark(
    cfg: &ExperimentConfig,
    sizes: &str,
    reps: usize,
    network: &str,
    redraw: &str,
    random_reps: usize,
    baseline_share: f64,
    out_dir: &Path,
) -> Result<()> {
    let seed = require_seed(cfg, "benchmark")?;
    let sizes = sizes
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad sample size `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    let redraw = match redraw {
        "per_replication" => Redraw::PerReplication,
        "per_sample_size" => Redraw::PerSampleSize,
        other => return Err(Error::Config(format!("unknown redraw mode `{other}`"))),
    };
    if !(baseline_share > 0.0 && baseline_share <= 1.0) {
        return Err(Error::Config(format!("baseline-share must lie in (0, 1], got {baseline_share}")));
    }
    check_dir(out_dir)?;
    let bench = BenchConfig {
        sizes,
        reps,
        network: network.parse()?,
        seed,
        trim: if cfg.trim > 0.0 { cfg.trim } else { 0.01 },
        baseline_share,
        random_reps,
        redraw,
        crossfit_radius: cfg.crossfit.then_some(cfg.crossfit_radius),
        backend: cfg.backend,
        zero_spillover: false,
    };
    let result = sim::run_benchmark(&bench)?;
    result.write_csv(out_dir.join("records.csv"))?;
    result.write_summary_json(out_dir.join("summary.json"))?;
    Ok(())
}

fn cmd_export_lp(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = load(cfg)?;
    check_parent(out)?;
    let program = build_program(&ds, cfg)?;
    export_lp(&program, out)?;
    parse_lp(&std::fs::read_to_string(out)?)?;
    info!("wrote {} variables and {} rows", program.variables.len(), program.constraints.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Simulate { dgp, n, out_dir, target_fraction } => cmd_simulate(&cfg, &dgp, n, &out_dir, target_fraction),
        Command::Fit { out, folds_out } => cmd_fit(&cfg, out.as_deref(), folds_out.as_deref()),
        Command::Optimize { out, assignment_out, export_lp } => {
            cmd_optimize(&cfg, out.as_deref(), assignment_out.as_deref(), export_lp.as_deref())
        }
        Command::Evaluate { policy, baselines, random_reps, out } => {
            cmd_evaluate(&cfg, &policy, &baselines, random_reps, out.as_deref())
        }
        Command::Benchmark { sizes, reps, network, redraw, random_reps, baseline_share, out_dir } => {
            cmd_benchmark(&cfg, &sizes, reps, &network, &redraw, random_reps, baseline_share, &out_dir)
        }
        Command::ExportLp { out } => cmd_export_lp(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
