//! End-to-end estimation: nuisance fits, welfare tables and optimization.

use log::info;
use serde::Serialize;

use crate::config::{EstimatorKind, ExperimentConfig};
use crate::crossfit::{crossfit_nuisance, make_folds, CrossFitted, FoldAssignment};
use crate::data::Dataset;
use crate::error::Result;
use crate::graph::NodeId;
use crate::nuisance::{fit_outcome, fit_treatment, FeatureMap, OutcomeModel, PropensityTable, TreatmentModel};
use crate::policy::{
    capacity_gap_bound, encode_milp, solve, MilpProgram, PolicyClass, SolveOptions, SolveResult,
};
use crate::welfare::{EffectTable, EstimationFrame, MeanTable};

/// How unit treatment probabilities are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PropensitySource {
    /// Logistic regression on all covariates.
    Fitted,
    /// Every node is treated independently with this probability.
    Known(f64),
    /// No propensity model (outcome-only estimation).
    Skip,
}

#[derive(Debug, Clone)]
pub struct NuisanceOptions {
    pub features: FeatureMap,
    /// `Some(radius)` enables network cross-fitting.
    pub crossfit_radius: Option<usize>,
    pub trim: f64,
    pub propensity: PropensitySource,
    /// Treat every unit as isolated (no-interference estimators).
    pub ignore_network: bool,
}

/// Nuisance fits aligned with an estimation frame.
#[derive(Debug, Clone)]
pub struct Nuisances {
    pub frame: EstimationFrame,
    pub means: MeanTable,
    pub propensity: Option<PropensityTable>,
    pub outcome: Option<OutcomeModel>,
    pub treatment: Option<TreatmentModel>,
    pub folds: Option<FoldAssignment>,
    pub crossfit: Option<CrossFitted>,
}

impl Nuisances {
    pub fn effect_table(&self, kind: EstimatorKind) -> Result<EffectTable> {
        EffectTable::build(kind, &self.frame, Some(&self.means), self.propensity.as_ref())
    }
}

/// Fits the outcome and treatment models on the sample units.
pub fn fit_nuisances(dataset: &Dataset, opts: &NuisanceOptions) -> Result<Nuisances> {
    let units: Vec<NodeId> = dataset.sample_ids();
    let frame = if opts.ignore_network {
        EstimationFrame::without_network(dataset, &units)?
    } else {
        EstimationFrame::new(dataset, &units)?
    };
    let tau = if opts.ignore_network { None } else { dataset.tau.as_ref() };
    match (opts.crossfit_radius, opts.ignore_network) {
        (Some(radius), false) => {
            let folds = make_folds(dataset, radius)?;
            info!("cross-fitting with {} folds at radius {radius}", folds.n_folds());
            let cf = crossfit_nuisance(dataset, &folds, &opts.features)?;
            let means = cf.means(&frame)?;
            let propensity = match opts.propensity {
                PropensitySource::Fitted => Some(cf.propensity(dataset, &frame, opts.trim)?),
                PropensitySource::Known(p) => Some(PropensityTable::build(&frame.hoods, |_, _| p, tau, opts.trim)?),
                PropensitySource::Skip => None,
            };
            Ok(Nuisances { frame, means, propensity, outcome: None, treatment: None, folds: Some(folds), crossfit: Some(cf) })
        }
        _ => {
            let outcome = fit_outcome_for(dataset, &frame, &units, &opts.features, opts.ignore_network)?;
            let means = MeanTable::from_model(&frame, &outcome);
            let (treatment, propensity) = match opts.propensity {
                PropensitySource::Fitted => {
                    let t = fit_treatment(dataset, &units)?;
                    let p = PropensityTable::build(
                        &frame.hoods,
                        |_, node| t.prob(&dataset.units[node].covariates),
                        tau,
                        opts.trim,
                    )?;
                    (Some(t), Some(p))
                }
                PropensitySource::Known(p) => (None, Some(PropensityTable::build(&frame.hoods, |_, _| p, tau, opts.trim)?)),
                PropensitySource::Skip => (None, None),
            };
            Ok(Nuisances { frame, means, propensity, outcome: Some(outcome), treatment, folds: None, crossfit: None })
        }
    }
}

fn fit_outcome_for(
    dataset: &Dataset,
    frame: &EstimationFrame,
    units: &[NodeId],
    features: &FeatureMap,
    ignore_network: bool,
) -> Result<OutcomeModel> {
    if !ignore_network {
        return fit_outcome(dataset, units, features);
    }
    // regress on own treatment and covariates only
    let rows: Vec<f64> = frame
        .realized
        .iter()
        .zip(&frame.covariates)
        .flat_map(|(e, z)| {
            let e = e.expect("sample units have treatments");
            features.row(&crate::nuisance::FeatureInput::new(e, 0, 0, z))
        })
        .collect();
    let x = nalgebra::DMatrix::from_row_slice(units.len(), features.len(), &rows);
    let y = nalgebra::DVector::from_iterator(units.len(), frame.outcomes.iter().map(|y| y.unwrap_or(0.0)));
    let theta = crate::nuisance::lstsq_min_norm(&x, &y)?;
    Ok(OutcomeModel { features: features.clone(), coefficients: theta.iter().copied().collect() })
}

/// Options derived from a validated experiment configuration.
pub fn nuisance_options(dataset: &Dataset, config: &ExperimentConfig) -> Result<NuisanceOptions> {
    let features = match &config.features {
        Some(spec) => FeatureMap::parse(spec, &dataset.covariate_names)?,
        None => FeatureMap::default_basis(&dataset.covariate_names, dataset.interference),
    };
    Ok(NuisanceOptions {
        features,
        crossfit_radius: config.crossfit.then_some(config.crossfit_radius),
        trim: config.trim,
        propensity: if config.estimator == EstimatorKind::Plugin {
            PropensitySource::Skip
        } else {
            PropensitySource::Fitted
        },
        ignore_network: false,
    })
}

pub fn policy_class(dataset: &Dataset, config: &ExperimentConfig) -> Result<PolicyClass> {
    Ok(match config.class {
        crate::config::ClassKind::LinearThreshold => {
            PolicyClass::linear(dataset.x_columns.len(), &config.coef_box)?.with_covariates(config.x_columns.clone())
        }
        crate::config::ClassKind::ExplicitAssignment => PolicyClass::explicit(),
    })
}

/// Sample-versus-population capacity diagnostic.
#[derive(Debug, Clone, Serialize)]
pub struct CapacityDiagnostic {
    pub capacity: f64,
    pub gamma: f64,
    pub vc_dim: usize,
    pub dependence: usize,
    pub bound: f64,
}

pub fn capacity_diagnostic(dataset: &Dataset, class: &PolicyClass, capacity: f64, gamma: f64) -> Result<CapacityDiagnostic> {
    let vc_dim = if class.is_linear() { class.dim + 1 } else { dataset.sample_ids().len() };
    let dependence = dataset.graph.max_degree_stats(1)? + 1;
    let bound = capacity_gap_bound(dataset.sample_ids().len().max(1), vc_dim, dependence, gamma, 1.0);
    Ok(CapacityDiagnostic { capacity, gamma, vc_dim, dependence, bound })
}

/// Everything produced by fitting and optimizing a policy.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub nuisances: Nuisances,
    pub table: EffectTable,
    pub class: PolicyClass,
    pub solve: SolveResult,
    pub capacity: Option<CapacityDiagnostic>,
}

pub fn fit_and_optimize(dataset: &Dataset, config: &ExperimentConfig) -> Result<FitReport> {
    let opts = nuisance_options(dataset, config)?;
    let nuisances = fit_nuisances(dataset, &opts)?;
    let table = nuisances.effect_table(config.estimator)?;
    let class = policy_class(dataset, config)?;
    let x = dataset.policy_matrix();
    let solve_opts = SolveOptions {
        backend: config.backend,
        capacity: config.capacity,
        seed: config.seed.unwrap_or(0),
        heuristic_restarts: config.heuristic_restarts,
    };
    let solve = solve(&table, &x, &class, &solve_opts)?;
    info!("{} backend: value {:.6}, explored {}, {:.1} ms", solve.backend, solve.value, solve.explored, solve.wall_time_ms);
    let capacity = config.capacity.map(|k| capacity_diagnostic(dataset, &class, k, config.gamma)).transpose()?;
    Ok(FitReport { nuisances, table, class, solve, capacity })
}

/// Integer program for the configured problem.
pub fn build_program(dataset: &Dataset, config: &ExperimentConfig) -> Result<MilpProgram> {
    let opts = nuisance_options(dataset, config)?;
    let nuisances = fit_nuisances(dataset, &opts)?;
    let table = nuisances.effect_table(config.estimator)?;
    let class = policy_class(dataset, config)?;
    encode_milp(&table, &dataset.policy_matrix(), &class, config.capacity)
}
