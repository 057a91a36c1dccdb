//! Policy classes, the mixed-integer encoding of welfare maximization and
//! the solvers that work on it.

mod bnb;
mod cells;
mod heuristic;
mod lp;
mod milp;

pub use bnb::{solve_branch_bound, BnbOptions};
pub use cells::{realizable_labelings, solve_exact_cells, CellOptions};
pub use heuristic::{solve_heuristic, HeuristicOptions};
pub use lp::{export_lp, parse_lp, write_lp, LpModel, LpRow};
pub use milp::{encode_milp, Constraint, Domain, MilpProgram, Sense, UnitBlock, Variable, EPS_STRICT};

use serde::{Deserialize, Serialize};

use crate::config::{BackendChoice, ClassKind, CoefBox};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::welfare::EffectTable;

/// A treatment rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// `pi(x) = 1{beta . (1, x) >= 0}` over the declared covariates.
    LinearThreshold {
        beta: Vec<f64>,
        #[serde(default)]
        covariates: Vec<String>,
    },
    /// One decision per node.
    ExplicitAssignment { assignment: Vec<bool> },
}

/// `1{beta_0 + beta_1 x_1 + ... >= 0}`; ties treat.
pub fn linear_rule(beta: &[f64], x: &[f64]) -> bool {
    let mut s = beta[0];
    for (b, v) in beta[1..].iter().zip(x) {
        s += b * v;
    }
    s >= 0.0
}

/// Decision of a linear policy at covariates `x`.
pub fn evaluate_policy(policy: &Policy, x: &[f64]) -> Result<bool> {
    match policy {
        Policy::LinearThreshold { beta, .. } => {
            if beta.len() != x.len() + 1 {
                return Err(Error::Input(format!(
                    "policy has {} coefficients but x has {} entries",
                    beta.len(),
                    x.len()
                )));
            }
            Ok(linear_rule(beta, x))
        }
        Policy::ExplicitAssignment { .. } => {
            Err(Error::Input("an explicit assignment cannot be evaluated at covariates".into()))
        }
    }
}

impl Policy {
    pub fn treat_all(n_nodes: usize) -> Self {
        Policy::ExplicitAssignment { assignment: vec![true; n_nodes] }
    }

    pub fn treat_none(n_nodes: usize) -> Self {
        Policy::ExplicitAssignment { assignment: vec![false; n_nodes] }
    }

    /// Decisions for rows of policy covariates.
    pub fn assign_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<bool>> {
        match self {
            Policy::LinearThreshold { .. } => rows.iter().map(|x| evaluate_policy(self, x)).collect(),
            Policy::ExplicitAssignment { assignment } => {
                if assignment.len() != rows.len() {
                    return Err(Error::Input(format!(
                        "assignment covers {} nodes, expected {}",
                        assignment.len(),
                        rows.len()
                    )));
                }
                Ok(assignment.clone())
            }
        }
    }

    /// Decisions for every node of the dataset.
    pub fn assign(&self, dataset: &Dataset) -> Result<Vec<bool>> {
        if let Policy::LinearThreshold { covariates, .. } = self {
            if !covariates.is_empty() && covariates.len() != dataset.x_columns.len() {
                return Err(Error::Input(format!(
                    "policy declares {} covariates, dataset provides {}",
                    covariates.len(),
                    dataset.x_columns.len()
                )));
            }
        }
        self.assign_rows(&dataset.policy_matrix())
    }
}

/// Admissible policies: the rule form plus the coefficient box (linear rules).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyClass {
    pub kind: ClassKind,
    /// Number of policy covariates (intercept excluded).
    pub dim: usize,
    /// Coefficient ranges, intercept first; empty for explicit assignments.
    pub bounds: Vec<(f64, f64)>,
    /// Names of the policy covariates, carried into the returned policy.
    pub covariates: Vec<String>,
}

impl PolicyClass {
    pub fn linear(dim: usize, coef_box: &CoefBox) -> Result<Self> {
        Ok(PolicyClass { kind: ClassKind::LinearThreshold, dim, bounds: coef_box.bounds(dim + 1)?, covariates: vec![] })
    }

    pub fn explicit() -> Self {
        PolicyClass { kind: ClassKind::ExplicitAssignment, dim: 0, bounds: vec![], covariates: vec![] }
    }

    pub fn with_covariates(mut self, names: Vec<String>) -> Self {
        self.covariates = names;
        self
    }

    pub fn is_linear(&self) -> bool {
        self.kind == ClassKind::LinearThreshold
    }

    /// Largest absolute coefficient allowed in each coordinate.
    pub fn box_max(&self) -> Vec<f64> {
        self.bounds.iter().map(|&(lo, hi)| lo.abs().max(hi.abs())).collect()
    }

    fn check_rows(&self, x: &[Vec<f64>]) -> Result<()> {
        if self.is_linear() {
            if let Some(bad) = x.iter().position(|r| r.len() != self.dim) {
                return Err(Error::Input(format!(
                    "node {bad} has {} policy covariates, class expects {}",
                    x[bad].len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }

    fn policy(&self, beta: Option<Vec<f64>>, assignment: &[bool]) -> Policy {
        match (self.kind, beta) {
            (ClassKind::LinearThreshold, Some(beta)) => {
                Policy::LinearThreshold { beta, covariates: self.covariates.clone() }
            }
            _ => Policy::ExplicitAssignment { assignment: assignment.to_vec() },
        }
    }
}

/// Maximum number of treated sample units, `floor(K n)`.
pub fn capacity_limit(capacity: Option<f64>, n_units: usize) -> Option<usize> {
    capacity.map(|k| (k * n_units as f64 + 1e-9).floor() as usize)
}

/// Number of treated units among `units`.
pub fn treated_count(assignment: &[bool], units: &[NodeId]) -> usize {
    units.iter().filter(|&&i| assignment[i]).count()
}

/// Concentration bound on the gap between the sample and population treated
/// shares of a policy class: `cbar sqrt(vc/n) + 2 m sqrt(log(2/gamma)/n)`.
pub fn capacity_gap_bound(n: usize, vc_dim: usize, dependence: usize, gamma: f64, cbar: f64) -> f64 {
    let n = n as f64;
    cbar * (vc_dim as f64 / n).sqrt() + 2.0 * dependence as f64 * ((2.0 / gamma).ln() / n).sqrt()
}

/// Outcome of a solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub policy: Policy,
    /// Decisions over every node.
    pub assignment: Vec<bool>,
    /// Objective `(1/n) sum_i g_i` at the returned assignment.
    pub value: f64,
    pub backend: String,
    /// True when the value is proven optimal over the class.
    pub certified: bool,
    /// Cells, nodes or moves examined.
    pub explored: u64,
    /// Excluded from reports so repeated runs serialize identically.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

/// Best-of rule shared by the solvers: larger value, then the
/// lexicographically smallest assignment.
pub(crate) fn better(value: f64, assignment: &[bool], best_value: f64, best: &[bool]) -> bool {
    value > best_value || (value == best_value && assignment < best)
}

/// Nodes whose decision can change the objective: units and their neighbors.
pub(crate) fn relevant_nodes(table: &EffectTable) -> Vec<NodeId> {
    let mut seen = vec![false; table.n_nodes];
    for h in &table.hoods {
        seen[h.unit] = true;
        h.first.iter().for_each(|&k| seen[k] = true);
        h.second.iter().for_each(|&(k, _)| seen[k] = true);
    }
    (0..table.n_nodes).filter(|&i| seen[i]).collect()
}

/// Solver selection and knobs.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub backend: BackendChoice,
    pub capacity: Option<f64>,
    pub seed: u64,
    pub heuristic_restarts: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { backend: BackendChoice::Auto, capacity: None, seed: 0, heuristic_restarts: 8 }
    }
}

/// Backend used by `Auto` for a given problem.
pub fn auto_backend(table: &EffectTable, class: &PolicyClass) -> BackendChoice {
    let n = table.len();
    match class.kind {
        ClassKind::LinearThreshold if class.dim <= 3 && n <= 5000 && cells::box_has_interior_origin(class) => {
            BackendChoice::Cells
        }
        ClassKind::ExplicitAssignment if n <= 60 && !table.has_second_degree() => BackendChoice::BranchBound,
        _ => BackendChoice::Heuristic,
    }
}

/// Maximizes the effect-table objective over the class with the chosen backend.
pub fn solve(table: &EffectTable, x: &[Vec<f64>], class: &PolicyClass, opts: &SolveOptions) -> Result<SolveResult> {
    let backend = match opts.backend {
        BackendChoice::Auto => auto_backend(table, class),
        b => b,
    };
    match backend {
        BackendChoice::Cells => solve_exact_cells(table, x, class, opts.capacity, &CellOptions::default()),
        BackendChoice::BranchBound => {
            let program = encode_milp(table, x, class, opts.capacity)?;
            solve_branch_bound(&program, &BnbOptions::default())
        }
        _ => {
            let h = HeuristicOptions { restarts: opts.heuristic_restarts, ..HeuristicOptions::default() };
            solve_heuristic(table, x, class, opts.capacity, opts.seed, &h)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_rule_examples() {
        let p = |b: Vec<f64>| Policy::LinearThreshold { beta: b, covariates: vec![] };
        assert!(evaluate_policy(&p(vec![0.0, 1.0]), &[0.5]).unwrap());
        assert!(!evaluate_policy(&p(vec![0.0, 1.0]), &[-0.5]).unwrap());
        assert!(evaluate_policy(&p(vec![-1.0, 1.0, 1.0]), &[0.5, 0.5]).unwrap());
        assert!(matches!(evaluate_policy(&p(vec![0.0, 1.0]), &[0.5, 1.0]), Err(Error::Input(_))));
    }

    #[test]
    fn capacity_floor() {
        assert_eq!(capacity_limit(Some(0.3), 10), Some(3));
        assert_eq!(capacity_limit(Some(0.29), 100), Some(29));
        assert_eq!(capacity_limit(Some(0.5), 4), Some(2));
        assert_eq!(capacity_limit(None, 4), None);
    }

    #[test]
    fn gap_bound_is_finite_and_shrinks() {
        let a = capacity_gap_bound(100, 3, 5, 0.05, 1.0);
        let b = capacity_gap_bound(400, 3, 5, 0.05, 1.0);
        assert!(a.is_finite() && b < a);
        assert!((a / b - 2.0).abs() < 1e-12);
    }
}
