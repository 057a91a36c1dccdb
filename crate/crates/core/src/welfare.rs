//! Welfare estimators (plug-in, IPW, AIPW) and the per-unit effect table
//! that the optimizers work on.
//!
//! Every estimator returns the per-unit contributions along with their mean,
//! summed sequentially in unit order. The effect table stores, for each unit,
//! the AIPW (or IPW, or plug-in) term it would contribute under every possible
//! exposure, so contracting the table with a policy's exposures reproduces
//! the estimator bit for bit.

use serde::{Deserialize, Serialize};

use crate::config::EstimatorKind;
use crate::data::{Dataset, InterferenceDegree};
use crate::error::{Error, Result};
use crate::exposure::{realized_exposure, Exposure, Neighborhood};
use crate::graph::NodeId;
use crate::nuisance::{FeatureInput, OutcomeModel, PropensityTable};
use crate::policy::Policy;

/// Largest per-unit exposure grid allowed under two-degree interference.
pub const MAX_GRID: usize = 10_000;

/// Values over a unit's `(d, h1, h2)` exposure grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureGrid {
    pub n1: usize,
    pub n2: usize,
    pub values: Vec<f64>,
}

impl ExposureGrid {
    pub fn for_hood(hood: &Neighborhood) -> Self {
        let (n1, n2) = (hood.l1() + 1, hood.l2() + 1);
        ExposureGrid { n1, n2, values: vec![0.0; 2 * n1 * n2] }
    }

    fn index(&self, e: Exposure) -> usize {
        (usize::from(e.d) * self.n1 + e.s1) * self.n2 + e.s2
    }

    pub fn get(&self, e: Exposure) -> f64 {
        self.values[self.index(e)]
    }

    pub fn set(&mut self, e: Exposure, v: f64) {
        let i = self.index(e);
        self.values[i] = v;
    }

    /// All exposures of the grid in storage order.
    pub fn exposures(&self) -> impl Iterator<Item = Exposure> {
        let (n1, n2) = (self.n1, self.n2);
        [false, true]
            .into_iter()
            .flat_map(move |d| (0..n1).flat_map(move |s1| (0..n2).map(move |s2| Exposure { d, s1, s2 })))
    }
}

/// Units entering a welfare estimate together with their observed data.
#[derive(Debug, Clone)]
pub struct EstimationFrame {
    pub n_nodes: usize,
    pub hoods: Vec<Neighborhood>,
    pub outcomes: Vec<Option<f64>>,
    pub realized: Vec<Option<Exposure>>,
    pub rho: Vec<f64>,
    pub covariates: Vec<Vec<f64>>,
}

impl EstimationFrame {
    /// Frame over `units` using the dataset's interference structure.
    pub fn new(dataset: &Dataset, units: &[NodeId]) -> Result<Self> {
        Self::build(dataset, units, false)
    }

    /// Frame that ignores the network: every unit is treated as isolated.
    pub fn without_network(dataset: &Dataset, units: &[NodeId]) -> Result<Self> {
        Self::build(dataset, units, true)
    }

    fn build(dataset: &Dataset, units: &[NodeId], isolated: bool) -> Result<Self> {
        let mut frame = EstimationFrame {
            n_nodes: dataset.n_nodes(),
            hoods: Vec::with_capacity(units.len()),
            outcomes: Vec::with_capacity(units.len()),
            realized: Vec::with_capacity(units.len()),
            rho: Vec::with_capacity(units.len()),
            covariates: Vec::with_capacity(units.len()),
        };
        for &i in units {
            let hood = if isolated {
                Neighborhood::isolated(i)
            } else {
                Neighborhood::of(&dataset.graph, i, dataset.interference)?
            };
            if dataset.interference == InterferenceDegree::Two && 2 * (hood.l1() + 1) * (hood.l2() + 1) > MAX_GRID {
                return Err(Error::Validation(format!(
                    "unit {i}: two-degree exposure grid exceeds {MAX_GRID} cells"
                )));
            }
            let u = &dataset.units[i];
            let realized = match u.treatment {
                Some(_) if isolated => Some(Exposure { d: u.treatment.unwrap_or(false), s1: 0, s2: 0 }),
                Some(_) => realized_exposure(dataset, i).ok(),
                None => None,
            };
            frame.hoods.push(hood);
            frame.outcomes.push(u.outcome);
            frame.realized.push(realized);
            frame.rho.push(u.rho);
            frame.covariates.push(u.covariates.clone());
        }
        Ok(frame)
    }

    pub fn len(&self) -> usize {
        self.hoods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hoods.is_empty()
    }

    pub fn units(&self) -> Vec<NodeId> {
        self.hoods.iter().map(|h| h.unit).collect()
    }

    /// Resets every density ratio to one.
    pub fn unweighted(mut self) -> Self {
        self.rho.iter_mut().for_each(|r| *r = 1.0);
        self
    }

    fn observed(&self, u: usize) -> Result<(f64, Exposure)> {
        match (self.outcomes[u], self.realized[u]) {
            (Some(y), Some(e)) => Ok((y, e)),
            _ => Err(Error::Integrity(format!(
                "unit {} lacks the outcome or treatments needed for weighting",
                self.hoods[u].unit
            ))),
        }
    }
}

/// Fitted conditional means over each unit's exposure grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTable {
    pub grids: Vec<ExposureGrid>,
}

impl MeanTable {
    /// Evaluates `mean(u, exposure)` on every grid cell; `u` indexes the frame.
    pub fn from_fn(frame: &EstimationFrame, mut mean: impl FnMut(usize, Exposure) -> f64) -> Self {
        let grids = frame
            .hoods
            .iter()
            .enumerate()
            .map(|(u, hood)| {
                let mut grid = ExposureGrid::for_hood(hood);
                for e in grid.exposures().collect::<Vec<_>>() {
                    grid.set(e, mean(u, e));
                }
                grid
            })
            .collect();
        MeanTable { grids }
    }

    /// Predictions of one pooled outcome model.
    pub fn from_model(frame: &EstimationFrame, model: &OutcomeModel) -> Self {
        Self::from_models(frame, |_| model)
    }

    /// Predictions where unit `u` uses `model_for(u)` (cross-fitting).
    pub fn from_models<'m>(frame: &EstimationFrame, model_for: impl Fn(usize) -> &'m OutcomeModel) -> Self {
        Self::from_fn(frame, |u, e| {
            let hood = &frame.hoods[u];
            model_for(u).predict(&FeatureInput::new(e, hood.l1(), hood.l2(), &frame.covariates[u]))
        })
    }

    /// Constant zero outcome model.
    pub fn zeros(frame: &EstimationFrame) -> Self {
        Self::from_fn(frame, |_, _| 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareEstimate {
    pub kind: EstimatorKind,
    pub value: f64,
    pub n: usize,
    pub n_effective: usize,
    pub trimmed: usize,
    pub contributions: Vec<f64>,
}

impl WelfareEstimate {
    fn from_contributions(kind: EstimatorKind, contributions: Vec<f64>, trimmed: usize) -> Self {
        let n = contributions.len();
        let value = mean_sequential(&contributions);
        WelfareEstimate { kind, value, n, n_effective: n - trimmed, trimmed, contributions }
    }
}

/// Sum in index order divided by the count; zero for an empty slice.
pub fn mean_sequential(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for v in values {
        acc += v;
    }
    acc / values.len() as f64
}

/// One unit's estimator term at policy exposure `e`; `None` marks a trimmed propensity.
fn unit_term(
    kind: EstimatorKind,
    rho: f64,
    mean: f64,
    observed: Option<(f64, Exposure)>,
    e: Exposure,
    propensity: Option<&crate::nuisance::UnitPropensity>,
) -> (f64, bool) {
    match kind {
        EstimatorKind::Plugin => (rho * mean, false),
        EstimatorKind::Ipw | EstimatorKind::Aipw => {
            let prop = propensity.expect("weighting estimators need a propensity table");
            let (y, realized) = observed.expect("weighting estimators need observed data");
            let trimmed = prop.is_trimmed(e);
            let live = prop.same_cell(realized, e);
            let weight = if live && !trimmed { 1.0 / prop.value(e) } else { 0.0 };
            match kind {
                EstimatorKind::Ipw => (rho * (weight * y), trimmed),
                _ => (rho * (weight * (y - mean) + mean), trimmed),
            }
        }
    }
}

fn estimate(
    kind: EstimatorKind,
    frame: &EstimationFrame,
    assignment: &[bool],
    means: Option<&MeanTable>,
    propensity: Option<&PropensityTable>,
) -> Result<WelfareEstimate> {
    if assignment.len() != frame.n_nodes {
        return Err(Error::Input(format!(
            "assignment covers {} nodes, expected {}",
            assignment.len(),
            frame.n_nodes
        )));
    }
    let mut contributions = Vec::with_capacity(frame.len());
    let mut trimmed = 0;
    for (u, hood) in frame.hoods.iter().enumerate() {
        let e = hood.exposure(assignment);
        let mean = means.map(|m| m.grids[u].get(e)).unwrap_or(0.0);
        let observed = match kind {
            EstimatorKind::Plugin => None,
            _ => Some(frame.observed(u)?),
        };
        let (c, t) = unit_term(kind, frame.rho[u], mean, observed, e, propensity.map(|p| &p.units[u]));
        contributions.push(c);
        trimmed += usize::from(t);
    }
    Ok(WelfareEstimate::from_contributions(kind, contributions, trimmed))
}

fn check_aligned(frame: &EstimationFrame, means: Option<&MeanTable>, prop: Option<&PropensityTable>) -> Result<()> {
    let ok_m = means.is_none_or(|m| m.grids.len() == frame.len());
    let ok_p = prop.is_none_or(|p| {
        p.units.len() == frame.len() && p.units.iter().zip(&frame.hoods).all(|(a, b)| a.unit == b.unit)
    });
    if ok_m && ok_p {
        Ok(())
    } else {
        Err(Error::Input("nuisance tables are not aligned with the estimation frame".into()))
    }
}

/// `(1/n) sum_i rho_i m(pi(X_i), S_i(pi), Z_i, |N_i|)`.
pub fn welfare_plugin(frame: &EstimationFrame, assignment: &[bool], means: &MeanTable) -> Result<WelfareEstimate> {
    check_aligned(frame, Some(means), None)?;
    estimate(EstimatorKind::Plugin, frame, assignment, Some(means), None)
}

/// Inverse-propensity weighting; terms with trimmed propensity are dropped.
pub fn welfare_ipw(
    frame: &EstimationFrame,
    assignment: &[bool],
    propensity: &PropensityTable,
) -> Result<WelfareEstimate> {
    check_aligned(frame, None, Some(propensity))?;
    estimate(EstimatorKind::Ipw, frame, assignment, None, Some(propensity))
}

/// Doubly robust estimator; trimmed terms keep only the outcome-model part.
pub fn welfare_aipw(
    frame: &EstimationFrame,
    assignment: &[bool],
    means: &MeanTable,
    propensity: &PropensityTable,
) -> Result<WelfareEstimate> {
    check_aligned(frame, Some(means), Some(propensity))?;
    estimate(EstimatorKind::Aipw, frame, assignment, Some(means), Some(propensity))
}

/// Own assignment and treated-neighbor counts of unit `i` under `policy`.
pub fn policy_exposure(policy: &Policy, dataset: &Dataset, i: NodeId) -> Result<Exposure> {
    let assignment = policy.assign(dataset)?;
    let hood = Neighborhood::of(&dataset.graph, i, dataset.interference)?;
    Ok(hood.exposure(&assignment))
}

/// Estimator terms `g_i(d, h1, h2)` for every unit and exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectTable {
    pub n_nodes: usize,
    pub hoods: Vec<Neighborhood>,
    pub grids: Vec<ExposureGrid>,
}

impl EffectTable {
    /// Realized-data terms of the chosen estimator on the frame's grid, with
    /// the density ratio folded in.
    pub fn build(
        kind: EstimatorKind,
        frame: &EstimationFrame,
        means: Option<&MeanTable>,
        propensity: Option<&PropensityTable>,
    ) -> Result<Self> {
        check_aligned(frame, means, propensity)?;
        if kind != EstimatorKind::Ipw && means.is_none() {
            return Err(Error::Input(format!("{kind} effect table needs an outcome model")));
        }
        if kind != EstimatorKind::Plugin && propensity.is_none() {
            return Err(Error::Input(format!("{kind} effect table needs a propensity table")));
        }
        let mut grids = Vec::with_capacity(frame.len());
        for (u, hood) in frame.hoods.iter().enumerate() {
            let mut grid = ExposureGrid::for_hood(hood);
            let observed = match kind {
                EstimatorKind::Plugin => None,
                _ => Some(frame.observed(u)?),
            };
            for e in grid.exposures().collect::<Vec<_>>() {
                let mean = means.map(|m| m.grids[u].get(e)).unwrap_or(0.0);
                let (g, _) = unit_term(kind, frame.rho[u], mean, observed, e, propensity.map(|p| &p.units[u]));
                grid.set(e, g);
            }
            grids.push(grid);
        }
        Ok(EffectTable { n_nodes: frame.n_nodes, hoods: frame.hoods.clone(), grids })
    }

    /// Arbitrary table from a closure `g(u, exposure)`.
    pub fn from_fn(n_nodes: usize, hoods: Vec<Neighborhood>, mut g: impl FnMut(usize, Exposure) -> f64) -> Self {
        let grids = hoods
            .iter()
            .enumerate()
            .map(|(u, hood)| {
                let mut grid = ExposureGrid::for_hood(hood);
                for e in grid.exposures().collect::<Vec<_>>() {
                    grid.set(e, g(u, e));
                }
                grid
            })
            .collect();
        EffectTable { n_nodes, hoods, grids }
    }

    pub fn len(&self) -> usize {
        self.hoods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hoods.is_empty()
    }

    /// Node ids of the units in the objective.
    pub fn units(&self) -> Vec<NodeId> {
        self.hoods.iter().map(|h| h.unit).collect()
    }

    pub fn has_second_degree(&self) -> bool {
        self.hoods.iter().any(|h| !h.second.is_empty())
    }

    pub fn g(&self, u: usize, e: Exposure) -> f64 {
        self.grids[u].get(e)
    }

    /// `(1/n) sum_i g_i(p_i, S_i(p))` for an assignment over all nodes.
    pub fn value(&self, assignment: &[bool]) -> f64 {
        let terms: Vec<f64> = self
            .hoods
            .iter()
            .zip(&self.grids)
            .map(|(hood, grid)| grid.get(hood.exposure(assignment)))
            .collect();
        mean_sequential(&terms)
    }

    /// Table with every entry multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for grid in &mut out.grids {
            grid.values.iter_mut().for_each(|v| *v *= c);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Role, UnitRecord};
    use crate::graph::Graph;

    fn star_dataset() -> Dataset {
        let graph = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)], false).unwrap();
        let units = (0..4)
            .map(|id| UnitRecord {
                id,
                outcome: Some(1.0),
                treatment: Some(id == 0),
                covariates: vec![],
                policy_covariates: vec![],
                role: Role::Sample,
                rho: 1.0,
            })
            .collect();
        Dataset::new(graph, units, vec![], vec![], None, InterferenceDegree::One).unwrap()
    }

    #[test]
    fn plugin_hand_computation() {
        let ds = star_dataset();
        let frame = EstimationFrame::new(&ds, &ds.sample_ids()).unwrap();
        let means = MeanTable::from_fn(&frame, |_, e| f64::from(u8::from(e.d)) + e.s1 as f64);
        let center_only = [true, false, false, false];
        let w = welfare_plugin(&frame, &center_only, &means).unwrap();
        assert_eq!(w.value, 1.0);
        let constant = MeanTable::from_fn(&frame, |_, _| 2.5);
        for a in [[false; 4], [true; 4], center_only] {
            assert_eq!(welfare_plugin(&frame, &a, &constant).unwrap().value, 2.5);
        }
    }

    #[test]
    fn single_isolated_ipw() {
        let graph = Graph::empty(1);
        let units = vec![UnitRecord {
            id: 0,
            outcome: Some(2.0),
            treatment: Some(true),
            covariates: vec![],
            policy_covariates: vec![],
            role: Role::Sample,
            rho: 1.0,
        }];
        let ds = Dataset::new(graph, units, vec![], vec![], None, InterferenceDegree::One).unwrap();
        let frame = EstimationFrame::new(&ds, &[0]).unwrap();
        let prop = PropensityTable::build(&frame.hoods, |_, _| 0.5, None, 0.0).unwrap();
        assert_eq!(welfare_ipw(&frame, &[true], &prop).unwrap().value, 4.0);
        assert_eq!(welfare_ipw(&frame, &[false], &prop).unwrap().value, 0.0);
    }

    #[test]
    fn effect_table_entries() {
        let ds = star_dataset();
        let frame = EstimationFrame::new(&ds, &ds.sample_ids()).unwrap();
        let means = MeanTable::from_fn(&frame, |u, e| 0.3 * u as f64 + e.s1 as f64 - 0.5 * f64::from(u8::from(e.d)));
        let prop = PropensityTable::build(&frame.hoods, |_, _| 0.4, None, 0.0).unwrap();
        let table = EffectTable::build(EstimatorKind::Aipw, &frame, Some(&means), Some(&prop)).unwrap();
        // center: realized D=1, no treated neighbors
        for h in 0..=3 {
            let e0 = Exposure { d: false, s1: h, s2: 0 };
            assert_eq!(table.g(0, e0), means.grids[0].get(e0));
        }
        let live = Exposure { d: true, s1: 0, s2: 0 };
        let m = means.grids[0].get(live);
        let expected = 1.0 / prop.units[0].value(live) * (1.0 - m) + m;
        assert_eq!(table.g(0, live), expected);
    }
}
