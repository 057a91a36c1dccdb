//! Network cross-fitting: folds are color classes of the power graph, and
//! each unit's nuisance models are refit on its fold without the unit.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::nuisance::{
    fit_logistic, lstsq_min_norm, outcome_design, ridge, FeatureMap, OutcomeModel,
    PropensityTable, TreatmentModel,
};
use crate::welfare::{EstimationFrame, MeanTable};

/// Ridge penalty used when even the pooled rows are fewer than the features.
pub const SMALL_FOLD_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub radius: usize,
    /// Fold of each node; `None` for nodes outside the sample.
    pub fold_of: Vec<Option<usize>>,
    /// Members of each fold in increasing id order.
    pub folds: Vec<Vec<NodeId>>,
}

impl FoldAssignment {
    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    /// Writes `id,fold` for every sample unit.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "fold"])?;
        for (i, f) in self.fold_of.iter().enumerate() {
            if let Some(f) = f {
                w.write_record([i.to_string(), f.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Colors the sample units so that same-fold units are more than `radius`
/// hops apart in the full graph. Radius 0 gives a single fold.
pub fn make_folds(dataset: &Dataset, radius: usize) -> Result<FoldAssignment> {
    let sample = dataset.sample_ids();
    let mut fold_of = vec![None; dataset.n_nodes()];
    let colors: Vec<usize> = if radius == 0 {
        vec![0; sample.len()]
    } else {
        dataset.graph.power_graph(radius)?.induced(&sample).greedy_coloring().colors
    };
    let n_folds = colors.iter().map(|&c| c + 1).max().unwrap_or(0);
    let mut folds = vec![Vec::new(); n_folds];
    for (&i, &c) in sample.iter().zip(&colors) {
        fold_of[i] = Some(c);
        folds[c].push(i);
    }
    Ok(FoldAssignment { radius, fold_of, folds })
}

/// Out-of-fold nuisance models, one pair per unit of `units`.
#[derive(Debug, Clone)]
pub struct CrossFitted {
    pub units: Vec<NodeId>,
    pub outcome: Vec<OutcomeModel>,
    pub treatment: Vec<TreatmentModel>,
    /// Units whose prediction fell back to a pooled model.
    pub fallbacks: Vec<NodeId>,
}

impl CrossFitted {
    /// Mean table for a frame built over the same units.
    pub fn means(&self, frame: &EstimationFrame) -> Result<MeanTable> {
        self.check(frame)?;
        Ok(MeanTable::from_models(frame, |u| &self.outcome[u]))
    }

    /// Propensity table: neighbor probabilities use the unit's own fold model.
    pub fn propensity(&self, dataset: &Dataset, frame: &EstimationFrame, trim: f64) -> Result<PropensityTable> {
        self.check(frame)?;
        let mut pos = vec![usize::MAX; dataset.n_nodes()];
        self.units.iter().enumerate().for_each(|(k, &i)| pos[i] = k);
        PropensityTable::build(
            &frame.hoods,
            |unit, node| self.treatment[pos[unit]].prob(&dataset.units[node].covariates),
            dataset.tau.as_ref(),
            trim,
        )
    }

    fn check(&self, frame: &EstimationFrame) -> Result<()> {
        if frame.units() == self.units {
            Ok(())
        } else {
            Err(Error::Input("cross-fitted models cover different units than the frame".into()))
        }
    }
}

fn drop_row(x: &DMatrix<f64>, y: &DVector<f64>, rows: &[usize], skip: usize) -> (DMatrix<f64>, DVector<f64>) {
    let keep: Vec<usize> = rows.iter().copied().filter(|&r| r != skip).collect();
    let xs = DMatrix::from_fn(keep.len(), x.ncols(), |r, c| x[(keep[r], c)]);
    let ys = DVector::from_fn(keep.len(), |r, _| y[keep[r]]);
    (xs, ys)
}

/// Leave-one-out refits inside folds for every sample unit. A unit whose
/// fold leaves fewer rows than outcome features falls back to a fit on all
/// other sample units.
pub fn crossfit_nuisance(dataset: &Dataset, folds: &FoldAssignment, features: &FeatureMap) -> Result<CrossFitted> {
    let units = dataset.sample_ids();
    let (x_all, y_all) = outcome_design(dataset, &units, features)?;
    let z_all: Vec<Vec<f64>> = units.iter().map(|&i| dataset.units[i].covariates.clone()).collect();
    let d_all = units.iter().map(|&i| dataset.treatment(i)).collect::<Result<Vec<_>>>()?;
    let mut row_of = vec![usize::MAX; dataset.n_nodes()];
    units.iter().enumerate().for_each(|(r, &i)| row_of[i] = r);

    let all_rows: Vec<usize> = (0..units.len()).collect();
    let fit_rows = |rows: &[usize], j: NodeId| -> Result<OutcomeModel> {
        let (xs, ys) = drop_row(&x_all, &y_all, rows, row_of[j]);
        let theta = if xs.nrows() < xs.ncols() {
            warn!("fold of unit {j} has {} rows for {} features; using ridge", xs.nrows(), xs.ncols());
            ridge(&xs, &ys, SMALL_FOLD_RIDGE)?
        } else {
            lstsq_min_norm(&xs, &ys)?
        };
        Ok(OutcomeModel { features: features.clone(), coefficients: theta.iter().copied().collect() })
    };
    let logistic_rows = |rows: &[usize], j: NodeId| {
        let keep: Vec<usize> = rows.iter().copied().filter(|&r| r != row_of[j]).collect();
        let z: Vec<Vec<f64>> = keep.iter().map(|&r| z_all[r].clone()).collect();
        let d: Vec<bool> = keep.iter().map(|&r| d_all[r]).collect();
        fit_logistic(&z, &d)
    };

    let fits: Vec<(OutcomeModel, TreatmentModel, bool)> = units
        .par_iter()
        .map(|&j| {
            let fold = &folds.folds[folds.fold_of[j].expect("sample units have folds")];
            let rows: Vec<usize> = fold.iter().map(|&i| row_of[i]).collect();
            // fallbacks pool every other sample unit, still leaving the unit out
            if fold.len() <= features.len() {
                return Ok((fit_rows(&all_rows, j)?, logistic_rows(&all_rows, j)?, true));
            }
            let outcome = fit_rows(&rows, j)?;
            match logistic_rows(&rows, j) {
                Ok(t) => Ok((outcome, t, false)),
                // tiny folds can separate or leave the information matrix singular
                Err(Error::Separation(_) | Error::Numerical(_)) => Ok((outcome, logistic_rows(&all_rows, j)?, true)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut out = CrossFitted { units: units.clone(), outcome: vec![], treatment: vec![], fallbacks: vec![] };
    for (&j, (o, t, fell_back)) in units.iter().zip(fits) {
        if fell_back {
            out.fallbacks.push(j);
        }
        out.outcome.push(o);
        out.treatment.push(t);
    }
    if !out.fallbacks.is_empty() {
        warn!(
            "{} of {} units have no usable out-of-fold fit and use the pooled leave-one-out model: {:?}",
            out.fallbacks.len(),
            units.len(),
            out.fallbacks
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{InterferenceDegree, Role, UnitRecord};
    use crate::graph::Graph;

    fn dataset(graph: Graph) -> Dataset {
        let n = graph.n_nodes();
        let units = (0..n)
            .map(|id| UnitRecord {
                id,
                outcome: Some(id as f64),
                treatment: Some(id % 2 == 0),
                covariates: vec![],
                policy_covariates: vec![],
                role: Role::Sample,
                rho: 1.0,
            })
            .collect();
        Dataset::new(graph, units, vec![], vec![], None, InterferenceDegree::One).unwrap()
    }

    #[test]
    fn empty_graph_single_fold() {
        let ds = dataset(Graph::empty(5));
        for r in [1, 2, 3] {
            let f = make_folds(&ds, r).unwrap();
            assert_eq!(f.folds, vec![vec![0, 1, 2, 3, 4]]);
        }
    }

    #[test]
    fn path_alternates() {
        let ds = dataset(Graph::from_edges(4, [(0, 1), (1, 2), (2, 3)], false).unwrap());
        let f = make_folds(&ds, 1).unwrap();
        assert_eq!(f.n_folds(), 2);
        assert_eq!(f.fold_of[0], f.fold_of[2]);
        assert_eq!(f.fold_of[1], f.fold_of[3]);
        assert_ne!(f.fold_of[0], f.fold_of[1]);
    }

    #[test]
    fn radius_zero_is_one_fold() {
        let ds = dataset(Graph::from_edges(3, [(0, 1), (1, 2)], false).unwrap());
        assert_eq!(make_folds(&ds, 0).unwrap().n_folds(), 1);
    }
}
