//! Treatment exposures: own assignment plus first- and second-degree
//! treated-neighbor counts.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, InterferenceDegree};
use crate::error::Result;
use crate::graph::{Graph, NodeId, SecondDegree};

/// `(d, s1, s2)`; `s2` is always zero under one-degree interference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Exposure {
    pub d: bool,
    pub s1: usize,
    pub s2: usize,
}

/// Neighborhood of one unit as seen by the estimators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub unit: NodeId,
    pub first: Vec<NodeId>,
    /// Second-degree entries with multiplicity; empty under one-degree interference.
    pub second: Vec<(NodeId, usize)>,
}

impl Neighborhood {
    pub fn of(graph: &Graph, unit: NodeId, interference: InterferenceDegree) -> Result<Self> {
        let first = graph.neighbors(unit)?.to_vec();
        let second = match interference {
            InterferenceDegree::One => Vec::new(),
            InterferenceDegree::Two => graph.second_degree(unit)?.entries,
        };
        Ok(Neighborhood { unit, first, second })
    }

    /// Neighborhood with no neighbors at all (used when interference is ignored).
    pub fn isolated(unit: NodeId) -> Self {
        Neighborhood { unit, first: Vec::new(), second: Vec::new() }
    }

    pub fn l1(&self) -> usize {
        self.first.len()
    }

    /// Multiset size of the second-degree neighborhood.
    pub fn l2(&self) -> usize {
        SecondDegree { node: self.unit, entries: self.second.clone() }.size()
    }

    /// Exposure induced by an assignment over all nodes.
    pub fn exposure(&self, assignment: &[bool]) -> Exposure {
        Exposure {
            d: assignment[self.unit],
            s1: self.first.iter().filter(|&&k| assignment[k]).count(),
            s2: self.second.iter().filter(|&&(k, _)| assignment[k]).map(|&(_, m)| m).sum(),
        }
    }
}

/// Observed treatment vector; nodes with missing treatment count as untreated.
pub fn observed_assignment(dataset: &Dataset) -> Vec<bool> {
    dataset.units.iter().map(|u| u.treatment.unwrap_or(false)).collect()
}

/// Realized exposure `(D_i, sum D_k, sum m_j D_j)` of a unit.
pub fn realized_exposure(dataset: &Dataset, unit: NodeId) -> Result<Exposure> {
    dataset.treatment(unit)?;
    let hood = Neighborhood::of(&dataset.graph, unit, dataset.interference)?;
    for &k in hood.first.iter().chain(hood.second.iter().map(|(k, _)| k)) {
        dataset.treatment(k)?;
    }
    Ok(hood.exposure(&observed_assignment(dataset)))
}
