//! Policy learning under network interference.
//!
//! The crate estimates the welfare of treatment rules when outcomes depend on
//! how many of a unit's neighbors are treated, and searches a policy class
//! for the rule with the largest estimated welfare.
//!
//! ```
//! use netwelfare::graph::Graph;
//!
//! let g = Graph::from_edges(3, [(0, 1), (1, 2)], false).unwrap();
//! assert_eq!(g.neighbors(1).unwrap(), &[0, 2]);
//! ```

pub mod config;
pub mod crossfit;
pub mod data;
pub mod error;
pub mod exposure;
pub mod graph;
pub mod nuisance;
pub mod pipeline;
pub mod policy;
pub mod sim;
pub mod welfare;

pub use config::{BackendChoice, ClassKind, CoefBox, EstimatorKind, ExperimentConfig};
pub use data::{Dataset, InterferenceDegree, Role, Thresholds, UnitRecord};
pub use error::{Error, ErrorClass, Result};
pub use exposure::{Exposure, Neighborhood};
pub use graph::{Graph, NodeId};
pub use policy::{Policy, PolicyClass, SolveResult};
pub use welfare::{EffectTable, EstimationFrame, MeanTable, WelfareEstimate};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/propensity.md")]
    mod propensity {}
    #[doc = include_str!("../../../book/src/welfare.md")]
    mod welfare {}
    #[doc = include_str!("../../../book/src/crossfit.md")]
    mod crossfit {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    mod optimization {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/testing.md")]
    mod testing {}
}
