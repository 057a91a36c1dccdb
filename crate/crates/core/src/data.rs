//! Unit-level data, population roles and exposure thresholds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sample,
    Target,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Sample => "sample",
            Role::Target => "target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterferenceDegree {
    One,
    Two,
}

impl TryFrom<u8> for InterferenceDegree {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            _ => Err(Error::Config(format!("interference degree must be 1 or 2, got {v}"))),
        }
    }
}

/// One policy covariate: a named covariate column or the unit's degree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum XColumn {
    Covariate(usize),
    Degree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub id: NodeId,
    pub outcome: Option<f64>,
    pub treatment: Option<bool>,
    pub covariates: Vec<f64>,
    pub policy_covariates: Vec<f64>,
    pub role: Role,
    pub rho: f64,
}

/// Exposure thresholds `tau_1 < ... < tau_M = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds(Vec<f64>);

impl Thresholds {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if tau.is_empty() {
            return Err(Error::Config("tau must not be empty".into()));
        }
        if tau.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("tau entries must lie in [0, 1]".into()));
        }
        if tau.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("tau must be strictly increasing".into()));
        }
        if *tau.last().unwrap() != 1.0 {
            return Err(Error::Config("the last tau must equal 1".into()));
        }
        Ok(Thresholds(tau))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Exposure stratum of a treated-neighbor count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExposureBucket {
    /// Units without neighbors form their own stratum.
    NoNeighbors,
    /// Index `m` of the smallest threshold with `tau_m >= s / l`.
    Level(usize),
}

/// Maps `s` treated out of `l` neighbors to its threshold bucket, using
/// `tau_{m-1} < s/l <= tau_m` with `tau_0 = -inf`.
pub fn exposure_bucket(s: usize, l: usize, tau: &Thresholds) -> Result<ExposureBucket> {
    if s > l {
        return Err(Error::Input(format!("treated count {s} exceeds neighbor count {l}")));
    }
    if l == 0 {
        return Ok(ExposureBucket::NoNeighbors);
    }
    let frac = s as f64 / l as f64;
    let m = tau.values().iter().position(|&t| t >= frac).unwrap_or(tau.len() - 1);
    Ok(ExposureBucket::Level(m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub units: Vec<UnitRecord>,
    pub covariate_names: Vec<String>,
    pub x_columns: Vec<XColumn>,
    pub tau: Option<Thresholds>,
    pub interference: InterferenceDegree,
}

/// Columns of the nodes file with fixed meaning; everything else is a covariate.
const RESERVED: [&str; 5] = ["id", "Y", "D", "role", "rho"];

pub fn resolve_x_columns(names: &[String], covariate_names: &[String]) -> Result<Vec<XColumn>> {
    names
        .iter()
        .map(|name| {
            if name == "degree" {
                Ok(XColumn::Degree)
            } else {
                covariate_names
                    .iter()
                    .position(|c| c == name)
                    .map(XColumn::Covariate)
                    .ok_or_else(|| Error::Config(format!("policy covariate `{name}` is not a column")))
            }
        })
        .collect()
}

impl Dataset {
    /// Links units to the graph, derives policy covariates and checks the
    /// sampling requirements (every sample unit's neighborhood is observed).
    pub fn new(
        graph: Graph,
        mut units: Vec<UnitRecord>,
        covariate_names: Vec<String>,
        x_columns: Vec<XColumn>,
        tau: Option<Thresholds>,
        interference: InterferenceDegree,
    ) -> Result<Self> {
        if units.len() != graph.n_nodes() {
            return Err(Error::Integrity(format!(
                "{} unit records for a graph with {} nodes",
                units.len(),
                graph.n_nodes()
            )));
        }
        units.sort_by_key(|u| u.id);
        for (pos, u) in units.iter().enumerate() {
            if u.id != pos {
                return Err(Error::Integrity(format!("unit ids must be 0..{} without gaps", graph.n_nodes())));
            }
            if u.covariates.len() != covariate_names.len() {
                return Err(Error::Integrity(format!("unit {} has the wrong number of covariates", u.id)));
            }
            if !(u.rho.is_finite() && u.rho >= 0.0) {
                return Err(Error::Validation(format!("unit {}: rho must be finite and >= 0", u.id)));
            }
            if u.role == Role::Sample && (u.outcome.is_none() || u.treatment.is_none()) {
                return Err(Error::Validation(format!("sample unit {} lacks Y or D", u.id)));
            }
        }
        for u in &mut units {
            u.policy_covariates = x_columns
                .iter()
                .map(|c| match c {
                    XColumn::Covariate(j) => u.covariates[*j],
                    XColumn::Degree => graph.degree(u.id) as f64,
                })
                .collect();
        }
        let ds = Dataset { graph, units, covariate_names, x_columns, tau, interference };
        ds.check_sampling()?;
        Ok(ds)
    }

    fn check_sampling(&self) -> Result<()> {
        let finite = |k: NodeId| self.units[k].covariates.iter().all(|v| v.is_finite());
        for u in self.units.iter().filter(|u| u.role == Role::Sample) {
            let mut reach: Vec<NodeId> = vec![u.id];
            reach.extend_from_slice(self.graph.adj(u.id));
            if self.interference == InterferenceDegree::Two {
                reach.extend(self.graph.second_degree(u.id)?.entries.iter().map(|&(j, _)| j));
            }
            for &k in &reach {
                if !finite(k) {
                    return Err(Error::Integrity(format!(
                        "covariates of node {k} (neighborhood of sample unit {}) are missing",
                        u.id
                    )));
                }
                if self.units[k].treatment.is_none() {
                    return Err(Error::Integrity(format!(
                        "treatment of node {k} (neighborhood of sample unit {}) is missing",
                        u.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.units.len()
    }

    pub fn ids_with_role(&self, role: Role) -> Vec<NodeId> {
        self.units.iter().filter(|u| u.role == role).map(|u| u.id).collect()
    }

    pub fn sample_ids(&self) -> Vec<NodeId> {
        self.ids_with_role(Role::Sample)
    }

    pub fn target_ids(&self) -> Vec<NodeId> {
        self.ids_with_role(Role::Target)
    }

    /// Policy covariate rows for every node.
    pub fn policy_matrix(&self) -> Vec<Vec<f64>> {
        self.units.iter().map(|u| u.policy_covariates.clone()).collect()
    }

    pub fn treatment(&self, i: NodeId) -> Result<bool> {
        self.units[i]
            .treatment
            .ok_or_else(|| Error::Integrity(format!("treatment of node {i} is missing")))
    }

    pub fn outcome(&self, i: NodeId) -> Result<f64> {
        self.units[i]
            .outcome
            .ok_or_else(|| Error::Integrity(format!("outcome of node {i} is missing")))
    }

    /// Writes `id,Y,D,<covariates>,role,rho` and `src,dst` files.
    pub fn write_csv(&self, nodes: impl AsRef<Path>, edges: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(nodes)?;
        let mut header: Vec<String> = vec!["id".into(), "Y".into(), "D".into()];
        header.extend(self.covariate_names.iter().cloned());
        header.push("role".into());
        header.push("rho".into());
        w.write_record(&header)?;
        for u in &self.units {
            let mut row = vec![
                u.id.to_string(),
                u.outcome.map(|y| y.to_string()).unwrap_or_default(),
                u.treatment.map(|d| u8::from(d).to_string()).unwrap_or_default(),
            ];
            row.extend(u.covariates.iter().map(|v| v.to_string()));
            row.push(u.role.as_str().into());
            row.push(u.rho.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        write_edges_csv(&self.graph, edges)
    }
}

pub fn write_edges_csv(graph: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["src", "dst"])?;
    for (i, j) in graph.edges() {
        w.write_record([i.to_string(), j.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_opt_f64(field: &str, col: &str, row: usize) -> Result<Option<f64>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Validation(format!("row {row}: column `{col}` has non-numeric value `{field}`")))
}

/// Reads the `src,dst` edge file.
pub fn read_edges_csv(path: impl AsRef<Path>, n_nodes: usize, directed: bool) -> Result<Graph> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Config(format!("edges file lacks column `{name}`")))
    };
    let (src, dst) = (col("src")?, col("dst")?);
    let mut edges = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |c: usize| -> Result<NodeId> {
            rec.get(c)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::Integrity(format!("edge row {}: bad node id", row + 1)))
        };
        edges.push((parse(src)?, parse(dst)?));
    }
    Graph::from_edges(n_nodes, edges, directed)
}

/// Loads nodes and edges and assembles the analysis dataset.
pub fn load_dataset(
    nodes_csv: impl AsRef<Path>,
    edges_csv: impl AsRef<Path>,
    config: &ExperimentConfig,
) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(nodes_csv)?;
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| col(name).ok_or_else(|| Error::Config(format!("nodes file lacks column `{name}`")));
    let (id_c, y_c, d_c, role_c) = (require("id")?, require("Y")?, require("D")?, require("role")?);
    let rho_c = col("rho");
    let cov_cols: Vec<usize> = (0..headers.len()).filter(|&c| !RESERVED.contains(&headers[c].as_str())).collect();
    let covariate_names: Vec<String> = cov_cols.iter().map(|&c| headers[c].clone()).collect();
    let x_columns = resolve_x_columns(&config.x_columns, &covariate_names)?;

    let mut units = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = row + 1;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let id: NodeId = field(id_c)
            .trim()
            .parse()
            .map_err(|_| Error::Integrity(format!("row {row}: bad id `{}`", field(id_c))))?;
        let outcome = parse_opt_f64(field(y_c), "Y", row)?;
        let treatment = match field(d_c).trim() {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => return Err(Error::Validation(format!("row {row}: treatment must be 0 or 1, got `{other}`"))),
        };
        let role = match field(role_c).trim() {
            "sample" => Role::Sample,
            "target" => Role::Target,
            other => return Err(Error::Validation(format!("row {row}: unknown role `{other}`"))),
        };
        let rho = match rho_c {
            Some(c) => parse_opt_f64(field(c), "rho", row)?.unwrap_or(1.0),
            None => 1.0,
        };
        let covariates = cov_cols
            .iter()
            .map(|&c| Ok(parse_opt_f64(field(c), &headers[c], row)?.unwrap_or(f64::NAN)))
            .collect::<Result<Vec<_>>>()?;
        units.push(UnitRecord { id, outcome, treatment, covariates, policy_covariates: Vec::new(), role, rho });
    }
    let n = units.len();
    if let Some(u) = units.iter().find(|u| u.id >= n) {
        return Err(Error::Integrity(format!("node id {} outside 0..{n}", u.id)));
    }
    let graph = read_edges_csv(edges_csv, n, config.directed)?;
    let tau = config.tau.clone().map(Thresholds::new).transpose()?;
    let interference = InterferenceDegree::try_from(config.interference_degree)?;
    Dataset::new(graph, units, covariate_names, x_columns, tau, interference)
}
