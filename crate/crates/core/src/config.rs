//! Experiment configuration in a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. List values are
//! comma-separated. Unknown keys are rejected so typos surface early.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Plugin,
    Ipw,
    Aipw,
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plugin" => Ok(Self::Plugin),
            "ipw" => Ok(Self::Ipw),
            "aipw" => Ok(Self::Aipw),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Plugin => "plugin",
            Self::Ipw => "ipw",
            Self::Aipw => "aipw",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Auto,
    Cells,
    BranchBound,
    Heuristic,
}

impl FromStr for BackendChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "cells" | "exact_cells" => Ok(Self::Cells),
            "bnb" | "branch_bound" => Ok(Self::BranchBound),
            "heuristic" => Ok(Self::Heuristic),
            other => Err(Error::Config(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    LinearThreshold,
    ExplicitAssignment,
}

impl FromStr for ClassKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "linear_threshold" => Ok(Self::LinearThreshold),
            "explicit" | "explicit_assignment" => Ok(Self::ExplicitAssignment),
            other => Err(Error::Config(format!("unknown policy class `{other}`"))),
        }
    }
}

/// Box constraint on linear-rule coefficients (intercept first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CoefBox {
    /// The same `[lo, hi]` for every coefficient.
    Uniform(f64, f64),
    /// One `[lo, hi]` per coefficient.
    PerCoef(Vec<(f64, f64)>),
}

impl Default for CoefBox {
    fn default() -> Self {
        CoefBox::Uniform(-1.0, 1.0)
    }
}

impl CoefBox {
    /// Bounds for a rule with `n_coef` coefficients (intercept included).
    pub fn bounds(&self, n_coef: usize) -> Result<Vec<(f64, f64)>> {
        let bounds = match self {
            CoefBox::Uniform(lo, hi) => vec![(*lo, *hi); n_coef],
            CoefBox::PerCoef(b) if b.len() == n_coef => b.clone(),
            CoefBox::PerCoef(b) => {
                return Err(Error::Config(format!(
                    "coef_box lists {} ranges but the rule has {n_coef} coefficients",
                    b.len()
                )))
            }
        };
        for &(lo, hi) in &bounds {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::Config(format!("invalid coefficient range {lo}:{hi}")));
            }
        }
        Ok(bounds)
    }

    pub fn is_bounded(&self) -> bool {
        match self {
            CoefBox::Uniform(lo, hi) => lo.is_finite() && hi.is_finite(),
            CoefBox::PerCoef(b) => b.iter().all(|(lo, hi)| lo.is_finite() && hi.is_finite()),
        }
    }
}

impl FromStr for CoefBox {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parse_range = |r: &str| -> Result<(f64, f64)> {
            let r = r.trim();
            match r.split_once(':') {
                Some((lo, hi)) => Ok((parse_f64("coef_box", lo)?, parse_f64("coef_box", hi)?)),
                None => {
                    let b = parse_f64("coef_box", r)?;
                    Ok((-b.abs(), b.abs()))
                }
            }
        };
        let parts: Vec<&str> = s.split(',').filter(|p| !p.trim().is_empty()).collect();
        match parts.as_slice() {
            [] => Err(Error::Config("empty coef_box".into())),
            [one] => {
                let (lo, hi) = parse_range(one)?;
                Ok(CoefBox::Uniform(lo, hi))
            }
            many => Ok(CoefBox::PerCoef(many.iter().map(|r| parse_range(r)).collect::<Result<_>>()?)),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}` as a number")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("`{key}`: expected a boolean, got `{other}`"))),
    }
}

fn parse_list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    /// Policy covariates: names of covariate columns, or `degree`.
    pub x_columns: Vec<String>,
    pub interference_degree: u8,
    pub tau: Option<Vec<f64>>,
    pub trim: f64,
    pub capacity: Option<f64>,
    pub coef_box: CoefBox,
    pub directed: bool,
    pub seed: Option<u64>,
    pub estimator: EstimatorKind,
    pub backend: BackendChoice,
    pub class: ClassKind,
    pub crossfit: bool,
    pub crossfit_radius: usize,
    /// Outcome-model basis, e.g. `1, d, s, d*s, Z1, d*Z1`. `None` selects the default basis.
    pub features: Option<String>,
    /// Confidence parameter of the capacity concentration diagnostic.
    pub gamma: f64,
    pub heuristic_restarts: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            nodes: None,
            edges: None,
            x_columns: Vec::new(),
            interference_degree: 1,
            tau: None,
            trim: 0.0,
            capacity: None,
            coef_box: CoefBox::default(),
            directed: false,
            seed: None,
            estimator: EstimatorKind::Aipw,
            backend: BackendChoice::Auto,
            class: ClassKind::LinearThreshold,
            crossfit: false,
            crossfit_radius: 2,
            features: None,
            gamma: 0.05,
            heuristic_restarts: 8,
        }
    }
}

impl ExperimentConfig {
    /// Parses the text format. Relative paths stay relative; see [`Self::from_file`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Reads a config file; relative `nodes`/`edges` paths resolve against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for p in [&mut cfg.nodes, &mut cfg.edges].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "nodes" => self.nodes = Some(PathBuf::from(value)),
            "edges" => self.edges = Some(PathBuf::from(value)),
            "x_columns" => self.x_columns = parse_list(value),
            "interference_degree" => {
                self.interference_degree = value
                    .parse()
                    .map_err(|_| Error::Config(format!("interference_degree: bad value `{value}`")))?
            }
            "tau" => {
                self.tau = if value.is_empty() || value == "none" {
                    None
                } else {
                    Some(parse_list(value).iter().map(|v| parse_f64(key, v)).collect::<Result<_>>()?)
                }
            }
            "trim" => self.trim = parse_f64(key, value)?,
            "capacity" => {
                self.capacity = if value == "none" { None } else { Some(parse_f64(key, value)?) }
            }
            "coef_box" => self.coef_box = value.parse()?,
            "directed" => self.directed = parse_bool(key, value)?,
            "seed" => {
                self.seed =
                    Some(value.parse().map_err(|_| Error::Config(format!("seed: bad value `{value}`")))?)
            }
            "estimator" => self.estimator = value.parse()?,
            "backend" => self.backend = value.parse()?,
            "class" => self.class = value.parse()?,
            "crossfit" => self.crossfit = parse_bool(key, value)?,
            "crossfit_radius" => {
                self.crossfit_radius = value
                    .parse()
                    .map_err(|_| Error::Config(format!("crossfit_radius: bad value `{value}`")))?
            }
            "features" => self.features = Some(value.to_string()),
            "gamma" => self.gamma = parse_f64(key, value)?,
            "heuristic_restarts" => {
                self.heuristic_restarts = value
                    .parse()
                    .map_err(|_| Error::Config(format!("heuristic_restarts: bad value `{value}`")))?
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Range checks that do not need the data files.
    /// Checks that the node and edge files are configured and exist.
    pub fn validate_inputs(&self) -> Result<(&Path, &Path)> {
        fn get<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
            let p = p.as_deref().ok_or_else(|| Error::Config(format!("`{key}` is not set")))?;
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::Config(format!("{key} file {} does not exist", p.display())))
            }
        }
        Ok((get(&self.nodes, "nodes")?, get(&self.edges, "edges")?))
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.interference_degree) {
            return Err(Error::Config("interference_degree must be 1 or 2".into()));
        }
        if !(0.0..0.5).contains(&self.trim) {
            return Err(Error::Config(format!("trim must lie in [0, 0.5), got {}", self.trim)));
        }
        if let Some(k) = self.capacity {
            if !(k > 0.0 && k <= 1.0) {
                return Err(Error::Config(format!("capacity must lie in (0, 1], got {k}")));
            }
        }
        if let Some(tau) = &self.tau {
            crate::data::Thresholds::new(tau.clone())?;
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1)".into()));
        }
        Ok(())
    }
}
