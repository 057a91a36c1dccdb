//! Nuisance models: the outcome regression, the individual treatment
//! probability and the joint exposure propensity built from them.
//!
//! The joint propensity of a unit factorizes as its own treatment
//! probability times the distribution of the number of treated neighbors.
//! With independent assignments that count is Poisson-binomial, and its PMF
//! is computed exactly by convolution. Second-degree counts weight each
//! neighbor by its path multiplicity, which turns the convolution into one
//! over integer-weighted Bernoulli variables.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{exposure_bucket, Dataset, ExposureBucket, InterferenceDegree, Thresholds};
use crate::error::{Error, Result};
use crate::exposure::{realized_exposure, Exposure, Neighborhood};
use crate::graph::NodeId;

/// A single factor of a regression term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Factor {
    D,
    S1,
    S2,
    L1,
    L2,
    /// `s1 / max(l1, 1)`
    Frac1,
    /// `s2 / max(l2, 1)`
    Frac2,
    Z(usize),
}

/// Inputs of the conditional mean `m(d, s1, s2, z, l1, l2)`.
#[derive(Debug, Clone, Copy)]
pub struct FeatureInput<'a> {
    pub d: bool,
    pub s1: usize,
    pub s2: usize,
    pub l1: usize,
    pub l2: usize,
    pub z: &'a [f64],
}

impl<'a> FeatureInput<'a> {
    pub fn new(exposure: Exposure, l1: usize, l2: usize, z: &'a [f64]) -> Self {
        FeatureInput { d: exposure.d, s1: exposure.s1, s2: exposure.s2, l1, l2, z }
    }
}

/// Linear basis over exposures and covariates; each term is a product of
/// factors and the empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    terms: Vec<Vec<Factor>>,
    names: Vec<String>,
}

impl FeatureMap {
    /// Parses a comma-separated term list such as `1, d, s, d*s, Z1, d*Z1`.
    ///
    /// Recognized factors: `d`, `s`/`s1`, `s2`, `l`/`l1`, `l2`, `frac`/`frac1`,
    /// `frac2` and covariate names.
    pub fn parse(spec: &str, covariate_names: &[String]) -> Result<Self> {
        let mut terms = Vec::new();
        let mut names = Vec::new();
        for raw in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let mut term = Vec::new();
            for tok in raw.split('*').map(str::trim) {
                let f = match tok {
                    "1" => continue,
                    "d" => Factor::D,
                    "s" | "s1" => Factor::S1,
                    "s2" => Factor::S2,
                    "l" | "l1" => Factor::L1,
                    "l2" => Factor::L2,
                    "frac" | "frac1" => Factor::Frac1,
                    "frac2" => Factor::Frac2,
                    name => Factor::Z(
                        covariate_names
                            .iter()
                            .position(|c| c == name)
                            .ok_or_else(|| Error::Config(format!("unknown feature factor `{name}`")))?,
                    ),
                };
                term.push(f);
            }
            terms.push(term);
            names.push(raw.replace(' ', ""));
        }
        if terms.is_empty() {
            return Err(Error::Config("empty feature map".into()));
        }
        Ok(FeatureMap { terms, names })
    }

    fn from_terms(terms: Vec<Vec<Factor>>, covariate_names: &[String]) -> Self {
        let names = terms
            .iter()
            .map(|t| {
                if t.is_empty() {
                    return "1".to_string();
                }
                t.iter()
                    .map(|f| match f {
                        Factor::D => "d".to_string(),
                        Factor::S1 => "s".to_string(),
                        Factor::S2 => "s2".to_string(),
                        Factor::L1 => "l".to_string(),
                        Factor::L2 => "l2".to_string(),
                        Factor::Frac1 => "frac".to_string(),
                        Factor::Frac2 => "frac2".to_string(),
                        Factor::Z(j) => covariate_names.get(*j).cloned().unwrap_or_else(|| format!("Z{j}")),
                    })
                    .collect::<Vec<_>>()
                    .join("*")
            })
            .collect();
        FeatureMap { terms, names }
    }

    /// Default basis: `1, d, s, d*s, l`, and for every covariate `z, d*z, s*z`;
    /// two-degree interference adds `s2, d*s2, l2`.
    pub fn default_basis(covariate_names: &[String], interference: InterferenceDegree) -> Self {
        use Factor::*;
        let mut terms = vec![vec![], vec![D], vec![S1], vec![D, S1], vec![L1]];
        if interference == InterferenceDegree::Two {
            terms.extend([vec![S2], vec![D, S2], vec![L2]]);
        }
        for j in 0..covariate_names.len() {
            terms.extend([vec![Z(j)], vec![D, Z(j)], vec![S1, Z(j)]]);
        }
        Self::from_terms(terms, covariate_names)
    }

    /// Basis without any neighbor information: `1, d`, and `z, d*z` per covariate.
    pub fn no_interference(covariate_names: &[String]) -> Self {
        use Factor::*;
        let mut terms = vec![vec![], vec![D]];
        for j in 0..covariate_names.len() {
            terms.extend([vec![Z(j)], vec![D, Z(j)]]);
        }
        Self::from_terms(terms, covariate_names)
    }

    /// Builds from explicit factor products.
    pub fn from_factor_terms(terms: Vec<Vec<Factor>>, covariate_names: &[String]) -> Self {
        Self::from_terms(terms, covariate_names)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn write_row(&self, x: &FeatureInput<'_>, out: &mut [f64]) {
        for (slot, term) in out.iter_mut().zip(&self.terms) {
            *slot = term.iter().fold(1.0, |acc, f| {
                acc * match *f {
                    Factor::D => f64::from(u8::from(x.d)),
                    Factor::S1 => x.s1 as f64,
                    Factor::S2 => x.s2 as f64,
                    Factor::L1 => x.l1 as f64,
                    Factor::L2 => x.l2 as f64,
                    Factor::Frac1 => x.s1 as f64 / x.l1.max(1) as f64,
                    Factor::Frac2 => x.s2 as f64 / x.l2.max(1) as f64,
                    Factor::Z(j) => x.z[j],
                }
            });
        }
    }

    pub fn row(&self, x: &FeatureInput<'_>) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.write_row(x, &mut out);
        out
    }
}

/// Linear outcome regression `m(d, s1, s2, z, l1, l2) = phi(.)' theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub features: FeatureMap,
    pub coefficients: Vec<f64>,
}

impl OutcomeModel {
    pub fn predict(&self, x: &FeatureInput<'_>) -> f64 {
        let mut row = vec![0.0; self.features.len()];
        self.features.write_row(x, &mut row);
        row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }
}

/// Design matrix and response of the outcome regression for `units`.
pub fn outcome_design(
    dataset: &Dataset,
    units: &[NodeId],
    features: &FeatureMap,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut x = DMatrix::zeros(units.len(), features.len());
    let mut y = DVector::zeros(units.len());
    let mut row = vec![0.0; features.len()];
    for (r, &i) in units.iter().enumerate() {
        let hood = Neighborhood::of(&dataset.graph, i, dataset.interference)?;
        let e = realized_exposure(dataset, i)?;
        let input = FeatureInput::new(e, hood.l1(), hood.l2(), &dataset.units[i].covariates);
        features.write_row(&input, &mut row);
        for (c, v) in row.iter().enumerate() {
            x[(r, c)] = *v;
        }
        y[r] = dataset.outcome(i)?;
    }
    Ok((x, y))
}

/// Minimum-norm least squares through the SVD.
pub fn lstsq_min_norm(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if x.nrows() == 0 {
        return Ok(DVector::zeros(x.ncols()));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * (x.nrows().max(x.ncols()) as f64) * f64::EPSILON;
    svd.solve(y, eps).map_err(|e| Error::Numerical(format!("least squares failed: {e}")))
}

/// Ridge regression `(X'X + lambda I)^-1 X'y`.
pub fn ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let mut gram = x.transpose() * x;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = x.transpose() * y;
    match gram.clone().cholesky() {
        Some(ch) => Ok(ch.solve(&rhs)),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("ridge system is singular".into())),
    }
}

/// Ordinary least squares fit of the outcome model on `units`; singular
/// designs resolve to the minimum-norm solution.
pub fn fit_outcome(dataset: &Dataset, units: &[NodeId], features: &FeatureMap) -> Result<OutcomeModel> {
    if units.is_empty() {
        return Err(Error::Input("no sample units to fit the outcome model".into()));
    }
    let (x, y) = outcome_design(dataset, units, features)?;
    let theta = lstsq_min_norm(&x, &y)?;
    Ok(OutcomeModel { features: features.clone(), coefficients: theta.iter().copied().collect() })
}

/// Logistic model `P(D = 1 | z) = 1 / (1 + exp(-(b0 + z'b)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentModel {
    /// Intercept first, then one coefficient per covariate.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl TreatmentModel {
    pub fn linear_index(&self, z: &[f64]) -> f64 {
        self.coefficients[0] + self.coefficients[1..].iter().zip(z).map(|(b, v)| b * v).sum::<f64>()
    }

    /// `P(D = 1 | z)`.
    pub fn prob(&self, z: &[f64]) -> f64 {
        sigmoid(self.linear_index(z))
    }

    /// Gradient of the log-likelihood at the fitted coefficients.
    pub fn score(&self, rows: &[Vec<f64>], treated: &[bool]) -> Vec<f64> {
        let mut g = vec![0.0; self.coefficients.len()];
        for (z, &d) in rows.iter().zip(treated) {
            let r = f64::from(u8::from(d)) - self.prob(z);
            g[0] += r;
            for (gj, v) in g[1..].iter_mut().zip(z) {
                *gj += r * v;
            }
        }
        g
    }
}

const IRLS_MAX_ITER: usize = 100;
const IRLS_TOL: f64 = 1e-10;
/// Linear index beyond which a fitted probability is treated as degenerate.
const SEPARATION_INDEX: f64 = 30.0;

/// Logistic maximum likelihood by iteratively reweighted least squares.
pub fn fit_logistic(rows: &[Vec<f64>], treated: &[bool]) -> Result<TreatmentModel> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Input("no units to fit the treatment model".into()));
    }
    let n_treated = treated.iter().filter(|&&d| d).count();
    if n_treated == 0 || n_treated == n {
        return Err(Error::Separation("only one treatment arm is present".into()));
    }
    let p = rows[0].len() + 1;
    let mut x = DMatrix::zeros(n, p);
    for (r, z) in rows.iter().enumerate() {
        x[(r, 0)] = 1.0;
        for (c, v) in z.iter().enumerate() {
            x[(r, c + 1)] = *v;
        }
    }
    let y = DVector::from_iterator(n, treated.iter().map(|&d| f64::from(u8::from(d))));
    let loglik = |beta: &DVector<f64>| -> f64 {
        let eta = &x * beta;
        eta.iter().zip(y.iter()).map(|(e, yi)| yi * e - softplus(*e)).sum()
    };

    let mut beta = DVector::zeros(p);
    let mut ll = loglik(&beta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        let eta = &x * &beta;
        let probs = eta.map(sigmoid);
        let resid = &y - &probs;
        let grad = x.transpose() * &resid;
        let w = probs.map(|q| (q * (1.0 - q)).max(1e-300));
        let xw = DMatrix::from_fn(n, p, |r, c| x[(r, c)] * w[r]);
        let hessian = x.transpose() * xw;
        let step = match hessian.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => hessian
                .clone()
                .lu()
                .solve(&grad)
                .ok_or_else(|| Error::Numerical("singular information matrix in logistic fit".into()))?,
        };
        let mut t = 1.0;
        let mut next = &beta + &step * t;
        let mut ll_next = loglik(&next);
        while ll_next < ll && t > 1e-8 {
            t *= 0.5;
            next = &beta + &step * t;
            ll_next = loglik(&next);
        }
        let improvement = ll_next - ll;
        if improvement >= 0.0 {
            beta = next;
            ll = ll_next;
        }
        if improvement.abs() < IRLS_TOL {
            converged = true;
            break;
        }
    }
    let eta = &x * &beta;
    if eta.iter().any(|e| e.abs() > SEPARATION_INDEX) {
        return Err(Error::Separation(format!(
            "fitted linear index reaches {:.1}",
            eta.iter().fold(0.0f64, |m, e| m.max(e.abs()))
        )));
    }
    let probs = eta.map(sigmoid);
    let w = probs.map(|q| q * (1.0 - q));
    let xw = DMatrix::from_fn(n, p, |r, c| x[(r, c)] * w[r]);
    let hessian = x.transpose() * xw;
    let std_errors = match hessian.try_inverse() {
        Some(inv) => (0..p).map(|j| inv[(j, j)].max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; p],
    };
    Ok(TreatmentModel {
        coefficients: beta.iter().copied().collect(),
        std_errors,
        log_likelihood: ll,
        iterations,
        converged,
    })
}

/// Fits `P(D = 1 | Z)` on `units` using every covariate column.
pub fn fit_treatment(dataset: &Dataset, units: &[NodeId]) -> Result<TreatmentModel> {
    let rows: Vec<Vec<f64>> = units.iter().map(|&i| dataset.units[i].covariates.clone()).collect();
    let treated = units.iter().map(|&i| dataset.treatment(i)).collect::<Result<Vec<_>>>()?;
    fit_logistic(&rows, &treated)
}

fn check_prob(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Input(format!("probability {p} outside [0, 1]")))
    }
}

/// Exact distribution of `sum_k w_k B_k` for independent `B_k ~ Bernoulli(p_k)`
/// with non-negative integer weights. The result has length `sum w_k + 1`.
pub fn weighted_bernoulli_pmf(items: &[(f64, usize)]) -> Result<Vec<f64>> {
    let total: usize = items.iter().map(|&(_, w)| w).sum();
    let mut pmf = vec![0.0; total + 1];
    pmf[0] = 1.0;
    let mut reach = 0;
    for &(p, w) in items {
        check_prob(p)?;
        let q = 1.0 - p;
        for k in (0..=reach + w).rev() {
            let stay = if k <= reach { pmf[k] * q } else { 0.0 };
            let moved = if k >= w && k - w <= reach { pmf[k - w] * p } else { 0.0 };
            pmf[k] = stay + moved;
        }
        reach += w;
    }
    Ok(pmf)
}

/// Poisson-binomial PMF of the number of successes among independent
/// Bernoulli trials, by dynamic-programming convolution.
pub fn poisson_binomial_pmf(probs: &[f64]) -> Result<Vec<f64>> {
    let items: Vec<(f64, usize)> = probs.iter().map(|&p| (p, 1)).collect();
    weighted_bernoulli_pmf(&items)
}

/// `P(D_i = d) * P(sum_k D_k = s)` given the unit's own treatment probability
/// and its neighbors' probabilities.
pub fn joint_propensity(own_treat_prob: f64, d: bool, s: usize, neighbor_probs: &[f64]) -> Result<f64> {
    check_prob(own_treat_prob)?;
    if s > neighbor_probs.len() {
        return Err(Error::Input(format!("s = {s} exceeds {} neighbors", neighbor_probs.len())));
    }
    let own = if d { own_treat_prob } else { 1.0 - own_treat_prob };
    Ok(own * poisson_binomial_pmf(neighbor_probs)?[s])
}

/// Two-degree analog: own probability times the first-degree PMF at `s1`
/// times the multiplicity-weighted second-degree PMF at `s2`.
pub fn joint_propensity_2deg(
    own_treat_prob: f64,
    d: bool,
    s1: usize,
    s2: usize,
    first_probs: &[f64],
    second: &[(f64, usize)],
) -> Result<f64> {
    check_prob(own_treat_prob)?;
    let l2: usize = second.iter().map(|&(_, m)| m).sum();
    if s1 > first_probs.len() || s2 > l2 {
        return Err(Error::Input(format!("exposure ({s1}, {s2}) outside the neighborhood")));
    }
    let own = if d { own_treat_prob } else { 1.0 - own_treat_prob };
    Ok(own * poisson_binomial_pmf(first_probs)?[s1] * weighted_bernoulli_pmf(second)?[s2])
}

/// Propensities of one unit over its exposure grid (or bucket grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPropensity {
    pub unit: NodeId,
    /// `P(D_i = 1 | Z_i)`.
    pub own: f64,
    pub first_pmf: Vec<f64>,
    pub second_pmf: Vec<f64>,
    map1: Vec<usize>,
    map2: Vec<usize>,
    n1: usize,
    n2: usize,
    /// Indexed `[d][bucket1][bucket2]`.
    table: Vec<f64>,
    trim: f64,
}

fn bucket_map(l: usize, tau: Option<&Thresholds>) -> Result<(Vec<usize>, usize)> {
    match tau {
        None => Ok(((0..=l).collect(), l + 1)),
        Some(tau) => {
            let map = (0..=l)
                .map(|s| {
                    Ok(match exposure_bucket(s, l, tau)? {
                        ExposureBucket::NoNeighbors => 0,
                        ExposureBucket::Level(m) => m,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let n = if l == 0 { 1 } else { tau.len() };
            Ok((map, n))
        }
    }
}

impl UnitPropensity {
    /// Builds the table for one unit from marginal treatment probabilities.
    ///
    /// Bucketed entries are sums of exact entries, accumulated with `s1`
    /// ascending in the outer loop and `s2` ascending in the inner loop.
    pub fn new(
        hood: &Neighborhood,
        marginal: impl Fn(NodeId) -> f64,
        tau: Option<&Thresholds>,
        trim: f64,
    ) -> Result<Self> {
        let own = marginal(hood.unit);
        check_prob(own)?;
        let first: Vec<f64> = hood.first.iter().map(|&k| marginal(k)).collect();
        let second: Vec<(f64, usize)> = hood.second.iter().map(|&(k, m)| (marginal(k), m)).collect();
        let first_pmf = poisson_binomial_pmf(&first)?;
        let second_pmf = weighted_bernoulli_pmf(&second)?;
        let (map1, n1) = bucket_map(first_pmf.len() - 1, tau)?;
        let (map2, n2) = if hood.second.is_empty() {
            (vec![0], 1)
        } else {
            bucket_map(second_pmf.len() - 1, tau)?
        };
        let mut table = vec![0.0; 2 * n1 * n2];
        for d in [false, true] {
            let own_d = if d { own } else { 1.0 - own };
            for (s1, p1) in first_pmf.iter().enumerate() {
                for (s2, p2) in second_pmf.iter().enumerate() {
                    let idx = (usize::from(d) * n1 + map1[s1]) * n2 + map2[s2];
                    table[idx] += own_d * p1 * p2;
                }
            }
        }
        Ok(UnitPropensity { unit: hood.unit, own, first_pmf, second_pmf, map1, map2, n1, n2, table, trim })
    }

    fn index(&self, d: bool, s1: usize, s2: usize) -> usize {
        (usize::from(d) * self.n1 + self.map1[s1]) * self.n2 + self.map2[s2]
    }

    /// Propensity of the exposure cell containing `(d, s1, s2)`.
    pub fn value(&self, e: Exposure) -> f64 {
        self.table[self.index(e.d, e.s1, e.s2)]
    }

    /// Unbucketed `P(D_i = d, S1 = s1, S2 = s2)`.
    pub fn exact(&self, e: Exposure) -> f64 {
        let own_d = if e.d { self.own } else { 1.0 - self.own };
        own_d * self.first_pmf[e.s1] * self.second_pmf[e.s2]
    }

    pub fn is_trimmed(&self, e: Exposure) -> bool {
        let v = self.value(e);
        v <= 0.0 || v < self.trim
    }

    /// Whether two exposures fall into the same (bucketed) cell.
    pub fn same_cell(&self, a: Exposure, b: Exposure) -> bool {
        self.index(a.d, a.s1, a.s2) == self.index(b.d, b.s1, b.s2)
    }

    pub fn l1(&self) -> usize {
        self.first_pmf.len() - 1
    }

    pub fn l2(&self) -> usize {
        self.second_pmf.len() - 1
    }

    /// Entries of the cell grid actually reachable by some exposure.
    pub fn cells(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let mut seen = vec![false; self.table.len()];
        for d in [false, true] {
            for s1 in 0..=self.l1() {
                for s2 in 0..=self.l2() {
                    seen[self.index(d, s1, s2)] = true;
                }
            }
        }
        self.table.iter().copied().enumerate().filter(move |(i, _)| seen[*i])
    }
}

/// Per-unit propensity tables for the evaluation units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityTable {
    pub units: Vec<UnitPropensity>,
    pub trim: f64,
    pub bucketed: bool,
}

/// Per-unit propensity summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensityDiagnostics {
    pub unit: NodeId,
    pub min: f64,
    pub max: f64,
    pub trimmed: usize,
}

impl PropensityTable {
    /// Builds tables for `hoods`. `marginal(unit, node)` is the treatment
    /// probability of `node` under the model used for `unit`, which lets
    /// cross-fitted models differ across units.
    pub fn build(
        hoods: &[Neighborhood],
        marginal: impl Fn(NodeId, NodeId) -> f64 + Sync,
        tau: Option<&Thresholds>,
        trim: f64,
    ) -> Result<Self> {
        use rayon::prelude::*;
        if !(0.0..0.5).contains(&trim) {
            return Err(Error::Config(format!("trim must lie in [0, 0.5), got {trim}")));
        }
        let units = hoods
            .par_iter()
            .map(|h| UnitPropensity::new(h, |k| marginal(h.unit, k), tau, trim))
            .collect::<Result<Vec<_>>>()?;
        Ok(PropensityTable { units, trim, bucketed: tau.is_some() })
    }

    pub fn diagnostics(&self) -> Vec<PropensityDiagnostics> {
        self.units
            .iter()
            .map(|u| {
                let (mut min, mut max, mut trimmed) = (f64::INFINITY, f64::NEG_INFINITY, 0);
                for (_, v) in u.cells() {
                    min = min.min(v);
                    max = max.max(v);
                    if v <= 0.0 || v < self.trim {
                        trimmed += 1;
                    }
                }
                PropensityDiagnostics { unit: u.unit, min, max, trimmed }
            })
            .collect()
    }

    pub fn trimmed_entries(&self) -> usize {
        self.diagnostics().iter().map(|d| d.trimmed).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enumerate_weighted(items: &[(f64, usize)]) -> Vec<f64> {
        let total: usize = items.iter().map(|x| x.1).sum();
        let mut pmf = vec![0.0; total + 1];
        for mask in 0u32..(1 << items.len()) {
            let mut p = 1.0;
            let mut s = 0;
            for (k, &(q, w)) in items.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    p *= q;
                    s += w;
                } else {
                    p *= 1.0 - q;
                }
            }
            pmf[s] += p;
        }
        pmf
    }

    #[test]
    fn pmf_examples() {
        assert_eq!(poisson_binomial_pmf(&[0.5, 0.5]).unwrap(), vec![0.25, 0.5, 0.25]);
        assert!((poisson_binomial_pmf(&[0.2, 0.3]).unwrap()[0] - 0.56).abs() < 1e-15);
        assert_eq!(poisson_binomial_pmf(&[]).unwrap(), vec![1.0]);
        assert!(poisson_binomial_pmf(&[1.2]).is_err());
    }

    #[test]
    fn weighted_single_item() {
        let pmf = weighted_bernoulli_pmf(&[(0.5, 2)]).unwrap();
        assert_eq!(pmf, vec![0.5, 0.0, 0.5]);
        let items = [(0.3, 2), (0.6, 1), (0.9, 3)];
        let dp = weighted_bernoulli_pmf(&items).unwrap();
        for (a, b) in dp.iter().zip(enumerate_weighted(&items)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn joint_propensity_examples() {
        assert_eq!(joint_propensity(0.4, true, 0, &[]).unwrap(), 0.4);
        assert_eq!(joint_propensity(0.5, true, 1, &[0.5, 0.5]).unwrap(), 0.25);
        let probs = [0.1, 0.5, 0.9];
        let at2 = enumerate_weighted(&probs.map(|p| (p, 1)))[2];
        let got = joint_propensity(0.3, false, 2, &probs).unwrap();
        assert!((got - 0.7 * at2).abs() < 1e-15);
        assert!(joint_propensity(0.3, false, 4, &probs).is_err());
        let reduced = joint_propensity_2deg(0.3, false, 2, 0, &probs, &[]).unwrap();
        assert_eq!(reduced, got);
    }

    #[test]
    fn logistic_rejects_single_arm() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(matches!(fit_logistic(&rows, &[true, true, true]), Err(Error::Separation(_))));
        assert!(matches!(
            fit_logistic(&rows, &[false, true, true]),
            Err(Error::Separation(_))
        ));
    }

    #[test]
    fn logistic_score_vanishes() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin(), (i % 3) as f64]).collect();
        let d: Vec<bool> = (0..40).map(|i| (i * 7 % 5) < 2 || i % 11 == 0).collect();
        let m = fit_logistic(&rows, &d).unwrap();
        assert!(m.converged);
        let g = m.score(&rows, &d);
        assert!(g.iter().all(|v| v.abs() < 1e-6), "{g:?}");
        for z in &rows {
            let p = m.prob(z);
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn feature_map_parse() {
        let names = vec!["Z1".to_string(), "Z2".to_string()];
        let fm = FeatureMap::parse("1, d, s, d*s, Z1, d*Z2, frac*Z1", &names).unwrap();
        assert_eq!(fm.len(), 7);
        let z = [2.0, 3.0];
        let row = fm.row(&FeatureInput { d: true, s1: 2, s2: 0, l1: 4, l2: 0, z: &z });
        assert_eq!(row, vec![1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 1.0]);
        assert!(FeatureMap::parse("1, Q", &names).is_err());
    }

    #[test]
    fn ols_recovers_and_min_norm() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![3.0, 3.0, 3.0, 3.0]);
        let b = lstsq_min_norm(&x, &y).unwrap();
        assert!((b[0] - 3.0).abs() < 1e-12 && b[1].abs() < 1e-12 && b[2].abs() < 1e-12);
        // duplicated column: minimum norm splits the weight evenly
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let b = lstsq_min_norm(&x, &y).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 1.0).abs() < 1e-12);
    }
}
