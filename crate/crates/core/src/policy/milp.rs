//! Mixed-integer encoding of welfare maximization under one-degree
//! interference.
//!
//! Variables per unit `i` and `h in 0..=|N_i|`:
//! `t1_i_h = 1{sum_k p_k >= h}`, `t2_i_h = 1{sum_k p_k <= h}` and
//! `u_i_h = p_i t1_i_h t2_i_h`. The objective is
//! `(1/n) sum_i sum_h (g_i(1,h) - g_i(0,h)) u_i_h + g_i(0,h) (t1_i_h + t2_i_h - 1)`.

use serde::{Deserialize, Serialize};

use super::{capacity_limit, linear_rule, PolicyClass};
use crate::config::ClassKind;
use crate::error::{Error, Result};
use crate::exposure::Exposure;
use crate::graph::NodeId;
use crate::welfare::EffectTable;

/// Slack replacing strict inequalities.
pub const EPS_STRICT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Binary,
    Continuous { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Indicator block of one unit; `t1`, `t2`, `u` index the `h = 0` variable
/// and the remaining `h` follow consecutively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitBlock {
    pub unit: NodeId,
    pub neighbors: Vec<NodeId>,
    pub g0: Vec<f64>,
    pub g1: Vec<f64>,
    pub t1: usize,
    pub t2: usize,
    pub u: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpProgram {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<(usize, f64)>,
    pub objective_constant: f64,
    pub eps_strict: f64,
    pub class: ClassKind,
    /// Variable index of `p_i` for every node.
    pub p_vars: Vec<usize>,
    pub beta_vars: Vec<usize>,
    pub blocks: Vec<UnitBlock>,
    /// Per-node normalization `C_i` of the linear-rule rows.
    pub big_m: Vec<f64>,
    pub capacity: Option<usize>,
    pub covariates: Vec<String>,
}

/// Builds the program for a one-degree effect table.
pub fn encode_milp(
    table: &EffectTable,
    x: &[Vec<f64>],
    class: &PolicyClass,
    capacity: Option<f64>,
) -> Result<MilpProgram> {
    if table.has_second_degree() {
        return Err(Error::BackendUnavailable(
            "the integer program covers one-degree interference only; use the heuristic backend".into(),
        ));
    }
    let n_nodes = table.n_nodes;
    let linear = class.is_linear();
    if linear {
        if x.len() != n_nodes {
            return Err(Error::Input(format!("{} covariate rows for {n_nodes} nodes", x.len())));
        }
        class.check_rows(x)?;
        if class.bounds.iter().any(|(lo, hi)| !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::Config("linear-rule normalization needs a bounded coefficient box".into()));
        }
    }
    let mut vars: Vec<Variable> = Vec::new();
    let mut push = |name: String, domain: Domain| {
        vars.push(Variable { name, domain });
        vars.len() - 1
    };
    let p_vars: Vec<usize> = (0..n_nodes).map(|i| push(format!("p_{i}"), Domain::Binary)).collect();
    let mut blocks = Vec::with_capacity(table.len());
    for (u, hood) in table.hoods.iter().enumerate() {
        let l = hood.l1();
        let grid = &table.grids[u];
        let g = |d: bool, h: usize| grid.get(Exposure { d, s1: h, s2: 0 });
        let i = hood.unit;
        let t1 = (0..=l).map(|h| push(format!("t1_{i}_{h}"), Domain::Binary)).collect::<Vec<_>>()[0];
        let t2 = (0..=l).map(|h| push(format!("t2_{i}_{h}"), Domain::Binary)).collect::<Vec<_>>()[0];
        let uu = (0..=l).map(|h| push(format!("u_{i}_{h}"), Domain::Binary)).collect::<Vec<_>>()[0];
        blocks.push(UnitBlock {
            unit: i,
            neighbors: hood.first.clone(),
            g0: (0..=l).map(|h| g(false, h)).collect(),
            g1: (0..=l).map(|h| g(true, h)).collect(),
            t1,
            t2,
            u: uu,
        });
    }
    let beta_vars: Vec<usize> = if linear {
        class
            .bounds
            .iter()
            .enumerate()
            .map(|(j, &(lo, hi))| push(format!("beta_{j}"), Domain::Continuous { lo, hi }))
            .collect()
    } else {
        Vec::new()
    };

    let n = table.len() as f64;
    let mut objective = Vec::new();
    let mut constant = 0.0;
    for b in &blocks {
        for h in 0..b.g0.len() {
            objective.push((b.u + h, (b.g1[h] - b.g0[h]) / n));
            objective.push((b.t1 + h, b.g0[h] / n));
            objective.push((b.t2 + h, b.g0[h] / n));
            constant -= b.g0[h] / n;
        }
    }

    let mut rows = Vec::new();
    let mut big_m = vec![1.0; n_nodes];
    if linear {
        let bmax = class.box_max();
        for i in 0..n_nodes {
            let xt: Vec<f64> = std::iter::once(1.0).chain(x[i].iter().copied()).collect();
            let c = 1.0 + bmax.iter().zip(&xt).map(|(b, v)| b * v.abs()).sum::<f64>();
            big_m[i] = c;
            // x.beta / C < p
            let mut lower: Vec<(usize, f64)> = beta_vars.iter().zip(&xt).map(|(&j, v)| (j, v / c)).collect();
            lower.push((p_vars[i], -1.0));
            rows.push(Constraint { name: format!("a1_{i}"), terms: lower, sense: Sense::Le, rhs: -EPS_STRICT });
            // p <= x.beta / C + 1
            let mut upper: Vec<(usize, f64)> = vec![(p_vars[i], 1.0)];
            upper.extend(beta_vars.iter().zip(&xt).map(|(&j, v)| (j, -v / c)));
            rows.push(Constraint { name: format!("a2_{i}"), terms: upper, sense: Sense::Le, rhs: 1.0 });
        }
    }
    for b in &blocks {
        let i = b.unit;
        let l = b.neighbors.len();
        let scale = (l + 1) as f64;
        for h in 0..=l {
            let (t1, t2, u) = (b.t1 + h, b.t2 + h, b.u + h);
            let hf = h as f64;
            for (tag, other) in [("b1", p_vars[i]), ("b2", t1), ("b3", t2)] {
                rows.push(Constraint {
                    name: format!("{tag}_{i}_{h}"),
                    terms: vec![(u, 1.0), (other, -1.0)],
                    sense: Sense::Le,
                    rhs: 0.0,
                });
            }
            rows.push(Constraint {
                name: format!("b4_{i}_{h}"),
                terms: vec![(p_vars[i], 1.0), (t1, 1.0), (t2, 1.0), (u, -1.0)],
                sense: Sense::Le,
                rhs: 2.0,
            });
            let sum_p = |sign: f64| b.neighbors.iter().map(|&k| (p_vars[k], sign)).collect::<Vec<_>>();
            // (sum p - h)/(l+1) < t1 <= (sum p - h)/(l+1) + 1
            let mut c1 = sum_p(1.0);
            c1.push((t1, -scale));
            rows.push(Constraint { name: format!("c1_{i}_{h}"), terms: c1, sense: Sense::Le, rhs: hf - EPS_STRICT });
            let mut c2 = sum_p(-1.0);
            c2.push((t1, scale));
            rows.push(Constraint { name: format!("c2_{i}_{h}"), terms: c2, sense: Sense::Le, rhs: scale - hf });
            // (h - sum p)/(l+1) < t2 <= (h - sum p)/(l+1) + 1
            let mut d1 = sum_p(-1.0);
            d1.push((t2, -scale));
            rows.push(Constraint { name: format!("d1_{i}_{h}"), terms: d1, sense: Sense::Le, rhs: -hf - EPS_STRICT });
            let mut d2 = sum_p(1.0);
            d2.push((t2, scale));
            rows.push(Constraint { name: format!("d2_{i}_{h}"), terms: d2, sense: Sense::Le, rhs: hf + scale });
        }
    }
    let cap = capacity_limit(capacity, table.len());
    if let Some(cap) = cap {
        rows.push(Constraint {
            name: "capacity".into(),
            terms: table.hoods.iter().map(|h| (p_vars[h.unit], 1.0)).collect(),
            sense: Sense::Le,
            rhs: cap as f64,
        });
    }
    Ok(MilpProgram {
        variables: vars,
        constraints: rows,
        objective,
        objective_constant: constant,
        eps_strict: EPS_STRICT,
        class: class.kind,
        p_vars,
        beta_vars,
        blocks,
        big_m,
        capacity: cap,
        covariates: class.covariates.clone(),
    })
}

impl MilpProgram {
    pub fn n_nodes(&self) -> usize {
        self.p_vars.len()
    }

    pub fn n_units(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.domain == Domain::Binary).count()
    }

    pub fn n_continuous(&self) -> usize {
        self.variables.len() - self.n_binaries()
    }

    /// Full variable vector induced by `p` (and `beta` for linear programs).
    pub fn complete_point(&self, p: &[bool], beta: Option<&[f64]>) -> Vec<f64> {
        let mut point = vec![0.0; self.variables.len()];
        for (i, &v) in self.p_vars.iter().enumerate() {
            point[v] = f64::from(u8::from(p[i]));
        }
        for b in &self.blocks {
            let s = b.neighbors.iter().filter(|&&k| p[k]).count();
            for h in 0..=b.neighbors.len() {
                let t1 = s >= h;
                let t2 = s <= h;
                point[b.t1 + h] = f64::from(u8::from(t1));
                point[b.t2 + h] = f64::from(u8::from(t2));
                point[b.u + h] = f64::from(u8::from(p[b.unit] && t1 && t2));
            }
        }
        if let Some(beta) = beta {
            for (&j, &v) in self.beta_vars.iter().zip(beta) {
                point[j] = v;
            }
        }
        point
    }

    /// Point for a linear rule: `p` follows the rule on every node.
    pub fn point_for_beta(&self, beta: &[f64], x: &[Vec<f64>]) -> Vec<f64> {
        let p: Vec<bool> = x.iter().map(|r| linear_rule(beta, r)).collect();
        self.complete_point(&p, Some(beta))
    }

    pub fn activity(&self, row: &Constraint, point: &[f64]) -> f64 {
        row.terms.iter().map(|&(j, c)| c * point[j]).sum()
    }

    /// Checks domains and every row within `tol`.
    pub fn is_feasible(&self, point: &[f64], tol: f64) -> bool {
        let domains_ok = self.variables.iter().zip(point).all(|(v, &x)| match v.domain {
            Domain::Binary => x == 0.0 || x == 1.0,
            Domain::Continuous { lo, hi } => x >= lo - tol && x <= hi + tol,
        });
        domains_ok && self.violated_rows(point, tol).is_empty()
    }

    pub fn violated_rows(&self, point: &[f64], tol: f64) -> Vec<usize> {
        self.constraints
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                let a = self.activity(r, point);
                match r.sense {
                    Sense::Le => a > r.rhs + tol,
                    Sense::Ge => a < r.rhs - tol,
                    Sense::Eq => (a - r.rhs).abs() > tol,
                }
            })
            .map(|(k, _)| k)
            .collect()
    }

    pub fn objective_value(&self, point: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, c)| c * point[j]).sum::<f64>() + self.objective_constant
    }

    /// `(1/n) sum_i g_i(p_i, sum_k p_k)` evaluated from the stored blocks.
    pub fn assignment_value(&self, p: &[bool]) -> f64 {
        let mut acc = 0.0;
        for b in &self.blocks {
            let s = b.neighbors.iter().filter(|&&k| p[k]).count();
            acc += if p[b.unit] { b.g1[s] } else { b.g0[s] };
        }
        acc / self.blocks.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::Neighborhood;

    fn isolated_table(g0: f64, g1: f64) -> EffectTable {
        EffectTable::from_fn(1, vec![Neighborhood::isolated(0)], |_, e| if e.d { g1 } else { g0 })
    }

    #[test]
    fn degenerate_single_unit() {
        let t = isolated_table(0.5, 2.0);
        let prog = encode_milp(&t, &[vec![0.3]], &PolicyClass::linear(1, &Default::default()).unwrap(), None).unwrap();
        assert_eq!(prog.n_binaries(), 1 + 3);
        assert_eq!(prog.n_continuous(), 2);
        for (beta, want) in [([0.0, 1.0], 2.0), ([-1.0, 0.0], 0.5)] {
            let pt = prog.point_for_beta(&beta, &[vec![0.3]]);
            assert!(prog.is_feasible(&pt, 1e-12));
            assert!((prog.objective_value(&pt) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn equality_exposure_indicators() {
        // unit 0 with neighbors 1, 2, 3; two treated
        let hood = Neighborhood { unit: 0, first: vec![1, 2, 3], second: vec![] };
        let t = EffectTable::from_fn(4, vec![hood], |_, _| 0.0);
        let prog = encode_milp(&t, &[], &PolicyClass::explicit(), None).unwrap();
        let pt = prog.complete_point(&[true, true, true, false], None);
        let b = &prog.blocks[0];
        assert_eq!((pt[b.t1 + 2], pt[b.t2 + 2], pt[b.u + 2]), (1.0, 1.0, 1.0));
        assert!(prog.is_feasible(&pt, 0.0));
    }

    #[test]
    fn unbounded_box_rejected() {
        let t = isolated_table(0.0, 1.0);
        let class = PolicyClass::linear(1, &crate::config::CoefBox::Uniform(f64::NEG_INFINITY, 1.0)).unwrap();
        assert!(matches!(encode_milp(&t, &[vec![0.0]], &class, None), Err(Error::Config(_))));
    }
}
