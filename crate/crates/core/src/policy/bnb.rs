//! Depth-first branch-and-bound over the node decisions of an
//! explicit-assignment program.
//!
//! Once every `p` is fixed the indicator variables are determined, so a
//! valid bound for a partial assignment is the sum over units of the best
//! `g_i(d, h)` still reachable.

use std::time::Instant;

use super::milp::MilpProgram;
use super::{Policy, SolveResult};
use crate::config::ClassKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BnbOptions {
    pub node_budget: u64,
}

impl Default for BnbOptions {
    fn default() -> Self {
        BnbOptions { node_budget: 20_000_000 }
    }
}

struct Search<'a> {
    prog: &'a MilpProgram,
    order: Vec<usize>,
    /// Blocks in which each node appears (as unit or neighbor).
    touches: Vec<Vec<usize>>,
    state: Vec<Option<bool>>,
    ones: Vec<usize>,
    open: Vec<usize>,
    bounds: Vec<f64>,
    is_unit: Vec<bool>,
    treated_units: usize,
    cap: usize,
    best_value: f64,
    best: Vec<bool>,
    nodes: u64,
    budget: u64,
    exhausted: bool,
}

impl Search<'_> {
    fn block_bound(&self, b: usize) -> f64 {
        let blk = &self.prog.blocks[b];
        let lo = self.ones[b];
        let hi = lo + self.open[b];
        let mut best = f64::NEG_INFINITY;
        let (try0, try1) = match self.state[blk.unit] {
            Some(d) => (!d, d),
            None => (true, true),
        };
        for h in lo..=hi {
            if try0 {
                best = best.max(blk.g0[h]);
            }
            if try1 {
                best = best.max(blk.g1[h]);
            }
        }
        best
    }

    fn set(&mut self, node: usize, value: Option<bool>) {
        let old = self.state[node];
        self.state[node] = value;
        for &b in &self.touches[node].clone() {
            let blk = &self.prog.blocks[b];
            if blk.neighbors.binary_search(&node).is_ok() {
                match (old, value) {
                    (None, Some(v)) => {
                        self.open[b] -= 1;
                        self.ones[b] += usize::from(v);
                    }
                    (Some(v), None) => {
                        self.open[b] += 1;
                        self.ones[b] -= usize::from(v);
                    }
                    _ => unreachable!("nodes are set and cleared alternately"),
                }
            }
            self.bounds[b] = self.block_bound(b);
        }
        if self.is_unit[node] {
            match (old, value) {
                (None, Some(true)) => self.treated_units += 1,
                (Some(true), None) => self.treated_units -= 1,
                _ => {}
            }
        }
    }

    fn bound(&self) -> f64 {
        self.bounds.iter().sum::<f64>() / self.bounds.len().max(1) as f64
    }

    fn dfs(&mut self, depth: usize) {
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exhausted = true;
            return;
        }
        if depth == self.order.len() {
            let a: Vec<bool> = self.state.iter().map(|s| s.unwrap_or(false)).collect();
            let v = self.prog.assignment_value(&a);
            if v > self.best_value {
                self.best_value = v;
                self.best = a;
            }
            return;
        }
        let slack = 1e-9 * (1.0 + self.best_value.abs());
        if self.bound() + slack < self.best_value {
            return;
        }
        let node = self.order[depth];
        for choice in [false, true] {
            if choice && self.is_unit[node] && self.treated_units >= self.cap {
                continue;
            }
            self.set(node, Some(choice));
            self.dfs(depth + 1);
            self.set(node, None);
            if self.exhausted {
                return;
            }
        }
    }
}

/// Exact optimum of an explicit-assignment program. Leaves are visited in
/// lexicographic order, so among equal values the smallest assignment wins.
pub fn solve_branch_bound(program: &MilpProgram, opts: &BnbOptions) -> Result<SolveResult> {
    if program.class != ClassKind::ExplicitAssignment {
        return Err(Error::BackendUnavailable(
            "branch-and-bound handles explicit assignments; use exact cells for linear rules".into(),
        ));
    }
    let start = Instant::now();
    let n_nodes = program.n_nodes();
    let mut touches = vec![Vec::new(); n_nodes];
    let mut is_unit = vec![false; n_nodes];
    for (b, blk) in program.blocks.iter().enumerate() {
        is_unit[blk.unit] = true;
        touches[blk.unit].push(b);
        for &k in &blk.neighbors {
            if k != blk.unit {
                touches[k].push(b);
            }
        }
    }
    let mut blocks_sorted = program.clone();
    for blk in &mut blocks_sorted.blocks {
        blk.neighbors.sort_unstable();
    }
    let order: Vec<usize> = (0..n_nodes).filter(|&i| !touches[i].is_empty()).collect();
    let mut s = Search {
        prog: &blocks_sorted,
        order,
        touches,
        state: vec![None; n_nodes],
        ones: vec![0; program.blocks.len()],
        open: program.blocks.iter().map(|b| b.neighbors.len()).collect(),
        bounds: vec![0.0; program.blocks.len()],
        is_unit,
        treated_units: 0,
        cap: program.capacity.unwrap_or(usize::MAX),
        best_value: f64::NEG_INFINITY,
        best: vec![false; n_nodes],
        nodes: 0,
        budget: opts.node_budget,
        exhausted: false,
    };
    for b in 0..program.blocks.len() {
        s.bounds[b] = s.block_bound(b);
    }
    s.dfs(0);
    let assignment = s.best;
    let value = program.assignment_value(&assignment);
    Ok(SolveResult {
        policy: Policy::ExplicitAssignment { assignment: assignment.clone() },
        assignment,
        value,
        backend: "branch_bound".into(),
        certified: !s.exhausted,
        explored: s.nodes,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::Neighborhood;
    use crate::policy::{encode_milp, PolicyClass};
    use crate::welfare::EffectTable;

    #[test]
    fn null_policy_certified() {
        let hoods = vec![
            Neighborhood { unit: 0, first: vec![1], second: vec![] },
            Neighborhood { unit: 1, first: vec![0], second: vec![] },
        ];
        let t = EffectTable::from_fn(2, hoods, |_, e| -(f64::from(u8::from(e.d)) + e.s1 as f64));
        let prog = encode_milp(&t, &[], &PolicyClass::explicit(), None).unwrap();
        let r = solve_branch_bound(&prog, &BnbOptions::default()).unwrap();
        assert_eq!(r.assignment, vec![false, false]);
        assert!(r.certified);
        assert_eq!(r.value, 0.0);
        assert!(r.explored <= 1 << 3);
    }

    #[test]
    fn budget_exhaustion_clears_certificate() {
        let hoods: Vec<_> = (0..6).map(Neighborhood::isolated).collect();
        let t = EffectTable::from_fn(6, hoods, |u, e| if e.d { u as f64 } else { 0.0 });
        let prog = encode_milp(&t, &[], &PolicyClass::explicit(), None).unwrap();
        let r = solve_branch_bound(&prog, &BnbOptions { node_budget: 3 }).unwrap();
        assert!(!r.certified);
    }
}
