//! Pattern search over assignments followed by a linear-rule fit.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cells::into_box;
use super::{better, capacity_limit, linear_rule, relevant_nodes, treated_count, PolicyClass, SolveResult};
use crate::error::Result;
use crate::exposure::Exposure;
use crate::nuisance::lstsq_min_norm;
use crate::welfare::EffectTable;

#[derive(Debug, Clone)]
pub struct HeuristicOptions {
    pub restarts: usize,
    pub max_passes: usize,
    /// Random projection directions tried when fitting a linear rule.
    pub random_directions: usize,
    /// With two covariates and at most this many point pairs, one direction
    /// per cell of the critical-angle arrangement is swept as well, which
    /// reaches every ordering a linear rule can induce.
    pub max_pair_directions: usize,
    /// Starting assignment of the first restart (all untreated otherwise).
    pub start: Option<Vec<bool>>,
}

impl Default for HeuristicOptions {
    fn default() -> Self {
        HeuristicOptions { restarts: 8, max_passes: 100, random_directions: 64, max_pair_directions: 2048, start: None }
    }
}

#[derive(Clone, Copy)]
enum Role {
    Own,
    First,
    Second(usize),
}

/// Incremental evaluation of `sum_i g_i` under single-node flips.
struct LocalEval<'a> {
    table: &'a EffectTable,
    /// For each node, the units it affects (grouped by unit) and how.
    touches: Vec<Vec<(usize, Role)>>,
    exposures: Vec<Exposure>,
    terms: Vec<f64>,
    total: f64,
    assignment: Vec<bool>,
}

impl<'a> LocalEval<'a> {
    fn new(table: &'a EffectTable, assignment: Vec<bool>) -> Self {
        let mut touches = vec![Vec::new(); table.n_nodes];
        for (u, h) in table.hoods.iter().enumerate() {
            touches[h.unit].push((u, Role::Own));
            h.first.iter().for_each(|&k| touches[k].push((u, Role::First)));
            h.second.iter().for_each(|&(k, m)| touches[k].push((u, Role::Second(m))));
        }
        for t in &mut touches {
            t.sort_by_key(|&(u, _)| u);
        }
        let mut ev = LocalEval { table, touches, exposures: vec![], terms: vec![], total: 0.0, assignment };
        ev.reset();
        ev
    }

    fn reset(&mut self) {
        self.exposures = self.table.hoods.iter().map(|h| h.exposure(&self.assignment)).collect();
        self.terms = (0..self.table.len()).map(|u| self.table.g(u, self.exposures[u])).collect();
        self.total = self.terms.iter().sum();
    }

    fn flipped(&self, node: usize) -> Vec<(usize, Exposure)> {
        let on = !self.assignment[node];
        let mut out: Vec<(usize, Exposure)> = Vec::new();
        for &(u, role) in &self.touches[node] {
            if out.last().is_none_or(|&(v, _)| v != u) {
                out.push((u, self.exposures[u]));
            }
            let e = &mut out.last_mut().unwrap().1;
            match role {
                Role::Own => e.d = on,
                Role::First => e.s1 = if on { e.s1 + 1 } else { e.s1 - 1 },
                Role::Second(m) => e.s2 = if on { e.s2 + m } else { e.s2 - m },
            }
        }
        out
    }

    fn delta(&self, node: usize) -> f64 {
        self.flipped(node).iter().map(|&(u, e)| self.table.g(u, e) - self.terms[u]).sum()
    }

    fn flip(&mut self, node: usize) {
        for (u, e) in self.flipped(node) {
            let g = self.table.g(u, e);
            self.total += g - self.terms[u];
            self.terms[u] = g;
            self.exposures[u] = e;
        }
        self.assignment[node] = !self.assignment[node];
    }
}

struct Limits {
    is_unit: Vec<bool>,
    cap: usize,
}

impl Limits {
    fn allows(&self, treated: usize, node: usize, to: bool) -> bool {
        !(to && self.is_unit[node]) || treated < self.cap
    }
}

fn local_search(ev: &mut LocalEval<'_>, nodes: &[usize], lim: &Limits, units: &[usize], max_passes: usize, rng: &mut ChaCha8Rng, explored: &mut u64) {
    let mut treated = treated_count(&ev.assignment, units);
    let mut order = nodes.to_vec();
    for _ in 0..max_passes {
        let mut improved = false;
        order.shuffle(rng);
        for &k in &order {
            let tol = 1e-12 * (1.0 + ev.total.abs());
            // single flip
            let to = !ev.assignment[k];
            *explored += 1;
            if lim.allows(treated, k, to) && ev.delta(k) > tol {
                ev.flip(k);
                if lim.is_unit[k] {
                    treated = if to { treated + 1 } else { treated - 1 };
                }
                improved = true;
                continue;
            }
            // set k and its neighbors to a common value
            let group: Vec<usize> = std::iter::once(k)
                .chain(ev.table.hoods.iter().filter(|h| h.unit == k).flat_map(|h| h.first.iter().copied()))
                .collect();
            if group.len() < 2 {
                continue;
            }
            for value in [true, false] {
                *explored += 1;
                let before = ev.total;
                let mut changed = Vec::new();
                let mut t = treated;
                let mut ok = true;
                for &j in &group {
                    if ev.assignment[j] != value {
                        if !lim.allows(t, j, value) {
                            ok = false;
                            break;
                        }
                        ev.flip(j);
                        changed.push(j);
                        if lim.is_unit[j] {
                            t = if value { t + 1 } else { t - 1 };
                        }
                    }
                }
                if ok && ev.total - before > tol {
                    treated = t;
                    improved = true;
                    break;
                }
                for &j in changed.iter().rev() {
                    ev.flip(j);
                }
            }
        }
        if !improved {
            break;
        }
        ev.reset();
    }
}

/// Unit directions strictly between consecutive angles at which two of the
/// points tie in projection.
fn arrangement_directions(x: &[Vec<f64>], nodes: &[usize]) -> Vec<Vec<f64>> {
    use std::f64::consts::{PI, TAU};
    let mut angles = Vec::new();
    for (a, &i) in nodes.iter().enumerate() {
        for &j in &nodes[a + 1..] {
            let (dx, dy) = (x[i][0] - x[j][0], x[i][1] - x[j][1]);
            if dx != 0.0 || dy != 0.0 {
                // w is orthogonal to x_i - x_j
                let t = dx.atan2(-dy).rem_euclid(TAU);
                angles.push(t);
                angles.push((t + PI).rem_euclid(TAU));
            }
        }
    }
    angles.sort_by(f64::total_cmp);
    angles.dedup();
    let Some(&first) = angles.first() else { return Vec::new() };
    angles.push(first + TAU);
    angles.windows(2).map(|w| 0.5 * (w[0] + w[1])).map(|t| vec![t.cos(), t.sin()]).collect()
}

/// Seeded pattern search; linear classes then pick the best threshold rule
/// along candidate directions fitted to the incumbent labels.
pub fn solve_heuristic(
    table: &EffectTable,
    x: &[Vec<f64>],
    class: &PolicyClass,
    capacity: Option<f64>,
    seed: u64,
    opts: &HeuristicOptions,
) -> Result<SolveResult> {
    let start = Instant::now();
    let units = table.units();
    let nodes = relevant_nodes(table);
    let cap = capacity_limit(capacity, table.len()).unwrap_or(usize::MAX);
    let mut is_unit = vec![false; table.n_nodes];
    units.iter().for_each(|&u| is_unit[u] = true);
    let lim = Limits { is_unit, cap };
    let mut explored = 0u64;

    let mut best: Option<(f64, Vec<bool>)> = None;
    for r in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let mut a = vec![false; table.n_nodes];
        match (&opts.start, r) {
            (Some(s), 0) => a.clone_from(s),
            (None, 0) => {}
            _ => {
                for &k in &nodes {
                    a[k] = rng.random_bool(0.5);
                }
                let mut treated: Vec<usize> = units.iter().copied().filter(|&u| a[u]).collect();
                treated.shuffle(&mut rng);
                for &u in treated.iter().skip(cap.min(treated.len())) {
                    a[u] = false;
                }
            }
        }
        let mut ev = LocalEval::new(table, a);
        local_search(&mut ev, &nodes, &lim, &units, opts.max_passes, &mut rng, &mut explored);
        let v = table.value(&ev.assignment);
        if best.as_ref().is_none_or(|(bv, ba)| better(v, &ev.assignment, *bv, ba)) {
            best = Some((v, ev.assignment));
        }
    }
    let (value, incumbent) = best.expect("at least one restart");

    if !class.is_linear() {
        return Ok(SolveResult {
            policy: class.policy(None, &incumbent),
            assignment: incumbent,
            value,
            backend: "heuristic".into(),
            certified: false,
            explored,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    class.check_rows(x)?;

    // candidate directions over the covariates
    let dim = class.dim;
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    if dim > 0 {
        let rows: Vec<f64> = nodes.iter().flat_map(|&i| std::iter::once(1.0).chain(x[i].iter().copied())).collect();
        let xm = nalgebra::DMatrix::from_row_slice(nodes.len(), dim + 1, &rows);
        let y = nalgebra::DVector::from_iterator(nodes.len(), nodes.iter().map(|&i| if incumbent[i] { 1.0 } else { -1.0 }));
        if let Ok(b) = lstsq_min_norm(&xm, &y) {
            dirs.push(b.iter().skip(1).copied().collect());
        }
        for j in 0..dim {
            for s in [1.0, -1.0] {
                let mut e = vec![0.0; dim];
                e[j] = s;
                dirs.push(e);
            }
        }
        if dim == 2 && nodes.len() * nodes.len().saturating_sub(1) / 2 <= opts.max_pair_directions {
            dirs.extend(arrangement_directions(x, &nodes));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        for _ in 0..opts.random_directions {
            dirs.push((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        }
    }
    dirs.retain(|w| w.iter().any(|&v| v != 0.0));

    let mut candidates: Vec<Vec<f64>> = vec![];
    {
        let mut c = vec![0.0; dim + 1];
        c[0] = 1.0;
        candidates.push(c.clone());
        c[0] = -1.0;
        candidates.push(c);
    }
    for w in &dirs {
        let mut z: Vec<(f64, usize)> = nodes.iter().map(|&i| (w.iter().zip(&x[i]).map(|(a, b)| a * b).sum(), i)).collect();
        z.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut ev = LocalEval::new(table, vec![false; table.n_nodes]);
        let mut treated = 0;
        let mut best_k: Option<(f64, usize)> = None;
        let mut k = 0;
        while k < z.len() {
            let mut j = k;
            while j < z.len() && z[j].0 == z[k].0 {
                let i = z[j].1;
                ev.flip(i);
                treated += usize::from(lim.is_unit[i]);
                j += 1;
            }
            explored += 1;
            if treated > cap {
                break;
            }
            if best_k.is_none_or(|(bv, _)| ev.total > bv) {
                best_k = Some((ev.total, j));
            }
            k = j;
        }
        if let Some((_, j)) = best_k {
            let hi = z[j - 1].0;
            let b = if j < z.len() { -(hi + z[j].0) / 2.0 } else { -(hi - 1.0) };
            candidates.push(std::iter::once(b).chain(w.iter().copied()).collect());
        }
    }

    let mut best: Option<(f64, Vec<bool>, Vec<f64>)> = None;
    for c in candidates {
        let mut beta = into_box(&c, &class.bounds);
        if beta.iter().all(|&v| v == 0.0) && c.iter().any(|&v| v != 0.0) {
            beta = c.iter().zip(&class.bounds).map(|(v, &(lo, hi))| v.clamp(lo, hi)).collect();
        }
        let a: Vec<bool> = x.iter().map(|r| linear_rule(&beta, r)).collect();
        if treated_count(&a, &units) > cap {
            continue;
        }
        let v = table.value(&a);
        if best.as_ref().is_none_or(|(bv, ba, _)| better(v, &a, *bv, ba)) {
            best = Some((v, a, beta));
        }
    }
    let (value, assignment, beta) = match best {
        Some(b) => b,
        None => {
            // every rule breaks the capacity: the most negative intercept in the box
            let mut beta = vec![0.0; dim + 1];
            beta[0] = class.bounds[0].0;
            let a: Vec<bool> = x.iter().map(|r| linear_rule(&beta, r)).collect();
            (table.value(&a), a, beta)
        }
    };
    Ok(SolveResult {
        policy: class.policy(Some(beta), &assignment),
        assignment,
        value,
        backend: "heuristic".into(),
        certified: false,
        explored,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::Neighborhood;

    #[test]
    fn deterministic_for_fixed_seed() {
        let hoods: Vec<_> = (0..6)
            .map(|i| Neighborhood { unit: i, first: vec![(i + 1) % 6, (i + 5) % 6], second: vec![] })
            .collect();
        let t = EffectTable::from_fn(6, hoods, |u, e| ((u * 7 + e.s1 * 3) % 5) as f64 - f64::from(u8::from(e.d)) * 1.5);
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 6.0]).collect();
        let class = PolicyClass::linear(1, &Default::default()).unwrap();
        let a = solve_heuristic(&t, &x, &class, Some(0.5), 9, &HeuristicOptions::default()).unwrap();
        let b = solve_heuristic(&t, &x, &class, Some(0.5), 9, &HeuristicOptions::default()).unwrap();
        assert_eq!(a, SolveResult { wall_time_ms: a.wall_time_ms, ..b });
        assert!(treated_count(&a.assignment, &t.units()) <= 3);
    }
}
