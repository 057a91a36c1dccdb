//! Exact search over linear threshold rules by enumerating the faces of the
//! hyperplane arrangement `{beta : (1, x_i) . beta = 0}`.
//!
//! Each face of a central arrangement with trivial lineality space has a ray
//! in its closure. Around a ray `v`, points off the ray's hyperplanes keep the
//! sign they have at `v`, and the points on them behave like a smaller
//! arrangement in `v`'s orthogonal complement. Recursing on that smaller
//! arrangement yields every labeling `1{y . c >= 0}` together with a direction
//! `c` that realizes it.

use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;

use super::{better, capacity_limit, linear_rule, relevant_nodes, treated_count, PolicyClass, SolveResult};
use crate::config::ClassKind;
use crate::error::{Error, Result};
use crate::welfare::EffectTable;

const TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct CellOptions {
    /// Upper bound on the number of ray candidates examined.
    pub max_subsets: u64,
    /// Largest node count enumerated exhaustively for explicit assignments.
    pub max_explicit_nodes: usize,
}

impl Default for CellOptions {
    fn default() -> Self {
        CellOptions { max_subsets: 20_000_000, max_explicit_nodes: 20 }
    }
}

type Labeled = (Vec<bool>, Vec<f64>);

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonalizes `y` against `basis` and returns the normalized residual if
/// it is not negligible.
fn residual(basis: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let ny = norm(y);
    if ny == 0.0 {
        return None;
    }
    let mut r = y.to_vec();
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, &r);
            r.iter_mut().zip(b).for_each(|(ri, bi)| *ri -= c * bi);
        }
    }
    let nr = norm(&r);
    (nr > 1e-9 * ny).then(|| r.into_iter().map(|v| v / nr).collect())
}

/// Orthonormal basis of the span of `ys` (at most `k` vectors).
fn span_basis(ys: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let mut basis = Vec::new();
    for y in ys {
        if basis.len() == k {
            break;
        }
        if let Some(r) = residual(&basis, y) {
            basis.push(r);
        }
    }
    basis
}

/// Orthonormal basis of the complement of unit vector `v` in `R^k`.
fn complement(v: &[f64]) -> Vec<Vec<f64>> {
    let k = v.len();
    let mut basis = vec![v.to_vec()];
    for j in 0..k {
        if basis.len() == k {
            break;
        }
        let mut e = vec![0.0; k];
        e[j] = 1.0;
        if let Some(r) = residual(&basis, &e) {
            basis.push(r);
        }
    }
    basis.remove(0);
    basis
}

fn det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut d = 1.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        if m[piv][c] == 0.0 {
            return 0.0;
        }
        if piv != c {
            m.swap(piv, c);
            d = -d;
        }
        d *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for j in c..n {
                m[r][j] -= f * m[c][j];
            }
        }
    }
    d
}

/// Unit vector orthogonal to `r - 1` vectors of `R^r`, if they are independent.
fn null_vector(rows: &[&[f64]], r: usize) -> Option<Vec<f64>> {
    let mut v: Vec<f64> = (0..r)
        .map(|j| {
            let minor: Vec<Vec<f64>> = rows
                .iter()
                .map(|row| row.iter().enumerate().filter(|&(c, _)| c != j).map(|(_, &x)| x).collect())
                .collect();
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * det(minor)
        })
        .collect();
    let scale: f64 = rows.iter().map(|row| norm(row)).product();
    let nv = norm(&v);
    if !(nv > 1e-9 * scale) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= nv);
    Some(v)
}

/// Solves `a x = b` for a small square system by Gaussian elimination.
fn solve_small(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, &bi)| row.iter().copied().chain([bi]).collect()).collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs()))?;
        if m[piv][c] == 0.0 {
            return None;
        }
        m.swap(piv, c);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for j in c..=n {
                    m[r][j] -= f * m[c][j];
                }
            }
        }
    }
    Some((0..n).map(|r| m[r][n] / m[r][r]).collect())
}

/// Every labeling of `k` independent vectors of `R^k`: each sign pattern is
/// realized by the direction that maps the vectors to `+-1`.
fn orthants(ys: &[Vec<f64>]) -> Vec<Labeled> {
    let k = ys.len();
    (0..1usize << k)
        .filter_map(|mask| {
            let t: Vec<f64> = (0..k).map(|j| if mask >> j & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let d = solve_small(ys, &t)?;
            Some(((0..k).map(|j| mask >> j & 1 == 1).collect(), d))
        })
        .collect()
}

/// Greedy (index-order) maximal independent subset of `ys[idx]`.
fn greedy_basis(ys: &[Vec<f64>], idx: &[usize], want: usize) -> Vec<usize> {
    let mut basis = Vec::new();
    let mut chosen = Vec::new();
    for &t in idx {
        if chosen.len() == want {
            break;
        }
        if let Some(r) = residual(&basis, &ys[t]) {
            basis.push(r);
            chosen.push(t);
        }
    }
    chosen
}

fn for_each_combo(start: usize, m: usize, size: usize, prefix: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if size == 0 {
        f(prefix);
        return;
    }
    for i in start..m {
        if m - i < size {
            break;
        }
        prefix.push(i);
        for_each_combo(i + 1, m, size - 1, prefix, f);
        prefix.pop();
    }
}

fn pack(labels: &[bool]) -> Vec<u64> {
    let mut key = vec![0u64; labels.len().div_ceil(64)];
    for (i, _) in labels.iter().enumerate().filter(|(_, &l)| l) {
        key[i / 64] |= 1 << (i % 64);
    }
    key
}

fn binomial(m: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (m - j) as f64 / (j + 1) as f64)
}

/// Labelings of `ys` (vectors of `R^k`) by `1{y . c >= 0}` with directions `c`.
fn enumerate(ys: &[Vec<f64>], k: usize) -> Vec<Labeled> {
    let basis = span_basis(ys, k);
    let r = basis.len();
    if r == 0 {
        return vec![(vec![true; ys.len()], vec![0.0; k])];
    }
    let proj: Vec<Vec<f64>> = ys.iter().map(|y| basis.iter().map(|b| dot(b, y)).collect()).collect();
    let mut seen = HashSet::new();
    essential(&proj, r, false)
        .into_iter()
        .filter(|(labels, _)| seen.insert(labels.clone()))
        .map(|(labels, d)| {
            let mut c = vec![0.0; k];
            for (dj, b) in d.iter().zip(&basis) {
                c.iter_mut().zip(b).for_each(|(ci, bi)| *ci += dj * bi);
            }
            (labels, c)
        })
        .collect()
}

/// Same as [`enumerate`] for vectors spanning `R^r`.
fn essential(ys: &[Vec<f64>], r: usize, parallel: bool) -> Vec<Labeled> {
    let mut out: Vec<Labeled> = vec![(vec![true; ys.len()], vec![0.0; r])];
    let norms: Vec<f64> = ys.iter().map(|y| norm(y)).collect();
    if r == 1 {
        for s in [1.0, -1.0] {
            let labels = ys.iter().zip(&norms).map(|(y, &ny)| s * y[0] >= -TOL * ny).collect();
            out.push((labels, vec![s]));
        }
        return out;
    }
    let live: Vec<usize> = (0..ys.len()).filter(|&i| norms[i] > 0.0).collect();
    let m = live.len();
    let ymax = norms.iter().copied().fold(0.0, f64::max);
    let words = ys.len().div_ceil(64);
    // labels are packed into bitsets so that faces reached from several rays
    // are recognized before their realizing direction is built
    let around_ray = |combo: &[usize], acc: &mut Vec<Labeled>, seen: &mut HashSet<Vec<u64>>| {
        let rows: Vec<&[f64]> = combo.iter().map(|&c| ys[live[c]].as_slice()).collect();
        let Some(v) = null_vector(&rows, r) else { return };
        let dots: Vec<f64> = ys.iter().map(|y| dot(y, &v)).collect();
        let on: Vec<usize> = (0..ys.len()).filter(|&i| dots[i].abs() <= TOL * norms[i]).collect();
        if on.len() > r - 1 {
            let chosen: Vec<usize> = combo.iter().map(|&c| live[c]).collect();
            if greedy_basis(ys, &on, r - 1) != chosen {
                return;
            }
        }
        let q = complement(&v);
        let local: Vec<Vec<f64>> = on.iter().map(|&t| q.iter().map(|b| dot(b, &ys[t])).collect()).collect();
        let sub = if on.len() == r - 1 { orthants(&local) } else { enumerate(&local, r - 1) };
        let mut is_on = vec![false; ys.len()];
        on.iter().for_each(|&t| is_on[t] = true);
        let margin = (0..ys.len()).filter(|&i| !is_on[i]).map(|i| dots[i].abs()).fold(f64::INFINITY, f64::min);
        for s in [1.0, -1.0] {
            let mut base = vec![0u64; words];
            for (i, &d) in dots.iter().enumerate() {
                if s * d >= 0.0 {
                    base[i / 64] |= 1 << (i % 64);
                }
            }
            for (lab_on, d) in &sub {
                let mut key = base.clone();
                for (&t, &l) in on.iter().zip(lab_on) {
                    if l {
                        key[t / 64] |= 1 << (t % 64);
                    } else {
                        key[t / 64] &= !(1 << (t % 64));
                    }
                }
                if seen.contains(&key) {
                    continue;
                }
                let mut w = vec![0.0; r];
                for (dj, b) in d.iter().zip(&q) {
                    w.iter_mut().zip(b).for_each(|(wi, bi)| *wi += dj * bi);
                }
                // bounds |y . w| over the off-ray points
                let wmax = norm(&w) * ymax;
                let delta = if wmax > 0.0 { (0.5 * margin / wmax).min(1.0) } else { 1.0 };
                let c: Vec<f64> = v.iter().zip(&w).map(|(vi, wi)| s * vi + delta * wi).collect();
                let labels: Vec<bool> = (0..ys.len()).map(|i| key[i / 64] >> (i % 64) & 1 == 1).collect();
                seen.insert(key);
                acc.push((labels, c));
            }
        }
    };
    if parallel && r >= 2 {
        let chunks: Vec<Vec<Labeled>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut acc = Vec::new();
                let mut seen = HashSet::new();
                let mut prefix = vec![i];
                for_each_combo(i + 1, m, r - 2, &mut prefix, &mut |c| around_ray(c, &mut acc, &mut seen));
                acc
            })
            .collect();
        out.extend(chunks.into_iter().flatten());
    } else {
        let mut seen = HashSet::new();
        for_each_combo(0, m, r - 1, &mut Vec::new(), &mut |c| around_ray(c, &mut out, &mut seen));
    }
    out
}

/// All labelings of `points` by `1{p . c >= 0}` over `c` in `R^k`, each with a
/// realizing direction; duplicates removed, first occurrence kept.
pub fn realizable_labelings(points: &[Vec<f64>], max_subsets: u64) -> Result<Vec<(Vec<bool>, Vec<f64>)>> {
    let k = points.first().map_or(0, |p| p.len());
    let basis = span_basis(points, k);
    let r = basis.len();
    if r >= 2 && binomial(points.len(), r - 1) > max_subsets as f64 {
        return Err(Error::BackendUnavailable(format!(
            "cell enumeration over {} points in dimension {r} exceeds the budget; use the heuristic backend",
            points.len()
        )));
    }
    let raw = if r == 0 {
        vec![(vec![true; points.len()], vec![0.0; k])]
    } else {
        let proj: Vec<Vec<f64>> = points.iter().map(|y| basis.iter().map(|b| dot(b, y)).collect()).collect();
        essential(&proj, r, true)
            .into_iter()
            .map(|(labels, d)| {
                let mut c = vec![0.0; k];
                for (dj, b) in d.iter().zip(&basis) {
                    c.iter_mut().zip(b).for_each(|(ci, bi)| *ci += dj * bi);
                }
                (labels, c)
            })
            .collect()
    };
    let mut seen = HashSet::new();
    Ok(raw.into_iter().filter(|(l, _)| seen.insert(pack(l))).collect())
}

pub(crate) fn box_has_interior_origin(class: &PolicyClass) -> bool {
    class.bounds.iter().all(|&(lo, hi)| lo < 0.0 && hi > 0.0)
}

/// Positive rescaling of `c` to the middle of the coefficient box.
pub(crate) fn into_box(c: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    let t = c
        .iter()
        .zip(bounds)
        .filter_map(|(&v, &(lo, hi))| match v {
            v if v > 0.0 => Some(hi / v),
            v if v < 0.0 => Some(lo / v),
            _ => None,
        })
        .fold(f64::INFINITY, f64::min);
    if t.is_finite() {
        c.iter().map(|v| 0.5 * t * v).collect()
    } else {
        vec![0.0; c.len()]
    }
}

/// Exact maximizer of the effect-table objective over the class.
///
/// Linear rules (at most three covariates) are searched through the
/// arrangement's faces; explicit assignments by exhaustive enumeration when
/// few nodes matter.
pub fn solve_exact_cells(
    table: &EffectTable,
    x: &[Vec<f64>],
    class: &PolicyClass,
    capacity: Option<f64>,
    opts: &CellOptions,
) -> Result<SolveResult> {
    let start = Instant::now();
    let units = table.units();
    let cap = capacity_limit(capacity, table.len());
    let nodes = relevant_nodes(table);
    let feasible = |a: &[bool]| cap.is_none_or(|c| treated_count(a, &units) <= c);

    if class.kind == ClassKind::ExplicitAssignment {
        if nodes.len() > opts.max_explicit_nodes {
            return Err(Error::BackendUnavailable(format!(
                "exhaustive search over {} nodes is too large; use branch-and-bound or the heuristic",
                nodes.len()
            )));
        }
        let mut best: Option<(f64, Vec<bool>)> = None;
        let mut a = vec![false; table.n_nodes];
        for mask in 0u64..(1u64 << nodes.len()) {
            for (b, &i) in nodes.iter().enumerate() {
                a[i] = mask >> b & 1 == 1;
            }
            if !feasible(&a) {
                continue;
            }
            let v = table.value(&a);
            if best.as_ref().is_none_or(|(bv, ba)| better(v, &a, *bv, ba)) {
                best = Some((v, a.clone()));
            }
        }
        let (value, assignment) = best.expect("the empty assignment is always feasible");
        return Ok(SolveResult {
            policy: class.policy(None, &assignment),
            assignment,
            value,
            backend: "exact_cells".into(),
            certified: true,
            explored: 1u64 << nodes.len(),
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    if class.dim > 3 {
        return Err(Error::BackendUnavailable(format!(
            "cell enumeration supports at most 3 policy covariates, got {}; use the heuristic or LP export",
            class.dim
        )));
    }
    if !box_has_interior_origin(class) {
        return Err(Error::BackendUnavailable(
            "cell enumeration needs a coefficient box with the origin in its interior".into(),
        ));
    }
    if x.len() != table.n_nodes {
        return Err(Error::Input(format!("{} covariate rows for {} nodes", x.len(), table.n_nodes)));
    }
    class.check_rows(x)?;

    let mut distinct: Vec<Vec<f64>> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let point_of: Vec<usize> = nodes
        .iter()
        .map(|&i| {
            let key: Vec<u64> = x[i].iter().map(|v| v.to_bits()).collect();
            *index.entry(key).or_insert_with(|| {
                distinct.push(std::iter::once(1.0).chain(x[i].iter().copied()).collect());
                distinct.len() - 1
            })
        })
        .collect();
    let labelings = realizable_labelings(&distinct, opts.max_subsets)?;

    let mut seen = HashSet::new();
    let mut candidates: Vec<(Vec<f64>, Vec<bool>)> = Vec::new();
    for (_, c) in labelings {
        let beta = into_box(&c, &class.bounds);
        let mut a = vec![false; table.n_nodes];
        for (&i, &p) in nodes.iter().zip(&point_of) {
            a[i] = linear_rule(&beta, &distinct[p][1..]);
        }
        if seen.insert(pack(&a)) {
            candidates.push((beta, a));
        }
    }
    let explored = candidates.len() as u64;
    let scored: Vec<(f64, usize)> = candidates
        .par_iter()
        .enumerate()
        .filter(|(_, (_, a))| feasible(a))
        .map(|(k, (_, a))| (table.value(a), k))
        .collect();
    let mut best: Option<(f64, usize)> = None;
    for (v, k) in scored {
        if best.is_none_or(|(bv, bk)| better(v, &candidates[k].1, bv, &candidates[bk].1)) {
            best = Some((v, k));
        }
    }
    let (_, k) = best.ok_or_else(|| {
        Error::BackendUnavailable("no realizable assignment satisfies the capacity constraint".into())
    })?;
    let beta = candidates[k].0.clone();
    let assignment: Vec<bool> = x.iter().map(|r| linear_rule(&beta, r)).collect();
    Ok(SolveResult {
        value: table.value(&assignment),
        policy: class.policy(Some(beta), &assignment),
        assignment,
        backend: "exact_cells".into(),
        certified: true,
        explored,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_labelings_1d(xs: &[f64]) -> HashSet<Vec<bool>> {
        // thresholds between sorted points plus both constant rules
        let mut out = HashSet::new();
        let mut s: Vec<f64> = xs.to_vec();
        s.sort_by(f64::total_cmp);
        let mut cuts = vec![s[0] - 1.0, s[s.len() - 1] + 1.0];
        cuts.extend(s.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        cuts.extend(s.iter().copied());
        for c in cuts {
            out.insert(xs.iter().map(|&x| x >= c).collect());
            out.insert(xs.iter().map(|&x| x <= c).collect());
        }
        out.insert(vec![true; xs.len()]);
        out
    }

    #[test]
    fn one_covariate_matches_thresholds() {
        let xs = [0.3, -1.2, 0.7, 2.0, -0.1, 0.3];
        let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
        let got: HashSet<Vec<bool>> = realizable_labelings(&pts, 1000).unwrap().into_iter().map(|(l, _)| l).collect();
        assert_eq!(got, brute_labelings_1d(&xs));
    }

    #[test]
    fn directions_realize_labels() {
        let pts: Vec<Vec<f64>> = (0..9)
            .map(|i| {
                let a = i as f64 * 0.77;
                vec![1.0, a.sin(), (2.0 * a).cos()]
            })
            .collect();
        for (labels, c) in realizable_labelings(&pts, 1000).unwrap() {
            let real: Vec<bool> = pts.iter().map(|p| dot(p, &c) >= -1e-9).collect();
            assert_eq!(real, labels);
        }
    }

    #[test]
    fn null_vector_is_orthogonal() {
        let a = [1.0, 2.0, 0.5, -1.0];
        let b = [0.0, 1.0, 1.0, 3.0];
        let c = [2.0, -1.0, 0.0, 1.0];
        let v = null_vector(&[&a, &b, &c], 4).unwrap();
        for r in [&a, &b, &c] {
            assert!(dot(r, &v).abs() < 1e-12);
        }
    }
}
