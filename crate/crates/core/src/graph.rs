//! Sparse network storage and the neighborhood queries used by the estimators.
//!
//! Adjacency is kept as compressed, sorted, duplicate-free out-neighbor lists.
//! Undirected graphs store both directions of every edge. Directed graphs keep
//! out-neighbors only and are symmetrized on demand for the distance-based
//! operations ([`Graph::power_graph`], colorings).

use std::collections::VecDeque;

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    directed: bool,
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
}

/// Second-degree neighbors of a node, counted with path multiplicity.
///
/// An entry `(j, m)` means there are `m` distinct intermediate nodes `k`
/// with edges `i -> k` and `k -> j`. The focal node never appears, while
/// first-degree neighbors do whenever a two-step path reaches them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecondDegree {
    pub node: NodeId,
    pub entries: Vec<(NodeId, usize)>,
}

impl SecondDegree {
    /// Size of the multiset (sum of multiplicities).
    pub fn size(&self) -> usize {
        self.entries.iter().map(|&(_, m)| m).sum()
    }

    pub fn multiplicity(&self, j: NodeId) -> usize {
        self.entries
            .binary_search_by_key(&j, |&(k, _)| k)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0)
    }
}

/// A vertex coloring. Nodes sharing a color are more than `radius` hops apart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    pub colors: Vec<usize>,
    pub n_colors: usize,
    pub radius: usize,
}

impl Coloring {
    /// Checks properness against `graph` by scanning every edge.
    pub fn is_proper(&self, graph: &Graph) -> bool {
        graph.edges().all(|(i, j)| self.colors[i] != self.colors[j])
    }

    /// Nodes grouped by color, each class sorted by node id.
    pub fn classes(&self) -> Vec<Vec<NodeId>> {
        let mut classes = vec![Vec::new(); self.n_colors];
        for (node, &c) in self.colors.iter().enumerate() {
            classes[c].push(node);
        }
        classes
    }
}

impl Graph {
    /// Builds a graph from an edge list.
    ///
    /// Self-loops and ids `>= n_nodes` are rejected. Duplicate edges collapse.
    pub fn from_edges<I>(n_nodes: usize, edges: I, directed: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (NodeId, NodeId)>,
    {
        let mut lists: Vec<Vec<NodeId>> = vec![Vec::new(); n_nodes];
        for (i, j) in edges {
            if i >= n_nodes || j >= n_nodes {
                return Err(Error::Integrity(format!(
                    "edge ({i},{j}) references a node outside 0..{n_nodes}"
                )));
            }
            if i == j {
                return Err(Error::Integrity(format!("self-loop on node {i}")));
            }
            lists[i].push(j);
            if !directed {
                lists[j].push(i);
            }
        }
        Ok(Self::from_lists(lists, directed))
    }

    /// Graph with `n_nodes` nodes and no edges.
    pub fn empty(n_nodes: usize) -> Self {
        Self::from_lists(vec![Vec::new(); n_nodes], false)
    }

    fn from_lists(mut lists: Vec<Vec<NodeId>>, directed: bool) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for list in &mut lists {
            list.sort_unstable();
            list.dedup();
            targets.extend_from_slice(list);
            offsets.push(targets.len());
        }
        Graph { directed, offsets, targets }
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Number of edges; undirected edges are counted once.
    pub fn n_edges(&self) -> usize {
        if self.directed {
            self.targets.len()
        } else {
            self.targets.len() / 2
        }
    }

    fn check(&self, i: NodeId) -> Result<()> {
        if i < self.n_nodes() {
            Ok(())
        } else {
            Err(Error::Input(format!("node {i} out of range 0..{}", self.n_nodes())))
        }
    }

    /// Out-neighbors `N_i`, sorted and duplicate-free.
    pub fn neighbors(&self, i: NodeId) -> Result<&[NodeId]> {
        self.check(i)?;
        Ok(self.adj(i))
    }

    /// Unchecked neighbor slice. Panics if `i` is out of range.
    pub fn adj(&self, i: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Out-degree `|N_i|`. Panics if `i` is out of range.
    pub fn degree(&self, i: NodeId) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_nodes()).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// Iterates edges. For undirected graphs each edge appears once with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.n_nodes()).flat_map(move |i| {
            self.adj(i)
                .iter()
                .copied()
                .filter(move |&j| self.directed || i < j)
                .map(move |j| (i, j))
        })
    }

    /// Undirected version of the graph; clones undirected inputs.
    pub fn symmetrized(&self) -> Graph {
        if !self.directed {
            return self.clone();
        }
        let mut lists: Vec<Vec<NodeId>> = vec![Vec::new(); self.n_nodes()];
        for (i, j) in self.edges() {
            lists[i].push(j);
            lists[j].push(i);
        }
        Self::from_lists(lists, false)
    }

    /// Endpoints of length-two paths starting at `i`, with multiplicity.
    pub fn second_degree(&self, i: NodeId) -> Result<SecondDegree> {
        self.check(i)?;
        let mut counts: Vec<(NodeId, usize)> = Vec::new();
        for &k in self.adj(i) {
            for &j in self.adj(k) {
                if j != i {
                    counts.push((j, 1));
                }
            }
        }
        counts.sort_unstable();
        let mut entries: Vec<(NodeId, usize)> = Vec::with_capacity(counts.len());
        for (j, m) in counts {
            match entries.last_mut() {
                Some(last) if last.0 == j => last.1 += m,
                _ => entries.push((j, m)),
            }
        }
        Ok(SecondDegree { node: i, entries })
    }

    /// Hop distances from `src` in the symmetrized graph, truncated at `limit`.
    /// Nodes farther than `limit` map to `None`.
    pub fn bfs_distances(&self, src: NodeId, limit: usize) -> Vec<Option<usize>> {
        let sym = self.symmetrized();
        sym.bfs_undirected(src, limit)
    }

    fn bfs_undirected(&self, src: NodeId, limit: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_nodes()];
        let mut queue = VecDeque::new();
        dist[src] = Some(0);
        queue.push_back(src);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v].unwrap_or(0);
            if dv == limit {
                continue;
            }
            for &w in self.adj(v) {
                if dist[w].is_none() {
                    dist[w] = Some(dv + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Undirected graph joining nodes at distance `1..=radius` in the
    /// symmetrized input.
    pub fn power_graph(&self, radius: usize) -> Result<Graph> {
        if radius == 0 {
            return Err(Error::Input("power graph radius must be at least 1".into()));
        }
        let sym = self.symmetrized();
        if radius == 1 {
            return Ok(sym);
        }
        let n = sym.n_nodes();
        let mut lists = vec![Vec::new(); n];
        let mut dist = vec![usize::MAX; n];
        let mut touched = Vec::new();
        let mut queue = VecDeque::new();
        for (src, list) in lists.iter_mut().enumerate() {
            dist[src] = 0;
            touched.push(src);
            queue.push_back(src);
            while let Some(v) = queue.pop_front() {
                if dist[v] == radius {
                    continue;
                }
                for &w in sym.adj(v) {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        touched.push(w);
                        queue.push_back(w);
                        list.push(w);
                    }
                }
            }
            for v in touched.drain(..) {
                dist[v] = usize::MAX;
            }
        }
        Ok(Self::from_lists(lists, false))
    }

    /// Maximum degree of the depth-`depth` power graph: the largest number of
    /// other nodes any unit reaches within `depth` hops.
    pub fn max_degree_stats(&self, depth: usize) -> Result<usize> {
        Ok(self.power_graph(depth)?.max_degree())
    }

    /// Greedy coloring of the symmetrized graph.
    ///
    /// Nodes are visited by descending degree (ties by id) and receive the
    /// smallest color unused by already-colored neighbors, so at most
    /// `max_degree + 1` colors appear.
    pub fn greedy_coloring(&self) -> Coloring {
        let sym = self.symmetrized();
        let n = sym.n_nodes();
        let mut order: Vec<NodeId> = (0..n).collect();
        order.sort_by(|&a, &b| sym.degree(b).cmp(&sym.degree(a)).then(a.cmp(&b)));
        let mut colors = vec![usize::MAX; n];
        let mut used = Vec::new();
        let mut n_colors = 0;
        for v in order {
            used.clear();
            used.resize(sym.degree(v) + 1, false);
            for &w in sym.adj(v) {
                let c = colors[w];
                if c < used.len() {
                    used[c] = true;
                }
            }
            let c = used.iter().position(|&u| !u).unwrap_or(used.len());
            colors[v] = c;
            n_colors = n_colors.max(c + 1);
        }
        Coloring { colors, n_colors, radius: 1 }
    }

    /// Greedy coloring of the radius-`radius` power graph.
    pub fn power_coloring(&self, radius: usize) -> Result<Coloring> {
        let mut coloring = self.power_graph(radius)?.greedy_coloring();
        coloring.radius = radius;
        Ok(coloring)
    }

    /// Subgraph induced by `nodes`, relabelled to `0..nodes.len()` in the given order.
    pub fn induced(&self, nodes: &[NodeId]) -> Graph {
        let mut index = vec![usize::MAX; self.n_nodes()];
        for (pos, &v) in nodes.iter().enumerate() {
            index[v] = pos;
        }
        let lists = nodes
            .iter()
            .map(|&v| {
                self.adj(v)
                    .iter()
                    .filter_map(|&w| (index[w] != usize::MAX).then_some(index[w]))
                    .collect()
            })
            .collect();
        Self::from_lists(lists, self.directed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Graph {
        Graph::from_edges(n, (1..n).map(|i| (i - 1, i)), false).unwrap()
    }

    // Nodes V1..V6 map to ids 0..5.
    fn figure_graph() -> Graph {
        Graph::from_edges(6, [(0, 1), (0, 2), (0, 5), (1, 2), (1, 4), (2, 3)], false).unwrap()
    }

    #[test]
    fn neighbors_basic() {
        let g = path(3);
        assert_eq!(g.neighbors(1).unwrap(), &[0, 2]);
        assert!(Graph::empty(3).neighbors(1).unwrap().is_empty());
        assert_eq!(figure_graph().neighbors(1).unwrap(), &[0, 2, 4]);
        assert!(matches!(g.neighbors(3), Err(Error::Input(_))));
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(matches!(Graph::from_edges(5, [(0, 99)], false), Err(Error::Integrity(_))));
        assert!(matches!(Graph::from_edges(5, [(2, 2)], false), Err(Error::Integrity(_))));
    }

    #[test]
    fn second_degree_matches_figure_example() {
        let g = figure_graph();
        let v2 = g.second_degree(1).unwrap();
        assert_eq!(v2.entries, vec![(0, 1), (2, 1), (3, 1), (5, 1)]);
        assert_eq!(v2.size(), 4);
        let v6 = g.second_degree(5).unwrap();
        assert_eq!(v6.entries, vec![(1, 1), (2, 1)]);
        let tri = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)], false).unwrap();
        assert_eq!(tri.second_degree(0).unwrap().entries, vec![(1, 1), (2, 1)]);
    }

    #[test]
    fn second_degree_counts_distinct_intermediates() {
        // 4-cycle: node 0 reaches 2 through both 1 and 3.
        let g = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)], false).unwrap();
        assert_eq!(g.second_degree(0).unwrap().multiplicity(2), 2);
    }

    #[test]
    fn power_graph_examples() {
        let p = path(3).power_graph(2).unwrap();
        assert_eq!(p.neighbors(0).unwrap(), &[1, 2]);
        let g = figure_graph();
        assert_eq!(g.power_graph(1).unwrap(), g);
        let star = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)], false).unwrap();
        let k4 = star.power_graph(2).unwrap();
        assert_eq!(k4.n_edges(), 6);
        assert!(matches!(g.power_graph(0), Err(Error::Input(_))));
    }

    #[test]
    fn coloring_examples() {
        assert_eq!(path(3).greedy_coloring().n_colors, 2);
        let tri = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)], false).unwrap();
        let c = tri.greedy_coloring();
        assert_eq!(c.n_colors, 3);
        assert!(c.is_proper(&tri));
    }

    #[test]
    fn degree_stats() {
        let star = Graph::from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)], false).unwrap();
        assert_eq!(star.max_degree_stats(1).unwrap(), 4);
        assert_eq!(path(5).max_degree_stats(1).unwrap(), 2);
        assert_eq!(figure_graph().max_degree_stats(1).unwrap(), 3);
        assert_eq!(path(5).max_degree_stats(2).unwrap(), 4);
    }

    #[test]
    fn directed_neighbors_are_out_neighbors() {
        let g = Graph::from_edges(3, [(0, 1), (2, 1)], true).unwrap();
        assert_eq!(g.neighbors(0).unwrap(), &[1]);
        assert!(g.neighbors(1).unwrap().is_empty());
        let sym = g.symmetrized();
        assert_eq!(sym.neighbors(1).unwrap(), &[0, 2]);
        assert_eq!(g.power_graph(2).unwrap().neighbors(0).unwrap(), &[1, 2]);
    }
}
