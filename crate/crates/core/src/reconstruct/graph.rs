//! Belief graphs over candidate path vertices and shortest-path search.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::belief::{belief_collision_free, edge_collision_free, edge_cost, BeliefState};
use crate::error::{Error, Result};
use crate::geometry::Obstacle;

/// Directed weighted graph as adjacency lists of `(to, weight)`.
pub type Adjacency = Vec<Vec<(usize, f64)>>;

#[derive(Debug, Clone)]
pub struct BeliefGraph {
    pub vertices: Vec<BeliefState>,
    pub start: usize,
    pub goal: usize,
    /// Unordered vertex pairs `(a, b)`, `a < b`, whose edge survived the collision check.
    pub edges: Vec<(usize, usize)>,
    pub adjacency: Adjacency,
    pub candidate_edges: usize,
    pub pruned_edges: usize,
    /// Connect each vertex only to this many Euclidean-nearest vertices
    /// (symmetrized); all pairs when `None`.
    pub k_nearest: Option<usize>,
    checked: HashSet<(usize, usize)>,
    obstacles: Vec<Obstacle>,
    chi2: f64,
    alpha: f64,
}

impl BeliefGraph {
    /// Graph on `start` (index 0) and `goal` (index 1).
    pub fn new(
        start: BeliefState,
        goal: BeliefState,
        obstacles: &[Obstacle],
        chi2: f64,
        alpha: f64,
        k_nearest: Option<usize>,
    ) -> Result<Self> {
        if !belief_collision_free(&start, obstacles, chi2)? {
            return Err(Error::InfeasibleEndpoint { which: "start" });
        }
        if !belief_collision_free(&goal, obstacles, chi2)? {
            return Err(Error::InfeasibleEndpoint { which: "goal" });
        }
        let mut g = BeliefGraph {
            vertices: Vec::new(),
            start: 0,
            goal: 1,
            edges: Vec::new(),
            adjacency: Vec::new(),
            candidate_edges: 0,
            pruned_edges: 0,
            k_nearest,
            checked: HashSet::new(),
            obstacles: obstacles.to_vec(),
            chi2,
            alpha,
        };
        g.add_vertices(&[start, goal])?;
        Ok(g)
    }

    fn try_edge(&mut self, a: usize, b: usize) -> Result<()> {
        if !self.checked.insert((a, b)) {
            return Ok(());
        }
        self.candidate_edges += 1;
        let (va, vb) = (self.vertices[a], self.vertices[b]);
        if !edge_collision_free(&va, &vb, &self.obstacles, self.chi2)? {
            self.pruned_edges += 1;
            return Ok(());
        }
        self.edges.push((a, b));
        self.adjacency[a].push((b, edge_cost(&va, &vb, self.alpha)?));
        self.adjacency[b].push((a, edge_cost(&vb, &va, self.alpha)?));
        Ok(())
    }

    /// Adds the collision-free beliefs among `new` as vertices and checks
    /// their candidate edges. Returns how many were added.
    pub fn add_vertices(&mut self, new: &[BeliefState]) -> Result<usize> {
        let first = self.vertices.len();
        for b in new {
            if belief_collision_free(b, &self.obstacles, self.chi2)? {
                self.vertices.push(*b);
                self.adjacency.push(Vec::new());
            }
        }
        let n = self.vertices.len();
        match self.k_nearest {
            None => {
                for b in first..n {
                    for a in 0..b {
                        self.try_edge(a, b)?;
                    }
                }
            }
            Some(k) => {
                // neighbourhoods of old vertices may change, so recheck all
                // wanted pairs; already checked ones are skipped
                let mut pairs = Vec::new();
                for a in 0..n {
                    let x = self.vertices[a].x;
                    let mut others: Vec<usize> = (0..n).filter(|&b| b != a).collect();
                    others.sort_by(|&p, &q| {
                        x.dist(self.vertices[p].x).total_cmp(&x.dist(self.vertices[q].x)).then(p.cmp(&q))
                    });
                    pairs.extend(others.into_iter().take(k).map(|b| (a.min(b), a.max(b))));
                }
                pairs.sort_unstable();
                pairs.dedup();
                for (a, b) in pairs {
                    self.try_edge(a, b)?;
                }
            }
        }
        Ok(n - first)
    }

    pub fn shortest_path(&self) -> Result<(Vec<usize>, f64)> {
        shortest_path(&self.adjacency, self.start, self.goal)
    }

    /// A* with the Euclidean distance to the goal, a lower bound on edge costs.
    pub fn astar_path(&self) -> Result<(Vec<usize>, f64)> {
        let g = self.vertices[self.goal].x;
        astar(&self.adjacency, self.start, self.goal, |v| self.vertices[v].x.dist(g))
    }
}

/// Search label ordered by cost, then hop count, then the largest vertex
/// index on the route.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Label {
    cost: f64,
    hops: usize,
    max_index: usize,
}

impl Label {
    fn cmp(&self, o: &Label) -> Ordering {
        self.cost.total_cmp(&o.cost).then(self.hops.cmp(&o.hops)).then(self.max_index.cmp(&o.max_index))
    }

    fn extend(&self, to: usize, w: f64) -> Label {
        Label { cost: self.cost + w, hops: self.hops + 1, max_index: self.max_index.max(to) }
    }
}

struct Entry {
    key: f64,
    label: Label,
    vertex: usize,
}

impl PartialEq for Entry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Entry {
    // reversed: BinaryHeap pops the largest
    fn cmp(&self, o: &Self) -> Ordering {
        o.key.total_cmp(&self.key).then_with(|| o.label.cmp(&self.label)).then(o.vertex.cmp(&self.vertex))
    }
}

fn search(adj: &Adjacency, start: usize, goal: usize, h: impl Fn(usize) -> f64) -> Result<(Vec<usize>, f64)> {
    let n = adj.len();
    if start >= n || goal >= n {
        return Err(Error::InvalidParameter(format!("endpoint out of range for {n} vertices")));
    }
    if adj.iter().flatten().any(|&(to, w)| to >= n || !(w >= 0.0)) {
        return Err(Error::InvalidParameter("edges need valid targets and nonnegative weights".into()));
    }
    let mut best: Vec<Option<Label>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    let l0 = Label { cost: 0.0, hops: 0, max_index: start };
    best[start] = Some(l0);
    heap.push(Entry { key: h(start), label: l0, vertex: start });
    while let Some(Entry { label, vertex, .. }) = heap.pop() {
        if best[vertex].is_some_and(|b| b.cmp(&label) != Ordering::Equal) {
            continue;
        }
        if vertex == goal {
            break;
        }
        for &(to, w) in &adj[vertex] {
            let cand = label.extend(to, w);
            if best[to].is_none_or(|b| cand.cmp(&b) == Ordering::Less) {
                best[to] = Some(cand);
                parent[to] = vertex;
                heap.push(Entry { key: cand.cost + h(to), label: cand, vertex: to });
            }
        }
    }
    let cost = best[goal].ok_or(Error::Disconnected)?.cost;
    let mut route = vec![goal];
    while *route.last().unwrap() != start {
        route.push(parent[*route.last().unwrap()]);
    }
    route.reverse();
    Ok((route, cost))
}

/// Dijkstra from `start` to `goal`. Among equal-cost routes the one with
/// fewer hops wins, then the one whose largest vertex index is smaller.
pub fn shortest_path(adj: &Adjacency, start: usize, goal: usize) -> Result<(Vec<usize>, f64)> {
    search(adj, start, goal, |_| 0.0)
}

/// A* search with an admissible `heuristic`.
pub fn astar(adj: &Adjacency, start: usize, goal: usize, heuristic: impl Fn(usize) -> f64) -> Result<(Vec<usize>, f64)> {
    search(adj, start, goal, heuristic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::Covariance2;
    use crate::geometry::Point2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn undirected(n: usize, edges: &[(usize, usize, f64)]) -> Adjacency {
        let mut adj = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        adj
    }

    #[test]
    fn small_examples() {
        let two = undirected(2, &[(0, 1, 0.7)]);
        assert_eq!(shortest_path(&two, 0, 1).unwrap(), (vec![0, 1], 0.7));
        let tri = undirected(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)]);
        assert_eq!(shortest_path(&tri, 0, 2).unwrap(), (vec![0, 1, 2], 2.0));
        let split = undirected(3, &[(0, 1, 1.0)]);
        assert!(matches!(shortest_path(&split, 0, 2), Err(Error::Disconnected)));
        assert_eq!(shortest_path(&split, 1, 1).unwrap(), (vec![1], 0.0));
    }

    #[test]
    fn ties_prefer_fewer_hops_then_low_indices() {
        // 0-1-3 and 0-3 both cost 2; the direct edge wins
        let adj = undirected(4, &[(0, 1, 1.0), (1, 3, 1.0), (0, 3, 2.0)]);
        assert_eq!(shortest_path(&adj, 0, 3).unwrap().0, vec![0, 3]);
        let adj = undirected(5, &[(0, 3, 1.0), (3, 2, 1.0), (0, 1, 1.0), (1, 2, 1.0)]);
        // routes 0-3-2 and 0-1-2: max indices 3 and 2
        assert_eq!(shortest_path(&adj, 0, 2).unwrap().0, vec![0, 1, 2]);
    }

    /// Minimum over all simple paths by exhaustive enumeration, with the same
    /// tie-break order.
    fn brute(adj: &Adjacency, start: usize, goal: usize) -> Option<(Vec<usize>, f64)> {
        fn rec(adj: &Adjacency, path: &mut Vec<usize>, cost: f64, goal: usize, best: &mut Option<(Vec<usize>, f64)>) {
            let v = *path.last().unwrap();
            if v == goal {
                let key = |p: &[usize], c: f64| (c, p.len(), *p.iter().max().unwrap());
                let better = match best {
                    None => true,
                    Some((bp, bc)) => {
                        let (a, b) = (key(path, cost), key(bp, *bc));
                        a.0 < b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2))
                    }
                };
                if better {
                    *best = Some((path.clone(), cost));
                }
                return;
            }
            for &(to, w) in &adj[v] {
                if !path.contains(&to) {
                    path.push(to);
                    rec(adj, path, cost + w, goal, best);
                    path.pop();
                }
            }
        }
        let mut best = None;
        rec(adj, &mut vec![start], 0.0, goal, &mut best);
        best
    }

    pub(crate) fn random_graph(seed: u64) -> (Adjacency, usize, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=7);
        let p = rng.random_range(0.2..0.9);
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random_bool(p) {
                    edges.push((a, b, rng.random_range(0.0..1.0)));
                }
            }
        }
        let s = rng.random_range(0..n);
        let g = rng.random_range(0..n);
        (undirected(n, &edges), s, g)
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        for seed in 0..200 {
            let (adj, s, g) = random_graph(seed);
            match (shortest_path(&adj, s, g), brute(&adj, s, g)) {
                (Ok(found), Some(expect)) => assert_eq!(found, expect, "seed {seed}"),
                (Err(Error::Disconnected), None) => {}
                (r, e) => panic!("seed {seed}: {r:?} vs {e:?}"),
            }
            if let Ok((_, c)) = shortest_path(&adj, s, g) {
                let (_, ca) = astar(&adj, s, g, |_| 0.0).unwrap();
                assert_eq!(c, ca);
            }
        }
    }

    fn bel(x: f64, y: f64) -> BeliefState {
        BeliefState::new(Point2::new(x, y), Covariance2::isotropic(1e-4).unwrap()).unwrap()
    }

    #[test]
    fn free_space_graph_is_complete() {
        let mut g = BeliefGraph::new(bel(0.1, 0.1), bel(0.9, 0.9), &[], 2.0, 0.1, None).unwrap();
        let extra: Vec<BeliefState> = (0..5).map(|k| bel(0.2 + 0.1 * k as f64, 0.5)).collect();
        assert_eq!(g.add_vertices(&extra).unwrap(), 5);
        assert_eq!(g.edges.len(), 7 * 6 / 2);
        assert_eq!(g.pruned_edges, 0);
        let (route, cost) = g.shortest_path().unwrap();
        assert_eq!(route, vec![0, 1]);
        assert!((cost - 0.8 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn wall_isolates_goal() {
        let wall = [
            Obstacle::triangle(Point2::new(0.45, -0.1), Point2::new(0.55, -0.1), Point2::new(0.55, 1.1)).unwrap(),
            Obstacle::triangle(Point2::new(0.45, -0.1), Point2::new(0.55, 1.1), Point2::new(0.45, 1.1)).unwrap(),
        ];
        let mut g = BeliefGraph::new(bel(0.1, 0.5), bel(0.9, 0.5), &wall, 2.0, 0.0, None).unwrap();
        g.add_vertices(&[bel(0.2, 0.2), bel(0.3, 0.8), bel(0.2, 0.6)]).unwrap();
        assert!(g.adjacency[g.goal].is_empty());
        assert!(matches!(g.shortest_path(), Err(Error::Disconnected)));
        // every pair recheck: crossing pairs pruned, others kept
        let mut pruned = 0;
        for a in 0..g.vertices.len() {
            for b in a + 1..g.vertices.len() {
                let ok = edge_collision_free(&g.vertices[a], &g.vertices[b], &wall, 2.0).unwrap();
                pruned += !ok as usize;
                assert_eq!(ok, g.edges.contains(&(a, b)));
            }
        }
        assert_eq!(pruned, g.pruned_edges);
    }

    #[test]
    fn colliding_endpoint() {
        let c = [Obstacle::circle(Point2::new(0.9, 0.9), 0.05).unwrap()];
        assert!(matches!(
            BeliefGraph::new(bel(0.1, 0.1), bel(0.9, 0.9), &c, 2.0, 0.0, None),
            Err(Error::InfeasibleEndpoint { which: "goal" })
        ));
    }

    #[test]
    fn knn_graph_is_subset() {
        let pts: Vec<BeliefState> = (0..12).map(|k| bel(0.05 + 0.07 * k as f64, 0.3 + 0.03 * (k % 3) as f64)).collect();
        let mut full = BeliefGraph::new(bel(0.0, 0.3), bel(0.95, 0.3), &[], 2.0, 0.0, None).unwrap();
        full.add_vertices(&pts).unwrap();
        let mut knn = BeliefGraph::new(bel(0.0, 0.3), bel(0.95, 0.3), &[], 2.0, 0.0, Some(3)).unwrap();
        knn.add_vertices(&pts).unwrap();
        assert!(knn.edges.len() < full.edges.len());
        assert!(knn.edges.iter().all(|e| full.edges.contains(e)));
        let (_, c_full) = full.shortest_path().unwrap();
        let (_, c_knn) = knn.astar_path().unwrap();
        assert!(c_knn >= c_full - 1e-12);
    }
}
