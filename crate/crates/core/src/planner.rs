//! RRT* over Gaussian belief space.
//!
//! Nodes carry a position and a covariance. Covariance is a free path
//! variable: samples draw it at random and steering interpolates it. The
//! nearest-neighbour metric is the (asymmetric) edge cost itself, found by
//! linear scan; this scan dominates run time at larger budgets.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::belief::{
    belief_collision_free, edge_collision_free, edge_cost_with_logdets, in_target, BeliefPath, BeliefState,
    Covariance2,
};
use crate::dataset::Scenario;
use crate::error::{Error, Result};
use crate::geometry::{Bounds, Point2};

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerParams {
    pub max_iters: usize,
    /// Maximum positional extension per edge.
    pub steer_step: f64,
    pub rewire_radius: f64,
    /// Bounds on `ln det P` of sampled covariances.
    pub cov_logdet_range: (f64, f64),
    /// Largest eigenvalue ratio of sampled covariances.
    pub max_anisotropy: f64,
    pub goal_bias: f64,
    pub seed: u64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            max_iters: 2000,
            steer_step: 0.1,
            rewire_radius: 0.15,
            // standard deviations from roughly 0.02 to 0.05
            cov_logdet_range: (-15.6, -12.0),
            max_anisotropy: 4.0,
            goal_bias: 0.05,
            seed: 0,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.steer_step > 0.0) {
            return bad("steer_step must be positive");
        }
        if !(self.rewire_radius >= self.steer_step) {
            return bad("rewire_radius must be at least steer_step");
        }
        let (lo, hi) = self.cov_logdet_range;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return bad("cov_logdet_range must be ordered and finite");
        }
        if !(self.max_anisotropy >= 1.0) {
            return bad("max_anisotropy must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return bad("goal_bias must be a probability");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerStatus {
    Solved,
    NotSolved,
}

#[derive(Debug, Clone)]
pub struct PlannerResult {
    pub status: PlannerStatus,
    pub path: Option<BeliefPath>,
    pub iterations_used: usize,
    pub wall_time: Duration,
    pub tree_size: usize,
}

/// Covariance with a uniformly random orientation whose log-determinant is
/// uniform on `cov_logdet_range`.
pub fn sample_covariance<R: Rng + ?Sized>(rng: &mut R, params: &PlannerParams) -> Covariance2 {
    let (lo, hi) = params.cov_logdet_range;
    let logdet = lo + (hi - lo) * rng.random::<f64>();
    let spread = params.max_anisotropy.ln() * (2.0 * rng.random::<f64>() - 1.0);
    let angle = std::f64::consts::PI * rng.random::<f64>();
    let l1 = (0.5 * (logdet + spread)).exp();
    let l2 = (0.5 * (logdet - spread)).exp();
    Covariance2::from_eigen(angle, l1, l2).expect("positive eigenvalues give an SPD matrix")
}

/// Uniform position on the unit square with a [`sample_covariance`] covariance.
pub fn sample_belief<R: Rng + ?Sized>(rng: &mut R, params: &PlannerParams) -> BeliefState {
    let x = Bounds::UNIT.sample(rng);
    BeliefState { x, cov: sample_covariance(rng, params) }
}

struct Node {
    b: BeliefState,
    logdet: f64,
    parent: Option<usize>,
    children: Vec<usize>,
    /// Cost from the root.
    cost: f64,
}

struct Tree {
    nodes: Vec<Node>,
    alpha: f64,
}

impl Tree {
    fn cost_between(&self, from: usize, to: &BeliefState, to_logdet: f64) -> f64 {
        let n = &self.nodes[from];
        edge_cost_with_logdets(&n.b, n.logdet, to, to_logdet, self.alpha)
    }

    fn nearest(&self, s: &BeliefState, s_logdet: f64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for i in 0..self.nodes.len() {
            let c = self.cost_between(i, s, s_logdet);
            if c < best.0 {
                best = (c, i);
            }
        }
        best.1
    }

    fn near(&self, p: Point2, radius: f64) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].b.x.dist(p) <= radius).collect()
    }

    fn reparent(&mut self, child: usize, parent: usize, cost: f64) {
        if let Some(old) = self.nodes[child].parent {
            self.nodes[old].children.retain(|&c| c != child);
        }
        self.nodes[child].parent = Some(parent);
        self.nodes[parent].children.push(child);
        let delta = cost - self.nodes[child].cost;
        let mut stack = vec![child];
        while let Some(i) = stack.pop() {
            self.nodes[i].cost += delta;
            stack.extend(self.nodes[i].children.iter().copied());
        }
    }

    fn path_to(&self, mut i: usize) -> Vec<BeliefState> {
        let mut out = vec![self.nodes[i].b];
        while let Some(p) = self.nodes[i].parent {
            out.push(self.nodes[p].b);
            i = p;
        }
        out.reverse();
        out
    }
}

/// Runs the planner for exactly `params.max_iters` iterations and returns the
/// cheapest tree path ending in the target.
pub fn plan(scenario: &Scenario, params: &PlannerParams) -> Result<PlannerResult> {
    params.validate()?;
    let t0 = Instant::now();
    let start = scenario.start;
    let obstacles = &scenario.obstacles;
    let chi2 = scenario.chi2;
    if !belief_collision_free(&start, obstacles, chi2)? {
        return Err(Error::InfeasibleStart);
    }
    if in_target(&start, &scenario.target) {
        let path = BeliefPath::new(vec![start, start], scenario.alpha)?;
        return Ok(PlannerResult {
            status: PlannerStatus::Solved,
            path: Some(path),
            iterations_used: 0,
            wall_time: t0.elapsed(),
            tree_size: 1,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut tree = Tree {
        nodes: vec![Node { b: start, logdet: start.cov.ln_det(), parent: None, children: Vec::new(), cost: 0.0 }],
        alpha: scenario.alpha,
    };
    let mut goal_nodes: Vec<usize> = Vec::new();

    for _ in 0..params.max_iters {
        let sample = if rng.random::<f64>() < params.goal_bias {
            let t = &scenario.target;
            let r = t.radius * rng.random::<f64>().sqrt();
            let th = std::f64::consts::TAU * rng.random::<f64>();
            BeliefState {
                x: t.center + Point2::new(th.cos(), th.sin()) * r,
                cov: sample_covariance(&mut rng, params),
            }
        } else {
            sample_belief(&mut rng, params)
        };

        let nearest = tree.nearest(&sample, sample.cov.ln_det());
        let from = tree.nodes[nearest].b;
        let dist = from.x.dist(sample.x);
        if dist <= 0.0 {
            continue;
        }
        let new = if dist > params.steer_step { from.lerp(&sample, params.steer_step / dist) } else { sample };
        if !edge_collision_free(&from, &new, obstacles, chi2)? {
            continue;
        }
        let new_logdet = new.cov.ln_det();

        // choose parent: cheapest collision-free connection among neighbours
        let near = tree.near(new.x, params.rewire_radius);
        let mut candidates: Vec<(f64, usize)> = near
            .iter()
            .filter(|&&i| tree.nodes[i].b.x != new.x)
            .map(|&i| (tree.nodes[i].cost + tree.cost_between(i, &new, new_logdet), i))
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let via_nearest = tree.nodes[nearest].cost + tree.cost_between(nearest, &new, new_logdet);
        let mut parent = (via_nearest, nearest);
        for &(c, i) in &candidates {
            if c >= via_nearest {
                break;
            }
            if i == nearest || edge_collision_free(&tree.nodes[i].b, &new, obstacles, chi2)? {
                parent = (c, i);
                break;
            }
        }

        let id = tree.nodes.len();
        tree.nodes.push(Node { b: new, logdet: new_logdet, parent: Some(parent.1), children: Vec::new(), cost: parent.0 });
        tree.nodes[parent.1].children.push(id);

        for &m in &near {
            if m == parent.1 || tree.nodes[m].b.x == new.x {
                continue;
            }
            let mb = tree.nodes[m].b;
            let c = parent.0 + edge_cost_with_logdets(&new, new_logdet, &mb, tree.nodes[m].logdet, tree.alpha);
            if c < tree.nodes[m].cost && edge_collision_free(&new, &mb, obstacles, chi2)? {
                tree.reparent(m, id, c);
            }
        }

        if in_target(&new, &scenario.target) {
            goal_nodes.push(id);
        }
    }

    let best = goal_nodes
        .iter()
        .copied()
        .min_by(|&a, &b| tree.nodes[a].cost.total_cmp(&tree.nodes[b].cost).then(a.cmp(&b)));
    let path = best.map(|i| BeliefPath::new(tree.path_to(i), scenario.alpha)).transpose()?;
    Ok(PlannerResult {
        status: if path.is_some() { PlannerStatus::Solved } else { PlannerStatus::NotSolved },
        path,
        iterations_used: params.max_iters,
        wall_time: t0.elapsed(),
        tree_size: tree.nodes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{check_feasibility, TargetRegion};
    use crate::geometry::Obstacle;

    fn open_scenario(alpha: f64) -> Scenario {
        Scenario {
            obstacles: vec![],
            start: BeliefState::new(Point2::new(0.05, 0.05), Covariance2::isotropic(4e-4).unwrap()).unwrap(),
            target: TargetRegion::new(Point2::new(0.95, 0.95), 0.05).unwrap(),
            chi2: 2.0,
            alpha,
        }
    }

    #[test]
    fn degenerate_logdet_range() {
        let params = PlannerParams { cov_logdet_range: (-13.0, -13.0), ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let b = sample_belief(&mut rng, &params);
            assert!((b.cov.ln_det() + 13.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sampling_reproducible() {
        let params = PlannerParams::default();
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            assert_eq!(sample_belief(&mut a, &params), sample_belief(&mut b, &params));
        }
    }

    #[test]
    fn position_samples_uniform() {
        // chi-squared goodness of fit on a 10x10 histogram, 99 dof;
        // the 1% critical value is 134.64
        let params = PlannerParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 100];
        let n = 10_000;
        for _ in 0..n {
            let b = sample_belief(&mut rng, &params);
            let i = ((b.x.x * 10.0) as usize).min(9);
            let j = ((b.x.y * 10.0) as usize).min(9);
            counts[i * 10 + j] += 1;
        }
        let e = n as f64 / 100.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(stat < 134.64, "chi2 stat {stat}");
    }

    #[test]
    fn open_field_near_straight_line() {
        let s = open_scenario(0.0);
        // lower bound: straight line to the nearest target point
        let straight = s.start.x.dist(s.target.center) - s.target.radius;
        let params = PlannerParams { max_iters: 5000, seed: 1, ..Default::default() };
        let res = plan(&s, &params).unwrap();
        assert_eq!(res.status, PlannerStatus::Solved);
        let path = res.path.unwrap();
        assert!(path.cost <= 1.1 * straight, "{} vs {}", path.cost, straight);
    }

    #[test]
    fn start_in_target() {
        let mut s = open_scenario(0.0);
        s.start.x = s.target.center;
        let res = plan(&s, &PlannerParams::default()).unwrap();
        assert_eq!(res.status, PlannerStatus::Solved);
        let path = res.path.unwrap();
        assert_eq!(path.nodes.len(), 2);
        assert_eq!(path.cost, 0.0);
    }

    #[test]
    fn enclosed_start_not_solved() {
        let mut s = open_scenario(0.0);
        s.start.x = Point2::new(0.5, 0.5);
        let ring = |c: Point2| Obstacle::circle(c, 0.05).unwrap();
        for k in 0..16 {
            let th = std::f64::consts::TAU * k as f64 / 16.0;
            s.obstacles.push(ring(Point2::new(0.5, 0.5) + Point2::new(th.cos(), th.sin()) * 0.15));
        }
        let res = plan(&s, &PlannerParams { max_iters: 500, ..Default::default() }).unwrap();
        assert_eq!(res.status, PlannerStatus::NotSolved);
        assert!(res.path.is_none());
    }

    #[test]
    fn infeasible_start_errors() {
        let mut s = open_scenario(0.0);
        s.obstacles.push(Obstacle::circle(s.start.x, 0.02).unwrap());
        assert!(matches!(plan(&s, &PlannerParams::default()), Err(Error::InfeasibleStart)));
    }

    #[test]
    fn anytime_and_deterministic() {
        let mut s = open_scenario(0.1);
        s.obstacles.push(
            Obstacle::triangle(Point2::new(0.3, 0.2), Point2::new(0.7, 0.5), Point2::new(0.4, 0.7)).unwrap(),
        );
        let mut last = f64::INFINITY;
        for iters in [250, 500, 1000, 2000] {
            let params = PlannerParams { max_iters: iters, seed: 9, ..Default::default() };
            let a = plan(&s, &params).unwrap();
            let b = plan(&s, &params).unwrap();
            assert_eq!(a.path, b.path);
            if let Some(p) = a.path {
                assert!(p.cost <= last);
                last = p.cost;
                let rep = check_feasibility(&p, &s.start, &s.target, &s.obstacles, s.chi2, 2).unwrap();
                assert!(rep.ok(), "{rep:?}");
            }
        }
        assert!(last.is_finite());
    }

    #[test]
    fn rejects_bad_params() {
        let s = open_scenario(0.0);
        let p = PlannerParams { rewire_radius: 0.01, ..Default::default() };
        assert!(matches!(plan(&s, &p), Err(Error::InvalidParameter(_))));
    }
}
