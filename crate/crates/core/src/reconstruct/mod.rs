//! Belief paths from a predicted path density: sample, fit a mixture, search a
//! belief graph, and resample when the graph does not connect.

pub mod gmm;
pub mod graph;
pub mod sampling;

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use gmm::{fit_gmm, GaussianComponent, GmmFit};
pub use graph::{astar, shortest_path, BeliefGraph};
pub use sampling::sample_from_density;

use crate::belief::{belief_collision_free, BeliefPath, BeliefState, Covariance2};
use crate::dataset::Scenario;
use crate::encoding::Grid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionParams {
    pub sample_count: usize,
    pub components: usize,
    pub em_max_iters: usize,
    pub em_tol: f64,
    pub fallback_rounds: usize,
    pub extra_samples_per_round: usize,
    /// Isotropic variance of fallback vertices.
    pub fallback_variance: f64,
    /// Vertex covariance = `cov_scale` × component covariance.
    pub cov_scale: f64,
    /// Restrict candidate edges to nearest neighbours and search with A*.
    pub k_nearest: Option<usize>,
    pub seed: u64,
}

impl Default for ReconstructionParams {
    fn default() -> Self {
        ReconstructionParams {
            sample_count: 100,
            components: 10,
            em_max_iters: 100,
            em_tol: 1e-6,
            fallback_rounds: 5,
            extra_samples_per_round: 20,
            fallback_variance: 1e-4,
            cov_scale: 1.0,
            k_nearest: None,
            seed: 0,
        }
    }
}

impl ReconstructionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.sample_count == 0 || self.components == 0 {
            return bad("sample_count and components must be positive");
        }
        if self.sample_count < self.components {
            return bad("sample_count must be at least the component count");
        }
        if self.fallback_rounds > 0 && self.extra_samples_per_round == 0 {
            return bad("extra_samples_per_round must be positive when fallback is enabled");
        }
        if !(self.fallback_variance > 0.0 && self.fallback_variance.is_finite()) {
            return bad("fallback_variance must be positive");
        }
        if !(self.cov_scale > 0.0 && self.cov_scale.is_finite()) {
            return bad("cov_scale must be positive");
        }
        if !(self.em_tol >= 0.0 && self.em_tol.is_finite()) {
            return bad("em_tol must be non-negative");
        }
        if self.k_nearest == Some(0) {
            return bad("k_nearest must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Fallback rounds run; 0 when the mixture graph connected directly.
    pub rounds: usize,
    pub samples: usize,
    pub vertices: usize,
    pub edges: usize,
    pub pruned_edges: usize,
    pub em_iterations: usize,
    pub sampling_time: Duration,
    pub gmm_time: Duration,
    /// Vertex creation and edge collision checks.
    pub graph_time: Duration,
    pub search_time: Duration,
}

impl Diagnostics {
    pub fn used_fallback(&self) -> bool {
        self.rounds > 0
    }

    pub fn total_time(&self) -> Duration {
        self.sampling_time + self.gmm_time + self.graph_time + self.search_time
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub path: BeliefPath,
    pub diagnostics: Diagnostics,
}

/// Reconstructs a belief path from `density` for `scenario`.
///
/// The goal vertex sits at the target center and takes the covariance of the
/// nearest component, or the fallback covariance when that one collides.
/// A failure after all fallback rounds is reported as
/// [`Error::ReconstructionFailed`].
pub fn reconstruct_path(density: &Grid, scenario: &Scenario, params: &ReconstructionParams) -> Result<Reconstruction> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut diag = Diagnostics::default();

    let t = Instant::now();
    let points = sample_from_density(density, params.sample_count, &mut rng)?;
    diag.samples = points.len();
    diag.sampling_time += t.elapsed();

    let t = Instant::now();
    let fit = fit_gmm(&points, params.components, &mut rng, params.em_max_iters, params.em_tol)?;
    diag.em_iterations = fit.iterations;
    diag.gmm_time += t.elapsed();

    let t = Instant::now();
    let fallback_cov = Covariance2::isotropic(params.fallback_variance)?;
    let mut component_beliefs = Vec::with_capacity(fit.components.len());
    for c in &fit.components {
        // a component too thin to invert after scaling is skipped
        if let Ok(cov) = c.cov.scaled(params.cov_scale) {
            if cov.checked_det().is_ok() {
                component_beliefs.push(BeliefState::new(c.mean, cov)?);
            }
        }
    }
    let center = scenario.target.center;
    let goal_cov = component_beliefs
        .iter()
        .min_by(|a, b| a.x.dist(center).total_cmp(&b.x.dist(center)))
        .map_or(fallback_cov, |b| b.cov);
    let mut goal = BeliefState::new(center, goal_cov)?;
    if !belief_collision_free(&goal, &scenario.obstacles, scenario.chi2)? {
        goal.cov = fallback_cov;
    }
    let mut graph = BeliefGraph::new(
        scenario.start,
        goal,
        &scenario.obstacles,
        scenario.chi2,
        scenario.alpha,
        params.k_nearest,
    )?;
    graph.add_vertices(&component_beliefs)?;
    diag.graph_time += t.elapsed();

    loop {
        let t = Instant::now();
        let found = if params.k_nearest.is_some() { graph.astar_path() } else { graph.shortest_path() };
        diag.search_time += t.elapsed();
        diag.vertices = graph.vertices.len();
        diag.edges = graph.edges.len();
        diag.pruned_edges = graph.pruned_edges;
        match found {
            Ok((route, _)) => {
                let nodes = route.iter().map(|&v| graph.vertices[v]).collect();
                let path = BeliefPath::new(nodes, scenario.alpha)?;
                return Ok(Reconstruction { path, diagnostics: diag });
            }
            Err(Error::Disconnected) if diag.rounds < params.fallback_rounds => {
                diag.rounds += 1;
                let t = Instant::now();
                let extra = sample_from_density(density, params.extra_samples_per_round, &mut rng)?;
                diag.samples += extra.len();
                diag.sampling_time += t.elapsed();
                let t = Instant::now();
                let beliefs: Vec<BeliefState> =
                    extra.into_iter().map(|x| BeliefState { x, cov: fallback_cov }).collect();
                graph.add_vertices(&beliefs)?;
                diag.graph_time += t.elapsed();
            }
            Err(Error::Disconnected) => {
                return Err(Error::ReconstructionFailed { rounds: diag.rounds, samples: diag.samples });
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{check_feasibility, TargetRegion};
    use crate::encoding::encode_label;
    use crate::geometry::{Obstacle, Point2};

    fn scenario(obstacles: Vec<Obstacle>) -> Scenario {
        Scenario {
            obstacles,
            start: BeliefState::new(Point2::new(0.1, 0.1), Covariance2::isotropic(9e-4).unwrap()).unwrap(),
            target: TargetRegion::new(Point2::new(0.8, 0.8), 0.05).unwrap(),
            chi2: 2.0,
            alpha: 0.1,
        }
    }

    #[test]
    fn straight_label_reconstructs_close_to_label_cost() {
        // α = 0: the cost is the path length
        for alpha in [0.0, 0.1] {
            let s = Scenario { alpha, ..scenario(vec![]) };
            let goal = BeliefState::new(s.target.center, s.start.cov).unwrap();
            let labeled = BeliefPath::new(vec![s.start, goal], s.alpha).unwrap();
            let density = encode_label(&labeled, s.chi2, 64, 64).unwrap();
            let r = reconstruct_path(&density, &s, &ReconstructionParams::default()).unwrap();
            assert!(check_feasibility(&r.path, &s.start, &s.target, &s.obstacles, s.chi2, 2).unwrap().ok());
            assert!(r.path.length() <= 1.1 * labeled.length(), "{} vs {}", r.path.length(), labeled.length());
            if alpha == 0.0 {
                assert!(r.path.cost <= 1.1 * labeled.cost, "{} vs {}", r.path.cost, labeled.cost);
            }
            assert!(!r.diagnostics.used_fallback());
        }
    }

    #[test]
    fn empty_density() {
        let s = scenario(vec![]);
        let r = reconstruct_path(&Grid::zeros(8, 8), &s, &ReconstructionParams::default());
        assert!(matches!(r, Err(Error::EmptyDensity)));
    }

    #[test]
    fn blocked_target_fails_with_diagnostics() {
        // a band between x + y = 1.2 and 1.3 separates the start from the target
        let (a, b) = (Point2::new(-0.5, 1.7), Point2::new(1.7, -0.5));
        let (c, d) = (Point2::new(1.8, -0.5), Point2::new(-0.5, 1.8));
        let wall = vec![Obstacle::triangle(a, b, c).unwrap(), Obstacle::triangle(a, c, d).unwrap()];
        let s = scenario(wall);
        let density = Grid::from_values(16, 16, vec![1.0; 256]).unwrap();
        let params = ReconstructionParams { fallback_rounds: 2, ..Default::default() };
        match reconstruct_path(&density, &s, &params) {
            Err(Error::ReconstructionFailed { rounds, samples }) => {
                assert_eq!(rounds, 2);
                assert_eq!(samples, 100 + 2 * 20);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic() {
        let s = scenario(vec![Obstacle::circle(Point2::new(0.45, 0.45), 0.1).unwrap()]);
        let density = Grid::from_fn(32, 32, |p| (-(p.x - p.y).powi(2) * 20.0).exp() as f32);
        let p = ReconstructionParams::default();
        let a = reconstruct_path(&density, &s, &p);
        let b = reconstruct_path(&density, &s, &p);
        match (a, b) {
            (Ok(a), Ok(b)) => assert_eq!(a.path, b.path),
            (Err(a), Err(b)) => assert_eq!(a.to_string(), b.to_string()),
            _ => panic!("nondeterministic outcome"),
        }
    }
}
