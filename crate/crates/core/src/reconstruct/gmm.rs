//! Two-dimensional Gaussian mixtures fitted by expectation–maximization.
//!
//! Each M-step adds [`COV_REGULARIZER`]`·I` to the weighted sample covariance.
//! That update is the exact maximizer of the log-likelihood of the points
//! convolved with `N(0, COV_REGULARIZER·I)`, whose per-point log density is
//! `ln N(x; μ, Σ) − ½·COV_REGULARIZER·tr Σ⁻¹`. The E-step and the reported
//! log-likelihood use this same density, so EM's monotonicity holds exactly.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::belief::Covariance2;
use crate::error::{Error, Result};
use crate::geometry::Point2;

pub const COV_REGULARIZER: f64 = 1e-6;
pub const MIN_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub mean: Point2,
    pub cov: Covariance2,
    pub weight: f64,
}

/// A component's weighted regularized log density (see the module docs),
/// with the per-component terms precomputed.
struct LogTerm {
    mean: Point2,
    a11: f64,
    a12: f64,
    a22: f64,
    offset: f64,
}

impl LogTerm {
    fn new(c: &GaussianComponent) -> Self {
        let v = &c.cov;
        let det = v.p11 * v.p22 - v.p12 * v.p12;
        let tr_inv = (v.p11 + v.p22) / det;
        LogTerm {
            mean: c.mean,
            a11: v.p22 / det,
            a12: -v.p12 / det,
            a22: v.p11 / det,
            offset: c.weight.ln() - (2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * COV_REGULARIZER * tr_inv,
        }
    }

    fn eval(&self, p: Point2) -> f64 {
        let d = p - self.mean;
        let q = self.a11 * d.x * d.x + 2.0 * self.a12 * d.x * d.y + self.a22 * d.y * d.y;
        self.offset - 0.5 * q
    }
}

/// Log-likelihood of the mixture; fills `row` with the responsibilities of `p`.
fn responsibilities(terms: &[LogTerm], p: Point2, row: &mut [f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for (r, t) in row.iter_mut().zip(terms) {
        *r = t.eval(p);
        m = m.max(*r);
    }
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut sum = 0.0;
    for r in row.iter_mut() {
        *r = (*r - m).exp();
        sum += *r;
    }
    for r in row.iter_mut() {
        *r /= sum;
    }
    m + sum.ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub components: Vec<GaussianComponent>,
    /// Log-likelihood after each E-step of the final EM run (a re-seed
    /// restarts the run).
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub reseeded: bool,
}

/// Weighted mean and regularized covariance of `points` under `w`.
fn moments(points: &[Point2], w: impl Fn(usize) -> f64) -> Option<(f64, Point2, Covariance2)> {
    let mut n = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for (i, p) in points.iter().enumerate() {
        let wi = w(i);
        n += wi;
        sx += wi * p.x;
        sy += wi * p.y;
    }
    if !(n > 0.0) {
        return None;
    }
    let mean = Point2::new(sx / n, sy / n);
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for (i, p) in points.iter().enumerate() {
        let wi = w(i);
        let d = *p - mean;
        a += wi * d.x * d.x;
        b += wi * d.x * d.y;
        c += wi * d.y * d.y;
    }
    let cov = Covariance2::new(a / n + COV_REGULARIZER, b / n, c / n + COV_REGULARIZER).ok()?;
    Some((n, mean, cov))
}

/// k-means++ seeding: the first center uniformly, then proportional to the
/// squared distance to the nearest chosen center.
fn kmeans_pp<R: Rng + ?Sized>(points: &[Point2], k: usize, rng: &mut R) -> Vec<Point2> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist(centers[0]).powi(2)).collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => points[dist.sample(rng)],
            // every point coincides with a center
            Err(_) => points[rng.random_range(0..points.len())],
        };
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.dist(next).powi(2));
        }
        centers.push(next);
    }
    centers
}

/// Components from a hard nearest-center assignment.
fn init_components(points: &[Point2], centers: &[Point2]) -> Result<Vec<GaussianComponent>> {
    let (_, _, global) = moments(points, |_| 1.0).ok_or(Error::TooFewPoints { needed: 1, got: 0 })?;
    let assign: Vec<usize> = points
        .iter()
        .map(|p| {
            (0..centers.len())
                .min_by(|&a, &b| p.dist(centers[a]).total_cmp(&p.dist(centers[b])))
                .unwrap()
        })
        .collect();
    let k = centers.len();
    Ok(centers
        .iter()
        .enumerate()
        .map(|(c, &center)| {
            let members = assign.iter().filter(|&&a| a == c).count();
            let cov = if members >= 2 {
                moments(points, |i| (assign[i] == c) as u8 as f64).map(|m| m.2).unwrap_or(global)
            } else {
                global.scaled(1.0 / k as f64).unwrap_or(global)
            };
            GaussianComponent { mean: center, cov, weight: (members.max(1) as f64) / (points.len() + k) as f64 }
        })
        .collect())
}

fn normalize_weights(comps: &mut [GaussianComponent]) {
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in comps {
        c.weight /= total;
    }
}

enum Em {
    Converged(Vec<GaussianComponent>, Vec<f64>, usize),
    Degenerate(usize),
}

fn run_em(points: &[Point2], mut comps: Vec<GaussianComponent>, max_iters: usize, tol: f64) -> Em {
    normalize_weights(&mut comps);
    let n = points.len();
    let k = comps.len();
    let mut resp = vec![0.0; n * k];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut row = vec![0.0; k];
    loop {
        // E-step
        let terms: Vec<LogTerm> = comps.iter().map(LogTerm::new).collect();
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            ll += responsibilities(&terms, *p, &mut row);
            resp[i * k..(i + 1) * k].copy_from_slice(&row);
        }
        let done = history.last().is_some_and(|&prev: &f64| (ll - prev).abs() < tol);
        history.push(ll);
        if done || iterations >= max_iters {
            return Em::Converged(comps, history, iterations);
        }
        // M-step
        for (c, comp) in comps.iter_mut().enumerate() {
            let Some((nk, mean, cov)) = moments(points, |i| resp[i * k + c]) else {
                return Em::Degenerate(c);
            };
            let weight = nk / n as f64;
            if weight < MIN_WEIGHT {
                return Em::Degenerate(c);
            }
            *comp = GaussianComponent { mean, cov, weight };
        }
        iterations += 1;
    }
}

/// Fits `k` components: k-means++ seeding, then EM until the log-likelihood
/// changes by less than `tol` or `max_iters` M-steps ran. A component whose
/// weight drops below [`MIN_WEIGHT`] is re-seeded at the point worst explained
/// by the mixture and EM restarts once.
pub fn fit_gmm<R: Rng + ?Sized>(
    points: &[Point2],
    k: usize,
    rng: &mut R,
    max_iters: usize,
    tol: f64,
) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::InvalidParameter("need at least one component".into()));
    }
    if points.len() < k {
        return Err(Error::TooFewPoints { needed: k, got: points.len() });
    }
    let centers = kmeans_pp(points, k, rng);
    let comps = init_components(points, &centers)?;
    let bad = match run_em(points, comps.clone(), max_iters, tol) {
        Em::Converged(components, log_likelihood, iterations) => {
            return Ok(GmmFit { components, log_likelihood, iterations, reseeded: false })
        }
        Em::Degenerate(c) => c,
    };
    let mut centers = centers;
    let terms: Vec<LogTerm> = comps.iter().map(LogTerm::new).collect();
    let mut row = vec![0.0; k];
    let fit: Vec<f64> = points.iter().map(|p| responsibilities(&terms, *p, &mut row)).collect();
    let worst = (0..points.len()).min_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b))).unwrap();
    centers[bad] = points[worst];
    match run_em(points, init_components(points, &centers)?, max_iters, tol) {
        Em::Converged(components, log_likelihood, iterations) => {
            Ok(GmmFit { components, log_likelihood, iterations, reseeded: true })
        }
        Em::Degenerate(component) => Err(Error::DegenerateMixture { component }),
    }
}
