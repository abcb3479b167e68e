//! Gaussian belief states, the path cost, and chance-constrained collision
//! checks in whitened coordinates.

use crate::error::{Error, Result};
use crate::geometry::{triangle_contains, Obstacle, Point2};

/// Determinants below this are treated as singular.
pub const DET_EPS: f64 = 1e-12;
/// Default confidence level for collision checks and tube labels.
pub const DEFAULT_CHI2: f64 = 2.0;
/// Maximum Euclidean spacing between edge check samples.
pub const EDGE_RESOLUTION: f64 = 0.01;
/// Maximum spacing between edge check samples in whitened units.
pub const WHITENED_RESOLUTION: f64 = 0.2;
/// Maximum covariance change between edge check samples, relative to the
/// smallest eigenvalue on the edge.
pub const COVARIANCE_RESOLUTION: f64 = 0.1;
/// Cap on the samples added for covariance change alone.
const MAX_COVARIANCE_STEPS: f64 = 4096.0;

/// Symmetric positive-definite 2×2 matrix stored by its upper triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance2 {
    pub p11: f64,
    pub p12: f64,
    pub p22: f64,
}

impl Covariance2 {
    pub fn new(p11: f64, p12: f64, p22: f64) -> Result<Self> {
        let c = Covariance2 { p11, p12, p22 };
        if !(p11.is_finite() && p12.is_finite() && p22.is_finite()) || p11 <= 0.0 || c.det() <= 0.0 {
            return Err(Error::NotPositiveDefinite { p11, p12, p22 });
        }
        Ok(c)
    }

    pub fn isotropic(var: f64) -> Result<Self> {
        Self::new(var, 0.0, var)
    }

    /// `R(angle) · diag(l1, l2) · R(angle)ᵀ`.
    pub fn from_eigen(angle: f64, l1: f64, l2: f64) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        Self::new(
            c * c * l1 + s * s * l2,
            c * s * (l1 - l2),
            s * s * l1 + c * c * l2,
        )
    }

    pub fn det(&self) -> f64 {
        self.p11 * self.p22 - self.p12 * self.p12
    }

    pub fn trace(&self) -> f64 {
        self.p11 + self.p22
    }

    pub fn ln_det(&self) -> f64 {
        self.det().ln()
    }

    /// Eigenvalues, largest first.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_tr = 0.5 * self.trace();
        let half_diff = 0.5 * (self.p11 - self.p22);
        let r = half_diff.hypot(self.p12);
        (half_tr + r, (half_tr - r).max(0.0))
    }

    /// Angle of the eigenvector belonging to the largest eigenvalue.
    pub fn major_angle(&self) -> f64 {
        0.5 * (2.0 * self.p12).atan2(self.p11 - self.p22)
    }

    pub fn lerp(&self, o: &Covariance2, t: f64) -> Covariance2 {
        Covariance2 {
            p11: self.p11 + (o.p11 - self.p11) * t,
            p12: self.p12 + (o.p12 - self.p12) * t,
            p22: self.p22 + (o.p22 - self.p22) * t,
        }
    }

    pub fn scaled(&self, s: f64) -> Result<Covariance2> {
        Covariance2::new(self.p11 * s, self.p12 * s, self.p22 * s)
    }

    /// Determinant, or an error when it is below the degeneracy threshold.
    pub fn checked_det(&self) -> Result<f64> {
        let det = self.det();
        if det < DET_EPS || !det.is_finite() {
            Err(Error::DegenerateCovariance { det })
        } else {
            Ok(det)
        }
    }

    /// Returns `(a11, a12, a22)` of the inverse.
    pub fn inverse(&self) -> Result<(f64, f64, f64)> {
        let det = self.checked_det()?;
        Ok((self.p22 / det, -self.p12 / det, self.p11 / det))
    }

    /// Inverse square root from the symmetric eigendecomposition.
    pub fn inv_sqrt(&self) -> Result<[[f64; 2]; 2]> {
        self.checked_det()?;
        let (l1, l2) = self.eigenvalues();
        let th = self.major_angle();
        let (s, c) = th.sin_cos();
        let (w1, w2) = (1.0 / l1.sqrt(), 1.0 / l2.sqrt());
        Ok([
            [c * c * w1 + s * s * w2, c * s * (w1 - w2)],
            [c * s * (w1 - w2), s * s * w1 + c * c * w2],
        ])
    }

    fn frobenius_dist(&self, o: &Covariance2) -> f64 {
        let (d11, d12, d22) = (self.p11 - o.p11, self.p12 - o.p12, self.p22 - o.p22);
        (d11 * d11 + 2.0 * d12 * d12 + d22 * d22).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefState {
    pub x: Point2,
    pub cov: Covariance2,
}

impl BeliefState {
    pub fn new(x: Point2, cov: Covariance2) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::InvalidParameter(format!("non-finite position {x:?}")));
        }
        Ok(BeliefState { x, cov })
    }

    pub fn lerp(&self, o: &BeliefState, t: f64) -> BeliefState {
        BeliefState {
            x: self.x.lerp(o.x, t),
            cov: self.cov.lerp(&o.cov, t),
        }
    }
}

/// Closed disk in position space. Membership ignores covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRegion {
    pub center: Point2,
    pub radius: f64,
}

impl TargetRegion {
    pub fn new(center: Point2, radius: f64) -> Result<Self> {
        let inside = center.x - radius >= 0.0
            && center.x + radius <= 1.0
            && center.y - radius >= 0.0
            && center.y + radius <= 1.0;
        if !(radius > 0.0) || !inside {
            return Err(Error::InvalidParameter(format!(
                "target disk {center:?} r={radius} must be inside the unit square"
            )));
        }
        Ok(TargetRegion { center, radius })
    }
}

pub fn in_target(b: &BeliefState, target: &TargetRegion) -> bool {
    b.x.dist(target.center) <= target.radius
}

/// `(p − x)ᵀ P⁻¹ (p − x)`.
pub fn mahalanobis_sq(p: Point2, b: &BeliefState) -> Result<f64> {
    let (a11, a12, a22) = b.cov.inverse()?;
    let d = p - b.x;
    Ok(a11 * d.x * d.x + 2.0 * a12 * d.x * d.y + a22 * d.y * d.y)
}

/// Euclidean length plus `alpha` times the clipped entropy reduction.
pub fn edge_cost(a: &BeliefState, b: &BeliefState, alpha: f64) -> Result<f64> {
    a.cov.checked_det()?;
    b.cov.checked_det()?;
    Ok(edge_cost_with_logdets(a, a.cov.ln_det(), b, b.cov.ln_det(), alpha))
}

#[inline]
pub(crate) fn edge_cost_with_logdets(a: &BeliefState, lda: f64, b: &BeliefState, ldb: f64, alpha: f64) -> f64 {
    let info = if alpha == 0.0 { 0.0 } else { alpha * (0.5 * (lda - ldb)).max(0.0) };
    a.x.dist(b.x) + info
}

pub fn path_cost(nodes: &[BeliefState], alpha: f64) -> Result<f64> {
    if nodes.len() < 2 {
        return Err(Error::MalformedPath(format!("{} nodes, need at least 2", nodes.len())));
    }
    nodes.windows(2).try_fold(0.0, |acc, w| Ok(acc + edge_cost(&w[0], &w[1], alpha)?))
}

/// `steps` beliefs linearly interpolated from `a` to `b`, endpoints exact.
pub fn interpolate_edge(a: &BeliefState, b: &BeliefState, steps: usize) -> Vec<BeliefState> {
    let steps = steps.max(2);
    let last = steps - 1;
    (0..steps)
        .map(|k| match k {
            0 => *a,
            k if k == last => *b,
            k => a.lerp(b, k as f64 / last as f64),
        })
        .collect()
}

/// Number of check points for the edge `a → b`: spacing is at most
/// [`EDGE_RESOLUTION`] in position and [`WHITENED_RESOLUTION`] in whitened
/// units, and the half-step covariance change is at most
/// [`COVARIANCE_RESOLUTION`] (up to a cap).
pub fn edge_steps(a: &BeliefState, b: &BeliefState) -> usize {
    let len = a.x.dist(b.x);
    let lmin = a.cov.eigenvalues().1.min(b.cov.eigenvalues().1);
    let (whitened, rel_cov) = if lmin > 0.0 {
        (len / lmin.sqrt(), 0.5 * a.cov.frobenius_dist(&b.cov) / lmin)
    } else {
        (0.0, 0.0)
    };
    let n = (len / EDGE_RESOLUTION)
        .ceil()
        .max((whitened / WHITENED_RESOLUTION).ceil())
        .max((rel_cov / COVARIANCE_RESOLUTION).ceil().min(MAX_COVARIANCE_STEPS));
    n as usize + 2
}

/// Precomputed whitening transform of a belief.
struct Whitener {
    x: Point2,
    w: [[f64; 2]; 2],
    eig: (f64, f64),
    angle: f64,
}

impl Whitener {
    fn new(b: &BeliefState) -> Result<Self> {
        Ok(Whitener {
            x: b.x,
            w: b.cov.inv_sqrt()?,
            eig: b.cov.eigenvalues(),
            angle: b.cov.major_angle(),
        })
    }

    fn apply(&self, p: Point2) -> Point2 {
        let d = p - self.x;
        Point2::new(
            self.w[0][0] * d.x + self.w[0][1] * d.y,
            self.w[1][0] * d.x + self.w[1][1] * d.y,
        )
    }

    /// Squared whitened distance from the belief mean to the obstacle.
    fn obstacle_sq(&self, o: &Obstacle) -> f64 {
        match *o {
            Obstacle::Triangle(ref v) => {
                let wv = [self.apply(v[0]), self.apply(v[1]), self.apply(v[2])];
                let origin = Point2::default();
                if triangle_contains(&wv, origin) {
                    return 0.0;
                }
                (0..3)
                    .map(|k| seg_dist_sq_origin(wv[k], wv[(k + 1) % 3]))
                    .fold(f64::INFINITY, f64::min)
            }
            Obstacle::Circle { center, radius } => self.circle_sq(center, radius),
        }
    }

    /// The whitened disk is an ellipse; its nearest point solves
    /// `min (z−d)ᵀA(z−d)` s.t. `|z| ≤ r` with `A = P⁻¹`, `d = x − c`.
    fn circle_sq(&self, center: Point2, radius: f64) -> f64 {
        let d = self.x - center;
        if d.norm() <= radius {
            return 0.0;
        }
        let (s, c) = self.angle.sin_cos();
        // eigenbasis of P (and of A)
        let d1 = c * d.x + s * d.y;
        let d2 = -s * d.x + c * d.y;
        let (a1, a2) = (1.0 / self.eig.0, 1.0 / self.eig.1);
        let z_norm2 = |mu: f64| {
            let z1 = a1 * d1 / (a1 + mu);
            let z2 = a2 * d2 / (a2 + mu);
            z1 * z1 + z2 * z2
        };
        let r2 = radius * radius;
        let (mut lo, mut hi) = (0.0, a1.max(a2) * d.norm() / radius);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if z_norm2(mid) > r2 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        let mu = 0.5 * (lo + hi);
        let e1 = a1 * d1 / (a1 + mu) - d1;
        let e2 = a2 * d2 / (a2 + mu) - d2;
        a1 * e1 * e1 + a2 * e2 * e2
    }

    fn min_sq(&self, obstacles: &[Obstacle]) -> f64 {
        obstacles.iter().map(|o| self.obstacle_sq(o)).fold(f64::INFINITY, f64::min)
    }
}

fn seg_dist_sq_origin(a: Point2, b: Point2) -> f64 {
    let e = b - a;
    let len2 = e.dot(e);
    let t = if len2 > 0.0 { (-a.dot(e) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = a + e * t;
    q.dot(q)
}

/// Smallest squared Mahalanobis distance from the belief to any obstacle point.
pub fn obstacle_mahalanobis_sq(b: &BeliefState, obstacles: &[Obstacle]) -> Result<f64> {
    Ok(Whitener::new(b)?.min_sq(obstacles))
}

/// True iff every obstacle point is at squared Mahalanobis distance `≥ chi2`.
pub fn belief_collision_free(b: &BeliefState, obstacles: &[Obstacle], chi2: f64) -> Result<bool> {
    if obstacles.is_empty() {
        b.cov.checked_det()?;
        return Ok(true);
    }
    Ok(obstacle_mahalanobis_sq(b, obstacles)? >= chi2)
}

/// Plain check of the `steps` interpolated beliefs of an edge.
pub fn edge_collision_free_at(
    a: &BeliefState,
    b: &BeliefState,
    obstacles: &[Obstacle],
    chi2: f64,
    steps: usize,
) -> Result<bool> {
    for s in interpolate_edge(a, b, steps) {
        if !belief_collision_free(&s, obstacles, chi2)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Edge check used by planning and reconstruction.
///
/// Samples lie on the grid of [`edge_steps`]; each visited sample must clear
/// the obstacles by `√chi2` plus half a whitened step, inflated by the
/// relative covariance change between samples, so no point within half a step
/// of it can violate the constraint. A sample with whitened clearance `g` also
/// proves the constraint on the next `Δ` of the edge whenever
/// `(g − Δ·A) / √(1 + Δ·B) ≥ √chi2`, with `A` the whitened edge length and `B`
/// the covariance change relative to the smallest eigenvalue; grid samples
/// inside that interval are skipped.
pub fn edge_collision_free(a: &BeliefState, b: &BeliefState, obstacles: &[Obstacle], chi2: f64) -> Result<bool> {
    if obstacles.is_empty() {
        a.cov.checked_det()?;
        b.cov.checked_det()?;
        return Ok(true);
    }
    let steps = edge_steps(a, b);
    let lmin = a.cov.eigenvalues().1.min(b.cov.eigenvalues().1);
    if lmin <= 0.0 {
        return Err(Error::DegenerateCovariance { det: 0.0 });
    }
    let seg = (steps - 1) as f64;
    let big_a = a.x.dist(b.x) / lmin.sqrt();
    let big_b = a.cov.frobenius_dist(&b.cov) / lmin;
    let need = (chi2.sqrt() + 0.5 * big_a / seg) * (1.0 + 0.5 * big_b / seg).sqrt();
    let need_sq = need * need;
    let clearance = |k: usize| -> Result<f64> {
        let s = if k == 0 {
            *a
        } else if k == steps - 1 {
            *b
        } else {
            a.lerp(b, k as f64 / seg)
        };
        Ok(Whitener::new(&s)?.min_sq(obstacles))
    };
    // the goal end fails most often
    if clearance(steps - 1)? < need_sq {
        return Ok(false);
    }
    let c = chi2.sqrt();
    let mut k = 0;
    while k < steps - 1 {
        let g2 = clearance(k)?;
        if g2 < need_sq {
            return Ok(false);
        }
        let reach = safe_reach(g2.sqrt(), c, big_a, big_b);
        // the next sample covers from half a step before it
        let jump = (reach * seg + 0.5).floor() as usize;
        k = k.saturating_add(jump.max(1)).min(steps - 1);
    }
    Ok(true)
}

/// Largest `Δ ∈ [0, 1]` with `g − Δ·A ≥ c·√(1 + Δ·B)`, for `g ≥ c`.
fn safe_reach(g: f64, c: f64, big_a: f64, big_b: f64) -> f64 {
    let ok = |d: f64| g - d * big_a >= c * (1.0 + d * big_b).sqrt();
    if ok(1.0) {
        return 1.0;
    }
    // the left side decreases and the right side increases in Δ
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Ordered beliefs with their total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefPath {
    pub nodes: Vec<BeliefState>,
    pub alpha: f64,
    pub cost: f64,
}

impl BeliefPath {
    pub fn new(nodes: Vec<BeliefState>, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be nonnegative, got {alpha}")));
        }
        let cost = path_cost(&nodes, alpha)?;
        Ok(BeliefPath { nodes, alpha, cost })
    }

    /// Euclidean length of the positional trace.
    pub fn length(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[0].x.dist(w[1].x)).sum()
    }

    pub fn start(&self) -> &BeliefState {
        &self.nodes[0]
    }

    pub fn end(&self) -> &BeliefState {
        &self.nodes[self.nodes.len() - 1]
    }

    pub const TSV_HEADER: &'static str = "# x\ty\tp11\tp12\tp22";

    /// One `x, y, p11, p12, p22` line per node after a `#` header; floats use
    /// the shortest round-trip representation.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::TSV_HEADER);
        for n in &self.nodes {
            s += &format!("{}\t{}\t{}\t{}\t{}\n", n.x.x, n.x.y, n.cov.p11, n.cov.p12, n.cov.p22);
        }
        s
    }

    /// Parses [`BeliefPath::to_tsv`] output; `#` lines and blank lines are skipped.
    pub fn from_tsv(text: &str, alpha: f64) -> Result<Self> {
        let mut nodes = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: Vec<f64> = line
                .split('\t')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::MalformedPath(format!("line {}: {e}", k + 1)))?;
            if v.len() != 5 {
                return Err(Error::MalformedPath(format!("line {}: expected 5 fields, found {}", k + 1, v.len())));
            }
            nodes.push(BeliefState::new(Point2::new(v[0], v[1]), Covariance2::new(v[2], v[3], v[4])?)?);
        }
        BeliefPath::new(nodes, alpha)
    }

    /// Every interpolated belief of every edge, each edge sampled per
    /// [`edge_steps`] multiplied by `refine`.
    pub fn dense(&self, refine: usize) -> Vec<BeliefState> {
        let mut out = vec![self.nodes[0]];
        for w in self.nodes.windows(2) {
            let steps = (edge_steps(&w[0], &w[1]) - 1) * refine.max(1) + 1;
            out.extend(interpolate_edge(&w[0], &w[1], steps).into_iter().skip(1));
        }
        out
    }
}

/// Outcome of the feasibility suite for a path.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub starts_at_start: bool,
    pub ends_in_target: bool,
    pub nodes_clear: bool,
    pub edges_clear: bool,
}

impl FeasibilityReport {
    pub fn ok(&self) -> bool {
        self.starts_at_start && self.ends_in_target && self.nodes_clear && self.edges_clear
    }
}

/// Checks the path against the full problem constraints: correct start,
/// terminal belief in the target, and every node and edge point clear,
/// with edges resampled at `refine` times the planning resolution.
pub fn check_feasibility(
    path: &BeliefPath,
    start: &BeliefState,
    target: &TargetRegion,
    obstacles: &[Obstacle],
    chi2: f64,
    refine: usize,
) -> Result<FeasibilityReport> {
    let mut nodes_clear = true;
    for n in &path.nodes {
        nodes_clear &= belief_collision_free(n, obstacles, chi2)?;
    }
    let mut edges_clear = true;
    for w in path.nodes.windows(2) {
        let steps = (edge_steps(&w[0], &w[1]) - 1) * refine.max(1) + 1;
        edges_clear &= edge_collision_free_at(&w[0], &w[1], obstacles, chi2, steps)?;
    }
    Ok(FeasibilityReport {
        starts_at_start: path.start() == start,
        ends_in_target: in_target(path.end(), target),
        nodes_clear,
        edges_clear,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bel(x: f64, y: f64, p11: f64, p12: f64, p22: f64) -> BeliefState {
        BeliefState::new(Point2::new(x, y), Covariance2::new(p11, p12, p22).unwrap()).unwrap()
    }

    /// Brute-force Mahalanobis distance to an obstacle by dense sampling of
    /// its boundary and interior test.
    fn brute_maha_sq(b: &BeliefState, o: &Obstacle) -> f64 {
        if o.contains(b.x) {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        let n = 20_000;
        match *o {
            Obstacle::Triangle(v) => {
                for k in 0..3 {
                    for s in 0..=n {
                        let q = v[k].lerp(v[(k + 1) % 3], s as f64 / n as f64);
                        best = best.min(mahalanobis_sq(q, b).unwrap());
                    }
                }
            }
            Obstacle::Circle { center, radius } => {
                for s in 0..n {
                    let th = std::f64::consts::TAU * s as f64 / n as f64;
                    let q = center + Point2::new(th.cos(), th.sin()) * radius;
                    best = best.min(mahalanobis_sq(q, b).unwrap());
                }
            }
        }
        best
    }

    #[test]
    fn path_tsv_round_trip() {
        let p = BeliefPath::new(vec![bel(0.1, 0.2, 1e-3, 1e-4, 2e-3), bel(0.7, 0.3, 0.3e-3, 0.0, 1.0 / 3.0 * 1e-3)], 0.1).unwrap();
        let text = p.to_tsv();
        assert!(text.starts_with(BeliefPath::TSV_HEADER));
        assert_eq!(BeliefPath::from_tsv(&text, 0.1).unwrap(), p);
        assert!(matches!(BeliefPath::from_tsv("0.1\t0.2\n", 0.0), Err(Error::MalformedPath(_))));
        assert!(BeliefPath::from_tsv("0.1\t0.2\t1\t2\t1\n0.3\t0.2\t1\t0\t1\n", 0.0).is_err());
        assert!(matches!(BeliefPath::from_tsv("# only a header\n", 0.0), Err(Error::MalformedPath(_))));
    }

    #[test]
    fn mahalanobis_examples() {
        let b = bel(0.0, 0.0, 1.0, 0.0, 1.0);
        assert!((mahalanobis_sq(Point2::new(0.3, 0.4), &b).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(mahalanobis_sq(b.x, &b).unwrap(), 0.0);
        let b = bel(0.5, 0.5, 0.04, 0.0, 0.01);
        assert!((mahalanobis_sq(Point2::new(0.7, 0.6), &b).unwrap() - 2.0).abs() < 1e-12);
        let tiny = BeliefState { x: Point2::default(), cov: Covariance2 { p11: 1e-7, p12: 0.0, p22: 1e-7 } };
        assert!(matches!(mahalanobis_sq(Point2::new(1.0, 0.0), &tiny), Err(Error::DegenerateCovariance { .. })));
    }

    #[test]
    fn collision_examples() {
        let b = bel(0.0, 0.0, 1.0, 0.0, 1.0);
        assert!(belief_collision_free(&b, &[], 1.0).unwrap());
        let c = Obstacle::circle(Point2::new(2.0, 0.0), 0.5).unwrap();
        assert!(belief_collision_free(&b, &[c], 1.0).unwrap());
        assert!((obstacle_mahalanobis_sq(&b, &[c]).unwrap() - 2.25).abs() < 1e-12);
        let t = Obstacle::triangle(Point2::new(-1.0, -1.0), Point2::new(1.0, -1.0), Point2::new(0.0, 1.0)).unwrap();
        assert!(!belief_collision_free(&b, &[t], 1.0).unwrap());
    }

    #[test]
    fn whitened_distance_matches_brute_force() {
        let beliefs = [
            bel(0.5, 0.5, 0.01, 0.004, 0.003),
            bel(0.2, 0.7, 0.0009, -0.0003, 0.002),
            bel(0.9, 0.1, 0.02, 0.0, 0.001),
        ];
        let obstacles = [
            Obstacle::triangle(Point2::new(0.3, 0.3), Point2::new(0.45, 0.32), Point2::new(0.35, 0.44)).unwrap(),
            Obstacle::circle(Point2::new(0.7, 0.65), 0.08).unwrap(),
            Obstacle::circle(Point2::new(0.6, 0.2), 0.05).unwrap(),
        ];
        for b in &beliefs {
            for o in &obstacles {
                let fast = obstacle_mahalanobis_sq(b, std::slice::from_ref(o)).unwrap();
                let slow = brute_maha_sq(b, o);
                assert!((fast - slow).abs() <= 1e-6 * slow.max(1.0), "{fast} vs {slow} for {b:?} {o:?}");
            }
        }
    }

    #[test]
    fn interpolation_examples() {
        let a = bel(0.1, 0.1, 0.01, 0.0, 0.01);
        let b = bel(0.3, 0.5, 0.05, 0.0, 0.03);
        assert_eq!(interpolate_edge(&a, &b, 2), vec![a, b]);
        assert_eq!(interpolate_edge(&a, &a, 5), vec![a; 5]);
        let mid = interpolate_edge(&a, &b, 3)[1];
        assert!((mid.cov.p11 - 0.03).abs() < 1e-15 && (mid.cov.p22 - 0.02).abs() < 1e-15);
    }

    #[test]
    fn edge_cost_examples() {
        let a = bel(0.0, 0.0, 0.01, 0.0, 0.02);
        let b = bel(0.3, 0.4, 0.03, 0.01, 0.02);
        assert!((edge_cost(&a, &b, 0.0).unwrap() - 0.5).abs() < 1e-15);
        let b_same = BeliefState { cov: a.cov, ..b };
        assert!((edge_cost(&a, &b_same, 7.0).unwrap() - 0.5).abs() < 1e-15);
        let e2 = std::f64::consts::E.powi(2);
        let a = bel(0.0, 0.0, e2, 0.0, e2);
        let b = bel(0.3, 0.4, 1.0, 0.0, 1.0);
        assert!((edge_cost(&a, &b, 1.0).unwrap() - 2.5).abs() < 1e-12);
        // growing uncertainty is free
        assert!((edge_cost(&b, &a, 1.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn path_cost_examples() {
        let a = bel(0.0, 0.0, 0.01, 0.0, 0.01);
        let b = bel(0.3, 0.4, 0.01, 0.0, 0.01);
        let c = bel(0.6, 0.8, 0.01, 0.0, 0.01);
        assert!(matches!(path_cost(&[a], 0.0), Err(Error::MalformedPath(_))));
        assert_eq!(path_cost(&[a, b], 0.3).unwrap(), edge_cost(&a, &b, 0.3).unwrap());
        assert!((path_cost(&[a, b, c], 0.0).unwrap() - 1.0).abs() < 1e-15);
        let b2 = bel(0.5, 0.1, 0.03, 0.0, 0.02);
        let fwd = path_cost(&[a, b2, c], 0.0).unwrap();
        let rev = path_cost(&[c, b2, a], 0.0).unwrap();
        assert!((fwd - rev).abs() < 1e-15);
    }

    #[test]
    fn target_examples() {
        let t = TargetRegion::new(Point2::new(0.5, 0.5), 0.1).unwrap();
        let cov = Covariance2::isotropic(0.01).unwrap();
        assert!(in_target(&BeliefState { x: t.center, cov }, &t));
        assert!(in_target(&BeliefState { x: Point2::new(0.5, 0.6), cov }, &t));
        assert!(!in_target(&BeliefState { x: Point2::new(0.5, 0.7), cov }, &t));
        assert!(TargetRegion::new(Point2::new(0.05, 0.5), 0.1).is_err());
    }

    #[test]
    fn margin_check_implies_dense_check() {
        let obstacles = [
            Obstacle::triangle(Point2::new(0.4, 0.3), Point2::new(0.6, 0.35), Point2::new(0.5, 0.5)).unwrap(),
            Obstacle::circle(Point2::new(0.3, 0.7), 0.1).unwrap(),
        ];
        let mut checked = 0;
        for i in 0..40 {
            for j in 0..40 {
                let a = bel(0.05 + 0.02 * i as f64, 0.1, 0.0004, 0.0001, 0.0009);
                let b = bel(0.1, 0.2 + 0.02 * j as f64, 0.002, -0.0002, 0.0006);
                if edge_collision_free(&a, &b, &obstacles, 2.0).unwrap() {
                    checked += 1;
                    let steps = (edge_steps(&a, &b) - 1) * 8 + 1;
                    assert!(edge_collision_free_at(&a, &b, &obstacles, 2.0, steps).unwrap());
                }
            }
        }
        assert!(checked > 100);
    }

    fn arb_cov() -> impl Strategy<Value = Covariance2> {
        (0.0..std::f64::consts::PI, -9.0..-2.0f64, -9.0..-2.0f64)
            .prop_map(|(th, l1, l2)| Covariance2::from_eigen(th, l1.exp(), l2.exp()).unwrap())
    }

    fn arb_belief() -> impl Strategy<Value = BeliefState> {
        (0.0..1.0f64, 0.0..1.0f64, arb_cov()).prop_map(|(x, y, cov)| BeliefState::new(Point2::new(x, y), cov).unwrap())
    }

    proptest! {
        #[test]
        fn isotropic_mahalanobis(x in 0.0..1.0f64, y in 0.0..1.0f64, px in 0.0..1.0f64, py in 0.0..1.0f64, s in 0.01..1.0f64) {
            let b = BeliefState::new(Point2::new(x, y), Covariance2::isotropic(s * s).unwrap()).unwrap();
            let p = Point2::new(px, py);
            let expect = p.dist(b.x).powi(2) / (s * s);
            prop_assert!((mahalanobis_sq(p, &b).unwrap() - expect).abs() <= 1e-9 * expect.max(1.0));
        }

        #[test]
        fn collision_monotone_in_chi2(b in arb_belief(), cx in 0.0..1.0f64, cy in 0.0..1.0f64, r in 0.01..0.2f64, chi2 in 0.1..10.0f64, f in 0.0..1.0f64) {
            let obs = [Obstacle::circle(Point2::new(cx, cy), r).unwrap()];
            if belief_collision_free(&b, &obs, chi2).unwrap() {
                prop_assert!(belief_collision_free(&b, &obs, chi2 * f).unwrap());
            }
        }

        #[test]
        fn edge_cost_at_least_length(a in arb_belief(), b in arb_belief(), alpha in 0.0..5.0f64) {
            let c = edge_cost(&a, &b, alpha).unwrap();
            let len = a.x.dist(b.x);
            prop_assert!(c >= len);
            if alpha == 0.0 || b.cov.ln_det() >= a.cov.ln_det() {
                prop_assert_eq!(c, len);
            }
        }

        #[test]
        fn path_cost_additive(nodes in proptest::collection::vec(arb_belief(), 3..8), split in 1usize..6, alpha in 0.0..2.0f64) {
            let split = split.min(nodes.len() - 2);
            let whole = path_cost(&nodes, alpha).unwrap();
            let left = path_cost(&nodes[..=split], alpha).unwrap();
            let right = path_cost(&nodes[split..], alpha).unwrap();
            prop_assert!((whole - left - right).abs() < 1e-9);
        }

        #[test]
        fn interpolation_stays_spd(a in arb_belief(), b in arb_belief(), steps in 2usize..30) {
            for s in interpolate_edge(&a, &b, steps) {
                prop_assert!(Covariance2::new(s.cov.p11, s.cov.p12, s.cov.p22).is_ok());
            }
        }
    }
}
