//! Planar primitives: points, triangular and circular obstacles.
//!
//! Obstacles are closed sets, so points on an edge count as inside.

use std::ops::{Add, Mul, Sub};

use rand::Rng;

use crate::error::{Error, Result};

/// Cross-product tolerance for point-in-triangle tests.
const EDGE_EPS: f64 = 1e-12;

/// Sampled triangles must have at least this area.
pub const MIN_SAMPLED_AREA: f64 = 1e-3;
/// Sampled triangles must fit in a disk of this diameter.
pub const MAX_SAMPLED_DIAMETER: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn lerp(self, o: Point2, t: f64) -> Point2 {
        Point2::new(self.x + (o.x - self.x) * t, self.y + (o.y - self.y) * t)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// Axis-aligned box used as a sampling domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Point2,
    pub max: Point2,
}

impl Bounds {
    pub const UNIT: Bounds = Bounds {
        min: Point2::new(0.0, 0.0),
        max: Point2::new(1.0, 1.0),
    };

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point2 {
        Point2::new(
            self.min.x + (self.max.x - self.min.x) * rng.random::<f64>(),
            self.min.y + (self.max.y - self.min.y) * rng.random::<f64>(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obstacle {
    Triangle([Point2; 3]),
    Circle { center: Point2, radius: f64 },
}

impl Obstacle {
    pub fn triangle(v0: Point2, v1: Point2, v2: Point2) -> Result<Self> {
        let tri = Obstacle::Triangle([v0, v1, v2]);
        if ![v0, v1, v2].iter().all(|p| p.is_finite()) || triangle_area(&[v0, v1, v2]) <= 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "degenerate triangle {v0:?} {v1:?} {v2:?}"
            )));
        }
        Ok(tri)
    }

    pub fn circle(center: Point2, radius: f64) -> Result<Self> {
        if !center.is_finite() || !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bad circle at {center:?} radius {radius}"
            )));
        }
        Ok(Obstacle::Circle { center, radius })
    }

    /// Closed-set membership.
    pub fn contains(&self, p: Point2) -> bool {
        match *self {
            Obstacle::Triangle(ref v) => triangle_contains(v, p),
            Obstacle::Circle { center, radius } => (p - center).norm() <= radius,
        }
    }

    /// Euclidean distance from `p` to the obstacle set; zero inside.
    pub fn min_distance(&self, p: Point2) -> f64 {
        match *self {
            Obstacle::Triangle(ref v) => {
                if triangle_contains(v, p) {
                    0.0
                } else {
                    (0..3)
                        .map(|k| segment_distance(p, v[k], v[(k + 1) % 3]))
                        .fold(f64::INFINITY, f64::min)
                }
            }
            Obstacle::Circle { center, radius } => ((p - center).norm() - radius).max(0.0),
        }
    }
}

pub fn triangle_area(v: &[Point2; 3]) -> f64 {
    0.5 * (v[1] - v[0]).cross(v[2] - v[0]).abs()
}

fn triangle_diameter(v: &[Point2; 3]) -> f64 {
    v[0].dist(v[1]).max(v[1].dist(v[2])).max(v[2].dist(v[0]))
}

pub(crate) fn triangle_contains(v: &[Point2; 3], p: Point2) -> bool {
    let d0 = (v[1] - v[0]).cross(p - v[0]);
    let d1 = (v[2] - v[1]).cross(p - v[1]);
    let d2 = (v[0] - v[2]).cross(p - v[2]);
    let has_neg = d0 < -EDGE_EPS || d1 < -EDGE_EPS || d2 < -EDGE_EPS;
    let has_pos = d0 > EDGE_EPS || d1 > EDGE_EPS || d2 > EDGE_EPS;
    !(has_neg && has_pos)
}

/// Distance from `p` to the closed segment `[a, b]`.
pub fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let e = b - a;
    let len2 = e.dot(e);
    let t = if len2 > 0.0 {
        ((p - a).dot(e) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.dist(a + e * t)
}

/// Draws `count` random triangles inside `bounds`, rejecting slivers and
/// triangles wider than [`MAX_SAMPLED_DIAMETER`].
pub fn sample_obstacles<R: Rng + ?Sized>(rng: &mut R, count: usize, bounds: &Bounds) -> Vec<Obstacle> {
    (0..count)
        .map(|_| loop {
            let v = [bounds.sample(rng), bounds.sample(rng), bounds.sample(rng)];
            if triangle_area(&v) >= MIN_SAMPLED_AREA && triangle_diameter(&v) <= MAX_SAMPLED_DIAMETER {
                break Obstacle::Triangle(v);
            }
        })
        .collect()
}
