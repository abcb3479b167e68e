//! Image encodings of a planning problem and its solution.
//!
//! Grid point `(i, j)` sits at `(i/(n1−1), j/(n2−1))` in the unit square.
//! Storage is row-major with `i` as the row, so index `i * n2 + j`.

use crate::belief::{mahalanobis_sq, BeliefPath, TargetRegion};
use crate::error::{Error, Result};
use crate::geometry::{Obstacle, Point2};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub n1: usize,
    pub n2: usize,
    pub values: Vec<f32>,
}

impl Grid {
    pub fn zeros(n1: usize, n2: usize) -> Self {
        Grid { n1, n2, values: vec![0.0; n1 * n2] }
    }

    pub fn from_values(n1: usize, n2: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n1 * n2 {
            return Err(Error::ShapeMismatch(format!("{} values for a {n1}x{n2} grid", values.len())));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter("grid values must be finite and nonnegative".into()));
        }
        Ok(Grid { n1, n2, values })
    }

    /// Fills a grid by evaluating `f` at every grid point.
    pub fn from_fn(n1: usize, n2: usize, mut f: impl FnMut(Point2) -> f32) -> Self {
        let mut values = Vec::with_capacity(n1 * n2);
        for i in 0..n1 {
            for j in 0..n2 {
                values.push(f(grid_point(i, j, n1, n2)));
            }
        }
        Grid { n1, n2, values }
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.n2 + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.values[i * self.n2 + j] = v;
    }

    pub fn point(&self, i: usize, j: usize) -> Point2 {
        grid_point(i, j, self.n1, self.n2)
    }

    /// Grid index nearest to `p`, clamped to the grid.
    pub fn nearest_index(&self, p: Point2) -> (usize, usize) {
        let i = (p.x * (self.n1 - 1) as f64).round().clamp(0.0, (self.n1 - 1) as f64) as usize;
        let j = (p.y * (self.n2 - 1) as f64).round().clamp(0.0, (self.n2 - 1) as f64) as usize;
        (i, j)
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }
}

pub fn grid_point(i: usize, j: usize, n1: usize, n2: usize) -> Point2 {
    Point2::new(i as f64 / (n1 - 1) as f64, j as f64 / (n2 - 1) as f64)
}

/// Input channels `O`, `T`, `I` and the optional label `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    pub obstacles: Grid,
    pub target: Grid,
    pub start: Grid,
    pub label: Option<Grid>,
}

impl GridStack {
    pub fn dims(&self) -> (usize, usize) {
        (self.obstacles.n1, self.obstacles.n2)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        let same = [&self.target, &self.start].iter().all(|g| (g.n1, g.n2) == d)
            && self.label.as_ref().is_none_or(|g| (g.n1, g.n2) == d);
        if !same {
            return Err(Error::ShapeMismatch("grid stack channels differ in size".into()));
        }
        Ok(())
    }
}

fn check_dims(n1: usize, n2: usize) {
    assert!(n1 >= 2 && n2 >= 2, "grid needs at least 2x2 points, got {n1}x{n2}");
}

/// `O`: 1 where the grid point lies in any obstacle.
pub fn encode_obstacles(obstacles: &[Obstacle], n1: usize, n2: usize) -> Grid {
    check_dims(n1, n2);
    Grid::from_fn(n1, n2, |p| obstacles.iter().any(|o| o.contains(p)) as u8 as f32)
}

/// `T`: Euclidean distance to the target disk.
pub fn encode_target(target: &TargetRegion, n1: usize, n2: usize) -> Grid {
    check_dims(n1, n2);
    Grid::from_fn(n1, n2, |p| (p.dist(target.center) - target.radius).max(0.0) as f32)
}

/// `I`: Euclidean distance to the start position.
pub fn encode_start(x0: Point2, n1: usize, n2: usize) -> Grid {
    check_dims(n1, n2);
    Grid::from_fn(n1, n2, |p| p.dist(x0) as f32)
}

/// `L`: 1 where some belief along the densely interpolated path is within
/// squared Mahalanobis distance `chi2` (strictly).
pub fn encode_label(path: &BeliefPath, chi2: f64, n1: usize, n2: usize) -> Result<Grid> {
    check_dims(n1, n2);
    let mut grid = Grid::zeros(n1, n2);
    let (s1, s2) = ((n1 - 1) as f64, (n2 - 1) as f64);
    for b in path.dense(1) {
        let reach = (chi2 * b.cov.eigenvalues().0).sqrt();
        let i_lo = ((b.x.x - reach) * s1).floor().max(0.0) as usize;
        let i_hi = (((b.x.x + reach) * s1).ceil().max(0.0) as usize).min(n1 - 1);
        let j_lo = ((b.x.y - reach) * s2).floor().max(0.0) as usize;
        let j_hi = (((b.x.y + reach) * s2).ceil().max(0.0) as usize).min(n2 - 1);
        for i in i_lo..=i_hi {
            for j in j_lo..=j_hi {
                if grid.get(i, j) == 0.0 && mahalanobis_sq(grid_point(i, j, n1, n2), &b)? < chi2 {
                    grid.set(i, j, 1.0);
                }
            }
        }
    }
    Ok(grid)
}

/// Gray levels of [`render_overlay`] on a unit full scale.
pub const OVERLAY_OBSTACLE: f32 = 1.0;
pub const OVERLAY_TUBE: f32 = 0.4;
pub const OVERLAY_CENTERLINE: f32 = 0.75;
pub const OVERLAY_TARGET: f32 = 0.2;

/// Obstacles, target disk and, when given, the confidence tube of `path`
/// with its centerline; later layers overwrite earlier ones except obstacles.
pub fn render_overlay(
    obstacles: &[Obstacle],
    target: &TargetRegion,
    path: Option<(&BeliefPath, f64)>,
    n1: usize,
    n2: usize,
) -> Result<Grid> {
    check_dims(n1, n2);
    let mut g = Grid::from_fn(n1, n2, |p| if p.dist(target.center) <= target.radius { OVERLAY_TARGET } else { 0.0 });
    if let Some((path, chi2)) = path {
        let tube = encode_label(path, chi2, n1, n2)?;
        for (v, t) in g.values.iter_mut().zip(&tube.values) {
            if *t > 0.0 {
                *v = OVERLAY_TUBE;
            }
        }
        for b in path.dense(1) {
            let (i, j) = g.nearest_index(b.x);
            g.set(i, j, OVERLAY_CENTERLINE);
        }
    }
    let occ = encode_obstacles(obstacles, n1, n2);
    for (v, o) in g.values.iter_mut().zip(&occ.values) {
        if *o > 0.0 {
            *v = OVERLAY_OBSTACLE;
        }
    }
    Ok(g)
}
