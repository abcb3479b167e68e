use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::encoding::Grid;
use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Cell of grid index `i` along an axis with `n` points: the points closer to
/// `i/(n−1)` than to its neighbours, clipped to `[0, 1]`.
fn cell(i: usize, n: usize) -> (f64, f64) {
    let h = 1.0 / (n - 1) as f64;
    let c = i as f64 * h;
    ((c - 0.5 * h).max(0.0), (c + 0.5 * h).min(1.0))
}

/// Draws `n` points from the density proportional to the grid values, each
/// uniformly jittered within its pixel's cell.
pub fn sample_from_density<R: Rng + ?Sized>(grid: &Grid, n: usize, rng: &mut R) -> Result<Vec<Point2>> {
    if !grid.values.iter().any(|&v| v > 0.0) {
        return Err(Error::EmptyDensity);
    }
    let dist = WeightedIndex::new(grid.values.iter().map(|&v| v.max(0.0) as f64)).map_err(|_| Error::EmptyDensity)?;
    Ok((0..n)
        .map(|_| {
            let k = dist.sample(rng);
            let (i, j) = (k / grid.n2, k % grid.n2);
            let (x0, x1) = cell(i, grid.n1);
            let (y0, y1) = cell(j, grid.n2);
            Point2::new(rng.random_range(x0..=x1), rng.random_range(y0..=y1))
        })
        .collect())
}
