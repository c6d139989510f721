//! Deterministic sample sets on the fundamental domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::manifold::{ModelManifold, Point};

/// Uniform grid with `per_axis` cell-centred nodes along every coordinate.
pub fn grid(m: &ModelManifold, per_axis: usize) -> Vec<Point> {
    let dim = m.dim();
    let per_axis = per_axis.max(1);
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let raw: Vec<f64> = (0..dim)
                .map(|axis| {
                    let i = idx % per_axis;
                    idx /= per_axis;
                    (i as f64 + 0.5) / per_axis as f64 * m.coordinate_period(axis)
                })
                .collect();
            m.canonicalize(&raw).expect("grid nodes are finite")
        })
        .collect()
}

/// `count` uniformly random points from a seeded ChaCha stream.
pub fn random_points(m: &ModelManifold, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let raw: Vec<f64> = (0..m.dim())
                .map(|axis| rng.gen::<f64>() * m.coordinate_period(axis))
                .collect();
            m.canonicalize(&raw).expect("random coordinates are finite")
        })
        .collect()
}

/// Grid for small models, seeded random points once the grid would exceed
/// `max_points`.
pub fn grid_or_random(m: &ModelManifold, per_axis: usize, max_points: usize, seed: u64) -> Vec<Point> {
    if per_axis.pow(m.dim() as u32) <= max_points {
        grid(m, per_axis)
    } else {
        random_points(m, max_points, seed)
    }
}
