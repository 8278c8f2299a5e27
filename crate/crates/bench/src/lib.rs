//! Benchmark fixtures.

use cgm_core::{HalfspaceRow, VelocityPolytope};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Feasible least-distance instance with `rows` halfspaces in dimension `n`.
pub fn qp_instance(n: usize, rows: usize, seed: u64) -> (DVector<f64>, VelocityPolytope) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let mut polytope = VelocityPolytope::new(n);
    for _ in 0..rows {
        let normal = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let rhs = normal.dot(&anchor) + rng.random_range(0.0..0.1);
        polytope
            .push(HalfspaceRow::new(normal, rhs).expect("finite row"))
            .expect("matching dimension");
    }
    let target = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    (target, polytope)
}

pub fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}
