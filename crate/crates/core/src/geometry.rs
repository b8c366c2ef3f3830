//! Small geometric helpers shared across modules.

use std::f64::consts::PI;

pub type Vec3 = nalgebra::Vector3<f64>;

/// Near-uniform unit directions on the sphere (Fibonacci lattice).
///
/// The pattern is fixed for a given `n`, so gain computations are repeatable.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let theta = golden * i as f64;
            Vec3::new(r * theta.cos(), r * theta.sin(), z)
        })
        .collect()
}

/// Angle in radians between two vectors; zero when either is degenerate.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fibonacci_directions_are_unit_and_balanced() {
        let dirs = fibonacci_sphere(128);
        assert_eq!(dirs.len(), 128);
        let mut sum = Vec3::zeros();
        for d in &dirs {
            assert!((d.norm() - 1.0).abs() < 1e-12);
            sum += d;
        }
        assert!(sum.norm() / 128.0 < 0.05);
    }

    #[test]
    fn angle_of_degenerate_vector_is_zero() {
        assert_eq!(angle_between(&Vec3::zeros(), &Vec3::x()), 0.0);
        assert!((angle_between(&Vec3::x(), &Vec3::y()) - PI / 2.0).abs() < 1e-12);
    }
}
