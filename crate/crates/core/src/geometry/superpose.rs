//! Least-squares rigid superposition (Kabsch).

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point, Structure};

/// A rigid transform mapping the mobile structure onto the target:
/// `target ≈ rotation * mobile + translation`.
#[derive(Clone, Debug, PartialEq)]
pub struct Superposition {
    pub rmsd: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// All points of one structure coincide; the rotation is the identity.
    pub degenerate: bool,
}

fn weighted_centroid(points: &[Point], weights: &[f64], total: f64) -> Point {
    points
        .iter()
        .zip(weights)
        .fold(Point::zeros(), |acc, (p, &w)| acc + p * w)
        / total
}

/// Weighted Kabsch: minimizes `Σ w_i |target_i - (R mobile_i + t)|²` over proper rotations.
///
/// Returns `(rotation, translation, degenerate)`.
pub fn weighted_superposition(
    target: &[Point],
    mobile: &[Point],
    weights: &[f64],
) -> (Matrix3<f64>, Vector3<f64>, bool) {
    debug_assert_eq!(target.len(), mobile.len());
    debug_assert_eq!(target.len(), weights.len());
    let total: f64 = weights.iter().sum();
    let ct = weighted_centroid(target, weights, total);
    let cm = weighted_centroid(mobile, weights, total);

    let mut cov = Matrix3::zeros();
    let (mut spread_t, mut spread_m) = (0.0, 0.0);
    for ((t, m), &w) in target.iter().zip(mobile).zip(weights) {
        let dt = t - ct;
        let dm = m - cm;
        cov += (dm * dt.transpose()) * w;
        spread_t += w * dt.norm_squared();
        spread_m += w * dm.norm_squared();
    }
    if spread_t <= 1e-24 || spread_m <= 1e-24 {
        return (Matrix3::identity(), ct - cm, true);
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = ct - rotation * cm;
    (rotation, translation, false)
}

/// Least-RMSD rigid superposition of `b` onto `a`.
pub fn kabsch_rmsd(a: &Structure, b: &Structure) -> Result<Superposition> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cannot superpose structures of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("superposition needs at least 2 points".into()));
    }
    let weights = vec![1.0; a.len()];
    let (rotation, translation, degenerate) = weighted_superposition(&a.coords, &b.coords, &weights);
    let sq: f64 = a
        .coords
        .iter()
        .zip(&b.coords)
        .map(|(p, q)| (p - (rotation * q + translation)).norm_squared())
        .sum();
    Ok(Superposition {
        rmsd: (sq / a.len() as f64).sqrt(),
        rotation,
        translation,
        degenerate,
    })
}
