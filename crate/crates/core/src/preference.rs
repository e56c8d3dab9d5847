//! User-preference Gaussian over the `(K_max, K_min)` plane.
//!
//! The admissible stiffness pairs form the triangle
//! `k_lower ≤ K_min < K_max ≤ k_upper`, with `K_max` on the first axis.
//! Similarity rotates the field's major axis from the `K_max` axis
//! (similarity 0) onto the diagonal `K_max = K_min` (similarity 1); scale
//! slides the center along that axis away from the corner
//! `(k_lower, k_lower)`.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::stiffness::ControllerSolution;

/// Lower bound on either standard deviation, as a fraction of the stiffness
/// range.
pub const SIGMA_FLOOR_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserPreference {
    pub similarity: f64,
    pub scale: f64,
    pub k_lower: f64,
    pub k_upper: f64,
}

impl UserPreference {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.similarity) || !(0.0..=1.0).contains(&self.scale) {
            return Err(invalid("similarity and scale must lie in [0, 1]"));
        }
        if !(self.k_lower >= 0.0 && self.k_upper > self.k_lower && self.k_upper.is_finite()) {
            return Err(invalid("stiffness bounds must satisfy 0 <= k_lower < k_upper"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceField {
    /// `(K_max, K_min)` of the zero-cost point.
    pub center: Vector2<f64>,
    pub major_axis_dir: Vector2<f64>,
    pub sigma_major: f64,
    pub sigma_minor: f64,
    pub k_lower: f64,
    pub k_upper: f64,
}

/// Distance travelled from `p` along `dir` before leaving the triangle.
fn distance_to_boundary(p: Vector2<f64>, dir: Vector2<f64>, k_lower: f64, k_upper: f64) -> f64 {
    // Half-planes written as n·x <= c: K_max <= k_upper, -K_min <= -k_lower,
    // K_min - K_max <= 0.
    let planes = [
        (Vector2::new(1.0, 0.0), k_upper),
        (Vector2::new(0.0, -1.0), -k_lower),
        (Vector2::new(-1.0, 1.0), 0.0),
    ];
    planes
        .iter()
        .filter_map(|(n, c)| {
            let rate = n.dot(&dir);
            if rate > 1e-15 {
                Some(((c - n.dot(&p)) / rate).max(0.0))
            } else {
                None
            }
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn build_field(pref: &UserPreference) -> Result<PreferenceField> {
    pref.validate()?;
    let range = pref.k_upper - pref.k_lower;
    let psi = std::f64::consts::FRAC_PI_4 * pref.similarity;
    let dir = Vector2::new(psi.cos(), psi.sin());
    let corner = Vector2::new(pref.k_lower, pref.k_lower);
    let length = range / psi.cos();
    let center = corner + dir * (pref.scale * length);
    let normal = Vector2::new(-dir.y, dir.x);
    let floor = SIGMA_FLOOR_FRACTION * range;
    let across = distance_to_boundary(center, normal, pref.k_lower, pref.k_upper)
        .max(distance_to_boundary(center, -normal, pref.k_lower, pref.k_upper));
    Ok(PreferenceField {
        center,
        major_axis_dir: dir,
        sigma_major: (0.5 * pref.scale * length).max(floor),
        sigma_minor: (0.5 * across).max(floor),
        k_lower: pref.k_lower,
        k_upper: pref.k_upper,
    })
}

impl PreferenceField {
    /// Cost in `[0, 1]` of a stiffness pair; zero at the center.
    pub fn cost(&self, k_max: f64, k_min: f64) -> f64 {
        let q = Vector2::new(k_max, k_min) - self.center;
        let along = q.dot(&self.major_axis_dir);
        let across = q.x * -self.major_axis_dir.y + q.y * self.major_axis_dir.x;
        let m = (along / self.sigma_major).powi(2) + (across / self.sigma_minor).powi(2);
        1.0 - (-0.5 * m).exp()
    }
}

pub fn f_perf(field: &PreferenceField, sol: &ControllerSolution) -> f64 {
    field.cost(sol.k_max, sol.k_min)
}
