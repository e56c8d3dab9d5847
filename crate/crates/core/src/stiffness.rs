//! Stiffness modulation from the task compliance profile.
//!
//! `K(t) = K_min + (K_max - K_min) * (ln λ(t) - ln λ_min) / (ln λ_max - ln λ_min)`

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hgp::TaskModel;

/// Impedance parameters chosen by the design search. `h` (the apparent
/// inertia) is fixed by the hardware rather than searched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerSolution {
    /// N/m
    pub k_max: f64,
    /// N/m
    pub k_min: f64,
    /// N·s/m
    pub d: f64,
    /// kg
    pub h: f64,
}

impl ControllerSolution {
    pub fn new(k_max: f64, k_min: f64, d: f64, h: f64) -> Result<Self> {
        let sol = Self { k_max, k_min, d, h };
        sol.validate()?;
        Ok(sol)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.k_max, self.k_min, self.d, self.h].iter().all(|v| v.is_finite()) {
            return Err(invalid("controller parameters must be finite"));
        }
        if !(self.k_max > self.k_min) {
            return Err(invalid(format!("k_max ({}) must exceed k_min ({})", self.k_max, self.k_min)));
        }
        if self.k_min < 0.0 || self.d < 0.0 {
            return Err(invalid("k_min and d must be non-negative"));
        }
        if !(self.h > 0.0) {
            return Err(invalid("h must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiffnessProfile {
    pub grid: Vec<f64>,
    pub lambda: Vec<f64>,
    /// N/m
    pub k: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Evaluates the log-scaled stiffness for one compliance value.
pub fn stiffness_at(lambda: f64, lambda_min: f64, lambda_max: f64, k_min: f64, k_max: f64) -> f64 {
    let s = (lambda.ln() - lambda_min.ln()) / (lambda_max.ln() - lambda_min.ln());
    (k_min + (k_max - k_min) * s).clamp(k_min, k_max)
}

pub fn build_profile(model: &TaskModel, sol: &ControllerSolution) -> Result<StiffnessProfile> {
    sol.validate()?;
    profile_from_compliance(&model.grid, &model.compliance, sol)
}

pub fn profile_from_compliance(grid: &[f64], lambda: &[f64], sol: &ControllerSolution) -> Result<StiffnessProfile> {
    if grid.len() != lambda.len() || grid.is_empty() {
        return Err(invalid("grid and compliance must be non-empty and equally long"));
    }
    if lambda.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(invalid("compliance must be positive and finite"));
    }
    let lambda_min = lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda_max = lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lambda_max.ln() > lambda_min.ln()) {
        return Err(Error::DegenerateProfile(lambda_min));
    }
    let k = lambda
        .iter()
        .map(|&l| stiffness_at(l, lambda_min, lambda_max, sol.k_min, sol.k_max))
        .collect();
    Ok(StiffnessProfile {
        grid: grid.to_vec(),
        lambda: lambda.to_vec(),
        k,
        lambda_min,
        lambda_max,
    })
}

impl StiffnessProfile {
    /// Profile with `K(t) = k` everywhere, for a constant-stiffness baseline.
    pub fn constant(grid: &[f64], k: f64) -> Self {
        Self {
            grid: grid.to_vec(),
            lambda: vec![1.0; grid.len()],
            k: vec![k; grid.len()],
            lambda_min: 1.0,
            lambda_max: 1.0,
        }
    }

    /// Zero-order-hold lookup: the stiffness of the last grid point at or
    /// before `t`.
    pub fn k_at(&self, t: f64) -> f64 {
        let idx = self.grid.partition_point(|&g| g <= t + 1e-12);
        self.k[idx.saturating_sub(1).min(self.k.len() - 1)]
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,lambda,k")?;
        for i in 0..self.grid.len() {
            writeln!(w, "{},{},{}", self.grid[i], self.lambda[i], self.k[i])?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sol(k_max: f64, k_min: f64) -> ControllerSolution {
        ControllerSolution::new(k_max, k_min, 50.0, 2.0).unwrap()
    }

    #[test]
    fn logarithmic_midpoint() {
        let p = profile_from_compliance(&[0.0, 1.0, 2.0], &[1.0, 10.0, 100.0], &sol(1000.0, 100.0)).unwrap();
        assert!((p.k[1] - 550.0).abs() < 1e-9);
        assert_eq!(p.k[0], 100.0);
        assert_eq!(p.k[2], 1000.0);
    }

    #[test]
    fn constant_compliance_is_degenerate() {
        let err = profile_from_compliance(&[0.0, 1.0], &[4.0, 4.0], &sol(1000.0, 100.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateProfile(_)));
    }

    #[test]
    fn invalid_solutions_rejected() {
        assert!(ControllerSolution::new(100.0, 100.0, 1.0, 2.0).is_err());
        assert!(ControllerSolution::new(100.0, -1.0, 1.0, 2.0).is_err());
        assert!(ControllerSolution::new(100.0, 10.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn zoh_lookup() {
        let p = StiffnessProfile {
            grid: vec![0.0, 0.1, 0.2],
            lambda: vec![1.0, 2.0, 3.0],
            k: vec![10.0, 20.0, 30.0],
            lambda_min: 1.0,
            lambda_max: 3.0,
        };
        assert_eq!(p.k_at(0.05), 10.0);
        assert_eq!(p.k_at(0.1), 20.0);
        assert_eq!(p.k_at(0.5), 30.0);
    }

    #[test]
    fn csv_header_and_rows() {
        let p = profile_from_compliance(&[0.0, 1.0], &[1.0, 2.0], &sol(10.0, 1.0)).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("t,lambda,k"));
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn profile_stays_within_bounds(
            lambdas in proptest::collection::vec(1e-3f64..1e6, 2..60),
            k_min in 0.0f64..5000.0,
            width in 1.0f64..5000.0,
        ) {
            let grid: Vec<f64> = (0..lambdas.len()).map(|i| i as f64).collect();
            let s = sol(k_min + width, k_min);
            if let Ok(p) = profile_from_compliance(&grid, &lambdas, &s) {
                for k in &p.k {
                    prop_assert!(*k >= s.k_min && *k <= s.k_max);
                }
            }
        }

        #[test]
        fn monotone_in_lambda(a in 1e-2f64..1e4, b in 1e-2f64..1e4) {
            prop_assume!((a - b).abs() > 1e-6 * a.max(b));
            let (lo, hi) = (1e-3, 1e5);
            let ka = stiffness_at(a, lo, hi, 100.0, 1000.0);
            let kb = stiffness_at(b, lo, hi, 100.0, 1000.0);
            prop_assert_eq!(a > b, ka > kb);
        }

        #[test]
        fn affine_in_stiffness_bounds(
            lambdas in proptest::collection::vec(1e-2f64..1e4, 3..30),
            scale in 0.1f64..10.0,
            shift in 0.0f64..500.0,
        ) {
            let grid: Vec<f64> = (0..lambdas.len()).map(|i| i as f64).collect();
            let base = sol(1000.0, 100.0);
            let moved = sol(scale * 1000.0 + shift, scale * 100.0 + shift);
            if let (Ok(p), Ok(q)) = (
                profile_from_compliance(&grid, &lambdas, &base),
                profile_from_compliance(&grid, &lambdas, &moved),
            ) {
                for (a, b) in p.k.iter().zip(&q.k) {
                    prop_assert!((scale * a + shift - b).abs() < 1e-9 * b.abs().max(1.0));
                }
            }
        }

        #[test]
        fn log_base_is_irrelevant(l in 1.0f64..100.0) {
            let natural = stiffness_at(l, 1.0, 100.0, 0.0, 1.0);
            let base10 = (l.log10() - 1f64.log10()) / (100f64.log10() - 1f64.log10());
            prop_assert!((natural - base10).abs() < 1e-12);
        }
    }
}
