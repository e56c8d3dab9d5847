//! LPV state-space model of the impedance controller and its polytopic
//! (bounding-box) discretization.
//!
//! With `x = [e, de]` and scheduling variable `φ = -K/H`, the closed loop is
//! `dx = (A0 + B W(φ)) x + B_F F` where `W(φ) = [φ, -D/H]`.

use nalgebra::{DMatrix, Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::expm;
use crate::stiffness::ControllerSolution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousVic {
    pub a0: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub b_f: Vector2<f64>,
    pub damping_gain: f64,
    pub phi_bounds: [f64; 2],
}

impl ContinuousVic {
    pub fn new(sol: &ControllerSolution) -> Result<Self> {
        sol.validate()?;
        Ok(Self {
            a0: Matrix2::new(0.0, 1.0, 0.0, 0.0),
            b: Vector2::new(0.0, 1.0),
            b_f: Vector2::new(0.0, 1.0 / sol.h),
            damping_gain: -sol.d / sol.h,
            phi_bounds: [-sol.k_max / sol.h, -sol.k_min / sol.h],
        })
    }

    pub fn w_of_phi(&self, phi: f64) -> RowVector2<f64> {
        RowVector2::new(phi, self.damping_gain)
    }

    pub fn state_matrix(&self, phi: f64) -> Matrix2<f64> {
        self.a0 + self.b * self.w_of_phi(phi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexSystem {
    pub vertex_phi: f64,
    pub a_cont: Matrix2<f64>,
    pub w_cont: RowVector2<f64>,
    pub a_disc: Matrix2<f64>,
    pub w_disc: RowVector2<f64>,
    pub b_f_disc: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopicVic {
    pub continuous: ContinuousVic,
    pub vertices: Vec<VertexSystem>,
    pub ts: f64,
    pub selection_s: RowVector2<f64>,
}

/// Zero-order-hold discretization of `(a, b)` over `ts`, using the
/// exponential of the augmented matrix `[[a, b], [0, 0]]`.
pub fn discretize(a: &Matrix2<f64>, b: &Vector2<f64>, ts: f64) -> (Matrix2<f64>, Vector2<f64>) {
    let mut m = DMatrix::<f64>::zeros(3, 3);
    for i in 0..2 {
        for j in 0..2 {
            m[(i, j)] = a[(i, j)] * ts;
        }
        m[(i, 2)] = b[i] * ts;
    }
    let e = expm(&m);
    (
        Matrix2::new(e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]),
        Vector2::new(e[(0, 2)], e[(1, 2)]),
    )
}

pub fn build_polytope(sol: &ControllerSolution, ts: f64) -> Result<PolytopicVic> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(invalid(format!("sampling period must be positive, got {ts}")));
    }
    let continuous = ContinuousVic::new(sol)?;
    let vertices = continuous
        .phi_bounds
        .iter()
        .map(|&phi| {
            let a_cont = continuous.state_matrix(phi);
            let w_cont = continuous.w_of_phi(phi);
            let (a_disc, b_f_disc) = discretize(&a_cont, &continuous.b_f, ts);
            VertexSystem {
                vertex_phi: phi,
                a_cont,
                w_cont,
                a_disc,
                w_disc: w_cont,
                b_f_disc,
            }
        })
        .collect();
    Ok(PolytopicVic {
        continuous,
        vertices,
        ts,
        selection_s: RowVector2::new(1.0, 0.0),
    })
}

/// Continuous state matrix at stiffness `k_now`, which must lie in
/// `[k_min, k_max]`.
pub fn eval_state_matrix(sol: &ControllerSolution, k_now: f64) -> Result<Matrix2<f64>> {
    if !(k_now >= sol.k_min && k_now <= sol.k_max) {
        return Err(Error::OutOfRange {
            k: k_now,
            lo: sol.k_min,
            hi: sol.k_max,
        });
    }
    Ok(state_matrix_unchecked(k_now, sol.d, sol.h))
}

pub fn state_matrix_unchecked(k: f64, d: f64, h: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -k / h, -d / h)
}

/// Weight `θ` on the `k_max` vertex such that the state matrix at `k_now`
/// equals `θ A(k_max) + (1 - θ) A(k_min)`.
pub fn hull_weight(sol: &ControllerSolution, k_now: f64) -> f64 {
    (k_now - sol.k_min) / (sol.k_max - sol.k_min)
}
