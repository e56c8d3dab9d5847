//! LMI constraint blocks for stability, effort/error bounds, initial-state
//! containment and D-stability of the polytopic closed loop.
//!
//! Each block is affine in the decision variables (the entries of the
//! symmetric 2x2 matrix `P` and, optionally, `t = u_max^2`) and must be
//! positive semidefinite.

use nalgebra::{DMatrix, Matrix2, Matrix4, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lpv::PolytopicVic;

/// Margin used wherever strict definiteness is required.
pub const STRICTNESS: f64 = 1e-9;

/// Abscissa of the spiral point that fixes the ellipse and cone sizes.
pub const SPIRAL_ABSCISSA: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Var {
    P11,
    P12,
    P22,
    T,
}

impl Var {
    pub const P_VARS: [Var; 3] = [Var::P11, Var::P12, Var::P22];

    /// Basis matrix of this entry of `P`.
    pub fn p_basis(self) -> Matrix2<f64> {
        match self {
            Var::P11 => Matrix2::new(1.0, 0.0, 0.0, 0.0),
            Var::P12 => Matrix2::new(0.0, 1.0, 1.0, 0.0),
            Var::P22 => Matrix2::new(0.0, 0.0, 0.0, 1.0),
            Var::T => panic!("t has no P basis"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub name: String,
    pub constant: DMatrix<f64>,
    pub coefficients: Vec<(Var, DMatrix<f64>)>,
}

impl LmiBlock {
    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    pub fn coefficient(&self, var: Var) -> Option<&DMatrix<f64>> {
        self.coefficients.iter().find(|(v, _)| *v == var).map(|(_, m)| m)
    }

    pub fn uses(&self, var: Var) -> bool {
        self.coefficient(var).is_some()
    }

    /// `constant + Σ var·coefficient` at the given `P` and `t`.
    pub fn evaluate(&self, p: &Matrix2<f64>, t: Option<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (var, coeff) in &self.coefficients {
            let value = match var {
                Var::P11 => p[(0, 0)],
                Var::P12 => p[(0, 1)],
                Var::P22 => p[(1, 1)],
                Var::T => t.expect("block uses t but no value was given"),
            };
            out += coeff * value;
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        let sym = |m: &DMatrix<f64>| crate::linalg::asymmetry(m) <= 1e-12 * m.amax().max(1.0);
        sym(&self.constant) && self.coefficients.iter().all(|(_, m)| sym(m))
    }

    fn from_p_map(name: String, constant: DMatrix<f64>, map: impl Fn(&Matrix2<f64>) -> DMatrix<f64>) -> Self {
        let coefficients = Var::P_VARS.iter().map(|&v| (v, map(&v.p_basis()))).collect();
        Self {
            name,
            constant,
            coefficients,
        }
    }
}

fn embed(out: &mut DMatrix<f64>, r: usize, c: usize, m: &Matrix2<f64>) {
    for i in 0..2 {
        for j in 0..2 {
            out[(r + i, c + j)] = m[(i, j)];
        }
    }
}

fn identity_block(n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::identity(n, n) * scale
}

/// `P ⪰ εI`.
pub fn positivity_block() -> LmiBlock {
    LmiBlock::from_p_map("p_positive".into(), identity_block(2, -STRICTNESS), |e| {
        DMatrix::from_column_slice(2, 2, e.as_slice())
    })
}

/// `P - Aᵀ P A ⪰ 0` for one discrete state matrix.
pub fn stability_block(name: impl Into<String>, a: &Matrix2<f64>) -> LmiBlock {
    LmiBlock::from_p_map(name.into(), DMatrix::zeros(2, 2), |e| {
        let m = e - a.transpose() * e * a;
        DMatrix::from_column_slice(2, 2, m.as_slice())
    })
}

pub fn stability_blocks(p: &PolytopicVic) -> Vec<LmiBlock> {
    let mut blocks: Vec<LmiBlock> = p
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| stability_block(format!("stability_{i}"), &v.a_disc))
        .collect();
    blocks.push(positivity_block());
    blocks
}

/// `[[t, W], [Wᵀ, P]] ⪰ 0`: `|W x|² ≤ t` on the ellipsoid `xᵀ P x ≤ 1`.
pub fn effort_block(name: impl Into<String>, w: &RowVector2<f64>) -> LmiBlock {
    let mut constant = DMatrix::zeros(3, 3);
    for j in 0..2 {
        constant[(0, j + 1)] = w[j];
        constant[(j + 1, 0)] = w[j];
    }
    let mut block = LmiBlock::from_p_map(name.into(), constant, |e| {
        let mut m = DMatrix::zeros(3, 3);
        embed(&mut m, 1, 1, e);
        m
    });
    let mut tc = DMatrix::zeros(3, 3);
    tc[(0, 0)] = 1.0;
    block.coefficients.push((Var::T, tc));
    block
}

/// `[[P, AᵀSᵀ], [S A, Δp²]] ⪰ 0`: `|S A x| ≤ Δp` on the ellipsoid.
pub fn error_block(name: impl Into<String>, a: &Matrix2<f64>, s: &RowVector2<f64>, dp_max: f64) -> LmiBlock {
    let sa = s * a;
    let mut constant = DMatrix::zeros(3, 3);
    constant[(2, 2)] = dp_max * dp_max;
    for j in 0..2 {
        constant[(j, 2)] = sa[j];
        constant[(2, j)] = sa[j];
    }
    LmiBlock::from_p_map(name.into(), constant, |e| {
        let mut m = DMatrix::zeros(3, 3);
        embed(&mut m, 0, 0, e);
        m
    })
}

/// `[[1, x0ᵀ P], [P x0, P]] ⪰ 0`: `x0ᵀ P x0 ≤ 1`.
pub fn initial_state_block(x0: &Vector2<f64>) -> LmiBlock {
    let mut constant = DMatrix::zeros(3, 3);
    constant[(0, 0)] = 1.0;
    LmiBlock::from_p_map("initial_state".into(), constant, |e| {
        let px = e * x0;
        let mut m = DMatrix::zeros(3, 3);
        embed(&mut m, 1, 1, e);
        for j in 0..2 {
            m[(0, j + 1)] = px[j];
            m[(j + 1, 0)] = px[j];
        }
        m
    })
}

pub fn effort_error_blocks(p: &PolytopicVic, dp_max: f64, x0: &Vector2<f64>) -> Result<Vec<LmiBlock>> {
    if !(dp_max > 0.0 && dp_max.is_finite()) {
        return Err(invalid(format!("dp_max must be positive, got {dp_max}")));
    }
    let mut blocks = Vec::new();
    for (i, v) in p.vertices.iter().enumerate() {
        blocks.push(effort_block(format!("effort_{i}"), &v.w_disc));
    }
    for (i, v) in p.vertices.iter().enumerate() {
        blocks.push(error_block(format!("error_{i}"), &v.a_disc, &p.selection_s, dp_max));
    }
    blocks.push(initial_state_block(x0));
    Ok(blocks)
}

/// Ellipse-and-cone approximation of the discrete-time region whose poles
/// meet a maximum percentage overshoot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DStabRegion {
    pub os_bar: f64,
    pub xi_bar: f64,
    pub phi_angle: f64,
    pub a0: f64,
    pub a_se: f64,
    pub a_e: f64,
    pub b_e: f64,
    pub gamma: f64,
    pub intersection_a: f64,
    pub intersection_b: f64,
    pub alpha: Matrix4<f64>,
    pub beta: Matrix4<f64>,
}

/// Damping ratio giving `os` percent overshoot for a second-order system.
pub fn damping_for_overshoot(os: f64) -> f64 {
    let l = (os / 100.0).ln();
    -l / (std::f64::consts::PI.powi(2) + l * l).sqrt()
}

/// Smallest positive `ω` where the spiral `exp(-ω/tan φ)·e^{jω}` has real
/// part `a`.
fn spiral_crossing(phi: f64, a: f64) -> f64 {
    let g = |w: f64| (-w / phi.tan()).exp() * w.cos() - a;
    let (mut lo, mut hi) = (0.0, std::f64::consts::FRAC_PI_2);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn build_dstab_region(os_bar: f64) -> Result<DStabRegion> {
    if !(os_bar > 0.0 && os_bar < 100.0) {
        return Err(invalid(format!("overshoot must lie in (0, 100) percent, got {os_bar}")));
    }
    let xi_bar = damping_for_overshoot(os_bar);
    let phi_angle = xi_bar.acos();
    let a0 = -(-std::f64::consts::PI / phi_angle.tan()).exp();
    let a_se = 0.5 * (1.0 + a0);
    let a_e = 0.5 * (1.0 - a0);
    let a = SPIRAL_ABSCISSA;
    let omega = spiral_crossing(phi_angle, a);
    let b = (-omega / phi_angle.tan()).exp() * omega.sin();
    let b_e = b * a_e / (a_e * a_e - (a - a_se).powi(2)).sqrt();
    let gamma = (b / (1.0 - a)).atan();

    let mut alpha = Matrix4::zeros();
    let mut beta = Matrix4::zeros();
    let r = a_se / a_e;
    alpha[(0, 0)] = -1.0;
    alpha[(1, 1)] = -1.0;
    alpha[(0, 1)] = -r;
    alpha[(1, 0)] = -r;
    beta[(0, 1)] = 0.5 * (1.0 / a_e - 1.0 / b_e);
    beta[(1, 0)] = 0.5 * (1.0 / a_e + 1.0 / b_e);
    let (sg, cg) = gamma.sin_cos();
    alpha[(2, 2)] = -2.0 * sg;
    alpha[(3, 3)] = -2.0 * sg;
    beta[(2, 2)] = sg;
    beta[(3, 3)] = sg;
    beta[(2, 3)] = cg;
    beta[(3, 2)] = -cg;

    Ok(DStabRegion {
        os_bar,
        xi_bar,
        phi_angle,
        a0,
        a_se,
        a_e,
        b_e,
        gamma,
        intersection_a: a,
        intersection_b: b,
        alpha,
        beta,
    })
}

/// Strict membership of `z = re + j·im` in the ellipse and the cone.
pub fn region_membership(region: &DStabRegion, re: f64, im: f64) -> bool {
    let ellipse = ((re - region.a_se) / region.a_e).powi(2) + (im / region.b_e).powi(2) < 1.0;
    let cone = (1.0 - re) * region.gamma.tan() > im.abs();
    ellipse && cone
}

/// `-(α⊗P + β⊗(P A) + βᵀ⊗(Aᵀ P)) - εI ⪰ 0`.
pub fn dstab_block(name: impl Into<String>, a: &Matrix2<f64>, region: &DStabRegion) -> LmiBlock {
    let (alpha, beta) = (&region.alpha, &region.beta);
    LmiBlock::from_p_map(name.into(), identity_block(8, -STRICTNESS), |e| {
        let pa = e * a;
        let atp = a.transpose() * e;
        let mut m = DMatrix::zeros(8, 8);
        for i in 0..4 {
            for j in 0..4 {
                let blk = -(e * alpha[(i, j)] + pa * beta[(i, j)] + atp * beta[(j, i)]);
                embed(&mut m, 2 * i, 2 * j, &blk);
            }
        }
        m
    })
}

pub fn dstab_blocks(p: &PolytopicVic, region: &DStabRegion) -> Vec<LmiBlock> {
    p.vertices
        .iter()
        .enumerate()
        .map(|(i, v)| dstab_block(format!("dstab_{i}"), &v.a_disc, region))
        .collect()
}

#[derive(Serialize)]
struct BlockDump<'a> {
    name: &'a str,
    size: usize,
    constant: Vec<Vec<f64>>,
    coefficients: Vec<(Var, Vec<Vec<f64>>)>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Dense JSON dump of assembled blocks for debugging.
pub fn blocks_to_json(blocks: &[LmiBlock]) -> serde_json::Value {
    let dumps: Vec<BlockDump> = blocks
        .iter()
        .map(|b| BlockDump {
            name: &b.name,
            size: b.size(),
            constant: rows(&b.constant),
            coefficients: b.coefficients.iter().map(|(v, m)| (*v, rows(m))).collect(),
        })
        .collect();
    serde_json::to_value(dumps).expect("block dump is serializable")
}
