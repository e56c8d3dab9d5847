//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};

use crate::error::{Error, Result};

const PADE_ORDER: usize = 6;

/// Matrix exponential by scaling and squaring around a diagonal Padé(6,6) core.
///
/// The argument is scaled by `2^-s` until its 1-norm is at most 1/2, which
/// keeps the Padé truncation error below double precision for the small
/// matrices used here.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    let norm = one_norm(a);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let x = a / 2f64.powi(squarings);

    let mut coeff = 1.0;
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut num = DMatrix::<f64>::identity(n, n);
    let mut den = DMatrix::<f64>::identity(n, n);
    let q = PADE_ORDER as f64;
    for k in 1..=PADE_ORDER {
        let kf = k as f64;
        coeff *= (q - kf + 1.0) / (kf * (2.0 * q - kf + 1.0));
        power = &power * &x;
        num += &power * coeff;
        if k % 2 == 0 {
            den += &power * coeff;
        } else {
            den -= &power * coeff;
        }
    }
    let mut e = den
        .lu()
        .solve(&num)
        .expect("Padé denominator is nonsingular for scaled arguments");
    for _ in 0..squarings {
        e = &e * &e;
    }
    e
}

pub fn expm2(a: &Matrix2<f64>) -> Matrix2<f64> {
    let d = DMatrix::from_column_slice(2, 2, a.as_slice());
    let e = expm(&d);
    Matrix2::from_column_slice(e.as_slice())
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of a real 2x2 matrix as `(re, im)` pairs.
pub fn eig2(a: &Matrix2<f64>) -> [(f64, f64); 2] {
    let tr = a[(0, 0)] + a[(1, 1)];
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let half = 0.5 * tr;
    let disc = half * half - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        // Avoid cancellation for the smaller root.
        let big = if half >= 0.0 { half + r } else { half - r };
        let small = if big != 0.0 { det / big } else { 0.0 };
        [(big, 0.0), (small, 0.0)]
    } else {
        let im = (-disc).sqrt();
        [(half, im), (half, -im)]
    }
}

pub fn spectral_radius2(a: &Matrix2<f64>) -> f64 {
    eig2(a)
        .iter()
        .map(|(re, im)| re.hypot(*im))
        .fold(0.0, f64::max)
}

/// Cholesky factorization that escalates a diagonal jitter on failure.
///
/// Returns the factor together with the jitter that was finally added.
pub fn cholesky_jittered(
    m: &DMatrix<f64>,
    initial_jitter: f64,
    max_jitter: f64,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    if let Some(c) = m.clone().cholesky() {
        return Ok((c, 0.0));
    }
    let scale = m.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
    let mut jitter = initial_jitter * scale;
    while jitter <= max_jitter * scale {
        let mut shifted = m.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = shifted.cholesky() {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::SingularKernel { jitter })
}

/// `L^-1 b` for the lower Cholesky factor.
pub fn forward_solve(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, b: &DVector<f64>) -> DVector<f64> {
    chol.l_dirty()
        .solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal")
}
