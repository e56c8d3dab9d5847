//! Gaussian-process regression on a one-dimensional grid with replicated,
//! possibly heteroscedastic observations.
//!
//! With `M` replicates per grid point, the posterior over the latent
//! function depends on the data only through the per-point means, observed
//! with noise `r_n / M`. The marginal likelihood additionally carries the
//! within-point scatter term, which is what makes the noise level
//! identifiable from replicates.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, forward_solve};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Squared-exponential kernel hyperparameters plus the homoscedastic noise
/// level (or lower bound on the noise, for heteroscedastic fits).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_floor: f64,
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("signal_variance", self.signal_variance),
            ("length_scale", self.length_scale),
            ("noise_floor", self.noise_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn k(&self, a: f64, b: f64) -> f64 {
        let d = (a - b) / self.length_scale;
        self.signal_variance * (-0.5 * d * d).exp()
    }
}

/// Replicated observations on a grid, reduced to sufficient statistics.
#[derive(Debug, Clone)]
pub struct GridData {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    /// Within-point sum of squared deviations from `mean`.
    pub scatter: Vec<f64>,
    pub replicates: usize,
}

impl GridData {
    pub fn single(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        Self {
            x,
            mean: y,
            scatter: vec![0.0; n],
            replicates: 1,
        }
    }
}

/// A conditioned GP: Cholesky factor of `K + diag(noise / M)` and weights.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub params: KernelParams,
    pub prior_mean: f64,
    x: Vec<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    log_likelihood: f64,
    pub jitter: f64,
}

impl GpPosterior {
    /// Conditions on `data` with per-point noise variances `noise`
    /// (variance of a single replicate).
    pub fn fit(data: &GridData, params: KernelParams, noise: &[f64], prior_mean: f64) -> Result<Self> {
        let n = data.x.len();
        let m = data.replicates.max(1) as f64;
        let mut k = DMatrix::from_fn(n, n, |i, j| params.k(data.x[i], data.x[j]));
        for i in 0..n {
            k[(i, i)] += noise[i] / m;
        }
        let (chol, jitter) = cholesky_jittered(&k, 1e-12, 1e-4)?;
        let resid = DVector::from_iterator(n, data.mean.iter().map(|y| y - prior_mean));
        let alpha = chol.solve(&resid);

        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let mut ll = -0.5 * resid.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln();
        if data.replicates > 1 {
            for (&r, &scatter) in noise.iter().zip(&data.scatter) {
                ll += -0.5 * (m - 1.0) * (2.0 * PI * r).ln() - 0.5 * m.ln() - scatter / (2.0 * r);
            }
        }
        Ok(Self {
            params,
            prior_mean,
            x: data.x.clone(),
            chol,
            alpha,
            log_likelihood: ll,
            jitter,
        })
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Posterior mean at `xq`.
    pub fn mean(&self, xq: &[f64]) -> Vec<f64> {
        xq.iter()
            .map(|&t| {
                self.prior_mean
                    + self
                        .x
                        .iter()
                        .zip(self.alpha.iter())
                        .map(|(&xi, a)| self.params.k(t, xi) * a)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Posterior variance of the latent function at `xq`.
    pub fn latent_variance(&self, xq: &[f64]) -> Vec<f64> {
        xq.iter()
            .map(|&t| {
                let kq = DVector::from_iterator(self.x.len(), self.x.iter().map(|&xi| self.params.k(t, xi)));
                let v = forward_solve(&self.chol, &kq);
                (self.params.signal_variance - v.norm_squared()).max(0.0)
            })
            .collect()
    }
}

/// Box constraints for hyperparameters, in natural units.
#[derive(Debug, Clone, Copy)]
pub struct HyperBounds {
    pub signal_variance: (f64, f64),
    pub length_scale: (f64, f64),
    pub noise: (f64, f64),
}

fn clamp_log(v: f64, (lo, hi): (f64, f64)) -> (f64, f64) {
    let (llo, lhi) = (lo.ln(), hi.ln());
    let c = v.clamp(llo, lhi);
    (c, (v - c).powi(2))
}

/// Which hyperparameters the likelihood search adjusts.
#[derive(Debug, Clone)]
pub enum NoiseModel {
    /// A single noise variance, optimised with the kernel.
    Homoscedastic,
    /// Fixed per-point noise variances.
    Fixed(Vec<f64>),
}

/// Maximises the marginal likelihood over the kernel (and, for
/// homoscedastic models, the noise) from each start, returning the best fit.
pub fn optimize_hyperparameters(
    data: &GridData,
    prior_mean: f64,
    noise_model: &NoiseModel,
    bounds: &HyperBounds,
    starts: &[KernelParams],
    max_evals: usize,
) -> Result<GpPosterior> {
    let homo = matches!(noise_model, NoiseModel::Homoscedastic);
    let n = data.x.len();
    let decode = |theta: &[f64]| -> (KernelParams, f64) {
        let (ls, p1) = clamp_log(theta[0], bounds.signal_variance);
        let (ll, p2) = clamp_log(theta[1], bounds.length_scale);
        let (ln, p3) = if homo { clamp_log(theta[2], bounds.noise) } else { (bounds.noise.0.ln(), 0.0) };
        (
            KernelParams {
                signal_variance: ls.exp(),
                length_scale: ll.exp(),
                noise_floor: ln.exp(),
            },
            p1 + p2 + p3,
        )
    };
    let noise_for = |p: &KernelParams| -> Vec<f64> {
        match noise_model {
            NoiseModel::Homoscedastic => vec![p.noise_floor; n],
            NoiseModel::Fixed(v) => v.clone(),
        }
    };

    let opts = NelderMeadOptions {
        max_evals,
        f_tol: 1e-6,
        x_tol: 1e-4,
    };
    let mut best: Option<(f64, KernelParams)> = None;
    for start in starts {
        let mut theta0 = vec![start.signal_variance.ln(), start.length_scale.ln()];
        if homo {
            theta0.push(start.noise_floor.ln());
        }
        let step = vec![0.7; theta0.len()];
        let res = nelder_mead(
            |theta| {
                let (p, penalty) = decode(theta);
                match GpPosterior::fit(data, p, &noise_for(&p), prior_mean) {
                    Ok(gp) => -gp.log_likelihood() + 1e3 * penalty,
                    Err(_) => f64::INFINITY,
                }
            },
            &theta0,
            &step,
            &opts,
        );
        if res.f.is_finite() && best.as_ref().is_none_or(|(f, _)| res.f < *f) {
            best = Some((res.f, decode(&res.x).0));
        }
    }
    let (_, params) = best.ok_or(Error::SingularKernel { jitter: f64::NAN })?;
    GpPosterior::fit(data, params, &noise_for(&params), prior_mean)
}
