//! Heteroscedastic GP task model fitted by expectation-maximisation.
//!
//! The model couples two GPs on the demonstration grid: one for the mean
//! trajectory and one for the log of the input-dependent noise variance.
//! Each EM round re-estimates per-point noise from the residuals of all
//! demonstrations against the current mean, smooths it with the noise GP,
//! and refits the mean GP with that noise.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::demo_corpus::DemoCorpus;
use crate::error::{invalid, Error, Result};
use crate::gp::{optimize_hyperparameters, GridData, HyperBounds, KernelParams, NoiseModel};

/// Half-width multiplier of the 95% confidence interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseEstimator {
    /// Squared residuals of every demonstration against the current mean.
    Residual,
    /// Half squared differences against draws from the current predictive
    /// distribution.
    PosteriorSampling { samples: usize },
}

#[derive(Debug, Clone)]
pub struct HgpOptions {
    pub max_em_iters: usize,
    pub seed: u64,
    /// Lower bound on any noise variance, m^2.
    pub noise_floor: f64,
    /// Relative change of the grid-averaged noise below which EM stops.
    pub tolerance: f64,
    pub estimator: NoiseEstimator,
    /// Random starts added to the two fixed starts of the first fit.
    pub extra_starts: usize,
    pub max_evals: usize,
}

impl Default for HgpOptions {
    fn default() -> Self {
        Self {
            max_em_iters: 50,
            seed: 0,
            noise_floor: 1e-10,
            tolerance: 0.05,
            estimator: NoiseEstimator::Residual,
            extra_starts: 1,
            max_evals: 150,
        }
    }
}

/// Learned task description for one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub axis_label: String,
    pub grid: Vec<f64>,
    /// Reference position, m.
    pub mean: Vec<f64>,
    /// Reference velocity, m/s.
    pub d_mean: Vec<f64>,
    /// Reference acceleration, m/s^2.
    pub dd_mean: Vec<f64>,
    /// Demonstration variance sigma^2(t), m^2.
    pub variance: Vec<f64>,
    /// lambda(t) = 1 / sigma^2(t).
    pub compliance: Vec<f64>,
    pub em_iterations: usize,
    pub converged: bool,
    pub mean_kernel: Option<KernelParams>,
    pub noise_kernel: Option<KernelParams>,
    pub noise_floor: f64,
    pub n_demos: usize,
    pub seed: u64,
}

impl TaskModel {
    /// Assembles a model from a mean trajectory and variance profile,
    /// differentiating the mean numerically.
    pub fn from_profiles(axis_label: impl Into<String>, grid: Vec<f64>, mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || mean.len() != grid.len() || variance.len() != grid.len() {
            return Err(invalid("grid, mean and variance must share a length of at least 2"));
        }
        let h = grid[1] - grid[0];
        let d_mean = gradient(&mean, h);
        let dd_mean = gradient(&d_mean, h);
        let compliance = variance.iter().map(|v| 1.0 / v).collect();
        let floor = variance.iter().copied().fold(f64::INFINITY, f64::min);
        let model = Self {
            axis_label: axis_label.into(),
            grid,
            mean,
            d_mean,
            dd_mean,
            variance,
            compliance,
            em_iterations: 0,
            converged: true,
            mean_kernel: None,
            noise_kernel: None,
            noise_floor: floor,
            n_demos: 0,
            seed: 0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        if n < 2 {
            return Err(invalid("task model needs at least two grid points"));
        }
        for (name, v) in [
            ("mean", &self.mean),
            ("d_mean", &self.d_mean),
            ("dd_mean", &self.dd_mean),
            ("variance", &self.variance),
            ("compliance", &self.compliance),
        ] {
            if v.len() != n {
                return Err(invalid(format!("{name} has {} entries, grid has {n}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("{name} contains non-finite values")));
            }
        }
        if self.variance.iter().any(|&v| v <= 0.0) {
            return Err(invalid("variance must be strictly positive"));
        }
        if let Some(i) = self
            .compliance
            .iter()
            .zip(&self.variance)
            .position(|(c, v)| (c * v - 1.0).abs() > 1e-12)
        {
            return Err(invalid(format!("compliance is not 1/variance at index {i}")));
        }
        Ok(())
    }

    pub fn sample_period(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    pub fn horizon(&self) -> f64 {
        self.grid[self.grid.len() - 1] - self.grid[0]
    }

    /// Initial error state: the robot starts on the reference at rest, so
    /// `e(0) = 0` and `de(0) = dp_r(0)`.
    pub fn initial_state(&self) -> [f64; 2] {
        [0.0, self.d_mean[0]]
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }
}

/// Smallest half-width of the 95% confidence band over the task.
pub fn extract_dp_max(model: &TaskModel) -> Result<f64> {
    model.validate()?;
    Ok(model
        .variance
        .iter()
        .map(|v| Z_95 * v.sqrt())
        .fold(f64::INFINITY, f64::min))
}

/// Central differences inside, one-sided differences at both ends.
pub fn gradient(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                (y[1] - y[0]) / h
            } else if i == n - 1 {
                (y[n - 1] - y[n - 2]) / h
            } else {
                (y[i + 1] - y[i - 1]) / (2.0 * h)
            }
        })
        .collect()
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance_of(v: &[f64]) -> f64 {
    let m = mean_of(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Fits the H-GP with default options apart from the iteration cap and seed.
pub fn fit_hgp(corpus: &DemoCorpus, max_em_iters: usize, seed: u64) -> Result<TaskModel> {
    fit_hgp_with(
        corpus,
        &HgpOptions {
            max_em_iters,
            seed,
            ..Default::default()
        },
    )
}

pub fn fit_hgp_with(corpus: &DemoCorpus, opts: &HgpOptions) -> Result<TaskModel> {
    if opts.max_em_iters < 1 {
        return Err(invalid("max_em_iters must be at least 1"));
    }
    if !(opts.noise_floor > 0.0) {
        return Err(invalid("noise_floor must be positive"));
    }
    let m = corpus.n_demos();
    let n = corpus.n_points();
    if m < 2 || n < 2 {
        return Err(invalid("corpus needs at least 2 demonstrations and 2 grid points"));
    }
    let y: &DMatrix<f64> = &corpus.matrix;
    let x = corpus.grid.clone();
    let span = x[n - 1] - x[0];
    let h = corpus.sample_period;

    let ybar: Vec<f64> = y.column_iter().map(|c| c.mean()).collect();
    let scatter: Vec<f64> = y
        .column_iter()
        .zip(&ybar)
        .map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum())
        .collect();
    let data = GridData {
        x: x.clone(),
        mean: ybar.clone(),
        scatter,
        replicates: m,
    };
    let prior_mean = mean_of(&ybar);
    let sig_scale = variance_of(&ybar).max(opts.noise_floor);
    let sample_var = corpus.sample_variance();
    let noise_scale = mean_of(&sample_var).max(opts.noise_floor);

    let mean_bounds = HyperBounds {
        signal_variance: (sig_scale * 1e-4, sig_scale * 1e3),
        length_scale: (h, 5.0 * span),
        noise: (opts.noise_floor, (noise_scale * 1e3).max(opts.noise_floor * 10.0)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts: Vec<KernelParams> = [span / 5.0, span / 20.0]
        .iter()
        .map(|&ell| KernelParams {
            signal_variance: sig_scale,
            length_scale: ell.max(h),
            noise_floor: noise_scale,
        })
        .collect();
    for _ in 0..opts.extra_starts {
        let u: f64 = rand::Rng::random(&mut rng);
        let (lo, hi) = (mean_bounds.length_scale.0.ln(), mean_bounds.length_scale.1.ln());
        starts.push(KernelParams {
            signal_variance: sig_scale,
            length_scale: (lo + u * (hi - lo)).exp(),
            noise_floor: noise_scale,
        });
    }

    let fail = |iteration: usize, e: Error| Error::Fit {
        iteration,
        reason: e.to_string(),
    };
    let g1 = optimize_hyperparameters(&data, prior_mean, &NoiseModel::Homoscedastic, &mean_bounds, &starts, opts.max_evals)
        .map_err(|e| fail(0, e))?;
    if !g1.log_likelihood().is_finite() {
        return Err(Error::Fit {
            iteration: 0,
            reason: "non-finite likelihood of the homoscedastic fit".into(),
        });
    }

    let dof = (m - 1) as f64;
    let log_bias = (dof / 2.0).ln() - digamma(dof / 2.0);
    let mut current = g1;
    let mut current_noise = vec![current.params.noise_floor; n];
    let mut noise_params: Option<KernelParams> = None;
    let mut mean_params = current.params;
    let mut prev_level: Option<f64> = None;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_em_iters {
        iterations = it;
        let mu = current.mean(&x);
        let raw: Vec<f64> = match opts.estimator {
            NoiseEstimator::Residual => (0..n)
                .map(|j| y.column(j).iter().map(|v| (v - mu[j]).powi(2)).sum::<f64>() / dof)
                .collect(),
            NoiseEstimator::PosteriorSampling { samples } => {
                let samples = samples.max(1);
                let latent = current.latent_variance(&x);
                (0..n)
                    .map(|j| {
                        let sd = (latent[j] + current_noise[j]).sqrt();
                        let mut acc = 0.0;
                        for _ in 0..samples {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            let draw = mu[j] + sd * z;
                            acc += y.column(j).iter().map(|v| 0.5 * (v - draw).powi(2)).sum::<f64>();
                        }
                        acc / (samples * m) as f64
                    })
                    .collect()
            }
        };
        let correction = match opts.estimator {
            NoiseEstimator::Residual => log_bias,
            NoiseEstimator::PosteriorSampling { .. } => 0.0,
        };
        let z: Vec<f64> = raw
            .iter()
            .map(|&r| if r > opts.noise_floor { r.ln() + correction } else { opts.noise_floor.ln() })
            .collect();

        let z_data = GridData::single(x.clone(), z.clone());
        let z_mean = mean_of(&z);
        let z_scale = variance_of(&z).max(1e-2);
        let log_noise_var = 2.0 / dof;
        let noise_bounds = HyperBounds {
            signal_variance: (1e-6, z_scale * 1e2),
            length_scale: (h, 5.0 * span),
            noise: (1e-6, (z_scale * 1e2).max(1.0)),
        };
        let noise_starts: Vec<KernelParams> = match noise_params {
            Some(p) => vec![p],
            None => [span / 5.0, span / 20.0]
                .iter()
                .map(|&ell| KernelParams {
                    signal_variance: z_scale,
                    length_scale: ell.max(h),
                    noise_floor: log_noise_var,
                })
                .collect(),
        };
        let evals = if noise_params.is_some() { opts.max_evals / 2 } else { opts.max_evals };
        let g2 = optimize_hyperparameters(&z_data, z_mean, &NoiseModel::Homoscedastic, &noise_bounds, &noise_starts, evals)
            .map_err(|e| fail(it, e))?;
        noise_params = Some(g2.params);
        let noise: Vec<f64> = g2.mean(&x).iter().map(|g| g.exp().max(opts.noise_floor)).collect();

        let het_bounds = HyperBounds {
            noise: (opts.noise_floor, opts.noise_floor),
            ..mean_bounds
        };
        let g3 = optimize_hyperparameters(
            &data,
            prior_mean,
            &NoiseModel::Fixed(noise.clone()),
            &het_bounds,
            &[mean_params],
            opts.max_evals / 2,
        )
        .map_err(|e| fail(it, e))?;
        if !g3.log_likelihood().is_finite() {
            return Err(Error::Fit {
                iteration: it,
                reason: "non-finite likelihood".into(),
            });
        }
        mean_params = g3.params;
        current = g3;

        let level = mean_of(&noise);
        current_noise = noise;
        if let Some(prev) = prev_level {
            let change = (level - prev).abs() / prev.abs().max(1e-12);
            log::debug!("EM iteration {it}: mean noise {level:e}, relative change {change:.4}");
            if change < opts.tolerance {
                converged = true;
                break;
            }
        }
        prev_level = Some(level);
    }

    let mean = current.mean(&x);
    let d_mean = gradient(&mean, h);
    let dd_mean = gradient(&d_mean, h);
    let variance = current_noise;
    let compliance = variance.iter().map(|v| 1.0 / v).collect();
    let model = TaskModel {
        axis_label: corpus.axis_label.clone(),
        grid: x,
        mean,
        d_mean,
        dd_mean,
        variance,
        compliance,
        em_iterations: iterations,
        converged,
        mean_kernel: Some(mean_params),
        noise_kernel: noise_params,
        noise_floor: opts.noise_floor,
        n_demos: m,
        seed: opts.seed,
    };
    model.validate().map_err(|e| fail(iterations, e))?;
    Ok(model)
}
