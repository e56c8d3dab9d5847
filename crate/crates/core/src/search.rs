//! Bayesian-optimisation search over `(K_max, K_min, D)`.
//!
//! Candidates live in the unit cube; a draw with `K_max < K_min` is remapped
//! by swapping the two stiffness coordinates and ties are redrawn. A GP
//! surrogate with an anisotropic squared-exponential kernel models the
//! suitability cost and expected improvement picks the next candidate.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use crate::design::{Assessor, DesignConfig, DesignVariant, Outcome, SuitabilityScore};
use crate::error::{Error, Result};
use crate::hgp::TaskModel;
use crate::linalg::cholesky_jittered;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::preference::UserPreference;
use crate::stiffness::ControllerSolution;

const RANDOM_CANDIDATES: usize = 1000;
const LOCAL_CANDIDATES: usize = 200;
const LOCAL_SPREAD: f64 = 0.05;
const LOCAL_CENTERS: usize = 5;
const REFIT_EVERY: usize = 25;
const SURROGATE_KEEP: usize = 75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub k_max: f64,
    pub k_min: f64,
    pub d: f64,
    pub f_s: f64,
    pub f_perf: f64,
    pub f_safety: Option<f64>,
    pub outcome: Outcome,
    pub best_f_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub design: DesignVariant,
    pub seed: u64,
    pub best: ControllerSolution,
    pub score: SuitabilityScore,
    pub iterations: usize,
    pub converged: bool,
    pub dp_max: f64,
    pub trace: Vec<TraceEntry>,
}

/// Maps a unit-cube point to a candidate, or `None` if both stiffness
/// coordinates coincide.
fn decode(u: &[f64; 3], cfg: &DesignConfig) -> Option<(ControllerSolution, [f64; 3])> {
    let (mut a, mut b) = (u[0], u[1]);
    if a == b {
        return None;
    }
    if a < b {
        std::mem::swap(&mut a, &mut b);
    }
    let [k0, k1] = cfg.k_bounds;
    let [d0, d1] = cfg.d_bounds;
    let sol = ControllerSolution {
        k_max: k0 + a * (k1 - k0),
        k_min: k0 + b * (k1 - k0),
        d: d0 + u[2] * (d1 - d0),
        h: cfg.h,
    };
    (sol.k_max > sol.k_min).then_some((sol, [a, b, u[2]]))
}

#[derive(Debug, Clone, Copy)]
struct ArdParams {
    signal_variance: f64,
    length: [f64; 3],
    noise: f64,
}

impl ArdParams {
    fn k(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let d2: f64 = (0..3).map(|i| ((a[i] - b[i]) / self.length[i]).powi(2)).sum();
        self.signal_variance * (-0.5 * d2).exp()
    }

    fn to_log(self) -> Vec<f64> {
        vec![
            self.signal_variance.ln(),
            self.length[0].ln(),
            self.length[1].ln(),
            self.length[2].ln(),
            self.noise.ln(),
        ]
    }

    fn from_log(v: &[f64]) -> (Self, f64) {
        let bounds = [(-3.0, 3.0), (-4.0, 1.5), (-4.0, 1.5), (-4.0, 1.5), (-12.0, 0.0)];
        let mut penalty = 0.0;
        let c: Vec<f64> = v
            .iter()
            .zip(bounds)
            .map(|(x, (lo, hi))| {
                let y = x.clamp(lo, hi);
                penalty += (x - y).powi(2);
                y
            })
            .collect();
        (
            Self {
                signal_variance: c[0].exp(),
                length: [c[1].exp(), c[2].exp(), c[3].exp()],
                noise: c[4].exp(),
            },
            penalty,
        )
    }
}

impl Default for ArdParams {
    fn default() -> Self {
        Self {
            signal_variance: 1.0,
            length: [0.2; 3],
            noise: 1e-3,
        }
    }
}

/// GP surrogate on standardised targets.
struct Surrogate {
    x: Vec<[f64; 3]>,
    params: ArdParams,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_std: f64,
    nll: f64,
}

impl Surrogate {
    fn fit(x: &[[f64; 3]], y: &[f64], params: ArdParams) -> Option<Self> {
        let n = x.len();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let y_std = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-6);
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_std));
        let mut k = DMatrix::from_fn(n, n, |i, j| params.k(&x[i], &x[j]));
        for i in 0..n {
            k[(i, i)] += params.noise;
        }
        let (chol, _) = cholesky_jittered(&k, 1e-10, 1e-2).ok()?;
        let alpha = chol.solve(&ys);
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let nll = 0.5 * ys.dot(&alpha) + 0.5 * logdet;
        Some(Self {
            x: x.to_vec(),
            params,
            chol,
            alpha,
            y_mean,
            y_std,
            nll,
        })
    }

    fn optimise(x: &[[f64; 3]], y: &[f64], start: ArdParams) -> Option<Self> {
        let opts = NelderMeadOptions {
            max_evals: 60,
            f_tol: 1e-4,
            x_tol: 1e-3,
        };
        let res = nelder_mead(
            |theta| {
                let (p, penalty) = ArdParams::from_log(theta);
                Surrogate::fit(x, y, p).map_or(f64::INFINITY, |s| s.nll + 1e3 * penalty)
            },
            &start.to_log(),
            &[0.5; 5],
            &opts,
        );
        let (p, _) = ArdParams::from_log(&res.x);
        Surrogate::fit(x, y, p).or_else(|| Surrogate::fit(x, y, start))
    }

    /// Predictive mean and standard deviation in the original units.
    fn predict(&self, q: &[f64; 3]) -> (f64, f64) {
        let kq = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.params.k(q, xi)));
        let mean = kq.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kq)
            .expect("Cholesky factor has a positive diagonal");
        let var = (self.params.signal_variance - v.norm_squared()).max(1e-12);
        (self.y_mean + self.y_std * mean, self.y_std * var.sqrt())
    }
}

fn expected_improvement(mu: f64, sd: f64, best: f64) -> f64 {
    let n = StdNormal::standard();
    let z = (best - mu) / sd;
    (best - mu) * n.cdf(z) + sd * n.pdf(z)
}

/// Indices of the points used to fit the surrogate: everything while small,
/// otherwise the best and the most recent points.
fn surrogate_subset(ys: &[f64]) -> Vec<usize> {
    let n = ys.len();
    if n <= 2 * SURROGATE_KEEP {
        return (0..n).collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order[..SURROGATE_KEEP].to_vec();
    keep.extend(n - SURROGATE_KEEP..n);
    keep.sort_unstable();
    keep.dedup();
    keep
}

fn draw_unit(rng: &mut ChaCha8Rng, cfg: &DesignConfig) -> ([f64; 3], ControllerSolution) {
    loop {
        let u = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        if let Some((sol, canon)) = decode(&u, cfg) {
            return (canon, sol);
        }
    }
}

pub fn search(model: &TaskModel, design: DesignVariant, pref: &UserPreference, cfg: &DesignConfig, seed: u64) -> Result<SearchResult> {
    let cfg = DesignConfig {
        design,
        seed,
        similarity: pref.similarity,
        scale: pref.scale,
        k_bounds: [pref.k_lower, pref.k_upper],
        ..cfg.clone()
    };
    let assessor = Assessor::new(model, &cfg)?;
    search_with(&assessor)
}

pub fn search_with(assessor: &Assessor) -> Result<SearchResult> {
    let cfg = &assessor.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let perturb = Normal::new(0.0, LOCAL_SPREAD).expect("valid spread");

    let mut xs: Vec<[f64; 3]> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut sols: Vec<ControllerSolution> = Vec::new();
    let mut scores: Vec<SuitabilityScore> = Vec::new();
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut best_hist: Vec<f64> = Vec::new();
    let mut best_idx: Option<usize> = None;
    let mut params = ArdParams::default();
    let mut surrogate: Option<Surrogate> = None;
    let mut converged = false;

    while xs.len() < cfg.max_iters {
        let k = xs.len();
        let (u, sol) = if k < cfg.n_seed {
            draw_unit(&mut rng, cfg)
        } else {
            let subset = surrogate_subset(&ys);
            let sx: Vec<[f64; 3]> = subset.iter().map(|&i| xs[i]).collect();
            let sy: Vec<f64> = subset.iter().map(|&i| ys[i]).collect();
            let refit = (k - cfg.n_seed).is_multiple_of(REFIT_EVERY) || surrogate.is_none();
            surrogate = if refit {
                Surrogate::optimise(&sx, &sy, params)
            } else {
                Surrogate::fit(&sx, &sy, params)
            };
            if let Some(s) = &surrogate {
                params = s.params;
            }
            let best_y = ys.iter().copied().fold(f64::INFINITY, f64::min);
            let mut pool: Vec<([f64; 3], ControllerSolution)> = (0..RANDOM_CANDIDATES).map(|_| draw_unit(&mut rng, cfg)).collect();
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]).then(a.cmp(&b)));
            let centers: Vec<[f64; 3]> = order.iter().take(LOCAL_CENTERS).map(|&i| xs[i]).collect();
            for j in 0..LOCAL_CANDIDATES {
                let c = centers[j % centers.len()];
                let u = [
                    (c[0] + perturb.sample(&mut rng)).clamp(0.0, 1.0),
                    (c[1] + perturb.sample(&mut rng)).clamp(0.0, 1.0),
                    (c[2] + perturb.sample(&mut rng)).clamp(0.0, 1.0),
                ];
                if let Some((sol, canon)) = decode(&u, cfg) {
                    pool.push((canon, sol));
                }
            }
            match &surrogate {
                Some(s) => {
                    let mut best_ei = f64::NEG_INFINITY;
                    let mut pick = 0;
                    for (i, (u, _)) in pool.iter().enumerate() {
                        let (mu, sd) = s.predict(u);
                        let ei = expected_improvement(mu, sd, best_y);
                        if ei > best_ei {
                            best_ei = ei;
                            pick = i;
                        }
                    }
                    pool.swap_remove(pick)
                }
                None => pool.swap_remove(0),
            }
        };

        let score = assessor.assess(&sol);
        let iteration = k + 1;
        if score.outcome == Outcome::Accepted && best_idx.is_none_or(|b| score.f_s < scores[b].f_s) {
            best_idx = Some(k);
        }
        xs.push(u);
        ys.push(score.f_s);
        sols.push(sol);
        scores.push(score);
        let best_f_s = best_idx.map_or(1.0, |b| scores[b].f_s);
        best_hist.push(best_f_s);
        let last = &scores[k];
        trace.push(TraceEntry {
            iteration,
            k_max: sol.k_max,
            k_min: sol.k_min,
            d: sol.d,
            f_s: last.f_s,
            f_perf: last.f_perf,
            f_safety: last.f_safety,
            outcome: last.outcome,
            best_f_s,
        });

        if best_idx.is_some() && iteration >= cfg.n_seed + cfg.n_iter {
            let earlier = best_hist[iteration - 1 - cfg.n_iter];
            if earlier - best_f_s < cfg.epsilon {
                converged = true;
                break;
            }
        }
    }

    let Some(b) = best_idx else {
        let rejected = scores.iter().filter(|s| s.outcome == Outcome::Rejected).count();
        let failed = scores.iter().filter(|s| s.outcome == Outcome::Failed).count();
        return Err(Error::Search(format!(
            "no feasible candidate for design {:?} after {} iterations ({rejected} rejected, {failed} solver failures)",
            cfg.design,
            scores.len()
        )));
    };
    Ok(SearchResult {
        design: cfg.design,
        seed: cfg.seed,
        best: sols[b],
        score: scores[b].clone(),
        iterations: scores.len(),
        converged,
        dp_max: assessor.dp_max,
        trace,
    })
}
