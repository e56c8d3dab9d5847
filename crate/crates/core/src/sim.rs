//! Discrete-time closed-loop simulation of the impedance relation
//! `H ë + D ė + K(t) e = F` with `e = p_r - p`.
//!
//! Each step holds `K` and `F` constant over `Ts` and propagates the state
//! with the exact ZOH discretization of the frozen system.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hgp::TaskModel;
use crate::lpv::{discretize, state_matrix_unchecked};
use crate::stiffness::{ControllerSolution, StiffnessProfile};

/// Smallest release deflection for which overshoot is defined, m.
pub const MIN_RELEASE_ERROR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceWindow {
    pub t_start: f64,
    pub t_end: f64,
    /// N
    pub magnitude: f64,
    pub sign: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForceSchedule {
    pub windows: Vec<ForceWindow>,
}

impl ForceSchedule {
    /// Two opposite 50 N pushes, over [2, 4] s and [6.2, 8.2] s.
    pub fn reference_protocol() -> Self {
        Self {
            windows: vec![
                ForceWindow {
                    t_start: 2.0,
                    t_end: 4.0,
                    magnitude: 50.0,
                    sign: -1.0,
                },
                ForceWindow {
                    t_start: 6.2,
                    t_end: 8.2,
                    magnitude: 50.0,
                    sign: 1.0,
                },
            ],
        }
    }

    pub fn validate(&self, t0: f64, t1: f64) -> Result<()> {
        let mut sorted = self.windows.clone();
        sorted.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
        for w in &sorted {
            if !(w.t_end > w.t_start) || w.sign.abs() != 1.0 || !w.magnitude.is_finite() {
                return Err(invalid(format!("malformed force window {w:?}")));
            }
            if w.t_start < t0 - 1e-9 || w.t_end > t1 + 1e-9 {
                return Err(invalid(format!(
                    "force window [{}, {}] lies outside the task horizon [{t0}, {t1}]",
                    w.t_start, w.t_end
                )));
            }
        }
        if sorted.windows(2).any(|p| p[1].t_start < p[0].t_end) {
            return Err(invalid("force windows overlap"));
        }
        Ok(())
    }

    pub fn force_at(&self, t: f64) -> f64 {
        self.windows
            .iter()
            .filter(|w| t >= w.t_start - 1e-9 && t < w.t_end - 1e-9)
            .map(|w| w.magnitude * w.sign)
            .sum()
    }

    fn first_start(&self) -> Option<f64> {
        self.windows.iter().map(|w| w.t_start).min_by(f64::total_cmp)
    }
}

/// Linear spring wall at position `wall`, pushing back when `p > wall`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringEnvironment {
    /// N/m
    pub stiffness: f64,
    /// m
    pub wall: f64,
}

impl SpringEnvironment {
    /// Force in the error coordinate for robot position `p`.
    pub fn force(&self, p: f64) -> f64 {
        if p > self.wall {
            self.stiffness * (p - self.wall)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KInterpolation {
    #[default]
    Hold,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StiffnessSource<'a> {
    Profile(&'a StiffnessProfile),
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub ts: f64,
    pub schedule: ForceSchedule,
    pub environment: Option<SpringEnvironment>,
    pub interpolation: KInterpolation,
    /// Replaces the default initial state `[0, dp_r(0)]`.
    pub x0: Option<[f64; 2]>,
}

impl SimConfig {
    pub fn new(ts: f64, schedule: ForceSchedule) -> Self {
        Self {
            ts,
            schedule,
            environment: None,
            interpolation: KInterpolation::Hold,
            x0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub t_start: f64,
    pub t_end: f64,
    pub max_abs_error: f64,
    /// Error at the end of the window, m.
    pub deviation_at_end: f64,
    /// Overshoot after release, percent; absent when undefined.
    pub overshoot_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    /// Max |e(k)| for k >= 1 before the first force window.
    pub max_abs_error: f64,
    pub max_abs_effort: f64,
    pub max_abs_effort_pre_force: f64,
    pub windows: Vec<WindowMetrics>,
    /// Σ |F| Ts, N·s.
    pub accumulated_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub axis_label: String,
    pub ts: f64,
    pub t: Vec<f64>,
    pub e: Vec<f64>,
    pub edot: Vec<f64>,
    pub u: Vec<f64>,
    pub force: Vec<f64>,
    pub k: Vec<f64>,
    pub accumulated_force: Vec<f64>,
    pub schedule: ForceSchedule,
    pub metrics: SimMetrics,
}

/// Caches ZOH discretizations per stiffness value.
struct Discretizer {
    d: f64,
    h: f64,
    ts: f64,
    cache: HashMap<u64, (Matrix2<f64>, Vector2<f64>)>,
}

impl Discretizer {
    fn new(d: f64, h: f64, ts: f64) -> Self {
        Self {
            d,
            h,
            ts,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, k: f64) -> (Matrix2<f64>, Vector2<f64>) {
        let (d, h, ts) = (self.d, self.h, self.ts);
        *self.cache.entry(k.to_bits()).or_insert_with(|| {
            let a = state_matrix_unchecked(k, d, h);
            discretize(&a, &Vector2::new(0.0, 1.0 / h), ts)
        })
    }
}

/// Free or forced stepping along a given stiffness sequence. Returns states
/// `x(0..=n)` where `n = ks.len()`; `forces[k]` acts during step `k`.
pub fn propagate(sol: &ControllerSolution, ks: &[f64], x0: Vector2<f64>, forces: &[f64], ts: f64) -> Result<Vec<Vector2<f64>>> {
    if forces.len() != ks.len() {
        return Err(invalid("stiffness and force sequences differ in length"));
    }
    let mut disc = Discretizer::new(sol.d, sol.h, ts);
    let mut xs = Vec::with_capacity(ks.len() + 1);
    xs.push(x0);
    let mut x = x0;
    for (step, (&k, &f)) in ks.iter().zip(forces).enumerate() {
        let (ad, bf) = disc.get(k);
        x = ad * x + bf * f;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { step: step + 1 });
        }
        xs.push(x);
    }
    Ok(xs)
}

pub fn effort_gain(k: f64, sol: &ControllerSolution) -> RowVector2<f64> {
    RowVector2::new(-k / sol.h, -sol.d / sol.h)
}

fn lerp_at(grid: &[f64], values: &[f64], t: f64) -> f64 {
    let idx = grid.partition_point(|&g| g <= t);
    if idx == 0 {
        return values[0];
    }
    if idx >= grid.len() {
        return values[values.len() - 1];
    }
    let w = (t - grid[idx - 1]) / (grid[idx] - grid[idx - 1]);
    values[idx - 1] + w * (values[idx] - values[idx - 1])
}

pub fn simulate(
    model: &TaskModel,
    stiffness: StiffnessSource<'_>,
    sol: &ControllerSolution,
    cfg: &SimConfig,
) -> Result<SimResult> {
    model.validate()?;
    let ts = cfg.ts;
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(invalid("ts must be positive"));
    }
    if !(sol.h > 0.0 && sol.d >= 0.0) {
        return Err(invalid("controller needs h > 0 and d >= 0"));
    }
    let t0 = model.grid[0];
    let horizon = model.horizon();
    let steps_f = horizon / ts;
    let n = steps_f.round() as usize;
    if (n as f64 * ts - horizon).abs() > 1e-6 * horizon.max(ts) {
        return Err(invalid(format!("ts = {ts} does not divide the task horizon {horizon}")));
    }
    cfg.schedule.validate(t0, t0 + horizon)?;
    if let StiffnessSource::Profile(p) = stiffness {
        if p.grid.len() != model.grid.len() {
            return Err(invalid("stiffness profile grid does not match the task model"));
        }
    }

    let k_at = |t: f64| -> f64 {
        match stiffness {
            StiffnessSource::Constant(k) => k,
            StiffnessSource::Profile(p) => match cfg.interpolation {
                KInterpolation::Hold => p.k_at(t),
                KInterpolation::Linear => lerp_at(&p.grid, &p.k, t),
            },
        }
    };
    let x0 = match cfg.x0 {
        Some([e, de]) => Vector2::new(e, de),
        None => {
            let [e, de] = model.initial_state();
            Vector2::new(e, de)
        }
    };

    let mut disc = Discretizer::new(sol.d, sol.h, ts);
    let mut out = SimResult {
        axis_label: model.axis_label.clone(),
        ts,
        t: Vec::with_capacity(n + 1),
        e: Vec::with_capacity(n + 1),
        edot: Vec::with_capacity(n + 1),
        u: Vec::with_capacity(n + 1),
        force: Vec::with_capacity(n + 1),
        k: Vec::with_capacity(n + 1),
        accumulated_force: Vec::with_capacity(n + 1),
        schedule: cfg.schedule.clone(),
        metrics: SimMetrics {
            max_abs_error: 0.0,
            max_abs_effort: 0.0,
            max_abs_effort_pre_force: 0.0,
            windows: Vec::new(),
            accumulated_force: 0.0,
        },
    };
    let mut x = x0;
    let mut acc = 0.0;
    for step in 0..=n {
        let t = t0 + step as f64 * ts;
        let k = k_at(t);
        let mut f = cfg.schedule.force_at(t);
        if let Some(env) = &cfg.environment {
            let p = lerp_at(&model.grid, &model.mean, t) - x[0];
            f += env.force(p);
        }
        acc += f.abs() * ts;
        out.t.push(t);
        out.e.push(x[0]);
        out.edot.push(x[1]);
        out.u.push((effort_gain(k, sol) * x)[(0, 0)]);
        out.force.push(f);
        out.k.push(k);
        out.accumulated_force.push(acc);
        if step < n {
            let (ad, bf) = disc.get(k);
            x = ad * x + bf * f;
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence { step: step + 1 });
            }
        }
    }
    out.metrics = compute_metrics(&out);
    Ok(out)
}

fn max_abs(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |m, x| m.max(x.abs()))
}

/// Derives all metrics from the stored series.
pub fn compute_metrics(run: &SimResult) -> SimMetrics {
    let first = run.schedule.first_start().unwrap_or(f64::INFINITY);
    let pre: Vec<usize> = (0..run.t.len()).filter(|&k| run.t[k] < first - 1e-9).collect();
    let max_abs_error = max_abs(pre.iter().filter(|&&k| k >= 1).map(|&k| run.e[k]));
    let max_abs_effort_pre_force = max_abs(pre.iter().map(|&k| run.u[k]));
    let mut windows = run.schedule.windows.clone();
    windows.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    let windows = windows
        .iter()
        .map(|w| {
            let inside: Vec<usize> = (0..run.t.len())
                .filter(|&k| run.t[k] >= w.t_start - 1e-9 && run.t[k] <= w.t_end + 1e-9)
                .collect();
            let end = index_at(run, w.t_end);
            WindowMetrics {
                t_start: w.t_start,
                t_end: w.t_end,
                max_abs_error: max_abs(inside.iter().map(|&k| run.e[k])),
                deviation_at_end: run.e[end],
                overshoot_percent: measure_overshoot(run, w.t_end),
            }
        })
        .collect();
    SimMetrics {
        max_abs_error,
        max_abs_effort: max_abs(run.u.iter().copied()),
        max_abs_effort_pre_force,
        windows,
        accumulated_force: run.accumulated_force.last().copied().unwrap_or(0.0),
    }
}

fn index_at(run: &SimResult, t: f64) -> usize {
    run.t.partition_point(|&x| x < t - 1e-9).min(run.t.len() - 1)
}

/// Percentage overshoot of the recovery after the force released at
/// `release_time`: the largest excursion to the opposite sign, relative to
/// the error at release. The recovery window ends at the next force onset.
pub fn measure_overshoot(run: &SimResult, release_time: f64) -> Option<f64> {
    if run.t.is_empty() || release_time < run.t[0] || release_time > run.t[run.t.len() - 1] + 1e-9 {
        return None;
    }
    let r = index_at(run, release_time);
    let e_r = run.e[r];
    if e_r.abs() < MIN_RELEASE_ERROR {
        return None;
    }
    let next = run
        .schedule
        .windows
        .iter()
        .map(|w| w.t_start)
        .filter(|&s| s > release_time + 1e-9)
        .fold(f64::INFINITY, f64::min);
    let s = e_r.signum();
    let peak = (r..run.t.len())
        .take_while(|&k| run.t[k] < next - 1e-9)
        .map(|k| (-s * run.e[k]).max(0.0))
        .fold(0.0, f64::max);
    Some(100.0 * peak / e_r.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub axis_label: String,
    pub accumulated_vic: f64,
    pub accumulated_baseline: f64,
    /// `(acc_baseline - acc_vic) / max |acc_baseline - acc_vic|` over time.
    pub normalized_difference: Vec<f64>,
    /// Reduction of the time-averaged accumulated force, percent.
    pub mean_reduction_percent: f64,
    /// Reduction of the final accumulated force, percent.
    pub final_reduction_percent: f64,
}

pub fn compare(vic: &SimResult, baseline: &SimResult) -> Result<Comparison> {
    if vic.t.len() != baseline.t.len() || (vic.ts - baseline.ts).abs() > 1e-15 {
        return Err(Error::Comparison(format!(
            "runs differ in horizon: {} vs {} samples",
            vic.t.len(),
            baseline.t.len()
        )));
    }
    if vic.schedule != baseline.schedule {
        return Err(Error::Comparison("runs use different force schedules".into()));
    }
    let diff: Vec<f64> = baseline
        .accumulated_force
        .iter()
        .zip(&vic.accumulated_force)
        .map(|(b, v)| b - v)
        .collect();
    let scale = max_abs(diff.iter().copied());
    let normalized_difference = diff.iter().map(|d| if scale > 0.0 { d / scale } else { 0.0 }).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let reduction = |b: f64, v: f64| if b > 0.0 { 100.0 * (b - v) / b } else { 0.0 };
    let (acc_v, acc_b) = (vic.metrics.accumulated_force, baseline.metrics.accumulated_force);
    Ok(Comparison {
        axis_label: vic.axis_label.clone(),
        accumulated_vic: acc_v,
        accumulated_baseline: acc_b,
        normalized_difference,
        mean_reduction_percent: reduction(mean(&baseline.accumulated_force), mean(&vic.accumulated_force)),
        final_reduction_percent: reduction(acc_b, acc_v),
    })
}

impl SimResult {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "k,t,e,edot,u,F,K")?;
        for i in 0..self.t.len() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                i, self.t[i], self.e[i], self.edot[i], self.u[i], self.force[i], self.k[i]
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_model(horizon: f64, start_velocity: f64) -> TaskModel {
        let n = (horizon / 0.02).round() as usize + 1;
        let grid: Vec<f64> = (0..n).map(|i| i as f64 * 0.02).collect();
        let mean: Vec<f64> = grid.iter().map(|t| start_velocity * t).collect();
        let var = grid.iter().map(|t| 1e-4 * (1.0 + t)).collect();
        TaskModel::from_profiles("x", grid, mean, var).unwrap()
    }

    fn sol(k: f64, d: f64) -> ControllerSolution {
        ControllerSolution::new(k + 1.0, k, d, 2.0).unwrap()
    }

    #[test]
    fn equilibrium_stays_at_rest() {
        let m = flat_model(1.0, 0.0);
        let run = simulate(&m, StiffnessSource::Constant(500.0), &sol(500.0, 30.0), &SimConfig::new(1e-3, ForceSchedule::default())).unwrap();
        assert!(run.e.iter().all(|e| *e == 0.0));
        assert_eq!(run.t.len(), 1001);
    }

    #[test]
    fn static_balance_under_constant_force() {
        let m = flat_model(6.0, 0.0);
        let schedule = ForceSchedule {
            windows: vec![ForceWindow {
                t_start: 0.0,
                t_end: 6.0,
                magnitude: 50.0,
                sign: 1.0,
            }],
        };
        let run = simulate(&m, StiffnessSource::Constant(5000.0), &sol(5000.0, 200.0), &SimConfig::new(1e-3, schedule)).unwrap();
        let e_end = run.e[run.e.len() - 1];
        assert!((e_end - 0.01).abs() < 1e-6, "{e_end}");
    }

    #[test]
    fn initial_velocity_gives_effort_spike_at_start() {
        let m = flat_model(2.0, 0.1);
        let run = simulate(&m, StiffnessSource::Constant(1000.0), &sol(1000.0, 400.0), &SimConfig::new(1e-3, ForceSchedule::default())).unwrap();
        let (argmax, _) = run
            .u
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
        assert_eq!(argmax, 0);
        assert!(run.u.last().unwrap().abs() < 1e-3 * run.u[0].abs());
    }

    fn release_run(xi: f64) -> SimResult {
        let m = flat_model(6.0, 0.0);
        let k = 2000.0;
        let d = 2.0 * xi * (k * 2.0f64).sqrt();
        let schedule = ForceSchedule {
            windows: vec![ForceWindow {
                t_start: 0.0,
                t_end: 3.0,
                magnitude: 50.0,
                sign: 1.0,
            }],
        };
        simulate(&m, StiffnessSource::Constant(k), &sol(k, d), &SimConfig::new(1e-3, schedule)).unwrap()
    }

    #[test]
    fn overshoot_matches_second_order_formula() {
        let xi: f64 = 0.69;
        let run = release_run(xi);
        let po = measure_overshoot(&run, 3.0).unwrap();
        let analytic = 100.0 * (-xi * std::f64::consts::PI / (1.0 - xi * xi).sqrt()).exp();
        assert!((po - analytic).abs() < 0.05, "{po} vs {analytic}");
        assert!((analytic - 5.0).abs() < 0.2);
    }

    #[test]
    fn critically_damped_release_has_no_overshoot() {
        let run = release_run(1.0);
        assert!(measure_overshoot(&run, 3.0).unwrap() < 1e-6);
        let idle = simulate(
            &flat_model(2.0, 0.0),
            StiffnessSource::Constant(100.0),
            &sol(100.0, 10.0),
            &SimConfig::new(1e-3, ForceSchedule::default()),
        )
        .unwrap();
        assert_eq!(measure_overshoot(&idle, 1.0), None);
    }

    #[test]
    fn metrics_recompute_from_series() {
        let m = flat_model(10.0, 0.05);
        let run = simulate(&m, StiffnessSource::Constant(800.0), &sol(800.0, 40.0), &SimConfig::new(1e-3, ForceSchedule::reference_protocol())).unwrap();
        assert_eq!(compute_metrics(&run), run.metrics);
        assert_eq!(run.metrics.windows.len(), 2);
        assert!(run.metrics.windows[0].deviation_at_end < 0.0);
        assert!(run.metrics.windows[1].deviation_at_end > 0.0);
        let expected_acc = 50.0 * 4.0;
        assert!((run.metrics.accumulated_force - expected_acc).abs() < 0.2);
    }

    #[test]
    fn self_comparison_is_neutral() {
        let m = flat_model(10.0, 0.0);
        let run = simulate(&m, StiffnessSource::Constant(800.0), &sol(800.0, 40.0), &SimConfig::new(1e-3, ForceSchedule::reference_protocol())).unwrap();
        let c = compare(&run, &run).unwrap();
        assert!(c.normalized_difference.iter().all(|d| *d == 0.0));
        assert_eq!(c.final_reduction_percent, 0.0);
        let short = simulate(&flat_model(9.0, 0.0), StiffnessSource::Constant(800.0), &sol(800.0, 40.0), &SimConfig::new(1e-3, ForceSchedule::default())).unwrap();
        assert!(matches!(compare(&run, &short), Err(Error::Comparison(_))));
    }

    #[test]
    fn compliant_controller_reduces_contact_force() {
        // Reference drives 5 cm into a stiff wall; a softer controller
        // presses less.
        let grid: Vec<f64> = (0..=150).map(|i| i as f64 * 0.02).collect();
        let mean: Vec<f64> = grid.iter().map(|t| 0.05 * (t / 1.0).min(1.0)).collect();
        let var = vec![1e-4; grid.len()];
        let m = TaskModel::from_profiles("x", grid, mean, var).unwrap();
        let mut cfg = SimConfig::new(1e-3, ForceSchedule::default());
        cfg.environment = Some(SpringEnvironment {
            stiffness: 20000.0,
            wall: 0.0,
        });
        let stiff = simulate(&m, StiffnessSource::Constant(3000.0), &sol(3000.0, 300.0), &cfg).unwrap();
        let soft = simulate(&m, StiffnessSource::Constant(500.0), &sol(500.0, 300.0), &cfg).unwrap();
        let c = compare(&soft, &stiff).unwrap();
        assert!(c.final_reduction_percent > 0.0);
        assert!(c.mean_reduction_percent > 0.0);
    }

    #[test]
    fn horizon_must_be_divisible() {
        let m = flat_model(1.0, 0.0);
        assert!(simulate(&m, StiffnessSource::Constant(1.0), &sol(1.0, 1.0), &SimConfig::new(0.3, ForceSchedule::default())).is_err());
    }

    #[test]
    fn overlapping_windows_rejected() {
        let s = ForceSchedule {
            windows: vec![
                ForceWindow {
                    t_start: 1.0,
                    t_end: 3.0,
                    magnitude: 1.0,
                    sign: 1.0,
                },
                ForceWindow {
                    t_start: 2.0,
                    t_end: 4.0,
                    magnitude: 1.0,
                    sign: -1.0,
                },
            ],
        };
        assert!(s.validate(0.0, 10.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = flat_model(0.1, 0.0);
        let run = simulate(&m, StiffnessSource::Constant(1.0), &sol(1.0, 1.0), &SimConfig::new(1e-3, ForceSchedule::default())).unwrap();
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "k,t,e,edot,u,F,K");
        assert_eq!(text.lines().count(), run.t.len() + 1);
    }
}
