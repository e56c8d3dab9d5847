//! Small dense SDP solver for LMI problems in the entries of a symmetric
//! 2x2 matrix `P`.
//!
//! Feasibility is decided by a barrier phase 1 that minimises a common
//! shift `s` with `F_j(P) + s I ⪰ 0`; a negative shift gives a strictly
//! feasible point, while a positive lower bound from the duality gap proves
//! infeasibility (within the trace bound on `P`). Feasible points are then
//! moved to the analytic center of the feasible set. The effort bound
//! `t = u_max^2` is handled by outer bisection.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lmi::{LmiBlock, Var};
use crate::linalg::sym_min_eig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Feasibility,
    /// Minimise `‖P‖_F`.
    MinFrobeniusP,
    /// Minimise `t` over `[0, t_hi]` by bisection.
    MinEffort { t_hi: f64 },
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub blocks: Vec<LmiBlock>,
    pub objective: Objective,
}

impl SdpProblem {
    pub fn new(blocks: Vec<LmiBlock>, objective: Objective) -> Result<Self> {
        let uses_t = blocks.iter().any(|b| b.uses(Var::T));
        if uses_t && !matches!(objective, Objective::MinEffort { .. }) {
            return Err(invalid("blocks reference t but the objective does not declare it"));
        }
        for b in &blocks {
            let n = b.size();
            if b.constant.ncols() != n || b.coefficients.iter().any(|(_, m)| m.nrows() != n || m.ncols() != n) {
                return Err(invalid(format!("block {} has inconsistent sizes", b.name)));
            }
            if !b.is_symmetric() {
                return Err(invalid(format!("block {} is not symmetric", b.name)));
            }
        }
        Ok(Self { blocks, objective })
    }

    pub fn uses_t(&self) -> bool {
        self.blocks.iter().any(|b| b.uses(Var::T))
    }

    /// Smallest eigenvalue over all blocks at `(P, t)`, computed directly
    /// from the block definitions.
    pub fn min_residual(&self, p: &Matrix2<f64>, t: Option<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|b| sym_min_eig(&b.evaluate(p, t)))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    Feasible,
    Infeasible,
    NumericalFailure,
}

impl SdpStatus {
    pub fn is_feasible(self) -> bool {
        matches!(self, SdpStatus::Optimal | SdpStatus::Feasible)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub p_matrix: Matrix2<f64>,
    pub t_value: Option<f64>,
    /// Most negative block eigenvalue at the returned point.
    pub max_residual: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone)]
pub struct SdpOptions {
    /// Allowed negative block eigenvalue of a returned solution.
    pub residual_tol: f64,
    /// Relative tolerance of the bisection on `t`.
    pub t_rel_tol: f64,
    /// Upper bound on `trace(P)` that keeps homogeneous problems bounded.
    pub trace_bound: f64,
    pub max_newton_steps: usize,
    /// Stall window for declaring infeasibility.
    pub stall_iterations: usize,
    pub stall_improvement: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-7,
            t_rel_tol: 1e-4,
            trace_bound: 1e12,
            max_newton_steps: 4000,
            stall_iterations: 50,
            stall_improvement: 1e-10,
        }
    }
}

/// A block `C + Σ y_v G_v` over a fixed list of scalar variables.
struct Affine {
    c: DMatrix<f64>,
    g: Vec<DMatrix<f64>>,
}

impl Affine {
    fn eval(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = self.c.clone();
        for (g, v) in self.g.iter().zip(y) {
            if *v != 0.0 {
                m += g * *v;
            }
        }
        m
    }
}

/// Convex objective of a barrier problem.
#[derive(Clone, Copy)]
enum Cost {
    Linear(usize),
    FrobeniusP,
    Zero,
}

impl Cost {
    fn value(&self, y: &[f64]) -> f64 {
        match self {
            Cost::Linear(i) => y[*i],
            Cost::FrobeniusP => y[0] * y[0] + 2.0 * y[1] * y[1] + y[2] * y[2],
            Cost::Zero => 0.0,
        }
    }

    fn add_derivatives(&self, y: &[f64], tau: f64, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
        match self {
            Cost::Linear(i) => grad[*i] += tau,
            Cost::FrobeniusP => {
                for (i, w) in [(0, 2.0), (1, 4.0), (2, 2.0)] {
                    grad[i] += tau * w * y[i];
                    hess[(i, i)] += tau * w;
                }
            }
            Cost::Zero => {}
        }
    }
}

struct Barrier<'a> {
    blocks: &'a [Affine],
    cost: Cost,
    nvar: usize,
}

enum Centering {
    Done,
    /// Stopped early because the caller's predicate fired.
    Stopped,
    Failed,
}

impl Barrier<'_> {
    fn factor(&self, y: &[f64]) -> Option<Vec<Cholesky<f64, Dyn>>> {
        self.blocks.iter().map(|b| b.eval(y).cholesky()).collect()
    }

    fn value(&self, y: &[f64], tau: f64) -> Option<f64> {
        let chols = self.factor(y)?;
        let logdet: f64 = chols
            .iter()
            .map(|c| c.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>())
            .sum();
        Some(tau * self.cost.value(y) - logdet)
    }

    fn newton_system(&self, y: &[f64], tau: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = self.nvar;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for (blk, chol) in self.blocks.iter().zip(self.factor(y)?) {
            let inv = chol.inverse();
            let m: Vec<DMatrix<f64>> = blk.g.iter().map(|g| &inv * g).collect();
            for v in 0..n {
                grad[v] -= m[v].trace();
                for w in v..n {
                    let h = m[v].component_mul(&m[w].transpose()).sum();
                    hess[(v, w)] += h;
                    if w != v {
                        hess[(w, v)] += h;
                    }
                }
            }
        }
        self.cost.add_derivatives(y, tau, &mut grad, &mut hess);
        Some((grad, hess))
    }

    /// Newton centering at fixed `tau`, stopping early when `stop(y)` holds.
    fn center(
        &self,
        y: &mut Vec<f64>,
        tau: f64,
        steps: &mut usize,
        max_steps: usize,
        mut stop: impl FnMut(&[f64]) -> bool,
    ) -> Centering {
        for _ in 0..200 {
            if *steps >= max_steps {
                return Centering::Failed;
            }
            *steps += 1;
            let Some((grad, hess)) = self.newton_system(y, tau) else {
                return Centering::Failed;
            };
            let Some(dir) = solve_scaled(&hess, &grad) else {
                return Centering::Failed;
            };
            let decrement = -grad.dot(&dir);
            if !decrement.is_finite() {
                return Centering::Failed;
            }
            if decrement < 1e-10 {
                return Centering::Done;
            }
            let Some(f0) = self.value(y, tau) else {
                return Centering::Failed;
            };
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial: Vec<f64> = y.iter().zip(dir.iter()).map(|(a, d)| a + alpha * d).collect();
                if let Some(f) = self.value(&trial, tau) {
                    if f <= f0 - 0.25 * alpha * decrement {
                        *y = trial;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                // No progress possible at working precision.
                return Centering::Done;
            }
            if stop(y) {
                return Centering::Stopped;
            }
        }
        Centering::Done
    }
}

/// Solves `H d = -g` after symmetric diagonal scaling, adding a small ridge
/// if `H` is numerically singular.
fn solve_scaled(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let n = h.nrows();
    let scale: Vec<f64> = (0..n)
        .map(|i| if h[(i, i)] > 0.0 { 1.0 / h[(i, i)].sqrt() } else { 1.0 })
        .collect();
    let hs = DMatrix::from_fn(n, n, |i, j| h[(i, j)] * scale[i] * scale[j]);
    let gs = DVector::from_fn(n, |i, _| -g[i] * scale[i]);
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut m = hs.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        if let Some(c) = m.cholesky() {
            let d = c.solve(&gs);
            return Some(DVector::from_fn(n, |i, _| d[i] * scale[i]));
        }
        ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
    }
    None
}

fn p_from(y: &[f64]) -> Matrix2<f64> {
    Matrix2::new(y[0], y[1], y[1], y[2])
}

/// Blocks with `t` substituted, as affine maps of the three entries of `P`.
fn affine_blocks(problem: &SdpProblem, t: Option<f64>) -> Vec<Affine> {
    problem
        .blocks
        .iter()
        .map(|b| {
            let mut c = b.constant.clone();
            if let (Some(tc), Some(t)) = (b.coefficient(Var::T), t) {
                c += tc * t;
            }
            let g = Var::P_VARS
                .iter()
                .map(|&v| b.coefficient(v).cloned().unwrap_or_else(|| DMatrix::zeros(b.size(), b.size())))
                .collect();
            Affine { c, g }
        })
        .collect()
}

fn trace_block(bound: f64, extra_vars: usize) -> Affine {
    let mut g = vec![
        DMatrix::from_element(1, 1, -1.0),
        DMatrix::zeros(1, 1),
        DMatrix::from_element(1, 1, -1.0),
    ];
    g.extend((0..extra_vars).map(|_| DMatrix::zeros(1, 1)));
    Affine {
        c: DMatrix::from_element(1, 1, bound),
        g,
    }
}

enum PhaseOne {
    Feasible(Vec<f64>),
    Infeasible(Vec<f64>),
    Failed(Vec<f64>),
}

/// Searches for a strictly feasible `P` by minimising the shift `s`.
fn phase_one(blocks: &[Affine], opts: &SdpOptions, steps: &mut usize) -> PhaseOne {
    let shifted: Vec<Affine> = blocks
        .iter()
        .map(|b| {
            let n = b.c.nrows();
            let mut g = b.g.clone();
            g.push(DMatrix::identity(n, n));
            Affine { c: b.c.clone(), g }
        })
        .chain(std::iter::once(trace_block(opts.trace_bound, 1)))
        .collect();
    let degree: f64 = shifted.iter().map(|b| b.c.nrows() as f64).sum();

    let mut y = vec![0.0; 4];
    let min_eig = blocks.iter().map(|b| sym_min_eig(&b.c)).fold(f64::INFINITY, f64::min);
    if min_eig > 0.0 && blocks.iter().all(|b| b.c.clone().cholesky().is_some()) {
        return PhaseOne::Feasible(y);
    }
    let max_abs = blocks.iter().map(|b| b.c.amax()).fold(0.0, f64::max);
    y[3] = -min_eig + (0.1 * max_abs).max(1.0);

    let barrier = Barrier {
        blocks: &shifted,
        cost: Cost::Linear(3),
        nvar: 4,
    };
    let mut tau = degree / y[3].abs().max(1.0);
    let mut best = y[3];
    let mut since_improvement = 0usize;
    for _ in 0..80 {
        let mut stalled = false;
        let outcome = barrier.center(&mut y, tau, steps, opts.max_newton_steps, |yy| {
            if yy[3] < best - opts.stall_improvement {
                best = yy[3];
                since_improvement = 0;
            } else {
                since_improvement += 1;
                if since_improvement >= opts.stall_iterations {
                    stalled = true;
                }
            }
            yy[3] < 0.0 || stalled
        });
        if y[3] < 0.0 {
            return PhaseOne::Feasible(y[..3].to_vec());
        }
        match outcome {
            Centering::Failed => return PhaseOne::Failed(y[..3].to_vec()),
            Centering::Stopped if stalled => return PhaseOne::Infeasible(y[..3].to_vec()),
            _ => {}
        }
        let gap = degree / tau;
        if y[3] - gap > 0.0 {
            return PhaseOne::Infeasible(y[..3].to_vec());
        }
        if gap < 1e-14 * (1.0 + y[3].abs()) {
            return if y[3] <= opts.residual_tol {
                PhaseOne::Feasible(y[..3].to_vec())
            } else {
                PhaseOne::Infeasible(y[..3].to_vec())
            };
        }
        tau *= 10.0;
    }
    PhaseOne::Failed(y[..3].to_vec())
}

/// Moves a strictly feasible point to the analytic center of the blocks
/// intersected with `trace(P) ≤ 10 trace(P0)`.
fn analytic_center(blocks: &[Affine], y0: Vec<f64>, steps: &mut usize, max_steps: usize) -> Vec<f64> {
    let bound = 10.0 * (y0[0] + y0[2]).max(1e-300);
    let mut all: Vec<Affine> = blocks
        .iter()
        .map(|b| Affine {
            c: b.c.clone(),
            g: b.g.clone(),
        })
        .collect();
    all.push(trace_block(bound, 0));
    let barrier = Barrier {
        blocks: &all,
        cost: Cost::Zero,
        nvar: 3,
    };
    if barrier.factor(&y0).is_none() {
        return y0;
    }
    let mut y = y0.clone();
    match barrier.center(&mut y, 0.0, steps, max_steps, |_| false) {
        Centering::Failed => y0,
        _ => y,
    }
}

fn solution(problem: &SdpProblem, status: SdpStatus, y: &[f64], t: Option<f64>, steps: usize) -> SdpSolution {
    let p = p_from(y);
    SdpSolution {
        status,
        p_matrix: p,
        t_value: t,
        max_residual: problem.min_residual(&p, t),
        newton_steps: steps,
    }
}

/// Feasibility of the blocks with `t` fixed.
fn feasibility_at(problem: &SdpProblem, t: Option<f64>, opts: &SdpOptions, steps: &mut usize) -> (SdpStatus, Vec<f64>) {
    let blocks = affine_blocks(problem, t);
    match phase_one(&blocks, opts, steps) {
        PhaseOne::Feasible(y) => {
            let strict = blocks.iter().all(|b| b.eval(&y).cholesky().is_some());
            let y = if strict {
                analytic_center(&blocks, y, steps, opts.max_newton_steps + 400)
            } else {
                y
            };
            let status = if problem.min_residual(&p_from(&y), t) >= -opts.residual_tol {
                SdpStatus::Feasible
            } else {
                SdpStatus::NumericalFailure
            };
            (status, y)
        }
        PhaseOne::Infeasible(y) => (SdpStatus::Infeasible, y),
        PhaseOne::Failed(y) => (SdpStatus::NumericalFailure, y),
    }
}

pub fn solve(problem: &SdpProblem, opts: &SdpOptions) -> SdpSolution {
    match problem.objective {
        Objective::Feasibility => {
            let mut steps = 0;
            let (status, y) = feasibility_at(problem, None, opts, &mut steps);
            solution(problem, status, &y, None, steps)
        }
        Objective::MinFrobeniusP => min_frobenius(problem, opts),
        Objective::MinEffort { t_hi } => min_effort(problem, t_hi, opts),
    }
}

fn min_frobenius(problem: &SdpProblem, opts: &SdpOptions) -> SdpSolution {
    let mut steps = 0;
    let (status, y0) = feasibility_at(problem, None, opts, &mut steps);
    if status != SdpStatus::Feasible {
        return solution(problem, status, &y0, None, steps);
    }
    let blocks = affine_blocks(problem, None);
    if !blocks.iter().all(|b| b.eval(&y0).cholesky().is_some()) {
        return solution(problem, SdpStatus::Feasible, &y0, None, steps);
    }
    let degree: f64 = blocks.iter().map(|b| b.c.nrows() as f64).sum();
    let barrier = Barrier {
        blocks: &blocks,
        cost: Cost::FrobeniusP,
        nvar: 3,
    };
    let mut y = y0;
    let mut tau = degree / Cost::FrobeniusP.value(&y).max(1e-300);
    let mut status = SdpStatus::Feasible;
    for _ in 0..60 {
        if let Centering::Failed = barrier.center(&mut y, tau, &mut steps, opts.max_newton_steps, |_| false) {
            break;
        }
        if degree / tau <= 1e-6 * Cost::FrobeniusP.value(&y) {
            status = SdpStatus::Optimal;
            break;
        }
        tau *= 10.0;
    }
    let sol = solution(problem, status, &y, None, steps);
    if sol.max_residual < -opts.residual_tol {
        return SdpSolution {
            status: SdpStatus::NumericalFailure,
            ..sol
        };
    }
    sol
}

/// Largest `W P^-1 Wᵀ` over the effort blocks: the smallest `t` the given
/// `P` supports.
fn effort_needed(problem: &SdpProblem, p: &Matrix2<f64>) -> Option<f64> {
    let pinv = p.try_inverse()?;
    let mut need: f64 = 0.0;
    for b in problem.blocks.iter().filter(|b| b.uses(Var::T)) {
        let w = nalgebra::RowVector2::new(b.constant[(0, 1)], b.constant[(0, 2)]);
        need = need.max((w * pinv * w.transpose())[(0, 0)] - b.constant[(0, 0)]);
    }
    Some(need.max(0.0))
}

/// Smallest `t` in `[0, t_hi]` for which the blocks are feasible, within
/// `t_rel_tol · max(1, t)`.
pub fn min_effort(problem: &SdpProblem, t_hi: f64, opts: &SdpOptions) -> SdpSolution {
    let mut steps = 0;
    if !(t_hi > 0.0 && t_hi.is_finite()) {
        return solution(problem, SdpStatus::Infeasible, &[0.0; 3], Some(t_hi), steps);
    }
    let (status, y_hi) = feasibility_at(problem, Some(t_hi), opts, &mut steps);
    if status != SdpStatus::Feasible {
        return solution(problem, status, &y_hi, Some(t_hi), steps);
    }
    let mut best_y = y_hi;
    let mut hi = t_hi;
    let mut lo = 0.0;
    let tighten = |y: &[f64], hi: f64| -> f64 {
        match effort_needed(problem, &p_from(y)) {
            Some(need) if need * (1.0 + 1e-9) < hi => need * (1.0 + 1e-9),
            _ => hi,
        }
    };
    let mut candidate_hi = tighten(&best_y, hi);
    if candidate_hi < hi && problem.min_residual(&p_from(&best_y), Some(candidate_hi)) >= -opts.residual_tol {
        hi = candidate_hi;
    }
    let (status0, y0) = feasibility_at(problem, Some(0.0), opts, &mut steps);
    if status0 == SdpStatus::Feasible {
        return solution(problem, SdpStatus::Optimal, &y0, Some(0.0), steps);
    }
    while hi - lo > opts.t_rel_tol * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        let (st, y) = feasibility_at(problem, Some(mid), opts, &mut steps);
        match st {
            SdpStatus::Feasible => {
                best_y = y;
                hi = mid;
                candidate_hi = tighten(&best_y, hi);
                if candidate_hi < hi
                    && problem.min_residual(&p_from(&best_y), Some(candidate_hi)) >= -opts.residual_tol
                {
                    hi = candidate_hi;
                }
            }
            SdpStatus::Infeasible => lo = mid,
            _ => {
                return solution(problem, SdpStatus::NumericalFailure, &best_y, Some(hi), steps);
            }
        }
        if steps > 20 * opts.max_newton_steps {
            return solution(problem, SdpStatus::NumericalFailure, &best_y, Some(hi), steps);
        }
    }
    solution(problem, SdpStatus::Optimal, &best_y, Some(hi), steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_radius2;
    use crate::lmi::{positivity_block, stability_block};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stability_problem(a: &Matrix2<f64>) -> SdpProblem {
        SdpProblem::new(vec![stability_block("s", a), positivity_block()], Objective::Feasibility).unwrap()
    }

    /// Exhaustive search over unit-trace `P` at resolution 0.01.
    fn grid_feasible(a: &Matrix2<f64>, tol: f64) -> bool {
        for i in 1..100 {
            let p11 = i as f64 * 0.01;
            let p22 = 1.0 - p11;
            let lim = (p11 * p22).sqrt();
            let n = (lim / 0.01).floor() as i32;
            for j in -n..=n {
                let p = Matrix2::new(p11, j as f64 * 0.01, j as f64 * 0.01, p22);
                let m = p - a.transpose() * p * a;
                if sym_min_eig(&DMatrix::from_column_slice(2, 2, m.as_slice())) >= -tol {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn stable_vertex_is_feasible() {
        let a = Matrix2::new(0.9, 0.3, -0.2, 0.7);
        let sol = solve(&stability_problem(&a), &SdpOptions::default());
        assert_eq!(sol.status, SdpStatus::Feasible);
        let m = sol.p_matrix - a.transpose() * sol.p_matrix * a;
        assert!(sym_min_eig(&DMatrix::from_column_slice(2, 2, m.as_slice())) >= -1e-8);
        assert!(sol.max_residual >= -1e-7);
    }

    #[test]
    fn unstable_vertex_is_infeasible() {
        let a = Matrix2::new(1.05, 0.0, 0.0, 0.5);
        assert!((spectral_radius2(&a) - 1.05).abs() < 1e-12);
        let sol = solve(&stability_problem(&a), &SdpOptions::default());
        assert_eq!(sol.status, SdpStatus::Infeasible);
        assert!(!grid_feasible(&a, 0.0));
    }

    #[test]
    fn zero_gain_needs_zero_effort() {
        let blocks = vec![
            crate::lmi::effort_block("e", &nalgebra::RowVector2::zeros()),
            stability_block("s", &Matrix2::new(0.5, 0.0, 0.0, 0.5)),
            positivity_block(),
        ];
        let problem = SdpProblem::new(blocks, Objective::MinEffort { t_hi: 100.0 }).unwrap();
        let sol = solve(&problem, &SdpOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert_eq!(sol.t_value, Some(0.0));
    }

    #[test]
    fn undeclared_t_is_rejected() {
        let blocks = vec![crate::lmi::effort_block("e", &nalgebra::RowVector2::new(1.0, 1.0))];
        assert!(SdpProblem::new(blocks, Objective::Feasibility).is_err());
    }

    #[test]
    fn min_frobenius_is_scaled_down() {
        let a = Matrix2::new(0.9, 0.3, -0.2, 0.7);
        let problem = SdpProblem::new(vec![stability_block("s", &a), positivity_block()], Objective::MinFrobeniusP).unwrap();
        let opt = solve(&problem, &SdpOptions::default());
        assert_eq!(opt.status, SdpStatus::Optimal);
        let feas = solve(&stability_problem(&a), &SdpOptions::default());
        assert!(opt.p_matrix.norm() <= feas.p_matrix.norm());
        assert!(opt.p_matrix.norm() < 1e-6);
    }

    #[test]
    fn feasibility_is_scale_invariant() {
        let a = Matrix2::new(0.95, 0.1, -0.1, 0.9);
        let sol = solve(&stability_problem(&a), &SdpOptions::default());
        for c in [1e-3, 1.0, 1e4] {
            let p = sol.p_matrix * c;
            let m = p - a.transpose() * p * a;
            assert!(sym_min_eig(&DMatrix::from_column_slice(2, 2, m.as_slice())) >= -1e-8 * c);
        }
    }

    #[test]
    fn agrees_with_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let opts = SdpOptions::default();
        let mut agree = 0;
        let total = 500;
        for _ in 0..total {
            let a = Matrix2::new(
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
            );
            let solver = solve(&stability_problem(&a), &opts).status.is_feasible();
            let oracle = grid_feasible(&a, 1e-7);
            let rho = spectral_radius2(&a);
            if solver == oracle || (rho - 1.0).abs() < 0.02 {
                agree += 1;
            }
        }
        assert!(agree as f64 >= 0.99 * total as f64, "{agree}/{total}");
    }

    #[test]
    fn stability_matches_spectral_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let opts = SdpOptions::default();
        let mut wrong = 0;
        for _ in 0..1000 {
            let a = Matrix2::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
            );
            let rho = spectral_radius2(&a);
            if (rho - 1.0).abs() < 1e-6 {
                continue;
            }
            let feasible = solve(&stability_problem(&a), &opts).status.is_feasible();
            if feasible != (rho < 1.0) {
                wrong += 1;
            }
        }
        assert_eq!(wrong, 0);
    }

    #[test]
    fn effort_bisection_respects_tolerance() {
        let a = Matrix2::new(0.99, 0.001, -0.5, 0.95);
        let w = nalgebra::RowVector2::new(-500.0, -25.0);
        let blocks = vec![
            stability_block("s", &a),
            positivity_block(),
            crate::lmi::effort_block("e", &w),
            crate::lmi::initial_state_block(&nalgebra::Vector2::new(0.0, 0.1)),
        ];
        let problem = SdpProblem::new(blocks, Objective::MinEffort { t_hi: 1e4 }).unwrap();
        let opts = SdpOptions::default();
        let sol = solve(&problem, &opts);
        assert_eq!(sol.status, SdpStatus::Optimal);
        let t = sol.t_value.unwrap();
        assert!(sol.max_residual >= -1e-7);
        // Below the reported optimum by more than the tolerance is infeasible.
        let below = t - 2.0 * opts.t_rel_tol * t.max(1.0);
        let mut steps = 0;
        let (st, _) = feasibility_at(&problem, Some(below), &opts, &mut steps);
        assert_eq!(st, SdpStatus::Infeasible, "t* = {t}");
    }
}
