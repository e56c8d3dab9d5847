//! Candidate assessment: builds the LMI set of a design variant for a
//! controller candidate, solves it and scores the result.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::hgp::{extract_dp_max, TaskModel};
use crate::lmi::{build_dstab_region, dstab_blocks, effort_error_blocks, stability_blocks, DStabRegion, LmiBlock};
use crate::lpv::build_polytope;
use crate::preference::{build_field, f_perf, PreferenceField, UserPreference};
use crate::sdp::{solve, Objective, SdpOptions, SdpProblem, SdpStatus};
use crate::stiffness::{build_profile, ControllerSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DesignVariant {
    /// Preference only.
    A,
    /// Adds closed-loop stability.
    B,
    /// Adds effort and error bounds from the initial state.
    C,
    /// Adds the overshoot (D-stability) region.
    D,
}

impl DesignVariant {
    pub const ALL: [DesignVariant; 4] = [DesignVariant::A, DesignVariant::B, DesignVariant::C, DesignVariant::D];

    pub fn uses_effort(self) -> bool {
        matches!(self, DesignVariant::C | DesignVariant::D)
    }
}

impl std::str::FromStr for DesignVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "C" => Ok(Self::C),
            "D" => Ok(Self::D),
            other => Err(invalid(format!("unknown design variant {other:?}, expected A, B, C or D"))),
        }
    }
}

/// Error bound used by the C/D constraints: fixed, or derived from the
/// task's confidence band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DpMax {
    Auto,
    Meters(f64),
}

impl Serialize for DpMax {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DpMax::Auto => s.serialize_str("auto"),
            DpMax::Meters(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for DpMax {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(DpMax::Meters(v)),
            Raw::Text(s) if s == "auto" => Ok(DpMax::Auto),
            Raw::Text(s) => Err(serde::de::Error::custom(format!("dp_max must be a number or \"auto\", got {s:?}"))),
        }
    }
}

fn default_n_seed() -> usize {
    16
}
fn default_epsilon() -> f64 {
    0.01
}
fn default_n_iter() -> usize {
    75
}
fn default_max_iters() -> usize {
    1000
}

/// Design session configuration. Field names follow the JSON config; the
/// unit-suffixed aliases are accepted as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    /// Apparent inertia, kg.
    #[serde(alias = "h_kg")]
    pub h: f64,
    /// Control sampling period, s.
    #[serde(alias = "ts_s")]
    pub ts: f64,
    /// Search range of both stiffness bounds, N/m.
    #[serde(alias = "k_bounds_n_per_m")]
    pub k_bounds: [f64; 2],
    /// Search range of the damping, N·s/m.
    #[serde(alias = "d_bounds_ns_per_m")]
    pub d_bounds: [f64; 2],
    /// Effort ceiling, N/kg.
    #[serde(alias = "u_max_bar_n_per_kg")]
    pub u_max_bar: f64,
    /// Error bound, m, or "auto".
    #[serde(alias = "dp_max_m")]
    pub dp_max: DpMax,
    /// Maximum percentage overshoot.
    #[serde(alias = "os_bar_percent")]
    pub os_bar: f64,
    pub design: DesignVariant,
    pub similarity: f64,
    pub scale: f64,
    pub seed: u64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_n_seed")]
    pub n_seed: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
}

impl DesignConfig {
    /// Parameters of the reference validation setup.
    pub fn reference(design: DesignVariant) -> Self {
        Self {
            h: 2.0,
            ts: 1e-3,
            k_bounds: [0.0, 10000.0],
            d_bounds: [0.0, 2500.0],
            u_max_bar: 10.0,
            dp_max: DpMax::Auto,
            os_bar: 5.0,
            design,
            similarity: 0.5,
            scale: 0.5,
            seed: 0,
            max_iters: default_max_iters(),
            n_seed: default_n_seed(),
            epsilon: default_epsilon(),
            n_iter: default_n_iter(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| invalid(format!("design config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("h", self.h)?;
        positive("ts", self.ts)?;
        positive("u_max_bar", self.u_max_bar)?;
        if let DpMax::Meters(v) = self.dp_max {
            positive("dp_max", v)?;
        }
        if !(self.os_bar > 0.0 && self.os_bar < 100.0) {
            return Err(invalid("os_bar must lie in (0, 100)"));
        }
        let [k0, k1] = self.k_bounds;
        if !(k0 >= 0.0 && k1 > k0 && k1.is_finite()) {
            return Err(invalid("k_bounds must satisfy 0 <= lo < hi"));
        }
        let [d0, d1] = self.d_bounds;
        if !(d0 >= 0.0 && d1 >= d0 && d1.is_finite()) {
            return Err(invalid("d_bounds must satisfy 0 <= lo <= hi"));
        }
        if self.max_iters < 1 || self.n_seed < 1 || self.n_iter < 1 || !(self.epsilon >= 0.0) {
            return Err(invalid("max_iters, n_seed and n_iter must be positive, epsilon non-negative"));
        }
        self.preference().validate()
    }

    pub fn preference(&self) -> UserPreference {
        UserPreference {
            similarity: self.similarity,
            scale: self.scale,
            k_lower: self.k_bounds[0],
            k_upper: self.k_bounds[1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    /// Violates a constraint (ordering or LMI infeasibility).
    Rejected,
    /// The solver could not decide.
    Failed,
}

/// Cost of a candidate; lower is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuitabilityScore {
    pub f_safety: Option<f64>,
    pub f_perf: f64,
    pub f_s: f64,
    pub outcome: Outcome,
    /// Certified `u_max^2` for effort-constrained designs.
    pub t_star: Option<f64>,
    /// Certifying Lyapunov matrix.
    pub p_matrix: Option<Matrix2<f64>>,
    pub reason: Option<String>,
}

impl SuitabilityScore {
    fn rejected(f_perf: f64, outcome: Outcome, reason: String) -> Self {
        Self {
            f_safety: None,
            f_perf,
            f_s: 1.0,
            outcome,
            t_star: None,
            p_matrix: None,
            reason: Some(reason),
        }
    }
}

/// Everything needed to score candidates of one design session.
#[derive(Debug, Clone)]
pub struct Assessor {
    pub config: DesignConfig,
    pub field: PreferenceField,
    pub dp_max: f64,
    pub x0: Vector2<f64>,
    pub region: Option<DStabRegion>,
    pub sdp: SdpOptions,
    model: TaskModel,
}

impl Assessor {
    pub fn new(model: &TaskModel, config: &DesignConfig) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        let dp_max = match config.dp_max {
            DpMax::Auto => extract_dp_max(model)?,
            DpMax::Meters(v) => v,
        };
        let region = if config.design == DesignVariant::D {
            Some(build_dstab_region(config.os_bar)?)
        } else {
            None
        };
        let [e0, de0] = model.initial_state();
        Ok(Self {
            config: config.clone(),
            field: build_field(&config.preference())?,
            dp_max,
            x0: Vector2::new(e0, de0),
            region,
            sdp: SdpOptions::default(),
            model: model.clone(),
        })
    }

    pub fn model(&self) -> &TaskModel {
        &self.model
    }

    /// LMI blocks of the configured design for one candidate, or `None`
    /// for Design A.
    pub fn blocks(&self, sol: &ControllerSolution) -> Result<Option<Vec<LmiBlock>>> {
        let design = self.config.design;
        if design == DesignVariant::A {
            return Ok(None);
        }
        let poly = build_polytope(sol, self.config.ts)?;
        let mut blocks = stability_blocks(&poly);
        if design.uses_effort() {
            blocks.extend(effort_error_blocks(&poly, self.dp_max, &self.x0)?);
        }
        if let Some(region) = &self.region {
            blocks.extend(dstab_blocks(&poly, region));
        }
        Ok(Some(blocks))
    }

    pub fn assess(&self, sol: &ControllerSolution) -> SuitabilityScore {
        let perf = f_perf(&self.field, sol);
        if !(sol.k_max > sol.k_min) {
            return SuitabilityScore::rejected(perf, Outcome::Rejected, "k_max must exceed k_min".into());
        }
        let sol = ControllerSolution { h: self.config.h, ..*sol };
        if let Err(e) = sol.validate() {
            return SuitabilityScore::rejected(perf, Outcome::Rejected, e.to_string());
        }
        if let Err(e) = build_profile(&self.model, &sol) {
            log::debug!("stiffness profile unavailable: {e}");
        }
        let blocks = match self.blocks(&sol) {
            Ok(Some(b)) => b,
            Ok(None) => {
                return SuitabilityScore {
                    f_safety: None,
                    f_perf: perf,
                    f_s: perf,
                    outcome: Outcome::Accepted,
                    t_star: None,
                    p_matrix: None,
                    reason: None,
                };
            }
            Err(e) => return SuitabilityScore::rejected(perf, Outcome::Rejected, e.to_string()),
        };
        let objective = if self.config.design.uses_effort() {
            Objective::MinEffort {
                t_hi: self.config.u_max_bar.powi(2),
            }
        } else {
            Objective::MinFrobeniusP
        };
        let problem = match SdpProblem::new(blocks, objective) {
            Ok(p) => p,
            Err(e) => return SuitabilityScore::rejected(perf, Outcome::Failed, e.to_string()),
        };
        let res = solve(&problem, &self.sdp);
        match res.status {
            SdpStatus::Optimal | SdpStatus::Feasible => {
                let f_safety = res.t_value.map(|t| t.max(0.0).sqrt() / self.config.u_max_bar);
                let f_s = match f_safety {
                    Some(s) => 0.5 * (s + perf),
                    None => perf,
                };
                SuitabilityScore {
                    f_safety,
                    f_perf: perf,
                    f_s,
                    outcome: Outcome::Accepted,
                    t_star: res.t_value,
                    p_matrix: Some(res.p_matrix),
                    reason: None,
                }
            }
            SdpStatus::Infeasible => SuitabilityScore::rejected(perf, Outcome::Rejected, "LMI set infeasible".into()),
            SdpStatus::NumericalFailure => {
                log::warn!(
                    "SDP numerical failure for k_max={} k_min={} d={}",
                    sol.k_max,
                    sol.k_min,
                    sol.d
                );
                SuitabilityScore::rejected(perf, Outcome::Failed, "SDP numerical failure".into())
            }
        }
    }
}

pub fn assess(sol: &ControllerSolution, model: &TaskModel, design: DesignVariant, cfg: &DesignConfig) -> Result<SuitabilityScore> {
    let cfg = DesignConfig { design, ..cfg.clone() };
    Ok(Assessor::new(model, &cfg)?.assess(sol))
}
