//! Problem files.
//!
//! A problem file is TOML. The top level holds the game data; optional
//! tables configure the assumption sampler, the solver and the simulator.
//! Unknown keys are rejected everywhere.
//!
//! ```toml
//! dim = 1
//! horizon = 1.0
//! rate = 0.02
//! drift = ["-x1"]
//! sigma = [["0.5"]]
//! f = "0.41"
//! g = "exp(-x1^2/8)"
//! h = "0.8*exp(-(x1^2-6)^2/8)"
//!
//! [solve]
//! radius = 7.0
//! hx = 0.02
//! ht = 2e-4
//!
//! [simulate]
//! paths = 10000
//! starts = [[0.0, 0.0], [0.0, 1.5]]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assumptions::SamplePlan;
use crate::model::{ProblemSpec, SpecError, SpecSource};
use crate::pde::{default_schedule, geometric_schedule, GradientScheme, GridPolicy, Method, ScheduleEntry, SolveOptions};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed problem file: {0}")]
    Parse(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub dim: usize,
    pub horizon: f64,
    pub rate: f64,
    pub drift: Vec<String>,
    pub sigma: Vec<Vec<String>>,
    pub f: String,
    pub g: String,
    pub h: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_plan: Option<SamplePlanConfig>,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
}

/// [`SamplePlan`] with every key optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePlanConfig {
    pub radii: Option<Vec<f64>>,
    pub counts: Option<usize>,
    pub rng_seed: Option<u64>,
    pub lattice_space: Option<usize>,
    pub lattice_time: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Newton,
    Picard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    /// Truncation radius `m`.
    pub radius: f64,
    pub hx: f64,
    pub ht: f64,
    pub eps0: f64,
    pub delta0: f64,
    /// Number of schedule points; `eps` and `delta` halve at each.
    pub steps: usize,
    pub refine_at: Option<usize>,
    pub inner_radius: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub method: MethodName,
    pub omega: f64,
    pub gradient: GradientScheme,
    /// Region tolerance of the report; defaults to `10 hx`.
    pub tol_region: Option<f64>,
    /// Time slices written as CSV/PGM.
    pub slices: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            radius: 4.0,
            hx: 0.05,
            ht: 0.005,
            eps0: 0.5,
            delta0: 0.5,
            steps: 4,
            refine_at: None,
            inner_radius: None,
            tol: 1e-10,
            max_iter: 60,
            method: MethodName::Newton,
            omega: 1.0,
            gradient: GradientScheme::Upwind,
            tol_region: None,
            slices: 5,
        }
    }
}

impl SolveConfig {
    pub fn schedule(&self) -> Vec<ScheduleEntry> {
        if self.eps0 == 0.5 && self.delta0 == 0.5 {
            default_schedule(self.steps, self.radius)
        } else {
            geometric_schedule(self.eps0, self.delta0, self.steps, self.radius)
        }
    }

    pub fn policy(&self) -> GridPolicy {
        GridPolicy {
            hx: self.hx,
            ht: self.ht,
            refine_at: self.refine_at,
            inner_radius: self.inner_radius,
        }
    }

    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            method: match self.method {
                MethodName::Newton => Method::LevelNewton,
                MethodName::Picard => Method::Picard { omega: self.omega },
            },
            scheme: self.gradient,
            ..SolveOptions::default()
        }
    }

    pub fn tol_region(&self) -> f64 {
        self.tol_region.unwrap_or(10.0 * self.hx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub quadrature_points: usize,
    /// Start points `[t, x1, ..., xd]`.
    pub starts: Vec<Vec<f64>>,
    /// Stopping band of `tau*`; defaults to `hx^2`.
    pub band: Option<f64>,
    /// Discretization allowance of the saddle probes.
    pub allowance: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            paths: 10_000,
            steps: 1000,
            seed: 1,
            antithetic: true,
            quadrature_points: 4,
            starts: Vec::new(),
            band: None,
            allowance: 2e-2,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Canonical serialization (defaults filled in), used for hashing runs.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn spec(&self) -> Result<ProblemSpec, ConfigError> {
        Ok(ProblemSpec::from_source(&SpecSource {
            dim: self.dim,
            horizon: self.horizon,
            rate: self.rate,
            drift: self.drift.iter().map(String::as_str).collect(),
            sigma: self.sigma.iter().map(|r| r.iter().map(String::as_str).collect()).collect(),
            f: &self.f,
            g: &self.g,
            h: &self.h,
            fd_step: self.fd_step,
        })?)
    }

    pub fn sample_plan(&self) -> SamplePlan {
        let mut plan = SamplePlan::default();
        if let Some(p) = &self.sample_plan {
            if let Some(r) = &p.radii {
                plan.radii.clone_from(r);
            }
            plan.counts = p.counts.unwrap_or(plan.counts);
            plan.rng_seed = p.rng_seed.unwrap_or(plan.rng_seed);
            plan.lattice_space = p.lattice_space.unwrap_or(plan.lattice_space);
            plan.lattice_time = p.lattice_time.unwrap_or(plan.lattice_time);
        }
        plan
    }

    fn check(&self) -> Result<(), ConfigError> {
        let s = &self.solve;
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(s.hx > 0.0 && s.ht > 0.0) {
            return bad("solve.hx and solve.ht must be positive");
        }
        if s.steps == 0 {
            return bad("solve.steps must be at least 1");
        }
        if !(s.radius >= 2.0) {
            return bad("solve.radius must be at least 2");
        }
        if !(s.omega > 0.0 && s.omega <= 1.0) {
            return bad("solve.omega must lie in (0, 1]");
        }
        let sim = &self.simulate;
        if sim.paths < 2 || sim.steps == 0 || sim.quadrature_points == 0 {
            return bad("simulate.paths >= 2, simulate.steps >= 1 and simulate.quadrature_points >= 1 are required");
        }
        for st in &sim.starts {
            if st.len() != self.dim + 1 {
                return bad("each simulate.starts entry is [t, x1, ..., xd]");
            }
        }
        Ok(())
    }
}

/// Bundled problem files by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    Some(match name {
        "all-zero" => include_str!("../../../configs/all-zero.toml"),
        "const1" => include_str!("../../../configs/const1.toml"),
        "bench-ou" => include_str!("../../../configs/bench-ou.toml"),
        "bench-ou-stopping" => include_str!("../../../configs/bench-ou-stopping.toml"),
        "bench-ou-2d" => include_str!("../../../configs/bench-ou-2d.toml"),
        _ => return None,
    })
}

pub const BUNDLED: [&str; 5] = ["all-zero", "const1", "bench-ou", "bench-ou-stopping", "bench-ou-2d"];
