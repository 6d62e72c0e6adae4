use serde::{Deserialize, Serialize};

use super::grid::{Grid, GridField};
use super::solver::{solve_penalized_from, Method, PenaltyPoint, SolveOptions};
use super::PdeError;
use crate::kernel::{truncate_data, Penalty, TruncatedData};
use crate::model::ProblemSpec;
use crate::oracles::{compare_fields, Norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub eps: f64,
    pub delta: f64,
    pub m: f64,
}

/// `(eps, delta) = (2^-k, 2^-k)` for `k = 1..=k_max` at a fixed radius.
pub fn default_schedule(k_max: usize, m: f64) -> Vec<ScheduleEntry> {
    geometric_schedule(0.5, 0.5, k_max, m)
}

/// `(eps0 / 2^i, delta0 / 2^i)` for `i = 0..k`.
pub fn geometric_schedule(eps0: f64, delta0: f64, k: usize, m: f64) -> Vec<ScheduleEntry> {
    (0..k)
        .map(|i| {
            let s = 0.5f64.powi(i as i32);
            ScheduleEntry {
                eps: eps0 * s,
                delta: delta0 * s,
                m,
            }
        })
        .collect()
}

/// Grid resolution along the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPolicy {
    pub hx: f64,
    pub ht: f64,
    /// From this schedule index on, `hx` and `ht` are halved.
    pub refine_at: Option<usize>,
    /// Half-width of the box on which increments and the limit are reported;
    /// `None` uses `min m - 1`. Snapped down to the coarse grid.
    pub inner_radius: Option<f64>,
}

impl GridPolicy {
    pub fn uniform(hx: f64, ht: f64) -> Self {
        GridPolicy {
            hx,
            ht,
            refine_at: None,
            inner_radius: None,
        }
    }
}

impl GridPolicy {
    pub fn grid_for(&self, spec: &ProblemSpec, index: usize, m: f64) -> Result<Grid, PdeError> {
        let refine = self.refine_at.is_some_and(|r| index >= r);
        let s = if refine { 0.5 } else { 1.0 };
        Grid::with_steps(spec.dim, m, self.hx * s, self.ht * s, spec.horizon)
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub points: Vec<PenaltyPoint>,
    /// Last field restricted to `[-inner_radius, inner_radius]^d`.
    pub limit: GridField,
    pub inner_radius: f64,
    /// Sup-norm distance between consecutive restricted fields.
    pub increments: Vec<f64>,
}

/// A failed run together with the points solved before the failure.
#[derive(Debug, Clone)]
pub struct ContinuationFailure {
    pub partial: Vec<PenaltyPoint>,
    pub error: PdeError,
}

impl std::fmt::Display for ContinuationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "continuation failed after {} points: {}", self.partial.len(), self.error)
    }
}

impl std::error::Error for ContinuationFailure {}

fn validate(schedule: &[ScheduleEntry]) -> Result<(), PdeError> {
    if schedule.is_empty() {
        return Err(PdeError::Schedule("empty schedule".into()));
    }
    for e in schedule {
        if !(e.eps > 0.0 && e.eps < 1.0 && e.delta > 0.0 && e.delta < 1.0) {
            return Err(PdeError::Schedule(format!("eps and delta must lie in (0,1): {e:?}")));
        }
        if !(e.m >= 2.0) {
            return Err(PdeError::Schedule(format!("radius must be at least 2: {e:?}")));
        }
    }
    for w in schedule.windows(2) {
        if w[1].eps > w[0].eps || w[1].delta > w[0].delta || w[1].m < w[0].m {
            return Err(PdeError::Schedule(
                "eps and delta must be nonincreasing and m nondecreasing".into(),
            ));
        }
    }
    Ok(())
}

/// Largest grid-aligned radius not exceeding the requested one (at least one step).
fn inner_radius(schedule: &[ScheduleEntry], requested: Option<f64>, coarse_hx: f64) -> f64 {
    let m0 = schedule.iter().map(|e| e.m).fold(f64::INFINITY, f64::min);
    let m0 = requested.map_or(m0 - 1.0, |r| r.min(m0));
    let steps = (m0 / coarse_hx + 1e-9).floor().max(1.0);
    steps * coarse_hx
}

/// Solves every schedule point in order and tracks the Cauchy increments on the inner box.
pub fn continuation(
    spec: &ProblemSpec,
    schedule: &[ScheduleEntry],
    policy: &GridPolicy,
    opts: &SolveOptions,
) -> Result<ContinuationResult, ContinuationFailure> {
    let fail = |partial: Vec<PenaltyPoint>, error: PdeError| ContinuationFailure { partial, error };
    if let Err(e) = validate(schedule) {
        return Err(fail(Vec::new(), e));
    }
    let mut points: Vec<PenaltyPoint> = Vec::new();
    let mut data_cache: Vec<TruncatedData> = Vec::new();
    let mut opts = *opts;
    let r0 = {
        let g0 = match policy.grid_for(spec, 0, schedule[0].m) {
            Ok(g) => g,
            Err(e) => return Err(fail(points, e)),
        };
        inner_radius(schedule, policy.inner_radius, g0.hx)
    };
    let mut restricted: Vec<GridField> = Vec::new();
    let mut increments = Vec::new();
    for (i, entry) in schedule.iter().enumerate() {
        let grid = match policy.grid_for(spec, i, entry.m) {
            Ok(g) => g,
            Err(e) => return Err(fail(points, e)),
        };
        if !data_cache.iter().any(|d| d.m == entry.m) {
            match truncate_data(spec, entry.m) {
                Ok(d) => data_cache.push(d),
                Err(e) => return Err(fail(points, e.into())),
            }
        }
        let data = data_cache.iter().find(|d| d.m == entry.m).expect("cached above");
        let warm = match (opts.method, points.last()) {
            (Method::Picard { .. }, Some(prev)) => Some(resample(&prev.field, &grid)),
            _ => None,
        };
        let pen = Penalty::new(entry.eps);
        let point = match solve_penalized_from(&grid, data, &pen, entry.delta, &opts, warm.as_ref()) {
            Ok(p) => p,
            Err(e) => return Err(fail(points, e)),
        };
        if opts.constants.k3.is_none() {
            opts.constants.k3 = Some(point.bound_report["quadratic_growth"].observed);
        }
        let r = match point.field.restrict(r0) {
            Ok(r) => r,
            Err(e) => return Err(fail(points, e)),
        };
        if let Some(prev) = restricted.last() {
            match compare_fields(prev, &r, Norm::Sup) {
                Ok(d) => increments.push(d),
                Err(e) => return Err(fail(points, e)),
            }
        }
        restricted.push(r);
        points.push(point);
    }
    let limit = restricted.pop().expect("nonempty schedule");
    Ok(ContinuationResult {
        points,
        limit,
        inner_radius: r0,
        increments,
    })
}

/// Interpolates a field onto another grid (points outside keep the nearest value).
fn resample(field: &GridField, grid: &Grid) -> GridField {
    GridField::from_fn(grid, |t, x| {
        let clamped: Vec<f64> = x.iter().map(|v| v.clamp(-field.grid.radius, field.grid.radius)).collect();
        field.interpolate(t, &clamped).unwrap_or(0.0)
    })
}
