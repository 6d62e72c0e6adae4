//! Invariant suites for every module, plus the manufactured-solution order check.
//!
//! Each invariant runs either over randomized cases (seeded, reproducible and
//! independent of the thread count) or over the nodes/points of a computed
//! object, and reports its number of failures and its worst excess.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assumptions::AssumptionReport;
use crate::expr::{Expression, ParseError};
use crate::kernel::{cutoff_constant, hamiltonian, build_cutoff, truncate_data, KernelError, Penalty, TruncatedData};
use crate::model::{ProblemSpec, SpecSource};
use crate::oracles::{solve_lattice_game, solve_obstacle, LatticeGame, ObstacleError, ObstacleProblem};
use crate::pde::{
    constraint_violations, gamma_step, vi_report, ContinuationResult, DataPoint, DataSource, Grid, GridField,
    PdeError, RawData,
};
use crate::sim::{
    simulate_penalized, simulate_recursive, ControllerMode, FeedbackStrategy, PathConfig, SimError, StopperMode,
    MAX_EXIT_FRACTION,
};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Obstacle(#[from] ObstacleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{0}")]
    Setup(String),
}

/// Outcome of one invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantResult {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest excess over the allowed value; positive exactly when something failed.
    pub worst: f64,
    /// Inputs of the worst case.
    pub witness: Vec<f64>,
}

impl InvariantResult {
    pub fn pass(&self) -> bool {
        self.failures == 0
    }

    /// Tallies `excess` values (`> 0` is a failure) for a deterministic sweep.
    fn tally(name: &str, cases: impl IntoIterator<Item = (f64, Vec<f64>)>) -> Self {
        let mut out = InvariantResult {
            name: name.to_string(),
            cases: 0,
            failures: 0,
            worst: f64::NEG_INFINITY,
            witness: Vec::new(),
        };
        for (excess, at) in cases {
            out.absorb(excess, &at);
        }
        out
    }

    fn absorb(&mut self, excess: f64, at: &[f64]) {
        self.cases += 1;
        // NaN counts as a failure
        let failed = !(excess <= 0.0);
        if failed {
            self.failures += 1;
        }
        let excess = if excess.is_nan() { f64::INFINITY } else { excess };
        if excess > self.worst {
            self.worst = excess;
            self.witness = at.to_vec();
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.cases += other.cases;
        self.failures += other.failures;
        if other.worst > self.worst {
            self.worst = other.worst;
            self.witness = other.witness;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub results: Vec<InvariantResult>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(InvariantResult::pass)
    }

    pub fn get(&self, name: &str) -> Option<&InvariantResult> {
        self.results.iter().find(|r| r.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &InvariantResult> {
        self.results.iter().filter(|r| !r.pass())
    }
}

/// Cases per parallel chunk; each chunk draws from its own RNG stream.
const CHUNK: usize = 2048;

/// Runs `check` on `cases` random draws. `check` returns the excess (`> 0` fails)
/// and the inputs it drew.
fn randomized<F>(name: &str, cases: usize, seed: u64, stream: u64, check: F) -> InvariantResult
where
    F: Fn(&mut ChaCha8Rng) -> (f64, [f64; 6]) + Sync,
{
    let chunks = cases.div_ceil(CHUNK);
    let empty = InvariantResult::tally(name, std::iter::empty());
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((stream << 32) | c as u64);
            let n = CHUNK.min(cases - c * CHUNK);
            let mut part = InvariantResult::tally(name, std::iter::empty());
            for _ in 0..n {
                let (excess, at) = check(&mut rng);
                part.absorb(excess, &at);
            }
            part
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(empty, InvariantResult::merge)
}

// ---------------------------------------------------------------------------
// Kernel

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSuiteSettings {
    /// Randomized cases per invariant.
    pub cases: usize,
    pub seed: u64,
    /// Truncation radius for the `|grad g_m| <= f_m` check.
    pub radius: f64,
    /// Test hook: run the penalty checks against a non-convex bridge.
    pub corrupted_bridge: bool,
}

impl Default for KernelSuiteSettings {
    fn default() -> Self {
        KernelSuiteSettings {
            cases: 100_000,
            seed: 7,
            radius: 4.0,
            corrupted_bridge: false,
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// A random vector of dimension 1 or 2 with norm up to `scale`.
fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> ([f64; 2], usize) {
    let d = if rng.random_bool(0.5) { 1 } else { 2 };
    let mut y = [0.0; 2];
    for v in y.iter_mut().take(d) {
        *v = rng.random_range(-scale..scale);
    }
    (y, d)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Invariants of `psi_eps`, the Hamiltonian, the cut-off and the truncated data.
pub fn kernel_suite(spec: &ProblemSpec, settings: &KernelSuiteSettings) -> Result<SuiteReport, VerifyError> {
    let start = Instant::now();
    let n = settings.cases;
    let seed = settings.seed;
    let corrupted = settings.corrupted_bridge;
    let penalty = move |eps: f64| {
        if corrupted {
            Penalty::with_corrupted_bridge(eps)
        } else {
            Penalty::new(eps)
        }
    };
    let mut results = Vec::new();

    results.push(randomized("psi_convexity", n, seed, 1, |rng| {
        let eps = log_uniform(rng, 1e-3, 0.9);
        let pen = penalty(eps);
        let a = rng.random_range(-eps..3.0 * eps);
        let b = rng.random_range(-eps..3.0 * eps);
        let mid = pen.psi(0.5 * (a + b)) - 0.5 * (pen.psi(a) + pen.psi(b));
        let excess = (-pen.d2psi(a) * eps * eps)
            .max(-pen.dpsi(a) * eps)
            .max(mid - 1e-13);
        (excess, [eps, a, b, 0.0, 0.0, 0.0])
    }));

    results.push(randomized("psi_c2", n, seed, 2, |rng| {
        let eps = log_uniform(rng, 1e-3, 0.9);
        let pen = penalty(eps);
        // continuity of psi, psi', psi'' across the junctions, on the natural scales
        let y0 = if rng.random_bool(0.5) { 0.0 } else { 2.0 * eps };
        let h = eps * 1e-9 * rng.random_range(0.1..1.0);
        let mut excess = f64::NEG_INFINITY;
        for order in 0..3u8 {
            let scale = eps.powi(order as i32);
            let jump = (pen.eval(y0 + h, order) - pen.eval(y0 - h, order)).abs() * scale;
            excess = excess.max(jump - 1e-6);
        }
        // derivatives agree with central differences at a random point
        let y = rng.random_range(-eps..3.0 * eps);
        let k = 1e-6 * eps;
        let fd1 = (pen.psi(y + k) - pen.psi(y - k)) / (2.0 * k);
        let fd2 = (pen.dpsi(y + k) - pen.dpsi(y - k)) / (2.0 * k);
        excess = excess.max((fd1 - pen.dpsi(y)).abs() * eps - 1e-6);
        excess = excess.max((fd2 - pen.d2psi(y)).abs() * eps * eps - 1e-5);
        (excess, [eps, y0, y, 0.0, 0.0, 0.0])
    }));

    results.push(randomized("psi_anchors", n, seed, 3, |rng| {
        let eps = log_uniform(rng, 1e-3, 0.9);
        let pen = penalty(eps);
        let neg = -rng.random_range(0.0..10.0);
        let lin = 2.0 * eps + rng.random_range(0.0..10.0);
        let excess = [
            pen.psi(neg).abs(),
            pen.dpsi(neg).abs() * eps,
            (pen.psi(2.0 * eps) - 1.0).abs(),
            (pen.dpsi(2.0 * eps) * eps - 1.0).abs(),
            (pen.psi(eps) - 0.1875).abs(),
            (pen.psi(lin) - (lin - eps) / eps).abs() / (1.0 + lin / eps),
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
            - 1e-12;
        (excess, [eps, neg, lin, 0.0, 0.0, 0.0])
    }));

    let ham = |pen: &Penalty, f: f64, y: &[f64]| hamiltonian(pen, f, y).map(|(h, p)| (h, p)).ok();

    results.push(randomized("hamiltonian_lower_bound", n, seed, 4, |rng| {
        let eps = log_uniform(rng, 1e-3, 0.9);
        let pen = Penalty::new(eps);
        let f = rng.random_range(0.0..3.0);
        let scale = log_uniform(rng, 1e-3, 50.0);
        let (y, d) = random_vec(rng, scale);
        let excess = match ham(&pen, f, &y[..d]) {
            Some((h, _)) => eps * dot(&y, &y) / 4.0 - h - 1e-10 * (1.0 + h.abs()),
            None => f64::INFINITY,
        };
        (excess, [eps, f, y[0], y[1], 0.0, 0.0])
    }));

    results.push(randomized("hamiltonian_maximality", n, seed, 5, |rng| {
        let eps = log_uniform(rng, 1e-3, 0.9);
        let pen = Penalty::new(eps);
        let f = rng.random_range(0.0..3.0);
        let (y, d) = random_vec(rng, 20.0);
        let mut p = [0.0; 2];
        for v in p.iter_mut().take(d) {
            *v = rng.random_range(-6.0..6.0);
        }
        let excess = match ham(&pen, f, &y[..d]) {
            Some((h, _)) => dot(&y, &p) - pen.psi(dot(&p, &p) - f * f) - h - 1e-10 * (1.0 + h.abs()),
            None => f64::INFINITY,
        };
        (excess, [eps, f, y[0], y[1], p[0], p[1]])
    }));

    results.push(randomized("hamiltonian_at_zero", n, seed, 6, |rng| {
        let eps = log_uniform(rng, 1e-3, 0.9);
        let f = rng.random_range(0.0..10.0);
        let d = if rng.random_bool(0.5) { 1 } else { 2 };
        let excess = match ham(&Penalty::new(eps), f, &[0.0; 2][..d]) {
            Some((h, p)) if h == 0.0 && p.iter().all(|v| *v == 0.0) => -1.0,
            _ => 1.0,
        };
        (excess, [eps, f, d as f64, 0.0, 0.0, 0.0])
    }));

    results.push(randomized("obstacle_compatibility", n, seed, 7, |rng| {
        let eps = log_uniform(rng, 1e-3, 0.9);
        let f = rng.random_range(0.0..3.0);
        let (y, d) = random_vec(rng, 20.0);
        // q uniform in the ball of radius f
        let (mut q, _) = random_vec(rng, 1.0);
        let qn = dot(&q, &q).sqrt();
        if qn > 0.0 {
            let r = f * rng.random_range(0.0f64..1.0).powf(1.0 / d as f64);
            for v in q.iter_mut() {
                *v *= r / qn;
            }
        }
        if d == 1 {
            q[1] = 0.0;
        }
        let excess = match ham(&Penalty::new(eps), f, &y[..d]) {
            Some((h, _)) => -dot(&y, &q) - h - 1e-10 * (1.0 + h.abs()),
            None => f64::INFINITY,
        };
        (excess, [eps, f, y[0], y[1], q[0], q[1]])
    }));

    results.push(randomized("cost_monotonicity", n, seed, 8, |rng| {
        let eps = log_uniform(rng, 1e-3, 0.9);
        let pen = Penalty::new(eps);
        let a: f64 = rng.random_range(0.0..3.0);
        let b: f64 = rng.random_range(0.0..3.0);
        let (lo, hi) = (a.min(b), a.max(b));
        let (y, d) = random_vec(rng, 20.0);
        let excess = match (ham(&pen, lo, &y[..d]), ham(&pen, hi, &y[..d])) {
            (Some((h_lo, _)), Some((h_hi, _))) => h_lo - h_hi - 1e-10 * (1.0 + h_hi.abs()),
            _ => f64::INFINITY,
        };
        (excess, [eps, lo, hi, y[0], y[1], 0.0])
    }));

    let c0 = cutoff_constant();
    results.push(randomized("cutoff_bound", n, seed, 9, |rng| {
        let m = rng.random_range(1.0..10.0);
        let cut = build_cutoff(m);
        let (mut x, d) = random_vec(rng, 1.0);
        let r = m + rng.random_range(-0.5..1.5);
        let xn = dot(&x, &x).sqrt().max(1e-300);
        for v in x.iter_mut() {
            *v *= r / xn;
        }
        let mut g = [0.0; 2];
        cut.gradient(&x[..d], &mut g[..d]);
        let value = cut.value(&x[..d]);
        let excess = (dot(&g, &g) - c0 * value).max(-value).max(value - 1.0);
        (excess, [m, x[0], x[1], value, 0.0, 0.0])
    }));

    let data = truncate_data(spec, settings.radius)?;
    results.push(gradient_domination(&data, n, seed));

    Ok(SuiteReport {
        suite: "kernel".into(),
        results,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// `|grad g_m| <= f_m` at random points of `[0,T] x B_{m+1}`, half of them in the cut-off annulus.
fn gradient_domination(data: &TruncatedData, n: usize, seed: u64) -> InvariantResult {
    let m = data.m;
    let d = data.spec.dim;
    let horizon = data.spec.horizon;
    randomized("truncated_gradient_domination", n, seed, 10, |rng| {
        let t = rng.random_range(0.0..=horizon);
        let r = if rng.random_bool(0.5) {
            rng.random_range(m - 1.0..m)
        } else {
            (m + 1.0) * rng.random_range(0.0f64..1.0).powf(1.0 / d as f64)
        };
        let mut x = [0.0; 2];
        if d == 1 {
            x[0] = if rng.random_bool(0.5) { r } else { -r };
        } else {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            x = [r * a.cos(), r * a.sin()];
        }
        let excess = match data.point(t, &x[..d]) {
            Ok(p) => dot(&p.grad_g, &p.grad_g).sqrt() - p.f - 1e-12 * (1.0 + p.f),
            Err(_) => f64::INFINITY,
        };
        (excess, [t, x[0], x[1], 0.0, 0.0, 0.0])
    })
}

// ---------------------------------------------------------------------------
// Model

/// One invariant per validity gate of the assumption report.
pub fn model_suite(report: &AssumptionReport) -> SuiteReport {
    let mut by_check: BTreeMap<&str, InvariantResult> = BTreeMap::new();
    for gate in ["ellipticity", "grad_g_le_f", "f_time_monotone"] {
        by_check.insert(gate, InvariantResult::tally(gate, std::iter::empty()));
    }
    for v in &report.violations {
        let entry = by_check
            .entry(v.check.as_str())
            .or_insert_with(|| InvariantResult::tally(&v.check, std::iter::empty()));
        let mut at = vec![v.t];
        at.extend(&v.x);
        entry.absorb(if v.value.is_nan() { f64::NAN } else { v.value.abs().max(f64::MIN_POSITIVE) }, &at);
    }
    let samples = report.samples;
    let results = by_check
        .into_values()
        .map(|mut r| {
            r.cases = samples.max(r.cases);
            if r.failures == 0 {
                r.worst = 0.0;
            }
            r
        })
        .collect();
    SuiteReport {
        suite: "model".into(),
        results,
        seconds: 0.0,
    }
}

// ---------------------------------------------------------------------------
// PDE

/// Thresholds of the PDE suite, in units of the limit grid step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeSuiteSettings {
    /// Region tolerance passed to the VI report.
    pub tol_region: f64,
    /// Each VI residual must stay below `residual_factor * hx`.
    pub residual_factor: f64,
    /// The two orders may differ by at most `difference_factor * hx`.
    pub difference_factor: f64,
    /// Rounding allowance for "nonincreasing along the schedule".
    pub monotone_slack: f64,
}

impl PdeSuiteSettings {
    pub fn for_hx(hx: f64) -> Self {
        PdeSuiteSettings {
            tol_region: 10.0 * hx,
            residual_factor: 20.0,
            difference_factor: 10.0,
            monotone_slack: 1e-12,
        }
    }
}

/// Constraint violations of every schedule point, measured on the inner box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintTrack {
    /// `max (g - u)^+` per point.
    pub obstacle: Vec<f64>,
    /// `max (|grad u| - f)^+` per point.
    pub gradient: Vec<f64>,
}

pub fn constraint_track(spec: &ProblemSpec, run: &ContinuationResult) -> Result<ConstraintTrack, PdeError> {
    let raw = RawData(spec);
    let mut track = ConstraintTrack {
        obstacle: Vec::new(),
        gradient: Vec::new(),
    };
    for p in &run.points {
        let inner = p.field.restrict(run.inner_radius)?;
        let (o, g) = constraint_violations(&inner, &raw)?;
        track.obstacle.push(o);
        track.gradient.push(g);
    }
    Ok(track)
}

/// Largest increase of a sequence (`<= 0` when nonincreasing).
pub fn largest_increase(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

/// A-priori bounds of every schedule point, constraint recovery and VI residuals at the limit.
pub fn pde_suite(
    spec: &ProblemSpec,
    run: &ContinuationResult,
    settings: &PdeSuiteSettings,
) -> Result<SuiteReport, VerifyError> {
    let start = Instant::now();
    let mut results = Vec::new();
    let mut names: Vec<&String> = run.points.iter().flat_map(|p| p.bound_report.keys()).collect();
    names.sort();
    names.dedup();
    for name in names {
        let cases = run.points.iter().enumerate().filter_map(|(i, p)| {
            p.bound_report
                .get(name)
                .map(|b| (b.observed - b.bound - b.slack, vec![i as f64, b.observed, b.bound]))
        });
        results.push(InvariantResult::tally(&format!("bound:{name}"), cases));
    }
    let track = constraint_track(spec, run)?;
    for (name, seq) in [
        ("obstacle_violation_nonincreasing", &track.obstacle),
        ("gradient_violation_nonincreasing", &track.gradient),
    ] {
        let cases = seq
            .windows(2)
            .enumerate()
            .map(|(i, w)| (w[1] - w[0] - settings.monotone_slack, vec![i as f64 + 1.0, w[0], w[1]]));
        results.push(InvariantResult::tally(name, cases));
    }
    let hx = run.limit.grid.hx;
    let vi = vi_report(&run.limit, spec, settings.tol_region)?;
    let limits = [
        ("vi_residual_minmax", vi.sup_minmax, settings.residual_factor * hx),
        ("vi_residual_maxmin", vi.sup_maxmin, settings.residual_factor * hx),
        ("vi_order_difference", vi.sup_difference, settings.difference_factor * hx),
    ];
    for (name, observed, limit) in limits {
        results.push(InvariantResult::tally(name, [(observed - limit, vec![observed, limit])]));
    }
    Ok(SuiteReport {
        suite: "pde".into(),
        results,
        seconds: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Oracles

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSuiteSettings {
    pub radius: f64,
    pub hx: f64,
    pub ht: f64,
    pub obstacle_tol: f64,
    pub max_sweeps: usize,
    /// Amount added to `h` for the data-monotonicity check of the lattice.
    pub reward_shift: f64,
}

impl OracleSuiteSettings {
    pub fn new(radius: f64, hx: f64, ht: f64) -> Self {
        OracleSuiteSettings {
            radius,
            hx,
            ht,
            obstacle_tol: 1e-10,
            max_sweeps: 20_000,
            reward_shift: 0.1,
        }
    }
}

fn shifted_reward(spec: &ProblemSpec, shift: f64) -> Result<ProblemSpec, ParseError> {
    let mut out = spec.clone();
    out.h = Expression::parse(&format!("({}) + {shift}", spec.h.source()), spec.dim)?;
    Ok(out)
}

/// Obstacle-solver complementarity and dominance; for `d = 1` also the
/// lattice's well-formedness, weak duality and data monotonicity.
pub fn oracle_suite(spec: &ProblemSpec, settings: &OracleSuiteSettings) -> Result<SuiteReport, VerifyError> {
    let start = Instant::now();
    let mut results = Vec::new();
    let grid = Grid::with_steps(spec.dim, settings.radius, settings.hx, settings.ht, spec.horizon)?;
    let data = RawData(spec);
    let prob = ObstacleProblem {
        grid: grid.clone(),
        data: &data,
    };
    let sol = solve_obstacle(&prob, settings.obstacle_tol, settings.max_sweeps)?;
    results.push(InvariantResult::tally(
        "obstacle_complementarity",
        [(sol.complementarity - settings.obstacle_tol, vec![sol.complementarity])],
    ));
    let g = GridField::from_fn(&grid, |t, x| spec.g.eval(t, x).unwrap_or(f64::NAN));
    let dominance = sol
        .field
        .values
        .iter()
        .zip(&g.values)
        .enumerate()
        .map(|(i, (u, g))| (g - u - 1e-12, vec![i as f64, *u, *g]));
    results.push(InvariantResult::tally("obstacle_dominates_payoff", dominance));

    if spec.dim == 1 {
        // the explicit lattice needs a step small enough for valid probabilities
        let mut game = LatticeGame {
            spec,
            radius: settings.radius,
            eta: settings.hx,
            dt: settings.ht,
        };
        let mut lat = solve_lattice_game(&game)?;
        for _ in 0..8 {
            if lat.probability_defect <= 0.0 {
                break;
            }
            game.dt *= 0.5;
            lat = solve_lattice_game(&game)?;
        }
        results.push(InvariantResult::tally(
            "lattice_probabilities",
            [(lat.probability_defect, vec![lat.probability_defect])],
        ));
        let duality = lat
            .value_maxmin
            .values
            .iter()
            .zip(&lat.value_minmax.values)
            .enumerate()
            .map(|(i, (lo, hi))| (lo - hi - 1e-12, vec![i as f64, *lo, *hi]));
        results.push(InvariantResult::tally("lattice_weak_duality", duality));
        let richer = shifted_reward(spec, settings.reward_shift)?;
        let lat2 = solve_lattice_game(&LatticeGame { spec: &richer, ..game })?;
        let monotone = lat
            .value_minmax
            .values
            .iter()
            .zip(&lat2.value_minmax.values)
            .enumerate()
            .map(|(i, (a, b))| (a - b - 1e-12, vec![i as f64, *a, *b]));
        results.push(InvariantResult::tally("lattice_reward_monotone", monotone));
    }
    Ok(SuiteReport {
        suite: "oracles".into(),
        results,
        seconds: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Simulation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSuiteSettings {
    pub paths: PathConfig,
    /// Start points `(t, x)`.
    pub starts: Vec<(f64, Vec<f64>)>,
    /// Discretization allowance added to `3 * std_error`.
    pub allowance: f64,
}

/// Probabilistic representation of a solved penalty point, plus the
/// bookkeeping invariants of the estimator.
pub fn sim_suite(
    data: &TruncatedData,
    field: &GridField,
    eps: f64,
    delta: f64,
    settings: &SimSuiteSettings,
) -> Result<SuiteReport, VerifyError> {
    let start = Instant::now();
    let pen = Penalty::new(eps);
    let ctrl = FeedbackStrategy::controller(field, pen, ControllerMode::Optimal);
    let w = FeedbackStrategy::stopper(field, delta, 0.0, StopperMode::WStar);
    let mut rep = InvariantResult::tally("representation", std::iter::empty());
    let mut books = InvariantResult::tally("breakdown_sums_to_mean", std::iter::empty());
    let mut exits = InvariantResult::tally("exit_fraction", std::iter::empty());
    let mut repro = InvariantResult::tally("reproducible", std::iter::empty());
    for (i, (t, x)) in settings.starts.iter().enumerate() {
        let u = field
            .interpolate(*t, x)
            .ok_or_else(|| VerifyError::Setup(format!("start {x:?} lies outside the field")))?;
        let pe = simulate_penalized(data, (*t, x), &ctrl, &w, &settings.paths)?;
        let re = simulate_recursive(data, delta, field, (*t, x), &ctrl, &settings.paths)?;
        for (kind, e) in [(0.0, &pe), (1.0, &re)] {
            let margin = 3.0 * e.std_error + settings.allowance;
            rep.absorb((e.mean - u).abs() - margin, &[i as f64, kind, e.mean, u, margin]);
            let b = e.breakdown;
            let sum = b.terminal + b.running + b.control;
            books.absorb((sum - e.mean).abs() - 1e-12 * (1.0 + e.mean.abs()), &[i as f64, kind, sum, e.mean]);
            exits.absorb(e.exit_fraction - MAX_EXIT_FRACTION, &[i as f64, kind, e.exit_fraction]);
        }
        if i == 0 {
            let again = simulate_penalized(data, (*t, x), &ctrl, &w, &settings.paths)?;
            repro.absorb(if again == pe { -1.0 } else { 1.0 }, &[i as f64]);
        }
    }
    Ok(SuiteReport {
        suite: "sim".into(),
        results: vec![rep, books, exits, repro],
        seconds: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Manufactured solution

/// Heat problem `u_t + u_xx + h = psi(...)` with exact solution `w = e^{-t} sin x`.
///
/// The cost `f = 1/2` lies below `|w_x|` on part of the domain, so the
/// frozen gradient penalty is active there; `h` compensates it exactly.
struct Manufactured {
    spec: ProblemSpec,
    pen: Penalty,
    cost: f64,
}

impl Manufactured {
    fn new(pen: Penalty) -> Result<Self, VerifyError> {
        let spec = ProblemSpec::from_source(&SpecSource {
            dim: 1,
            horizon: 0.5,
            rate: 0.0,
            drift: vec!["0"],
            sigma: vec![vec!["sqrt(2)"]],
            f: "0.5",
            g: "exp(-t)*sin(x1)",
            h: "0",
            fd_step: None,
        })
        .map_err(|e| VerifyError::Setup(e.to_string()))?;
        Ok(Manufactured { spec, pen, cost: 0.5 })
    }

    fn exact(t: f64, x: f64) -> f64 {
        (-t).exp() * x.sin()
    }

    fn source(&self, t: f64, x: f64) -> f64 {
        let w = Self::exact(t, x);
        let wx = (-t).exp() * x.cos();
        2.0 * w + self.pen.psi(wx * wx - self.cost * self.cost)
    }
}

impl DataSource for Manufactured {
    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn point(&self, t: f64, x: &[f64]) -> Result<DataPoint, KernelError> {
        Ok(DataPoint {
            g: Self::exact(t, x[0]),
            h: self.source(t, x[0]),
            f: self.cost,
        })
    }

    fn time_dependent(&self) -> bool {
        true
    }

    fn theta(&self, t: f64, x: &[f64]) -> Result<f64, KernelError> {
        let wx = (-t).exp() * x[0].cos();
        Ok(self.pen.psi(wx * wx - self.cost * self.cost))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedReport {
    pub hx: Vec<f64>,
    /// Max-norm error over all nodes and levels.
    pub errors: Vec<f64>,
    /// `log2(e_i / e_{i+1}) / log2(hx_i / hx_{i+1})`.
    pub orders: Vec<f64>,
}

impl ManufacturedReport {
    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Convergence of [`gamma_step`] on the manufactured problem, with the exact
/// solution frozen into the penalty source and `ht = hx^2 / 4`.
pub fn manufactured_order(hx: &[f64]) -> Result<ManufacturedReport, VerifyError> {
    if hx.len() < 2 {
        return Err(VerifyError::Setup("need at least two grids".into()));
    }
    let problem = Manufactured::new(Penalty::new(0.1))?;
    let mut errors = Vec::with_capacity(hx.len());
    for &h in hx {
        let grid = Grid::with_steps(1, 2.0, h, h * h / 4.0, problem.spec.horizon)?;
        let exact = GridField::from_fn(&grid, |t, x| Manufactured::exact(t, x[0]));
        // delta is irrelevant: the frozen field equals the obstacle
        let w = gamma_step(&grid, &problem, &problem.pen, 1.0, &exact)?;
        let err = w.values.iter().zip(&exact.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        errors.push(err);
    }
    let orders = errors
        .windows(2)
        .zip(hx.windows(2))
        .map(|(e, h)| (e[0] / e[1]).log2() / (h[0] / h[1]).log2())
        .collect();
    Ok(ManufacturedReport {
        hx: hx.to_vec(),
        errors,
        orders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::benches;

    fn small(corrupted: bool) -> KernelSuiteSettings {
        KernelSuiteSettings {
            cases: 5_000,
            corrupted_bridge: corrupted,
            ..KernelSuiteSettings::default()
        }
    }

    #[test]
    fn kernel_suite_passes_on_benches() {
        for spec in [benches::ou_bump(), benches::const1(), benches::ou_bump_2d()] {
            let report = kernel_suite(&spec, &small(false)).unwrap();
            for r in &report.results {
                assert!(r.pass(), "{r:?}");
                assert_eq!(r.cases, 5_000);
            }
        }
    }

    #[test]
    fn corrupted_bridge_breaks_convexity() {
        let report = kernel_suite(&benches::ou_bump(), &small(true)).unwrap();
        assert!(!report.passed());
        assert!(report.get("psi_convexity").unwrap().failures > 0);
        // the Hamiltonian checks use the genuine penalty
        assert!(report.get("hamiltonian_lower_bound").unwrap().pass());
    }

    #[test]
    fn randomized_runs_are_thread_independent() {
        let run = || kernel_suite(&benches::ou_bump(), &small(true)).unwrap().results;
        let a = run();
        let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(run);
        assert_eq!(a, b);
    }

    #[test]
    fn nan_counts_as_failure() {
        let r = InvariantResult::tally("x", [(f64::NAN, vec![1.0]), (-1.0, vec![2.0])]);
        assert_eq!(r.failures, 1);
        assert_eq!(r.witness, vec![1.0]);
    }

    #[test]
    fn model_suite_reflects_violations() {
        use crate::assumptions::{validate_assumptions, SamplePlan};
        let plan = SamplePlan {
            counts: 200,
            ..SamplePlan::default()
        };
        let ok = model_suite(&validate_assumptions(&benches::ou_bump(), &plan));
        assert!(ok.passed(), "{ok:?}");
        let bad = ProblemSpec::from_source(&SpecSource {
            dim: 1,
            horizon: 1.0,
            rate: 0.0,
            drift: vec!["0"],
            sigma: vec![vec!["1"]],
            f: "t",
            g: "0",
            h: "0",
            fd_step: None,
        })
        .unwrap();
        let report = model_suite(&validate_assumptions(&bad, &plan));
        assert!(!report.get("f_time_monotone").unwrap().pass());
    }

    #[test]
    fn manufactured_solution_is_second_order() {
        let r = manufactured_order(&[0.2, 0.1, 0.05]).unwrap();
        assert!(r.min_order() > 1.8, "{r:?}");
        for (e, h) in r.errors.iter().zip(&r.hx) {
            assert!(*e < h * h, "{r:?}");
        }
    }

    #[test]
    fn oracle_suite_on_const1() {
        let r = oracle_suite(&benches::const1(), &OracleSuiteSettings::new(3.0, 0.1, 0.002)).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.get("lattice_weak_duality").is_some());
    }

    #[test]
    fn largest_increase_detects_growth() {
        assert!(largest_increase(&[3.0, 2.0, 2.0]) <= 0.0);
        assert_eq!(largest_increase(&[1.0, 1.5, 1.0]), 0.5);
    }
}
