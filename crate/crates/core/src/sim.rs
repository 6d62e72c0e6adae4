//! Monte Carlo estimates of game payoffs under feedback strategies built
//! from a solved field.
//!
//! Three payoffs share one path engine:
//!
//! * the original game: singular control with proportional cost `f` along
//!   the displacement, stopping by the stopper's rule, discount `e^{-rs}`;
//! * the penalized game: absolutely continuous control with cost rate
//!   `H_eps(f_m, y)`, a stopping *intensity* `w` entering the discount
//!   `R = exp(-int (r + w))` and paying `w g_m`, run until the state leaves
//!   the ball of radius `m` or the horizon is reached;
//! * its recursive form with `w = 1/delta` fixed and running payoff
//!   `h_m + (g_m v u)/delta`.
//!
//! Paths use Euler–Maruyama steps. Each path (or antithetic pair) draws its
//! normals from its own ChaCha stream keyed by the path index, and
//! per-path results are summed in index order, so estimates do not depend
//! on the number of threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{maximizer_radius, KernelError, Penalty, TruncatedData};
use crate::model::ProblemSpec;
use crate::pde::{DataSource, GridField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Data(#[from] KernelError),
    #[error("invalid path configuration: {0}")]
    Config(String),
    #[error("strategy cannot be used here: {0}")]
    Strategy(String),
    #[error("{rejected} of {total} paths produced non-finite states")]
    Rejected { rejected: usize, total: usize },
}

impl From<crate::expr::EvalError> for SimError {
    fn from(e: crate::expr::EvalError) -> Self {
        SimError::Data(e.into())
    }
}

/// How the controller chooses `y = n * d(nu)/dt` (and optional jumps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ControllerMode {
    /// `y = -2 psi'(|grad u|^2 - f^2) grad u`.
    Optimal,
    Idle,
    /// The optimal rate multiplied by a factor.
    Scaled(f64),
    /// The optimal direction rotated by an angle (radians). In one dimension
    /// only the sign of `cos(angle)` matters.
    Rotated(f64),
    /// Optimal feedback plus one jump of `size` along `direction` at the first
    /// step time not before `time`.
    Jump { time: f64, size: f64, direction: [f64; 2] },
}

/// How the stopper acts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StopperMode {
    /// Stop at the first step time with `u <= g + band`.
    TauStar,
    /// Stop at the first step time with `u <= g + band` for a different band.
    TauStarBand(f64),
    /// Intensity `1/delta` where `u <= g_m`, else 0 (penalized game only).
    WStar,
    /// Constant intensity (penalized game only).
    Intensity(f64),
    /// Stop at the first step time not before this absolute time.
    Fixed(f64),
    /// Wait until the horizon.
    Never,
}

/// One player's feedback rule, reading `u` and `grad u` from a solved field.
#[derive(Clone, Copy)]
pub struct FeedbackStrategy<'a> {
    pub field: &'a GridField,
    pub pen: Penalty,
    /// Penalty parameter for the stopping intensity.
    pub delta: f64,
    /// Stopping band of [`StopperMode::TauStar`].
    pub band: f64,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Role {
    Controller(ControllerMode),
    Stopper(StopperMode),
}

/// Control chosen at one state: unit direction `n` and rate `d(nu)/dt >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlAction {
    pub direction: [f64; 2],
    pub rate: f64,
    /// The state lay outside the field's box, so the controller idled.
    pub outside: bool,
}

impl<'a> FeedbackStrategy<'a> {
    pub fn controller(field: &'a GridField, pen: Penalty, mode: ControllerMode) -> Self {
        FeedbackStrategy {
            field,
            pen,
            delta: 1.0,
            band: 0.0,
            role: Role::Controller(mode),
        }
    }

    pub fn stopper(field: &'a GridField, delta: f64, band: f64, mode: StopperMode) -> Self {
        FeedbackStrategy {
            field,
            pen: Penalty::new(0.5),
            delta,
            band,
            role: Role::Stopper(mode),
        }
    }

    fn controller_mode(&self) -> Result<ControllerMode, SimError> {
        match self.role {
            Role::Controller(m) => Ok(m),
            Role::Stopper(_) => Err(SimError::Strategy("expected a controller".into())),
        }
    }

    fn stopper_mode(&self) -> Result<StopperMode, SimError> {
        match self.role {
            Role::Stopper(m) => Ok(m),
            Role::Controller(_) => Err(SimError::Strategy("expected a stopper".into())),
        }
    }

    /// Control at `(t, x)` given the gradient-cost level `f` there.
    ///
    /// Whenever the rate is positive the direction is a unit vector; where
    /// `grad u` vanishes the first basis vector is used.
    pub fn control(&self, t: f64, x: &[f64], f: f64) -> Result<ControlAction, SimError> {
        let mode = self.controller_mode()?;
        let d = self.field.grid.dim;
        let idle = ControlAction {
            direction: [1.0, 0.0],
            rate: 0.0,
            outside: false,
        };
        if mode == ControllerMode::Idle {
            return Ok(idle);
        }
        let mut grad = [0.0; 2];
        if !self.field.interpolate_gradient(t, x, &mut grad[..d]) {
            return Ok(ControlAction { outside: true, ..idle });
        }
        let norm2: f64 = grad[..d].iter().map(|v| v * v).sum();
        let dp = self.pen.dpsi(norm2 - f * f);
        let norm = norm2.sqrt();
        if dp <= 0.0 || norm == 0.0 {
            return Ok(idle);
        }
        let mut rate = 2.0 * dp * norm;
        let mut n = [-grad[0] / norm, if d == 2 { -grad[1] / norm } else { 0.0 }];
        match mode {
            ControllerMode::Scaled(s) => rate *= s.max(0.0),
            ControllerMode::Rotated(a) => {
                if d == 1 {
                    if a.cos() < 0.0 {
                        n[0] = -n[0];
                    }
                } else {
                    let (s, c) = a.sin_cos();
                    n = [c * n[0] - s * n[1], s * n[0] + c * n[1]];
                }
            }
            _ => {}
        }
        Ok(ControlAction {
            direction: n,
            rate,
            outside: false,
        })
    }

    /// Jump displacement requested in the step `[t, t + dt)`, if any.
    fn jump(&self, t: f64, dt: f64) -> Option<([f64; 2], f64)> {
        match self.role {
            Role::Controller(ControllerMode::Jump { time, size, direction }) => {
                // fires on the first step whose start is not before `time`
                if t >= time - 1e-12 && t - dt < time - 1e-12 && size > 0.0 {
                    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
                    (norm > 0.0).then(|| ([direction[0] / norm, direction[1] / norm], size))
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// Whether the stopper stops at `(t, x)` in the original game (`g` is the payoff there).
    pub fn stops(&self, t: f64, x: &[f64], g: f64) -> Result<bool, SimError> {
        let band = match self.stopper_mode()? {
            StopperMode::Never => return Ok(false),
            StopperMode::Fixed(tau) => return Ok(t >= tau - 1e-12),
            StopperMode::TauStar => self.band,
            StopperMode::TauStarBand(b) => b,
            StopperMode::WStar | StopperMode::Intensity(_) => {
                return Err(SimError::Strategy("intensities apply to the penalized game only".into()))
            }
        };
        Ok(match self.field.interpolate(t, x) {
            Some(u) => u <= g + band,
            None => false,
        })
    }

    /// Stopping intensity `w in [0, 1/delta]` at `(t, x)` in the penalized game.
    pub fn intensity(&self, t: f64, x: &[f64], g_m: f64) -> Result<f64, SimError> {
        match self.stopper_mode()? {
            StopperMode::WStar => Ok(match self.field.interpolate(t, x) {
                Some(u) if u <= g_m => 1.0 / self.delta,
                _ => 0.0,
            }),
            StopperMode::Intensity(w) => {
                if !(0.0..=1.0 / self.delta).contains(&w) {
                    return Err(SimError::Strategy(format!("intensity {w} outside [0, 1/delta]")));
                }
                Ok(w)
            }
            StopperMode::Never => Ok(0.0),
            other => Err(SimError::Strategy(format!("{other:?} is not an intensity"))),
        }
    }
}

/// Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub rng_seed: u64,
    /// Pair every path with its mirror image `Z -> -Z`.
    pub antithetic: bool,
    /// Midpoint-rule points for the cost of one control displacement.
    pub jump_quadrature_points: usize,
}

impl PathConfig {
    pub fn dt(&self, t0: f64, horizon: f64) -> f64 {
        (horizon - t0) / self.n_steps as f64
    }

    fn validate(&self, t0: f64, horizon: f64) -> Result<(), SimError> {
        if self.n_paths < 2 {
            return Err(SimError::Config("at least two paths are needed for a standard error".into()));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(SimError::Config("antithetic sampling needs an even number of paths".into()));
        }
        if self.n_steps == 0 || !(self.dt(t0, horizon) > 0.0) {
            return Err(SimError::Config(format!("start time {t0} leaves no room before the horizon {horizon}")));
        }
        if self.jump_quadrature_points == 0 {
            return Err(SimError::Config("jump quadrature needs at least one point".into()));
        }
        Ok(())
    }
}

/// Split of the mean payoff.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Breakdown {
    /// Discounted payoff at the stopping/exit time.
    pub terminal: f64,
    /// Running payoff (`h`, plus `w g_m` or `(g_m v u)/delta` in the penalized games).
    pub running: f64,
    /// Control cost.
    pub control: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffEstimate {
    pub mean: f64,
    /// Sample standard deviation over independent draws divided by their
    /// square root (antithetic pairs count as one draw).
    pub std_error: f64,
    pub n_paths: usize,
    pub breakdown: Breakdown,
    pub dt: f64,
    pub n_steps: usize,
    pub jump_quadrature_points: usize,
    /// Paths that left the field's box at least once.
    pub exits: usize,
    pub exit_fraction: f64,
    /// Paths discarded for non-finite states.
    pub rejected: usize,
    /// More than 5% of the paths left the field's box.
    pub invalid: bool,
    /// Mean stopping (or exit) time.
    pub mean_stop_time: f64,
}

/// Fraction of rejected paths that aborts a run.
pub const MAX_REJECTED_FRACTION: f64 = 0.01;
/// Exit fraction above which a run is flagged invalid.
pub const MAX_EXIT_FRACTION: f64 = 0.05;

#[derive(Clone, Copy)]
enum Game<'a> {
    Original {
        stopper: &'a FeedbackStrategy<'a>,
    },
    Penalized {
        data: &'a TruncatedData,
        stopper: &'a FeedbackStrategy<'a>,
    },
    Recursive {
        data: &'a TruncatedData,
        delta: f64,
        field: &'a GridField,
    },
}

#[derive(Debug, Clone, Copy, Default)]
struct PathOutcome {
    terminal: f64,
    running: f64,
    control: f64,
    stop_time: f64,
    exited: bool,
    rejected: bool,
}

impl PathOutcome {
    fn total(&self) -> f64 {
        self.terminal + self.running + self.control
    }
}

/// `int_0^dt e^{-a s} ds`.
fn decay_weight(a: f64, dt: f64) -> f64 {
    if a * dt < 1e-8 {
        dt * (1.0 - 0.5 * a * dt)
    } else {
        -(-a * dt).exp_m1() / a
    }
}

/// `(int_0^dt e^{-a s} ds, e^{-a dt})`, remembering the last rate seen.
struct Decay {
    dt: f64,
    a: f64,
    weight: f64,
    factor: f64,
}

impl Decay {
    fn new(dt: f64) -> Self {
        Decay {
            dt,
            a: f64::NAN,
            weight: 0.0,
            factor: 1.0,
        }
    }

    fn at(&mut self, a: f64) -> (f64, f64) {
        if a != self.a {
            self.a = a;
            self.weight = decay_weight(a, self.dt);
            self.factor = (-a * self.dt).exp();
        }
        (self.weight, self.factor)
    }
}

/// Pairwise sum, independent of how the terms were produced.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// `int_0^len f(t, x + lambda n) d lambda` by the midpoint rule.
fn displacement_cost(
    f_of: &dyn Fn(f64, &[f64]) -> Result<f64, SimError>,
    t: f64,
    x: &[f64],
    n: &[f64; 2],
    len: f64,
    points: usize,
) -> Result<f64, SimError> {
    let d = x.len();
    let h = len / points as f64;
    let mut y = [0.0; 2];
    let mut acc = 0.0;
    for q in 0..points {
        let lam = (q as f64 + 0.5) * h;
        for a in 0..d {
            y[a] = x[a] + lam * n[a];
        }
        acc += f_of(t, &y[..d])?;
    }
    Ok(acc * h)
}

/// `H_eps(f, y)` for `|y| = y_norm`.
fn cost_rate(pen: &Penalty, f: f64, y_norm: f64) -> Result<f64, SimError> {
    if y_norm == 0.0 {
        return Ok(0.0);
    }
    let rho = maximizer_radius(pen, f, y_norm)?;
    Ok(y_norm * rho - pen.psi(rho * rho - f * f))
}

/// Paths advanced together, one time step at a time, so the field levels
/// they read stay in cache.
const BATCH: usize = 256;

/// State of one path between steps.
struct PathState {
    rng: ChaCha8Rng,
    sign: f64,
    x: [f64; 2],
    disc: f64,
    decay: Decay,
    out: PathOutcome,
    done: bool,
}

impl PathState {
    fn new(x0: &[f64], cfg: &PathConfig, dt: f64, stream: u64, sign: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(stream);
        let mut x = [0.0; 2];
        x[..x0.len()].copy_from_slice(x0);
        PathState {
            rng,
            sign,
            x,
            disc: 1.0,
            decay: Decay::new(dt),
            out: PathOutcome::default(),
            done: false,
        }
    }

    fn stop(&mut self, t: f64, payoff: f64) {
        self.out.terminal = self.disc * payoff;
        self.out.stop_time = t;
        self.done = true;
    }
}

/// Advances one path over `[t, t + dt)`, marking it done if it stops.
fn path_step(
    spec: &ProblemSpec,
    game: Game<'_>,
    ctrl: &FeedbackStrategy<'_>,
    cfg: &PathConfig,
    p: &mut PathState,
    t: f64,
    dt: f64,
) -> Result<(), SimError> {
    let d = spec.dim;
    let k = spec.noise_dim();
    let rate = spec.rate;
    let pen = &ctrl.pen;
    let raw_f = |t: f64, y: &[f64]| -> Result<f64, SimError> { Ok(spec.f.eval(t, y)?) };
    let in_ball = |m: f64, y: &[f64]| y.iter().map(|v| v * v).sum::<f64>() < m * m;

    let x = p.x;
    let xs = &x[..d];
    if !xs.iter().all(|v| v.is_finite()) {
        p.out.rejected = true;
        p.done = true;
        return Ok(());
    }
    if !ctrl.field.grid.contains(xs) {
        p.out.exited = true;
    }
    let disc = p.disc;
    // stopping, exit and the running payoff of this step
    let (f_here, a) = match game {
        Game::Original { stopper } => {
            let g = spec.g.eval(t, xs)?;
            if stopper.stops(t, xs, g)? {
                p.stop(t, g);
                return Ok(());
            }
            p.out.running += disc * spec.h.eval(t, xs)? * p.decay.at(rate).0;
            (spec.f.eval(t, xs)?, rate)
        }
        Game::Penalized { data, stopper } => {
            let v = DataSource::point(data, t, xs)?;
            if !in_ball(data.m, xs) {
                p.stop(t, v.g);
                return Ok(());
            }
            let w = stopper.intensity(t, xs, v.g)?;
            let a = rate + w;
            p.out.running += disc * (v.h + w * v.g) * p.decay.at(a).0;
            (v.f, a)
        }
        Game::Recursive { data, delta, field } => {
            let v = DataSource::point(data, t, xs)?;
            if !in_ball(data.m, xs) {
                p.stop(t, v.g);
                return Ok(());
            }
            let u = field.interpolate(t, xs).unwrap_or(v.g);
            let a = rate + 1.0 / delta;
            p.out.running += disc * (v.h + v.g.max(u) / delta) * p.decay.at(a).0;
            (v.f, a)
        }
    };
    let act = ctrl.control(t, xs, f_here)?;
    if act.outside {
        p.out.exited = true;
    }
    let mut shift = [0.0; 2];
    // control cost and displacement
    match game {
        Game::Original { .. } => {
            let len = act.rate * dt;
            if len > 0.0 {
                p.out.control +=
                    disc * displacement_cost(&raw_f, t, xs, &act.direction, len, cfg.jump_quadrature_points)?;
                for i in 0..d {
                    shift[i] += act.direction[i] * len;
                }
            }
            if let Some((n, size)) = ctrl.jump(t, dt) {
                let from: Vec<f64> = (0..d).map(|i| xs[i] + shift[i]).collect();
                p.out.control += disc * displacement_cost(&raw_f, t, &from, &n, size, cfg.jump_quadrature_points)?;
                for i in 0..d {
                    shift[i] += n[i] * size;
                }
            }
        }
        Game::Penalized { data, .. } | Game::Recursive { data, .. } => {
            p.out.control += disc * cost_rate(pen, f_here, act.rate)? * p.decay.at(a).0;
            for i in 0..d {
                shift[i] += act.direction[i] * act.rate * dt;
            }
            if let Some((n, size)) = ctrl.jump(t, dt) {
                let from: Vec<f64> = (0..d).map(|i| xs[i] + shift[i]).collect();
                let f_m = |t: f64, y: &[f64]| -> Result<f64, SimError> { Ok(data.f_m(t, y)?) };
                p.out.control += disc * displacement_cost(&f_m, t, &from, &n, size, cfg.jump_quadrature_points)?;
                for i in 0..d {
                    shift[i] += n[i] * size;
                }
            }
        }
    }
    // diffusion
    let mut b = [0.0; 2];
    let mut sig = [0.0; 4];
    let mut z = [0.0; 2];
    spec.drift_at(xs, &mut b[..d])?;
    spec.sigma_at(xs, &mut sig[..d * k])?;
    for zi in z.iter_mut().take(k) {
        let v: f64 = StandardNormal.sample(&mut p.rng);
        *zi = p.sign * v;
    }
    let sdt = dt.sqrt();
    for i in 0..d {
        let mut noise = 0.0;
        for j in 0..k {
            noise += sig[i * k + j] * z[j];
        }
        p.x[i] += b[i] * dt + noise * sdt + shift[i];
    }
    p.disc *= p.decay.at(a).1;
    Ok(())
}

/// Terminal payoff of a path that reached the horizon.
fn path_finish(spec: &ProblemSpec, game: Game<'_>, p: &mut PathState) -> Result<(), SimError> {
    let xs = &p.x[..spec.dim];
    if !xs.iter().all(|v| v.is_finite()) {
        p.out.rejected = true;
        return Ok(());
    }
    let horizon = spec.horizon;
    let payoff = match game {
        Game::Original { .. } => spec.g.eval(horizon, xs)?,
        Game::Penalized { data, .. } | Game::Recursive { data, .. } => data.g_m(horizon, xs)?,
    };
    p.stop(horizon, payoff);
    Ok(())
}

/// Runs the paths `(stream, sign)` side by side and returns their outcomes in order.
fn run_batch(
    spec: &ProblemSpec,
    game: Game<'_>,
    ctrl: &FeedbackStrategy<'_>,
    start: (f64, &[f64]),
    cfg: &PathConfig,
    paths: &[(u64, f64)],
) -> Result<Vec<PathOutcome>, SimError> {
    let (t0, x0) = start;
    let dt = cfg.dt(t0, spec.horizon);
    let mut states: Vec<PathState> = paths
        .iter()
        .map(|&(stream, sign)| PathState::new(&x0[..spec.dim], cfg, dt, stream, sign))
        .collect();
    for step in 0..cfg.n_steps {
        let t = t0 + step as f64 * dt;
        let mut alive = false;
        for p in states.iter_mut().filter(|p| !p.done) {
            path_step(spec, game, ctrl, cfg, p, t, dt)?;
            alive |= !p.done;
        }
        if !alive {
            break;
        }
    }
    for p in states.iter_mut().filter(|p| !p.done) {
        path_finish(spec, game, p)?;
    }
    Ok(states.into_iter().map(|p| p.out).collect())
}

fn estimate(
    spec: &ProblemSpec,
    game: Game<'_>,
    ctrl: &FeedbackStrategy<'_>,
    start: (f64, &[f64]),
    cfg: &PathConfig,
) -> Result<PayoffEstimate, SimError> {
    cfg.validate(start.0, spec.horizon)?;
    if start.1.len() != spec.dim || ctrl.field.grid.dim != spec.dim {
        return Err(SimError::Config("start point or field does not match the dimension".into()));
    }
    ctrl.controller_mode()?;
    let keys: Vec<(u64, f64)> = (0..cfg.n_paths)
        .map(|j| {
            if cfg.antithetic {
                ((j / 2) as u64, if j % 2 == 0 { 1.0 } else { -1.0 })
            } else {
                (j as u64, 1.0)
            }
        })
        .collect();
    let batches: Vec<Vec<PathOutcome>> = keys
        .par_chunks(BATCH)
        .map(|chunk| run_batch(spec, game, ctrl, start, cfg, chunk))
        .collect::<Result<_, _>>()?;
    let outcomes: Vec<PathOutcome> = batches.into_iter().flatten().collect();
    let rejected = outcomes.iter().filter(|o| o.rejected).count();
    if rejected as f64 > MAX_REJECTED_FRACTION * cfg.n_paths as f64 {
        return Err(SimError::Rejected {
            rejected,
            total: cfg.n_paths,
        });
    }
    // independent draws: single paths, or antithetic pairs with both members accepted
    let draws: Vec<&[PathOutcome]> = if cfg.antithetic {
        outcomes.chunks(2).collect()
    } else {
        outcomes.chunks(1).collect()
    };
    let kept: Vec<&[PathOutcome]> = draws.into_iter().filter(|c| c.iter().all(|o| !o.rejected)).collect();
    let per = |f: &dyn Fn(&PathOutcome) -> f64| -> Vec<f64> {
        kept.iter().map(|c| c.iter().map(f).sum::<f64>() / c.len() as f64).collect()
    };
    let totals = per(&|o| o.total());
    let n = totals.len() as f64;
    if n < 2.0 {
        return Err(SimError::Rejected {
            rejected,
            total: cfg.n_paths,
        });
    }
    let mean = pairwise_sum(&totals) / n;
    let dev: Vec<f64> = totals.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    let breakdown = Breakdown {
        terminal: pairwise_sum(&per(&|o| o.terminal)) / n,
        running: pairwise_sum(&per(&|o| o.running)) / n,
        control: pairwise_sum(&per(&|o| o.control)) / n,
    };
    let exits = outcomes.iter().filter(|o| o.exited && !o.rejected).count();
    let exit_fraction = exits as f64 / cfg.n_paths as f64;
    Ok(PayoffEstimate {
        mean,
        std_error: (var / n).sqrt(),
        n_paths: cfg.n_paths,
        breakdown,
        dt: cfg.dt(start.0, spec.horizon),
        n_steps: cfg.n_steps,
        jump_quadrature_points: cfg.jump_quadrature_points,
        exits,
        exit_fraction,
        rejected,
        invalid: exit_fraction > MAX_EXIT_FRACTION,
        mean_stop_time: pairwise_sum(&per(&|o| o.stop_time)) / n,
    })
}

/// Payoff of the original game from `(t0, x0)`.
pub fn simulate_paths(
    spec: &ProblemSpec,
    start: (f64, &[f64]),
    ctrl: &FeedbackStrategy<'_>,
    stopper: &FeedbackStrategy<'_>,
    cfg: &PathConfig,
) -> Result<PayoffEstimate, SimError> {
    stopper.stopper_mode()?;
    estimate(spec, Game::Original { stopper }, ctrl, start, cfg)
}

/// Payoff of the penalized game with stopping intensity from `stopper`.
pub fn simulate_penalized(
    data: &TruncatedData,
    start: (f64, &[f64]),
    ctrl: &FeedbackStrategy<'_>,
    stopper: &FeedbackStrategy<'_>,
    cfg: &PathConfig,
) -> Result<PayoffEstimate, SimError> {
    stopper.stopper_mode()?;
    estimate(&data.spec, Game::Penalized { data, stopper }, ctrl, start, cfg)
}

/// Recursive representation of the penalized value: intensity `1/delta`
/// throughout, running payoff `h_m + (g_m v u)/delta` with `u` read from `field`.
pub fn simulate_recursive(
    data: &TruncatedData,
    delta: f64,
    field: &GridField,
    start: (f64, &[f64]),
    ctrl: &FeedbackStrategy<'_>,
    cfg: &PathConfig,
) -> Result<PayoffEstimate, SimError> {
    if !(delta > 0.0) {
        return Err(SimError::Config("delta must be positive".into()));
    }
    estimate(&data.spec, Game::Recursive { data, delta, field }, ctrl, start, cfg)
}

/// One deviation tested by [`saddle_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Perturbation {
    /// The stopper deviates while the controller plays its feedback.
    Stopper(StopperMode),
    /// The controller deviates while the stopper plays `tau*`.
    Controller(ControllerMode),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub perturbation: Perturbation,
    pub estimate: PayoffEstimate,
    /// `u(start) + margin` for stopper deviations, `u(start) - margin` for controller ones.
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleReport {
    pub value: f64,
    pub probes: Vec<ProbeResult>,
}

impl SaddleReport {
    pub fn all_pass(&self) -> bool {
        self.probes.iter().all(|p| p.pass)
    }
}

/// Settings shared by the probes of [`saddle_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    /// Penalty parameter of the feedback controller.
    pub eps: f64,
    /// Stopping band of `tau*`.
    pub band: f64,
    /// Discretization allowance added to `3 * std_error`.
    pub allowance: f64,
}

/// Checks the saddle-point inequalities of the original game at `start`:
/// a deviating stopper facing the feedback controller earns at most
/// `u(start)`, and a deviating controller facing `tau*` pays at least
/// `u(start)`, both up to `3 * std_error + allowance`.
pub fn saddle_probe(
    spec: &ProblemSpec,
    field: &GridField,
    settings: &ProbeSettings,
    start: (f64, &[f64]),
    perturbations: &[Perturbation],
    cfg: &PathConfig,
) -> Result<SaddleReport, SimError> {
    let value = field
        .interpolate(start.0, start.1)
        .ok_or_else(|| SimError::Config("start point outside the field".into()))?;
    let ctrl_opt = FeedbackStrategy::controller(field, Penalty::new(settings.eps), ControllerMode::Optimal);
    let tau_star = FeedbackStrategy::stopper(field, 1.0, settings.band, StopperMode::TauStar);
    let mut probes = Vec::with_capacity(perturbations.len());
    for &p in perturbations {
        let (est, upper) = match p {
            Perturbation::Stopper(mode) => {
                let s = FeedbackStrategy::stopper(field, 1.0, settings.band, mode);
                (simulate_paths(spec, start, &ctrl_opt, &s, cfg)?, true)
            }
            Perturbation::Controller(mode) => {
                let c = FeedbackStrategy::controller(field, Penalty::new(settings.eps), mode);
                (simulate_paths(spec, start, &c, &tau_star, cfg)?, false)
            }
        };
        let margin = 3.0 * est.std_error + settings.allowance;
        let (bound, pass) = if upper {
            (value + margin, est.mean <= value + margin)
        } else {
            (value - margin, est.mean >= value - margin)
        };
        probes.push(ProbeResult {
            perturbation: p,
            estimate: est,
            bound,
            margin,
            pass,
        });
    }
    Ok(SaddleReport { value, probes })
}
