//! The five subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use ctrlstop::config::{bundled, Config, BUNDLED};
use ctrlstop::io::{load_field_binary, save_field_binary, save_field_csv, save_region_pgm, slice_levels};
use ctrlstop::kernel::{truncate_data, Penalty, TruncatedData};
use ctrlstop::model::ProblemSpec;
use ctrlstop::oracles::{compare_fields, solve_obstacle, Norm, ObstacleProblem};
use ctrlstop::pde::{continuation, vi_report, ContinuationResult, GridField, PenaltyPoint, RawData, ViReport};
use ctrlstop::sim::{
    saddle_probe, simulate_paths, simulate_penalized, simulate_recursive, ControllerMode, FeedbackStrategy,
    PathConfig, PayoffEstimate, Perturbation, ProbeSettings, StopperMode,
};
use ctrlstop::validate_assumptions;
use ctrlstop::verify::{
    constraint_track, kernel_suite, manufactured_order, model_suite, oracle_suite, pde_suite, sim_suite,
    KernelSuiteSettings, OracleSuiteSettings, PdeSuiteSettings, SimSuiteSettings, SuiteReport,
};

use crate::run::{Failure, RunDir};

/// Problem file plus command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// `(eps0, delta0, K)`.
    pub schedule: Option<(f64, f64, usize)>,
    /// `(m, nx, nt)`.
    pub grid: Option<(f64, usize, usize)>,
    pub tol: Option<f64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
}

/// Reads `--config`: a file path, or the name of a bundled problem.
pub fn load_config(source: &str, ov: &Overrides) -> Result<Config, Failure> {
    let path = Path::new(source);
    let mut cfg = if path.exists() {
        Config::load(path)?
    } else if let Some(text) = bundled(source) {
        Config::from_toml_str(text)?
    } else {
        return Err(Failure::Input(format!(
            "{source}: no such file or bundled problem (bundled: {})",
            BUNDLED.join(", ")
        )));
    };
    if let Some((eps0, delta0, k)) = ov.schedule {
        cfg.solve.eps0 = eps0;
        cfg.solve.delta0 = delta0;
        cfg.solve.steps = k;
    }
    if let Some((m, nx, nt)) = ov.grid {
        cfg.solve.radius = m;
        cfg.solve.hx = 2.0 * m / (nx - 1) as f64;
        cfg.solve.ht = cfg.horizon / nt as f64;
    }
    if let Some(tol) = ov.tol {
        cfg.solve.tol = tol;
    }
    if let Some(p) = ov.paths {
        cfg.simulate.paths = p;
    }
    if let Some(s) = ov.steps {
        cfg.simulate.steps = s;
    }
    if let Some(s) = ov.seed {
        cfg.simulate.seed = s;
    }
    // re-run the file's consistency checks on the overridden settings
    Ok(Config::from_toml_str(&cfg.canonical())?)
}

pub fn parse_schedule(s: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err("expected \"eps0,delta0,K\"".into());
    }
    let eps0 = parts[0].parse::<f64>().map_err(|e| format!("eps0: {e}"))?;
    let delta0 = parts[1].parse::<f64>().map_err(|e| format!("delta0: {e}"))?;
    let k = parts[2].parse::<usize>().map_err(|e| format!("K: {e}"))?;
    if !(eps0 > 0.0 && eps0 < 1.0 && delta0 > 0.0 && delta0 < 1.0) || k == 0 {
        return Err("need 0 < eps0, delta0 < 1 and K >= 1".into());
    }
    Ok((eps0, delta0, k))
}

pub fn parse_grid(s: &str) -> Result<(f64, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err("expected \"m,nx,nt\"".into());
    }
    let m = parts[0].parse::<f64>().map_err(|e| format!("m: {e}"))?;
    let nx = parts[1].parse::<usize>().map_err(|e| format!("nx: {e}"))?;
    let nt = parts[2].parse::<usize>().map_err(|e| format!("nt: {e}"))?;
    if !(m > 0.0) || nx < 3 || nt == 0 {
        return Err("need m > 0, nx >= 3 and nt >= 1".into());
    }
    Ok((m, nx, nt))
}

fn starts(cfg: &Config) -> Vec<(f64, Vec<f64>)> {
    cfg.simulate.starts.iter().map(|s| (s[0], s[1..].to_vec())).collect()
}

fn path_config(cfg: &Config) -> PathConfig {
    PathConfig {
        n_paths: cfg.simulate.paths,
        n_steps: cfg.simulate.steps,
        rng_seed: cfg.simulate.seed,
        antithetic: cfg.simulate.antithetic,
        jump_quadrature_points: cfg.simulate.quadrature_points,
    }
}

fn record_suite(run: &mut RunDir, report: &SuiteReport) {
    for r in &report.results {
        run.check(format!("{}:{}", report.suite, r.name), r.failures as f64, 0.0);
    }
    let verdict = if report.passed() { "pass" } else { "FAIL" };
    println!("{:<8} {verdict} ({} invariants, {:.1}s)", report.suite, report.results.len(), report.seconds);
    for r in report.failed() {
        println!("  {}: {} of {} cases failed, worst excess {:.3e} at {:?}", r.name, r.failures, r.cases, r.worst, r.witness);
    }
}

// ---------------------------------------------------------------------------

pub fn validate(config: &str, out: &Path) -> Result<PathBuf, Failure> {
    let cfg = load_config(config, &Overrides::default())?;
    let spec = cfg.spec()?;
    let mut run = RunDir::create(out, "validate", &cfg.canonical())?;
    let report = validate_assumptions(&spec, &cfg.sample_plan());
    run.stage("validate");
    run.write_json("assumptions.json", &report)?;
    println!(
        "samples {}  K0 {:.4}  K1 {:.4}  K2 {:.4}  min(f - |grad g|) {:.4}  min Theta {:.4}",
        report.samples, report.k0, report.k1, report.k2, report.grad_g_le_f_margin, report.theta_min
    );
    let mut checks: BTreeMap<&str, usize> = BTreeMap::new();
    for v in &report.violations {
        *checks.entry(v.check.as_str()).or_default() += 1;
    }
    for (name, n) in &checks {
        println!("violation {name}: {n} sample(s)");
    }
    run.check("violations", report.violation_count as f64, 0.0);
    let verdict = if report.valid { "valid" } else { "invalid" };
    println!("assumptions {verdict}");
    run.finish(None)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PointSummary<'a> {
    eps: f64,
    delta: f64,
    m: f64,
    hx: f64,
    ht: f64,
    iters: usize,
    residual: f64,
    wall_seconds: f64,
    bounds: &'a BTreeMap<String, ctrlstop::pde::BoundEntry>,
}

#[derive(Serialize)]
struct ViSummary {
    sup_minmax: f64,
    sup_maxmin: f64,
    sup_difference: f64,
    max_obstacle_violation: f64,
    max_gradient_violation: f64,
    terminal_error: f64,
    band_nodes: usize,
    tol_region: f64,
    continuation_nodes: usize,
    inaction_nodes: usize,
}

impl ViSummary {
    fn new(vi: &ViReport) -> Self {
        ViSummary {
            sup_minmax: vi.sup_minmax,
            sup_maxmin: vi.sup_maxmin,
            sup_difference: vi.sup_difference,
            max_obstacle_violation: vi.max_obstacle_violation,
            max_gradient_violation: vi.max_gradient_violation,
            terminal_error: vi.terminal_error,
            band_nodes: vi.band_nodes,
            tol_region: vi.tol_region,
            continuation_nodes: vi.region_c.iter().filter(|c| **c).count(),
            inaction_nodes: vi.region_i.iter().filter(|c| **c).count(),
        }
    }
}

/// Writes one CSV per schedule point and records its bound report.
fn write_points(run: &mut RunDir, points: &[PenaltyPoint], slices: usize) -> Result<(), Failure> {
    let mut summary = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let name = format!("point-{i}.csv");
        save_field_csv(&run.file(&name), &p.field, None, &slice_levels(p.field.grid.nt, slices))?;
        run.record(&name)?;
        for (key, b) in &p.bound_report {
            run.check(format!("point-{i}:{key}"), b.observed, b.bound + b.slack);
        }
        summary.push(PointSummary {
            eps: p.eps,
            delta: p.delta,
            m: p.m,
            hx: p.field.grid.hx,
            ht: p.field.grid.ht,
            iters: p.iters,
            residual: p.residual,
            wall_seconds: p.wall_seconds,
            bounds: &p.bound_report,
        });
    }
    run.detail("points", summary)
}

struct Solved {
    cfg: Config,
    spec: ProblemSpec,
    result: ContinuationResult,
}

fn solve_run(run: &mut RunDir, cfg: &Config, spec: &ProblemSpec) -> Result<ContinuationResult, Failure> {
    let schedule = cfg.solve.schedule();
    run.detail("schedule", &schedule)?;
    run.detail("grid", cfg.solve.policy())?;
    run.manifest.tolerances.insert("solve_tol".into(), cfg.solve.tol);
    run.manifest.tolerances.insert("tol_region".into(), cfg.solve.tol_region());
    match continuation(spec, &schedule, &cfg.solve.policy(), &cfg.solve.options()) {
        Ok(r) => {
            run.stage("continuation");
            Ok(r)
        }
        Err(fail) => {
            run.stage("continuation");
            write_points(run, &fail.partial, cfg.solve.slices)?;
            Err(fail.into())
        }
    }
}

/// Field dumps, VI diagnostics and region maps of a finished continuation.
fn write_solution(run: &mut RunDir, s: &Solved) -> Result<ViReport, Failure> {
    let slices = s.cfg.solve.slices;
    write_points(run, &s.result.points, slices)?;
    let last = s.result.points.last().expect("continuation returns at least one point");
    save_field_binary(&run.file("field.bin"), &last.field)?;
    run.record("field.bin")?;
    run.detail(
        "final",
        BTreeMap::from([("eps", last.eps), ("delta", last.delta), ("m", last.m)]),
    )?;
    run.detail("inner_radius", s.result.inner_radius)?;
    run.detail("increments", &s.result.increments)?;

    let limit = &s.result.limit;
    let vi = vi_report(limit, &s.spec, s.cfg.solve.tol_region())?;
    let levels = slice_levels(limit.grid.nt, slices);
    save_field_csv(&run.file("limit.csv"), limit, Some(&vi), &levels)?;
    run.record("limit.csv")?;
    for &k in &levels {
        let name = format!("region-{k:05}.pgm");
        save_region_pgm(&run.file(&name), &vi, &limit.grid, k)?;
        run.record(&name)?;
    }
    run.write_json("vi.json", &ViSummary::new(&vi))?;
    let hx = limit.grid.hx;
    let settings = PdeSuiteSettings::for_hx(hx);
    run.check("vi_residual_minmax", vi.sup_minmax, settings.residual_factor * hx);
    run.check("vi_residual_maxmin", vi.sup_maxmin, settings.residual_factor * hx);
    run.check("vi_order_difference", vi.sup_difference, settings.difference_factor * hx);
    run.stage("artifacts");
    Ok(vi)
}

pub fn solve(config: &str, ov: &Overrides, oracle: bool, out: &Path) -> Result<PathBuf, Failure> {
    let cfg = load_config(config, ov)?;
    let spec = cfg.spec()?;
    let mut run = RunDir::create(out, "solve", &cfg.canonical())?;
    let report = validate_assumptions(&spec, &cfg.sample_plan());
    run.write_json("assumptions.json", &report)?;
    run.stage("validate");
    if !report.valid {
        run.check("violations", report.violation_count as f64, 0.0);
        return run.finish(Some(Failure::Check("the problem violates the standing assumptions".into())));
    }
    let result = match solve_run(&mut run, &cfg, &spec) {
        Ok(r) => r,
        Err(e) => return run.finish(Some(e)),
    };
    let solved = Solved { cfg, spec, result };
    let vi = write_solution(&mut run, &solved)?;
    let last = solved.result.points.last().expect("nonempty schedule");
    println!(
        "{} points; final eps {} delta {}; limit on |x| <= {}; VI residuals {:.3e} / {:.3e}",
        solved.result.points.len(),
        last.eps,
        last.delta,
        solved.result.inner_radius,
        vi.sup_minmax,
        vi.sup_maxmin
    );
    if oracle {
        let grid = last.field.grid.clone();
        let raw = RawData(&solved.spec);
        let obstacle = solve_obstacle(&ObstacleProblem { grid, data: &raw }, 1e-10, 50_000)?;
        let gap = compare_fields(&solved.result.limit, &obstacle.field, Norm::Sup)?;
        save_field_csv(
            &run.file("obstacle.csv"),
            &obstacle.field,
            None,
            &slice_levels(obstacle.field.grid.nt, solved.cfg.solve.slices),
        )?;
        run.record("obstacle.csv")?;
        run.detail(
            "obstacle_oracle",
            BTreeMap::from([
                ("file", serde_json::json!("obstacle.csv")),
                ("sup_gap", serde_json::json!(gap)),
                ("sweeps", serde_json::json!(obstacle.sweeps)),
                ("complementarity", serde_json::json!(obstacle.complementarity)),
            ]),
        )?;
        run.check("obstacle_oracle_gap", gap, 1e-2);
        println!("obstacle oracle: sup gap {gap:.3e}");
        run.stage("oracle");
    }
    run.finish(None)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct StartResult {
    t: f64,
    x: Vec<f64>,
    u: f64,
    penalized: PayoffEstimate,
    recursive: PayoffEstimate,
    original: PayoffEstimate,
}

/// Penalty parameters of a field written by `solve`, from its manifest.
fn field_parameters(field_path: &Path) -> Result<(f64, f64, f64), Failure> {
    let manifest = field_path
        .parent()
        .map(|d| d.join("manifest.json"))
        .ok_or_else(|| Failure::Input("field path has no directory".into()))?;
    let text = fs::read_to_string(&manifest).map_err(|e| Failure::Input(format!("{}: {e}", manifest.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let get = |k: &str| {
        value["details"]["final"][k]
            .as_f64()
            .ok_or_else(|| Failure::Input(format!("{}: missing details.final.{k}", manifest.display())))
    };
    Ok((get("eps")?, get("delta")?, get("m")?))
}

fn default_perturbations() -> Vec<Perturbation> {
    let stopper = [
        StopperMode::Never,
        StopperMode::Fixed(0.0),
        StopperMode::Fixed(0.5),
        StopperMode::TauStarBand(0.02),
        StopperMode::TauStarBand(0.1),
        StopperMode::TauStarBand(-0.02),
    ];
    let controller = [
        ControllerMode::Idle,
        ControllerMode::Scaled(0.5),
        ControllerMode::Scaled(2.0),
        ControllerMode::Rotated(std::f64::consts::PI),
        ControllerMode::Jump {
            time: 0.0,
            size: 0.3,
            direction: [1.0, 0.0],
        },
        ControllerMode::Jump {
            time: 0.5,
            size: 0.3,
            direction: [-1.0, 0.0],
        },
    ];
    stopper
        .into_iter()
        .map(Perturbation::Stopper)
        .chain(controller.into_iter().map(Perturbation::Controller))
        .collect()
}

pub fn simulate(config: &str, field_path: &Path, ov: &Overrides, probes: bool, out: &Path) -> Result<PathBuf, Failure> {
    let cfg = load_config(config, ov)?;
    let spec = cfg.spec()?;
    let field = load_field_binary(field_path)?;
    let (eps, delta, m) = field_parameters(field_path)?;
    if field.grid.dim != spec.dim || (field.grid.horizon - spec.horizon).abs() > 1e-12 {
        return Err(Failure::Input("the field does not belong to this problem".into()));
    }
    let data: TruncatedData = truncate_data(&spec, m)?;
    let mut run = RunDir::create(out, "simulate", &cfg.canonical())?;
    run.detail("field", field_path.display().to_string())?;
    run.detail("final", BTreeMap::from([("eps", eps), ("delta", delta), ("m", m)]))?;
    run.manifest.seeds.insert("paths".into(), cfg.simulate.seed);
    run.manifest.tolerances.insert("allowance".into(), cfg.simulate.allowance);
    let pcfg = path_config(&cfg);
    run.detail("paths", pcfg)?;
    let pen = Penalty::new(eps);
    let ctrl = FeedbackStrategy::controller(&field, pen, ControllerMode::Optimal);
    let w = FeedbackStrategy::stopper(&field, delta, 0.0, StopperMode::WStar);
    let band = cfg.simulate.band.unwrap_or(field.grid.hx * field.grid.hx);
    let tau = FeedbackStrategy::stopper(&field, delta, band, StopperMode::TauStar);
    let mut results = Vec::new();
    for (i, (t, x)) in starts(&cfg).into_iter().enumerate() {
        let u = field
            .interpolate(t, &x)
            .ok_or_else(|| Failure::Input(format!("start {x:?} lies outside the field")))?;
        let penalized = simulate_penalized(&data, (t, &x), &ctrl, &w, &pcfg)?;
        let recursive = simulate_recursive(&data, delta, &field, (t, &x), &ctrl, &pcfg)?;
        let original = simulate_paths(&spec, (t, &x), &ctrl, &tau, &pcfg)?;
        for (kind, e) in [("penalized", &penalized), ("recursive", &recursive)] {
            let margin = 3.0 * e.std_error + cfg.simulate.allowance;
            run.check(format!("start-{i}:{kind}"), (e.mean - u).abs(), margin);
            run.check(format!("start-{i}:{kind}:exit_fraction"), e.exit_fraction, ctrlstop::sim::MAX_EXIT_FRACTION);
        }
        println!(
            "t={t} x={x:?}: u {u:.5}  penalized {:.5} ± {:.5}  recursive {:.5} ± {:.5}  original {:.5} ± {:.5}",
            penalized.mean, penalized.std_error, recursive.mean, recursive.std_error, original.mean, original.std_error
        );
        results.push(StartResult {
            t,
            x,
            u,
            penalized,
            recursive,
            original,
        });
    }
    run.stage("estimates");
    if probes {
        if let Some(first) = results.first() {
            let settings = ProbeSettings {
                eps,
                band,
                allowance: cfg.simulate.allowance,
            };
            let rep = saddle_probe(&spec, &field, &settings, (first.t, &first.x), &default_perturbations(), &pcfg)?;
            for (i, p) in rep.probes.iter().enumerate() {
                // stopper deviations must not gain, controller deviations must not save
                let excess = match p.perturbation {
                    Perturbation::Stopper(_) => p.estimate.mean - p.bound,
                    Perturbation::Controller(_) => p.bound - p.estimate.mean,
                };
                run.check(format!("probe-{i}:{:?}", p.perturbation), excess, 0.0);
            }
            println!("saddle probes: {}", if rep.all_pass() { "all pass" } else { "FAIL" });
            run.write_json("probes.json", &rep)?;
            run.stage("probes");
        }
    }
    run.write_json("estimates.json", &results)?;
    run.finish(None)
}

// ---------------------------------------------------------------------------

/// Suites run by `verify`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Suite {
    Model,
    Kernel,
    Oracle,
    Manufactured,
    Pde,
    Sim,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub suites: Vec<Suite>,
    pub cases: usize,
    pub corrupt_bridge: bool,
}

fn verify_one(run: &mut RunDir, name: &str, cfg: &Config, opts: &VerifyOptions) -> Result<(), Failure> {
    let spec = cfg.spec()?;
    let want = |s: Suite| opts.suites.contains(&s);
    let mut reports = Vec::new();
    println!("== {name}");
    if want(Suite::Model) {
        let report = validate_assumptions(&spec, &cfg.sample_plan());
        reports.push(model_suite(&report));
    }
    if want(Suite::Kernel) {
        let settings = KernelSuiteSettings {
            cases: opts.cases,
            radius: cfg.solve.radius,
            corrupted_bridge: opts.corrupt_bridge,
            ..KernelSuiteSettings::default()
        };
        reports.push(kernel_suite(&spec, &settings)?);
    }
    if want(Suite::Oracle) {
        let s = &cfg.solve;
        reports.push(oracle_suite(&spec, &OracleSuiteSettings::new(s.radius, s.hx, s.ht))?);
    }
    if want(Suite::Pde) || want(Suite::Sim) {
        let result = continuation(&spec, &cfg.solve.schedule(), &cfg.solve.policy(), &cfg.solve.options())?;
        if want(Suite::Pde) {
            let hx = result.limit.grid.hx;
            let settings = PdeSuiteSettings {
                tol_region: cfg.solve.tol_region(),
                ..PdeSuiteSettings::for_hx(hx)
            };
            reports.push(pde_suite(&spec, &result, &settings)?);
            let track = constraint_track(&spec, &result)?;
            run.detail(&format!("{name}:constraint_track"), track)?;
        }
        if want(Suite::Sim) && !cfg.simulate.starts.is_empty() {
            let last = result.points.last().expect("nonempty schedule");
            let data = truncate_data(&spec, last.m)?;
            let settings = SimSuiteSettings {
                paths: path_config(cfg),
                starts: starts(cfg),
                allowance: cfg.simulate.allowance,
            };
            reports.push(sim_suite(&data, &last.field, last.eps, last.delta, &settings)?);
        }
    }
    for mut r in reports {
        r.suite = format!("{name}:{}", r.suite);
        record_suite(run, &r);
        run.detail(&r.suite.clone(), &r)?;
    }
    Ok(())
}

pub fn verify(config: Option<&str>, ov: &Overrides, opts: &VerifyOptions, out: &Path) -> Result<PathBuf, Failure> {
    let configs: Vec<(String, Config)> = match config {
        Some(c) => vec![(c.to_string(), load_config(c, ov)?)],
        None => BUNDLED
            .iter()
            .map(|n| load_config(n, ov).map(|c| (n.to_string(), c)))
            .collect::<Result<_, _>>()?,
    };
    let text: String = configs.iter().map(|(_, c)| c.canonical()).collect::<Vec<_>>().join("\n");
    let mut run = RunDir::create(out, "verify", &text)?;
    run.detail("suites", format!("{:?}", opts.suites))?;
    run.detail("cases", opts.cases)?;
    for (name, cfg) in &configs {
        let short = Path::new(name).file_stem().map_or(name.clone(), |s| s.to_string_lossy().into_owned());
        if let Err(e) = verify_one(&mut run, &short, cfg, opts) {
            return run.finish(Some(e));
        }
        run.stage(&short);
    }
    if opts.suites.contains(&Suite::Manufactured) {
        let r = manufactured_order(&[0.2, 0.1, 0.05, 0.025])?;
        for (i, o) in r.orders.iter().enumerate() {
            // order >= 1.8, recorded as 1.8 - order <= 0
            run.check(format!("manufactured:order-{i}"), 1.8 - o, 0.0);
        }
        println!("manufactured orders {:?}", r.orders);
        run.detail("manufactured", &r)?;
        run.stage("manufactured");
    }
    run.finish(None)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SweepEntry {
    grid: (f64, usize, usize),
    hx: f64,
    ht: f64,
    points: usize,
    bounds_pass: bool,
    sup_minmax: f64,
    sup_maxmin: f64,
    final_obstacle_violation: f64,
    final_gradient_violation: f64,
    wall_seconds: f64,
    /// Sup distance of this limit from the previous grid's limit.
    change: Option<f64>,
}

/// Solves the same problem on a list of grids and reports how the limit moves.
pub fn sweep(config: &str, grids: &[(f64, usize, usize)], ov: &Overrides, out: &Path) -> Result<PathBuf, Failure> {
    if grids.is_empty() {
        return Err(Failure::Input("sweep needs at least one --grid".into()));
    }
    let base = load_config(config, ov)?;
    let mut run = RunDir::create(out, "sweep", &base.canonical())?;
    let mut entries = Vec::new();
    let mut previous: Option<GridField> = None;
    for (i, &g) in grids.iter().enumerate() {
        let cfg = load_config(config, &Overrides { grid: Some(g), ..ov.clone() })?;
        let spec = cfg.spec()?;
        let started = std::time::Instant::now();
        let result = match continuation(&spec, &cfg.solve.schedule(), &cfg.solve.policy(), &cfg.solve.options()) {
            Ok(r) => r,
            Err(e) => return run.finish(Some(e.into())),
        };
        let vi = vi_report(&result.limit, &spec, cfg.solve.tol_region())?;
        let track = constraint_track(&spec, &result)?;
        let change = match &previous {
            Some(p) => Some(compare_fields(&result.limit, p, Norm::Sup)?),
            None => None,
        };
        let bounds_pass = result.points.iter().all(PenaltyPoint::bounds_pass);
        run.check(format!("grid-{i}:bounds"), if bounds_pass { 0.0 } else { 1.0 }, 0.0);
        let name = format!("limit-{i}.csv");
        save_field_csv(&run.file(&name), &result.limit, Some(&vi), &slice_levels(result.limit.grid.nt, cfg.solve.slices))?;
        run.record(&name)?;
        let entry = SweepEntry {
            grid: g,
            hx: cfg.solve.hx,
            ht: cfg.solve.ht,
            points: result.points.len(),
            bounds_pass,
            sup_minmax: vi.sup_minmax,
            sup_maxmin: vi.sup_maxmin,
            final_obstacle_violation: *track.obstacle.last().unwrap_or(&0.0),
            final_gradient_violation: *track.gradient.last().unwrap_or(&0.0),
            wall_seconds: started.elapsed().as_secs_f64(),
            change,
        };
        println!(
            "grid {g:?}: hx {:.4} ht {:.2e}  VI {:.3e}/{:.3e}  change {}",
            entry.hx,
            entry.ht,
            entry.sup_minmax,
            entry.sup_maxmin,
            change.map_or("-".to_string(), |c| format!("{c:.3e}"))
        );
        entries.push(entry);
        previous = Some(result.limit);
        run.stage(&format!("grid-{i}"));
    }
    run.write_json("sweep.json", &entries)?;
    run.finish(None)
}
