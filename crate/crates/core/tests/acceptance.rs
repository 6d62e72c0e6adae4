//! End-to-end acceptance checks on the bundled benches.
//!
//! Prints one `PASS`/`FAIL` line per check and exits with a failure status if
//! any check fails. Expensive solves are shared between the checks.

use std::process::ExitCode;
use std::time::Instant;

use ctrlstop::config::{bundled, Config};
use ctrlstop::kernel::{truncate_data, Penalty, TruncatedData};
use ctrlstop::model::ProblemSpec;
use ctrlstop::oracles::{compare_fields, solve_lattice_game, solve_obstacle, LatticeGame, Norm, ObstacleProblem};
use ctrlstop::pde::{
    continuation, vi_report, ContinuationResult, GridField, RawData,
};
use ctrlstop::sim::{
    saddle_probe, simulate_penalized, simulate_recursive, ControllerMode, FeedbackStrategy, PathConfig,
    Perturbation, ProbeSettings, StopperMode,
};
use ctrlstop::verify::{constraint_track, kernel_suite, largest_increase, manufactured_order, KernelSuiteSettings};
use ctrlstop::{validate_assumptions, AssumptionReport};

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: usize, title: &'static str, checks: &[(bool, String)]) -> Outcome {
    Outcome {
        id,
        title,
        pass: checks.iter().all(|c| c.0),
        detail: checks.iter().map(|c| c.1.as_str()).collect::<Vec<_>>().join("; "),
    }
}

/// `observed <= limit`, with a readable description.
fn at_most(name: &str, observed: f64, limit: f64) -> (bool, String) {
    (observed <= limit, format!("{name} {observed:.3e} <= {limit:.3e}"))
}

struct Bench {
    cfg: Config,
    spec: ProblemSpec,
    run: ContinuationResult,
    seconds: f64,
}

fn solve_bench(name: &str) -> Bench {
    let cfg = Config::from_toml_str(bundled(name).expect("bundled config")).expect("valid config");
    let spec = cfg.spec().expect("valid spec");
    let start = Instant::now();
    let run = continuation(&spec, &cfg.solve.schedule(), &cfg.solve.policy(), &cfg.solve.options())
        .unwrap_or_else(|e| panic!("{name}: {e}"));
    Bench {
        cfg,
        spec,
        run,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn constant_game() -> Outcome {
    let b = solve_bench("const1");
    let sup = b.run.limit.values.iter().fold(0.0f64, |m, u| m.max((u - 1.0).abs()));
    let entry = b.run.points.last().unwrap();
    let box_ok = (b.run.inner_radius - (entry.m - 1.0)).abs() < 1e-12;
    report(
        1,
        "constant game equals 1 on the untruncated box",
        &[
            (box_ok, format!("box |x| <= {}", b.run.inner_radius)),
            at_most("sup |u - 1|", sup, 5e-3),
            at_most("runtime s", b.seconds, 120.0),
        ],
    )
}

fn constraint_recovery(b: &Bench) -> Outcome {
    let track = constraint_track(&b.spec, &b.run).expect("constraint track");
    let last = track.obstacle.len() - 1;
    report(
        2,
        "obstacle and gradient constraints recovered along the schedule",
        &[
            at_most("final max (g-u)+", track.obstacle[last], 1e-3),
            at_most("final max (|Du|-f)+", track.gradient[last], 1e-2),
            at_most("largest increase of (g-u)+", largest_increase(&track.obstacle), 0.0),
            at_most("largest increase of (|Du|-f)+", largest_increase(&track.gradient), 0.0),
        ],
    )
}

/// `(1/delta) max (g_m - u)^+` over all nodes of one schedule point.
fn obstacle_penalty(data: &TruncatedData, field: &GridField, delta: f64) -> f64 {
    let grid = &field.grid;
    let mut x = [0.0; 2];
    let mut worst: f64 = 0.0;
    for k in 0..grid.n_levels() {
        let t = grid.time(k);
        for (idx, u) in field.level(k).iter().enumerate() {
            grid.coord(idx, &mut x);
            let g = data.g_m(t, &x[..grid.dim]).expect("payoff");
            worst = worst.max(g - u);
        }
    }
    worst / delta
}

fn penalty_bound(b: &Bench, data: &TruncatedData, report_k: &AssumptionReport) -> Outcome {
    let limit = report_k.k2 + 10.0 * b.cfg.solve.tol;
    let checks: Vec<(bool, String)> = b
        .run
        .points
        .iter()
        .map(|p| at_most(&format!("delta={}", p.delta), obstacle_penalty(data, &p.field, p.delta), limit))
        .collect();
    report(3, "obstacle penalty bounded by K2", &checks)
}

fn time_derivative_bound(b: &Bench, report_k: &AssumptionReport) -> Outcome {
    let limit = report_k.k4(b.spec.horizon) + 0.05;
    let checks: Vec<(bool, String)> = b
        .run
        .points
        .iter()
        .map(|p| {
            let g = &p.field.grid;
            let mut worst = f64::NEG_INFINITY;
            for k in 0..g.nt {
                for idx in 0..g.n_nodes() {
                    if !g.is_boundary(idx) {
                        worst = worst.max((p.field.at(k + 1, idx) - p.field.at(k, idx)) / g.ht);
                    }
                }
            }
            at_most(&format!("eps={} forward u_t", p.eps), worst, limit)
        })
        .collect();
    report(4, "forward time derivative bounded", &checks)
}

fn vi_residuals(b: &Bench) -> Outcome {
    let hx = b.run.limit.grid.hx;
    let vi = vi_report(&b.run.limit, &b.spec, b.cfg.solve.tol_region()).expect("vi report");
    report(
        5,
        "variational inequality residuals at the limit",
        &[
            at_most("sup min-max residual", vi.sup_minmax, 20.0 * hx),
            at_most("sup max-min residual", vi.sup_maxmin, 20.0 * hx),
            at_most("sup difference", vi.sup_difference, 10.0 * hx),
        ],
    )
}

fn pure_stopping() -> Outcome {
    let b = solve_bench("bench-ou-stopping");
    let grid = b.run.points.last().unwrap().field.grid.clone();
    let raw = RawData(&b.spec);
    let oracle = solve_obstacle(&ObstacleProblem { grid, data: &raw }, 1e-10, 50_000).expect("obstacle oracle");
    let gap = compare_fields(&b.run.limit, &oracle.field, Norm::Sup).expect("common nodes");
    report(
        6,
        "pure stopping limit matches the obstacle oracle",
        &[(b.run.limit.grid.hx <= 0.02 + 1e-12, format!("hx {}", b.run.limit.grid.hx)), at_most("sup gap", gap, 1e-2)],
    )
}

fn lattice(b: &Bench) -> Outcome {
    let game = LatticeGame {
        spec: &b.spec,
        radius: b.cfg.solve.radius,
        eta: 0.02,
        dt: 2e-4,
    };
    let sol = solve_lattice_game(&game).expect("lattice");
    let violations = sol
        .value_maxmin
        .values
        .iter()
        .zip(&sol.value_minmax.values)
        .filter(|(lo, hi)| lo > hi)
        .count();
    let d_minmax = compare_fields(&b.run.limit, &sol.value_minmax, Norm::Sup).expect("common nodes");
    let d_maxmin = compare_fields(&b.run.limit, &sol.value_maxmin, Norm::Sup).expect("common nodes");
    report(
        7,
        "lattice game brackets and matches the limit",
        &[
            (violations == 0, format!("{violations} nodes with maxmin > minmax")),
            at_most("max node gap", sol.max_gap(), 5e-3),
            at_most("min-max vs limit", d_minmax, 5e-2),
            at_most("max-min vs limit", d_maxmin, 5e-2),
        ],
    )
}

fn starts(cfg: &Config) -> Vec<(f64, Vec<f64>)> {
    cfg.simulate.starts.iter().map(|s| (s[0], s[1..].to_vec())).collect()
}

fn representation(b: &Bench, data: &TruncatedData) -> Outcome {
    let point = b.run.points.last().unwrap();
    let pen = Penalty::new(point.eps);
    let ctrl = FeedbackStrategy::controller(&point.field, pen, ControllerMode::Optimal);
    let w = FeedbackStrategy::stopper(&point.field, point.delta, 0.0, StopperMode::WStar);
    let cfg = PathConfig {
        n_paths: 100_000,
        n_steps: 1000,
        rng_seed: b.cfg.simulate.seed,
        antithetic: true,
        jump_quadrature_points: b.cfg.simulate.quadrature_points,
    };
    let points = starts(&b.cfg);
    let mut checks = vec![(points.len() == 5, format!("{} probe points", points.len()))];
    for (kind, recursive) in [("penalized", false), ("recursive", true)] {
        let start = Instant::now();
        for (t, x) in &points {
            assert!((cfg.dt(*t, b.spec.horizon) - 1e-3).abs() < 1e-15);
            let u = point.field.interpolate(*t, x).expect("start inside the field");
            let est = if recursive {
                simulate_recursive(data, point.delta, &point.field, (*t, x), &ctrl, &cfg)
            } else {
                simulate_penalized(data, (*t, x), &ctrl, &w, &cfg)
            }
            .expect("simulation");
            let margin = 3.0 * est.std_error + 2e-2;
            checks.push(at_most(&format!("{kind} |MC-u| at x={:?}", x), (est.mean - u).abs(), margin));
        }
        checks.push(at_most(&format!("{kind} runtime s"), start.elapsed().as_secs_f64(), 180.0));
    }
    report(8, "Monte Carlo reproduces the penalized value", &checks)
}

fn saddle(b: &Bench) -> Outcome {
    let point = b.run.points.last().unwrap();
    let hx = point.field.grid.hx;
    let settings = ProbeSettings {
        eps: point.eps,
        band: b.cfg.simulate.band.unwrap_or(hx * hx),
        allowance: 2e-2,
    };
    let cfg = PathConfig {
        n_paths: 20_000,
        n_steps: 1000,
        rng_seed: b.cfg.simulate.seed,
        antithetic: true,
        jump_quadrature_points: b.cfg.simulate.quadrature_points,
    };
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
    let perturbations: Vec<Perturbation> = stopper
        .into_iter()
        .map(Perturbation::Stopper)
        .chain(controller.into_iter().map(Perturbation::Controller))
        .collect();
    let x0 = [3.2];
    let rep = saddle_probe(&b.spec, &point.field, &settings, (0.0, &x0), &perturbations, &cfg).expect("probes");
    let mut checks = vec![(rep.probes.len() == 12, format!("{} probes", rep.probes.len()))];
    for p in &rep.probes {
        let (name, ok) = match p.perturbation {
            Perturbation::Stopper(m) => (format!("stopper {m:?}: {:.4} <= {:.4}", p.estimate.mean, p.bound), p.pass),
            Perturbation::Controller(m) => {
                (format!("controller {m:?}: {:.4} >= {:.4}", p.estimate.mean, p.bound), p.pass)
            }
        };
        checks.push((ok, name));
    }
    report(9, "saddle-point sandwich under perturbations", &checks)
}

fn kernel_invariants(spec: &ProblemSpec, m: f64) -> Outcome {
    let start = Instant::now();
    let settings = KernelSuiteSettings {
        cases: 100_000,
        radius: m,
        ..KernelSuiteSettings::default()
    };
    let suite = kernel_suite(spec, &settings).expect("kernel suite");
    let seconds = start.elapsed().as_secs_f64();
    let mut checks: Vec<(bool, String)> = suite
        .results
        .iter()
        .map(|r| (r.pass() && r.cases == 100_000, format!("{} {}/{} failures", r.name, r.failures, r.cases)))
        .collect();
    checks.push(at_most("runtime s", seconds, 30.0));
    report(10, "kernel invariants on randomized cases", &checks)
}

fn manufactured() -> Outcome {
    let r = manufactured_order(&[0.2, 0.1, 0.05, 0.025]).expect("manufactured solve");
    let checks: Vec<(bool, String)> = r
        .orders
        .iter()
        .enumerate()
        .map(|(i, o)| (*o >= 1.8, format!("order {}->{}: {o:.3} >= 1.8", r.hx[i], r.hx[i + 1])))
        .collect();
    report(11, "manufactured-solution convergence order", &checks)
}

fn main() -> ExitCode {
    let mut outcomes = Vec::new();
    let mut emit = |o: Outcome| {
        println!(
            "criterion {:>2} {}: {} ({})",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.title,
            o.detail
        );
        outcomes.push(o.pass);
    };

    emit(constant_game());

    let bench = solve_bench("bench-ou");
    let data = truncate_data(&bench.spec, bench.cfg.solve.radius).expect("truncated data");
    let assumptions = validate_assumptions(&bench.spec, &bench.cfg.sample_plan());
    assert!(assumptions.valid, "bench-ou must satisfy the assumptions");
    emit(constraint_recovery(&bench));
    emit(penalty_bound(&bench, &data, &assumptions));
    emit(time_derivative_bound(&bench, &assumptions));
    emit(vi_residuals(&bench));
    emit(pure_stopping());
    emit(lattice(&bench));
    emit(representation(&bench, &data));
    emit(saddle(&bench));
    emit(kernel_invariants(&bench.spec, bench.cfg.solve.radius));
    emit(manufactured());

    if outcomes.iter().all(|p| *p) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
