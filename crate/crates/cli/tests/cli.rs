use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ctrlstop-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn ctrlstop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctrlstop")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The single run directory created under `out`.
fn only_run(out: &Path) -> PathBuf {
    let runs: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1, "{runs:?}");
    runs[0].clone()
}

fn manifest(run: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap()
}

fn write_problem(dir: &Path, name: &str, f: &str, g: &str) -> String {
    let path = dir.join(name);
    let text = format!(
        "dim = 1\nhorizon = 1.0\nrate = 0.0\ndrift = [\"-x1\"]\nsigma = [[\"1\"]]\nf = \"{f}\"\ng = \"{g}\"\nh = \"0\"\n"
    );
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL_GRID: &str = "3,61,50";
const SHORT_SCHEDULE: &str = "0.5,0.5,2";

#[test]
fn validate_accepts_the_constant_game() {
    let out = scratch("validate-ok");
    let o = ctrlstop(&["validate", "--config", "const1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let run = only_run(&out);
    assert!(run.join("assumptions.json").exists());
    assert_eq!(manifest(&run)["pass"], true);
}

#[test]
fn validate_rejects_increasing_cost() {
    let out = scratch("validate-time");
    let cfg = write_problem(&out, "p.toml", "t", "1");
    let o = ctrlstop(&["validate", "--config", &cfg, "--out", out.join("runs").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("f_time_monotone"), "{}", stdout(&o));
}

#[test]
fn validate_rejects_steep_payoff() {
    let out = scratch("validate-grad");
    let cfg = write_problem(&out, "p.toml", "1", "2*x1");
    let o = ctrlstop(&["validate", "--config", &cfg, "--out", out.join("runs").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("grad_g_le_f"), "{}", stdout(&o));
}

#[test]
fn unreadable_or_malformed_input_exits_3() {
    let out = scratch("bad-input");
    let o = ctrlstop(&["validate", "--config", "no-such-problem", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let bad = out.join("bad.toml");
    fs::write(&bad, "dim = [").unwrap();
    let o = ctrlstop(&["validate", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}

#[test]
fn solve_writes_digested_artifacts_reproducibly() {
    let out = scratch("solve");
    let args = |dir: &Path| {
        vec![
            "solve".to_string(),
            "--config".into(),
            "const1".into(),
            "--grid".into(),
            SMALL_GRID.into(),
            "--schedule".into(),
            SHORT_SCHEDULE.into(),
            "--out".into(),
            dir.to_string_lossy().into_owned(),
        ]
    };
    let first = out.join("a");
    let o = ctrlstop(&args(&first).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let run = only_run(&first);
    let m = manifest(&run);
    assert_eq!(m["pass"], true);
    let files = m["files"].as_array().unwrap();
    for f in files {
        let bytes = fs::read(run.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
    let names: Vec<&str> = files.iter().map(|f| f["path"].as_str().unwrap()).collect();
    for expected in ["point-0.csv", "point-1.csv", "limit.csv", "field.bin", "vi.json", "assumptions.json"] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
    assert!(names.iter().any(|n| n.ends_with(".pgm")));
    let limit = fs::read_to_string(run.join("limit.csv")).unwrap();
    assert!(limit.starts_with("t,x1,u,ux1,residual_minmax,residual_maxmin,inC,inI"));
    // the constant game is worth 1 away from the truncation annulus
    for line in limit.lines().skip(1) {
        let u: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((u - 1.0).abs() < 2e-2, "{line}");
    }

    // a second run goes to a new directory and reproduces the CSVs byte for byte
    let o = ctrlstop(&args(&first).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 0);
    let runs: Vec<PathBuf> = fs::read_dir(&first).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 2);
    let other = runs.iter().find(|r| **r != run).unwrap();
    for name in ["point-0.csv", "point-1.csv", "limit.csv"] {
        assert_eq!(fs::read(run.join(name)).unwrap(), fs::read(other.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn simulate_reads_a_solved_field() {
    let out = scratch("simulate");
    let o = ctrlstop(&[
        "solve",
        "--config",
        "const1",
        "--grid",
        SMALL_GRID,
        "--schedule",
        SHORT_SCHEDULE,
        "--out",
        out.join("solve").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let field = only_run(&out.join("solve")).join("field.bin");
    let o = ctrlstop(&[
        "simulate",
        "--config",
        "const1",
        "--field",
        field.to_str().unwrap(),
        "--paths",
        "200",
        "--steps",
        "50",
        "--out",
        out.join("sim").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let run = only_run(&out.join("sim"));
    let est: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("estimates.json")).unwrap()).unwrap();
    // the constant game is worth 1; the coarse field is only nearly flat off the origin
    for e in est.as_array().unwrap() {
        let p = &e["penalized"];
        let (mean, se) = (p["mean"].as_f64().unwrap(), p["std_error"].as_f64().unwrap());
        assert!((mean - 1.0).abs() < 1e-3, "{e}");
        assert!((mean - e["u"].as_f64().unwrap()).abs() <= 3.0 * se + 1e-3, "{e}");
    }
    assert_eq!(est[0]["penalized"]["std_error"].as_f64().unwrap(), 0.0);
    assert!(run.join("probes.json").exists());
}

#[test]
fn verify_flags_a_corrupted_penalty() {
    let out = scratch("verify");
    let base = ["verify", "--config", "const1", "--suites", "kernel,model", "--cases", "3000"];
    let mut args = base.to_vec();
    args.extend(["--out", out.to_str().unwrap()]);
    let o = ctrlstop(&args);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    args.push("--corrupt-bridge");
    let o = ctrlstop(&args);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("psi_convexity"), "{}", stdout(&o));
}

#[test]
fn verify_runs_solver_suites_on_a_small_grid() {
    let out = scratch("verify-pde");
    let o = ctrlstop(&[
        "verify",
        "--config",
        "const1",
        "--suites",
        "oracle,pde,sim",
        "--grid",
        SMALL_GRID,
        "--schedule",
        SHORT_SCHEDULE,
        "--paths",
        "200",
        "--steps",
        "50",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let m = manifest(&only_run(&out));
    assert!(m["checks"].as_array().unwrap().iter().any(|c| c["name"] == "const1:oracles:lattice_weak_duality"));
}

#[test]
fn sweep_compares_grids() {
    let out = scratch("sweep");
    let o = ctrlstop(&[
        "sweep",
        "--config",
        "const1",
        "--grid",
        "3,31,25",
        "--grid",
        SMALL_GRID,
        "--schedule",
        SHORT_SCHEDULE,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let run = only_run(&out);
    let entries: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("sweep.json")).unwrap()).unwrap();
    let entries = entries.as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert!(entries[0]["change"].is_null());
    assert!(entries[1]["change"].as_f64().unwrap() < 1e-2);
}

#[test]
fn non_convergence_exits_2() {
    let out = scratch("diverge");
    let o = ctrlstop(&[
        "solve",
        "--config",
        "bench-ou",
        "--grid",
        "4,41,20",
        "--schedule",
        "0.5,0.5,1",
        "--tol",
        "1e-300",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2, "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let m = manifest(&only_run(&out));
    assert_eq!(m["pass"], false);
    assert!(m["error"].as_str().unwrap().contains("convergence"));
}
