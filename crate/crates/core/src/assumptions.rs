//! Sampling-based checks of the standing assumptions on the game data.
//!
//! Only four checks gate validity: local ellipticity (`theta_B > 0`), the
//! compatibility `|grad g| <= f`, monotonicity of `t -> f(t, x)` and
//! nonnegativity of `f, g, h` (plus evaluability). The remaining constants
//! (`D1, K0, K1, K2`) are estimated for diagnostics and downstream bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::ProblemSpec;

/// Checks fail when the sampled margin is below `-VALIDITY_TOL`.
pub const VALIDITY_TOL: f64 = 1e-8;

const MAX_VIOLATIONS_PER_CHECK: usize = 32;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SamplePlan {
    pub radii: Vec<f64>,
    /// Uniform random points per radius (in addition to the lattice).
    pub counts: usize,
    pub rng_seed: u64,
    /// Lattice nodes per spatial axis; odd so the origin is included.
    #[serde(default = "default_lattice_space")]
    pub lattice_space: usize,
    #[serde(default = "default_lattice_time")]
    pub lattice_time: usize,
}

fn default_lattice_space() -> usize {
    41
}

fn default_lattice_time() -> usize {
    9
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan {
            radii: vec![1.0, 3.0, 6.0],
            counts: 2000,
            rng_seed: 7,
            lattice_space: default_lattice_space(),
            lattice_time: default_lattice_time(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Violation {
    pub check: String,
    pub t: f64,
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EllipticityEntry {
    pub radius: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AssumptionReport {
    pub samples: usize,
    pub linear_growth_d1: f64,
    pub ellipticity_theta: Vec<EllipticityEntry>,
    /// `min (f - |grad g|)` over samples.
    pub grad_g_le_f_margin: f64,
    /// `min Theta` over samples.
    pub theta_min: f64,
    pub k0: f64,
    pub k1: f64,
    /// `max(0, -theta_min)`.
    pub k2: f64,
    /// `max f / (1 + |x|^2)` over the sampled box (growth of `f` is only
    /// estimated, never certified).
    pub f_growth: f64,
    pub f_time_monotone: bool,
    pub violations: Vec<Violation>,
    pub violation_count: usize,
    pub valid: bool,
}

impl AssumptionReport {
    pub fn k4(&self, horizon: f64) -> f64 {
        self.k0 * (1.0 + horizon) + self.k2
    }

    pub fn has_violation(&self, check: &str) -> bool {
        self.violations.iter().any(|v| v.check == check)
    }
}

/// Per-sample partial results, merged after the parallel map.
#[derive(Debug, Clone)]
struct Partial {
    d1: f64,
    min_eig: f64,
    margin: f64,
    theta_min: f64,
    k0: f64,
    k1: f64,
    f_growth: f64,
    violations: Vec<Violation>,
}

impl Partial {
    fn empty() -> Self {
        Partial {
            d1: 0.0,
            min_eig: f64::INFINITY,
            margin: f64::INFINITY,
            theta_min: f64::INFINITY,
            k0: 0.0,
            k1: 0.0,
            f_growth: 0.0,
            violations: Vec::new(),
        }
    }
}

fn sample_points(spec: &ProblemSpec, radius: f64, plan: &SamplePlan, stream: u64) -> Vec<(f64, Vec<f64>)> {
    let d = spec.dim;
    let horizon = spec.horizon;
    let nt = plan.lattice_time.max(2);
    let ns = plan.lattice_space.max(2);
    let mut pts = Vec::new();
    let times: Vec<f64> = (0..nt).map(|k| horizon * k as f64 / (nt - 1) as f64).collect();
    // lattice over the cube, kept inside the closed ball
    let total = ns.pow(d as u32);
    for idx in 0..total {
        let mut rem = idx;
        let mut x = vec![0.0; d];
        for xi in x.iter_mut() {
            let k = rem % ns;
            rem /= ns;
            *xi = -radius + 2.0 * radius * k as f64 / (ns - 1) as f64;
        }
        if x.iter().map(|v| v * v).sum::<f64>().sqrt() <= radius * (1.0 + 1e-12) {
            for &t in &times {
                pts.push((t, x.clone()));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.rng_seed);
    rng.set_stream(stream);
    let mut accepted = 0;
    while accepted < plan.counts {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
        if x.iter().map(|v| v * v).sum::<f64>().sqrt() > radius {
            continue;
        }
        let t = rng.random_range(0.0..=horizon);
        pts.push((t, x));
        accepted += 1;
    }
    pts
}

fn push_violation(p: &mut Partial, check: &str, t: f64, x: &[f64], value: f64) {
    p.violations.push(Violation {
        check: check.to_string(),
        t,
        x: x.to_vec(),
        value,
    });
}

type CheckResult = Result<(), (&'static str, crate::expr::EvalError)>;

fn fill_point(spec: &ProblemSpec, t: f64, x: &[f64], p: &mut Partial) -> CheckResult {
    let horizon = spec.horizon;
    let norm2 = x.iter().map(|v| v * v).sum::<f64>();
    let norm = norm2.sqrt();
    {
        let mut b = vec![0.0; spec.dim];
        spec.drift_at(x, &mut b).map_err(|e| ("drift", e))?;
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sn = spec.sigma_norm(x).map_err(|e| ("sigma", e))?;
        p.d1 = (bn + sn) / (1.0 + norm);
        p.min_eig = spec.min_diffusion_eigenvalue(x).map_err(|e| ("ellipticity", e))?;

        let f = spec.f.eval(t, x).map_err(|e| ("f", e))?;
        let dg = spec.derivatives(&spec.g, t, x, 2).map_err(|e| ("g", e))?;
        let h = spec.h.eval(t, x).map_err(|e| ("h", e))?;
        for (name, v) in [("f_nonnegative", f), ("g_nonnegative", dg.value), ("h_nonnegative", h)] {
            if v < -VALIDITY_TOL {
                push_violation(p, name, t, x, v);
            }
        }
        // f^2 must be twice differentiable, h once.
        let df = spec.derivatives(&spec.f, t, x, 2).map_err(|e| ("f", e))?;
        let dh = spec.derivatives(&spec.h, t, x, 1).map_err(|e| ("h", e))?;
        let finite = df.gradient.iter().chain(&df.hessian).chain(&dh.gradient).chain(&dg.hessian).all(|v| v.is_finite());
        if !finite {
            push_violation(p, "differentiability", t, x, f64::NAN);
        }

        let grad_g = dg.gradient.iter().map(|v| v * v).sum::<f64>().sqrt();
        p.margin = f - grad_g;
        if p.margin < -VALIDITY_TOL {
            push_violation(p, "grad_g_le_f", t, x, p.margin);
        }

        let gt = spec.time_derivative(&spec.g, t, x).map_err(|e| ("g", e))?;
        let ht = spec.time_derivative(&spec.h, t, x).map_err(|e| ("h", e))?;
        let lg = spec.generator(x, &dg).map_err(|e| ("generator", e))?;
        p.theta_min = h + gt + lg - spec.rate * dg.value;
        p.k0 = gt.max(ht).max(0.0);
        p.k1 = (dg.value + h) / (1.0 + norm2);
        p.f_growth = f / (1.0 + norm2);

        let ft = spec.time_derivative(&spec.f, t, x).map_err(|e| ("f", e))?;
        if ft > VALIDITY_TOL {
            push_violation(p, "f_time_monotone", t, x, ft);
        } else if t < horizon {
            let dt = (horizon - t).min(horizon / 16.0);
            let later = spec.f.eval(t + dt, x).map_err(|e| ("f", e))?;
            if later - f > VALIDITY_TOL {
                push_violation(p, "f_time_monotone", t, x, (later - f) / dt);
            }
        }
        Ok(())
    }
}

fn check_point(spec: &ProblemSpec, t: f64, x: &[f64]) -> Partial {
    let mut p = Partial::empty();
    if let Err((what, err)) = fill_point(spec, t, x, &mut p) {
        p.violations.push(Violation {
            check: format!("evaluation:{what}:{err}"),
            t,
            x: x.to_vec(),
            value: f64::NAN,
        });
    }
    p
}

/// Estimates the assumption constants over `[0, T] x B_R` for every radius in the plan.
pub fn validate_assumptions(spec: &ProblemSpec, plan: &SamplePlan) -> AssumptionReport {
    let mut samples = 0;
    let mut total = Partial::empty();
    let mut ellipticity = Vec::new();
    let mut all_violations: Vec<Violation> = Vec::new();

    for (ri, &radius) in plan.radii.iter().enumerate() {
        let pts = sample_points(spec, radius, plan, ri as u64);
        samples += pts.len();
        let partials: Vec<Partial> = pts.par_iter().map(|(t, x)| check_point(spec, *t, x)).collect();
        let mut theta_r = f64::INFINITY;
        for p in partials {
            theta_r = theta_r.min(p.min_eig);
            total.d1 = total.d1.max(p.d1);
            total.margin = total.margin.min(p.margin);
            total.theta_min = total.theta_min.min(p.theta_min);
            total.k0 = total.k0.max(p.k0);
            total.k1 = total.k1.max(p.k1);
            total.f_growth = total.f_growth.max(p.f_growth);
            all_violations.extend(p.violations);
        }
        if !(theta_r > 0.0) {
            all_violations.push(Violation {
                check: "ellipticity".into(),
                t: 0.0,
                x: vec![radius],
                value: theta_r,
            });
        }
        ellipticity.push(EllipticityEntry { radius, theta: theta_r });
    }

    let violation_count = all_violations.len();
    let f_time_monotone = !all_violations.iter().any(|v| v.check == "f_time_monotone");
    // keep a bounded sample of each kind
    let mut kept: Vec<Violation> = Vec::new();
    for v in all_violations {
        if kept.iter().filter(|k| k.check == v.check).count() < MAX_VIOLATIONS_PER_CHECK {
            kept.push(v);
        }
    }
    let theta_min = if total.theta_min.is_finite() { total.theta_min } else { 0.0 };
    AssumptionReport {
        samples,
        linear_growth_d1: total.d1,
        ellipticity_theta: ellipticity,
        grad_g_le_f_margin: total.margin,
        theta_min,
        k0: total.k0,
        k1: total.k1,
        k2: (-theta_min).max(0.0),
        f_growth: total.f_growth,
        f_time_monotone,
        valid: violation_count == 0,
        violations: kept,
        violation_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{benches, SpecSource};

    fn small_plan() -> SamplePlan {
        SamplePlan {
            radii: vec![1.0, 2.0],
            counts: 200,
            rng_seed: 3,
            lattice_space: 21,
            lattice_time: 5,
        }
    }

    fn variant(f: &str, g: &str) -> ProblemSpec {
        ProblemSpec::from_source(&SpecSource {
            dim: 1,
            horizon: 1.0,
            rate: 0.0,
            drift: vec!["-x1"],
            sigma: vec![vec!["1"]],
            f,
            g,
            h: "0",
            fd_step: None,
        })
        .unwrap()
    }

    #[test]
    fn const1_is_valid_with_zero_k2() {
        let r = validate_assumptions(&benches::const1(), &small_plan());
        assert!(r.valid, "{:?}", r.violations);
        assert_eq!(r.theta_min, 0.0);
        assert_eq!(r.k2, 0.0);
        assert_eq!(r.grad_g_le_f_margin, 1.0);
        assert!(r.f_time_monotone);
        assert!(r.ellipticity_theta.iter().all(|e| e.theta == 1.0));
    }

    #[test]
    fn increasing_cost_in_time_is_rejected() {
        let r = validate_assumptions(&variant("t", "0"), &small_plan());
        assert!(!r.f_time_monotone);
        assert!(!r.valid);
    }

    #[test]
    fn steep_payoff_is_rejected() {
        let r = validate_assumptions(&variant("1", "2*x1"), &small_plan());
        assert!((r.grad_g_le_f_margin + 1.0).abs() < 1e-8);
        assert!(r.has_violation("grad_g_le_f"));
        assert!(!r.valid);
    }

    #[test]
    fn degenerate_noise_fails_ellipticity() {
        let spec = ProblemSpec::from_source(&SpecSource {
            dim: 1,
            horizon: 1.0,
            rate: 0.0,
            drift: vec!["0"],
            sigma: vec![vec!["x1"]],
            f: "1",
            g: "0",
            h: "0",
            fd_step: None,
        })
        .unwrap();
        let r = validate_assumptions(&spec, &small_plan());
        assert!(r.has_violation("ellipticity"));
        assert!(!r.valid);
    }

    #[test]
    fn domain_errors_become_violations() {
        let r = validate_assumptions(&variant("1", "log(x1)"), &small_plan());
        assert!(!r.valid);
        assert!(r.violations.iter().any(|v| v.check.starts_with("evaluation")));
    }

    #[test]
    fn bump_constants() {
        let r = validate_assumptions(&benches::ou_bump(), &SamplePlan::default());
        assert!(r.valid, "{:?}", r.violations);
        // Theta is minimal at the origin: -(sigma^2/8 + r) + h(0) = -(0.03125 + 0.02) + 0.8 e^{-4.5}
        let expected = 0.05125 - 0.8 * (-4.5f64).exp();
        assert!((r.k2 - expected).abs() < 1e-6, "{}", r.k2);
        assert_eq!(r.k0, 0.0);
        assert!(r.grad_g_le_f_margin > 0.0);
        // D1 >= |b| / (1 + |x|) -> 1 for large |x|
        assert!(r.linear_growth_d1 > 0.8 && r.linear_growth_d1 < 1.5);
    }

    #[test]
    fn k2_matches_theta_minimum() {
        let spec = benches::ou_bump();
        let plan = small_plan();
        let r = validate_assumptions(&spec, &plan);
        let mut min_theta = f64::INFINITY;
        for (ri, &radius) in plan.radii.iter().enumerate() {
            for (t, x) in sample_points(&spec, radius, &plan, ri as u64) {
                min_theta = min_theta.min(spec.theta(t, &x).unwrap());
            }
        }
        assert_eq!(r.theta_min, min_theta);
        assert_eq!(r.k2, (-min_theta).max(0.0));
    }
}
