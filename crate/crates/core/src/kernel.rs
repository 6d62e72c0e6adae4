//! Approximation apparatus: smooth cut-offs, truncated data, the gradient
//! penalty `psi_eps` and its Hamiltonian.

use std::sync::OnceLock;

use thiserror::Error;

use crate::expr::EvalError;
use crate::model::ProblemSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("truncated cost radicand {value:e} < 0 at t={t}, x={x:?}")]
    NegativeRadicand { t: f64, x: Vec<f64>, value: f64 },
    #[error("could not bracket the Hamiltonian maximizer for |y|={y_norm}, f={f}")]
    Bracket { y_norm: f64, f: f64 },
    #[error("truncation radius must be at least 2, got {0}")]
    Radius(f64),
}

// ---------------------------------------------------------------------------
// Cut-off

/// Exponent `q(z) = -1/z + 1/(1-z)` with `xi = 1 / (1 + e^q)`.
fn q(z: f64) -> f64 {
    -1.0 / z + 1.0 / (1.0 - z)
}

fn dq(z: f64) -> f64 {
    1.0 / (z * z) + 1.0 / ((1.0 - z) * (1.0 - z))
}

fn d2q(z: f64) -> f64 {
    -2.0 / (z * z * z) + 2.0 / ((1.0 - z) * (1.0 - z) * (1.0 - z))
}

/// Smooth step from 1 (for `z <= 0`) to 0 (for `z >= 1`).
pub fn xi(z: f64) -> f64 {
    if z <= 0.0 {
        1.0
    } else if z >= 1.0 {
        0.0
    } else {
        let e = q(z);
        if e > 0.0 {
            let w = (-e).exp();
            w / (1.0 + w)
        } else {
            1.0 / (1.0 + e.exp())
        }
    }
}

/// `xi * (1 - xi)` without cancellation.
fn xi_xi1(z: f64) -> f64 {
    let e = q(z).abs();
    let w = (-e).exp();
    w / ((1.0 + w) * (1.0 + w))
}

pub fn xi_prime(z: f64) -> f64 {
    if z <= 0.0 || z >= 1.0 {
        0.0
    } else {
        -xi_xi1(z) * dq(z)
    }
}

pub fn xi_second(z: f64) -> f64 {
    if z <= 0.0 || z >= 1.0 {
        0.0
    } else {
        let s = xi(z);
        let d1 = xi_prime(z);
        -d1 * (1.0 - 2.0 * s) * dq(z) - xi_xi1(z) * d2q(z)
    }
}

/// `max_z xi'(z)^2 / xi(z)`, located on a fine grid and refined locally.
fn ratio_max() -> f64 {
    let ratio = |z: f64| {
        let s = xi(z);
        if s <= 0.0 {
            0.0
        } else {
            xi_prime(z).powi(2) / s
        }
    };
    let n = 200_000;
    let mut best_z = 0.5;
    let mut best = 0.0;
    for k in 1..n {
        let z = k as f64 / n as f64;
        let v = ratio(z);
        if v > best {
            best = v;
            best_z = z;
        }
    }
    // golden-section refinement on the bracketing cell
    let (mut a, mut b) = (best_z - 1.0 / n as f64, best_z + 1.0 / n as f64);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if ratio(c) > ratio(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(ratio(0.5 * (a + b)))
}

/// Universal constant with `|grad xi_m|^2 <= C0 xi_m`, including a small safety factor.
pub fn cutoff_constant() -> f64 {
    static C0: OnceLock<f64> = OnceLock::new();
    *C0.get_or_init(|| ratio_max() * (1.0 + 1e-6))
}

/// Radial cut-off `xi_m(x) = xi(|x| - m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub m: f64,
    pub c0: f64,
}

pub fn build_cutoff(m: f64) -> Cutoff {
    Cutoff {
        m,
        c0: cutoff_constant(),
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Cutoff {
    pub fn value(&self, x: &[f64]) -> f64 {
        xi(norm(x) - self.m)
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r = norm(x);
        let d = xi_prime(r - self.m);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = if d == 0.0 { 0.0 } else { d * xi / r };
        }
    }

    /// Row-major Hessian of the radial profile.
    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let r = norm(x);
        let d1 = xi_prime(r - self.m);
        let d2 = xi_second(r - self.m);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = if d1 == 0.0 && d2 == 0.0 {
                    0.0
                } else {
                    let e = x[i] * x[j] / (r * r);
                    let delta = if i == j { 1.0 } else { 0.0 };
                    d2 * e + d1 / r * (delta - e)
                };
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Penalty

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bridge {
    Standard,
    /// Deliberately non-convex bridge used to exercise the fault path of the invariant suite.
    Corrupted,
}

/// `psi_eps`: zero on `y <= 0`, `(y - eps)/eps` on `y >= 2 eps`, and the
/// polynomial `2s^3 - s^4` (`s = y / 2eps`) in between, which is `C^2` and convex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    pub eps: f64,
    bridge: Bridge,
}

impl Penalty {
    pub fn new(eps: f64) -> Self {
        assert!(eps > 0.0 && eps.is_finite(), "penalty eps must be positive");
        Penalty {
            eps,
            bridge: Bridge::Standard,
        }
    }

    #[doc(hidden)]
    pub fn with_corrupted_bridge(eps: f64) -> Self {
        Penalty {
            eps,
            bridge: Bridge::Corrupted,
        }
    }

    pub fn is_corrupted(&self) -> bool {
        self.bridge == Bridge::Corrupted
    }

    /// `psi`, `psi'` or `psi''` depending on `order`.
    pub fn eval(&self, y: f64, order: u8) -> f64 {
        match order {
            0 => self.psi(y),
            1 => self.dpsi(y),
            _ => self.d2psi(y),
        }
    }

    pub fn psi(&self, y: f64) -> f64 {
        let e = self.eps;
        if y <= 0.0 {
            0.0
        } else if y >= 2.0 * e {
            (y - e) / e
        } else {
            let s = y / (2.0 * e);
            let base = 2.0 * s * s * s - s * s * s * s;
            match self.bridge {
                Bridge::Standard => base,
                Bridge::Corrupted => base - 0.3 * s * s * (1.0 - s) * (1.0 - s),
            }
        }
    }

    pub fn dpsi(&self, y: f64) -> f64 {
        let e = self.eps;
        if y <= 0.0 {
            0.0
        } else if y >= 2.0 * e {
            1.0 / e
        } else {
            let s = y / (2.0 * e);
            let base = 6.0 * s * s - 4.0 * s * s * s;
            let v = match self.bridge {
                Bridge::Standard => base,
                Bridge::Corrupted => base - 0.3 * (2.0 * s - 6.0 * s * s + 4.0 * s * s * s),
            };
            v / (2.0 * e)
        }
    }

    pub fn d2psi(&self, y: f64) -> f64 {
        let e = self.eps;
        if y <= 0.0 || y >= 2.0 * e {
            0.0
        } else {
            let s = y / (2.0 * e);
            let base = 12.0 * s - 12.0 * s * s;
            let v = match self.bridge {
                Bridge::Standard => base,
                Bridge::Corrupted => base - 0.3 * (2.0 - 12.0 * s + 12.0 * s * s),
            };
            v / (4.0 * e * e)
        }
    }
}

// ---------------------------------------------------------------------------
// Hamiltonian

/// `H(f, y) = sup_p <y, p> - psi(|p|^2 - f^2)` and its maximizer.
pub fn hamiltonian(pen: &Penalty, f_val: f64, y: &[f64]) -> Result<(f64, Vec<f64>), KernelError> {
    let yn = norm(y);
    if yn == 0.0 {
        return Ok((0.0, vec![0.0; y.len()]));
    }
    let rho = maximizer_radius(pen, f_val, yn)?;
    let p: Vec<f64> = y.iter().map(|v| rho * v / yn).collect();
    let h = yn * rho - pen.psi(rho * rho - f_val * f_val);
    Ok((h, p))
}

/// Root of `2 psi'(rho^2 - f^2) rho = |y|` on `rho >= f`.
pub fn maximizer_radius(pen: &Penalty, f_val: f64, y_norm: f64) -> Result<f64, KernelError> {
    let f_val = f_val.max(0.0);
    let phi = |rho: f64| 2.0 * pen.dpsi(rho * rho - f_val * f_val) * rho;
    let mut lo = f_val;
    let mut hi = f_val + pen.eps * (y_norm / 2.0 + 1.0);
    // The nominal bracket can be too short when f is small relative to eps.
    let mut expansions = 0;
    while phi(hi) < y_norm {
        lo = hi;
        hi = f_val + 2.0 * (hi - f_val);
        expansions += 1;
        if expansions > 200 || !hi.is_finite() {
            return Err(KernelError::Bracket { y_norm, f: f_val });
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) < y_norm {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Truncated data

/// `g_m = xi_{m-1} g`, `h_m = xi_{m-1} h` and the enlarged cost `f_m`.
#[derive(Debug, Clone)]
pub struct TruncatedData {
    pub m: f64,
    pub spec: ProblemSpec,
    pub cutoff: Cutoff,
    /// Overestimate of `sup g` on `[0, T] x closed ball of radius m`.
    pub g_sup: f64,
}

/// Pointwise truncated data with the derivatives the solver needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedPoint {
    pub g: f64,
    pub h: f64,
    pub f: f64,
    pub grad_g: Vec<f64>,
}

/// Upper bound for `sup g` over `[0,T] x B_radius` from a lattice maximum plus a Lipschitz allowance.
pub fn sup_norm_estimate(spec: &ProblemSpec, radius: f64) -> Result<f64, EvalError> {
    let d = spec.dim;
    let step = if d == 1 { 0.005 } else { 0.04 };
    let n = (2.0 * radius / step).ceil() as usize + 1;
    let nt = if spec.g.uses_time() { 17 } else { 1 };
    let dt = spec.horizon / (nt.max(2) - 1) as f64;
    let mut best = f64::NEG_INFINITY;
    let mut lip: f64 = 0.0;
    let mut lip_t: f64 = 0.0;
    let total = n.pow(d as u32);
    let mut x = vec![0.0; d];
    for k in 0..nt {
        let t = k as f64 * dt;
        for idx in 0..total {
            let mut rem = idx;
            for xi in x.iter_mut() {
                *xi = -radius + step * (rem % n) as f64;
                rem /= n;
            }
            if norm(&x) > radius + step {
                continue;
            }
            let der = spec.derivatives(&spec.g, t, &x, 1)?;
            best = best.max(der.value);
            lip = lip.max(norm(&der.gradient));
            if nt > 1 {
                lip_t = lip_t.max(spec.time_derivative(&spec.g, t, &x)?.abs());
            }
        }
    }
    let spatial = lip * step * (d as f64).sqrt() / 2.0;
    let temporal = if nt > 1 { lip_t * dt / 2.0 } else { 0.0 };
    Ok(best.max(0.0) * (1.0 + 1e-9) + 1.05 * (spatial + temporal))
}

pub fn truncate_data(spec: &ProblemSpec, m: f64) -> Result<TruncatedData, KernelError> {
    if !(m >= 2.0) {
        return Err(KernelError::Radius(m));
    }
    let g_sup = sup_norm_estimate(spec, m)?;
    Ok(TruncatedData {
        m,
        spec: spec.clone(),
        cutoff: build_cutoff(m - 1.0),
        g_sup,
    })
}

impl TruncatedData {
    pub fn g_m(&self, t: f64, x: &[f64]) -> Result<f64, KernelError> {
        let c = self.cutoff.value(x);
        if c == 0.0 {
            return Ok(0.0);
        }
        Ok(c * self.spec.g.eval(t, x)?)
    }

    pub fn h_m(&self, t: f64, x: &[f64]) -> Result<f64, KernelError> {
        let c = self.cutoff.value(x);
        if c == 0.0 {
            return Ok(0.0);
        }
        Ok(c * self.spec.h.eval(t, x)?)
    }

    pub fn f_m(&self, t: f64, x: &[f64]) -> Result<f64, KernelError> {
        Ok(self.values(t, x)?.2)
    }

    /// `(g_m, h_m, f_m)`; skips the derivative of `g` where the cut-off is flat.
    pub fn values(&self, t: f64, x: &[f64]) -> Result<(f64, f64, f64), KernelError> {
        if self.cutoff.value(x) == 1.0 {
            let spec = &self.spec;
            return Ok((spec.g.eval(t, x)?, spec.h.eval(t, x)?, spec.f.eval(t, x)?));
        }
        let p = self.point(t, x)?;
        Ok((p.g, p.h, p.f))
    }

    /// All truncated quantities at one point.
    pub fn point(&self, t: f64, x: &[f64]) -> Result<TruncatedPoint, KernelError> {
        let d = x.len();
        let spec = &self.spec;
        let c = self.cutoff.value(x);
        let f = spec.f.eval(t, x)?;
        if c == 1.0 {
            let dg = spec.derivatives(&spec.g, t, x, 1)?;
            return Ok(TruncatedPoint {
                g: dg.value,
                h: spec.h.eval(t, x)?,
                f,
                grad_g: dg.gradient,
            });
        }
        let mut dc = vec![0.0; d];
        self.cutoff.gradient(x, &mut dc);
        let dc2: f64 = dc.iter().map(|v| v * v).sum();
        if c == 0.0 {
            let radicand = f * f + self.g_sup * self.g_sup * dc2;
            return Ok(TruncatedPoint {
                g: 0.0,
                h: 0.0,
                f: radicand.max(0.0).sqrt(),
                grad_g: vec![0.0; d],
            });
        }
        let dg = spec.derivatives(&spec.g, t, x, 1)?;
        let g = dg.value;
        let cross: f64 = dc.iter().zip(&dg.gradient).map(|(a, b)| a * b).sum();
        let radicand = f * f + self.g_sup * self.g_sup * dc2 + 2.0 * g * c * cross;
        if radicand < -1e-12 {
            return Err(KernelError::NegativeRadicand {
                t,
                x: x.to_vec(),
                value: radicand,
            });
        }
        let grad_g = dg.gradient.iter().zip(&dc).map(|(gg, cc)| c * gg + g * cc).collect();
        Ok(TruncatedPoint {
            g: c * g,
            h: c * spec.h.eval(t, x)?,
            f: radicand.max(0.0).sqrt(),
            grad_g,
        })
    }

    pub fn grad_g_m(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        Ok(self.point(t, x)?.grad_g)
    }

    /// `h_m + dg_m/dt + L g_m - r g_m`, with `L g_m` from the product rule.
    pub fn theta_m(&self, t: f64, x: &[f64]) -> Result<f64, KernelError> {
        let d = x.len();
        let spec = &self.spec;
        let c = self.cutoff.value(x);
        if c == 0.0 {
            return Ok(0.0);
        }
        let dg = spec.derivatives(&spec.g, t, x, 2)?;
        let mut dc = vec![0.0; d];
        let mut hc = vec![0.0; d * d];
        self.cutoff.gradient(x, &mut dc);
        self.cutoff.hessian(x, &mut hc);
        let mut prod = dg.clone();
        prod.value = c * dg.value;
        for i in 0..d {
            prod.gradient[i] = c * dg.gradient[i] + dg.value * dc[i];
            for j in 0..d {
                prod.hessian[i * d + j] = c * dg.hessian[i * d + j]
                    + dc[i] * dg.gradient[j]
                    + dg.gradient[i] * dc[j]
                    + dg.value * hc[i * d + j];
            }
        }
        let lg = spec.generator(x, &prod)?;
        let gt = c * spec.time_derivative(&spec.g, t, x)?;
        let h = c * spec.h.eval(t, x)?;
        Ok(h + gt + lg - spec.rate * prod.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::benches;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn cutoff_anchor_values() {
        assert_eq!(xi(0.5), 0.5);
        let c = build_cutoff(3.0);
        assert_eq!(c.value(&[3.0]), 1.0);
        assert_eq!(c.value(&[-3.0]), 1.0);
        assert_eq!(c.value(&[4.0]), 0.0);
        assert_eq!(c.value(&[0.0, 4.0]), 0.0);
        assert_eq!(c.value(&[0.0]), 1.0);
    }

    #[test]
    fn cutoff_derivatives_match_finite_differences() {
        for k in 1..200 {
            let z = k as f64 / 200.0;
            let h = 1e-6;
            let fd1 = (xi(z + h) - xi(z - h)) / (2.0 * h);
            let fd2 = (xi_prime(z + h) - xi_prime(z - h)) / (2.0 * h);
            assert!((fd1 - xi_prime(z)).abs() < 1e-6 * (1.0 + fd1.abs()), "z={z}");
            assert!((fd2 - xi_second(z)).abs() < 1e-4 * (1.0 + fd2.abs()), "z={z}");
        }
    }

    #[test]
    fn cutoff_gradient_and_hessian_in_2d() {
        let c = build_cutoff(1.0);
        let x = [1.2, 0.7];
        let h = 1e-6;
        let mut g = [0.0; 2];
        let mut hs = [0.0; 4];
        c.gradient(&x, &mut g);
        c.hessian(&x, &mut hs);
        for i in 0..2 {
            let mut p = x;
            let mut m = x;
            p[i] += h;
            m[i] -= h;
            assert_abs_diff_eq!((c.value(&p) - c.value(&m)) / (2.0 * h), g[i], epsilon = 1e-7);
            let (mut gp, mut gm) = ([0.0; 2], [0.0; 2]);
            c.gradient(&p, &mut gp);
            c.gradient(&m, &mut gm);
            for j in 0..2 {
                assert_abs_diff_eq!((gp[j] - gm[j]) / (2.0 * h), hs[i * 2 + j], epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn cutoff_constant_dominates_ratio() {
        let c0 = cutoff_constant();
        assert!(c0 > 1.0 && c0 < 100.0, "{c0}");
        for k in 0..=100_000 {
            let z = k as f64 / 100_000.0;
            assert!(xi_prime(z).powi(2) <= c0 * xi(z), "z={z}");
        }
    }

    #[test]
    fn penalty_anchors() {
        let p = Penalty::new(0.1);
        assert_eq!(p.psi(-1.0), 0.0);
        assert_abs_diff_eq!(p.psi(0.2), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.dpsi(0.2), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.psi(0.1), 0.1875, epsilon = 1e-15);
        assert_eq!(p.eval(0.1, 0), p.psi(0.1));
    }

    #[test]
    fn penalty_is_c2_across_junctions() {
        for &eps in &[0.5, 0.1, 0.01] {
            let p = Penalty::new(eps);
            for &y0 in &[0.0, 2.0 * eps] {
                let h = 1e-9 * eps;
                for order in 0..3u8 {
                    let jump = (p.eval(y0 + h, order) - p.eval(y0 - h, order)).abs();
                    let scale = 1.0 / eps.powi(order as i32);
                    assert!(jump < 1e-6 * scale, "eps={eps} y0={y0} order={order}: {jump}");
                }
            }
        }
    }

    #[test]
    fn corrupted_bridge_loses_convexity() {
        let p = Penalty::with_corrupted_bridge(0.1);
        assert!(p.d2psi(1e-4) < 0.0);
        assert!(p.is_corrupted());
    }

    #[test]
    fn hamiltonian_of_zero_is_zero() {
        let (h, p) = hamiltonian(&Penalty::new(0.1), 0.7, &[0.0, 0.0]).unwrap();
        assert_eq!(h, 0.0);
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn hamiltonian_matches_brute_force_grid() {
        let pen = Penalty::new(0.1);
        let (h, p) = hamiltonian(&pen, 1.0, &[2.0, 0.0]).unwrap();
        let n = 10_001;
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            let p1 = -5.0 + 1e-3 * i as f64;
            for j in 0..n {
                let p2 = -5.0 + 1e-3 * j as f64;
                let v = 2.0 * p1 - pen.psi(p1 * p1 + p2 * p2 - 1.0);
                if v > best {
                    best = v;
                }
            }
        }
        assert!((h - best).abs() < 1e-4, "{h} vs {best}");
        assert!(p[1] == 0.0 && p[0] > 1.0);
    }

    #[test]
    fn bracket_expansion_handles_small_cost() {
        // f = 0 with small |y|: the nominal bracket [f, f + eps(|y|/2 + 1)] is too short.
        let pen = Penalty::new(0.5);
        let rho = maximizer_radius(&pen, 0.0, 0.9).unwrap();
        assert_abs_diff_eq!(2.0 * pen.dpsi(rho * rho) * rho, 0.9, epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn hamiltonian_dominates_every_candidate(
            f in 0.0..3.0f64, eps in 0.01..0.9f64,
            y in prop::collection::vec(-20.0..20.0f64, 2),
            p in prop::collection::vec(-6.0..6.0f64, 2),
        ) {
            let pen = Penalty::new(eps);
            let (h, _) = hamiltonian(&pen, f, &y).unwrap();
            let cand = y[0] * p[0] + y[1] * p[1] - pen.psi(p[0] * p[0] + p[1] * p[1] - f * f);
            prop_assert!(cand <= h + 1e-10 * (1.0 + h.abs()));
            prop_assert!(h >= eps * (y[0] * y[0] + y[1] * y[1]) / 4.0 - 1e-10);
        }
    }

    #[test]
    fn truncation_is_identity_inside_and_zero_outside() {
        let spec = benches::ou_bump();
        let data = truncate_data(&spec, 4.0).unwrap();
        for &x in &[0.0, 1.5, -2.9, 3.0] {
            assert_eq!(data.g_m(0.3, &[x]).unwrap(), spec.g.eval(0.3, &[x]).unwrap());
            assert_eq!(data.f_m(0.3, &[x]).unwrap(), spec.f.eval(0.3, &[x]).unwrap());
        }
        for &x in &[4.0, -4.5] {
            assert_eq!(data.g_m(0.3, &[x]).unwrap(), 0.0);
            assert_eq!(data.h_m(0.3, &[x]).unwrap(), 0.0);
        }
        assert!(data.g_sup >= 1.0 && data.g_sup < 1.001);
    }

    #[test]
    fn const1_truncated_cost_formula() {
        let data = truncate_data(&benches::const1(), 3.0).unwrap();
        let c = build_cutoff(2.0);
        for k in 0..=100 {
            let x = [2.0 + k as f64 / 100.0];
            let mut dc = [0.0];
            c.gradient(&x, &mut dc);
            let expect = (1.0 + data.g_sup * data.g_sup * dc[0] * dc[0]).sqrt();
            assert_abs_diff_eq!(data.f_m(0.0, &x).unwrap(), expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn truncated_gradient_is_dominated() {
        let data = truncate_data(&benches::ou_bump(), 3.0).unwrap();
        for k in -400..=400 {
            let x = [k as f64 / 100.0];
            let pt = data.point(0.5, &x).unwrap();
            assert!(pt.grad_g[0].abs() <= pt.f + 1e-12, "x={x:?}");
        }
    }

    #[test]
    fn theta_m_agrees_with_spec_inside() {
        let spec = benches::ou_bump();
        let data = truncate_data(&spec, 4.0).unwrap();
        for &x in &[0.0, 1.0, -2.5] {
            assert_abs_diff_eq!(data.theta_m(0.0, &[x]).unwrap(), spec.theta(0.0, &[x]).unwrap(), epsilon = 1e-6);
        }
        assert_eq!(data.theta_m(0.0, &[4.5]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_small_radius() {
        assert!(matches!(truncate_data(&benches::const1(), 1.5), Err(KernelError::Radius(_))));
    }
}
