//! Game data: controlled diffusion coefficients, payoffs and discount rate.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{self, Derivatives, EvalError, Expression, ParseError};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("discount rate must be nonnegative, got {0}")]
    Rate(f64),
    #[error("fd_step must be positive, got {0}")]
    FdStep(f64),
    #[error("drift has {found} components, expected {expected}")]
    DriftLength { expected: usize, found: usize },
    #[error("sigma must have {expected} rows of equal length >= {expected}")]
    SigmaShape { expected: usize },
    #[error("{field}: coefficient must not depend on t")]
    TimeDependentCoefficient { field: String },
    #[error("{field}: {source}")]
    Parse {
        field: String,
        #[source]
        source: ParseError,
    },
}

/// Default base step for finite differences (scaled by `max(1, |x|)`).
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// The game: `dX = b(X)dt + sigma(X)dW + n dnu` with payoffs `f, g, h`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub dim: usize,
    pub horizon: f64,
    pub rate: f64,
    pub drift: Vec<Expression>,
    /// `dim` rows of `noise_dim` entries.
    pub sigma: Vec<Vec<Expression>>,
    pub f: Expression,
    pub g: Expression,
    pub h: Expression,
    pub fd_step: f64,
}

/// Formula sources for building a [`ProblemSpec`].
#[derive(Debug, Clone)]
pub struct SpecSource<'a> {
    pub dim: usize,
    pub horizon: f64,
    pub rate: f64,
    pub drift: Vec<&'a str>,
    pub sigma: Vec<Vec<&'a str>>,
    pub f: &'a str,
    pub g: &'a str,
    pub h: &'a str,
    pub fd_step: Option<f64>,
}

fn parse_field(field: String, src: &str, dim: usize) -> Result<Expression, SpecError> {
    Expression::parse(src, dim).map_err(|source| SpecError::Parse { field, source })
}

impl ProblemSpec {
    pub fn from_source(src: &SpecSource<'_>) -> Result<Self, SpecError> {
        let d = src.dim;
        if d == 0 {
            return Err(SpecError::ZeroDimension);
        }
        if !(src.horizon > 0.0 && src.horizon.is_finite()) {
            return Err(SpecError::Horizon(src.horizon));
        }
        if !(src.rate >= 0.0 && src.rate.is_finite()) {
            return Err(SpecError::Rate(src.rate));
        }
        let fd_step = src.fd_step.unwrap_or(DEFAULT_FD_STEP);
        if !(fd_step > 0.0 && fd_step.is_finite()) {
            return Err(SpecError::FdStep(fd_step));
        }
        if src.drift.len() != d {
            return Err(SpecError::DriftLength {
                expected: d,
                found: src.drift.len(),
            });
        }
        let noise_dim = src.sigma.first().map_or(0, Vec::len);
        if src.sigma.len() != d || noise_dim < d || src.sigma.iter().any(|r| r.len() != noise_dim) {
            return Err(SpecError::SigmaShape { expected: d });
        }
        let drift = src
            .drift
            .iter()
            .enumerate()
            .map(|(i, s)| parse_field(format!("drift[{i}]"), s, d))
            .collect::<Result<Vec<_>, _>>()?;
        let mut sigma = Vec::with_capacity(d);
        for (i, row) in src.sigma.iter().enumerate() {
            sigma.push(
                row.iter()
                    .enumerate()
                    .map(|(j, s)| parse_field(format!("sigma[{i}][{j}]"), s, d))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        for (i, e) in drift.iter().enumerate() {
            if e.uses_time() {
                return Err(SpecError::TimeDependentCoefficient {
                    field: format!("drift[{i}]"),
                });
            }
        }
        for (i, row) in sigma.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                if e.uses_time() {
                    return Err(SpecError::TimeDependentCoefficient {
                        field: format!("sigma[{i}][{j}]"),
                    });
                }
            }
        }
        Ok(ProblemSpec {
            dim: d,
            horizon: src.horizon,
            rate: src.rate,
            drift,
            sigma,
            f: parse_field("f".into(), src.f, d)?,
            g: parse_field("g".into(), src.g, d)?,
            h: parse_field("h".into(), src.h, d)?,
            fd_step,
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.sigma[0].len()
    }

    pub fn drift_at(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, e) in out.iter_mut().zip(&self.drift) {
            *o = e.eval(0.0, x)?;
        }
        Ok(())
    }

    /// Row-major `dim x noise_dim`.
    pub fn sigma_at(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let k = self.noise_dim();
        for (i, row) in self.sigma.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                out[i * k + j] = e.eval(0.0, x)?;
            }
        }
        Ok(())
    }

    /// `a = sigma sigma^T`, row-major `dim x dim`.
    pub fn diffusion_at(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let d = self.dim;
        let k = self.noise_dim();
        let mut s = vec![0.0; d * k];
        self.sigma_at(x, &mut s)?;
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = (0..k).map(|l| s[i * k + l] * s[j * k + l]).sum();
            }
        }
        Ok(a)
    }

    /// `(L phi)(x) = 1/2 tr(a D^2 phi) + <b, grad phi>` from pointwise derivatives.
    pub fn generator(&self, x: &[f64], der: &Derivatives) -> Result<f64, EvalError> {
        let d = self.dim;
        let a = self.diffusion_at(x)?;
        let mut b = vec![0.0; d];
        self.drift_at(x, &mut b)?;
        let mut out = 0.0;
        for i in 0..d {
            out += b[i] * der.gradient[i];
            for j in 0..d {
                out += 0.5 * a[i * d + j] * der.hess(i, j);
            }
        }
        Ok(out)
    }

    pub fn derivatives(&self, e: &Expression, t: f64, x: &[f64], order: u8) -> Result<Derivatives, EvalError> {
        expr::eval_with_derivatives(e, t, x, order, self.fd_step)
    }

    pub fn time_derivative(&self, e: &Expression, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        expr::time_derivative(e, t, x, self.fd_step)
    }

    /// `Theta = h + d_t g + L g - r g`.
    pub fn theta(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        let dg = self.derivatives(&self.g, t, x, 2)?;
        let gt = self.time_derivative(&self.g, t, x)?;
        let h = self.h.eval(t, x)?;
        Ok(h + gt + self.generator(x, &dg)? - self.rate * dg.value)
    }

    /// Smallest eigenvalue of `a(x)`.
    pub fn min_diffusion_eigenvalue(&self, x: &[f64]) -> Result<f64, EvalError> {
        let d = self.dim;
        let a = self.diffusion_at(x)?;
        if d == 1 {
            return Ok(a[0]);
        }
        let m = DMatrix::from_row_slice(d, d, &a);
        let eig = m.symmetric_eigenvalues();
        Ok(eig.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Frobenius norm of `sigma(x)`.
    pub fn sigma_norm(&self, x: &[f64]) -> Result<f64, EvalError> {
        let k = self.noise_dim();
        let mut s = vec![0.0; self.dim * k];
        self.sigma_at(x, &mut s)?;
        Ok(s.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

/// Built-in problems used by tests, the acceptance suite and `verify`.
pub mod benches {
    use super::{ProblemSpec, SpecSource};

    fn build(src: SpecSource<'_>) -> ProblemSpec {
        ProblemSpec::from_source(&src).expect("bundled bench is well formed")
    }

    /// `g = h = 0`, `f = 1`, Ornstein-Uhlenbeck dynamics.
    pub fn all_zero() -> ProblemSpec {
        build(SpecSource {
            dim: 1,
            horizon: 1.0,
            rate: 0.0,
            drift: vec!["-x1"],
            sigma: vec![vec!["1"]],
            f: "1",
            g: "0",
            h: "0",
            fd_step: None,
        })
    }

    /// Constant game: `g = 1, h = 0, f = 1, r = 0`, OU dynamics. Its value is 1.
    pub fn const1() -> ProblemSpec {
        build(SpecSource {
            dim: 1,
            horizon: 1.0,
            rate: 0.0,
            drift: vec!["-x1"],
            sigma: vec![vec!["1"]],
            f: "1",
            g: "1",
            h: "0",
            fd_step: None,
        })
    }

    /// Gaussian-bump stopping payoff under mean-reverting dynamics, with a
    /// running reward concentrated on the ring `|x| ~ sqrt(6)`.
    ///
    /// Stopping is optimal near the origin. The ring lifts the value above the
    /// payoff, and on its outer flank the value is steeper than anywhere on
    /// `g`, so a cost level between the two slopes makes the controller act there.
    pub fn ou_bump_with_cost(f: &str) -> ProblemSpec {
        build(SpecSource {
            dim: 1,
            horizon: 1.0,
            rate: 0.02,
            drift: vec!["-x1"],
            sigma: vec![vec!["0.5"]],
            f,
            g: "exp(-x1^2/8)",
            h: OU_BUMP_REWARD,
            fd_step: None,
        })
    }

    /// The standard bench: [`ou_bump_with_cost`] with a binding cost level.
    pub fn ou_bump() -> ProblemSpec {
        ou_bump_with_cost(OU_BUMP_COST)
    }

    /// Pure stopping version: the gradient constraint never binds.
    pub fn ou_bump_pure_stopping() -> ProblemSpec {
        ou_bump_with_cost("1000")
    }

    /// Just below the steepest slope (about 0.4116) of the pure-stopping value.
    pub const OU_BUMP_COST: &str = "0.41";
    pub const OU_BUMP_REWARD: &str = "0.8*exp(-(x1^2-6)^2/8)";
    /// Truncation radius used with the OU benches.
    pub const OU_BUMP_RADIUS: f64 = 7.0;
    /// Evaluation box: beyond about `|x| > 5` the controller profits from pushing
    /// the state out of the truncated domain, where the payoff is zero.
    pub const OU_BUMP_INNER: f64 = 4.0;

    /// Two-dimensional OU with a radial bump, for grid and simulator smoke tests.
    pub fn ou_bump_2d() -> ProblemSpec {
        build(SpecSource {
            dim: 2,
            horizon: 0.5,
            rate: 0.02,
            drift: vec!["-x1", "-x2"],
            sigma: vec![vec!["0.5", "0"], vec!["0", "0.5"]],
            f: "0.5",
            g: "exp(-(x1^2 + x2^2)/8)",
            h: "0",
            fd_step: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_malformed_specs() {
        let mut src = SpecSource {
            dim: 1,
            horizon: 1.0,
            rate: 0.0,
            drift: vec!["-x1"],
            sigma: vec![vec!["1"]],
            f: "1",
            g: "1",
            h: "0",
            fd_step: None,
        };
        assert!(ProblemSpec::from_source(&src).is_ok());
        src.horizon = 0.0;
        assert!(matches!(ProblemSpec::from_source(&src), Err(SpecError::Horizon(_))));
        src.horizon = 1.0;
        src.drift = vec!["t"];
        assert!(matches!(
            ProblemSpec::from_source(&src),
            Err(SpecError::TimeDependentCoefficient { .. })
        ));
        src.drift = vec!["x2"];
        assert!(matches!(ProblemSpec::from_source(&src), Err(SpecError::Parse { .. })));
        src.drift = vec!["0", "0"];
        assert!(matches!(ProblemSpec::from_source(&src), Err(SpecError::DriftLength { .. })));
    }

    #[test]
    fn theta_vanishes_for_constant_game() {
        let spec = benches::const1();
        for x in [-2.0, 0.0, 0.5, 3.0] {
            assert_eq!(spec.theta(0.3, &[x]).unwrap(), 0.0);
        }
    }

    #[test]
    fn theta_of_bump_matches_closed_form() {
        let spec = benches::ou_bump();
        // g = exp(-x^2/8): g' = -x g/4, g'' = (x^2/16 - 1/4) g
        for x in [-1.5f64, 0.0, 0.7, 2.5] {
            let g = (-x * x / 8.0).exp();
            let lg = 0.5 * 0.25 * (x * x / 16.0 - 0.25) * g + (-x) * (-x * g / 4.0);
            let h = 0.8 * (-(x * x - 6.0).powi(2) / 8.0).exp();
            let expected = lg - 0.02 * g + h;
            let got = spec.theta(0.0, &[x]).unwrap();
            assert!((got - expected).abs() < 1e-5, "x={x}: {got} vs {expected}");
        }
    }

    #[test]
    fn diffusion_is_sigma_sigma_transpose() {
        let spec = ProblemSpec::from_source(&SpecSource {
            dim: 2,
            horizon: 1.0,
            rate: 0.0,
            drift: vec!["0", "0"],
            sigma: vec![vec!["1", "0.5", "0"], vec!["0", "2", "x1"]],
            f: "1",
            g: "0",
            h: "0",
            fd_step: None,
        })
        .unwrap();
        let a = spec.diffusion_at(&[3.0, 0.0]).unwrap();
        assert_eq!(a, vec![1.25, 1.0, 1.0, 13.0]);
        let lam = spec.min_diffusion_eigenvalue(&[3.0, 0.0]).unwrap();
        let expected = (14.25 - ((11.75f64).powi(2) + 4.0).sqrt()) / 2.0;
        assert!((lam - expected).abs() < 1e-12);
    }
}
