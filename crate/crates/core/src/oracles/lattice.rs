use crate::model::ProblemSpec;
use crate::pde::{Grid, GridField, PdeError};

/// One-dimensional trinomial game on `[-radius, radius]` with step `eta` and time step `dt`.
///
/// Per step the controller may shift the state by `-eta`, `0` or `+eta`
/// at cost `f * eta` (midpoint rule along the shift), after which the state
/// diffuses by moment-matched trinomial transitions. The stopper compares
/// the payoff `g` at the node with continuing. Edge nodes stop.
#[derive(Debug, Clone)]
pub struct LatticeGame<'a> {
    pub spec: &'a ProblemSpec,
    pub radius: f64,
    pub eta: f64,
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct LatticeSolution {
    /// Controller commits first, then the stopper: `min_a max(g, C_a)`.
    pub value_minmax: GridField,
    /// Stopper decides first: `max(g, min_a C_a)`.
    pub value_maxmin: GridField,
    /// Largest transition weight outside `[0, 1]` encountered (0 when well formed).
    pub probability_defect: f64,
}

impl LatticeSolution {
    pub fn max_gap(&self) -> f64 {
        self.value_minmax
            .values
            .iter()
            .zip(&self.value_maxmin.values)
            .fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a - b))
    }
}

impl LatticeGame<'_> {
    pub fn grid(&self) -> Result<Grid, PdeError> {
        Grid::with_steps(1, self.radius, self.eta, self.dt, self.spec.horizon)
    }

    /// Trinomial weights `(p_-, p_0, p_+)` at `x`.
    pub fn transition(&self, x: f64) -> Result<(f64, f64, f64), PdeError> {
        let err = |e: crate::expr::EvalError| PdeError::Data(e.into());
        let mut b = [0.0];
        self.spec.drift_at(&[x], &mut b).map_err(err)?;
        let a = self.spec.diffusion_at(&[x]).map_err(err)?[0];
        let v = a * self.dt / (self.eta * self.eta);
        let m = b[0] * self.dt / self.eta;
        let pp = 0.5 * (v + m);
        let pm = 0.5 * (v - m);
        Ok((pm, 1.0 - pp - pm, pp))
    }
}

pub fn solve_lattice_game(game: &LatticeGame<'_>) -> Result<LatticeSolution, PdeError> {
    if game.spec.dim != 1 {
        return Err(PdeError::Grid("the lattice game is one-dimensional".into()));
    }
    let grid = game.grid()?;
    let n = grid.nx;
    let nt = grid.nt;
    let err = |e: crate::expr::EvalError| PdeError::Data(e.into());
    let spec = game.spec;
    let eta = grid.hx;
    let dt = grid.ht;
    let disc = (-spec.rate * dt).exp();
    let xs: Vec<f64> = (0..n).map(|i| grid.axis_coord(i)).collect();
    let mut probs = Vec::with_capacity(n);
    let mut defect: f64 = 0.0;
    for &x in &xs {
        let p = game.transition(x)?;
        for q in [p.0, p.1, p.2] {
            defect = defect.max(-q).max(q - 1.0);
        }
        probs.push(p);
    }
    let time_dep = spec.f.uses_time() || spec.g.uses_time() || spec.h.uses_time();
    let sample = |t: f64| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>), PdeError> {
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        let mut cost_up = vec![0.0; n];
        let mut cost_down = vec![0.0; n];
        for i in 0..n {
            let x = xs[i];
            g[i] = spec.g.eval(t, &[x]).map_err(err)?;
            h[i] = spec.h.eval(t, &[x]).map_err(err)?;
            cost_up[i] = spec.f.eval(t, &[x + 0.5 * eta]).map_err(err)? * eta;
            cost_down[i] = spec.f.eval(t, &[x - 0.5 * eta]).map_err(err)? * eta;
        }
        Ok((g, h, cost_up, cost_down))
    };
    let mut minmax = GridField::zeros(&grid);
    let mut maxmin = GridField::zeros(&grid);
    let mut cached = sample(grid.time(nt))?;
    minmax.level_mut(nt).copy_from_slice(&cached.0);
    maxmin.level_mut(nt).copy_from_slice(&cached.0);
    let mut cont_a = vec![0.0; n];
    let mut cont_b = vec![0.0; n];
    for k in (0..nt).rev() {
        if time_dep {
            cached = sample(grid.time(k))?;
        }
        let (g, h, up, down) = &cached;
        for (cont, field) in [(&mut cont_a, &minmax), (&mut cont_b, &maxmin)] {
            let next = field.level(k + 1);
            for j in 1..n - 1 {
                let (pm, p0, pp) = probs[j];
                cont[j] = h[j] * dt + disc * (pm * next[j - 1] + p0 * next[j] + pp * next[j + 1]);
            }
        }
        for (order, cont) in [(0usize, &cont_a), (1, &cont_b)] {
            let mut level = vec![0.0; n];
            for i in 0..n {
                if i == 0 || i == n - 1 {
                    level[i] = g[i];
                    continue;
                }
                // actions that keep the post-move state off the edge
                let mut options = [f64::INFINITY; 3];
                options[1] = cont[i];
                if i >= 2 {
                    options[0] = down[i] + cont[i - 1];
                }
                if i + 2 < n {
                    options[2] = up[i] + cont[i + 1];
                }
                level[i] = if order == 0 {
                    options.iter().map(|&c| g[i].max(c)).fold(f64::INFINITY, f64::min)
                } else {
                    g[i].max(options.iter().copied().fold(f64::INFINITY, f64::min))
                };
            }
            if order == 0 {
                minmax.level_mut(k).copy_from_slice(&level);
            } else {
                maxmin.level_mut(k).copy_from_slice(&level);
            }
        }
    }
    Ok(LatticeSolution {
        value_minmax: minmax,
        value_maxmin: maxmin,
        probability_defect: defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{benches, SpecSource};

    fn spec(g: &str, h: &str) -> ProblemSpec {
        ProblemSpec::from_source(&SpecSource {
            dim: 1,
            horizon: 0.2,
            rate: 0.02,
            drift: vec!["-x1"],
            sigma: vec![vec!["0.5"]],
            f: "0.4",
            g,
            h,
            fd_step: None,
        })
        .unwrap()
    }

    #[test]
    fn transitions_match_moments() {
        let s = benches::ou_bump();
        let game = LatticeGame { spec: &s, radius: 3.0, eta: 0.02, dt: 2e-4 };
        for &x in &[-3.0, -1.0, 0.0, 2.5] {
            let (pm, p0, pp) = game.transition(x).unwrap();
            assert!([pm, p0, pp].iter().all(|p| (0.0..=1.0).contains(p)));
            assert!((pm + p0 + pp - 1.0).abs() < 1e-15);
            let mean = 0.02 * (pp - pm);
            let second = 0.02 * 0.02 * (pp + pm);
            assert!((mean - (-x) * 2e-4).abs() < 1e-15);
            // variance sigma^2 dt - (b dt)^2, i.e. sigma^2 dt up to O(dt^2)
            assert!((second - 0.25 * 2e-4).abs() < 1e-15);
            assert!(second - mean * mean <= 0.25 * 2e-4);
        }
    }

    #[test]
    fn one_step_constant_payoff() {
        let s = ProblemSpec::from_source(&SpecSource {
            dim: 1,
            horizon: 0.001,
            rate: 0.0,
            drift: vec!["-x1"],
            sigma: vec![vec!["1"]],
            f: "3",
            g: "1",
            h: "0",
            fd_step: None,
        })
        .unwrap();
        let game = LatticeGame { spec: &s, radius: 1.0, eta: 0.1, dt: 0.001 };
        let sol = solve_lattice_game(&game).unwrap();
        assert_eq!(sol.value_minmax.grid.nt, 1);
        assert!(sol.value_minmax.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(sol.value_maxmin.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn zero_data_and_weak_duality() {
        let s = benches::all_zero();
        let game = LatticeGame { spec: &s, radius: 2.0, eta: 0.05, dt: 1e-3 };
        let sol = solve_lattice_game(&game).unwrap();
        assert!(sol.value_minmax.values.iter().all(|&v| v == 0.0));
        assert!(sol.value_maxmin.values.iter().all(|&v| v == 0.0));

        let s = spec("exp(-x1^2/8)", "0.1");
        let game = LatticeGame { spec: &s, radius: 3.0, eta: 0.05, dt: 2e-3 };
        let sol = solve_lattice_game(&game).unwrap();
        for (a, b) in sol.value_maxmin.values.iter().zip(&sol.value_minmax.values) {
            assert!(a <= &(b + 1e-12));
        }
        assert_eq!(sol.probability_defect, 0.0);
    }

    #[test]
    fn monotone_in_data() {
        let base = spec("exp(-x1^2/8)", "0");
        let more_g = spec("exp(-x1^2/8) + 0.05", "0");
        let more_h = spec("exp(-x1^2/8)", "0.2");
        let solve = |s: &ProblemSpec| {
            solve_lattice_game(&LatticeGame { spec: s, radius: 3.0, eta: 0.05, dt: 2e-3 }).unwrap().value_minmax
        };
        let v0 = solve(&base);
        for other in [solve(&more_g), solve(&more_h)] {
            for (a, b) in v0.values.iter().zip(&other.values) {
                assert!(b >= a);
            }
        }
    }
}
