use thiserror::Error;

use crate::pde::solver::DataSlices;
use crate::pde::{DataSource, Grid, GridField, Operator, PdeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObstacleError {
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error("projected relaxation did not reach {tol:e} within {sweeps} sweeps at level {level}")]
    SweepLimit { level: usize, sweeps: usize, tol: f64 },
}

/// Optimal stopping with obstacle `g`, running reward `h` and discount `r`
/// on the same grid and with the same stencils as the penalized solver.
pub struct ObstacleProblem<'a> {
    pub grid: Grid,
    pub data: &'a dyn DataSource,
}

#[derive(Debug, Clone)]
pub struct ObstacleSolution {
    pub field: GridField,
    /// `max |min(A u - rhs, u - g)|` over interior nodes and levels.
    pub complementarity: f64,
    pub sweeps: usize,
}

/// Relaxation factor of the projected SOR sweeps.
const OMEGA: f64 = 1.6;

/// Backward-in-time projected SOR for `max(u_t + L u - r u + h, g - u) = 0`.
pub fn solve_obstacle(prob: &ObstacleProblem<'_>, tol: f64, max_sweeps: usize) -> Result<ObstacleSolution, ObstacleError> {
    let grid = &prob.grid;
    let op = Operator::new(grid, prob.data.spec())?;
    let slices = DataSlices::new(grid, prob.data)?;
    let a = op.implicit_matrix();
    let n = grid.n_nodes();
    let nt = grid.nt;
    let mut field = GridField::zeros(grid);
    field.level_mut(nt).copy_from_slice(&slices.get(nt)?.g);
    let mut total = 0;
    let mut comp: f64 = 0.0;
    let mut rhs = vec![0.0; n];
    for k in (0..nt).rev() {
        let lvl = slices.get(k)?;
        let mut u = field.level(k + 1).to_vec();
        for idx in 0..n {
            if grid.is_boundary(idx) {
                u[idx] = lvl.g[idx];
                rhs[idx] = lvl.g[idx];
            } else {
                rhs[idx] = field.at(k + 1, idx) / grid.ht + lvl.h[idx];
                u[idx] = u[idx].max(lvl.g[idx]);
            }
        }
        let mut converged = false;
        for _ in 0..max_sweeps {
            total += 1;
            let mut change: f64 = 0.0;
            for idx in 0..n {
                if grid.is_boundary(idx) {
                    continue;
                }
                let mut off = 0.0;
                let mut diag = 0.0;
                for p in a.row_ptr[idx]..a.row_ptr[idx + 1] {
                    let j = a.cols[p];
                    if j == idx {
                        diag = a.vals[p];
                    } else {
                        off += a.vals[p] * u[j];
                    }
                }
                let gs = (rhs[idx] - off) / diag;
                let new = ((1.0 - OMEGA) * u[idx] + OMEGA * gs).max(lvl.g[idx]);
                change = change.max((new - u[idx]).abs());
                u[idx] = new;
            }
            if change <= tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(ObstacleError::SweepLimit {
                level: k,
                sweeps: max_sweeps,
                tol,
            });
        }
        let mut au = vec![0.0; n];
        a.mul(&u, &mut au);
        for idx in 0..n {
            if !grid.is_boundary(idx) {
                // scale the equation residual back to the PDE's units
                let eq = (au[idx] - rhs[idx]) * grid.ht;
                comp = comp.max(eq.min(u[idx] - lvl.g[idx]).abs());
            }
        }
        field.level_mut(k).copy_from_slice(&u);
    }
    Ok(ObstacleSolution {
        field,
        complementarity: comp,
        sweeps: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::truncate_data;
    use crate::model::{benches, SpecSource};
    use crate::model::ProblemSpec;
    use crate::oracles::{compare_fields, Norm};

    #[test]
    fn zero_and_constant_obstacles() {
        let grid = Grid::new(1, 3.0, 61, 20, 1.0).unwrap();
        let zero = truncate_data(&benches::all_zero(), 3.0).unwrap();
        let sol = solve_obstacle(&ObstacleProblem { grid: grid.clone(), data: &zero }, 1e-12, 1000).unwrap();
        assert!(sol.field.values.iter().all(|&v| v == 0.0));

        let one = truncate_data(&benches::const1(), 3.0).unwrap();
        let sol = solve_obstacle(&ObstacleProblem { grid: grid.clone(), data: &one }, 1e-12, 1000).unwrap();
        // inside the region where the cut-off equals one, the value is exactly the obstacle
        for idx in 0..61 {
            if grid.axis_coord(idx).abs() <= 2.0 {
                assert!((sol.field.at(0, idx) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bump_has_nonempty_continuation_region() {
        let spec = ProblemSpec::from_source(&SpecSource {
            dim: 1,
            horizon: 1.0,
            rate: 0.05,
            drift: vec!["-x1"],
            sigma: vec![vec!["0.5"]],
            f: "1000",
            g: "exp(-x1^2)",
            h: "0",
            fd_step: None,
        })
        .unwrap();
        let data = truncate_data(&spec, 4.0).unwrap();
        let solve = |nx: usize, nt: usize| {
            let grid = Grid::new(1, 4.0, nx, nt, 1.0).unwrap();
            solve_obstacle(&ObstacleProblem { grid, data: &data }, 1e-12, 10_000).unwrap()
        };
        let coarse = solve(81, 100);
        let fine = solve(161, 400);
        let finer = solve(321, 1600);
        for sol in [&coarse, &fine, &finer] {
            let g = &sol.field.grid;
            let mut strictly_above = false;
            for k in 0..=g.nt {
                for idx in 0..g.n_nodes() {
                    let x = g.coords(idx);
                    let obstacle = data.g_m(g.time(k), &x).unwrap();
                    assert!(sol.field.at(k, idx) >= obstacle - 1e-14);
                    strictly_above |= sol.field.at(k, idx) > obstacle + 1e-3;
                }
            }
            assert!(strictly_above);
            assert!(sol.complementarity < 1e-8, "{}", sol.complementarity);
        }
        // the kink of the value near the horizon limits the rate to first order in hx
        let d1 = compare_fields(&coarse.field, &fine.field, Norm::Sup).unwrap();
        let d2 = compare_fields(&fine.field, &finer.field, Norm::Sup).unwrap();
        assert!(d2 < 0.5 * d1, "{d1} {d2}");
        assert!(d2 < 2.5e-2, "{d2}");
    }
}
