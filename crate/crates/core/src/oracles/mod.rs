//! Independent brute-force references: a projected-relaxation obstacle solver
//! for the pure stopping problem and a trinomial lattice game solved by
//! backward induction.

mod lattice;
mod obstacle;

use serde::{Deserialize, Serialize};

use crate::pde::{GridField, PdeError};

pub use lattice::{solve_lattice_game, LatticeGame, LatticeSolution};
pub use obstacle::{solve_obstacle, ObstacleError, ObstacleProblem, ObstacleSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    Sup,
    /// Root-mean-square over the common nodes.
    L2,
}

/// Discrepancy of two fields over the nodes of the finer one that lie in the common box.
///
/// The coarser field is interpolated (multilinear in space, linear in time).
pub fn compare_fields(a: &GridField, b: &GridField, norm: Norm) -> Result<f64, PdeError> {
    let (ga, gb) = (&a.grid, &b.grid);
    if ga.dim != gb.dim || (ga.horizon - gb.horizon).abs() > 1e-12 * ga.horizon {
        return Err(PdeError::DisjointDomains);
    }
    let a_finer = ga.hx < gb.hx * (1.0 - 1e-12) || ((ga.hx - gb.hx).abs() <= 1e-12 * ga.hx && ga.nt >= gb.nt);
    let (fine, coarse) = if a_finer { (a, b) } else { (b, a) };
    let common = ga.radius.min(gb.radius) * (1.0 + 1e-12);
    let g = &fine.grid;
    let mut x = [0.0; 2];
    let mut sup: f64 = 0.0;
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..g.n_levels() {
        let t = g.time(k);
        for idx in 0..g.n_nodes() {
            g.coord(idx, &mut x);
            if x[..g.dim].iter().any(|v| v.abs() > common) {
                continue;
            }
            let Some(other) = coarse.interpolate(t, &x[..g.dim]) else {
                continue;
            };
            let d = (fine.at(k, idx) - other).abs();
            sup = sup.max(d);
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(PdeError::DisjointDomains);
    }
    Ok(match norm {
        Norm::Sup => sup,
        Norm::L2 => (sum / count as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::Grid;

    #[test]
    fn identical_fields() {
        let g = Grid::new(1, 1.0, 11, 4, 1.0).unwrap();
        let f = GridField::from_fn(&g, |t, x| t * x[0]);
        assert_eq!(compare_fields(&f, &f, Norm::Sup).unwrap(), 0.0);
        assert_eq!(compare_fields(&f, &f, Norm::L2).unwrap(), 0.0);
    }

    #[test]
    fn unit_offset() {
        let g = Grid::new(2, 1.0, 5, 2, 1.0).unwrap();
        let zero = GridField::zeros(&g);
        let one = GridField::from_fn(&g, |_, _| 1.0);
        assert_eq!(compare_fields(&zero, &one, Norm::Sup).unwrap(), 1.0);
        assert_eq!(compare_fields(&zero, &one, Norm::L2).unwrap(), 1.0);
    }

    #[test]
    fn different_resolutions_and_boxes() {
        let coarse = Grid::new(1, 2.0, 21, 10, 1.0).unwrap();
        let fine = Grid::new(1, 1.0, 41, 20, 1.0).unwrap();
        let a = GridField::from_fn(&coarse, |t, x| 2.0 * t + x[0]);
        let b = GridField::from_fn(&fine, |t, x| 2.0 * t + x[0]);
        assert!(compare_fields(&a, &b, Norm::Sup).unwrap() < 1e-12);
        let other_horizon = Grid::new(1, 1.0, 41, 20, 2.0).unwrap();
        assert!(compare_fields(&a, &GridField::zeros(&other_horizon), Norm::Sup).is_err());
    }
}
