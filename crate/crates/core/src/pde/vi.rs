use serde::{Deserialize, Serialize};

use super::grid::{gradient_of, Grid, GridField};
use super::operator::Operator;
use super::solver::{DataPoint, DataSource, DataSlices};
use super::PdeError;
use crate::kernel::KernelError;
use crate::model::ProblemSpec;

/// The untruncated problem data, for diagnostics on the inner box.
pub struct RawData<'a>(pub &'a ProblemSpec);

impl DataSource for RawData<'_> {
    fn spec(&self) -> &ProblemSpec {
        self.0
    }

    fn point(&self, t: f64, x: &[f64]) -> Result<DataPoint, KernelError> {
        Ok(DataPoint {
            g: self.0.g.eval(t, x)?,
            h: self.0.h.eval(t, x)?,
            f: self.0.f.eval(t, x)?,
        })
    }

    fn time_dependent(&self) -> bool {
        self.0.g.uses_time() || self.0.h.uses_time() || self.0.f.uses_time()
    }

    fn theta(&self, t: f64, x: &[f64]) -> Result<f64, KernelError> {
        Ok(self.0.theta(t, x)?)
    }
}

/// Region codes used in region maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum Region {
    Stop = 0,
    Band = 1,
    Continuation = 2,
}

#[derive(Debug, Clone)]
pub struct ViReport {
    /// `u > g + tol_region` (interior nodes, levels before the horizon).
    pub region_c: Vec<bool>,
    /// `|grad u| < f - tol_region`.
    pub region_i: Vec<bool>,
    /// `min{max{A, g - u}, f - |grad u|}` with `A = u_t + L u - r u + h`.
    pub residual_minmax: GridField,
    /// `max{min{A, f - |grad u|}, g - u}`.
    pub residual_maxmin: GridField,
    pub max_obstacle_violation: f64,
    pub max_gradient_violation: f64,
    pub sup_minmax: f64,
    pub sup_maxmin: f64,
    pub sup_difference: f64,
    /// `max |u(T) - g(T)|`.
    pub terminal_error: f64,
    /// Interior nodes in neither region (within `tol_region` of both constraints).
    pub band_nodes: usize,
    pub tol_region: f64,
    /// Stop where `u - g <= hx^2`, continuation on `region_c`, band in between
    /// (boundary nodes and the terminal level are reported as band).
    pub regions: Vec<Region>,
}

impl ViReport {
    pub fn region(&self, grid: &Grid, k: usize, idx: usize) -> Region {
        self.regions[k * grid.n_nodes() + idx]
    }
}

/// `(max (g - u)^+, max (|grad u| - f)^+)` over interior nodes of every level.
pub fn constraint_violations(field: &GridField, data: &dyn DataSource) -> Result<(f64, f64), PdeError> {
    let grid = &field.grid;
    let slices = DataSlices::new(grid, data)?;
    let mut obstacle: f64 = 0.0;
    let mut gradient: f64 = 0.0;
    let mut gb = [0.0; 2];
    for k in 0..grid.n_levels() {
        let lvl = slices.get(k)?;
        let u = field.level(k);
        for idx in 0..grid.n_nodes() {
            if grid.is_boundary(idx) {
                continue;
            }
            obstacle = obstacle.max(lvl.g[idx] - u[idx]);
            gradient_of(grid, u, idx, &mut gb);
            let gn = gb[..grid.dim].iter().map(|v| v * v).sum::<f64>().sqrt();
            gradient = gradient.max(gn - lvl.f2[idx].sqrt());
        }
    }
    Ok((obstacle.max(0.0), gradient.max(0.0)))
}

/// Discrete residuals of both orders of the variational inequality and the region masks.
pub fn vi_report(field: &GridField, spec: &ProblemSpec, tol_region: f64) -> Result<ViReport, PdeError> {
    let grid = &field.grid;
    let data = RawData(spec);
    let op = Operator::new(grid, spec)?;
    let slices = DataSlices::new(grid, &data)?;
    let n = grid.n_nodes();
    let nt = grid.nt;
    let mut minmax = GridField::zeros(grid);
    let mut maxmin = GridField::zeros(grid);
    let mut region_c = vec![false; n * grid.n_levels()];
    let mut region_i = vec![false; n * grid.n_levels()];
    let (mut sup_a, mut sup_b, mut sup_d) = (0.0f64, 0.0f64, 0.0f64);
    let mut band_nodes = 0;
    let mut regions = vec![Region::Band; n * grid.n_levels()];
    let mut gb = [0.0; 2];
    for k in 0..nt {
        let lvl = slices.get(k)?;
        let u = field.level(k);
        let next = field.level(k + 1);
        for idx in 0..n {
            if grid.is_boundary(idx) {
                continue;
            }
            let a = (next[idx] - u[idx]) / grid.ht + op.apply_at(u, idx) - op.rate * u[idx] + lvl.h[idx];
            gradient_of(grid, u, idx, &mut gb);
            let gn = gb[..grid.dim].iter().map(|v| v * v).sum::<f64>().sqrt();
            let f = lvl.f2[idx].sqrt();
            let obst = lvl.g[idx] - u[idx];
            let grad = f - gn;
            let r1 = a.max(obst).min(grad);
            let r2 = a.min(grad).max(obst);
            minmax.values[k * n + idx] = r1;
            maxmin.values[k * n + idx] = r2;
            sup_a = sup_a.max(r1.abs());
            sup_b = sup_b.max(r2.abs());
            sup_d = sup_d.max((r1 - r2).abs());
            let in_c = u[idx] > lvl.g[idx] + tol_region;
            let in_i = gn < f - tol_region;
            region_c[k * n + idx] = in_c;
            region_i[k * n + idx] = in_i;
            regions[k * n + idx] = if in_c {
                Region::Continuation
            } else if -obst <= grid.hx * grid.hx {
                Region::Stop
            } else {
                Region::Band
            };
            if !in_c && !in_i {
                band_nodes += 1;
            }
        }
    }
    let term = slices.get(nt)?;
    let terminal_error = field
        .level(nt)
        .iter()
        .zip(&term.g)
        .fold(0.0f64, |m, (u, g)| m.max((u - g).abs()));
    let (max_obstacle_violation, max_gradient_violation) = constraint_violations(field, &data)?;
    Ok(ViReport {
        region_c,
        region_i,
        residual_minmax: minmax,
        residual_maxmin: maxmin,
        max_obstacle_violation,
        max_gradient_violation,
        sup_minmax: sup_a,
        sup_maxmin: sup_b,
        sup_difference: sup_d,
        terminal_error,
        band_nodes,
        tol_region,
        regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::benches;

    #[test]
    fn zero_field_on_zero_data() {
        let spec = benches::all_zero();
        let grid = Grid::new(1, 2.0, 41, 20, 1.0).unwrap();
        let r = vi_report(&GridField::zeros(&grid), &spec, 0.2).unwrap();
        assert_eq!(r.sup_minmax, 0.0);
        assert_eq!(r.sup_maxmin, 0.0);
        assert!(r.region_c.iter().all(|c| !c));
        for k in 0..grid.nt {
            for idx in 1..40 {
                assert!(r.region_i[k * 41 + idx]);
            }
        }
        assert_eq!(r.terminal_error, 0.0);
    }
}
