use serde::{Deserialize, Serialize};

use super::PdeError;

/// Uniform tensor grid on `[0, T] x [-radius, radius]^d` (d = 1 or 2).
///
/// In two dimensions the ball of the given radius is approximated by masking
/// the square: nodes on the square's edge or with `|x| >= radius` carry
/// Dirichlet data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub radius: f64,
    /// Nodes per spatial axis.
    pub nx: usize,
    /// Number of time steps (there are `nt + 1` time levels).
    pub nt: usize,
    pub horizon: f64,
    pub hx: f64,
    pub ht: f64,
    #[serde(skip)]
    boundary: Vec<bool>,
}

impl Grid {
    pub fn new(dim: usize, radius: f64, nx: usize, nt: usize, horizon: f64) -> Result<Self, PdeError> {
        if !(dim == 1 || dim == 2) {
            return Err(PdeError::Grid(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if nx < 3 || nt < 1 {
            return Err(PdeError::Grid(format!("need nx >= 3 and nt >= 1, got nx={nx}, nt={nt}")));
        }
        if !(radius > 0.0 && horizon > 0.0) {
            return Err(PdeError::Grid("radius and horizon must be positive".into()));
        }
        let hx = 2.0 * radius / (nx - 1) as f64;
        let ht = horizon / nt as f64;
        let mut grid = Grid {
            dim,
            radius,
            nx,
            nt,
            horizon,
            hx,
            ht,
            boundary: Vec::new(),
        };
        grid.build_mask();
        Ok(grid)
    }

    /// Grid with (approximately) the requested steps; `2 radius / hx` is rounded to an integer.
    pub fn with_steps(dim: usize, radius: f64, hx: f64, ht: f64, horizon: f64) -> Result<Self, PdeError> {
        if !(hx > 0.0 && ht > 0.0) {
            return Err(PdeError::Grid("steps must be positive".into()));
        }
        let nx = (2.0 * radius / hx).round() as usize + 1;
        let nt = (horizon / ht).round().max(1.0) as usize;
        Grid::new(dim, radius, nx, nt, horizon)
    }

    fn build_mask(&mut self) {
        let n = self.n_nodes();
        let mut mask = vec![false; n];
        let mut x = [0.0; 2];
        for (idx, m) in mask.iter_mut().enumerate() {
            let on_edge = self.axis_indices(idx)[..self.dim].iter().any(|&i| i == 0 || i == self.nx - 1);
            self.coord(idx, &mut x);
            let r = x[..self.dim].iter().map(|v| v * v).sum::<f64>().sqrt();
            *m = on_edge || r >= self.radius * (1.0 - 1e-12);
        }
        self.boundary = mask;
    }

    /// Restores the boundary mask after deserialization.
    pub fn rebuild(mut self) -> Self {
        self.build_mask();
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn n_levels(&self) -> usize {
        self.nt + 1
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.nt {
            self.horizon
        } else {
            k as f64 * self.ht
        }
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.radius + i as f64 * self.hx
    }

    /// Per-axis indices of a node (unused axes are 0).
    pub fn axis_indices(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx % self.nx, idx / self.nx]
        }
    }

    pub fn index(&self, ij: [usize; 2]) -> usize {
        if self.dim == 1 {
            ij[0]
        } else {
            ij[0] + self.nx * ij[1]
        }
    }

    /// Writes the node coordinates into `out[..dim]`.
    pub fn coord(&self, idx: usize, out: &mut [f64]) {
        let ij = self.axis_indices(idx);
        for a in 0..self.dim {
            out[a] = self.axis_coord(ij[a]);
        }
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        self.coord(idx, &mut x);
        x
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.boundary[idx]
    }

    /// Neighbour index along axis `a` in direction `step` (+1 or -1), if inside the square.
    pub fn neighbor(&self, idx: usize, a: usize, step: isize) -> Option<usize> {
        let mut ij = self.axis_indices(idx);
        let k = ij[a] as isize + step;
        if k < 0 || k >= self.nx as isize {
            return None;
        }
        ij[a] = k as usize;
        Some(self.index(ij))
    }

    /// `ht * max diffusion / hx^2`, a diagnostic only (the scheme is implicit).
    pub fn cfl(&self, max_diffusion: f64) -> f64 {
        self.ht * max_diffusion / (self.hx * self.hx)
    }

    /// Whether `x` lies in the closed square covered by the grid.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().take(self.dim).all(|v| v.abs() <= self.radius * (1.0 + 1e-12))
    }
}

/// Nodal values on every time level of a grid, stored level by level.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: &Grid) -> Self {
        GridField {
            values: vec![0.0; grid.n_nodes() * grid.n_levels()],
            grid: grid.clone(),
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(f64, &[f64]) -> f64) -> Self {
        let mut field = GridField::zeros(grid);
        let n = grid.n_nodes();
        let mut x = [0.0; 2];
        for k in 0..grid.n_levels() {
            let t = grid.time(k);
            for idx in 0..n {
                grid.coord(idx, &mut x);
                field.values[k * n + idx] = f(t, &x[..grid.dim]);
            }
        }
        field
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.n_nodes();
        &mut self.values[k * n..(k + 1) * n]
    }

    pub fn at(&self, k: usize, idx: usize) -> f64 {
        self.values[k * self.grid.n_nodes() + idx]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Centered-difference gradient at a node; one-sided on the square's edge.
    pub fn gradient(&self, k: usize, idx: usize, out: &mut [f64]) {
        gradient_of(&self.grid, self.level(k), idx, out);
    }

    /// Multilinear interpolation in space and linear in time; `None` outside the grid.
    pub fn interpolate(&self, t: f64, x: &[f64]) -> Option<f64> {
        if self.grid.dim == 1 {
            let (k, wt, i, w) = self.locate_1d(t, x[0])?;
            let n = self.grid.nx;
            let v = &self.values;
            let at = |k: usize| {
                let row = &v[k * n..(k + 1) * n];
                if w > 0.0 {
                    (1.0 - w) * row[i] + w * row[i + 1]
                } else {
                    row[i]
                }
            };
            return Some(if wt > 0.0 { (1.0 - wt) * at(k) + wt * at(k + 1) } else { at(k) });
        }
        self.interpolate_with(t, x, |k, idx| self.at(k, idx))
    }

    /// Interpolated nodal gradient (same weights as [`GridField::interpolate`]).
    pub fn interpolate_gradient(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let d = self.grid.dim;
        if d == 1 {
            let Some((k, wt, i, w)) = self.locate_1d(t, x[0]) else {
                out[0] = 0.0;
                return false;
            };
            let n = self.grid.nx;
            let at = |k: usize| {
                let row = &self.values[k * n..(k + 1) * n];
                let mut acc = (1.0 - w) * gradient_1d(&self.grid, row, i);
                if w > 0.0 {
                    acc += w * gradient_1d(&self.grid, row, i + 1);
                }
                acc
            };
            out[0] = if wt > 0.0 { (1.0 - wt) * at(k) + wt * at(k + 1) } else { at(k) };
            return true;
        }
        let mut tmp = [0.0; 2];
        let mut acc = [0.0; 2];
        let ok = self
            .interpolate_weights(t, x, |k, idx, w| {
                self.gradient(k, idx, &mut tmp[..d]);
                for a in 0..d {
                    acc[a] += w * tmp[a];
                }
            })
            .is_some();
        out[..d].copy_from_slice(&acc[..d]);
        ok
    }

    /// `(level, time weight, cell, space weight)` of a point in one dimension.
    fn locate_1d(&self, t: f64, x: f64) -> Option<(usize, f64, usize, f64)> {
        let g = &self.grid;
        if !g.contains(&[x]) || !(-1e-12..=g.horizon * (1.0 + 1e-12)).contains(&t) {
            return None;
        }
        let (k, wt) = bracket(t / g.ht, g.nt);
        let (i, w) = bracket((x + g.radius) / g.hx, g.nx - 1);
        Some((k, wt, i, w))
    }

    fn interpolate_with(&self, t: f64, x: &[f64], value: impl Fn(usize, usize) -> f64) -> Option<f64> {
        let mut acc = 0.0;
        self.interpolate_weights(t, x, |k, idx, w| acc += w * value(k, idx))?;
        Some(acc)
    }

    fn interpolate_weights(&self, t: f64, x: &[f64], mut visit: impl FnMut(usize, usize, f64)) -> Option<()> {
        let g = &self.grid;
        if !g.contains(x) || !(-1e-12..=g.horizon * (1.0 + 1e-12)).contains(&t) {
            return None;
        }
        let (k0, wt) = bracket(t / g.ht, g.nt);
        let mut cells = [(0usize, 0.0f64); 2];
        for a in 0..g.dim {
            cells[a] = bracket((x[a] + g.radius) / g.hx, g.nx - 1);
        }
        for (dk, tw) in [(0, 1.0 - wt), (1, wt)] {
            if tw == 0.0 {
                continue;
            }
            let k = k0 + dk;
            if g.dim == 1 {
                let (i, w) = cells[0];
                visit(k, i, tw * (1.0 - w));
                if w > 0.0 {
                    visit(k, i + 1, tw * w);
                }
            } else {
                let (i, wi) = cells[0];
                let (j, wj) = cells[1];
                for (di, a) in [(0, 1.0 - wi), (1, wi)] {
                    for (dj, b) in [(0, 1.0 - wj), (1, wj)] {
                        if a * b > 0.0 {
                            visit(k, g.index([i + di, j + dj]), tw * a * b);
                        }
                    }
                }
            }
        }
        Some(())
    }

    /// Sub-field on the box `[-r0, r0]^d`, which must be aligned with the grid.
    pub fn restrict(&self, r0: f64) -> Result<GridField, PdeError> {
        let g = &self.grid;
        let off_f = (g.radius - r0) / g.hx;
        let off = off_f.round();
        if r0 <= 0.0 || r0 > g.radius || (off_f - off).abs() > 1e-6 {
            return Err(PdeError::Grid(format!("cannot restrict radius {} grid (hx={}) to {r0}", g.radius, g.hx)));
        }
        let off = off as usize;
        let nx = g.nx - 2 * off;
        let sub = Grid::new(g.dim, r0, nx, g.nt, g.horizon)?;
        let mut out = GridField::zeros(&sub);
        let n = sub.n_nodes();
        for k in 0..sub.n_levels() {
            for idx in 0..n {
                let ij = sub.axis_indices(idx);
                let src = if g.dim == 1 {
                    g.index([ij[0] + off, 0])
                } else {
                    g.index([ij[0] + off, ij[1] + off])
                };
                out.values[k * n + idx] = self.at(k, src);
            }
        }
        Ok(out)
    }
}

/// `(cell index, fractional weight)` for a coordinate measured in steps, clamped to `[0, n]`.
fn bracket(s: f64, n: usize) -> (usize, f64) {
    let s = s.clamp(0.0, n as f64);
    // `s >= 0`, so truncation is the floor (and much cheaper than `f64::floor`)
    let i = (s as usize).min(n - 1);
    let w = s - i as f64;
    // snap to the node so values at grid points are reproduced exactly
    if w < 1e-9 {
        (i, 0.0)
    } else if w > 1.0 - 1e-9 {
        if i + 1 < n {
            (i + 1, 0.0)
        } else {
            (i, 1.0)
        }
    } else {
        (i, w)
    }
}

fn gradient_1d(grid: &Grid, u: &[f64], idx: usize) -> f64 {
    let last = grid.nx - 1;
    match idx {
        _ if last == 0 => 0.0,
        0 => (u[1] - u[0]) / grid.hx,
        i if i == last => (u[i] - u[i - 1]) / grid.hx,
        i => (u[i + 1] - u[i - 1]) / (2.0 * grid.hx),
    }
}

/// Centered gradient of a level vector at `idx`, one-sided on the square edge.
pub fn gradient_of(grid: &Grid, u: &[f64], idx: usize, out: &mut [f64]) {
    if grid.dim == 1 {
        out[0] = gradient_1d(grid, u, idx);
        return;
    }
    for (a, o) in out.iter_mut().enumerate().take(grid.dim) {
        let p = grid.neighbor(idx, a, 1);
        let m = grid.neighbor(idx, a, -1);
        *o = match (p, m) {
            (Some(p), Some(m)) => (u[p] - u[m]) / (2.0 * grid.hx),
            (Some(p), None) => (u[p] - u[idx]) / grid.hx,
            (None, Some(m)) => (u[idx] - u[m]) / grid.hx,
            (None, None) => 0.0,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_geometry() {
        let g = Grid::with_steps(1, 3.0, 0.02, 2e-4, 1.0).unwrap();
        assert_eq!(g.nx, 301);
        assert_eq!(g.nt, 5000);
        assert_abs_diff_eq!(g.hx, 0.02, epsilon = 1e-15);
        assert!(g.is_boundary(0) && g.is_boundary(300) && !g.is_boundary(150));
        assert_eq!(g.axis_coord(150), 0.0);
        assert_eq!(g.time(g.nt), 1.0);
    }

    #[test]
    fn disk_mask_in_2d() {
        let g = Grid::new(2, 1.0, 21, 4, 1.0).unwrap();
        let centre = g.index([10, 10]);
        assert!(!g.is_boundary(centre));
        // corner-ish node inside the square but outside the disk
        let outside = g.index([2, 2]);
        assert!(g.coords(outside).iter().map(|v| v * v).sum::<f64>().sqrt() > 1.0);
        assert!(g.is_boundary(outside));
    }

    #[test]
    fn interpolation_reproduces_bilinear_functions() {
        let g = Grid::new(2, 1.0, 11, 5, 1.0).unwrap();
        let f = GridField::from_fn(&g, |t, x| 1.0 + 2.0 * t + 3.0 * x[0] - x[1] + 0.5 * x[0] * x[1]);
        for &(t, x0, x1) in &[(0.33, 0.17, -0.41), (1.0, 1.0, -1.0), (0.0, -0.93, 0.05)] {
            let v = f.interpolate(t, &[x0, x1]).unwrap();
            assert_abs_diff_eq!(v, 1.0 + 2.0 * t + 3.0 * x0 - x1 + 0.5 * x0 * x1, epsilon = 1e-12);
        }
        assert!(f.interpolate(0.5, &[1.2, 0.0]).is_none());
        let mut grad = [0.0; 2];
        assert!(f.interpolate_gradient(0.5, &[0.0, 0.0], &mut grad));
        assert_abs_diff_eq!(grad[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[1], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn restriction_keeps_values() {
        let g = Grid::new(1, 2.0, 41, 3, 1.0).unwrap();
        let f = GridField::from_fn(&g, |t, x| t + x[0] * x[0]);
        let r = f.restrict(1.0).unwrap();
        assert_eq!(r.grid.nx, 21);
        assert_abs_diff_eq!(r.at(2, 0), f.grid.time(2) + 1.0, epsilon = 1e-12);
        assert!(f.restrict(0.95).is_err());
    }
}
