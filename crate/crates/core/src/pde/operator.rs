//! Finite-difference generator and the sparse linear algebra for one time level.

use super::grid::Grid;
use super::PdeError;
use crate::model::ProblemSpec;

/// Cell Péclet threshold above which the drift is upwinded.
pub const PECLET_LIMIT: f64 = 2.0;

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * x[self.cols[p]];
            }
            *o = acc;
        }
    }

    fn diag(&self, i: usize) -> f64 {
        (self.row_ptr[i]..self.row_ptr[i + 1])
            .find(|&p| self.cols[p] == i)
            .map_or(0.0, |p| self.vals[p])
    }

    /// Solves `A x = b`: Thomas elimination for tridiagonal (1-D) matrices,
    /// Jacobi-preconditioned BiCGSTAB otherwise. `x` holds the initial guess.
    pub fn solve(&self, b: &[f64], x: &mut [f64], tridiagonal: bool) -> Result<(), String> {
        if tridiagonal {
            self.thomas(b, x)
        } else {
            self.bicgstab(b, x)
        }
    }

    fn thomas(&self, b: &[f64], x: &mut [f64]) -> Result<(), String> {
        let n = self.n();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut prev_c = 0.0;
        let mut prev_d = 0.0;
        for i in 0..n {
            let (mut lo, mut di, mut up) = (0.0, 0.0, 0.0);
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[p];
                if j + 1 == i {
                    lo = self.vals[p];
                } else if j == i {
                    di = self.vals[p];
                } else if j == i + 1 {
                    up = self.vals[p];
                } else {
                    return Err(format!("row {i} is not tridiagonal"));
                }
            }
            let denom = di - lo * prev_c;
            if denom.abs() < 1e-300 || !denom.is_finite() {
                return Err(format!("zero pivot at row {i}"));
            }
            c[i] = up / denom;
            d[i] = (b[i] - lo * prev_d) / denom;
            prev_c = c[i];
            prev_d = d[i];
        }
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err("non-finite solution".into())
        }
    }

    fn bicgstab(&self, b: &[f64], x: &mut [f64]) -> Result<(), String> {
        let n = self.n();
        let inv_diag: Vec<f64> = (0..n)
            .map(|i| {
                let d = self.diag(i);
                if d == 0.0 {
                    1.0
                } else {
                    1.0 / d
                }
            })
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let bnorm = dot(b, b).sqrt().max(1e-300);
        let mut r = vec![0.0; n];
        self.mul(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        if dot(&r, &r).sqrt() <= 1e-13 * bnorm {
            return Ok(());
        }
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut t = vec![0.0; n];
        for _ in 0..5000 {
            let rho_new = dot(&r0, &r);
            if rho_new.abs() < 1e-300 {
                return Err("BiCGSTAB breakdown".into());
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
                y[i] = inv_diag[i] * p[i];
            }
            self.mul(&y, &mut v);
            alpha = rho / dot(&r0, &v);
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if dot(&s, &s).sqrt() <= 1e-13 * bnorm {
                for i in 0..n {
                    x[i] += alpha * y[i];
                }
                return Ok(());
            }
            for i in 0..n {
                z[i] = inv_diag[i] * s[i];
            }
            self.mul(&z, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * y[i] + omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err("non-finite iterate".into());
            }
            if dot(&r, &r).sqrt() <= 1e-13 * bnorm {
                return Ok(());
            }
            if omega == 0.0 {
                return Err("BiCGSTAB stagnation".into());
            }
        }
        Err("BiCGSTAB did not converge".into())
    }
}

/// The discrete generator `L_h` on the interior nodes of a grid, with a fixed
/// sparsity pattern shared by every matrix assembled from it.
#[derive(Debug, Clone)]
pub struct Operator {
    pub grid: Grid,
    pub rate: f64,
    /// Pattern and values of `L_h`; boundary rows hold only a zero diagonal.
    pub pattern: CsrMatrix,
    pub diag_pos: Vec<usize>,
    /// Position of the `-e_a` / `+e_a` neighbour in each interior row.
    pub axis_pos: Vec<[[usize; 2]; 2]>,
    /// Number of (node, axis) pairs where the drift was upwinded.
    pub upwinded: usize,
    pub max_diffusion: f64,
}

impl Operator {
    pub fn new(grid: &Grid, spec: &ProblemSpec) -> Result<Self, PdeError> {
        if spec.dim != grid.dim {
            return Err(PdeError::Grid(format!(
                "spec dimension {} does not match grid dimension {}",
                spec.dim, grid.dim
            )));
        }
        let d = grid.dim;
        let n = grid.n_nodes();
        let hx = grid.hx;
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag_pos = vec![0; n];
        let mut axis_pos = vec![[[0; 2]; 2]; n];
        let mut upwinded = 0;
        let mut max_diffusion: f64 = 0.0;
        let mut x = [0.0; 2];
        let mut b = [0.0; 2];
        for idx in 0..n {
            if grid.is_boundary(idx) {
                diag_pos[idx] = cols.len();
                cols.push(idx);
                vals.push(0.0);
                row_ptr.push(cols.len());
                continue;
            }
            grid.coord(idx, &mut x);
            spec.drift_at(&x[..d], &mut b[..d]).map_err(|e| PdeError::Data(e.into()))?;
            let a = spec.diffusion_at(&x[..d]).map_err(|e| PdeError::Data(e.into()))?;
            let mut entries: Vec<(usize, f64)> = vec![(idx, 0.0)];
            let add = |entries: &mut Vec<(usize, f64)>, j: usize, v: f64| {
                if let Some(e) = entries.iter_mut().find(|e| e.0 == j) {
                    e.1 += v;
                } else {
                    entries.push((j, v));
                }
            };
            for ax in 0..d {
                let ajj = a[ax * d + ax];
                max_diffusion = max_diffusion.max(ajj);
                let m = grid.neighbor(idx, ax, -1).expect("interior node has neighbours");
                let p = grid.neighbor(idx, ax, 1).expect("interior node has neighbours");
                let c2 = 0.5 * ajj / (hx * hx);
                add(&mut entries, m, c2);
                add(&mut entries, p, c2);
                add(&mut entries, idx, -2.0 * c2);
                let bj = b[ax];
                let peclet = if ajj > 0.0 { bj.abs() * hx / (0.5 * ajj) } else { f64::INFINITY };
                if peclet > PECLET_LIMIT && bj != 0.0 {
                    upwinded += 1;
                    if bj > 0.0 {
                        add(&mut entries, p, bj / hx);
                        add(&mut entries, idx, -bj / hx);
                    } else {
                        add(&mut entries, idx, bj / hx);
                        add(&mut entries, m, -bj / hx);
                    }
                } else {
                    add(&mut entries, p, bj / (2.0 * hx));
                    add(&mut entries, m, -bj / (2.0 * hx));
                }
            }
            if d == 2 {
                let a12 = 0.5 * (a[1] + a[2]);
                let ij = grid.axis_indices(idx);
                let c = a12 / (4.0 * hx * hx);
                for (di, dj, s) in [(1isize, 1isize, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                    let j = grid.index([(ij[0] as isize + di) as usize, (ij[1] as isize + dj) as usize]);
                    add(&mut entries, j, s * c);
                }
            }
            entries.sort_by_key(|e| e.0);
            let start = cols.len();
            for (j, v) in entries {
                if j == idx {
                    diag_pos[idx] = cols.len();
                }
                for ax in 0..d {
                    if Some(j) == grid.neighbor(idx, ax, -1) {
                        axis_pos[idx][ax][0] = cols.len();
                    }
                    if Some(j) == grid.neighbor(idx, ax, 1) {
                        axis_pos[idx][ax][1] = cols.len();
                    }
                }
                cols.push(j);
                vals.push(v);
            }
            debug_assert!(cols.len() > start);
            row_ptr.push(cols.len());
        }
        Ok(Operator {
            grid: grid.clone(),
            rate: spec.rate,
            pattern: CsrMatrix { row_ptr, cols, vals },
            diag_pos,
            axis_pos,
            upwinded,
            max_diffusion,
        })
    }

    /// `(L_h u)_i` at an interior node.
    pub fn apply_at(&self, u: &[f64], idx: usize) -> f64 {
        let m = &self.pattern;
        (m.row_ptr[idx]..m.row_ptr[idx + 1]).map(|p| m.vals[p] * u[m.cols[p]]).sum()
    }

    /// `(1/ht + r) I - L_h` on interior rows, identity on boundary rows.
    pub fn implicit_matrix(&self) -> CsrMatrix {
        let mut a = self.pattern.clone();
        let shift = 1.0 / self.grid.ht + self.rate;
        for v in a.vals.iter_mut() {
            *v = -*v;
        }
        for idx in 0..a.n() {
            let p = self.diag_pos[idx];
            a.vals[p] = if self.grid.is_boundary(idx) { 1.0 } else { a.vals[p] + shift };
        }
        a
    }

    pub fn tridiagonal(&self) -> bool {
        self.grid.dim == 1
    }
}
