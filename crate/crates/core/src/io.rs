//! Artifact formats: field CSVs, plain-PGM region maps, a binary field file,
//! and CSV dumps of the penalty and Hamiltonian curves.
//!
//! Every writer is deterministic: numbers use Rust's shortest round-trip
//! formatting, so equal inputs give byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::kernel::{hamiltonian, KernelError, Penalty};
use crate::pde::{Grid, GridField, PdeError, Region, ViReport};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a field file: {0}")]
    Format(String),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

/// `count` time levels spread evenly over `0..=nt`, always including both ends.
pub fn slice_levels(nt: usize, count: usize) -> Vec<usize> {
    if count <= 1 {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..count)
        .map(|i| ((i as f64) * nt as f64 / (count - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

/// Field dump with header `t, x1[, x2], u, ux1[, ux2], residual_minmax, residual_maxmin, inC, inI`.
///
/// Without a VI report the residual and region columns are left empty, which
/// is how oracle fields are written.
pub fn write_field_csv(
    out: &mut impl Write,
    field: &GridField,
    vi: Option<&ViReport>,
    levels: &[usize],
) -> Result<(), IoError> {
    let grid = &field.grid;
    let d = grid.dim;
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|a| format!("x{a}")));
    header.push("u".into());
    header.extend((1..=d).map(|a| format!("ux{a}")));
    header.extend(["residual_minmax", "residual_maxmin", "inC", "inI"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    let n = grid.n_nodes();
    let mut x = [0.0; 2];
    let mut du = [0.0; 2];
    for &k in levels {
        if k > grid.nt {
            return Err(PdeError::Grid(format!("time level {k} beyond {}", grid.nt)).into());
        }
        let t = grid.time(k);
        for idx in 0..n {
            grid.coord(idx, &mut x);
            field.gradient(k, idx, &mut du);
            let mut row = format!("{t}");
            for v in &x[..d] {
                row.push_str(&format!(",{v}"));
            }
            row.push_str(&format!(",{}", field.at(k, idx)));
            for v in &du[..d] {
                row.push_str(&format!(",{v}"));
            }
            match vi {
                Some(vi) => {
                    let at = k * n + idx;
                    row.push_str(&format!(
                        ",{},{},{},{}",
                        vi.residual_minmax.values[at],
                        vi.residual_maxmin.values[at],
                        u8::from(vi.region_c[at]),
                        u8::from(vi.region_i[at])
                    ));
                }
                None => row.push_str(",,,,"),
            }
            writeln!(out, "{row}")?;
        }
    }
    Ok(())
}

pub fn save_field_csv(path: &Path, field: &GridField, vi: Option<&ViReport>, levels: &[usize]) -> Result<(), IoError> {
    let mut w = create(path)?;
    write_field_csv(&mut w, field, vi, levels)?;
    w.flush()?;
    Ok(())
}

/// Plain PGM (`P2`, maxval 2) of the region codes at level `k`:
/// 0 stop, 1 band, 2 continuation. In 2D the first row is the largest `x2`.
pub fn write_region_pgm(out: &mut impl Write, vi: &ViReport, grid: &Grid, k: usize) -> Result<(), IoError> {
    if k > grid.nt {
        return Err(PdeError::Grid(format!("time level {k} beyond {}", grid.nt)).into());
    }
    let nx = grid.nx;
    let rows = if grid.dim == 1 { 1 } else { nx };
    writeln!(out, "P2")?;
    writeln!(out, "# t={}", grid.time(k))?;
    writeln!(out, "{nx} {rows}")?;
    writeln!(out, "2")?;
    for r in 0..rows {
        let j = rows - 1 - r;
        let line: Vec<String> = (0..nx)
            .map(|i| {
                let idx = if grid.dim == 1 { i } else { grid.index([i, j]) };
                (vi.region(grid, k, idx) as u8).to_string()
            })
            .collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn save_region_pgm(path: &Path, vi: &ViReport, grid: &Grid, k: usize) -> Result<(), IoError> {
    let mut w = create(path)?;
    write_region_pgm(&mut w, vi, grid, k)?;
    w.flush()?;
    Ok(())
}

/// Parses a `P2` region map back into codes (row-major, first row on top).
pub fn read_region_pgm(text: &str) -> Result<(usize, usize, Vec<Region>), IoError> {
    let mut tokens = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(str::split_whitespace);
    let bad = |m: &str| IoError::Format(m.to_string());
    if tokens.next() != Some("P2") {
        return Err(bad("missing P2 magic"));
    }
    let mut num = || -> Result<usize, IoError> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("truncated or non-numeric PGM"))
    };
    let (w, h, _max) = (num()?, num()?, num()?);
    let mut codes = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        codes.push(match num()? {
            0 => Region::Stop,
            1 => Region::Band,
            2 => Region::Continuation,
            _ => return Err(bad("region code outside 0..=2")),
        });
    }
    Ok((w, h, codes))
}

const MAGIC: &[u8; 8] = b"CSFIELD1";

/// Little-endian binary field: magic, `dim, nx, nt` as u64, `radius, horizon`
/// as f64, then every value level by level.
pub fn write_field_binary(out: &mut impl Write, field: &GridField) -> Result<(), IoError> {
    let g = &field.grid;
    out.write_all(MAGIC)?;
    for v in [g.dim as u64, g.nx as u64, g.nt as u64] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in [g.radius, g.horizon] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in &field.values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field_binary(input: &mut impl Read) -> Result<GridField, IoError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(IoError::Format("bad magic".into()));
    }
    let mut word = [0u8; 8];
    let mut next = |input: &mut dyn Read| -> Result<[u8; 8], IoError> {
        input.read_exact(&mut word)?;
        Ok(word)
    };
    let dim = u64::from_le_bytes(next(input)?) as usize;
    let nx = u64::from_le_bytes(next(input)?) as usize;
    let nt = u64::from_le_bytes(next(input)?) as usize;
    let radius = f64::from_le_bytes(next(input)?);
    let horizon = f64::from_le_bytes(next(input)?);
    let grid = Grid::new(dim, radius, nx, nt, horizon)?;
    let len = grid.n_nodes() * grid.n_levels();
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * len {
        return Err(IoError::Format(format!("expected {} values, found {} bytes", len, bytes.len())));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
        .collect();
    Ok(GridField { grid, values })
}

pub fn save_field_binary(path: &Path, field: &GridField) -> Result<(), IoError> {
    let mut w = create(path)?;
    write_field_binary(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn load_field_binary(path: &Path) -> Result<GridField, IoError> {
    let file = File::open(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    read_field_binary(&mut BufReader::new(file))
}

/// `y, psi, dpsi, d2psi` on `points` equispaced values of `[-eps, 3 eps]`.
pub fn write_penalty_curve(out: &mut impl Write, pen: &Penalty, points: usize) -> Result<(), IoError> {
    writeln!(out, "y,psi,dpsi,d2psi")?;
    let (lo, hi) = (-pen.eps, 3.0 * pen.eps);
    for i in 0..points {
        let y = lo + (hi - lo) * i as f64 / (points.max(2) - 1) as f64;
        writeln!(out, "{y},{},{},{}", pen.psi(y), pen.dpsi(y), pen.d2psi(y))?;
    }
    Ok(())
}

/// `|y|, H` for `|y|` equispaced on `[0, y_max]` at cost level `f`.
pub fn write_hamiltonian_curve(
    out: &mut impl Write,
    pen: &Penalty,
    f: f64,
    y_max: f64,
    points: usize,
) -> Result<(), IoError> {
    writeln!(out, "|y|,H")?;
    for i in 0..points {
        let y = y_max * i as f64 / (points.max(2) - 1) as f64;
        let (h, _) = hamiltonian(pen, f, &[y])?;
        writeln!(out, "{y},{h}")?;
    }
    Ok(())
}
