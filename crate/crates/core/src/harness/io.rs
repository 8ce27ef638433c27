//! Trace CSV, legacy-VTK field and history files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{FwiError, Result};
use crate::forward::TraceRecord;
use crate::inversion::{history_csv, IterationRecord};
use crate::medium::{velocities, MaterialField};
use crate::specgrid::SpectralMesh;

pub const TRACE_HEADER: &str = "t,receiver_id,x,y,z,ux,uy,uz";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FwiError::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, text).map_err(|e| FwiError::io(format!("writing {}", path.display()), e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| FwiError::io(format!("reading {}", path.display()), e))
}

fn parse_err(path: &Path, line: usize, message: impl std::fmt::Display) -> FwiError {
    FwiError::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    }
}

/// One row per sample and receiver, 17 significant digits.
pub fn traces_csv(record: &TraceRecord) -> String {
    let mut s = String::with_capacity(160 * record.n_samples * record.n_receivers() + 64);
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for k in 0..record.n_samples {
        let t = record.time(k);
        for (r, (&id, c)) in record.receivers.iter().zip(&record.coords).enumerate() {
            let u = record.get(k, r);
            let _ = writeln!(
                s,
                "{t:.16e},{id},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                c[0], c[1], c[2], u[0], u[1], u[2]
            );
        }
    }
    s
}

pub fn export_traces(record: &TraceRecord, path: &Path) -> Result<()> {
    write(path, &traces_csv(record))
}

/// Reads a trace CSV written by [`export_traces`]; rows must be grouped by time.
pub fn import_traces(path: &Path) -> Result<TraceRecord> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACE_HEADER => {}
        _ => return Err(parse_err(path, 1, format!("expected header `{TRACE_HEADER}`"))),
    }
    let mut times: Vec<f64> = Vec::new();
    let mut receivers: Vec<u32> = Vec::new();
    let mut coords: Vec<[f64; 3]> = Vec::new();
    let mut data = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(parse_err(path, i + 1, format!("expected 8 columns, found {}", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| parse_err(path, i + 1, e));
        let t = num(f[0])?;
        let id: u32 = f[1].trim().parse().map_err(|e| parse_err(path, i + 1, e))?;
        if times.last() != Some(&t) {
            times.push(t);
        }
        let slot = data.len() / 3 % receivers.len().max(1);
        if times.len() == 1 {
            receivers.push(id);
            coords.push([num(f[2])?, num(f[3])?, num(f[4])?]);
        } else if receivers.get(slot) != Some(&id) {
            return Err(parse_err(path, i + 1, format!("receiver {id} out of order")));
        }
        for c in &f[5..8] {
            data.push(num(c)?);
        }
    }
    if times.is_empty() || data.len() != times.len() * receivers.len() * 3 {
        return Err(parse_err(path, 1, "incomplete trace table"));
    }
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    Ok(TraceRecord {
        receivers,
        coords,
        dt,
        n_samples: times.len(),
        data,
    })
}

/// Legacy-VTK ASCII structured grid with point arrays lambda, mu, rho, cs, cp.
pub fn field_vtk(field: &MaterialField, mesh: &SpectralMesh) -> Result<String> {
    let n = mesh.n_nodes();
    let [nx, ny, nz] = mesh.node_counts;
    let (cs, cp) = velocities(field)?;
    let mut s = String::with_capacity(n * 140);
    s.push_str("# vtk DataFile Version 3.0\nmaterial field\nASCII\nDATASET STRUCTURED_GRID\n");
    let _ = writeln!(s, "DIMENSIONS {nx} {ny} {nz}\nPOINTS {n} double");
    for c in &mesh.coords {
        let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", c[0], c[1], c[2]);
    }
    let _ = writeln!(s, "POINT_DATA {n}");
    for (name, v) in [
        ("lambda", &field.lambda),
        ("mu", &field.mu),
        ("rho", &field.rho),
        ("cs", &cs),
        ("cp", &cp),
    ] {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for x in v.iter() {
            let _ = writeln!(s, "{x:.16e}");
        }
    }
    Ok(s)
}

pub fn export_field(field: &MaterialField, mesh: &SpectralMesh, path: &Path) -> Result<()> {
    write(path, &field_vtk(field, mesh)?)
}

/// Contents of a structured-grid file written by [`export_field`].
#[derive(Debug, Clone, PartialEq)]
pub struct VtkGrid {
    pub dims: [usize; 3],
    pub points: Vec<[f64; 3]>,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl VtkGrid {
    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// `(z, value)` pairs of the grid column through `(x, y)`, bottom to top.
    pub fn column(&self, name: &str, x: f64, y: f64) -> Option<Vec<(f64, f64)>> {
        let v = self.array(name)?;
        let tol = 1e-9;
        let out: Vec<(f64, f64)> = self
            .points
            .iter()
            .zip(v)
            .filter(|(p, _)| (p[0] - x).abs() < tol && (p[1] - y).abs() < tol)
            .map(|(p, &v)| (p[2], v))
            .collect();
        (!out.is_empty()).then_some(out)
    }
}

pub fn import_field(path: &Path) -> Result<VtkGrid> {
    let text = read(path)?;
    let tokens: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .skip(4)
        .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
        .collect();
    let mut cur = Tokens { path, tokens, pos: 0 };
    cur.expect("DIMENSIONS")?;
    let dims = [cur.number()?, cur.number()?, cur.number()?];
    cur.expect("POINTS")?;
    let n: usize = cur.number()?;
    cur.word()?;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push([cur.number()?, cur.number()?, cur.number()?]);
    }
    cur.expect("POINT_DATA")?;
    let _: usize = cur.number()?;
    let mut arrays = Vec::new();
    while cur.pos < cur.tokens.len() {
        cur.expect("SCALARS")?;
        let name = cur.word()?.to_string();
        cur.word()?;
        cur.word()?;
        cur.expect("LOOKUP_TABLE")?;
        cur.word()?;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(cur.number()?);
        }
        arrays.push((name, v));
    }
    Ok(VtkGrid { dims, points, arrays })
}

struct Tokens<'a> {
    path: &'a Path,
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        let t = self.tokens.get(self.pos).copied();
        self.pos += 1;
        t.ok_or_else(|| parse_err(self.path, self.tokens.last().map_or(0, |t| t.0), "unexpected end of file"))
    }

    fn word(&mut self) -> Result<&'a str> {
        Ok(self.next()?.1)
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let (line, t) = self.next()?;
        if t != word {
            return Err(parse_err(self.path, line, format!("expected `{word}`, found `{t}`")));
        }
        Ok(())
    }

    fn number<T: std::str::FromStr>(&mut self) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let (line, t) = self.next()?;
        t.parse().map_err(|e| parse_err(self.path, line, format!("`{t}`: {e}")))
    }
}

pub fn export_history(history: &[IterationRecord], path: &Path) -> Result<()> {
    write(path, &history_csv(history))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    write(path, text)
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    read(path)
}
