//! Text formats: varifold CSV with a JSON sidecar, measure CSV, and mesh
//! readers (OFF, OBJ, segment-loop CSV).
//!
//! Varifold CSV columns are `x1..xn,m,p11..pnn` (projection row-major);
//! floats are written with `Display`, the shortest representation that
//! round-trips, so equal varifolds give equal bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SurfaceMesh, UNBOUNDED};
use crate::metrics::DiscreteMeasure;
use crate::varifold::{Atom, DiscreteVarifold, GrassmannElement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub n: usize,
    pub d: usize,
    pub count: usize,
}

pub fn varifold_header(n: usize) -> String {
    let mut cols: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    cols.push("m".into());
    for i in 1..=n {
        for j in 1..=n {
            cols.push(format!("p{i}{j}"));
        }
    }
    cols.join(",")
}

pub fn varifold_to_csv(v: &DiscreteVarifold) -> String {
    let n = v.ambient_dim();
    let mut out = varifold_header(n);
    out.push('\n');
    for a in v.atoms() {
        let mut first = true;
        let mut push = |out: &mut String, x: f64| {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{x}").unwrap();
        };
        for x in a.position.iter() {
            push(&mut out, *x);
        }
        push(&mut out, a.mass);
        let p = a.plane.projection();
        for i in 0..n {
            for j in 0..n {
                push(&mut out, p[(i, j)]);
            }
        }
        out.push('\n');
    }
    out
}

fn parse_f64(s: &str, source: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        source_name: source.into(),
        message: format!("line {line}: cannot parse '{}' as a number", s.trim()),
    })
}

fn parse_err(source: &str, message: String) -> Error {
    Error::Parse { source_name: source.into(), message }
}

/// Reads a varifold CSV; `d` is taken from the projection traces.
pub fn varifold_from_csv(text: &str, source: &str) -> Result<DiscreteVarifold> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(source, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let n = cols.iter().filter(|c| c.starts_with('x')).count();
    if n == 0 || cols.len() != n + 1 + n * n || cols.join(",") != varifold_header(n) {
        return Err(parse_err(source, format!("unexpected header '{header}'")));
    }
    let mut atoms = Vec::new();
    for (i, line) in lines {
        let vals: Vec<f64> = line.split(',').map(|s| parse_f64(s, source, i + 1)).collect::<Result<_>>()?;
        if vals.len() != cols.len() {
            return Err(parse_err(source, format!("line {}: expected {} fields, found {}", i + 1, cols.len(), vals.len())));
        }
        let p = DMatrix::from_row_slice(n, n, &vals[n + 1..]);
        let plane = GrassmannElement::from_projection(p)?;
        atoms.push(Atom::new(DVector::from_column_slice(&vals[..n]), plane, vals[n])?);
    }
    let d = atoms.first().map(|a| a.plane.dim()).unwrap_or(1);
    DiscreteVarifold::from_atoms(n, d, atoms)
}

pub fn write_varifold(v: &DiscreteVarifold, csv: &Path) -> Result<()> {
    fs::write(csv, varifold_to_csv(v))?;
    let sidecar = Sidecar { n: v.ambient_dim(), d: v.dim(), count: v.len() };
    fs::write(csv.with_extension("json"), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

pub fn read_varifold(csv: &Path) -> Result<DiscreteVarifold> {
    let name = csv.display().to_string();
    let text = fs::read_to_string(csv)?;
    let v = varifold_from_csv(&text, &name)?;
    let sidecar_path = csv.with_extension("json");
    if sidecar_path.exists() {
        let s: Sidecar = serde_json::from_str(&fs::read_to_string(&sidecar_path)?)?;
        if s.n != v.ambient_dim() || s.count != v.len() || (s.count > 0 && s.d != v.dim()) {
            return Err(parse_err(&name, format!("sidecar {s:?} does not match the CSV contents")));
        }
        if v.is_empty() {
            return Ok(DiscreteVarifold::empty(s.n, s.d));
        }
    }
    Ok(v)
}

/// Measure CSV: columns `x1..xn` and a weight column `m` or `w`; any
/// further columns (such as a varifold's projection) are ignored.
pub fn measure_from_csv(text: &str, source: &str) -> Result<DiscreteMeasure> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(source, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let xs: Vec<usize> = (1..).map_while(|i| cols.iter().position(|c| *c == format!("x{i}"))).collect();
    let w = cols
        .iter()
        .position(|c| *c == "m" || *c == "w")
        .ok_or_else(|| parse_err(source, "missing weight column 'm' or 'w'".into()))?;
    if xs.is_empty() {
        return Err(parse_err(source, "missing coordinate columns x1, x2, ...".into()));
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(parse_err(source, format!("line {}: expected {} fields, found {}", i + 1, cols.len(), fields.len())));
        }
        points.push(DVector::from_iterator(
            xs.len(),
            xs.iter().map(|&k| parse_f64(fields[k], source, i + 1)).collect::<Result<Vec<_>>>()?,
        ));
        weights.push(parse_f64(fields[w], source, i + 1)?);
    }
    DiscreteMeasure::new(points, weights)
}

pub fn read_measure(path: &Path) -> Result<DiscreteMeasure> {
    measure_from_csv(&fs::read_to_string(path)?, &path.display().to_string())
}

/// OFF triangle mesh (polygons with more than three vertices are fanned).
pub fn mesh_from_off(text: &str, source: &str) -> Result<SurfaceMesh> {
    let mut tokens = text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace);
    let magic = tokens.next().ok_or_else(|| parse_err(source, "empty file".into()))?;
    if magic != "OFF" {
        return Err(parse_err(source, format!("expected 'OFF', found '{magic}'")));
    }
    let mut next_usize = |what: &str| -> Result<usize> {
        tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(source, format!("missing or invalid {what}")))
    };
    let nv = next_usize("vertex count")?;
    let nf = next_usize("face count")?;
    let _ne = next_usize("edge count")?;
    let rest: Vec<&str> = tokens.collect();
    let mut it = rest.into_iter();
    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let mut c = [0.0; 3];
        for ci in &mut c {
            *ci =
                it.next().and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(source, format!("vertex {k}: bad coordinate")))?;
        }
        vertices.push(DVector::from_column_slice(&c));
    }
    let mut faces = Vec::with_capacity(nf);
    for k in 0..nf {
        let count: usize =
            it.next().and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(source, format!("face {k}: bad size")))?;
        let idx: Vec<usize> = (0..count)
            .map(|_| it.next().and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(source, format!("face {k}: bad index"))))
            .collect::<Result<_>>()?;
        fan(&idx, &mut faces, source, k)?;
    }
    let labels = vec![[1, UNBOUNDED]; faces.len()];
    SurfaceMesh::new(vertices, faces, labels)
}

fn fan(idx: &[usize], faces: &mut Vec<Vec<usize>>, source: &str, k: usize) -> Result<()> {
    if idx.len() < 3 {
        return Err(parse_err(source, format!("face {k} has fewer than 3 vertices")));
    }
    for j in 1..idx.len() - 1 {
        faces.push(vec![idx[0], idx[j], idx[j + 1]]);
    }
    Ok(())
}

/// OBJ triangle mesh: `v` and `f` records only (`f a/b/c` uses the vertex index).
pub fn mesh_from_obj(text: &str, source: &str) -> Result<SurfaceMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let c: Vec<f64> = parts.take(3).map(|s| parse_f64(s, source, i + 1)).collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(parse_err(source, format!("line {}: vertex needs 3 coordinates", i + 1)));
                }
                vertices.push(DVector::from_vec(c));
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|s| {
                        let raw: i64 = s
                            .split('/')
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| parse_err(source, format!("line {}: bad face index '{s}'", i + 1)))?;
                        let resolved = if raw < 0 { vertices.len() as i64 + raw } else { raw - 1 };
                        usize::try_from(resolved).map_err(|_| parse_err(source, format!("line {}: index out of range", i + 1)))
                    })
                    .collect::<Result<_>>()?;
                fan(&idx, &mut faces, source, i + 1)?;
            }
            _ => {}
        }
    }
    let labels = vec![[1, UNBOUNDED]; faces.len()];
    SurfaceMesh::new(vertices, faces, labels)
}

/// Segment-loop CSV: header `loop,x,y` or `loop,x,y,inner,outer`. Rows of
/// one loop are consecutive; each row starts the segment to the next row of
/// its loop (the last closes the loop). Labels default to inner 1, outer 0.
pub fn mesh_from_segment_csv(text: &str, source: &str) -> Result<SurfaceMesh> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(source, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let labelled = match cols.as_slice() {
        ["loop", "x", "y"] => false,
        ["loop", "x", "y", "inner", "outer"] => true,
        _ => return Err(parse_err(source, format!("unexpected header '{header}'"))),
    };
    let mut rows: Vec<(String, DVector<f64>, [usize; 2])> = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(parse_err(source, format!("line {}: expected {} fields", i + 1, cols.len())));
        }
        let x = DVector::from_vec(vec![parse_f64(f[1], source, i + 1)?, parse_f64(f[2], source, i + 1)?]);
        let labels = if labelled {
            let p = |s: &str| s.parse::<usize>().map_err(|_| parse_err(source, format!("line {}: bad label '{s}'", i + 1)));
            [p(f[3])?, p(f[4])?]
        } else {
            [1, UNBOUNDED]
        };
        rows.push((f[0].to_string(), x, labels));
    }
    let mut vertices = Vec::new();
    let mut simplices = Vec::new();
    let mut labels = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let mut end = start;
        while end < rows.len() && rows[end].0 == rows[start].0 {
            end += 1;
        }
        if end - start < 3 {
            return Err(parse_err(source, format!("loop '{}' has fewer than 3 vertices", rows[start].0)));
        }
        for k in start..end {
            vertices.push(rows[k].1.clone());
            simplices.push(vec![k, if k + 1 == end { start } else { k + 1 }]);
            labels.push(rows[k].2);
        }
        start = end;
    }
    SurfaceMesh::new(vertices, simplices, labels)
}

/// Dispatches on the file extension (.off, .obj, .csv).
pub fn read_mesh(path: &Path) -> Result<SurfaceMesh> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("off") => mesh_from_off(&text, &name),
        Some("obj") => mesh_from_obj(&text, &name),
        Some("csv") => mesh_from_segment_csv(&text, &name),
        _ => Err(parse_err(&name, "unknown mesh format (expected .off, .obj or .csv)".into())),
    }
}

/// Vertex positions as CSV (`x1..xn`).
pub fn points_to_csv(points: &[DVector<f64>], n: usize) -> String {
    let mut out = (1..=n).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for p in points {
        let row: Vec<String> = p.iter().map(|x| format!("{x}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn points_from_csv(text: &str, source: &str) -> Result<Vec<DVector<f64>>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(source, "empty file".into()))?;
    let n = header.split(',').count();
    lines
        .map(|(i, l)| {
            let v: Vec<f64> = l.split(',').map(|s| parse_f64(s, source, i + 1)).collect::<Result<_>>()?;
            if v.len() != n {
                return Err(parse_err(source, format!("line {}: expected {n} fields", i + 1)));
            }
            Ok(DVector::from_vec(v))
        })
        .collect()
}
