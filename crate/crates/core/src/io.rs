//! Serialization: diagnostics CSV, legacy ASCII VTK snapshots, and the
//! binary field file that chains a ground-state run into an evolution run.
//!
//! Floats in text outputs are printed with 17 significant digits so parsing
//! them back recovers the exact bits. All text files use LF line endings.

use crate::diagnostics::{DiagRow, RunDiagnostics};
use crate::error::{Error, Result};
use crate::mesh::{ComplexField, DofMap, Mesh};
use crate::C64;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

const FIELD_MAGIC: &[u8; 8] = b"RGPFIELD";
const FIELD_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "n,t,energy,mass,angular_momentum,sup_norm,fp_iters";

/// Diagnostics time series as CSV text.
pub fn timeseries_csv(diag: &RunDiagnostics) -> Result<String> {
    if diag.rows.is_empty() {
        return Err(Error::Data("diagnostics have no rows to write".into()));
    }
    let mut out = String::with_capacity(64 * (diag.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &diag.rows {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.n, r.t, r.energy, r.mass, r.angular_momentum, r.sup_norm, r.fp_iters
        )
        .expect("string write cannot fail");
    }
    Ok(out)
}

pub fn write_timeseries_csv(diag: &RunDiagnostics, path: &Path) -> Result<()> {
    std::fs::write(path, timeseries_csv(diag)?)?;
    Ok(())
}

/// Parse CSV produced by `timeseries_csv`; round-trips values bit-exactly.
pub fn parse_timeseries_csv(text: &str) -> Result<Vec<DiagRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Data(format!(
                "bad CSV header: expected `{CSV_HEADER}`, got `{}`",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::Data(format!(
                "CSV row {}: expected 7 fields, got {}",
                i + 2,
                parts.len()
            )));
        }
        let f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Data(format!("CSV row {}: bad float `{s}`", i + 2)))
        };
        rows.push(DiagRow {
            n: parts[0]
                .parse()
                .map_err(|_| Error::Data(format!("CSV row {}: bad index `{}`", i + 2, parts[0])))?,
            t: f(parts[1])?,
            energy: f(parts[2])?,
            mass: f(parts[3])?,
            angular_momentum: f(parts[4])?,
            sup_norm: f(parts[5])?,
            fp_iters: parts[6].parse().map_err(|_| {
                Error::Data(format!(
                    "CSV row {}: bad iteration count `{}`",
                    i + 2,
                    parts[6]
                ))
            })?,
        });
    }
    Ok(rows)
}

/// Legacy ASCII VTK unstructured-grid snapshot with point arrays `re`, `im`
/// and `density` = re^2 + im^2; boundary vertices carry zeros.
pub fn field_vtk(field: &ComplexField, mesh: &Mesh, dofs: &DofMap) -> Result<String> {
    if field.len() != dofs.n_dofs {
        return Err(Error::Data(format!(
            "field has {} coefficients, dof map has {}",
            field.len(),
            dofs.n_dofs
        )));
    }
    let np = mesh.vertices.len();
    let nc = mesh.triangles.len();
    // Nodal values over all vertices, zero on the boundary.
    let nodal: Vec<C64> = dofs
        .interior_index
        .iter()
        .map(|ix| match ix {
            Some(d) => field.values[*d],
            None => C64::new(0.0, 0.0),
        })
        .collect();

    let mut out = String::with_capacity(np * 96);
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("wavefunction snapshot\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    writeln!(out, "POINTS {np} double").unwrap();
    for &(x, y) in &mesh.vertices {
        writeln!(out, "{x:.16e} {y:.16e} 0").unwrap();
    }
    writeln!(out, "CELLS {nc} {}", 4 * nc).unwrap();
    for t in &mesh.triangles {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
    }
    writeln!(out, "CELL_TYPES {nc}").unwrap();
    for _ in 0..nc {
        out.push_str("5\n");
    }
    writeln!(out, "POINT_DATA {np}").unwrap();
    for (name, get) in [
        ("re", (|z: &C64| z.re) as fn(&C64) -> f64),
        ("im", |z: &C64| z.im),
        ("density", |z: &C64| z.re * z.re + z.im * z.im),
    ] {
        writeln!(out, "SCALARS {name} double 1").unwrap();
        out.push_str("LOOKUP_TABLE default\n");
        for z in &nodal {
            writeln!(out, "{:.16e}", get(z)).unwrap();
        }
    }
    Ok(out)
}

pub fn write_field_vtk(
    field: &ComplexField,
    mesh: &Mesh,
    dofs: &DofMap,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, field_vtk(field, mesh, dofs)?)?;
    Ok(())
}

/// Field-file header; the payload holds (n_h - 1)^2 little-endian complex
/// pairs in row-major dof order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldHeader {
    pub n_h: usize,
    /// Stage order of the run that produced the field (context only).
    pub q: usize,
    pub r: f64,
    pub t: f64,
}

pub fn write_field(header: &FieldHeader, field: &ComplexField, path: &Path) -> Result<()> {
    if header.n_h < 2 {
        return Err(Error::Data(format!(
            "field header n_h = {} < 2",
            header.n_h
        )));
    }
    let n_dofs = (header.n_h - 1) * (header.n_h - 1);
    if field.len() != n_dofs {
        return Err(Error::Data(format!(
            "field has {} coefficients but n_h = {} needs {}",
            field.len(),
            header.n_h,
            n_dofs
        )));
    }
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&FIELD_VERSION.to_le_bytes())?;
    w.write_all(&(header.n_h as u32).to_le_bytes())?;
    w.write_all(&(header.q as u32).to_le_bytes())?;
    w.write_all(&header.r.to_le_bytes())?;
    w.write_all(&header.t.to_le_bytes())?;
    for z in &field.values {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(FieldHeader, ComplexField)> {
    let bytes = std::fs::read(path)?;
    let bad = |msg: String| Error::Data(format!("{}: {msg}", path.display()));
    if bytes.len() < 36 {
        return Err(bad(format!(
            "file too short for a field header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[0..8] != FIELD_MAGIC {
        return Err(bad("not a field file (bad magic)".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != FIELD_VERSION {
        return Err(bad(format!(
            "unsupported field file version {version} (expected {FIELD_VERSION})"
        )));
    }
    let n_h = u32_at(12) as usize;
    let q = u32_at(16) as usize;
    let r = f64_at(20);
    let t = f64_at(28);
    if n_h < 2 {
        return Err(bad(format!("header n_h = {n_h} < 2")));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(bad(format!("header r = {r} is not a positive number")));
    }
    let n_dofs = (n_h - 1) * (n_h - 1);
    let expected = 36 + 16 * n_dofs;
    if bytes.len() != expected {
        return Err(bad(format!(
            "payload length mismatch: n_h = {n_h} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(n_dofs);
    for k in 0..n_dofs {
        let off = 36 + 16 * k;
        let z = C64::new(f64_at(off), f64_at(off + 8));
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(bad(format!("non-finite value at dof {k}")));
        }
        values.push(z);
    }
    Ok((FieldHeader { n_h, q, r, t }, ComplexField { values }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::RunMeta;
    use crate::mesh::{build_dofmap, build_mesh};
    use std::f64::consts::PI;

    fn sample_diag() -> RunDiagnostics {
        RunDiagnostics {
            meta: RunMeta {
                q: 2,
                h: 0.25,
                tau: 0.01,
                omega: 1.0,
                beta: 50.0,
                eps_fp: 1e-12,
            },
            rows: vec![
                DiagRow {
                    n: 0,
                    t: 0.0,
                    energy: 1.0 / 3.0,
                    mass: 1.0,
                    angular_momentum: -PI * 1e-7,
                    sup_norm: 0.123456789,
                    fp_iters: 0,
                },
                DiagRow {
                    n: 1,
                    t: 0.01,
                    energy: 1.0 / 3.0 + 1e-17,
                    mass: 1e-300,
                    angular_momentum: 2.0_f64.powi(-40),
                    sup_norm: 7.25,
                    fp_iters: 11,
                },
            ],
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let diag = sample_diag();
        let text = timeseries_csv(&diag).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), 3);
        let rows = parse_timeseries_csv(&text).unwrap();
        assert_eq!(rows.len(), 2);
        for (a, b) in rows.iter().zip(&diag.rows) {
            assert_eq!(a.n, b.n);
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert_eq!(a.energy.to_bits(), b.energy.to_bits());
            assert_eq!(a.mass.to_bits(), b.mass.to_bits());
            assert_eq!(a.angular_momentum.to_bits(), b.angular_momentum.to_bits());
            assert_eq!(a.sup_norm.to_bits(), b.sup_norm.to_bits());
            assert_eq!(a.fp_iters, b.fp_iters);
        }
    }

    #[test]
    fn empty_diagnostics_are_rejected() {
        let mut diag = sample_diag();
        diag.rows.clear();
        assert!(timeseries_csv(&diag).is_err());
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(parse_timeseries_csv("nope\n1,2,3").is_err());
        let missing_field = format!("{CSV_HEADER}\n0,0.0,1.0\n");
        assert!(parse_timeseries_csv(&missing_field).is_err());
        let bad_float = format!("{CSV_HEADER}\n0,zero,1,1,1,1,0\n");
        assert!(parse_timeseries_csv(&bad_float).is_err());
    }

    #[test]
    fn vtk_layout_and_boundary_zeros() {
        let mesh = build_mesh(1.0, 2).unwrap();
        let dofs = build_dofmap(&mesh);
        let field = ComplexField {
            values: vec![C64::new(0.6, -0.8)],
        };
        let text = field_vtk(&field, &mesh, &dofs).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[2], "ASCII");
        assert_eq!(lines[3], "DATASET UNSTRUCTURED_GRID");
        assert_eq!(lines[4], "POINTS 9 double");
        let cells_at = lines.iter().position(|l| l.starts_with("CELLS")).unwrap();
        assert_eq!(lines[cells_at], "CELLS 8 32");
        let types_at = lines
            .iter()
            .position(|l| l.starts_with("CELL_TYPES"))
            .unwrap();
        assert_eq!(lines[types_at], "CELL_TYPES 8");
        for k in 1..=8 {
            assert_eq!(lines[types_at + k], "5");
        }
        assert!(lines.contains(&"POINT_DATA 9"));

        // One interior vertex (id 4); all others are boundary zeros.
        let arr = |name: &str| -> Vec<f64> {
            let at = lines
                .iter()
                .position(|l| *l == format!("SCALARS {name} double 1"))
                .unwrap();
            (0..9).map(|k| lines[at + 2 + k].parse().unwrap()).collect()
        };
        let re = arr("re");
        let im = arr("im");
        let density = arr("density");
        for p in 0..9 {
            if p == 4 {
                assert_eq!(re[p], 0.6);
                assert_eq!(im[p], -0.8);
            } else {
                assert_eq!(re[p], 0.0);
                assert_eq!(im[p], 0.0);
                assert_eq!(density[p], 0.0);
            }
            assert_eq!(
                density[p].to_bits(),
                (re[p] * re[p] + im[p] * im[p]).to_bits()
            );
        }
    }

    #[test]
    fn vtk_rejects_mismatched_field() {
        let mesh = build_mesh(1.0, 4).unwrap();
        let dofs = build_dofmap(&mesh);
        let field = ComplexField::zeros(4);
        assert!(field_vtk(&field, &mesh, &dofs).is_err());
    }

    #[test]
    fn field_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        let n_h = 6;
        let n_dofs = (n_h - 1) * (n_h - 1);
        let field = ComplexField {
            values: (0..n_dofs)
                .map(|k| C64::new((k as f64).sin() * 1e-3, (k as f64 * 0.7).cos()))
                .collect(),
        };
        let header = FieldHeader {
            n_h,
            q: 3,
            r: 2.5,
            t: 0.125,
        };
        write_field(&header, &field, &path).unwrap();
        let (h2, f2) = read_field(&path).unwrap();
        assert_eq!(h2, header);
        assert_eq!(f2.len(), n_dofs);
        for (a, b) in f2.values.iter().zip(&field.values) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        // On-disk size is pinned by the format.
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len, 36 + 16 * n_dofs);
    }

    #[test]
    fn field_file_corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        let header = FieldHeader {
            n_h: 4,
            q: 1,
            r: 1.0,
            t: 0.0,
        };
        let field = ComplexField::zeros(9);
        write_field(&header, &field, &path).unwrap();

        let good = std::fs::read(&path).unwrap();

        // Truncated payload.
        std::fs::write(&path, &good[..good.len() - 8]).unwrap();
        assert!(read_field(&path).is_err());

        // Corrupted magic.
        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(read_field(&path).is_err());

        // Unsupported version.
        let mut bad = good.clone();
        bad[8] = 99;
        std::fs::write(&path, &bad).unwrap();
        assert!(read_field(&path).is_err());

        // Header/payload mismatch: n_h changed without resizing the payload.
        let mut bad = good.clone();
        bad[12] = 8;
        std::fs::write(&path, &bad).unwrap();
        assert!(read_field(&path).is_err());

        // Non-finite payload entry.
        let mut bad = good;
        bad[36..44].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&path, &bad).unwrap();
        assert!(read_field(&path).is_err());
    }

    #[test]
    fn write_field_validates_the_dof_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        let header = FieldHeader {
            n_h: 4,
            q: 1,
            r: 1.0,
            t: 0.0,
        };
        let field = ComplexField::zeros(4);
        assert!(write_field(&header, &field, &path).is_err());
    }
}
