//! Line-oriented dataset files.
//!
//! ```text
//! id<TAB>conformer<TAB>Z1,Z2,...<TAB>x1,y1,z1;x2,y2,z2;...[<TAB>a11,a12,...,a33]
//! ```
//!
//! Lines starting with `#` and blank lines are skipped. Reals are written
//! with 17 significant digits so a write/read cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;

use crate::linalg3::{Mat3, Vec3};
use crate::scalar::Real;

use super::{MolError, Molecule};

pub fn read_dataset<T: Real>(path: impl AsRef<Path>) -> Result<Vec<Molecule<T>>, MolError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MolError::Io { path: path.display().to_string(), source })?;
    parse_dataset(&text)
}

pub fn write_dataset<T: Real>(path: impl AsRef<Path>, mols: &[Molecule<T>]) -> Result<(), MolError> {
    let path = path.as_ref();
    let mut out = String::new();
    for m in mols {
        out.push_str(&format_record(m));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| MolError::Io { path: path.display().to_string(), source })
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn format_record<T: Real>(m: &Molecule<T>) -> String {
    let mut s = String::new();
    s.push_str(&m.molecule_id);
    s.push('\t');
    s.push_str(&m.conformer_id);
    s.push('\t');
    let zs: Vec<String> = m.atomic_numbers.iter().map(|z| z.to_string()).collect();
    s.push_str(&zs.join(","));
    s.push('\t');
    for (k, p) in m.positions.iter().enumerate() {
        if k > 0 {
            s.push(';');
        }
        let _ = write!(
            s,
            "{},{},{}",
            real(p.x.to_f64_lossless()),
            real(p.y.to_f64_lossless()),
            real(p.z.to_f64_lossless())
        );
    }
    if let Some(a) = &m.polarizability {
        s.push('\t');
        let vals: Vec<String> = a.to_flat().iter().map(|v| real(v.to_f64_lossless())).collect();
        s.push_str(&vals.join(","));
    }
    s
}

fn parse_real<T: Real>(tok: &str, line: usize, field: &'static str) -> Result<T, MolError> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|e| MolError::Parse { line, field, msg: format!("`{tok}`: {e}") })?;
    if !v.is_finite() {
        return Err(MolError::Parse { line, field, msg: format!("non-finite value `{tok}`") });
    }
    Ok(T::lit(v))
}

pub fn parse_dataset<T: Real>(text: &str) -> Result<Vec<Molecule<T>>, MolError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(MolError::Parse {
                line,
                field: "record",
                msg: format!("expected 4 or 5 tab-separated fields, found {}", fields.len()),
            });
        }
        let id = fields[0].to_string();
        if id.is_empty() {
            return Err(MolError::Parse { line, field: "id", msg: "empty molecule id".into() });
        }
        let zs = fields[2]
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u32>()
                    .map_err(|e| MolError::Parse { line, field: "atomic_numbers", msg: format!("`{t}`: {e}") })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let positions = fields[3]
            .split(';')
            .map(|atom| {
                let c: Vec<&str> = atom.split(',').collect();
                if c.len() != 3 {
                    return Err(MolError::Parse {
                        line,
                        field: "positions",
                        msg: format!("expected 3 coordinates, found {} in `{atom}`", c.len()),
                    });
                }
                Ok(Vec3::new(
                    parse_real(c[0], line, "positions")?,
                    parse_real(c[1], line, "positions")?,
                    parse_real(c[2], line, "positions")?,
                ))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let target = match fields.get(4) {
            Some(f) if !f.trim().is_empty() => {
                let vals = f
                    .split(',')
                    .map(|t| parse_real::<T>(t, line, "polarizability"))
                    .collect::<Result<Vec<_>, _>>()?;
                if vals.len() != 9 {
                    return Err(MolError::Parse {
                        line,
                        field: "polarizability",
                        msg: format!("expected 9 components, found {}", vals.len()),
                    });
                }
                Some(Mat3::from_slice(&vals))
            }
            _ => None,
        };
        out.push(Molecule::new(id, fields[1], zs, positions, target)?);
    }
    Ok(out)
}
