//! Flat binary and CSV persistence for scalar fields.
//!
//! Binary layout, little-endian: `u32 n`, `u32 m`, `f64 h`, then `mⁿ` node
//! values in row-major order (axis 0 slowest).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Grid, ScalarField};
use crate::error::{usage, Result};

pub fn write_field(path: &Path, u: &ScalarField) -> Result<()> {
    let g = u.grid();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(g.n() as u32).to_le_bytes())?;
    w.write_all(&(g.m() as u32).to_le_bytes())?;
    w.write_all(&g.h().to_le_bytes())?;
    for v in u.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let m = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let h = f64::from_le_bytes(b8);
    let grid = Grid::new(n, m)?;
    if (grid.h() - h).abs() > 1e-12 {
        return usage(format!("header spacing {h} inconsistent with m = {m}"));
    }
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        r.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    if r.read(&mut b8)? != 0 {
        return usage("trailing bytes after field values");
    }
    ScalarField::from_values(grid, values)
}

/// One row per node: coordinates `x1..xn` then the value.
pub fn write_field_csv(path: &Path, u: &ScalarField) -> Result<()> {
    let g = u.grid();
    let n = g.n();
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (1..=n).map(|a| format!("x{a}")).chain(["value".into()]).collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..g.len() {
        let x = g.point(i);
        let cols: Vec<String> =
            x[..n].iter().map(|c| format!("{c:.17e}")).chain([format!("{:.17e}", u.at(i))]).collect();
        writeln!(w, "{}", cols.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let g = Grid::new(2, 11).unwrap();
        let u = ScalarField::from_fn(g, |x| x[0].sin() + x[1] * 1e-300);
        let p = dir.join("u.bin");
        write_field(&p, &u).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 8 * 121);
        assert_eq!(read_field(&p).unwrap(), u);
        write_field_csv(&dir.join("u.csv"), &u).unwrap();
        let text = std::fs::read_to_string(dir.join("u.csv")).unwrap();
        assert_eq!(text.lines().count(), 122);
    }
}
