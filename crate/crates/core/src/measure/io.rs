//! CSV exchange formats for measures.
//!
//! Empirical measures: header `x1,...,xd,weight`. Grid densities: header
//! `x,u` with one row per cell center. Floats carry 17 significant digits so
//! values round-trip exactly; lines end with LF.

use std::io::{BufRead, Write};

use super::empirical::EmpiricalMeasure;
use super::grid::{GridDensity1D, GridSpec};
use crate::error::{Error, Result};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_measure_csv<W: Write>(mu: &EmpiricalMeasure, mut out: W) -> Result<()> {
    let header: Vec<String> = (1..=mu.dim()).map(|k| format!("x{k}")).chain(["weight".into()]).collect();
    writeln!(out, "{}", header.join(","))?;
    for (x, w) in mu.iter() {
        let row: Vec<String> = x.iter().copied().chain([w]).map(fmt_f64).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

fn parse_row(line: &str, expected: usize, lineno: usize) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| Error::Parse(format!("line {lineno}: {e}")))?;
    if vals.len() != expected {
        return Err(Error::Parse(format!("line {lineno}: expected {expected} columns, got {}", vals.len())));
    }
    Ok(vals)
}

pub fn read_measure_csv<R: BufRead>(input: R) -> Result<EmpiricalMeasure> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("missing header".into()))??;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let dim = cols.len().saturating_sub(1);
    let expected: Vec<String> = (1..=dim).map(|k| format!("x{k}")).chain(["weight".into()]).collect();
    if dim == 0 || cols != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Parse(format!("bad measure header '{header}'")));
    }
    let (mut points, mut weights) = (Vec::new(), Vec::new());
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(&line, dim + 1, k + 2)?;
        points.extend_from_slice(&row[..dim]);
        weights.push(row[dim]);
    }
    EmpiricalMeasure::new(dim, points, weights)
}

pub fn write_grid_csv<W: Write>(rho: &GridDensity1D, mut out: W) -> Result<()> {
    writeln!(out, "x,u")?;
    for (i, u) in rho.values().iter().enumerate() {
        writeln!(out, "{},{}", fmt_f64(rho.grid().center(i)), fmt_f64(*u))?;
    }
    Ok(())
}

pub fn read_grid_csv<R: BufRead>(input: R) -> Result<GridDensity1D> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("missing header".into()))??;
    if header.trim() != "x,u" {
        return Err(Error::Parse(format!("bad grid header '{header}'")));
    }
    let (mut xs, mut us) = (Vec::new(), Vec::new());
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(&line, 2, k + 2)?;
        xs.push(row[0]);
        us.push(row[1]);
    }
    if xs.len() < 2 {
        return Err(Error::Parse("a grid density needs at least two cells".into()));
    }
    let dx = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
    let grid = GridSpec::new(xs[0] - dx / 2.0, dx, xs.len())?;
    for (i, &x) in xs.iter().enumerate() {
        if (x - grid.center(i)).abs() > 1e-9 * (1.0 + x.abs()) {
            return Err(Error::Parse(format!("cell centers are not uniform at row {}", i + 2)));
        }
    }
    GridDensity1D::new(grid, us)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn measure_csv_roundtrips_bitwise(
            atoms in prop::collection::vec((-1e6f64..1e6, 0.01f64..1.0), 1..20)
        ) {
            let points: Vec<f64> = atoms.iter().map(|a| a.0).collect();
            let weights: Vec<f64> = atoms.iter().map(|a| a.1).collect();
            let mu = EmpiricalMeasure::normalized(1, points, weights).unwrap();
            let mut buf = Vec::new();
            write_measure_csv(&mu, &mut buf).unwrap();
            let back = read_measure_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, mu);
        }
    }

    #[test]
    fn grid_csv_roundtrip() {
        let g = GridSpec::centered(3.0, 0.1).unwrap();
        let rho = GridDensity1D::gaussian(g, 0.2, 0.7).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&rho, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,u\n"));
        let back = read_grid_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values(), rho.values());
    }

    #[test]
    fn missing_header_is_rejected() {
        assert!(read_measure_csv("0.0,1.0\n".as_bytes()).is_err());
        assert!(read_grid_csv("1,2\n".as_bytes()).is_err());
    }
}
