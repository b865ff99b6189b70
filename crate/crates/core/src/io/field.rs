//! Nodal field export (CSV, legacy VTK) and CSV import.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::StructuredGrid;
use crate::material::PhaseState;
use crate::solver::ThermalField;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldFormat {
    Csv,
    Vtk,
}

impl FieldFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FieldFormat::Csv => "csv",
            FieldFormat::Vtk => "vtk",
        }
    }
}

impl std::str::FromStr for FieldFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FieldFormat::Csv),
            "vtk" => Ok(FieldFormat::Vtk),
            other => Err(Error::InvalidInput(format!("unknown field format {other:?}, expected csv or vtk"))),
        }
    }
}

/// Standard file name of a field snapshot, e.g. `field_00078.000us.csv`.
pub fn snapshot_file_name(time: f64, format: FieldFormat) -> String {
    format!("field_{:09.3}us.{}", time / crate::US, format.extension())
}

/// Writes `field` into `dir` once per format under the standard name.
pub fn export_snapshot(
    dir: &Path,
    field: &ThermalField,
    grid: &StructuredGrid,
    formats: &[FieldFormat],
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    formats
        .iter()
        .map(|&f| {
            let path = dir.join(snapshot_file_name(field.time, f));
            export_field(&path, field, grid, f).map(|_| path)
        })
        .collect()
}

pub const CSV_HEADER: [&str; 6] = ["x", "y", "z", "t", "T", "state"];

/// One row of a field CSV: SI position, time, temperature and melt flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldRecord {
    pub point: [f64; 3],
    pub time: f64,
    pub temperature: f64,
    pub melted: bool,
}

pub fn write_field_csv<W: Write>(out: W, field: &ThermalField, grid: &StructuredGrid) -> Result<()> {
    field.validate(grid)?;
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", CSV_HEADER.join(","))?;
    for n in 0..grid.node_count() {
        let p = grid.node(n);
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            p[0],
            p[1],
            p[2],
            field.time,
            field.temperature[n],
            field.state[n].flag()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Legacy ASCII rectilinear grid with point scalars `T` and `state`.
pub fn write_field_vtk<W: Write>(out: W, field: &ThermalField, grid: &StructuredGrid) -> Result<()> {
    field.validate(grid)?;
    let mut w = BufWriter::new(out);
    let [nx, ny, nz] = grid.dims();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "temperature field at t = {:.16e} s", field.time)?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET RECTILINEAR_GRID")?;
    writeln!(w, "DIMENSIONS {nx} {ny} {nz}")?;
    for (name, a) in [("X", 0), ("Y", 1), ("Z", 2)] {
        let ax = grid.axis(a);
        writeln!(w, "{name}_COORDINATES {} double", ax.len())?;
        let line: Vec<String> = ax.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    writeln!(w, "POINT_DATA {}", grid.node_count())?;
    writeln!(w, "SCALARS T double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for t in &field.temperature {
        writeln!(w, "{t:.16e}")?;
    }
    writeln!(w, "SCALARS state int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for s in &field.state {
        writeln!(w, "{}", s.flag())?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_field(path: &Path, field: &ThermalField, grid: &StructuredGrid, format: FieldFormat) -> Result<()> {
    let file = std::fs::File::create(path)?;
    match format {
        FieldFormat::Csv => write_field_csv(file, field, grid),
        FieldFormat::Vtk => write_field_vtk(file, field, grid),
    }
}

/// Parses a field CSV with the exact [`CSV_HEADER`].
pub fn read_field_records<R: Read>(input: R) -> Result<Vec<FieldRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::InvalidInput(format!(
            "field CSV header {:?} differs from {}",
            header.iter().collect::<Vec<_>>(),
            CSV_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::InvalidInput(format!("row {}: {} columns", row + 1, rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = rec[i]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("row {}: {} = {:?} is not a number", row + 1, CSV_HEADER[i], &rec[i])))?;
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("row {}: {} is not finite", row + 1, CSV_HEADER[i])));
            }
            Ok(v)
        };
        let melted = match rec[5].trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::InvalidInput(format!("row {}: state {other:?} is neither 0 nor 1", row + 1))),
        };
        out.push(FieldRecord {
            point: [num(0)?, num(1)?, num(2)?],
            time: num(3)?,
            temperature: num(4)?,
            melted,
        });
    }
    Ok(out)
}

/// Rebuilds a field from CSV records in node order. Melted nodes get the
/// field time as their first-melt time, the earliest the file can vouch for.
pub fn field_from_records(records: &[FieldRecord], grid: &StructuredGrid) -> Result<ThermalField> {
    if records.len() != grid.node_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows for {} grid nodes",
            records.len(),
            grid.node_count()
        )));
    }
    let time = records.first().map_or(0.0, |r| r.time);
    let tol = 1e-9 * grid.min_spacing().iter().copied().fold(f64::INFINITY, f64::min);
    let mut field = ThermalField::uniform(grid, 0.0, time);
    for (n, r) in records.iter().enumerate() {
        let p = grid.node(n);
        if (0..3).any(|a| (p[a] - r.point[a]).abs() > tol) {
            return Err(Error::Consistency(format!("row {} is not at grid node {n}", n + 1)));
        }
        if r.time != time {
            return Err(Error::Consistency(format!("row {} has time {} s, expected {time} s", n + 1, r.time)));
        }
        field.temperature[n] = r.temperature;
        if r.melted {
            field.state[n] = PhaseState::Melted;
            field.t_min[n] = Some(time);
        }
    }
    Ok(field)
}

pub fn import_field_csv(path: &Path, grid: &StructuredGrid) -> Result<ThermalField> {
    let file = std::fs::File::open(path)?;
    field_from_records(&read_field_records(file)?, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec, RefinementBox};
    use crate::UM;

    fn sample() -> (StructuredGrid, ThermalField) {
        let grid = build_grid(&DomainSpec::desk_scale(), 40.0 * UM, &RefinementBox::desk_scale()).unwrap();
        let mut f = ThermalField::uniform(&grid, 293.0, 4.0e-5);
        for n in 0..grid.node_count() {
            f.temperature[n] = 293.0 + (n as f64 * 0.37).sin().abs() * 2000.0 + 1.0 / 3.0;
        }
        f.update_melt_state(1723.0);
        (grid, f)
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let (grid, f) = sample();
        let mut buf = Vec::new();
        write_field_csv(&mut buf, &f, &grid).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), grid.node_count() + 1);
        assert_eq!(text.lines().next().unwrap(), "x,y,z,t,T,state");
        let back = field_from_records(&read_field_records(buf.as_slice()).unwrap(), &grid).unwrap();
        assert_eq!(back.temperature, f.temperature);
        assert_eq!(back.state, f.state);
        assert!(f.melted_count() > 0);
    }

    #[test]
    fn vtk_structure() {
        let (grid, f) = sample();
        let mut buf = Vec::new();
        write_field_vtk(&mut buf, &f, &grid).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let [nx, ny, nz] = grid.dims();
        assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(text.contains(&format!("DIMENSIONS {nx} {ny} {nz}\n")));
        assert!(text.contains(&format!("POINT_DATA {}\n", grid.node_count())));
        let after_t = text.split("SCALARS T double 1\nLOOKUP_TABLE default\n").nth(1).unwrap();
        let values: Vec<f64> = after_t.lines().take(grid.node_count()).map(|l| l.parse().unwrap()).collect();
        assert_eq!(values, f.temperature);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        let (grid, _) = sample();
        for text in [
            "",
            "a,b\n1,2\n",
            "x,y,z,t,T,state\n1,2,3,4,5\n",
            "x,y,z,t,T,state\n1,2,3,4,nan,0\n",
            "x,y,z,t,T,state\n1,2,3,4,5,2\n",
            "x,y,z,t,T,state\n0,0,0,0,300,0\n",
        ] {
            let r = read_field_records(text.as_bytes()).and_then(|r| field_from_records(&r, &grid));
            assert!(r.is_err(), "{text:?}");
        }
    }

    #[test]
    fn exports_are_deterministic() {
        let (grid, f) = sample();
        let dir = tempfile::tempdir().unwrap();
        for fmt in [FieldFormat::Csv, FieldFormat::Vtk] {
            let a = dir.path().join(format!("a.{}", fmt.extension()));
            let b = dir.path().join(format!("b.{}", fmt.extension()));
            export_field(&a, &f, &grid, fmt).unwrap();
            export_field(&b, &f, &grid, fmt).unwrap();
            assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        }
        let back = import_field_csv(&dir.path().join("a.csv"), &grid).unwrap();
        assert_eq!(back.temperature, f.temperature);
    }
}
