//! Snapshot, step-log and plot-data writers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{ConvergenceTable, DecayReport};
use crate::mesh::Mesh;
use crate::scheme::State;
use crate::solver::StepReport;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("nothing to write: {0}")]
    Empty(String),
    #[error("malformed snapshot: {0}")]
    Parse(String),
    #[error("legacy VTK output needs a two-dimensional mesh")]
    OneDimensional,
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Cell-centered CSV: `x, u1, ..., un` in 1D and `cell, x, y, u1, ..., un`
/// in 2D. Values are written in shortest round-trip form.
pub fn write_snapshot_csv(mesh: &Mesh, state: &State, path: &Path) -> Result<(), IoError> {
    let n = state.n_species();
    let mut w = csv::Writer::from_path(path)?;
    let species = (1..=n).map(|i| format!("u{i}"));
    if mesh.dimension() == 1 {
        w.write_record(std::iter::once("x".to_string()).chain(species))?;
    } else {
        w.write_record(["cell".to_string(), "x".into(), "y".into()].into_iter().chain(species))?;
    }
    for (k, c) in mesh.cells().iter().enumerate() {
        let mut rec: Vec<String> = if mesh.dimension() == 1 {
            vec![num(c.center[0])]
        } else {
            vec![k.to_string(), num(c.center[0]), num(c.center[1])]
        };
        rec.extend(state.cell(k).iter().map(|&v| num(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot_csv`], returning the cell
/// centers and the state (time 0).
pub fn read_snapshot_csv(path: &Path) -> Result<(Vec<[f64; 2]>, State), IoError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let two_d = headers.get(0) == Some("cell");
    let offset = if two_d { 3 } else { 1 };
    let n = headers.len().checked_sub(offset).filter(|&n| n > 0).ok_or(IoError::Parse("no species columns".into()))?;
    let mut centers = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64, IoError> {
            rec.get(i)
                .ok_or_else(|| IoError::Parse(format!("missing column {i}")))?
                .parse::<f64>()
                .map_err(|e| IoError::Parse(e.to_string()))
        };
        centers.push(if two_d { [parse(1)?, parse(2)?] } else { [parse(0)?, 0.0] });
        for i in 0..n {
            values.push(parse(offset + i)?);
        }
    }
    let state = State::from_values(n, values, 0.0).map_err(|e| IoError::Parse(e.to_string()))?;
    Ok((centers, state))
}

/// Legacy ASCII VTK unstructured grid with one cell scalar per species.
pub fn write_vtk(mesh: &Mesh, state: &State, path: &Path, title: &str) -> Result<(), IoError> {
    if mesh.dimension() != 2 {
        return Err(IoError::OneDimensional);
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.replace('\n', " "))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.vertices().len())?;
    for p in mesh.vertices() {
        writeln!(w, "{} {} 0", num(p[0]), num(p[1]))?;
    }
    let size: usize = mesh.cells().iter().map(|c| c.vertices.len() + 1).sum();
    writeln!(w, "CELLS {} {}", mesh.n_cells(), size)?;
    for c in mesh.cells() {
        let ids: Vec<String> = c.vertices.iter().map(usize::to_string).collect();
        writeln!(w, "{} {}", c.vertices.len(), ids.join(" "))?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.n_cells())?;
    for c in mesh.cells() {
        let t = match c.vertices.len() {
            3 => 5,
            4 => 9,
            _ => 7,
        };
        writeln!(w, "{t}")?;
    }
    writeln!(w, "CELL_DATA {}", mesh.n_cells())?;
    for i in 0..state.n_species() {
        writeln!(w, "SCALARS u{} double 1", i + 1)?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for k in 0..mesh.n_cells() {
            writeln!(w, "{}", num(state.get(i, k)))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Streams step reports to CSV.
pub struct StepLog {
    writer: csv::Writer<fs::File>,
    n_species: usize,
}

impl StepLog {
    pub fn create(path: &Path, n_species: usize) -> Result<StepLog, IoError> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header: Vec<String> =
            ["step", "t", "dt", "newton_iterations", "residual", "halvings"].iter().map(|s| s.to_string()).collect();
        header.extend((1..=n_species).map(|i| format!("mass_u{i}")));
        header.extend((1..=n_species).map(|i| format!("min_u{i}")));
        header.extend(["entropy", "dissipation", "entropy_inequality"].iter().map(|s| s.to_string()));
        writer.write_record(&header)?;
        Ok(StepLog { writer, n_species })
    }

    pub fn write(&mut self, r: &StepReport) -> Result<(), IoError> {
        let mut rec = vec![
            r.step.to_string(),
            num(r.time),
            num(r.dt),
            r.newton_iterations.to_string(),
            num(r.residual_norm),
            r.halvings.to_string(),
        ];
        rec.extend(r.masses.iter().take(self.n_species).map(|&m| num(m)));
        rec.extend(r.min_values.iter().take(self.n_species).map(|&m| num(m)));
        rec.push(num(r.entropy));
        rec.push(num(r.dissipation));
        rec.push(match r.entropy_inequality {
            Some(true) => "ok".into(),
            Some(false) => "violated".into(),
            None => "n/a".into(),
        });
        self.writer.write_record(&rec)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), IoError> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Writes every file or none: contents are assembled first.
fn write_all(files: Vec<(PathBuf, String)>) -> Result<Vec<PathBuf>, IoError> {
    let mut written = Vec::new();
    for (p, text) in files {
        fs::write(&p, text)?;
        written.push(p);
    }
    Ok(written)
}

/// `decay.dat` (t, H, weighted L¹²) and a semilog gnuplot script.
pub fn plot_decay(dir: &Path, report: &DecayReport) -> Result<Vec<PathBuf>, IoError> {
    if report.times.is_empty() {
        return Err(IoError::Empty("decay history".into()));
    }
    let mut dat = String::from("# t H[u|ubar] weighted_L1_sq\n");
    for k in 0..report.times.len() {
        dat += &format!("{} {} {}\n", num(report.times[k]), num(report.relative_entropy[k]), num(report.weighted_l1_sq[k]));
    }
    let gp = "set logscale y\nset xlabel 't'\nset key top right\n\
              plot 'decay.dat' using 1:2 with lines title 'relative entropy', \\\n     \
              'decay.dat' using 1:3 with lines title 'weighted L1 squared'\n";
    write_all(vec![(dir.join("decay.dat"), dat), (dir.join("decay.gp"), gp.to_string())])
}

/// `convergence.dat` (cells, error per species) and a log-log script with a
/// slope-2 guide line.
pub fn plot_convergence(dir: &Path, table: &ConvergenceTable) -> Result<Vec<PathBuf>, IoError> {
    let Some(first) = table.rows.first() else {
        return Err(IoError::Empty("convergence table".into()));
    };
    let n = first.errors.len();
    let mut dat = String::from("# cells");
    for i in 1..=n {
        dat += &format!(" error_u{i}");
    }
    dat.push('\n');
    for r in &table.rows {
        dat += &r.cells.to_string();
        for e in &r.errors {
            dat += &format!(" {}", num(*e));
        }
        dat.push('\n');
    }
    let (c0, e0) = (first.cells as f64, first.errors[0]);
    let mut gp = format!(
        "set logscale xy\nset xlabel 'cells'\nset ylabel 'L2 error'\nguide(x) = {} * ({} / x)**2\nplot ",
        num(e0),
        num(c0)
    );
    for i in 0..n {
        gp += &format!("'convergence.dat' using 1:{} with linespoints title 'u{}', ", i + 2, i + 1);
    }
    gp += "guide(x) with lines dashtype 2 title 'slope 2'\n";
    write_all(vec![(dir.join("convergence.dat"), dat), (dir.join("convergence.gp"), gp)])
}

/// `masses.dat` (t, mass per species) and a script.
pub fn plot_masses(dir: &Path, reports: &[StepReport]) -> Result<Vec<PathBuf>, IoError> {
    let Some(first) = reports.first() else {
        return Err(IoError::Empty("step history".into()));
    };
    let n = first.masses.len();
    let mut dat = String::from("# t");
    for i in 1..=n {
        dat += &format!(" mass_u{i}");
    }
    dat.push('\n');
    for r in reports {
        dat += &num(r.time);
        for m in &r.masses {
            dat += &format!(" {}", num(*m));
        }
        dat.push('\n');
    }
    let mut gp = String::from("set xlabel 't'\nset ylabel 'mass'\nplot ");
    let parts: Vec<String> =
        (0..n).map(|i| format!("'masses.dat' using 1:{} with lines title 'u{}'", i + 2, i + 1)).collect();
    gp += &parts.join(", ");
    gp.push('\n');
    write_all(vec![(dir.join("masses.dat"), dat), (dir.join("masses.gp"), gp)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_interval_mesh, build_rectangle_mesh};

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = build_rectangle_mesh((0.0, 1.0), (0.0, 1.0), 3, 2).unwrap();
        let vals: Vec<f64> = (0..12).map(|k| (k as f64 * 0.7).sin() / 3.0).collect();
        let s = State::from_values(2, vals, 0.0).unwrap();
        let p = dir.path().join("s.csv");
        write_snapshot_csv(&mesh, &s, &p).unwrap();
        let (centers, back) = read_snapshot_csv(&p).unwrap();
        assert_eq!(back.values(), s.values());
        assert_eq!(centers[4], mesh.cells()[4].center);
        let q = dir.path().join("s2.csv");
        write_snapshot_csv(&mesh, &s, &q).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
    }

    #[test]
    fn vtk_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = build_rectangle_mesh((0.0, 1.0), (0.0, 1.0), 2, 2).unwrap();
        let s = State::from_values(1, vec![1.0; 4], 0.0).unwrap();
        let p = dir.path().join("s.vtk");
        write_vtk(&mesh, &s, &p, "t").unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(text.contains("CELLS 4 20\n"));
        assert!(text.contains("CELL_DATA 4\nSCALARS u1 double 1\n"));
        let line = build_interval_mesh(0.0, 1.0, 3).unwrap();
        let s1 = State::from_values(1, vec![1.0; 3], 0.0).unwrap();
        assert!(matches!(write_vtk(&line, &s1, &p, "t"), Err(IoError::OneDimensional)));
    }

    #[test]
    fn empty_history_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(plot_masses(dir.path(), &[]), Err(IoError::Empty(_))));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
