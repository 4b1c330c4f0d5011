//! Convergence tables as CSV and per-iteration snapshots as legacy ASCII VTK.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::driver::{IterationRecord, IterationView};
use crate::flux::eval_total_flux;
use crate::spaces::eval_field;
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 9] = [
    "iter",
    "N",
    "energy_error",
    "flux_error",
    "eta",
    "eta_gamma",
    "eps",
    "effectivity",
    "max_conservation_defect",
];

fn csv_error(err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Internal(format!("csv: {other:?}")),
    }
}

/// Writes one row per iteration. Floats use the shortest exact representation,
/// so identical runs give identical bytes.
pub fn write_csv<W: Write>(rows: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    for r in rows {
        let floats = [
            r.energy_error,
            r.flux_error,
            r.eta,
            r.eta_gamma,
            r.eps,
            r.effectivity,
            r.max_conservation_defect,
        ];
        let mut record = vec![r.iter.to_string(), r.n_dofs.to_string()];
        record.extend(floats.iter().map(|v| format!("{v:e}")));
        w.write_record(&record).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[IterationRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Internal(e.to_string()))
}

fn scalars<W: Write>(
    w: &mut W,
    name: &str,
    kind: &str,
    values: impl Iterator<Item = String>,
) -> Result<()> {
    writeln!(w, "SCALARS {name} {kind} 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in values {
        writeln!(w, "{v}")?;
    }
    Ok(())
}

/// Writes the mesh with cell data: classification code (1, 2, or 0 for cut),
/// `eta_T`, both components of `u_h` at the centroid and both reconstructed
/// fluxes at the centroid. A component absent from a cell is written as NaN.
pub fn write_vtk<W: Write>(view: &IterationView, mut w: W) -> Result<()> {
    let (mesh, cut) = (view.mesh, view.cut);
    let n = mesh.n_cells();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "cutflux iteration {}", view.iter)?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.n_vertices())?;
    for p in &mesh.vertices {
        writeln!(w, "{:e} {:e} 0", p[0], p[1])?;
    }
    writeln!(w, "CELLS {n} {}", 4 * n)?;
    for c in &mesh.cells {
        writeln!(w, "3 {} {} {}", c[0], c[1], c[2])?;
    }
    writeln!(w, "CELL_TYPES {n}")?;
    for _ in 0..n {
        writeln!(w, "5")?;
    }
    writeln!(w, "CELL_DATA {n}")?;
    scalars(
        &mut w,
        "classification",
        "int",
        cut.class.iter().map(|k| k.code().to_string()),
    )?;
    scalars(
        &mut w,
        "eta_T",
        "double",
        view.report.eta_t.iter().map(|v| format!("{v:e}")),
    )?;
    for s in 0..2 {
        let values = (0..n).map(|c| {
            if cut.in_cell[s][c] {
                eval_field(view.u, mesh, view.dofs, c, s, mesh.centroid(c))
            } else {
                Ok(f64::NAN)
            }
        });
        let values = values.collect::<Result<Vec<_>>>()?;
        scalars(
            &mut w,
            &format!("u_h_{}", s + 1),
            "double",
            values.iter().map(|v| format!("{v:e}")),
        )?;
    }
    for s in 0..2 {
        writeln!(w, "VECTORS flux_{} double", s + 1)?;
        for c in 0..n {
            let v = if cut.in_cell[s][c] {
                eval_total_flux(view.flux, mesh, cut, c, s, mesh.centroid(c))?
            } else {
                [f64::NAN; 2]
            };
            writeln!(w, "{:e} {:e} 0", v[0], v[1])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn vtk_path(dir: &Path, iter: usize) -> PathBuf {
    dir.join(format!("iter_{iter:03}.vtk"))
}

pub fn csv_path(dir: &Path) -> PathBuf {
    dir.join("convergence.csv")
}

pub fn save_vtk(dir: &Path, view: &IterationView) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = vtk_path(dir, view.iter);
    write_vtk(view, BufWriter::new(File::create(&path)?))?;
    Ok(path)
}

pub fn save_csv(dir: &Path, rows: &[IterationRecord]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = csv_path(dir);
    write_csv(rows, BufWriter::new(File::create(&path)?))?;
    Ok(path)
}
