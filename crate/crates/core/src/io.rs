//! CSV and JSON serialization of densities, states and tabular series.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::{BoundaryMode, LagrangianState, MassGrid, PiecewiseConstantDensity};

/// Writes any serializable rows as CSV with a header line.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DensityRow {
    x: f64,
    /// Value on `[x, next x)`; the last row closes the support with 0.
    rho: f64,
}

pub fn write_density_csv(path: &Path, density: &PiecewiseConstantDensity) -> Result<()> {
    let b = density.breakpoints();
    let rows: Vec<DensityRow> = b
        .iter()
        .enumerate()
        .map(|(i, &x)| DensityRow { x, rho: density.values().get(i).copied().unwrap_or(0.0) })
        .collect();
    write_rows(path, &rows)
}

/// Reads a density written by [`write_density_csv`], renormalizing to unit mass.
pub fn read_density_csv(path: &Path) -> Result<PiecewiseConstantDensity> {
    let rows: Vec<DensityRow> = read_rows(path)?;
    if rows.len() < 2 {
        return Err(Error::InvalidInput(format!("{}: need at least two breakpoints", path.display())));
    }
    let x = rows.iter().map(|r| r.x).collect();
    let rho = rows[..rows.len() - 1].iter().map(|r| r.rho).collect();
    PiecewiseConstantDensity::normalized(x, rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct StateRow {
    xi: f64,
    x: f64,
}

pub fn write_state_csv(path: &Path, grid: &MassGrid, state: &LagrangianState) -> Result<()> {
    if grid.nodes().len() != state.len() {
        return Err(Error::Mismatch("grid and state sizes differ".into()));
    }
    let rows: Vec<StateRow> = grid.nodes().iter().zip(state.positions()).map(|(&xi, &x)| StateRow { xi, x }).collect();
    write_rows(path, &rows)
}

pub fn read_state_csv(path: &Path, mode: BoundaryMode) -> Result<(MassGrid, LagrangianState)> {
    let rows: Vec<StateRow> = read_rows(path)?;
    let grid = MassGrid::from_nodes(rows.iter().map(|r| r.xi).collect())?;
    let state = LagrangianState::new(rows.iter().map(|r| r.x).collect(), mode)?;
    Ok((grid, state))
}

/// JSON form `{"grid": [...], "positions": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateJson {
    pub grid: Vec<f64>,
    pub positions: Vec<f64>,
}

impl StateJson {
    pub fn new(grid: &MassGrid, state: &LagrangianState) -> Self {
        StateJson { grid: grid.nodes().to_vec(), positions: state.positions().to_vec() }
    }

    pub fn into_parts(self, mode: BoundaryMode) -> Result<(MassGrid, LagrangianState)> {
        Ok((MassGrid::from_nodes(self.grid)?, LagrangianState::new(self.positions, mode)?))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let d = PiecewiseConstantDensity::new(vec![0.0, 0.25, 1.0], vec![2.0, 2.0 / 3.0]).unwrap();
        write_density_csv(&p, &d).unwrap();
        let back = read_density_csv(&p).unwrap();
        assert_eq!(back.breakpoints(), d.breakpoints());
        assert!(back.l1_distance(&d) < 1e-15);
    }

    #[test]
    fn state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let grid = MassGrid::uniform(4);
        let s = LagrangianState::new(vec![-1.0, -0.2, 0.1, 0.5, 2.0], BoundaryMode::Free).unwrap();
        let p = dir.path().join("s.csv");
        write_state_csv(&p, &grid, &s).unwrap();
        let (g2, s2) = read_state_csv(&p, BoundaryMode::Free).unwrap();
        assert_eq!(g2.nodes(), grid.nodes());
        assert_eq!(s2.positions(), s.positions());
        let j = dir.path().join("s.json");
        write_json(&j, &StateJson::new(&grid, &s)).unwrap();
        let back: StateJson = read_json(&j).unwrap();
        assert_eq!(back.into_parts(BoundaryMode::Free).unwrap().1, s);
    }
}
