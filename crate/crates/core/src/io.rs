//! CSV formats for graphs, signals, sparse codes and training traces.
//!
//! Reals are written with 17 significant digits so that every value reads
//! back bitwise.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::omp::SparseCode;
use crate::trainer::TrainTrace;

pub const EDGES_FILE: &str = "edges.csv";
pub const COORDS_FILE: &str = "coords.csv";
pub const SIGNALS_FILE: &str = "signals.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "truth_kernels.json";

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_real(s: &str, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{what}: {s:?}: {e}")))
}

fn parse_index(s: &str, what: &str) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|e| Error::Parse(format!("{what}: {s:?}: {e}")))
}

fn reader(path: &Path, has_headers: bool) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new().has_headers(has_headers).trim(csv::Trim::All).from_path(path)?)
}

fn check_header(rdr: &mut csv::Reader<std::fs::File>, expected: &[&str], path: &Path) -> Result<()> {
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if got != expected {
        return Err(Error::Parse(format!("{}: expected header {:?}, found {:?}", path.display(), expected.join(","), got.join(","))));
    }
    Ok(())
}

/// Edge list with header `i,j,w`.
pub fn write_edges(path: impl AsRef<Path>, g: &WeightedGraph) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["i", "j", "w"])?;
    for &(i, j, wt) in g.edges() {
        w.write_record([i.to_string(), j.to_string(), fmt_real(wt)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_edges(path: impl AsRef<Path>) -> Result<Vec<(usize, usize, f64)>> {
    let path = path.as_ref();
    let mut rdr = reader(path, true)?;
    check_header(&mut rdr, &["i", "j", "w"], path)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::Parse(format!("{}: expected 3 fields, found {}", path.display(), rec.len())));
            }
            Ok((parse_index(&rec[0], "i")?, parse_index(&rec[1], "j")?, parse_real(&rec[2], "w")?))
        })
        .collect()
}

/// Vertex coordinates with header `x,y`.
pub fn write_coords(path: impl AsRef<Path>, coords: &[[f64; 2]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y"])?;
    for p in coords {
        w.write_record([fmt_real(p[0]), fmt_real(p[1])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coords(path: impl AsRef<Path>) -> Result<Vec<[f64; 2]>> {
    let path = path.as_ref();
    let mut rdr = reader(path, true)?;
    check_header(&mut rdr, &["x", "y"], path)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok([parse_real(&rec[0], "x")?, parse_real(&rec[1], "y")?])
        })
        .collect()
}

/// Writes `edges.csv` and, when present, `coords.csv` into `dir`.
pub fn write_graph(dir: impl AsRef<Path>, g: &WeightedGraph) -> Result<()> {
    let dir = dir.as_ref();
    write_edges(dir.join(EDGES_FILE), g)?;
    if let Some(c) = g.coords() {
        write_coords(dir.join(COORDS_FILE), c)?;
    }
    Ok(())
}

/// Reads a graph from `dir`. The vertex count comes from `coords.csv` when it
/// exists and from the largest edge index otherwise.
pub fn read_graph(dir: impl AsRef<Path>) -> Result<WeightedGraph> {
    let dir = dir.as_ref();
    let edges = read_edges(dir.join(EDGES_FILE))?;
    let coords_path = dir.join(COORDS_FILE);
    let coords = if coords_path.exists() { Some(read_coords(coords_path)?) } else { None };
    let n = match &coords {
        Some(c) => c.len(),
        None => edges.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0),
    };
    WeightedGraph::new(n, edges, coords)
}

/// `N x M` matrix, one graph vertex per row, no header.
pub fn write_signals(path: impl AsRef<Path>, y: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in y.row_iter() {
        w.write_record(row.iter().map(|&v| fmt_real(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_signals(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|s| parse_real(s, "signal entry")).collect::<Result<_>>()?);
    }
    let m = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != m) {
        return Err(Error::Parse(format!("{}: row {bad} has {} columns, expected {m}", path.display(), rows[bad].len())));
    }
    Ok(DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]))
}

/// Nonzeros as `signal,atom_flat_index,coeff`.
pub fn write_code(path: impl AsRef<Path>, code: &SparseCode) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["signal", "atom_flat_index", "coeff"])?;
    for (m, a, c) in code.triples() {
        w.write_record([m.to_string(), a.to_string(), fmt_real(c)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_code(path: impl AsRef<Path>, n_atoms: usize, n_signals: usize) -> Result<SparseCode> {
    let path = path.as_ref();
    let mut rdr = reader(path, true)?;
    check_header(&mut rdr, &["signal", "atom_flat_index", "coeff"], path)?;
    let mut columns = vec![Vec::new(); n_signals];
    for rec in rdr.records() {
        let rec = rec?;
        let m = parse_index(&rec[0], "signal")?;
        if m >= n_signals {
            return Err(Error::DimensionMismatch { expected: n_signals, got: m + 1 });
        }
        columns[m].push((parse_index(&rec[1], "atom_flat_index")?, parse_real(&rec[2], "coeff")?));
    }
    SparseCode::new(n_atoms, columns)
}

/// `iter,fit_error,objective,kkt,mean_sparsity,secs`, one row per iteration.
pub fn write_trace(path: impl AsRef<Path>, trace: &TrainTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "fit_error", "objective", "kkt", "mean_sparsity", "secs"])?;
    for r in &trace.records {
        w.write_record([
            r.iter.to_string(),
            fmt_real(r.fit_error),
            fmt_real(r.objective),
            fmt_real(r.kkt),
            fmt_real(r.mean_sparsity),
            fmt_real(r.secs),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Generic numeric table with a header.
pub fn write_table(path: impl AsRef<Path>, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|&v| fmt_real(v)))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::random_geometric_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graph_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = random_geometric_graph(40, 0.9, 0.5, 3).unwrap();
        write_graph(dir.path(), &g).unwrap();
        let back = read_graph(dir.path()).unwrap();
        assert_eq!(back.n_vertices(), 40);
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.coords(), g.coords());
    }

    #[test]
    fn signals_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = DMatrix::from_fn(7, 5, |_, _| rng.random::<f64>() * 1e-3 - 0.3);
        let p = dir.path().join("s.csv");
        write_signals(&p, &y).unwrap();
        assert_eq!(read_signals(&p).unwrap(), y);
        assert!(std::fs::read_to_string(&p).unwrap().lines().count() == 7);
    }

    #[test]
    fn code_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let code = SparseCode::new(10, vec![vec![(3, 0.1), (7, -2.5)], vec![], vec![(0, 1.0 / 3.0)]]).unwrap();
        let p = dir.path().join("c.csv");
        write_code(&p, &code).unwrap();
        let back = read_code(&p, 10, 3).unwrap();
        assert_eq!(back.columns(), code.columns());
    }

    #[test]
    fn bad_headers_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("edges.csv");
        std::fs::write(&p, "a,b,c\n0,1,1.0\n").unwrap();
        assert!(matches!(read_edges(&p), Err(Error::Parse(_))));
        std::fs::write(&p, "i,j,w\n0,x,1.0\n").unwrap();
        assert!(matches!(read_edges(&p), Err(Error::Parse(_))));
    }

    #[test]
    fn ragged_signal_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_signals(&p).is_err());
    }
}
