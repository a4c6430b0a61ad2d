use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};

/// Numeric CSV without a header.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().with_context(|| format!("{}: row {} has {v:?}", path.display(), i + 1)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if n == 0 || p == 0 {
        bail!("{} is empty", path.display());
    }
    if rows.iter().any(|r| r.len() != p) {
        bail!("{} has ragged rows", path.display());
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

/// A single column or a single row.
pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix(path)?;
    match m.shape() {
        (_, 1) => Ok(m.column(0).into_owned()),
        (1, _) => Ok(m.row(0).transpose()),
        (r, c) => bail!("{} is {r} x {c}, expected a vector", path.display()),
    }
}

/// `zero` or a CSV path.
pub fn vector_arg(spec: &str, p: usize) -> Result<DVector<f64>> {
    let v = if spec == "zero" { DVector::zeros(p) } else { read_vector(Path::new(spec))? };
    if v.len() != p {
        bail!("{spec}: length {} but p = {p}", v.len());
    }
    Ok(v)
}

/// Named columns of a CSV with a header.
pub fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<DVector<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_path(path)?;
    let header = rdr.headers()?.clone();
    let idx = names
        .iter()
        .map(|n| header.iter().position(|h| h == *n).with_context(|| format!("{}: no column {n}", path.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec?;
        for (c, &i) in idx.iter().enumerate() {
            cols[c].push(rec[i].parse::<f64>()?);
        }
    }
    Ok(cols.into_iter().map(DVector::from_vec).collect())
}

/// Comma-separated group sizes, e.g. `10,10,10`.
pub fn parse_sizes(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad group size {s:?}")))
        .collect()
}
