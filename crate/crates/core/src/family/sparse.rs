//! Compressed sparse row matrices and MatrixMarket I/O.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Real sparse matrix in compressed row form. Column indices are strictly
/// increasing within every row and all stored values are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<SparseMatrix> {
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n_rows];
        for (i, j, v) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(Error::ShapeMismatch(format!(
                    "entry ({i}, {j}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("matrix entry ({i}, {j})")));
            }
            *rows[i].entry(j).or_insert(0.0) += v;
        }
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for row in rows {
            for (j, v) in row {
                col_indices.push(j);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> SparseMatrix {
        SparseMatrix::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> SparseMatrix {
        let n = diag.len();
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Keeps entries with magnitude above `drop_tol`.
    pub fn from_dense(m: &DMatrix<f64>, drop_tol: f64) -> Result<SparseMatrix> {
        let mut trip = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v.abs() > drop_tol {
                    trip.push((i, j, v));
                }
            }
        }
        SparseMatrix::from_triplets(m.nrows(), m.ncols(), trip)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "mul_vec dimension");
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn mul_dvec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.mul_vec(x.as_slice()))
    }

    /// `self * rhs` for a dense right factor.
    pub fn mul_dense(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(rhs.nrows(), self.n_cols, "mul_dense dimension");
        let mut out = DMatrix::zeros(self.n_rows, rhs.ncols());
        for i in 0..self.n_rows {
            for (k, v) in self.row(i) {
                for j in 0..rhs.ncols() {
                    out[(i, j)] += v * rhs[(k, j)];
                }
            }
        }
        out
    }

    /// `lhs * self` for a dense left factor.
    pub fn left_mul_dense(&self, lhs: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(lhs.ncols(), self.n_rows, "left_mul_dense dimension");
        let mut out = DMatrix::zeros(lhs.nrows(), self.n_cols);
        for k in 0..self.n_rows {
            for (j, v) in self.row(k) {
                for i in 0..lhs.nrows() {
                    out[(i, j)] += lhs[(i, k)] * v;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn transpose(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.n_cols,
            self.n_rows,
            self.triplets().map(|(i, j, v)| (j, i, v)),
        )
        .expect("transpose of a valid matrix")
    }

    pub fn scale(&self, s: f64) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `sum_l coeffs[l] * terms[l]` on the union sparsity pattern.
    pub fn linear_combination(coeffs: &[f64], terms: &[&SparseMatrix]) -> Result<SparseMatrix> {
        if coeffs.len() != terms.len() || terms.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: terms.len(),
                got: coeffs.len(),
            });
        }
        let (nr, nc) = (terms[0].n_rows, terms[0].n_cols);
        if terms.iter().any(|t| t.n_rows != nr || t.n_cols != nc) {
            return Err(Error::ShapeMismatch("terms differ in shape".into()));
        }
        let mut row_offsets = Vec::with_capacity(nr + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for i in 0..nr {
            acc.clear();
            for (c, t) in coeffs.iter().zip(terms) {
                for (j, v) in t.row(i) {
                    *acc.entry(j).or_insert(0.0) += c * v;
                }
            }
            for (&j, &v) in &acc {
                col_indices.push(j);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("assembled matrix".into()));
        }
        Ok(SparseMatrix {
            n_rows: nr,
            n_cols: nc,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Exact structural and numerical symmetry up to `tol * max|a_ij|`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        self.triplets()
            .all(|(i, j, v)| (v - self.get(j, i)).abs() <= tol * scale)
    }

    /// Largest absolute row sum.
    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Half bandwidth: `max |i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        self.triplets().map(|(i, j, _)| i.abs_diff(j)).max().unwrap_or(0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn mm_err(path: &Path, message: impl Into<String>) -> Error {
    Error::MatrixMarket {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum MmFormat {
    Coordinate,
    Array,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum MmSymmetry {
    General,
    Symmetric,
}

struct MmHeader {
    format: MmFormat,
    symmetry: MmSymmetry,
}

fn parse_header(path: &Path, line: &str) -> Result<MmHeader> {
    let toks: Vec<String> = line.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if toks.len() != 5 || toks[0] != "%%matrixmarket" || toks[1] != "matrix" {
        return Err(mm_err(path, format!("bad header line `{line}`")));
    }
    let format = match toks[2].as_str() {
        "coordinate" => MmFormat::Coordinate,
        "array" => MmFormat::Array,
        other => return Err(mm_err(path, format!("unsupported format `{other}`"))),
    };
    match toks[3].as_str() {
        "real" | "integer" | "double" => {}
        other => return Err(mm_err(path, format!("unsupported field `{other}`"))),
    }
    let symmetry = match toks[4].as_str() {
        "general" => MmSymmetry::General,
        "symmetric" => MmSymmetry::Symmetric,
        other => return Err(mm_err(path, format!("unsupported symmetry `{other}`"))),
    };
    Ok(MmHeader { format, symmetry })
}

// Header, then the data lines with comments and blanks removed.
fn read_mm(path: &Path) -> Result<(MmHeader, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| mm_err(path, "empty file"))?;
    let header = parse_header(path, first)?;
    let body = lines
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('%'))
        .map(String::from)
        .collect();
    Ok((header, body))
}

fn parse_usize(path: &Path, tok: Option<&str>, what: &str) -> Result<usize> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| mm_err(path, format!("cannot read {what}")))
}

fn parse_f64(path: &Path, tok: Option<&str>, what: &str) -> Result<f64> {
    let v: f64 = tok
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| mm_err(path, format!("cannot read {what}")))?;
    if !v.is_finite() {
        return Err(mm_err(path, format!("non-finite {what}")));
    }
    Ok(v)
}

/// Reads a real MatrixMarket matrix. Symmetric storage is expanded.
pub fn read_matrix_market(path: &Path) -> Result<SparseMatrix> {
    let (header, body) = read_mm(path)?;
    let mut it = body.iter();
    let size = it.next().ok_or_else(|| mm_err(path, "missing size line"))?;
    let mut sz = size.split_whitespace();
    let nr = parse_usize(path, sz.next(), "row count")?;
    let nc = parse_usize(path, sz.next(), "column count")?;
    let mut trip = Vec::new();
    match header.format {
        MmFormat::Coordinate => {
            let nnz = parse_usize(path, sz.next(), "entry count")?;
            for (e, line) in it.by_ref().take(nnz).enumerate() {
                let mut t = line.split_whitespace();
                let i = parse_usize(path, t.next(), "row index")?;
                let j = parse_usize(path, t.next(), "column index")?;
                let v = parse_f64(path, t.next(), "value")?;
                if i == 0 || j == 0 || i > nr || j > nc {
                    return Err(mm_err(path, format!("entry {} index ({i}, {j}) out of range", e + 1)));
                }
                trip.push((i - 1, j - 1, v));
                if header.symmetry == MmSymmetry::Symmetric && i != j {
                    trip.push((j - 1, i - 1, v));
                }
            }
            if it.next().is_some() {
                return Err(mm_err(path, "more entries than the header declares"));
            }
            let stored = if header.symmetry == MmSymmetry::Symmetric {
                trip.iter().filter(|(i, j, _)| i >= j).count()
            } else {
                trip.len()
            };
            if stored != nnz {
                return Err(mm_err(path, format!("expected {nnz} entries, found {stored}")));
            }
        }
        MmFormat::Array => {
            let vals: Vec<f64> = it
                .map(|l| parse_f64(path, Some(l.split_whitespace().next().unwrap_or("")), "value"))
                .collect::<Result<_>>()?;
            // Column-major; symmetric arrays store the lower triangle.
            let mut p = 0;
            for j in 0..nc {
                let start = if header.symmetry == MmSymmetry::Symmetric { j } else { 0 };
                for i in start..nr {
                    let v = *vals.get(p).ok_or_else(|| mm_err(path, "too few array values"))?;
                    p += 1;
                    trip.push((i, j, v));
                    if header.symmetry == MmSymmetry::Symmetric && i != j {
                        trip.push((j, i, v));
                    }
                }
            }
            if p != vals.len() {
                return Err(mm_err(path, "too many array values"));
            }
        }
    }
    SparseMatrix::from_triplets(nr, nc, trip)
}

/// Reads a vector stored either as an `n x 1` array or a single-column
/// coordinate matrix.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix_market(path)?;
    if m.n_cols() != 1 {
        return Err(mm_err(path, format!("expected a single column, found {}", m.n_cols())));
    }
    let mut v = vec![0.0; m.n_rows()];
    for (i, _, x) in m.triplets() {
        v[i] = x;
    }
    Ok(v)
}

/// Writes in `coordinate real general` (or `symmetric`, lower triangle) form.
pub fn write_matrix_market(path: &Path, m: &SparseMatrix, symmetric: bool) -> Result<()> {
    let mut s = String::new();
    let sym = if symmetric { "symmetric" } else { "general" };
    let entries: Vec<_> = m
        .triplets()
        .filter(|&(i, j, _)| !symmetric || i >= j)
        .collect();
    let _ = writeln!(s, "%%MatrixMarket matrix coordinate real {sym}");
    let _ = writeln!(s, "{} {} {}", m.n_rows(), m.n_cols(), entries.len());
    for (i, j, v) in entries {
        let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "%%MatrixMarket matrix array real general");
    let _ = writeln!(s, "{} 1", v.len());
    for x in v {
        let _ = writeln!(s, "{x:.17e}");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = SparseMatrix::from_triplets(2, 3, [(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5), (1, 1, -1.0)])
            .unwrap();
        assert_eq!(m.col_indices(), &[0, 2, 1]);
        assert_eq!(m.values(), &[2.0, 1.5, -1.0]);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 2.0]), vec![5.0, -1.0]);
    }

    #[test]
    fn rejects_out_of_range_and_nan() {
        assert!(SparseMatrix::from_triplets(2, 2, [(2, 0, 1.0)]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, [(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn union_pattern_combination() {
        let a = SparseMatrix::identity(2);
        let b = SparseMatrix::from_triplets(2, 2, [(0, 1, 1.0), (1, 1, 1.0)]).unwrap();
        let c = SparseMatrix::linear_combination(&[2.0, 3.0], &[&a, &b]).unwrap();
        assert_eq!(c.to_dense(), DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 0.0, 5.0]));
        assert_eq!(c.nnz(), 3);
    }

    #[test]
    fn matrix_market_symmetric_expansion() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mtx");
        fs::write(
            &p,
            "%%MatrixMarket matrix coordinate real symmetric\n% comment\n3 3 4\n1 1 2\n2 1 -1\n2 2 2\n3 3 1\n",
        )
        .unwrap();
        let m = read_matrix_market(&p).unwrap();
        assert_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert!(m.is_symmetric(0.0));

        let q = dir.path().join("b.mtx");
        write_matrix_market(&q, &m, false).unwrap();
        assert_eq!(read_matrix_market(&q).unwrap(), m);
        write_matrix_market(&q, &m, true).unwrap();
        assert_eq!(read_matrix_market(&q).unwrap(), m);
    }

    #[test]
    fn matrix_market_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.mtx");
        fs::write(&p, "%%MatrixMarket vector coordinate real general\n1 1 1\n1 1 1\n").unwrap();
        assert!(matches!(read_matrix_market(&p), Err(Error::MatrixMarket { .. })));
        fs::write(&p, "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n").unwrap();
        assert!(matches!(read_matrix_market(&p), Err(Error::MatrixMarket { .. })));
        fs::write(&p, "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n").unwrap();
        assert!(matches!(read_matrix_market(&p), Err(Error::MatrixMarket { .. })));
        assert!(matches!(
            read_matrix_market(&dir.path().join("missing.mtx")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn vectors_in_both_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.mtx");
        write_vector(&p, &[1.0, -2.5, 3.0]).unwrap();
        assert_eq!(read_vector(&p).unwrap(), vec![1.0, -2.5, 3.0]);
        fs::write(&p, "%%MatrixMarket matrix coordinate real general\n3 1 1\n2 1 4\n").unwrap();
        assert_eq!(read_vector(&p).unwrap(), vec![0.0, 4.0, 0.0]);
    }
}
