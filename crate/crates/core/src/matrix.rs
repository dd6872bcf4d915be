//! Square labeled matrices with missing-entry masks, shared by the loss,
//! interference, similarity, and group matrices, plus their CSV form.
//!
//! CSV layout: first row and first column carry the labels in matrix order;
//! cells are decimal reals formatted with 17 significant digits so that
//! write -> read -> write is byte-identical; masked cells are empty.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum MatrixError {
    #[error("label `{0}` not present")]
    UnknownLabel(String),
    #[error("matrix io {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed matrix csv: {0}")]
    BadCsv(String),
}

/// Format a real with 17 significant digits; parsing this string recovers the
/// exact f64.
pub fn format_cell(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    labels: Vec<String>,
    data: Vec<Option<f64>>,
}

impl LabeledMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        LabeledMatrix {
            labels,
            data: vec![None; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.data[row * self.n() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let n = self.n();
        self.data[row * n + col] = Some(value);
    }

    pub fn clear(&mut self, row: usize, col: usize) {
        let n = self.n();
        self.data[row * n + col] = None;
    }

    pub fn get_by_label(&self, row: &str, col: &str) -> Result<Option<f64>, MatrixError> {
        let r = self
            .index_of(row)
            .ok_or_else(|| MatrixError::UnknownLabel(row.to_string()))?;
        let c = self
            .index_of(col)
            .ok_or_else(|| MatrixError::UnknownLabel(col.to_string()))?;
        Ok(self.get(r, c))
    }

    pub fn n_present(&self) -> usize {
        self.data.iter().filter(|v| v.is_some()).count()
    }

    /// Copy without the rows and columns of the named labels, preserving
    /// order of the rest.
    pub fn without(&self, exclude: &[String]) -> LabeledMatrix {
        let keep: Vec<usize> = (0..self.n())
            .filter(|&i| !exclude.contains(&self.labels[i]))
            .collect();
        let mut out = LabeledMatrix::new(keep.iter().map(|&i| self.labels[i].clone()).collect());
        for (ri, &r) in keep.iter().enumerate() {
            for (ci, &c) in keep.iter().enumerate() {
                if let Some(v) = self.get(r, c) {
                    out.set(ri, ci, v);
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push(',');
        out.push_str(&self.labels.join(","));
        out.push('\n');
        for r in 0..self.n() {
            out.push_str(&self.labels[r]);
            for c in 0..self.n() {
                out.push(',');
                if let Some(v) = self.get(r, c) {
                    out.push_str(&format_cell(v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<LabeledMatrix, MatrixError> {
        let bad = |m: String| MatrixError::BadCsv(m);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let mut header_fields = header.split(',');
        let first = header_fields.next().unwrap_or("");
        if !first.is_empty() {
            return Err(bad(format!("header must start with an empty cell, got `{first}`")));
        }
        let labels: Vec<String> = header_fields.map(|s| s.to_string()).collect();
        if labels.is_empty() {
            return Err(bad("no labels in header".into()));
        }
        let mut matrix = LabeledMatrix::new(labels.clone());
        let n = labels.len();
        let mut row = 0usize;
        for line in lines {
            if line.is_empty() {
                continue;
            }
            if row >= n {
                return Err(bad(format!("more than {n} data rows")));
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n + 1 {
                return Err(bad(format!(
                    "row {}: expected {} fields, got {}",
                    row + 2,
                    n + 1,
                    fields.len()
                )));
            }
            if fields[0] != labels[row] {
                return Err(bad(format!(
                    "row {}: label `{}` does not match header order (`{}`)",
                    row + 2,
                    fields[0],
                    labels[row]
                )));
            }
            for (c, cell) in fields[1..].iter().enumerate() {
                if cell.is_empty() {
                    continue;
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| bad(format!("cannot parse cell `{cell}`")))?;
                matrix.set(row, c, v);
            }
            row += 1;
        }
        if row != n {
            return Err(bad(format!("expected {n} data rows, got {row}")));
        }
        Ok(matrix)
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), MatrixError> {
        std::fs::write(path, self.to_csv()).map_err(|source| MatrixError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_csv(path: &Path) -> Result<LabeledMatrix, MatrixError> {
        let text = std::fs::read_to_string(path).map_err(|source| MatrixError::Io {
            path: path.display().to_string(),
            source,
        })?;
        LabeledMatrix::from_csv(&text)
    }
}

/// `code,value` CSV for per-language vectors (robustness, friendliness, row
/// means), same numeric formatting as matrix cells.
pub fn vector_to_csv(value_name: &str, entries: &[(String, f64)]) -> String {
    let mut out = format!("code,{value_name}\n");
    for (code, v) in entries {
        out.push_str(code);
        out.push(',');
        out.push_str(&format_cell(*v));
        out.push('\n');
    }
    out
}

pub fn vector_from_csv(text: &str) -> Result<Vec<(String, f64)>, MatrixError> {
    let mut lines = text.lines();
    let _header = lines
        .next()
        .ok_or_else(|| MatrixError::BadCsv("empty file".into()))?;
    let mut out = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let (code, value) = line
            .split_once(',')
            .ok_or_else(|| MatrixError::BadCsv(format!("bad row `{line}`")))?;
        let v: f64 = value
            .parse()
            .map_err(|_| MatrixError::BadCsv(format!("cannot parse `{value}`")))?;
        out.push((code.to_string(), v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> LabeledMatrix {
        let mut m = LabeledMatrix::new(vec!["a_Latn".into(), "b_Cyrl".into()]);
        m.set(0, 0, 2.0);
        m.set(0, 1, 2.4);
        m.set(1, 1, 3.0);
        m
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let m = sample();
        let text = m.to_csv();
        let parsed = LabeledMatrix::from_csv(&text).unwrap();
        assert_eq!(parsed, m);
        assert_eq!(parsed.to_csv(), text);
        assert_eq!(parsed.get(1, 0), None);
    }

    #[test]
    fn without_drops_rows_and_columns() {
        let mut m = LabeledMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
        for r in 0..3 {
            for c in 0..3 {
                m.set(r, c, (r * 3 + c) as f64);
            }
        }
        let reduced = m.without(&["b".to_string()]);
        assert_eq!(reduced.labels(), &["a".to_string(), "c".to_string()]);
        assert_eq!(reduced.get(0, 1), Some(2.0));
        assert_eq!(reduced.get(1, 0), Some(6.0));
    }

    #[test]
    fn rejects_malformed_csv() {
        assert!(LabeledMatrix::from_csv("").is_err());
        assert!(LabeledMatrix::from_csv("x,a\na,1.0\n").is_err());
        assert!(LabeledMatrix::from_csv(",a,b\na,1.0\n").is_err());
        assert!(LabeledMatrix::from_csv(",a\nb,1.0\n").is_err());
        assert!(LabeledMatrix::from_csv(",a\na,zzz\n").is_err());
    }

    #[test]
    fn vector_csv_round_trips() {
        let entries = vec![("a_Latn".to_string(), -0.25), ("b_Cyrl".to_string(), 0.125)];
        let text = vector_to_csv("robustness", &entries);
        let parsed = vector_from_csv(&text).unwrap();
        assert_eq!(parsed, entries);
        assert_eq!(vector_to_csv("robustness", &parsed), text);
    }

    proptest! {
        #[test]
        fn csv_preserves_arbitrary_finite_cells(values in proptest::collection::vec(-1e6f64..1e6, 9)) {
            let mut m = LabeledMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
            for r in 0..3 {
                for c in 0..3 {
                    // Leave one cell masked to exercise the empty-cell path.
                    if (r, c) != (1, 2) {
                        m.set(r, c, values[r * 3 + c]);
                    }
                }
            }
            let parsed = LabeledMatrix::from_csv(&m.to_csv()).unwrap();
            prop_assert_eq!(parsed.to_csv(), m.to_csv());
            prop_assert_eq!(parsed, m);
        }
    }
}
