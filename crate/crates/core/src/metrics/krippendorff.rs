//! Krippendorff's alpha over raters × items matrices with missing cells.
//!
//! Computed through the coincidence matrix: every unit (item) with `m >= 2`
//! values contributes each ordered pair of its values with weight
//! `1 / (m - 1)`. Then `alpha = 1 - (n - 1) * sum(o_ck * d_ck) / sum(n_c * n_k * d_ck)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::MetricsError;

const CATEGORIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Nominal,
    Ordinal,
}

impl Weighting {
    pub fn name(self) -> &'static str {
        match self {
            Weighting::Nominal => "nominal",
            Weighting::Ordinal => "ordinal",
        }
    }
}

/// Raters (rows) × items (columns); each cell an ordinal value 0..=4 or missing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    rows: Vec<String>,
    columns: Vec<String>,
    cells: Vec<Option<u8>>,
}

impl AgreementMatrix {
    /// An all-missing matrix.
    pub fn new(rows: Vec<String>, columns: Vec<String>) -> Result<Self, MetricsError> {
        if rows.len() < 2 {
            return Err(MetricsError::TooFewRaters(rows.len()));
        }
        if columns.is_empty() {
            return Err(MetricsError::NoItems);
        }
        let cells = vec![None; rows.len() * columns.len()];
        Ok(AgreementMatrix {
            rows,
            columns,
            cells,
        })
    }

    /// Builds a matrix from per-rater rows of equal length.
    pub fn from_rows(
        rows: Vec<String>,
        columns: Vec<String>,
        values: &[Vec<Option<u8>>],
    ) -> Result<Self, MetricsError> {
        let mut m = Self::new(rows, columns)?;
        if values.len() != m.rows.len() || values.iter().any(|r| r.len() != m.columns.len()) {
            return Err(MetricsError::Shape);
        }
        for (r, row) in values.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                m.set(r, c, v)?;
            }
        }
        Ok(m)
    }

    pub fn set(&mut self, row: usize, column: usize, value: Option<u8>) -> Result<(), MetricsError> {
        if let Some(v) = value {
            if usize::from(v) >= CATEGORIES {
                return Err(MetricsError::ValueOutOfScale(v));
            }
        }
        let width = self.columns.len();
        self.cells[row * width + column] = value;
        Ok(())
    }

    pub fn get(&self, row: usize, column: usize) -> Option<u8> {
        self.cells[row * self.columns.len() + column]
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn missing_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    /// CSV with raters as rows, items as columns and empty missing cells.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["rater".to_owned()];
        header.extend(self.columns.iter().cloned());
        wtr.write_record(&header).expect("in-memory write");
        for (r, name) in self.rows.iter().enumerate() {
            let mut rec = vec![name.clone()];
            for c in 0..self.columns.len() {
                rec.push(self.get(r, c).map(|v| v.to_string()).unwrap_or_default());
            }
            wtr.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("flush")).expect("utf-8")
    }
}

fn delta(weighting: Weighting, marginals: &[f64; CATEGORIES], c: usize, k: usize) -> f64 {
    if c == k {
        return 0.0;
    }
    match weighting {
        Weighting::Nominal => 1.0,
        Weighting::Ordinal => {
            let (lo, hi) = (c.min(k), c.max(k));
            let span: f64 = marginals[lo..=hi].iter().sum();
            let d = span - (marginals[c] + marginals[k]) / 2.0;
            d * d
        }
    }
}

pub fn krippendorff_alpha(matrix: &AgreementMatrix, weighting: Weighting) -> Result<f64, MetricsError> {
    let width = matrix.columns.len();
    let mut coincidence = [[0.0f64; CATEGORIES]; CATEGORIES];
    let mut any_disagreement = false;
    let mut pairable = false;

    for col in 0..width {
        let mut counts = [0u32; CATEGORIES];
        let mut m = 0u32;
        for row in 0..matrix.rows.len() {
            if let Some(v) = matrix.cells[row * width + col] {
                counts[usize::from(v)] += 1;
                m += 1;
            }
        }
        if m < 2 {
            continue;
        }
        pairable = true;
        let weight = 1.0 / f64::from(m - 1);
        for c in 0..CATEGORIES {
            if counts[c] == 0 {
                continue;
            }
            for k in 0..CATEGORIES {
                let pairs = if c == k {
                    counts[c] * (counts[c] - 1)
                } else {
                    counts[c] * counts[k]
                };
                if pairs > 0 {
                    coincidence[c][k] += f64::from(pairs) * weight;
                    any_disagreement |= c != k;
                }
            }
        }
    }
    if !pairable {
        return Err(MetricsError::NoPairableItems);
    }
    if !any_disagreement {
        return Ok(1.0);
    }

    let mut marginals = [0.0f64; CATEGORIES];
    for (c, row) in coincidence.iter().enumerate() {
        marginals[c] = row.iter().sum();
    }
    let n: f64 = marginals.iter().sum();

    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..CATEGORIES {
        for k in 0..CATEGORIES {
            let d = delta(weighting, &marginals, c, k);
            observed += coincidence[c][k] * d;
            expected += marginals[c] * marginals[k] * d;
        }
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}

/// Plain-text rendering for debugging.
pub fn describe(matrix: &AgreementMatrix) -> String {
    let mut out = String::new();
    for (r, name) in matrix.rows.iter().enumerate() {
        let _ = write!(out, "{name}:");
        for c in 0..matrix.columns.len() {
            match matrix.get(r, c) {
                Some(v) => {
                    let _ = write!(out, " {v}");
                }
                None => out.push_str(" ."),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn matrix(values: &[Vec<Option<u8>>]) -> AgreementMatrix {
        AgreementMatrix::from_rows(names("r", values.len()), names("i", values[0].len()), values)
            .unwrap()
    }

    #[test]
    fn identical_raters_agree_perfectly() {
        let m = matrix(&[
            vec![Some(0), Some(3), Some(4)],
            vec![Some(0), Some(3), Some(4)],
            vec![Some(0), Some(3), None],
        ]);
        assert_eq!(krippendorff_alpha(&m, Weighting::Nominal).unwrap(), 1.0);
        assert_eq!(krippendorff_alpha(&m, Weighting::Ordinal).unwrap(), 1.0);
    }

    #[test]
    fn swapped_answers_are_worse_than_chance() {
        let m = matrix(&[vec![Some(0), Some(1)], vec![Some(1), Some(0)]]);
        let alpha = krippendorff_alpha(&m, Weighting::Nominal).unwrap();
        assert!(alpha < 0.0);
        assert!((alpha + 0.5).abs() < 1e-12, "{alpha}");
    }

    #[test]
    fn needs_a_pairable_item() {
        let m = matrix(&[vec![Some(0), None], vec![None, Some(1)]]);
        assert!(matches!(
            krippendorff_alpha(&m, Weighting::Nominal),
            Err(MetricsError::NoPairableItems)
        ));
    }

    #[test]
    fn shape_and_range_checks() {
        assert!(matches!(
            AgreementMatrix::new(names("r", 1), names("i", 1)),
            Err(MetricsError::TooFewRaters(1))
        ));
        assert!(matches!(
            AgreementMatrix::new(names("r", 2), vec![]),
            Err(MetricsError::NoItems)
        ));
        let mut m = AgreementMatrix::new(names("r", 2), names("i", 1)).unwrap();
        assert!(matches!(m.set(0, 0, Some(5)), Err(MetricsError::ValueOutOfScale(5))));
        assert_eq!(m.missing_cells(), 2);
    }

    #[test]
    fn csv_export_marks_missing_cells_empty() {
        let m = matrix(&[vec![Some(0), None], vec![Some(2), Some(4)]]);
        assert_eq!(m.to_csv(), "rater,i0,i1\nr0,0,\nr1,2,4\n");
        assert_eq!(describe(&m), "r0: 0 .\nr1: 2 4\n");
    }
}
