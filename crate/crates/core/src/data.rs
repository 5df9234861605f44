//! Micro-data ingestion, validation and covariate coarsening.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observations `(y, x, w)` with a binary treatment and a discrete covariate
/// cell.
///
/// Construction validates that every cell contains at least one treated and
/// one untreated observation. Cells are ordered lexicographically by their
/// covariate values and `cell[i]` indexes into that ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<u8>,
    covariates: Vec<Vec<f64>>,
    covariate_names: Vec<String>,
    cell: Vec<usize>,
    cells: Vec<Vec<f64>>,
}

fn cmp_keys(a: &[f64], b: &[f64]) -> Ordering {
    for (u, v) in a.iter().zip(b) {
        match u.total_cmp(v) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

#[derive(Debug, Clone)]
struct Key(Vec<f64>);

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        cmp_keys(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_keys(&self.0, &other.0)
    }
}

fn format_key(names: &[String], key: &[f64]) -> String {
    if names.is_empty() {
        return "(all)".to_string();
    }
    let parts: Vec<String> = names
        .iter()
        .zip(key)
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    parts.join(",")
}

impl Dataset {
    /// Builds a dataset from outcomes, treatments and per-row covariate
    /// tuples without the overlap check, e.g. before coarsening continuous
    /// covariates. Cells are the distinct covariate tuples.
    pub fn raw(
        y: Vec<f64>,
        x: Vec<u8>,
        covariates: Vec<Vec<f64>>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if x.len() != n || covariates.len() != n {
            return Err(Error::InvalidArgument(format!(
                "column lengths differ: y={}, x={}, covariates={}",
                n,
                x.len(),
                covariates.len()
            )));
        }
        let k = covariate_names.len();
        if let Some(bad) = covariates.iter().position(|r| r.len() != k) {
            return Err(Error::InvalidArgument(format!(
                "row {bad} has {} covariates, expected {k}",
                covariates[bad].len()
            )));
        }
        let mut index: BTreeMap<Key, usize> = BTreeMap::new();
        for row in &covariates {
            index.entry(Key(row.clone())).or_insert(0);
        }
        let cells: Vec<Vec<f64>> = index.keys().map(|k| k.0.clone()).collect();
        for (i, v) in index.values_mut().enumerate() {
            *v = i;
        }
        let cell = covariates
            .iter()
            .map(|r| index[&Key(r.clone())])
            .collect();
        let ds = Dataset {
            y,
            x,
            covariates,
            covariate_names,
            cell,
            cells,
        };
        ds.validate_rows()?;
        Ok(ds)
    }

    /// Like [`Dataset::new`] but also enforces overlap in every cell.
    pub fn new(
        y: Vec<f64>,
        x: Vec<u8>,
        covariates: Vec<Vec<f64>>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Dataset::raw(y, x, covariates, covariate_names)?;
        ds.validate_overlap()?;
        Ok(ds)
    }

    /// Convenience constructor where the cell identifier is the only
    /// covariate.
    pub fn from_cells(y: Vec<f64>, x: Vec<u8>, w: Vec<usize>) -> Result<Self> {
        let covs = w.iter().map(|&c| vec![c as f64]).collect();
        Dataset::new(y, x, covs, vec!["w".to_string()])
    }

    /// Dataset without covariates: one cell.
    pub fn single_cell(y: Vec<f64>, x: Vec<u8>) -> Result<Self> {
        let covs = vec![Vec::new(); y.len()];
        Dataset::new(y, x, covs, Vec::new())
    }

    /// Rows `idx` of `self`, keeping the original cell list so that cell
    /// indices line up with the parent. Fails if any parent cell loses an arm.
    pub fn subsample(&self, idx: &[usize]) -> Result<Self> {
        let ds = Dataset {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            x: idx.iter().map(|&i| self.x[i]).collect(),
            covariates: idx.iter().map(|&i| self.covariates[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            cell: idx.iter().map(|&i| self.cell[i]).collect(),
            cells: self.cells.clone(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Same rows with replaced outcomes.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.len() {
            return Err(Error::InvalidArgument("outcome length mismatch".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite outcome".into()));
        }
        Ok(Dataset { y, ..self.clone() })
    }

    fn validate(&self) -> Result<()> {
        self.validate_rows()?;
        self.validate_overlap()
    }

    fn validate_rows(&self) -> Result<()> {
        if self.y.len() < 2 {
            return Err(Error::Empty(format!(
                "need at least 2 observations, got {}",
                self.y.len()
            )));
        }
        if let Some(i) = self.x.iter().position(|&v| v > 1) {
            return Err(Error::NonBinaryTreatment {
                row: i,
                value: self.x[i].to_string(),
            });
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonNumeric {
                row: i,
                column: "outcome".into(),
                value: self.y[i].to_string(),
            });
        }
        Ok(())
    }

    /// Fails unless every cell has treated and untreated observations.
    pub fn validate_overlap(&self) -> Result<()> {
        let counts = self.arm_counts();
        for (w, c) in counts.iter().enumerate() {
            if c[0] == 0 || c[1] == 0 {
                return Err(Error::OverlapViolated {
                    cell: format_key(&self.covariate_names, &self.cells[w]),
                    detail: format!("{} untreated, {} treated", c[0], c[1]),
                });
            }
        }
        Ok(())
    }

    /// Per-cell `[untreated, treated]` counts.
    pub fn arm_counts(&self) -> Vec<[usize; 2]> {
        let mut counts = vec![[0usize; 2]; self.cells.len()];
        for (&w, &x) in self.cell.iter().zip(&self.x) {
            counts[w][x as usize] += 1;
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn treatments(&self) -> &[u8] {
        &self.x
    }

    pub fn cell_ids(&self) -> &[usize] {
        &self.cell
    }

    /// Distinct covariate tuples, in cell-index order.
    pub fn cells(&self) -> &[Vec<f64>] {
        &self.cells
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn cell_label(&self, w: usize) -> String {
        format_key(&self.covariate_names, &self.cells[w])
    }

    /// Iterates `(y, x, w)` records.
    pub fn records(&self) -> impl Iterator<Item = (f64, u8, usize)> + '_ {
        self.y
            .iter()
            .zip(&self.x)
            .zip(&self.cell)
            .map(|((&y, &x), &w)| (y, x, w))
    }
}

/// Quantile cut points per covariate column. An empty list leaves the column
/// unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseningSpec {
    pub cuts: Vec<Vec<f64>>,
}

impl CoarseningSpec {
    pub fn new(cuts: Vec<Vec<f64>>) -> Result<Self> {
        for (k, c) in cuts.iter().enumerate() {
            if c.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
                return Err(Error::InvalidCoarsening(format!(
                    "covariate {k}: cut points must lie in (0,1)"
                )));
            }
            if c.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidCoarsening(format!(
                    "covariate {k}: cut points must be strictly increasing"
                )));
            }
        }
        Ok(CoarseningSpec { cuts })
    }

    /// Same cuts for each of `k` covariates.
    pub fn uniform(k: usize, cuts: &[f64]) -> Result<Self> {
        CoarseningSpec::new(vec![cuts.to_vec(); k])
    }
}

/// Left-continuous empirical quantile: the `ceil(n*tau)`-th order statistic.
pub(crate) fn type1_quantile(sorted: &[f64], tau: f64) -> f64 {
    let n = sorted.len();
    // smallest k with k/n >= tau
    let k = (1..=n)
        .collect::<Vec<_>>()
        .partition_point(|&k| (k as f64) / (n as f64) < tau);
    sorted[k.min(n - 1)]
}

/// Replaces each covariate by its bin index relative to empirical quantiles
/// of that covariate. Values equal to a cut value fall in the lower bin.
pub fn coarsen(ds: &Dataset, spec: &CoarseningSpec) -> Result<Dataset> {
    let k = ds.covariate_names.len();
    if spec.cuts.len() != k {
        return Err(Error::InvalidCoarsening(format!(
            "spec has {} entries for {k} covariates",
            spec.cuts.len()
        )));
    }
    let mut thresholds = Vec::with_capacity(k);
    for (j, cuts) in spec.cuts.iter().enumerate() {
        let mut col: Vec<f64> = ds.covariates.iter().map(|r| r[j]).collect();
        col.sort_by(f64::total_cmp);
        thresholds.push(
            cuts.iter()
                .map(|&t| type1_quantile(&col, t))
                .collect::<Vec<_>>(),
        );
    }
    let covs = ds
        .covariates
        .iter()
        .map(|row| {
            row.iter()
                .zip(&thresholds)
                .map(|(&v, thr)| {
                    if thr.is_empty() {
                        v
                    } else {
                        thr.iter().filter(|&&t| v > t).count() as f64
                    }
                })
                .collect()
        })
        .collect();
    Dataset::new(
        ds.y.clone(),
        ds.x.clone(),
        covs,
        ds.covariate_names.clone(),
    )
}

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a comma-separated file with a header row.
pub fn load_csv<P: AsRef<Path>>(
    path: P,
    outcome_col: &str,
    treatment_col: &str,
    covariate_cols: &[String],
) -> Result<Dataset> {
    let ds = load_csv_raw(path, outcome_col, treatment_col, covariate_cols)?;
    ds.validate_overlap()?;
    Ok(ds)
}

/// Reads a file like [`load_csv`] without enforcing overlap, for data whose
/// covariates are coarsened afterwards.
pub fn load_csv_raw<P: AsRef<Path>>(
    path: P,
    outcome_col: &str,
    treatment_col: &str,
    covariate_cols: &[String],
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let yi = find(outcome_col)?;
    let xi = find(treatment_col)?;
    let wi = covariate_cols
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut covs = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let yv = parse_f64(field(yi)).ok_or_else(|| Error::NonNumeric {
            row,
            column: outcome_col.to_string(),
            value: field(yi).to_string(),
        })?;
        let xv = match parse_f64(field(xi)) {
            Some(v) if v == 0.0 => 0u8,
            Some(v) if v == 1.0 => 1u8,
            _ => {
                return Err(Error::NonBinaryTreatment {
                    row,
                    value: field(xi).to_string(),
                })
            }
        };
        let mut w = Vec::with_capacity(wi.len());
        for (&i, name) in wi.iter().zip(covariate_cols) {
            w.push(parse_f64(field(i)).ok_or_else(|| Error::NonNumeric {
                row,
                column: name.clone(),
                value: field(i).to_string(),
            })?);
        }
        y.push(yv);
        x.push(xv);
        covs.push(w);
    }
    if y.is_empty() {
        return Err(Error::Empty(format!(
            "no data rows in {}",
            path.as_ref().display()
        )));
    }
    Dataset::raw(y, x, covs, covariate_cols.to_vec())
}

/// Writes `y,x,<covariates>` with a header row.
pub fn write_csv<P: AsRef<Path>>(ds: &Dataset, path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["y".to_string(), "x".to_string()];
    header.extend(ds.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec = vec![ds.y[i].to_string(), ds.x[i].to_string()];
        rec.extend(ds.covariates[i].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_small_file() {
        let f = write_tmp("y,x,a\n1.5,0,0\n2.0,1,0\n0.5,0,1\n3.0,1,1\n");
        let ds = load_csv(f.path(), "y", "x", &["a".to_string()]).unwrap();
        assert_eq!(ds.len(), 4);
        assert!(ds.num_cells() <= 2);
        assert_eq!(ds.num_cells(), 2);
        assert_eq!(ds.arm_counts(), vec![[1, 1], [1, 1]]);
    }

    #[test]
    fn non_binary_treatment_is_rejected() {
        let f = write_tmp("y,x\n1,0\n2,2\n");
        let err = load_csv(f.path(), "y", "x", &[]).unwrap_err();
        assert!(matches!(err, Error::NonBinaryTreatment { row: 1, .. }));
        assert!(err.to_string().contains("non-binary treatment"));
    }

    #[test]
    fn missing_column_and_bad_outcome() {
        let f = write_tmp("y,x\n1,0\n2,1\n");
        assert!(matches!(
            load_csv(f.path(), "y", "treat", &[]),
            Err(Error::MissingColumn(_))
        ));
        let g = write_tmp("y,x\nabc,0\n2,1\n");
        assert!(matches!(
            load_csv(g.path(), "y", "x", &[]),
            Err(Error::NonNumeric { .. })
        ));
        let h = write_tmp("y,x\n");
        assert!(matches!(load_csv(h.path(), "y", "x", &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn overlap_violation_reports_cell() {
        let f = write_tmp("y,x,a\n1,0,0\n2,1,0\n3,1,1\n4,1,1\n");
        let err = load_csv(f.path(), "y", "x", &["a".to_string()]).unwrap_err();
        assert!(err.to_string().contains("overlap violated in cell a=1"));
    }

    #[test]
    fn single_observation_is_rejected() {
        assert!(Dataset::single_cell(vec![1.0], vec![1]).is_err());
    }

    #[test]
    fn median_split() {
        let n = 10;
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        // pair values so each bin keeps both arms: 1,1,2,2,.. would tie; use 1..10
        let covs: Vec<Vec<f64>> = (1..=n).map(|v| vec![v as f64]).collect();
        let ds = Dataset::raw(y, x, covs, vec!["a".into()]).unwrap();
        let out = coarsen(&ds, &CoarseningSpec::uniform(1, &[0.5]).unwrap()).unwrap();
        let bins: Vec<f64> = out.covariates().iter().map(|r| r[0]).collect();
        assert_eq!(bins, vec![0., 0., 0., 0., 0., 1., 1., 1., 1., 1.]);
    }

    #[test]
    fn trinary_split_sizes() {
        let n = 100;
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let covs: Vec<Vec<f64>> = (1..=n).map(|v| vec![v as f64]).collect();
        let ds = Dataset::raw(y, x, covs, vec!["a".into()]).unwrap();
        let out = coarsen(&ds, &CoarseningSpec::uniform(1, &[0.35, 0.65]).unwrap()).unwrap();
        let mut sizes = [0usize; 3];
        for r in out.covariates() {
            sizes[r[0] as usize] += 1;
        }
        assert_eq!(sizes, [35, 30, 35]);
    }

    #[test]
    fn constant_covariate_collapses_to_one_bin() {
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let x = vec![0, 1, 0, 1];
        let covs = vec![vec![5.0]; 4];
        let ds = Dataset::new(y, x, covs, vec!["a".into()]).unwrap();
        let out =
            coarsen(&ds, &CoarseningSpec::uniform(1, &[0.25, 0.5, 0.75]).unwrap()).unwrap();
        assert_eq!(out.num_cells(), 1);

        // same degenerate cut, but the collapsed cell now lacks an arm
        let ds2 = Dataset::new(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![0, 1, 1, 1],
            vec![vec![1.0], vec![1.0], vec![2.0], vec![2.0]],
            vec!["a".into()],
        );
        assert!(ds2.is_err());
    }

    #[test]
    fn coarsening_can_break_overlap() {
        // the upper bin holds only treated units
        let ds = Dataset::new(
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![0, 1, 0, 1, 1, 1],
            vec![vec![1.0], vec![1.0], vec![2.0], vec![2.0], vec![3.0], vec![4.0]],
            vec!["a".into()],
        );
        // cells 3 and 4 lack controls already; build a valid one instead
        assert!(ds.is_err());
        let ds = Dataset::new(
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![0, 1, 0, 1, 1, 0],
            vec![vec![1.0], vec![1.0], vec![2.0], vec![2.0], vec![3.0], vec![3.0]],
            vec!["a".into()],
        )
        .unwrap();
        let out = coarsen(&ds, &CoarseningSpec::uniform(1, &[0.5]).unwrap()).unwrap();
        assert_eq!(out.num_cells(), 2);
    }

    #[test]
    fn invalid_cut_points() {
        assert!(CoarseningSpec::new(vec![vec![0.5, 0.4]]).is_err());
        assert!(CoarseningSpec::new(vec![vec![0.0]]).is_err());
        assert!(CoarseningSpec::new(vec![vec![1.0]]).is_err());
    }

    #[test]
    fn type1_quantile_convention() {
        let s = [1.0, 2.0, 3.0];
        assert_eq!(type1_quantile(&s, 0.5), 2.0);
        assert_eq!(type1_quantile(&s, 1.0 / 3.0), 1.0);
        assert_eq!(type1_quantile(&s, 0.999), 3.0);
    }
}
