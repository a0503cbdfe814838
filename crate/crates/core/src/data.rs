//! Survey-style tabular data: ingestion, group splits, folds, standardization,
//! and a synthetic generator with planted factor importance.
//!
//! Labels are 1-based (`1..=num_levels`) everywhere on the public surface;
//! [`SurveyTable::label0`] exposes the 0-based form used by the models.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{derive_rng, Stream};

/// Errors produced by the data module.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    MissingFile(String),
    #[error("column not found: {0}")]
    MissingColumn(String),
    #[error("non-numeric cell at data row {row}, column {col:?}")]
    NonNumericCell { row: usize, col: String },
    #[error("label {value} at data row {row} outside 1..={num_levels}")]
    LabelOutOfRange {
        row: usize,
        value: f64,
        num_levels: usize,
    },
    #[error("no rows left after dropping incomplete records")]
    EmptyAfterCleaning,
    #[error("unknown factor: {0}")]
    UnknownFactor(String),
    #[error("group split left the {side} side empty")]
    EmptyGroup { side: &'static str },
    #[error("{n} rows cannot fill {k} folds")]
    TooFewRows { n: usize, k: usize },
    #[error("fold count must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// An N×J numeric factor matrix with integer labels in `1..=num_levels`.
///
/// Ingestion (`load_csv`, `synth_generate`) guarantees at least one row;
/// intermediate values produced by [`split_group`] may be empty and are
/// checked by the operations that require rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyTable {
    factor_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_levels: usize,
}

impl SurveyTable {
    /// Validate and build a table. Labels are 1-based.
    pub fn new(
        factor_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<usize>,
        num_levels: usize,
    ) -> Result<Self, DataError> {
        let j = factor_names.len();
        if j == 0 {
            return Err(DataError::InvalidTable("no factors".into()));
        }
        if num_levels < 2 {
            return Err(DataError::InvalidTable(format!(
                "num_levels must be at least 2, got {num_levels}"
            )));
        }
        let mut seen = HashSet::new();
        for name in &factor_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::InvalidTable(format!(
                    "duplicate factor name {name:?}"
                )));
            }
        }
        if rows.len() != labels.len() {
            return Err(DataError::InvalidTable(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != j {
                return Err(DataError::InvalidTable(format!(
                    "row {i} has {} entries, expected {j}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DataError::InvalidTable(format!("row {i} has non-finite value")));
            }
        }
        for (i, &label) in labels.iter().enumerate() {
            if label < 1 || label > num_levels {
                return Err(DataError::LabelOutOfRange {
                    row: i,
                    value: label as f64,
                    num_levels,
                });
            }
        }
        Ok(Self {
            factor_names,
            rows,
            labels,
            num_levels,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factor_names.len()
    }

    pub fn num_levels(&self) -> usize {
        self.num_levels
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factor_names.iter().position(|n| n == name)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// 1-based label of row `i`.
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// 0-based label of row `i`.
    pub fn label0(&self, i: usize) -> usize {
        self.labels[i] - 1
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Count of each label level, index 0 holding level 1.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_levels];
        for &l in &self.labels {
            hist[l - 1] += 1;
        }
        hist
    }

    /// New table holding the given row indices, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> SurveyTable {
        SurveyTable {
            factor_names: self.factor_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_levels: self.num_levels,
        }
    }

    /// Per-factor column means; zeros when the table is empty.
    pub fn column_means(&self) -> Vec<f64> {
        let j = self.num_factors();
        let mut means = vec![0.0; j];
        if self.rows.is_empty() {
            return means;
        }
        for row in &self.rows {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows.len() as f64;
        for m in &mut means {
            *m /= n;
        }
        means
    }

    /// SHA-256 over factor names, cell bytes, and labels. Stable content id
    /// for provenance blocks.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for name in &self.factor_names {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update(self.num_levels.to_le_bytes());
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            for v in row {
                hasher.update(v.to_le_bytes());
            }
            hasher.update(label.to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Rule defining a subpopulation split on one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub factor: String,
    pub rule: GroupRule,
}

/// Threshold or level-set membership test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupRule {
    /// Value compared against a threshold; `at_or_below` keeps `v <= value`.
    Threshold { value: f64, at_or_below: bool },
    /// Exact membership in a value set (factors are integer-coded levels).
    Levels { values: Vec<f64> },
}

impl GroupSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        match &self.rule {
            GroupRule::Threshold { value, .. } if !value.is_finite() => Err(
                DataError::InvalidConfig("group threshold must be finite".into()),
            ),
            GroupRule::Levels { values } if values.is_empty() => Err(DataError::InvalidConfig(
                "group level set must be non-empty".into(),
            )),
            _ => Ok(()),
        }
    }

    fn matches(&self, v: f64) -> bool {
        match &self.rule {
            GroupRule::Threshold { value, at_or_below } => {
                if *at_or_below {
                    v <= *value
                } else {
                    v > *value
                }
            }
            GroupRule::Levels { values } => values.contains(&v),
        }
    }

    /// Short description used as a group name in reports.
    pub fn describe(&self) -> String {
        match &self.rule {
            GroupRule::Threshold { value, at_or_below } => {
                let op = if *at_or_below { "<=" } else { ">" };
                format!("{}{}{}", self.factor, op, value)
            }
            GroupRule::Levels { values } => {
                let vals: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
                format!("{} in {{{}}}", self.factor, vals.join(","))
            }
        }
    }
}

/// Deterministic fold assignment: `assignments[i]` is the fold of row `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// Row indices of the test fold `f` (ascending).
    pub fn test_indices(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == f)
            .collect()
    }

    /// Row indices outside fold `f` (ascending).
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != f)
            .collect()
    }
}

/// Configuration for the synthetic survey generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_rows: usize,
    pub num_factors: usize,
    pub num_levels: usize,
    /// Non-negative per-factor weights summing to 1.
    pub planted_importance: Vec<f64>,
    /// Stddev of the latent-score noise.
    pub noise_scale: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_factors == 0 {
            return Err(DataError::InvalidConfig("num_factors must be positive".into()));
        }
        if self.num_levels < 2 {
            return Err(DataError::InvalidConfig("num_levels must be at least 2".into()));
        }
        if self.n_rows < self.num_levels {
            return Err(DataError::InvalidConfig(format!(
                "n_rows ({}) must be at least num_levels ({}) so every class appears",
                self.n_rows, self.num_levels
            )));
        }
        if self.planted_importance.len() != self.num_factors {
            return Err(DataError::InvalidConfig(format!(
                "planted_importance has {} weights for {} factors",
                self.planted_importance.len(),
                self.num_factors
            )));
        }
        if self.planted_importance.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DataError::InvalidConfig(
                "planted_importance weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = self.planted_importance.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(DataError::InvalidConfig(format!(
                "planted_importance must sum to 1, got {sum}"
            )));
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(DataError::InvalidConfig("noise_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// Result of [`load_csv`]: the cleaned table plus how many rows were dropped
/// for missing values.
#[derive(Debug)]
pub struct LoadOutcome {
    pub table: SurveyTable,
    pub rows_dropped: usize,
}

/// Load a UTF-8, comma-separated, header-row CSV. Lines starting with `#`
/// are treated as comments. Rows with empty cells are dropped (counted in
/// the outcome); non-numeric cells are an error.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    num_levels: usize,
) -> Result<LoadOutcome, DataError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingColumn(label_column.to_string()))?;
    let factor_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0usize;
    for (rec_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().any(|cell| cell.trim().is_empty()) {
            dropped += 1;
            continue;
        }
        let mut row = Vec::with_capacity(factor_names.len());
        let mut label = None;
        for (col_idx, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| DataError::NonNumericCell {
                row: rec_idx,
                col: headers.get(col_idx).unwrap_or("").to_string(),
            })?;
            if col_idx == label_idx {
                label = Some(value);
            } else {
                if !value.is_finite() {
                    return Err(DataError::NonNumericCell {
                        row: rec_idx,
                        col: headers.get(col_idx).unwrap_or("").to_string(),
                    });
                }
                row.push(value);
            }
        }
        let label = label.expect("label column present in every record");
        if label.fract() != 0.0 || label < 1.0 || label > num_levels as f64 {
            return Err(DataError::LabelOutOfRange {
                row: rec_idx,
                value: label,
                num_levels,
            });
        }
        rows.push(row);
        labels.push(label as usize);
    }
    if rows.is_empty() {
        return Err(DataError::EmptyAfterCleaning);
    }
    let table = SurveyTable::new(factor_names, rows, labels, num_levels)?;
    Ok(LoadOutcome {
        table,
        rows_dropped: dropped,
    })
}

/// Write a table as CSV, optionally preceded by `#`-prefixed comment lines.
pub fn write_csv(
    table: &SurveyTable,
    path: impl AsRef<Path>,
    label_column: &str,
    comments: &[String],
) -> Result<(), DataError> {
    let mut file = std::fs::File::create(path)?;
    for line in comments {
        writeln!(file, "# {line}")?;
    }
    let mut header: Vec<&str> = table.factor_names().iter().map(|s| s.as_str()).collect();
    header.push(label_column);
    writeln!(file, "{}", header.join(","))?;
    for i in 0..table.num_rows() {
        let mut cells: Vec<String> = table.row(i).iter().map(|v| format!("{v}")).collect();
        cells.push(table.label(i).to_string());
        writeln!(file, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Partition rows by the group rule. The pair `(in_group, out_group)` is an
/// exhaustive, order-preserving split; either side may come back empty, which
/// callers that need rows treat as [`DataError::EmptyGroup`].
pub fn split_group(
    table: &SurveyTable,
    spec: &GroupSpec,
) -> Result<(SurveyTable, SurveyTable), DataError> {
    spec.validate()?;
    let j = table
        .factor_index(&spec.factor)
        .ok_or_else(|| DataError::UnknownFactor(spec.factor.clone()))?;
    let mut in_idx = Vec::new();
    let mut out_idx = Vec::new();
    for i in 0..table.num_rows() {
        if spec.matches(table.row(i)[j]) {
            in_idx.push(i);
        } else {
            out_idx.push(i);
        }
    }
    Ok((table.select_rows(&in_idx), table.select_rows(&out_idx)))
}

/// Deterministic k-fold assignment with fold sizes differing by at most one.
pub fn kfold_split(table: &SurveyTable, k: usize, seed: u64) -> Result<FoldPlan, DataError> {
    if k < 2 {
        return Err(DataError::InvalidK(k));
    }
    let n = table.num_rows();
    if n < k {
        return Err(DataError::TooFewRows { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, Stream::Fold, 0);
    order.shuffle(&mut rng);
    let mut assignments = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        assignments[row] = pos % k;
    }
    Ok(FoldPlan { k, assignments, seed })
}

/// Per-factor centering/scaling statistics from [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeStats {
    pub means: Vec<f64>,
    /// Population standard deviations; 0.0 marks a constant column.
    pub stddevs: Vec<f64>,
    pub constant: Vec<bool>,
}

impl StandardizeStats {
    /// Apply these statistics to another table (e.g. a held-out fold).
    /// Constant columns map to 0.
    pub fn apply(&self, table: &SurveyTable) -> Result<SurveyTable, DataError> {
        if self.means.len() != table.num_factors() {
            return Err(DataError::InvalidTable(format!(
                "stats cover {} factors, table has {}",
                self.means.len(),
                table.num_factors()
            )));
        }
        let rows = table
            .rows()
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        if self.constant[j] {
                            0.0
                        } else {
                            (v - self.means[j]) / self.stddevs[j]
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(SurveyTable {
            factor_names: table.factor_names.clone(),
            rows,
            labels: table.labels.clone(),
            num_levels: table.num_levels,
        })
    }
}

/// Center each factor to mean 0 and scale to population stddev 1.
/// Constant columns become all-zero and are flagged rather than failing.
pub fn standardize(table: &SurveyTable) -> (SurveyTable, StandardizeStats) {
    let j = table.num_factors();
    let n = table.num_rows() as f64;
    let means = table.column_means();
    let mut vars = vec![0.0; j];
    for row in table.rows() {
        for (jj, &v) in row.iter().enumerate() {
            let d = v - means[jj];
            vars[jj] += d * d;
        }
    }
    let mut stddevs = vec![0.0; j];
    let mut constant = vec![false; j];
    for jj in 0..j {
        let sd = (vars[jj] / n).sqrt();
        if sd == 0.0 {
            constant[jj] = true;
        } else {
            stddevs[jj] = sd;
        }
    }
    let stats = StandardizeStats {
        means,
        stddevs,
        constant,
    };
    let standardized = stats.apply(table).expect("stats match their own table");
    (standardized, stats)
}

/// A generated table plus the ground truth that was planted into it.
#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub table: SurveyTable,
    /// Factor indices by descending planted weight (ties by ascending index).
    pub planted_ranking: Vec<usize>,
}

/// Generate a survey table with factors drawn i.i.d. standard normal and
/// labels from quantile-binning the latent score `s = w·x + noise`, so the
/// label marginal is near-uniform and every level appears.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthOutcome, DataError> {
    config.validate()?;
    let n = config.n_rows;
    let j = config.num_factors;
    let c = config.num_levels;

    let mut factor_rng = derive_rng(config.seed, Stream::Synth, 0);
    let mut noise_rng = derive_rng(config.seed, Stream::SynthNoise, 0);
    let normal = StandardNormal;

    let mut rows = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..j).map(|_| normal.sample(&mut factor_rng)).collect();
        let mut s = 0.0;
        for (w, x) in config.planted_importance.iter().zip(&row) {
            s += w * x;
        }
        if config.noise_scale > 0.0 {
            let eps: f64 = normal.sample(&mut noise_rng);
            s += config.noise_scale * eps;
        }
        rows.push(row);
        scores.push(s);
    }

    // Quantile binning: rank in score order decides the level.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let mut labels = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = (rank * c / n).min(c - 1) + 1;
    }

    let factor_names = (1..=j).map(|i| format!("f{i}")).collect();
    let table = SurveyTable::new(factor_names, rows, labels, c)?;

    let mut planted_ranking: Vec<usize> = (0..j).collect();
    planted_ranking.sort_by(|&a, &b| {
        config.planted_importance[b]
            .partial_cmp(&config.planted_importance[a])
            .expect("finite weights")
            .then(a.cmp(&b))
    });
    Ok(SynthOutcome {
        table,
        planted_ranking,
    })
}

/// Deterministic subsample of `0..n` without replacement, returned ascending.
pub fn subsample_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, Stream::Subsample, 0);
    order.shuffle(&mut rng);
    let mut picked: Vec<usize> = order.into_iter().take(cap).collect();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn table_from_columns(names: &[&str], cols: &[Vec<f64>], labels: Vec<usize>, c: usize) -> SurveyTable {
        let n = cols[0].len();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|col| col[i]).collect()).collect();
        SurveyTable::new(names.iter().map(|s| s.to_string()).collect(), rows, labels, c).unwrap()
    }

    fn write_temp_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_csv_preserves_rows_and_labels() {
        let f = write_temp_csv("a,b,label\n1,2,1\n3,4,2\n5,6,4\n7,8,5\n");
        let out = load_csv(f.path(), "label", 5).unwrap();
        assert_eq!(out.table.num_rows(), 4);
        assert_eq!(out.table.labels(), &[1, 2, 4, 5]);
        assert_eq!(out.table.factor_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(out.rows_dropped, 0);
    }

    #[test]
    fn load_csv_rejects_label_out_of_range() {
        let f = write_temp_csv("a,b\n1,9\n");
        let err = load_csv(f.path(), "b", 5).unwrap_err();
        assert!(matches!(err, DataError::LabelOutOfRange { value, .. } if value == 9.0));
    }

    #[test]
    fn load_csv_drops_incomplete_rows_with_count() {
        let f = write_temp_csv("a,label\n1,1\n,2\n3,\n4,2\n");
        let out = load_csv(f.path(), "label", 5).unwrap();
        assert_eq!(out.table.num_rows(), 2);
        assert_eq!(out.rows_dropped, 2);
    }

    #[test]
    fn load_csv_rejects_non_numeric() {
        let f = write_temp_csv("a,label\nfoo,1\n");
        let err = load_csv(f.path(), "label", 5).unwrap_err();
        assert!(matches!(err, DataError::NonNumericCell { row: 0, ref col } if col == "a"));
    }

    #[test]
    fn load_csv_missing_file_and_column() {
        assert!(matches!(
            load_csv("/nonexistent/x.csv", "label", 5),
            Err(DataError::MissingFile(_))
        ));
        let f = write_temp_csv("a,b\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), "label", 5),
            Err(DataError::MissingColumn(_))
        ));
    }

    #[test]
    fn load_csv_empty_after_cleaning() {
        let f = write_temp_csv("a,label\n,1\n,2\n");
        assert!(matches!(
            load_csv(f.path(), "label", 5),
            Err(DataError::EmptyAfterCleaning)
        ));
    }

    #[test]
    fn load_csv_reproduces_reference_label_histogram() {
        // Histogram fixture with the five survey level counts.
        let counts = [77usize, 315, 630, 1743, 422];
        let mut content = String::from("a,label\n");
        for (level, &count) in counts.iter().enumerate() {
            for i in 0..count {
                content.push_str(&format!("{}.0,{}\n", i % 10, level + 1));
            }
        }
        let f = write_temp_csv(&content);
        let out = load_csv(f.path(), "label", 5).unwrap();
        assert_eq!(out.table.label_histogram(), vec![77, 315, 630, 1743, 422]);
    }

    #[test]
    fn load_csv_skips_comment_lines() {
        let f = write_temp_csv("# provenance: test\na,label\n1,1\n2,2\n");
        let out = load_csv(f.path(), "label", 5).unwrap();
        assert_eq!(out.table.num_rows(), 2);
    }

    #[test]
    fn split_group_threshold_boundary() {
        let t = table_from_columns(&["age"], &[vec![30.0, 41.0, 40.0, 55.0]], vec![1, 1, 2, 2], 2);
        let spec = GroupSpec {
            factor: "age".into(),
            rule: GroupRule::Threshold {
                value: 40.0,
                at_or_below: true,
            },
        };
        let (ing, outg) = split_group(&t, &spec).unwrap();
        let in_vals: Vec<f64> = ing.rows().iter().map(|r| r[0]).collect();
        let out_vals: Vec<f64> = outg.rows().iter().map(|r| r[0]).collect();
        assert_eq!(in_vals, vec![30.0, 40.0]);
        assert_eq!(out_vals, vec![41.0, 55.0]);
    }

    #[test]
    fn split_group_level_set() {
        let t = table_from_columns(&["health"], &[vec![1.0, 3.0, 4.0, 5.0]], vec![1, 1, 2, 2], 2);
        let spec = GroupSpec {
            factor: "health".into(),
            rule: GroupRule::Levels {
                values: vec![1.0, 2.0, 3.0],
            },
        };
        let (ing, outg) = split_group(&t, &spec).unwrap();
        let in_vals: Vec<f64> = ing.rows().iter().map(|r| r[0]).collect();
        let out_vals: Vec<f64> = outg.rows().iter().map(|r| r[0]).collect();
        assert_eq!(in_vals, vec![1.0, 3.0]);
        assert_eq!(out_vals, vec![4.0, 5.0]);
    }

    #[test]
    fn split_group_unknown_factor() {
        let t = table_from_columns(&["age"], &[vec![30.0]], vec![1], 2);
        let spec = GroupSpec {
            factor: "zodiac".into(),
            rule: GroupRule::Threshold {
                value: 1.0,
                at_or_below: true,
            },
        };
        assert!(matches!(
            split_group(&t, &spec),
            Err(DataError::UnknownFactor(_))
        ));
    }

    #[test]
    fn kfold_even_and_remainder_sizes() {
        let t = table_from_columns(&["x"], &[(0..10).map(|i| i as f64).collect()], vec![1; 10], 2);
        let plan = kfold_split(&t, 5, 7).unwrap();
        let mut sizes: Vec<usize> = (0..5).map(|f| plan.test_indices(f).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 2]);

        let t11 = table_from_columns(&["x"], &[(0..11).map(|i| i as f64).collect()], vec![1; 11], 2);
        let plan11 = kfold_split(&t11, 5, 7).unwrap();
        let mut sizes11: Vec<usize> = (0..5).map(|f| plan11.test_indices(f).len()).collect();
        sizes11.sort_unstable();
        assert_eq!(sizes11, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn kfold_is_deterministic_and_guards() {
        let t = table_from_columns(&["x"], &[(0..10).map(|i| i as f64).collect()], vec![1; 10], 2);
        assert_eq!(kfold_split(&t, 5, 3).unwrap(), kfold_split(&t, 5, 3).unwrap());
        assert!(matches!(kfold_split(&t, 1, 3), Err(DataError::InvalidK(1))));
        let tiny = table_from_columns(&["x"], &[vec![1.0, 2.0]], vec![1, 1], 2);
        assert!(matches!(
            kfold_split(&tiny, 5, 3),
            Err(DataError::TooFewRows { n: 2, k: 5 })
        ));
    }

    #[test]
    fn standardize_matches_population_stddev() {
        let t = table_from_columns(&["x"], &[vec![1.0, 2.0, 3.0]], vec![1, 1, 1], 2);
        let (s, stats) = standardize(&t);
        let col: Vec<f64> = s.rows().iter().map(|r| r[0]).collect();
        assert_abs_diff_eq!(col[0], -1.224744871391589, epsilon = 1e-12);
        assert_abs_diff_eq!(col[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(col[2], 1.224744871391589, epsilon = 1e-12);
        assert_abs_diff_eq!(stats.means[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(stats.stddevs[0], (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn standardize_flags_constant_columns() {
        let t = table_from_columns(&["x"], &[vec![7.0, 7.0, 7.0]], vec![1, 1, 1], 2);
        let (s, stats) = standardize(&t);
        assert!(stats.constant[0]);
        assert!(s.rows().iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn standardize_is_idempotent() {
        let t = table_from_columns(
            &["x", "y"],
            &[vec![1.0, 4.0, -2.0, 0.5], vec![10.0, 10.5, 9.0, 12.0]],
            vec![1, 1, 2, 2],
            2,
        );
        let (once, _) = standardize(&t);
        let (twice, _) = standardize(&once);
        for (a, b) in once.rows().iter().zip(twice.rows()) {
            for (x, y) in a.iter().zip(b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig {
            n_rows: 50,
            num_factors: 4,
            num_levels: 3,
            planted_importance: vec![0.4, 0.3, 0.2, 0.1],
            noise_scale: 0.5,
            seed: 11,
        };
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.planted_ranking, b.planted_ranking);
    }

    #[test]
    fn synth_noiseless_single_factor_matches_median_indicator() {
        let cfg = SynthConfig {
            n_rows: 1000,
            num_factors: 3,
            num_levels: 2,
            planted_importance: vec![1.0, 0.0, 0.0],
            noise_scale: 0.0,
            seed: 5,
        };
        let out = synth_generate(&cfg).unwrap();
        let mut x1: Vec<f64> = out.table.rows().iter().map(|r| r[0]).collect();
        x1.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = 0.5 * (x1[499] + x1[500]);
        for i in 0..out.table.num_rows() {
            let expected = if out.table.row(i)[0] > median { 2 } else { 1 };
            assert_eq!(out.table.label(i), expected);
        }
    }

    #[test]
    fn synth_correlation_ordering_tracks_planted_weights() {
        let cfg = SynthConfig {
            n_rows: 5000,
            num_factors: 3,
            num_levels: 5,
            planted_importance: vec![0.7, 0.2, 0.1],
            noise_scale: 0.0,
            seed: 17,
        };
        let out = synth_generate(&cfg).unwrap();
        let corrs = score_correlations(&out.table, &cfg.planted_importance);
        assert!(corrs[0] > corrs[1] && corrs[1] > corrs[2], "corrs={corrs:?}");
    }

    #[test]
    fn synth_monotonicity_with_close_weights() {
        let weights = vec![0.30, 0.25, 0.20, 0.15, 0.10];
        let cfg = SynthConfig {
            n_rows: 5000,
            num_factors: 5,
            num_levels: 5,
            planted_importance: weights.clone(),
            noise_scale: 0.0,
            seed: 23,
        };
        let out = synth_generate(&cfg).unwrap();
        let corrs = score_correlations(&out.table, &weights);
        let mut by_corr: Vec<usize> = (0..5).collect();
        by_corr.sort_by(|&a, &b| corrs[b].partial_cmp(&corrs[a]).unwrap());
        assert_eq!(by_corr, out.planted_ranking);
    }

    fn score_correlations(table: &SurveyTable, weights: &[f64]) -> Vec<f64> {
        let scores: Vec<f64> = table
            .rows()
            .iter()
            .map(|r| r.iter().zip(weights).map(|(x, w)| x * w).sum())
            .collect();
        (0..table.num_factors())
            .map(|j| {
                let xs: Vec<f64> = table.rows().iter().map(|r| r[j]).collect();
                pearson(&xs, &scores).abs()
            })
            .collect()
    }

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        sxy / (sxx.sqrt() * syy.sqrt())
    }

    #[test]
    fn synth_rejects_bad_weights() {
        let cfg = SynthConfig {
            n_rows: 10,
            num_factors: 2,
            num_levels: 2,
            planted_importance: vec![0.9, -0.1],
            noise_scale: 0.0,
            seed: 1,
        };
        assert!(matches!(synth_generate(&cfg), Err(DataError::InvalidConfig(_))));
    }

    #[test]
    fn csv_round_trip_via_write() {
        let cfg = SynthConfig {
            n_rows: 20,
            num_factors: 3,
            num_levels: 4,
            planted_importance: vec![0.5, 0.3, 0.2],
            noise_scale: 0.1,
            seed: 9,
        };
        let out = synth_generate(&cfg).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&out.table, f.path(), "label", &["written by test".into()]).unwrap();
        let loaded = load_csv(f.path(), "label", 4).unwrap();
        assert_eq!(loaded.table.labels(), out.table.labels());
        for (a, b) in loaded.table.rows().iter().zip(out.table.rows()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x, y, "shortest-repr float formatting must round-trip");
            }
        }
    }

    proptest! {
        #[test]
        fn partition_property(values in proptest::collection::vec(-5.0f64..5.0, 1..40), threshold in -5.0f64..5.0) {
            let n = values.len();
            let t = table_from_columns(&["v"], &[values.clone()], vec![1; n], 2);
            let spec = GroupSpec { factor: "v".into(), rule: GroupRule::Threshold { value: threshold, at_or_below: true } };
            let (ing, outg) = split_group(&t, &spec).unwrap();
            prop_assert_eq!(ing.num_rows() + outg.num_rows(), n);
            let mut merged: Vec<f64> = ing.rows().iter().chain(outg.rows()).map(|r| r[0]).collect();
            let mut original = values;
            merged.sort_by(|a, b| a.partial_cmp(b).unwrap());
            original.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert_eq!(merged, original);
        }

        #[test]
        fn fold_property_every_row_once(n in 4usize..60, k in 2usize..5, seed in 0u64..1000) {
            prop_assume!(n >= k);
            let t = table_from_columns(&["x"], &[(0..n).map(|i| i as f64).collect()], vec![1; n], 2);
            let plan = kfold_split(&t, k, seed).unwrap();
            let mut seen = vec![0usize; n];
            for f in 0..k {
                let idx = plan.test_indices(f);
                prop_assert!(!idx.is_empty());
                for i in idx { seen[i] += 1; }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
