//! Correlation between automated judge scores and human preference data:
//! Pearson r with a two-tailed t-test p-value, rank inversion, matrix
//! flattening, and a small CSV matrix loader.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 3 paired observations, got {n}")]
    TooFew { n: usize },
    #[error("{side} values have zero variance")]
    ZeroVariance { side: &'static str },
    #[error("paired inputs differ in length: {xs} vs {ys}")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("the two decision sets share no ids")]
    EmptyOverlap,
    #[error("matrix file {path}: {message}")]
    Format { path: String, message: String },
    #[error("could not read {path}: {message}")]
    Io { path: String, message: String },
}

/// Pearson correlation with its two-tailed p-value from the t distribution
/// with n-2 degrees of freedom. Perfect correlations report p = 0.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch { xs: xs.len(), ys: ys.len() });
    }
    let n = xs.len();
    if n < 3 {
        return Err(StatsError::TooFew { n });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance { side: "x" });
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance { side: "y" });
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let p = if 1.0 - r * r <= f64::EPSILON {
        0.0
    } else {
        let df = nf - 2.0;
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok((r, p))
}

/// Turns a rank (1 = best) into a preference score (higher = better) for a
/// field of `m` methods: 1 becomes m, m becomes 1.
pub fn invert_rank(rank: f64, m: usize) -> f64 {
    (m as f64 + 1.0) - rank
}

/// Flattens two methods-by-settings matrices row-major into paired vectors,
/// inverting the ranks so both sides point the same way.
pub fn flatten_paired(
    ranks: &[Vec<f64>],
    scores: &[Vec<f64>],
    m: usize,
) -> Result<(Vec<f64>, Vec<f64>), StatsError> {
    if ranks.len() != scores.len() {
        return Err(StatsError::LengthMismatch { xs: ranks.len(), ys: scores.len() });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (rrow, srow) in ranks.iter().zip(scores) {
        if rrow.len() != srow.len() {
            return Err(StatsError::LengthMismatch { xs: rrow.len(), ys: srow.len() });
        }
        for (r, s) in rrow.iter().zip(srow) {
            xs.push(invert_rank(*r, m));
            ys.push(*s);
        }
    }
    Ok((xs, ys))
}

/// Fraction of positions where two verdict vectors agree; None when empty
/// or mismatched.
pub fn agreement(a: &[bool], b: &[bool]) -> Option<f64> {
    if a.is_empty() || a.len() != b.len() {
        return None;
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Some(same as f64 / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    /// Ids present in both decision sets.
    pub compared: usize,
    pub matched: usize,
    pub rate: f64,
    /// Ids present in only the first set; excluded from the rate.
    pub only_a: usize,
    /// Ids present in only the second set; excluded from the rate.
    pub only_b: usize,
}

/// Agreement rate between two id-keyed verdict sets. Ids present in only
/// one set are excluded from the rate but counted in the report; an empty
/// intersection is an error.
pub fn agreement_by_id(
    a: &BTreeMap<String, bool>,
    b: &BTreeMap<String, bool>,
) -> Result<AgreementReport, StatsError> {
    let mut compared = 0;
    let mut matched = 0;
    for (id, &va) in a {
        if let Some(&vb) = b.get(id) {
            compared += 1;
            if va == vb {
                matched += 1;
            }
        }
    }
    if compared == 0 {
        return Err(StatsError::EmptyOverlap);
    }
    Ok(AgreementReport {
        compared,
        matched,
        rate: matched as f64 / compared as f64,
        only_a: a.keys().filter(|id| !b.contains_key(*id)).count(),
        only_b: b.keys().filter(|id| !a.contains_key(*id)).count(),
    })
}

#[derive(Deserialize)]
struct DecisionRow {
    id: String,
    decision: String,
}

/// Loads per-sample TRUE/FALSE decisions from a JSON-lines file of
/// `{"id": ..., "decision": "TRUE"|"FALSE"}` rows.
pub fn load_decisions(path: &Path) -> Result<BTreeMap<String, bool>, StatsError> {
    let text = std::fs::read_to_string(path).map_err(|e| StatsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let fail = |message: String| StatsError::Format {
        path: path.display().to_string(),
        message,
    };
    let mut decisions = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: DecisionRow = serde_json::from_str(line)
            .map_err(|e| fail(format!("line {}: {e}", i + 1)))?;
        let value = match row.decision.as_str() {
            "TRUE" => true,
            "FALSE" => false,
            other => {
                return Err(fail(format!(
                    "line {}: decision must be TRUE or FALSE, got {other:?}",
                    i + 1
                )))
            }
        };
        if decisions.insert(row.id.clone(), value).is_some() {
            return Err(fail(format!("line {}: duplicate id {:?}", i + 1, row.id)));
        }
    }
    Ok(decisions)
}

/// Loads a per-sample method-correctness matrix from a CSV file shaped
/// `id,<method1>,<method2>,...` with 0/1 cells. Returns the method order
/// and an id-keyed map of correctness vectors.
pub fn load_correctness_csv(
    path: &Path,
) -> Result<(Vec<String>, BTreeMap<String, Vec<bool>>), StatsError> {
    let (ids, methods, values) = load_matrix_csv(path)?;
    let fail = |message: String| StatsError::Format {
        path: path.display().to_string(),
        message,
    };
    let mut matrix = BTreeMap::new();
    for (id, row) in ids.iter().zip(values) {
        let mut flags = Vec::with_capacity(row.len());
        for v in row {
            flags.push(match v {
                v if v == 0.0 => false,
                v if v == 1.0 => true,
                other => {
                    return Err(fail(format!("id {id:?} holds non-binary cell {other}")))
                }
            });
        }
        if matrix.insert(id.clone(), flags).is_some() {
            return Err(fail(format!("duplicate id {id:?}")));
        }
    }
    Ok((methods, matrix))
}

/// Ids (in sorted order) whose correctness vector is uniform: every method
/// right, or every method wrong. Explanation comparisons confined to these
/// samples cannot reward a method for its answer rather than its
/// explanation.
pub fn filter_comparable(matrix: &BTreeMap<String, Vec<bool>>) -> Vec<String> {
    matrix
        .iter()
        .filter(|(_, flags)| {
            !flags.is_empty() && (flags.iter().all(|f| *f) || flags.iter().all(|f| !*f))
        })
        .map(|(id, _)| id.clone())
        .collect()
}

/// Loads a numeric matrix from a CSV file shaped
/// `label,<col1>,<col2>,...` per row with a header line. Returns
/// (row labels, column labels, values).
pub fn load_matrix_csv(
    path: &Path,
) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>), StatsError> {
    let text = std::fs::read_to_string(path).map_err(|e| StatsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let fail = |message: String| StatsError::Format {
        path: path.display().to_string(),
        message,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| fail("empty file".into()))?;
    let columns: Vec<String> =
        header.split(',').skip(1).map(|c| c.trim().to_string()).collect();
    if columns.is_empty() {
        return Err(fail("header has no value columns".into()));
    }
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',').map(str::trim);
        let label = fields.next().unwrap_or_default();
        if label.is_empty() {
            return Err(fail(format!("row {} has an empty label", i + 2)));
        }
        let row: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| fail(format!("row {} holds non-numeric field {f:?}", i + 2)))
            })
            .collect::<Result<_, _>>()?;
        if row.len() != columns.len() {
            return Err(fail(format!(
                "row {} has {} values, header has {}",
                i + 2,
                row.len(),
                columns.len()
            )));
        }
        labels.push(label.to_string());
        values.push(row);
    }
    if labels.is_empty() {
        return Err(fail("no data rows".into()));
    }
    Ok((labels, columns, values))
}
