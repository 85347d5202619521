//! Answer scoring: text normalization, tolerant numeric equality, and
//! order-insensitive denotation matching for answer lists.

pub mod judge;
pub mod stats;

pub use judge::{
    run_ranking, run_simulation, run_verification, JudgeError, JudgeItem, RankingReport,
    RankingSample, SimulationReport, VerificationReport,
};
pub use stats::{
    agreement, agreement_by_id, filter_comparable, flatten_paired, invert_rank,
    load_correctness_csv, load_decisions, load_matrix_csv, pearson, AgreementReport, StatsError,
};

/// Relative tolerance for numeric answer comparison.
pub const NUMERIC_REL_TOL: f64 = 1e-6;
/// Absolute floor below which numeric differences are ignored outright.
pub const NUMERIC_ABS_TOL: f64 = 1e-9;

/// Lowercases, trims, and collapses internal whitespace runs.
pub fn normalize_text(s: &str) -> String {
    s.trim().to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Finds a standalone TRUE/FALSE token in free text, preferring uppercase
/// occurrences over case-insensitive ones.
pub fn parse_verdict_token(text: &str) -> Option<bool> {
    let strict = regex::Regex::new(r"\b(TRUE|FALSE)\b").unwrap();
    if let Some(m) = strict.find(text) {
        return Some(m.as_str() == "TRUE");
    }
    let loose = regex::Regex::new(r"(?i)\b(true|false)\b").unwrap();
    loose.find(text).map(|m| m.as_str().eq_ignore_ascii_case("true"))
}

fn parse_number(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() {
        return None;
    }
    let v: f64 = t.parse().ok()?;
    v.is_finite().then_some(v)
}

/// Whether two answer values match: equal after normalization, or both
/// numeric and within tolerance.
pub fn values_match(a: &str, b: &str) -> bool {
    let (na, nb) = (normalize_text(a), normalize_text(b));
    if na == nb {
        return true;
    }
    match (parse_number(&na), parse_number(&nb)) {
        (Some(x), Some(y)) => {
            let diff = (x - y).abs();
            diff <= NUMERIC_ABS_TOL || diff <= NUMERIC_REL_TOL * x.abs().max(y.abs())
        }
        _ => false,
    }
}

/// Order-insensitive multiset comparison of two answer lists under
/// `values_match`: every gold item must be claimed by a distinct predicted
/// item and vice versa.
pub fn denotation_match(predicted: &[String], gold: &[String]) -> bool {
    if predicted.len() != gold.len() {
        return false;
    }
    let mut used = vec![false; predicted.len()];
    for g in gold {
        let Some(i) = predicted
            .iter()
            .enumerate()
            .position(|(i, p)| !used[i] && values_match(p, g))
        else {
            return false;
        };
        used[i] = true;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_collapses_case_and_whitespace() {
        assert_eq!(normalize_text("  New   York\tCity "), "new york city");
        assert!(values_match("New York", "new  york"));
        assert!(!values_match("new york", "new jersey"));
    }

    #[test]
    fn numeric_matching_uses_relative_tolerance() {
        assert!(values_match("1000000", "1000000.5"));
        assert!(!values_match("1000000", "1000002"));
        assert!(values_match("0.5", ".5"));
        assert!(values_match("0", "0.0000000000001"));
        assert!(!values_match("1", "2"));
        // Non-numeric strings never match numerically.
        assert!(!values_match("1a", "1"));
        assert!(!values_match("inf", "inf2"));
    }

    #[test]
    fn denotation_is_order_insensitive_and_multiset_aware() {
        let p = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(denotation_match(&p(&["a", "b"]), &p(&["b", "a"])));
        assert!(!denotation_match(&p(&["a"]), &p(&["a", "a"])));
        assert!(!denotation_match(&p(&["a", "a"]), &p(&["a", "b"])));
        assert!(denotation_match(&p(&["1.0", "x"]), &p(&["x", "1"])));
        assert!(denotation_match(&p(&[]), &p(&[])));
        assert!(!denotation_match(&p(&["a"]), &p(&[])));
    }

    #[test]
    fn duplicate_values_must_appear_the_same_number_of_times() {
        let p = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(denotation_match(&p(&["2", "2", "3"]), &p(&["3", "2.0", "2"])));
        assert!(!denotation_match(&p(&["2", "2", "3"]), &p(&["3", "3", "2"])));
    }
}
