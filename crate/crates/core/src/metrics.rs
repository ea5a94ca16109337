use std::collections::BTreeSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precision, recall and F1 as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// Harmonic mean; 0 when both inputs are 0.
    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics { precision, recall, f1 }
    }
}

/// Gold entity pairs, by entity name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceAlignment {
    pairs: BTreeSet<(String, String)>,
}

impl ReferenceAlignment {
    /// Reads `left<TAB>right` lines; blank lines are skipped.
    pub fn parse<R: BufRead>(source: R) -> Result<Self> {
        let mut pairs = BTreeSet::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut f = line.split('\t');
            match (f.next(), f.next(), f.next()) {
                (Some(l), Some(r), None) => {
                    pairs.insert((l.trim().to_owned(), r.trim().to_owned()));
                }
                _ => return Err(Error::MalformedReferenceLine(i + 1)),
            }
        }
        Ok(ReferenceAlignment { pairs })
    }

    pub fn contains(&self, left: &str, right: &str) -> bool {
        // BTreeSet<(String, String)> cannot be probed with borrowed tuples.
        self.pairs.contains(&(left.to_owned(), right.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, String)> {
        self.pairs.iter()
    }
}

impl FromIterator<(String, String)> for ReferenceAlignment {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        ReferenceAlignment { pairs: iter.into_iter().collect() }
    }
}

/// Scores predicted entity pairs against a reference. Duplicate predictions
/// count once.
pub fn evaluate_metrics<'a, I>(predicted: I, reference: &ReferenceAlignment) -> Result<Metrics>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let predicted: BTreeSet<(&str, &str)> = predicted.into_iter().collect();
    let hits = predicted.iter().filter(|(l, r)| reference.contains(l, r)).count();
    let precision = if predicted.is_empty() { 0.0 } else { hits as f64 / predicted.len() as f64 };
    let recall = hits as f64 / reference.len() as f64;
    Ok(Metrics::from_precision_recall(precision, recall))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn reference(pairs: &[(&str, &str)]) -> ReferenceAlignment {
        pairs.iter().map(|&(l, r)| (l.to_owned(), r.to_owned())).collect()
    }

    #[test]
    fn table_rows_are_harmonic_means() {
        let m = Metrics::from_precision_recall(0.80588, 0.37110);
        assert_abs_diff_eq!(m.f1, 0.50818, epsilon = 1e-5);
    }

    #[test]
    fn perfect_and_empty() {
        let gold = reference(&[("a", "x"), ("b", "y")]);
        let m = evaluate_metrics([("a", "x"), ("b", "y")], &gold).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = evaluate_metrics(std::iter::empty(), &gold).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(matches!(
            evaluate_metrics([("a", "x")], &ReferenceAlignment::default()),
            Err(Error::EmptyReference)
        ));
    }

    #[test]
    fn parse_reference() {
        let gold = ReferenceAlignment::parse("a\tx\n\nb\ty\r\n".as_bytes()).unwrap();
        assert_eq!(gold.len(), 2);
        assert!(gold.contains("b", "y"));
        assert!(matches!(
            ReferenceAlignment::parse("a\tx\tz\n".as_bytes()),
            Err(Error::MalformedReferenceLine(1))
        ));
    }

    proptest! {
        #[test]
        fn adding_a_correct_pair_never_lowers_recall(
            gold in prop::collection::btree_set((0u8..20, 0u8..20), 1..30),
            predicted in prop::collection::vec((0u8..20, 0u8..20), 0..30),
            pick in any::<prop::sample::Index>(),
        ) {
            let name = |i: u8| format!("e{i}");
            let gold_ref: ReferenceAlignment = gold.iter().map(|&(l, r)| (name(l), name(r))).collect();
            let pred: Vec<(String, String)> = predicted.iter().map(|&(l, r)| (name(l), name(r))).collect();
            let before = evaluate_metrics(pred.iter().map(|(l, r)| (l.as_str(), r.as_str())), &gold_ref).unwrap();
            let extra = gold.iter().nth(pick.index(gold.len())).map(|&(l, r)| (name(l), name(r))).unwrap();
            let mut more = pred.clone();
            more.push(extra);
            let after = evaluate_metrics(more.iter().map(|(l, r)| (l.as_str(), r.as_str())), &gold_ref).unwrap();
            prop_assert!(after.recall >= before.recall);
            prop_assert!((0.0..=1.0).contains(&after.f1));
        }
    }
}
