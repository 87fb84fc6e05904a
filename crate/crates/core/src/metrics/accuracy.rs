use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DetectionMap, Labels};

/// Which slice of the data a case belongs to, decided by its reference set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseSplit {
    NoFinding,
    OnePathology,
    MultiplePathology,
}

impl CaseSplit {
    pub fn of(reference: &Labels) -> Self {
        match reference.len() {
            0 => CaseSplit::NoFinding,
            1 => CaseSplit::OnePathology,
            _ => CaseSplit::MultiplePathology,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub no_finding: usize,
    pub one_pathology: usize,
    pub multiple_pathology: usize,
}

impl SplitCounts {
    fn bump(&mut self, split: CaseSplit) {
        match split {
            CaseSplit::NoFinding => self.no_finding += 1,
            CaseSplit::OnePathology => self.one_pathology += 1,
            CaseSplit::MultiplePathology => self.multiple_pathology += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.no_finding + self.one_pathology + self.multiple_pathology
    }
}

/// Exact-match accuracy overall and per reference split. Split accuracies
/// are `None` when the split has no cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub cases: usize,
    pub overall: f64,
    pub no_finding: Option<f64>,
    pub one_pathology: Option<f64>,
    pub multiple_pathology: Option<f64>,
    /// Undefined when every reference is empty.
    pub single_match: Option<f64>,
    pub counts: SplitCounts,
    pub hits: SplitCounts,
}

fn check_lengths(predictions: &[Labels], references: &[Labels]) -> Result<()> {
    if predictions.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} references",
            predictions.len(),
            references.len()
        )));
    }
    Ok(())
}

fn ratio(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hits as f64 / n as f64)
}

pub fn exact_match_accuracy(predictions: &[Labels], references: &[Labels]) -> Result<AccuracyReport> {
    check_lengths(predictions, references)?;
    if references.is_empty() {
        return Err(Error::invalid("no cases to score"));
    }
    let mut counts = SplitCounts::default();
    let mut hits = SplitCounts::default();
    for (p, r) in predictions.iter().zip(references) {
        let split = CaseSplit::of(r);
        counts.bump(split);
        if p == r {
            hits.bump(split);
        }
    }
    Ok(AccuracyReport {
        cases: references.len(),
        overall: hits.total() as f64 / references.len() as f64,
        no_finding: ratio(hits.no_finding, counts.no_finding),
        one_pathology: ratio(hits.one_pathology, counts.one_pathology),
        multiple_pathology: ratio(hits.multiple_pathology, counts.multiple_pathology),
        single_match: single_match_accuracy(predictions, references).ok(),
        counts,
        hits,
    })
}

/// Fraction of all reference pathologies that were predicted.
pub fn single_match_accuracy(predictions: &[Labels], references: &[Labels]) -> Result<f64> {
    check_lengths(predictions, references)?;
    let (matched, total) = predictions
        .iter()
        .zip(references)
        .fold((0usize, 0usize), |(m, t), (p, r)| {
            (m + p.intersection(r).count(), t + r.len())
        });
    if total == 0 {
        return Err(Error::invalid(
            "single match accuracy is undefined when every reference is empty",
        ));
    }
    Ok(matched as f64 / total as f64)
}

/// The `k` labels with highest score, ties broken by label-set order.
pub fn top_k_labels(detection: &DetectionMap, k: usize) -> Vec<&str> {
    let mut ranked: Vec<(usize, &str, f64)> = detection
        .iter()
        .enumerate()
        .map(|(i, (l, s))| (i, l, s.value()))
        .collect();
    // stable sort keeps label order among equal scores
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2));
    ranked.into_iter().take(k).map(|(_, l, _)| l).collect()
}

/// Fraction of cases whose top-k labels all belong to the reference set. An
/// empty reference stands for the no-finding label alone.
pub fn top_k_accuracy(detections: &[DetectionMap], references: &[Labels], k: usize) -> Result<f64> {
    if detections.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} detections for {} references",
            detections.len(),
            references.len()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if detections.is_empty() {
        return Err(Error::invalid("no cases to score"));
    }
    let mut hits = 0usize;
    for (d, r) in detections.iter().zip(references) {
        let set = d.label_set();
        if k > set.len() {
            return Err(Error::invalid(format!(
                "k = {k} exceeds the {} labels of set {:?}",
                set.len(),
                set.name()
            )));
        }
        let no_finding_ref: Labels = set.no_finding_label().map(String::from).into_iter().collect();
        let reference = if r.is_empty() { &no_finding_ref } else { r };
        if top_k_labels(d, k).iter().all(|l| reference.contains(*l)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / detections.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::fixtures::small_set;

    fn s(items: &[&str]) -> Labels {
        items.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn exact_match_examples() {
        let r = exact_match_accuracy(&[s(&[]), s(&["e"])], &[s(&[]), s(&["e"])]).unwrap();
        assert_eq!(r.overall, 1.0);

        let r = exact_match_accuracy(&[s(&["e"])], &[s(&["e", "d"])]).unwrap();
        assert_eq!((r.overall, r.multiple_pathology), (0.0, Some(0.0)));
        assert_eq!(r.no_finding, None);

        let preds = [s(&[]), s(&["a"]), s(&["a"]), s(&["a"])];
        let refs = [s(&[]), s(&[]), s(&["a"]), s(&["a", "b"])];
        let r = exact_match_accuracy(&preds, &refs).unwrap();
        assert_eq!(r.overall, 0.5);
        assert_eq!(r.no_finding, Some(0.5));
        assert_eq!(r.one_pathology, Some(1.0));
        assert_eq!(r.multiple_pathology, Some(0.0));
        assert_eq!(r.counts.total(), 4);
    }

    #[test]
    fn exact_match_errors() {
        assert!(exact_match_accuracy(&[s(&[])], &[]).is_err());
        assert!(exact_match_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn single_match_examples() {
        assert_eq!(single_match_accuracy(&[s(&["a"])], &[s(&["a", "b"])]).unwrap(), 0.5);
        assert_eq!(
            single_match_accuracy(&[s(&["a"]), s(&["b"])], &[s(&["a"]), s(&["b"])]).unwrap(),
            1.0
        );
        let v = single_match_accuracy(&[s(&["b", "c"]), s(&["c"])], &[s(&["a", "b"]), s(&["c"])]).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert!(single_match_accuracy(&[s(&["a"])], &[s(&[])]).is_err());
    }

    #[test]
    fn top_k_examples() {
        let set = small_set();
        // labels: No Finding, Pleural Effusion, Edema, Cardiomegaly, Support Devices
        let d = DetectionMap::from_values(set.clone(), &[0.1, 0.9, 0.2, 0.0, 0.0]).unwrap();
        assert_eq!(
            top_k_accuracy(std::slice::from_ref(&d), &[s(&["Pleural Effusion"])], 1).unwrap(),
            1.0
        );
        assert_eq!(
            top_k_accuracy(std::slice::from_ref(&d), &[s(&["Edema"])], 1).unwrap(),
            0.0
        );
        assert!(top_k_accuracy(std::slice::from_ref(&d), &[s(&[])], 6).is_err());
        assert!(top_k_accuracy(&[d], &[s(&[])], 0).is_err());

        let normal = DetectionMap::from_values(set.clone(), &[0.8, 0.1, 0.1, 0.0, 0.0]).unwrap();
        assert_eq!(top_k_accuracy(&[normal], &[s(&[])], 1).unwrap(), 1.0);

        // ties resolve to the earlier label
        let tie = DetectionMap::from_values(set, &[0.0, 0.5, 0.5, 0.0, 0.0]).unwrap();
        assert_eq!(top_k_labels(&tie, 1), vec!["Pleural Effusion"]);
    }
}
