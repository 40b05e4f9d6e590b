use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EvalError, LabeledTimeline};

/// Pairs `(pred, gt)` over units whose ground truth is labeled.
fn labeled_pairs<'a>(
    pred: &'a LabeledTimeline,
    gt: &'a LabeledTimeline,
) -> Result<Vec<(Option<&'a str>, &'a str)>, EvalError> {
    pred.check_same_grid(gt)?;
    Ok(pred
        .labels
        .iter()
        .zip(&gt.labels)
        .filter_map(|(p, g)| g.as_deref().map(|g| (p.as_deref(), g)))
        .collect())
}

/// Fraction of labeled ground-truth units whose prediction matches.
pub fn time_accuracy(pred: &LabeledTimeline, gt: &LabeledTimeline) -> Result<f64, EvalError> {
    let pairs = labeled_pairs(pred, gt)?;
    if pairs.is_empty() {
        return Err(EvalError::NoLabeledUnits);
    }
    let correct = pairs.iter().filter(|(p, g)| *p == Some(*g)).count();
    Ok(correct as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Scheme {
    Weighted,
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth units of this class.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub scheme: F1Scheme,
    pub score: f64,
    pub classes: Vec<ClassScore>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 over labeled units.
///
/// With `label_space`, exactly those classes are scored and a class missing
/// from both timelines scores 0. Without it, the classes are those seen in
/// either timeline.
pub fn interval_f1(
    pred: &LabeledTimeline,
    gt: &LabeledTimeline,
    scheme: F1Scheme,
    label_space: Option<&[String]>,
) -> Result<F1Report, EvalError> {
    let pairs = labeled_pairs(pred, gt)?;
    let classes: BTreeSet<&str> = match label_space {
        Some(space) => space.iter().map(String::as_str).collect(),
        None => pairs.iter().flat_map(|(p, g)| p.iter().copied().chain([*g])).collect(),
    };
    let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
    let mut fp: BTreeMap<&str, usize> = BTreeMap::new();
    let mut support: BTreeMap<&str, usize> = BTreeMap::new();
    for (p, g) in &pairs {
        *support.entry(g).or_default() += 1;
        match p {
            Some(p) if p == g => *tp.entry(g).or_default() += 1,
            Some(p) => *fp.entry(p).or_default() += 1,
            None => {}
        }
    }
    let get = |m: &BTreeMap<&str, usize>, k: &str| m.get(k).copied().unwrap_or(0);
    let scores: Vec<ClassScore> = classes
        .iter()
        .map(|&c| {
            let (tp, fp, sup) = (get(&tp, c), get(&fp, c), get(&support, c));
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, sup);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScore {
                label: c.to_string(),
                precision,
                recall,
                f1,
                support: sup,
            }
        })
        .collect();
    let score = match scheme {
        F1Scheme::Macro if scores.is_empty() => 0.0,
        F1Scheme::Macro => scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64,
        F1Scheme::Weighted => {
            let total: usize = scores.iter().map(|s| s.support).sum();
            if total == 0 {
                0.0
            } else {
                scores.iter().map(|s| s.f1 * s.support as f64).sum::<f64>() / total as f64
            }
        }
    };
    Ok(F1Report {
        scheme,
        score,
        classes: scores,
    })
}

/// Rows are ground-truth classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    /// Per row, units left unlabeled by the prediction. Present only when nonzero somewhere.
    pub unlabeled: Option<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Each row divided by its total (unlabeled column included); empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let extra = self.unlabeled.as_ref().map_or(0, |u| u[i]);
                let total: u64 = row.iter().sum::<u64>() + extra;
                row.iter()
                    .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect()
            })
            .collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Confusion counts over labeled units. `labels` fixes the leading order;
/// labels observed but not listed are appended sorted.
pub fn confusion_matrix(
    pred: &LabeledTimeline,
    gt: &LabeledTimeline,
    labels: &[String],
) -> Result<ConfusionMatrix, EvalError> {
    let pairs = labeled_pairs(pred, gt)?;
    let mut order: Vec<String> = Vec::new();
    for l in labels {
        if !order.contains(l) {
            order.push(l.clone());
        }
    }
    let extra: BTreeSet<&str> = pairs
        .iter()
        .flat_map(|(p, g)| p.iter().copied().chain([*g]))
        .filter(|l| !order.iter().any(|o| o == l))
        .collect();
    order.extend(extra.into_iter().map(String::from));
    let index: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let n = order.len();
    let mut counts = vec![vec![0u64; n]; n];
    let mut unlabeled = vec![0u64; n];
    for (p, g) in pairs {
        let r = index[g];
        match p {
            Some(p) => counts[r][index[p]] += 1,
            None => unlabeled[r] += 1,
        }
    }
    let unlabeled = unlabeled.iter().any(|&u| u > 0).then_some(unlabeled);
    Ok(ConfusionMatrix {
        labels: order,
        counts,
        unlabeled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Segment;
    use crate::time::{parse_instant, Instant};
    use chrono::Duration;

    fn t(m: i64) -> Instant {
        parse_instant("2010-11-04T00:00:00").unwrap() + Duration::minutes(m)
    }

    fn tl(segs: &[(i64, i64, &str)], len: usize) -> LabeledTimeline {
        let segs: Vec<Segment> = segs.iter().map(|(a, b, l)| Segment::new(t(*a), t(*b), *l)).collect();
        LabeledTimeline::from_segments(&segs, t(0), Duration::minutes(1), len)
    }

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn accuracy_examples() {
        let gt = tl(&[(0, 10, "A"), (10, 20, "B")], 20);
        assert_eq!(time_accuracy(&gt, &gt).unwrap(), 1.0);
        let pred = tl(&[(0, 15, "A"), (15, 20, "B")], 20);
        assert_eq!(time_accuracy(&pred, &gt).unwrap(), 0.75);
        let wrong = tl(&[(0, 20, "C")], 20);
        assert_eq!(time_accuracy(&wrong, &gt).unwrap(), 0.0);
    }

    #[test]
    fn unlabeled_gt_is_excluded() {
        let gt = tl(&[(0, 5, "A")], 10);
        let pred = tl(&[(0, 10, "B")], 10);
        assert_eq!(time_accuracy(&tl(&[(0, 10, "A")], 10), &gt).unwrap(), 1.0);
        assert_eq!(time_accuracy(&pred, &gt).unwrap(), 0.0);
        assert_eq!(time_accuracy(&pred, &tl(&[], 10)), Err(EvalError::NoLabeledUnits));
        assert!(matches!(
            time_accuracy(&pred, &tl(&[], 9)),
            Err(EvalError::SpanMismatch(_))
        ));
    }

    #[test]
    fn f1_hand_computed() {
        // gt A A A B B, pred A A B B A
        let gt = tl(&[(0, 3, "A"), (3, 5, "B")], 5);
        let pred = tl(&[(0, 2, "A"), (2, 4, "B"), (4, 5, "A")], 5);
        let r = interval_f1(&pred, &gt, F1Scheme::Macro, None).unwrap();
        // A: p=2/3 r=2/3 f=2/3; B: p=1/2 r=1/2 f=1/2
        assert!((r.classes[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.classes[1].f1 - 0.5).abs() < 1e-12);
        assert!((r.score - (2.0 / 3.0 + 0.5) / 2.0).abs() < 1e-12);
        let w = interval_f1(&pred, &gt, F1Scheme::Weighted, None).unwrap();
        assert!((w.score - (3.0 * 2.0 / 3.0 + 2.0 * 0.5) / 5.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_label_space_scores_absent_classes_zero() {
        let gt = tl(&[(0, 5, "A")], 5);
        assert_eq!(interval_f1(&gt, &gt, F1Scheme::Macro, None).unwrap().score, 1.0);
        let space = strs(&["A", "B"]);
        let r = interval_f1(&gt, &gt, F1Scheme::Macro, Some(&space)).unwrap();
        assert_eq!(r.score, 0.5);
        assert_eq!(r.classes[1].f1, 0.0);
        assert_eq!(
            interval_f1(&gt, &gt, F1Scheme::Weighted, Some(&space)).unwrap().score,
            1.0
        );
    }

    #[test]
    fn weighted_f1_equals_accuracy_when_precision_equals_recall() {
        // each class has one false positive and one false negative
        let gt = tl(&[(0, 4, "A"), (4, 8, "B")], 8);
        let pred = tl(&[(0, 3, "A"), (3, 4, "B"), (4, 7, "B"), (7, 8, "A")], 8);
        let acc = time_accuracy(&pred, &gt).unwrap();
        let w = interval_f1(&pred, &gt, F1Scheme::Weighted, None).unwrap().score;
        assert!((acc - w).abs() < 1e-12);
    }

    #[test]
    fn confusion_rows_and_unlabeled_column() {
        let gt = tl(&[(0, 4, "A"), (4, 6, "B")], 6);
        let pred = tl(&[(0, 3, "A"), (4, 6, "A")], 6);
        let m = confusion_matrix(&pred, &gt, &strs(&["A", "B", "C"])).unwrap();
        assert_eq!(m.counts, vec![vec![3, 0, 0], vec![2, 0, 0], vec![0, 0, 0]]);
        assert_eq!(m.unlabeled, Some(vec![1, 0, 0]));
        let n = m.row_normalized();
        assert_eq!(n[0], vec![0.75, 0.0, 0.0]);
        assert_eq!(n[1], vec![1.0, 0.0, 0.0]);
        assert_eq!(n[2], vec![0.0, 0.0, 0.0]);
        let id = confusion_matrix(&gt, &gt, &[]).unwrap();
        assert_eq!(id.row_normalized(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(id.unlabeled.is_none());
    }
}
