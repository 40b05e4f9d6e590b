use chrono::Duration;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::time::Span;

/// One blocked fold: a contiguous test block, the rest for training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub test: Span,
    pub train: Vec<Span>,
}

/// `n_folds` disjoint test blocks of `test_days` whole days, spread evenly
/// from the start of `span` to its end. Block `i` starts at day
/// `floor(i * (D - test_days) / (n_folds - 1))` where `D` is the number of
/// whole days in `span`.
pub fn blocked_splits(span: &Span, n_folds: usize, test_days: i64) -> Result<Vec<Fold>, EvalError> {
    if n_folds == 0 || test_days <= 0 {
        return Err(EvalError::Invalid("need at least one fold of at least one day".into()));
    }
    let days = span.duration().num_days();
    if days < n_folds as i64 * test_days {
        return Err(EvalError::SpanTooShort {
            days,
            folds: n_folds,
            test_days,
        });
    }
    let slack = days - test_days;
    Ok((0..n_folds)
        .map(|i| {
            let first_day = if n_folds == 1 {
                0
            } else {
                i as i64 * slack / (n_folds as i64 - 1)
            };
            let start = span.start + Duration::days(first_day);
            let test = Span::new(start, start + Duration::days(test_days));
            let train = [Span::new(span.start, test.start), Span::new(test.end, span.end)]
                .into_iter()
                .filter(|s| !s.is_empty())
                .collect();
            Fold { index: i, test, train }
        })
        .collect())
}
