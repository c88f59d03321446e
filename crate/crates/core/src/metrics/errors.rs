use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vocab;
use crate::tasks::Format;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorLabel {
    Correct,
    InstructionUnfollowing,
    Hallucination,
    Other,
}

impl ErrorLabel {
    pub const ALL: [ErrorLabel; 4] = [
        ErrorLabel::Correct,
        ErrorLabel::InstructionUnfollowing,
        ErrorLabel::Hallucination,
        ErrorLabel::Other,
    ];
}

/// One evaluated test example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub prediction: Vec<u32>,
    pub target: Vec<u32>,
    pub format: Option<Format>,
}

/// Exact match is `Correct`; an empty output is `Other`; a wrong length or
/// any token outside the output modality is `InstructionUnfollowing` (this
/// wins over wrong content); anything else is `Hallucination`.
pub fn classify_error(record: &PredictionRecord, vocab: Vocab) -> Result<ErrorLabel> {
    let format = record
        .format
        .ok_or_else(|| Error::validation(format!("example {} has no format descriptor", record.id)))?;
    if record.prediction == record.target {
        return Ok(ErrorLabel::Correct);
    }
    if record.prediction.is_empty() {
        return Ok(ErrorLabel::Other);
    }
    let well_formed = record.prediction.len() == format.length
        && record.prediction.iter().all(|&t| vocab.contains(format.modality, t));
    Ok(if well_formed {
        ErrorLabel::Hallucination
    } else {
        ErrorLabel::InstructionUnfollowing
    })
}

/// Labels keyed by example id.
pub fn classify_errors(records: &[PredictionRecord], vocab: Vocab) -> Result<BTreeMap<String, ErrorLabel>> {
    let mut out = BTreeMap::new();
    for r in records {
        if out.insert(r.id.clone(), classify_error(r, vocab)?).is_some() {
            return Err(Error::validation(format!("duplicate example id {}", r.id)));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub correct: usize,
    pub instruction_unfollowing: usize,
    pub hallucination: usize,
    pub other: usize,
}

impl LabelCounts {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a ErrorLabel>) -> Self {
        let mut c = Self::default();
        for l in labels {
            match l {
                ErrorLabel::Correct => c.correct += 1,
                ErrorLabel::InstructionUnfollowing => c.instruction_unfollowing += 1,
                ErrorLabel::Hallucination => c.hallucination += 1,
                ErrorLabel::Other => c.other += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.correct + self.instruction_unfollowing + self.hallucination + self.other
    }
}

/// Percent of each earlier task's test set that newly falls into a category
/// by the final stage, averaged over those tasks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub hal: f64,
    pub iuf: f64,
    pub oth: f64,
}

/// `own[i]` holds task `i`'s labels right after training on it, `last[i]`
/// its labels after the final stage. `None` with fewer than two tasks.
pub fn error_metrics(
    own: &[BTreeMap<String, ErrorLabel>],
    last: &[BTreeMap<String, ErrorLabel>],
) -> Result<Option<ErrorMetrics>> {
    if own.len() != last.len() {
        return Err(Error::validation(format!(
            "{} own-stage label sets vs {} final-stage sets",
            own.len(),
            last.len()
        )));
    }
    let t = own.len();
    if t < 2 {
        return Ok(None);
    }
    let mut sums = [0.0; 3];
    for (i, (a, b)) in own.iter().zip(last).enumerate().take(t - 1) {
        if a.len() != b.len() || !a.keys().eq(b.keys()) {
            return Err(Error::validation(format!("task {i}: example ids differ between stages")));
        }
        if a.is_empty() {
            return Err(Error::validation(format!("task {i}: no labelled examples")));
        }
        let cats = [ErrorLabel::Hallucination, ErrorLabel::InstructionUnfollowing, ErrorLabel::Other];
        for (k, cat) in cats.iter().enumerate() {
            let fresh = b.iter().filter(|(id, l)| *l == cat && a[*id] != *cat).count();
            sums[k] += 100.0 * fresh as f64 / a.len() as f64;
        }
    }
    let n = (t - 1) as f64;
    Ok(Some(ErrorMetrics {
        hal: sums[0] / n,
        iuf: sums[1] / n,
        oth: sums[2] / n,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Modality;

    fn vocab() -> Vocab {
        Vocab::new(64)
    }

    fn rec(prediction: Vec<u32>, target: Vec<u32>) -> PredictionRecord {
        PredictionRecord {
            id: "x".into(),
            format: Some(Format {
                length: target.len(),
                modality: Modality::Text,
            }),
            prediction,
            target,
        }
    }

    #[test]
    fn label_rules() {
        let v = vocab();
        let text = |i| v.token(Modality::Text, i);
        let image = v.token(Modality::Image, 3);
        let target = vec![text(1), text(2), text(3), text(4)];
        assert_eq!(classify_error(&rec(target.clone(), target.clone()), v).unwrap(), ErrorLabel::Correct);
        let wrong = vec![text(1), text(2), text(3), text(5)];
        assert_eq!(classify_error(&rec(wrong, target.clone()), v).unwrap(), ErrorLabel::Hallucination);
        let foreign = vec![text(1), text(2), text(3), image];
        assert_eq!(
            classify_error(&rec(foreign, target.clone()), v).unwrap(),
            ErrorLabel::InstructionUnfollowing
        );
        let short = vec![text(1), text(2)];
        assert_eq!(
            classify_error(&rec(short, target.clone()), v).unwrap(),
            ErrorLabel::InstructionUnfollowing
        );
        assert_eq!(classify_error(&rec(vec![], target.clone()), v).unwrap(), ErrorLabel::Other);
        let mut bare = rec(target.clone(), target);
        bare.format = None;
        assert!(classify_error(&bare, v).is_err());
    }

    fn labels(n: usize, bad: &[usize], label: ErrorLabel) -> BTreeMap<String, ErrorLabel> {
        (0..n)
            .map(|i| {
                let l = if bad.contains(&i) { label } else { ErrorLabel::Correct };
                (format!("e{i:03}"), l)
            })
            .collect()
    }

    #[test]
    fn ten_new_hallucinations_out_of_500() {
        let bad: Vec<usize> = (0..10).collect();
        let own = vec![labels(500, &[], ErrorLabel::Correct), labels(100, &[], ErrorLabel::Correct)];
        let last = vec![labels(500, &bad, ErrorLabel::Hallucination), labels(100, &[], ErrorLabel::Correct)];
        let m = error_metrics(&own, &last).unwrap().unwrap();
        assert!((m.hal - 2.0).abs() < 1e-12);
        assert_eq!((m.iuf, m.oth), (0.0, 0.0));
    }

    #[test]
    fn persistent_errors_do_not_count() {
        let own = vec![labels(10, &[3], ErrorLabel::Hallucination), labels(10, &[], ErrorLabel::Correct)];
        let last = own.clone();
        let m = error_metrics(&own, &last).unwrap().unwrap();
        assert_eq!((m.hal, m.iuf, m.oth), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mismatched_ids_rejected() {
        let own = vec![labels(10, &[], ErrorLabel::Correct), labels(1, &[], ErrorLabel::Correct)];
        let last = vec![labels(9, &[], ErrorLabel::Correct), labels(1, &[], ErrorLabel::Correct)];
        assert!(error_metrics(&own, &last).is_err());
        assert_eq!(error_metrics(&own[..1], &own[..1]).unwrap(), None);
    }

    #[test]
    fn counts_partition() {
        let l = labels(20, &[1, 2, 3], ErrorLabel::Other);
        let c = LabelCounts::from_labels(l.values());
        assert_eq!(c.total(), 20);
        assert_eq!(c.other, 3);
    }
}
