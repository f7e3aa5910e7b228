//! Confusion counts, precision/recall/F1, AUROC, and per-condition reports.
//!
//! Undefined values (a zero denominator, a single-class AUROC) are carried
//! as `None` and listed in the report rather than being reported as 0.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_binary(values: &[u8], what: &str) -> Result<()> {
    match values.iter().find(|&&v| v > 1) {
        Some(v) => Err(Error::input(format!("{what} holds {v}; expected 0 or 1"))),
        None => Ok(()),
    }
}

pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionCounts> {
    if y_true.len() != y_pred.len() {
        return Err(Error::input(format!(
            "label and prediction lengths differ ({} vs {})",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::input("no samples to score"));
    }
    check_binary(y_true, "y_true")?;
    check_binary(y_pred, "y_pred")?;

    let mut c = ConfusionCounts::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecallF1 {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// F1 is undefined whenever precision or recall is, or when both are zero.
pub fn precision_recall_f1(c: &ConfusionCounts) -> PrecisionRecallF1 {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(_), Some(_)) => ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_).filter(|_| c.tp > 0),
        _ => None,
    };
    PrecisionRecallF1 { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AucMethod {
    /// Mann-Whitney statistic, tied pairs credited one half.
    #[default]
    Rank,
    /// Area under the ROC polyline through every distinct threshold.
    Trapezoid,
}

impl FromStr for AucMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rank" => Ok(AucMethod::Rank),
            "trapezoid" => Ok(AucMethod::Trapezoid),
            _ => Err(Error::input(format!("unknown AUROC method {s:?}"))),
        }
    }
}

/// Both methods accumulate twice the area as an integer and divide once,
/// so they return bit-identical results on the same input.
pub fn auroc(scores: &[f64], labels: &[u8], method: AucMethod) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::input(format!(
            "score and label lengths differ ({} vs {})",
            scores.len(),
            labels.len()
        )));
    }
    check_binary(labels, "labels")?;
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::input(format!("non-finite score {s}")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("AUROC needs both positive and negative samples".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let groups = tie_groups(&order, scores);

    let twice_area = match method {
        AucMethod::Rank => {
            // Twice the summed rank of positives; a tie group spanning ranks
            // r+1..=r+g gives each member the average rank r + (g+1)/2.
            let mut twice_rank_sum = 0u64;
            let mut rank = 0u64;
            for group in &groups {
                let g = group.len() as u64;
                let p = group.iter().filter(|&&i| labels[i] == 1).count() as u64;
                twice_rank_sum += p * (2 * rank + g + 1);
                rank += g;
            }
            twice_rank_sum - pos * (pos + 1)
        }
        AucMethod::Trapezoid => {
            // Sweep thresholds from high to low; each step adds a trapezoid
            // of width dfp and mean height (tp_old + tp_new) / 2.
            let (mut tp, mut fp, mut twice) = (0u64, 0u64, 0u64);
            for group in groups.iter().rev() {
                let p = group.iter().filter(|&&i| labels[i] == 1).count() as u64;
                let n = group.len() as u64 - p;
                twice += n * (2 * tp + p);
                tp += p;
                fp += n;
            }
            debug_assert_eq!((tp, fp), (pos, neg));
            twice
        }
    };
    Ok(twice_area as f64 / (2 * pos * neg) as f64)
}

fn tie_groups<'a>(order: &'a [usize], scores: &[f64]) -> Vec<&'a [usize]> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || scores[order[i]].total_cmp(&scores[order[start]]) != Ordering::Equal {
            groups.push(&order[start..i]);
            start = i;
        }
    }
    groups
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub study_id: String,
    pub condition: String,
    pub score: f64,
    pub label: u8,
}

pub fn read_predictions_csv(text: &str, origin: &str) -> Result<Vec<Prediction>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (n, row) in r.deserialize().enumerate() {
        let p: Prediction = row.map_err(|e| Error::parse(origin, n + 2, e.to_string()))?;
        if p.label > 1 || !p.score.is_finite() {
            return Err(Error::parse(origin, n + 2, "label must be 0 or 1 and score finite"));
        }
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionResult {
    pub condition: String,
    pub counts: ConfusionCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroValues {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub per_condition: Vec<ConditionResult>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroValues,
    /// `condition:metric` pairs left out of the macro means.
    pub undefined: Vec<String>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Unweighted means over the conditions where each metric is defined.
pub fn macro_report(per_condition: Vec<ConditionResult>) -> Result<MetricReport> {
    if per_condition.is_empty() {
        return Err(Error::input("no conditions to report"));
    }
    let mut undefined = Vec::new();
    for r in &per_condition {
        for (name, v) in [("precision", r.precision), ("recall", r.recall), ("f1", r.f1), ("auroc", r.auroc)] {
            if v.is_none() {
                undefined.push(format!("{}:{name}", r.condition));
            }
        }
    }
    let macro_avg = MacroValues {
        precision: mean_defined(per_condition.iter().map(|r| r.precision)),
        recall: mean_defined(per_condition.iter().map(|r| r.recall)),
        f1: mean_defined(per_condition.iter().map(|r| r.f1)),
        auroc: mean_defined(per_condition.iter().map(|r| r.auroc)),
    };
    Ok(MetricReport {
        per_condition,
        macro_avg,
        undefined,
    })
}

pub fn evaluate_condition(condition: &str, scores: &[f64], labels: &[u8], threshold: f64, method: AucMethod) -> Result<ConditionResult> {
    let predicted: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    let counts = confusion(labels, &predicted)?;
    let prf = precision_recall_f1(&counts);
    let auroc = match auroc(scores, labels, method) {
        Ok(a) => Some(a),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ConditionResult {
        condition: condition.to_string(),
        counts,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        auroc,
    })
}

/// Groups predictions by condition, in order of first appearance, and scores each group.
pub fn evaluate(predictions: &[Prediction], threshold: f64, method: AucMethod) -> Result<MetricReport> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, (Vec<f64>, Vec<u8>)> = HashMap::new();
    for p in predictions {
        let entry = groups.entry(&p.condition).or_insert_with(|| {
            order.push(&p.condition);
            (Vec::new(), Vec::new())
        });
        entry.0.push(p.score);
        entry.1.push(p.label);
    }
    let results = order
        .iter()
        .map(|c| {
            let (scores, labels) = &groups[c];
            evaluate_condition(c, scores, labels, threshold, method)
        })
        .collect::<Result<Vec<_>>>()?;
    macro_report(results)
}

fn rounded(v: Option<f64>) -> Option<f64> {
    v.map(|x| format::real(x).parse().expect("formatted float parses"))
}

/// Pretty JSON with every real rounded to 12 significant digits; undefined values are `null`.
pub fn report_to_json(report: &MetricReport) -> String {
    let mut r = report.clone();
    for c in &mut r.per_condition {
        for v in [&mut c.precision, &mut c.recall, &mut c.f1, &mut c.auroc] {
            *v = rounded(*v);
        }
    }
    let m = &mut r.macro_avg;
    for v in [&mut m.precision, &mut m.recall, &mut m.f1, &mut m.auroc] {
        *v = rounded(*v);
    }
    let mut json = serde_json::to_string_pretty(&r).expect("report serializes");
    json.push('\n');
    json
}

/// Fixed-width table with one row per condition and a closing macro row.
pub fn report_to_table(report: &MetricReport) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    let width = report
        .per_condition
        .iter()
        .map(|r| r.condition.len())
        .chain(["Condition".len(), "Macro".len()])
        .max()
        .unwrap_or(0);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}\n",
        "Condition", "Precision", "Recall", "F1-Score", "AUROC"
    );
    let rows = report
        .per_condition
        .iter()
        .map(|r| (r.condition.as_str(), r.precision, r.recall, r.f1, r.auroc))
        .chain(std::iter::once((
            "Macro",
            report.macro_avg.precision,
            report.macro_avg.recall,
            report.macro_avg.f1,
            report.macro_avg.auroc,
        )));
    for (name, p, r, f, a) in rows {
        let _ = writeln!(
            out,
            "{name:<width$}  {:>9}  {:>9}  {:>9}  {:>9}",
            cell(p),
            cell(r),
            cell(f),
            cell(a)
        );
    }
    out
}
