//! Text metrics over report pairs and the trace-judging protocol.

mod judge;
mod metrics;

pub use judge::{
    aggregate_judge_scores, export_judge_prompt, parse_judge_reply, Dimension, JudgeError, JudgeHistogram,
    JudgeRequest, JudgeResponse, JudgeScore,
};
pub use metrics::{align, bleu1, lcs_len, meteor_basic, rouge_l, tokenize, Alignment, RougeL};

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("no cases to evaluate")]
    Empty,
    #[error("duplicate case id {0:?}")]
    DuplicateCase(String),
    #[error("case ids differ between predictions and references: {0}")]
    IdMismatch(String),
    #[error("reference for case {0:?} is empty")]
    EmptyReference(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseText {
    pub case_id: String,
    pub text: String,
}

/// Reads JSON lines of `{"case_id", "text"}`.
pub fn parse_case_texts(jsonl: &str) -> Result<Vec<CaseText>, EvalError> {
    jsonl
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| EvalError::Parse { line: i + 1, reason: e.to_string() }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScores {
    pub case_id: String,
    pub bleu1: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    /// Model-based metrics are not computed here; the columns are kept so
    /// externally computed values can be merged in.
    pub bertscore: Option<f64>,
    pub f1_radgraph: Option<f64>,
    pub green: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub bleu1: f64,
    pub rouge_l: f64,
    pub meteor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub case_count: usize,
    pub cases: Vec<CaseScores>,
    pub means: MetricMeans,
}

fn check_ids(items: &[CaseText]) -> Result<BTreeSet<&str>, EvalError> {
    let mut ids = BTreeSet::new();
    for c in items {
        if !ids.insert(c.case_id.as_str()) {
            return Err(EvalError::DuplicateCase(c.case_id.clone()));
        }
    }
    Ok(ids)
}

/// Scores every prediction against the reference with the same case id.
/// Means are unweighted over cases; case order follows `predictions`.
pub fn evaluate_corpus(predictions: &[CaseText], references: &[CaseText]) -> Result<MetricReport, EvalError> {
    if predictions.is_empty() || references.is_empty() {
        return Err(EvalError::Empty);
    }
    let pred_ids = check_ids(predictions)?;
    let ref_ids = check_ids(references)?;
    if pred_ids != ref_ids {
        let only_pred: Vec<&str> = pred_ids.difference(&ref_ids).copied().collect();
        let only_ref: Vec<&str> = ref_ids.difference(&pred_ids).copied().collect();
        return Err(EvalError::IdMismatch(format!(
            "only in predictions [{}], only in references [{}]",
            only_pred.join(", "),
            only_ref.join(", ")
        )));
    }
    let mut cases = Vec::with_capacity(predictions.len());
    for p in predictions {
        let r = references.iter().find(|r| r.case_id == p.case_id).expect("ids checked");
        let (ct, rt) = (tokenize(&p.text), tokenize(&r.text));
        let bleu = bleu1(&ct, &rt).ok_or_else(|| EvalError::EmptyReference(r.case_id.clone()))?;
        cases.push(CaseScores {
            case_id: p.case_id.clone(),
            bleu1: bleu,
            rouge_l: rouge_l(&ct, &rt).f1,
            meteor: meteor_basic(&ct, &rt),
            bertscore: None,
            f1_radgraph: None,
            green: None,
        });
    }
    let n = cases.len() as f64;
    let mean = |f: fn(&CaseScores) -> f64| cases.iter().map(f).sum::<f64>() / n;
    let means = MetricMeans { bleu1: mean(|c| c.bleu1), rouge_l: mean(|c| c.rouge_l), meteor: mean(|c| c.meteor) };
    Ok(MetricReport { case_count: cases.len(), cases, means })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes")
    }

    /// Aligned plain-text table with a trailing mean row.
    pub fn to_table(&self) -> String {
        let id_w = self.cases.iter().map(|c| c.case_id.len()).max().unwrap_or(0).max("case_id".len()).max(4);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<id_w$}  {:>8}  {:>8}  {:>8}  {:>9}  {:>11}  {:>8}",
            "case_id", "BLEU-1", "ROUGE-L", "METEOR", "BERTScore", "F1-RadGraph", "GREEN"
        );
        let row = |out: &mut String, id: &str, b: f64, r: f64, m: f64, c: Option<&CaseScores>| {
            let _ = writeln!(
                out,
                "{:<id_w$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>9}  {:>11}  {:>8}",
                id,
                b,
                r,
                m,
                cell(c.and_then(|c| c.bertscore)),
                cell(c.and_then(|c| c.f1_radgraph)),
                cell(c.and_then(|c| c.green)),
            );
        };
        for c in &self.cases {
            row(&mut out, &c.case_id, c.bleu1, c.rouge_l, c.meteor, Some(c));
        }
        row(&mut out, "mean", self.means.bleu1, self.means.rouge_l, self.means.meteor, None);
        out
    }
}
