//! Belief-shift answer filter.
//!
//! For a (question, context, answer) triplet the generator's confidence in
//! the answer is measured twice, with and without the context. The shift
//! `conf_with - conf_without` accepts the answer when strictly positive.
//! Confidence is the length-normalized sequence probability
//! `exp(mean token logprob)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Gateway, ScoredContinuation};
use crate::template::substitute;
use crate::types::{Decision, FilterVerdict, QAPair};
use crate::util::parallel_map;

pub fn answer_confidence(scored: &ScoredContinuation) -> Result<f64> {
    if scored.logprobs.is_empty() {
        return Err(Error::InvalidArgument("cannot score an empty answer".into()));
    }
    let mean = scored.logprobs.iter().sum::<f64>() / scored.logprobs.len() as f64;
    Ok(mean.exp())
}

/// Scoring prompt framing. `{q}` and `{d}` are substituted; the answer is
/// scored as the continuation ` {a}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringPrompts {
    pub question_only: String,
    pub with_context: String,
}

impl Default for ScoringPrompts {
    fn default() -> Self {
        ScoringPrompts {
            question_only: "Question: {q}\nAnswer:".into(),
            with_context: "Context: {d}\nQuestion: {q}\nAnswer:".into(),
        }
    }
}

impl ScoringPrompts {
    fn render(&self, template: &str, q: &str, d: Option<&str>) -> String {
        let mut vars = std::collections::BTreeMap::new();
        vars.insert("q".to_string(), q.to_string());
        if let Some(d) = d {
            vars.insert("d".to_string(), d.to_string());
        }
        substitute(template, &vars)
    }
}

pub struct BeliefShiftFilter<'a> {
    pub gateway: &'a Gateway,
    /// One model scores both sides of every shift in a run.
    pub scoring_model: &'a str,
    pub prompts: ScoringPrompts,
    pub workers: usize,
}

impl<'a> BeliefShiftFilter<'a> {
    pub fn delta_seper(&self, q: &str, d: &str, a: &str) -> Result<FilterVerdict> {
        if q.trim().is_empty() || a.trim().is_empty() {
            return Err(Error::InvalidArgument("question and answer must be nonempty".into()));
        }
        let continuation = format!(" {}", a.trim());
        let without = self.prompts.render(&self.prompts.question_only, q, None);
        let with = self.prompts.render(&self.prompts.with_context, q, Some(d));
        let conf_without = answer_confidence(&self.gateway.score_continuation(
            self.scoring_model,
            &without,
            &continuation,
        )?)?;
        let conf_with = answer_confidence(&self.gateway.score_continuation(
            self.scoring_model,
            &with,
            &continuation,
        )?)?;
        Ok(FilterVerdict::from_confidences(conf_with, conf_without))
    }

    /// Attach a verdict to every pair, using its dataset's context.
    pub fn filter_corpus(&self, pairs: &[QAPair], context_of: &HashMap<String, String>) -> Result<Vec<QAPair>> {
        if let Some(p) = pairs.iter().find(|p| !context_of.contains_key(&p.dataset_id)) {
            return Err(Error::InvalidArgument(format!(
                "no context for dataset `{}` of pair `{}`",
                p.dataset_id, p.id
            )));
        }
        let verdicts = parallel_map(pairs, self.workers, |p| {
            self.delta_seper(&p.question, &context_of[&p.dataset_id], &p.answer)
        });
        pairs
            .iter()
            .zip(verdicts)
            .map(|(p, v)| {
                let mut p = p.clone();
                p.verdict = Some(v?);
                Ok(p)
            })
            .collect()
    }
}

/// One row of `verdicts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub pair_id: String,
    pub delta: f64,
    pub decision: Decision,
    pub conf_with: f64,
    pub conf_without: f64,
    pub scoring_model: String,
}

impl VerdictRecord {
    pub fn new(pair_id: &str, v: &FilterVerdict, scoring_model: &str) -> Self {
        VerdictRecord {
            pair_id: pair_id.to_string(),
            delta: v.delta,
            decision: v.decision,
            conf_with: v.conf_with,
            conf_without: v.conf_without,
            scoring_model: scoring_model.to_string(),
        }
    }

    pub fn verdict(&self) -> FilterVerdict {
        FilterVerdict {
            delta: self.delta,
            decision: self.decision,
            conf_with: self.conf_with,
            conf_without: self.conf_without,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterEvalReport {
    /// Undefined when the filter accepted nothing.
    pub precision: Option<f64>,
    pub recall: f64,
    pub f1: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    /// (recall, precision) per threshold, threshold descending.
    #[serde(default)]
    pub pr_points: Vec<(f64, f64)>,
    /// (false positive rate, true positive rate) per threshold.
    #[serde(default)]
    pub roc_points: Vec<(f64, f64)>,
}

/// Precision / recall / F1 of filter decisions against binary human labels
/// (`true` = the answer is faithful).
pub fn evaluate_filter(decisions: &[Decision], labels: &[bool]) -> Result<FilterEvalReport> {
    if decisions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} decisions but {} labels",
            decisions.len(),
            labels.len()
        )));
    }
    if decisions.is_empty() {
        return Err(Error::InvalidArgument("no decisions to evaluate".into()));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
    for (d, &l) in decisions.iter().zip(labels) {
        match (d, l) {
            (Decision::Accept, true) => tp += 1,
            (Decision::Accept, false) => fp += 1,
            (Decision::Reject, true) => fneg += 1,
            (Decision::Reject, false) => tn += 1,
        }
    }
    if tp + fneg == 0 {
        return Err(Error::InvalidArgument("labels contain no positive example".into()));
    }
    let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    let recall = tp as f64 / (tp + fneg) as f64;
    let f1 = precision.and_then(|p| (p + recall > 0.0).then(|| 2.0 * p * recall / (p + recall)));
    Ok(FilterEvalReport {
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        true_negatives: tn,
        pr_points: Vec::new(),
        roc_points: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoints {
    /// Distinct delta values, descending.
    pub thresholds: Vec<f64>,
    pub pr: Vec<(f64, f64)>,
    pub roc: Vec<(f64, f64)>,
}

/// Sweep the threshold over the distinct deltas (accept when
/// `delta > threshold`). At a threshold that accepts nothing, precision is
/// taken as 1.
pub fn curve_points(deltas: &[f64], labels: &[bool]) -> Result<CurvePoints> {
    if deltas.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} deltas but {} labels",
            deltas.len(),
            labels.len()
        )));
    }
    if deltas.iter().any(|d| d.is_nan()) {
        return Err(Error::InvalidArgument("delta is NaN".into()));
    }
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidArgument(
            "curves need both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..deltas.len()).collect();
    order.sort_by(|&a, &b| deltas[b].total_cmp(&deltas[a]));

    let mut thresholds = Vec::new();
    let mut pr = Vec::new();
    let mut roc = Vec::new();
    // items with delta strictly above the current threshold
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = deltas[order[i]];
        thresholds.push(t);
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        pr.push((tp as f64 / positives as f64, precision));
        roc.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
        while i < order.len() && deltas[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    Ok(CurvePoints { thresholds, pr, roc })
}
