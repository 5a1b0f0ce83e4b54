//! QA evaluation and corpus analysis: entailment accuracy, ROUGE-L,
//! cognitive-level classification, diversity, and per-type statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Gateway, PromptRequest};
use crate::retrieval::{tokenize, Index};
use crate::template::Template;
use crate::types::{AnswerForm, CognitiveLevel, QAPair, QuestionType};

const DEFAULT_COGNITIVE: &str = include_str!("../templates/cognitive.txt");
const DEFAULT_ANSWER: &str = include_str!("../templates/answer.txt");
const DEFAULT_ENTAILMENT: &str = include_str!("../templates/entailment.txt");

pub struct EvalPrompts {
    pub cognitive: Template,
    pub answer: Template,
    pub entailment: Template,
}

impl EvalPrompts {
    pub fn load(dir: Option<&Path>) -> Result<Self> {
        Ok(EvalPrompts {
            cognitive: Template::load_or(dir, "cognitive.txt", DEFAULT_COGNITIVE)?,
            answer: Template::load_or(dir, "answer.txt", DEFAULT_ANSWER)?,
            entailment: Template::load_or(dir, "entailment.txt", DEFAULT_ENTAILMENT)?,
        })
    }
}

impl Default for EvalPrompts {
    fn default() -> Self {
        EvalPrompts::load(None).expect("bundled templates parse")
    }
}

/// Probability that `premise` entails `hypothesis`.
pub trait EntailmentScorer: Sync {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64>;
}

pub struct GatewayEntailment<'a> {
    pub gateway: &'a Gateway,
    pub model: &'a str,
    pub template: &'a Template,
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").unwrap());

/// First number in the response; must lie in [0, 1].
pub fn parse_probability(raw: &str) -> Result<f64> {
    let m = NUMBER
        .find(raw)
        .ok_or_else(|| Error::parse("entailment score", "no number in response", raw))?;
    let v: f64 = m
        .as_str()
        .parse()
        .map_err(|_| Error::parse("entailment score", "unreadable number", raw))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::parse("entailment score", format!("{v} is outside [0, 1]"), raw));
    }
    Ok(v)
}

impl EntailmentScorer for GatewayEntailment<'_> {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        let mut vars = BTreeMap::new();
        vars.insert("premise".to_string(), premise.to_string());
        vars.insert("hypothesis".to_string(), hypothesis.to_string());
        let req = PromptRequest::new("entailment", self.model, self.template.render(&vars))
            .with_temperature(0.0)
            .with_vars(vars);
        parse_probability(&self.gateway.complete(&req)?)
    }
}

/// Correct when the prediction entails the reference with score above 0.5.
pub fn entailment_correct(prediction: &str, reference: &str, scorer: &dyn EntailmentScorer) -> Result<bool> {
    Ok(scorer.score(prediction, reference)? > 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens(prediction: &[String], reference: &[String]) -> RougeScore {
    let l = lcs_len(prediction, reference) as f64;
    if prediction.is_empty() || reference.is_empty() || l == 0.0 {
        return RougeScore {
            precision: 0.0,
            recall: 0.0,
            f: 0.0,
        };
    }
    let precision = l / prediction.len() as f64;
    let recall = l / reference.len() as f64;
    RougeScore {
        precision,
        recall,
        f: 2.0 * precision * recall / (precision + recall),
    }
}

/// ROUGE-L with balanced F over [`tokenize`] tokens.
pub fn rouge_l(prediction: &str, reference: &str) -> RougeScore {
    rouge_l_tokens(&tokenize(prediction), &tokenize(reference))
}

static LEVEL_CODE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bc\s*([1-6])\b").unwrap());

/// Exactly one distinct code C1..C6 must appear (repeats are fine).
pub fn parse_cognitive_level(raw: &str) -> Result<CognitiveLevel> {
    let codes: BTreeSet<u32> = LEVEL_CODE
        .captures_iter(raw)
        .map(|c| c[1].parse::<u32>().expect("digit"))
        .collect();
    match codes.len() {
        1 => Ok(CognitiveLevel::from_number(*codes.first().unwrap()).expect("1..=6")),
        0 => Err(Error::parse("cognitive level", "no level code", raw)),
        _ => Err(Error::parse("cognitive level", "several distinct level codes", raw)),
    }
}

pub fn classify_cognitive_level(
    question: &str,
    gateway: &Gateway,
    model: &str,
    template: &Template,
) -> Result<CognitiveLevel> {
    if question.trim().is_empty() {
        return Err(Error::InvalidArgument("question is empty".into()));
    }
    let mut vars = BTreeMap::new();
    vars.insert("question".to_string(), question.to_string());
    let req = PromptRequest::new("cognitive", model, template.render(&vars))
        .with_temperature(0.0)
        .with_vars(vars);
    parse_cognitive_level(&gateway.complete(&req)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDistribution {
    pub counts: [u64; 6],
}

impl LevelDistribution {
    pub fn from_levels(levels: impl IntoIterator<Item = CognitiveLevel>) -> Self {
        let mut d = LevelDistribution::default();
        for l in levels {
            d.counts[l.index()] += 1;
        }
        d
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// `1 - sum p_i^2` over the six levels; at most 5/6.
pub fn diversity_index(dist: &LevelDistribution) -> Result<f64> {
    let total = dist.total();
    if total == 0 {
        return Err(Error::InvalidArgument("empty level distribution".into()));
    }
    let t = total as f64;
    Ok(1.0 - dist.counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub label: String,
    pub count: usize,
    pub percent: f64,
    pub avg_question_words: Option<f64>,
    pub avg_answer_words: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    /// One row per question type, taxonomy order.
    pub types: Vec<StatsRow>,
    pub short: StatsRow,
    pub long: StatsRow,
    pub total: StatsRow,
}

fn stats_row(label: &str, pairs: &[&QAPair], grand_total: usize) -> StatsRow {
    let n = pairs.len();
    let avg =
        |f: &dyn Fn(&QAPair) -> usize| (n > 0).then(|| pairs.iter().map(|p| f(p)).sum::<usize>() as f64 / n as f64);
    StatsRow {
        label: label.to_string(),
        count: n,
        percent: 100.0 * n as f64 / grand_total as f64,
        avg_question_words: avg(&|p| crate::types::word_count(&p.question)),
        avg_answer_words: avg(&|p| crate::types::word_count(&p.answer)),
    }
}

pub fn aggregate_stats(pairs: &[QAPair]) -> Result<StatsTable> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no QA pairs to summarize".into()));
    }
    let n = pairs.len();
    let of = |pred: &dyn Fn(&QAPair) -> bool| pairs.iter().filter(|p| pred(p)).collect::<Vec<_>>();
    let types = QuestionType::ALL
        .iter()
        .map(|&t| stats_row(t.display_name(), &of(&|p| p.qtype == t), n))
        .collect();
    Ok(StatsTable {
        types,
        short: stats_row("Short Answer", &of(&|p| p.qtype.answer_form() == AnswerForm::Short), n),
        long: stats_row("Long Answer", &of(&|p| p.qtype.answer_form() == AnswerForm::Long), n),
        total: stats_row("Total", &of(&|_| true), n),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagAnswer {
    pub prediction: String,
    pub passages: Vec<String>,
    pub warnings: Vec<String>,
}

pub struct RagAnswerer<'a> {
    pub gateway: &'a Gateway,
    pub model: &'a str,
    pub template: &'a Template,
    /// Chunked passages; required when `k > 0`.
    pub passages: Option<&'a Index>,
}

impl RagAnswerer<'_> {
    pub fn answer(&self, question: &str, k: usize) -> Result<RagAnswer> {
        let mut warnings = Vec::new();
        let passages: Vec<String> = if k == 0 {
            Vec::new()
        } else {
            let index = self
                .passages
                .ok_or_else(|| Error::InvalidArgument("retrieval-augmented answering needs a passage index".into()))?;
            let hits = index.search_units(question, k);
            if hits.len() < k {
                warnings.push(format!("requested {k} passages, only {} available", hits.len()));
            }
            hits.iter().map(|&(u, _)| index.units[u].text.clone()).collect()
        };
        let block = if passages.is_empty() {
            String::new()
        } else {
            let mut s = String::from("Passages:\n");
            for (i, p) in passages.iter().enumerate() {
                s.push_str(&format!("[{}] {p}\n", i + 1));
            }
            s.push('\n');
            s
        };
        let mut vars = BTreeMap::new();
        vars.insert("question".to_string(), question.to_string());
        vars.insert("passages".to_string(), block);
        vars.insert("passages_json".to_string(), serde_json::to_string(&passages)?);
        let req = PromptRequest::new("answer", self.model, self.template.render(&vars))
            .with_temperature(0.0)
            .with_vars(vars);
        Ok(RagAnswer {
            prediction: self.gateway.complete(&req)?.trim().to_string(),
            passages,
            warnings,
        })
    }
}

/// One row of `qa_eval.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAEvalRecord {
    pub pair_id: String,
    pub model: String,
    /// Passages given to the model.
    pub k: usize,
    pub prediction: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
}

/// Score one prediction: entailment always, ROUGE-L F for long-form types.
pub fn evaluate_prediction(
    pair: &QAPair,
    model: &str,
    k: usize,
    prediction: &str,
    scorer: &dyn EntailmentScorer,
) -> Result<QAEvalRecord> {
    let correct = entailment_correct(prediction, &pair.answer, scorer)?;
    let rouge = (pair.qtype.answer_form() == AnswerForm::Long).then(|| rouge_l(prediction, &pair.answer).f);
    Ok(QAEvalRecord {
        pair_id: pair.id.clone(),
        model: model.to_string(),
        k,
        prediction: prediction.to_string(),
        correct,
        rouge_l: rouge,
    })
}

/// Micro-averaged accuracy; `None` for an empty set.
pub fn accuracy<'a>(records: impl IntoIterator<Item = &'a QAEvalRecord>) -> Option<f64> {
    let (mut n, mut hit) = (0usize, 0usize);
    for r in records {
        n += 1;
        hit += r.correct as usize;
    }
    (n > 0).then(|| hit as f64 / n as f64)
}
