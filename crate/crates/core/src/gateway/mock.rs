//! Deterministic scripted backend.
//!
//! A script is an ordered list of rules mapping (stage, substring matcher) to
//! either a canned response or a built-in handler that derives the response
//! from the request's template variables. The first matching rule wins.
//! Continuation scoring uses scripted logprobs when a score rule matches and
//! otherwise a lexical-overlap model: a continuation token present in the
//! context gets log 0.9, any other token log 0.3.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, PromptRequest, ScoredContinuation};
use crate::error::{Error, Result};
use crate::retrieval::tokenize;
use crate::types::{Aspect, CognitiveLevel, QuestionType};
use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockHandler {
    /// `USED: Yes` when most long dataset-title words occur in the paper.
    RelevanceOverlap,
    /// Section label from cue phrases.
    SegmentKeywords,
    /// One candidate per aspect from sentence cue phrases.
    ExtractKeywords,
    /// Keep up to the first three candidates of every aspect.
    VerifyKeepFirst,
    /// Eight type names picked by hashing the dataset title.
    SelectTypesHashed,
    /// QA pairs built from context sentences; the third pair of each batch
    /// carries an answer with no support in the context.
    GenerateFromContext,
    /// Fraction of hypothesis terms found in the premise.
    EntailOverlap,
    /// Leading words of the passage sharing the most terms with the question.
    ExtractiveAnswer,
    /// Cognitive level from question cue phrases.
    CognitiveKeywords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default)]
    pub stage: Option<String>,
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub response: Option<String>,
    #[serde(default)]
    pub handler: Option<MockHandler>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRule {
    #[serde(default)]
    pub context_contains: Option<String>,
    #[serde(default)]
    pub continuation_contains: Option<String>,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub scores: Vec<ScoreRule>,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
}

fn default_dim() -> usize {
    64
}

impl Default for MockScript {
    fn default() -> Self {
        MockScript {
            rules: Vec::new(),
            scores: Vec::new(),
            embedding_dim: default_dim(),
        }
    }
}

impl MockScript {
    pub fn respond(mut self, stage: &str, contains: Option<&str>, response: &str) -> Self {
        self.rules.push(MockRule {
            stage: Some(stage.to_string()),
            contains: contains.map(str::to_string),
            response: Some(response.to_string()),
            handler: None,
        });
        self
    }

    pub fn handle(mut self, stage: &str, handler: MockHandler) -> Self {
        self.rules.push(MockRule {
            stage: Some(stage.to_string()),
            contains: None,
            response: None,
            handler: Some(handler),
        });
        self
    }

    pub fn score(
        mut self,
        context_contains: Option<&str>,
        continuation_contains: Option<&str>,
        logprobs: &[f64],
    ) -> Self {
        self.scores.push(ScoreRule {
            context_contains: context_contains.map(str::to_string),
            continuation_contains: continuation_contains.map(str::to_string),
            logprobs: logprobs.to_vec(),
        });
        self
    }
}

pub struct MockBackend {
    script: MockScript,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend { script }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let script: MockScript =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("mock script {}: {e}", path.display())))?;
        Ok(MockBackend::new(script))
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &PromptRequest) -> Result<String> {
        let text = request.joined_text();
        let rule = self.script.rules.iter().find(|r| {
            r.stage.as_deref().is_none_or(|s| s == request.stage)
                && r.contains.as_deref().is_none_or(|c| text.contains(c))
        });
        let Some(rule) = rule else {
            return Err(Error::Unscripted {
                stage: request.stage.clone(),
            });
        };
        match (&rule.response, rule.handler) {
            (Some(r), _) => Ok(r.clone()),
            (None, Some(h)) => run_handler(h, request),
            (None, None) => Err(Error::Config("mock rule has neither response nor handler".into())),
        }
    }

    fn score(&self, _model: &str, context: &str, continuation: &str) -> Result<ScoredContinuation> {
        let tokens: Vec<String> = continuation.split_whitespace().map(str::to_string).collect();
        let scripted = self.script.scores.iter().find(|r| {
            r.context_contains.as_deref().is_none_or(|c| context.contains(c))
                && r.continuation_contains
                    .as_deref()
                    .is_none_or(|c| continuation.contains(c))
        });
        if let Some(rule) = scripted {
            if rule.logprobs.len() != tokens.len() {
                return Err(Error::InvalidArgument(format!(
                    "scripted {} logprobs for a {}-token continuation",
                    rule.logprobs.len(),
                    tokens.len()
                )));
            }
            return ScoredContinuation::new(tokens, rule.logprobs.clone());
        }
        let known: HashSet<String> = tokenize(context).into_iter().collect();
        let logprobs = tokens
            .iter()
            .map(|t| {
                let terms = tokenize(t);
                if terms.iter().all(|term| known.contains(term)) {
                    0.9f64.ln()
                } else {
                    0.3f64.ln()
                }
            })
            .collect();
        ScoredContinuation::new(tokens, logprobs)
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| hashed_embedding(t, self.script.embedding_dim))
            .collect())
    }

    fn name(&self) -> &str {
        "mock"
    }
}

fn hash64(s: &str) -> u64 {
    u64::from_str_radix(&sha256_hex(s.as_bytes())[..16], 16).expect("hex digest")
}

/// Signed feature hashing of terms, L2-normalized.
fn hashed_embedding(text: &str, dim: usize) -> Vec<f64> {
    let dim = dim.max(1);
    let mut v = vec![0.0; dim];
    for term in tokenize(text) {
        let h = hash64(&term);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn var<'a>(req: &'a PromptRequest, name: &str) -> Result<&'a str> {
    req.vars.get(name).map(String::as_str).ok_or_else(|| {
        Error::Config(format!(
            "mock handler for stage `{}` needs template variable `{name}`",
            req.stage
        ))
    })
}

fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for word in text.split_whitespace() {
        if !cur.is_empty() {
            cur.push(' ');
        }
        cur.push_str(word);
        if word.ends_with('.') || word.ends_with('?') || word.ends_with('!') {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn contains_any(hay: &str, needles: &[&str]) -> bool {
    needles.iter().any(|n| hay.contains(n))
}

fn run_handler(handler: MockHandler, req: &PromptRequest) -> Result<String> {
    match handler {
        MockHandler::RelevanceOverlap => {
            let title_terms: Vec<String> = tokenize(var(req, "dataset_title")?)
                .into_iter()
                .filter(|t| t.len() >= 4)
                .collect();
            let paper: HashSet<String> = tokenize(var(req, "paper_text")?).into_iter().collect();
            let hits = title_terms.iter().filter(|t| paper.contains(*t)).count();
            let used = !title_terms.is_empty() && hits * 5 >= title_terms.len() * 3;
            Ok(format!(
                "USED: {}\nEXPLANATION: the paper mentions {hits} of {} distinctive title terms.",
                if used { "Yes" } else { "No" },
                title_terms.len()
            ))
        }
        MockHandler::SegmentKeywords => {
            let t = var(req, "section_text")?.to_lowercase();
            let label = if contains_any(&t, &["in conclusion", "we conclude", "in summary"]) {
                "conclusion"
            } else if contains_any(&t, &["previous studies", "prior work", "related work"]) {
                "related works"
            } else if contains_any(&t, &["in this paper", "this study aims", "we propose"]) {
                "abstract&introduction"
            } else if contains_any(
                &t,
                &["we collected", "we applied", "we used", "we derived", "our method"],
            ) {
                "method"
            } else if contains_any(&t, &["results show", "experiment", "we found", "accuracy"]) {
                "experiment"
            } else {
                "none"
            };
            Ok(label.to_string())
        }
        MockHandler::ExtractKeywords => {
            let mut buckets: Vec<Vec<String>> = vec![Vec::new(); 6];
            for s in sentences(var(req, "section_text")?) {
                let l = s.to_lowercase();
                let aspect = if contains_any(&l, &["we aim", "objective", "goal", "we propose", "this study aims"]) {
                    Aspect::ResearchObjective
                } else if contains_any(
                    &l,
                    &[
                        "we collected",
                        "we applied",
                        "we used",
                        "we derived",
                        "we combined",
                        "we measured",
                    ],
                ) {
                    Aspect::Methods
                } else if contains_any(&l, &["challenge", "difficult", "limitation", "uncertain"]) {
                    Aspect::Challenges
                } else if contains_any(&l, &["we found", "results show", "revealed", "indicate"]) {
                    Aspect::Findings
                } else if contains_any(&l, &["dataset", "records", "observations"]) {
                    Aspect::Dataset
                } else {
                    Aspect::Background
                };
                buckets[aspect.index()].push(s);
            }
            Ok(Aspect::ALL
                .iter()
                .map(|a| {
                    let b = &buckets[a.index()];
                    let value = if b.is_empty() { "None".to_string() } else { b.join(" ") };
                    format!("{}: {value}", a.heading())
                })
                .collect::<Vec<_>>()
                .join("\n"))
        }
        MockHandler::VerifyKeepFirst => {
            let mut lines = vec!["KEEP-INDICES:".to_string()];
            for a in Aspect::ALL {
                let n: usize = var(req, &count_var(a))?.parse().unwrap_or(0);
                let keep: Vec<String> = (1..=n.min(3)).map(|i| i.to_string()).collect();
                lines.push(format!("{}: [{}]", a.heading(), keep.join(", ")));
            }
            lines.push("REASON: kept the leading items of each section.".into());
            Ok(lines.join("\n"))
        }
        MockHandler::SelectTypesHashed => {
            let seed = hash64(var(req, "dataset_title")?);
            let mut types: Vec<QuestionType> = QuestionType::ALL.to_vec();
            types.sort_by_key(|t| hash64(&format!("{seed}:{}", t.slug())));
            Ok(types[..8]
                .iter()
                .map(|t| t.display_name())
                .collect::<Vec<_>>()
                .join("\n"))
        }
        MockHandler::GenerateFromContext => generate_from_context(req),
        MockHandler::EntailOverlap => {
            let premise: HashSet<String> = tokenize(var(req, "premise")?).into_iter().collect();
            let hyp = tokenize(var(req, "hypothesis")?);
            let score = if hyp.is_empty() {
                0.0
            } else {
                hyp.iter().filter(|t| premise.contains(*t)).count() as f64 / hyp.len() as f64
            };
            Ok(format!("{score:.4}"))
        }
        MockHandler::ExtractiveAnswer => {
            let question: HashSet<String> = tokenize(var(req, "question")?).into_iter().collect();
            let passages: Vec<String> = serde_json::from_str(var(req, "passages_json")?)?;
            let best = passages
                .iter()
                .enumerate()
                .max_by_key(|(i, p)| {
                    let overlap = tokenize(p).iter().filter(|t| question.contains(*t)).count();
                    (overlap, std::cmp::Reverse(*i))
                })
                .map(|(_, p)| p);
            Ok(match best {
                Some(p) => p.split_whitespace().take(30).collect::<Vec<_>>().join(" "),
                None => "No supporting material is available to answer this question.".into(),
            })
        }
        MockHandler::CognitiveKeywords => {
            let q = var(req, "question")?.to_lowercase();
            let level = if contains_any(&q, &["please optimize", "design", "propose", "develop a"]) {
                CognitiveLevel::C6
            } else if contains_any(&q, &["what do you think", "evaluate", "assess", "judge"]) {
                CognitiveLevel::C5
            } else if contains_any(&q, &["similarities", "differences", "compare", "inferred"]) {
                CognitiveLevel::C4
            } else if contains_any(&q, &["process", "how can", "how to", "procedure"]) {
                CognitiveLevel::C3
            } else if contains_any(&q, &["why", "explain", "what happens", "example", "understand"]) {
                CognitiveLevel::C2
            } else {
                CognitiveLevel::C1
            };
            Ok(level.to_string())
        }
    }
}

/// Template variable carrying the number of candidates for an aspect.
pub(crate) fn count_var(a: Aspect) -> String {
    format!("count_{}", crate::types::normalize_name(a.heading()))
}

fn opener(t: QuestionType) -> &'static str {
    use QuestionType::*;
    match t {
        Verification => "Can a dataset confirm that",
        Disjunctive => "Which option best describes",
        ConceptCompletion => "Where is it recorded that",
        FeatureSpecification => "What are the characteristics of",
        Quantification => "How many measurements support",
        Definition => "What is meant by",
        Example => "Can you provide an example of",
        Comparison => "What are the similarities and differences in",
        Interpretation => "What can be inferred from",
        CausalAntecedent => "Why is it that",
        CausalConsequence => "What happens after",
        GoalOrientation => "Why would researchers study",
        InstrumentalProcedural => "What is the detailed process behind",
        Enablement => "What enabled",
        Expectation => "Why is it rarely reported that",
        Judgmental => "What do you think of",
        Assertion => "I don't understand why",
        RequestDirective => "Please optimize the approach to",
    }
}

fn generate_from_context(req: &PromptRequest) -> Result<String> {
    let context = var(req, "context")?;
    let qtype = QuestionType::from_name(var(req, "type_name")?)
        .ok_or_else(|| Error::Config("mock generation got an unknown type name".into()))?;
    let n: usize = var(req, "n")?.parse().unwrap_or(3);
    let mut pool = Vec::new();
    for line in context.lines() {
        let line = line.trim();
        let content = line.strip_prefix("- ").or_else(|| line.strip_prefix("Description: "));
        if let Some(c) = content {
            pool.extend(sentences(c));
        }
    }
    if pool.is_empty() {
        if let Some(title) = context.lines().find_map(|l| l.trim().strip_prefix("Title: ")) {
            pool.push(title.to_string());
        }
    }
    if pool.is_empty() {
        return Ok("I could not find anything to ask about.".into());
    }
    let start = (hash64(&format!("{}:{context}", qtype.slug())) % pool.len() as u64) as usize;
    let mut items = Vec::new();
    for i in 0..n {
        let s = &pool[(start + i) % pool.len()];
        let phrase: Vec<&str> = s.split_whitespace().take(8).collect();
        let phrase = phrase
            .join(" ")
            .trim_end_matches(['.', ',', ';', ':', '?', '!'])
            .to_lowercase();
        let question = format!("{} {phrase}?", opener(qtype));
        let answer = if i % 3 == 2 {
            "Unknown; unverifiable speculation.".to_string()
        } else if qtype.answer_form() == crate::types::AnswerForm::Short {
            s.split_whitespace().take(12).collect::<Vec<_>>().join(" ")
        } else {
            s.clone()
        };
        items.push(json!({"question": question, "answer": answer}));
    }
    Ok(format!("```json\n{}\n```", serde_json::to_string_pretty(&items)?))
}
