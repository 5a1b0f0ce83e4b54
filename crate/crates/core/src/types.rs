//! Domain records shared by every stage, the question taxonomy enumeration,
//! and dataset-level corpus splitting.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of whitespace-separated tokens.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub topics: Vec<String>,
    #[serde(default)]
    pub linked_paper_ids: Vec<String>,
}

impl DatasetRecord {
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::InvalidRecord("dataset id is empty".into()));
        }
        if self.title.trim().is_empty() {
            return Err(Error::InvalidRecord(format!(
                "dataset `{}` has an empty title",
                self.id
            )));
        }
        let mut seen = HashSet::new();
        for pid in &self.linked_paper_ids {
            if !seen.insert(pid.as_str()) {
                return Err(Error::InvalidRecord(format!(
                    "dataset `{}` links paper `{pid}` twice",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Title and description, the metadata block every prompt conditions on.
    pub fn has_metadata(&self) -> bool {
        !self.title.trim().is_empty() || !self.description.trim().is_empty()
    }
}

/// Check that ids are unique across a corpus and every record is valid.
pub fn validate_datasets(records: &[DatasetRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert(r.id.as_str()) {
            return Err(Error::InvalidRecord(format!("duplicate dataset id `{}`", r.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SectionLabel {
    AbstractIntro,
    RelatedWork,
    Method,
    Experiment,
    Conclusion,
    None,
}

impl SectionLabel {
    pub const ALL: [SectionLabel; 6] = [
        SectionLabel::AbstractIntro,
        SectionLabel::RelatedWork,
        SectionLabel::Method,
        SectionLabel::Experiment,
        SectionLabel::Conclusion,
        SectionLabel::None,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub section_label: SectionLabel,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub id: String,
    pub title: String,
    pub segments: Vec<Segment>,
}

impl PaperRecord {
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::InvalidRecord("paper id is empty".into()));
        }
        if let Some(i) = self.segments.iter().position(|s| s.text.trim().is_empty()) {
            return Err(Error::InvalidRecord(format!(
                "paper `{}` segment {i} has empty text",
                self.id
            )));
        }
        Ok(())
    }

    /// Segment texts joined by blank lines.
    pub fn full_text(&self) -> String {
        self.segments
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// The six kinds of dataset-related passage extracted from papers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Aspect {
    Background,
    ResearchObjective,
    Methods,
    Challenges,
    Dataset,
    Findings,
}

impl Aspect {
    pub const ALL: [Aspect; 6] = [
        Aspect::Background,
        Aspect::ResearchObjective,
        Aspect::Methods,
        Aspect::Challenges,
        Aspect::Dataset,
        Aspect::Findings,
    ];

    /// Heading used in prompts and extraction responses.
    pub fn heading(self) -> &'static str {
        match self {
            Aspect::Background => "Background",
            Aspect::ResearchObjective => "Research Objective",
            Aspect::Methods => "Methods",
            Aspect::Challenges => "Challenges",
            Aspect::Dataset => "Dataset",
            Aspect::Findings => "Findings",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.heading())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectUnit {
    pub dataset_id: String,
    pub paper_id: String,
    pub aspect: Aspect,
    pub text: String,
    pub word_count: usize,
}

impl AspectUnit {
    pub fn new(
        dataset_id: impl Into<String>,
        paper_id: impl Into<String>,
        aspect: Aspect,
        text: impl Into<String>,
    ) -> Self {
        let text = text.into();
        AspectUnit {
            dataset_id: dataset_id.into(),
            paper_id: paper_id.into(),
            aspect,
            word_count: word_count(&text),
            text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnswerForm {
    Short,
    Long,
}

/// The eighteen question categories of the Graesser taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionType {
    Verification,
    Disjunctive,
    ConceptCompletion,
    FeatureSpecification,
    Quantification,
    Definition,
    Example,
    Comparison,
    Interpretation,
    CausalAntecedent,
    CausalConsequence,
    GoalOrientation,
    InstrumentalProcedural,
    Enablement,
    Expectation,
    Judgmental,
    Assertion,
    RequestDirective,
}

impl QuestionType {
    pub const ALL: [QuestionType; 18] = [
        QuestionType::Verification,
        QuestionType::Disjunctive,
        QuestionType::ConceptCompletion,
        QuestionType::FeatureSpecification,
        QuestionType::Quantification,
        QuestionType::Definition,
        QuestionType::Example,
        QuestionType::Comparison,
        QuestionType::Interpretation,
        QuestionType::CausalAntecedent,
        QuestionType::CausalConsequence,
        QuestionType::GoalOrientation,
        QuestionType::InstrumentalProcedural,
        QuestionType::Enablement,
        QuestionType::Expectation,
        QuestionType::Judgmental,
        QuestionType::Assertion,
        QuestionType::RequestDirective,
    ];

    /// Short-answer types are scored by entailment only; long-answer types
    /// additionally get ROUGE-L.
    pub fn answer_form(self) -> AnswerForm {
        use QuestionType::*;
        match self {
            Verification | Disjunctive | ConceptCompletion | FeatureSpecification | Quantification => AnswerForm::Short,
            _ => AnswerForm::Long,
        }
    }

    pub fn display_name(self) -> &'static str {
        use QuestionType::*;
        match self {
            Verification => "Verification",
            Disjunctive => "Disjunctive",
            ConceptCompletion => "Concept Completion",
            FeatureSpecification => "Feature Specification",
            Quantification => "Quantification",
            Definition => "Definition",
            Example => "Example",
            Comparison => "Comparison",
            Interpretation => "Interpretation",
            CausalAntecedent => "Causal Antecedent",
            CausalConsequence => "Causal Consequence",
            GoalOrientation => "Goal Orientation",
            InstrumentalProcedural => "Instrumental or Procedural",
            Enablement => "Enablement",
            Expectation => "Expectation",
            Judgmental => "Judgmental",
            Assertion => "Assertion",
            RequestDirective => "Request/Directive",
        }
    }

    /// Lowercase alphanumeric key, used for ids and fuzzy name matching.
    pub fn slug(self) -> String {
        normalize_name(self.display_name())
    }

    /// Match a free-form type name: case, spacing and punctuation are ignored.
    pub fn from_name(name: &str) -> Option<QuestionType> {
        let key = normalize_name(name);
        if key.is_empty() {
            return None;
        }
        QuestionType::ALL.into_iter().find(|t| {
            t.slug() == key || format!("{t:?}").to_ascii_lowercase() == key || alias(*t) == Some(key.as_str())
        })
    }
}

fn alias(t: QuestionType) -> Option<&'static str> {
    match t {
        QuestionType::InstrumentalProcedural => Some("instrumentalprocedural"),
        QuestionType::RequestDirective => Some("requestordirective"),
        _ => None,
    }
}

pub(crate) fn normalize_name(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(|c| c.to_lowercase())
        .collect()
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for QuestionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QuestionType::from_name(s).ok_or_else(|| Error::InvalidArgument(format!("unknown question type `{s}`")))
    }
}

pub fn answer_form(qtype: QuestionType) -> AnswerForm {
    qtype.answer_form()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    WithPaper,
    MetadataOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Accept,
    Reject,
}

/// Outcome of the belief-shift filter for one (question, context, answer).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub delta: f64,
    pub decision: Decision,
    pub conf_with: f64,
    pub conf_without: f64,
}

impl FilterVerdict {
    /// Accept exactly when adding the context raised the generator's
    /// confidence; a zero shift rejects.
    pub fn from_confidences(conf_with: f64, conf_without: f64) -> Self {
        let delta = conf_with - conf_without;
        FilterVerdict {
            delta,
            decision: if delta > 0.0 {
                Decision::Accept
            } else {
                Decision::Reject
            },
            conf_with,
            conf_without,
        }
    }

    pub fn accepted(&self) -> bool {
        self.decision == Decision::Accept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: String,
    pub dataset_id: String,
    pub qtype: QuestionType,
    pub question: String,
    pub answer: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<FilterVerdict>,
}

impl QAPair {
    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() || self.answer.trim().is_empty() {
            return Err(Error::InvalidRecord(format!(
                "QA pair `{}` has an empty question or answer",
                self.id
            )));
        }
        Ok(())
    }
}

/// Revised Bloom cognitive tiers, ordered from Remembering to Creating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CognitiveLevel {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
}

impl CognitiveLevel {
    pub const ALL: [CognitiveLevel; 6] = [
        CognitiveLevel::C1,
        CognitiveLevel::C2,
        CognitiveLevel::C3,
        CognitiveLevel::C4,
        CognitiveLevel::C5,
        CognitiveLevel::C6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CognitiveLevel::C1 => "Remembering",
            CognitiveLevel::C2 => "Understanding",
            CognitiveLevel::C3 => "Applying",
            CognitiveLevel::C4 => "Analyzing",
            CognitiveLevel::C5 => "Evaluating",
            CognitiveLevel::C6 => "Creating",
        }
    }

    pub fn from_number(n: u32) -> Option<CognitiveLevel> {
        CognitiveLevel::ALL.get(n.checked_sub(1)? as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CognitiveLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}({})", self.name())
    }
}

/// Train / validation / test dataset ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Sizes for `n` items under integer percentages, by largest remainder.
/// Ties in the fractional part go to the earlier share.
pub fn split_sizes(n: usize, ratios: [u32; 3]) -> Result<[usize; 3]> {
    let total: u32 = ratios.iter().sum();
    if total != 100 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must sum to 100, got {total}"
        )));
    }
    let mut sizes = [0usize; 3];
    let mut remainders = [(0u64, 0usize); 3];
    for (i, &r) in ratios.iter().enumerate() {
        let scaled = n as u64 * r as u64;
        sizes[i] = (scaled / 100) as usize;
        remainders[i] = (scaled % 100, i);
    }
    let mut left = n - sizes.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Partition datasets into train/val/test at dataset level.
///
/// The result depends only on the set of ids, the ratios and the seed: ids
/// are sorted before a seeded shuffle, so input order does not matter.
pub fn split_corpus(records: &[DatasetRecord], ratios: [u32; 3], seed: u64) -> Result<CorpusSplit> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty corpus".into()));
    }
    let sizes = split_sizes(records.len(), ratios)?;
    let mut ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    ids.sort();
    let before = ids.len();
    ids.dedup();
    if ids.len() != before {
        return Err(Error::InvalidRecord("duplicate dataset ids in split input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test = ids.split_off(sizes[0] + sizes[1]);
    let val = ids.split_off(sizes[0]);
    Ok(CorpusSplit { train: ids, val, test })
}
