//! Corpus curation: dataset–paper relevance, paper segmentation, and
//! two-stage aspect extraction (draft per section, then verification of the
//! merged drafts against the dataset metadata).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Gateway, PromptRequest};
use crate::template::Template;
use crate::types::{normalize_name, Aspect, AspectUnit, DatasetRecord, PaperRecord, SectionLabel, Segment};

pub const DEFAULT_RELEVANCE: &str = include_str!("../templates/relevance.txt");
pub const DEFAULT_SEGMENT: &str = include_str!("../templates/segment.txt");
pub const DEFAULT_EXTRACT: &str = include_str!("../templates/extract.txt");
pub const DEFAULT_VERIFY: &str = include_str!("../templates/verify.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceVerdict {
    pub used: bool,
    pub explanation: String,
}

/// One row of `matches.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub dataset_id: String,
    pub paper_id: String,
    pub used: bool,
    pub explanation: String,
    /// Whether the paper text was cut to the configured window.
    pub truncated: bool,
}

/// A paper before segmentation: plain text with blank-line paragraphs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPaper {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// Candidate passages per aspect, before verification.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AspectDraft {
    lists: [Vec<String>; 6],
}

impl AspectDraft {
    pub fn get(&self, aspect: Aspect) -> &[String] {
        &self.lists[aspect.index()]
    }

    pub fn push(&mut self, aspect: Aspect, text: impl Into<String>) {
        let text = text.into();
        if !text.trim().is_empty() {
            self.lists[aspect.index()].push(text);
        }
    }

    /// Append every list of `other` after the corresponding list here.
    pub fn extend(&mut self, other: AspectDraft) {
        for (mine, theirs) in self.lists.iter_mut().zip(other.lists) {
            mine.extend(theirs);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lists.iter().all(Vec::is_empty)
    }

    pub fn total(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    /// Numbered listing used in the verification prompt.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for a in Aspect::ALL {
            out.push_str(a.heading());
            out.push_str(":\n");
            let items = self.get(a);
            if items.is_empty() {
                out.push_str("(no items)\n");
            }
            for (i, t) in items.iter().enumerate() {
                out.push_str(&format!("{}. \"{}\"\n", i + 1, t));
            }
            out.push('\n');
        }
        out.trim_end().to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifiedAspects {
    pub units: Vec<AspectUnit>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CurationPrompts {
    pub relevance: Template,
    pub segment: Template,
    pub extract: Template,
    pub verify: Template,
}

impl CurationPrompts {
    pub fn load(dir: Option<&Path>) -> Result<Self> {
        Ok(CurationPrompts {
            relevance: Template::load_or(dir, "relevance.txt", DEFAULT_RELEVANCE)?,
            segment: Template::load_or(dir, "segment.txt", DEFAULT_SEGMENT)?,
            extract: Template::load_or(dir, "extract.txt", DEFAULT_EXTRACT)?,
            verify: Template::load_or(dir, "verify.txt", DEFAULT_VERIFY)?,
        })
    }
}

impl Default for CurationPrompts {
    fn default() -> Self {
        CurationPrompts::load(None).expect("bundled templates parse")
    }
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Strip decoration (bullets, bold, heading hashes) and return what follows
/// `marker:` when the line starts with the marker, ignoring case.
fn marker_value<'a>(line: &'a str, marker: &str) -> Option<&'a str> {
    let l = line.trim().trim_start_matches(['*', '#', '-', '>', ' ', '`']);
    let head = l.get(..marker.len())?;
    if !head.eq_ignore_ascii_case(marker) {
        return None;
    }
    let rest = l[marker.len()..].trim_start_matches(['*', ' ', '\t']);
    let rest = rest.strip_prefix(':')?;
    Some(rest.trim_start_matches(['*', ' ', '\t']).trim())
}

/// Parse a relevance response with `USED:` and `EXPLANATION:` marker lines.
pub fn parse_relevance(raw: &str) -> Result<RelevanceVerdict> {
    let lines: Vec<&str> = raw.lines().collect();
    let mut used = None;
    let mut explanation = None;
    for (i, line) in lines.iter().enumerate() {
        if used.is_none() {
            if let Some(v) = marker_value(line, "used") {
                let v = v.trim_matches(|c: char| !c.is_alphanumeric()).to_ascii_lowercase();
                used = Some(if v.starts_with("yes") || v == "true" {
                    true
                } else if v.starts_with("no") || v == "false" {
                    false
                } else {
                    return Err(Error::parse("relevance", format!("unrecognized USED value `{v}`"), raw));
                });
                continue;
            }
        }
        if explanation.is_none() {
            if let Some(v) = marker_value(line, "explanation") {
                let mut text = vec![v.to_string()];
                text.extend(
                    lines[i + 1..]
                        .iter()
                        .take_while(|l| marker_value(l, "used").is_none())
                        .filter(|l| !is_fence(l))
                        .map(|l| l.trim().to_string()),
                );
                let text = text.join("\n").trim().trim_matches(['[', ']']).trim().to_string();
                explanation = Some(text);
            }
        }
    }
    let used = used.ok_or_else(|| Error::parse("relevance", "no `USED:` line", raw))?;
    let explanation = explanation.unwrap_or_default();
    if used && explanation.is_empty() {
        return Err(Error::parse(
            "relevance",
            "positive verdict without an explanation",
            raw,
        ));
    }
    Ok(RelevanceVerdict { used, explanation })
}

/// Map a classifier response onto a section label; anything unrecognized
/// is `None`.
pub fn parse_section_label(raw: &str) -> SectionLabel {
    let first = raw.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let key = normalize_name(first);
    let key = key.trim_start_matches(|c: char| c.is_ascii_digit());
    match key {
        "abstractintroduction" | "abstractandintroduction" | "abstract" | "introduction" => SectionLabel::AbstractIntro,
        "relatedworks" | "relatedwork" | "background" | "literaturereview" => SectionLabel::RelatedWork,
        "method" | "methods" | "methodology" | "approach" | "proposedmethod" => SectionLabel::Method,
        "experiment" | "experiments" | "results" | "evaluation" | "experimentalresults" | "experimentalanalysis" => {
            SectionLabel::Experiment
        }
        "conclusion" | "conclusions" => SectionLabel::Conclusion,
        _ => SectionLabel::None,
    }
}

fn aspect_from_header(header: &str) -> Option<Aspect> {
    match normalize_name(header).as_str() {
        "background" => Some(Aspect::Background),
        "researchobjective" | "researchobjectives" | "objective" | "objectives" => Some(Aspect::ResearchObjective),
        "method" | "methods" => Some(Aspect::Methods),
        "challenge" | "challenges" => Some(Aspect::Challenges),
        "dataset" | "datasets" | "datasetusage" => Some(Aspect::Dataset),
        "finding" | "findings" => Some(Aspect::Findings),
        _ => None,
    }
}

/// Split `line` into (aspect, value) when it starts with an aspect header.
fn header_line(line: &str) -> Option<(Aspect, &str)> {
    let l = line
        .trim()
        .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | '*' | '#' | '-' | ' ' | ')'));
    let colon = l.find(':')?;
    let aspect = aspect_from_header(&l[..colon])?;
    Some((aspect, l[colon + 1..].trim_start_matches(['*', ' ', '\t']).trim()))
}

fn is_none_value(v: &str) -> bool {
    let v = v
        .trim()
        .trim_matches(|c: char| matches!(c, '[' | ']' | '"' | '.' | '*' | '(' | ')'));
    v.eq_ignore_ascii_case("none") || v.eq_ignore_ascii_case("n/a")
}

fn bullet_item(line: &str) -> Option<&str> {
    let t = line.trim();
    for p in ["- ", "* ", "• "] {
        if let Some(rest) = t.strip_prefix(p) {
            return Some(rest.trim());
        }
    }
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        if let Some(rest) = t[digits..]
            .strip_prefix(". ")
            .or_else(|| t[digits..].strip_prefix(") "))
        {
            return Some(rest.trim());
        }
    }
    None
}

/// Parse an extraction response made of `Aspect: value` blocks.
pub fn parse_aspect_draft(raw: &str) -> Result<AspectDraft> {
    let mut draft = AspectDraft::default();
    let mut seen_header = false;
    let mut current: Option<(Aspect, bool)> = None; // (aspect, value was None)
    for line in raw.lines() {
        if let Some((aspect, value)) = header_line(line) {
            seen_header = true;
            let none = is_none_value(value);
            if !none && !value.is_empty() {
                draft.lists[aspect.index()].push(value.to_string());
            }
            current = Some((aspect, none));
            continue;
        }
        let Some((aspect, none)) = current else { continue };
        if none || line.trim().is_empty() || is_fence(line) {
            continue;
        }
        let list = &mut draft.lists[aspect.index()];
        match bullet_item(line) {
            Some(item) if !item.is_empty() => list.push(item.to_string()),
            _ => match list.last_mut() {
                Some(last) => {
                    last.push(' ');
                    last.push_str(line.trim());
                }
                None => list.push(line.trim().to_string()),
            },
        }
    }
    if !seen_header {
        return Err(Error::parse("extraction", "no aspect headers found", raw));
    }
    Ok(draft)
}

static INDEX_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").expect("valid regex"));

/// Parse a verification response; returns the 1-based indices listed per
/// aspect (`None` when the aspect's line is absent).
pub fn parse_keep_indices(raw: &str, draft: &AspectDraft) -> Result<[Option<Vec<usize>>; 6]> {
    let lines: Vec<&str> = raw.lines().collect();
    let start = lines
        .iter()
        .position(|l| {
            let t = l.trim().trim_start_matches(['*', '#', ' ']).to_ascii_uppercase();
            t.starts_with("KEEP-INDICES") || t.starts_with("KEEP INDICES") || t.starts_with("KEEP_INDICES")
        })
        .ok_or_else(|| Error::parse("verification", "no `KEEP-INDICES:` marker", raw))?;
    let mut keep: [Option<Vec<usize>>; 6] = Default::default();
    // the marker line itself may carry the first entry
    let first = lines[start].split_once(':').map(|(_, rest)| rest).unwrap_or("");
    let tail = std::iter::once(first).chain(lines[start + 1..].iter().copied());
    for line in tail {
        if marker_value(line, "reason").is_some() {
            break;
        }
        let Some((aspect, value)) = header_line(line) else {
            continue;
        };
        let n = draft.get(aspect).len();
        let mut idx = Vec::new();
        if !is_none_value(value) {
            for m in INDEX_RE.find_iter(value) {
                let i: usize = m
                    .as_str()
                    .parse()
                    .map_err(|_| Error::parse("verification", "index overflow", raw))?;
                if i == 0 || i > n {
                    return Err(Error::parse(
                        "verification",
                        format!("{} index {i} outside 1..={n}", aspect.heading()),
                        raw,
                    ));
                }
                idx.push(i);
            }
        }
        idx.sort_unstable();
        idx.dedup();
        keep[aspect.index()].get_or_insert_with(Vec::new).extend(idx);
    }
    for k in keep.iter_mut().flatten() {
        k.sort_unstable();
        k.dedup();
    }
    Ok(keep)
}

/// Turn kept indices into aspect units. An aspect with candidates but no
/// kept item retains its first candidate.
pub fn apply_keep(
    draft: &AspectDraft,
    keep: &[Option<Vec<usize>>; 6],
    dataset_id: &str,
    paper_id: &str,
) -> VerifiedAspects {
    let mut units = Vec::new();
    let mut warnings = Vec::new();
    for a in Aspect::ALL {
        let items = draft.get(a);
        if items.is_empty() {
            continue;
        }
        let kept = keep[a.index()].as_deref().unwrap_or(&[]);
        if kept.is_empty() {
            warnings.push(format!(
                "{dataset_id}/{paper_id}: verifier kept no {} item; retaining the first",
                a.heading()
            ));
            units.push(AspectUnit::new(dataset_id, paper_id, a, items[0].clone()));
            continue;
        }
        for &i in kept {
            units.push(AspectUnit::new(dataset_id, paper_id, a, items[i - 1].clone()));
        }
    }
    VerifiedAspects { units, warnings }
}

/// Paragraph chunks separated by blank lines.
pub fn split_paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(cur.join("\n"));
                cur.clear();
            }
        } else {
            cur.push(line.trim_end());
        }
    }
    if !cur.is_empty() {
        out.push(cur.join("\n"));
    }
    out
}

fn truncate_chars(text: &str, max: usize) -> (&str, bool) {
    match text.char_indices().nth(max) {
        Some((byte, _)) => (&text[..byte], true),
        None => (text, false),
    }
}

/// Result of curating one (dataset, paper) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCuration {
    pub matched: MatchRecord,
    pub units: Vec<AspectUnit>,
    pub warnings: Vec<String>,
}

pub struct Curator<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a CurationPrompts,
    pub model: &'a str,
    /// Characters of paper text shown to the relevance analyzer.
    pub relevance_max_chars: usize,
}

impl<'a> Curator<'a> {
    fn dataset_vars(dataset: &DatasetRecord) -> BTreeMap<String, String> {
        let mut vars = BTreeMap::new();
        vars.insert("dataset_title".into(), dataset.title.clone());
        vars.insert("dataset_description".into(), dataset.description.clone());
        vars
    }

    fn ask(&self, stage: &str, template: &Template, vars: BTreeMap<String, String>) -> Result<String> {
        let req = PromptRequest::new(stage, self.model, template.render(&vars)).with_vars(vars);
        self.gateway.complete(&req)
    }

    pub fn assess_relevance(&self, dataset: &DatasetRecord, paper: &PaperRecord) -> Result<(RelevanceVerdict, bool)> {
        let full = paper.full_text();
        let (text, truncated) = truncate_chars(&full, self.relevance_max_chars);
        let mut vars = Self::dataset_vars(dataset);
        vars.insert("paper_text".into(), text.to_string());
        let raw = self.ask("relevance", &self.prompts.relevance, vars)?;
        Ok((parse_relevance(&raw)?, truncated))
    }

    pub fn classify_segment(&self, text: &str) -> Result<SectionLabel> {
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument("cannot classify an empty segment".into()));
        }
        let mut vars = BTreeMap::new();
        vars.insert("section_text".into(), text.to_string());
        let raw = self.ask("segment", &self.prompts.segment, vars)?;
        Ok(parse_section_label(&raw))
    }

    /// Classify blank-line chunks and merge consecutive chunks that share a
    /// label into one segment.
    pub fn segment_paper(&self, raw: &RawPaper) -> Result<PaperRecord> {
        let mut segments: Vec<Segment> = Vec::new();
        for chunk in split_paragraphs(&raw.text) {
            let label = self.classify_segment(&chunk)?;
            match segments.last_mut() {
                Some(last) if last.section_label == label => {
                    last.text.push_str("\n\n");
                    last.text.push_str(&chunk);
                }
                _ => segments.push(Segment {
                    section_label: label,
                    text: chunk,
                }),
            }
        }
        Ok(PaperRecord {
            id: raw.id.clone(),
            title: raw.title.clone(),
            segments,
        })
    }

    pub fn extract_aspects(&self, dataset: &DatasetRecord, section_text: &str) -> Result<AspectDraft> {
        if section_text.trim().is_empty() {
            return Err(Error::InvalidArgument("section text is empty".into()));
        }
        let mut vars = Self::dataset_vars(dataset);
        vars.insert("section_text".into(), section_text.to_string());
        let raw = self.ask("extract", &self.prompts.extract, vars)?;
        parse_aspect_draft(&raw)
    }

    pub fn verify_aspects(
        &self,
        draft: &AspectDraft,
        dataset: &DatasetRecord,
        paper_id: &str,
    ) -> Result<VerifiedAspects> {
        if draft.is_empty() {
            return Err(Error::InvalidArgument("draft has no candidates to verify".into()));
        }
        let mut vars = Self::dataset_vars(dataset);
        vars.insert("candidates".into(), draft.render());
        for a in Aspect::ALL {
            vars.insert(crate::gateway::count_var(a), draft.get(a).len().to_string());
        }
        let raw = self.ask("verify", &self.prompts.verify, vars)?;
        let keep = parse_keep_indices(&raw, draft)?;
        Ok(apply_keep(draft, &keep, &dataset.id, paper_id))
    }

    /// Relevance, then (only for relevant pairs) per-section extraction and
    /// verification of the merged draft.
    pub fn curate_pair(&self, dataset: &DatasetRecord, paper: &PaperRecord) -> Result<PairCuration> {
        let (verdict, truncated) = self.assess_relevance(dataset, paper)?;
        let matched = MatchRecord {
            dataset_id: dataset.id.clone(),
            paper_id: paper.id.clone(),
            used: verdict.used,
            explanation: verdict.explanation,
            truncated,
        };
        if !matched.used {
            return Ok(PairCuration {
                matched,
                units: Vec::new(),
                warnings: Vec::new(),
            });
        }
        let (units, warnings) = self.parse_matched(dataset, paper)?;
        Ok(PairCuration {
            matched,
            units,
            warnings,
        })
    }

    /// Two-stage extraction for a pair already judged relevant.
    pub fn parse_matched(
        &self,
        dataset: &DatasetRecord,
        paper: &PaperRecord,
    ) -> Result<(Vec<AspectUnit>, Vec<String>)> {
        let mut draft = AspectDraft::default();
        for seg in paper.segments.iter().filter(|s| s.section_label != SectionLabel::None) {
            draft.extend(self.extract_aspects(dataset, &seg.text)?);
        }
        if draft.is_empty() {
            return Ok((
                Vec::new(),
                vec![format!(
                    "{}/{}: extraction found no aspect content",
                    dataset.id, paper.id
                )],
            ));
        }
        let v = self.verify_aspects(&draft, dataset, &paper.id)?;
        Ok((v.units, v.warnings))
    }
}
