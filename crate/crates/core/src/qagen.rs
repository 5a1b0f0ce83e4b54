//! Taxonomy-guided QA generation.
//!
//! Datasets with extracted paper aspects get three pairs for each of the
//! eighteen question types; metadata-only datasets get one pair for each of
//! eight model-selected types.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gateway::{Gateway, PromptRequest};
use crate::template::Template;
use crate::types::{Aspect, AspectUnit, DatasetRecord, Provenance, QAPair, QuestionType};

pub const DEFAULT_TAXONOMY: &str = include_str!("../data/taxonomy.jsonl");
pub const DEFAULT_SELECT: &str = include_str!("../templates/select_types.txt");
pub const DEFAULT_GENERATE: &str = include_str!("../templates/generate.txt");

pub const PAIRS_PER_TYPE_WITH_PAPER: u32 = 3;
pub const METADATA_ONLY_TYPES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub qtype: QuestionType,
    pub definition: String,
    pub example: String,
}

#[derive(Deserialize)]
struct TaxonomyLine {
    name: String,
    definition: String,
    example: String,
}

/// The expert-curated definition and example for every question type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    entries: Vec<TaxonomyEntry>,
}

impl Taxonomy {
    /// Parse a registry in JSON Lines form (`name`, `definition`, `example`).
    /// Every type must appear exactly once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut by_type: BTreeMap<QuestionType, TaxonomyEntry> = BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row: TaxonomyLine =
                serde_json::from_str(line).map_err(|e| Error::Config(format!("taxonomy line {}: {e}", i + 1)))?;
            let qtype = QuestionType::from_name(&row.name)
                .ok_or_else(|| Error::Config(format!("taxonomy line {}: unknown type `{}`", i + 1, row.name)))?;
            if row.definition.trim().is_empty() || row.example.trim().is_empty() {
                return Err(Error::Config(format!(
                    "taxonomy entry `{}` needs a definition and an example",
                    row.name
                )));
            }
            let entry = TaxonomyEntry {
                qtype,
                definition: row.definition,
                example: row.example,
            };
            if by_type.insert(qtype, entry).is_some() {
                return Err(Error::Config(format!("taxonomy lists `{qtype}` twice")));
            }
        }
        if let Some(missing) = QuestionType::ALL.iter().find(|t| !by_type.contains_key(t)) {
            return Err(Error::Config(format!("taxonomy is missing `{missing}`")));
        }
        Ok(Taxonomy {
            entries: by_type.into_values().collect(),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Taxonomy::parse(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => Ok(Taxonomy::default()),
        }
    }

    pub fn entries(&self) -> &[TaxonomyEntry] {
        &self.entries
    }

    pub fn get(&self, qtype: QuestionType) -> &TaxonomyEntry {
        // entries are stored in enum order, one per type
        &self.entries[qtype as usize]
    }

    /// Numbered `Name: definition` list for the type-selection prompt.
    pub fn render_definitions(&self) -> String {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{}. {}: {}", i + 1, e.qtype.display_name(), e.definition))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy::parse(DEFAULT_TAXONOMY).expect("bundled taxonomy is complete")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub dataset_id: String,
    pub mode: Provenance,
    pub quotas: BTreeMap<QuestionType, u32>,
}

impl GenerationPlan {
    pub fn with_paper(dataset_id: &str) -> Self {
        GenerationPlan {
            dataset_id: dataset_id.to_string(),
            mode: Provenance::WithPaper,
            quotas: QuestionType::ALL
                .iter()
                .map(|t| (*t, PAIRS_PER_TYPE_WITH_PAPER))
                .collect(),
        }
    }

    pub fn metadata_only(dataset_id: &str, types: &[QuestionType]) -> Result<Self> {
        let distinct: HashSet<_> = types.iter().collect();
        if types.len() != METADATA_ONLY_TYPES || distinct.len() != METADATA_ONLY_TYPES {
            return Err(Error::InvalidArgument(format!(
                "metadata-only plans need exactly {METADATA_ONLY_TYPES} distinct types, got {types:?}"
            )));
        }
        Ok(GenerationPlan {
            dataset_id: dataset_id.to_string(),
            mode: Provenance::MetadataOnly,
            quotas: types.iter().map(|t| (*t, 1)).collect(),
        })
    }

    pub fn total(&self) -> u32 {
        self.quotas.values().sum()
    }
}

/// Parse a list of type names (one per line or comma-separated) into eight
/// distinct types. Unknown names are skipped; extra valid names beyond the
/// eighth are ignored.
pub fn parse_selected_types(raw: &str) -> Result<Vec<QuestionType>> {
    let mut out = Vec::new();
    for piece in raw.split(['\n', ',', ';']) {
        let Some(t) = match_type_name(piece) else { continue };
        if !out.contains(&t) {
            out.push(t);
        }
    }
    if out.len() < METADATA_ONLY_TYPES {
        return Err(Error::parse(
            "type selection",
            format!("only {} valid distinct type names", out.len()),
            raw,
        ));
    }
    out.truncate(METADATA_ONLY_TYPES);
    Ok(out)
}

fn match_type_name(piece: &str) -> Option<QuestionType> {
    let p = piece
        .trim()
        .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*' | '#' | ' '));
    let head = p
        .split([':', '(', '\u{2013}', '\u{2014}'])
        .next()
        .unwrap_or("")
        .split(" - ")
        .next()
        .unwrap_or("");
    if let Some(t) = QuestionType::from_name(head) {
        return Some(t);
    }
    // "Quantification questions" and similar: longest canonical name that
    // prefixes the normalized piece
    let key = crate::types::normalize_name(head);
    QuestionType::ALL
        .into_iter()
        .filter(|t| !key.is_empty() && key.starts_with(&t.slug()))
        .max_by_key(|t| t.slug().len())
}

/// Metadata block followed by aspect passages grouped in fixed aspect
/// order, each group under its heading.
pub fn build_context(dataset: &DatasetRecord, aspects: &[AspectUnit]) -> String {
    let mut out = String::from("Metadata:\n");
    out.push_str(&format!("Title: {}\n", dataset.title));
    if !dataset.description.trim().is_empty() {
        out.push_str(&format!("Description: {}\n", dataset.description.trim()));
    }
    if !dataset.topics.is_empty() {
        out.push_str(&format!("Topics: {}\n", dataset.topics.join(", ")));
    }
    if !aspects.is_empty() {
        out.push_str("\nContent of relevant Papers:\n");
        for a in Aspect::ALL {
            let mut group = aspects.iter().filter(|u| u.aspect == a).peekable();
            if group.peek().is_none() {
                continue;
            }
            out.push_str(a.heading());
            out.push_str(":\n");
            for u in group {
                out.push_str("- ");
                out.push_str(u.text.trim());
                out.push('\n');
            }
        }
    }
    out.trim_end().to_string()
}

/// First well-formed JSON array anywhere in `raw`.
pub fn first_json_array(raw: &str) -> Option<Vec<Value>> {
    raw.char_indices().filter(|(_, c)| *c == '[').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Array(items))) => Some(items),
            _ => None,
        }
    })
}

fn string_field(obj: &serde_json::Map<String, Value>, name: &str) -> Option<String> {
    obj.iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .and_then(|(_, v)| v.as_str())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
}

/// (question, answer)
pub type QaText = (String, String);

/// Extract up to `n` (question, answer) pairs; malformed elements are
/// skipped with a warning.
pub fn parse_generated(raw: &str, n: usize) -> Result<(Vec<QaText>, Vec<String>)> {
    let items = first_json_array(raw).ok_or_else(|| Error::parse("generation", "no JSON array in response", raw))?;
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let parsed = item
            .as_object()
            .and_then(|o| Some((string_field(o, "question")?, string_field(o, "answer")?)));
        match parsed {
            Some(p) => pairs.push(p),
            None => warnings.push(format!("element {i} lacks a nonempty question or answer")),
        }
    }
    if pairs.is_empty() {
        return Err(Error::parse("generation", "no valid question/answer objects", raw));
    }
    if pairs.len() > n {
        warnings.push(format!("model returned {} pairs, keeping {n}", pairs.len()));
        pairs.truncate(n);
    }
    Ok((pairs, warnings))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedBatch {
    pub pairs: Vec<QAPair>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GenerationPrompts {
    pub select: Template,
    pub generate: Template,
}

impl GenerationPrompts {
    pub fn load(dir: Option<&Path>) -> Result<Self> {
        Ok(GenerationPrompts {
            select: Template::load_or(dir, "select_types.txt", DEFAULT_SELECT)?,
            generate: Template::load_or(dir, "generate.txt", DEFAULT_GENERATE)?,
        })
    }
}

impl Default for GenerationPrompts {
    fn default() -> Self {
        GenerationPrompts::load(None).expect("bundled templates parse")
    }
}

pub struct Generator<'a> {
    pub gateway: &'a Gateway,
    pub taxonomy: &'a Taxonomy,
    pub prompts: &'a GenerationPrompts,
    pub model: &'a str,
    pub temperature: f64,
    /// Extra attempts after a response with no usable pair.
    pub max_regenerations: u32,
}

impl<'a> Generator<'a> {
    pub fn select_question_types(&self, dataset: &DatasetRecord) -> Result<Vec<QuestionType>> {
        if !dataset.has_metadata() {
            return Err(Error::InvalidArgument(format!(
                "dataset `{}` has no metadata",
                dataset.id
            )));
        }
        let mut vars = BTreeMap::new();
        vars.insert("type_definitions".into(), self.taxonomy.render_definitions());
        vars.insert("dataset_title".into(), dataset.title.clone());
        vars.insert("dataset_description".into(), dataset.description.clone());
        let req = PromptRequest::new("select_types", self.model, self.prompts.select.render(&vars)).with_vars(vars);
        parse_selected_types(&self.gateway.complete(&req)?)
    }

    pub fn plan_generation(&self, dataset: &DatasetRecord, has_aspects: bool) -> Result<GenerationPlan> {
        if has_aspects {
            return Ok(GenerationPlan::with_paper(&dataset.id));
        }
        if !dataset.has_metadata() {
            return Err(Error::InvalidArgument(format!(
                "dataset `{}` has neither aspects nor metadata to generate from",
                dataset.id
            )));
        }
        let types = self.select_question_types(dataset)?;
        GenerationPlan::metadata_only(&dataset.id, &types)
    }

    pub fn generate_qa(
        &self,
        context: &str,
        entry: &TaxonomyEntry,
        n: u32,
        dataset_id: &str,
        provenance: Provenance,
    ) -> Result<GeneratedBatch> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        let mut vars = BTreeMap::new();
        vars.insert("context".into(), context.to_string());
        vars.insert("type_name".into(), entry.qtype.display_name().to_string());
        vars.insert("type_definition".into(), entry.definition.clone());
        vars.insert("type_example".into(), entry.example.clone());
        vars.insert("n".into(), n.to_string());
        let messages = self.prompts.generate.render(&vars);
        let mut last_err = None;
        for attempt in 0..=self.max_regenerations {
            let mut req = PromptRequest::new("generate", self.model, messages.clone())
                .with_temperature(self.temperature)
                .with_vars(vars.clone());
            req.sample_index = attempt;
            let raw = self.gateway.complete(&req)?;
            match parse_generated(&raw, n as usize) {
                Ok((pairs, mut warnings)) => {
                    if pairs.len() < n as usize {
                        warnings.push(format!(
                            "{dataset_id}/{}: partial generation, {} of {n} pairs",
                            entry.qtype.slug(),
                            pairs.len()
                        ));
                    }
                    for w in &warnings {
                        log::warn!("{w}");
                    }
                    let pairs = pairs
                        .into_iter()
                        .enumerate()
                        .map(|(i, (question, answer))| QAPair {
                            id: format!("{dataset_id}:{}:{}", entry.qtype.slug(), i + 1),
                            dataset_id: dataset_id.to_string(),
                            qtype: entry.qtype,
                            question,
                            answer,
                            provenance,
                            verdict: None,
                        })
                        .collect();
                    return Ok(GeneratedBatch { pairs, warnings });
                }
                Err(e) => {
                    log::warn!(
                        "{dataset_id}/{}: attempt {} unusable: {e}",
                        entry.qtype.slug(),
                        attempt + 1
                    );
                    last_err = Some(e);
                }
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    /// Plan and run every generation task for one dataset, in type order.
    pub fn generate_for_dataset(
        &self,
        dataset: &DatasetRecord,
        aspects: &[AspectUnit],
    ) -> Result<(GenerationPlan, GeneratedBatch)> {
        let plan = self.plan_generation(dataset, !aspects.is_empty())?;
        let context = build_context(dataset, aspects);
        let mut pairs = Vec::new();
        let mut warnings = Vec::new();
        for (&qtype, &n) in &plan.quotas {
            let batch = self.generate_qa(&context, self.taxonomy.get(qtype), n, &dataset.id, plan.mode)?;
            pairs.extend(batch.pairs);
            warnings.extend(batch.warnings);
        }
        Ok((plan, GeneratedBatch { pairs, warnings }))
    }
}
