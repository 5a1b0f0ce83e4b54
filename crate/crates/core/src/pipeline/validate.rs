use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::stages::{ACCEPTED, ASPECTS, DATASETS, MATCHES, PAPERS, QAPAIRS, VERDICTS};
use crate::curation::MatchRecord;
use crate::error::{Error, Result};
use crate::seper::VerdictRecord;
use crate::types::{word_count, AspectUnit, DatasetRecord, PaperRecord, QAPair};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub file: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.line, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub files_checked: Vec<String>,
    pub records: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn flag(&mut self, file: &str, line: usize, message: impl Into<String>) {
        self.violations.push(Violation {
            file: file.to_string(),
            line,
            message: message.into(),
        });
    }

    /// Parse every line of `file` if it exists; parse failures become
    /// violations and the parsed records are returned with line numbers.
    fn load<T: DeserializeOwned>(&mut self, dir: &Path, file: &str, required: bool) -> Result<Vec<(usize, T)>> {
        let path = dir.join(file);
        if !path.exists() {
            if required {
                return Err(Error::io(&path, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
            return Ok(Vec::new());
        }
        self.files_checked.push(file.to_string());
        let mut out = Vec::new();
        for (line, parsed) in crate::jsonl::read_lenient::<T>(&path)? {
            self.records += 1;
            match parsed {
                Ok(r) => out.push((line, r)),
                Err(e) => self.flag(file, line, format!("unparseable record: {e}")),
            }
        }
        Ok(out)
    }
}

fn check_unique<'a>(
    report: &mut ValidationReport,
    file: &str,
    ids: impl Iterator<Item = (usize, &'a str)>,
) -> HashSet<String> {
    let mut seen = HashSet::new();
    for (line, id) in ids {
        if !seen.insert(id.to_string()) {
            report.flag(file, line, format!("duplicate id `{id}`"));
        }
    }
    seen
}

/// Check the corpus files in `dir`: every record parses and validates, ids
/// are unique, and every cross-reference resolves. Only `datasets.jsonl` is
/// required; other files are checked when present.
pub fn validate_corpus(dir: &Path) -> Result<ValidationReport> {
    let mut r = ValidationReport::default();
    let datasets: Vec<(usize, DatasetRecord)> = r.load(dir, DATASETS, true)?;
    let papers: Vec<(usize, PaperRecord)> = r.load(dir, PAPERS, false)?;
    let matches: Vec<(usize, MatchRecord)> = r.load(dir, MATCHES, false)?;
    let aspects: Vec<(usize, AspectUnit)> = r.load(dir, ASPECTS, false)?;
    let pairs: Vec<(usize, QAPair)> = r.load(dir, QAPAIRS, false)?;
    let accepted: Vec<(usize, QAPair)> = r.load(dir, ACCEPTED, false)?;
    let verdicts: Vec<(usize, VerdictRecord)> = r.load(dir, VERDICTS, false)?;

    let dataset_ids = check_unique(&mut r, DATASETS, datasets.iter().map(|(l, d)| (*l, d.id.as_str())));
    let paper_ids = check_unique(&mut r, PAPERS, papers.iter().map(|(l, p)| (*l, p.id.as_str())));
    let pair_ids = check_unique(&mut r, QAPAIRS, pairs.iter().map(|(l, p)| (*l, p.id.as_str())));
    let papers_present = r.files_checked.iter().any(|f| f == PAPERS);

    for (line, d) in &datasets {
        if let Err(e) = d.validate() {
            r.flag(DATASETS, *line, e.to_string());
        }
        if papers_present {
            for pid in d.linked_paper_ids.iter().filter(|p| !paper_ids.contains(*p)) {
                r.flag(DATASETS, *line, format!("linked paper `{pid}` does not exist"));
            }
        }
    }
    for (line, p) in &papers {
        if let Err(e) = p.validate() {
            r.flag(PAPERS, *line, e.to_string());
        }
    }
    for (line, m) in &matches {
        if !dataset_ids.contains(&m.dataset_id) {
            r.flag(MATCHES, *line, format!("unknown dataset `{}`", m.dataset_id));
        }
        if papers_present && !paper_ids.contains(&m.paper_id) {
            r.flag(MATCHES, *line, format!("unknown paper `{}`", m.paper_id));
        }
    }
    for (line, a) in &aspects {
        if !dataset_ids.contains(&a.dataset_id) {
            r.flag(ASPECTS, *line, format!("unknown dataset `{}`", a.dataset_id));
        }
        if papers_present && !paper_ids.contains(&a.paper_id) {
            r.flag(ASPECTS, *line, format!("unknown paper `{}`", a.paper_id));
        }
        if a.text.trim().is_empty() {
            r.flag(ASPECTS, *line, "empty aspect text");
        }
        if a.word_count != word_count(&a.text) {
            r.flag(
                ASPECTS,
                *line,
                format!("word_count {} but text has {} words", a.word_count, word_count(&a.text)),
            );
        }
    }
    for (file, list) in [(QAPAIRS, &pairs), (ACCEPTED, &accepted)] {
        for (line, p) in list {
            if let Err(e) = p.validate() {
                r.flag(file, *line, e.to_string());
            }
            if !dataset_ids.contains(&p.dataset_id) {
                r.flag(file, *line, format!("unknown dataset `{}`", p.dataset_id));
            }
        }
    }
    let pairs_present = r.files_checked.iter().any(|f| f == QAPAIRS);
    for (line, p) in &accepted {
        if pairs_present && !pair_ids.contains(&p.id) {
            r.flag(ACCEPTED, *line, format!("unknown pair `{}`", p.id));
        }
        if !p.verdict.is_some_and(|v| v.accepted()) {
            r.flag(ACCEPTED, *line, "pair lacks an accepting verdict");
        }
    }
    for (line, v) in &verdicts {
        if pairs_present && !pair_ids.contains(&v.pair_id) {
            r.flag(VERDICTS, *line, format!("unknown pair `{}`", v.pair_id));
        }
        if v.verdict() != crate::types::FilterVerdict::from_confidences(v.conf_with, v.conf_without) {
            r.flag(VERDICTS, *line, "delta or decision inconsistent with the confidences");
        }
    }
    r.violations.sort_by(|a, b| (&a.file, a.line).cmp(&(&b.file, b.line)));
    Ok(r)
}
