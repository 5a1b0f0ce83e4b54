use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Output, Runner, Stage};
use crate::curation::{CurationPrompts, Curator, MatchRecord, RawPaper};
use crate::error::{Error, Result};
use crate::evalqa::{
    accuracy, aggregate_stats, classify_cognitive_level, diversity_index, evaluate_prediction, EvalPrompts,
    GatewayEntailment, LevelDistribution, QAEvalRecord, RagAnswerer, StatsRow,
};
use crate::qagen::{build_context, GenerationPrompts, Generator, Taxonomy};
use crate::retrieval::{
    build_index, build_passage_index, mrr_at, recall_at_k, EmbeddingIndex, Index, IndexConfig, RankedList,
};
use crate::seper::{curve_points, evaluate_filter, BeliefShiftFilter, ScoringPrompts, VerdictRecord};
use crate::types::{
    split_corpus, validate_datasets, Aspect, AspectUnit, CognitiveLevel, DatasetRecord, PaperRecord, QAPair,
    QuestionType,
};
use crate::util::parallel_map;

pub(crate) const DATASETS: &str = "datasets.jsonl";
pub(crate) const PAPERS: &str = "papers.jsonl";
pub(crate) const MATCHES: &str = "matches.jsonl";
pub(crate) const ASPECTS: &str = "aspects.jsonl";
pub(crate) const QAPAIRS: &str = "qapairs.jsonl";
pub(crate) const VERDICTS: &str = "verdicts.jsonl";
pub(crate) const ACCEPTED: &str = "accepted.jsonl";
const PASSAGES: &str = "index/passages.json";

/// One human judgement of a generated answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub pair_id: String,
    pub label: bool,
}

/// Input papers may arrive already segmented or as plain text.
#[derive(Deserialize)]
#[serde(untagged)]
enum PaperInput {
    Segmented(PaperRecord),
    Raw(RawPaper),
}

fn jsonl_output<T: Serialize>(path: &str, records: &[T]) -> Result<Output> {
    Ok(Output {
        path: path.to_string(),
        bytes: crate::jsonl::to_string(records)?.into_bytes(),
    })
}

fn json_output(path: &str, value: &impl Serialize) -> Result<Output> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(Output {
        path: path.to_string(),
        bytes: text.into_bytes(),
    })
}

fn csv_output(path: &str, header: &[String], rows: &[Vec<String>]) -> Result<Output> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Pipeline(format!("writing {path}: {e}"));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(r).map_err(to_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Pipeline(format!("writing {path}: {e}")))?;
    Ok(Output {
        path: path.to_string(),
        bytes,
    })
}

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt4).unwrap_or_default()
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn embed_file(model: &str, config: IndexConfig) -> String {
    let safe: String = model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("index/embed_{safe}_{}.json", config.file_stem())
}

fn index_file(config: IndexConfig) -> String {
    format!("index/{}.json", config.file_stem())
}

fn collect<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

fn group_aspects(aspects: &[AspectUnit]) -> HashMap<&str, Vec<AspectUnit>> {
    let mut by: HashMap<&str, Vec<AspectUnit>> = HashMap::new();
    for a in aspects {
        by.entry(a.dataset_id.as_str()).or_default().push(a.clone());
    }
    by
}

impl Runner {
    fn workers(&self) -> usize {
        self.config.backend.max_in_flight
    }

    fn read<T: serde::de::DeserializeOwned>(&self, rel: &str) -> Result<Vec<T>> {
        crate::jsonl::read(&self.run_path(rel))
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, rel: &str) -> Result<T> {
        let p = self.run_path(rel);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn template_dir(&self) -> Option<&std::path::Path> {
        self.config.paths.template_dir.as_deref()
    }

    pub(super) fn declared_inputs(&self, stage: Stage) -> Vec<PathBuf> {
        let run = |names: &[&str]| names.iter().map(|n| self.run_path(n)).collect::<Vec<_>>();
        match stage {
            Stage::Ingest => vec![self.input_dir.join(DATASETS), self.input_dir.join(PAPERS)],
            Stage::Match => run(&[DATASETS, PAPERS]),
            Stage::Parse => run(&[DATASETS, PAPERS, MATCHES]),
            Stage::Generate | Stage::Index => run(&[DATASETS, ASPECTS]),
            Stage::Filter => {
                let mut v = run(&[DATASETS, ASPECTS, QAPAIRS]);
                v.extend(self.config.paths.filter_labels.clone());
                v
            }
            Stage::BenchRetrieval => {
                let mut v = run(&[ACCEPTED]);
                for c in [IndexConfig::WithoutPaper, IndexConfig::WithPaper] {
                    v.push(self.run_path(&index_file(c)));
                    for m in &self.config.models.embedding {
                        v.push(self.run_path(&embed_file(m, c)));
                    }
                }
                v
            }
            Stage::BenchQa => run(&[ACCEPTED, PASSAGES]),
            Stage::Stats => run(&[DATASETS, PAPERS, ASPECTS, QAPAIRS, ACCEPTED]),
            Stage::Split => run(&[DATASETS, ACCEPTED]),
        }
    }

    pub(super) fn execute(&self, stage: Stage) -> Result<Vec<Output>> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Match => self.match_papers(),
            Stage::Parse => self.parse(),
            Stage::Generate => self.generate(),
            Stage::Filter => self.filter(),
            Stage::Index => self.index(),
            Stage::BenchRetrieval => self.bench_retrieval(),
            Stage::BenchQa => self.bench_qa(),
            Stage::Stats => self.stats(),
            Stage::Split => self.split(),
        }
    }

    fn curator<'a>(&'a self, prompts: &'a CurationPrompts) -> Result<Curator<'a>> {
        Ok(Curator {
            gateway: self.gateway()?,
            prompts,
            model: &self.config.models.curation,
            relevance_max_chars: self.config.generation.relevance_max_chars,
        })
    }

    fn ingest(&self) -> Result<Vec<Output>> {
        let datasets: Vec<DatasetRecord> = crate::jsonl::read(&self.input_dir.join(DATASETS))?;
        for d in &datasets {
            d.validate()?;
        }
        validate_datasets(&datasets)?;
        let inputs: Vec<PaperInput> = crate::jsonl::read(&self.input_dir.join(PAPERS))?;
        let mut seen = HashSet::new();
        for p in &inputs {
            let id = match p {
                PaperInput::Segmented(p) => &p.id,
                PaperInput::Raw(p) => &p.id,
            };
            if !seen.insert(id.clone()) {
                return Err(Error::InvalidRecord(format!("duplicate paper id `{id}`")));
            }
        }
        let prompts = CurationPrompts::load(self.template_dir())?;
        let curator = self.curator(&prompts)?;
        let segmented = inputs.iter().filter(|p| matches!(p, PaperInput::Raw(_))).count();
        let papers = collect(parallel_map(&inputs, self.workers(), |p| match p {
            PaperInput::Segmented(p) => Ok(p.clone()),
            PaperInput::Raw(raw) => curator.segment_paper(raw),
        }))?;
        for p in &papers {
            p.validate()?;
        }
        let unresolved: Vec<String> = datasets
            .iter()
            .flat_map(|d| d.linked_paper_ids.iter().map(move |p| (d, p)))
            .filter(|(_, p)| !seen.contains(*p))
            .map(|(d, p)| format!("{} -> {p}", d.id))
            .collect();
        for u in &unresolved {
            log::warn!("unresolved paper link {u}");
        }
        let report = json!({
            "datasets": datasets.len(),
            "papers": papers.len(),
            "segmented_from_text": segmented,
            "unresolved_links": unresolved,
        });
        Ok(vec![
            jsonl_output(DATASETS, &datasets)?,
            jsonl_output(PAPERS, &papers)?,
            json_output("reports/ingest.json", &report)?,
        ])
    }

    fn match_papers(&self) -> Result<Vec<Output>> {
        let datasets: Vec<DatasetRecord> = self.read(DATASETS)?;
        let papers: Vec<PaperRecord> = self.read(PAPERS)?;
        let by_id: HashMap<&str, &PaperRecord> = papers.iter().map(|p| (p.id.as_str(), p)).collect();
        let mut pairs: Vec<(&DatasetRecord, &PaperRecord)> = Vec::new();
        for d in &datasets {
            pairs.extend(
                d.linked_paper_ids
                    .iter()
                    .filter_map(|pid| by_id.get(pid.as_str()).map(|p| (d, *p))),
            );
        }
        let prompts = CurationPrompts::load(self.template_dir())?;
        let curator = self.curator(&prompts)?;
        let matches = collect(parallel_map(&pairs, self.workers(), |(d, p)| {
            let (verdict, truncated) = curator.assess_relevance(d, p)?;
            Ok(MatchRecord {
                dataset_id: d.id.clone(),
                paper_id: p.id.clone(),
                used: verdict.used,
                explanation: verdict.explanation,
                truncated,
            })
        }))?;
        Ok(vec![jsonl_output(MATCHES, &matches)?])
    }

    fn parse(&self) -> Result<Vec<Output>> {
        let datasets: Vec<DatasetRecord> = self.read(DATASETS)?;
        let papers: Vec<PaperRecord> = self.read(PAPERS)?;
        let matches: Vec<MatchRecord> = self.read(MATCHES)?;
        let ds: HashMap<&str, &DatasetRecord> = datasets.iter().map(|d| (d.id.as_str(), d)).collect();
        let ps: HashMap<&str, &PaperRecord> = papers.iter().map(|p| (p.id.as_str(), p)).collect();
        let used: Vec<(&DatasetRecord, &PaperRecord)> = matches
            .iter()
            .filter(|m| m.used)
            .map(|m| {
                let d = ds.get(m.dataset_id.as_str()).copied();
                let p = ps.get(m.paper_id.as_str()).copied();
                d.zip(p).ok_or_else(|| {
                    Error::InvalidRecord(format!(
                        "match {}/{} references an unknown record",
                        m.dataset_id, m.paper_id
                    ))
                })
            })
            .collect::<Result<_>>()?;
        let prompts = CurationPrompts::load(self.template_dir())?;
        let curator = self.curator(&prompts)?;
        let results = collect(parallel_map(&used, self.workers(), |(d, p)| {
            curator.parse_matched(d, p)
        }))?;
        let mut units = Vec::new();
        let mut warnings = Vec::new();
        for (u, w) in results {
            units.extend(u);
            warnings.extend(w);
        }
        let per_aspect: BTreeMap<&str, usize> = Aspect::ALL
            .iter()
            .map(|a| (a.heading(), units.iter().filter(|u| u.aspect == *a).count()))
            .collect();
        let report = json!({
            "pairs_parsed": used.len(),
            "units": units.len(),
            "units_per_aspect": per_aspect,
            "warnings": warnings,
        });
        Ok(vec![
            jsonl_output(ASPECTS, &units)?,
            json_output("reports/parse.json", &report)?,
        ])
    }

    fn generate(&self) -> Result<Vec<Output>> {
        let datasets: Vec<DatasetRecord> = self.read(DATASETS)?;
        let aspects: Vec<AspectUnit> = self.read(ASPECTS)?;
        let by = group_aspects(&aspects);
        let taxonomy = Taxonomy::load(self.config.paths.taxonomy.as_deref())?;
        let prompts = GenerationPrompts::load(self.template_dir())?;
        let generator = Generator {
            gateway: self.gateway()?,
            taxonomy: &taxonomy,
            prompts: &prompts,
            model: &self.config.models.generation,
            temperature: self.config.generation.temperature,
            max_regenerations: self.config.generation.max_regenerations,
        };
        let results = collect(parallel_map(&datasets, self.workers(), |d| {
            generator.generate_for_dataset(d, by.get(d.id.as_str()).map_or(&[][..], Vec::as_slice))
        }))?;
        let mut pairs = Vec::new();
        let mut plans = Vec::new();
        let mut warnings = Vec::new();
        for (plan, batch) in results {
            plans.push(json!({
                "dataset_id": plan.dataset_id,
                "mode": plan.mode,
                "planned": plan.total(),
                "generated": batch.pairs.len(),
            }));
            pairs.extend(batch.pairs);
            warnings.extend(batch.warnings);
        }
        let report = json!({
            "datasets": plans,
            "pairs": pairs.len(),
            "deduplicated": false,
            "warnings": warnings,
        });
        Ok(vec![
            jsonl_output(QAPAIRS, &pairs)?,
            json_output("reports/generation.json", &report)?,
        ])
    }

    fn filter(&self) -> Result<Vec<Output>> {
        let datasets: Vec<DatasetRecord> = self.read(DATASETS)?;
        let aspects: Vec<AspectUnit> = self.read(ASPECTS)?;
        let pairs: Vec<QAPair> = self.read(QAPAIRS)?;
        let by = group_aspects(&aspects);
        let context_of: HashMap<String, String> = datasets
            .iter()
            .map(|d| {
                (
                    d.id.clone(),
                    build_context(d, by.get(d.id.as_str()).map_or(&[][..], Vec::as_slice)),
                )
            })
            .collect();
        let scoring_model = &self.config.models.scoring;
        let filter = BeliefShiftFilter {
            gateway: self.gateway()?,
            scoring_model,
            prompts: ScoringPrompts::default(),
            workers: self.workers(),
        };
        let judged = filter.filter_corpus(&pairs, &context_of)?;
        let verdicts: Vec<VerdictRecord> = judged
            .iter()
            .map(|p| VerdictRecord::new(&p.id, &p.verdict.expect("filtered"), scoring_model))
            .collect();
        let accepted: Vec<QAPair> = judged
            .into_iter()
            .filter(|p| p.verdict.is_some_and(|v| v.accepted()))
            .collect();
        let mut outputs = vec![
            jsonl_output(VERDICTS, &verdicts)?,
            jsonl_output(ACCEPTED, &accepted)?,
            json_output(
                "reports/filter.json",
                &json!({
                    "pairs": verdicts.len(),
                    "accepted": accepted.len(),
                    "rejected": verdicts.len() - accepted.len(),
                    "scoring_model": scoring_model,
                    "confidence": "exp(mean token logprob) of the answer",
                }),
            )?,
        ];
        if let Some(path) = &self.config.paths.filter_labels {
            let labels: Vec<LabelRecord> = crate::jsonl::read(path)?;
            outputs.extend(evaluation_outputs(&verdicts, &labels)?);
        }
        Ok(outputs)
    }

    fn index(&self) -> Result<Vec<Output>> {
        let datasets: Vec<DatasetRecord> = self.read(DATASETS)?;
        let aspects: Vec<AspectUnit> = self.read(ASPECTS)?;
        let params = self.config.retrieval.bm25();
        let mut outputs = Vec::new();
        let mut sizes = BTreeMap::new();
        let mut with_paper = None;
        for c in [IndexConfig::WithoutPaper, IndexConfig::WithPaper] {
            let idx = build_index(&datasets, &aspects, c, params)?;
            sizes.insert(c.file_stem(), idx.len());
            for m in &self.config.models.embedding {
                let emb = EmbeddingIndex::build(self.gateway()?, m, &idx)?;
                outputs.push(json_output(&embed_file(m, c), &emb)?);
            }
            outputs.push(json_output(&index_file(c), &idx)?);
            if c == IndexConfig::WithPaper {
                with_paper = Some(idx);
            }
        }
        let passages = build_passage_index(&with_paper.expect("built"), self.config.retrieval.chunk_size)?;
        let meta = json!({
            "units": sizes,
            "passages": passages.len(),
            "k1": params.k1,
            "b": params.b,
            "chunk_size": self.config.retrieval.chunk_size,
            "unit_policy": "one unit per dataset metadata record plus one per extracted aspect; dataset score is the maximum over its units",
            "tokenizer": "lowercase, split on non-alphanumeric characters, no stemming or stopwords",
            "embedding_models": self.config.models.embedding,
        });
        outputs.push(json_output(PASSAGES, &passages)?);
        outputs.push(json_output("index/meta.json", &meta)?);
        Ok(outputs)
    }

    fn bench_retrieval(&self) -> Result<Vec<Output>> {
        let accepted: Vec<QAPair> = self.read(ACCEPTED)?;
        if accepted.is_empty() {
            return Err(Error::Pipeline(
                "no accepted QA pairs to use as retrieval queries".into(),
            ));
        }
        let r = &self.config.retrieval;
        let depth = r.top_k.iter().copied().max().unwrap_or(1).max(r.mrr_cutoff);
        let configs = [IndexConfig::WithoutPaper, IndexConfig::WithPaper];
        let mut header = vec!["method".to_string()];
        for c in configs {
            for k in &r.top_k {
                header.push(format!("R@{k} ({})", c.label()));
            }
            header.push(format!("MRR@{} ({})", r.mrr_cutoff, c.label()));
        }
        let metrics = |runs: &[(RankedList, String)]| -> Result<Vec<f64>> {
            let mut v = r
                .top_k
                .iter()
                .map(|&k| recall_at_k(runs, k))
                .collect::<Result<Vec<_>>>()?;
            v.push(mrr_at(runs, r.mrr_cutoff)?);
            Ok(v)
        };
        let mut rows = Vec::new();
        let mut summary = Vec::new();
        let mut method_row = |name: &str, per_config: Vec<Vec<f64>>| {
            let mut row = vec![name.to_string()];
            row.extend(per_config.iter().flatten().map(|x| fmt4(*x)));
            summary.push(json!({"method": name, "values": per_config}));
            rows.push(row);
        };

        let mut bm25 = Vec::new();
        for c in configs {
            let idx: Index = self.read_json(&index_file(c))?;
            let runs = collect(parallel_map(&accepted, self.workers(), |p| {
                Ok((idx.search(&p.question, depth)?, p.dataset_id.clone()))
            }))?;
            bm25.push(metrics(&runs)?);
        }
        method_row("BM25", bm25);

        for m in &self.config.models.embedding {
            let mut per = Vec::new();
            for c in configs {
                let emb: EmbeddingIndex = self.read_json(&embed_file(m, c))?;
                let gw = self.gateway()?;
                let runs = collect(parallel_map(&accepted, self.workers(), |p| {
                    Ok((emb.embed_search(gw, &p.question, depth)?, p.dataset_id.clone()))
                }))?;
                per.push(metrics(&runs)?);
            }
            method_row(m, per);
        }
        let report = json!({
            "queries": accepted.len(),
            "columns": header,
            "methods": summary,
            "aggregation": "dataset score = max over its units; ties by ascending dataset id",
        });
        Ok(vec![
            csv_output("reports/retrieval.csv", &header, &rows)?,
            json_output("reports/retrieval.json", &report)?,
        ])
    }

    fn classify_levels(&self, pairs: &[QAPair], prompts: &EvalPrompts) -> Result<Vec<CognitiveLevel>> {
        let gw = self.gateway()?;
        let model = &self.config.models.cognitive;
        collect(parallel_map(pairs, self.workers(), |p| {
            classify_cognitive_level(&p.question, gw, model, &prompts.cognitive)
        }))
    }

    fn bench_qa(&self) -> Result<Vec<Output>> {
        let accepted: Vec<QAPair> = self.read(ACCEPTED)?;
        if accepted.is_empty() {
            return Err(Error::Pipeline("no accepted QA pairs to evaluate".into()));
        }
        let passages: Index = self.read_json(PASSAGES)?;
        let prompts = EvalPrompts::load(self.template_dir())?;
        let gw = self.gateway()?;
        let levels = self.classify_levels(&accepted, &prompts)?;
        let scorer = GatewayEntailment {
            gateway: gw,
            model: &self.config.models.entailment,
            template: &prompts.entailment,
        };
        let models = &self.config.models.qa;
        let ks = &self.config.qa.rag_k;
        let tasks: Vec<(&QAPair, &String, usize)> = accepted
            .iter()
            .flat_map(|p| models.iter().flat_map(move |m| ks.iter().map(move |&k| (p, m, k))))
            .collect();
        let records = collect(parallel_map(&tasks, self.workers(), |&(p, m, k)| {
            let reader = RagAnswerer {
                gateway: gw,
                model: m,
                template: &prompts.answer,
                passages: Some(&passages),
            };
            let answer = reader.answer(&p.question, k)?;
            evaluate_prediction(p, m, k, &answer.prediction, &scorer)
        }))?;
        let level_of: HashMap<&str, CognitiveLevel> =
            accepted.iter().zip(&levels).map(|(p, l)| (p.id.as_str(), *l)).collect();

        let mut level_header = strings(&["model", "k", "questions", "accuracy"]);
        level_header.extend(CognitiveLevel::ALL.iter().map(|l| l.to_string()));
        let mut level_rows = Vec::new();
        let mut rag_header = vec!["model".to_string()];
        for k in ks {
            rag_header.push(format!("accuracy (k={k})"));
        }
        for k in ks {
            rag_header.push(format!("ROUGE-L long (k={k})"));
        }
        let mut rag_rows = Vec::new();
        for m in models {
            let mut rag = vec![m.clone()];
            let mut rouge = Vec::new();
            for &k in ks {
                let sel: Vec<&QAEvalRecord> = records.iter().filter(|r| &r.model == m && r.k == k).collect();
                let mut row = vec![
                    m.clone(),
                    k.to_string(),
                    sel.len().to_string(),
                    fmt_opt(accuracy(sel.iter().copied())),
                ];
                for l in CognitiveLevel::ALL {
                    row.push(fmt_opt(accuracy(
                        sel.iter().copied().filter(|r| level_of[r.pair_id.as_str()] == l),
                    )));
                }
                level_rows.push(row);
                rag.push(fmt_opt(accuracy(sel.iter().copied())));
                let long: Vec<f64> = sel.iter().filter_map(|r| r.rouge_l).collect();
                rouge.push(fmt_opt(
                    (!long.is_empty()).then(|| long.iter().sum::<f64>() / long.len() as f64),
                ));
            }
            rag.extend(rouge);
            rag_rows.push(rag);
        }
        let note = json!({
            "questions": accepted.len(),
            "averaging": "micro-average over questions",
            "correct": "entailment score > 0.5 with premise = prediction, hypothesis = reference",
            "rouge_l": "LCS F-measure with beta = 1, long-form types only",
        });
        Ok(vec![
            jsonl_output("reports/qa_eval.jsonl", &records)?,
            csv_output("reports/qa_levels.csv", &level_header, &level_rows)?,
            csv_output("reports/qa_rag.csv", &rag_header, &rag_rows)?,
            json_output("reports/qa.json", &note)?,
        ])
    }

    fn stats(&self) -> Result<Vec<Output>> {
        let datasets: Vec<DatasetRecord> = self.read(DATASETS)?;
        let papers: Vec<PaperRecord> = self.read(PAPERS)?;
        let aspects: Vec<AspectUnit> = self.read(ASPECTS)?;
        let generated: Vec<QAPair> = self.read(QAPAIRS)?;
        let accepted: Vec<QAPair> = self.read(ACCEPTED)?;
        if accepted.is_empty() {
            return Err(Error::Pipeline("no accepted QA pairs to summarize".into()));
        }
        let table = aggregate_stats(&accepted)?;
        let header = strings(&["type", "count", "percent", "avg question words", "avg answer words"]);
        let row = |r: &StatsRow| {
            vec![
                r.label.clone(),
                r.count.to_string(),
                format!("{:.2}", r.percent),
                r.avg_question_words.map(|x| format!("{x:.2}")).unwrap_or_default(),
                r.avg_answer_words.map(|x| format!("{x:.2}")).unwrap_or_default(),
            ]
        };
        let mut rows: Vec<Vec<String>> = Vec::new();
        rows.push(row(&table.short));
        rows.extend(table.types.iter().filter(|r| is_form(&r.label, true)).map(row));
        rows.push(row(&table.long));
        rows.extend(table.types.iter().filter(|r| is_form(&r.label, false)).map(row));
        rows.push(row(&table.total));

        let prompts = EvalPrompts::load(self.template_dir())?;
        let levels = self.classify_levels(&accepted, &prompts)?;
        let dist = LevelDistribution::from_levels(levels.iter().copied());
        let mut cog_header = vec!["type".to_string()];
        cog_header.extend(CognitiveLevel::ALL.iter().map(|l| l.to_string()));
        let mut cog_rows = Vec::new();
        for t in QuestionType::ALL {
            let d = LevelDistribution::from_levels(
                accepted
                    .iter()
                    .zip(&levels)
                    .filter(|(p, _)| p.qtype == t)
                    .map(|(_, l)| *l),
            );
            let mut r = vec![t.display_name().to_string()];
            r.extend(d.counts.iter().map(u64::to_string));
            cog_rows.push(r);
        }
        let mut total = vec!["Total".to_string()];
        total.extend(dist.counts.iter().map(u64::to_string));
        cog_rows.push(total);

        let coverage: Vec<_> = Aspect::ALL
            .iter()
            .map(|a| {
                let units: Vec<&AspectUnit> = aspects.iter().filter(|u| u.aspect == *a).collect();
                let covered: HashSet<&str> = units.iter().map(|u| u.dataset_id.as_str()).collect();
                let words = units.iter().map(|u| u.word_count).sum::<usize>();
                json!({
                    "aspect": a.heading(),
                    "units": units.len(),
                    "datasets": covered.len(),
                    "avg_words": (!units.is_empty()).then(|| words as f64 / units.len() as f64),
                })
            })
            .collect();
        let level_records: Vec<_> = accepted
            .iter()
            .zip(&levels)
            .map(|(p, l)| json!({"pair_id": p.id, "level": l}))
            .collect();
        let corpus = json!({
            "datasets": datasets.len(),
            "papers": papers.len(),
            "aspect_units": aspects.len(),
            "qa_generated": generated.len(),
            "qa_accepted": accepted.len(),
            "aspect_coverage": coverage,
            "level_counts": dist.counts,
            "diversity_index": diversity_index(&dist)?,
            "diversity_note": "1 - sum p_i^2 over six levels; the maximum is 5/6",
        });
        Ok(vec![
            csv_output("reports/stats.csv", &header, &rows)?,
            csv_output("reports/cognitive.csv", &cog_header, &cog_rows)?,
            jsonl_output("reports/levels.jsonl", &level_records)?,
            json_output("reports/corpus.json", &corpus)?,
        ])
    }

    fn split(&self) -> Result<Vec<Output>> {
        let datasets: Vec<DatasetRecord> = self.read(DATASETS)?;
        let accepted: Vec<QAPair> = self.read(ACCEPTED)?;
        let s = &self.config.split;
        let split = split_corpus(&datasets, s.ratios, s.seed)?;
        let mut outputs = Vec::new();
        let mut qa_counts = BTreeMap::new();
        for (name, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
            let set: HashSet<&str> = ids.iter().map(String::as_str).collect();
            let pairs: Vec<&QAPair> = accepted
                .iter()
                .filter(|p| set.contains(p.dataset_id.as_str()))
                .collect();
            qa_counts.insert(name, pairs.len());
            outputs.push(jsonl_output(&format!("splits/{name}.jsonl"), &pairs)?);
        }
        outputs.push(json_output(
            "splits/split.json",
            &json!({
                "ratios": s.ratios,
                "seed": s.seed,
                "train": split.train,
                "val": split.val,
                "test": split.test,
                "qa_counts": qa_counts,
            }),
        )?);
        Ok(outputs)
    }
}

fn is_form(label: &str, short: bool) -> bool {
    QuestionType::ALL
        .iter()
        .find(|t| t.display_name() == label)
        .is_some_and(|t| (t.answer_form() == crate::types::AnswerForm::Short) == short)
}

fn evaluation_outputs(verdicts: &[VerdictRecord], labels: &[LabelRecord]) -> Result<Vec<Output>> {
    let by_id: HashMap<&str, &VerdictRecord> = verdicts.iter().map(|v| (v.pair_id.as_str(), v)).collect();
    let mut decisions = Vec::new();
    let mut deltas = Vec::new();
    let mut truth = Vec::new();
    for l in labels {
        let v = by_id
            .get(l.pair_id.as_str())
            .ok_or_else(|| Error::InvalidRecord(format!("label for unknown pair `{}`", l.pair_id)))?;
        decisions.push(v.decision);
        deltas.push(v.delta);
        truth.push(l.label);
    }
    let mut report = evaluate_filter(&decisions, &truth)?;
    let mut outputs = Vec::new();
    match curve_points(&deltas, &truth) {
        Ok(c) => {
            report.pr_points = c.pr.clone();
            report.roc_points = c.roc.clone();
            let pr: Vec<Vec<String>> = c
                .thresholds
                .iter()
                .zip(&c.pr)
                .map(|(t, (r, p))| vec![t.to_string(), r.to_string(), p.to_string()])
                .collect();
            let roc: Vec<Vec<String>> = c
                .thresholds
                .iter()
                .zip(&c.roc)
                .map(|(t, (f, tp))| vec![t.to_string(), f.to_string(), tp.to_string()])
                .collect();
            outputs.push(csv_output(
                "reports/filter_pr.csv",
                &strings(&["threshold", "recall", "precision"]),
                &pr,
            )?);
            outputs.push(csv_output(
                "reports/filter_roc.csv",
                &strings(&["threshold", "fpr", "tpr"]),
                &roc,
            )?);
        }
        Err(e) => log::warn!("no filter curves: {e}"),
    }
    outputs.push(json_output("reports/filter_eval.json", &report)?);
    Ok(outputs)
}
