//! Dataset retrieval: BM25 over dual index configurations, cosine ranking
//! over external embeddings, passage chunking, and ranking metrics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::types::{Aspect, AspectUnit, DatasetRecord};

/// Lowercase and split on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitSource {
    Metadata,
    Aspect(Aspect),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocUnit {
    pub dataset_id: String,
    pub source: UnitSource,
    pub text: String,
}

impl DocUnit {
    pub fn new(dataset_id: &str, source: UnitSource, text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::InvalidRecord(format!(
                "empty document unit for dataset `{dataset_id}`"
            )));
        }
        Ok(DocUnit {
            dataset_id: dataset_id.to_string(),
            source,
            text: text.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexConfig {
    WithPaper,
    WithoutPaper,
}

impl IndexConfig {
    pub fn label(self) -> &'static str {
        match self {
            IndexConfig::WithPaper => "w/ paper",
            IndexConfig::WithoutPaper => "w/o paper",
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            IndexConfig::WithPaper => "with_paper",
            IndexConfig::WithoutPaper => "without_paper",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Immutable inverted index over document units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub config: IndexConfig,
    pub params: Bm25Params,
    pub units: Vec<DocUnit>,
    /// term -> (unit id, term frequency), unit ids ascending
    pub postings: BTreeMap<String, Vec<(usize, u32)>>,
    pub lengths: Vec<usize>,
    pub avg_length: f64,
}

/// Metadata unit text: title followed by description.
pub fn metadata_text(d: &DatasetRecord) -> String {
    if d.description.trim().is_empty() {
        d.title.clone()
    } else {
        format!("{}\n{}", d.title, d.description)
    }
}

pub fn build_index(
    datasets: &[DatasetRecord],
    aspects: &[AspectUnit],
    config: IndexConfig,
    params: Bm25Params,
) -> Result<Index> {
    if datasets.is_empty() {
        return Err(Error::InvalidArgument("cannot index an empty corpus".into()));
    }
    let mut units = Vec::new();
    for d in datasets {
        units.push(DocUnit::new(&d.id, UnitSource::Metadata, &metadata_text(d))?);
    }
    if config == IndexConfig::WithPaper {
        for a in aspects {
            units.push(DocUnit::new(&a.dataset_id, UnitSource::Aspect(a.aspect), &a.text)?);
        }
    }
    build_index_from_units(units, config, params)
}

pub fn build_index_from_units(units: Vec<DocUnit>, config: IndexConfig, params: Bm25Params) -> Result<Index> {
    if units.is_empty() {
        return Err(Error::InvalidArgument("cannot index an empty corpus".into()));
    }
    let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
    let mut lengths = Vec::with_capacity(units.len());
    for (id, unit) in units.iter().enumerate() {
        let terms = tokenize(&unit.text);
        lengths.push(terms.len());
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in terms {
            *tf.entry(t).or_default() += 1;
        }
        for (t, n) in tf {
            postings.entry(t).or_default().push((id, n));
        }
    }
    let avg_length = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
    Ok(Index {
        config,
        params,
        units,
        postings,
        lengths,
        avg_length,
    })
}

impl Index {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.units.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_frequency(&self, term: &str, unit: usize) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| p.binary_search_by_key(&unit, |&(u, _)| u).ok().map(|i| p[i].1))
            .unwrap_or(0)
    }

    fn contribution(&self, idf: f64, tf: u32, unit: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = if self.avg_length > 0.0 {
            self.lengths[unit] as f64 / self.avg_length
        } else {
            0.0
        };
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
    }

    /// BM25 score of one unit. Query terms count with multiplicity.
    pub fn bm25_score(&self, query_terms: &[String], unit: usize) -> f64 {
        query_terms
            .iter()
            .map(|t| match self.term_frequency(t, unit) {
                0 => 0.0,
                tf => self.contribution(self.idf(t), tf, unit),
            })
            .sum()
    }

    /// Scores of every unit for a tokenized query.
    pub fn score_all(&self, query_terms: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.units.len()];
        for t in query_terms {
            let Some(list) = self.postings.get(t) else { continue };
            let idf = self.idf(t);
            for &(unit, tf) in list {
                scores[unit] += self.contribution(idf, tf, unit);
            }
        }
        scores
    }

    /// Dataset ranking: each dataset scores the maximum of its units.
    pub fn search(&self, query: &str, k: usize) -> Result<RankedList> {
        let scores = self.score_all(&tokenize(query));
        aggregate_ranking(self.units.iter().map(|u| u.dataset_id.as_str()), &scores, k)
    }

    /// Top-k units (not aggregated), ties by ascending unit id.
    pub fn search_units(&self, query: &str, k: usize) -> Vec<(usize, f64)> {
        let scores = self.score_all(&tokenize(query));
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    /// (dataset id, score), scores non-increasing
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    /// 1-based rank of a dataset.
    pub fn rank_of(&self, dataset_id: &str) -> Option<usize> {
        self.entries.iter().position(|(d, _)| d == dataset_id).map(|p| p + 1)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(d, _)| d.as_str()).collect()
    }
}

/// Max-aggregate unit scores per dataset, order by score descending then
/// dataset id ascending, and keep the first `k`.
pub fn aggregate_ranking<'a>(
    unit_datasets: impl Iterator<Item = &'a str>,
    scores: &[f64],
    k: usize,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut best: HashMap<&str, f64> = HashMap::new();
    for (d, &s) in unit_datasets.zip(scores) {
        let e = best.entry(d).or_insert(f64::NEG_INFINITY);
        if s > *e {
            *e = s;
        }
    }
    let mut entries: Vec<(String, f64)> = best.into_iter().map(|(d, s)| (d.to_string(), s)).collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(k);
    Ok(RankedList { entries })
}

fn check_runs(runs: &[(RankedList, String)]) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no retrieval runs to evaluate".into()));
    }
    Ok(())
}

/// Fraction of runs whose gold dataset is ranked within the top `k`.
pub fn recall_at_k(runs: &[(RankedList, String)], k: usize) -> Result<f64> {
    check_runs(runs)?;
    let hits = runs
        .iter()
        .filter(|(list, gold)| list.rank_of(gold).is_some_and(|r| r <= k))
        .count();
    Ok(hits as f64 / runs.len() as f64)
}

/// Mean reciprocal rank of the gold dataset, zero past `cutoff`.
pub fn mrr_at(runs: &[(RankedList, String)], cutoff: usize) -> Result<f64> {
    check_runs(runs)?;
    let sum: f64 = runs
        .iter()
        .map(|(list, gold)| match list.rank_of(gold) {
            Some(r) if r <= cutoff => 1.0 / r as f64,
            _ => 0.0,
        })
        .sum();
    Ok(sum / runs.len() as f64)
}

/// Consecutive windows of `chunk_size` whitespace tokens, single-space joined.
pub fn chunk_passages(text: &str, chunk_size: usize) -> Result<Vec<String>> {
    if chunk_size == 0 {
        return Err(Error::InvalidArgument("chunk size must be at least 1".into()));
    }
    let tokens: Vec<&str> = text.split_whitespace().collect();
    Ok(tokens.chunks(chunk_size).map(|c| c.join(" ")).collect())
}

/// Passage units for retrieval-augmented answering: every unit of `index`
/// chunked, each chunk keeping its parent's dataset and source.
pub fn build_passage_index(index: &Index, chunk_size: usize) -> Result<Index> {
    let mut units = Vec::new();
    for u in &index.units {
        for chunk in chunk_passages(&u.text, chunk_size)? {
            units.push(DocUnit::new(&u.dataset_id, u.source, &chunk)?);
        }
    }
    build_index_from_units(units, index.config, index.params)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "vector dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

/// Unit vectors from an external embedding model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    pub model: String,
    pub unit_datasets: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingIndex {
    pub fn new(model: &str, unit_datasets: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if unit_datasets.len() != vectors.len() {
            return Err(Error::InvalidArgument("one vector per unit is required".into()));
        }
        if let Some(first) = vectors.first() {
            if vectors.iter().any(|v| v.len() != first.len()) {
                return Err(Error::InvalidArgument("embedding vectors differ in dimension".into()));
            }
        }
        Ok(EmbeddingIndex {
            model: model.to_string(),
            unit_datasets,
            vectors,
        })
    }

    pub fn build(gateway: &Gateway, model: &str, index: &Index) -> Result<Self> {
        let texts: Vec<String> = index.units.iter().map(|u| u.text.clone()).collect();
        let vectors = gateway.embed(model, &texts)?;
        if vectors.len() != texts.len() {
            return Err(Error::Backend {
                status: 200,
                body: format!(
                    "embedding endpoint returned {} vectors for {} texts",
                    vectors.len(),
                    texts.len()
                ),
            });
        }
        EmbeddingIndex::new(
            model,
            index.units.iter().map(|u| u.dataset_id.clone()).collect(),
            vectors,
        )
    }

    pub fn rank_vector(&self, query: &[f64], k: usize) -> Result<RankedList> {
        let scores = self
            .vectors
            .iter()
            .map(|v| cosine(v, query))
            .collect::<Result<Vec<_>>>()?;
        aggregate_ranking(self.unit_datasets.iter().map(String::as_str), &scores, k)
    }

    pub fn embed_search(&self, gateway: &Gateway, query: &str, k: usize) -> Result<RankedList> {
        let q = gateway.embed(&self.model, &[query.to_string()])?;
        let q = q.into_iter().next().ok_or_else(|| Error::Backend {
            status: 200,
            body: "embedding endpoint returned no vector".into(),
        })?;
        self.rank_vector(&q, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockScript};
    use proptest::prelude::*;

    fn ds(id: &str, title: &str, description: &str) -> DatasetRecord {
        DatasetRecord {
            id: id.into(),
            title: title.into(),
            description: description.into(),
            topics: vec![],
            linked_paper_ids: vec![],
        }
    }

    fn unit(d: &str, text: &str) -> DocUnit {
        DocUnit::new(d, UnitSource::Metadata, text).unwrap()
    }

    fn terms(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Tibetan Plateau's lakes"),
            ["tibetan", "plateau", "s", "lakes"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("BM25-index"), ["bm25", "index"]);
    }

    #[test]
    fn unit_counts_per_config() {
        let datasets = vec![ds("a", "A", "x"), ds("b", "B", "y"), ds("c", "C", "z")];
        let aspects: Vec<AspectUnit> = (0..4)
            .map(|i| AspectUnit::new("a", "p", Aspect::Methods, format!("method {i}")))
            .collect();
        let p = Bm25Params::default();
        assert_eq!(build_index(&datasets, &[], IndexConfig::WithPaper, p).unwrap().len(), 3);
        assert_eq!(
            build_index(&datasets, &aspects, IndexConfig::WithPaper, p)
                .unwrap()
                .len(),
            7
        );
        assert_eq!(
            build_index(&datasets, &aspects, IndexConfig::WithoutPaper, p)
                .unwrap()
                .len(),
            3
        );
        assert!(build_index(&[], &aspects, IndexConfig::WithPaper, p).is_err());
    }

    #[test]
    fn absent_term_contributes_zero() {
        let idx = build_index_from_units(
            vec![unit("a", "glacier lake"), unit("b", "river")],
            IndexConfig::WithoutPaper,
            Bm25Params::default(),
        )
        .unwrap();
        assert_eq!(idx.bm25_score(&terms("desert"), 0), 0.0);
        assert_eq!(
            idx.bm25_score(&terms("glacier desert"), 0),
            idx.bm25_score(&terms("glacier"), 0)
        );
    }

    #[test]
    fn single_unit_hand_oracle() {
        // N=1, df=1: idf = ln(0.5/1.5 + 1) = ln(4/3); length = avg so the
        // length norm is 1 and each tf=1 term gives idf * 2.2 / 2.2.
        let idx = build_index_from_units(
            vec![unit("a", "snow cover map")],
            IndexConfig::WithoutPaper,
            Bm25Params::default(),
        )
        .unwrap();
        let expected = 3.0 * (4.0f64 / 3.0).ln();
        assert!((idx.bm25_score(&terms("snow cover map"), 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn three_unit_fixture_oracle() {
        let texts = ["glacier lake outburst lake", "lake level records", "soil moisture"];
        let idx = build_index_from_units(
            texts.iter().map(|t| unit("d", t)).collect(),
            IndexConfig::WithoutPaper,
            Bm25Params::default(),
        )
        .unwrap();
        // avg length = (4+3+2)/3 = 3
        let idf_glacier = ((3.0 - 1.0 + 0.5) / 1.5f64 + 1.0).ln();
        let idf_lake = ((3.0 - 2.0 + 0.5) / 2.5f64 + 1.0).ln();
        let part = |tf: f64, len: f64| tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * len / 3.0));
        let expected = [
            idf_glacier * part(1.0, 4.0) + idf_lake * part(2.0, 4.0),
            idf_lake * part(1.0, 3.0),
            0.0,
        ];
        for (u, e) in expected.iter().enumerate() {
            assert!((idx.bm25_score(&terms("glacier lake"), u) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn search_ties_and_truncation() {
        let units = vec![unit("b", "ice core"), unit("a", "ice core"), unit("c", "pollen")];
        let idx = build_index_from_units(units, IndexConfig::WithoutPaper, Bm25Params::default()).unwrap();
        let r = idx.search("ice", 10).unwrap();
        assert_eq!(r.ids(), ["a", "b", "c"]);
        assert_eq!(idx.search("ice", 1).unwrap().ids(), ["a"]);
        assert!(idx.search("ice", 0).is_err());
    }

    #[test]
    fn max_aggregation() {
        let units = vec![unit("a", "pollen"), unit("a", "ice ice core"), unit("b", "ice")];
        let idx = build_index_from_units(units, IndexConfig::WithPaper, Bm25Params::default()).unwrap();
        let r = idx.search("ice", 5).unwrap();
        let best_a = idx.bm25_score(&terms("ice"), 1);
        assert_eq!(r.entries[r.rank_of("a").unwrap() - 1].1, best_a);
    }

    fn list(ids: &[&str]) -> RankedList {
        RankedList {
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, d)| (d.to_string(), -(i as f64)))
                .collect(),
        }
    }

    #[test]
    fn metric_examples() {
        let runs = vec![(list(&["g", "x"]), "g".to_string())];
        assert_eq!(recall_at_k(&runs, 1).unwrap(), 1.0);
        let runs = vec![
            (list(&["a", "b", "g"]), "g".to_string()),
            (list(&["a", "b", "c", "d", "e", "g"]), "g".to_string()),
        ];
        assert_eq!(recall_at_k(&runs, 5).unwrap(), 0.5);
        let absent = vec![(list(&["a"]), "g".to_string())];
        for k in [1, 5, 100] {
            assert_eq!(recall_at_k(&absent, k).unwrap(), 0.0);
        }
        assert!(recall_at_k(&[], 1).is_err());
        assert!(mrr_at(&[], 100).is_err());

        let at4 = vec![(list(&["a", "b", "c", "g"]), "g".to_string())];
        assert_eq!(mrr_at(&at4, 100).unwrap(), 0.25);
        let ids: Vec<String> = (0..100).map(|i| format!("x{i}")).chain(["g".to_string()]).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let at101 = vec![(list(&refs), "g".to_string())];
        assert_eq!(mrr_at(&at101, 100).unwrap(), 0.0);
    }

    #[test]
    fn chunk_examples() {
        let text = |n: usize| (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let sizes: Vec<usize> = chunk_passages(&text(250), 100)
            .unwrap()
            .iter()
            .map(|c| c.split(' ').count())
            .collect();
        assert_eq!(sizes, [100, 100, 50]);
        assert_eq!(chunk_passages(&text(90), 100).unwrap().len(), 1);
        assert!(chunk_passages("", 100).unwrap().is_empty());
        assert!(chunk_passages("a", 0).is_err());
    }

    #[test]
    fn cosine_ranking() {
        let idx = EmbeddingIndex::new(
            "e",
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
        )
        .unwrap();
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(idx.rank_vector(&[0.0, 1.0], 3).unwrap().ids(), ["b", "c", "a"]);
        // query (2,1): cos with a = 2/sqrt5 ≈ .894, c = 3/sqrt10 ≈ .949, b = 1/sqrt5 ≈ .447
        assert_eq!(idx.rank_vector(&[2.0, 1.0], 3).unwrap().ids(), ["c", "a", "b"]);
        assert!(idx.rank_vector(&[1.0], 3).is_err());
        assert!(EmbeddingIndex::new("e", vec!["a".into(), "b".into()], vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn embed_search_through_gateway() {
        let gw = Gateway::in_memory(Box::new(MockBackend::new(MockScript::default())));
        let units = vec![
            unit("a", "glacier lake outburst floods"),
            unit("b", "urban heat island"),
        ];
        let idx = build_index_from_units(units, IndexConfig::WithoutPaper, Bm25Params::default()).unwrap();
        let emb = EmbeddingIndex::build(&gw, "e", &idx).unwrap();
        let r = emb.embed_search(&gw, "glacier lake outburst floods", 2).unwrap();
        assert_eq!(r.ids()[0], "a");
        assert!((r.entries[0].1 - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn truncation_is_prefix(words in prop::collection::vec("[a-d]{1,2}", 1..40), k in 1usize..10, extra in 0usize..10) {
            let units: Vec<DocUnit> = words.chunks(3).enumerate().map(|(i, c)| unit(&format!("d{}", i % 5), &c.join(" "))).collect();
            let idx = build_index_from_units(units, IndexConfig::WithPaper, Bm25Params::default()).unwrap();
            let short = idx.search("a b", k).unwrap();
            let long = idx.search("a b", k + extra).unwrap();
            prop_assert_eq!(&long.entries[..short.entries.len()], &short.entries[..]);
        }

        #[test]
        fn query_order_invariant(words in prop::collection::vec("[a-e]", 1..30), q in prop::collection::vec("[a-e]", 1..6)) {
            let idx = build_index_from_units(words.chunks(4).map(|c| unit("d", &c.join(" "))).collect(), IndexConfig::WithoutPaper, Bm25Params::default()).unwrap();
            let mut rev = q.clone();
            rev.reverse();
            for u in 0..idx.len() {
                prop_assert!((idx.bm25_score(&q, u) - idx.bm25_score(&rev, u)).abs() < 1e-12);
            }
        }

        #[test]
        fn recall_monotone_and_bounds_mrr(golds in prop::collection::vec(0usize..30, 1..20)) {
            let ids: Vec<String> = (0..20).map(|i| format!("d{i:02}")).collect();
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let runs: Vec<(RankedList, String)> = golds.iter().map(|g| (list(&refs), format!("d{g:02}"))).collect();
            let mut prev = 0.0;
            for k in 1..=25 {
                let r = recall_at_k(&runs, k).unwrap();
                prop_assert!(r >= prev);
                prev = r;
            }
            prop_assert!(mrr_at(&runs, 10).unwrap() <= recall_at_k(&runs, 10).unwrap());
        }
    }
}
