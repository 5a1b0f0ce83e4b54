//! Acceptance suite. Runs offline against the mock backend and prints one
//! PASS/FAIL line per criterion.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scirforge::curation::{parse_aspect_draft, parse_keep_indices, parse_relevance, parse_section_label, AspectDraft};
use scirforge::evalqa::{diversity_index, parse_cognitive_level, rouge_l, rouge_l_tokens, LevelDistribution};
use scirforge::gateway::{Gateway, MockBackend, MockHandler, MockScript, ScoredContinuation};
use scirforge::pipeline::{validate_corpus, Config, RunManifest, Runner};
use scirforge::qagen::{parse_generated, parse_selected_types, GenerationPlan, GenerationPrompts, Generator, Taxonomy};
use scirforge::retrieval::{
    build_index, build_index_from_units, mrr_at, recall_at_k, tokenize, Bm25Params, DocUnit, IndexConfig, RankedList,
    UnitSource,
};
use scirforge::seper::{answer_confidence, curve_points, evaluate_filter, BeliefShiftFilter, ScoringPrompts};
use scirforge::{
    Aspect, AspectUnit, CognitiveLevel, DatasetRecord, Decision, FilterVerdict, Provenance, QAPair, QuestionType,
    SectionLabel,
};

type Check = std::result::Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// scripted belief-shift triplets

struct Triplet {
    question: String,
    context: String,
    answer: String,
    with: Vec<f64>,
    without: Vec<f64>,
}

fn conf(lps: &[f64]) -> f64 {
    (lps.iter().sum::<f64>() / lps.len() as f64).exp()
}

fn script_for(triplets: &[Triplet]) -> MockScript {
    let mut script = MockScript::default();
    for t in triplets {
        script = script
            .score(
                Some(&format!("Context: {}\nQuestion: {}\n", t.context, t.question)),
                None,
                &t.with,
            )
            .score(Some(&format!("Question: {}\n", t.question)), None, &t.without);
    }
    script
}

fn pairs_for(triplets: &[Triplet]) -> (Vec<QAPair>, HashMap<String, String>) {
    let mut contexts = HashMap::new();
    let pairs = triplets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let ds = format!("ds-{i}");
            contexts.insert(ds.clone(), t.context.clone());
            QAPair {
                id: format!("{ds}:verification:0"),
                dataset_id: ds,
                qtype: QuestionType::Verification,
                question: t.question.clone(),
                answer: t.answer.clone(),
                provenance: Provenance::WithPaper,
                verdict: None,
            }
        })
        .collect();
    (pairs, contexts)
}

fn run_filter(triplets: &[Triplet]) -> std::result::Result<Vec<FilterVerdict>, String> {
    let gateway = Gateway::in_memory(Box::new(MockBackend::new(script_for(triplets))));
    let filter = BeliefShiftFilter {
        gateway: &gateway,
        scoring_model: "scorer",
        prompts: ScoringPrompts::default(),
        workers: 4,
    };
    let (pairs, contexts) = pairs_for(triplets);
    let scored = filter.filter_corpus(&pairs, &contexts).map_err(|e| e.to_string())?;
    Ok(scored
        .into_iter()
        .map(|p| p.verdict.expect("verdict attached"))
        .collect())
}

fn random_triplets(r: &mut ChaCha8Rng, n: usize, grid: Option<&[f64]>) -> Vec<Triplet> {
    (0..n)
        .map(|i| {
            let len = r.gen_range(1..=6);
            let draw = |r: &mut ChaCha8Rng| -> Vec<f64> {
                match grid {
                    Some(g) => vec![*g.choose(r).unwrap(); len],
                    None => (0..len).map(|_| -r.gen_range(0.0..5.0)).collect(),
                }
            };
            let with = draw(r);
            let without = if r.gen_bool(0.1) { with.clone() } else { draw(r) };
            let answer = std::iter::once(format!("a{i}"))
                .chain((1..len).map(|j| format!("w{j}")))
                .collect::<Vec<_>>()
                .join(" ");
            Triplet {
                question: format!("q{i} what holds"),
                context: format!("ctx{i} evidence"),
                answer,
                with,
                without,
            }
        })
        .collect()
}

fn criterion_1() -> Check {
    let mut r = rng(1);
    let triplets = random_triplets(&mut r, 1000, None);
    let verdicts = run_filter(&triplets)?;
    let mut zeros = 0;
    for (t, v) in triplets.iter().zip(&verdicts) {
        let expected = conf(&t.with) - conf(&t.without);
        ensure!(
            close(v.delta, expected, 1e-12),
            "delta {} vs expected {expected}",
            v.delta
        );
        ensure!(
            v.delta == v.conf_with - v.conf_without,
            "delta is not conf_with - conf_without"
        );
        ensure!(
            (v.decision == Decision::Accept) == (v.delta > 0.0),
            "decision {:?} for delta {}",
            v.decision,
            v.delta
        );
        if v.delta == 0.0 {
            zeros += 1;
            ensure!(v.decision == Decision::Reject, "zero delta accepted");
        }
    }
    ensure!(zeros > 0, "no zero-delta triplet was exercised");
    for _ in 0..1000 {
        let c = r.gen_range(0.0..1.0);
        ensure!(
            !FilterVerdict::from_confidences(c, c).accepted(),
            "equal confidences accepted"
        );
    }
    Ok(())
}

fn criterion_2() -> Check {
    let mut r = rng(2);
    for _ in 0..1000 {
        let n = r.gen_range(1..200);
        let lps: Vec<f64> = (0..n).map(|_| -r.gen_range(0.0..10.0)).collect();
        let got = answer_confidence(&scored(&lps)).map_err(|e| e.to_string())?;
        ensure!(close(got, conf(&lps), 1e-12), "{got} vs {}", conf(&lps));
    }
    for _ in 0..50 {
        let c: f64 = -r.gen_range(0.0..10.0);
        let base = c.exp();
        for len in 1..=100 {
            let got = answer_confidence(&scored(&vec![c; len])).map_err(|e| e.to_string())?;
            ensure!(close(got, base, 1e-12), "length {len}: {got} vs {base}");
        }
    }
    Ok(())
}

fn scored(lps: &[f64]) -> ScoredContinuation {
    ScoredContinuation::new(vec!["t".to_string(); lps.len()], lps.to_vec()).unwrap()
}

fn criterion_3() -> Check {
    let mut r = rng(3);
    let grid = [-0.1, -0.5, -1.0, -2.0];
    let triplets = random_triplets(&mut r, 100, Some(&grid));
    let verdicts = run_filter(&triplets)?;
    let labels: Vec<bool> = verdicts
        .iter()
        .map(|v| if r.gen_bool(0.2) { v.delta <= 0.0 } else { v.delta > 0.0 })
        .collect();
    let decisions: Vec<Decision> = verdicts.iter().map(|v| v.decision).collect();
    let deltas: Vec<f64> = verdicts.iter().map(|v| v.delta).collect();

    let report = evaluate_filter(&decisions, &labels).map_err(|e| e.to_string())?;
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (d, l) in decisions.iter().zip(&labels) {
        let acc = *d == Decision::Accept;
        tp += (acc && *l) as usize;
        fp += (acc && !*l) as usize;
        fneg += (!acc && *l) as usize;
        tn += (!acc && !*l) as usize;
    }
    ensure!(
        (
            report.true_positives,
            report.false_positives,
            report.false_negatives,
            report.true_negatives
        ) == (tp, fp, fneg, tn),
        "confusion matrix differs"
    );
    let p = tp as f64 / (tp + fp) as f64;
    let rc = tp as f64 / (tp + fneg) as f64;
    let f1 = 2.0 * p * rc / (p + rc);
    ensure!(report.precision == Some(p), "precision {:?} vs {p}", report.precision);
    ensure!(report.recall == rc, "recall {} vs {rc}", report.recall);
    ensure!(report.f1 == Some(f1), "f1 {:?} vs {f1}", report.f1);

    let curves = curve_points(&deltas, &labels).map_err(|e| e.to_string())?;
    let mut thresholds: Vec<f64> = deltas.clone();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    ensure!(thresholds.len() < deltas.len(), "fixture has no tied deltas");
    let pos = labels.iter().filter(|l| **l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let (mut pr, mut roc) = (Vec::new(), Vec::new());
    for &t in &thresholds {
        let tp = deltas.iter().zip(&labels).filter(|(d, l)| **d > t && **l).count() as f64;
        let fp = deltas.iter().zip(&labels).filter(|(d, l)| **d > t && !**l).count() as f64;
        pr.push((tp / pos, if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) }));
        roc.push((fp / neg, tp / pos));
    }
    ensure!(curves.thresholds == thresholds, "thresholds differ");
    ensure!(curves.pr == pr, "PR points differ");
    ensure!(curves.roc == roc, "ROC points differ");
    Ok(())
}

fn random_words(r: &mut ChaCha8Rng, vocab: &[&str], n: usize) -> String {
    (0..n).map(|_| *vocab.choose(r).unwrap()).collect::<Vec<_>>().join(" ")
}

const VOCAB: [&str; 16] = [
    "glacier",
    "lake",
    "soil",
    "moisture",
    "flux",
    "tower",
    "carbon",
    "basin",
    "river",
    "plateau",
    "sensor",
    "landsat",
    "inventory",
    "network",
    "climate",
    "runoff",
];

fn criterion_4() -> Check {
    let mut r = rng(4);
    let gateway = Gateway::in_memory(Box::new(MockBackend::new(
        MockScript::default().handle("select_types", MockHandler::SelectTypesHashed),
    )));
    let taxonomy = Taxonomy::default();
    let prompts = GenerationPrompts::default();
    let generator = Generator {
        gateway: &gateway,
        taxonomy: &taxonomy,
        prompts: &prompts,
        model: "generator",
        temperature: 0.7,
        max_regenerations: 0,
    };
    for i in 0..300 {
        let n_title = r.gen_range(1..8);
        let n_desc = r.gen_range(0..30);
        let d = DatasetRecord {
            id: format!("ds-{i}"),
            title: random_words(&mut r, &VOCAB, n_title),
            description: random_words(&mut r, &VOCAB, n_desc),
            topics: Vec::new(),
            linked_paper_ids: Vec::new(),
        };
        let has_aspects = r.gen_bool(0.5);
        let plan = generator.plan_generation(&d, has_aspects).map_err(|e| e.to_string())?;
        match plan.mode {
            Provenance::WithPaper => {
                ensure!(has_aspects, "with-paper plan without aspects");
                ensure!(plan.total() == 54, "with-paper plan totals {}", plan.total());
                ensure!(
                    plan.quotas.len() == 18 && plan.quotas.values().all(|q| *q == 3),
                    "with-paper quotas uneven"
                );
            }
            Provenance::MetadataOnly => {
                ensure!(!has_aspects, "metadata-only plan with aspects");
                ensure!(plan.total() == 8, "metadata-only plan totals {}", plan.total());
                ensure!(
                    plan.quotas.len() == 8,
                    "metadata-only plan has {} types",
                    plan.quotas.len()
                );
            }
        }
        let mut types = QuestionType::ALL.to_vec();
        types.shuffle(&mut r);
        let plan = GenerationPlan::metadata_only(&d.id, &types[..8]).map_err(|e| e.to_string())?;
        ensure!(plan.total() == 8, "random metadata-only plan totals {}", plan.total());
        ensure!(
            GenerationPlan::metadata_only(&d.id, &types[..7]).is_err(),
            "seven types accepted"
        );
    }
    Ok(())
}

/// Unit scores computed straight from raw token lists, summing query terms
/// in query order.
fn brute_bm25(units: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<f64> {
    let n = units.len() as f64;
    let avg = units.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut scores = vec![0.0; units.len()];
    for q in query {
        let df = units.iter().filter(|u| u.contains(q)).count() as f64;
        if df == 0.0 {
            continue;
        }
        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
        for (i, u) in units.iter().enumerate() {
            let tf = u.iter().filter(|t| *t == q).count();
            if tf == 0 {
                continue;
            }
            let tf = tf as f64;
            let norm = u.len() as f64 / avg;
            scores[i] += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
        }
    }
    scores
}

fn criterion_5() -> Check {
    let mut r = rng(5);
    for corpus in 0..200 {
        let n_units = r.gen_range(1..=50);
        let n_datasets = r.gen_range(1..=10);
        let mut units = Vec::new();
        for _ in 0..n_units {
            let ds = format!("d{:02}", r.gen_range(0..n_datasets));
            let len = r.gen_range(1..=20);
            units.push(DocUnit::new(&ds, UnitSource::Metadata, &random_words(&mut r, &VOCAB, len)).unwrap());
        }
        let params = Bm25Params::default();
        let index = build_index_from_units(units.clone(), IndexConfig::WithPaper, params).map_err(|e| e.to_string())?;
        let raw: Vec<Vec<String>> = units.iter().map(|u| tokenize(&u.text)).collect();
        for _ in 0..5 {
            let qlen = r.gen_range(1..=6);
            let query = random_words(&mut r, &VOCAB, qlen);
            let unit_scores = brute_bm25(&raw, &tokenize(&query), params.k1, params.b);
            let mut best: BTreeMap<&str, f64> = BTreeMap::new();
            for (u, s) in units.iter().zip(&unit_scores) {
                let e = best.entry(u.dataset_id.as_str()).or_insert(f64::NEG_INFINITY);
                *e = e.max(*s);
            }
            let mut expected: Vec<(&str, f64)> = best.into_iter().collect();
            expected.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
            let got = index.search(&query, usize::MAX).map_err(|e| e.to_string())?;
            ensure!(
                got.entries.len() == expected.len(),
                "corpus {corpus}: ranking length differs"
            );
            for ((gd, gs), (ed, es)) in got.entries.iter().zip(&expected) {
                ensure!(
                    gd == ed,
                    "corpus {corpus} query `{query}`: order {:?} vs {:?}",
                    got.ids(),
                    expected
                );
                ensure!(close(*gs, *es, 1e-12), "corpus {corpus}: score {gs} vs {es}");
            }
        }
    }

    for trial in 0..50 {
        let n = r.gen_range(1..=8);
        let datasets: Vec<DatasetRecord> = (0..n)
            .map(|i| DatasetRecord {
                id: format!("ds-{i}"),
                title: random_words(&mut r, &VOCAB, 3),
                description: random_words(&mut r, &VOCAB, 10),
                topics: Vec::new(),
                linked_paper_ids: Vec::new(),
            })
            .collect();
        let aspects: Vec<AspectUnit> = (0..r.gen_range(0..20))
            .map(|_| {
                let a = *Aspect::ALL.choose(&mut r).unwrap();
                let len = r.gen_range(1..15);
                AspectUnit::new(
                    format!("ds-{}", r.gen_range(0..n)),
                    "p",
                    a,
                    random_words(&mut r, &VOCAB, len),
                )
            })
            .collect();
        let p = Bm25Params::default();
        let with = build_index(&datasets, &aspects, IndexConfig::WithPaper, p).map_err(|e| e.to_string())?;
        let without = build_index(&datasets, &aspects, IndexConfig::WithoutPaper, p).map_err(|e| e.to_string())?;
        let aspect_units: Vec<DocUnit> = with
            .units
            .iter()
            .filter(|u| u.source != UnitSource::Metadata)
            .cloned()
            .collect();
        let meta_units: Vec<DocUnit> = with
            .units
            .iter()
            .filter(|u| u.source == UnitSource::Metadata)
            .cloned()
            .collect();
        ensure!(
            meta_units == without.units,
            "trial {trial}: metadata units differ between configurations"
        );
        ensure!(
            aspect_units.len() == aspects.len(),
            "trial {trial}: aspect unit count differs"
        );
        for (u, a) in aspect_units.iter().zip(&aspects) {
            ensure!(
                u.dataset_id == a.dataset_id && u.text == a.text && u.source == UnitSource::Aspect(a.aspect),
                "trial {trial}: aspect unit mismatch"
            );
        }
    }
    Ok(())
}

fn random_run(r: &mut ChaCha8Rng) -> (RankedList, String) {
    let len = r.gen_range(0..30);
    let mut ids: Vec<String> = (0..40).map(|i| format!("d{i}")).collect();
    ids.shuffle(r);
    ids.truncate(len);
    let gold = format!("d{}", r.gen_range(0..40));
    let entries = ids.into_iter().enumerate().map(|(i, d)| (d, -(i as f64))).collect();
    (RankedList { entries }, gold)
}

fn criterion_6() -> Check {
    let mut r = rng(6);
    for _ in 0..200 {
        let runs: Vec<_> = (0..r.gen_range(1..20)).map(|_| random_run(&mut r)).collect();
        for k in [1, 2, 5, 10, 20, 100] {
            let mut hits = 0.0;
            let mut rr = 0.0;
            for (list, gold) in &runs {
                for (pos, (d, _)) in list.entries.iter().enumerate() {
                    if d == gold {
                        if pos < k {
                            hits += 1.0;
                            rr += 1.0 / (pos + 1) as f64;
                        }
                        break;
                    }
                }
            }
            let n = runs.len() as f64;
            let rec = recall_at_k(&runs, k).map_err(|e| e.to_string())?;
            let mrr = mrr_at(&runs, k).map_err(|e| e.to_string())?;
            ensure!(close(rec, hits / n, 1e-12), "recall@{k} {rec} vs {}", hits / n);
            ensure!(close(mrr, rr / n, 1e-12), "mrr@{k} {mrr} vs {}", rr / n);
        }
    }
    for _ in 0..1000 {
        let runs: Vec<_> = (0..r.gen_range(1..10)).map(|_| random_run(&mut r)).collect();
        let mut prev = 0.0;
        for k in 1..=32 {
            let v = recall_at_k(&runs, k).map_err(|e| e.to_string())?;
            ensure!(v >= prev, "recall@{k} = {v} < recall@{} = {prev}", k - 1);
            prev = v;
        }
    }
    Ok(())
}

fn dp_lcs(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

fn criterion_7() -> Check {
    let mut r = rng(7);
    let vocab = &VOCAB[..6];
    for _ in 0..500 {
        let la = r.gen_range(0..=200);
        let lb = r.gen_range(0..=200);
        let a: Vec<String> = (0..la).map(|_| vocab.choose(&mut r).unwrap().to_string()).collect();
        let b: Vec<String> = (0..lb).map(|_| vocab.choose(&mut r).unwrap().to_string()).collect();
        let l = dp_lcs(&a, &b) as f64;
        let (p, rc) = if l == 0.0 {
            (0.0, 0.0)
        } else {
            (l / la as f64, l / lb as f64)
        };
        let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        let got = rouge_l_tokens(&a, &b);
        ensure!(
            close(got.precision, p, 1e-12) && close(got.recall, rc, 1e-12) && close(got.f, f, 1e-12),
            "rouge ({}, {}, {}) vs ({p}, {rc}, {f})",
            got.precision,
            got.recall,
            got.f
        );
    }
    let text = "Glacial lakes expanded by 20% between 1990 and 2020.";
    ensure!(rouge_l(text, text).f == 1.0, "identical text does not score 1");
    ensure!(
        rouge_l("soil moisture network", "glacier lake inventory").f == 0.0,
        "disjoint text does not score 0"
    );
    Ok(())
}

fn criterion_8() -> Check {
    let div = |counts: [u64; 6]| diversity_index(&LevelDistribution { counts }).map_err(|e| e.to_string());
    ensure!(
        close(div([7; 6])?, 0.833333, 1e-6) && close(div([7; 6])?, 5.0 / 6.0, 1e-9),
        "uniform counts"
    );
    for i in 0..6 {
        let mut c = [0; 6];
        c[i] = 13;
        ensure!(div(c)? == 0.0, "single level {i} is not 0");
    }
    let mut r = rng(8);
    for _ in 0..1000 {
        let counts: [u64; 6] = std::array::from_fn(|_| r.gen_range(0..50));
        if counts.iter().sum::<u64>() == 0 {
            continue;
        }
        let n = counts.iter().sum::<u64>() as f64;
        let expected = 1.0 - counts.iter().map(|c| (*c as f64 / n).powi(2)).sum::<f64>();
        let got = div(counts)?;
        ensure!(close(got, expected, 1e-12), "{counts:?}: {got} vs {expected}");
        ensure!(got <= 5.0 / 6.0 + 1e-12, "{counts:?}: {got} above the 5/6 bound");
    }
    Ok(())
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn run_fixture(out: &Path) -> std::result::Result<(), String> {
    let mut config = Config::load(&fixture_dir().join("config.toml")).map_err(|e| e.to_string())?;
    config.paths.run_dir = Some(out.to_path_buf());
    let runner = Runner::new(config).map_err(|e| e.to_string())?;
    runner.run_all().map_err(|e| e.to_string())?;
    Ok(())
}

fn list_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_9() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_fixture(a.path())?;
    run_fixture(b.path())?;
    let report = validate_corpus(a.path()).map_err(|e| e.to_string())?;
    ensure!(report.is_clean(), "validation violations: {:?}", report.violations);
    ensure!(
        report.files_checked.len() >= 7,
        "only {:?} checked",
        report.files_checked
    );

    let files = list_files(a.path());
    ensure!(
        files == list_files(b.path()),
        "the two runs produced different file sets"
    );
    for f in &files {
        if f == Path::new("manifest.json") {
            let ma = RunManifest::load(&a.path().join(f))
                .map_err(|e| e.to_string())?
                .unwrap();
            let mb = RunManifest::load(&b.path().join(f))
                .map_err(|e| e.to_string())?
                .unwrap();
            ensure!(
                ma.without_timestamps() == mb.without_timestamps(),
                "manifests differ beyond timestamps"
            );
            continue;
        }
        let ba = std::fs::read(a.path().join(f)).unwrap();
        let bb = std::fs::read(b.path().join(f)).unwrap();
        ensure!(ba == bb, "{} differs between runs", f.display());
    }
    for required in [
        "qapairs.jsonl",
        "accepted.jsonl",
        "reports/stats.csv",
        "reports/retrieval.csv",
    ] {
        ensure!(files.iter().any(|f| f == Path::new(required)), "{required} missing");
    }
    Ok(())
}

fn draft(background: usize, methods: usize) -> AspectDraft {
    let mut d = AspectDraft::default();
    for i in 0..background {
        d.push(Aspect::Background, format!("bg {i}"));
    }
    for i in 0..methods {
        d.push(Aspect::Methods, format!("m {i}"));
    }
    d
}

type Case = (&'static str, Box<dyn Fn() -> Check>);

fn expect_err<T: std::fmt::Debug>(r: scirforge::Result<T>) -> Check {
    match r {
        Err(scirforge::Error::Parse { .. }) => Ok(()),
        other => Err(format!("expected a parse error, got {other:?}")),
    }
}

fn ok<T>(r: scirforge::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn level(raw: &'static str, want: CognitiveLevel) -> Box<dyn Fn() -> Check> {
    Box::new(move || {
        let got = ok(parse_cognitive_level(raw))?;
        ensure!(got == want, "{got:?}");
        Ok(())
    })
}

const EIGHT: &str =
    "Quantification, Definition, Verification, Comparison, Causal Antecedent, Enablement, Judgmental, Example";

fn parser_cases() -> Vec<Case> {
    vec![
        (
            "relevance: canonical yes",
            Box::new(|| {
                let v = ok(parse_relevance("USED: Yes\nEXPLANATION: matching methodology"))?;
                ensure!(v.used && v.explanation == "matching methodology", "{v:?}");
                Ok(())
            }),
        ),
        (
            "relevance: lowercase markers",
            Box::new(|| {
                ensure!(
                    ok(parse_relevance("used: yes\nexplanation: they sample it"))?.used,
                    "not used"
                );
                Ok(())
            }),
        ),
        (
            "relevance: bold markdown no",
            Box::new(|| {
                let v = ok(parse_relevance("**USED:** No\n**EXPLANATION:** unrelated basin"))?;
                ensure!(!v.used, "{v:?}");
                Ok(())
            }),
        ),
        (
            "relevance: leading prose",
            Box::new(|| {
                ensure!(
                    ok(parse_relevance(
                        "Sure, here is my assessment.\n  USED: YES.\nEXPLANATION: they download it"
                    ))?
                    .used,
                    "not used"
                );
                Ok(())
            }),
        ),
        (
            "relevance: fenced block",
            Box::new(|| {
                let v = ok(parse_relevance("```\nUSED: Yes\nEXPLANATION: fenced reply\n```"))?;
                ensure!(v.used && v.explanation == "fenced reply", "{v:?}");
                Ok(())
            }),
        ),
        (
            "relevance: negative without explanation",
            Box::new(|| {
                ensure!(!ok(parse_relevance("USED: No"))?.used, "used");
                Ok(())
            }),
        ),
        (
            "relevance: missing marker",
            Box::new(|| expect_err(parse_relevance("The paper is relevant."))),
        ),
        (
            "relevance: unrecognized value",
            Box::new(|| expect_err(parse_relevance("USED: maybe\nEXPLANATION: unsure"))),
        ),
        (
            "relevance: positive without explanation",
            Box::new(|| expect_err(parse_relevance("USED: Yes"))),
        ),
        (
            "section: plain label",
            Box::new(|| {
                ensure!(parse_section_label("Method") == SectionLabel::Method, "not method");
                Ok(())
            }),
        ),
        (
            "section: case and plural drift",
            Box::new(|| {
                ensure!(
                    parse_section_label("  RELATED WORKS\n") == SectionLabel::RelatedWork,
                    "not related work"
                );
                ensure!(
                    parse_section_label("experiments") == SectionLabel::Experiment,
                    "not experiment"
                );
                Ok(())
            }),
        ),
        (
            "section: unknown label is None",
            Box::new(|| {
                ensure!(
                    parse_section_label("I am not sure what this is.") == SectionLabel::None,
                    "not None"
                );
                Ok(())
            }),
        ),
        (
            "aspects: None values are empty",
            Box::new(|| {
                let d = ok(parse_aspect_draft(
                "Background: A. B.\nMethods: None\nResearch Objective: None\nChallenges: None\nDataset: None\nFindings: None",
            ))?;
                ensure!(
                    d.get(Aspect::Background) == ["A. B."] && d.get(Aspect::Methods).is_empty(),
                    "{d:?}"
                );
                ensure!(d.total() == 1, "{d:?}");
                Ok(())
            }),
        ),
        (
            "aspects: no headers",
            Box::new(|| expect_err(parse_aspect_draft("This paper studies lakes."))),
        ),
        (
            "aspects: prose and NONE drift",
            Box::new(|| {
                let d = ok(parse_aspect_draft(
                    "Here you go:\n\nBackground: lakes grow\nFindings: NONE.",
                ))?;
                ensure!(
                    d.get(Aspect::Background) == ["lakes grow"] && d.get(Aspect::Findings).is_empty(),
                    "{d:?}"
                );
                Ok(())
            }),
        ),
        (
            "aspects: bullet lists",
            Box::new(|| {
                let d = ok(parse_aspect_draft("Methods:\n- step one\n- step two\nFindings: n/a"))?;
                ensure!(d.get(Aspect::Methods) == ["step one", "step two"], "{d:?}");
                Ok(())
            }),
        ),
        (
            "aspects: fenced block",
            Box::new(|| {
                let d = ok(parse_aspect_draft(
                    "```\nBackground: x grows.\nDataset: used as forcing.\n```",
                ))?;
                ensure!(
                    d.get(Aspect::Background) == ["x grows."] && d.get(Aspect::Dataset) == ["used as forcing."],
                    "{d:?}"
                );
                Ok(())
            }),
        ),
        (
            "aspects: bold and numbered headers",
            Box::new(|| {
                let d = ok(parse_aspect_draft(
                    "1. **Research Objective:** map lakes\n2. **Challenges:** clouds",
                ))?;
                ensure!(
                    d.get(Aspect::ResearchObjective) == ["map lakes"] && d.get(Aspect::Challenges) == ["clouds"],
                    "{d:?}"
                );
                Ok(())
            }),
        ),
        (
            "keep: canonical lists",
            Box::new(|| {
                let k = ok(parse_keep_indices(
                    "KEEP-INDICES:\nBackground: [1, 3]\nMethods: [1]\nREASON: fine",
                    &draft(3, 1),
                ))?;
                ensure!(
                    k[Aspect::Background.index()] == Some(vec![1, 3]) && k[Aspect::Methods.index()] == Some(vec![1]),
                    "{k:?}"
                );
                Ok(())
            }),
        ),
        (
            "keep: out of range",
            Box::new(|| expect_err(parse_keep_indices("KEEP-INDICES:\nBackground: [5]", &draft(3, 0)))),
        ),
        (
            "keep: zero index",
            Box::new(|| expect_err(parse_keep_indices("KEEP-INDICES:\nBackground: [0]", &draft(3, 0)))),
        ),
        (
            "keep: missing marker",
            Box::new(|| expect_err(parse_keep_indices("Background: [1]", &draft(3, 0)))),
        ),
        (
            "keep: case drift and none",
            Box::new(|| {
                let k = ok(parse_keep_indices(
                    "keep indices:\nbackground: 2\nmethods: none",
                    &draft(3, 1),
                ))?;
                ensure!(
                    k[Aspect::Background.index()] == Some(vec![2]) && k[Aspect::Methods.index()] == Some(vec![]),
                    "{k:?}"
                );
                Ok(())
            }),
        ),
        (
            "keep: entry on the marker line",
            Box::new(|| {
                let k = ok(parse_keep_indices("**KEEP-INDICES:** Background: [2]", &draft(3, 0)))?;
                ensure!(k[Aspect::Background.index()] == Some(vec![2]), "{k:?}");
                Ok(())
            }),
        ),
        (
            "types: comma separated",
            Box::new(|| {
                let t = ok(parse_selected_types(EIGHT))?;
                ensure!(
                    t.len() == 8 && t[0] == QuestionType::Quantification && t[4] == QuestionType::CausalAntecedent,
                    "{t:?}"
                );
                Ok(())
            }),
        ),
        (
            "types: numbered list with glosses",
            Box::new(|| {
                let raw = EIGHT
                    .split(", ")
                    .enumerate()
                    .map(|(i, n)| format!("{}. {n}: because it fits", i + 1))
                    .collect::<Vec<_>>()
                    .join("\n");
                ensure!(ok(parse_selected_types(&raw))?.len() == 8, "not 8");
                Ok(())
            }),
        ),
        (
            "types: duplicates and case drift",
            Box::new(|| {
                let t = ok(parse_selected_types(&format!(
                    "VERIFICATION\nverification\n{EIGHT}, Assertion"
                )))?;
                ensure!(
                    t.len() == 8 && t[0] == QuestionType::Verification && !t.contains(&QuestionType::Assertion),
                    "{t:?}"
                );
                Ok(())
            }),
        ),
        (
            "types: too few valid names",
            Box::new(|| expect_err(parse_selected_types("Quantification, Definition, Haiku, Limerick"))),
        ),
        (
            "types: slash spelling",
            Box::new(|| {
                let t = ok(parse_selected_types(&format!("Instrumental/Procedural\n{EIGHT}")))?;
                ensure!(t[0] == QuestionType::InstrumentalProcedural, "{t:?}");
                Ok(())
            }),
        ),
        (
            "qa: fenced JSON",
            Box::new(|| {
                let (p, _) = ok(parse_generated(
                    "```json\n[{\"question\": \"q?\", \"answer\": \"a.\"}]\n```",
                    3,
                ))?;
                ensure!(p == [("q?".to_string(), "a.".to_string())], "{p:?}");
                Ok(())
            }),
        ),
        (
            "qa: prose around array and key case",
            Box::new(|| {
                let (p, _) = ok(parse_generated(
                    "Here are the pairs:\n[{\"Question\": \"q\", \"Answer\": \"a\"}]\nHope this helps [1].",
                    3,
                ))?;
                ensure!(p.len() == 1, "{p:?}");
                Ok(())
            }),
        ),
        (
            "qa: not JSON",
            Box::new(|| expect_err(parse_generated("Q: what? A: that.", 3))),
        ),
        (
            "qa: truncated array",
            Box::new(|| expect_err(parse_generated("[{\"question\": \"q\", \"answer\": ", 3))),
        ),
        (
            "qa: no valid objects",
            Box::new(|| {
                expect_err(parse_generated(
                    "[{\"q\": 1}, \"text\", {\"question\": \"\", \"answer\": \"a\"}]",
                    3,
                ))
            }),
        ),
        (
            "qa: partial validity warns",
            Box::new(|| {
                let (p, w) = ok(parse_generated(
                    "[{\"question\": \"q\", \"answer\": \"a\"}, {\"question\": \"x\"}]",
                    3,
                ))?;
                ensure!(p.len() == 1 && w.len() == 1, "{p:?} {w:?}");
                Ok(())
            }),
        ),
        (
            "qa: truncated to n",
            Box::new(|| {
                let items = (0..5)
                    .map(|i| format!("{{\"question\": \"q{i}\", \"answer\": \"a{i}\"}}"))
                    .collect::<Vec<_>>()
                    .join(",");
                let (p, _) = ok(parse_generated(&format!("[{items}]"), 3))?;
                ensure!(p.len() == 3 && p[2].0 == "q2", "{p:?}");
                Ok(())
            }),
        ),
        ("level: bare code", level("C3", CognitiveLevel::C3)),
        (
            "level: spaced lowercase with prose",
            level("Level: c 4 (Analyzing)", CognitiveLevel::C4),
        ),
        ("level: bold code", level("**C2** Understanding", CognitiveLevel::C2)),
        (
            "level: repeated same code",
            level("C5. The answer is C5.", CognitiveLevel::C5),
        ),
        (
            "level: two codes",
            Box::new(|| expect_err(parse_cognitive_level("C2 or C3"))),
        ),
        (
            "level: name without code",
            Box::new(|| expect_err(parse_cognitive_level("Applying"))),
        ),
        (
            "level: out of range code",
            Box::new(|| expect_err(parse_cognitive_level("C7"))),
        ),
    ]
}

fn criterion_10() -> Check {
    let cases = parser_cases();
    ensure!(cases.len() >= 30, "only {} cases", cases.len());
    let failures: Vec<String> = cases
        .iter()
        .filter_map(|(name, case)| case().err().map(|e| format!("{name}: {e}")))
        .collect();
    ensure!(
        failures.is_empty(),
        "{} of {} cases failed: {}",
        failures.len(),
        cases.len(),
        failures.join("; ")
    );
    Ok(())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("belief-shift sign rule", criterion_1),
        ("confidence estimator", criterion_2),
        ("filter evaluation", criterion_3),
        ("generation plans", criterion_4),
        ("BM25 correctness", criterion_5),
        ("ranking metric oracles", criterion_6),
        ("ROUGE-L", criterion_7),
        ("diversity index", criterion_8),
        ("end-to-end determinism", criterion_9),
        ("parser robustness", criterion_10),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let ms = t.elapsed().as_millis();
        match result {
            Ok(()) => println!("criterion {:>2} PASS  {name} ({ms} ms)", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({ms} ms): {e}", i + 1);
            }
        }
    }
    let total = start.elapsed();
    println!(
        "{} of {} criteria passed in {:.1} s",
        criteria.len() - failed,
        criteria.len(),
        total.as_secs_f64()
    );
    if failed > 0 || total.as_secs() >= 60 {
        std::process::exit(1);
    }
}
