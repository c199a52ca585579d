mod common;

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use common::*;
use litkb_core::ingest::DocType;
use litkb_core::provider::{LookupEmbedder, NoCompounds, ProviderError};
use litkb_core::qa::{QaConfig, QaDeps};
use litkb_core::research::ResearchError;
use litkb_core::{QaEngine, ResearchEngine, ResearchRequest, SearchParams, VectorStore};
use rand::Rng;

fn research_engine(store: Arc<VectorStore>, text: Arc<Router>, vectors: HashMap<String, Vec<f32>>, dim: usize, par: usize) -> ResearchEngine {
    let qa = QaEngine::new(
        QaDeps {
            store,
            text,
            embedder: Arc::new(LookupEmbedder::new(dim, vectors)),
            compounds: Arc::new(NoCompounds),
        },
        QaConfig {
            dimension: dim,
            ..QaConfig::default()
        },
    );
    ResearchEngine::new(qa, par)
}

fn subquestions(run: u64, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("Run {run} aspect {i}?")).collect()
}

#[test]
fn review_context_is_exclusively_reviews_for_every_corpus() {
    let dim = 16;
    for seed in 0..60u64 {
        let mut r = rng(500 + seed);
        let (n_docs, n_chunks) = (r.random_range(2..25), r.random_range(5..120));
        let corpus = SynthCorpus::generate(&mut r, dim, n_docs, n_chunks, 3);
        let types: HashMap<String, DocType> = corpus.docs.iter().map(|d| (d.id.clone(), d.doc_type)).collect();
        let store = Arc::new(corpus.store());
        for c in 0..corpus.centers.len() {
            let topic = format!("topic {seed}/{c}");
            let qv = corpus.centers[c].clone();
            let overview_refs = Arc::new(std::sync::Mutex::new(Vec::new()));
            let seen = overview_refs.clone();
            let text = Arc::new(Router::new(move |kind, req| match kind {
                PromptKind::Overview => {
                    seen.lock().unwrap().push(req.prompt.clone());
                    Ok("overview".into())
                }
                PromptKind::SubQuestions => Ok(String::new()),
                PromptKind::Relevance => Ok("no".into()),
                _ => Ok(citing_answer(req)),
            }));
            let engine = research_engine(store.clone(), text, HashMap::from([(topic.clone(), qv.clone())]), dim, 2);
            let report = engine.run_research(&ResearchRequest::new(topic)).unwrap();
            for h in &report.review_trace {
                assert_eq!(types[&h.doc_id], DocType::Review, "seed {seed}: {}", h.chunk_id);
            }
            for cit in &report.overview_citations {
                assert_eq!(types[&cit.doc_id], DocType::Review);
            }
            let params = SearchParams {
                doc_type_filter: Some(DocType::Review),
                ..SearchParams::default()
            };
            let want = ref_hierarchical(&corpus, &qv, &params);
            if let Some(d) = diff_hits(&report.review_trace, &want, 1e-9) {
                panic!("seed {seed} center {c}: {d}");
            }
            let prompt = &overview_refs.lock().unwrap()[0];
            for line in prompt.lines().filter(|l| l.starts_with("[ref ")) {
                let chunk = line.split(" :: ").nth(1).unwrap();
                let id = chunk.trim_start_matches("Passage ").split(':').next().unwrap();
                let doc = id.split('#').next().unwrap();
                assert_eq!(types[doc], DocType::Review, "overview block {line}");
            }
        }
    }
}

#[test]
fn bibliography_is_consistent_over_random_runs() {
    let dim = 16;
    let mut degraded = 0;
    for run in 0..100u64 {
        let mut r = rng(9_000 + run);
        let (n_docs, n_chunks) = (r.random_range(3..25), r.random_range(10..100));
        let corpus = SynthCorpus::generate(&mut r, dim, n_docs, n_chunks, 3);
        let store = Arc::new(corpus.store());
        let n = r.random_range(1..=6);
        let max_sub = r.random_range(1..=8);
        let topic = format!("Research topic {run}");
        let qs = subquestions(run, n);
        let mut vectors = HashMap::from([(topic.clone(), corpus.query(&mut r))]);
        for q in &qs {
            vectors.insert(q.clone(), corpus.query(&mut r));
        }
        let fail_overview = r.random_bool(0.15);
        let fail_synthesis = r.random_bool(0.15);
        let listing = qs.join("\n");
        let text = Arc::new(Router::new(move |kind, req| match kind {
            PromptKind::Overview if fail_overview => Err(ProviderError::Timeout),
            PromptKind::Overview => Ok(citing_answer(req)),
            PromptKind::SubQuestions => Ok(listing.clone()),
            PromptKind::Synthesis if fail_synthesis => Err(ProviderError::Timeout),
            PromptKind::Synthesis => Ok(req.prompt.clone()),
            PromptKind::Relevance => Ok("no".into()),
            _ => Ok(citing_answer(req)),
        }));
        let par = r.random_range(1..4);
        let engine = research_engine(store, text.clone(), vectors.clone(), dim, par);
        let mut req = ResearchRequest::new(topic);
        req.max_subquestions = max_sub;
        let report = engine.run_research(&req).unwrap();
        let expected_n = n.min(max_sub);
        let asked: Vec<&str> = report.sub_answers.iter().map(|s| s.question.as_str()).collect();
        assert_eq!(asked, qs[..expected_n].iter().map(String::as_str).collect::<Vec<_>>());

        // independent consolidation: first appearance over overview then sub-answers
        let mut order: Vec<String> = Vec::new();
        for d in report
            .overview_citations
            .iter()
            .chain(report.sub_answers.iter().flat_map(|s| &s.response.citations))
            .map(|c| &c.doc_id)
        {
            if !order.contains(d) {
                order.push(d.clone());
            }
        }
        let bib: Vec<String> = report.bibliography.iter().map(|c| c.doc_id.clone()).collect();
        assert_eq!(bib, order, "run {run}");
        let idx: Vec<usize> = report.bibliography.iter().map(|c| c.ref_index).collect();
        assert_eq!(idx, (1..=bib.len()).collect::<Vec<_>>());

        let traced: HashSet<&str> = report
            .review_trace
            .iter()
            .chain(report.sub_answers.iter().flat_map(|s| &s.response.trace))
            .map(|h| h.doc_id.as_str())
            .collect();
        for c in &report.bibliography {
            assert!(traced.contains(c.doc_id.as_str()));
            let original = report
                .overview_citations
                .iter()
                .chain(report.sub_answers.iter().flat_map(|s| &s.response.citations))
                .find(|o| o.doc_id == c.doc_id)
                .unwrap();
            assert_eq!(original.formatted, c.formatted);
        }
        for s in &report.sub_answers {
            assert_eq!(s.bibliography_refs.len(), s.response.citations.len());
            for (c, &g) in s.response.citations.iter().zip(&s.bibliography_refs) {
                assert_eq!(report.bibliography[g - 1].doc_id, c.doc_id);
            }
        }
        if fail_synthesis {
            assert!(report.synthesis.is_empty());
            assert!(report.warnings.iter().any(|w| w.contains("synthesis")));
        } else {
            for c in &report.bibliography {
                assert!(report.synthesis.contains(&format!("[ref {}] {}", c.ref_index, c.formatted)));
            }
        }
        if fail_overview {
            degraded += 1;
            assert!(report.overview.is_empty());
        }

        let k = 2;
        assert!(text.total_calls() <= 3 + expected_n * k, "run {run}: {} calls", text.total_calls());
        assert_eq!(text.calls(PromptKind::Answer), expected_n);
        assert_eq!(text.calls(PromptKind::Relevance), expected_n);
    }
    assert!(degraded > 0);
}

#[test]
fn one_failing_subquestion_does_not_sink_the_report() {
    let dim = 16;
    let mut r = rng(77);
    let corpus = SynthCorpus::generate(&mut r, dim, 12, 60, 2);
    let store = Arc::new(corpus.store());
    let qs = subquestions(0, 3);
    let mut vectors = HashMap::from([("Topic".to_string(), corpus.centers[0].clone())]);
    for (i, q) in qs.iter().enumerate() {
        vectors.insert(q.clone(), corpus.centers[i + 1].clone());
    }
    let listing = qs.join("\n");
    let bad = qs[1].clone();
    let text = Arc::new(Router::new(move |kind, req| match kind {
        PromptKind::SubQuestions => Ok(listing.clone()),
        PromptKind::Answer if question_of(&req.prompt) == bad => {
            Err(ProviderError::Status { status: 500, body: "down".into() })
        }
        PromptKind::Relevance => Ok("no".into()),
        _ => Ok(citing_answer(req)),
    }));
    let engine = research_engine(store.clone(), text, vectors.clone(), dim, 2);
    let report = engine.run_research(&ResearchRequest::new("Topic")).unwrap();
    assert_eq!(report.sub_answers.len(), 2);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].question, qs[1]);
    assert!(!report.synthesis.is_empty());

    let listing = qs.join("\n");
    let all_down = Arc::new(Router::new(move |kind, req| match kind {
        PromptKind::SubQuestions => Ok(listing.clone()),
        PromptKind::Answer => Err(ProviderError::Timeout),
        _ => Ok(citing_answer(req)),
    }));
    let engine = research_engine(store, all_down.clone(), vectors, dim, 3);
    match engine.run_research(&ResearchRequest::new("Topic")) {
        Err(ResearchError::AllSubquestionsFailed(3, failures)) => assert_eq!(failures.len(), 3),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(all_down.calls(PromptKind::Synthesis), 0);
}

#[test]
fn subquestion_failure_falls_back_to_topic() {
    let dim = 16;
    let mut r = rng(3);
    let corpus = SynthCorpus::generate(&mut r, dim, 6, 30, 2);
    let text = Arc::new(Router::new(|kind, req| match kind {
        PromptKind::SubQuestions => Err(ProviderError::Timeout),
        PromptKind::Relevance => Ok("no".into()),
        _ => Ok(citing_answer(req)),
    }));
    let engine = research_engine(
        Arc::new(corpus.store()),
        text.clone(),
        HashMap::from([("Topic".to_string(), corpus.centers[2].clone())]),
        dim,
        2,
    );
    let report = engine.run_research(&ResearchRequest::new("Topic")).unwrap();
    assert_eq!(report.sub_answers.len(), 1);
    assert_eq!(report.sub_answers[0].question, "Topic");
    assert!(!report.warnings.is_empty());
    assert!(text.total_calls() <= 3 + 2);
}

#[test]
fn fixture_research_uses_only_the_three_reviews() {
    let dim = 256;
    let store = Arc::new(fixture_store(dim));
    let text = Arc::new(Router::new(|kind, req| match kind {
        PromptKind::SubQuestions => Ok("How is taxadiene made?\nWhich enzymes oxidize amorphadiene?".into()),
        PromptKind::Relevance => Ok("no".into()),
        _ => Ok(citing_answer(req)),
    }));
    let qa = QaEngine::new(
        QaDeps {
            store,
            text,
            embedder: Arc::new(litkb_core::provider::HashEmbedder::new(dim)),
            compounds: Arc::new(NoCompounds),
        },
        QaConfig {
            dimension: dim,
            ..QaConfig::default()
        },
    );
    let engine = ResearchEngine::new(qa, 2);
    let mut req = ResearchRequest::new("terpenoid biosynthesis");
    req.params.min_score = 0.0;
    let report = engine.run_research(&req).unwrap();
    let reviews: HashSet<&str> = ["rev-taxane", "rev-artemisinin", "rev-terpene-synthases"].into();
    assert!(!report.review_trace.is_empty());
    assert!(report.review_trace.iter().all(|h| reviews.contains(h.doc_id.as_str())));
    assert!(report.bibliography.iter().any(|c| !reviews.contains(c.doc_id.as_str())));
}
