mod common;

use std::collections::HashMap;

use common::oracles::rel_close;
use nestcall::parallel::Parallelism;
use nestcall::registry::{Category, ToolRecord, ToolRegistry};
use nestcall::retrieval::{
    build_index, build_or_load_index, rank_by_key, retrieve_top_k, EmbeddingProvider,
    EmbeddingVector, HashingEmbedder, KeyKind, RetrievalConfig, RetrievalError,
};

/// Bag-of-words vector built from scratch: alphanumeric runs, lower-cased,
/// FNV-1a 64 bucketed into 256 slots, L2-normalized.
fn oracle_vector(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; 256];
    let lower = text.to_lowercase();
    for tok in lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let mut h: u64 = 14695981039346656037;
        for b in tok.bytes() {
            h = (h ^ b as u64).wrapping_mul(1099511628211);
        }
        v[(h % 256) as usize] += 1.0;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn oracle_cosine(a: &str, b: &str) -> f64 {
    oracle_vector(a)
        .iter()
        .zip(oracle_vector(b))
        .map(|(x, y)| x * y)
        .sum()
}

fn setup() -> (
    ToolRegistry,
    nestcall::retrieval::ToolIndex,
    HashingEmbedder,
) {
    let reg = ToolRegistry::builtin();
    let tools: Vec<&ToolRecord> = reg.records().iter().collect();
    let emb = HashingEmbedder::default();
    let idx = build_index(&tools, &emb, Parallelism::Sequential).unwrap();
    (reg, idx, emb)
}

#[test]
fn mock_vectors_match_oracle() {
    let emb = HashingEmbedder::default();
    for text in [
        "Total Cholesterol",
        "total cholesterol mmol/L to mg/dL",
        "HbA1c, 7.2% (x2)",
    ] {
        let got = emb.embed_batch(&[text.to_string()]).unwrap().remove(0);
        for (g, o) in got.components.iter().zip(oracle_vector(text)) {
            assert!((g - o).abs() < 1e-15);
        }
    }
}

#[test]
fn cholesterol_query_prefers_total_cholesterol() {
    let (_, idx, emb) = setup();
    let q = "total cholesterol mmol/L to mg/dL";
    assert!(oracle_cosine(q, "Total Cholesterol") > oracle_cosine(q, "Methanol"));
    let list = rank_by_key(&idx, &emb, q, KeyKind::Name).unwrap();
    let pos = |n: &str| list.names().iter().position(|x| *x == n).unwrap();
    assert!(pos("Total Cholesterol") < pos("Methanol"));
    for item in &list.items {
        assert!(
            (item.score - oracle_cosine(q, &item.tool_name)).abs() < 1e-12,
            "{}",
            item.tool_name
        );
    }
}

#[test]
fn exact_name_ranks_first() {
    let (reg, idx, emb) = setup();
    for t in reg.records() {
        let list = rank_by_key(&idx, &emb, &t.tool_name, KeyKind::Name).unwrap();
        assert_eq!(list.items[0].tool_name, t.tool_name);
        assert!(rel_close(list.items[0].score, 1.0, 1e-12));
    }
}

#[test]
fn index_sizes() {
    let (reg, idx, _) = setup();
    assert_eq!(idx.len(), reg.len());
    assert_eq!(idx.vector_count(), 3 * reg.len());
    let one = [&reg.records()[0]];
    assert_eq!(
        build_index(&one, &HashingEmbedder::default(), Parallelism::Sequential)
            .unwrap()
            .vector_count(),
        3
    );
    assert!(matches!(
        build_index(&[], &HashingEmbedder::default(), Parallelism::Sequential),
        Err(RetrievalError::EmptyToolSet)
    ));
}

#[test]
fn parallel_build_is_identical() {
    let (reg, seq, emb) = setup();
    let tools: Vec<&ToolRecord> = reg.records().iter().collect();
    let par = build_index(&tools, &emb, Parallelism::Threads(4)).unwrap();
    assert_eq!(
        serde_json::to_string(&seq).unwrap(),
        serde_json::to_string(&par).unwrap()
    );
}

#[test]
fn cache_round_trip_and_staleness() {
    let (reg, built, emb) = setup();
    let tools: Vec<&ToolRecord> = reg.records().iter().collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.json");
    let first = build_or_load_index(&tools, &emb, Some(&path), Parallelism::Sequential).unwrap();
    assert_eq!(first, built);
    let again = build_or_load_index(&tools, &emb, Some(&path), Parallelism::Sequential).unwrap();
    assert_eq!(again, built);
    let other = HashingEmbedder { dimension: 64 };
    let rebuilt =
        build_or_load_index(&tools, &other, Some(&path), Parallelism::Sequential).unwrap();
    assert_eq!(rebuilt.dimension, 64);
}

#[test]
fn unit_scope_retrieval_for_cholesterol_rewrites() {
    let (_, idx, emb) = setup();
    let queries: Vec<String> = [
        "Convert total cholesterol from mmol/L to mg/dL",
        "Total cholesterol 8.3 mmol/L in mg/dL",
        "Cholesterol unit conversion",
    ]
    .map(String::from)
    .to_vec();
    let fused = retrieve_top_k(
        &idx,
        &emb,
        &queries,
        &KeyKind::ALL,
        Some(Category::Unit),
        &RetrievalConfig::default(),
    )
    .unwrap();
    assert_eq!(fused.items.len(), 5);
    assert!(fused.names().contains(&"Total Cholesterol"));
    assert_eq!(fused.source_count, 9);
}

#[test]
fn top_one_in_single_tool_scope() {
    let reg = ToolRegistry::builtin();
    let tools = [reg.get("Length").unwrap()];
    let emb = HashingEmbedder::default();
    let idx = build_index(&tools, &emb, Parallelism::Sequential).unwrap();
    let cfg = RetrievalConfig {
        top_k: 1,
        ..Default::default()
    };
    let fused = retrieve_top_k(
        &idx,
        &emb,
        &["height".to_string()],
        &KeyKind::ALL,
        None,
        &cfg,
    )
    .unwrap();
    assert_eq!(fused.names(), ["Length"]);
}

/// Provider whose vectors are looked up by text, for zero-vector handling.
struct Table(HashMap<String, Vec<f64>>);

impl EmbeddingProvider for Table {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        Ok(texts
            .iter()
            .map(|t| EmbeddingVector::new(self.0.get(t).cloned().unwrap_or(vec![0.0, 0.0])))
            .collect())
    }

    fn id(&self) -> String {
        "table".into()
    }
}

#[test]
fn zero_vectors_rejected() {
    let reg = ToolRegistry::builtin();
    let tools = [reg.get("Length").unwrap()];
    let err = build_index(&tools, &Table(HashMap::new()), Parallelism::Sequential).unwrap_err();
    assert!(matches!(err, RetrievalError::ZeroVector(_)), "{err:?}");
}
