mod common;

use std::collections::BTreeSet;

use common::*;
use nestcall::bench::load_cases;
use nestcall::meta_tool::{Ablation, CategorySource, Component, DispatchMode, SelectionTrace};
use nestcall::nesting::{run_pipeline, StageRecord};
use nestcall::retrieval::KeyKind;
use nestcall::{Engine, EngineConfig};

fn selections(trace: &[StageRecord]) -> Vec<&SelectionTrace> {
    let mut out = Vec::new();
    for r in trace {
        match r {
            StageRecord::Selection { selection, .. } => out.push(selection),
            StageRecord::Conversion { stages, .. } => out.extend(selections(stages)),
            _ => {}
        }
    }
    out
}

/// What a selection did, independent of the replies it received.
fn shape(s: &SelectionTrace) -> String {
    format!(
        "{:?}|{:?}|{:?}|{}|{:?}",
        s.prompt_sequence(),
        s.category_source,
        s.keys,
        s.retrieval_queries.len(),
        s.dispatch_mode
    )
}

fn engine(ablation: Ablation) -> Engine {
    engine_with(scripted("bench/script.json")).with_config(EngineConfig {
        ablation,
        ..Default::default()
    })
}

/// Run every fixture case; returns one shape per run plus all selections.
fn run_all(ablation: Ablation) -> (String, Vec<SelectionTrace>) {
    let e = engine(ablation);
    let cases = load_cases(&fixture("bench/cases.jsonl"), &e.registry).unwrap();
    let mut shapes = Vec::new();
    let mut all = Vec::new();
    for c in &cases {
        let r = run_pipeline(&e, &c.user_query, &c.patient_history)
            .unwrap_or_else(|f| panic!("{} under {ablation:?}: {f}", c.case_id));
        for s in selections(&r.trace) {
            shapes.push(shape(s));
            all.push(s.clone());
        }
    }
    (shapes.join("\n"), all)
}

#[test]
fn each_ablation_runs_and_has_its_own_shape() {
    let mut seen = BTreeSet::new();
    let (base, _) = run_all(Ablation::default());
    seen.insert(base);
    for c in Component::ALL {
        let (s, _) = run_all(Ablation::default().disable(c));
        assert!(
            seen.insert(s),
            "{} produced a duplicate trace shape",
            c.as_str()
        );
    }
    assert_eq!(seen.len(), 7);
}

#[test]
fn classifier_off_searches_both_categories() {
    let (_, sel) = run_all(Ablation::default().disable(Component::Classifier));
    for s in sel {
        assert!(!s.prompt_sequence().contains(&"classifier"));
        assert_eq!(s.category_source, Some(CategorySource::Merged));
        assert_eq!(s.category, None);
    }
}

#[test]
fn rewriter_off_uses_the_raw_demand() {
    let (_, sel) = run_all(Ablation::default().disable(Component::Rewriter));
    for s in sel {
        assert!(!s.prompt_sequence().contains(&"rewriter"));
        assert_eq!(s.retrieval_queries, std::slice::from_ref(&s.demand));
        assert!(s.rewritten_queries.is_empty());
    }
}

#[test]
fn key_ablations_drop_one_key() {
    for (c, k) in [
        (Component::KeyName, KeyKind::Name),
        (Component::KeyDescription, KeyKind::NameDescription),
        (Component::KeyDocstring, KeyKind::NameDocstring),
    ] {
        let (_, sel) = run_all(Ablation::default().disable(c));
        for s in sel {
            assert_eq!(s.keys.len(), 2);
            assert!(!s.keys.contains(&k));
            assert_eq!(
                s.fused.as_ref().unwrap().source_count,
                2 * s.retrieval_queries.len()
            );
        }
    }
}

#[test]
fn dispatcher_off_takes_fused_rank_one() {
    let (_, sel) = run_all(Ablation::default().disable(Component::Dispatcher));
    for s in sel {
        assert!(!s.prompt_sequence().contains(&"dispatcher"));
        assert_eq!(s.dispatch_mode, Some(DispatchMode::FusedRankOne));
        assert_eq!(s.dispatched.as_deref(), Some(s.candidates()[0]));
    }
}

#[test]
fn all_keys_off_is_an_error() {
    let a = Ablation::default()
        .disable(Component::KeyName)
        .disable(Component::KeyDescription)
        .disable(Component::KeyDocstring);
    let (q, case) = framingham_case();
    let f = run_pipeline(&engine(a), &q, &case).unwrap_err();
    assert!(f.to_string().contains("every key is disabled"), "{f}");
}
