mod common;

use common::adversary::*;
use common::*;
use nestcall::calculators::unit_mismatches;
use nestcall::nesting::{run_pipeline, NestingConfig, PipelineError, StageRecord};
use nestcall::EngineConfig;

/// Evaluate records anywhere in the trace, with the tool they ran.
fn evaluations(trace: &[StageRecord]) -> Vec<(&str, &nestcall::calculators::SlotMap)> {
    trace
        .iter()
        .filter_map(|r| match r {
            StageRecord::Evaluate { tool, slots, .. } => Some((tool.as_str(), slots)),
            _ => None,
        })
        .collect()
}

fn overrides(trace: &[StageRecord]) -> usize {
    trace
        .iter()
        .filter(|r| matches!(r, StageRecord::Verification { verification: Some(v), .. } if v.overridden))
        .count()
}

#[test]
fn evaluate_runs_only_on_unit_checked_slots() {
    let (q, case) = framingham_case();
    let mut rng = rng(2024);
    let (mut violations, mut evaluated, mut overridden, mut succeeded) = (0, 0, 0, 0);
    for _ in 0..100 {
        let engine = engine_with(adversarial(perturbed_framingham(&mut rng)));
        let trace = match run_pipeline(&engine, &q, &case) {
            Ok(r) => {
                succeeded += 1;
                assert_eq!(r.value, 93.70109147053569);
                r.trace
            }
            Err(f) => f.trace,
        };
        for (tool, slots) in evaluations(&trace) {
            evaluated += 1;
            if !unit_mismatches(engine.registry.get(tool).unwrap(), slots).is_empty() {
                violations += 1;
            }
        }
        overridden += overrides(&trace);
    }
    assert_eq!(violations, 0);
    assert!(
        evaluated > 0 && succeeded > 0 && overridden > 0,
        "{evaluated} {succeeded} {overridden}"
    );
}

#[test]
fn always_toolcall_hits_the_round_limit() {
    let engine = engine_with(always_toolcall());
    let (q, case) = framingham_case();
    let f = run_pipeline(&engine, &q, &case).unwrap_err();
    assert!(
        matches!(f.error, PipelineError::RoundLimitExceeded { max_rounds: 3 }),
        "{}",
        f.error
    );
    assert_eq!(f.rounds, 3);
    assert!(evaluations(&f.trace).is_empty());
    // Each round's unit tool also answered toolcall; every task was dropped.
    let failed: Vec<&str> = f
        .trace
        .iter()
        .filter_map(|r| match r {
            StageRecord::Conversion { error: Some(e), .. } => Some(e.as_str()),
            _ => None,
        })
        .collect();
    assert_eq!(failed.len(), 3);
    assert!(failed
        .iter()
        .all(|e| e.contains("asked for further conversions")));
}

#[test]
fn toolcall_without_tasks_is_rejected() {
    let (q, case) = framingham_case();
    let f = run_pipeline(&engine_with(empty_toolcall()), &q, &case).unwrap_err();
    assert!(
        matches!(f.error, PipelineError::Stage { round: 1, .. }),
        "{}",
        f.error
    );
}

#[test]
fn endless_conversions_stop_at_the_round_limit() {
    let engine = engine_with(always_converting());
    let (q, case) = framingham_case();
    let f = run_pipeline(&engine, &q, &case).unwrap_err();
    assert!(
        matches!(f.error, PipelineError::RoundLimitExceeded { max_rounds: 3 }),
        "{}",
        f.error
    );
    let conversions = f
        .trace
        .iter()
        .filter(|r| matches!(r, StageRecord::Conversion { .. }))
        .count();
    assert_eq!(conversions, 3);
}

#[test]
fn configured_round_limits_are_exact() {
    let (q, case) = framingham_case();
    for n in 1..=5 {
        let config = EngineConfig {
            nesting: NestingConfig {
                max_rounds: n,
                ..Default::default()
            },
            ..Default::default()
        };
        let engine = engine_with(always_toolcall()).with_config(config);
        let f = run_pipeline(&engine, &q, &case).unwrap_err();
        assert!(
            matches!(f.error, PipelineError::RoundLimitExceeded { max_rounds } if max_rounds == n)
        );
        assert_eq!(f.rounds, n);
    }
}

#[test]
fn too_many_tasks() {
    let (q, case) = framingham_case();
    let f = run_pipeline(&engine_with(many_tasks(9)), &q, &case).unwrap_err();
    assert!(
        matches!(
            f.error,
            PipelineError::TooManyTasks {
                round: 1,
                count: 9,
                limit: 8
            }
        ),
        "{}",
        f.error
    );
    let f = run_pipeline(&engine_with(many_tasks(8)), &q, &case).unwrap_err();
    assert!(
        matches!(f.error, PipelineError::RoundLimitExceeded { max_rounds: 3 }),
        "{}",
        f.error
    );
    let conversions = f
        .trace
        .iter()
        .filter(|r| matches!(r, StageRecord::Conversion { .. }))
        .count();
    assert_eq!(conversions, 3 * 8);
}
