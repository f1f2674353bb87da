mod common;

use coa::bench::{evaluate, mislead_rate};
use coa::executor::Ablations;

use common::{mislead_suite, suite, ABLATION_VARIANTS, MISLEAD_FLIPPED, SUITE_WRONG};

#[test]
fn suite_accuracy_matches_design() {
    let fx = suite();
    let report = evaluate(&fx.engine(), &fx.records(), &fx.run_config(Ablations::default(), 4), 4).unwrap();
    assert_eq!(report.metrics.n, 20);
    assert_eq!(report.metrics.accuracy, 0.75);
    assert_eq!(report.metrics.avg_steps, 4.0);
    for r in &report.results {
        let i: usize = r.id[1..].parse().unwrap();
        assert_eq!(r.correct, !SUITE_WRONG.contains(&i), "{r:?}");
    }
}

#[test]
fn results_are_byte_identical_across_runs_and_parallelism() {
    let fx = suite();
    let records = fx.records();
    let mut outputs = Vec::new();
    for nodes in [1, 8] {
        for _ in 0..3 {
            let report = evaluate(&fx.engine(), &records, &fx.run_config(Ablations::default(), nodes), 3).unwrap();
            outputs.push(report.results_jsonl());
        }
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn two_chat_calls_per_question() {
    let fx = suite();
    let (engine, chat) = fx.engine_with_chat();
    let cfg = fx.run_config(Ablations::default(), 4);
    for plan in &fx.plans {
        let before = chat.history().len();
        let answer = engine.run_question(&plan.question, &cfg).unwrap();
        assert_eq!(chat.history().len() - before, 2);
        assert_eq!(answer.trace.usage.chat_calls, 2);
        assert_eq!(answer.text, plan.final_reply(Ablations::default()).trim_start_matches("[Final Content] "));
    }
}

#[test]
fn every_ablation_resolves_as_planned() {
    let fx = suite();
    let engine = fx.engine();
    for ablations in ABLATION_VARIANTS {
        let cfg = fx.run_config(ablations, 2);
        for plan in &fx.plans {
            let answer = engine.run_question(&plan.question, &cfg).unwrap();
            let resolved: Vec<String> =
                answer.trace.chain_after.nodes.iter().map(|n| n.resolved_answer.clone().unwrap()).collect();
            assert_eq!(resolved, plan.resolved(ablations).to_vec(), "{ablations:?} {}", plan.id);
        }
    }
}

#[test]
fn unsolved_nodes_take_top_hit_and_degrade_without_imputation() {
    let fx = suite();
    let engine = fx.engine();
    for plan in &fx.plans {
        let on = engine.run_question(&plan.question, &fx.run_config(Ablations::default(), 4)).unwrap();
        let off = engine
            .run_question(&plan.question, &fx.run_config(Ablations { no_imputation: true, ..Default::default() }, 4))
            .unwrap();
        for (before, (after, event)) in on.trace.chain_before.nodes.iter().zip(on.trace.chain_after.nodes.iter().zip(&on.trace.per_node_events)) {
            if before.missing_flag {
                assert!(event.imputed);
                assert_eq!(after.resolved_answer.as_deref(), Some(after.evidence[0].content.as_str()));
            }
        }
        for (node, event) in off.trace.chain_after.nodes.iter().zip(&off.trace.per_node_events) {
            if node.missing_flag {
                assert!(!event.imputed && event.low_confidence);
                assert_eq!(node.resolved_answer.as_deref(), Some("unknown"));
            }
        }
    }
}

#[test]
fn verification_flags_unsupported_guesses() {
    let fx = suite();
    let engine = fx.engine();
    let cfg = fx.run_config(Ablations::default(), 4);
    for plan in &fx.plans {
        let answer = engine.run_question(&plan.question, &cfg).unwrap();
        let event = &answer.trace.per_node_events[0];
        assert_eq!(event.corrected, !plan.node1_supported, "{}", plan.id);
        let mrfs = event.mrfs.unwrap();
        assert_eq!(mrfs < 0.5, event.corrected);
    }
}

#[test]
fn mislead_fixture_flips_one_record() {
    let fx = mislead_suite();
    let report = mislead_rate(&fx.engine(), &fx.records(), &fx.run_config(Ablations::default(), 4), 4).unwrap();
    assert_eq!(report.n, 10);
    assert_eq!(report.mislead_rate, 0.1);
    assert_eq!(report.flipped_ids, vec![format!("q{MISLEAD_FLIPPED}")]);
    assert_eq!(report.accuracy_without_verification, 1.0);
    assert_eq!(report.accuracy_with_verification, 0.9);
}

#[test]
fn no_actions_skips_retrieval_entirely() {
    let fx = suite();
    let engine = fx.engine();
    let cfg = fx.run_config(Ablations { no_actions: true, ..Default::default() }, 4);
    let answer = engine.run_question(&fx.plans[0].question, &cfg).unwrap();
    assert_eq!(answer.trace.usage.embed_calls, 0);
    assert!(answer.trace.chain_after.nodes.iter().all(|n| n.evidence.is_empty()));
}
