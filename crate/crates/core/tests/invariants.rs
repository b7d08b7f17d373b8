//! Property tests for the structural invariants.

mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use xferfuzz_core::fuzz::next_batch;
use xferfuzz_core::harness::has_marker;
use xferfuzz_core::llm::{Cassette, CassetteEntry, Cost, LedgerEntry};
use xferfuzz_core::matcher::{cosine, pearson, similar_queue, EmbeddingDb, Matcher};
use xferfuzz_core::validate::{vote, Stage, Validator, ValidatorConfig};
use xferfuzz_core::{
    CampaignConfig, CampaignState, CostLedger, EmbeddingVector, LlmRequest, TemplateId,
};

fn nonzero_vec(dim: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-6))
}

fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..32).prop_flat_map(|d| (nonzero_vec(d..d + 1), nonzero_vec(d..d + 1)))
}

proptest! {
    #[test]
    fn cosine_is_symmetric_and_bounded((u, v) in vec_pair()) {
        let a = cosine(&u, &v).unwrap();
        let b = cosine(&v, &u).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn cosine_ignores_positive_scale((u, v) in vec_pair(), s in 0.01f64..100.0) {
        let scaled: Vec<f64> = u.iter().map(|x| x * s).collect();
        prop_assert!((cosine(&u, &v).unwrap() - cosine(&scaled, &v).unwrap()).abs() < 1e-12);
        prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vote_is_conjunction(epochs in prop::collection::vec(any::<bool>(), 1..8)) {
        prop_assert_eq!(vote(&epochs), epochs.iter().all(|&e| e));
    }

    #[test]
    fn ledger_total_is_exact_sum(units in prop::collection::vec((0usize..4, 0u64..10_000_000_000_000u64), 0..60)) {
        let components = ["pattern_extraction", "api_matching", "fuzzing", "self_validation"];
        let mut ledger = CostLedger::new();
        for (c, u) in &units {
            ledger.record(LedgerEntry {
                component: components[*c].into(),
                model_id: "m".into(),
                cost: Cost::from_units(*u),
                prompt_tokens: 1,
                completion_tokens: 1,
            });
        }
        let sum: u64 = units.iter().map(|(_, u)| u).sum();
        prop_assert_eq!(ledger.grand_total().units(), sum);
        prop_assert!(ledger.is_consistent());
        let by_component: u64 = components.iter().map(|c| ledger.component_total(c).units()).sum();
        prop_assert_eq!(by_component, sum);
    }

    #[test]
    fn cost_decimal_roundtrip(cents in 0u64..10_000_000) {
        let text = format!("{}.{:02}", cents / 100, cents % 100);
        let cost: Cost = text.parse().unwrap();
        let back: Cost = cost.to_string().parse().unwrap();
        prop_assert_eq!(back, cost);
    }

    #[test]
    fn cassette_roundtrip(texts in prop::collection::btree_set("[ -~\n]{0,40}", 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cassette.jsonl");
        let mut c = Cassette::new();
        for (i, t) in texts.iter().enumerate() {
            c.record(CassetteEntry {
                key: format!("real_bug/{i:064x}/{}", i % 3),
                model_id: "gpt-4.1-mini".into(),
                text: t.clone(),
                prompt_tokens: i as u64,
                completion_tokens: 2 * i as u64,
            }).unwrap();
        }
        c.save(&path).unwrap();
        let back = Cassette::load(&path).unwrap();
        prop_assert_eq!(back.entries().collect::<Vec<_>>(), c.entries().collect::<Vec<_>>());
    }

    #[test]
    fn queue_is_ranked_and_bounded(
        vectors in prop::collection::vec(nonzero_vec(4..5), 1..60),
        k in 1usize..80,
    ) {
        let mut db = EmbeddingDb::new();
        for (i, v) in vectors.iter().enumerate() {
            db.insert(&format!("api.{i:03}"), EmbeddingVector::new("m", v.clone())).unwrap();
        }
        let anchor = db.get("api.000").unwrap().clone();
        let q = similar_queue("api.000", &anchor, &db, k).unwrap();
        prop_assert_eq!(q.len(), k.min(vectors.len()));
        prop_assert!(q.len() <= q.capacity);
        for w in q.entries.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].api < w[1].api));
        }
        // Nothing left out scores above the last kept entry.
        if let Some(last) = q.entries.last() {
            let kept: BTreeSet<&str> = q.entries.iter().map(|e| e.api.as_str()).collect();
            for (name, v) in db.iter() {
                if !kept.contains(name.as_str()) {
                    prop_assert!(cosine(&anchor.values, &v.values).unwrap() <= last.score);
                }
            }
        }
    }

    #[test]
    fn pearson_is_symmetric_and_affine_invariant(
        pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..40),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        if let (Ok(r), Ok(r2)) = (pearson(&xs, &ys), pearson(&ys, &xs)) {
            prop_assert!((r - r2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
            let moved: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            prop_assert!((pearson(&moved, &ys).unwrap() - r).abs() < 1e-9);
        }
    }

    #[test]
    fn marker_needs_an_exact_line(prefix in "[a-z ]{0,6}", suffix in "[a-z ]{0,6}") {
        let line = format!("{prefix}BUG FOUND{suffix}");
        prop_assert_eq!(has_marker(&format!("out\n{line}\n")), prefix.is_empty() && suffix.is_empty());
        let lower = format!("{prefix}bug found{suffix}");
        prop_assert!(!has_marker(&lower));
    }

    #[test]
    fn batches_skip_tested_anchor_and_duplicates(
        seed in 0u64..1000,
        tested_mask in prop::collection::vec(any::<bool>(), 40),
        found in prop::collection::btree_set(1usize..40, 0..4),
        window in 1usize..15,
        expansion in 1usize..15,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut db = EmbeddingDb::new();
        for i in 0..40 {
            let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            db.insert(&format!("lib.f{i:02}"), EmbeddingVector::new("m", v)).unwrap();
        }
        let matcher = Matcher::new(Default::default(), db.clone());
        let queue = similar_queue("lib.f00", db.get("lib.f00").unwrap(), &db, 1000).unwrap();
        let mut pattern = common::stub_pattern();
        pattern.bug_api = "lib.f00".into();
        let mut state = CampaignState::new(pattern, queue);
        for (i, t) in tested_mask.iter().enumerate().skip(1) {
            if *t {
                state.tested.insert(format!("lib.f{i:02}"));
            }
        }
        state.found_new_bug_api = found.iter().map(|i| format!("lib.f{i:02}")).collect();
        let n_found = state.found_new_bug_api.len();
        let config = CampaignConfig { window_size: window, expansion_count: expansion, ..CampaignConfig::default() };
        let batch = next_batch(&mut state, &config, &matcher).unwrap();

        prop_assert!(state.found_new_bug_api.is_empty());
        let unique: BTreeSet<&String> = batch.iter().collect();
        prop_assert_eq!(unique.len(), batch.len());
        prop_assert!(batch.iter().all(|a| a != "lib.f00" && !state.tested.contains(a)));
        prop_assert!(batch.len() <= window + n_found * expansion);
        let untested = 39 - state.tested.len();
        prop_assert!(batch.len() >= window.min(untested));
    }

    #[test]
    fn verdicts_short_circuit_and_conjoin(answers in prop::collection::vec(any::<bool>(), 48)) {
        let scenario = common::scenarios::argmax_vs_argmin();
        let gateway = common::live_gateway(common::ScriptedProvider::chat_only(move |req: &LlmRequest| {
            let slot = (template_slot(req.template_id) * 3 + req.epoch as usize) % answers.len();
            let yes = answers[slot];
            match req.template_id {
                TemplateId::SameBugType => format!(
                    "ORIGINAL_TYPE: Functional_Defect\nTRANSFERRED_TYPE: {}",
                    if yes { "Functional_Defect" } else { "Security_Risk" }
                ),
                TemplateId::CriteriaExtraction => "@@ criteria @@\nmust not propagate gradients".into(),
                TemplateId::DebateChallenge => "challenge".into(),
                TemplateId::DebateSummary => format!("FALSE_POSITIVE: {}", if yes { "NO" } else { "YES" }),
                _ => format!("VERDICT: {}", if yes { "YES" } else { "NO" }),
            }
        }));
        let v = Validator::new(&gateway, ValidatorConfig::default()).validate_candidate(&scenario.candidate());
        prop_assert!(!v.incomplete);
        let all_passed = v.stage_results.iter().all(|s| s.passed && s.passed == vote(&s.epochs));
        prop_assert_eq!(v.r#final, all_passed && v.stage(Stage::CriteriaJudgment).is_some());
        if let Some(stop) = v.failure_stage {
            prop_assert_eq!(v.stage_results.last().map(|s| s.stage), Some(stop));
            prop_assert!(v.stage_results[..v.stage_results.len() - 1].iter().all(|s| s.passed));
        } else {
            prop_assert!(v.r#final);
        }
        for s in &v.stage_results {
            prop_assert_eq!(s.passed, vote(&s.epochs));
        }
    }
}

fn template_slot(t: TemplateId) -> usize {
    TemplateId::ALL.iter().position(|x| *x == t).unwrap()
}
