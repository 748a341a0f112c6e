mod common;

use std::collections::HashSet;
use std::sync::Arc;

use featforge::agents::{heuristic_generate, heuristic_select, AgentContext, AgentError};
use featforge::data::{pearson, ColumnStats, FoldPlan, Frame, TargetSpec, Task};
use featforge::eval::{EvalConfig, Evaluator};
use featforge::expr::{parse_expr, BinaryOp, ExprLimits, FeatureExpr, UnaryOp};
use featforge::memory::Decision;
use featforge::pipeline::{FeatureSet, GenerationAction, SelectionAction, SetLimits};
use featforge::rl::{advantages, softmax, OfflineSample, PolicyNet, RouterState, STATE_DIM};
use featforge::search::{
    component_rng, export, run, run_ablation, AgentKind, Backends, RouterMode, SearchConfig,
    Variant, ROUTER_STREAM,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const COLS: [&str; 4] = ["a", "b", "c", "d"];

fn expr_strategy() -> impl Strategy<Value = String> {
    let leaf = prop::sample::select(COLS.to_vec()).prop_map(str::to_string);
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(UnaryOp::ALL.to_vec()))
                .prop_map(|(x, op)| format!("{x} {}", op.symbol())),
            (
                inner.clone(),
                inner,
                prop::sample::select(BinaryOp::ALL.to_vec())
            )
                .prop_map(|(x, y, op)| format!("{x} {y} {}", op.symbol())),
        ]
    })
}

fn small_frame(n: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<(String, Vec<f64>)> = COLS
        .iter()
        .map(|name| {
            (
                name.to_string(),
                (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
        })
        .collect();
    let y = (0..n)
        .map(|r| cols[0].1[r] * cols[1].1[r] + 0.2 * cols[2].1[r])
        .collect();
    Frame::from_columns(cols, y, Task::Regression).unwrap()
}

fn quick(iterations: usize, steps: usize, seed: u64) -> SearchConfig {
    SearchConfig {
        iterations,
        steps,
        seed,
        router: RouterMode::Uniform,
        eval: EvalConfig {
            n_trees: 10,
            folds: 3,
            ..EvalConfig::default()
        },
        ..SearchConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn postfix_round_trips(text in expr_strategy()) {
        let limits = ExprLimits::default();
        if let Ok(expr) = parse_expr(&text, &COLS, limits) {
            prop_assert_eq!(expr.render_postfix(), text.clone());
            prop_assert_eq!(parse_expr(&expr.render_postfix(), &COLS, limits).unwrap(), expr.clone());
            prop_assert!(expr.depth() <= limits.max_depth);
            prop_assert!(expr.tokens().len() <= limits.max_tokens);
        }
    }

    #[test]
    fn commutative_operands_share_a_key(
        x in expr_strategy(),
        y in expr_strategy(),
        op in prop::sample::select(vec![BinaryOp::Add, BinaryOp::Mul]),
    ) {
        let limits = ExprLimits { max_depth: 12, max_tokens: 200 };
        let xy = parse_expr(&format!("{x} {y} {}", op.symbol()), &COLS, limits).unwrap();
        let yx = parse_expr(&format!("{y} {x} {}", op.symbol()), &COLS, limits).unwrap();
        prop_assert_eq!(xy.canonical_key(), yx.canonical_key());
        prop_assert_eq!(xy.name(), yx.name());
        let a = xy.evaluate(&small_frame(20, 3)).unwrap();
        let b = yx.evaluate(&small_frame(20, 3)).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn operators_are_total(x in any::<f64>(), y in any::<f64>()) {
        for op in UnaryOp::ALL {
            let v = op.apply(x);
            prop_assert!(v.is_finite() && v.abs() <= 1e150, "{}({x}) = {v}", op.symbol());
        }
        for op in BinaryOp::ALL {
            let v = op.apply(x, y);
            prop_assert!(v.is_finite() && v.abs() <= 1e150, "{x} {} {y} = {v}", op.symbol());
        }
    }

    #[test]
    fn evaluation_is_finite(text in expr_strategy(), seed in 0u64..1000) {
        if let Ok(expr) = parse_expr(&text, &COLS, ExprLimits::default()) {
            let mut frame_rng = ChaCha8Rng::seed_from_u64(seed);
            let cols: Vec<(String, Vec<f64>)> = COLS
                .iter()
                .map(|n| (n.to_string(), (0..16).map(|_| frame_rng.gen_range(-1e12..1e12)).collect()))
                .collect();
            let frame = Frame::from_columns(cols, vec![0.0; 16], Task::Regression).unwrap();
            prop_assert!(expr.evaluate(&frame).unwrap().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn column_stats_match_naive(values in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        let s = ColumnStats::of(&values);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!((s.mean - mean).abs() <= 1e-6 * mean.abs().max(1.0));
        prop_assert!((s.std - var.sqrt()).abs() <= 1e-6 * var.sqrt().max(1.0));
        prop_assert!(s.min <= s.mean && s.mean <= s.max);
    }

    #[test]
    fn pearson_is_bounded_and_symmetric(
        pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..100),
        scale in 0.1f64..10.0,
        shift in -100.0f64..100.0,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = pearson(&a, &b);
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!((r - pearson(&b, &a)).abs() < 1e-12);
        let moved: Vec<f64> = a.iter().map(|v| v * scale + shift).collect();
        prop_assert!((r - pearson(&moved, &b)).abs() < 1e-6);
    }

    #[test]
    fn folds_partition_rows(n in 10usize..300, k in 2usize..10, seed in any::<u64>()) {
        let plan = FoldPlan::new(&vec![0.0; n], Task::Regression, k.min(n), seed).unwrap();
        let mut seen = vec![0; n];
        for f in 0..plan.k {
            let (train, test) = plan.split(f);
            prop_assert_eq!(train.len() + test.len(), n);
            for r in test {
                seen[r] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes = plan.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn class_folds_are_stratified(labels in prop::collection::vec(0u8..3, 30..200), seed in any::<u64>()) {
        let target: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let plan = FoldPlan::new(&target, Task::Classification, 5, seed).unwrap();
        for class in 0..3u8 {
            let mut per_fold = [0usize; 5];
            for (row, &f) in plan.assignments.iter().enumerate() {
                if labels[row] == class {
                    per_fold[f] += 1;
                }
            }
            prop_assert!(per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn softmax_is_a_distribution(a in -700.0f64..700.0, b in -700.0f64..700.0, shift in -50.0f64..50.0) {
        let p = softmax([a, b]);
        prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let q = softmax([a + shift, b + shift]);
        prop_assert!((p[0] - q[0]).abs() < 1e-9);
    }

    #[test]
    fn advantages_are_standardized_per_group(
        scores in prop::collection::vec((0u8..3, -10.0f64..10.0), 2..120),
    ) {
        let samples: Vec<OfflineSample> = scores
            .iter()
            .map(|&(g, score)| OfflineSample {
                state: RouterState::default(),
                action: 0,
                behavior_prob: 0.5,
                score,
                group: format!("g{g}"),
            })
            .collect();
        let adv = advantages(&samples).unwrap();
        for g in 0..3u8 {
            let members: Vec<f64> = scores
                .iter()
                .zip(&adv)
                .filter(|((k, _), _)| *k == g)
                .map(|(_, a)| *a)
                .collect();
            if members.is_empty() {
                continue;
            }
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            prop_assert!(mean.abs() < 1e-6);
            let sd = (members.iter().map(|a| a * a).sum::<f64>() / members.len() as f64).sqrt();
            prop_assert!(sd < 1.0 + 1e-6);
        }
    }

    #[test]
    fn policy_probs_are_valid(seed in any::<u64>(), s in prop::collection::vec(-1e3f64..1e3, STATE_DIM)) {
        let mut state = [0.0; STATE_DIM];
        state.copy_from_slice(&s);
        let p = PolicyNet::new(seed).probs(&RouterState(state));
        prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

fn check_set(set: &FeatureSet, limits: SetLimits) {
    let record = set.to_record();
    assert_eq!(record.mask.len(), record.base.len() + record.derived.len());
    assert!(set.live_count() <= set.max_features());
    assert!(set.live_count() >= limits.min_features);
    let keys: Vec<String> = set.live().iter().map(FeatureExpr::canonical_key).collect();
    assert_eq!(keys.len(), keys.iter().collect::<HashSet<_>>().len());
    assert_eq!(&FeatureSet::from_record(&record, limits).unwrap(), set);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_set_invariants_hold(
        actions in prop::collection::vec(
            prop_oneof![
                prop::collection::vec(expr_strategy(), 1..4).prop_map(Ok),
                prop::collection::vec(0usize..20, 1..4).prop_map(Err),
            ],
            1..25,
        ),
    ) {
        let frame = small_frame(40, 1);
        let limits = SetLimits::default();
        let mut set = FeatureSet::initial(&frame, limits);
        for action in actions {
            match action {
                Ok(texts) => {
                    let exprs: Vec<FeatureExpr> = texts
                        .iter()
                        .filter_map(|t| parse_expr(t, &COLS, limits.expr).ok())
                        .collect();
                    let before = set.live_count();
                    let (next, report) = set.apply_generation(&GenerationAction { exprs: exprs.clone() }, &frame).unwrap();
                    prop_assert_eq!(next.live_count(), before + report.accepted.len());
                    prop_assert_eq!(
                        report.accepted.len() + report.duplicates + report.constant + report.truncated,
                        exprs.len()
                    );
                    set = next;
                }
                Err(picks) => {
                    let live = set.live_names();
                    let drop: Vec<String> = picks.iter().map(|&i| live[i % live.len()].clone()).collect();
                    let before = set.live_count();
                    let (next, report) = set.apply_selection(&SelectionAction { drop }).unwrap();
                    prop_assert_eq!(next.live_count(), before - report.dropped.len());
                    set = next;
                }
            }
            check_set(&set, limits);
        }
    }
}

#[test]
fn heuristic_agents_survive_ten_thousand_actions() {
    let frame = small_frame(60, 2);
    let limits = SetLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut set = FeatureSet::initial(&frame, limits);
    let (mut generated, mut selected, mut refused) = (0, 0, 0);
    for step in 0..10_000 {
        if step % 50 == 0 {
            set = FeatureSet::initial(&frame, limits);
        }
        let ctx = AgentContext::new(&frame, &set, "fuzz").unwrap();
        if rng.gen_bool(0.5) {
            match heuristic_generate(&ctx, &mut rng) {
                Ok(action) => {
                    assert!(!action.exprs.is_empty());
                    set = set.apply_generation(&action, &frame).unwrap().0;
                    generated += 1;
                }
                Err(AgentError::NoValidAction(_)) => refused += 1,
                Err(e) => panic!("generator failed: {e}"),
            }
        } else {
            match heuristic_select(&ctx) {
                Ok(action) => {
                    set = set.apply_selection(&action).unwrap().0;
                    selected += 1;
                }
                Err(AgentError::NoValidAction(_)) => refused += 1,
                Err(e) => panic!("selector failed: {e}"),
            }
        }
        check_set(&set, limits);
    }
    assert_eq!(generated + selected + refused, 10_000);
    assert!(generated > 1000 && selected > 1000);
}

#[test]
fn best_score_never_regresses_and_iterations_restart() {
    let frame = small_frame(120, 3);
    let result = run(&frame, &quick(4, 5, 1), &Backends::default()).unwrap();
    let records: Vec<_> = result.pool.records().collect();
    let best = records
        .iter()
        .map(|r| r.score)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(result.best_report.primary, best);
    assert!(result.best_report.primary >= result.baseline_report.primary);
    for r in &records[1..] {
        if r.step != 1 {
            continue;
        }
        let set = FeatureSet::from_record(&r.feature_set, SetLimits::default()).unwrap();
        match r.decision {
            Some(Decision::Generate) => {
                assert_eq!(set.live_base().len(), COLS.len());
                assert!(set.derived().len() <= featforge::agents::MAX_NEW_FEATURES);
            }
            Some(Decision::Select) => assert!(set.derived().is_empty()),
            None => unreachable!(),
        }
    }
}

#[test]
fn uniform_router_matches_its_stream() {
    let frame = small_frame(100, 4);
    let config = quick(3, 4, 17);
    let backends = Backends {
        policy: Some(PolicyNet::new(99)),
        transport: None,
        ..Backends::default()
    };
    let result = run_ablation(&frame, &config.clone(), &backends, Variant::NoRouter).unwrap();
    let mut stream = component_rng(config.seed, ROUTER_STREAM);
    for r in result.pool.records().filter(|r| !r.is_baseline()) {
        let expected = if stream.gen_bool(0.5) {
            Decision::Generate
        } else {
            Decision::Select
        };
        assert_eq!(r.decision, Some(expected));
        assert_eq!(r.behavior_prob, 0.5);
    }
}

#[test]
fn policy_router_logs_its_own_probabilities() {
    let frame = small_frame(100, 5);
    let policy = PolicyNet::new(3);
    let config = SearchConfig {
        router: RouterMode::Ppo,
        ..quick(3, 4, 2)
    };
    let backends = Backends {
        policy: Some(policy.clone()),
        transport: None,
        ..Backends::default()
    };
    let result = run(&frame, &config, &backends).unwrap();
    for r in result.pool.records().filter(|r| !r.is_baseline()) {
        let p = policy.probs(&r.state)[r.decision.unwrap().index()];
        assert!((r.behavior_prob - p).abs() < 1e-12);
    }
}

#[test]
fn disabling_long_memory_removes_demonstrations() {
    let frame = common::interaction_frame(120, 0.1, 6);
    let prompts = |long: bool| {
        let config = SearchConfig {
            router: RouterMode::Llm,
            agents: AgentKind::Llm,
            use_long_memory: long,
            ..quick(2, 6, 3)
        };
        let backends = Backends {
            policy: None,
            transport: Some(Arc::new(common::scripted_mock())),
            ..Backends::default()
        };
        let result = run(&frame, &config, &backends).unwrap();
        result
            .pool
            .records()
            .flat_map(|r| r.exchanges.iter().map(|e| e.user.clone()))
            .collect::<Vec<_>>()
    };
    let with = prompts(true);
    let without = prompts(false);
    assert!(with.iter().any(|p| p.contains("Top demonstrations")));
    assert!(!without.is_empty());
    assert!(without.iter().all(|p| !p.contains("Top demonstrations")));
}

#[test]
fn export_reloads_to_the_same_score() {
    let frame = small_frame(150, 7);
    let config = quick(3, 4, 8);
    let result = run(&frame, &config, &Backends::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = export(&result, &frame, dir.path()).unwrap();
    let reloaded = featforge::load_csv(
        &paths.csv,
        &TargetSpec::Name(frame.target_name().to_string()),
        Task::Regression,
    )
    .unwrap();
    assert_eq!(reloaded.names(), result.best_set.live_names().as_slice());
    let report = Evaluator::new(
        &reloaded,
        EvalConfig {
            seed: config.seed,
            ..config.eval
        },
    )
    .unwrap()
    .evaluate(&reloaded, &FeatureSet::initial(&reloaded, config.limits))
    .unwrap();
    assert_eq!(report.primary, result.best_report.primary);
}

#[test]
fn prior_records_do_not_enter_the_trace() {
    let frame = small_frame(100, 9);
    let first = run(&frame, &quick(2, 3, 4), &Backends::default()).unwrap();
    let backends = Backends {
        prior: first.pool.records().cloned().collect(),
        ..Backends::default()
    };
    let second = run(&frame, &quick(2, 3, 5), &backends).unwrap();
    assert_eq!(second.pool.len(), 7);
    assert_eq!(second.pool.best().unwrap().key(), second.best_record.key());
}
