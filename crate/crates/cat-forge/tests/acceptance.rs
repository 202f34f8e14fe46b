//! Acceptance gate: one test per top-level criterion, each printing a
//! PASS line on success (run with `--nocapture` to see them). Every numeric
//! check is made against an oracle computed independently in this file, not
//! against values the library itself produced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use cat_forge::backend::{EndpointHandle, Matcher, MockBackend, MockScript, SamplingParams, ScoreScript};
use cat_forge::grpo::{self, GrpoConfig, KlPlacement, TokenBatch, TokenTrack};
use cat_forge::harness::config::{Mode, Teacher};
use cat_forge::harness::infer::{sweep_g, toy_infer};
use cat_forge::harness::trainer::{rl_vs_sft, train_cat_rl};
use cat_forge::harness::RunConfig;
use cat_forge::prompts::{PromptName, PromptSet};
use cat_forge::rubric::{reward_rubric, Criterion, Rubric};
use cat_forge::select::{perplexity, select_min_ppl, select_mp};
use cat_forge::synthesis::{Rollout, RolloutGroup};
use cat_forge::toyworld::{toy_sample, toy_synthesize, ScriptedAnchor, ToyPolicy, ToyTask};

fn pass(n: usize, name: &str) {
    println!("[criterion {n:2}] {name}: PASS");
}

fn base_config(dir: &std::path::Path, seed: u64) -> RunConfig {
    let mut config = RunConfig::for_mode(Mode::TrainToy);
    config.out_dir = dir.to_path_buf();
    config.seed = seed;
    config
}

/// Group-normalized advantages, the clip rule, and the KL estimator hit
/// hand-computed values exactly.
#[test]
fn criterion_01_grpo_arithmetic_is_exact() {
    // mean 0.75, population std sqrt(0.1875) = 0.4330127
    let rewards = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0];
    let adv = grpo::advantages(&rewards, 1e-8).unwrap();
    for (r, a) in rewards.iter().zip(&adv.per_rollout_advantage) {
        let expected = if *r == 1.0 { 0.577350 } else { -1.732051 };
        assert!((a - expected).abs() < 1e-6, "advantage {a} vs {expected}");
    }
    let mean: f64 = adv.per_rollout_advantage.iter().sum();
    assert!(mean.abs() < 1e-12);

    // degenerate group: all advantages zero, no NaN
    let flat = grpo::advantages(&[0.5; 8], 1e-8).unwrap();
    assert!(flat.per_rollout_advantage.iter().all(|&a| a == 0.0));

    // two-element group normalizes to exactly ±1
    let pair = grpo::advantages(&[1.0, 0.0], 1e-8).unwrap();
    assert!((pair.per_rollout_advantage[0] - 1.0).abs() < 1e-12);
    assert!((pair.per_rollout_advantage[1] + 1.0).abs() < 1e-12);

    // clip rule fixtures: min(rA, clip(r)A)
    assert!((grpo::clipped_term(1.5, 1.0, 0.2).unwrap() - 1.2).abs() < 1e-12);
    assert!((grpo::clipped_term(0.5, -1.0, 0.2).unwrap() + 0.8).abs() < 1e-12);
    assert!((grpo::clipped_term(1.0, 2.5, 0.2).unwrap() - 2.5).abs() < 1e-12);

    // k3 estimator: zero at equality, non-negative off it
    assert_eq!(grpo::k3_estimate(-1.0, -1.0), 0.0);
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let a = -5.0 * rng.gen::<f64>();
        let b = -5.0 * rng.gen::<f64>();
        assert!(grpo::k3_estimate(a, b) >= 0.0);
    }
    pass(1, "grpo arithmetic fixtures");
}

/// The analytic parameter gradient of the full objective matches central
/// finite differences at 100 random coordinates, both KL placements.
#[test]
fn criterion_02_objective_gradient_matches_finite_differences() {
    let start = std::time::Instant::now();
    let task = ToyTask { pool: 2, ..ToyTask::default() };
    let policy = ToyPolicy::biased_toward_truth(&task, 1.0, 0.4, 3);
    let reference_policy = ToyPolicy::uniform(&task); // distinct, so KL != 0
    let q = 0usize;
    let group = toy_sample(&policy, q, 8, 17).unwrap();

    let anchor = ScriptedAnchor::plurality();
    let synth = toy_synthesize(&anchor, &group, None).unwrap();
    let rewards: Vec<f64> = group
        .rollouts
        .iter()
        .map(|r| if r.text == synth.text { 1.0 } else { 0.0 })
        .collect();
    let adv = grpo::advantages(&rewards, 1e-8).unwrap();
    let symbols: Vec<Vec<usize>> = group
        .texts()
        .iter()
        .map(|t| cat_forge::toyworld::decode_symbols(t).unwrap())
        .collect();
    let logp_old: Vec<Vec<f64>> = group
        .rollouts
        .iter()
        .map(|r| r.token_logprobs.clone().unwrap())
        .collect();

    for placement in [KlPlacement::RewardLevel, KlPlacement::LossLevel] {
        let config = GrpoConfig { kl_placement: placement, ..GrpoConfig::default() };
        let batch_for = |p: &ToyPolicy| TokenBatch {
            rollouts: symbols
                .iter()
                .zip(&logp_old)
                .map(|(syms, old)| TokenTrack {
                    logp_new: syms
                        .iter()
                        .enumerate()
                        .map(|(pos, &s)| p.logprob(q, pos, s))
                        .collect(),
                    logp_old: old.clone(),
                    logp_ref: syms
                        .iter()
                        .enumerate()
                        .map(|(pos, &s)| reference_policy.logprob(q, pos, s))
                        .collect(),
                })
                .collect(),
        };
        let objective_of = |p: &ToyPolicy| grpo::grpo_objective(&batch_for(p), &adv, &config).unwrap().0;

        // analytic gradient w.r.t. the logit tensor via the chain rule
        let token_grads = grpo::grpo_grad_logp_new(&batch_for(&policy), &adv, &config).unwrap();
        let mut analytic = vec![0.0; policy.param_count()];
        for (syms, grads) in symbols.iter().zip(&token_grads) {
            for (pos, (&sym, &g)) in syms.iter().zip(grads).enumerate() {
                policy.accumulate_logprob_grad(q, pos, sym, g, &mut analytic);
            }
        }

        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let h = 1e-5;
        for _ in 0..100 {
            let idx = policy.index(
                q,
                rng.gen_range(0..task.answer_len),
                rng.gen_range(0..task.alphabet),
            );
            let mut plus = policy.clone();
            plus.logits[idx] += h;
            let mut minus = policy.clone();
            minus.logits[idx] -= h;
            let numeric = (objective_of(&plus) - objective_of(&minus)) / (2.0 * h);
            let scale = analytic[idx].abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic[idx] - numeric).abs() / scale < 1e-5,
                "{placement:?} grad mismatch at {idx}: {} vs {numeric}",
                analytic[idx]
            );
        }
    }
    assert!(start.elapsed().as_secs() < 30, "took {:?}", start.elapsed());
    pass(2, "objective gradient vs central finite differences");
}

/// Training against the synthesized reference improves the policy, and the
/// reconciling teacher beats whole-string majority vote as a teacher, on
/// three fixed seeds.
#[test]
fn criterion_03_rl_improves_and_synthesis_teacher_wins() {
    let start = std::time::Instant::now();
    for seed in [0, 1, 2] {
        let dir = tempfile::tempdir().unwrap();
        let plurality = train_cat_rl(&base_config(dir.path(), seed)).unwrap();
        assert!(
            plurality.final_accuracy > plurality.initial_accuracy,
            "seed {seed}: {} -> {}",
            plurality.initial_accuracy,
            plurality.final_accuracy
        );

        let dir2 = tempfile::tempdir().unwrap();
        let mut majority_config = base_config(dir2.path(), seed);
        majority_config.toy.teacher = Teacher::Majority;
        let majority = train_cat_rl(&majority_config).unwrap();
        assert!(
            plurality.final_accuracy > majority.final_accuracy,
            "seed {seed}: plurality {} vs majority {}",
            plurality.final_accuracy,
            majority.final_accuracy
        );
        assert!(plurality.steps_run <= 500);
    }
    assert!(start.elapsed().as_secs() < 300, "took {:?}", start.elapsed());
    pass(3, "rl improvement and teacher comparison, 3/3 seeds");
}

/// Over ≥1000 seeded groups the reconciled reference beats the best
/// selection-style reference, and sometimes is correct when every rollout
/// is wrong — the estimated reference leaves the rollout set.
#[test]
fn criterion_04_synthesis_beats_selection_and_escapes_the_group() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config(dir.path(), 0);
    config.mode = Mode::Infer;
    let summary = toy_infer(&config, 2000).unwrap();
    assert!(summary.groups >= 1000);
    assert!(
        summary.synthesis_accuracy >= summary.majority_accuracy,
        "synthesis {} < majority {}",
        summary.synthesis_accuracy,
        summary.majority_accuracy
    );
    assert!(summary.frac_synthesis_correct_all_wrong > 0.0);
    println!(
        "    measured: synthesis {:.3}, majority {:.3}, single {:.3}, \
         correct-while-all-rollouts-wrong {:.3} (full-scale reference points: ~0.14 and ~0.01)",
        summary.synthesis_accuracy,
        summary.majority_accuracy,
        summary.single_accuracy,
        summary.frac_synthesis_correct_all_wrong
    );
    pass(4, "synthesis vs selection over 2000 seeded groups");
}

/// Teacher accuracy is non-decreasing in the group size, and the G=1 column
/// equals the single-rollout baseline.
#[test]
fn criterion_05_group_size_sweep_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config(dir.path(), 0);
    config.mode = Mode::SweepG;
    let report = sweep_g(&config, &[1, 2, 4, 8], 500).unwrap();
    assert!(report.trials >= 100);
    for pair in report.rows.windows(2) {
        assert!(
            pair[1].teacher_accuracy >= pair[0].teacher_accuracy,
            "G={} ({}) < G={} ({})",
            pair[1].g,
            pair[1].teacher_accuracy,
            pair[0].g,
            pair[0].teacher_accuracy
        );
    }
    let g1 = report.rows.iter().find(|r| r.g == 1).unwrap();
    assert!((g1.teacher_accuracy - report.single_accuracy).abs() <= 0.02);
    pass(5, "group-size sweep monotone, G=1 equals single");
}

/// Rubric rewards are the exact fraction of criteria satisfied; the length
/// penalty and judge-parse anomalies behave as specified.
#[test]
fn criterion_06_rubric_reward_exactness() {
    let judge = EndpointHandle::new("mock://judge", "judge");
    let prompts = PromptSet::embedded();
    let rubric_of = |n: usize| Rubric {
        criteria: (0..n).map(|i| Criterion { text: format!("criterion {i}") }).collect(),
        source_reference: "q".into(),
    };

    // yes on even-indexed criteria only
    let mut mock = MockBackend::new();
    for i in 0..10 {
        let decision = if i % 2 == 0 { "YES" } else { "NO" };
        mock.add_script(MockScript::reply(
            Matcher::Contains(format!("criterion {i}\n")),
            format!("<evaluation><reasoning>.</reasoning><decision>{decision}</decision></evaluation>"),
        ));
    }
    for (n, expected) in [(1, 1.0), (5, 3.0 / 5.0), (10, 5.0 / 10.0)] {
        let score =
            reward_rubric(&mock, &judge, &prompts, &Rollout::plain("answer", 10), &rubric_of(n), Some(750))
                .unwrap();
        assert_eq!(score.reward, expected, "n={n}");
        assert_eq!(score.anomalies, 0);
    }

    // 751 tokens against a 750 limit: exactly −1, no judge calls
    let unscripted = MockBackend::new();
    let score = reward_rubric(
        &unscripted,
        &judge,
        &prompts,
        &Rollout::plain("long", 751),
        &rubric_of(5),
        Some(750),
    )
    .unwrap();
    assert_eq!(score.reward, -1.0);
    assert!(score.length_penalty_applied);
    let ok = reward_rubric(&mock, &judge, &prompts, &Rollout::plain("answer", 750), &rubric_of(1), Some(750))
        .unwrap();
    assert!(!ok.length_penalty_applied);

    // an unparseable verdict counts as "no" and is recorded as an anomaly
    let maybe = MockBackend::echo("<evaluation><reasoning>?</reasoning><decision>MAYBE</decision></evaluation>");
    let score =
        reward_rubric(&maybe, &judge, &prompts, &Rollout::plain("answer", 10), &rubric_of(4), None).unwrap();
    assert_eq!(score.reward, 0.0);
    assert_eq!(score.anomalies, 4);
    assert!(score.verdicts.iter().all(|v| v.anomaly));
    pass(6, "rubric reward exactness, length penalty, anomalies");
}

/// Selection baselines agree with brute-force recomputation in this file.
#[test]
fn criterion_07_selection_baselines_match_bruteforce() {
    assert!((perplexity(&[-0.5, -1.0, -1.5]).unwrap() - 1f64.exp()).abs() < 1e-9);

    let mut rng = ChaCha20Rng::seed_from_u64(41);
    for _ in 0..100 {
        let n = rng.gen_range(2..9);
        let rollouts: Vec<Rollout> = (0..n)
            .map(|i| {
                let len = rng.gen_range(1..12);
                let lp: Vec<f64> = (0..len).map(|_| -rng.gen::<f64>() * 4.0).collect();
                Rollout::with_logprobs(format!("text-{i}"), lp)
            })
            .collect();
        let group = RolloutGroup {
            question_id: "q".into(),
            rollouts,
            sampling: SamplingParams::default(),
        };
        // oracle: exp(-mean) per rollout, first argmin
        let ppls: Vec<f64> = group
            .rollouts
            .iter()
            .map(|r| {
                let lp = r.token_logprobs.as_ref().unwrap();
                (-lp.iter().sum::<f64>() / lp.len() as f64).exp()
            })
            .collect();
        let mut best = 0usize;
        for (i, &p) in ppls.iter().enumerate() {
            if p < ppls[best] {
                best = i;
            }
        }
        let got = select_min_ppl(&group).unwrap();
        assert_eq!(got.chosen_index, Some(best));
        assert!((got.score.unwrap() - ppls[best]).abs() < 1e-12);
    }

    // mutual predictability against scripted continuation scores: the oracle
    // is an argmin over per-candidate perplexities computed right here,
    // independent of prompt ordering.
    let mut mock = MockBackend::new();
    let scripted = [("alpha", vec![-2.0, -2.2]), ("beta", vec![-0.2, -0.3]), ("gamma", vec![-1.0, -1.4])];
    for (text, lp) in &scripted {
        mock.add_score_script(ScoreScript {
            prompt_contains: None,
            continuation: (*text).into(),
            logprobs: lp.clone(),
        });
    }
    let oracle_best = scripted
        .iter()
        .enumerate()
        .min_by(|(_, (_, a)), (_, (_, b))| {
            let pa = (-a.iter().sum::<f64>() / a.len() as f64).exp();
            let pb = (-b.iter().sum::<f64>() / b.len() as f64).exp();
            pa.partial_cmp(&pb).unwrap()
        })
        .unwrap()
        .0;
    let group = RolloutGroup {
        question_id: "q".into(),
        rollouts: scripted
            .iter()
            .map(|(t, _)| Rollout::plain(*t, t.len()))
            .collect(),
        sampling: SamplingParams::default(),
    };
    let handle = EndpointHandle::new("mock://policy", "policy");
    let got = select_mp(&mock, &handle, &group, 9).unwrap();
    assert_eq!(got.chosen_index, Some(oracle_best));
    pass(7, "min-perplexity and mutual predictability vs brute force");
}

/// Every prompt template renders byte-identically to its golden file, and
/// synthesis prompts are structurally question-blind.
#[test]
fn criterion_08_prompt_golden_files_and_question_blindness() {
    let golden_dir = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let set = PromptSet::embedded();
    let rollouts = vec![
        "First attempt. Therefore, the final answer is: $\\boxed{42}$. I hope it is correct.".to_string(),
        "A different line of reasoning ends at $\\boxed{41}$.".to_string(),
    ];
    let rendered = [
        ("syn_freeform", set.render_synthesis(PromptName::SynFreeform, &rollouts).unwrap()),
        ("syn_cot", set.render_synthesis(PromptName::SynCot, &rollouts).unwrap()),
        (
            "rubric_gen",
            set.render_rubric_gen("A thorough answer names the capital and one historical fact.").unwrap(),
        ),
        (
            "rubric_judge",
            set.render_rubric_judge(
                "Names the capital city explicitly.",
                "The capital is Paris, founded on the Seine.",
            )
            .unwrap(),
        ),
        ("model_judge", set.render_model_judge("1 + 274i", "1+274i").unwrap()),
        ("self_bon", set.render_self_bon(&rollouts).unwrap()),
    ];
    for (name, text) in &rendered {
        let golden = std::fs::read_to_string(golden_dir.join(format!("{name}.txt")))
            .unwrap_or_else(|e| panic!("missing golden {name}: {e}"));
        assert_eq!(text, &golden, "{name} drifted");
    }

    // question-blindness: a sentinel that exists only in the question text
    // cannot reach the synthesis prompt
    const SENTINEL: &str = "SENTINEL-acceptance-57c1";
    for name in [PromptName::SynFreeform, PromptName::SynCot] {
        assert!(!set.render_synthesis(name, &rollouts).unwrap().contains(SENTINEL));
    }
    pass(8, "prompt golden files and question-blind synthesis");
}

/// The teacher-policy accuracy gap shrinks over training: mean gap in the
/// last tenth of steps is below the first tenth, on three seeds.
#[test]
fn criterion_09_gap_closes_toward_a_plateau() {
    for seed in [0, 1, 2] {
        let dir = tempfile::tempdir().unwrap();
        let report = train_cat_rl(&base_config(dir.path(), seed)).unwrap();
        let n = report.step_metrics.len();
        let tenth = (n / 10).max(1);
        let early: f64 =
            report.step_metrics[..tenth].iter().map(|m| m.gap).sum::<f64>() / tenth as f64;
        let late: f64 =
            report.step_metrics[n - tenth..].iter().map(|m| m.gap).sum::<f64>() / tenth as f64;
        assert!(late < early, "seed {seed}: early gap {early:.4}, late gap {late:.4}");
    }
    pass(9, "teacher-policy gap shrinks, 3/3 seeds");
}

/// Identical config and seed give byte-identical summaries.
#[test]
fn criterion_10_runs_are_reproducible() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let mut config_a = base_config(dir_a.path(), 5);
    let mut config_b = base_config(dir_b.path(), 5);
    config_a.toy.steps = 50;
    config_b.toy.steps = 50;
    let a = train_cat_rl(&config_a).unwrap();
    let b = train_cat_rl(&config_b).unwrap();
    assert_eq!(a.summary_hash, b.summary_hash);
    assert_eq!(
        std::fs::read(dir_a.path().join("summary.json")).unwrap(),
        std::fs::read(dir_b.path().join("summary.json")).unwrap()
    );
    pass(10, "byte-identical summaries on rerun");
}

/// Paired RL and SFT runs on the same seed emit a comparison report; the
/// comparison itself is reported, not asserted.
#[test]
fn criterion_11_rl_vs_sft_comparison_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = base_config(dir.path(), 0);
    let report = rl_vs_sft(&config).unwrap();

    let path = dir.path().join("rl_vs_sft.json");
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    for key in ["seed", "rl_final_accuracy", "sft_final_accuracy", "rl_beats_sft"] {
        assert!(parsed.get(key).is_some(), "missing {key} in {}", path.display());
    }
    assert!(report.rl_final_accuracy.is_finite() && report.sft_final_accuracy.is_finite());
    if !report.rl_beats_sft {
        println!(
            "    FLAG: sft {:.4} exceeded rl {:.4} on seed {}",
            report.sft_final_accuracy, report.rl_final_accuracy, report.seed
        );
    } else {
        println!(
            "    rl {:.4} vs sft {:.4}",
            report.rl_final_accuracy, report.sft_final_accuracy
        );
    }
    pass(11, "paired rl-vs-sft comparison report");
}
