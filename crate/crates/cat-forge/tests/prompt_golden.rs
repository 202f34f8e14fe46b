//! Golden-file coverage for every prompt template, rendered with fixed
//! fixtures. Regenerate with `GOLDEN_REGEN=1 cargo test -p cat-forge
//! --test prompt_golden` after a deliberate template change.

use std::path::PathBuf;

use cat_forge::prompts::{PromptName, PromptSet};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn check(name: &str, rendered: &str) {
    let path = golden_dir().join(format!("{name}.txt"));
    if std::env::var_os("GOLDEN_REGEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, rendered).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
    assert_eq!(rendered, expected, "rendered {name} drifted from its golden file");
}

fn fixture_rollouts() -> Vec<String> {
    vec![
        "First attempt. Therefore, the final answer is: $\\boxed{42}$. I hope it is correct.".into(),
        "A different line of reasoning ends at $\\boxed{41}$.".into(),
    ]
}

#[test]
fn synthesis_freeform_matches_golden() {
    let set = PromptSet::embedded();
    let out = set.render_synthesis(PromptName::SynFreeform, &fixture_rollouts()).unwrap();
    assert!(!out.contains("{rollouts}"));
    check("syn_freeform", &out);
}

#[test]
fn synthesis_cot_matches_golden() {
    let set = PromptSet::embedded();
    let out = set.render_synthesis(PromptName::SynCot, &fixture_rollouts()).unwrap();
    assert!(!out.contains("{rollouts}"));
    check("syn_cot", &out);
}

#[test]
fn rubric_generation_matches_golden() {
    let set = PromptSet::embedded();
    let out = set
        .render_rubric_gen("A thorough answer names the capital and one historical fact.")
        .unwrap();
    assert!(!out.contains("{response}"));
    check("rubric_gen", &out);
}

#[test]
fn rubric_judge_matches_golden() {
    let set = PromptSet::embedded();
    let out = set
        .render_rubric_judge(
            "Names the capital city explicitly.",
            "The capital is Paris, founded on the Seine.",
        )
        .unwrap();
    assert!(!out.contains("{rubric}") && !out.contains("{predicted_answer}"));
    check("rubric_judge", &out);
}

#[test]
fn model_judge_matches_golden() {
    let set = PromptSet::embedded();
    let out = set.render_model_judge("1 + 274i", "1+274i").unwrap();
    check("model_judge", &out);
}

#[test]
fn self_bon_matches_golden() {
    let set = PromptSet::embedded();
    let out = set.render_self_bon(&fixture_rollouts()).unwrap();
    assert!(!out.contains("{rollouts}"));
    check("self_bon", &out);
}

/// The synthesis prompt is built from rollouts alone: a sentinel question
/// string can never appear in it unless a rollout carries it.
#[test]
fn synthesis_prompts_are_question_blind() {
    const SENTINEL: &str = "SENTINEL-QUESTION-TEXT-9f3a";
    let set = PromptSet::embedded();
    for name in [PromptName::SynFreeform, PromptName::SynCot] {
        let out = set.render_synthesis(name, &fixture_rollouts()).unwrap();
        assert!(!out.contains(SENTINEL));
    }
    // and it does appear when a rollout quotes it, proving the check is live
    let out = set
        .render_synthesis(PromptName::SynCot, &[format!("quoting {SENTINEL}")])
        .unwrap();
    assert!(out.contains(SENTINEL));
}
