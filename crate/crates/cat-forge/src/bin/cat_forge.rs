use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cat_forge::backend::{Backend, HttpBackend, Matcher, MockBackend, MockScript};
use cat_forge::harness::config::{BackendKind, Mode};
use cat_forge::harness::infer::{cat_infer, load_questions, sweep_g, toy_infer};
use cat_forge::harness::trainer::{rl_vs_sft, train_cat_rl, train_cat_sft};
use cat_forge::harness::RunConfig;
use cat_forge::select::SelectionMethod;
use cat_forge::{Error, Result};

#[derive(Parser)]
#[command(name = "cat-forge", version, about = "Group-rollout reference synthesis and RL harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a rollout group per question and synthesize a reference.
    /// Falls back to the built-in toy world when no backend is configured.
    Infer {
        /// Rollouts per group.
        #[arg(long)]
        g: Option<usize>,
        /// Toy-mode only: number of seeded groups to run.
        #[arg(long, default_value_t = 1000)]
        groups: usize,
    },
    /// Run selection baselines next to synthesis over the same groups.
    Evaluate {
        #[arg(long)]
        g: Option<usize>,
        /// `all` or a comma list of single,self_bon,min_ppl,mp,majority.
        #[arg(long, default_value = "all")]
        baselines: String,
        #[arg(long, default_value_t = 1000)]
        groups: usize,
    },
    /// Train the toy policy against its own synthesized references.
    TrainToy {
        /// Run the offline SFT baseline instead of RL.
        #[arg(long)]
        sft: bool,
        /// Run paired RL and SFT and write a comparison report.
        #[arg(long)]
        compare: bool,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Teacher accuracy as a function of group size, coupled samples.
    SweepG {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        values: Vec<usize>,
        #[arg(long, default_value_t = 500)]
        trials: usize,
    },
}

fn parse_baselines(spec: &str) -> Result<Vec<SelectionMethod>> {
    if spec == "all" {
        return Ok(vec![
            SelectionMethod::Single,
            SelectionMethod::SelfBon,
            SelectionMethod::MinPpl,
            SelectionMethod::Mp,
            SelectionMethod::Majority,
        ]);
    }
    spec.split(',')
        .map(|name| match name.trim() {
            "single" => Ok(SelectionMethod::Single),
            "self_bon" => Ok(SelectionMethod::SelfBon),
            "min_ppl" => Ok(SelectionMethod::MinPpl),
            "mp" => Ok(SelectionMethod::Mp),
            "majority" => Ok(SelectionMethod::Majority),
            other => Err(Error::InvalidConfig(format!("unknown baseline {other:?}"))),
        })
        .collect()
}

/// Scripted backend for smoke runs without an endpoint: rollouts carry a
/// fixed boxed answer (seed-varied text), the anchor emits a unified
/// response, and judge prompts get compliant replies.
fn demo_mock() -> MockBackend {
    let mut mock = MockBackend::new();
    mock.add_script(MockScript::reply(Matcher::Contains("Select the number".into()), "1"));
    mock.add_script(MockScript::reply(
        Matcher::Contains("## Response".into()),
        "Reconciling the responses.\n\n# UNIFIED RESPONSE\nTherefore, the final answer is: $\\boxed{4}$. I hope it is correct.",
    ));
    mock.add_script(MockScript::reply(Matcher::Contains("<decision>".into()), "FINAL DECISION: YES"));
    mock.add_script(MockScript::reply(
        Matcher::Contains("<rubrics>".into()),
        "<rubrics><criterion>States the final answer clearly.</criterion></rubrics>",
    ));
    mock.add_script(
        MockScript::reply(Matcher::Any, "Working through it, the answer is $\\boxed{4}$.")
            .with_seed_variation(),
    );
    mock
}

fn load_config(cli: &Cli, mode: Mode) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::for_mode(mode),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.clone();
    }
    Ok(config)
}

fn endpoint_run(config: &RunConfig, baselines: &[SelectionMethod]) -> Result<()> {
    let backend_config = config.backend.as_ref().expect("caller checked");
    let backend: Box<dyn Backend> = match backend_config.kind {
        BackendKind::Http => Box::new(HttpBackend::new()),
        BackendKind::Mock => Box::new(demo_mock()),
    };
    // the scripted demo backend cannot attach per-token logprobs
    let baselines: Vec<SelectionMethod> = baselines
        .iter()
        .copied()
        .filter(|&m| backend_config.kind != BackendKind::Mock || m != SelectionMethod::MinPpl)
        .collect();
    let questions_path = config
        .questions
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("endpoint-facing run needs `questions`".into()))?;
    let questions = load_questions(questions_path)?;
    let report = cat_infer(config, backend.as_ref(), &questions, &baselines)?;
    println!("questions: {}", report.questions);
    for (method, accuracy) in &report.method_accuracy {
        println!("{method}: {accuracy:.4}");
    }
    println!("report: {}", config.out_dir.join("infer.json").display());
    Ok(())
}

fn toy_run(config: &RunConfig, groups: usize) -> Result<()> {
    let summary = toy_infer(config, groups)?;
    println!("groups: {} (G={})", summary.groups, summary.g);
    println!("synthesis: {:.4}", summary.synthesis_accuracy);
    println!("majority:  {:.4}", summary.majority_accuracy);
    println!("single:    {:.4}", summary.single_accuracy);
    println!("synthesis correct, all rollouts wrong: {:.4}", summary.frac_synthesis_correct_all_wrong);
    println!("report: {}", config.out_dir.join("toy_infer.json").display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Infer { g, groups } => {
            let mut config = load_config(cli, Mode::Infer)?;
            if let Some(g) = g {
                config.g = *g;
            }
            match config.backend {
                Some(_) => endpoint_run(&config, &[SelectionMethod::Single, SelectionMethod::Majority]),
                None => toy_run(&config, *groups),
            }
        }
        Command::Evaluate { g, baselines, groups } => {
            let mut config = load_config(cli, Mode::Evaluate)?;
            if let Some(g) = g {
                config.g = *g;
            }
            let baselines = parse_baselines(baselines)?;
            match config.backend {
                Some(_) => endpoint_run(&config, &baselines),
                None => toy_run(&config, *groups),
            }
        }
        Command::TrainToy { sft, compare, steps } => {
            let mut config = load_config(cli, Mode::TrainToy)?;
            if let Some(steps) = steps {
                config.toy.steps = *steps;
            }
            if *compare {
                let report = rl_vs_sft(&config)?;
                println!("rl:  {:.4}", report.rl_final_accuracy);
                println!("sft: {:.4}", report.sft_final_accuracy);
                println!("report: {}", config.out_dir.join("rl_vs_sft.json").display());
            } else if *sft {
                let report = train_cat_sft(&config)?;
                println!("accuracy: {:.4} -> {:.4} ({} epochs)", report.initial_accuracy, report.final_accuracy, report.epochs_run);
                println!("report: {}", config.out_dir.join("sft_summary.json").display());
            } else {
                let report = train_cat_rl(&config)?;
                println!("accuracy: {:.4} -> {:.4} ({} steps)", report.initial_accuracy, report.final_accuracy, report.steps_run);
                println!("report: {}", config.out_dir.join("summary.json").display());
            }
            Ok(())
        }
        Command::SweepG { values, trials } => {
            let config = load_config(cli, Mode::SweepG)?;
            let report = sweep_g(&config, values, *trials)?;
            for row in &report.rows {
                println!("G={}: {:.4}", row.g, row.teacher_accuracy);
            }
            println!("single: {:.4}", report.single_accuracy);
            println!("report: {}", config.out_dir.join("sweep.csv").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
