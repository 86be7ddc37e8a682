use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use synergy_kit::object::{adapt_with_fingers, select_fingers, ObjectFile};
use synergy_kit::pipeline::demo::{demos_from_csv, demos_to_csv, generate_demos, training_objects};
use synergy_kit::pipeline::fixtures;
use synergy_kit::pipeline::grasp_eval::{grasp_eval, ContactRequest, GraspScenario};
use synergy_kit::pipeline::io::{read_json, read_text, write_atomic, write_json};
use synergy_kit::pipeline::train::{train, train_synthetic, TrainedModels};
use synergy_kit::traj::{kmp_adapt, uniform_grid, ViaPointFile};
use synergy_kit::{Error, HandModel, ObjectPrimitive, PipelineConfig, ScenarioSpec};

const EXIT_ERROR: u8 = 1;
const EXIT_UNSTABLE: u8 = 2;
const EXIT_UNREACHABLE: u8 = 3;

/// Synergy learning, adaptation and grasp evaluation for simulated multi-finger hands.
#[derive(Debug, Parser)]
#[command(name = "synergy-kit", version)]
struct Cli {
    /// Random seed; overrides the scenario and config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Built-in hand name or path to a hand JSON file.
    #[arg(long, global = true)]
    hand: Option<String>,
    /// Partial pipeline configuration JSON applied over defaults and scenario settings.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic demonstrations on the training objects.
    DemoGen {
        #[arg(long, default_value = "demos.csv")]
        out: PathBuf,
    },
    /// Learn synergies, the coefficient mixture and the KMP reference from demonstration CSV.
    Train {
        /// Demonstration CSV; synthetic demonstrations are generated when omitted.
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Fit one mixture per demonstration phase.
        #[arg(long)]
        per_phase: bool,
        #[arg(long, default_value = "models")]
        out: PathBuf,
    },
    /// Turn an object into via points and adapt the trained reference.
    Adapt {
        #[command(flatten)]
        models: ModelArgs,
        /// Object JSON `{kind, dims, pose, mass}`.
        #[arg(long)]
        object: PathBuf,
        #[arg(long)]
        contacts: Option<usize>,
        #[arg(long, default_value = "adapted")]
        out: PathBuf,
    },
    /// Evaluate grasp quality, optionally descending the stability cost.
    GraspEval {
        #[command(flatten)]
        models: ModelArgs,
        /// Grasp scenario JSON.
        #[arg(long, conflicts_with = "object", required_unless_present = "object")]
        scenario: Option<PathBuf>,
        /// Object JSON, used with `--contacts`.
        #[arg(long)]
        object: Option<PathBuf>,
        /// Contact count or comma-separated finger names.
        #[arg(long)]
        contacts: Option<String>,
        #[arg(long)]
        optimize: bool,
        #[arg(long, default_value = "grasp")]
        out: PathBuf,
    },
    /// Run a scripted scenario and write its trace.
    Simulate {
        #[command(flatten)]
        models: ModelArgs,
        /// Scenario JSON path or built-in fixture name.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Directory written by `train`; models are trained on synthetic demonstrations when omitted.
    #[arg(long)]
    models: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            let code = match err.downcast_ref::<Error>() {
                Some(Error::Unreachable(_) | Error::Adaptation(_)) => EXIT_UNREACHABLE,
                _ => EXIT_ERROR,
            };
            let detail = json!({
                "error": format!("{err:#}"),
                "exit_code": code,
            });
            eprintln!("{detail}");
            ExitCode::from(code)
        }
    }
}

/// Command-line settings applied last.
fn finish_config(cli: &Cli, mut cfg: PipelineConfig) -> anyhow::Result<PipelineConfig> {
    if let Some(path) = &cli.config {
        let overrides: Value = read_json(path)?;
        cfg = cfg.with_overrides(&overrides)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(h) = &cli.hand {
        cfg.hand = h.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_models(
    args: &ModelArgs,
    hand: &HandModel,
    cfg: &PipelineConfig,
) -> anyhow::Result<TrainedModels> {
    let models = match &args.models {
        Some(dir) => TrainedModels::load(dir)?,
        None => {
            log::info!("no model directory given, training on synthetic demonstrations");
            train_synthetic(hand, cfg)?
        }
    };
    if models.synergy.n_q() != hand.n_q() {
        bail!(
            "models cover {} joints but hand `{}` has {}",
            models.synergy.n_q(),
            hand.name(),
            hand.n_q()
        );
    }
    Ok(models)
}

fn load_scenario(arg: &str) -> anyhow::Result<ScenarioSpec> {
    if let Some(spec) = fixtures::builtin(arg) {
        return Ok(spec);
    }
    let path = Path::new(arg);
    if !path.exists() {
        bail!(
            "`{arg}` is neither a scenario file nor a built-in fixture ({})",
            fixtures::FIXTURE_NAMES.join(", ")
        );
    }
    Ok(ScenarioSpec::from_json(&read_text(path)?)?)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let Some(command) = &cli.command else {
        if cli.print_config {
            println!(
                "{}",
                finish_config(&cli, PipelineConfig::default())?.to_json()
            );
            return Ok(0);
        }
        bail!("no subcommand given; see --help");
    };
    match command {
        Command::DemoGen { out } => {
            let cfg = finish_config(&cli, PipelineConfig::default())?;
            if cli.print_config {
                println!("{}", cfg.to_json());
                return Ok(0);
            }
            let hand = HandModel::resolve(&cfg.hand)?;
            let set = generate_demos(&hand, &training_objects(), &cfg.demo, cfg.seed)?;
            write_atomic(out, demos_to_csv(&set, cfg.demo.duration).as_bytes())?;
            println!(
                "wrote {} demonstrations to {}",
                set.demos().len(),
                out.display()
            );
            Ok(0)
        }
        Command::Train {
            demos,
            per_phase,
            out,
        } => {
            let mut cfg = finish_config(&cli, PipelineConfig::default())?;
            cfg.train.per_phase |= per_phase;
            if cli.print_config {
                println!("{}", cfg.to_json());
                return Ok(0);
            }
            let hand = HandModel::resolve(&cfg.hand)?;
            let models = match demos {
                Some(path) => {
                    let set = demos_from_csv(&read_text(path)?)
                        .with_context(|| format!("reading {}", path.display()))?;
                    let limits = (set.n_q() == hand.n_q()).then(|| hand.limits());
                    train(&set, limits, &cfg.train, cfg.seed)?
                }
                None => train_synthetic(&hand, &cfg)?,
            };
            models.save(out)?;
            println!(
                "synergies: {} ({:.2}% variance explained)",
                models.synergy.n_s(),
                100.0 * models.synergy.explained_variance()
            );
            println!("mixture components: {}", models.gmm.components().len());
            println!("models written to {}", out.display());
            Ok(0)
        }
        Command::Adapt {
            models,
            object,
            contacts,
            out,
        } => {
            let mut cfg = finish_config(&cli, PipelineConfig::default())?;
            if let Some(n) = contacts {
                cfg.adapt.n_contacts = *n;
            }
            if cli.print_config {
                println!("{}", cfg.to_json());
                return Ok(0);
            }
            let hand = HandModel::resolve(&cfg.hand)?;
            let trained = load_models(models, &hand, &cfg)?;
            let object = ObjectPrimitive::from_file(&read_json::<ObjectFile>(object)?)?;
            let adapted = adapt_with_fingers(
                &hand,
                &trained.synergy,
                &object,
                &select_fingers(&hand, cfg.adapt.n_contacts)?,
                cfg.grasp.mu_f,
                cfg.adapt.preshape_fraction,
            )?;
            let kmp = kmp_adapt(&trained.kmp, &adapted.via_points)?;
            let predictor = kmp.predictor()?;
            let mut rollout = String::from("t");
            for i in 1..=trained.synergy.n_s() {
                rollout.push_str(&format!(",e_{i}"));
            }
            rollout.push('\n');
            for t in uniform_grid(cfg.adapt.rollout_points) {
                rollout.push_str(&t.to_string());
                for v in predictor.mean(t).iter() {
                    rollout.push_str(&format!(",{v}"));
                }
                rollout.push('\n');
            }
            write_json(
                &out.join("via_points.json"),
                &ViaPointFile::new(&adapted.via_points),
            )?;
            write_json(&out.join("kmp.json"), &kmp.to_file())?;
            write_json(&out.join("object.json"), &adapted.grasp.object.to_file())?;
            write_atomic(&out.join("rollout.csv"), rollout.as_bytes())?;
            println!(
                "{} via points, adapted reference written to {}",
                adapted.via_points.len(),
                out.display()
            );
            Ok(0)
        }
        Command::GraspEval {
            models,
            scenario,
            object,
            contacts,
            optimize,
            out,
        } => {
            let mut grasp = match (scenario, object) {
                (Some(path), _) => read_json::<GraspScenario>(path)?,
                (None, Some(path)) => {
                    let obj = ObjectPrimitive::from_file(&read_json::<ObjectFile>(path)?)?;
                    GraspScenario::new(&obj, ContactRequest::default())
                }
                (None, None) => bail!("either --scenario or --object is required"),
            };
            if let Some(c) = contacts {
                grasp.contacts = match c.parse::<usize>() {
                    Ok(n) => ContactRequest::Count(n),
                    Err(_) => ContactRequest::Fingers(
                        c.split(',').map(|s| s.trim().to_string()).collect(),
                    ),
                };
            }
            let mut base = PipelineConfig::default();
            base.grasp = grasp.apply(&base.grasp);
            let cfg = finish_config(&cli, base)?;
            if cli.print_config {
                println!("{}", cfg.to_json());
                return Ok(0);
            }
            let hand = HandModel::resolve(&cfg.hand)?;
            let trained = load_models(models, &hand, &cfg)?;
            let eval = grasp_eval(
                &hand,
                trained.synergy.basis(),
                &grasp,
                &cfg.grasp,
                *optimize,
            )?;
            write_json(&out.join("grasp_eval.json"), &eval)?;
            if eval.descent.is_some() {
                write_atomic(&out.join("descent.csv"), eval.descent_csv().as_bytes())?;
            }
            println!(
                "force closure: {}, min margin {:.4}, gamma {:.4e}",
                eval.report.force_closure, eval.report.min_margin, eval.report.gamma
            );
            Ok(if eval.success { 0 } else { EXIT_UNSTABLE })
        }
        Command::Simulate {
            models,
            scenario,
            out,
        } => {
            let spec = load_scenario(scenario)?;
            let cfg = finish_config(&cli, spec.config(&PipelineConfig::default())?)?;
            if cli.print_config {
                println!("{}", cfg.to_json());
                return Ok(0);
            }
            let hand = HandModel::resolve(&cfg.hand)?;
            let trained = load_models(models, &hand, &cfg)?;
            let trace = synergy_kit::simulate(&spec, &hand, &trained, &cfg)?;
            write_atomic(&out.join("trace.csv"), trace.to_csv().as_bytes())?;
            let mut summary = trace.summary_json();
            summary.push('\n');
            write_atomic(&out.join("summary.json"), summary.as_bytes())?;
            for p in &trace.phases {
                println!(
                    "{:<12} {} {}",
                    p.name,
                    if p.ok { "ok  " } else { "FAIL" },
                    p.detail
                );
            }
            println!("status: {:?}", trace.status);
            Ok(u8::try_from(trace.exit_code()).unwrap_or(EXIT_ERROR))
        }
    }
}
