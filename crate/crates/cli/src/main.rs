use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use vidshield::classifier::Scenario;
use vidshield_cli::commands;
use vidshield_cli::config::{DefenseMode, Paths, Preset, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "vidshield",
    version,
    about = "Toy-world video forgery detection, tracing and immunization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Required unless the config file sets it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[arg(long, global = true)]
    scenario: Option<Scenario>,
    /// Generator ids withheld from training; repeatable.
    #[arg(long = "leave-out", global = true)]
    leave_out: Vec<String>,
    /// Perturbation bound on the [0, 1] scale; repeatable, replaces the configured grid.
    #[arg(long, global = true)]
    eta: Vec<f64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<DefenseMode>,
    #[arg(long = "target-image", global = true)]
    target_image: Option<PathBuf>,
    /// PNG to immunize.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Root for corpus/, checkpoints/ and reports/.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render reals, train generators and the predictor, sample fakes. Resumable.
    GenCorpus,
    /// Train a real/fake detector for a detection scenario.
    TrainDetector,
    /// Train a source tracer for a tracing scenario.
    TrainTracer,
    /// Score a trained model on its recorded split.
    Eval,
    /// Perturb an image under each η.
    Immunize,
    /// Quality of generations from clean versus immunized inputs.
    Quality,
    /// SVG and CSV charts from reports and the corpus.
    Plot,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut run = match (&cli.config, cli.seed) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(seed)) => RunConfig::new(seed),
        (None, None) => bail!("--seed is required (or a --config that sets it)"),
    };
    if let Some(s) = cli.seed {
        run.seed = s;
    }
    if let Some(p) = cli.preset {
        run.preset = p;
    }
    if let Some(s) = cli.scenario {
        run.scenario = Some(s);
    }
    if !cli.leave_out.is_empty() {
        run.leave_out = cli.leave_out.clone();
    }
    if !cli.eta.is_empty() {
        run.budget.etas = cli.eta.clone();
    }
    if let Some(m) = cli.mode {
        run.immunize.mode = m;
    }
    if let Some(t) = &cli.target_image {
        run.immunize.target_image = Some(t.clone());
    }
    if let Some(i) = &cli.input {
        run.immunize.input = Some(i.clone());
    }
    if let Some(o) = &cli.out {
        run.paths = Paths::under(o);
    }
    run.validate()?;
    Ok(run)
}

fn run(cli: &Cli) -> Result<()> {
    let run = resolve(cli)?;
    match cli.command {
        Command::GenCorpus => {
            let s = commands::gen_corpus(&run)?;
            println!(
                "corpus: {} real, {} fake ({} written, {} reused)",
                s.real, s.fake, s.written, s.reused
            );
        }
        Command::TrainDetector | Command::TrainTracer => {
            let tracing = matches!(cli.command, Command::TrainTracer);
            let stem = commands::train_model(&run, tracing)?;
            println!("model: {}", stem.display());
        }
        Command::Eval => {
            let r = commands::eval(&run)?;
            println!("{}: accuracy {:.4}", r.scenario, r.accuracy);
        }
        Command::Immunize => {
            for d in commands::immunize(&run)? {
                println!("{}", d.display());
            }
        }
        Command::Quality => {
            for r in commands::quality(&run)? {
                println!(
                    "ssim clean/immunized {:.4}, motion delta {:.4}",
                    r.clean_vs_immunized.mean_ssim, r.motion_delta
                );
            }
        }
        Command::Plot => {
            for p in commands::plot(&run)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
