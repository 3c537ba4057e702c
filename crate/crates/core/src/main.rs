use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use svlb::cli::{self, Options};

#[derive(Parser)]
#[command(name = "svlb", version, about = "Train and compare small vision-language models on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides experiment.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Load checkpoints even if their config hash differs.
    #[arg(long)]
    force: bool,
}

impl From<Common> for Options {
    fn from(c: Common) -> Self {
        Options {
            config: c.config,
            seed: c.seed,
            out: c.out,
            force: c.force,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/eval dataset.
    GenData(Common),
    /// Pretrain the image encoder with the configured objective.
    PretrainEncoder(Common),
    /// Two-stage alignment of the encoder to the language model.
    Align(Common),
    /// Exact-match evaluation of the aligned model.
    Evaluate(Common),
    /// Collect evaluated runs into a CSV and a text table.
    GridReport(Common),
    /// Print every config key with its default.
    Schema,
}

fn run(cmd: Command) -> svlb::Result<()> {
    match cmd {
        Command::GenData(c) => {
            let m = cli::cmd_gen_data(&c.into())?;
            println!("dataset manifest {}", m.hash());
        }
        Command::PretrainEncoder(c) => {
            let m = cli::cmd_pretrain_encoder(&c.into())?;
            println!("pretrained {} for {} steps, final loss {:?}", m.variant, m.steps, m.final_loss);
        }
        Command::Align(c) => {
            let m = cli::cmd_align(&c.into())?;
            println!("aligned {} for {} steps, final loss {:?}", m.variant, m.steps, m.final_loss);
        }
        Command::Evaluate(c) => {
            let row = cli::cmd_evaluate(&c.into())?;
            let acc = row.result.overall.value().unwrap_or(0.0);
            println!("{}: overall accuracy {acc:.4} on {} questions", row.variant, row.result.overall.total);
        }
        Command::GridReport(c) => {
            let r = cli::cmd_grid_report(&c.into())?;
            print!("{}", r.table);
        }
        Command::Schema => print!("{}", cli::schema_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
