use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctrl_cli::{run, Command, Flags};

#[derive(Parser)]
#[command(name = "ctrl", version, about = "Fine-tune score-based diffusion models with continuous-time RL")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Fit the score network by denoising score matching.
    Pretrain(Common),
    /// Fine-tune the pretrained score (resumes an interrupted run).
    Finetune(Common),
    /// Sample quality and mean reward of one checkpoint.
    Eval(Common),
    /// Mean reward of the kept round checkpoints at several step counts.
    Robustness(Common),
    /// Policy-gradient, performance-difference, KL and network derivative checks.
    Gradcheck(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Run directory; overrides `out_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Comma-separated step counts, e.g. 25,50,100.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    steps: Option<Vec<usize>>,
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
    let (cmd, c) = match cli.verb {
        Verb::Pretrain(c) => (Command::Pretrain, c),
        Verb::Finetune(c) => (Command::Finetune, c),
        Verb::Eval(c) => (Command::Eval, c),
        Verb::Robustness(c) => (Command::Robustness, c),
        Verb::Gradcheck(c) => (Command::Gradcheck, c),
    };
    let flags = Flags {
        config: c.config,
        seed: c.seed,
        out: c.out,
        checkpoint: c.checkpoint,
        steps: c.steps,
    };
    match run(cmd, &flags) {
        Ok(out) => {
            for line in out.summary {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
