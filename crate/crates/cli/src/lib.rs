//! The `promptforge` command line: train, evaluate, benchmark and inspect
//! visual prompts. [`run`] is the whole program, minus process exit.

mod commands;
mod config;
mod error;
mod manifest;

use clap::{Parser, Subcommand};

use commands::*;

#[derive(Parser, Debug)]
#[command(name = "promptforge", version, about = "Visual prompting for a frozen image classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the source-domain classifier that prompts later adapt
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        args: PretrainArgs,
    },
    /// Learn a prompt on the target domain
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        prompt: PromptArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Accuracy of a (prompted) model on one split
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Accuracy under synthetic corruptions at severities 1 to 5
    Corrupt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Prompt application time relative to the model forward
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: BenchArgs,
    },
    /// Write original, warped, mask and prompted images as PPM
    Visualize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        prompt: PromptArgs,
        #[command(flatten)]
        args: VisualizeArgs,
    },
    /// Check that EVP and AutoVP prompts embed exactly into the full chain
    EmbedCheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: EmbedArgs,
    },
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors exit 2, --help and --version exit 0
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Pretrain { common, task, args } => pretrain_cmd(&common, task, args),
        Command::Train {
            common,
            task,
            prompt,
            train,
        } => train_cmd(&common, task, prompt, train),
        Command::Eval { common, task, args } => eval_cmd(&common, task, args),
        Command::Corrupt { common, task, args } => corrupt_cmd(&common, task, args),
        Command::Bench { common, args } => bench_cmd(&common, args),
        Command::Visualize {
            common,
            task,
            prompt,
            args,
        } => visualize_cmd(&common, task, prompt, args),
        Command::EmbedCheck { common, args } => embed_check_cmd(&common, args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
