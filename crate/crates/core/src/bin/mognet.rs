use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mognet::harness::commands::write_json;
use mognet::harness::{
    cmd_ablate, cmd_eval, cmd_gen_corpus, cmd_generate, cmd_lambda_sweep, cmd_train, RunConfig, Variant,
};
use mognet::learning::PartitionMode;
use mognet::{MogError, Result};

#[derive(Parser)]
#[command(name = "mognet", version, about = "Mixture-of-generators response generation")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides train.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides paths.out_dir.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, global = true, value_enum)]
    partition: Option<PartitionArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    #[value(name = "mognet")]
    MogNet,
    #[value(name = "mognet-p")]
    MogNetP,
    #[value(name = "mognet-p-r")]
    MogNetPR,
    #[value(name = "mognet-gl")]
    MogNetGL,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::MogNet => Variant::MogNet,
            VariantArg::MogNetP => Variant::MogNetP,
            VariantArg::MogNetPR => Variant::MogNetPR,
            VariantArg::MogNetGL => Variant::MogNetGL,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionArg {
    Domain,
    Action,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus, vocabulary and statistics.
    GenCorpus,
    /// Train on the generated corpus.
    Train {
        /// Continue from <out-dir>/train/last.ckpt.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint and write eval-<split>.json.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Score the gold responses instead of generated ones.
        #[arg(long)]
        gold: bool,
    },
    /// Print greedy responses for the first samples of a split.
    Generate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(short, long, default_value_t = 5)]
        n: usize,
    },
    /// Train and test every model variant.
    Ablate,
    /// Train and test across mixing weights.
    LambdaSweep {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5, 1.0])]
        lambdas: Vec<f64>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| MogError::State(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(dir) = cli.out_dir {
        cfg.paths.out_dir = dir;
    }
    if let Some(v) = cli.variant {
        cfg = cfg.with_variant(v.into());
    }
    if let Some(p) = cli.partition {
        cfg.partition.mode = match p {
            PartitionArg::Domain => PartitionMode::Domain,
            PartitionArg::Action => PartitionMode::Action,
        };
    }
    cfg.validate()?;
    let out = cfg.paths.out_dir.clone();
    let corpus_dir = out.join("corpus");
    let default_ckpt = |c: Option<PathBuf>| c.unwrap_or_else(|| out.join("train").join("best.ckpt"));
    match cli.command {
        Command::GenCorpus => {
            let (_, report) = cmd_gen_corpus(&cfg, &out)?;
            print_json(&report)
        }
        Command::Train { resume } => {
            let outcome = cmd_train(&cfg, &out.join("train"), &corpus_dir, resume)?;
            println!(
                "best epoch {} (valid score {}) -> {}",
                outcome.best_epoch,
                outcome.best_score.map_or("n/a".into(), |s| format!("{s:.2}")),
                outcome.best_checkpoint.display()
            );
            Ok(())
        }
        Command::Eval { checkpoint, split, gold } => {
            let (report, _) = cmd_eval(&cfg, &default_ckpt(checkpoint), &corpus_dir, &split, gold)?;
            let name = if gold { format!("eval-{split}-gold.json") } else { format!("eval-{split}.json") };
            write_json(&out.join(name), &report)?;
            print_json(&report)
        }
        Command::Generate { checkpoint, split, n } => {
            for s in cmd_generate(&cfg, &default_ckpt(checkpoint), &corpus_dir, &split, n)? {
                println!("user:      {}", s.utterance.join(" "));
                println!("reference: {}", s.reference.join(" "));
                println!("generated: {}", s.generated.join(" "));
                for (l, e) in s.expert_outputs.iter().enumerate() {
                    println!("expert {l}:  {}", e.join(" "));
                }
                println!();
            }
            Ok(())
        }
        Command::Ablate => {
            let table = cmd_ablate(&cfg, &out, &corpus_dir, &Variant::ALL)?;
            print!("{}", table.to_markdown());
            Ok(())
        }
        Command::LambdaSweep { lambdas } => {
            let table = cmd_lambda_sweep(&cfg, &out, &corpus_dir, &lambdas)?;
            print!("{}", table.to_markdown());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
