//! Generates the synthetic dialogue corpus and prints a few records along
//! with how separable the intents' response vocabularies are.
//!
//! cargo run --example corpus [-- <config.cfg> <out_dir>]

use std::path::PathBuf;

use mognet::evaluation::strip_eos;
use mognet::harness::{cmd_gen_corpus, RunConfig};

fn main() -> mognet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let config = args.first().map(PathBuf::from).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy.cfg").into());
    let out = args.get(1).map(PathBuf::from).unwrap_or_else(|| "runs/examples/corpus".into());
    let cfg = RunConfig::from_file(&config)?;

    let (corpus, report) = cmd_gen_corpus(&cfg, &out)?;
    let vocab = &corpus.grammar.vocab;
    println!("splits {:?}, vocabulary {}", report.split_sizes, vocab.len());
    for s in corpus.split.train.iter().take(4) {
        println!("intents: {}", s.intents.join(", "));
        println!("  user:   {}", vocab.decode(&s.utterance_tokens).join(" "));
        println!("  system: {}", vocab.decode(&strip_eos(&s.target_tokens)).join(" "));
        println!("  belief {:?} db {:?}", s.belief_vector, s.db_vector);
    }
    for stats in [&report.domain, &report.action] {
        println!(
            "{}: {:.1}% multi-intent, min pairwise KL {:.3} nats",
            stats.intents.join("/"),
            100.0 * stats.multi_intent_fraction,
            stats.min_off_diagonal_kl().unwrap_or(0.0)
        );
    }
    println!("written to {}", out.join("corpus").display());
    Ok(())
}
