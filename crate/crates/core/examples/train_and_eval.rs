//! Generates a corpus, trains MoGNet on it and scores the selected
//! checkpoint on the test split.
//!
//! cargo run --release --example train_and_eval [-- <epochs> <config.cfg> <out_dir>]

use std::path::PathBuf;

use mognet::harness::{cmd_eval, cmd_gen_corpus, cmd_train, RunConfig};

fn main() -> mognet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(10, |a| a.parse().expect("epoch count"));
    let config = args.get(1).map(PathBuf::from).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy.cfg").into());
    let out = args.get(2).map(PathBuf::from).unwrap_or_else(|| "runs/examples/train".into());

    let mut cfg = RunConfig::from_file(&config)?;
    cfg.train.epochs = epochs;
    cmd_gen_corpus(&cfg, &out)?;
    let corpus = out.join("corpus");
    let outcome = cmd_train(&cfg, &out.join("train"), &corpus, false)?;
    println!("best epoch {} of {epochs}", outcome.best_epoch);
    for e in &outcome.log {
        let valid = e.valid_score.map_or("-".into(), |v| format!("{v:.2}"));
        println!("epoch {:>3}  loss {:.4}  valid score {valid}", e.epoch, e.train_loss);
    }
    let (report, _) = cmd_eval(&cfg, &outcome.best_checkpoint, &corpus, "test", false)?;
    println!(
        "test: bleu {:.4} inform {:.4} success {:.4} score {:.2} ppl {:.3}",
        report.bleu, report.inform, report.success, report.score, report.ppl
    );
    Ok(())
}
