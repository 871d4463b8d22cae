//! Varies the weight between the experts' own losses and the chair's global
//! loss.
//!
//! cargo run --release --example lambda_sweep [-- <epochs> <seed> <lambda>...]

use mognet::harness::{cmd_gen_corpus, cmd_lambda_sweep, RunConfig};

fn main() -> mognet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = RunConfig::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy.cfg").as_ref())?;
    cfg.train.epochs = args.first().map_or(20, |a| a.parse().expect("epoch count"));
    cfg.train.seed = args.get(1).map_or(1, |a| a.parse().expect("seed"));
    let mut lambdas: Vec<f64> = args.iter().skip(2).map(|a| a.parse().expect("lambda")).collect();
    if lambdas.is_empty() {
        lambdas = vec![0.0, 0.25, 0.5, 0.75, 1.0];
    }
    let out = std::path::Path::new("runs/examples/lambda-sweep");

    cmd_gen_corpus(&cfg, out)?;
    let table = cmd_lambda_sweep(&cfg, out, &out.join("corpus"), &lambdas)?;
    print!("{}", table.to_markdown());
    Ok(())
}
