//! Trains and tests the four variants (full coordination, no prospective
//! features, chair only, global-loss only) on one seed and prints the table.
//!
//! cargo run --release --example ablation [-- <epochs> <seed>]

use mognet::harness::{cmd_ablate, cmd_gen_corpus, RunConfig, Variant};

fn main() -> mognet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let mut cfg = RunConfig::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy.cfg").as_ref())?;
    cfg.train.epochs = args.first().copied().unwrap_or(20) as usize;
    cfg.train.seed = args.get(1).copied().unwrap_or(1);
    let out = std::path::Path::new("runs/examples/ablation");

    cmd_gen_corpus(&cfg, out)?;
    let table = cmd_ablate(&cfg, out, &out.join("corpus"), &Variant::ALL)?;
    print!("{}", table.to_markdown());
    for v in Variant::ALL {
        let r = table.row(v).expect("every variant ran");
        println!("{:<11} coordination weights off their mask: {}/{}", v.name(), r.beta_violations, r.beta_steps);
    }
    let r = table.row(Variant::MogNet).expect("mognet ran");
    println!("mognet test perplexity [slice][expert]:");
    for row in &r.specialization {
        println!("  {}", row.iter().map(|p| format!("{p:7.3}")).collect::<String>());
    }
    Ok(())
}
