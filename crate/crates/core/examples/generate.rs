//! Greedy decoding with a short-trained model, showing each expert's own
//! response and how the chair weighs its sources at every step.
//!
//! cargo run --release --example generate [-- <epochs> <n_samples>]

use mognet::evaluation::strip_eos;
use mognet::harness::{cmd_gen_corpus, cmd_train, RunConfig};

fn main() -> mognet::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let epochs = args.first().copied().unwrap_or(15);
    let n = args.get(1).copied().unwrap_or(3);
    let mut cfg = RunConfig::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy.cfg").as_ref())?;
    cfg.train.epochs = epochs;
    let out = std::path::Path::new("runs/examples/generate");

    let (corpus, _) = cmd_gen_corpus(&cfg, out)?;
    let outcome = cmd_train(&cfg, &out.join("train"), &out.join("corpus"), false)?;
    let model = outcome.model;
    let vocab = &corpus.grammar.vocab;
    let k = model.experts();
    for s in corpus.split.test.iter().take(n) {
        let g = mognet::chair::generate(&model, s, model.config.max_len)?;
        println!("user:      {}", vocab.decode(&s.utterance_tokens).join(" "));
        println!("reference: {}", vocab.decode(&strip_eos(&s.target_tokens)).join(" "));
        for (l, t) in g.expert_tokens.iter().enumerate() {
            println!("expert {l}:  {}", vocab.decode(&strip_eos(t)).join(" "));
        }
        println!("generated: ({} chair steps, {} expert steps)", g.calls.chair_cells, g.calls.expert_cells);
        for (&tok, beta) in g.tokens.iter().zip(&g.betas) {
            let retro: f64 = beta[1..=k].iter().sum();
            let prosp: f64 = beta[k + 1..].iter().sum();
            println!("  {:<12} chair {:.2} retro {:.2} prosp {:.2}", vocab.token(tok), beta[0], retro, prosp);
        }
        println!();
    }
    Ok(())
}
