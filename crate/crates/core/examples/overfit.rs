//! Memorizes an 8-sample corpus and checks that greedy decoding returns
//! every gold response.
//!
//! cargo run --release --example overfit [-- <epochs> <batch_size> <lr> <hidden> <seed>]

use mognet::chair::generate;
use mognet::corpus::{generate_corpus, GrammarConfig, ToyGrammar};
use mognet::learning::{partition_dataset, LossWeights, OptimizerConfig, TrainConfig, TrainSet, Trainer};
use mognet::model::{ModelConfig, MogNet};

fn main() -> mognet::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let arg = |i: usize, default: f64| args.get(i).copied().unwrap_or(default);
    let epochs = arg(0, 300.0) as usize;
    let batch_size = arg(1, 1.0) as usize;
    let lr = arg(2, 0.01);
    let hidden = arg(3, 32.0) as usize;
    let seed = arg(4, 1.0) as u64;

    let grammar = ToyGrammar::new(GrammarConfig::default())?;
    let samples = generate_corpus(&grammar, 30, 0.674)?.train[..8].to_vec();
    let intents = grammar.domain_labels();
    let partition = partition_dataset(&samples, &intents)?;
    let train = TrainSet {
        samples: samples.clone(),
        assignment: partition.assignment,
    };
    let cfg = ModelConfig {
        vocab_size: grammar.vocab.len(),
        n_belief: grammar.n_belief(),
        n_db: grammar.n_db(),
        experts: intents.len(),
        hidden,
        ..ModelConfig::default()
    };
    let model = MogNet::new(cfg, seed)?;
    let config = TrainConfig {
        epochs,
        batch_size,
        optimizer: OptimizerConfig { lr, ..OptimizerConfig::default() },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, config, LossWeights::uniform(0.5, intents.len())?, &train, None)?;
    trainer.run()?;
    let loss = trainer.training_loss()?;
    println!("training loss after {epochs} epochs: {loss:.5}");

    let mut exact = 0;
    for s in &samples {
        let g = generate(&trainer.model, s, trainer.model.config.max_len)?;
        let ok = g.tokens == s.target_tokens;
        exact += usize::from(ok);
        println!("{} {}", if ok { "ok  " } else { "MISS" }, grammar.vocab.decode(&g.tokens).join(" "));
    }
    println!("{exact}/{} responses reproduced", samples.len());
    Ok(())
}
