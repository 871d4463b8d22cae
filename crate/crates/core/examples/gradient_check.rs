//! Checks the analytic gradient of the full training loss against central
//! differences on a tiny two-expert model.
//!
//! cargo run --release --example gradient_check

use mognet::encoder::DialogueContext;
use mognet::learning::{sample_loss, LossWeights};
use mognet::model::{ModelConfig, MogNet, Session, EOS};
use mognet::tensor::gradient_check;

fn main() -> mognet::Result<()> {
    let cfg = ModelConfig {
        vocab_size: 6,
        embedding: 3,
        hidden: 4,
        n_belief: 2,
        n_db: 1,
        experts: 2,
        max_src_len: 6,
        max_len: 3,
        init_scale: 0.5,
        ..ModelConfig::default()
    };
    let ctx = DialogueContext {
        utterance_tokens: vec![4, 5, 4],
        belief_vector: vec![1, 0],
        db_vector: vec![1],
        intents: vec!["domain:a".into()],
        target_tokens: vec![4, 5, EOS],
    };
    let weights = LossWeights::uniform(0.5, 2)?;
    let loss = |model: &MogNet| -> mognet::Result<(f64, mognet::tensor::Gradients)> {
        let mut sess = Session::new(model);
        let l = sample_loss(&mut sess, &ctx, &[0], &weights)?;
        Ok((sess.tape.scalar(l.total), sess.tape.backward(l.total)?))
    };

    let model = MogNet::new(cfg.clone(), 7)?;
    let mut store = model.params.clone();
    let (value, grads) = loss(&model)?;
    grads.accumulate_into(&mut store, 1.0);
    println!("loss {value:.6}");

    let report = gradient_check(&mut store, 1e-5, 1e-4, |p| Ok(loss(&MogNet::from_params(cfg.clone(), p.clone())?)?.0))?;
    for (name, err) in &report.per_tensor {
        println!("{name:<24} {err:.2e}");
    }
    println!(
        "{} coordinates, max relative error {:.2e}: {}",
        report.coordinates,
        report.max_rel_error,
        if report.passed { "ok" } else { "FAILED" }
    );
    Ok(())
}
