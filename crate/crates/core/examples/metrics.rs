//! Response metrics on hand-written token sequences.
//!
//! cargo run --example metrics

use mognet::metrics::{corpus_bleu, inform_rate, perplexity, score, success_rate, SlotRequirements};

fn main() -> mognet::Result<()> {
    let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let refs = vec![words("the hotel is in the north"), words("your taxi is booked for five")];
    let hyps = vec![words("the hotel is in the north"), words("your taxi is booked")];
    println!("bleu (exact)       {:.4}", corpus_bleu(&refs, &refs)?);
    println!("bleu (short reply) {:.4}", corpus_bleu(&hyps, &refs)?);

    // Slot checks work on token ids: 7 and 9 are entities, 12 a requested attribute.
    let reqs = vec![
        SlotRequirements { entities: vec![7], requested: vec![12] },
        SlotRequirements { entities: vec![9], requested: vec![] },
    ];
    let responses = vec![vec![4, 7, 5], vec![9, 12]];
    let inform = inform_rate(&responses, &reqs)?;
    let success = success_rate(&responses, &reqs)?;
    println!("inform {inform:.2}, success {success:.2}");

    for (b, i, s) in [(0.1890, 0.7133, 0.6096), (0.2013, 0.8530, 0.7330)] {
        println!("score({b}, {i}, {s}) = {:.2}", score(b, i, s)?);
    }
    let ppl = perplexity(&[0.5, 0.25, 0.125])?;
    println!("perplexity of [1/2, 1/4, 1/8] = {:.4}", ppl.value);
    Ok(())
}
