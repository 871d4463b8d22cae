//! Corpus BLEU, slot-based Inform/Success, the combined Score, and perplexity.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{MogError, Result};
use crate::tensor::EPS_LOG;

/// Maximum n-gram order.
pub const BLEU_ORDER: usize = 4;

fn ngram_counts<T: Eq + std::hash::Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU with uniform weights up to order 4, one reference per
/// candidate, and the standard brevity penalty. No smoothing: any order with
/// zero clipped matches gives 0. Orders for which the candidate corpus has no
/// n-grams at all are left out of the geometric mean.
pub fn corpus_bleu<T: Eq + std::hash::Hash>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(MogError::invalid(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(MogError::invalid("BLEU over an empty corpus"));
    }
    let mut matches = [0usize; BLEU_ORDER];
    let mut totals = [0usize; BLEU_ORDER];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=BLEU_ORDER {
            let rc = ngram_counts(r, n);
            for (g, cnt) in ngram_counts(c, n) {
                matches[n - 1] += cnt.min(rc.get(g).copied().unwrap_or(0));
                totals[n - 1] += cnt;
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..BLEU_ORDER {
        if totals[n] == 0 {
            continue;
        }
        if matches[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matches[n] as f64 / totals[n] as f64).ln();
        orders += 1;
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * (log_sum / orders as f64).exp())
}

/// Slot tokens a response must contain to count as informative and successful.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRequirements {
    pub entities: Vec<usize>,
    pub requested: Vec<usize>,
}

fn contains_all(response: &[usize], needed: &[usize]) -> bool {
    needed.iter().all(|t| response.contains(t))
}

/// Fraction of responses containing every required entity token. A record
/// with no required entities is satisfied.
pub fn inform_rate(responses: &[Vec<usize>], reqs: &[SlotRequirements]) -> Result<f64> {
    rate(responses, reqs, |r, q| contains_all(r, &q.entities))
}

/// Fraction of responses containing every requested attribute token.
pub fn success_rate(responses: &[Vec<usize>], reqs: &[SlotRequirements]) -> Result<f64> {
    rate(responses, reqs, |r, q| contains_all(r, &q.requested))
}

fn rate(responses: &[Vec<usize>], reqs: &[SlotRequirements], ok: impl Fn(&[usize], &SlotRequirements) -> bool) -> Result<f64> {
    if responses.len() != reqs.len() || responses.is_empty() {
        return Err(MogError::invalid("need one requirement set per response"));
    }
    let hits = responses.iter().zip(reqs).filter(|(r, q)| ok(r, q)).count();
    Ok(hits as f64 / responses.len() as f64)
}

/// `(0.5 Inform + 0.5 Success + BLEU) × 100`, all inputs in `[0, 1]`.
pub fn score(bleu: f64, inform: f64, success: f64) -> Result<f64> {
    for (name, v) in [("bleu", bleu), ("inform", inform), ("success", success)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(MogError::invalid(format!("{name} = {v} outside [0, 1]")));
        }
    }
    Ok((0.5 * inform + 0.5 * success + bleu) * 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perplexity {
    pub value: f64,
    /// Tokens whose probability was zero and fell back to the log guard.
    pub guarded: usize,
}

/// `exp(mean token NLL)` from the probabilities assigned to gold tokens.
pub fn perplexity(gold_probs: &[f64]) -> Result<Perplexity> {
    if gold_probs.is_empty() {
        return Err(MogError::invalid("perplexity over zero tokens"));
    }
    if gold_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(MogError::invalid("token probabilities must lie in [0, 1]"));
    }
    let guarded = gold_probs.iter().filter(|&&p| p == 0.0).count();
    let nll: f64 = gold_probs.iter().map(|p| -(p + EPS_LOG).ln()).sum();
    Ok(Perplexity {
        value: (nll / gold_probs.len() as f64).exp(),
        guarded,
    })
}

/// Evaluation summary written as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub inform: f64,
    pub success: f64,
    pub score: f64,
    pub ppl: f64,
    pub n_records: usize,
    pub config_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_corpus_scores_one() {
        let c = vec![toks("the cat sat on the mat"), toks("a b c d e")];
        assert_abs_diff_eq!(corpus_bleu(&c, &c).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn no_shared_unigram_scores_zero() {
        let c = vec![toks("a b c d")];
        let r = vec![toks("e f g h")];
        assert_eq!(corpus_bleu(&c, &r).unwrap(), 0.0);
    }

    #[test]
    fn short_candidate_gets_brevity_penalty() {
        // Every n-gram matches, so BLEU equals the penalty exp(1 - 8/4).
        let c = vec![toks("a b c d")];
        let r = vec![toks("a b c d e f g h")];
        assert_abs_diff_eq!(corpus_bleu(&c, &r).unwrap(), (-1f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn clipped_counts() {
        // Unigram 2/4 (clipped "the"), bigram 1/3, trigram 0 -> 0.
        let c = vec![toks("the the the cat")];
        let r = vec![toks("the cat on mat")];
        assert_eq!(corpus_bleu(&c, &r).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_lengths_error() {
        let c = vec![toks("a")];
        assert!(corpus_bleu(&c, &[]).is_err());
    }

    #[test]
    fn score_examples() {
        assert_abs_diff_eq!(score(0.1890, 0.7133, 0.6096).unwrap(), 85.05, epsilon = 0.005);
        assert_abs_diff_eq!(score(0.2013, 0.8530, 0.7330).unwrap(), 99.43, epsilon = 0.005);
        assert_abs_diff_eq!(score(0.0, 0.0, 0.0).unwrap(), 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(score(1.0, 1.0, 1.0).unwrap(), 200.0, epsilon = 0.0);
        assert!(score(1.2, 0.5, 0.5).is_err());
    }

    #[test]
    fn slot_rates() {
        let reqs = vec![
            SlotRequirements { entities: vec![10], requested: vec![20] },
            SlotRequirements { entities: vec![11], requested: vec![] },
        ];
        let resp = vec![vec![10, 5, 2], vec![4, 2]];
        assert_eq!(inform_rate(&resp, &reqs).unwrap(), 0.5);
        assert_eq!(success_rate(&resp, &reqs).unwrap(), 0.5);
    }

    #[test]
    fn perplexity_of_uniform_is_vocab_size() {
        let p = perplexity(&[1.0 / 40.0; 6]).unwrap();
        assert_abs_diff_eq!(p.value, 40.0, epsilon = 1e-8);
        assert_abs_diff_eq!(perplexity(&[1.0; 3]).unwrap().value, 1.0, epsilon = 1e-11);
        let q = perplexity(&[0.5, 0.25]).unwrap();
        assert_abs_diff_eq!(q.value, 2.0 * 2f64.sqrt(), epsilon = 1e-10);
        assert_eq!(p.guarded, 0);
        let g = perplexity(&[0.5, 0.0]).unwrap();
        assert_eq!(g.guarded, 1);
        assert!(g.value.is_finite());
    }
}
