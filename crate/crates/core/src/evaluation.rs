//! Runs a model over a labelled split: greedy generation for BLEU, Inform
//! and Success, plus a teacher-forced pass for perplexity and loss.

use rayon::prelude::*;

use crate::chair::{chair_teacher_forced, forced_expert_rollouts, generate};
use crate::encoder::{encode, DialogueContext};
use crate::error::{MogError, Result};
use crate::learning::loss::LossWeights;
use crate::metrics::{corpus_bleu, inform_rate, perplexity, score, success_rate, SlotRequirements};
use crate::model::{MogNet, Session, EOS};

/// Samples with their expert assignment and slot requirements.
#[derive(Clone, Debug, Default)]
pub struct EvalSet {
    pub samples: Vec<DialogueContext>,
    pub assignment: Vec<Vec<usize>>,
    pub requirements: Vec<SlotRequirements>,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(MogError::invalid("empty evaluation set"));
        }
        if self.assignment.len() != self.samples.len() || self.requirements.len() != self.samples.len() {
            return Err(MogError::invalid("evaluation set fields differ in length"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub bleu: f64,
    pub inform: f64,
    pub success: f64,
    pub score: f64,
    pub ppl: f64,
    /// Tokens whose gold probability was exactly zero.
    pub ppl_guarded: usize,
    /// Mean per-sample combined loss.
    pub loss: f64,
    pub generated: Vec<Vec<usize>>,
    /// Generation steps whose coordination weights were inspected.
    pub beta_steps: usize,
    /// Steps with non-zero weight on a component the variant disables.
    pub beta_violations: usize,
}

/// Tokens before the first EOS.
pub fn strip_eos(tokens: &[usize]) -> Vec<usize> {
    tokens.iter().take_while(|&&t| t != EOS).copied().collect()
}

struct Forced {
    gold_probs: Vec<f64>,
    expert_nll: f64,
    chair_nll: f64,
}

fn forced_pass(model: &MogNet, ctx: &DialogueContext, experts: &[usize], mu: &[f64]) -> Result<Forced> {
    let mut sess = Session::new(model);
    let target = ctx.target_tokens.as_slice();
    let enc = encode(&mut sess, ctx)?;
    let cache = forced_expert_rollouts(&mut sess, &enc, target)?;
    let pass = chair_teacher_forced(&mut sess, &enc, &cache, target)?;
    let nll = |p: f64| -(p + crate::tensor::EPS_LOG).ln();
    let gold_probs: Vec<f64> = pass
        .mixtures
        .iter()
        .zip(target)
        .map(|(&m, &y)| sess.tape.value(m)[y])
        .collect();
    let mut expert_nll = 0.0;
    for &l in experts {
        let w = mu.get(l).copied().unwrap_or(1.0);
        let r = &cache.rollouts[l];
        expert_nll += w * r.dists.iter().zip(target).map(|(&d, &y)| nll(sess.tape.value(d)[y])).sum::<f64>();
    }
    let chair_nll = gold_probs.iter().map(|&p| nll(p)).sum();
    Ok(Forced {
        gold_probs,
        expert_nll,
        chair_nll,
    })
}

/// Scores `responses` (EOS optional) against the references of `set`.
pub fn response_metrics(responses: &[Vec<usize>], set: &EvalSet) -> Result<(f64, f64, f64, f64)> {
    set.check()?;
    let cands: Vec<Vec<usize>> = responses.iter().map(|r| strip_eos(r)).collect();
    let refs: Vec<Vec<usize>> = set.samples.iter().map(|s| strip_eos(&s.target_tokens)).collect();
    let bleu = corpus_bleu(&cands, &refs)?;
    let inform = inform_rate(&cands, &set.requirements)?;
    let success = success_rate(&cands, &set.requirements)?;
    Ok((bleu, inform, success, score(bleu, inform, success)?))
}

/// Full evaluation. When `use_gold` is set, the gold responses stand in for
/// generated ones, which isolates the metric code from the model.
pub fn evaluate(model: &MogNet, set: &EvalSet, weights: &LossWeights, use_gold: bool) -> Result<Evaluation> {
    set.check()?;
    let max_len = model.config.max_len;
    let mask = model.config.flags.beta_mask(model.experts());
    let per_sample: Vec<Result<(Forced, Vec<usize>, usize, usize)>> = set
        .samples
        .par_iter()
        .zip(&set.assignment)
        .map(|(ctx, experts)| {
            ctx.validate(&model.config)?;
            let forced = forced_pass(model, ctx, experts, &weights.mu)?;
            if use_gold {
                return Ok((forced, ctx.target_tokens.clone(), 0, 0));
            }
            let g = generate(model, ctx, max_len)?;
            let violations = g
                .betas
                .iter()
                .filter(|b| b.iter().zip(&mask).any(|(&x, &keep)| !keep && x != 0.0))
                .count();
            Ok((forced, g.tokens, g.betas.len(), violations))
        })
        .collect();
    let mut gold_probs = Vec::new();
    let mut loss = 0.0;
    let mut generated = Vec::with_capacity(set.len());
    let (mut beta_steps, mut beta_violations) = (0, 0);
    for r in per_sample {
        let (f, tokens, steps, violations) = r?;
        beta_steps += steps;
        beta_violations += violations;
        gold_probs.extend_from_slice(&f.gold_probs);
        loss += weights.lambda * f.expert_nll + (1.0 - weights.lambda) * f.chair_nll;
        generated.push(tokens);
    }
    let ppl = perplexity(&gold_probs)?;
    let (bleu, inform, success, score) = response_metrics(&generated, set)?;
    Ok(Evaluation {
        bleu,
        inform,
        success,
        score,
        ppl: ppl.value,
        ppl_guarded: ppl.guarded,
        loss: loss / set.len() as f64,
        generated,
        beta_steps,
        beta_violations,
    })
}

/// Teacher-forced per-token perplexity of every expert on `samples`.
pub fn expert_perplexities(model: &MogNet, samples: &[DialogueContext]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(MogError::invalid("no samples"));
    }
    let k = model.experts();
    let per_sample: Vec<Result<Vec<Vec<f64>>>> = samples
        .par_iter()
        .map(|ctx| {
            let mut sess = Session::new(model);
            let enc = encode(&mut sess, ctx)?;
            let cache = forced_expert_rollouts(&mut sess, &enc, &ctx.target_tokens)?;
            Ok(cache
                .rollouts
                .iter()
                .map(|r| {
                    r.dists
                        .iter()
                        .zip(&ctx.target_tokens)
                        .map(|(&d, &y)| sess.tape.value(d)[y])
                        .collect()
                })
                .collect())
        })
        .collect();
    let mut probs: Vec<Vec<f64>> = vec![Vec::new(); k];
    for r in per_sample {
        for (l, p) in r?.into_iter().enumerate() {
            probs[l].extend(p);
        }
    }
    probs.iter().map(|p| perplexity(p).map(|x| x.value)).collect()
}

/// `matrix[s][l]`: perplexity of expert `l` on the held-out samples of slice `s`.
pub fn specialization_matrix(model: &MogNet, set: &EvalSet) -> Result<Vec<Vec<f64>>> {
    set.check()?;
    (0..model.experts())
        .map(|s| {
            let slice: Vec<DialogueContext> = set
                .samples
                .iter()
                .zip(&set.assignment)
                .filter(|(_, a)| a.contains(&s))
                .map(|(c, _)| c.clone())
                .collect();
            expert_perplexities(model, &slice)
        })
        .collect()
}
