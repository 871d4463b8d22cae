//! Attention decoders. Every expert is one of these with its own parameters;
//! the chair runs the same step with its own parameters too.

use crate::cell::{affine, gru_step};
use crate::encoder::EncoderOutput;
use crate::error::{MogError, Result};
use crate::model::{DecoderRole, Session, BOS, EOS};
use crate::tensor::{argmax, Var};

/// Recurrent state of one decoder.
///
/// `prefix` holds the tokens fed so far, starting with BOS; its last entry is
/// the input of the next step.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub role: DecoderRole,
    hidden: Option<Var>,
    keys: Option<Var>,
    pub prefix: Vec<usize>,
}

impl DecoderState {
    /// A state that has not seen a context vector yet. Stepping it is an error.
    pub fn uninit(role: DecoderRole) -> Self {
        DecoderState {
            role,
            hidden: None,
            keys: None,
            prefix: vec![BOS],
        }
    }

    /// Starts from the context vector `x` and precomputes the encoder half of
    /// the attention scores.
    pub fn init(sess: &mut Session<'_>, role: DecoderRole, enc: &EncoderOutput) -> Self {
        let p = &sess.model.decoder(role).attn;
        let w_enc = sess.param(p.w_enc);
        let keys = sess.tape.matmul(enc.states, w_enc);
        DecoderState {
            role,
            hidden: Some(enc.context_vector),
            keys: Some(keys),
            prefix: vec![BOS],
        }
    }

    pub fn hidden(&self) -> Option<Var> {
        self.hidden
    }

    pub fn push_token(&mut self, token: usize) {
        self.prefix.push(token);
    }

    /// Token that the next step consumes.
    pub fn last_token(&self) -> usize {
        *self.prefix.last().expect("prefix always starts with BOS")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub context: Var,
    pub weights: Var,
}

/// Attention of `state` over the encoder states. Scores are
/// `vᵀ tanh(w_encᵀ hᵢ + w_decᵀ s + b)` and the context is `Σ αᵢ hᵢ`.
pub fn attend(sess: &mut Session<'_>, state: &DecoderState, enc: &EncoderOutput) -> Result<Attention> {
    if enc.is_empty() {
        return Err(MogError::invalid("attention over zero encoder states"));
    }
    let (Some(hidden), Some(keys)) = (state.hidden, state.keys) else {
        return Err(MogError::state("decoder state is not initialized"));
    };
    let p = &sess.model.decoder(state.role).attn;
    let w_dec = sess.param(p.w_dec);
    let b = sess.param(p.b);
    let v = sess.param(p.v);
    let t = &mut sess.tape;
    let q = t.vecmat(hidden, w_dec);
    let qb = t.add(q, b);
    let pre = t.add_rows(keys, qb);
    let act = t.tanh(pre);
    let scores = t.matvec(act, v);
    let weights = t.softmax(scores);
    let context = t.vecmat(weights, enc.states);
    Ok(Attention { context, weights })
}

/// One decoding step fed with `state.last_token()`.
///
/// Returns the vocabulary distribution and the advanced state. The caller
/// appends whichever token it decides to feed next.
pub fn decode_step(sess: &mut Session<'_>, state: &DecoderState, enc: &EncoderOutput) -> Result<(Var, DecoderState)> {
    let prev = state.last_token();
    if prev >= sess.config().vocab_size {
        return Err(MogError::invalid(format!("token {prev} outside vocabulary")));
    }
    let att = attend(sess, state, enc)?;
    let hidden = state.hidden.expect("checked by attend");
    let p = sess.model.decoder(state.role);
    let table = sess.param(sess.model.ids.embedding);
    let emb = sess.tape.embedding(table, prev);
    let input = sess.tape.concat(&[emb, att.context]);
    let next = gru_step(sess, &p.gru, input, hidden);
    let logits = affine(sess, p.out_w, p.out_b, next);
    let dist = sess.tape.softmax(logits);
    match state.role {
        DecoderRole::Expert(_) => sess.calls.expert_cells += 1,
        DecoderRole::Chair => sess.calls.chair_cells += 1,
    }
    Ok((
        dist,
        DecoderState {
            role: state.role,
            hidden: Some(next),
            keys: state.keys,
            prefix: state.prefix.clone(),
        },
    ))
}

#[derive(Clone, Copy, Debug)]
pub enum RolloutMode<'a> {
    /// Feed back the decoder's own argmax from BOS onward.
    SelfGreedy,
    /// Feed the given tokens first, then continue greedily.
    Forced(&'a [usize]),
}

/// Per-step distributions and emitted tokens of one decoder run.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub dists: Vec<Var>,
    pub tokens: Vec<usize>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists.is_empty()
    }

    /// Distribution at 1-based `step`, holding the final one past the end.
    pub fn dist_at(&self, step: usize) -> Var {
        self.dists[step.clamp(1, self.dists.len()) - 1]
    }
}

/// Runs a decoder until it emits EOS or reaches `max_len` steps.
pub fn rollout(
    sess: &mut Session<'_>,
    role: DecoderRole,
    enc: &EncoderOutput,
    mode: RolloutMode<'_>,
    max_len: usize,
) -> Result<Rollout> {
    if max_len == 0 {
        return Err(MogError::invalid("max_len must be at least 1"));
    }
    let forced: &[usize] = match mode {
        RolloutMode::SelfGreedy => &[],
        RolloutMode::Forced(prefix) => prefix,
    };
    let mut state = DecoderState::init(sess, role, enc);
    let mut out = Rollout {
        dists: Vec::new(),
        tokens: Vec::new(),
    };
    for j in 0..max_len {
        let (dist, mut next) = decode_step(sess, &state, enc)?;
        let token = forced.get(j).copied().unwrap_or_else(|| argmax(sess.tape.value(dist)));
        next.push_token(token);
        out.dists.push(dist);
        out.tokens.push(token);
        state = next;
        if token == EOS {
            break;
        }
    }
    Ok(out)
}
