//! Shared context encoder: a recurrent pass over the user tokens, fused with
//! the belief and database bit-vectors into one context vector.

use serde::{Deserialize, Serialize};

use crate::cell::gru_step;
use crate::error::{MogError, Result};
use crate::model::{ModelConfig, Session};
use crate::tensor::Var;

/// One input sample: user tokens, belief and database bit-vectors, intent
/// labels, and the gold response (terminated by EOS).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueContext {
    pub utterance_tokens: Vec<usize>,
    pub belief_vector: Vec<u8>,
    pub db_vector: Vec<u8>,
    pub intents: Vec<String>,
    pub target_tokens: Vec<usize>,
}

impl DialogueContext {
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let v = cfg.vocab_size;
        if let Some(t) = self
            .utterance_tokens
            .iter()
            .chain(&self.target_tokens)
            .find(|&&t| t >= v)
        {
            return Err(MogError::invalid(format!("token {t} outside vocabulary of {v}")));
        }
        if self.belief_vector.iter().chain(&self.db_vector).any(|&b| b > 1) {
            return Err(MogError::invalid("belief and db vectors must be 0/1"));
        }
        if self.belief_vector.len() != cfg.n_belief || self.db_vector.len() != cfg.n_db {
            return Err(MogError::invalid(format!(
                "bit-vector widths {}/{} do not match configured {}/{}",
                self.belief_vector.len(),
                self.db_vector.len(),
                cfg.n_belief,
                cfg.n_db
            )));
        }
        if self.intents.is_empty() {
            return Err(MogError::invalid("sample has no intent"));
        }
        Ok(())
    }
}

/// Per-token encoder states and the fused context vector `x`.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub hidden_states: Vec<Var>,
    /// `hidden_states` stacked into an `[m, d_h]` matrix for attention.
    pub states: Var,
    pub context_vector: Var,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.hidden_states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden_states.is_empty()
    }
}

/// Runs the recurrent cell over `tokens` from a zero initial state. Returns
/// one state per token; the last is the utterance representation.
pub fn encode_utterance(sess: &mut Session<'_>, tokens: &[usize]) -> Result<Vec<Var>> {
    let cfg = sess.config();
    if tokens.is_empty() {
        return Err(MogError::invalid("empty utterance"));
    }
    if tokens.len() > cfg.max_src_len {
        return Err(MogError::invalid(format!(
            "utterance of {} tokens exceeds max_src_len {}",
            tokens.len(),
            cfg.max_src_len
        )));
    }
    if let Some(t) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(MogError::invalid(format!("token {t} outside vocabulary")));
    }
    let ids = &sess.model.ids;
    let table = sess.param(ids.embedding);
    let mut h = sess.tape.constant(&[cfg.hidden], vec![0.0; cfg.hidden]);
    let mut states = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        let w = sess.tape.embedding(table, tok);
        h = gru_step(sess, &ids.encoder.gru, w, h);
        sess.calls.encoder_cells += 1;
        states.push(h);
    }
    Ok(states)
}

/// `x = tanh(W_u h_m + W_b h^B + W_d h^D + b)`.
pub fn fuse_context(sess: &mut Session<'_>, h_final: Var, belief: &[u8], db: &[u8]) -> Result<Var> {
    let cfg = sess.config();
    if sess.tape.shape(h_final) != [cfg.hidden] {
        return Err(MogError::invalid(format!(
            "utterance state has shape {:?}, expected [{}]",
            sess.tape.shape(h_final),
            cfg.hidden
        )));
    }
    if belief.len() != cfg.n_belief || db.len() != cfg.n_db {
        return Err(MogError::invalid(format!(
            "bit-vector widths {}/{} do not match configured {}/{}",
            belief.len(),
            db.len(),
            cfg.n_belief,
            cfg.n_db
        )));
    }
    let p = &sess.model.ids.encoder;
    let bits = |v: &[u8]| v.iter().map(|&b| f64::from(b)).collect::<Vec<_>>();
    let hb = sess.tape.constant(&[belief.len()], bits(belief));
    let hd = sess.tape.constant(&[db.len()], bits(db));
    let w_u = sess.param(p.w_u);
    let w_b = sess.param(p.w_b);
    let w_d = sess.param(p.w_d);
    let b = sess.param(p.b);
    let t = &mut sess.tape;
    let u = t.matvec(w_u, h_final);
    let bb = t.matvec(w_b, hb);
    let dd = t.matvec(w_d, hd);
    let s1 = t.add(u, bb);
    let s2 = t.add(s1, dd);
    let s3 = t.add(s2, b);
    Ok(t.tanh(s3))
}

pub fn encode(sess: &mut Session<'_>, ctx: &DialogueContext) -> Result<EncoderOutput> {
    let hidden_states = encode_utterance(sess, &ctx.utterance_tokens)?;
    let last = *hidden_states.last().expect("non-empty");
    let context_vector = fuse_context(sess, last, &ctx.belief_vector, &ctx.db_vector)?;
    let states = sess.tape.stack(&hidden_states);
    Ok(EncoderOutput {
        hidden_states,
        states,
        context_vector,
    })
}
