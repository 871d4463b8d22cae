//! Building blocks shared by the encoder and every decoder.

use crate::model::Session;
use crate::tensor::{ParamId, Var};

/// Gated recurrent cell with gates stacked as `[update; reset; candidate]`.
///
/// The cell has a single state vector, which serves as both the output and
/// the carried state.
#[derive(Clone, Debug)]
pub struct GruParams {
    pub hidden: usize,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
}

/// Concatenation attention `vᵀ tanh(Wᵀ(hᵢ ⊕ s) + b)`, with `W` stored as its
/// encoder half `w_enc` and decoder half `w_dec`.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_enc: ParamId,
    pub w_dec: ParamId,
    pub b: ParamId,
    pub v: ParamId,
}

/// Everything one decoder owns: recurrent cell, attention, and output projection.
#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub gru: GruParams,
    pub attn: AttentionParams,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

/// Two-layer perceptron producing the chair's coordination logits.
#[derive(Clone, Debug)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// `W x + b`.
pub fn affine(sess: &mut Session<'_>, w: ParamId, b: ParamId, x: Var) -> Var {
    let w = sess.param(w);
    let b = sess.param(b);
    let wx = sess.tape.matvec(w, x);
    sess.tape.add(wx, b)
}

/// One recurrent step: returns the next state from input `x` and state `h`.
pub fn gru_step(sess: &mut Session<'_>, p: &GruParams, x: Var, h: Var) -> Var {
    let d = p.hidden;
    let gx = affine(sess, p.w_x, p.b_x, x);
    let gh = affine(sess, p.w_h, p.b_h, h);
    let t = &mut sess.tape;
    let zx = t.slice(gx, 0, d);
    let zh = t.slice(gh, 0, d);
    let za = t.add(zx, zh);
    let z = t.sigmoid(za);
    let rx = t.slice(gx, d, d);
    let rh = t.slice(gh, d, d);
    let ra = t.add(rx, rh);
    let r = t.sigmoid(ra);
    let nx = t.slice(gx, 2 * d, d);
    let nh = t.slice(gh, 2 * d, d);
    let gated = t.mul(r, nh);
    let na = t.add(nx, gated);
    let n = t.tanh(na);
    // h' = (1 - z) ⊙ n + z ⊙ h
    let diff = t.sub(h, n);
    let zd = t.mul(z, diff);
    t.add(n, zd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, MogNet};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_weight_cell_halves_the_state_toward_tanh_of_candidate_bias() {
        let mut cfg = ModelConfig::default();
        cfg.init_scale = 0.0;
        let mut model = MogNet::new(cfg, 0).unwrap();
        let gru = model.ids.encoder.gru.clone();
        let d = gru.hidden;
        // Candidate bias c gives z = r = 1/2 and n = tanh(c), so h' = (n + h) / 2.
        let c = 0.3;
        model.params.get_mut(gru.b_x).data_mut()[2 * d..].iter_mut().for_each(|v| *v = c);
        let mut sess = Session::new(&model);
        let x = sess.tape.constant(&[8], vec![0.5; 8]);
        let mut h = sess.tape.constant(&[d], vec![0.0; d]);
        let mut expected = 0.0;
        for _ in 0..3 {
            h = gru_step(&mut sess, &gru, x, h);
            expected = 0.5 * (c.tanh() + expected);
            for &v in sess.tape.value(h) {
                assert_abs_diff_eq!(v, expected, epsilon = 1e-15);
            }
        }
    }
}
