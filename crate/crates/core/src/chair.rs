//! The chair decoder: mixes its own step distribution with the experts'
//! distributions, weighted by coordination coefficients computed from
//! retrospective and prospective summaries of the expert rollouts.
//!
//! Expert rollouts are computed once per sample up front, and the chair then
//! decides one token per step against that cache. Expert cell invocations are
//! therefore bounded by `k * max_len` regardless of the emitted length.

use crate::cell::affine;
use crate::encoder::{encode, DialogueContext, EncoderOutput};
use crate::error::{MogError, Result};
use crate::expert::{decode_step, rollout, DecoderState, Rollout, RolloutMode};
use crate::model::{CallCounts, DecoderRole, MogNet, Session, EOS};
use crate::tensor::{argmax, Var};

/// Per-expert rollouts the chair consults while decoding.
#[derive(Clone, Debug)]
pub struct ExpertCache {
    pub rollouts: Vec<Rollout>,
}

impl ExpertCache {
    pub fn experts(&self) -> usize {
        self.rollouts.len()
    }

    /// Expert `l`'s distribution at 1-based `step`; steps past its EOS reuse
    /// its final distribution.
    pub fn dist_at(&self, l: usize, step: usize) -> Var {
        self.rollouts[l].dist_at(step)
    }
}

/// One self-greedy rollout from BOS per expert.
pub fn precompute_expert_rollouts(sess: &mut Session<'_>, enc: &EncoderOutput, max_len: usize) -> Result<ExpertCache> {
    let rollouts = (0..sess.model.experts())
        .map(|l| rollout(sess, DecoderRole::Expert(l), enc, RolloutMode::SelfGreedy, max_len))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpertCache { rollouts })
}

/// One teacher-forced rollout per expert on the gold response.
pub fn forced_expert_rollouts(sess: &mut Session<'_>, enc: &EncoderOutput, target: &[usize]) -> Result<ExpertCache> {
    if target.is_empty() {
        return Err(MogError::invalid("empty target"));
    }
    let rollouts = (0..sess.model.experts())
        .map(|l| rollout(sess, DecoderRole::Expert(l), enc, RolloutMode::Forced(target), target.len()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpertCache { rollouts })
}

fn zero_pool(sess: &mut Session<'_>, k: usize) -> Var {
    let v = sess.config().vocab_size;
    sess.tape.constant(&[k, v], vec![0.0; k * v])
}

/// `[k, |V|]` matrix whose row `l` is the mean of expert `l`'s distributions
/// over steps `1..j-1`. All zeros at `j = 1`.
pub fn build_retrospective(sess: &mut Session<'_>, cache: &ExpertCache, j: usize) -> Result<Var> {
    if j == 0 {
        return Err(MogError::invalid("steps are 1-based"));
    }
    let k = cache.experts();
    if j == 1 {
        return Ok(zero_pool(sess, k));
    }
    let rows: Vec<Var> = (0..k)
        .map(|l| {
            let history: Vec<Var> = (1..j).map(|s| cache.dist_at(l, s)).collect();
            sess.tape.mean_pool(&history)
        })
        .collect();
    Ok(sess.tape.stack(&rows))
}

/// `[k, |V|]` matrix whose row `l` is the mean of expert `l`'s distributions
/// over steps `j..=n`, truncated at the end of its rollout. If `j` is past
/// the rollout, the row is the expert's final distribution.
pub fn build_prospective(sess: &mut Session<'_>, cache: &ExpertCache, j: usize, n: usize) -> Result<Var> {
    if j == 0 || j > n {
        return Err(MogError::invalid(format!("prospective step {j} outside 1..={n}")));
    }
    let rows: Vec<Var> = (0..cache.experts())
        .map(|l| {
            let len = cache.rollouts[l].len();
            let end = n.min(len);
            if j > end {
                cache.dist_at(l, len)
            } else {
                let ahead: Vec<Var> = (j..=end).map(|s| cache.dist_at(l, s)).collect();
                sess.tape.mean_pool(&ahead)
            }
        })
        .collect();
    Ok(sess.tape.stack(&rows))
}

/// The chair's per-step inputs to mixing.
#[derive(Clone, Copy, Debug)]
pub struct CoordinationFeatures {
    pub chair_dist: Var,
    pub retro_pool: Var,
    pub prosp_pool: Var,
    /// Pre-softmax coordination scores, length `2k + 1`.
    pub logits: Var,
    /// Ordered `[C, R_1..R_k, P_1..P_k]`.
    pub beta: Var,
}

/// Coordination logits from a tanh perceptron over
/// `[chair_dist ⊕ retro_pool ⊕ prosp_pool]`, normalized jointly over all
/// `2k + 1` entries. Entries outside `mask` are exactly zero.
///
/// Returns `(logits, beta)`.
pub fn coordination_weights(
    sess: &mut Session<'_>,
    chair_dist: Var,
    retro_pool: Var,
    prosp_pool: Var,
    mask: &[bool],
) -> Result<(Var, Var)> {
    let cfg = sess.config();
    let (v, k) = (cfg.vocab_size, cfg.experts);
    let widths = [
        sess.tape.value(chair_dist).len(),
        sess.tape.value(retro_pool).len(),
        sess.tape.value(prosp_pool).len(),
    ];
    if widths != [v, k * v, k * v] {
        return Err(MogError::invalid(format!(
            "coordination inputs have widths {widths:?}, expected [{v}, {}, {}]",
            k * v,
            k * v
        )));
    }
    if mask.len() != 2 * k + 1 || !mask[0] {
        return Err(MogError::invalid("coordination mask must have 2k+1 entries and keep the chair"));
    }
    let p = sess.model.ids.mlp.clone();
    let features = sess.tape.concat(&[chair_dist, retro_pool, prosp_pool]);
    let pre = affine(sess, p.w1, p.b1, features);
    let hidden = sess.tape.tanh(pre);
    let logits = affine(sess, p.w2, p.b2, hidden);
    let beta = if mask.iter().all(|&m| m) {
        sess.tape.softmax(logits)
    } else {
        sess.tape.masked_softmax(logits, mask)
    };
    Ok((logits, beta))
}

/// Assembles the features for step `j` of a response of (at most) `n` steps,
/// zeroing the pools the variant disables.
pub fn coordination_features(
    sess: &mut Session<'_>,
    chair_dist: Var,
    cache: &ExpertCache,
    j: usize,
    n: usize,
) -> Result<CoordinationFeatures> {
    let flags = sess.config().flags;
    let k = cache.experts();
    let retro_pool = if flags.use_retro {
        build_retrospective(sess, cache, j)?
    } else {
        zero_pool(sess, k)
    };
    let prosp_pool = if flags.use_prosp {
        build_prospective(sess, cache, j, n)?
    } else {
        zero_pool(sess, k)
    };
    let mask = flags.beta_mask(k);
    let (logits, beta) = coordination_weights(sess, chair_dist, retro_pool, prosp_pool, &mask)?;
    Ok(CoordinationFeatures {
        chair_dist,
        retro_pool,
        prosp_pool,
        logits,
        beta,
    })
}

fn check_normalized(sess: &Session<'_>, v: Var, what: &str) -> Result<()> {
    let vals = sess.tape.value(v);
    let total: f64 = vals.iter().sum();
    if (total - 1.0).abs() > 1e-6 || vals.iter().any(|&p| p < 0.0) {
        return Err(MogError::invalid(format!("{what} is not a distribution (sum {total})")));
    }
    Ok(())
}

/// `β^C P_chair + Σ_l (β^{l,R} + β^{l,P}) P^l`.
pub fn mixture_step(sess: &mut Session<'_>, features: &CoordinationFeatures, expert_dists: &[Var]) -> Result<Var> {
    let k = expert_dists.len();
    if sess.tape.value(features.beta).len() != 2 * k + 1 {
        return Err(MogError::invalid("coordination weights do not match the number of experts"));
    }
    check_normalized(sess, features.beta, "beta")?;
    check_normalized(sess, features.chair_dist, "chair distribution")?;
    for (l, &d) in expert_dists.iter().enumerate() {
        check_normalized(sess, d, &format!("expert {l} distribution"))?;
    }
    let mut rows = Vec::with_capacity(2 * k + 1);
    rows.push(features.chair_dist);
    rows.extend_from_slice(expert_dists);
    rows.extend_from_slice(expert_dists);
    let components = sess.tape.stack(&rows);
    Ok(sess.tape.vecmat(features.beta, components))
}

/// Chair outputs for every step of one response.
#[derive(Clone, Debug)]
pub struct ChairPass {
    pub mixtures: Vec<Var>,
    pub features: Vec<CoordinationFeatures>,
}

/// Teacher-forced chair pass: the chair consumes the gold prefix and mixes
/// against the given expert cache.
pub fn chair_teacher_forced(
    sess: &mut Session<'_>,
    enc: &EncoderOutput,
    cache: &ExpertCache,
    target: &[usize],
) -> Result<ChairPass> {
    let n = target.len();
    let mut state = DecoderState::init(sess, DecoderRole::Chair, enc);
    let mut out = ChairPass {
        mixtures: Vec::with_capacity(n),
        features: Vec::with_capacity(n),
    };
    for (idx, &gold) in target.iter().enumerate() {
        let j = idx + 1;
        let (chair_dist, mut next) = decode_step(sess, &state, enc)?;
        let feats = coordination_features(sess, chair_dist, cache, j, n)?;
        let experts: Vec<Var> = (0..cache.experts()).map(|l| cache.dist_at(l, j)).collect();
        let mix = mixture_step(sess, &feats, &experts)?;
        out.mixtures.push(mix);
        out.features.push(feats);
        next.push_token(gold);
        state = next;
    }
    Ok(out)
}

/// Result of greedy generation for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub tokens: Vec<usize>,
    pub dists: Vec<Vec<f64>>,
    pub betas: Vec<Vec<f64>>,
    pub expert_tokens: Vec<Vec<usize>>,
    pub calls: CallCounts,
}

/// Greedy decoding: precompute expert rollouts, then let the chair emit the
/// argmax of the mixture until EOS or `max_len`.
pub fn generate(model: &MogNet, ctx: &DialogueContext, max_len: usize) -> Result<Generation> {
    let mut sess = Session::new(model);
    let enc = encode(&mut sess, ctx)?;
    let cache = precompute_expert_rollouts(&mut sess, &enc, max_len)?;
    let mut state = DecoderState::init(&mut sess, DecoderRole::Chair, &enc);
    let mut out = Generation {
        tokens: Vec::new(),
        dists: Vec::new(),
        betas: Vec::new(),
        expert_tokens: cache.rollouts.iter().map(|r| r.tokens.clone()).collect(),
        calls: CallCounts::default(),
    };
    for j in 1..=max_len {
        let (chair_dist, mut next) = decode_step(&mut sess, &state, &enc)?;
        let feats = coordination_features(&mut sess, chair_dist, &cache, j, max_len)?;
        let experts: Vec<Var> = (0..cache.experts()).map(|l| cache.dist_at(l, j)).collect();
        let mix = mixture_step(&mut sess, &feats, &experts)?;
        let probs = sess.tape.value(mix).to_vec();
        let token = argmax(&probs);
        out.dists.push(probs);
        out.betas.push(sess.tape.value(feats.beta).to_vec());
        out.tokens.push(token);
        next.push_token(token);
        state = next;
        if token == EOS {
            break;
        }
    }
    out.calls = sess.calls;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, VariantFlags};
    use crate::tensor::Tensor;
    use approx::assert_abs_diff_eq;

    fn ctx() -> DialogueContext {
        DialogueContext {
            utterance_tokens: vec![5, 9, 12, 7],
            belief_vector: vec![1, 0, 0, 1, 0, 0],
            db_vector: vec![1, 0, 1],
            intents: vec!["domain:hotel".into()],
            target_tokens: vec![6, 7, 8, EOS],
        }
    }

    fn model_with(flags: VariantFlags) -> MogNet {
        let mut cfg = ModelConfig::default();
        cfg.flags = flags;
        cfg.init_scale = 0.3;
        MogNet::new(cfg, 21).unwrap()
    }

    fn cache_for(sess: &mut Session<'_>) -> (EncoderOutput, ExpertCache) {
        let enc = encode(sess, &ctx()).unwrap();
        let cache = precompute_expert_rollouts(sess, &enc, 6).unwrap();
        (enc, cache)
    }

    #[test]
    fn retrospective_pool_examples() {
        let m = model_with(VariantFlags::default());
        let mut s = Session::new(&m);
        let (_, cache) = cache_for(&mut s);
        let r1 = build_retrospective(&mut s, &cache, 1).unwrap();
        assert!(s.tape.value(r1).iter().all(|&v| v == 0.0));
        assert_eq!(s.tape.shape(r1), &[3, 40]);

        let r2 = build_retrospective(&mut s, &cache, 2).unwrap();
        let r3 = build_retrospective(&mut s, &cache, 3).unwrap();
        for l in 0..3 {
            let d1 = s.tape.value(cache.dist_at(l, 1)).to_vec();
            let d2 = s.tape.value(cache.dist_at(l, 2)).to_vec();
            assert_eq!(&s.tape.value(r2)[l * 40..(l + 1) * 40], d1.as_slice());
            for i in 0..40 {
                assert_abs_diff_eq!(s.tape.value(r3)[l * 40 + i], (d1[i] + d2[i]) / 2.0, epsilon = 1e-16);
            }
        }
        assert!(build_retrospective(&mut s, &cache, 0).is_err());
    }

    #[test]
    fn prospective_pool_examples() {
        let m = model_with(VariantFlags::default());
        let mut s = Session::new(&m);
        let (_, cache) = cache_for(&mut s);
        let n = 6;
        let last = build_prospective(&mut s, &cache, n, n).unwrap();
        let two = build_prospective(&mut s, &cache, n - 1, n).unwrap();
        for l in 0..3 {
            let len = cache.rollouts[l].len();
            let final_d = s.tape.value(cache.dist_at(l, n.min(len))).to_vec();
            assert_eq!(&s.tape.value(last)[l * 40..(l + 1) * 40], final_d.as_slice());
            if len == n {
                let a = s.tape.value(cache.dist_at(l, n - 1)).to_vec();
                for i in 0..40 {
                    assert_abs_diff_eq!(s.tape.value(two)[l * 40 + i], (a[i] + final_d[i]) / 2.0, epsilon = 1e-16);
                }
            }
        }
        assert!(build_prospective(&mut s, &cache, 7, 6).is_err());
    }

    #[test]
    fn prospective_past_rollout_end_uses_final_distribution() {
        let mut m = model_with(VariantFlags::default());
        let out = m.ids.experts[0].clone();
        m.params.get_mut(out.out_b).data_mut()[EOS] = 60.0;
        let mut s = Session::new(&m);
        let (_, cache) = cache_for(&mut s);
        assert_eq!(cache.rollouts[0].len(), 1);
        let p = build_prospective(&mut s, &cache, 4, 6).unwrap();
        let d = s.tape.value(cache.dist_at(0, 1)).to_vec();
        assert_eq!(&s.tape.value(p)[..40], d.as_slice());
    }

    #[test]
    fn zero_mlp_gives_uniform_beta() {
        let mut m = model_with(VariantFlags::default());
        let mlp = m.ids.mlp.clone();
        m.params.get_mut(mlp.w2).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut s = Session::new(&m);
        let (enc, cache) = cache_for(&mut s);
        let st = DecoderState::init(&mut s, DecoderRole::Chair, &enc);
        let (pc, _) = decode_step(&mut s, &st, &enc).unwrap();
        let f = coordination_features(&mut s, pc, &cache, 1, 6).unwrap();
        for &b in s.tape.value(f.beta) {
            assert_abs_diff_eq!(b, 1.0 / 7.0, epsilon = 1e-15);
        }
    }

    fn beta_support(flags: VariantFlags) -> Vec<Vec<bool>> {
        let m = model_with(flags);
        let g = generate(&m, &ctx(), 6).unwrap();
        g.betas
            .iter()
            .map(|b| {
                assert_abs_diff_eq!(b.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                b.iter().map(|&x| x != 0.0).collect()
            })
            .collect()
    }

    #[test]
    fn variant_masks_restrict_beta_support() {
        let no_prosp = VariantFlags { use_retro: true, use_prosp: false };
        for s in beta_support(no_prosp) {
            assert_eq!(s, vec![true, true, true, true, false, false, false]);
        }
        let neither = VariantFlags { use_retro: false, use_prosp: false };
        let m = model_with(neither);
        let g = generate(&m, &ctx(), 6).unwrap();
        for b in &g.betas {
            assert_eq!(b[0], 1.0);
            assert!(b[1..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn masking_equals_negative_infinite_logits() {
        let flags = VariantFlags { use_retro: true, use_prosp: false };
        let m = model_with(flags);
        let mut s = Session::new(&m);
        let (enc, cache) = cache_for(&mut s);
        let st = DecoderState::init(&mut s, DecoderRole::Chair, &enc);
        let (pc, _) = decode_step(&mut s, &st, &enc).unwrap();
        let f = coordination_features(&mut s, pc, &cache, 2, 6).unwrap();
        let mut logits = s.tape.value(f.logits).to_vec();
        for (x, keep) in logits.iter_mut().zip(flags.beta_mask(3)) {
            if !keep {
                *x = f64::NEG_INFINITY;
            }
        }
        let z = s.tape.constant(&[7], logits);
        let beta_inf = s.tape.softmax(z);
        assert_eq!(s.tape.value(beta_inf), s.tape.value(f.beta));

        let experts: Vec<Var> = (0..3).map(|l| cache.dist_at(l, 2)).collect();
        let mix = mixture_step(&mut s, &f, &experts).unwrap();
        let alt = CoordinationFeatures { beta: beta_inf, ..f };
        let mix_inf = mixture_step(&mut s, &alt, &experts).unwrap();
        assert_eq!(s.tape.value(mix), s.tape.value(mix_inf));
    }

    fn leaf(s: &mut Session<'_>, v: &[f64]) -> Var {
        s.tape.leaf(&Tensor::vector(v.to_vec()))
    }

    #[test]
    fn mixture_examples() {
        let mut cfg = ModelConfig::default();
        cfg.vocab_size = 5;
        cfg.experts = 2;
        let m = MogNet::new(cfg, 0).unwrap();
        let mut s = Session::new(&m);
        let chair = leaf(&mut s, &[0.5, 0.5]);
        let e1 = leaf(&mut s, &[1.0, 0.0]);
        let e2 = leaf(&mut s, &[0.0, 1.0]);
        let zero = leaf(&mut s, &[0.0]);
        let beta = leaf(&mut s, &[0.5, 0.25, 0.25, 0.0, 0.0]);
        let f = CoordinationFeatures {
            chair_dist: chair,
            retro_pool: zero,
            prosp_pool: zero,
            logits: zero,
            beta,
        };
        let mix = mixture_step(&mut s, &f, &[e1, e2]).unwrap();
        assert_eq!(s.tape.value(mix), &[0.5, 0.5]);

        let only_chair = leaf(&mut s, &[1.0, 0.0, 0.0, 0.0, 0.0]);
        let f1 = CoordinationFeatures { beta: only_chair, ..f };
        let mix = mixture_step(&mut s, &f1, &[e1, e2]).unwrap();
        assert_eq!(s.tape.value(mix), &[0.5, 0.5]);

        let d = leaf(&mut s, &[0.3, 0.7]);
        let b = leaf(&mut s, &[0.1, 0.2, 0.3, 0.15, 0.25]);
        let fd = CoordinationFeatures { chair_dist: d, beta: b, ..f };
        let mix = mixture_step(&mut s, &fd, &[d, d]).unwrap();
        for (x, y) in s.tape.value(mix).iter().zip([0.3, 0.7]) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-15);
        }

        let bad = leaf(&mut s, &[0.6, 0.6]);
        assert!(mixture_step(&mut s, &f, &[bad, e2]).is_err());
    }

    #[test]
    fn generation_call_accounting_and_determinism() {
        let m = model_with(VariantFlags::default());
        let a = generate(&m, &ctx(), 8).unwrap();
        let b = generate(&m, &ctx(), 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.calls.chair_cells, a.tokens.len());
        let expert_total: usize = a.expert_tokens.iter().map(Vec::len).sum();
        assert_eq!(a.calls.expert_cells, expert_total);
        assert!(a.calls.expert_cells <= 3 * 8);
    }

    #[test]
    fn chair_only_with_rigged_argmax_emits_constant() {
        let neither = VariantFlags { use_retro: false, use_prosp: false };
        let mut m = model_with(neither);
        let out = m.ids.chair.clone();
        m.params.get_mut(out.out_b).data_mut()[23] = 60.0;
        let g = generate(&m, &ctx(), 5).unwrap();
        assert_eq!(g.tokens, vec![23; 5]);
    }

    #[test]
    fn coordination_width_mismatch_is_rejected() {
        let m = model_with(VariantFlags::default());
        let mut s = Session::new(&m);
        let pc = s.tape.constant(&[40], vec![1.0 / 40.0; 40]);
        let small = s.tape.constant(&[2, 40], vec![0.0; 80]);
        let ok = s.tape.constant(&[3, 40], vec![0.0; 120]);
        let mask = vec![true; 7];
        assert!(coordination_weights(&mut s, pc, small, ok, &mask).is_err());
        assert!(coordination_weights(&mut s, pc, ok, ok, &mask[..5]).is_err());
    }
}
