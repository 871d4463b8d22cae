//! Training objectives. Each expert is trained on its own intent slice, the
//! chair on every sample, and the two terms are blended by `lambda`.

use serde::{Deserialize, Serialize};

use super::partition::IntentPartition;
use crate::chair::{chair_teacher_forced, forced_expert_rollouts, ChairPass, ExpertCache};
use crate::encoder::{encode, DialogueContext};
use crate::error::{MogError, Result};
use crate::model::Session;
use crate::tensor::Var;

/// How per-expert weights `mu` are derived from slice sizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuMode {
    /// Every expert weighted 1.
    #[default]
    Uniform,
    /// `|D| / (k |S_l|)`: inverse slice size, 1 when slices are equal and disjoint.
    Balanced,
}

pub fn mu_weights(mode: MuMode, partition: &IntentPartition) -> Vec<f64> {
    let k = partition.experts();
    match mode {
        MuMode::Uniform => vec![1.0; k],
        MuMode::Balanced => {
            let mean = partition.assignment.len() as f64 / k as f64;
            partition
                .slice_sizes()
                .iter()
                .map(|&n| if n == 0 { 1.0 } else { mean / n as f64 })
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub mu: Vec<f64>,
}

impl LossWeights {
    pub fn new(lambda: f64, mu: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(MogError::invalid(format!("lambda {lambda} outside [0, 1]")));
        }
        if mu.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(MogError::invalid("mu weights must be finite and non-negative"));
        }
        Ok(LossWeights { lambda, mu })
    }

    pub fn uniform(lambda: f64, experts: usize) -> Result<Self> {
        Self::new(lambda, vec![1.0; experts])
    }

    fn needs_experts(&self) -> bool {
        self.lambda > 0.0
    }

    fn needs_chair(&self) -> bool {
        self.lambda < 1.0
    }
}

/// `Σ_j -ln p_j(y_j)` over the steps of one response.
pub fn sequence_nll(sess: &mut Session<'_>, dists: &[Var], target: &[usize]) -> Result<Var> {
    if dists.len() != target.len() || target.is_empty() {
        return Err(MogError::invalid(format!(
            "{} distributions for a target of {} tokens",
            dists.len(),
            target.len()
        )));
    }
    let terms: Vec<Var> = dists
        .iter()
        .zip(target)
        .map(|(&d, &y)| sess.tape.nll(d, y))
        .collect();
    Ok(sess.tape.add_all(&terms).expect("non-empty"))
}

/// `Σ_l μ_l Σ_{samples in slice l} NLL of expert l on the gold response`.
///
/// `caches[i]` holds the teacher-forced expert rollouts for sample `i`, and
/// `assignment[i]` lists the experts sample `i` belongs to.
pub fn expert_loss(
    sess: &mut Session<'_>,
    caches: &[&ExpertCache],
    targets: &[&[usize]],
    assignment: &[Vec<usize>],
    mu: &[f64],
) -> Result<Var> {
    if caches.len() != targets.len() || caches.len() != assignment.len() || caches.is_empty() {
        return Err(MogError::invalid("expert loss needs one cache, target and assignment per sample"));
    }
    let mut terms = Vec::new();
    for ((cache, target), experts) in caches.iter().zip(targets).zip(assignment) {
        for &l in experts {
            let rollout = cache
                .rollouts
                .get(l)
                .ok_or_else(|| MogError::invalid(format!("no rollout for expert {l}")))?;
            let weight = *mu
                .get(l)
                .ok_or_else(|| MogError::invalid(format!("no mu weight for expert {l}")))?;
            let nll = sequence_nll(sess, &rollout.dists, target)?;
            terms.push(sess.tape.scale(nll, weight));
        }
    }
    match sess.tape.add_all(&terms) {
        Some(v) => Ok(v),
        None => Ok(sess.tape.constant(&[], vec![0.0])),
    }
}

/// `Σ_samples NLL of the mixture on the gold response`.
pub fn chair_loss(sess: &mut Session<'_>, passes: &[&ChairPass], targets: &[&[usize]]) -> Result<Var> {
    if passes.len() != targets.len() || passes.is_empty() {
        return Err(MogError::invalid("chair loss needs one pass per target"));
    }
    let terms = passes
        .iter()
        .zip(targets)
        .map(|(p, t)| sequence_nll(sess, &p.mixtures, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(sess.tape.add_all(&terms).expect("non-empty"))
}

/// `λ L_experts + (1 - λ) L_chair`. A missing term must carry zero weight.
pub fn combined_loss(sess: &mut Session<'_>, experts: Option<Var>, chair: Option<Var>, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(MogError::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let t = &mut sess.tape;
    match (experts, chair) {
        (Some(e), Some(c)) => {
            let a = t.scale(e, lambda);
            let b = t.scale(c, 1.0 - lambda);
            Ok(t.add(a, b))
        }
        (Some(e), None) if lambda == 1.0 => Ok(e),
        (None, Some(c)) if lambda == 0.0 => Ok(c),
        _ => Err(MogError::invalid("a loss term with non-zero weight is missing")),
    }
}

/// Loss terms of one sample recorded on a session tape.
#[derive(Clone, Debug)]
pub struct SampleLoss {
    pub total: Var,
    pub expert: Option<Var>,
    pub chair: Option<Var>,
    /// Mixture probability of each gold token, when the chair ran.
    pub gold_probs: Option<Vec<f64>>,
}

/// Records the full forward pass for one sample: encoder, teacher-forced
/// expert rollouts, the chair pass, and the weighted losses. Terms whose
/// weight is zero are skipped.
pub fn sample_loss(
    sess: &mut Session<'_>,
    ctx: &DialogueContext,
    experts: &[usize],
    weights: &LossWeights,
) -> Result<SampleLoss> {
    ctx.validate(sess.config())?;
    let target = ctx.target_tokens.as_slice();
    let enc = encode(sess, ctx)?;
    let cache = forced_expert_rollouts(sess, &enc, target)?;
    let expert = if weights.needs_experts() {
        Some(expert_loss(sess, &[&cache], &[target], &[experts.to_vec()], &weights.mu)?)
    } else {
        None
    };
    let (chair, gold_probs) = if weights.needs_chair() {
        let pass = chair_teacher_forced(sess, &enc, &cache, target)?;
        let probs = pass
            .mixtures
            .iter()
            .zip(target)
            .map(|(&m, &y)| sess.tape.value(m)[y])
            .collect();
        (Some(chair_loss(sess, &[&pass], &[target])?), Some(probs))
    } else {
        (None, None)
    };
    let total = combined_loss(sess, expert, chair, weights.lambda)?;
    Ok(SampleLoss {
        total,
        expert,
        chair,
        gold_probs,
    })
}
