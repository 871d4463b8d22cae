//! Synthetic intent-partitioned dialogue corpus.
//!
//! Each domain owns an entity token, a requestable token, and a handful of
//! content words. A sample asks about one or two domains, each with an action
//! (`inform`, `request`, `book`); the response concatenates one templated
//! segment per domain. Labels are namespaced as `domain:<name>` and
//! `action:<name>`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::DialogueContext;
use crate::error::{MogError, Result};
use crate::metrics::SlotRequirements;
use crate::model::{EOS, NUM_SPECIAL, UNK};

pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["<pad>", "<bos>", "<eos>", "<unk>"];
const SHARED_WORDS: [&str; 12] = ["i", "the", "is", "for", "you", "what", "would", "like", "sorry", "no", "and", "."];
const VALUE_TOKENS: [&str; 3] = ["[value_time]", "[value_day]", "[value_count]"];
const DOMAIN_WORDS: usize = 5;
/// Tokens owned by each domain: entity, requestable, and content words.
const DOMAIN_BLOCK: usize = DOMAIN_WORDS + 2;
/// Longest response: two segments joined by "and", plus EOS.
const MAX_RESPONSE: usize = 11;
const MIN_SAMPLES: usize = 30;
/// Train/valid/test proportions.
pub const SPLIT_RATIO: [usize; 3] = [8438, 1000, 1000];

fn known_words(domain: &str) -> Option<[&'static str; DOMAIN_WORDS]> {
    Some(match domain {
        "hotel" => ["hotel", "room", "stay", "star", "parking"],
        "taxi" => ["taxi", "car", "pickup", "driver", "arrive"],
        "train" => ["train", "ticket", "depart", "platform", "leave"],
        "restaurant" => ["restaurant", "food", "table", "cheap", "dinner"],
        "attraction" => ["attraction", "museum", "entrance", "park", "visit"],
        _ => return None,
    })
}

/// Token list with index lookup. The first four entries are the special tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() <= NUM_SPECIAL || tokens[..NUM_SPECIAL] != SPECIAL_TOKENS {
            return Err(MogError::invalid("vocabulary must start with the special tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(MogError::invalid(format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Unknown strings map to UNK.
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref()).unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.tokens.get(i).cloned().unwrap_or_else(|| SPECIAL_TOKENS[UNK].to_string()))
            .collect()
    }

    /// Hex SHA-256 of the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        format!("{:x}", h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| MogError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MogError::io(path, e))?;
        Self::new(text.lines().map(str::to_string).collect()).map_err(|e| MogError::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Inform,
    Request,
    Book,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::Inform => "inform",
            Action::Request => "request",
            Action::Book => "book",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "inform" => Ok(Action::Inform),
            "request" => Ok(Action::Request),
            "book" => Ok(Action::Book),
            _ => Err(MogError::Config(format!("unknown action `{s}`"))),
        }
    }

    /// Utterance word signalling the action.
    fn cue(self) -> &'static str {
        match self {
            Action::Inform => "like",
            Action::Request => "what",
            Action::Book => "for",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrammarConfig {
    pub domains: Vec<String>,
    pub actions: Vec<String>,
    pub vocab_size: usize,
    /// Probability that the user asks for the requestable slot.
    pub requestable_rate: f64,
    /// Probability that the database reports a match for a domain.
    pub db_available_rate: f64,
    pub max_target_len: usize,
    /// Degenerate mode: every domain shares one token block, so all intents
    /// produce the same token distribution.
    pub shared_domain_vocab: bool,
    pub seed: u64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            domains: ["hotel", "taxi", "train"].map(String::from).to_vec(),
            actions: ["inform", "request", "book"].map(String::from).to_vec(),
            vocab_size: 40,
            requestable_rate: 0.8,
            db_available_rate: 0.8,
            max_target_len: 12,
            shared_domain_vocab: false,
            seed: 1234,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub name: String,
    pub entity: usize,
    pub requestable: usize,
    pub words: [usize; DOMAIN_WORDS],
}

#[derive(Clone, Debug)]
pub struct ToyGrammar {
    pub config: GrammarConfig,
    pub vocab: Vocab,
    pub domains: Vec<DomainSpec>,
    pub actions: Vec<Action>,
    fillers: Vec<usize>,
}

/// Minimum vocabulary the templates need.
pub fn required_vocab(domains: usize, shared_domain_vocab: bool) -> usize {
    let blocks = if shared_domain_vocab { 1 } else { domains };
    NUM_SPECIAL + SHARED_WORDS.len() + VALUE_TOKENS.len() + DOMAIN_BLOCK * blocks
}

impl ToyGrammar {
    pub fn new(config: GrammarConfig) -> Result<Self> {
        let c = &config;
        if c.domains.is_empty() || c.actions.is_empty() {
            return Err(MogError::invalid("grammar needs at least one domain and one action"));
        }
        for (what, list) in [("domain", &c.domains), ("action", &c.actions)] {
            let mut seen = list.clone();
            seen.sort();
            seen.dedup();
            if seen.len() != list.len() {
                return Err(MogError::invalid(format!("duplicate {what} names")));
            }
        }
        if c.domains.iter().any(|d| d.is_empty() || d.contains(char::is_whitespace)) {
            return Err(MogError::invalid("domain names must be non-empty single words"));
        }
        let actions = c.actions.iter().map(|a| Action::parse(a)).collect::<Result<Vec<_>>>()?;
        for (name, p) in [("requestable_rate", c.requestable_rate), ("db_available_rate", c.db_available_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(MogError::invalid(format!("{name} {p} outside [0, 1]")));
            }
        }
        let longest = if c.domains.len() > 1 { MAX_RESPONSE } else { MAX_RESPONSE / 2 + 1 };
        if c.max_target_len < longest {
            return Err(MogError::invalid(format!(
                "max_target_len {} cannot hold the {longest}-token templates",
                c.max_target_len
            )));
        }
        let needed = required_vocab(c.domains.len(), c.shared_domain_vocab);
        if c.vocab_size < needed {
            return Err(MogError::invalid(format!(
                "vocabulary of {} is too small for the templates, which need {needed}",
                c.vocab_size
            )));
        }

        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(SHARED_WORDS.iter().map(|s| s.to_string()));
        tokens.extend(VALUE_TOKENS.iter().map(|s| s.to_string()));
        let block_names: Vec<String> = if c.shared_domain_vocab {
            vec!["shared".into()]
        } else {
            c.domains.clone()
        };
        for d in &block_names {
            tokens.push(format!("[{d}_name]"));
            tokens.push(format!("[{d}_phone]"));
            match known_words(d) {
                Some(words) => tokens.extend(words.iter().map(|w| w.to_string())),
                None => tokens.extend((0..DOMAIN_WORDS).map(|i| format!("{d}_{}", (b'a' + i as u8) as char))),
            }
        }
        let base = tokens.len();
        tokens.extend((0..c.vocab_size - base).map(|i| format!("w{i}")));
        let vocab = Vocab::new(tokens)?;
        let fillers: Vec<usize> = (base..c.vocab_size).collect();

        let domains = c
            .domains
            .iter()
            .map(|name| {
                let block = if c.shared_domain_vocab { 0 } else { c.domains.iter().position(|d| d == name).unwrap() };
                let start = NUM_SPECIAL + SHARED_WORDS.len() + VALUE_TOKENS.len() + block * DOMAIN_BLOCK;
                let mut words = [0; DOMAIN_WORDS];
                for (i, w) in words.iter_mut().enumerate() {
                    *w = start + 2 + i;
                }
                DomainSpec {
                    name: name.clone(),
                    entity: start,
                    requestable: start + 1,
                    words,
                }
            })
            .collect();
        Ok(ToyGrammar {
            config,
            vocab,
            domains,
            actions,
            fillers,
        })
    }

    fn w(&self, word: &str) -> usize {
        self.vocab.id(word).expect("grammar word in vocabulary")
    }

    pub fn domain_labels(&self) -> Vec<String> {
        self.domains.iter().map(|d| format!("domain:{}", d.name)).collect()
    }

    pub fn action_labels(&self) -> Vec<String> {
        self.actions.iter().map(|a| format!("action:{}", a.name())).collect()
    }

    pub fn n_belief(&self) -> usize {
        2 * self.domains.len()
    }

    pub fn n_db(&self) -> usize {
        self.domains.len()
    }

    fn user_segment(&self, rng: &mut ChaCha8Rng, d: &DomainSpec, a: Action, requested: bool) -> Vec<usize> {
        let mut seg = vec![self.w(if rng.gen_bool(0.5) { "i" } else { "you" })];
        seg.push(d.words[if rng.gen_bool(0.5) { 0 } else { DOMAIN_WORDS - 1 }]);
        seg.push(self.w(a.cue()));
        if requested {
            seg.push(d.requestable);
        }
        if rng.gen_bool(0.5) {
            seg.push(self.w(VALUE_TOKENS[rng.gen_range(0..VALUE_TOKENS.len())]));
        }
        if !self.fillers.is_empty() && rng.gen_bool(0.5) {
            seg.push(*self.fillers.choose(rng).unwrap());
        }
        seg
    }

    /// Response segment ending in ".".
    fn response_segment(&self, d: &DomainSpec, a: Action, requested: bool, available: bool) -> Vec<usize> {
        let r = requested.then_some(d.requestable);
        let dot = self.w(".");
        let mut seg = match (a, available) {
            (Action::Inform | Action::Book, false) => vec![self.w("sorry"), self.w("no"), d.words[0], d.entity],
            (Action::Inform, true) => vec![d.entity, self.w("is"), d.words[1]],
            (Action::Request, _) => vec![self.w("what"), d.words[2], d.entity],
            (Action::Book, true) => vec![d.words[3], d.entity, self.w("[value_day]")],
        };
        if available || a == Action::Request {
            seg.extend(r);
        }
        seg.push(dot);
        seg
    }

    /// Draws one sample with `n_intents` distinct domains.
    pub fn sample(&self, rng: &mut ChaCha8Rng, n_intents: usize) -> DialogueContext {
        let k = self.domains.len();
        let mut picked: Vec<usize> = (0..k).collect();
        picked.shuffle(rng);
        picked.truncate(n_intents.min(k));
        let db: Vec<u8> = (0..k).map(|_| u8::from(rng.gen_bool(self.config.db_available_rate))).collect();
        let mut belief = vec![0u8; 2 * k];
        let mut utterance = Vec::new();
        let mut response = Vec::new();
        let mut intents = Vec::new();
        let mut action_labels = Vec::new();
        let and = self.w("and");
        for (n, &di) in picked.iter().enumerate() {
            let d = &self.domains[di];
            let a = *self.actions.choose(rng).unwrap();
            let requested = rng.gen_bool(self.config.requestable_rate);
            belief[2 * di] = 1;
            belief[2 * di + 1] = u8::from(requested);
            if n > 0 {
                utterance.push(and);
                response.pop();
                response.push(and);
            }
            utterance.extend(self.user_segment(rng, d, a, requested));
            response.extend(self.response_segment(d, a, requested, db[di] == 1));
            intents.push(format!("domain:{}", d.name));
            let label = format!("action:{}", a.name());
            if !action_labels.contains(&label) {
                action_labels.push(label);
            }
        }
        response.push(EOS);
        intents.extend(action_labels);
        DialogueContext {
            utterance_tokens: utterance,
            belief_vector: belief,
            db_vector: db,
            intents,
            target_tokens: response,
        }
    }

    /// Slot tokens the response to `ctx` must contain: the entity of every
    /// domain in play, and every requestable the gold response provides.
    pub fn requirements(&self, ctx: &DialogueContext) -> Result<SlotRequirements> {
        let mut req = SlotRequirements::default();
        for label in &ctx.intents {
            let Some(name) = label.strip_prefix("domain:") else { continue };
            let d = self
                .domains
                .iter()
                .find(|d| d.name == name)
                .ok_or_else(|| MogError::invalid(format!("unknown domain `{name}`")))?;
            req.entities.push(d.entity);
            if ctx.target_tokens.contains(&d.requestable) {
                req.requested.push(d.requestable);
            }
        }
        Ok(req)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<DialogueContext>,
    pub valid: Vec<DialogueContext>,
    pub test: Vec<DialogueContext>,
}

impl CorpusSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Result<&[DialogueContext]> {
        match name {
            "train" => Ok(&self.train),
            "valid" => Ok(&self.valid),
            "test" => Ok(&self.test),
            _ => Err(MogError::invalid(format!("unknown split `{name}`"))),
        }
    }
}

/// Sizes of the three splits for `n` samples, following [`SPLIT_RATIO`].
pub fn split_sizes(n: usize) -> [usize; 3] {
    let total: usize = SPLIT_RATIO.iter().sum();
    let valid = (n * SPLIT_RATIO[1] + total / 2) / total;
    let test = (n * SPLIT_RATIO[2] + total / 2) / total;
    [n - valid - test, valid, test]
}

fn sample_seed(seed: u64, i: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((i as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Draws `n_samples` samples, each multi-intent with probability
/// `multi_intent_rate`, and splits them in order into train/valid/test.
pub fn generate_corpus(grammar: &ToyGrammar, n_samples: usize, multi_intent_rate: f64) -> Result<CorpusSplit> {
    if n_samples < MIN_SAMPLES {
        return Err(MogError::invalid(format!("need at least {MIN_SAMPLES} samples, got {n_samples}")));
    }
    if !(0.0..=1.0).contains(&multi_intent_rate) {
        return Err(MogError::invalid(format!("multi_intent_rate {multi_intent_rate} outside [0, 1]")));
    }
    if multi_intent_rate > 0.0 && grammar.domains.len() < 2 {
        return Err(MogError::invalid("multi-intent samples need at least two domains"));
    }
    let samples: Vec<DialogueContext> = (0..n_samples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(grammar.config.seed, i));
            let n = if rng.gen_bool(multi_intent_rate) { 2 } else { 1 };
            grammar.sample(&mut rng, n)
        })
        .collect();
    let [train, valid, _] = split_sizes(n_samples);
    let mut rest = samples;
    let test = rest.split_off(train + valid);
    let valid = rest.split_off(train);
    Ok(CorpusSplit { train: rest, valid, test })
}

/// Per-intent response token statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_records: usize,
    pub multi_intent_fraction: f64,
    pub intents: Vec<String>,
    pub samples_per_intent: Vec<usize>,
    /// Row per intent: add-one smoothed relative frequency of every
    /// non-special token, in vocabulary order.
    pub frequencies: Vec<Vec<f64>>,
    /// `kl[a][b] = KL(P_a || P_b)` in nats.
    pub kl: Vec<Vec<f64>>,
}

impl CorpusStats {
    pub fn min_off_diagonal_kl(&self) -> Option<f64> {
        let k = self.kl.len();
        (0..k)
            .flat_map(|a| (0..k).filter(move |&b| b != a).map(move |b| (a, b)))
            .map(|(a, b)| self.kl[a][b])
            .min_by(f64::total_cmp)
    }
}

/// Token-frequency table and pairwise KL divergence of the intents in
/// `intent_set`, from the responses of `samples`.
///
/// An intent's distribution is estimated from the records carrying it as
/// their only label of its namespace, so that multi-intent responses do not
/// blend the rows; intents never seen alone fall back to every record that
/// carries them.
pub fn corpus_stats(samples: &[DialogueContext], intent_set: &[String], vocab_size: usize) -> Result<CorpusStats> {
    if samples.is_empty() || intent_set.is_empty() {
        return Err(MogError::invalid("statistics need samples and intents"));
    }
    if vocab_size <= NUM_SPECIAL {
        return Err(MogError::invalid("vocabulary has no ordinary tokens"));
    }
    let width = vocab_size - NUM_SPECIAL;
    let namespace = |label: &str| label.split_once(':').map_or(String::new(), |(ns, _)| ns.to_string());
    let alone = |s: &DialogueContext, label: &str| {
        let ns = namespace(label);
        s.intents.iter().filter(|i| namespace(i) == ns).count() == 1
    };
    let mut counts = vec![vec![1.0; width]; intent_set.len()];
    let mut per_intent = vec![0usize; intent_set.len()];
    for (a, label) in intent_set.iter().enumerate() {
        let carrying: Vec<&DialogueContext> = samples.iter().filter(|s| s.intents.contains(label)).collect();
        per_intent[a] = carrying.len();
        let single: Vec<&DialogueContext> = carrying.iter().copied().filter(|s| alone(s, label)).collect();
        let source = if single.is_empty() { &carrying } else { &single };
        for s in source {
            for &t in &s.target_tokens {
                if t >= NUM_SPECIAL && t < vocab_size {
                    counts[a][t - NUM_SPECIAL] += 1.0;
                }
            }
        }
    }
    let frequencies: Vec<Vec<f64>> = counts
        .into_iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            row.into_iter().map(|c| c / total).collect()
        })
        .collect();
    let kl = frequencies
        .iter()
        .map(|p| {
            frequencies
                .iter()
                .map(|q| p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0))
                .collect()
        })
        .collect();
    let domains_of = |s: &DialogueContext| s.intents.iter().filter(|i| i.starts_with("domain:")).count();
    let multi = samples.iter().filter(|s| domains_of(s) > 1).count();
    let stats = CorpusStats {
        n_records: samples.len(),
        multi_intent_fraction: multi as f64 / samples.len() as f64,
        intents: intent_set.to_vec(),
        samples_per_intent: per_intent,
        frequencies,
        kl,
    };
    if let Some(min) = stats.min_off_diagonal_kl() {
        if min < 0.5 {
            warn!("intent token distributions are close: minimum pairwise KL {min:.4} nats");
        }
    }
    Ok(stats)
}

/// One line of a corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub utterance: Vec<String>,
    pub belief: Vec<u8>,
    pub db: Vec<u8>,
    pub intents: Vec<String>,
    pub response: Vec<String>,
}

impl CorpusRecord {
    pub fn from_context(ctx: &DialogueContext, vocab: &Vocab) -> Self {
        CorpusRecord {
            utterance: vocab.decode(&ctx.utterance_tokens),
            belief: ctx.belief_vector.clone(),
            db: ctx.db_vector.clone(),
            intents: ctx.intents.clone(),
            response: vocab.decode(&ctx.target_tokens),
        }
    }

    pub fn to_context(&self, vocab: &Vocab) -> DialogueContext {
        DialogueContext {
            utterance_tokens: vocab.encode(&self.utterance),
            belief_vector: self.belief.clone(),
            db_vector: self.db.clone(),
            intents: self.intents.clone(),
            target_tokens: vocab.encode(&self.response),
        }
    }
}

pub fn write_jsonl(path: &Path, samples: &[DialogueContext], vocab: &Vocab) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| MogError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(&CorpusRecord::from_context(s, vocab))
            .map_err(|e| MogError::state(format!("record encoding: {e}")))?;
        writeln!(w, "{line}").map_err(|e| MogError::io(path, e))?;
    }
    w.flush().map_err(|e| MogError::io(path, e))
}

pub fn read_jsonl(path: &Path, vocab: &Vocab) -> Result<Vec<DialogueContext>> {
    let file = fs::File::open(path).map_err(|e| MogError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| MogError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| MogError::Format {
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", n + 1),
        })?;
        let ctx = rec.to_context(vocab);
        if ctx.target_tokens.last() != Some(&EOS) {
            return Err(MogError::Format {
                path: path.to_path_buf(),
                detail: format!("line {}: response does not end with EOS", n + 1),
            });
        }
        out.push(ctx);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grammar() -> ToyGrammar {
        ToyGrammar::new(GrammarConfig::default()).unwrap()
    }

    #[test]
    fn default_vocabulary_fits_exactly() {
        let g = grammar();
        assert_eq!(required_vocab(3, false), 40);
        assert_eq!(g.vocab.len(), 40);
        assert_eq!(g.vocab.token(EOS), "<eos>");
        assert!(g.fillers.is_empty());
    }

    #[test]
    fn vocabulary_too_small_is_rejected() {
        let cfg = GrammarConfig {
            vocab_size: 30,
            ..GrammarConfig::default()
        };
        assert!(matches!(ToyGrammar::new(cfg), Err(MogError::InvalidArgument(_))));
    }

    #[test]
    fn zero_rate_gives_single_intent_samples() {
        let c = generate_corpus(&grammar(), 300, 0.0).unwrap();
        for s in c.train.iter().chain(&c.valid).chain(&c.test) {
            assert_eq!(s.intents.iter().filter(|i| i.starts_with("domain:")).count(), 1);
        }
    }

    #[test]
    fn multi_intent_fraction_tracks_the_rate() {
        let c = generate_corpus(&grammar(), 3000, 0.674).unwrap();
        let all: Vec<_> = c.train.iter().chain(&c.valid).chain(&c.test).cloned().collect();
        let stats = corpus_stats(&all, &grammar().domain_labels(), 40).unwrap();
        assert!((0.64..=0.71).contains(&stats.multi_intent_fraction), "{}", stats.multi_intent_fraction);
    }

    #[test]
    fn samples_are_well_formed() {
        let g = grammar();
        let c = generate_corpus(&g, 500, 0.674).unwrap();
        for s in c.train.iter().chain(&c.valid).chain(&c.test) {
            assert_eq!(s.target_tokens.last(), Some(&EOS));
            assert!(s.target_tokens.len() <= 12);
            assert!(s.utterance_tokens.len() <= 24);
            assert!(s.utterance_tokens.iter().chain(&s.target_tokens).all(|&t| t < 40 && t != UNK));
            let req = g.requirements(s).unwrap();
            assert!(!req.entities.is_empty());
            for t in req.entities.iter().chain(&req.requested) {
                assert!(s.target_tokens.contains(t));
            }
        }
    }

    #[test]
    fn split_follows_the_ratio() {
        assert_eq!(split_sizes(3000), [2426, 287, 287]);
        let c = generate_corpus(&grammar(), 3000, 0.5).unwrap();
        assert_eq!([c.train.len(), c.valid.len(), c.test.len()], split_sizes(3000));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&grammar(), 200, 0.674).unwrap();
        let b = generate_corpus(&grammar(), 200, 0.674).unwrap();
        assert_eq!(a, b);
        let other = ToyGrammar::new(GrammarConfig {
            seed: 99,
            ..GrammarConfig::default()
        })
        .unwrap();
        assert_ne!(a, generate_corpus(&other, 200, 0.674).unwrap());
    }

    #[test]
    fn domain_distributions_are_far_apart() {
        let g = grammar();
        let c = generate_corpus(&g, 3000, 0.674).unwrap();
        let stats = corpus_stats(&c.train, &g.domain_labels(), 40).unwrap();
        assert!(stats.min_off_diagonal_kl().unwrap() > 0.5, "{:?}", stats.kl);
        let actions = corpus_stats(&c.train, &g.action_labels(), 40).unwrap();
        println!("action KL {:?}", actions.kl);
        for (a, row) in stats.kl.iter().enumerate() {
            assert_eq!(row[a], 0.0);
        }
    }

    #[test]
    fn single_intent_and_degenerate_statistics() {
        let g = ToyGrammar::new(GrammarConfig {
            domains: vec!["hotel".into()],
            ..GrammarConfig::default()
        })
        .unwrap();
        let c = generate_corpus(&g, 100, 0.0).unwrap();
        let stats = corpus_stats(&c.train, &g.domain_labels(), 40).unwrap();
        assert_eq!(stats.kl, vec![vec![0.0]]);

        let shared = ToyGrammar::new(GrammarConfig {
            shared_domain_vocab: true,
            ..GrammarConfig::default()
        })
        .unwrap();
        let c = generate_corpus(&shared, 3000, 0.0).unwrap();
        let stats = corpus_stats(&c.train, &shared.domain_labels(), 40).unwrap();
        assert!(stats.min_off_diagonal_kl().unwrap() < 0.01, "{:?}", stats.kl);
    }

    #[test]
    fn jsonl_round_trip() {
        let g = grammar();
        let c = generate_corpus(&g, 40, 0.674).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        write_jsonl(&path, &c.train, &g.vocab).unwrap();
        assert_eq!(read_jsonl(&path, &g.vocab).unwrap(), c.train);
        let vpath = dir.path().join("vocab.txt");
        g.vocab.save(&vpath).unwrap();
        assert_eq!(Vocab::load(&vpath).unwrap(), g.vocab);
        let line = fs::read_to_string(&path).unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["utterance", "belief", "db", "intents", "response"] {
            assert!(first.get(key).is_some());
        }
    }
}
