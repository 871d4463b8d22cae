//! The operations behind each command-line subcommand.
//!
//! Output layout under an output directory:
//! `corpus/` (splits, `vocab.txt`, `stats.json`), `train/` (`best.ckpt`,
//! `last.ckpt`, `log.jsonl`), `eval-<split>.json`, and for the comparative
//! commands `runs/<name>/` plus the summary tables.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Variant};
use crate::corpus::{corpus_stats, generate_corpus, read_jsonl, write_jsonl, CorpusSplit, CorpusStats, ToyGrammar, Vocab};
use crate::encoder::DialogueContext;
use crate::error::{MogError, Result};
use crate::evaluation::{evaluate, specialization_matrix, strip_eos, EvalSet, Evaluation};
use crate::learning::checkpoint::{Checkpoint, CheckpointMeta};
use crate::learning::train::{BestModel, EpochLog, TrainSet, Trainer};
use crate::learning::{mu_weights, partition_dataset, LossWeights};
use crate::metrics::EvalReport;
use crate::model::MogNet;

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| MogError::state(format!("json encoding: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| MogError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| MogError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| MogError::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MogError::io(dir, e))
}

pub struct Corpus {
    pub grammar: ToyGrammar,
    pub split: CorpusSplit,
}

/// Contents of `stats.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub config_hash: String,
    pub vocab_hash: String,
    pub split_sizes: [usize; 3],
    pub domain: CorpusStats,
    pub action: CorpusStats,
}

/// Generates the corpus and writes splits, vocabulary and statistics under
/// `out_dir/corpus`.
pub fn cmd_gen_corpus(cfg: &RunConfig, out_dir: &Path) -> Result<(Corpus, CorpusReport)> {
    let grammar = cfg.grammar()?;
    let split = generate_corpus(&grammar, cfg.corpus.n_samples, cfg.corpus.multi_intent_rate)?;
    let dir = out_dir.join("corpus");
    create_dir(&dir)?;
    for name in SPLITS {
        write_jsonl(&dir.join(format!("{name}.jsonl")), split.get(name)?, &grammar.vocab)?;
    }
    grammar.vocab.save(&dir.join("vocab.txt"))?;
    let v = grammar.vocab.len();
    let report = CorpusReport {
        config_hash: cfg.config_hash(),
        vocab_hash: grammar.vocab.hash(),
        split_sizes: [split.train.len(), split.valid.len(), split.test.len()],
        domain: corpus_stats(&split.train, &grammar.domain_labels(), v)?,
        action: corpus_stats(&split.train, &grammar.action_labels(), v)?,
    };
    write_json(&dir.join("stats.json"), &report)?;
    info!("wrote {} records to {}", split.len(), dir.display());
    Ok((Corpus { grammar, split }, report))
}

/// Reads a corpus directory, checking its vocabulary against the configuration.
pub fn load_corpus(cfg: &RunConfig, dir: &Path) -> Result<Corpus> {
    let grammar = cfg.grammar()?;
    let vocab = Vocab::load(&dir.join("vocab.txt"))?;
    if vocab != grammar.vocab {
        return Err(MogError::Config(format!(
            "vocabulary in {} does not match the configured grammar",
            dir.display()
        )));
    }
    let read = |name: &str| read_jsonl(&dir.join(format!("{name}.jsonl")), &vocab);
    let split = CorpusSplit {
        train: read("train")?,
        valid: read("valid")?,
        test: read("test")?,
    };
    Ok(Corpus { grammar, split })
}

pub fn eval_set(grammar: &ToyGrammar, samples: &[DialogueContext], intents: &[String]) -> Result<EvalSet> {
    let partition = partition_dataset(samples, intents)?;
    let requirements = samples
        .iter()
        .map(|s| grammar.requirements(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSet {
        samples: samples.to_vec(),
        assignment: partition.assignment,
        requirements,
    })
}

fn loss_weights(cfg: &RunConfig, samples: &[DialogueContext], intents: &[String]) -> Result<LossWeights> {
    let partition = partition_dataset(samples, intents)?;
    LossWeights::new(cfg.variant.lambda, mu_weights(cfg.loss.mu, &partition))
}

fn checkpoint_meta(cfg: &RunConfig, grammar: &ToyGrammar, intents: &[String], model: &MogNet) -> CheckpointMeta {
    CheckpointMeta {
        config_hash: cfg.config_hash(),
        run_key: cfg.run_key(),
        vocab_hash: grammar.vocab.hash(),
        vocab_size: grammar.vocab.len(),
        experts: intents.len(),
        intents: intents.to_vec(),
        epoch: 0,
        seed: cfg.train.seed,
        model: model.config.clone(),
        best_epoch: None,
        best_score: None,
        adam_step: None,
    }
}

/// First line of `log.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub config_hash: String,
    pub variant: String,
    pub seed: u64,
    pub loss_reduction: String,
}

fn write_log(path: &Path, header: &LogHeader, entries: &[EpochLog]) -> Result<()> {
    let mut text = String::new();
    let enc = |e: serde_json::Error| MogError::state(format!("log encoding: {e}"));
    text.push_str(&serde_json::to_string(header).map_err(enc)?);
    text.push('\n');
    for e in entries {
        text.push_str(&serde_json::to_string(e).map_err(enc)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| MogError::io(path, e))
}

fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = fs::read_to_string(path).map_err(|e| MogError::io(path, e))?;
    text.lines()
        .skip(1)
        .map(|l| {
            serde_json::from_str(l).map_err(|e| MogError::Format {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_score: Option<f64>,
    pub log: Vec<EpochLog>,
    pub best_checkpoint: PathBuf,
    pub model: MogNet,
}

/// Trains on the corpus in `corpus_dir`, writing checkpoints and the log to
/// `run_dir`. With `resume`, continues from `run_dir/last.ckpt` if present.
pub fn cmd_train(cfg: &RunConfig, run_dir: &Path, corpus_dir: &Path, resume: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let corpus = load_corpus(cfg, corpus_dir)?;
    let intents = cfg.intent_set(&corpus.grammar);
    let partition = partition_dataset(&corpus.split.train, &intents)?;
    let train = TrainSet {
        samples: corpus.split.train.clone(),
        assignment: partition.assignment.clone(),
    };
    let valid = eval_set(&corpus.grammar, &corpus.split.valid, &intents)?;
    let weights = LossWeights::new(cfg.variant.lambda, mu_weights(cfg.loss.mu, &partition))?;
    let model = MogNet::new(cfg.model_config(intents.len()), cfg.train.seed)?;
    let base_meta = checkpoint_meta(cfg, &corpus.grammar, &intents, &model);
    let mut trainer = Trainer::new(model, cfg.train_config(), weights, &train, Some(&valid))?;

    create_dir(run_dir)?;
    let last_path = run_dir.join("last.ckpt");
    let best_path = run_dir.join("best.ckpt");
    let log_path = run_dir.join("log.jsonl");
    let header = LogHeader {
        config_hash: cfg.config_hash(),
        variant: cfg.variant_name(),
        seed: cfg.train.seed,
        loss_reduction: "token losses summed per sample, averaged over the batch".into(),
    };
    if resume && last_path.exists() {
        let last = Checkpoint::load(&last_path)?;
        if last.meta.run_key != base_meta.run_key {
            return Err(MogError::Config(format!(
                "{} was written with a different configuration",
                last_path.display()
            )));
        }
        trainer.model = last.model()?;
        let adam = last
            .optimizer(cfg.optimizer())?
            .ok_or_else(|| MogError::state("last checkpoint has no optimizer state"))?;
        let best = if best_path.exists() {
            let mut b = Checkpoint::load(&best_path)?;
            if b.meta.config_hash != header.config_hash {
                b.meta.config_hash = header.config_hash.clone();
                b.save(&best_path)?;
            }
            Some(BestModel {
                epoch: b.meta.best_epoch.unwrap_or(b.meta.epoch),
                score: b.meta.best_score,
                params: b.params,
            })
        } else {
            None
        };
        trainer.resume(adam, last.meta.epoch, best)?;
        trainer.log = read_log(&log_path)?
            .into_iter()
            .filter(|e| e.epoch <= last.meta.epoch)
            .collect();
        info!("resuming after epoch {}", last.meta.epoch);
    }

    while trainer.epoch < cfg.train.epochs {
        let entry = trainer.run_epoch()?;
        let best = trainer.best.as_ref().expect("best is set after an epoch");
        let meta = CheckpointMeta {
            epoch: trainer.epoch,
            best_epoch: Some(best.epoch),
            best_score: best.score,
            ..base_meta.clone()
        };
        Checkpoint::new(meta.clone(), &trainer.model, Some(&trainer.adam)).save(&last_path)?;
        if entry.best {
            Checkpoint::new(meta, &trainer.model, None).save(&best_path)?;
        }
        write_log(&log_path, &header, &trainer.log)?;
    }
    let best = trainer.best.as_ref().ok_or_else(|| MogError::state("no epoch was run"))?;
    Ok(TrainOutcome {
        best_epoch: best.epoch,
        best_score: best.score,
        log: trainer.log.clone(),
        best_checkpoint: best_path,
        model: trainer.best_model()?,
    })
}

/// Loads a checkpoint and checks it against the configuration and corpus.
pub fn load_checked(cfg: &RunConfig, checkpoint: &Path, corpus: &Corpus) -> Result<Checkpoint> {
    let ck = Checkpoint::load(checkpoint)?;
    if ck.meta.vocab_hash != corpus.grammar.vocab.hash() {
        return Err(MogError::Config(format!(
            "{} was trained on a different vocabulary",
            checkpoint.display()
        )));
    }
    if ck.meta.config_hash != cfg.config_hash() {
        return Err(MogError::Config(format!(
            "{} was trained with a different configuration",
            checkpoint.display()
        )));
    }
    Ok(ck)
}

/// Evaluates a checkpoint on one split. With `use_gold`, the gold responses
/// are scored in place of generated ones.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    corpus_dir: &Path,
    split: &str,
    use_gold: bool,
) -> Result<(EvalReport, Evaluation)> {
    let corpus = load_corpus(cfg, corpus_dir)?;
    let ck = load_checked(cfg, checkpoint, &corpus)?;
    let model = ck.model()?;
    let samples = corpus.split.get(split)?;
    let set = eval_set(&corpus.grammar, samples, &ck.meta.intents)?;
    let weights = loss_weights(cfg, &corpus.split.train, &ck.meta.intents)?;
    let eval = evaluate(&model, &set, &weights, use_gold)?;
    let report = EvalReport {
        bleu: eval.bleu,
        inform: eval.inform,
        success: eval.success,
        score: eval.score,
        ppl: eval.ppl,
        n_records: set.len(),
        config_hash: ck.meta.config_hash.clone(),
    };
    Ok((report, eval))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSample {
    pub utterance: Vec<String>,
    pub reference: Vec<String>,
    pub generated: Vec<String>,
    pub expert_outputs: Vec<Vec<String>>,
    /// Coordination weights per emitted token, `[C, R_1..R_k, P_1..P_k]`.
    pub betas: Vec<Vec<f64>>,
}

/// Greedy responses for the first `n` samples of a split.
pub fn cmd_generate(cfg: &RunConfig, checkpoint: &Path, corpus_dir: &Path, split: &str, n: usize) -> Result<Vec<GeneratedSample>> {
    let corpus = load_corpus(cfg, corpus_dir)?;
    let ck = load_checked(cfg, checkpoint, &corpus)?;
    let model = ck.model()?;
    let vocab = &corpus.grammar.vocab;
    corpus
        .split
        .get(split)?
        .iter()
        .take(n)
        .map(|s| {
            let g = crate::chair::generate(&model, s, model.config.max_len)?;
            Ok(GeneratedSample {
                utterance: vocab.decode(&s.utterance_tokens),
                reference: vocab.decode(&strip_eos(&s.target_tokens)),
                generated: vocab.decode(&strip_eos(&g.tokens)),
                expert_outputs: g.expert_tokens.iter().map(|t| vocab.decode(&strip_eos(t))).collect(),
                betas: g.betas,
            })
        })
        .collect()
}

/// Outcome of one train-and-test run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: String,
    pub use_retro: bool,
    pub use_prosp: bool,
    pub lambda: f64,
    pub seed: u64,
    pub config_hash: String,
    pub best_epoch: usize,
    pub valid_score: Option<f64>,
    pub test: EvalReport,
    pub beta_steps: usize,
    pub beta_violations: usize,
    /// `[slice][expert]` test perplexity.
    pub specialization: Vec<Vec<f64>>,
}

/// Directory of a run under `runs_dir`, keyed by variant, seed and config hash.
pub fn run_dir_name(cfg: &RunConfig) -> String {
    let label = match Variant::of(&cfg.variant) {
        Some(v) => v.name().to_string(),
        None => format!(
            "r{}p{}-lambda{}",
            u8::from(cfg.variant.use_retro),
            u8::from(cfg.variant.use_prosp),
            cfg.variant.lambda
        ),
    };
    format!("{label}-seed{}-{}", cfg.train.seed, &cfg.config_hash()[..12])
}

/// Trains, then evaluates the selected model on the test split. A run whose
/// `result.json` already exists for the same configuration is reused.
pub fn train_and_test(cfg: &RunConfig, runs_dir: &Path, corpus_dir: &Path) -> Result<RunResult> {
    let dir = runs_dir.join(run_dir_name(cfg));
    let result_path = dir.join("result.json");
    if result_path.exists() {
        if let Ok(r) = read_json::<RunResult>(&result_path) {
            if r.config_hash == cfg.config_hash() {
                info!("reusing {}", dir.display());
                return Ok(r);
            }
        }
    }
    let outcome = cmd_train(cfg, &dir, corpus_dir, true)?;
    let (report, eval) = cmd_eval(cfg, &outcome.best_checkpoint, corpus_dir, "test", false)?;
    write_json(&dir.join("eval-test.json"), &report)?;
    let corpus = load_corpus(cfg, corpus_dir)?;
    let intents = cfg.intent_set(&corpus.grammar);
    let test = eval_set(&corpus.grammar, &corpus.split.test, &intents)?;
    let result = RunResult {
        variant: cfg.variant_name(),
        use_retro: cfg.variant.use_retro,
        use_prosp: cfg.variant.use_prosp,
        lambda: cfg.variant.lambda,
        seed: cfg.train.seed,
        config_hash: cfg.config_hash(),
        best_epoch: outcome.best_epoch,
        valid_score: outcome.best_score,
        test: report,
        beta_steps: eval.beta_steps,
        beta_violations: eval.beta_violations,
        specialization: specialization_matrix(&outcome.model, &test)?,
    };
    write_json(&result_path, &result)?;
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub use_retro: bool,
    pub use_prosp: bool,
    pub lambda: f64,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

fn run_row(cfg: &RunConfig, label: String, out_dir: &Path, corpus_dir: &Path) -> TableRow {
    let outcome = train_and_test(cfg, &out_dir.join("runs"), corpus_dir);
    if let Err(e) = &outcome {
        warn!("{label} failed: {e}");
    }
    TableRow {
        label,
        use_retro: cfg.variant.use_retro,
        use_prosp: cfg.variant.use_prosp,
        lambda: cfg.variant.lambda,
        error: outcome.as_ref().err().map(ToString::to_string),
        result: outcome.ok(),
    }
}

fn markdown(first: &str, rows: &[TableRow]) -> String {
    let mut s = format!(
        "| {first} | β^C | β^R | β^P | λ | BLEU | Inform | Success | Score | PPL | β violations |\n|---|---|---|---|---|---|---|---|---|---|---|\n"
    );
    let tf = |b: bool| if b { "T" } else { "F" };
    for r in rows {
        let cells = match (&r.result, &r.error) {
            (Some(x), _) => format!(
                "{:.2} | {:.2} | {:.2} | {:.2} | {:.3} | {}/{}",
                100.0 * x.test.bleu,
                100.0 * x.test.inform,
                100.0 * x.test.success,
                x.test.score,
                x.test.ppl,
                x.beta_violations,
                x.beta_steps
            ),
            (None, Some(e)) => format!("failed: {e} | | | | | "),
            (None, None) => "| | | | | ".into(),
        };
        s.push_str(&format!(
            "| {} | T | {} | {} | {} | {cells} |\n",
            r.label,
            tf(r.use_retro),
            tf(r.use_prosp),
            r.lambda
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub rows: Vec<TableRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&RunResult> {
        self.rows.iter().find(|r| r.label == v.name()).and_then(|r| r.result.as_ref())
    }

    pub fn to_markdown(&self) -> String {
        markdown("variant", &self.rows)
    }
}

/// Trains and tests each variant with the configured seed. Failed rows are
/// recorded and the remaining rows still run.
pub fn cmd_ablate(cfg: &RunConfig, out_dir: &Path, corpus_dir: &Path, variants: &[Variant]) -> Result<AblationTable> {
    create_dir(out_dir)?;
    let rows = variants
        .iter()
        .map(|&v| run_row(&cfg.clone().with_variant(v), v.name().to_string(), out_dir, corpus_dir))
        .collect();
    let table = AblationTable {
        seed: cfg.train.seed,
        rows,
    };
    let stem = format!("ablation-seed{}", cfg.train.seed);
    write_json(&out_dir.join(format!("{stem}.json")), &table)?;
    fs::write(out_dir.join(format!("{stem}.md")), table.to_markdown()).map_err(|e| MogError::io(out_dir, e))?;
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub seed: u64,
    pub rows: Vec<TableRow>,
    /// Whether the best interior λ scores at least as well as both extremes;
    /// absent when the sweep lacks interior or extreme points.
    pub interior_beats_extremes: Option<bool>,
}

impl SweepTable {
    pub fn score_at(&self, lambda: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.lambda == lambda)
            .and_then(|r| r.result.as_ref())
            .map(|r| r.test.score)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = markdown("run", &self.rows);
        if let Some(b) = self.interior_beats_extremes {
            s.push_str(&format!("\ninterior λ ≥ both extremes: {b}\n"));
        }
        s
    }
}

/// One train-and-test run per λ with the configured seed and flags.
pub fn cmd_lambda_sweep(cfg: &RunConfig, out_dir: &Path, corpus_dir: &Path, lambdas: &[f64]) -> Result<SweepTable> {
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(MogError::Config(format!("lambda {l} outside [0, 1]")));
    }
    create_dir(out_dir)?;
    let rows: Vec<TableRow> = lambdas
        .iter()
        .map(|&lambda| {
            let mut c = cfg.clone();
            c.variant.lambda = lambda;
            run_row(&c, format!("λ={lambda}"), out_dir, corpus_dir)
        })
        .collect();
    let mut table = SweepTable {
        seed: cfg.train.seed,
        rows,
        interior_beats_extremes: None,
    };
    let interior = table
        .rows
        .iter()
        .filter(|r| r.lambda > 0.0 && r.lambda < 1.0)
        .filter_map(|r| r.result.as_ref().map(|x| x.test.score))
        .max_by(f64::total_cmp);
    if let (Some(mid), Some(lo), Some(hi)) = (interior, table.score_at(0.0), table.score_at(1.0)) {
        table.interior_beats_extremes = Some(mid >= lo.max(hi));
    }
    let stem = format!("lambda-sweep-seed{}", cfg.train.seed);
    write_json(&out_dir.join(format!("{stem}.json")), &table)?;
    fs::write(out_dir.join(format!("{stem}.md")), table.to_markdown()).map_err(|e| MogError::io(out_dir, e))?;
    Ok(table)
}
