//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
//! Failing criteria are reported, not raised; set `MOGNET_ACCEPTANCE_STRICT`
//! to exit non-zero when any criterion fails.
//!
//! Positional arguments select criteria by number: `cargo test --release
//! --test acceptance -- 1 3 9`. Criteria 5 to 8 share one experiment grid
//! (4 variants plus λ = 1, three seeds) trained from `configs/toy.cfg`. Its
//! artifacts are kept under `target/tmp/acceptance` (or
//! `$MOGNET_ACCEPTANCE_DIR`) after the run; the directory is cleared at
//! start unless `MOGNET_ACCEPTANCE_REUSE` is set, in which case finished runs
//! with a matching configuration hash are reused.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mognet::chair::{chair_teacher_forced, forced_expert_rollouts, generate};
use mognet::corpus::{generate_corpus, GrammarConfig, ToyGrammar};
use mognet::encoder::{encode, DialogueContext};
use mognet::expert::{attend, DecoderState};
use mognet::harness::commands::{run_dir_name, write_json};
use mognet::harness::{
    cmd_ablate, cmd_eval, cmd_gen_corpus, cmd_lambda_sweep, cmd_train, load_corpus, AblationTable, RunConfig,
    SweepTable, Variant,
};
use mognet::learning::{
    partition_dataset, sample_loss, Checkpoint, LossWeights, OptimizerConfig, TrainConfig, TrainSet, Trainer,
};
use mognet::metrics::score;
use mognet::model::{DecoderRole, ModelConfig, MogNet, Session, VariantFlags, EOS, NUM_SPECIAL};
use mognet::tensor::{gradient_check, softmax, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = Result<Outcome, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn toy_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.cfg");
    RunConfig::from_file(&path).expect("configs/toy.cfg parses")
}

fn is_distribution(p: &[f64]) -> bool {
    (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12 && p.iter().all(|&x| x >= 0.0)
}

// 1 -------------------------------------------------------------------------

fn gradcheck_model() -> (ModelConfig, Vec<(DialogueContext, Vec<usize>)>) {
    let cfg = ModelConfig {
        vocab_size: 6,
        embedding: 3,
        hidden: 4,
        n_belief: 2,
        n_db: 1,
        experts: 2,
        max_src_len: 6,
        max_len: 3,
        init_scale: 0.5,
        flags: VariantFlags::default(),
    };
    let ctx = |u: Vec<usize>, b: Vec<u8>, d: u8, y: Vec<usize>| DialogueContext {
        utterance_tokens: u,
        belief_vector: b,
        db_vector: vec![d],
        intents: vec!["domain:a".into()],
        target_tokens: y,
    };
    let samples = vec![
        (ctx(vec![4, 5, 4], vec![1, 0], 1, vec![4, 5, EOS]), vec![0]),
        (ctx(vec![5, 5], vec![0, 1], 0, vec![5, 4, EOS]), vec![0, 1]),
    ];
    (cfg, samples)
}

fn batch_loss(model: &MogNet, samples: &[(DialogueContext, Vec<usize>)], store: Option<&mut ParamStore>) -> mognet::Result<f64> {
    let weights = LossWeights::uniform(0.5, model.experts())?;
    let scale = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::new();
    for (ctx, experts) in samples {
        let mut sess = Session::new(model);
        let l = sample_loss(&mut sess, ctx, experts, &weights)?;
        total += sess.tape.scalar(l.total) * scale;
        if store.is_some() {
            grads.push(sess.tape.backward(l.total)?);
        }
    }
    if let Some(store) = store {
        store.zero_grad();
        for g in &grads {
            g.accumulate_into(store, scale);
        }
    }
    Ok(total)
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let (cfg, samples) = gradcheck_model();
    let model = MogNet::new(cfg.clone(), 7).map_err(err)?;
    let mut store = model.params.clone();
    batch_loss(&model, &samples, Some(&mut store)).map_err(err)?;
    let report = gradient_check(&mut store, 1e-5, 1e-4, |p| {
        let m = MogNet::from_params(cfg.clone(), p.clone())?;
        batch_loss(&m, &samples, None)
    })
    .map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let (worst, idx) = report.worst.clone().unwrap_or_default();
    let covered = ["encoder.", "expert.0.", "expert.1.", "chair.", "embedding"]
        .iter()
        .all(|p| report.per_tensor.iter().any(|(n, _)| n.starts_with(p)));
    Ok(outcome(
        report.passed && secs < 60.0 && covered,
        format!(
            "max rel error {:.2e} over {} coordinates (worst {worst}[{idx}]), {secs:.1}s",
            report.max_rel_error, report.coordinates
        ),
    ))
}

// 2 -------------------------------------------------------------------------

fn random_trial(rng: &mut ChaCha8Rng) -> mognet::Result<(usize, usize)> {
    let k = rng.gen_range(1..=3);
    let v = rng.gen_range(NUM_SPECIAL + 2..=20);
    let cfg = ModelConfig {
        vocab_size: v,
        embedding: rng.gen_range(2..=6),
        hidden: rng.gen_range(2..=8),
        n_belief: rng.gen_range(1..=4),
        n_db: rng.gen_range(1..=3),
        experts: k,
        max_src_len: 8,
        max_len: rng.gen_range(1..=8),
        init_scale: rng.gen_range(0.05..2.0),
        flags: VariantFlags {
            use_retro: rng.gen_bool(0.5),
            use_prosp: rng.gen_bool(0.5),
        },
    };
    let model = MogNet::new(cfg.clone(), rng.gen())?;
    let token = |rng: &mut ChaCha8Rng| rng.gen_range(NUM_SPECIAL..v);
    let mut target: Vec<usize> = (0..rng.gen_range(0..5)).map(|_| token(rng)).collect();
    target.push(EOS);
    let ctx = DialogueContext {
        utterance_tokens: (0..rng.gen_range(1..=8)).map(|_| token(rng)).collect(),
        belief_vector: (0..cfg.n_belief).map(|_| rng.gen_range(0..2)).collect(),
        db_vector: (0..cfg.n_db).map(|_| rng.gen_range(0..2)).collect(),
        intents: vec!["domain:a".into()],
        target_tokens: target,
    };

    let mut dists: Vec<Vec<f64>> = Vec::new();
    let logits: Vec<f64> = (0..v).map(|_| rng.gen_range(-30.0..30.0)).collect();
    dists.push(softmax(&Tensor::vector(logits))?.into_inner());

    let mut sess = Session::new(&model);
    let enc = encode(&mut sess, &ctx)?;
    let roles = (0..k).map(DecoderRole::Expert).chain([DecoderRole::Chair]);
    for role in roles {
        let state = DecoderState::init(&mut sess, role, &enc);
        let weights = attend(&mut sess, &state, &enc)?.weights;
        dists.push(sess.tape.value(weights).to_vec());
    }
    let cache = forced_expert_rollouts(&mut sess, &enc, &ctx.target_tokens)?;
    let pass = chair_teacher_forced(&mut sess, &enc, &cache, &ctx.target_tokens)?;
    for r in &cache.rollouts {
        dists.extend(r.dists.iter().map(|&d| sess.tape.value(d).to_vec()));
    }
    for (&m, f) in pass.mixtures.iter().zip(&pass.features) {
        for var in [m, f.beta, f.chair_dist] {
            dists.push(sess.tape.value(var).to_vec());
        }
    }
    let g = generate(&model, &ctx, cfg.max_len)?;
    dists.extend(g.dists);
    dists.extend(g.betas);
    let failures = dists.iter().filter(|d| !is_distribution(d)).count();
    Ok((dists.len(), failures))
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut failures) = (0, 0);
    for _ in 0..1000 {
        let (n, f) = random_trial(&mut rng).map_err(err)?;
        checked += n;
        failures += f;
    }
    Ok(outcome(
        failures == 0,
        format!("1000 trials, {checked} distributions checked, {failures} failures"),
    ))
}

// 3 -------------------------------------------------------------------------

fn criterion_3() -> Check {
    let a = score(0.1890, 0.7133, 0.6096).map_err(err)?;
    let b = score(0.2013, 0.8530, 0.7330).map_err(err)?;
    Ok(outcome(
        (a - 85.05).abs() <= 0.005 && (b - 99.43).abs() <= 0.005,
        format!("{a:.4} (expected 85.05), {b:.4} (expected 99.43)"),
    ))
}

// 4 -------------------------------------------------------------------------

fn rig_eos(model: &mut MogNet, bias: f64) {
    let k = model.experts();
    let names = (0..k).map(|l| format!("expert.{l}.out.b")).chain(["chair.out.b".to_string()]);
    for name in names {
        model.params.by_name_mut(&name).expect("output bias").data_mut()[EOS] = bias;
    }
}

fn criterion_4() -> Check {
    let ctx = DialogueContext {
        utterance_tokens: vec![5, 9, 12, 7],
        belief_vector: vec![1, 0, 0, 1, 0, 0],
        db_vector: vec![1, 0, 1],
        intents: vec!["domain:a".into()],
        target_tokens: vec![EOS],
    };
    let mut lines = Vec::new();
    let mut pass = true;
    for k in [1, 2, 3] {
        for n in [1, 5, 12] {
            let cfg = ModelConfig {
                experts: k,
                max_len: n,
                init_scale: 0.3,
                ..ModelConfig::default()
            };
            // EOS is never the argmax, so every response runs to max_len = n.
            let mut model = MogNet::new(cfg, 5).map_err(err)?;
            rig_eos(&mut model, -1e3);
            let g = generate(&model, &ctx, n).map_err(err)?;
            let ok = g.tokens.len() == n && g.calls.chair_cells == n && g.calls.expert_cells <= k * n;
            pass &= ok;
            lines.push(format!("k={k} n={n}: chair {} expert {}", g.calls.chair_cells, g.calls.expert_cells));
        }
        // Early stop: EOS first, long budget.
        let mut model = MogNet::new(ModelConfig { experts: k, ..ModelConfig::default() }, 5).map_err(err)?;
        rig_eos(&mut model, 1e3);
        let g = generate(&model, &ctx, 12).map_err(err)?;
        pass &= g.tokens == [EOS] && g.calls.chair_cells == 1 && g.calls.expert_cells <= k * 12;
    }
    Ok(outcome(pass, lines.join("; ")))
}

// 5-8 -----------------------------------------------------------------------

struct Grid {
    cfg: RunConfig,
    out: PathBuf,
    ablations: Vec<AblationTable>,
    sweeps: Vec<SweepTable>,
}

impl Grid {
    fn corpus_dir(&self) -> PathBuf {
        self.out.join("corpus")
    }

    fn seed_config(&self, seed: u64, variant: Variant) -> RunConfig {
        let mut c = self.cfg.clone().with_variant(variant);
        c.train.seed = seed;
        c
    }
}

fn acceptance_dir() -> PathBuf {
    std::env::var_os("MOGNET_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

fn run_grid() -> Result<Grid, String> {
    let out = acceptance_dir();
    if std::env::var_os("MOGNET_ACCEPTANCE_REUSE").is_none() && out.exists() {
        fs::remove_dir_all(&out).map_err(err)?;
    }
    let mut cfg = toy_config();
    cfg.paths.out_dir = out.clone();
    cmd_gen_corpus(&cfg, &out).map_err(err)?;
    let corpus_dir = out.join("corpus");
    let mut grid = Grid {
        cfg: cfg.clone(),
        out: out.clone(),
        ablations: Vec::new(),
        sweeps: Vec::new(),
    };
    for seed in SEEDS {
        let start = Instant::now();
        let mut c = cfg.clone();
        c.train.seed = seed;
        grid.ablations.push(cmd_ablate(&c, &out, &corpus_dir, &Variant::ALL).map_err(err)?);
        grid.sweeps.push(cmd_lambda_sweep(&c, &out, &corpus_dir, &[0.0, 0.5, 1.0]).map_err(err)?);
        println!("  grid: seed {seed} finished in {:.0}s", start.elapsed().as_secs_f64());
    }
    Ok(grid)
}

fn criterion_5(grid: &Grid) -> Check {
    let corpus = load_corpus(&grid.cfg, &grid.corpus_dir()).map_err(err)?;
    let mut details = Vec::new();
    let mut pass = true;
    for (table, &seed) in grid.ablations.iter().zip(&SEEDS) {
        for v in [Variant::MogNetP, Variant::MogNetPR] {
            let r = table.row(v).ok_or_else(|| format!("{v} run missing for seed {seed}"))?;
            let cfg = grid.seed_config(seed, v);
            let ckpt = grid.out.join("runs").join(run_dir_name(&cfg)).join("best.ckpt");
            let model = Checkpoint::load(&ckpt).and_then(|c| c.model()).map_err(err)?;
            let mask = model.config.flags.beta_mask(model.experts());
            let (mut steps, mut off_support) = (0, 0);
            for ctx in &corpus.split.test {
                let g = generate(&model, ctx, model.config.max_len).map_err(err)?;
                for beta in &g.betas {
                    steps += 1;
                    let support: Vec<bool> = beta.iter().map(|&b| b != 0.0).collect();
                    off_support += usize::from(support != mask);
                }
            }
            pass &= r.beta_violations == 0 && r.beta_steps > 0 && off_support == 0 && steps > 0;
            details.push(format!(
                "seed {seed} {v}: logged {}/{} violations, support mismatch {off_support}/{steps}",
                r.beta_violations, r.beta_steps
            ));
        }
    }
    Ok(outcome(pass, details.join("; ")))
}

fn specialized(matrix: &[Vec<f64>]) -> bool {
    matrix
        .iter()
        .enumerate()
        .all(|(s, row)| row.iter().enumerate().all(|(l, &p)| l == s || row[s] < p))
}

fn criterion_6(grid: &Grid) -> Check {
    let mut hits = 0;
    let mut details = Vec::new();
    for (table, seed) in grid.ablations.iter().zip(SEEDS) {
        let r = table.row(Variant::MogNet).ok_or_else(|| format!("mognet run missing for seed {seed}"))?;
        let ok = specialized(&r.specialization);
        hits += usize::from(ok);
        let diag: Vec<String> = r
            .specialization
            .iter()
            .map(|row| row.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join("/"))
            .collect();
        details.push(format!("seed {seed} {} [{}]", if ok { "ok" } else { "no" }, diag.join(" ")));
    }
    Ok(outcome(hits >= 2, format!("{hits}/3 seeds specialized; {}", details.join("; "))))
}

fn mean_score(grid: &Grid, v: Variant) -> Result<f64, String> {
    let mut total = 0.0;
    for (table, seed) in grid.ablations.iter().zip(SEEDS) {
        total += table
            .row(v)
            .ok_or_else(|| format!("{v} run missing for seed {seed}"))?
            .test
            .score;
    }
    Ok(total / SEEDS.len() as f64)
}

fn criterion_7(grid: &Grid) -> Check {
    let m = mean_score(grid, Variant::MogNet)?;
    let gl = mean_score(grid, Variant::MogNetGL)?;
    let pr = mean_score(grid, Variant::MogNetPR)?;
    let p = mean_score(grid, Variant::MogNetP)?;
    Ok(outcome(
        m > gl && m > pr,
        format!(
            "mean test Score: mognet {m:.2}, mognet-gl {gl:.2}, mognet-p-r {pr:.2} (mognet-p {p:.2}); artifacts in {}",
            grid.out.display()
        ),
    ))
}

fn criterion_8(grid: &Grid) -> Check {
    let mut hits = 0;
    let mut details = Vec::new();
    for (sweep, seed) in grid.sweeps.iter().zip(SEEDS) {
        let at = |l: f64| sweep.score_at(l).ok_or_else(|| format!("λ={l} run missing for seed {seed}"));
        let (lo, mid, hi) = (at(0.0)?, at(0.5)?, at(1.0)?);
        let ok = mid >= lo.max(hi);
        hits += usize::from(ok);
        details.push(format!("seed {seed}: {lo:.2} / {mid:.2} / {hi:.2}"));
    }
    Ok(outcome(
        hits >= 2,
        format!("{hits}/3 seeds with Score(0.5) >= both extremes (λ = 0 / 0.5 / 1); {}", details.join("; ")),
    ))
}

// 9 -------------------------------------------------------------------------

fn criterion_9() -> Check {
    let grammar = ToyGrammar::new(GrammarConfig::default()).map_err(err)?;
    let samples = generate_corpus(&grammar, 30, 0.674).map_err(err)?.train[..8].to_vec();
    let intents = grammar.domain_labels();
    let train = TrainSet {
        assignment: partition_dataset(&samples, &intents).map_err(err)?.assignment,
        samples: samples.clone(),
    };
    let cfg = ModelConfig {
        vocab_size: grammar.vocab.len(),
        n_belief: grammar.n_belief(),
        n_db: grammar.n_db(),
        experts: intents.len(),
        hidden: 32,
        ..ModelConfig::default()
    };
    let config = TrainConfig {
        epochs: 300,
        batch_size: 1,
        seed: 1,
        optimizer: OptimizerConfig {
            lr: 0.01,
            ..OptimizerConfig::default()
        },
    };
    let weights = LossWeights::uniform(0.5, intents.len()).map_err(err)?;
    let model = MogNet::new(cfg, 1).map_err(err)?;
    let mut trainer = Trainer::new(model, config, weights, &train, None).map_err(err)?;
    trainer.run().map_err(err)?;
    let loss = trainer.training_loss().map_err(err)?;
    let mut exact = 0;
    for s in &samples {
        let g = generate(&trainer.model, s, trainer.model.config.max_len).map_err(err)?;
        exact += usize::from(g.tokens == s.target_tokens);
    }
    Ok(outcome(
        loss < 0.05 && exact == samples.len(),
        format!("training loss {loss:.4} after 300 epochs, {exact}/8 responses reproduced"),
    ))
}

// 10 ------------------------------------------------------------------------

fn artifacts(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut cfg = toy_config();
    cfg.train.epochs = 2;
    cfg.paths.out_dir = dir.to_path_buf();
    cmd_gen_corpus(&cfg, dir).map_err(err)?;
    let corpus = dir.join("corpus");
    let run = dir.join("train");
    let outcome = cmd_train(&cfg, &run, &corpus, false).map_err(err)?;
    let (report, _) = cmd_eval(&cfg, &outcome.best_checkpoint, &corpus, "test", false).map_err(err)?;
    write_json(&dir.join("eval-test.json"), &report).map_err(err)?;
    let files = [
        "corpus/train.jsonl",
        "corpus/valid.jsonl",
        "corpus/test.jsonl",
        "corpus/vocab.txt",
        "corpus/stats.json",
        "train/best.ckpt",
        "train/last.ckpt",
        "train/log.jsonl",
        "eval-test.json",
    ];
    files
        .iter()
        .map(|f| fs::read(dir.join(f)).map(|b| (f.to_string(), b)).map_err(err))
        .collect()
}

fn criterion_10() -> Check {
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    let first = artifacts(a.path())?;
    let second = artifacts(b.path())?;
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    Ok(outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts bit-identical across two runs", first.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    ))
}

// ---------------------------------------------------------------------------

fn run(n: u32, name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match result {
        Ok(Ok(o)) => (o.pass, o.detail),
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(_) => (false, "panicked".to_string()),
    };
    println!(
        "criterion {n:>2} [{}] {name}: {detail} ({secs:.1}s)",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut results = Vec::new();

    let standalone: [(u32, &str, fn() -> Check); 4] = [
        (1, "gradient integrity", criterion_1),
        (2, "distribution invariants", criterion_2),
        (3, "score formula", criterion_3),
        (4, "complexity accounting", criterion_4),
    ];
    for (n, name, f) in standalone {
        if wanted(n) {
            results.push((n, run(n, name, f)));
        }
    }

    let grid_criteria: [(u32, &str, fn(&Grid) -> Check); 4] = [
        (5, "ablation masks", criterion_5),
        (6, "expert specialization", criterion_6),
        (7, "learning-scheme ordering", criterion_7),
        (8, "lambda extremes degrade", criterion_8),
    ];
    if grid_criteria.iter().any(|(n, _, _)| wanted(*n)) {
        let start = Instant::now();
        println!("  grid: training 5 runs x 3 seeds under {}", acceptance_dir().display());
        let grid = catch_unwind(run_grid).unwrap_or_else(|_| Err("grid panicked".into()));
        println!("  grid: done in {:.0}s", start.elapsed().as_secs_f64());
        for (n, name, f) in grid_criteria {
            if wanted(n) {
                results.push((n, run(n, name, || grid.as_ref().map_err(Clone::clone).and_then(f))));
            }
        }
    }

    if wanted(9) {
        results.push((9, run(9, "overfit smoke test", criterion_9)));
    }
    if wanted(10) {
        results.push((10, run(10, "determinism", criterion_10)));
    }

    let failing: Vec<String> = results.iter().filter(|r| !r.1).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        results.len() - failing.len(),
        results.len(),
        if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
    );
    if !failing.is_empty() && std::env::var_os("MOGNET_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
