use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde_json::json;

use qe_core::corpus::{read_parallel_tsv, read_qe_jsonl, write_parallel_tsv, write_qe_jsonl, QeSample, WordTags};
use qe_core::corruptor::MaskedRecord;
use qe_core::ensemble::{
    assemble_spans, ensemble_predictions, fine_tag, grid_search_thresholds, tag_by_threshold, DevSet, MergeRule,
    TunedThresholds,
};
use qe_core::fixer::{train_ngram_lm, ExternalSampler, FillMode, NgramLm, Sampler};
use qe_core::metrics::{span_scores, spearman, ConfusionCounts, SpanMatch};
use qe_core::pipeline::{corrupt_pair, fix_masked};
use qe_core::stats::{estimate_stats, CorruptionStats};
use qe_core::synth::{noisy_corpus, NoiseConfig, ToyLanguage};
use qe_core::toy_qe::train::{predict_example, prepare_one, EvalRecord};
use qe_core::toy_qe::{read_predictions, train, write_predictions, Activation, Checkpoint, ModelParams, Prediction};
use qe_core::{QeError, Result};

use crate::config::PipelineConfig;
use crate::output::{align_by_id, read_spans, read_tags, write_atomic, write_spans, write_tags, write_text, EventLog};
use crate::{
    base_config, Cli, Command, CorruptArgs, EnsembleArgs, EvalArgs, FixArgs, GenStatsArgs, MatchArg, MergeArg, ModeArg,
    PredictArgs, SigmaArg, SpansArgs, TaskArg, ToyCorpusArgs, TrainLmArgs, TrainQeArgs, TuneArgs,
};

impl From<ModeArg> for FillMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ltr => FillMode::LeftToRight,
            ModeArg::Parallel => FillMode::Parallel,
        }
    }
}

impl From<SigmaArg> for Activation {
    fn from(s: SigmaArg) -> Self {
        match s {
            SigmaArg::Sigmoid => Activation::Sigmoid,
            SigmaArg::None => Activation::None,
        }
    }
}

impl From<MergeArg> for MergeRule {
    fn from(m: MergeArg) -> Self {
        match m {
            MergeArg::Worst => MergeRule::Worst,
            MergeArg::Majority => MergeRule::Majority,
        }
    }
}

impl From<MatchArg> for SpanMatch {
    fn from(m: MatchArg) -> Self {
        match m {
            MatchArg::Strict => SpanMatch::Strict,
            MatchArg::Lenient => SpanMatch::Lenient,
        }
    }
}

fn set<T>(slot: &mut T, value: Option<impl Into<T>>) {
    if let Some(v) = value {
        *slot = v.into();
    }
}

/// Applies subcommand flags on top of the file configuration.
fn apply_flags(command: &Command, c: &mut PipelineConfig) -> Result<()> {
    match command {
        Command::Corrupt(a) => {
            set(&mut c.corrupt.insert, a.insert);
            set(&mut c.corrupt.delete, a.delete);
        }
        Command::TrainLm(a) => set(&mut c.lm.order, a.order),
        Command::Fix(a) => {
            set(&mut c.fix.mode, a.mode);
            set(&mut c.fix.k.minor, a.k_minor);
            set(&mut c.fix.k.major, a.k_major);
            set(&mut c.fix.k.critical, a.k_critical);
            set(&mut c.fix.timeout_secs, a.timeout_secs);
            if a.external_cmd.is_some() {
                c.fix.external_cmd = a.external_cmd.clone();
            }
        }
        Command::TrainQe(a) => {
            set(&mut c.train.alpha, a.alpha);
            set(&mut c.train.beta, a.beta);
            set(&mut c.train.margin, a.margin);
            set(&mut c.train.patience, a.patience);
            set(&mut c.train.learning_rate, a.learning_rate);
            set(&mut c.train.max_epochs, a.max_epochs);
            set(&mut c.model.sigma, a.sigma);
            set(&mut c.model.dropout, a.dropout);
        }
        Command::Spans(a) => {
            if let Some(p) = &a.thresholds {
                let tuned = load_thresholds(p)?;
                c.spans.e_bad = tuned.thresholds.bad;
                c.spans.e_minor = tuned.thresholds.minor;
                c.spans.e_major = tuned.thresholds.major;
            }
            set(&mut c.spans.e_bad, a.e_bad);
            set(&mut c.spans.e_minor, a.e_minor);
            set(&mut c.spans.e_major, a.e_major);
            set(&mut c.spans.merge, a.merge);
        }
        Command::Tune(a) => {
            set(&mut c.tune.step, a.step);
            set(&mut c.tune.mode, a.mode);
            set(&mut c.spans.merge, a.merge);
        }
        Command::Eval(a) => set(&mut c.tune.mode, a.mode),
        Command::ToyCorpus(_) | Command::GenStats(_) | Command::Predict(_) | Command::Ensemble(_) => {}
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = base_config(&cli)?;
    if let Some(cmd) = &cli.command {
        apply_flags(cmd, &mut config)?;
    }
    if cli.show_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(QeError::InvalidValue("no subcommand given (see --help)".into()));
    };
    config.validate()?;
    if cli.jobs == 0 {
        return Err(QeError::InvalidValue("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| QeError::InvalidValue(format!("cannot start {} workers: {e}", cli.jobs)))?;
    let ctx = Ctx { config, pool, jobs: cli.jobs };
    match command {
        Command::ToyCorpus(a) => toy_corpus(&ctx, a),
        Command::GenStats(a) => gen_stats(&ctx, a),
        Command::Corrupt(a) => corrupt(&ctx, a),
        Command::TrainLm(a) => train_lm(&ctx, a),
        Command::Fix(a) => fix(&ctx, a),
        Command::TrainQe(a) => train_qe(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Ensemble(a) => ensemble(&ctx, a),
        Command::Spans(a) => spans(&ctx, a),
        Command::Tune(a) => tune(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
    }
}

struct Ctx {
    config: PipelineConfig,
    pool: rayon::ThreadPool,
    jobs: usize,
}

impl Ctx {
    /// Order-preserving parallel map.
    fn map<T: Sync, U: Send>(&self, items: &[T], f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    /// Records the effective configuration next to `output`.
    fn log_config(&self, command: &str, output: &Path) -> Result<()> {
        let dir = output.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let text = format!("# effective configuration of `qe {command}`\n{}", self.config.to_toml());
        write_text(&dir.join(format!("{command}.config.toml")), &text)
    }

    fn log(&self, command: &'static str) -> EventLog {
        let log = EventLog::start(command);
        log.emit("start", json!({ "jobs": self.jobs, "seed": self.config.seed }));
        log
    }
}

fn toy_corpus(ctx: &Ctx, a: ToyCorpusArgs) -> Result<()> {
    let log = ctx.log("toy-corpus");
    let seed = ctx.config.seed;
    let lang = ToyLanguage::new(ctx.config.toy.clone(), seed)?;
    let pairs = lang.corpus(a.pairs, "p", seed);
    let noise = NoiseConfig::default();
    let annotated = noisy_corpus(&lang, &lang.corpus(a.annotated, "a", seed), &noise, seed)?;
    let parallel = a.output_dir.join("parallel.tsv");
    write_atomic(&parallel, |w| write_parallel_tsv(&pairs, w))?;
    write_atomic(&a.output_dir.join("annotated.jsonl"), |w| write_qe_jsonl(&annotated, w))?;
    if a.dev > 0 {
        let dev = noisy_corpus(&lang, &lang.corpus(a.dev, "d", seed), &noise, seed)?;
        write_atomic(&a.output_dir.join("dev.jsonl"), |w| write_qe_jsonl(&dev, w))?;
    }
    ctx.log_config("toy-corpus", &parallel)?;
    log.emit("done", json!({ "pairs": pairs.len(), "annotated": annotated.len(), "dev": a.dev }));
    Ok(())
}

fn gen_stats(ctx: &Ctx, a: GenStatsArgs) -> Result<()> {
    let log = ctx.log("gen-stats");
    let (stats, records) = match &a.input {
        Some(p) => {
            let samples = read_qe_jsonl(p)?;
            let mut s = estimate_stats(&samples)?;
            s.description = format!("estimated from {} records", samples.len());
            (s, samples.len())
        }
        None => (CorruptionStats::synthetic_defaults(), 0),
    };
    write_text(&a.output, &(stats.to_json()? + "\n"))?;
    ctx.log_config("gen-stats", &a.output)?;
    log.emit("done", json!({ "records": records }));
    Ok(())
}

fn corrupt(ctx: &Ctx, a: CorruptArgs) -> Result<()> {
    let log = ctx.log("corrupt");
    let stats = CorruptionStats::load(&a.stats)?;
    let pairs = read_parallel_tsv(&a.input)?;
    let seed = ctx.config.seed;
    let edits = ctx.config.corrupt;
    let records = ctx.map(&pairs, |p| {
        let masked = corrupt_pair(p, &stats, edits, seed)?;
        Ok(MaskedRecord::new(&p.id, &p.source, &qe_core::corpus::tokenize(&p.target), &masked))
    })?;
    write_atomic(&a.output, |w| {
        for r in &records {
            writeln!(w, "{}", serde_json::to_string(r)?)?;
        }
        Ok(())
    })?;
    ctx.log_config("corrupt", &a.output)?;
    log.emit("done", json!({ "records": records.len() }));
    Ok(())
}

fn train_lm(ctx: &Ctx, a: TrainLmArgs) -> Result<()> {
    let log = ctx.log("train-lm");
    let pairs = read_parallel_tsv(&a.input)?;
    let corpus: Vec<Vec<&str>> = pairs.iter().map(|p| p.target.split_whitespace().collect()).collect();
    let lm = train_ngram_lm(&corpus, ctx.config.lm.order)?;
    write_text(&a.output, &(lm.to_json()? + "\n"))?;
    ctx.log_config("train-lm", &a.output)?;
    log.emit("done", json!({ "records": pairs.len(), "vocab": lm.vocab().len() }));
    Ok(())
}

fn read_masked(path: &Path) -> Result<Vec<MaskedRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| QeError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| QeError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn fix(ctx: &Ctx, a: FixArgs) -> Result<()> {
    let log = ctx.log("fix");
    let records = read_masked(&a.input)?;
    let masked = records.iter().map(|r| r.masked()).collect::<Result<Vec<_>>>()?;
    let items: Vec<(&MaskedRecord, _)> = records.iter().zip(masked).collect();
    let c = &ctx.config;
    let run_one = |sampler: &mut dyn Sampler, (r, m): &(&MaskedRecord, _)| {
        fix_masked(&r.id, &r.src, m, sampler, &c.fix.k, c.fix.mode, c.seed).map(|o| o.sample)
    };
    let samples = match (&c.fix.external_cmd, &a.lm) {
        (Some(cmd), _) => {
            let timeout = Duration::from_secs_f64(c.fix.timeout_secs);
            let sampler = Mutex::new(ExternalSampler::spawn(cmd, timeout)?);
            ctx.map(&items, |item| {
                let mut guard = sampler.lock().map_err(|_| QeError::SamplerTerminated(": worker panicked".into()))?;
                run_one(&mut *guard, item)
            })?
        }
        (None, Some(lm_path)) => {
            let lm = NgramLm::load(lm_path)?;
            ctx.map(&items, |item| run_one(&mut &lm, item))?
        }
        (None, None) => return Err(QeError::InvalidValue("fix needs --lm or --external-cmd".into())),
    };
    write_atomic(&a.output, |w| write_qe_jsonl(&samples, w))?;
    ctx.log_config("fix", &a.output)?;
    log.emit("done", json!({ "records": samples.len() }));
    Ok(())
}

fn load_examples(
    ctx: &Ctx,
    path: &Path,
    encoder: &qe_core::toy_qe::EncoderConfig,
) -> Result<Vec<qe_core::toy_qe::Example>> {
    let samples = read_qe_jsonl(path)?;
    if samples.is_empty() {
        return Err(QeError::validation(path.display().to_string(), "no records"));
    }
    ctx.map(&samples, |s| prepare_one(s, encoder))
}

fn train_qe(ctx: &Ctx, a: TrainQeArgs) -> Result<()> {
    let log = ctx.log("train-qe");
    let c = &ctx.config;
    let (encoder, mut params) = match &a.init {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let mut params = ck.params;
            params.dropout = c.model.dropout;
            (ck.encoder, params)
        }
        None => (c.encoder.clone(), ModelParams::new(c.encoder.dim, c.model.sigma, c.model.dropout)?),
    };
    let valid = load_examples(ctx, &a.valid, &encoder)?;
    let mut normalization = None;
    let mut history: Vec<(String, Vec<EvalRecord>)> = Vec::new();
    for (stage, path) in [("pretrain", &a.pretrain_data), ("finetune", &a.finetune_data)] {
        let Some(path) = path else { continue };
        let data = load_examples(ctx, path, &encoder)?;
        let outcome = train(&data, &valid, &c.train, params)?;
        log.emit(
            "stage",
            json!({
                "phase": stage,
                "records": data.len(),
                "evaluations": outcome.history.len(),
                "best_update": outcome.best_update,
            }),
        );
        params = outcome.params;
        normalization = outcome.normalization;
        history.push((stage.to_string(), outcome.history));
    }
    let ck = Checkpoint::new(encoder, params, normalization);
    write_text(&a.output, &(ck.to_json()? + "\n"))?;
    if let Some(h) = &a.history {
        let doc: serde_json::Map<String, serde_json::Value> =
            history.into_iter().map(|(k, v)| Ok((k, serde_json::to_value(v)?))).collect::<Result<_>>()?;
        write_text(h, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    }
    ctx.log_config("train-qe", &a.output)?;
    log.emit("done", json!({ "valid": valid.len() }));
    Ok(())
}

fn predict(ctx: &Ctx, a: PredictArgs) -> Result<()> {
    let log = ctx.log("predict");
    let ck = Checkpoint::load(&a.checkpoint)?;
    let samples = read_qe_jsonl(&a.input)?;
    let preds = ctx.map(&samples, |s| {
        let h = qe_core::toy_qe::encode(s, &ck.encoder)?;
        Ok(predict_example(&h, &s.id, &ck.params))
    })?;
    write_atomic(&a.output, |w| write_predictions(&preds, w))?;
    ctx.log_config("predict", &a.output)?;
    log.emit("done", json!({ "records": preds.len() }));
    Ok(())
}

fn ensemble(ctx: &Ctx, a: EnsembleArgs) -> Result<()> {
    let log = ctx.log("ensemble");
    let systems = a.inputs.iter().map(read_predictions).collect::<Result<Vec<_>>>()?;
    let combined = ensemble_predictions(&systems)?;
    write_atomic(&a.output, |w| write_predictions(&combined, w))?;
    ctx.log_config("ensemble", &a.output)?;
    log.emit("done", json!({ "systems": systems.len(), "records": combined.len() }));
    Ok(())
}

/// Predictions reordered to follow `samples`, checked against token counts.
fn aligned_predictions(samples: &[QeSample], path: &Path) -> Result<Vec<Prediction>> {
    let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let rows = read_predictions(path)?.into_iter().map(|p| (p.id.clone(), p)).collect();
    let preds = align_by_id(&ids, rows, &path.display().to_string())?;
    for (p, s) in preds.iter().zip(samples) {
        p.validate(s.translation.len())?;
    }
    Ok(preds)
}

fn spans(ctx: &Ctx, a: SpansArgs) -> Result<()> {
    let log = ctx.log("spans");
    let samples = read_qe_jsonl(&a.data)?;
    let preds = aligned_predictions(&samples, &a.predictions)?;
    let s = &ctx.config.spans;
    let mut span_rows = Vec::with_capacity(samples.len());
    let mut tag_rows = Vec::with_capacity(samples.len());
    for (p, sample) in preds.iter().zip(&samples) {
        let fine = fine_tag(&p.ok_probs, s.e_minor, s.e_major)?;
        span_rows.push((sample.id.clone(), assemble_spans(&fine, &sample.translation, s.merge)?));
        tag_rows.push((sample.id.clone(), tag_by_threshold(&p.ok_probs, s.e_bad)));
    }
    write_atomic(&a.output, |w| write_spans(w, &span_rows))?;
    if let Some(t) = &a.tags_output {
        write_atomic(t, |w| write_tags(w, &tag_rows))?;
    }
    ctx.log_config("spans", &a.output)?;
    log.emit("done", json!({ "records": span_rows.len() }));
    Ok(())
}

fn load_thresholds(path: &PathBuf) -> Result<TunedThresholds> {
    let text = std::fs::read_to_string(path).map_err(|e| QeError::io(path, e))?;
    let t: TunedThresholds = serde_json::from_str(&text).map_err(|e| QeError::Parse {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    t.thresholds.validate()?;
    Ok(t)
}

fn gold_parts(samples: &[QeSample]) -> Result<(Vec<WordTags>, Vec<Vec<qe_core::corpus::ErrorSpan>>)> {
    let mut tags = Vec::with_capacity(samples.len());
    let mut spans = Vec::with_capacity(samples.len());
    for s in samples {
        let (Some(t), Some(sp)) = (&s.tags, &s.spans) else {
            return Err(QeError::validation(&s.id, "gold record needs tags and spans"));
        };
        tags.push(t.clone());
        spans.push(sp.clone());
    }
    Ok((tags, spans))
}

fn tune(ctx: &Ctx, a: TuneArgs) -> Result<()> {
    let log = ctx.log("tune");
    let samples = read_qe_jsonl(&a.data)?;
    let preds = aligned_predictions(&samples, &a.predictions)?;
    let (gold_tags, gold_spans) = gold_parts(&samples)?;
    let probs: Vec<Vec<f64>> = preds.into_iter().map(|p| p.ok_probs).collect();
    let texts: Vec<_> = samples.iter().map(|s| s.translation.clone()).collect();
    let dev = DevSet { ok_probs: &probs, translations: &texts, gold_tags: &gold_tags, gold_spans: &gold_spans };
    let c = &ctx.config;
    let tuned = grid_search_thresholds(&dev, c.tune.step, c.spans.merge, c.tune.mode)?;
    write_text(&a.output, &(serde_json::to_string_pretty(&tuned)? + "\n"))?;
    ctx.log_config("tune", &a.output)?;
    log.emit("done", json!({ "records": samples.len(), "mcc": tuned.mcc, "span_f1": tuned.span_f1 }));
    Ok(())
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let log = ctx.log("eval");
    let samples = read_qe_jsonl(&a.gold)?;
    let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let what = a.predictions.display().to_string();
    let report = match a.task {
        TaskArg::Sentence => {
            let preds = aligned_predictions(&samples, &a.predictions)?;
            let gold = samples
                .iter()
                .map(|s| s.mqm_score.ok_or_else(|| QeError::validation(&s.id, "gold record has no score")))
                .collect::<Result<Vec<_>>>()?;
            let pred: Vec<f64> = preds.iter().map(|p| p.score).collect();
            let rho = spearman(&pred, &gold)?;
            json!({ "task": "sentence", "metric": "spearman", "value": rho, "counts": { "records": samples.len() } })
        }
        TaskArg::Word => {
            let (gold, _) = gold_tag_only(&samples)?;
            let pred = align_by_id(&ids, read_tags(&a.predictions)?, &what)?;
            let cm = ConfusionCounts::from_tags(&pred, &gold)?;
            json!({
                "task": "word",
                "metric": "mcc",
                "value": cm.mcc(),
                "counts": { "records": samples.len(), "tp": cm.tp, "tn": cm.tn, "fp": cm.fp, "fn": cm.fn_ },
            })
        }
        TaskArg::Span => {
            let (_, gold) = gold_parts(&samples)?;
            let pred = align_by_id(&ids, read_spans(&a.predictions)?, &what)?;
            let mode = ctx.config.tune.mode;
            let s = span_scores(&pred, &gold, mode)?;
            json!({
                "task": "span",
                "metric": "f1",
                "mode": mode,
                "value": s.f1,
                "precision": s.precision,
                "recall": s.recall,
                "counts": { "records": samples.len(), "pred_chars": s.pred_chars, "gold_chars": s.gold_chars, "credit": s.credit },
            })
        }
    };
    let text = serde_json::to_string_pretty(&report)? + "\n";
    print!("{text}");
    if let Some(out) = &a.output {
        write_text(out, &text)?;
        ctx.log_config("eval", out)?;
    }
    log.emit("done", json!({ "records": samples.len() }));
    Ok(())
}

fn gold_tag_only(samples: &[QeSample]) -> Result<(Vec<WordTags>, ())> {
    let tags = samples
        .iter()
        .map(|s| s.tags.clone().ok_or_else(|| QeError::validation(&s.id, "gold record has no tags")))
        .collect::<Result<Vec<_>>>()?;
    Ok((tags, ()))
}
