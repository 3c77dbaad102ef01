use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use vocabrl::corpus::{make_synthetic_task, write_features, Example, Source, Vocabulary};
use vocabrl::decode::{beam_nbest, benchmark_csv, decode, decode_benchmark, predicted_mask, BenchSetting, LengthNorm, Search};
use vocabrl::generator::{Generator, GeneratorConfig, SourceKind};
use vocabrl::metrics::{bootstrap_bleu, corpus_bleu, gleu, percentile_histogram};
use vocabrl::predictor::{
    build_masks, recall_curve, train_predictor, MaskCache, MaskMode, PredictorConfig, PredictorInput, PredictorTrainConfig,
    VocabPredictor,
};
use vocabrl::training::{
    curves_csv, pretrain_then_rl, run_phase, sweep_csv, training_checkpoint, EpochRecord, Masks, Phase, TrainConfig, TrainData,
};
use vocabrl::Scalar;

use crate::config::{Head, Precision, RunConfig, SourceFormat};
use crate::error::{io_error, CliError, CliResult};
use crate::run::{Run, Vocabs, PREDICTOR_CKPT, RL_CKPT, SRC_VOCAB, TGT_VOCAB, XENT_CKPT};

#[derive(Debug)]
pub enum Job {
    MakeSynthetic,
    BuildVocab,
    TrainPredictor,
    EvalPredictor { test: bool },
    TrainXent,
    TrainRl { init: Option<PathBuf>, from_scratch: bool },
    Translate { input: PathBuf, output: Option<PathBuf>, ckpt: Option<PathBuf> },
    Evaluate { hyp: PathBuf, reference: PathBuf, out: Option<PathBuf>, bootstrap: Option<usize> },
    AnalyzePercentiles { input: PathBuf, out: Option<PathBuf> },
    Benchmark {
        input: Option<PathBuf>,
        limit: Option<usize>,
        ks: Option<Vec<usize>>,
        ckpt: Option<PathBuf>,
        small_ckpt: Option<PathBuf>,
        rl_epoch: bool,
    },
}

pub fn execute(cfg: RunConfig, job: Job) -> CliResult<()> {
    match cfg.precision {
        Precision::F32 => execute_as::<f32>(cfg, job),
        Precision::F64 => execute_as::<f64>(cfg, job),
    }
}

fn execute_as<T: Scalar + Send + Sync>(cfg: RunConfig, job: Job) -> CliResult<()> {
    match job {
        Job::MakeSynthetic => make_synthetic(&cfg),
        Job::BuildVocab => build_vocab(Run::open(cfg, "build-vocab")?),
        Job::TrainPredictor => train_predictor_cmd::<T>(Run::open(cfg, "train-predictor")?),
        Job::EvalPredictor { test } => eval_predictor::<T>(Run::open(cfg, "eval-predictor")?, test),
        Job::TrainXent => train_xent::<T>(Run::open(cfg, "train-xent")?),
        Job::TrainRl { init, from_scratch } => train_rl::<T>(Run::open(cfg, "train-rl")?, init, from_scratch),
        Job::Translate { input, output, ckpt } => translate::<T>(Run::open(cfg, "translate")?, &input, output, ckpt),
        Job::Evaluate { hyp, reference, out, bootstrap } => evaluate(Run::open(cfg, "evaluate")?, &hyp, &reference, out, bootstrap),
        Job::AnalyzePercentiles { input, out } => analyze_percentiles(Run::open(cfg, "analyze-percentiles")?, &input, out),
        Job::Benchmark { input, limit, ks, ckpt, small_ckpt, rl_epoch } => {
            let run = Run::open(cfg, "benchmark")?;
            benchmark::<T>(run, input, limit, ks, ckpt, small_ckpt, rl_epoch)
        }
    }
}

fn make_synthetic(cfg: &RunConfig) -> CliResult<()> {
    let spec = cfg.synthetic_spec();
    let task = make_synthetic_task(&spec)?;
    let out = &cfg.synthetic.out;
    for (i, (name, text)) in [("train", &task.train), ("dev", &task.dev), ("test", &task.test)].into_iter().enumerate() {
        text.write(out, name)?;
        if spec.feature_dim > 0 {
            write_features(&out.join(format!("{name}.feat")), &task.features[i])?;
        }
    }
    eprintln!(
        "wrote {} train, {} dev, {} test pairs to {}",
        task.train.len(),
        task.dev.len(),
        task.test.len(),
        out.display()
    );
    Ok(())
}

fn build_vocab(mut run: Run) -> CliResult<()> {
    let d = run.cfg.data.clone();
    let mut tgt = Vocabulary::from_corpus_file(&d.train_tgt, d.min_count)?;
    if d.target_vocab_size > tgt.len() {
        tgt.extend_with_distractors(d.target_vocab_size);
    }
    tgt.save(&run.path(TGT_VOCAB))?;
    let mut line = format!("target vocabulary: {} types", tgt.len());
    if d.source == SourceFormat::Tokens {
        let src = Vocabulary::from_corpus_file(&d.train_src, d.min_count)?;
        src.save(&run.path(SRC_VOCAB))?;
        let _ = write!(line, ", source vocabulary: {} types", src.len());
    }
    run.log(&line);
    Ok(())
}

fn predictor_config(cfg: &RunConfig, vocabs: &Vocabs, train: &[Example]) -> CliResult<PredictorConfig> {
    let width = vocabs.source_width(train)?;
    let input = match cfg.data.source {
        SourceFormat::Tokens => PredictorInput::Tokens { vocab: width },
        SourceFormat::Features => PredictorInput::Features { dim: width },
    };
    Ok(PredictorConfig { input, vocab: vocabs.tgt.len(), hidden: cfg.predictor.hidden, dropout: cfg.predictor.dropout })
}

fn train_predictor_cmd<T: Scalar>(mut run: Run) -> CliResult<()> {
    let vocabs = run.vocabs()?;
    let (train, dev) = run.train_dev(&vocabs)?;
    let p = run.cfg.predictor.clone();
    let mut model = VocabPredictor::<T>::new(predictor_config(&run.cfg, &vocabs, &train)?, run.cfg.seed);
    let tc = PredictorTrainConfig {
        batch_size: p.batch_size,
        lr: p.lr,
        epochs: p.epochs,
        smoothing: p.smoothing,
        select_k: p.select_k,
        seed: run.cfg.seed,
    };
    let mut csv = String::from("epoch,loss,dev_recall,seconds\n");
    train_predictor(&mut model, &train, &dev, &tc, |e| {
        let seconds = run.clock(e.seconds);
        let _ = writeln!(csv, "{},{:.6},{:.6},{:.4}", e.epoch, e.loss, e.dev_recall, seconds);
        run.log(&format!("epoch {} loss {:.4} dev recall@{} {:.4} ({:.1}s)", e.epoch, e.loss, p.select_k, e.dev_recall, e.seconds));
    })?;
    run.write(&run.path("logs/predictor.csv"), &csv)?;
    model.to_checkpoint().save(&run.path(PREDICTOR_CKPT))?;
    run.log(&format!("saved {}", run.path(PREDICTOR_CKPT).display()));
    Ok(())
}

fn load_predictor<T: Scalar>(run: &Run, vocabs: &Vocabs) -> CliResult<VocabPredictor<T>> {
    let ck = run.checkpoint(&run.path(PREDICTOR_CKPT))?;
    let model = VocabPredictor::<T>::from_checkpoint(&ck)?;
    if model.config.vocab != vocabs.tgt.len() {
        return Err(CliError::Data(format!(
            "predictor covers {} target types but the vocabulary has {}",
            model.config.vocab,
            vocabs.tgt.len()
        )));
    }
    Ok(model)
}

fn eval_predictor<T: Scalar>(mut run: Run, test: bool) -> CliResult<()> {
    let vocabs = run.vocabs()?;
    let d = run.cfg.data.clone();
    let (src, tgt, name) = if test { (d.test_src, d.test_tgt, "recall_test.csv") } else { (d.dev_src, d.dev_tgt, "recall.csv") };
    let examples = run.load_split(&vocabs, &src, &tgt)?;
    let model = load_predictor::<T>(&run, &vocabs)?;
    let ks = run.cfg.predictor.eval_ks.clone();
    let recalls = recall_curve(&model, &examples, &ks)?;
    let mut csv = String::from("K,recall\n");
    for (k, r) in ks.iter().zip(&recalls) {
        let _ = writeln!(csv, "{k},{r:.6}");
    }
    print!("{csv}");
    run.write(&run.path(name), &csv)
}

/// Gold-union and evaluation-mode masks for the training examples and
/// evaluation-mode masks for dev, all of size `k` (at most `|V|`).
fn training_masks<T: Scalar>(
    run: &mut Run,
    vocabs: &Vocabs,
    train: &[Example],
    dev: &[Example],
) -> CliResult<(Masks, MaskCache)> {
    let pred = load_predictor::<T>(run, vocabs)?;
    let k = run.cfg.train.k.min(vocabs.tgt.len());
    let masks = Masks { train: build_masks(&pred, train, k, MaskMode::Train)?, eval: build_masks(&pred, train, k, MaskMode::Eval)? };
    let dev_masks = build_masks(&pred, dev, k, MaskMode::Eval)?;
    run.log(&format!("small head: K = {k} of {}", vocabs.tgt.len()));
    Ok((masks, dev_masks))
}

fn check_compat(c: &GeneratorConfig, vocabs: &Vocabs, width: usize) -> CliResult<()> {
    let source_width = match c.source {
        SourceKind::Tokens { vocab } => vocab,
        SourceKind::Features { dim } => dim,
    };
    if c.vocab != vocabs.tgt.len() || source_width != width {
        return Err(CliError::Data(format!(
            "checkpoint expects source width {source_width} and {} target types; the run has {width} and {}",
            c.vocab,
            vocabs.tgt.len()
        )));
    }
    Ok(())
}

fn load_generator<T: Scalar>(run: &Run, path: &Path, vocabs: &Vocabs, width: usize) -> CliResult<Generator<T>> {
    let model = Generator::<T>::from_checkpoint(&run.checkpoint(path)?)?;
    check_compat(&model.config, vocabs, width)?;
    Ok(model)
}

fn record_line(r: &EpochRecord) -> String {
    format!(
        "{} epoch {:.2} loss {:.4} dev BLEU {:.2} GLEU {:.4} lr {} ({:.1}s, peak {} bytes)",
        r.phase.name(),
        r.epoch,
        r.loss,
        r.dev_bleu,
        r.dev_gleu,
        r.lr,
        r.seconds,
        r.peak_bytes
    )
}

fn for_output(run: &Run, records: &[EpochRecord]) -> Vec<EpochRecord> {
    records.iter().map(|r| EpochRecord { seconds: run.clock(r.seconds), ..r.clone() }).collect()
}

fn save_trained(run: &mut Run, rel: &str, ck: vocabrl::checkpoint::Checkpoint) -> CliResult<()> {
    let mut ck = ck;
    ck.set_meta("head", format!("{:?}", run.cfg.train.head).to_lowercase());
    ck.set_meta("k", run.cfg.train.k);
    ck.save(&run.path(rel))?;
    run.log(&format!("saved {}", run.path(rel).display()));
    Ok(())
}

fn train_xent<T: Scalar>(mut run: Run) -> CliResult<()> {
    let vocabs = run.vocabs()?;
    let (train, dev) = run.train_dev(&vocabs)?;
    let gcfg = run.cfg.generator_config(vocabs.source_width(&train)?, vocabs.tgt.len())?;
    let masks = match run.cfg.train.head {
        Head::Small => Some(training_masks::<T>(&mut run, &vocabs, &train, &dev)?),
        Head::Full => None,
    };
    let data = TrainData { train: &train, dev: &dev, masks: masks.as_ref().map(|m| &m.0), dev_masks: masks.as_ref().map(|m| &m.1) };
    let tc = run.cfg.train_config();
    let mut model = Generator::<T>::new(gcfg, run.cfg.seed)?;
    let result = run_phase(&mut model, &data, &tc, Phase::Xent, tc.ce_epochs, &mut |r, _, _| {
        run.log(&record_line(r));
        Ok(())
    })?;
    run.log(&format!("best dev BLEU {:.2}", result.best_bleu));
    save_trained(&mut run, XENT_CKPT, training_checkpoint(&model, &result.trainer))?;
    let csv = curves_csv(&for_output(&run, &result.records));
    run.write(&run.path("curves.csv"), &csv)
}

fn train_rl<T: Scalar>(mut run: Run, init: Option<PathBuf>, from_scratch: bool) -> CliResult<()> {
    let vocabs = run.vocabs()?;
    let (train, dev) = run.train_dev(&vocabs)?;
    let width = vocabs.source_width(&train)?;
    let gcfg = run.cfg.generator_config(width, vocabs.tgt.len())?;
    let masks = match run.cfg.train.head {
        Head::Small => Some(training_masks::<T>(&mut run, &vocabs, &train, &dev)?),
        Head::Full => None,
    };
    let data = TrainData { train: &train, dev: &dev, masks: masks.as_ref().map(|m| &m.0), dev_masks: masks.as_ref().map(|m| &m.1) };
    let tc = run.cfg.train_config();
    let sweep = run.cfg.train.pretrain_epochs.clone();

    if !sweep.is_empty() {
        let mut curves = Vec::new();
        for &n in &sweep {
            run.log(&format!("from scratch with {n} pre-training epochs"));
            let mut model = Generator::<T>::new(gcfg, run.cfg.seed)?;
            let c = TrainConfig { ce_epochs: n, ..tc.clone() };
            let records = pretrain_then_rl(&mut model, &data, &c, &mut |r, _, _| {
                run.log(&record_line(r));
                Ok(())
            })?;
            save_trained(&mut run, &format!("checkpoints/rl_pre{n}.ckpt"), model.to_checkpoint())?;
            if sweep.len() == 1 {
                save_trained(&mut run, RL_CKPT, model.to_checkpoint())?;
            }
            curves.push((n, for_output(&run, &records)));
        }
        return run.write(&run.path("curves.csv"), &sweep_csv(&curves));
    }

    let mut model = if from_scratch {
        run.log("starting from a random initialization");
        Generator::<T>::new(gcfg, run.cfg.seed)?
    } else {
        let path = init.unwrap_or_else(|| run.path(XENT_CKPT));
        if !path.exists() {
            return Err(CliError::Data(format!(
                "initial checkpoint {} not found; train-xent first or pass --from-scratch",
                path.display()
            )));
        }
        run.log(&format!("starting from {}", path.display()));
        load_generator::<T>(&run, &path, &vocabs, width)?
    };
    let result = run_phase(&mut model, &data, &tc, Phase::Rl, tc.rl_epochs, &mut |r, _, _| {
        run.log(&record_line(r));
        Ok(())
    })?;
    run.log(&format!("best dev BLEU {:.2}", result.best_bleu));
    save_trained(&mut run, RL_CKPT, training_checkpoint(&model, &result.trainer))?;
    let csv = curves_csv(&for_output(&run, &result.records));
    run.write(&run.path("curves.csv"), &csv)
}

fn search_of(cfg: &RunConfig) -> Search {
    let d = &cfg.decode;
    if d.beam == 1 && !d.nbest {
        return Search::Greedy;
    }
    Search::Beam { width: d.beam, norm: length_norm(d.alpha) }
}

fn length_norm(alpha: f64) -> LengthNorm {
    if alpha == 0.0 {
        LengthNorm::None
    } else {
        LengthNorm::Power(alpha)
    }
}

/// Output line(s) for one source sentence.
fn translate_one<T: Scalar>(
    cfg: &RunConfig,
    gen: &Generator<T>,
    pred: Option<&VocabPredictor<T>>,
    tgt: &Vocabulary,
    index: usize,
    source: &Source,
) -> CliResult<String> {
    let d = &cfg.decode;
    if source.is_empty() {
        return Ok(if d.nbest { String::new() } else { "\n".into() });
    }
    let mask = pred.map(|p| predicted_mask(p, source, d.k)).transpose()?;
    if d.nbest {
        let hyps = beam_nbest(gen, source, mask.as_ref(), d.beam, d.max_len, length_norm(d.alpha))?;
        let mut out = String::new();
        for h in hyps {
            let _ = writeln!(out, "{index} ||| {} ||| {:.6}", tgt.decode(&h.tokens), h.score);
        }
        return Ok(out);
    }
    let tokens = decode(gen, source, mask.as_ref(), search_of(cfg), d.max_len)?;
    Ok(format!("{}\n", tgt.decode(&tokens)))
}

fn translate<T: Scalar + Send + Sync>(mut run: Run, input: &Path, output: Option<PathBuf>, ckpt: Option<PathBuf>) -> CliResult<()> {
    let vocabs = run.vocabs()?;
    let sources = run.read_sources(&vocabs, input)?;
    let path = run.generator_path(ckpt.as_deref())?;
    let width = match &vocabs.src {
        Some(v) => v.len(),
        None => sources.first().and_then(|s| s.features()).map_or(0, <[f64]>::len),
    };
    let gen = load_generator::<T>(&run, &path, &vocabs, width)?;
    let pred = match run.cfg.decode.head {
        Head::Small => Some(load_predictor::<T>(&run, &vocabs)?),
        Head::Full => None,
    };
    let threads = run.cfg.effective_threads().min(sources.len()).max(1);
    run.log(&format!("decoding {} sources with {} on {threads} thread(s)", sources.len(), path.display()));
    let cfg = &run.cfg;
    let chunk = sources.len().div_ceil(threads).max(1);
    let parts: Vec<CliResult<String>> = std::thread::scope(|s| {
        let handles: Vec<_> = sources
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let (gen, pred, tgt) = (&gen, pred.as_ref(), &vocabs.tgt);
                s.spawn(move || {
                    let mut out = String::new();
                    for (i, src) in part.iter().enumerate() {
                        out.push_str(&translate_one(cfg, gen, pred, tgt, c * chunk + i, src)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("decoding thread panicked")).collect()
    });
    let mut text = String::new();
    for p in parts {
        text.push_str(&p?);
    }
    let out = output.unwrap_or_else(|| run.path("hyp.txt"));
    run.write(&out, &text)
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn evaluate(mut run: Run, hyp: &Path, reference: &Path, out: Option<PathBuf>, bootstrap: Option<usize>) -> CliResult<()> {
    let hyps = read_lines(hyp)?;
    let refs = read_lines(reference)?;
    if hyps.len() != refs.len() {
        return Err(CliError::Data(format!(
            "{} has {} lines but {} has {}",
            hyp.display(),
            hyps.len(),
            reference.display(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(CliError::Data(format!("{} is empty", hyp.display())));
    }
    let h: Vec<Vec<&str>> = hyps.iter().map(|l| l.split_whitespace().collect()).collect();
    let r: Vec<Vec<&str>> = refs.iter().map(|l| l.split_whitespace().collect()).collect();
    let bleu = corpus_bleu(&h, &r)?;
    let mean_gleu = h.iter().zip(&r).map(|(a, b)| gleu(a, b)).sum::<f64>() / h.len() as f64;
    let mut csv = String::from("metric,value\n");
    let _ = writeln!(csv, "bleu,{bleu:.2}");
    let _ = writeln!(csv, "gleu,{mean_gleu:.6}");
    let _ = writeln!(csv, "sentences,{}", h.len());
    let _ = writeln!(csv, "hyp_tokens,{}", h.iter().map(Vec::len).sum::<usize>());
    let _ = writeln!(csv, "ref_tokens,{}", r.iter().map(Vec::len).sum::<usize>());
    if let Some(samples) = bootstrap {
        let b = bootstrap_bleu(&h, &r, samples, run.cfg.seed)?;
        let _ = writeln!(csv, "bleu_bootstrap_mean,{:.2}", b.mean);
        let _ = writeln!(csv, "bleu_bootstrap_std,{:.2}", b.std);
        let _ = writeln!(csv, "bleu_lower_95,{:.2}", b.lower);
        let _ = writeln!(csv, "bleu_upper_95,{:.2}", b.upper);
    }
    print!("{csv}");
    let out = out.unwrap_or_else(|| run.path("evaluate.csv"));
    run.write(&out, &csv)
}

fn analyze_percentiles(mut run: Run, input: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let vocabs = run.vocabs()?;
    let tgt = &vocabs.tgt;
    let lines = read_lines(input)?;
    let ids = lines.iter().flat_map(|l| l.split_whitespace().map(|t| tgt.id(t)));
    let hist = percentile_histogram(ids, tgt.counts());
    run.log(&format!("{} output tokens", hist.total));
    let csv = hist.to_csv();
    print!("{csv}");
    let out = out.unwrap_or_else(|| run.path("percentiles.csv"));
    run.write(&out, &csv)
}

fn benchmark<T: Scalar>(
    mut run: Run,
    input: Option<PathBuf>,
    limit: Option<usize>,
    ks: Option<Vec<usize>>,
    ckpt: Option<PathBuf>,
    small_ckpt: Option<PathBuf>,
    rl_epoch: bool,
) -> CliResult<()> {
    let vocabs = run.vocabs()?;
    let input = input.unwrap_or_else(|| run.cfg.data.dev_src.clone());
    let mut sources: Vec<Source> = run.read_sources(&vocabs, &input)?.into_iter().filter(|s| !s.is_empty()).collect();
    if let Some(n) = limit {
        sources.truncate(n);
    }
    let width = match &vocabs.src {
        Some(v) => v.len(),
        None => sources.first().and_then(|s| s.features()).map_or(0, <[f64]>::len),
    };
    let full = load_generator::<T>(&run, &run.generator_path(ckpt.as_deref())?, &vocabs, width)?;
    let small = small_ckpt.map(|p| load_generator::<T>(&run, &p, &vocabs, width)).transpose()?;
    let small_gen = small.as_ref().unwrap_or(&full);
    let pred = load_predictor::<T>(&run, &vocabs)?;
    let ks = ks.unwrap_or_else(|| vec![run.cfg.decode.k]);
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::Config("--ks needs positive values".into()));
    }
    let mut settings = vec![BenchSetting { name: "full".into(), generator: &full, predictor: None }];
    for &k in &ks {
        settings.push(BenchSetting { name: format!("small-{k}"), generator: small_gen, predictor: Some((&pred, k)) });
    }
    run.log(&format!("timing {} sentences", sources.len()));
    let mut rows = decode_benchmark(&settings, &sources, search_of(&run.cfg), run.cfg.decode.max_len)?;
    if run.cfg.deterministic {
        for r in &mut rows {
            (r.mean_ms, r.p50_ms, r.p95_ms, r.ratio) = (0.0, 0.0, 0.0, 0.0);
        }
    }
    run.write(&run.path("benchmark.csv"), &benchmark_csv(&rows))?;

    if rl_epoch {
        // The small-head RL epoch uses the largest benchmarked K.
        run.cfg.train.k = ks.iter().copied().max().unwrap_or(run.cfg.train.k);
        let (train, dev) = run.train_dev(&vocabs)?;
        let (masks, dev_masks) = training_masks::<T>(&mut run, &vocabs, &train, &dev)?;
        let tc = TrainConfig { evals_per_epoch: 1, ..run.cfg.train_config() };
        let mut rows = Vec::new();
        for (head, gen) in [(Head::Full, &full), (Head::Small, small_gen)] {
            let data = match head {
                Head::Full => TrainData { train: &train, dev: &dev, masks: None, dev_masks: None },
                Head::Small => TrainData { train: &train, dev: &dev, masks: Some(&masks), dev_masks: Some(&dev_masks) },
            };
            let mut model = gen.clone();
            let res = run_phase(&mut model, &data, &tc, Phase::Rl, 1, &mut |_, _, _| Ok(()))?;
            let seconds: f64 = res.records.iter().map(|r| r.seconds).sum();
            let peak = res.records.iter().map(|r| r.peak_bytes).max().unwrap_or(0);
            run.log(&format!("{head:?} head: RL epoch {seconds:.2}s, peak {peak} bytes"));
            rows.push((head, seconds, peak));
        }
        let (t0, m0) = (rows[0].1, rows[0].2 as f64);
        let v = vocabs.tgt.len();
        let mut csv = String::from("head,vocab,K,seconds,peak_bytes,time_ratio,memory_ratio\n");
        for (head, seconds, peak) in rows {
            let k = if head == Head::Full { v } else { run.cfg.train.k.min(v) };
            let name = if head == Head::Full { "full" } else { "small" };
            let _ = writeln!(
                csv,
                "{name},{v},{k},{:.4},{peak},{:.4},{:.4}",
                run.clock(seconds),
                run.clock(seconds / t0),
                peak as f64 / m0
            );
        }
        run.write(&run.path("train_benchmark.csv"), &csv)?;
    }
    Ok(())
}
