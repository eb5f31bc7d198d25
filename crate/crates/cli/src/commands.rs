use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use ta_seq2seq::checkpoint::{Checkpoint, TopicSource};
use ta_seq2seq::config::RunConfig;
use ta_seq2seq::corpus::{load_documents, load_pairs, tokenize, CorpusStats, TokenizedPair, Vocabulary};
use ta_seq2seq::eval::{distinct_n, fleiss_kappa, AnnotationSet, EvalReport, Perplexity};
use ta_seq2seq::lda::{gibbs_train, LdaModel};
use ta_seq2seq::parallel::map_ordered;
use ta_seq2seq::pipeline::{build_vocabularies, encode_examples, model_config, TopicResources, Vocabularies};
use ta_seq2seq::seq2seq::{beam_search, greedy_decode, BeamConfig, ModelParams};
use ta_seq2seq::training::{self, TrainError, TrainObserver, TrainState, ValidationRecord};

use crate::error::CliError;
use crate::{ChatArgs, EvalArgs, GenerateArgs, LdaTopicsArgs, LdaTrainArgs, TrainArgs};

const MESSAGE_VOCAB: &str = "message.vocab";
const OUTPUT_VOCAB: &str = "output.vocab";
const TOPICS_FILE: &str = "topics.tsv";
const LDA_FILE: &str = "lda.model";
const TRAIN_LOG: &str = "train.log";
const LOSS_TRACE: &str = "loss_trace.tsv";
const BEST: &str = "best.ckpt";
const LAST: &str = "last.ckpt";

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("{key} is not set (pass it as a flag or in the config)")))
}

fn lda_path(cfg: &RunConfig) -> PathBuf {
    cfg.lda_model.clone().unwrap_or_else(|| cfg.work_dir.join(LDA_FILE))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::data(dir.display(), e))?;
    }
    fs::write(path, text).map_err(|e| CliError::data(path.display(), e))
}

fn load_checked_pairs(path: &Path, cfg: &RunConfig) -> Result<Vec<TokenizedPair>, CliError> {
    let pairs = load_pairs(path, cfg.max_len, cfg.max_dup)?;
    if pairs.is_empty() {
        return Err(CliError::Data(format!("{}: no pairs left after filtering", path.display())));
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// lda-train / lda-topics

pub fn lda_train(cfg: &RunConfig, a: LdaTrainArgs) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    let set = |cfg: &mut RunConfig, k: &str, v: Option<String>| -> Result<(), CliError> {
        match v {
            Some(v) => cfg
                .set(k, &v)
                .map_err(|e| CliError::Usage(format!("--{}: {e}", k.trim_start_matches("lda_")))),
            None => Ok(()),
        }
    };
    set(&mut cfg, "lda_topics", a.topics.map(|v| v.to_string()))?;
    set(&mut cfg, "lda_alpha", a.alpha)?;
    set(&mut cfg, "lda_beta", a.beta.map(|v| v.to_string()))?;
    set(&mut cfg, "lda_gamma", a.gamma.map(|v| v.to_string()))?;
    set(&mut cfg, "lda_iters", a.iters.map(|v| v.to_string()))?;
    cfg.validate()?;
    let docs_path = a.docs.or(cfg.lda_docs.clone());
    let docs_path = required(&docs_path, "--docs / lda_docs")?;
    let out = a.out.unwrap_or_else(|| lda_path(&cfg));
    let docs = load_documents(docs_path)?;
    let hyper = cfg.lda_hyperparams();
    log::info!("training Twitter LDA: {} docs, {} topics, {} sweeps", docs.len(), hyper.topics, hyper.iterations);
    let model = gibbs_train(&docs, hyper)?;
    write_file(&out, &model.to_text())?;
    println!("wrote {} ({} topics, {} words)", out.display(), model.topics(), model.vocabulary().len());
    Ok(())
}

pub fn lda_topics(cfg: &RunConfig, a: LdaTopicsArgs) -> Result<(), CliError> {
    let path = a.model.unwrap_or_else(|| lda_path(cfg));
    let model = LdaModel::load(&path)?;
    let stop = model.stoplist(a.stoplist_size.unwrap_or(cfg.stoplist_size));
    let set = model.topic_words(a.topic, a.n.unwrap_or(cfg.topic_words), &stop)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for w in &set.words {
        let id = model.word_id(w).expect("topic word in LDA vocabulary");
        writeln!(out, "{w}\t{}", model.topic_word_count(id, a.topic)).map_err(|e| CliError::data("stdout", e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// prepare

pub fn prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let train_path = required(&cfg.train_file, "train_file")?;
    let pairs = load_checked_pairs(train_path, cfg)?;
    let lda = LdaModel::load(&lda_path(cfg))?;
    let vocabs = build_vocabularies(
        &pairs,
        cfg.message_vocab,
        cfg.response_vocab,
        &lda,
        cfg.topic_words,
        cfg.stoplist_size,
    )?;
    let topics = TopicResources::new(lda, cfg.topic_words, cfg.stoplist_size, &vocabs.output)?;
    let save = |v: &Vocabulary, name: &str| -> Result<(), CliError> {
        fs::create_dir_all(&cfg.work_dir).map_err(|e| CliError::data(cfg.work_dir.display(), e))?;
        v.save(&cfg.work_dir.join(name)).map_err(CliError::from)
    };
    save(&vocabs.message, MESSAGE_VOCAB)?;
    save(&vocabs.output, OUTPUT_VOCAB)?;
    let mut listing = String::new();
    for z in 0..topics.table.topics() {
        listing.push_str(&format!("{z}\t{}\n", topics.table.entry(z).words.join(" ")));
    }
    write_file(&cfg.work_dir.join(TOPICS_FILE), &listing)?;
    let stats = CorpusStats::compute(&pairs, &vocabs.message, &vocabs.output)?;
    println!("pairs\t{}", stats.pair_count);
    println!("message_vocab\t{}", vocabs.message.len());
    println!("output_vocab\t{}", vocabs.output.len());
    println!("message_coverage\t{:.4}", stats.message_coverage);
    println!("response_coverage\t{:.4}", stats.response_coverage);
    println!("topic_capacity\t{}", topics.table.capacity());
    println!("fallback_topic\t{}", topics.table.fallback());
    Ok(())
}

fn load_vocabularies(cfg: &RunConfig) -> Result<Vocabularies, CliError> {
    let load = |name: &str| {
        let p = cfg.work_dir.join(name);
        if !p.exists() {
            return Err(CliError::Data(format!("{} is missing; run `prepare` first", p.display())));
        }
        Vocabulary::load(&p).map_err(CliError::from)
    };
    Ok(Vocabularies {
        message: load(MESSAGE_VOCAB)?,
        output: load(OUTPUT_VOCAB)?,
    })
}

// ---------------------------------------------------------------------------
// train

struct CheckpointWriter<'a> {
    dir: PathBuf,
    base: Checkpoint,
    log: &'a mut fs::File,
}

impl CheckpointWriter<'_> {
    fn snapshot(&self, model: &ModelParams, state: &TrainState) -> Checkpoint {
        let mut c = self.base.clone();
        c.model = model.clone();
        c.train_state = Some(state.clone());
        c
    }

    fn save(&self, c: &Checkpoint, name: &str) -> Result<(), TrainError> {
        c.save(&self.dir.join(name))
            .map_err(|e| TrainError::Observer(e.to_string()))
    }
}

impl TrainObserver for CheckpointWriter<'_> {
    fn on_validation(&mut self, model: &ModelParams, state: &TrainState) -> Result<(), TrainError> {
        let rec: &ValidationRecord = state.history.last().expect("record pushed");
        writeln!(self.log, "{}", rec.log_line()).map_err(|e| TrainError::Observer(e.to_string()))?;
        log::info!(
            "step {} epoch {} lr {} loss {:.4} valid ppl {:.3} (per token {:.3}){}",
            rec.step,
            rec.epoch,
            rec.learning_rate,
            rec.train_loss,
            rec.ppl.per_response,
            rec.ppl.per_token,
            if rec.best { " best" } else { "" }
        );
        let c = self.snapshot(model, state);
        self.save(&c, &format!("checkpoints/pass-{:04}.ckpt", state.history.len()))?;
        if rec.best {
            self.save(&c, BEST)?;
        }
        Ok(())
    }
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<(), CliError> {
    if let Some(e) = a.epochs {
        cfg.max_epochs = e;
        cfg.validate()?;
    }
    let train_path = required(&cfg.train_file, "train_file")?;
    let pairs = load_checked_pairs(train_path, &cfg)?;
    let valid_pairs = match &cfg.valid_file {
        Some(p) => load_checked_pairs(p, &cfg)?,
        None => Vec::new(),
    };
    let vocabs = load_vocabularies(&cfg)?;
    let lda = LdaModel::load(&lda_path(&cfg))?;
    let topics = TopicResources::new(lda, cfg.topic_words, cfg.stoplist_size, &vocabs.output)?;
    let train_set = encode_examples(&pairs, &vocabs, &topics);
    let valid_set = encode_examples(&valid_pairs, &vocabs, &topics);
    let tcfg = cfg.train_config();

    let (mut model, mut state) = match &a.resume {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            if c.message_vocab != vocabs.message || c.output_vocab != vocabs.output {
                return Err(CliError::Data(format!(
                    "{} was trained with different vocabularies",
                    p.display()
                )));
            }
            let state = c
                .train_state
                .ok_or_else(|| CliError::Data(format!("{} has no training state", p.display())))?;
            log::info!("resuming at epoch {} step {}", state.epoch, state.step);
            (c.model, state)
        }
        None => {
            let mc = model_config(&cfg, &vocabs, &topics);
            let model = ModelParams::init(mc, cfg.init_std, cfg.seed)?;
            let state = TrainState::new(&model, &tcfg);
            (model, state)
        }
    };

    fs::create_dir_all(cfg.work_dir.join("checkpoints")).map_err(|e| CliError::data(cfg.work_dir.display(), e))?;
    let log_path = cfg.work_dir.join(TRAIN_LOG);
    let fresh_log = a.resume.is_none() || !log_path.exists();
    let mut log_file = fs::OpenOptions::new()
        .create(true)
        .append(!fresh_log)
        .write(true)
        .truncate(fresh_log)
        .open(&log_path)
        .map_err(|e| CliError::data(log_path.display(), e))?;
    if fresh_log {
        writeln!(log_file, "{}", ValidationRecord::LOG_HEADER).map_err(|e| CliError::data(log_path.display(), e))?;
    }
    let base = Checkpoint {
        model: model.clone(),
        message_vocab: vocabs.message.clone(),
        output_vocab: vocabs.output.clone(),
        topics: Some(TopicSource {
            lda: topics.lda.clone(),
            topic_words: cfg.topic_words,
            stoplist_size: cfg.stoplist_size,
        }),
        train_state: None,
        run_config: cfg.to_text(),
    };
    let mut writer = CheckpointWriter {
        dir: cfg.work_dir.clone(),
        base,
        log: &mut log_file,
    };
    log::info!(
        "training {} on {} pairs ({} validation), {} parameters",
        cfg.variant,
        train_set.len(),
        valid_set.len(),
        model.store.num_scalars()
    );
    training::train(&mut model, &mut state, &tcfg, &train_set, &valid_set, &mut writer)?;
    let last = writer.snapshot(&model, &state);
    writer.save(&last, LAST)?;
    if state.best.is_none() {
        // No validation set: the final parameters are the best we have.
        writer.save(&last, BEST)?;
    }
    let trace: String = state
        .loss_trace
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{}\t{l}\n", i + 1))
        .collect();
    write_file(&cfg.work_dir.join(LOSS_TRACE), &trace)?;
    println!(
        "trained {} steps over {} epochs{}; checkpoints in {}",
        state.step,
        state.epoch,
        if state.halted { " (stopping rule fired)" } else { "" },
        cfg.work_dir.display()
    );
    if let Some(b) = state.best_record() {
        println!("best validation perplexity {:.4} at step {}", b.ppl.per_response, b.step);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Generation

/// A checkpoint ready for decoding.
struct Generator {
    ckpt: Checkpoint,
    topics: TopicResources,
}

struct Reply {
    topic: usize,
    fallback: bool,
    topic_words: Vec<String>,
    response: Vec<String>,
}

impl Generator {
    fn load(path: &Path) -> Result<Self, CliError> {
        let ckpt = Checkpoint::load(path)?;
        let src = ckpt
            .topics
            .clone()
            .ok_or_else(|| CliError::Data(format!("{} carries no topic model", path.display())))?;
        let topics = TopicResources::new(src.lda, src.topic_words, src.stoplist_size, &ckpt.output_vocab)?;
        Ok(Self { ckpt, topics })
    }

    fn reply(&self, message: &str, beam: usize, max_len: usize, greedy: bool) -> Result<Reply, CliError> {
        let tokens = tokenize(message);
        if tokens.is_empty() {
            return Err(CliError::Data("empty message".into()));
        }
        let ids = self.ckpt.message_vocab.encode(&tokens);
        let (assignment, ctx) = self.topics.lookup(&tokens);
        let m = &self.ckpt.model;
        let out = if greedy {
            greedy_decode(m, &ids, ctx, max_len)?
        } else {
            let hyps = beam_search(m, &ids, ctx, &BeamConfig::new(beam, max_len))?;
            hyps.first().map(|h| h.response().to_vec()).unwrap_or_default()
        };
        let entry = self.topics.table.entry(assignment.topic());
        Ok(Reply {
            topic: assignment.topic(),
            fallback: matches!(assignment, ta_seq2seq::topics::Assignment::Fallback(_)),
            topic_words: entry.words.clone(),
            response: self.ckpt.output_vocab.decode(&out),
        })
    }
}

fn message_field(line: &str) -> &str {
    line.split('\t').next().unwrap_or("")
}

pub fn generate(cfg: &RunConfig, a: GenerateArgs) -> Result<(), CliError> {
    let beam = a.beam.unwrap_or(cfg.beam);
    let max_len = a.max_len.unwrap_or(cfg.gen_max_len);
    if beam == 0 || max_len == 0 {
        return Err(CliError::Usage("--beam and --max-len must be at least 1".into()));
    }
    let gen = Generator::load(&a.checkpoint)?;
    let text = fs::read_to_string(&a.input).map_err(|e| CliError::data(a.input.display(), e))?;
    let lines: Vec<&str> = text.lines().map(message_field).collect();
    let replies = map_ordered(cfg.exec, &lines, |l| {
        if l.trim().is_empty() {
            return Ok(String::new());
        }
        gen.reply(l, beam, max_len, a.greedy).map(|r| r.response.join(" "))
    });
    let mut out = String::new();
    for (i, r) in replies.into_iter().enumerate() {
        let r = r.map_err(|e| match e {
            CliError::Data(m) => CliError::Data(format!("{} line {}: {m}", a.input.display(), i + 1)),
            other => other,
        })?;
        out.push_str(&r);
        out.push('\n');
    }
    match &a.output {
        Some(p) => write_file(p, &out),
        None => io::stdout().write_all(out.as_bytes()).map_err(|e| CliError::data("stdout", e)),
    }
}

pub fn chat(cfg: &RunConfig, a: ChatArgs) -> Result<(), CliError> {
    let beam = a.beam.unwrap_or(cfg.beam);
    let max_len = a.max_len.unwrap_or(cfg.gen_max_len);
    if beam == 0 || max_len == 0 {
        return Err(CliError::Usage("--beam and --max-len must be at least 1".into()));
    }
    let gen = Generator::load(&a.checkpoint)?;
    let mut transcript = match &a.transcript {
        Some(p) => Some(BufWriter::new(
            fs::File::create(p).map_err(|e| CliError::data(p.display(), e))?,
        )),
        None => None,
    };
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let io_err = |e: io::Error| CliError::data("chat", e);
    for line in stdin.lock().lines() {
        let line = line.map_err(io_err)?;
        let msg = line.trim();
        if msg == ":quit" {
            break;
        }
        if msg.is_empty() {
            continue;
        }
        match gen.reply(msg, beam, max_len, false) {
            Ok(r) => {
                writeln!(
                    out,
                    "topic {}{}: {}",
                    r.topic,
                    if r.fallback { " (fallback)" } else { "" },
                    r.topic_words.iter().take(10).cloned().collect::<Vec<_>>().join(" ")
                )
                .map_err(io_err)?;
                let response = r.response.join(" ");
                writeln!(out, "{response}").map_err(io_err)?;
                if let Some(t) = transcript.as_mut() {
                    writeln!(t, "> {msg}\n< {response}").map_err(io_err)?;
                }
            }
            Err(e) => writeln!(out, "could not decode: {e}").map_err(io_err)?,
        }
        out.flush().map_err(io_err)?;
    }
    if let Some(mut t) = transcript {
        t.flush().map_err(io_err)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

pub fn eval(cfg: &RunConfig, a: EvalArgs) -> Result<(), CliError> {
    let gen = Generator::load(&a.checkpoint)?;
    let test_path = a.test.clone().or(cfg.test_file.clone());
    let test_path = required(&test_path, "--test / test_file")?;
    let test_pairs = load_checked_pairs(test_path, cfg)?;
    let vocabs = Vocabularies {
        message: gen.ckpt.message_vocab.clone(),
        output: gen.ckpt.output_vocab.clone(),
    };
    let model = &gen.ckpt.model;
    let test = encode_examples(&test_pairs, &vocabs, &gen.topics);
    let ppl_t = Perplexity::compute(model, &test, cfg.exec)?;
    let ppl_d = match a.valid.clone().or(cfg.valid_file.clone()) {
        Some(p) => {
            let pairs = load_checked_pairs(&p, cfg)?;
            Some(Perplexity::compute(model, &encode_examples(&pairs, &vocabs, &gen.topics), cfg.exec)?)
        }
        None => None,
    };
    let responses: Vec<Vec<String>> = match &a.responses {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| CliError::data(p.display(), e))?
            .lines()
            .map(tokenize)
            .collect(),
        None => {
            let beam = a.beam.unwrap_or(cfg.beam);
            let msgs: Vec<String> = test_pairs.iter().map(|p| p.message.join(" ")).collect();
            map_ordered(cfg.exec, &msgs, |m| gen.reply(m, beam, cfg.gen_max_len, false).map(|r| r.response))
                .into_iter()
                .collect::<Result<_, _>>()?
        }
    };
    let kappa = match &a.annotations {
        Some(p) => Some(fleiss_kappa(&AnnotationSet::load(p)?)?),
        None => None,
    };
    let report = EvalReport {
        ppl_d,
        ppl_t,
        distinct1: distinct_n(&responses, 1)?,
        distinct2: distinct_n(&responses, 2)?,
        kappa,
    };
    print!("{}\n{}", report.to_table(), report.to_key_values());
    if let Some(p) = &a.out {
        write_file(p, &report.to_key_values())?;
    }
    Ok(())
}
