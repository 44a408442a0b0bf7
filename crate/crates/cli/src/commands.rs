use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use serde_json::json;
use unids::corpus::chit_synth::synthetic_threads;
use unids::corpus::tod::synthetic_database;
use unids::corpus::{build_corpus, load_raw_chit, read_corpus, write_corpus};
use unids::db::EntityDatabase;
use unids::eval::{evaluate, EvalMode, EvalReport};
use unids::harness::{inject_noise, make_switch_setups, robust_eval, switch_eval, NoiseSetup};
use unids::model::{Checkpoint, Model, TrainConfig, Trainer};
use unids::pipeline::{lexicalize, Pipeline, SessionState};
use unids::schema::{classify_response_type, Dialogue, ResponseType, Source};
use unids::tokenizer::Vocabulary;
use unids_service::{AppState, Engine};

use crate::config::{self, Overrides, Settings};
use crate::manifest::Recorder;
use crate::{
    ChatArgs, Cli, Command, CorpusBuildArgs, CorpusCmd, DbCmd, EvalCmd, EvalRunArgs, HarnessCmd, Mode, ModelArgs,
    RobustArgs, ServeArgs, SetupKind, SweepCmd, SweepWArgs, SwitchArgs, TrainArgs,
};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let manifest = cli.manifest.as_deref();
    match cli.command {
        Command::Corpus(CorpusCmd::Build(a)) => corpus_build(a, manifest),
        Command::Db(DbCmd::Validate { db }) => db_validate(&db, manifest),
        Command::Db(DbCmd::Synth { seed, out }) => db_synth(seed, &out, manifest),
        Command::Train(a) => train(a, manifest),
        Command::Eval(EvalCmd::Run(a)) => eval_run(a, manifest),
        Command::Harness(HarnessCmd::Switch(a)) => harness_switch(a, manifest),
        Command::Harness(HarnessCmd::Robust(a)) => harness_robust(a, manifest),
        Command::Sweep(SweepCmd::W(a)) => sweep_w(a, manifest),
        Command::Chat(a) => chat(a, manifest),
        Command::Serve(a) => serve(a, manifest),
    }
}

fn load_db(path: Option<&Path>, rec: &mut Recorder) -> anyhow::Result<EntityDatabase> {
    match path {
        Some(p) => {
            rec.input(p)?;
            Ok(EntityDatabase::load(p)?)
        }
        None => Ok(synthetic_database(0)),
    }
}

fn load_corpus(path: &Path, rec: &mut Recorder) -> anyhow::Result<Vec<Dialogue>> {
    rec.input(path)?;
    let corpus = read_corpus(path)?;
    if corpus.is_empty() {
        return Err(unids::Error::EmptyCorpus).with_context(|| format!("reading {}", path.display()));
    }
    Ok(corpus)
}

fn vocab_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("vocab")
}

struct Loaded {
    model: Model,
    vocab: Vocabulary,
    db: EntityDatabase,
}

fn load_model(args: &ModelArgs, settings: &mut Settings, rec: &mut Recorder) -> anyhow::Result<Loaded> {
    rec.input(&args.checkpoint)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let vpath = args.vocab.clone().unwrap_or_else(|| vocab_path(&args.checkpoint));
    rec.input(&vpath)?;
    let vocab = Vocabulary::load(&vpath)?;
    ckpt.check_vocab(&vocab.hash())?;
    // Bucket boundaries are part of what the model learned.
    settings.pipeline.buckets = ckpt.header.buckets;
    let db = load_db(args.db.as_deref(), rec)?;
    Ok(Loaded {
        model: ckpt.model,
        vocab,
        db,
    })
}

fn write_report(path: Option<&Path>, value: &serde_json::Value, rec: &mut Recorder) -> anyhow::Result<()> {
    if let Some(p) = path {
        std::fs::write(p, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", p.display()))?;
        rec.output(p)?;
    }
    Ok(())
}

fn corpus_build(a: CorpusBuildArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    let mut over = Overrides::new();
    a.corpus.overrides(&mut over);
    let settings = config::resolve(over)?;
    let mut rec = Recorder::start("corpus build", &settings);
    rec.seed(settings.corpus.seed);
    let cfg = &settings.corpus;
    let raw = match &a.chit {
        Some(p) => {
            rec.input(p)?;
            load_raw_chit(p)?
        }
        // Enough threads that filtering cannot starve the requested count.
        None => synthetic_threads(cfg.chit_count * 3 / 2 + 10, cfg.seed),
    };
    let db = load_db(a.db.as_deref(), &mut rec)?;
    let built = build_corpus(&raw, &db, cfg)?;
    write_corpus(&a.out, &built.dialogues)?;
    rec.output(&a.out)?;
    let chit = built.dialogues.iter().filter(|d| d.source == Source::Chit).count();
    let f = &built.filter;
    println!(
        "wrote {} dialogues ({} chit-chat, {} task) to {}",
        built.dialogues.len(),
        chit,
        built.dialogues.len() - chit,
        a.out.display()
    );
    println!("filter: {}", serde_json::to_string(f)?);
    rec.finish(manifest)?;
    Ok(())
}

fn db_validate(path: &Path, manifest: Option<&Path>) -> anyhow::Result<()> {
    let settings = config::resolve(Overrides::new())?;
    let mut rec = Recorder::start("db validate", &settings);
    let db = load_db(Some(path), &mut rec)?;
    for (domain, entities) in &db.tables {
        println!("{:<12} {:>5} entities", domain.name(), entities.len());
    }
    println!("ok");
    rec.finish(manifest)?;
    Ok(())
}

fn db_synth(seed: u64, out: &Path, manifest: Option<&Path>) -> anyhow::Result<()> {
    let settings = config::resolve(Overrides::new())?;
    let mut rec = Recorder::start("db synth", &settings);
    rec.seed(seed);
    std::fs::write(out, synthetic_database(seed).to_json()).with_context(|| format!("writing {}", out.display()))?;
    rec.output(out)?;
    rec.finish(manifest)?;
    Ok(())
}

/// Trains on `corpus` and writes the checkpoint and its vocabulary.
fn train_one(corpus: &[Dialogue], settings: &Settings, out: &Path, rec: &mut Recorder) -> anyhow::Result<Vec<f64>> {
    let vocab = Vocabulary::build(corpus, 1)?;
    let model_cfg = settings.model.with_vocab(vocab.len());
    let mut trainer = Trainer::new(corpus, &vocab, model_cfg, settings.train.clone())?;
    println!("initial loss {:.4}", trainer.report().initial_loss);
    trainer.run(|epoch, loss| println!("epoch {:>3}  loss {loss:.4}", epoch + 1))?;
    let (model, report) = trainer.into_parts();
    let ckpt = Checkpoint::new(model, settings.train.clone(), vocab.hash(), settings.pipeline.buckets);
    ckpt.save(out)?;
    let vpath = vocab_path(out);
    vocab.save(&vpath)?;
    rec.output(out)?;
    rec.output(&vpath)?;
    let mut losses = vec![report.initial_loss];
    losses.extend(&report.epoch_losses);
    Ok(losses)
}

fn train(a: TrainArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    let mut over = Overrides::new();
    a.train.overrides(&mut over);
    let settings = config::resolve(over)?;
    let mut rec = Recorder::start("train", &settings);
    let corpus = load_corpus(&a.corpus, &mut rec)?;
    train_one(&corpus, &settings, &a.out, &mut rec)?;
    println!("wrote {}", a.out.display());
    rec.finish(manifest)?;
    Ok(())
}

fn eval_mode(m: Mode) -> EvalMode {
    match m {
        Mode::Tod => EvalMode::Tod,
        Mode::Chit => EvalMode::Chit,
        Mode::Both => EvalMode::Both,
    }
}

fn eval_run(a: EvalRunArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    let mut settings = config::resolve(Overrides::new())?;
    let mut rec = Recorder::start("eval run", &settings);
    let m = load_model(&a.model, &mut settings, &mut rec)?;
    let corpus = load_corpus(&a.corpus, &mut rec)?;
    let pipeline = Pipeline::new(&m.model, &m.vocab, &m.db, settings.pipeline.clone());
    let (report, _) = evaluate(&pipeline, &corpus, eval_mode(a.mode))?;
    print!("{}", report.table());
    write_report(a.report.as_deref(), &serde_json::to_value(&report)?, &mut rec)?;
    rec.finish(manifest)?;
    Ok(())
}

fn harness_switch(a: SwitchArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    let mut settings = config::resolve(Overrides::new())?;
    let mut rec = Recorder::start("harness switch", &settings);
    rec.seed(a.seed);
    let m = load_model(&a.model, &mut settings, &mut rec)?;
    let corpus = load_corpus(&a.corpus, &mut rec)?;
    let prefix_type = match a.setup {
        SetupKind::ChitFirst => ResponseType::Chit,
        SetupKind::TodFirst => ResponseType::Task,
    };
    let setups = make_switch_setups(&corpus, prefix_type, a.prefix_turns, a.count, a.seed)?;
    let pipeline = Pipeline::new(&m.model, &m.vocab, &m.db, settings.pipeline.clone());
    let report = switch_eval(&setups, &pipeline, &[1, 2, 3])?;
    for (n, rate) in &report.switch_n {
        let exact = report.exactly_at.get(n).copied().unwrap_or(0.0);
        println!("Switch-{n}  {rate:6.2}  (exactly at turn {n}: {exact:.2})");
    }
    println!("after the switch:");
    print!("{}", report.post_switch.table());
    write_report(a.report.as_deref(), &serde_json::to_value(&report)?, &mut rec)?;
    rec.finish(manifest)?;
    Ok(())
}

fn harness_robust(a: RobustArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    let mut settings = config::resolve(Overrides::new())?;
    let mut rec = Recorder::start("harness robust", &settings);
    rec.seed(a.seed);
    let m = load_model(&a.model, &mut settings, &mut rec)?;
    let corpus = load_corpus(&a.corpus, &mut rec)?;
    let pool = match &a.noise_pool {
        Some(p) => load_corpus(p, &mut rec)?,
        None => corpus.clone(),
    };
    let tod: Vec<Dialogue> = corpus.into_iter().filter(|d| d.goal.is_some()).collect();
    let pipeline = Pipeline::new(&m.model, &m.vocab, &m.db, settings.pipeline.clone());
    let mut rows = Vec::new();
    for k in [0, a.turns as usize] {
        let perturbed = inject_noise(&tod, &pool, NoiseSetup { insert_turns: k, seed: a.seed })?;
        let (report, _) = robust_eval(&pipeline, &perturbed)?;
        let label = if k == 0 { "clean".to_string() } else { format!("{k}-turn noise") };
        print!("{label:<14} {}", report.table());
        rows.push(json!({ "insert_turns": k, "report": report }));
        if a.turns == 0 {
            break;
        }
    }
    write_report(a.report.as_deref(), &json!(rows), &mut rec)?;
    rec.finish(manifest)?;
    Ok(())
}

fn sweep_w(a: SweepWArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    if a.values.is_empty() {
        bail!("--values needs at least one weight");
    }
    let mut over = Overrides::new();
    a.train.overrides(&mut over);
    let base = config::resolve(over)?;
    let mut rec = Recorder::start("sweep w", &base);
    let corpus = load_corpus(&a.corpus, &mut rec)?;
    let held = load_corpus(&a.eval_corpus, &mut rec)?;
    let db = load_db(a.db.as_deref(), &mut rec)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;

    let mut rows: Vec<(f64, f64, EvalReport)> = Vec::new();
    for &w in &a.values {
        let mut settings = base.clone();
        settings.train = TrainConfig {
            recommend_weight: w,
            ..settings.train
        };
        settings.train.validate()?;
        let out = a.out_dir.join(format!("w{w}.ckpt"));
        println!("== w = {w}");
        let losses = train_one(&corpus, &settings, &out, &mut rec)?;
        let vocab = Vocabulary::load(&vocab_path(&out))?;
        let model = Checkpoint::load(&out)?.model;
        let pipeline = Pipeline::new(&model, &vocab, &db, settings.pipeline.clone());
        let (report, _) = evaluate(&pipeline, &held, EvalMode::Tod)?;
        rows.push((w, *losses.last().unwrap_or(&f64::NAN), report));
    }

    let mut table = String::from("     w   final-loss   inform  success     bleu  combined\n");
    for (w, loss, r) in &rows {
        let t = r.tod.as_ref().context("evaluation corpus has no task dialogues")?;
        table += &format!(
            "{w:>6.2}   {loss:>10.4}   {:>6.2}   {:>6.2}   {:>6.2}   {:>7.2}\n",
            t.inform, t.success, t.bleu, t.combined
        );
    }
    let combined: Vec<f64> = rows.iter().filter_map(|(_, _, r)| r.tod.as_ref().map(|t| t.combined)).collect();
    let trend = if combined.windows(2).all(|p| p[1] >= p[0]) {
        "non-decreasing in w"
    } else if combined.windows(2).all(|p| p[1] <= p[0]) {
        "non-increasing in w"
    } else {
        "not monotone in w"
    };
    table += &format!("combined score is {trend}\n");
    print!("{table}");
    let report_path = a.out_dir.join("sweep_w.txt");
    std::fs::write(&report_path, &table)?;
    rec.output(&report_path)?;
    let json_path = a.out_dir.join("sweep_w.json");
    let value = json!(rows
        .iter()
        .map(|(w, loss, r)| json!({ "w": w, "final_loss": loss, "report": r }))
        .collect::<Vec<_>>());
    std::fs::write(&json_path, serde_json::to_string_pretty(&value)?)?;
    rec.output(&json_path)?;
    rec.finish(manifest)?;
    Ok(())
}

fn chat(a: ChatArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    let mut settings = config::resolve(Overrides::new())?;
    let mut rec = Recorder::start("chat", &settings);
    let m = load_model(&a.model, &mut settings, &mut rec)?;
    rec.finish(manifest)?;
    let pipeline = Pipeline::new(&m.model, &m.vocab, &m.db, settings.pipeline.clone());
    let mut state = SessionState::new();
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    println!("type a message; :reset clears the dialogue, :quit exits");
    loop {
        print!("> ");
        out.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        match line.trim() {
            "" => continue,
            ":quit" | ":q" => break,
            ":reset" => {
                state = SessionState::new();
                println!("(new dialogue)");
                continue;
            }
            text => {
                let (trace, next) = pipeline.step(&state, text)?;
                let shown = lexicalize(&trace.response_text, &trace.matches);
                let mode = match classify_response_type(&trace.parsed_act) {
                    ResponseType::Chit => "chit",
                    ResponseType::Task => "task",
                };
                println!("{}", shown.text);
                println!(
                    "  [{mode}] belief: {} | db: {} | act: {}{}",
                    trace.parsed_belief.to_text(),
                    trace.db_token.token(),
                    trace.parsed_act.to_text(),
                    if trace.repairs.is_empty() {
                        String::new()
                    } else {
                        format!(" | repairs: {:?}", trace.repairs)
                    }
                );
                state = next;
            }
        }
    }
    Ok(())
}

fn serve(a: ServeArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    let mut over = Overrides::new();
    config::set(&mut over, "service", "host", a.host.clone());
    config::set(&mut over, "service", "port", a.port.map(i64::from));
    config::set(&mut over, "service", "ttl_minutes", a.ttl_minutes.map(|v| v as i64));
    config::set(&mut over, "service", "static_dir", a.static_dir.as_ref().map(|p| p.display().to_string()));
    let mut settings = config::resolve(over)?;
    let mut rec = Recorder::start("serve", &settings);
    let m = load_model(&a.model, &mut settings, &mut rec)?;
    rec.finish(manifest)?;
    let svc = &settings.service;
    let addr: SocketAddr = format!("{}:{}", svc.host, svc.port)
        .parse()
        .with_context(|| format!("bad listen address {}:{}", svc.host, svc.port))?;
    let engine = Engine {
        model: m.model,
        vocab: m.vocab,
        db: m.db,
        pipeline: settings.pipeline.clone(),
    };
    let state = AppState::new(engine, Duration::from_secs(svc.ttl_minutes * 60), svc.static_dir.clone());
    println!("listening on http://{addr}");
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(unids_service::serve(addr, state))?;
    Ok(())
}
