mod config;
mod demo;

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use ita_core::arbitrator::{write_decisions, ArbitratorMode, ArbitratorModel, EncoderKind};
use ita_core::corpus::pipeline::{
    read_processed_dir, run_preprocess, PreprocessOptions, ProcessedDir,
};
use ita_core::corpus::{
    compute_stats, synth, ArbitratorSample, Dialogue, ImaginatorSample, Role, SourceFormat,
};
use ita_core::imaginator::{
    evaluate_imaginator, write_transcripts, BeamImaginator, ImaginatorModel, Imagine,
};
use ita_core::trainer::{
    evaluate_arbitrator, partition_dialogues, split_by_dialogue, train_arbitrator,
    train_imaginator, Checkpoint, MetricsLog, ModelSpec, SplitData, TrainConfig,
};

use crate::config::{announce, ConfigArgs};

#[derive(Parser)]
#[command(
    name = "ita",
    version,
    about = "Imagine-then-arbitrate turn taking: preprocess, train, evaluate, chat"
)]
struct Cli {
    /// More log output on stderr (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Ingest a raw corpus, mask slots, split user turns, derive samples
    Preprocess(PreprocessArgs),
    /// Print corpus statistics of a processed directory
    Stats(StatsArgs),
    /// Train an imaginator or an arbitrator
    Train(TrainArgs),
    /// Score checkpoints on a processed corpus
    Evaluate(EvaluateArgs),
    /// Generate responses with an imaginator checkpoint
    Generate(GenerateArgs),
    /// Interactive wait/reply session in the terminal
    Demo(DemoArgs),
    /// Write a seeded synthetic corpus in the multiwoz-like format
    Synth(SynthArgs),
}

#[derive(clap::Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    /// multiwoz-like, dailydialogue-like or generic-jsonl
    #[arg(long, default_value = "multiwoz-like")]
    format: String,
    #[arg(long)]
    out: PathBuf,
    /// Slot values (JSON object of name -> values) masked in every dialogue
    #[arg(long)]
    slot_values: Option<PathBuf>,
    /// Reuse an existing vocabulary file instead of building one
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    p_split: Option<f64>,
    #[arg(long)]
    min_freq: Option<u64>,
}

#[derive(clap::Args)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Imaginator,
    Arbitrator,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RoleArg {
    Agent,
    User,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Role {
        match r {
            RoleArg::Agent => Role::Agent,
            RoleArg::User => Role::User,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EncoderArg {
    Textcnn,
    Bigru,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Ita,
    Baseline,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// Imaginator role
    #[arg(long, value_enum)]
    role: Option<RoleArg>,
    #[arg(long, value_enum, default_value = "textcnn")]
    encoder: EncoderArg,
    #[arg(long, value_enum, default_value = "ita")]
    mode: ModeArg,
    /// Processed corpus directory
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; the sidecar and metrics log are written next to it
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    agent_imaginator: Option<PathBuf>,
    #[arg(long)]
    user_imaginator: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Valid,
    Test,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// Imaginator or arbitrator checkpoints (repeatable)
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Write the report here as well as to stdout
    #[arg(long)]
    report: Option<PathBuf>,
    /// Which dialogues to score; splits follow each checkpoint's seed
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    #[arg(long)]
    agent_imaginator: Option<PathBuf>,
    #[arg(long)]
    user_imaginator: Option<PathBuf>,
    #[arg(long)]
    beam_width: Option<usize>,
    /// Seed of the random policy (defaults to the checkpoint's seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Per-sample arbitrator decisions (JSONL)
    #[arg(long)]
    decisions: Option<PathBuf>,
    /// Per-sample imaginator outputs (JSONL)
    #[arg(long)]
    transcripts: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// History file: one `user: text` or `agent: text` line per message
    #[arg(long, conflicts_with = "data")]
    history: Option<PathBuf>,
    /// Processed corpus whose samples for the checkpoint's role are decoded
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
    /// Transcript output (JSONL) for --data; stdout otherwise
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct DemoArgs {
    #[arg(long)]
    agent_imaginator: PathBuf,
    #[arg(long)]
    user_imaginator: PathBuf,
    #[arg(long)]
    arbitrator: PathBuf,
    #[arg(long)]
    beam_width: Option<usize>,
    /// Save the session transcript here on exit
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SynthKind {
    Separable,
    MultiwozLike,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "multiwoz-like")]
    kind: SynthKind,
    #[arg(long, default_value_t = 500)]
    dialogues: usize,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Generate(a) => generate(a),
        Command::Demo(a) => demo(a),
        Command::Synth(a) => synth_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn usage_error(msg: &str) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::MissingRequiredArgument, msg)
        .exit()
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let base = ConfigArgs {
        config: a.config.clone(),
        seed: a.seed,
        p_split: a.p_split,
        min_freq: a.min_freq,
        ..ConfigArgs::default()
    }
    .resolve()?;
    eprintln!("seed: {}", base.seed);
    eprintln!(
        "resolved config: format={} p_split={} min_freq={}",
        a.format, base.p_split, base.min_freq
    );
    let opts = PreprocessOptions {
        input: a.input,
        format: a.format.parse::<SourceFormat>()?,
        p_split: base.p_split,
        seed: base.seed,
        min_freq: base.min_freq,
        out_dir: a.out.clone(),
        slot_values: a.slot_values,
        vocab: a.vocab,
    };
    let summary = run_preprocess(&opts)?;
    println!(
        "records: {}\nrejected: {}\nskipped_empty: {}",
        summary.records, summary.rejected, summary.skipped_empty
    );
    print!("{}", summary.stats.to_report());
    for (name, bytes, digest) in &summary.files {
        println!(
            "wrote {} ({bytes} bytes, sha256 {digest})",
            a.out.join(name).display()
        );
    }
    Ok(())
}

fn load_data(dir: &Path) -> Result<ProcessedDir> {
    read_processed_dir(dir).with_context(|| format!("reading processed corpus {}", dir.display()))
}

fn stats(a: StatsArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    eprintln!("seed: {}", data.seed);
    let mut s = compute_stats(&data.dialogues);
    s.vocabulary_size = Some(data.vocab.len());
    print!("{}", s.to_report());
    println!("Arbitrator Samples: {}", data.arbitrator.len());
    println!("Agent Imaginator Samples: {}", data.agent.len());
    println!("User Imaginator Samples: {}", data.user.len());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Loads an imaginator checkpoint, checking its role and vocabulary.
fn load_imaginator(path: &Path, role: Role, data: &ProcessedDir) -> Result<ImaginatorModel> {
    let ck = load_checkpoint(path)?;
    ck.check_vocab(&data.vocab)
        .with_context(|| format!("checkpoint {}", path.display()))?;
    let model = ck
        .imaginator()
        .with_context(|| format!("checkpoint {}", path.display()))?;
    if model.role() != role {
        bail!(
            "{} is the {} imaginator, expected {role}",
            path.display(),
            model.role()
        );
    }
    Ok(model)
}

fn train(a: TrainArgs) -> Result<()> {
    if a.kind == Kind::Imaginator && a.role.is_none() {
        usage_error("--kind imaginator needs --role agent|user");
    }
    if a.kind == Kind::Arbitrator
        && a.mode == ModeArg::Ita
        && (a.agent_imaginator.is_none() || a.user_imaginator.is_none())
    {
        usage_error("--mode ita needs --agent-imaginator and --user-imaginator");
    }
    let cfg = a.config.resolve()?;
    announce(&cfg)?;
    let data = load_data(&a.data)?;
    let metrics_path = with_suffix(&a.out, ".metrics.jsonl");
    let mut log = MetricsLog::create(&metrics_path)?;
    let checkpoint = match a.kind {
        Kind::Imaginator => {
            let role: Role = a.role.expect("checked above").into();
            let run = train_imaginator(&data, role, &cfg, &mut log)?;
            println!(
                "imaginator {role}: best validation bleu {:.6} at epoch {} of {}",
                run.outcome.best_metric, run.outcome.best_epoch, run.outcome.epochs_run
            );
            run.checkpoint(&cfg, &data.vocab)
        }
        Kind::Arbitrator => {
            let encoder = match a.encoder {
                EncoderArg::Textcnn => EncoderKind::TextCnn,
                EncoderArg::Bigru => EncoderKind::BiGru,
            };
            let (mode, imaginators) = match a.mode {
                ModeArg::Baseline => (ArbitratorMode::Baseline, None),
                ModeArg::Ita => {
                    let agent = load_imaginator(
                        a.agent_imaginator.as_deref().expect("checked"),
                        Role::Agent,
                        &data,
                    )?;
                    let user = load_imaginator(
                        a.user_imaginator.as_deref().expect("checked"),
                        Role::User,
                        &data,
                    )?;
                    (ArbitratorMode::Ita, Some((agent, user)))
                }
            };
            let pair = imaginators.as_ref().map(|(a, u)| (a, u));
            let run = train_arbitrator(&data, encoder, mode, &cfg, pair, &mut log)?;
            println!(
                "arbitrator {}-{}: best validation accuracy {:.6} at epoch {} of {}",
                encoder.as_str(),
                mode.as_str(),
                run.outcome.best_metric,
                run.outcome.best_epoch,
                run.outcome.epochs_run
            );
            run.checkpoint(&cfg, &data.vocab)
        }
    };
    checkpoint.save(&a.out)?;
    println!("wrote {}", a.out.display());
    println!("wrote {}", metrics_path.display());
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn select<T: Clone>(
    split: SplitArg,
    samples: &[T],
    id_of: impl Fn(&T) -> &str,
    data: &ProcessedDir,
    cfg: &TrainConfig,
) -> Result<Vec<T>> {
    if split == SplitArg::All {
        return Ok(samples.to_vec());
    }
    let partition = partition_dialogues(
        data.dialogues.iter().map(|d| d.id.as_str()),
        cfg.seed,
        cfg.valid_fraction,
        cfg.test_fraction,
    );
    let SplitData { train, valid, test } = split_by_dialogue(samples, id_of, &partition)?;
    Ok(match split {
        SplitArg::Train => train,
        SplitArg::Valid => valid,
        SplitArg::Test => test,
        SplitArg::All => unreachable!(),
    })
}

fn imaginator_id(s: &ImaginatorSample) -> &str {
    &s.id
}

fn arbitrator_id(s: &ArbitratorSample) -> &str {
    &s.id
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let mut report = String::new();
    for path in &a.checkpoint {
        let ck = load_checkpoint(path)?;
        ck.check_vocab(&data.vocab)
            .with_context(|| format!("checkpoint {}", path.display()))?;
        let seed = a.seed.unwrap_or(ck.train.seed);
        eprintln!("seed: {seed}");
        eprintln!(
            "resolved config: {} ({}), split {:?}",
            path.display(),
            ck.meta.model.kind(),
            split_name(a.split)
        );
        writeln!(report, "checkpoint: {}", path.display())?;
        match &ck.meta.model {
            ModelSpec::Imaginator(c) => {
                let model = ck.imaginator()?;
                let mut g = BeamImaginator::new(&model, &data.vocab);
                g.beam_width = a.beam_width.unwrap_or(c.beam_width);
                let agent = select(a.split, &data.agent, imaginator_id, &data, &ck.train)?;
                let user = select(a.split, &data.user, imaginator_id, &data, &ck.train)?;
                let scores = evaluate_imaginator(&g, &agent, &user)?;
                writeln!(
                    report,
                    "kind: imaginator\nrole: {}\nbeam_width: {}",
                    c.role, g.beam_width
                )?;
                writeln!(
                    report,
                    "bleu_on_agent_targets: {:.6}",
                    scores.bleu_on_agent_targets
                )?;
                writeln!(
                    report,
                    "bleu_on_user_targets: {:.6}",
                    scores.bleu_on_user_targets
                )?;
                writeln!(
                    report,
                    "agent_target_samples: {}\nuser_target_samples: {}",
                    agent.len(),
                    user.len()
                )?;
                if let Some(p) = &a.transcripts {
                    write_transcripts(p, &scores.transcripts)?;
                }
            }
            ModelSpec::Arbitrator(c) => {
                let model: ArbitratorModel = ck.arbitrator()?;
                let samples = select(a.split, &data.arbitrator, arbitrator_id, &data, &ck.train)?;
                let imaginators = match c.mode {
                    ArbitratorMode::Baseline => None,
                    ArbitratorMode::Ita => {
                        let (Some(ap), Some(up)) = (&a.agent_imaginator, &a.user_imaginator) else {
                            usage_error("evaluating an ITA arbitrator needs --agent-imaginator and --user-imaginator");
                        };
                        Some((
                            load_imaginator(ap, Role::Agent, &data)?,
                            load_imaginator(up, Role::User, &data)?,
                        ))
                    }
                };
                let beams = imaginators.as_ref().map(|(am, um)| {
                    let mut ga = BeamImaginator::new(am, &data.vocab);
                    let mut gu = BeamImaginator::new(um, &data.vocab);
                    if let Some(b) = a.beam_width {
                        ga.beam_width = b;
                        gu.beam_width = b;
                    }
                    (ga, gu)
                });
                let pair = beams
                    .as_ref()
                    .map(|(ga, gu)| (ga as &dyn Imagine, gu as &dyn Imagine));
                let (r, records) = evaluate_arbitrator(&model, &data.vocab, &samples, pair, seed)?;
                writeln!(
                    report,
                    "kind: arbitrator\nencoder: {}\nmode: {}",
                    c.encoder.as_str(),
                    c.mode.as_str()
                )?;
                report.push_str(&r.to_text());
                if let Some(p) = &a.decisions {
                    write_decisions(p, &records)?;
                }
            }
        }
        report.push('\n');
    }
    print!("{report}");
    if let Some(p) = &a.report {
        std::fs::write(p, &report).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn split_name(s: SplitArg) -> &'static str {
    match s {
        SplitArg::All => "all",
        SplitArg::Train => "train",
        SplitArg::Valid => "valid",
        SplitArg::Test => "test",
    }
}

fn read_history(path: &Path) -> Result<Dialogue> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut messages = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (role, text) = line
            .split_once(':')
            .and_then(|(r, t)| Role::parse(r.trim()).map(|r| (r, t.to_string())))
            .with_context(|| {
                format!(
                    "{}:{}: expected `user: text` or `agent: text`",
                    path.display(),
                    i + 1
                )
            })?;
        messages.push((role, text));
    }
    Ok(Dialogue::from_messages(
        path.display().to_string(),
        messages.iter().map(|(r, t)| (*r, t.as_str())),
    )?)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = ck.imaginator()?;
    let mut g = BeamImaginator::new(&model, &ck.vocab);
    g.beam_width = a.beam_width.unwrap_or(model.config.beam_width);
    eprintln!("seed: {}", ck.train.seed);
    eprintln!(
        "resolved config: {} imaginator, beam_width {}",
        model.role(),
        g.beam_width
    );
    match (&a.history, &a.data) {
        (Some(h), _) => {
            let d = read_history(h)?;
            let out = g.imagine(&d.utterances)?;
            println!("{}", out.tokens.join(" "));
        }
        (None, Some(dir)) => {
            let data = load_data(dir)?;
            ck.check_vocab(&data.vocab)?;
            let samples = match model.role() {
                Role::Agent => &data.agent,
                Role::User => &data.user,
            };
            let mut samples = select(a.split, samples, imaginator_id, &data, &ck.train)?;
            samples.truncate(a.limit.unwrap_or(usize::MAX));
            let (same, other) = (&samples[..], &[][..]);
            let (agent, user) = match model.role() {
                Role::Agent => (same, other),
                Role::User => (other, same),
            };
            let scores = evaluate_imaginator(&g, agent, user)?;
            match &a.out {
                Some(p) => {
                    write_transcripts(p, &scores.transcripts)?;
                    println!(
                        "wrote {} responses to {}",
                        scores.transcripts.len(),
                        p.display()
                    );
                }
                None => {
                    for t in &scores.transcripts {
                        println!("{}\t{}", t.history_id, t.generated_tokens.join(" "));
                    }
                }
            }
        }
        (None, None) => usage_error("generate needs --history or --data"),
    }
    Ok(())
}

fn demo(a: DemoArgs) -> Result<()> {
    let arb = load_checkpoint(&a.arbitrator)?;
    let arbitrator = arb.arbitrator()?;
    let vocab = arb.vocab.clone();
    let mut models = Vec::new();
    for (path, role) in [
        (&a.agent_imaginator, Role::Agent),
        (&a.user_imaginator, Role::User),
    ] {
        let ck = load_checkpoint(path)?;
        ck.check_vocab(&vocab)
            .with_context(|| format!("checkpoint {}", path.display()))?;
        let m = ck.imaginator()?;
        if m.role() != role {
            bail!(
                "{} is the {} imaginator, expected {role}",
                path.display(),
                m.role()
            );
        }
        models.push(m);
    }
    let beam_width = a.beam_width.unwrap_or(models[0].config.beam_width);
    eprintln!("seed: {}", arb.train.seed);
    eprintln!(
        "resolved config: arbitrator {}-{}, beam_width {beam_width}",
        arbitrator.config.encoder.as_str(),
        arbitrator.config.mode.as_str()
    );
    let session = demo::Demo {
        agent: &models[0],
        user: &models[1],
        arbitrator: &arbitrator,
        vocab: &vocab,
        beam_width,
    };
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    let transcript = session.run(stdin.lock(), &mut stdout)?;
    if let Some(p) = &a.transcript {
        let mut text = transcript.join("\n");
        text.push('\n');
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
        eprintln!("transcript saved to {}", p.display());
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    eprintln!("seed: {}", a.seed);
    let records = match a.kind {
        SynthKind::Separable => synth::separable(a.dialogues, a.seed),
        SynthKind::MultiwozLike => synth::multiwoz_like(a.dialogues, a.seed),
    };
    synth::write_records(&a.out, &records)?;
    println!("wrote {} dialogues to {}", records.len(), a.out.display());
    Ok(())
}
