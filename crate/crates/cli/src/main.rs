use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use its_core::dataset::{build_corpus, load_word_image, save_mel, CorpusConfig, CorpusManifest, Split, WordImage};
use its_core::eval::{
    bench, distribution_experiment, evaluate_e2e, evaluate_pipeline, evaluate_tts, AblationConfig, BenchSystem, OracleDecoder, Subset,
};
use its_core::melgen::audio::{griffin_lim, write_wav};
use its_core::pipeline::{
    recognize, synthesize_e2e, synthesize_tts, thread_count, train, Checkpoint, EncoderModel, ItsModel, Stage, TrainConfig, TrainOptions,
    TtsModel,
};
use its_core::Error;

/// Non-autoregressive image-to-speech: corpus generation, training, synthesis and evaluation.
#[derive(Debug, Parser)]
#[command(name = "its", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config file; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed of the loaded config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the effective config as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// Only report errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic image/mel corpus.
    GenData,
    /// Stage 1: train the image encoder.
    TrainEncoder(TrainArgs),
    /// Stage 2: train the end-to-end backend on a frozen encoder.
    TrainIts(TrainArgs),
    /// Train the phoneme-to-speech baseline.
    TrainBaseline(TrainArgs),
    /// Synthesize a mel (and optionally a WAV) from one image.
    Synth(SynthArgs),
    /// Score a checkpoint on a corpus with the oracle decoder.
    Eval(EvalArgs),
    /// Batch-1 speed of the end-to-end model and the two-model pipeline.
    Bench(BenchArgs),
    /// Short-word sample-count ablation over three corpora.
    AblateDistribution(AblateArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Corpus manifest or corpus directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    /// Encoder checkpoint for train-its.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Continue a checkpoint of the same stage.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Image tensor file (H x W x C).
    #[arg(long)]
    image: PathBuf,
    /// ITS checkpoint, or an encoder checkpoint combined with --tts.
    #[arg(long)]
    ckpt: PathBuf,
    /// Baseline checkpoint; with an encoder --ckpt this runs the pipeline.
    #[arg(long)]
    tts: Option<PathBuf>,
    /// Mel output path; defaults to mel.tsr1 in --out.
    #[arg(long)]
    mel: Option<PathBuf>,
    /// Also write a Griffin-Lim WAV.
    #[arg(long)]
    wav: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    gl_iters: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SubsetArg {
    Train,
    Val,
    Test,
    All,
}

impl SubsetArg {
    fn subset(self) -> Subset {
        match self {
            SubsetArg::Train => Subset::Split(Split::Train),
            SubsetArg::Val => Subset::Split(Split::Val),
            SubsetArg::Test => Subset::Split(Split::Test),
            SubsetArg::All => Subset::All,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// ITS, baseline or encoder checkpoint; an encoder needs --tts.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    tts: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SubsetArg::Test)]
    split: SubsetArg,
    /// Report path; defaults to eval.json in --out.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    its: PathBuf,
    #[arg(long)]
    itt: PathBuf,
    #[arg(long)]
    tts: PathBuf,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 50)]
    images: usize,
    #[arg(long, value_enum, default_value_t = SubsetArg::All)]
    split: SubsetArg,
    /// Report path; defaults to bench.json in --out.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    full: PathBuf,
    #[arg(long)]
    few: PathBuf,
    #[arg(long)]
    eval: PathBuf,
}

enum Failure {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Config(_) => "config",
            Failure::Runtime(_) => "runtime",
        }
    }

    fn reason(&self) -> &str {
        match self {
            Failure::Usage(r) | Failure::Config(r) | Failure::Runtime(r) => r,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let reason = e.to_string();
        match e {
            Error::Config(_) | Error::StageMismatch { .. } => Failure::Config(reason),
            _ => Failure::Runtime(reason),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

struct Log {
    level: u8,
}

impl Log {
    fn emit(&self, min: u8, event: &str, fields: Value) {
        if self.level < min {
            return;
        }
        let mut line = json!({ "level": if min > 1 { "debug" } else { "info" }, "event": event });
        if let (Some(obj), Value::Object(extra)) = (line.as_object_mut(), fields) {
            obj.extend(extra);
        }
        println!("{line}");
    }

    fn info(&self, event: &str, fields: Value) {
        self.emit(1, event, fields);
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            return fail(Failure::Usage(first));
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("{}", json!({ "level": "error", "kind": f.kind(), "code": f.code(), "reason": f.reason() }));
    ExitCode::from(f.code())
}

fn run(cli: &Cli) -> Outcome<()> {
    let log = Log { level: if cli.quiet { 0 } else { 1 + cli.verbose } };
    match &cli.command {
        Command::GenData => gen_data(cli, &log),
        Command::TrainEncoder(a) => train_stage(cli, &log, Stage::Encoder, a),
        Command::TrainIts(a) => train_stage(cli, &log, Stage::Its, a),
        Command::TrainBaseline(a) => train_stage(cli, &log, Stage::TtsBaseline, a),
        Command::Synth(a) => no_config(cli).and_then(|()| synth(cli, &log, a)),
        Command::Eval(a) => no_config(cli).and_then(|()| eval(cli, &log, a)),
        Command::Bench(a) => no_config(cli).and_then(|()| bench_cmd(cli, &log, a)),
        Command::AblateDistribution(a) => ablate(cli, &log, a),
    }
}

fn no_config(cli: &Cli) -> Outcome<()> {
    if cli.config.is_some() || cli.print_config {
        return Err(Failure::Usage("this subcommand takes no config file".into()));
    }
    Ok(())
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Outcome<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Prints `cfg` and returns true when `--print-config` was given.
fn printed<T: Serialize>(cli: &Cli, cfg: &T) -> Outcome<bool> {
    if cli.print_config {
        let text = serde_json::to_string_pretty(cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("{text}");
    }
    Ok(cli.print_config)
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn gen_data(cli: &Cli, log: &Log) -> Outcome<()> {
    let mut cfg: CorpusConfig = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if printed(cli, &cfg)? {
        return Ok(());
    }
    let dir = out_dir(cli, "data");
    let m = build_corpus(&cfg, &dir)?;
    let count = |s| m.split(s).count();
    log.info(
        "corpus",
        json!({
            "manifest": m.path(),
            "entries": m.entries.len(),
            "train": count(Split::Train),
            "val": count(Split::Val),
            "test": count(Split::Test),
            "config_hash": m.config_hash,
        }),
    );
    Ok(())
}

fn train_stage(cli: &Cli, log: &Log, stage: Stage, a: &TrainArgs) -> Outcome<()> {
    let mut cfg: TrainConfig = match &cli.config {
        Some(p) => load_config(Some(p))?,
        None => TrainConfig::for_stage(stage),
    };
    if cfg.stage != stage {
        return Err(Failure::Config(format!("config is for stage {}, not {}", cfg.stage.name(), stage.name())));
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = &a.manifest {
        cfg.manifest = m.clone();
    }
    if let Some(n) = a.steps {
        cfg.steps = n;
    }
    if let Some(p) = &a.init {
        if stage != Stage::Its {
            return Err(Failure::Usage("--init applies to train-its only".into()));
        }
        cfg.init_checkpoint = Some(p.clone());
    }
    if printed(cli, &cfg)? {
        return Ok(());
    }
    cfg.validate()?;
    let resume = a.resume.as_ref().map(Checkpoint::load).transpose()?;
    let dir = out_dir(cli, &format!("runs/{}", stage.name()));
    log.emit(2, "config", serde_json::to_value(&cfg).map_err(Error::from)?);
    let opts = TrainOptions { out_dir: Some(dir.clone()), resume, echo: log.level >= 1, stop_at: None };
    let outcome = train(&cfg, &opts)?;
    log.info("trained", json!({ "stage": stage.name(), "checkpoint": dir, "steps": outcome.checkpoint.meta.step, "metrics": outcome.final_metrics() }));
    Ok(())
}

enum Loaded {
    Its(ItsModel),
    Encoder(EncoderModel),
    Tts(TtsModel),
}

fn load_model(path: &Path) -> Outcome<Loaded> {
    let ck = Checkpoint::load(path)?;
    Ok(match ck.meta.stage {
        Stage::Its => Loaded::Its(ItsModel::from_checkpoint(&ck)?),
        Stage::Encoder => Loaded::Encoder(EncoderModel::from_checkpoint(&ck)?),
        Stage::TtsBaseline => Loaded::Tts(TtsModel::from_checkpoint(&ck)?),
    })
}

fn load_tts(path: Option<&Path>) -> Outcome<TtsModel> {
    let path = path.ok_or_else(|| Failure::Usage("an encoder checkpoint needs --tts".into()))?;
    match load_model(path)? {
        Loaded::Tts(m) => Ok(m),
        _ => Err(Failure::Config(format!("{} is not a tts_baseline checkpoint", path.display()))),
    }
}

fn synth(cli: &Cli, log: &Log, a: &SynthArgs) -> Outcome<()> {
    let image = load_word_image(&a.image)?;
    let (system, s) = match load_model(&a.ckpt)? {
        Loaded::Its(m) => ("e2e", synthesize_e2e(&image, &m)?),
        Loaded::Encoder(itt) => {
            let tts = load_tts(a.tts.as_deref())?;
            ("pipeline", synthesize_tts(&recognize(&image, &itt)?, &tts)?)
        }
        Loaded::Tts(_) => return Err(Failure::Config("synth needs an its or encoder checkpoint, not a baseline".into())),
    };
    let mel_path = a.mel.clone().unwrap_or_else(|| out_dir(cli, ".").join("mel.tsr1"));
    if let Some(dir) = mel_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    save_mel(&mel_path, &s.mel)?;
    let mut fields = json!({
        "system": system,
        "mel": mel_path,
        "frames": s.mel.frames,
        "seconds": s.mel.config.seconds(s.mel.frames),
        "durations": s.durations,
        "decoded": its_core::dataset::phoneme_string(&s.decoded),
    });
    if let Some(wav) = &a.wav {
        let seed = cli.seed.unwrap_or(0);
        let gl = griffin_lim(&s.mel, a.gl_iters, seed)?;
        write_wav(wav, &gl.samples, s.mel.config.sample_rate)?;
        fields["wav"] = json!(wav);
        fields["spectral_convergence"] = json!(gl.convergence.last());
    }
    log.info("synth", fields);
    Ok(())
}

fn eval(cli: &Cli, log: &Log, a: &EvalArgs) -> Outcome<()> {
    let manifest = CorpusManifest::load(&a.manifest)?;
    let dec = OracleDecoder::new(manifest.config.audio);
    let subset = a.split.subset();
    let report = match load_model(&a.ckpt)? {
        Loaded::Its(m) => evaluate_e2e(&m, &manifest, subset, &dec)?,
        Loaded::Encoder(itt) => evaluate_pipeline(&itt, &load_tts(a.tts.as_deref())?, &manifest, subset, &dec)?,
        Loaded::Tts(m) => evaluate_tts(&m, &manifest, subset, &dec)?,
    };
    let path = a.report.clone().unwrap_or_else(|| out_dir(cli, ".").join("eval.json"));
    write_json(&path, &report)?;
    log.info("eval", json!({ "system": report.system, "per": report.per, "word_accuracy": report.word_accuracy, "n_items": report.n_items, "report": path }));
    Ok(())
}

fn bench_cmd(cli: &Cli, log: &Log, a: &BenchArgs) -> Outcome<()> {
    let manifest = CorpusManifest::load(&a.manifest)?;
    let entries: Vec<_> = match a.split.subset() {
        Subset::Split(s) => manifest.split(s).collect(),
        Subset::All => manifest.entries.iter().collect(),
    };
    let images: Vec<WordImage> = entries.iter().take(a.images).map(|e| manifest.load_image(e)).collect::<Result<_, _>>()?;
    let its = match load_model(&a.its)? {
        Loaded::Its(m) => m,
        _ => return Err(Failure::Config(format!("{} is not an its checkpoint", a.its.display()))),
    };
    let itt = match load_model(&a.itt)? {
        Loaded::Encoder(m) => m,
        _ => return Err(Failure::Config(format!("{} is not an encoder checkpoint", a.itt.display()))),
    };
    let tts = load_tts(Some(&a.tts))?;
    let e2e = bench(BenchSystem::E2e(&its), &images, a.runs)?;
    let pipe = bench(BenchSystem::Pipeline { itt: &itt, tts: &tts }, &images, a.runs)?;
    let report = json!({
        "e2e": e2e,
        "pipeline": pipe,
        "e2e_faster": e2e.images_per_sec > pipe.images_per_sec && e2e.rtf < pipe.rtf,
        "threads": thread_count(),
    });
    let path = a.report.clone().unwrap_or_else(|| out_dir(cli, ".").join("bench.json"));
    write_json(&path, &report)?;
    for r in [&e2e, &pipe] {
        log.info("bench", json!({ "system": r.system, "images_per_sec": r.images_per_sec, "rtf": r.rtf, "param_count": r.param_count }));
    }
    Ok(())
}

fn ablate(cli: &Cli, log: &Log, a: &AblateArgs) -> Outcome<()> {
    let mut cfg: AblationConfig = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        for c in [&mut cfg.encoder, &mut cfg.its, &mut cfg.tts] {
            c.seed = s;
        }
    }
    if printed(cli, &cfg)? {
        return Ok(());
    }
    let work = out_dir(cli, "runs/ablation");
    let report = distribution_experiment(&cfg, &a.full, &a.few, &a.eval, &work)?;
    for r in &report.rows {
        log.emit(2, "per_by_length", json!(r));
    }
    log.info("ablation", json!({ "claims": report.claims, "csv": work.join("per_by_length.csv"), "report": work.join("ablation.json") }));
    Ok(())
}
