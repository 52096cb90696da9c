//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (bad input or model
//! files), 3 internal error. Diagnostics go to stderr; results go to stdout
//! unless `--out` names a file.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::audio::{decode_wav, encode_wav, resample, AudioBuffer, WORKING_RATE};
use crate::channel::{corrupt, estimate_channel, ChannelParams, DEFAULT_MAX_INSERTIONS};
use crate::container::{Container, Tensor};
use crate::dsp::featurize;
use crate::lexicon::parse_lexicon;
use crate::lm::{moderate_corpus, train_ngram, ModerationList};
use crate::pipeline::{Models, Pipeline, PipelineConfig};
use crate::recognizer::{
    beam_decode, forward, greedy_decode, synth, token_accuracy, train_with_progress, AcousticModel, PhonemeSequence, TrainConfig,
};
use crate::separator::separate;
use crate::service::{self, ServiceConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "imly", version, about = "Imagine lyrics in music and environmental sound")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Directory holding am.imly, lexicon.dict, lm.imly and channel.txt [default: $IMLY_DATA_DIR, then ./data]
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Acoustic model checkpoint [default: <data-dir>/am.imly]
    #[arg(long, value_name = "FILE")]
    am: Option<PathBuf>,
    /// Pronouncing dictionary in CMUdict format [default: <data-dir>/lexicon.dict]
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// N-gram language model [default: <data-dir>/lm.imly]
    #[arg(long, value_name = "FILE")]
    lm: Option<PathBuf>,
    /// Channel parameter file [default: <data-dir>/channel.txt]
    #[arg(long, value_name = "FILE")]
    channel: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// key=value config file; flags given on the command line override it
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed recorded in the result [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Recognize the unseparated mix instead of the separated foreground
    #[arg(long)]
    no_separation: bool,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// Word decoder beam width [default: 64]
    #[arg(long, value_name = "N")]
    beam: Option<usize>,
    /// Language model weight λ [default: 1]
    #[arg(long, value_name = "X")]
    lm_weight: Option<f64>,
    /// Log-score added per emitted word [default: 0]
    #[arg(long, value_name = "X", allow_negative_numbers = true)]
    word_penalty: Option<f64>,
    /// Candidates kept per segment [default: 5]
    #[arg(long, value_name = "N")]
    n_best: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a WAV into foreground and background; prints the foreground energy ratio
    Separate {
        /// Input WAV file
        input: PathBuf,
        /// Write the foreground WAV here
        #[arg(long, value_name = "FILE")]
        fg: Option<PathBuf>,
        /// Write the background WAV here
        #[arg(long, value_name = "FILE")]
        bg: Option<PathBuf>,
        /// Write the background mask (frames x bins) as an IMLY container
        #[arg(long, value_name = "FILE")]
        mask: Option<PathBuf>,
        /// key=value config file (separator settings)
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Compute log-mel features and write them as an IMLY container
    Features {
        /// Input WAV file
        input: PathBuf,
        /// Output file
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// key=value config file (feature settings)
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Train the acoustic model on synthetic phoneme-coded audio or a manifest
    TrainAm {
        /// Number of synthetic examples (used when no manifest is given)
        #[arg(long, value_name = "N", default_value_t = 20)]
        synthetic: usize,
        /// Lines of `audio.wav<TAB>PH PH PH ...`, paths relative to the manifest
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        #[arg(long, default_value_t = 0.01)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Print the phoneme sequence recognized in a WAV
    Transcribe {
        /// Input WAV file
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Acoustic model checkpoint [default: <data-dir>/am.imly]
        #[arg(long, value_name = "FILE")]
        am: Option<PathBuf>,
        /// Directory holding am.imly [default: $IMLY_DATA_DIR, then ./data]
        #[arg(long, value_name = "DIR")]
        data_dir: Option<PathBuf>,
        /// CTC prefix beam width [default: 16]
        #[arg(long, value_name = "N")]
        beam: Option<usize>,
        /// Also write the posteriorgram as an IMLY container
        #[arg(long, value_name = "FILE")]
        posteriorgram: Option<PathBuf>,
        /// Write the output here instead of stdout
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Train an n-gram language model from a lyrics file (one line per lyric line)
    TrainLm {
        /// Lyrics text file
        corpus: PathBuf,
        /// Keyword list, one per line; lines containing any keyword are dropped
        #[arg(long, value_name = "FILE")]
        moderation: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        order: usize,
        /// Add-k smoothing constant
        #[arg(long, default_value_t = 0.1)]
        smoothing: f64,
        /// Output file
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Estimate channel rates by EM from canonical/observed phoneme pairs
    EstimateChannel {
        /// Lines of `CANONICAL PHONEMES | OBSERVED PHONEMES`
        #[arg(required_unless_present = "simulate")]
        pairs: Option<PathBuf>,
        /// Instead of reading pairs, corrupt N random lexicon words with the given rates
        #[arg(long, value_name = "N", requires = "lexicon")]
        simulate: Option<usize>,
        #[arg(long, value_name = "FILE")]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        p_sub: f64,
        #[arg(long, default_value_t = 0.05)]
        p_del: f64,
        #[arg(long, default_value_t = 0.05)]
        p_ins: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_INSERTIONS)]
        max_insertions: usize,
        /// Write the output here instead of stdout
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline on a WAV and emit the result JSON
    Imagine {
        /// Input WAV file
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        decode: DecodeArgs,
        #[command(flatten)]
        models: ModelArgs,
        /// Write the output here instead of stdout
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP job API
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        decode: DecodeArgs,
        #[command(flatten)]
        models: ModelArgs,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| dispatch(cli)));
    match outcome {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("imly: {e}");
            e.exit_code()
        }
        Err(_) => {
            eprintln!("imly: internal error");
            3
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Separate { input, fg, bg, mask, config } => cmd_separate(&input, fg, bg, mask, config),
        Command::Features { input, out, config } => cmd_features(&input, &out, config),
        Command::TrainAm { synthetic, manifest, epochs, hidden, learning_rate, seed, out } => {
            let cfg = TrainConfig { epochs, hidden, learning_rate, seed, ..TrainConfig::default() };
            cmd_train_am(synthetic, manifest, &cfg, &out)
        }
        Command::Transcribe { input, config, am, data_dir, beam, posteriorgram, out } => {
            let mut cfg = load_config(&config, None, None)?;
            if let Some(b) = beam {
                cfg.phoneme_beam = b;
            }
            if data_dir.is_some() {
                cfg.paths.data_dir = data_dir;
            }
            if am.is_some() {
                cfg.paths.acoustic_model = am;
            }
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            cmd_transcribe(&input, &cfg, posteriorgram, out)
        }
        Command::TrainLm { corpus, moderation, order, smoothing, out } => cmd_train_lm(&corpus, moderation, order, smoothing, &out),
        Command::EstimateChannel { pairs, simulate, lexicon, p_sub, p_del, p_ins, seed, max_insertions, out } => {
            let pairs = match (pairs, simulate) {
                (Some(path), None) => read_pairs(&path)?,
                (None, Some(n)) => {
                    let ch = ChannelParams::new(p_sub, p_del, p_ins).map_err(|e| CliError::Usage(e.to_string()))?;
                    simulate_pairs(&lexicon.expect("clap enforces --lexicon"), n, &ch, max_insertions, seed)?
                }
                _ => return Err(CliError::Usage("give either a pairs file or --simulate, not both".into())),
            };
            let est = estimate_channel(&pairs, max_insertions).map_err(data)?;
            emit(out.as_deref(), est.to_string().as_bytes())
        }
        Command::Imagine { input, config, decode, models, out } => {
            let cfg = load_config(&config, Some(&decode), Some(&models))?;
            let bytes = read(&input)?;
            let pipeline = Pipeline::new(Models::load(&cfg.paths).map_err(data)?);
            let result = pipeline.imagine_wav(&bytes, &cfg).map_err(data)?;
            emit(out.as_deref(), result.to_json().as_bytes())
        }
        Command::Serve { port, host, config, decode, models } => {
            let cfg = load_config(&config, Some(&decode), Some(&models))?;
            let pipeline = Arc::new(Pipeline::new(Models::load(&cfg.paths).map_err(data)?));
            cmd_serve(&host, port, pipeline, cfg)
        }
    }
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    String::from_utf8(read(path)?).map_err(|_| CliError::Data(format!("{}: not UTF-8", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes to `out` when given, otherwise to stdout.
fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => write(p, bytes),
        None => std::io::stdout().write_all(bytes).map_err(|e| CliError::Internal(e.to_string())),
    }
}

fn read_wav(path: &Path) -> CliResult<AudioBuffer> {
    decode_wav(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn config_file(path: Option<&Path>) -> CliResult<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(p) = path {
        cfg.apply_text(&read_text(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
    }
    Ok(cfg)
}

/// Config file first, then flags.
fn load_config(args: &ConfigArgs, decode: Option<&DecodeArgs>, models: Option<&ModelArgs>) -> CliResult<PipelineConfig> {
    let mut cfg = config_file(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_separation {
        cfg.use_separation = false;
    }
    if let Some(d) = decode {
        if let Some(v) = d.beam {
            cfg.decoder.beam_width = v;
        }
        if let Some(v) = d.lm_weight {
            cfg.decoder.lm_weight = v;
        }
        if let Some(v) = d.word_penalty {
            cfg.decoder.word_insertion_penalty = v;
        }
        if let Some(v) = d.n_best {
            cfg.decoder.n_best = v;
        }
    }
    if let Some(m) = models {
        let p = &mut cfg.paths;
        for (slot, flag) in [
            (&mut p.data_dir, &m.data_dir),
            (&mut p.acoustic_model, &m.am),
            (&mut p.lexicon, &m.lexicon),
            (&mut p.lm, &m.lm),
            (&mut p.channel, &m.channel),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_separate(input: &Path, fg: Option<PathBuf>, bg: Option<PathBuf>, mask: Option<PathBuf>, config: Option<PathBuf>) -> CliResult<()> {
    let cfg = config_file(config.as_deref())?;
    let buf = resample(&read_wav(input)?, WORKING_RATE).map_err(data)?;
    let sep = separate(&buf, &cfg.separator).map_err(data)?;
    if let Some(p) = fg {
        write(&p, &encode_wav(&sep.foreground))?;
    }
    if let Some(p) = bg {
        write(&p, &encode_wav(&sep.background))?;
    }
    if let Some(p) = mask {
        let m = &sep.background_mask;
        let mut c = Container::default();
        c.push(Tensor::from_f64("background_mask", vec![m.rows(), m.cols()], m.as_slice()));
        write(&p, &c.to_bytes())?;
    }
    let total = buf.energy();
    let ratio = if total > 0.0 { sep.foreground.energy() / total } else { 0.0 };
    println!("foreground_energy_ratio={ratio:.6}");
    Ok(())
}

fn cmd_features(input: &Path, out: &Path, config: Option<PathBuf>) -> CliResult<()> {
    let cfg = config_file(config.as_deref())?;
    let buf = resample(&read_wav(input)?, WORKING_RATE).map_err(data)?;
    let feats = featurize(&buf, &cfg.features).map_err(data)?;
    let mut c = Container::default();
    c.push(Tensor::from_f64("log_mel", vec![feats.frames(), feats.width()], feats.values.as_slice()));
    c.push(Tensor::from_f64("frame_hop_seconds", vec![1], &[feats.frame_hop_seconds]));
    write(out, &c.to_bytes())?;
    eprintln!("{} frames x {} mel bands", feats.frames(), feats.width());
    Ok(())
}

fn read_manifest(path: &Path) -> CliResult<Vec<(AudioBuffer, PhonemeSequence)>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (wav, phones) =
            line.split_once('\t').ok_or_else(|| CliError::Data(format!("{}:{}: expected path<TAB>phonemes", path.display(), i + 1)))?;
        let seq = PhonemeSequence::parse(phones).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let buf = resample(&read_wav(&base.join(wav))?, WORKING_RATE).map_err(data)?;
        out.push((buf, seq));
    }
    Ok(out)
}

fn cmd_train_am(synthetic: usize, manifest: Option<PathBuf>, cfg: &TrainConfig, out: &Path) -> CliResult<()> {
    let pipeline_cfg = PipelineConfig::default();
    let examples = match manifest {
        Some(p) => read_manifest(&p)?,
        None => synth::corpus(synthetic, 5, 8, &synth::SynthConfig::default(), cfg.seed),
    };
    let dataset = examples
        .iter()
        .map(|(a, s)| featurize(a, &pipeline_cfg.features).map(|f| (f, s.clone())))
        .collect::<Result<Vec<_>, _>>()
        .map_err(data)?;
    eprintln!("training on {} examples", dataset.len());
    let trained = train_with_progress(&dataset, cfg, |epoch, loss| eprintln!("epoch {epoch}: mean loss {loss:.4}")).map_err(data)?;
    let mut pairs = Vec::with_capacity(dataset.len());
    for (f, s) in &dataset {
        let post = forward(f, &trained.params).map_err(|e| CliError::Internal(e.to_string()))?;
        pairs.push((s.clone(), greedy_decode(&post)));
    }
    AcousticModel { params: trained.params }.save(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    println!("train_token_accuracy={:.4}", token_accuracy(&pairs));
    Ok(())
}

fn cmd_transcribe(input: &Path, cfg: &PipelineConfig, posteriorgram: Option<PathBuf>, out: Option<PathBuf>) -> CliResult<()> {
    let am_path = cfg.paths.acoustic_model();
    let am = AcousticModel::from_bytes(&read(&am_path)?).map_err(|e| CliError::Data(format!("{}: {e}", am_path.display())))?;
    let mut buf = resample(&read_wav(input)?, WORKING_RATE).map_err(data)?;
    if cfg.use_separation {
        buf = separate(&buf, &cfg.separator).map_err(data)?.foreground;
    }
    let feats = featurize(&buf, &cfg.features).map_err(data)?;
    let post = forward(&feats, &am.params).map_err(data)?;
    if let Some(p) = posteriorgram {
        write(&p, &post.to_container().to_bytes())?;
    }
    let best = beam_decode(&post, cfg.phoneme_beam).into_iter().next().map(|(s, _)| s).unwrap_or_default();
    emit(out.as_deref(), format!("{best}\n").as_bytes())
}

fn cmd_train_lm(corpus: &Path, moderation: Option<PathBuf>, order: usize, smoothing: f64, out: &Path) -> CliResult<()> {
    let text = read_text(corpus)?;
    let mut lines: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if let Some(p) = moderation {
        let list = ModerationList::parse(&read_text(&p)?);
        let moderated = moderate_corpus(&lines, &list).map_err(data)?;
        eprintln!("moderation removed {} of {} lines", moderated.removed, lines.len());
        lines = moderated.kept;
    }
    let lm = train_ngram(&lines, order, smoothing).map_err(data)?;
    write(out, &lm.to_bytes())?;
    eprintln!("order {order} model over {} lines, vocabulary {}", lines.len(), lm.vocab().len());
    Ok(())
}

fn read_pairs(path: &Path) -> CliResult<Vec<(PhonemeSequence, PhonemeSequence)>> {
    let mut pairs = Vec::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: String| CliError::Data(format!("{}:{}: {m}", path.display(), i + 1));
        let (can, obs) = line.split_once('|').ok_or_else(|| bad("expected CANONICAL | OBSERVED".into()))?;
        let can = PhonemeSequence::parse(can).map_err(|e| bad(e.to_string()))?;
        let obs = PhonemeSequence::parse(obs).map_err(|e| bad(e.to_string()))?;
        pairs.push((can, obs));
    }
    Ok(pairs)
}

fn simulate_pairs(
    lexicon: &Path,
    n: usize,
    ch: &ChannelParams,
    cap: usize,
    seed: u64,
) -> CliResult<Vec<(PhonemeSequence, PhonemeSequence)>> {
    let lex = parse_lexicon(&read_text(lexicon)?).map_err(|e| CliError::Data(format!("{}: {e}", lexicon.display())))?;
    let prons: Vec<PhonemeSequence> = lex.trie().entries().into_iter().map(|(_, p)| PhonemeSequence::new(p)).collect();
    if prons.is_empty() {
        return Err(CliError::Data(format!("{}: lexicon is empty", lexicon.display())));
    }
    Ok((0..n as u64)
        .map(|i| {
            let can = prons[(i as usize * 7919 + seed as usize) % prons.len()].clone();
            let obs = corrupt(&can, ch, cap, seed.wrapping_mul(1_000_003).wrapping_add(i));
            (can, obs)
        })
        .collect())
}

fn cmd_serve(host: &str, port: u16, pipeline: Arc<Pipeline>, defaults: PipelineConfig) -> CliResult<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await.map_err(|e| CliError::Data(format!("bind {host}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::Internal(e.to_string()))?;
        eprintln!("listening on http://{addr}");
        let app = service::router(pipeline, defaults, ServiceConfig::default());
        service::serve(listener, app).await.map_err(|e| CliError::Internal(e.to_string()))
    })
}
