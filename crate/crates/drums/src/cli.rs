//! The `gdrums` command line.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gesture_drums_core::infer::{generate, resume_trace, GenerationRequest};
use gesture_drums_core::rhythm::RhythmConfig;
use gesture_drums_core::sched::GenerationConfig;
use gesture_drums_core::synth::CorpusConfig;
use gesture_drums_core::SAMPLE_RATE;

use crate::checkpoint::{load_codec, load_model, save_codec, save_model};
use crate::config::PipelineConfig;
use crate::corpus::{read_corpus, write_corpus};
use crate::error::{Error, Result};
use crate::features::FeatureDump;
use crate::pipeline::{cache_dir_from_env, encode_corpus, generate_set, preflight, prompt_pairs, train_codec_stage, train_model_stage};
use crate::report::{evaluate_run, write_manifest, PromptEntry};
use crate::trace::TraceFile;
use crate::wav::{read_wav_at, write_wav, WavFormat};

#[derive(Debug, Parser)]
#[command(name = "gdrums", version, about = "Rhythm-prompted drum generation with a masked token transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic drum corpus with onset sidecars.
    SynthData(SynthDataArgs),
    /// Extract rhythm features from a WAV into a GDF1 dump.
    Features(FeaturesArgs),
    /// Train the residual-VQ codec on a directory of WAVs.
    TrainCodec(TrainCodecArgs),
    /// Train the masked token transformer.
    Train(TrainArgs),
    /// Generate drums from a timbre prompt and a rhythm prompt.
    Generate(GenerateArgs),
    /// Generate one clip per prompt pair drawn from a held-out corpus.
    GenerateSet(GenerateSetArgs),
    /// Decode a stored generation trace again.
    Resume(ResumeArgs),
    /// Score a directory of generations.
    Eval(EvalArgs),
    /// Print a shipped config (`desk` or `paper`).
    ShowConfig {
        #[arg(default_value = "desk")]
        name: String,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// `desk`, `paper`, or a path to a TOML config.
    #[arg(long, default_value = "desk")]
    pub config: String,
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub clips: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3.0)]
    pub duration: f64,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub bands: u8,
    /// Adaptive energy split (the default).
    #[arg(long, overrides_with = "fixed")]
    pub adaptive: bool,
    /// Uniform split over mel bins.
    #[arg(long)]
    pub fixed: bool,
    /// Also write a plain-text export next to the dump.
    #[arg(long)]
    pub text: bool,
}

#[derive(Debug, Args)]
pub struct TrainCodecArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub codec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Line-delimited training records (default: `<out>.log.jsonl`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Write an intermediate checkpoint every N steps.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecodingArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2.0)]
    pub cfg_weight: f32,
    #[arg(long, default_value_t = 10.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 1.0)]
    pub causal_bias: f64,
    /// Iterations per codebook, coarse to fine.
    #[arg(long, value_delimiter = ',', default_value = "8,8,8,8,8,4,4,4,4")]
    pub schedule: Vec<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub include_prefix: bool,
}

impl DecodingArgs {
    fn to_config(&self) -> GenerationConfig {
        GenerationConfig {
            iters_per_codebook: self.schedule.clone(),
            cfg_weight: self.cfg_weight,
            temperature: self.temperature,
            causal_bias: self.causal_bias,
            seed: self.seed,
            top_k: self.top_k,
            include_prefix: self.include_prefix,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub codec: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub timbre: PathBuf,
    #[arg(long)]
    pub rhythm: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Trace file (default: `<out>.gdt`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub decoding: DecodingArgs,
}

#[derive(Debug, Args)]
pub struct GenerateSetArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub codec: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Held-out corpus the prompts are cut from.
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, default_value_t = 1.0)]
    pub timbre_secs: f64,
    #[arg(long, default_value_t = 2.0)]
    pub rhythm_secs: f64,
    #[command(flatten)]
    pub decoding: DecodingArgs,
}

#[derive(Debug, Args)]
pub struct ResumeArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub codec: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory holding generations and their `prompts.json`.
    #[arg(long)]
    pub generations: PathBuf,
    /// Reference WAVs (random anchors and the KAD reference set).
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` and runs the command, returning the process exit code.
/// Errors go to stderr as one `ERR_<KIND>: ...` line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            eprintln!("{}", Error::usage(first).line());
            return 2;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.kind.exit_code()
        }
    }
}

fn status(msg: impl AsRef<str>) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{}", msg.as_ref());
}

fn default_sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::SynthData(a) => {
            let cfg = CorpusConfig { clips: a.clips, seed: a.seed, duration_secs: a.duration, ..CorpusConfig::default() };
            let sidecars = write_corpus(&a.out, &cfg)?;
            println!("wrote {} clips to {}", sidecars.len(), a.out.display());
        }
        Command::Features(a) => {
            let clip = read_wav_at(&a.input, SAMPLE_RATE)?;
            let adaptive = !a.fixed || a.adaptive;
            let dump = FeatureDump::extract(&clip, RhythmConfig::with_bands(usize::from(a.bands), adaptive))?;
            dump.save(&a.output)?;
            if a.text {
                let path = default_sibling(&a.output, ".txt");
                std::fs::write(&path, dump.to_text()).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
            }
            let freqs: Vec<String> = dump.split_frequencies().iter().map(|f| format!("{f:.1}")).collect();
            println!("split bins {:?} (mel centers {} Hz)", dump.split.split_bins(), freqs.join(", "));
        }
        Command::TrainCodec(a) => {
            let mut cfg = PipelineConfig::resolve(&a.config.config)?;
            if let Some(s) = a.steps {
                cfg.codec_train.steps = s;
            }
            if let Some(s) = a.seed {
                cfg.codec_train.seed = s;
            }
            let clips = read_corpus(&a.data)?;
            if clips.is_empty() {
                return Err(Error::data(format!("{}: no WAV files", a.data.display())));
            }
            let every = (cfg.codec_train.steps / 20).max(1);
            let codec = train_codec_stage(&clips, &cfg, |s| {
                if s.step % every == 0 {
                    status(format!("codec step {} loss {:.4} l1 {:.4} spectral {:.4}", s.step, s.loss, s.l1, s.spectral));
                }
            })?;
            save_codec(&a.out, &codec)?;
            println!("codec {:016x} -> {}", gesture_drums_core::codec::Codec::fingerprint(&codec), a.out.display());
        }
        Command::Train(a) => {
            let mut cfg = PipelineConfig::resolve(&a.config.config)?;
            if let Some(s) = a.steps {
                cfg.train.steps = s;
            }
            if let Some(s) = a.seed {
                cfg.train.seed = s;
            }
            let codec = load_codec(&a.codec)?;
            let probe = gesture_drums_core::model::MaskedTransformer::zeroed(cfg.model.clone())?;
            preflight(&cfg, &probe, &codec)?;
            drop(probe);
            let clips = read_corpus(&a.data)?;
            let corpus = encode_corpus(&clips, &codec, cache_dir_from_env().as_deref())?;
            let log_path = a.log.unwrap_or_else(|| default_sibling(&a.out, ".log.jsonl"));
            let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path).map_err(|e| Error::data(format!("{}: {e}", log_path.display())))?);
            let mut io_err = None;
            let model = train_model_stage(&corpus, &cfg, |r, m| {
                for rec in &r.records {
                    if let Err(e) = writeln!(log, "{}", serde_json::to_string(rec).expect("record")) {
                        io_err.get_or_insert(e);
                    }
                }
                if a.checkpoint_every.is_some_and(|k| k > 0 && (r.step + 1) % k == 0) {
                    if let Err(e) = save_model(default_sibling(&a.out, &format!(".step{}", r.step + 1)), m) {
                        io_err.get_or_insert(std::io::Error::other(e.message));
                    }
                }
                if r.step % 50 == 0 {
                    status(format!("step {} loss {:.4} lr {:.2e}", r.step, r.loss, r.lr));
                }
            })?;
            log.flush()?;
            if let Some(e) = io_err {
                return Err(e.into());
            }
            save_model(&a.out, &model)?;
            println!("model {:016x} -> {}", model.fingerprint(), a.out.display());
        }
        Command::Generate(a) => {
            let cfg = PipelineConfig::resolve(&a.config.config)?;
            let codec = load_codec(&a.codec)?;
            let model = load_model(&a.model)?;
            let gen = a.decoding.to_config();
            preflight(&PipelineConfig { generation: gen.clone(), ..cfg.clone() }, &model, &codec)?;
            let timbre = read_wav_at(&a.timbre, SAMPLE_RATE)?;
            let rhythm = read_wav_at(&a.rhythm, SAMPLE_RATE)?;
            let req = GenerationRequest::new(timbre, rhythm, gen, cfg.features);
            let out = generate(&req, &model, &codec)?;
            write_wav(&a.out, &out.audio, WavFormat::Float32)?;
            let trace_path = a.trace.unwrap_or_else(|| default_sibling(&a.out, ".gdt"));
            TraceFile::new(&req, out.trace).save(&trace_path)?;
            println!("{} ({:.2} s), trace {}", a.out.display(), out.audio.duration_secs(), trace_path.display());
        }
        Command::GenerateSet(a) => {
            let cfg = PipelineConfig::resolve(&a.config.config)?;
            let codec = load_codec(&a.codec)?;
            let model = load_model(&a.model)?;
            let gen = a.decoding.to_config();
            let run_cfg = PipelineConfig { generation: gen.clone(), ..cfg };
            preflight(&run_cfg, &model, &codec)?;
            let clips = read_corpus(&a.prompts)?;
            let pairs = prompt_pairs(&clips, a.count, a.timbre_secs, a.rhythm_secs)?;
            let outs = generate_set(&pairs, &run_cfg, &gen, &model, &codec)?;
            std::fs::create_dir_all(&a.out)?;
            let mut entries = Vec::with_capacity(outs.len());
            for (i, (pair, out)) in pairs.iter().zip(outs).enumerate() {
                let names = [format!("gen_{i:05}.wav"), format!("rhythm_{i:05}.wav"), format!("timbre_{i:05}.wav")];
                write_wav(a.out.join(&names[0]), &out.audio, WavFormat::Float32)?;
                write_wav(a.out.join(&names[1]), &pair.rhythm, WavFormat::Float32)?;
                write_wav(a.out.join(&names[2]), &pair.timbre, WavFormat::Float32)?;
                let g = GenerationConfig { seed: gen.seed.wrapping_add(i as u64), ..gen.clone() };
                let req = GenerationRequest::new(pair.timbre.clone(), pair.rhythm.clone(), g, run_cfg.features);
                TraceFile::new(&req, out.trace).save(a.out.join(format!("gen_{i:05}.gdt")))?;
                let [generation, rhythm, timbre] = names.map(PathBuf::from);
                entries.push(PromptEntry { generation, rhythm, timbre });
            }
            write_manifest(&a.out, &entries)?;
            println!("wrote {} generations to {}", entries.len(), a.out.display());
        }
        Command::Resume(a) => {
            let trace = TraceFile::load(&a.trace)?;
            let codec = load_codec(&a.codec)?;
            let model = load_model(&a.model)?;
            let audio = resume_trace(&trace.trace, model.fingerprint(), &codec)?;
            write_wav(&a.out, &audio, WavFormat::Float32)?;
            println!("{}", a.out.display());
        }
        Command::Eval(a) => {
            let report = evaluate_run(&a.generations, &a.references, a.resamples, a.seed)?;
            report.write(&a.out)?;
            for m in &report.missing {
                status(format!("missing: {m}"));
            }
            for row in &report.summary {
                println!("{:<28} {:>8.4}  [{:.4}, {:.4}]", row.metric, row.interval.mean, row.interval.low, row.interval.high);
            }
            if let Some(k) = report.kad {
                println!("{:<28} {:>8.4}", "kad", k);
            }
        }
        Command::ShowConfig { name } => {
            print!("{}", PipelineConfig::resolve(&name)?.to_toml());
        }
    }
    Ok(())
}
