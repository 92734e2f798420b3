//! Command-line orchestration: synthetic corpus generation, feature
//! extraction, segmentation, pair building, training, evaluation, and
//! tradeoff sweeps, wired by an optional JSON configuration file.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or protocol
//! errors. All file outputs are written atomically (temp file + rename).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::audio;
use crate::dpo::{self, DpoConfig, PairExample};
use crate::metrics::{self, BleuAccumulator, SweepSegmenter, SweepSystem};
use crate::pairs::{self, GenConfig, PairConfig};
use crate::policy::{self, DecodeConfig, DEFAULT_CONTEXT_FRAMES};
use crate::segmenters::{self, VadConfig};
use crate::synth::{self, SynthSpec};
use crate::translate::{run_pipeline, SegmentSource, TimingConfig, TranslatorBackend};
use crate::util::write_atomic;

pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

fn data(err: impl std::fmt::Display) -> CliError {
    CliError::Data(err.to_string())
}

#[derive(Parser)]
#[command(
    name = "simulseg",
    version,
    about = "Segmentation lab for simultaneous speech translation"
)]
pub struct Cli {
    /// JSON config file; explicit flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (Talk JSON + Feature JSON per talk)
    Synth {
        /// SynthSpec JSON file (defaults apply when omitted)
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        n_talks: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract frame features from a 16 kHz mono PCM16 WAV file
    Features {
        #[arg(long, value_name = "FILE")]
        wav: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, default_value_t = audio::DEFAULT_HOP_S)]
        hop_s: f64,
        #[arg(long, default_value_t = audio::DEFAULT_WIN_S)]
        win_s: f64,
    },
    /// Produce a segmentation and print/write it as Segment TSV
    Segment {
        #[arg(long, value_enum)]
        method: Method,
        /// Clip duration in seconds (fixed/external)
        #[arg(long)]
        duration: Option<f64>,
        /// Chunk length in seconds (fixed)
        #[arg(long)]
        chunk_s: Option<f64>,
        /// Feature JSON file (vad/policy)
        #[arg(long, value_name = "FILE")]
        features: Option<PathBuf>,
        /// Policy JSON file (policy)
        #[arg(long, value_name = "FILE")]
        policy: Option<PathBuf>,
        /// External Segment TSV file (external)
        #[arg(long, value_name = "FILE")]
        external: Option<PathBuf>,
        #[arg(long)]
        energy_offset: Option<f64>,
        #[arg(long)]
        min_silence: Option<f64>,
        #[arg(long)]
        min_seg: Option<f64>,
        #[arg(long)]
        max_seg: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        window_s: Option<f64>,
        /// Decode hop in seconds (policy)
        #[arg(long)]
        decode_hop_s: Option<f64>,
        /// Output TSV file (stdout when omitted)
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Build preference pairs from a corpus and write them as JSONL
    Pairs {
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Directory of external Segment TSVs, one `<talk-id>.tsv` per talk
        #[arg(long, value_name = "DIR")]
        external: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        max_pairs: Option<usize>,
    },
    /// Train the boundary policy on a pairs file
    Train {
        #[arg(long, value_name = "FILE")]
        pairs: Option<PathBuf>,
        /// Corpus directory holding the feature files the pairs reference
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out_policy: Option<PathBuf>,
        /// Training report JSON (defaults next to the policy file)
        #[arg(long, value_name = "FILE")]
        out_report: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        context_frames: Option<usize>,
    },
    /// Evaluate a policy on a corpus and write a report JSON
    Eval {
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        policy: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Sweep systems over knob grids and write a tradeoff CSV
    Sweep {
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        /// Systems JSON file (see README for the schema)
        #[arg(long, value_name = "FILE")]
        systems: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Method {
    Fixed,
    Vad,
    Policy,
    External,
}

/// Config file contents; every section is optional and mirrors the
/// corresponding module's config struct.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub decode: DecodeConfig,
    pub dpo: DpoConfig,
    pub gen: GenConfig,
    pub pairing: PairConfig,
    pub timing: TimingConfig,
    pub synth: SynthSpec,
    /// When set, seeds every stochastic component unless a flag overrides it
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub corpus_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub policy_file: Option<PathBuf>,
    pub pairs_file: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {}", path.display(), e)))?;
    let mut config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("config {}: {}", path.display(), e)))?;
    if let Some(seed) = config.seed {
        config.dpo.seed = seed;
        config.gen.seed = seed;
        config.synth.seed = seed;
    }
    Ok(config)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth {
            spec,
            out,
            n_talks,
            seed,
        } => cmd_synth(&config, spec, out, n_talks, seed),
        Command::Features {
            wav,
            out,
            hop_s,
            win_s,
        } => cmd_features(wav, out, hop_s, win_s),
        Command::Segment {
            method,
            duration,
            chunk_s,
            features,
            policy,
            external,
            energy_offset,
            min_silence,
            min_seg,
            max_seg,
            threshold,
            window_s,
            decode_hop_s,
            out,
        } => cmd_segment(
            &config,
            method,
            SegmentArgs {
                duration,
                chunk_s,
                features,
                policy,
                external,
                energy_offset,
                min_silence,
                min_seg,
                max_seg,
                threshold,
                window_s,
                decode_hop_s,
                out,
            },
        ),
        Command::Pairs {
            corpus,
            out,
            external,
            seed,
            lambda,
            margin,
            max_pairs,
        } => cmd_pairs(
            &config, corpus, out, external, seed, lambda, margin, max_pairs,
        ),
        Command::Train {
            pairs,
            corpus,
            out_policy,
            out_report,
            beta,
            epochs,
            lr,
            seed,
            context_frames,
        } => cmd_train(
            &config,
            pairs,
            corpus,
            out_policy,
            out_report,
            beta,
            epochs,
            lr,
            seed,
            context_frames,
        ),
        Command::Eval {
            corpus,
            policy,
            out,
            threshold,
        } => cmd_eval(&config, corpus, policy, out, threshold),
        Command::Sweep {
            corpus,
            systems,
            out,
        } => cmd_sweep(&config, corpus, systems, out),
    }
}

fn require<T>(value: Option<T>, what: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing {}", what)))
}

fn cmd_synth(
    config: &RunConfig,
    spec_path: Option<PathBuf>,
    out: PathBuf,
    n_talks: Option<usize>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let mut spec = match spec_path {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| {
                CliError::Usage(format!("cannot read spec {}: {}", path.display(), e))
            })?;
            serde_json::from_str::<SynthSpec>(&text)
                .map_err(|e| CliError::Data(format!("spec {}: {}", path.display(), e)))?
        }
        None => config.synth.clone(),
    };
    if let Some(n) = n_talks {
        spec.n_talks = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let ids = synth::synth_corpus(&spec, &out).map_err(data)?;
    println!("wrote {} talks to {}", ids.len(), out.display());
    Ok(())
}

fn cmd_features(wav: PathBuf, out: PathBuf, hop_s: f64, win_s: f64) -> Result<(), CliError> {
    let clip = audio::load_wav(&wav).map_err(data)?;
    let features = audio::extract_features(&clip, hop_s, win_s).map_err(data)?;
    audio::save_features_json(&features, &out).map_err(data)?;
    println!(
        "wrote {} frames x {} features to {}",
        features.len(),
        features.dim,
        out.display()
    );
    Ok(())
}

struct SegmentArgs {
    duration: Option<f64>,
    chunk_s: Option<f64>,
    features: Option<PathBuf>,
    policy: Option<PathBuf>,
    external: Option<PathBuf>,
    energy_offset: Option<f64>,
    min_silence: Option<f64>,
    min_seg: Option<f64>,
    max_seg: Option<f64>,
    threshold: Option<f64>,
    window_s: Option<f64>,
    decode_hop_s: Option<f64>,
    out: Option<PathBuf>,
}

fn cmd_segment(config: &RunConfig, method: Method, args: SegmentArgs) -> Result<(), CliError> {
    let seg = match method {
        Method::Fixed => {
            let duration = require(args.duration, "--duration for --method fixed")?;
            let chunk = require(args.chunk_s, "--chunk-s for --method fixed")?;
            segmenters::fixed_length(duration, chunk).map_err(data)?
        }
        Method::Vad => {
            let path = require(args.features, "--features for --method vad")?;
            let features = audio::load_features_json(&path).map_err(data)?;
            let mut cfg = VadConfig::default();
            if let Some(v) = args.energy_offset {
                cfg.energy_floor_offset_nats = v;
            }
            if let Some(v) = args.min_silence {
                cfg.min_silence_s = v;
            }
            if let Some(v) = args.min_seg {
                cfg.min_seg_s = v;
            }
            if let Some(v) = args.max_seg {
                cfg.max_seg_s = v;
            }
            segmenters::vad_segment(&features, &cfg).map_err(data)?
        }
        Method::Policy => {
            let feat_path = require(args.features, "--features for --method policy")?;
            let policy_path = args.policy.or_else(|| config.paths.policy_file.clone());
            let policy_path = require(policy_path, "--policy for --method policy")?;
            let features = audio::load_features_json(&feat_path).map_err(data)?;
            let params = policy::load_policy_json(&policy_path).map_err(data)?;
            let mut cfg = config.decode.clone();
            if let Some(v) = args.threshold {
                cfg.threshold = v;
            }
            if let Some(v) = args.window_s {
                cfg.window_s = v;
            }
            if let Some(v) = args.decode_hop_s {
                cfg.hop_s = v;
            }
            if let Some(v) = args.min_seg {
                cfg.min_seg_s = v;
            }
            if let Some(v) = args.max_seg {
                cfg.max_seg_s = v;
            }
            let (seg, _) = policy::decode_streaming(&params, &features, &cfg).map_err(data)?;
            seg
        }
        Method::External => {
            let path = require(args.external, "--external for --method external")?;
            let duration = require(args.duration, "--duration for --method external")?;
            segmenters::load_external_segmentation(&path, duration).map_err(data)?
        }
    };

    let mut tsv = String::new();
    for segment in seg.segments() {
        writeln!(tsv, "{}\t{}", segment.start_s, segment.end_s).expect("write to string");
    }
    match args.out {
        Some(path) => {
            write_atomic(&path, tsv.as_bytes()).map_err(data)?;
            println!(
                "wrote {} segments to {}",
                seg.segment_count(),
                path.display()
            );
        }
        None => print!("{}", tsv),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_pairs(
    config: &RunConfig,
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
    external: Option<PathBuf>,
    seed: Option<u64>,
    lambda: Option<f64>,
    margin: Option<f64>,
    max_pairs: Option<usize>,
) -> Result<(), CliError> {
    let corpus_dir = require(
        corpus.or_else(|| config.paths.corpus_dir.clone()),
        "--corpus",
    )?;
    let out_path = require(out.or_else(|| config.paths.pairs_file.clone()), "--out")?;
    let mut gen = config.gen.clone();
    if let Some(s) = seed {
        gen.seed = s;
    }
    let mut pairing = config.pairing.clone();
    if let Some(v) = lambda {
        pairing.lambda_bleu_per_s = v;
    }
    if let Some(v) = margin {
        pairing.min_margin = v;
    }
    if let Some(v) = max_pairs {
        pairing.max_pairs_per_utterance = v;
    }

    let corpus = synth::load_corpus(&corpus_dir).map_err(data)?;
    let mut all = Vec::new();
    for (features, talk) in &corpus {
        let externals: Vec<PathBuf> = match &external {
            Some(dir) => {
                let candidate = dir.join(format!("{}.tsv", talk.id));
                if candidate.is_file() {
                    vec![candidate]
                } else {
                    vec![]
                }
            }
            None => vec![],
        };
        let talk_pairs =
            pairs::pairs_for_talk(features, talk, &externals, &gen, &pairing, &config.timing)
                .map_err(data)?;
        all.extend(talk_pairs);
    }
    pairs::save_pairs(&all, &out_path).map_err(data)?;
    println!(
        "wrote {} pairs from {} talks to {}",
        all.len(),
        corpus.len(),
        out_path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: &RunConfig,
    pairs_path: Option<PathBuf>,
    corpus: Option<PathBuf>,
    out_policy: Option<PathBuf>,
    out_report: Option<PathBuf>,
    beta: Option<f64>,
    epochs: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    context_frames: Option<usize>,
) -> Result<(), CliError> {
    let pairs_path = require(
        pairs_path.or_else(|| config.paths.pairs_file.clone()),
        "--pairs",
    )?;
    let corpus_dir = require(
        corpus.or_else(|| config.paths.corpus_dir.clone()),
        "--corpus",
    )?;
    let out_policy = require(
        out_policy.or_else(|| config.paths.policy_file.clone()),
        "--out-policy",
    )?;
    let mut dpo_cfg = config.dpo.clone();
    if let Some(v) = beta {
        dpo_cfg.beta = v;
    }
    if let Some(v) = epochs {
        dpo_cfg.epochs = v;
    }
    if let Some(v) = lr {
        dpo_cfg.learning_rate = v;
    }
    if let Some(v) = seed {
        dpo_cfg.seed = v;
    }

    let loaded = pairs::load_pairs(&pairs_path, &config.pairing).map_err(data)?;
    let corpus = synth::load_corpus(&corpus_dir).map_err(data)?;
    let by_id: BTreeMap<&str, &audio::FrameFeatures> =
        corpus.iter().map(|(f, t)| (t.id.as_str(), f)).collect();
    let examples: Vec<PairExample> = loaded
        .iter()
        .map(|p| {
            by_id
                .get(p.talk_id.as_str())
                .map(|features| PairExample {
                    features,
                    preferred: &p.preferred,
                    dispreferred: &p.dispreferred,
                })
                .ok_or_else(|| {
                    CliError::Data(format!("pair references unknown talk {:?}", p.talk_id))
                })
        })
        .collect::<Result<_, _>>()?;
    let feature_dim = corpus
        .first()
        .map(|(f, _)| f.dim)
        .unwrap_or(audio::FEATURE_DIM);
    let context = context_frames.unwrap_or(DEFAULT_CONTEXT_FRAMES);

    let init = policy::init_policy(feature_dim, context, dpo_cfg.seed);
    let (trained, report) = dpo::train(init, &examples, &dpo_cfg).map_err(data)?;
    policy::save_policy_json(&trained, &out_policy).map_err(data)?;
    let report_path = out_report.unwrap_or_else(|| out_policy.with_extension("report.json"));
    dpo::save_report_json(&report, &report_path).map_err(data)?;
    println!(
        "trained on {} pairs for {} epochs; loss {} -> {}; wrote {} and {}",
        report.pairs,
        report.config.epochs,
        report.epoch_loss.first().unwrap_or(&f64::NAN),
        report.epoch_loss.last().unwrap_or(&f64::NAN),
        out_policy.display(),
        report_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalTalkRow {
    id: String,
    bleu: f64,
    laal_ms: f64,
    segments: usize,
}

#[derive(Serialize)]
struct EvalReport {
    bleu: f64,
    laal_ms: f64,
    talks: usize,
    per_talk: Vec<EvalTalkRow>,
}

fn cmd_eval(
    config: &RunConfig,
    corpus: Option<PathBuf>,
    policy_path: Option<PathBuf>,
    out: Option<PathBuf>,
    threshold: Option<f64>,
) -> Result<(), CliError> {
    let corpus_dir = require(
        corpus.or_else(|| config.paths.corpus_dir.clone()),
        "--corpus",
    )?;
    let policy_path = require(
        policy_path.or_else(|| config.paths.policy_file.clone()),
        "--policy",
    )?;
    let out_path = require(out, "--out")?;
    let params = policy::load_policy_json(&policy_path).map_err(data)?;
    let mut decode = config.decode.clone();
    if let Some(v) = threshold {
        decode.threshold = v;
    }

    let corpus = synth::load_corpus(&corpus_dir).map_err(data)?;
    let mut acc = BleuAccumulator::new();
    let mut laal_sum = 0.0;
    let mut per_talk = Vec::with_capacity(corpus.len());
    for (features, talk) in &corpus {
        let source = SegmentSource::Policy {
            params: &params,
            decode: &decode,
        };
        let (trace, seg) = run_pipeline(
            features,
            talk,
            &source,
            &mut TranslatorBackend::Oracle,
            &config.timing,
        )
        .map_err(data)?;
        let hyp = trace.hypothesis();
        let talk_bleu = metrics::bleu(&hyp, &talk.reference).map_err(data)?;
        let talk_laal = metrics::laal(&trace, talk.reference.len()).map_err(data)?;
        acc.add(&hyp, &talk.reference).map_err(data)?;
        laal_sum += talk_laal;
        per_talk.push(EvalTalkRow {
            id: talk.id.clone(),
            bleu: talk_bleu,
            laal_ms: talk_laal,
            segments: seg.segment_count(),
        });
    }
    let report = EvalReport {
        bleu: acc.score(),
        laal_ms: laal_sum / corpus.len() as f64,
        talks: corpus.len(),
        per_talk,
    };
    let text = serde_json::to_string(&report).map_err(data)?;
    write_atomic(&out_path, text.as_bytes()).map_err(data)?;
    println!(
        "bleu {:.2} at mean laal {:.0} ms over {} talks; wrote {}",
        report.bleu,
        report.laal_ms,
        report.talks,
        out_path.display()
    );
    Ok(())
}

/// Systems file schema for `sweep`: a JSON array of system entries tagged by
/// `kind`. Relative `policy_file` paths resolve against the systems file's
/// directory.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SystemSpecFile {
    Fixed {
        label: String,
        knobs: Vec<f64>,
    },
    Vad {
        label: String,
        knobs: Vec<f64>,
        #[serde(default)]
        vad: VadConfig,
    },
    Policy {
        label: String,
        knobs: Vec<f64>,
        policy_file: PathBuf,
        #[serde(default)]
        decode: Option<DecodeConfig>,
    },
}

fn cmd_sweep(
    config: &RunConfig,
    corpus: Option<PathBuf>,
    systems_path: PathBuf,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let corpus_dir = require(
        corpus.or_else(|| config.paths.corpus_dir.clone()),
        "--corpus",
    )?;
    let out_path = require(out, "--out")?;
    let text = std::fs::read_to_string(&systems_path).map_err(|e| {
        CliError::Usage(format!(
            "cannot read systems {}: {}",
            systems_path.display(),
            e
        ))
    })?;
    let specs: Vec<SystemSpecFile> = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("systems {}: {}", systems_path.display(), e)))?;
    let base_dir = systems_path.parent().unwrap_or_else(|| Path::new("."));

    let mut systems = Vec::with_capacity(specs.len());
    for spec in specs {
        let system = match spec {
            SystemSpecFile::Fixed { label, knobs } => SweepSystem {
                label,
                segmenter: SweepSegmenter::Fixed,
                knobs,
            },
            SystemSpecFile::Vad { label, knobs, vad } => SweepSystem {
                label,
                segmenter: SweepSegmenter::Vad(vad),
                knobs,
            },
            SystemSpecFile::Policy {
                label,
                knobs,
                policy_file,
                decode,
            } => {
                let path = if policy_file.is_relative() {
                    base_dir.join(policy_file)
                } else {
                    policy_file
                };
                let params = policy::load_policy_json(&path).map_err(data)?;
                SweepSystem {
                    label,
                    segmenter: SweepSegmenter::Policy {
                        params,
                        decode: decode.unwrap_or_else(|| config.decode.clone()),
                    },
                    knobs,
                }
            }
        };
        systems.push(system);
    }

    let corpus = synth::load_corpus(&corpus_dir).map_err(data)?;
    let points = metrics::sweep_tradeoff(&corpus, &systems, &config.timing).map_err(data)?;
    metrics::save_tradeoff_csv(&points, &out_path).map_err(data)?;
    println!(
        "wrote {} tradeoff points to {}",
        points.len(),
        out_path.display()
    );
    Ok(())
}
