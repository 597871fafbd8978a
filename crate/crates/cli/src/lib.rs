//! Argument parsing and dispatch for the `simulpolicy` binary.
//!
//! [`main_with`] is the whole program minus process exit, so integration
//! tests can drive it in-process.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use simulpolicy::ctc::{
    attention_rescore, ctc_greedy, ctc_prefix_beam_search, CascadeConfig, CtcMode, LengthScorer,
    LogitMatrix,
};
use simulpolicy::harness::{
    evaluate_corpus, load_manifest, sweep, write_report, write_sweep_csv,
    write_synthetic_cascade_corpus, write_synthetic_corpus, Backend, CascadeSettings, EvalOptions,
    Sensitivity, SweepConfig, SyntheticCorpusSpec, SyntheticTranslatorSpec,
};
use simulpolicy::metrics::{
    corpus_bleu, tokenize_for_bleu, DelaySchedule, MetricReport, Smoothing, WordJoiner,
};
use simulpolicy::policies::{longest_common_prefix, PrefixGranularity};
use simulpolicy::regularize::parse_spec_list;
use simulpolicy::{EngineConfig, PolicySpec, RegularizerSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const DEFAULT_N: usize = 2;
const DEFAULT_CHUNK_MS: u32 = 500;
const DEFAULT_FRAME_MS: f64 = 40.0;

#[derive(Parser, Debug)]
#[command(name = "simulpolicy", version, about = "Simultaneous speech translation commit policies")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Evaluate one policy at one chunk size over a manifest.
    Eval(RunArgs),
    /// Evaluate policies over a grid of chunk sizes and write sweep.csv.
    Sweep(RunArgs),
    /// Decode a stored CTC posterior matrix.
    CtcDecode(CtcArgs),
    /// Latency and quality metrics from a stored delay log.
    Metrics(MetricsArgs),
    /// Longest common prefix of whitespace-tokenized sequences.
    Lcp(LcpArgs),
    /// Write a synthetic corpus and its manifest.
    MakeCorpus(MakeCorpusArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModeArg {
    E2e,
    Cascade,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum BackendArg {
    Synthetic,
    Logits,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SmoothingArg {
    None,
    AddOne,
}

impl From<SmoothingArg> for Smoothing {
    fn from(s: SmoothingArg) -> Self {
        match s {
            SmoothingArg::None => Smoothing::None,
            SmoothingArg::AddOne => Smoothing::AddOne,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum JoinerArg {
    Whitespace,
    Sentencepiece,
    Bpe,
}

impl From<JoinerArg> for WordJoiner {
    fn from(j: JoinerArg) -> Self {
        match j {
            JoinerArg::Whitespace => WordJoiner::Whitespace,
            JoinerArg::Sentencepiece => WordJoiner::SentencePiece,
            JoinerArg::Bpe => WordJoiner::Bpe,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct SynthArgs {
    /// Synthetic translator: target tokens per source segment or word.
    #[arg(long, default_value_t = 2)]
    synth_tokens_per_chunk: usize,
    /// Synthetic translator: length of the unstable suffix.
    #[arg(long, default_value_t = 2)]
    synth_unstable_suffix: usize,
    #[arg(long, default_value = "full_input", value_parser = clap::value_parser!(Sensitivity))]
    synth_sensitivity: Sensitivity,
    #[arg(long, default_value_t = 0)]
    synth_seed: u64,
    #[arg(long, default_value_t = 250)]
    synth_segment_ms: u32,
}

impl SynthArgs {
    fn spec(&self) -> SyntheticTranslatorSpec {
        SyntheticTranslatorSpec {
            tokens_per_chunk: self.synth_tokens_per_chunk,
            unstable_suffix_len: self.synth_unstable_suffix,
            sensitivity: self.synth_sensitivity,
            seed: self.synth_seed,
            segment_ms: self.synth_segment_ms,
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// hold, la or rbi, optionally with `:n` (repeatable for sweep).
    #[arg(long = "policy", required = true)]
    policies: Vec<String>,
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated regularizers, e.g. `tst:0.9:1.1,na:gaussian:0.005`.
    #[arg(long)]
    reg: Option<String>,
    #[arg(long)]
    nbest: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long, value_parser = parse_ctc_mode)]
    ctc_mode: Option<CtcMode>,
    #[arg(long)]
    ctc_weight: Option<f64>,
    /// Log-probability per token of the built-in rescoring scorer.
    #[arg(long)]
    scorer_token_logprob: Option<f64>,
    #[arg(long)]
    frame_ms: Option<f64>,
    #[arg(long)]
    chunk_ms: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    chunk_sweep: Option<Vec<u32>>,
    #[arg(long, env = "SIMULPOLICY_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    skip_errors: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Commit nothing at end of stream beyond what the policy committed.
    #[arg(long)]
    no_finalize: bool,
    /// Compare hypotheses word by word instead of token by token.
    #[arg(long)]
    word_level_lcp: bool,
    #[arg(long, value_enum, default_value = "none")]
    smoothing: SmoothingArg,
    #[arg(long, value_enum, default_value = "whitespace")]
    joiner: JoinerArg,
    #[command(flatten)]
    synth: SynthArgs,
}

fn parse_ctc_mode(s: &str) -> Result<CtcMode, String> {
    s.parse()
}

#[derive(Args, Debug)]
struct CtcArgs {
    #[arg(long)]
    logits: PathBuf,
    #[arg(long, value_parser = parse_ctc_mode, default_value = "prefix_beam")]
    ctc_mode: CtcMode,
    #[arg(long, default_value_t = 8)]
    beam: usize,
    #[arg(long, default_value_t = 4)]
    nbest: usize,
    #[arg(long, default_value_t = 0.5)]
    ctc_weight: f64,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    scorer_token_logprob: f64,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// JSON with `delays_ms`, `src_duration_ms` and optional `hypothesis`
    /// and `reference` strings.
    #[arg(long)]
    log: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    smoothing: SmoothingArg,
}

#[derive(Args, Debug)]
struct LcpArgs {
    #[arg(required = true)]
    sequences: Vec<String>,
    #[arg(long)]
    word_level: bool,
    #[arg(long, value_enum, default_value = "whitespace")]
    joiner: JoinerArg,
}

#[derive(Args, Debug)]
struct MakeCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "e2e")]
    mode: ModeArg,
    #[arg(long, default_value_t = 20)]
    num: usize,
    #[arg(long, default_value_t = 2000)]
    min_ms: u32,
    #[arg(long, default_value_t = 6000)]
    max_ms: u32,
    #[arg(long, default_value_t = 16000)]
    sample_rate: u32,
    #[arg(long, env = "SIMULPOLICY_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_FRAME_MS)]
    frame_ms: f64,
    /// Share of each frame's mass given to a competing source word.
    #[arg(long, default_value_t = 0.2)]
    confusion: f64,
    #[command(flatten)]
    synth: SynthArgs,
}

/// Evaluation backend described by plain data.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendConfig {
    Synthetic(SyntheticTranslatorSpec),
    Cascade {
        mt: SyntheticTranslatorSpec,
        asr: CascadeConfig,
        frame_ms: f64,
        scorer_token_logprob: f64,
    },
}

impl BackendConfig {
    pub fn backend(&self) -> Backend {
        match self {
            BackendConfig::Synthetic(spec) => Backend::synthetic(spec.clone()),
            BackendConfig::Cascade {
                mt,
                asr,
                frame_ms,
                scorer_token_logprob,
            } => Backend::synthetic_cascade(
                mt.clone(),
                CascadeSettings {
                    config: *asr,
                    frame_ms: *frame_ms,
                    scorer: Some(Arc::new(LengthScorer {
                        log_prob_per_token: *scorer_token_logprob,
                    })),
                },
            ),
        }
    }

    pub fn is_cascade(&self) -> bool {
        matches!(self, BackendConfig::Cascade { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub manifest: PathBuf,
    pub backend: BackendConfig,
    pub engine: EngineConfig,
    pub options: EvalOptions,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRunConfig {
    pub manifest: PathBuf,
    pub backend: BackendConfig,
    pub base: EngineConfig,
    pub sweep: SweepConfig,
    pub options: EvalOptions,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcDecodeConfig {
    pub logits: PathBuf,
    pub cascade: CascadeConfig,
    pub scorer_token_logprob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    pub log: PathBuf,
    pub smoothing: Smoothing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcpConfig {
    pub sequences: Vec<Vec<String>>,
    pub granularity: PrefixGranularity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MakeCorpusConfig {
    pub out: PathBuf,
    pub cascade: Option<(f64, f64)>,
    pub corpus: SyntheticCorpusSpec,
    pub translator: SyntheticTranslatorSpec,
}

/// Validated command line.
#[derive(Debug, Clone, PartialEq)]
pub enum CliConfig {
    Eval(EvalConfig),
    Sweep(SweepRunConfig),
    CtcDecode(CtcDecodeConfig),
    Metrics(MetricsConfig),
    Lcp(LcpConfig),
    MakeCorpus(MakeCorpusConfig),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseError {
    /// Help or version text requested.
    Info(String),
    Usage(String),
}

fn usage<T>(msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError::Usage(msg.into()))
}

fn parse_policy(
    text: &str,
    default_n: Option<usize>,
    regs: &[RegularizerSpec],
    cascade: bool,
) -> Result<PolicySpec, ParseError> {
    let (name, n) = match text.split_once(':') {
        Some((name, n)) => match n.parse::<usize>() {
            Ok(n) => (name, Some(n)),
            Err(_) => return usage(format!("bad policy `{text}`: `{n}` is not a count")),
        },
        None => (text, None),
    };
    let n = n.or(default_n).unwrap_or(DEFAULT_N);
    let spec = match name {
        "hold" => PolicySpec::Hold { n },
        "la" => PolicySpec::LocalAgreement { n },
        // In cascade mode the batch is the ASR n-best list, so the
        // regularizer list only fixes the variant; it is not applied.
        "rbi" if cascade => PolicySpec::Rbi {
            regularizers: vec![RegularizerSpec::Identity],
        },
        "rbi" => PolicySpec::Rbi {
            regularizers: regs.to_vec(),
        },
        other => return usage(format!("unknown policy `{other}` (expected hold, la or rbi)")),
    };
    spec.validate()
        .map_err(|e| ParseError::Usage(format!("policy `{text}`: {e}")))?;
    Ok(spec)
}

fn resolve_backend(a: &RunArgs) -> Result<BackendConfig, ParseError> {
    let cascade = match (a.mode, a.backend) {
        (Some(ModeArg::E2e), Some(BackendArg::Logits))
        | (Some(ModeArg::Cascade), Some(BackendArg::Synthetic)) => {
            return usage("--mode and --backend disagree: e2e uses the synthetic backend, cascade uses logits")
        }
        (Some(ModeArg::Cascade), _) | (_, Some(BackendArg::Logits)) => true,
        _ => false,
    };
    let mt = a.synth.spec();
    mt.validate().map_err(ParseError::Usage)?;
    if !cascade {
        for (flag, set) in [
            ("--nbest", a.nbest.is_some()),
            ("--beam", a.beam.is_some()),
            ("--ctc-mode", a.ctc_mode.is_some()),
            ("--ctc-weight", a.ctc_weight.is_some()),
            ("--frame-ms", a.frame_ms.is_some()),
            ("--scorer-token-logprob", a.scorer_token_logprob.is_some()),
        ] {
            if set {
                return usage(format!("{flag} applies to cascade mode only"));
            }
        }
        return Ok(BackendConfig::Synthetic(mt));
    }
    if a.reg.is_some() {
        return usage("--reg applies to end-to-end mode only; cascade R-BI batches the ASR n-best list");
    }
    let defaults = CascadeConfig::default();
    let n_best = a.nbest.unwrap_or(defaults.n_best);
    let asr = CascadeConfig {
        mode: a.ctc_mode.unwrap_or(defaults.mode),
        beam: a.beam.unwrap_or(defaults.beam.max(n_best)),
        n_best,
        ctc_weight: a.ctc_weight.unwrap_or(defaults.ctc_weight),
    };
    if asr.n_best < 1 || asr.beam < asr.n_best {
        return usage(format!("need 1 <= --nbest ({}) <= --beam ({})", asr.n_best, asr.beam));
    }
    if !(0.0..=1.0).contains(&asr.ctc_weight) {
        return usage(format!("--ctc-weight {} outside [0, 1]", asr.ctc_weight));
    }
    let frame_ms = a.frame_ms.unwrap_or(DEFAULT_FRAME_MS);
    if !(frame_ms > 0.0 && frame_ms.is_finite()) {
        return usage(format!("--frame-ms {frame_ms} must be positive"));
    }
    Ok(BackendConfig::Cascade {
        mt,
        asr,
        frame_ms,
        scorer_token_logprob: a.scorer_token_logprob.unwrap_or(-1.0),
    })
}

fn resolve_policies(a: &RunArgs, backend: &BackendConfig) -> Result<Vec<PolicySpec>, ParseError> {
    let regs = match &a.reg {
        Some(list) => parse_spec_list(list).map_err(|e| ParseError::Usage(e.to_string()))?,
        None => Vec::new(),
    };
    let policies = a
        .policies
        .iter()
        .map(|p| parse_policy(p, a.n, &regs, backend.is_cascade()))
        .collect::<Result<Vec<_>, _>>()?;
    if let BackendConfig::Cascade { asr, .. } = backend {
        let rbi = policies.iter().any(|p| matches!(p, PolicySpec::Rbi { .. }));
        if rbi && (asr.n_best < 2 || asr.mode == CtcMode::Greedy) {
            return usage("cascade R-BI needs an n-best list: use --nbest >= 2 with a beam search --ctc-mode");
        }
    } else if !regs.is_empty() && !policies.iter().any(|p| matches!(p, PolicySpec::Rbi { .. })) {
        return usage("--reg is only used by the rbi policy");
    }
    Ok(policies)
}

fn base_engine(a: &RunArgs, chunk_ms: u32, policy: PolicySpec) -> Result<EngineConfig, ParseError> {
    let mut cfg = EngineConfig::new(chunk_ms, policy).with_seed(a.seed);
    cfg.finalize_on_last_chunk = !a.no_finalize;
    if a.word_level_lcp {
        cfg.granularity = PrefixGranularity::Word(a.joiner.into());
    }
    cfg.validate().map_err(|e| ParseError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn eval_options(a: &RunArgs) -> Result<EvalOptions, ParseError> {
    if a.jobs == 0 {
        return usage("--jobs must be at least 1");
    }
    Ok(EvalOptions {
        skip_errors: a.skip_errors,
        jobs: a.jobs,
        joiner: a.joiner.into(),
        smoothing: a.smoothing.into(),
    })
}

fn resolve_eval(a: RunArgs) -> Result<CliConfig, ParseError> {
    if a.chunk_sweep.is_some() {
        return usage("--chunk-sweep belongs to the sweep subcommand; use --chunk-ms");
    }
    if a.policies.len() != 1 {
        return usage("eval takes exactly one --policy");
    }
    let backend = resolve_backend(&a)?;
    let policy = resolve_policies(&a, &backend)?.remove(0);
    let engine = base_engine(&a, a.chunk_ms.unwrap_or(DEFAULT_CHUNK_MS), policy)?;
    Ok(CliConfig::Eval(EvalConfig {
        options: eval_options(&a)?,
        manifest: a.manifest,
        backend,
        engine,
        out: a.out,
    }))
}

fn resolve_sweep(a: RunArgs) -> Result<CliConfig, ParseError> {
    if a.chunk_ms.is_some() {
        return usage("--chunk-ms belongs to the eval subcommand; use --chunk-sweep");
    }
    let backend = resolve_backend(&a)?;
    let policies = resolve_policies(&a, &backend)?;
    let mut sweep = SweepConfig::new(policies);
    if let Some(sizes) = &a.chunk_sweep {
        if sizes.is_empty() {
            return usage("--chunk-sweep needs at least one size");
        }
        sweep.chunk_sizes_ms = sizes.clone();
    }
    let base = base_engine(&a, sweep.chunk_sizes_ms[0], sweep.policies[0].clone())?;
    for &c in &sweep.chunk_sizes_ms {
        EngineConfig {
            chunk_size_ms: c,
            ..base.clone()
        }
        .validate()
        .map_err(|e| ParseError::Usage(e.to_string()))?;
    }
    Ok(CliConfig::Sweep(SweepRunConfig {
        options: eval_options(&a)?,
        manifest: a.manifest,
        backend,
        base,
        sweep,
        out: a.out,
    }))
}

fn resolve_ctc(a: CtcArgs) -> Result<CliConfig, ParseError> {
    if a.nbest < 1 || a.beam < a.nbest {
        return usage(format!("need 1 <= --nbest ({}) <= --beam ({})", a.nbest, a.beam));
    }
    if !(0.0..=1.0).contains(&a.ctc_weight) {
        return usage(format!("--ctc-weight {} outside [0, 1]", a.ctc_weight));
    }
    Ok(CliConfig::CtcDecode(CtcDecodeConfig {
        logits: a.logits,
        cascade: CascadeConfig {
            mode: a.ctc_mode,
            beam: a.beam,
            n_best: a.nbest,
            ctc_weight: a.ctc_weight,
        },
        scorer_token_logprob: a.scorer_token_logprob,
    }))
}

fn resolve_make_corpus(a: MakeCorpusArgs) -> Result<CliConfig, ParseError> {
    let translator = a.synth.spec();
    translator.validate().map_err(ParseError::Usage)?;
    if a.num == 0 || a.min_ms == 0 || a.min_ms > a.max_ms || a.sample_rate == 0 {
        return usage("need --num >= 1, 0 < --min-ms <= --max-ms and a positive --sample-rate");
    }
    let cascade = match a.mode {
        ModeArg::E2e => None,
        ModeArg::Cascade => {
            if a.frame_ms.is_nan() || a.frame_ms <= 0.0 || !(0.0..0.5).contains(&a.confusion) {
                return usage("need --frame-ms > 0 and --confusion in [0, 0.5)");
            }
            Some((a.frame_ms, a.confusion))
        }
    };
    Ok(CliConfig::MakeCorpus(MakeCorpusConfig {
        out: a.out,
        cascade,
        corpus: SyntheticCorpusSpec {
            num_utterances: a.num,
            min_duration_ms: a.min_ms,
            max_duration_ms: a.max_ms,
            sample_rate_hz: a.sample_rate,
            seed: a.seed,
        },
        translator,
    }))
}

/// Parses and validates `argv` (including the program name).
pub fn parse_args<I, T>(argv: I) -> Result<CliConfig, ParseError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp
        | clap::error::ErrorKind::DisplayVersion
        | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            ParseError::Info(e.to_string())
        }
        _ => ParseError::Usage(e.render().to_string().trim_end().to_string()),
    })?;
    match cli.command {
        Cmd::Eval(a) => resolve_eval(a),
        Cmd::Sweep(a) => resolve_sweep(a),
        Cmd::CtcDecode(a) => resolve_ctc(a),
        Cmd::Metrics(a) => Ok(CliConfig::Metrics(MetricsConfig {
            log: a.log,
            smoothing: a.smoothing.into(),
        })),
        Cmd::Lcp(a) => Ok(CliConfig::Lcp(LcpConfig {
            sequences: a
                .sequences
                .iter()
                .map(|s| s.split_whitespace().map(String::from).collect())
                .collect(),
            granularity: if a.word_level {
                PrefixGranularity::Word(a.joiner.into())
            } else {
                PrefixGranularity::Token
            },
        })),
        Cmd::MakeCorpus(a) => resolve_make_corpus(a),
    }
}

fn fmt_report(label: &str, m: &MetricReport) -> String {
    format!(
        "{label}: BLEU {:.2}  AL {:.1} ms  AP {:.3}  DAL {:.1} ms  {}",
        m.bleu,
        m.al_ms,
        m.ap,
        m.dal_ms,
        if m.low_latency { "low-latency" } else { "high-latency" }
    )
}

fn run_eval(c: &EvalConfig) -> Result<String, String> {
    let utts = load_manifest(&c.manifest).map_err(|e| e.to_string())?;
    let report = evaluate_corpus(&utts, &c.backend.backend(), &c.engine, &c.options)
        .map_err(|e| e.to_string())?;
    write_report(&report, &c.out).map_err(|e| e.to_string())?;
    let s = &report.summary;
    let mut text = fmt_report(&format!("{} @ {} ms", s.policy, s.chunk_ms), &s.metrics);
    text.push_str(&format!(
        "\noffline BLEU {:.2}; {} utterances, {} failed; wrote {}",
        s.offline_bleu,
        s.num_utterances,
        s.num_failed,
        c.out.display()
    ));
    Ok(text)
}

fn run_sweep(c: &SweepRunConfig) -> Result<String, String> {
    let utts = load_manifest(&c.manifest).map_err(|e| e.to_string())?;
    let rows = sweep(&utts, &c.backend.backend(), &c.base, &c.sweep, &c.options)
        .map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&c.out).map_err(|e| format!("{}: {e}", c.out.display()))?;
    let path = c.out.join("sweep.csv");
    let file = std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    write_sweep_csv(&rows, file).map_err(|e| e.to_string())?;
    let width = rows.iter().map(|r| r.policy.len()).max().unwrap_or(0);
    let mut lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{:<width$} {:>6} ms  BLEU {:>6.2}  AL {:>8.1} ms  AP {:.3}  DAL {:>8.1} ms",
                r.policy, r.chunk_ms, r.bleu, r.al_ms, r.ap, r.dal_ms
            )
        })
        .collect();
    lines.push(format!("wrote {}", path.display()));
    Ok(lines.join("\n"))
}

fn run_ctc(c: &CtcDecodeConfig) -> Result<String, String> {
    let logits = LogitMatrix::load(&c.logits).map_err(|e| e.to_string())?;
    let candidates: Vec<Value> = match c.cascade.mode {
        CtcMode::Greedy => {
            let h = ctc_greedy(&logits);
            vec![json!({"transcript": h.tokens, "ctc_log_prob": h.score})]
        }
        mode => {
            let mut set = ctc_prefix_beam_search(&logits, c.cascade.beam, c.cascade.n_best)
                .map_err(|e| e.to_string())?;
            if mode == CtcMode::Rescoring {
                let scorer = LengthScorer {
                    log_prob_per_token: c.scorer_token_logprob,
                };
                set = attention_rescore(&set, &scorer, c.cascade.ctc_weight)
                    .map_err(|e| e.to_string())?;
            }
            set.candidates
                .iter()
                .map(|cand| {
                    json!({
                        "transcript": cand.transcript,
                        "ctc_log_prob": cand.ctc_log_prob,
                        "rescored_log_prob": cand.rescored_log_prob,
                    })
                })
                .collect()
        }
    };
    Ok(json!({ "mode": c.cascade.mode.to_string(), "candidates": candidates }).to_string())
}

fn run_metrics(c: &MetricsConfig) -> Result<String, String> {
    let text = std::fs::read_to_string(&c.log).map_err(|e| format!("{}: {e}", c.log.display()))?;
    let log: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", c.log.display()))?;
    let sched: DelaySchedule =
        serde_json::from_value(log.clone()).map_err(|e| format!("{}: {e}", c.log.display()))?;
    sched.validate().map_err(|e| e.to_string())?;
    let text_field = |k: &str| log.get(k).and_then(Value::as_str).map(tokenize_for_bleu);
    let bleu = match (text_field("hypothesis"), text_field("reference")) {
        (Some(h), Some(r)) => Some(corpus_bleu(&[h], &[r], c.smoothing).map_err(|e| e.to_string())?),
        _ => None,
    };
    let report = MetricReport::from_schedule(&sched, bleu.unwrap_or(0.0));
    let mut out = serde_json::to_value(&report).map_err(|e| e.to_string())?;
    if bleu.is_none() {
        out["bleu"] = Value::Null;
    }
    Ok(out.to_string())
}

fn run_lcp(c: &LcpConfig) -> Result<String, String> {
    let len = simulpolicy::policies::common_prefix_len_at(
        &c.sequences.iter().map(Vec::as_slice).collect::<Vec<_>>(),
        &c.granularity,
    )
    .map_err(|e| e.to_string())?;
    let prefix = match c.granularity {
        PrefixGranularity::Token => longest_common_prefix(&c.sequences).map_err(|e| e.to_string())?,
        PrefixGranularity::Word(_) => c.sequences[0][..len].to_vec(),
    };
    Ok(json!({ "length": len, "prefix": prefix }).to_string())
}

fn run_make_corpus(c: &MakeCorpusConfig) -> Result<String, String> {
    let manifest = match c.cascade {
        None => write_synthetic_corpus(&c.out, &c.corpus, &c.translator),
        Some((frame_ms, confusion)) => {
            write_synthetic_cascade_corpus(&c.out, &c.corpus, &c.translator, frame_ms, confusion)
        }
    }
    .map_err(|e| e.to_string())?;
    Ok(manifest.display().to_string())
}

/// Executes a validated command; the `Ok` text goes to stdout.
pub fn run(config: &CliConfig) -> Result<String, String> {
    match config {
        CliConfig::Eval(c) => run_eval(c),
        CliConfig::Sweep(c) => run_sweep(c),
        CliConfig::CtcDecode(c) => run_ctc(c),
        CliConfig::Metrics(c) => run_metrics(c),
        CliConfig::Lcp(c) => run_lcp(c),
        CliConfig::MakeCorpus(c) => run_make_corpus(c),
    }
}

fn error_line(kind: &str, message: &str) -> String {
    json!({ "error": kind, "message": message }).to_string()
}

/// Parses, runs and reports; returns the process exit code.
pub fn main_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let config = match parse_args(argv) {
        Ok(c) => c,
        Err(ParseError::Info(text)) => {
            let _ = write!(stdout, "{text}");
            return EXIT_OK;
        }
        Err(ParseError::Usage(msg)) => {
            let _ = writeln!(stderr, "{}", error_line("usage", &msg));
            return EXIT_USAGE;
        }
    };
    match run(&config) {
        Ok(text) => {
            let _ = writeln!(stdout, "{text}");
            EXIT_OK
        }
        Err(msg) => {
            let _ = writeln!(stderr, "{}", error_line("runtime", &msg));
            EXIT_RUNTIME
        }
    }
}
