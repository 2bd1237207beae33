use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use rnn_asr::container::{read_model, write_model};
use rnn_asr::decoder::BeamConfig;
use rnn_asr::frontend::{self, FrontendConfig, Normalization};
use rnn_asr::hwsim::HwConfig;
use rnn_asr::pipeline::{decode, gen_toy, Models, RunConfig, RunMode, ToySpec};
use rnn_asr::wordlm::ArpaModel;
use rnn_asr_cli::{run_main, Failure, InputContext};

/// Decode speech with a quantized LSTM acoustic model, an LSTM character
/// model and an optional ARPA word model. The transcript goes to stdout.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Acoustic model container.
    #[arg(long)]
    am: Option<PathBuf>,
    /// Character model container.
    #[arg(long)]
    lm: Option<PathBuf>,
    /// ARPA word model (.arpa or .arpa.gz).
    #[arg(long)]
    arpa: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    beam: usize,
    /// Character model weight.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Word model weight.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Word insertion bonus.
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value = "hwsim", value_parser = ["float", "fixed", "hwsim"])]
    mode: String,
    /// Feature file (text header, then little-endian f32).
    #[arg(long, conflicts_with = "wav")]
    features: Option<PathBuf>,
    /// Mono 16-bit PCM WAV.
    #[arg(long)]
    wav: Option<PathBuf>,
    /// Write a key=value report here ("-" for stderr).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Frames between emissions of the settled prefix; 0 disables.
    #[arg(long, default_value_t = 100)]
    prune_period: usize,
    /// Normalize WAV features with fixed statistics from this file.
    #[arg(long)]
    norm_stats: Option<PathBuf>,
    /// Normalize WAV features over a trailing window (no lookahead).
    #[arg(long, conflicts_with = "norm_stats")]
    causal_norm: bool,
    /// Clocks added per accelerator invocation.
    #[arg(long, default_value_t = 0)]
    sync_overhead: u64,
    /// Generate a random toy setup (`small` or `tiny`, with optional
    /// `,seed=N,frames=N,...`) and write it to the --am, --lm, --arpa and
    /// --features paths instead of decoding.
    #[arg(long)]
    gen_toy: Option<String>,
}

fn generate(spec: &str, args: &Args) -> Result<(), Failure> {
    let spec: ToySpec = spec.parse()?;
    if args.am.is_none() && args.lm.is_none() && args.arpa.is_none() && args.features.is_none() {
        return Err(Failure::input(anyhow::anyhow!("--gen-toy needs at least one of --am, --lm, --arpa, --features to write to")));
    }
    let toy = gen_toy(&spec)?;
    if let Some(p) = &args.am {
        write_model(p, &toy.am).input_err(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.lm {
        write_model(p, &toy.lm).input_err(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.arpa {
        std::fs::write(p, &toy.arpa).input_err(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.features {
        frontend::write_feature_file(p, &toy.features).input_err(|| format!("writing {}", p.display()))?;
    }
    eprintln!("wrote toy setup: {} frames, acoustic {} params, character {} params", toy.features.len(), toy.am.network.param_count(), toy.lm.network.param_count());
    Ok(())
}

fn run(args: Args) -> Result<(), Failure> {
    if let Some(spec) = &args.gen_toy {
        return generate(spec, &args);
    }
    let mode: RunMode = args.mode.parse()?;
    let am_path = args.am.as_ref().ok_or_else(|| Failure::input(anyhow::anyhow!("--am is required")))?;
    let am = read_model(am_path).input_err(|| format!("reading {}", am_path.display()))?;
    let lm = match &args.lm {
        Some(p) => Some(read_model(p).input_err(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let words = match &args.arpa {
        Some(p) => Some(Arc::new(ArpaModel::from_path(p).input_err(|| format!("reading {}", p.display()))?)),
        None => None,
    };

    let features = match (&args.features, &args.wav) {
        (Some(p), _) => frontend::read_feature_file(p).input_err(|| format!("reading {}", p.display()))?,
        (None, Some(p)) => {
            let (samples, rate) = frontend::read_wav(p).input_err(|| format!("reading {}", p.display()))?;
            let normalization = if let Some(s) = &args.norm_stats {
                frontend::read_global_stats(s).input_err(|| format!("reading {}", s.display()))?
            } else if args.causal_norm {
                Normalization::Causal { window: 300 }
            } else {
                Normalization::default()
            };
            frontend::extract(&samples, &FrontendConfig { sample_rate: rate, normalization })
        }
        (None, None) => return Err(Failure::input(anyhow::anyhow!("one of --features or --wav is required"))),
    };

    let cfg = RunConfig {
        beam: BeamConfig {
            beam_width: args.beam,
            alpha: if lm.is_some() { args.alpha } else { 0.0 },
            lambda: args.lambda,
            beta: args.beta,
            prune_period: args.prune_period,
        },
        mode,
        hw: HwConfig { sync_overhead: args.sync_overhead, ..HwConfig::default() },
    };
    if cfg.beam.beam_width == 0 {
        return Err(Failure::input(anyhow::anyhow!("--beam must be at least 1")));
    }
    let models = Models { am, lm, words };
    let out = decode(&features, &models, &cfg)?;

    let mut report = out.report;
    if args.causal_norm && args.wav.is_some() {
        report.set("frontend.normalization", "causal").map_err(Failure::internal)?;
    }
    match args.report.as_deref() {
        Some(p) if p.as_os_str() == "-" => eprint!("{report}"),
        Some(p) => std::fs::write(p, report.to_string()).input_err(|| format!("writing {}", p.display()))?,
        None => {}
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", out.transcript.trim_end()).map_err(Failure::internal)?;
    Ok(())
}

fn main() -> std::process::ExitCode {
    let args = Args::parse();
    run_main(|| run(args))
}
