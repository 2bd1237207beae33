use std::path::PathBuf;

use clap::Parser;
use rnn_asr::container::{max_quantization_gap, quantize_model, read_model, write_model};
use rnn_asr::rnn::QuantConfig;
use rnn_asr_cli::{run_main, Failure, InputContext};

/// Quantize a model container's float parameters to power-of-two fixed point.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Container with float parameters.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 6)]
    weight_bits: u8,
    #[arg(long, default_value_t = 8)]
    signal_bits: u8,
    #[arg(long, default_value_t = 16)]
    cell_bits: u8,
    /// Step exponent of the network input; defaults to a ±4 range.
    #[arg(long, allow_hyphen_values = true)]
    input_exponent: Option<i32>,
    /// Drop the float copies from the output.
    #[arg(long)]
    no_float_shadow: bool,
}

fn run(args: Args) -> Result<(), Failure> {
    let model = read_model(&args.input).input_err(|| format!("reading {}", args.input.display()))?;
    if !model.float_shadow {
        eprintln!("warning: input has no float copy; quantizing its dequantized values");
    }
    let cfg = QuantConfig {
        weight_bits: args.weight_bits,
        signal_bits: args.signal_bits,
        cell_bits: args.cell_bits,
        input_exponent: args.input_exponent,
        ..QuantConfig::default()
    };
    let mut q = quantize_model(&model, &cfg).input_err(|| "quantizing".to_string())?;
    q.float_shadow = !args.no_float_shadow;
    write_model(&args.output, &q).input_err(|| format!("writing {}", args.output.display()))?;
    eprintln!(
        "quantized {} parameters to {} bits; largest error {:.3e}",
        q.network.param_count(),
        args.weight_bits,
        max_quantization_gap(&q).unwrap_or(0.0)
    );
    Ok(())
}

fn main() -> std::process::ExitCode {
    let args = Args::parse();
    run_main(|| run(args))
}
