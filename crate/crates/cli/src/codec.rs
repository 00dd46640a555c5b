use std::path::PathBuf;

use clap::{Args, ValueEnum};
use memwall_core::codec::bench::{bench_corpus, mean_ratio};
use memwall_core::codec::channels::classify_channels;
use memwall_core::codec::synth::{gaussian_with_outliers, relu_activation, SyntheticSpec};
use memwall_core::codec::{compress_tensor, decode, verify, ActivationTensor, CodecConfig, CodecError, CompressedTensor};

use crate::error::{CliError, CliResult};
use crate::io::{read_bytes, write_bytes, write_csv};

#[derive(Debug, Args)]
pub struct CodecParams {
    /// Bit width for normal channels, 4 or 8.
    #[arg(long, default_value_t = 8)]
    bits: u8,
    /// Block edge for salient channels.
    #[arg(long, default_value_t = 4)]
    block: usize,
    /// Nonzero-fraction threshold separating sparse from dense blocks.
    #[arg(long, default_value_t = 0.25)]
    tau: f32,
    /// Error bound for dense salient elements.
    #[arg(long, default_value_t = 1e-2)]
    eps: f64,
}

impl CodecParams {
    fn config(&self) -> CliResult<CodecConfig> {
        let config = CodecConfig { bits: self.bits, block: self.block, tau: self.tau, eps: self.eps, ..CodecConfig::default() };
        config.validate().map_err(CliError::validation)?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SyntheticKind {
    /// Every element equals `--value`.
    Constant,
    /// Standard normal with outliers in some channels.
    Gaussian,
    /// Post-ReLU: half zeros, outliers in some channels.
    Relu,
}

#[derive(Debug, Args)]
pub struct CodecArgs {
    /// Raw tensor file (magic MWAT, C/H/W as u32, f32 values).
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    synthetic: Option<SyntheticKind>,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Channels receiving injected outliers.
    #[arg(long, default_value_t = 4)]
    outlier_channels: usize,
    #[arg(long, default_value_t = 1.0)]
    value: f32,
    #[arg(long, env = "MEMWALL_SEED", default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    params: CodecParams,
    /// Compressed bitstream output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the input tensor as a raw tensor file.
    #[arg(long)]
    tensor_out: Option<PathBuf>,
    /// Decode the written bitstream and fail if any element breaks its bound.
    #[arg(long)]
    verify: bool,
}

fn synthetic(args: &CodecArgs, kind: SyntheticKind) -> CliResult<ActivationTensor> {
    let (c, h, w) = (args.channels, args.height, args.width);
    if c == 0 || h == 0 || w == 0 {
        return Err(CliError::Validation("synthetic tensor dimensions must be positive".into()));
    }
    let spec = SyntheticSpec { outlier_channels: args.outlier_channels.min(c), ..SyntheticSpec::with_shape(c, h, w) };
    Ok(match kind {
        SyntheticKind::Constant => ActivationTensor::new(c, h, w, vec![args.value; c * h * w]).map_err(CliError::validation)?,
        SyntheticKind::Gaussian => gaussian_with_outliers(&spec, 0.0, args.seed),
        SyntheticKind::Relu => relu_activation(&spec, args.seed),
    })
}

fn decode_error(e: CodecError) -> CliError {
    match e.offset() {
        Some(offset) => CliError::Validation(format!("decode error at byte offset {offset}: {e}")),
        None => CliError::validation(e),
    }
}

pub fn run_codec(args: &CodecArgs) -> CliResult {
    let config = args.params.config()?;
    let tensor = match (&args.input, args.synthetic) {
        (Some(path), _) => ActivationTensor::from_bytes(&read_bytes(path)?).map_err(|e| CliError::io(path, decode_error(e)))?,
        (None, Some(kind)) => synthetic(args, kind)?,
        (None, None) => return Err(CliError::Validation("pass --input or --synthetic".into())),
    };
    if let Some(path) = &args.tensor_out {
        write_bytes(path, &tensor.to_bytes())?;
    }
    let compressed = compress_tensor(&tensor, &config).map_err(CliError::validation)?;
    let bytes = compressed.to_bytes();
    if let Some(path) = &args.out {
        write_bytes(path, &bytes)?;
    }
    // Verification goes through the serialized form, as a reader would.
    let parsed = CompressedTensor::from_bytes(&bytes).map_err(|e| CliError::Contract(format!("own bitstream rejected: {e}")))?;
    let restored = decode(&bytes).map_err(|e| CliError::Contract(format!("own bitstream rejected: {e}")))?;
    let report = verify(&tensor, &parsed, &restored);
    let classes = classify_channels(&tensor);
    let outliers: Vec<usize> = (0..tensor.data.len()).filter(|&i| classes.is_outlier(tensor.data[i])).collect();
    let outlier_error = outliers.iter().map(|&i| (tensor.data[i] as f64 - restored.data[i] as f64).abs()).fold(0.0, f64::max);
    println!(
        "ratio={:.4} max_error={:.6e} outliers={} max_outlier_error={:.6e} salient_channels={} exact_values={} original_bytes={} compressed_bytes={}{}",
        report.ratio(),
        report.max_abs_error,
        outliers.len(),
        outlier_error,
        classes.salient_count(),
        report.exact_values,
        report.original_bytes,
        report.compressed_bytes,
        if args.verify { " verified=true" } else { "" }
    );
    if args.verify && report.violations > 0 {
        return Err(CliError::Contract(format!("{} elements exceed their error bound", report.violations)));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Compressed bitstream.
    #[arg(long)]
    input: PathBuf,
    /// Raw tensor output.
    #[arg(long)]
    out: PathBuf,
}

pub fn run_decode(args: &DecodeArgs) -> CliResult {
    let tensor = decode(&read_bytes(&args.input)?).map_err(decode_error)?;
    write_bytes(&args.out, &tensor.to_bytes())?;
    println!("channels={} height={} width={} bytes={}", tensor.channels, tensor.height, tensor.width, tensor.byte_size());
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, env = "MEMWALL_SEED", default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    params: CodecParams,
    /// Per-tensor CSV output.
    #[arg(long)]
    out: PathBuf,
}

pub fn run_bench(args: &BenchArgs) -> CliResult {
    let rows = bench_corpus(&args.params.config()?, args.seed).map_err(CliError::validation)?;
    write_csv(&args.out, &rows)?;
    let violations: usize = rows.iter().map(|r| r.violations).sum();
    println!("tensors={} mean_ratio={:.4} violations={violations}", rows.len(), mean_ratio(&rows));
    if violations > 0 {
        return Err(CliError::Contract(format!("{violations} elements exceed their error bound")));
    }
    Ok(())
}
