//! Command-line entry point.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codec::{load_corpus, write_device_csv, CodecConfig, DEFAULT_MAX_LEN};
use crate::convlstm::{AeTrainConfig, ConvLstmConfig};
use crate::diff::{AdamConfig, GradCheckOptions};
use crate::matcher::{build_fingerprint, load_model, load_weights, save_model, save_weights, scan_stream, DEFAULT_TAU};
use crate::protonet::EmbedConfig;
use crate::synth::make_corpus;
use crate::trainer::{evaluate, gradcheck_composed, split_devices, train, MetaTrainConfig, SplitSpec, TrainConfig};

pub const WEIGHTS_FILE: &str = "weights.dnp";
pub const SPLIT_FILE: &str = "split.txt";
pub const PHASE1_CURVE: &str = "phase1.tsv";
pub const PHASE2_CURVE: &str = "phase2.tsv";
pub const CONFIG_FILE: &str = "config.txt";
pub const DECISIONS_FILE: &str = "decisions.tsv";

#[derive(Debug, Parser)]
#[command(name = "netprint", version, about = "One-shot network behavioral fingerprinting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic device corpus, one <device>.csv per device.
    Gen(GenArgs),
    /// Train the autoencoder, then the embedder, over a corpus directory.
    Train(TrainArgs),
    /// Build a fingerprint model from a target trace.
    Fingerprint(FingerprintArgs),
    /// Scan a packet stream against a fingerprint model.
    Scan(ScanArgs),
    /// Fingerprint every device in turn and classify every packet.
    Eval(EvalArgs),
    /// Finite-difference check of the composed pair-loss gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub devices: usize,
    #[arg(long, default_value_t = 400)]
    pub lines: usize,
    /// Fraction of each device's templates shared by all devices.
    #[arg(long, default_value_t = 0.6)]
    pub similarity: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Run directory for weights, split and curves.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training fraction of the devices, as a decimal or `a/b`.
    #[arg(long, default_value = "12/23", value_parser = parse_ratio)]
    pub split_ratio: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub embed_channels: usize,
    #[arg(long, default_value_t = 3)]
    pub embed_kernel: usize,
    /// Offset step between phase-1 windows; defaults to the window length.
    #[arg(long)]
    pub window_stride: Option<usize>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub ae_batch: usize,
    #[arg(long, default_value_t = 2000)]
    pub batches: usize,
    #[arg(long, default_value_t = 32)]
    pub pair_batch: usize,
    #[arg(long, default_value_t = 0.5)]
    pub pos_fraction: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct FingerprintArgs {
    /// Weights file written by `train`.
    #[arg(long)]
    pub weights: PathBuf,
    /// Target trace; its first 20 packets form the fingerprint.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU, value_parser = parse_tau)]
    pub tau: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    /// Overrides the threshold stored in the model.
    #[arg(long, value_parser = parse_tau)]
    pub tau: Option<f64>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    /// Write the scan log here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU, value_parser = parse_tau)]
    pub tau: f64,
    /// Per-decision log; defaults to `decisions.tsv` in the run directory.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub elements: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
            a / b
        }
        None => s.parse().map_err(|_| format!("not a number: {s:?}"))?,
    };
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("ratio {s} is outside [0, 1]"))
    }
}

fn parse_tau(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("tau {s} is outside [0, 1]"))
    }
}

/// Resolved configuration as `# key=value` lines.
fn header(command: &str, entries: &[(&str, String)]) -> String {
    let mut s = format!("# netprint {command}\n");
    for (k, v) in entries {
        s.push_str(&format!("# {k}={v}\n"));
    }
    s
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing its report to `out`. Usage errors print clap's usage text and
/// exit the process.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    dispatch(cli.command, out)
}

pub fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Gen(a) => gen(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Fingerprint(a) => fingerprint(a, out),
        Command::Scan(a) => scan(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn gen(a: GenArgs, out: &mut dyn Write) -> Result<()> {
    if a.devices < 2 {
        bail!("--devices must be at least 2");
    }
    if !(0.0..=1.0).contains(&a.similarity) {
        bail!("--similarity must lie in [0, 1]");
    }
    write!(
        out,
        "{}",
        header(
            "gen",
            &[
                ("out", show(&a.out)),
                ("devices", a.devices.to_string()),
                ("lines", a.lines.to_string()),
                ("similarity", a.similarity.to_string()),
                ("seed", a.seed.to_string()),
            ],
        )
    )?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", show(&a.out)))?;
    let corpus = make_corpus(a.devices, a.lines, a.similarity, a.seed);
    for t in &corpus.traces {
        let p = write_device_csv(&a.out, t).with_context(|| format!("cannot write into {}", show(&a.out)))?;
        writeln!(out, "{}", show(&p))?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    if a.kernel.is_multiple_of(2) || a.embed_kernel.is_multiple_of(2) {
        bail!("kernel widths must be odd");
    }
    if a.hidden == 0 || a.embed_channels == 0 || a.embed_dim < 2 || a.max_len == 0 {
        bail!("layer sizes must be positive and --embed-dim at least 2");
    }
    if a.ae_batch == 0 || a.pair_batch == 0 || a.window_stride == Some(0) {
        bail!("batch sizes and --window-stride must be positive");
    }
    if !(0.0..=1.0).contains(&a.pos_fraction) {
        bail!("--pos-fraction must lie in [0, 1]");
    }
    let corpus = load_corpus(&a.corpus)?;
    let ids: Vec<String> = corpus.iter().map(|t| t.device_id.clone()).collect();
    let split = split_devices(&ids, a.split_ratio, a.seed)?;
    let codec = CodecConfig::new(a.max_len);
    let adam = AdamConfig {
        lr: a.lr,
        ..AdamConfig::default()
    };
    let cfg = TrainConfig {
        cell: ConvLstmConfig {
            hidden: a.hidden,
            kernel: a.kernel,
        },
        embed: EmbedConfig {
            embed_dim: a.embed_dim,
            channels: a.embed_channels,
            kernel: a.embed_kernel,
        },
        codec,
        window_stride: a.window_stride.unwrap_or(codec.window_len()),
        phase1: AeTrainConfig {
            epochs: a.epochs,
            batch_size: a.ae_batch,
            adam,
            seed: 0,
        },
        phase2: MetaTrainConfig {
            batches: a.batches,
            batch_size: a.pair_batch,
            pos_fraction: a.pos_fraction,
            adam,
            seed: 0,
        },
        seed: 0,
    }
    .with_seed(a.seed);

    let config = header(
        "train",
        &[
            ("corpus", show(&a.corpus)),
            ("out", show(&a.out)),
            ("seed", a.seed.to_string()),
            ("split_ratio", a.split_ratio.to_string()),
            ("devices", corpus.len().to_string()),
            ("train_devices", split.train.len().to_string()),
            ("held_out_devices", split.held_out.len().to_string()),
            ("A", codec.alphabet_size().to_string()),
            ("L", codec.max_len().to_string()),
            ("W", codec.window_len().to_string()),
            ("Hc", a.hidden.to_string()),
            ("k", a.kernel.to_string()),
            ("E", a.embed_dim.to_string()),
            ("embed_channels", a.embed_channels.to_string()),
            ("embed_kernel", a.embed_kernel.to_string()),
            ("window_stride", cfg.window_stride.to_string()),
            ("epochs", a.epochs.to_string()),
            ("ae_batch", a.ae_batch.to_string()),
            ("batches", a.batches.to_string()),
            ("pair_batch", a.pair_batch.to_string()),
            ("pos_fraction", a.pos_fraction.to_string()),
            ("lr", a.lr.to_string()),
        ],
    );
    write!(out, "{config}")?;
    let outcome = train(&corpus, &split, &cfg)?;
    if !outcome.phase1.is_finite() || outcome.phase2.iter().any(|v| !v.is_finite()) {
        bail!("training diverged: non-finite loss");
    }

    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", show(&a.out)))?;
    let write = |name: &str, text: String| {
        let p = a.out.join(name);
        fs::write(&p, text).with_context(|| format!("cannot write {}", show(&p)))
    };
    save_weights(&outcome.network, &a.out.join(WEIGHTS_FILE))?;
    write(SPLIT_FILE, split.to_text())?;
    write(CONFIG_FILE, config)?;
    let p1 = &outcome.phase1;
    let mut curve = format!("# epoch\trecon_loss\ninitial\t{}\n", p1.initial);
    for (i, l) in p1.epochs.iter().enumerate() {
        curve.push_str(&format!("{}\t{l}\n", i + 1));
    }
    curve.push_str(&format!("final\t{}\n", p1.final_loss));
    write(PHASE1_CURVE, curve)?;
    let mut curve = String::from("# batch\tpair_loss\n");
    for (i, l) in outcome.phase2.iter().enumerate() {
        curve.push_str(&format!("{}\t{l}\n", i + 1));
    }
    write(PHASE2_CURVE, curve)?;

    let tail = |c: &[f64]| {
        let n = c.len().min(50);
        if n == 0 {
            f64::NAN
        } else {
            c[c.len() - n..].iter().sum::<f64>() / n as f64
        }
    };
    writeln!(out, "phase1 recon_loss {} -> {}", p1.initial, p1.final_loss)?;
    writeln!(out, "phase2 pair_loss (mean of last 50 batches) {}", tail(&outcome.phase2))?;
    writeln!(out, "wrote {}", show(&a.out))?;
    Ok(())
}

fn fingerprint(a: FingerprintArgs, out: &mut dyn Write) -> Result<()> {
    let network = load_weights(&a.weights)?;
    let model = build_fingerprint(&a.target, &network, a.tau)?;
    write!(
        out,
        "{}",
        header(
            "fingerprint",
            &[
                ("weights", show(&a.weights)),
                ("target", show(&a.target)),
                ("out", show(&a.out)),
                ("tau", a.tau.to_string()),
                ("seed", model.meta.seed.to_string()),
                ("device", model.meta.target.clone()),
            ],
        )
    )?;
    save_model(&model, &a.out)?;
    writeln!(out, "wrote {}", show(&a.out))?;
    Ok(())
}

fn scan(a: ScanArgs, out: &mut dyn Write) -> Result<()> {
    let mut model = load_model(&a.model)?;
    if let Some(t) = a.tau {
        model.tau = t;
    }
    let result = match a.precision {
        Precision::F64 => scan_stream(&model, &a.stream)?,
        Precision::F32 => scan_stream(&model.cast::<f32>(), &a.stream)?,
    };
    let mut text = header(
        "scan",
        &[
            ("model", show(&a.model)),
            ("stream", show(&a.stream)),
            ("tau", model.tau.to_string()),
            ("precision", format!("{:?}", a.precision).to_lowercase()),
            ("seed", model.meta.seed.to_string()),
            ("target", model.meta.target.clone()),
        ],
    );
    text.push_str(&result.log());
    match &a.out {
        Some(p) => {
            fs::write(p, &text).with_context(|| format!("cannot write {}", show(p)))?;
            writeln!(out, "{result}")?;
        }
        None => write!(out, "{text}")?,
    }
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let network = load_weights(&a.run.join(WEIGHTS_FILE))?;
    let split_path = a.run.join(SPLIT_FILE);
    let split_text = fs::read_to_string(&split_path).with_context(|| format!("cannot read {}", show(&split_path)))?;
    let split = SplitSpec::from_text(&split_text).with_context(|| format!("malformed split file {}", show(&split_path)))?;
    let corpus = load_corpus(&a.corpus)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.run.join(DECISIONS_FILE));
    write!(
        out,
        "{}",
        header(
            "eval",
            &[
                ("run", show(&a.run)),
                ("corpus", show(&a.corpus)),
                ("tau", a.tau.to_string()),
                ("log", show(&log_path)),
                ("seed", network.theta.seed().to_string()),
            ],
        )
    )?;
    let report = evaluate(&network, &corpus, &split, a.tau);
    fs::write(&log_path, report.decision_log()).with_context(|| format!("cannot write {}", show(&log_path)))?;
    write!(out, "{}", report.table())?;
    Ok(())
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let opts = GradCheckOptions {
        step: a.step,
        tolerance: a.tolerance,
        max_elements: a.elements,
        seed: a.seed,
    };
    write!(
        out,
        "{}",
        header(
            "gradcheck",
            &[
                ("seed", a.seed.to_string()),
                ("elements", a.elements.to_string()),
                ("step", a.step.to_string()),
                ("tolerance", a.tolerance.to_string()),
            ],
        )
    )?;
    let report = gradcheck_composed(a.seed, &opts);
    writeln!(out, "checked {} elements", report.checked)?;
    if let Some((name, i)) = &report.worst {
        writeln!(out, "worst {name}[{i}]")?;
    }
    writeln!(out, "max relative error {:e}", report.max_rel_error)?;
    if !report.passed() {
        bail!(
            "gradient check failed: max relative error {:e} exceeds {:e}",
            report.max_rel_error,
            report.tolerance
        );
    }
    Ok(())
}
