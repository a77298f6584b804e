//! `streamctx` — streaming-session simulation, annotation structuring, and
//! loss checking from the command line.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use streamctx::{
    annotations_to_turn_stream, balanced_loss, compare_modes, load_annotations, load_log_probs,
    load_schedule, metrics_to_string, naive_balanced_loss, read_samples, run_session, supervision,
    unroll, write_samples, ComparisonReport, LatencyModel, MetricsFormat, ModeReport,
    SessionSchedule, SimMode, StreamConfig, TruncationMode, WindowConfig, DEFAULT_ACK_TEXT,
};

#[derive(Parser)]
#[command(
    name = "streamctx",
    version,
    about = "Streaming-context simulator and training-sample tools for a real-time video assistant"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay one session mode and emit per-step metrics.
    Simulate(SimulateArgs),
    /// Run all three modes on one schedule and compare TTFT.
    Compare(CompareArgs),
    /// Expand a video's QA annotations into training samples.
    Structure(StructureArgs),
    /// Evaluate the silence-balanced loss of one training sample.
    LossCheck(LossCheckArgs),
}

#[derive(Args)]
struct WindowArgs {
    /// Video window size N, in chunks.
    #[arg(long, default_value_t = 30)]
    n: usize,
    /// Floating-truncation margin N', in chunks.
    #[arg(long = "n-prime", default_value_t = 15)]
    n_prime: usize,
    /// History budget M, in QA groups outside the video window.
    #[arg(long, default_value_t = 10)]
    m: usize,
}

#[derive(Args)]
struct StreamArgs {
    /// Wall-clock seconds per video chunk.
    #[arg(long, default_value_t = 1.0)]
    chunk_seconds: f64,
    /// Video sampling rate, frames per second.
    #[arg(long, default_value_t = 2.0)]
    fps: f64,
    /// Tokens per encoded frame.
    #[arg(long, default_value_t = 64)]
    tokens_per_frame: u32,
}

impl StreamArgs {
    fn to_config(&self) -> StreamConfig {
        StreamConfig {
            chunk_seconds: self.chunk_seconds,
            fps: self.fps,
            tokens_per_frame: self.tokens_per_frame,
            ..StreamConfig::default()
        }
    }
}

#[derive(Args)]
struct LatencyArgs {
    /// Fixed per-invocation overhead, milliseconds.
    #[arg(long, default_value_t = 20.0)]
    overhead_ms: f64,
    /// Prefill cost per computed token, milliseconds.
    #[arg(long, default_value_t = 0.15)]
    prefill_ms_per_token: f64,
    /// Decode cost per generated token, milliseconds.
    #[arg(long, default_value_t = 7.3)]
    decode_ms_per_token: f64,
}

impl LatencyArgs {
    fn to_model(&self) -> LatencyModel {
        LatencyModel {
            fixed_overhead_ms: self.overhead_ms,
            prefill_ms_per_token: self.prefill_ms_per_token,
            decode_ms_per_token: self.decode_ms_per_token,
        }
    }
}

#[derive(Args)]
struct SessionInput {
    /// Silent-session length in seconds (exclusive with --schedule).
    #[arg(long, conflicts_with = "schedule")]
    duration_s: Option<f64>,
    /// Schedule file with queries and scripted responses.
    #[arg(long)]
    schedule: Option<PathBuf>,
}

impl SessionInput {
    fn load(&self) -> Result<SessionSchedule> {
        match (&self.schedule, self.duration_s) {
            (Some(path), _) => {
                load_schedule(path).with_context(|| format!("loading {}", path.display()))
            }
            (None, Some(duration_s)) => Ok(SessionSchedule::silent(duration_s)),
            (None, None) => bail!("provide either --duration-s or --schedule"),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Pipeline variant to run.
    #[arg(long, default_value = "aura", value_parser = parse_mode)]
    mode: SimMode,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    session: SessionInput,
    #[command(flatten)]
    latency: LatencyArgs,
    /// Write metrics here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics file format.
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: MetricsFormat,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    session: SessionInput,
    #[command(flatten)]
    latency: LatencyArgs,
    /// Also write the full report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report file format: json (full report) or csv (summary table).
    #[arg(long, default_value = "json", value_parser = parse_format)]
    format: MetricsFormat,
}

#[derive(Args)]
struct StructureArgs {
    /// Per-video annotation file.
    #[arg(long)]
    annotations: PathBuf,
    /// Video window size N used for strict replay.
    #[arg(long, default_value_t = 30)]
    n: usize,
    /// History budget M in QA groups.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Write samples (line-delimited JSON) here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LossCheckArgs {
    /// Training-sample file holding exactly one record.
    #[arg(long)]
    sample: PathBuf,
    /// Log-probability file: {"log_probs": [...]}.
    #[arg(long)]
    logprobs: PathBuf,
}

fn parse_mode(s: &str) -> std::result::Result<SimMode, String> {
    s.parse().map_err(|e: streamctx::Error| e.to_string())
}

fn parse_format(s: &str) -> std::result::Result<MetricsFormat, String> {
    s.parse().map_err(|e: streamctx::Error| e.to_string())
}

fn window_config(args: &WindowArgs) -> WindowConfig {
    WindowConfig {
        window_chunks: args.n,
        margin_chunks: args.n_prime,
        history_groups: args.m,
        mode: TruncationMode::Floating,
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let schedule = args.session.load()?;
    let records = run_session(
        &schedule,
        args.mode,
        &window_config(&args.window),
        &args.stream.to_config(),
        &args.latency.to_model(),
    )?;
    let truncations = records.iter().filter(|r| r.truncated).count();
    let mean_ttft =
        records.iter().filter_map(|r| r.ttft_ms).sum::<f64>() / records.len() as f64;
    let rendered = metrics_to_string(&records, args.format)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, rendered)
                .with_context(|| format!("writing {}", path.display()))?;
            eprintln!(
                "{}: {} steps, {} truncations, mean ttft {:.1} ms -> {}",
                args.mode,
                records.len(),
                truncations,
                mean_ttft,
                path.display()
            );
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

fn comparison_table(report: &ComparisonReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>12} {:>14} {:>11} {:>13} {:>12} {:>13} {:>11}\n",
        "mode",
        "mean_ttft_ms",
        "median_ttft_ms",
        "p90_ttft_ms",
        "mean_computed",
        "max_computed",
        "final_context",
        "truncations"
    ));
    for r in [&report.aura, &report.no_sliding, &report.no_prefix_cache] {
        out.push_str(&format!(
            "{:<16} {:>12.1} {:>14.1} {:>11.1} {:>13.1} {:>12} {:>13} {:>11}\n",
            r.mode.to_string(),
            r.mean_ttft_ms,
            r.median_ttft_ms,
            r.p90_ttft_ms,
            r.mean_computed_tokens,
            r.max_computed_tokens,
            r.final_context_tokens,
            r.truncation_events
        ));
    }
    out
}

fn comparison_csv(report: &ComparisonReport) -> String {
    let mut out = String::from(
        "mode,mean_ttft_ms,median_ttft_ms,p90_ttft_ms,mean_computed_tokens,max_computed_tokens,final_context_tokens,truncation_events\n",
    );
    let row = |r: &ModeReport| {
        format!(
            "{},{},{},{},{},{},{},{}\n",
            r.mode,
            r.mean_ttft_ms,
            r.median_ttft_ms,
            r.p90_ttft_ms,
            r.mean_computed_tokens,
            r.max_computed_tokens,
            r.final_context_tokens,
            r.truncation_events
        )
    };
    out.push_str(&row(&report.aura));
    out.push_str(&row(&report.no_sliding));
    out.push_str(&row(&report.no_prefix_cache));
    out
}

fn compare(args: &CompareArgs) -> Result<()> {
    let schedule = args.session.load()?;
    let lm = args.latency.to_model();
    let report = compare_modes(
        &schedule,
        &window_config(&args.window),
        &args.stream.to_config(),
        &lm,
    )?;
    print!("{}", comparison_table(&report));
    println!(
        "decode estimate: first sentence 8 tokens = {:.1} ms, mean response 12.6 tokens = {:.1} ms",
        lm.decode_time_ms(8.0)?,
        lm.decode_time_ms(12.6)?
    );
    if let Some(path) = &args.out {
        let rendered = match args.format {
            MetricsFormat::Json => {
                let mut s = serde_json::to_string_pretty(&report)?;
                s.push('\n');
                s
            }
            MetricsFormat::Csv => comparison_csv(&report),
        };
        std::fs::write(path, rendered).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("report -> {}", path.display());
    }
    Ok(())
}

fn structure(args: &StructureArgs) -> Result<()> {
    let va = load_annotations(&args.annotations)
        .with_context(|| format!("loading {}", args.annotations.display()))?;
    let scfg = StreamConfig::default();
    let wcfg = WindowConfig {
        window_chunks: args.n,
        margin_chunks: 1,
        history_groups: args.m,
        mode: TruncationMode::Strict,
    };
    let turns = annotations_to_turn_stream(&va, &scfg, DEFAULT_ACK_TEXT)?;
    let samples = unroll(&turns, &wcfg, &scfg)?;
    match &args.out {
        Some(path) => {
            write_samples(path, &samples)?;
            eprintln!(
                "{}: {} annotations -> {} turns, {} samples -> {}",
                va.video_id,
                va.qas.len(),
                turns.len(),
                samples.len(),
                path.display()
            );
        }
        None => print!("{}", streamctx::samples_to_jsonl(&samples)?),
    }
    Ok(())
}

fn loss_check(args: &LossCheckArgs) -> Result<()> {
    let samples = read_samples(&args.sample)
        .with_context(|| format!("loading {}", args.sample.display()))?;
    let [sample] = samples.as_slice() else {
        bail!(
            "{} holds {} records; loss-check expects exactly one",
            args.sample.display(),
            samples.len()
        );
    };
    let lp = load_log_probs(&args.logprobs)
        .with_context(|| format!("loading {}", args.logprobs.display()))?;
    let sv = supervision(sample, &StreamConfig::default())?;
    let balanced = balanced_loss(&sv, &lp)?;
    let naive = naive_balanced_loss(&sv, &lp)?;
    let scale = balanced.abs().max(naive.abs());
    let relative = if scale == 0.0 {
        0.0
    } else {
        (balanced - naive).abs() / scale
    };
    println!("anchor chunk:    {}", sample.anchor_chunk);
    println!("target tokens:   {} ({} masked)", sv.total_tokens(), sv.masked_count());
    println!("n_silent:        {}", sv.n_silent);
    println!("balanced loss:   {balanced:.12}");
    println!("naive oracle:    {naive:.12}");
    println!("relative diff:   {relative:.3e} (tolerance 1e-12)");
    if relative > 1e-12 {
        bail!("balanced loss deviates from the naive oracle beyond 1e-12");
    }
    Ok(())
}

fn main() -> Result<()> {
    match &Cli::parse().command {
        Command::Simulate(args) => simulate(args),
        Command::Compare(args) => compare(args),
        Command::Structure(args) => structure(args),
        Command::LossCheck(args) => loss_check(args),
    }
}
