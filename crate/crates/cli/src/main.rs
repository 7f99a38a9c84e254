use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use asdkit::embed::read_embeddings;
use asdkit::featfile::{read_features, FEATURE_MAGIC};
use asdkit::pipeline::{
    detectors_dir, embeddings_dir, fit_detectors, load_detectors, load_embeddings, parse_jobs, parse_tile,
    report_text, run_embed, run_eval, run_extract, run_score, with_jobs, write_detectors, CacheUse, PipelineConfig,
};
use asdkit::synth::{generate_corpus, AnomalyKind, SynthConfig};

#[derive(Parser)]
#[command(name = "asdkit", version, about = "Feature extraction and anomaly scoring for machine sounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one feature file per clip under <out>/features
    Extract(PipelineArgs),
    /// Extract features and write baseline embeddings under <out>/embeddings
    Embed(PipelineArgs),
    /// Fit per-machine source/target detectors from train embeddings
    Fit(PipelineArgs),
    /// Score test embeddings with fitted detectors and write score CSVs
    Score(PipelineArgs),
    /// Run the whole chain and write scores, report.txt and report.kv
    Eval(PipelineArgs),
    /// Generate a synthetic corpus in the DCASE directory layout
    GenSynth(SynthArgs),
    /// Print an ASDF feature file or ASDE embedding file as text
    Inspect(InspectArgs),
}

fn tile_arg(s: &str) -> Result<(usize, usize), String> {
    parse_tile(s).map_err(|e| e.to_string())
}

fn jobs_arg(s: &str) -> Result<usize, String> {
    parse_jobs(s).map_err(|e| e.to_string())
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn fraction_arg(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 1.0 => Ok(v),
        _ => Err(format!("expected a number in (0, 1], got {s:?}")),
    }
}

fn key_value_arg(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Configuration file of key=value lines
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Corpus root holding <machine>/<split>/*.wav
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Output directory; every file the command writes lands here
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads, or "max" for one per core
    #[arg(long, value_name = "N|max", value_parser = jobs_arg)]
    jobs: Option<usize>,
    /// Filter-bank layout
    #[arg(long, value_parser = ["ofb", "mfb", "gfb"])]
    feature: Option<String>,
    /// SimAM enhancement mode
    #[arg(long, value_parser = ["none", "global", "local", "customized"])]
    enhance: Option<String>,
    /// Local enhancement tile, frequency bins by frames
    #[arg(long, value_name = "HxW", value_parser = tile_arg)]
    tile: Option<(usize, usize)>,
    /// SimAM regularizer
    #[arg(long, value_parser = positive_f64)]
    lambda: Option<f64>,
    /// Frequency bands of the baseline embedder
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    bands: Option<u32>,
    /// Population of the score normalization statistics
    #[arg(long, value_parser = ["batch", "loo"])]
    stats: Option<String>,
    /// Take the minimum of raw scores without domain normalization
    #[arg(long)]
    no_normalize: bool,
    /// False-positive-rate limit of the partial AUC
    #[arg(long, value_name = "P", value_parser = fraction_arg)]
    pauc_p: Option<f64>,
    /// Per-machine global/local map for customized enhancement
    #[arg(long, value_name = "PATH")]
    mode_map: Option<PathBuf>,
    /// Comma-separated machine types reported as the eval set
    #[arg(long, value_name = "LIST")]
    eval_machines: Option<String>,
    /// Directory of <machine>/{train,test}.asde files to use instead of extracting
    #[arg(long, value_name = "DIR")]
    embeddings: Option<PathBuf>,
    /// Feature cache directory (default <out>/cache)
    #[arg(long, value_name = "DIR")]
    cache: Option<PathBuf>,
    /// Skip clips that fail instead of aborting
    #[arg(long)]
    permissive: bool,
    /// Set any configuration key, e.g. --set dsp.hop=160 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = key_value_arg)]
    overrides: Vec<(String, String)>,
}

impl PipelineArgs {
    /// Defaults, then the config file, then the dedicated flags, then `--set`.
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path).map_err(|e| usage(format!("--config {}: {e}", path.display())))?,
            None => PipelineConfig::default(),
        };
        let mut flags: Vec<(&str, String, &str)> = Vec::new();
        let mut push = |key: &'static str, value: Option<String>, flag: &'static str| {
            if let Some(v) = value {
                flags.push((key, v, flag));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        push("paths.corpus", path(&self.corpus), "--corpus");
        push("paths.out", path(&self.out), "--out");
        push("paths.cache", path(&self.cache), "--cache");
        push("paths.embeddings", path(&self.embeddings), "--embeddings");
        push("simam.mode_map", path(&self.mode_map), "--mode-map");
        push("pipeline.jobs", self.jobs.map(|j| j.to_string()), "--jobs");
        push("fbank.kind", self.feature.clone(), "--feature");
        push("simam.mode", self.enhance.clone(), "--enhance");
        push("simam.tile", self.tile.map(|(h, w)| format!("{h}x{w}")), "--tile");
        push("simam.lambda", self.lambda.map(|v| v.to_string()), "--lambda");
        push("embed.bands", self.bands.map(|v| v.to_string()), "--bands");
        push("backend.stats", self.stats.clone(), "--stats");
        push("metrics.pauc_p", self.pauc_p.map(|v| v.to_string()), "--pauc-p");
        push("metrics.eval_machines", self.eval_machines.clone(), "--eval-machines");
        if self.no_normalize {
            push("backend.normalize", Some("false".into()), "--no-normalize");
        }
        if self.permissive {
            push("pipeline.strict", Some("false".into()), "--permissive");
        }
        for (key, value, flag) in flags {
            cfg.set(key, &value).map_err(|e| usage(format!("{flag}: {e}")))?;
        }
        for (key, value) in &self.overrides {
            cfg.set(key, value).map_err(|e| usage(format!("--set {key}={value}: {e}")))?;
        }
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output corpus root
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of machine types
    #[arg(long, default_value_t = 3)]
    machines: usize,
    /// Train clips per machine type; a tenth (at least one) is target domain
    #[arg(long, value_name = "M", default_value_t = 60)]
    clips_per_machine: usize,
    /// Test clips per machine type, a multiple of 4
    #[arg(long, value_name = "N", default_value_t = 40)]
    test_clips: usize,
    /// Perturbation added to anomalous test clips
    #[arg(long, default_value = "transient", value_parser = ["tone-shift", "transient", "band-noise"])]
    anomaly_kind: String,
    /// Target-domain noise floor relative to source, in dB
    #[arg(long, value_name = "DB", default_value_t = 6.0, allow_negative_numbers = true)]
    domain_shift: f64,
    /// Clip length in seconds
    #[arg(long, value_name = "SECONDS", default_value_t = 10.0, value_parser = positive_f64)]
    duration: f64,
    /// Generator seed; the corpus is a pure function of the flags
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads, or "max"
    #[arg(long, value_name = "N|max", value_parser = jobs_arg, default_value = "1")]
    jobs: usize,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// An ASDF or ASDE file
    file: PathBuf,
    /// Print at most this many values per row (0 prints all)
    #[arg(long, value_name = "N", default_value_t = 0)]
    max_values: usize,
}

fn cmd_extract(args: &PipelineArgs) -> anyhow::Result<()> {
    let cfg = args.resolve()?;
    let report = run_extract(&cfg)?;
    println!(
        "{} clips: {} computed, {} from the filter-bank cache, {} fully cached, {} failed",
        report.clips.len(),
        report.count(CacheUse::Miss),
        report.count(CacheUse::Partial),
        report.count(CacheUse::Hit),
        report.failed.len()
    );
    Ok(())
}

fn cmd_embed(args: &PipelineArgs) -> anyhow::Result<()> {
    let cfg = args.resolve()?;
    let report = run_extract(&cfg)?;
    let sets = run_embed(&cfg, &report)?;
    for (machine, s) in &sets {
        println!("{machine}: {} train, {} test, dim {}", s.train.len(), s.test.len(), s.train.dim());
    }
    println!("embeddings written to {}", embeddings_dir(&cfg.out).display());
    Ok(())
}

fn embeddings_source(cfg: &PipelineConfig) -> PathBuf {
    cfg.embeddings.clone().unwrap_or_else(|| embeddings_dir(&cfg.out))
}

fn cmd_fit(args: &PipelineArgs) -> anyhow::Result<()> {
    let cfg = args.resolve()?;
    let dir = embeddings_source(&cfg);
    let sets = load_embeddings(&dir).with_context(|| format!("reading embeddings from {}", dir.display()))?;
    let (pairs, skipped) = fit_detectors(&sets)?;
    write_detectors(&cfg.out, &pairs)?;
    for (machine, p) in &pairs {
        println!("{machine}: {} source, {} target references", p.source_refs.len(), p.target_refs.len());
    }
    for s in &skipped {
        println!("skipped {}: {}", s.machine_type, s.reason);
    }
    Ok(())
}

fn cmd_score(args: &PipelineArgs) -> anyhow::Result<()> {
    let cfg = args.resolve()?;
    let dir = embeddings_source(&cfg);
    let sets = load_embeddings(&dir).with_context(|| format!("reading embeddings from {}", dir.display()))?;
    let det = detectors_dir(&cfg.out);
    let pairs = load_detectors(&det).with_context(|| format!("reading detectors from {} (run fit first)", det.display()))?;
    let scores = run_score(&cfg, &pairs, &sets)?;
    for (machine, s) in &scores {
        println!("{machine}: {} clips scored", s.len());
    }
    Ok(())
}

fn cmd_eval(args: &PipelineArgs) -> anyhow::Result<()> {
    let cfg = args.resolve()?;
    let outcome = run_eval(&cfg)?;
    print!("{}", report_text(&cfg, &outcome));
    Ok(())
}

fn cmd_gen_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        machines: args.machines,
        train_clips: args.clips_per_machine,
        test_clips: args.test_clips,
        anomaly: args.anomaly_kind.parse::<AnomalyKind>().map_err(usage)?,
        domain_shift_db: args.domain_shift,
        seed: args.seed,
        duration: args.duration,
        ..SynthConfig::default()
    };
    cfg.validate().map_err(usage)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let metas = with_jobs(args.jobs, || generate_corpus(&args.out, &cfg))?;
    let mut manifest = String::new();
    for m in &metas {
        let _ = writeln!(manifest, "{}", m.clip_id);
    }
    let path = args.out.join("manifest.txt");
    std::fs::write(&path, manifest).with_context(|| format!("writing {}", path.display()))?;
    println!("{} clips written under {}", metas.len(), args.out.display());
    Ok(())
}

fn fmt_row(values: &[f64], max: usize) -> String {
    let shown = if max == 0 { values.len() } else { max.min(values.len()) };
    let mut s = values[..shown].iter().map(|v| format!("{}", *v as f32)).collect::<Vec<_>>().join(" ");
    if shown < values.len() {
        let _ = write!(s, " ... ({} more)", values.len() - shown);
    }
    s
}

fn cmd_inspect(args: &InspectArgs) -> anyhow::Result<()> {
    let bytes = std::fs::read(&args.file).with_context(|| format!("reading {}", args.file.display()))?;
    let mut out = String::new();
    if bytes.starts_with(FEATURE_MAGIC) {
        let f = read_features(&args.file)?;
        let (rows, cols) = f.values.shape();
        let _ = writeln!(out, "format: ASDF v1\nkind: {}\nenhancement: {}", f.kind, f.enhancement);
        let _ = writeln!(out, "filters: {rows}\nframes: {cols}");
        for r in 0..rows {
            let _ = writeln!(out, "[{r}] {}", fmt_row(f.values.row(r), args.max_values));
        }
    } else if bytes.starts_with(b"ASDE") {
        let set = read_embeddings(&args.file)?;
        let _ = writeln!(out, "format: ASDE v1\ndim: {}\ncount: {}", set.dim(), set.len());
        for e in set.iter() {
            let _ = writeln!(out, "{}: {}", e.clip_id, fmt_row(&e.vector, args.max_values));
        }
    } else {
        bail!("{}: not an ASDF or ASDE file", args.file.display());
    }
    print!("{out}");
    Ok(())
}

/// A bad flag, configuration key or value, reported with exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    Usage(e.to_string()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Extract(a) => cmd_extract(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if err.is::<Usage>() { 2 } else { 1 })
        }
    }
}
