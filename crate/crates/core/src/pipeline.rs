//! Corpus to report orchestration with a content-addressed feature cache.
//!
//! Stages run one after another; inside a stage clips are processed in
//! parallel on a dedicated thread pool and results are collected in clip-id
//! order, so every output file is independent of the degree of parallelism.
//!
//! The cache has two levels under `<cache>/`:
//!
//! * `fbank/<key>.asdf`: log filter-bank features, keyed by the clip bytes,
//!   the framing parameters and the filter-bank layout;
//! * `enhanced/<key>.asdf`: enhanced features, keyed by the `fbank` key and
//!   the enhancement settings that apply to the clip's machine type.
//!
//! Changing only enhancement settings therefore reuses the STFT stage.
//! Features are stored as `f32`, and downstream stages always work on the
//! `f32`-rounded values, so warm and cold runs produce identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::backend::{score_batch_with, write_scores_csv, AnomalyScore, BackendParams, DetectorPair, StatsPopulation};
use crate::codec::write_file;
use crate::corpus::{load_clip, parse_clip_name, scan_corpus, Clip, Condition, Domain, CORPUS_SAMPLE_RATE};
use crate::dsp::{power_spectrogram, FrameParams, Window};
use crate::embed::{baseline_embed, read_embeddings, write_embeddings, Embedding, EmbeddingSet, Provenance, DEFAULT_BANDS};
use crate::enhance::{enhance, Enhancement, ModeMap, Scope, SimamParams};
use crate::error::{Error, Result};
use crate::featfile::{read_features, write_features};
use crate::filterbank::{apply_log_fbank, BankSpec, FilterBank, FilterKind, LogMelSpectrogram, LOG_FLOOR};
use crate::metrics::{summarize, LabeledScore, SummaryReport, DEFAULT_PAUC_P};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub frame: FrameParams,
    pub sample_rate: u32,
    pub bank: BankSpec,
    pub log_floor: f64,
    pub simam: SimamParams,
    pub bands: usize,
    pub backend: BackendParams,
    pub pauc_p: f64,
    /// Machine types reported in the eval column; all others count as dev.
    pub eval_machines: BTreeSet<String>,
    pub corpus: PathBuf,
    pub out: PathBuf,
    /// Defaults to `<out>/cache`.
    pub cache: Option<PathBuf>,
    /// Directory of externally computed `<machine>/{train,test}.asde` files.
    /// When set, feature extraction is skipped.
    pub embeddings: Option<PathBuf>,
    pub jobs: usize,
    /// Abort on the first failing clip instead of skipping it.
    pub strict: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            frame: FrameParams::default(),
            sample_rate: CORPUS_SAMPLE_RATE,
            bank: BankSpec::default(),
            log_floor: LOG_FLOOR,
            simam: SimamParams::default(),
            bands: DEFAULT_BANDS,
            backend: BackendParams::default(),
            pauc_p: DEFAULT_PAUC_P,
            eval_machines: BTreeSet::new(),
            corpus: PathBuf::from("corpus"),
            out: PathBuf::from("out"),
            cache: None,
            embeddings: None,
            jobs: 1,
            strict: true,
        }
    }
}

/// Every key accepted by [`PipelineConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "dsp.frame_len",
    "dsp.hop",
    "dsp.n_fft",
    "dsp.pre_emphasis",
    "dsp.window",
    "dsp.duration",
    "dsp.sample_rate",
    "fbank.kind",
    "fbank.n_filters",
    "fbank.f_min",
    "fbank.f_max",
    "fbank.area_normalize",
    "fbank.allow_empty",
    "fbank.log_floor",
    "simam.mode",
    "simam.lambda",
    "simam.tile",
    "simam.mode_map",
    "simam.map.<machine>",
    "embed.bands",
    "backend.normalize",
    "backend.stats",
    "metrics.pauc_p",
    "metrics.eval_machines",
    "paths.corpus",
    "paths.out",
    "paths.cache",
    "paths.embeddings",
    "pipeline.jobs",
    "pipeline.strict",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

/// Parses `HxW` (frequency bins by frames); both sides must be at least 1.
pub fn parse_tile(value: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidParam(format!("tile {value:?}: expected HxW with H, W >= 1"));
    let (h, w) = value.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

/// `max` means one worker per available core.
pub fn parse_jobs(value: &str) -> Result<usize> {
    if value == "max" {
        return Ok(std::thread::available_parallelism().map_or(1, |n| n.get()));
    }
    match value.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(Error::InvalidParam(format!("jobs {value:?}: expected a positive integer or max"))),
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let k = key;
        match key {
            "dsp.frame_len" => self.frame.frame_len = parse_value(k, value)?,
            "dsp.hop" => self.frame.hop = parse_value(k, value)?,
            "dsp.n_fft" => self.frame.n_fft = parse_value(k, value)?,
            "dsp.pre_emphasis" => self.frame.pre_emphasis = parse_value(k, value)?,
            "dsp.window" => self.frame.window = parse_value::<Window>(k, value)?,
            "dsp.duration" => self.frame.target_duration = parse_value(k, value)?,
            "dsp.sample_rate" => self.sample_rate = parse_value(k, value)?,
            "fbank.kind" => self.bank.kind = parse_value::<FilterKind>(k, value)?,
            "fbank.n_filters" => self.bank.n_filters = parse_value(k, value)?,
            "fbank.f_min" => self.bank.f_min = parse_value(k, value)?,
            "fbank.f_max" => {
                self.bank.f_max = if value == "nyquist" { None } else { Some(parse_value(k, value)?) }
            }
            "fbank.area_normalize" => self.bank.area_normalize = parse_bool(k, value)?,
            "fbank.allow_empty" => self.bank.allow_empty = parse_bool(k, value)?,
            "fbank.log_floor" => self.log_floor = parse_value(k, value)?,
            "simam.mode" => self.simam.mode = parse_value::<Enhancement>(k, value)?,
            "simam.lambda" => self.simam.lambda = parse_value(k, value)?,
            "simam.tile" => self.simam.tile = parse_tile(value)?,
            "simam.mode_map" => self.simam.mode_map = ModeMap::load(Path::new(value))?,
            "embed.bands" => self.bands = parse_value(k, value)?,
            "backend.normalize" => self.backend.normalize = parse_bool(k, value)?,
            "backend.stats" => self.backend.stats = parse_value::<StatsPopulation>(k, value)?,
            "metrics.pauc_p" => self.pauc_p = parse_value(k, value)?,
            "metrics.eval_machines" => {
                self.eval_machines = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
            "paths.corpus" => self.corpus = PathBuf::from(value),
            "paths.out" => self.out = PathBuf::from(value),
            "paths.cache" => self.cache = Some(PathBuf::from(value)),
            "paths.embeddings" => self.embeddings = Some(PathBuf::from(value)),
            "pipeline.jobs" => self.jobs = parse_jobs(value)?,
            "pipeline.strict" => self.strict = parse_bool(k, value)?,
            _ => {
                if let Some(machine) = key.strip_prefix("simam.map.") {
                    let scope: Scope = parse_value(k, value)?;
                    if machine == "default" {
                        self.simam.mode_map.default = scope;
                    } else {
                        self.simam.mode_map.machines.insert(machine.to_string(), scope);
                    }
                } else {
                    return Err(Error::Config(format!(
                        "unknown configuration key {key:?}; known keys: {}",
                        CONFIG_KEYS.join(", ")
                    )));
                }
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            self.set(key.trim(), value).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        self.simam.validate()?;
        if self.bands == 0 {
            return Err(Error::InvalidParam("embed.bands must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidParam("pipeline.jobs must be at least 1".into()));
        }
        if !(self.pauc_p > 0.0 && self.pauc_p <= 1.0) {
            return Err(Error::InvalidParam(format!("metrics.pauc_p must be in (0, 1], got {}", self.pauc_p)));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidParam("fbank.log_floor must be positive".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidParam("dsp.sample_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| self.out.join("cache"))
    }

    fn fbank_key_material(&self) -> String {
        let f = &self.frame;
        let b = &self.bank;
        format!(
            "frame_len={}\nhop={}\nn_fft={}\npre_emphasis={}\nwindow={}\nduration={}\nsample_rate={}\n\
             kind={}\nn_filters={}\nf_min={}\nf_max={:?}\narea_normalize={}\nallow_empty={}\nlog_floor={}\n",
            f.frame_len,
            f.hop,
            f.n_fft,
            f.pre_emphasis,
            f.window,
            f.target_duration,
            self.sample_rate,
            b.kind,
            b.n_filters,
            b.f_min,
            b.f_max,
            b.area_normalize,
            b.allow_empty,
            self.log_floor
        )
    }

    fn enhance_key_material(&self, machine_type: &str) -> String {
        let s = &self.simam;
        let scope = match s.mode {
            Enhancement::None => return "mode=none\n".to_string(),
            Enhancement::Global => Scope::Global,
            Enhancement::Local => Scope::Local,
            Enhancement::Customized => s.mode_map.scope_for(machine_type),
        };
        let mut m = format!("mode={}\nscope={scope}\nlambda={}\n", s.mode, s.lambda);
        if scope == Scope::Local {
            let _ = writeln!(m, "tile={}x{}", s.tile.0, s.tile.1);
        }
        m
    }
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))
}

/// Runs `f` on a pool of `jobs` worker threads; parallel iterators inside
/// `f` use that pool.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    thread_pool(jobs)?.install(f)
}

/// Which cache levels a clip was served from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheUse {
    /// Enhanced features found; nothing recomputed.
    Hit,
    /// Filter-bank features found; enhancement recomputed.
    Partial,
    /// Everything computed from the WAV file.
    Miss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedClip {
    pub clip: Clip,
    pub feature_path: PathBuf,
    pub cache: CacheUse,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractReport {
    pub clips: Vec<ExtractedClip>,
    /// (clip id, error message) of clips skipped in permissive mode.
    pub failed: Vec<(String, String)>,
}

impl ExtractReport {
    pub fn count(&self, kind: CacheUse) -> usize {
        self.clips.iter().filter(|c| c.cache == kind).count()
    }
}

struct Extractor<'a> {
    cfg: &'a PipelineConfig,
    bank: FilterBank,
    fbank_material: String,
    cache: PathBuf,
}

impl Extractor<'_> {
    fn features(&self, clip: &Clip) -> Result<(LogMelSpectrogram, CacheUse)> {
        let bytes = fs::read(&clip.path).map_err(|e| Error::io(&clip.path, e))?;
        let fbank_key = sha256_hex(&[&Sha256::digest(&bytes), self.fbank_material.as_bytes()]);
        let enh_material = self.cfg.enhance_key_material(&clip.meta.machine_type);
        let enh_key = sha256_hex(&[fbank_key.as_bytes(), enh_material.as_bytes()]);
        let enh_path = self.cache.join("enhanced").join(format!("{enh_key}.asdf"));
        if enh_path.is_file() {
            return Ok((read_features(&enh_path)?, CacheUse::Hit));
        }

        let fbank_path = self.cache.join("fbank").join(format!("{fbank_key}.asdf"));
        let (base, state) = if fbank_path.is_file() {
            (read_features(&fbank_path)?, CacheUse::Partial)
        } else {
            let wave = load_clip(&clip.path, self.cfg.sample_rate)?;
            let spec = power_spectrogram(&wave, &self.cfg.frame)?;
            let mut feat = apply_log_fbank(&spec, &self.bank, self.cfg.log_floor)?;
            feat.values = feat.values.quantize_f32();
            write_features(&fbank_path, &feat)?;
            (feat, CacheUse::Miss)
        };
        let mut enhanced = enhance(&base, &clip.meta.machine_type, &self.cfg.simam)?;
        enhanced.values = enhanced.values.quantize_f32();
        write_features(&enh_path, &enhanced)?;
        Ok((enhanced, state))
    }
}

/// Output location of a clip's feature file.
pub fn feature_path(out: &Path, clip: &Clip) -> PathBuf {
    let stem = Path::new(&clip.meta.clip_id).with_extension("asdf");
    out.join("features").join(stem)
}

fn collect_outcomes<T>(
    ids: impl Iterator<Item = String>,
    results: Vec<Result<T>>,
    strict: bool,
) -> Result<(Vec<T>, Vec<(String, String)>)> {
    let total = results.len();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (id, r) in ids.zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failed.push((id, e.to_string())),
        }
    }
    if !failed.is_empty() {
        if strict {
            return Err(Error::ClipsFailed {
                failed: failed.len(),
                total,
                first: format!("{}: {}", failed[0].0, failed[0].1),
            });
        }
        for (id, msg) in &failed {
            log::warn!("skipping {id}: {msg}");
        }
    }
    Ok((ok, failed))
}

/// Scans the corpus and writes one `ASDF` file per clip under
/// `<out>/features/`.
pub fn run_extract(cfg: &PipelineConfig) -> Result<ExtractReport> {
    cfg.validate()?;
    let clips = scan_corpus(&cfg.corpus)?;
    if clips.is_empty() {
        return Err(Error::EmptyInput("corpus contains no clips"));
    }
    let extractor = Extractor {
        cfg,
        bank: cfg.bank.build(cfg.frame.n_fft, cfg.sample_rate)?,
        fbank_material: cfg.fbank_key_material(),
        cache: cfg.cache_dir(),
    };
    let empty = extractor.bank.empty_filters();
    if !empty.is_empty() {
        log::warn!(
            "{} of {} {} filters contain no FFT bin and yield constant rows",
            empty.len(),
            extractor.bank.n_filters(),
            cfg.bank.kind
        );
    }
    let results: Vec<Result<ExtractedClip>> = thread_pool(cfg.jobs)?.install(|| {
        clips
            .par_iter()
            .map(|clip| {
                let (feat, cache) = extractor.features(clip)?;
                let path = feature_path(&cfg.out, clip);
                write_features(&path, &feat)?;
                Ok(ExtractedClip {
                    clip: clip.clone(),
                    feature_path: path,
                    cache,
                })
            })
            .collect()
    });
    let (clips_ok, failed) = collect_outcomes(clips.iter().map(|c| c.meta.clip_id.clone()), results, cfg.strict)?;
    log::info!(
        "extracted {} clips ({} cached, {} partially cached, {} computed)",
        clips_ok.len(),
        clips_ok.iter().filter(|c| c.cache == CacheUse::Hit).count(),
        clips_ok.iter().filter(|c| c.cache == CacheUse::Partial).count(),
        clips_ok.iter().filter(|c| c.cache == CacheUse::Miss).count()
    );
    Ok(ExtractReport {
        clips: clips_ok,
        failed,
    })
}

/// Train and test embeddings of one machine type.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineEmbeddings {
    pub train: EmbeddingSet,
    pub test: EmbeddingSet,
}

pub type EmbeddingsByMachine = BTreeMap<String, MachineEmbeddings>;

pub fn embeddings_dir(out: &Path) -> PathBuf {
    out.join("embeddings")
}

/// Baseline embeddings for every extracted clip, written as
/// `<out>/embeddings/<machine>/{train,test}.asde`.
pub fn run_embed(cfg: &PipelineConfig, extracted: &ExtractReport) -> Result<EmbeddingsByMachine> {
    let results: Vec<Result<Embedding>> = thread_pool(cfg.jobs)?.install(|| {
        extracted
            .clips
            .par_iter()
            .map(|c| baseline_embed(&read_features(&c.feature_path)?, cfg.bands, &c.clip.meta.clip_id))
            .collect()
    });
    let embeddings = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut grouped: BTreeMap<String, (Vec<Embedding>, Vec<Embedding>)> = BTreeMap::new();
    for (c, e) in extracted.clips.iter().zip(embeddings) {
        let slot = grouped.entry(c.clip.meta.machine_type.clone()).or_default();
        match c.clip.meta.split {
            crate::corpus::Split::Train => slot.0.push(e),
            crate::corpus::Split::Test => slot.1.push(e),
        }
    }
    let dim = 2 * cfg.bands;
    let mut out = BTreeMap::new();
    for (machine, (train, test)) in grouped {
        let train = EmbeddingSet::new(dim, train, Provenance::Baseline)?.quantized();
        let test = EmbeddingSet::new(dim, test, Provenance::Baseline)?.quantized();
        let dir = embeddings_dir(&cfg.out).join(&machine);
        write_embeddings(&train, &dir.join("train.asde"))?;
        write_embeddings(&test, &dir.join("test.asde"))?;
        out.insert(machine, MachineEmbeddings { train, test });
    }
    Ok(out)
}

/// Reads `<dir>/<machine>/{train,test}.asde` for every machine directory.
pub fn load_embeddings(dir: &Path) -> Result<EmbeddingsByMachine> {
    let mut machines = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_dir() {
            machines.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    machines.sort();
    if machines.is_empty() {
        return Err(Error::EmptyInput("embedding directory has no machine subdirectories"));
    }
    let mut out = BTreeMap::new();
    for machine in machines {
        let sub = dir.join(&machine);
        out.insert(
            machine,
            MachineEmbeddings {
                train: read_embeddings(&sub.join("train.asde"))?,
                test: read_embeddings(&sub.join("test.asde"))?,
            },
        );
    }
    Ok(out)
}

fn domain_of(clip_id: &str) -> Result<Domain> {
    Ok(parse_clip_name(clip_id)?.domain)
}

/// A machine type left out of scoring, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skipped {
    pub machine_type: String,
    pub reason: String,
}

/// One detector pair per machine type, references split by the domain in
/// each clip id. Machines lacking train clips in a domain are skipped.
pub fn fit_detectors(embeddings: &EmbeddingsByMachine) -> Result<(BTreeMap<String, DetectorPair>, Vec<Skipped>)> {
    let mut pairs = BTreeMap::new();
    let mut skipped = Vec::new();
    for (machine, sets) in embeddings {
        let mut source = Vec::new();
        let mut target = Vec::new();
        for e in sets.train.iter() {
            match domain_of(&e.clip_id)? {
                Domain::Source => source.push(e.clone()),
                Domain::Target => target.push(e.clone()),
            }
        }
        let missing: Vec<&str> = [("source", source.is_empty()), ("target", target.is_empty())]
            .iter()
            .filter(|m| m.1)
            .map(|m| m.0)
            .collect();
        if !missing.is_empty() {
            let reason = format!("no {} clips in the train split", missing.join(" or "));
            log::warn!("skipping {machine}: {reason}");
            skipped.push(Skipped {
                machine_type: machine.clone(),
                reason,
            });
            continue;
        }
        let provenance = sets.train.provenance;
        let dim = sets.train.dim();
        let pair = DetectorPair::new(
            machine.clone(),
            EmbeddingSet::new(dim, source, provenance)?,
            EmbeddingSet::new(dim, target, provenance)?,
        )?;
        pairs.insert(machine.clone(), pair);
    }
    Ok((pairs, skipped))
}

pub fn detectors_dir(out: &Path) -> PathBuf {
    out.join("detectors")
}

/// Writes `<out>/detectors/<machine>/{source,target}.asde`.
pub fn write_detectors(out: &Path, pairs: &BTreeMap<String, DetectorPair>) -> Result<()> {
    for (machine, pair) in pairs {
        let dir = detectors_dir(out).join(machine);
        write_embeddings(&pair.source_refs, &dir.join("source.asde"))?;
        write_embeddings(&pair.target_refs, &dir.join("target.asde"))?;
    }
    Ok(())
}

pub fn load_detectors(dir: &Path) -> Result<BTreeMap<String, DetectorPair>> {
    let mut pairs = BTreeMap::new();
    let mut machines = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_dir() {
            machines.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    machines.sort();
    for machine in machines {
        let sub = dir.join(&machine);
        let pair = DetectorPair::new(
            machine.clone(),
            read_embeddings(&sub.join("source.asde"))?,
            read_embeddings(&sub.join("target.asde"))?,
        )?;
        pairs.insert(machine, pair);
    }
    Ok(pairs)
}

pub fn scores_path(out: &Path, machine: &str) -> PathBuf {
    out.join("scores").join(format!("anomaly_score_{machine}.csv"))
}

/// Scores each machine's test set and writes the score CSVs.
pub fn run_score(
    cfg: &PipelineConfig,
    pairs: &BTreeMap<String, DetectorPair>,
    embeddings: &EmbeddingsByMachine,
) -> Result<BTreeMap<String, Vec<AnomalyScore>>> {
    let mut out = BTreeMap::new();
    for (machine, pair) in pairs {
        let Some(sets) = embeddings.get(machine) else {
            return Err(Error::UndefinedMetric(format!("no test embeddings for machine type {machine}")));
        };
        let (scores, stats) = score_batch_with(pair, &sets.test, &cfg.backend)?;
        log::debug!("{machine}: {stats:?}");
        write_scores_csv(&scores_path(&cfg.out, machine), &scores)?;
        out.insert(machine.clone(), scores);
    }
    Ok(out)
}

/// Attaches ground truth parsed from the clip ids.
pub fn label_scores(machine: &str, scores: &[AnomalyScore]) -> Result<Vec<LabeledScore>> {
    scores
        .iter()
        .map(|s| {
            let meta = parse_clip_name(&s.clip_id)?;
            let anomaly = match meta.condition {
                Condition::Normal => false,
                Condition::Anomaly => true,
                Condition::Unknown => {
                    return Err(Error::UndefinedMetric(format!("{}: test clip has no label", s.clip_id)));
                }
            };
            Ok(LabeledScore {
                clip_id: s.clip_id.clone(),
                machine_type: machine.to_string(),
                domain: meta.domain,
                anomaly,
                score: s.final_score,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub summary: SummaryReport,
    pub scores: BTreeMap<String, Vec<AnomalyScore>>,
    pub labeled: Vec<LabeledScore>,
    pub skipped: Vec<Skipped>,
    pub failed: Vec<(String, String)>,
}

/// Features (or imported embeddings), detectors, scores, metrics and the
/// `report.txt` / `report.kv` files.
pub fn run_eval(cfg: &PipelineConfig) -> Result<EvalOutcome> {
    cfg.validate()?;
    let (embeddings, failed) = match &cfg.embeddings {
        Some(dir) => (load_embeddings(dir)?, Vec::new()),
        None => {
            let extracted = run_extract(cfg)?;
            let embeddings = run_embed(cfg, &extracted)?;
            (embeddings, extracted.failed)
        }
    };
    let (pairs, skipped) = fit_detectors(&embeddings)?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no machine type has train clips in both domains"));
    }
    write_detectors(&cfg.out, &pairs)?;
    let scores = run_score(cfg, &pairs, &embeddings)?;
    let mut labeled = Vec::new();
    for (machine, s) in &scores {
        labeled.extend(label_scores(machine, s)?);
    }
    let summary = summarize(&labeled, &cfg.eval_machines, cfg.pauc_p)?;
    let outcome = EvalOutcome {
        summary,
        scores,
        labeled,
        skipped,
        failed,
    };
    write_file(&cfg.out.join("report.txt"), report_text(cfg, &outcome).as_bytes())?;
    write_file(&cfg.out.join("report.kv"), report_kv(cfg, &outcome).as_bytes())?;
    Ok(outcome)
}

fn feature_label(cfg: &PipelineConfig) -> String {
    if cfg.embeddings.is_some() {
        "imported".to_string()
    } else {
        cfg.bank.kind.to_string()
    }
}

/// Percentages with two decimals, one row per machine type, then the
/// harmonic-mean rows.
pub fn report_text(cfg: &PipelineConfig, o: &EvalOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "feature: {}  enhancement: {}  normalization: {}",
        feature_label(cfg),
        cfg.simam.mode,
        if cfg.backend.normalize { cfg.backend.stats.to_string() } else { "off".into() }
    );
    let _ = writeln!(s, "{:<16} {:>9} {:>9} {:>9}", "machine", "AUC_s", "AUC_t", "pAUC");
    for m in &o.summary.machines {
        let _ = writeln!(
            s,
            "{:<16} {:>9.2} {:>9.2} {:>9.2}",
            m.machine_type,
            100.0 * m.auc_source,
            100.0 * m.auc_target,
            100.0 * m.pauc
        );
    }
    let row = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
    let _ = writeln!(s, "{:<16} {:>9}", "dev score", row(o.summary.dev_score));
    let _ = writeln!(s, "{:<16} {:>9}", "eval score", row(o.summary.eval_score));
    let _ = writeln!(s, "{:<16} {:>9}", "all score", row(Some(o.summary.all_score)));
    for sk in &o.skipped {
        let _ = writeln!(s, "skipped {}: {}", sk.machine_type, sk.reason);
    }
    for (id, msg) in &o.failed {
        let _ = writeln!(s, "failed {id}: {msg}");
    }
    s
}

/// Flat `key=value` lines with fractions printed to nine decimals.
pub fn report_kv(cfg: &PipelineConfig, o: &EvalOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "feature={}", feature_label(cfg));
    let _ = writeln!(s, "enhancement={}", cfg.simam.mode);
    let _ = writeln!(s, "normalize={}", cfg.backend.normalize);
    let _ = writeln!(s, "stats={}", cfg.backend.stats);
    let _ = writeln!(s, "pauc_p={}", cfg.pauc_p);
    for m in &o.summary.machines {
        let _ = writeln!(s, "machine.{}.auc_source={:.9}", m.machine_type, m.auc_source);
        let _ = writeln!(s, "machine.{}.auc_target={:.9}", m.machine_type, m.auc_target);
        let _ = writeln!(s, "machine.{}.pauc={:.9}", m.machine_type, m.pauc);
    }
    if let Some(v) = o.summary.dev_score {
        let _ = writeln!(s, "score.dev={v:.9}");
    }
    if let Some(v) = o.summary.eval_score {
        let _ = writeln!(s, "score.eval={v:.9}");
    }
    let _ = writeln!(s, "score.all={:.9}", o.summary.all_score);
    for sk in &o.skipped {
        let _ = writeln!(s, "skipped.{}={}", sk.machine_type, sk.reason);
    }
    for (id, msg) in &o.failed {
        let _ = writeln!(s, "failed.{id}={msg}");
    }
    s
}

/// Parses a `report.kv` file back into a map.
pub fn read_report_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}
