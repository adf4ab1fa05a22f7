//! `loopeval` command-line front end: dataset preparation, loop synthesis,
//! embedding, classifier training and metric evaluation.
//!
//! Exit status is 0 on success, 1 when processing fails and 2 on usage
//! errors. `LOOPEVAL_THREADS` caps worker threads (0 or unset = automatic).

pub mod report;

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use loopeval::diversity::{self, ClusterModel, DEFAULT_ALPHA, DEFAULT_K};
use loopeval::features::{self, EmbeddingSet, PosteriorSet, SoftmaxClassifier, TrainConfig};
use loopeval::prep::{self, PrepConfig, PreparedBar};
use loopeval::synthloop::{self, Diversity};
use loopeval::tensorio::{self, Tensor};
use loopeval::{metrics, par};
use serde::Serialize;

use report::{DiversityParameters, FrechetParameters, InceptionParameters, MetricReport, ReportParameters};

pub const THREADS_ENV: &str = "LOOPEVAL_THREADS";
pub const DEFAULT_MAX_REFERENCE: usize = 10_000;

#[derive(Debug, Parser)]
#[command(name = "loopeval", version, about = "Evaluation toolkit for generated drum loops")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Slice, tempo-normalize and mel-render a WAV corpus.
    Prepare(PrepareArgs),
    /// Render a procedural drum-loop set.
    Synth(SynthArgs),
    /// Embed a prepared directory with the mel-statistics embedder.
    Embed(EmbedArgs),
    /// Train the softmax-regression posterior model.
    TrainClassifier(TrainArgs),
    /// Score a generated set against a reference set.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV with header `path,downbeat_seconds`.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Slice recordings without annotations on a grid at this tempo.
    #[arg(long)]
    pub grid_bpm: Option<f64>,
    #[arg(long, default_value_t = 120.0)]
    pub target_bpm: f64,
    #[arg(long, default_value_t = 4)]
    pub bar_beats: u32,
    #[arg(long, default_value_t = 44_100)]
    pub sr: u32,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value = "high")]
    pub diversity: Diversity,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Prepared directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Output LTEN file of shape (M, 160).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature table (LTEN or CSV `clip_id,v0,...`).
    #[arg(long)]
    pub features: PathBuf,
    /// CSV with header `clip_id,label`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub l2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Metric {
    Is,
    Fad,
    Ndb,
    Jsd,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Is => "is",
            Metric::Fad => "fad",
            Metric::Ndb => "ndb",
            Metric::Jsd => "jsd",
        })
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prepared reference directory.
    #[arg(long)]
    pub real: PathBuf,
    /// Prepared generated directory.
    #[arg(long)]
    pub fake: PathBuf,
    /// Comma-separated subset of is,fad,ndb,jsd. Defaults to fad,ndb,jsd,
    /// plus is when a posterior source is given.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<Metric>>,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub splits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// External embeddings for the real and fake sets.
    #[arg(long, num_args = 2, value_names = ["REAL", "FAKE"])]
    pub embeddings: Option<Vec<PathBuf>>,
    /// External posteriors for the fake set.
    #[arg(long, conflicts_with = "classifier")]
    pub posteriors: Option<PathBuf>,
    /// Trained model applied to the fake embeddings.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Reference bars used for clustering; larger sets are subsampled with the seed.
    #[arg(long, default_value_t = DEFAULT_MAX_REFERENCE)]
    pub max_reference: usize,
    /// Reuse a saved clustering instead of fitting one.
    #[arg(long)]
    pub clusters_in: Option<PathBuf>,
    /// Save the fitted clustering.
    #[arg(long, conflicts_with = "clusters_in")]
    pub clusters_out: Option<PathBuf>,
}

/// Failure of a command, mapped to its exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failed(e)
    }
}

impl From<loopeval::Error> for CliError {
    fn from(e: loopeval::Error) -> Self {
        CliError::Failed(e.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Failed(e) => write!(f, "{e:#}"),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Worker count from `LOOPEVAL_THREADS`.
pub fn thread_limit() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))),
        _ => Ok(0),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let outcome = thread_limit().and_then(|threads| par::with_threads(threads, || execute(cli.command, &argv)));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(_) => eprintln!("error: {e}\n\nFor more information, try '--help'."),
                CliError::Failed(_) => eprintln!("error: {e}"),
            }
            e.exit_code()
        }
    }
}

fn execute(command: Command, argv: &[String]) -> CliResult {
    match command {
        Command::Prepare(a) => cmd_prepare(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Embed(a) => cmd_embed(&a),
        Command::TrainClassifier(a) => cmd_train_classifier(&a),
        Command::Eval(a) => cmd_eval(&a, argv),
    }
}

fn format_drops(dropped: &std::collections::BTreeMap<String, usize>) -> String {
    if dropped.is_empty() {
        return "none".into();
    }
    dropped.iter().map(|(r, n)| format!("{r}: {n}")).collect::<Vec<_>>().join(", ")
}

pub fn cmd_prepare(a: &PrepareArgs) -> CliResult {
    let config = PrepConfig {
        sample_rate: a.sr,
        target_bpm: a.target_bpm,
        bar_beats: a.bar_beats,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let summary = prep::prepare_dataset(&a.input, a.annotations.as_deref(), a.grid_bpm, &a.out, &config)?;
    let drops = format_drops(&summary.dropped);
    if summary.bars_written == 0 {
        return Err(CliError::Failed(anyhow!(
            "all {} bars dropped ({drops})",
            summary.dropped_total()
        )));
    }
    println!(
        "prepared {} files: {} bars written, {} dropped ({drops})",
        summary.files,
        summary.bars_written,
        summary.dropped_total()
    );
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let manifest = synthloop::generate_set(a.count, a.diversity, a.seed, &a.out)?;
    println!(
        "wrote {} {} loops (seed {}) to {}",
        manifest.count,
        manifest.diversity,
        manifest.seed,
        a.out.display()
    );
    Ok(())
}

fn embed_bars(bars: &[PreparedBar]) -> loopeval::Result<EmbeddingSet> {
    let embeddings = par::try_map(bars, |b| {
        let mut e = features::melstat_embed(&b.mel)?;
        e.clip_id = b.id.clone();
        Ok::<_, loopeval::Error>(e)
    })?;
    EmbeddingSet::from_embeddings(&embeddings)
}

#[derive(Serialize)]
struct EmbedSidecar<'a> {
    provider_id: &'a str,
    seed: u64,
    dims: [usize; 2],
    clip_ids: &'a [String],
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

pub fn cmd_embed(a: &EmbedArgs) -> CliResult {
    let bars = prep::load_prepared(&a.input)?;
    let set = embed_bars(&bars)?;
    tensorio::write_tensor(&a.out, &Tensor::from_matrix(&set.matrix))?;
    let sidecar = EmbedSidecar {
        provider_id: &set.provider_id,
        seed: a.seed,
        dims: [set.len(), set.dim()],
        clip_ids: &set.clip_ids,
    };
    let path = sidecar_path(&a.out);
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
    fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    println!("embedded {} bars into {} ({}x{})", set.len(), a.out.display(), set.len(), set.dim());
    Ok(())
}

/// Labels aligned to the feature rows: by clip id when every row id is
/// labelled, otherwise by position for id-less (LTEN) features.
fn align_labels(features: &EmbeddingSet, labels: &features::LabelSet, lten: bool) -> anyhow::Result<Vec<usize>> {
    let by_id: HashMap<&str, usize> = labels
        .clip_ids
        .iter()
        .map(String::as_str)
        .zip(labels.labels.iter().copied())
        .collect();
    if let Some(aligned) = features
        .clip_ids
        .iter()
        .map(|id| by_id.get(id.as_str()).copied())
        .collect::<Option<Vec<usize>>>()
    {
        return Ok(aligned);
    }
    if lten && labels.labels.len() == features.len() {
        return Ok(labels.labels.clone());
    }
    bail!(
        "labels do not cover the feature rows ({} rows, {} labels)",
        features.len(),
        labels.labels.len()
    )
}

pub fn cmd_train_classifier(a: &TrainArgs) -> CliResult {
    let config = TrainConfig {
        l2: a.l2,
        step: a.step,
        epochs: a.epochs,
        seed: a.seed,
    };
    if !(a.l2 >= 0.0) || !(a.step > 0.0) || a.epochs == 0 {
        return Err(usage("--l2 must be >= 0, --step > 0 and --epochs >= 1"));
    }
    let lten = tensorio::is_lten(&a.features)?;
    let set = features::load_embeddings(&a.features)?;
    let labels = features::read_labels(&a.labels)?;
    let aligned = align_labels(&set, &labels, lten)?;
    let model = features::train_classifier(&set.matrix, &aligned, labels.class_names.clone(), config)?;
    let json = serde_json::to_string_pretty(&model).expect("model serializes") + "\n";
    fs::write(&a.out, json).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "trained {} classes on {} rows (seed {}): training accuracy {:.6}",
        model.class_names.len(),
        set.len(),
        a.seed,
        model.training_accuracy
    );
    Ok(())
}

fn load_classifier(path: &Path) -> anyhow::Result<SoftmaxClassifier> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing classifier {}", path.display()))
}

fn requested_metrics(a: &EvalArgs) -> CliResult<Vec<Metric>> {
    let has_posteriors = a.posteriors.is_some() || a.classifier.is_some();
    let mut metrics = match &a.metrics {
        Some(m) if m.is_empty() => return Err(usage("--metrics must name at least one metric")),
        Some(m) => m.clone(),
        None if has_posteriors => vec![Metric::Is, Metric::Fad, Metric::Ndb, Metric::Jsd],
        None => vec![Metric::Fad, Metric::Ndb, Metric::Jsd],
    };
    metrics.sort();
    metrics.dedup();
    if metrics.contains(&Metric::Is) && !has_posteriors {
        return Err(usage(
            "the inception score needs a posterior source: pass --posteriors <file> or --classifier <model>",
        ));
    }
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(usage(format!("--alpha must lie in (0, 1), got {}", a.alpha)));
    }
    if a.k < 2 {
        return Err(usage("--k must be at least 2"));
    }
    if a.splits == 0 {
        return Err(usage("--splits must be at least 1"));
    }
    if a.max_reference < a.k {
        return Err(usage("--max-reference must be at least --k"));
    }
    Ok(metrics)
}

/// Lazily loaded prepared sets and embeddings shared across metrics.
struct EvalInputs<'a> {
    args: &'a EvalArgs,
    real: Option<Vec<PreparedBar>>,
    fake: Option<Vec<PreparedBar>>,
    real_embeddings: Option<EmbeddingSet>,
    fake_embeddings: Option<EmbeddingSet>,
}

impl<'a> EvalInputs<'a> {
    fn new(args: &'a EvalArgs) -> Self {
        Self {
            args,
            real: None,
            fake: None,
            real_embeddings: None,
            fake_embeddings: None,
        }
    }

    fn real(&mut self) -> anyhow::Result<&[PreparedBar]> {
        if self.real.is_none() {
            self.real = Some(prep::load_prepared(&self.args.real)?);
        }
        Ok(self.real.as_deref().expect("loaded"))
    }

    fn fake(&mut self) -> anyhow::Result<&[PreparedBar]> {
        if self.fake.is_none() {
            self.fake = Some(prep::load_prepared(&self.args.fake)?);
        }
        Ok(self.fake.as_deref().expect("loaded"))
    }

    fn real_embeddings(&mut self) -> anyhow::Result<&EmbeddingSet> {
        if self.real_embeddings.is_none() {
            let set = match &self.args.embeddings {
                Some(paths) => features::load_embeddings(&paths[0])?,
                None => embed_bars(self.real()?)?,
            };
            self.real_embeddings = Some(set);
        }
        Ok(self.real_embeddings.as_ref().expect("loaded"))
    }

    fn fake_embeddings(&mut self) -> anyhow::Result<&EmbeddingSet> {
        if self.fake_embeddings.is_none() {
            let set = match &self.args.embeddings {
                Some(paths) => features::load_embeddings(&paths[1])?,
                None => embed_bars(self.fake()?)?,
            };
            self.fake_embeddings = Some(set);
        }
        Ok(self.fake_embeddings.as_ref().expect("loaded"))
    }
}

struct InceptionOutcome {
    result: metrics::IsResult,
    params: InceptionParameters,
}

fn run_inception(inputs: &mut EvalInputs) -> anyhow::Result<InceptionOutcome> {
    let a = inputs.args;
    let (posteriors, classifier, embedding_provider): (PosteriorSet, _, _) = match (&a.posteriors, &a.classifier) {
        (Some(path), _) => (features::load_posteriors(path)?, None, None),
        (None, Some(path)) => {
            let model = load_classifier(path)?;
            let fake = inputs.fake_embeddings()?;
            let posteriors = features::predict_posteriors(&model, &fake.matrix)?;
            (posteriors, Some(path.display().to_string()), Some(fake.provider_id.clone()))
        }
        (None, None) => bail!("no posterior source"),
    };
    let result = metrics::inception_score(&posteriors, a.splits, a.seed)?;
    let params = InceptionParameters {
        splits: a.splits,
        seed: a.seed,
        posterior_provider: posteriors.provider_id.clone(),
        classifier,
        embedding_provider,
        sample_count: posteriors.len(),
        class_count: posteriors.class_count(),
        split_scores: result.split_scores.clone(),
    };
    Ok(InceptionOutcome { result, params })
}

fn run_frechet(inputs: &mut EvalInputs) -> anyhow::Result<(f64, FrechetParameters)> {
    let real = inputs.real_embeddings()?.clone();
    let fake = inputs.fake_embeddings()?;
    let fad = metrics::frechet_distance(&metrics::fit_gaussian(&real.matrix)?, &metrics::fit_gaussian(&fake.matrix)?)?;
    Ok((
        fad,
        FrechetParameters {
            real_provider: real.provider_id.clone(),
            fake_provider: fake.provider_id.clone(),
            real_count: real.len(),
            fake_count: fake.len(),
            dim: real.dim(),
        },
    ))
}

fn flatten(bars: &[PreparedBar], indices: Option<&[usize]>) -> loopeval::Result<loopeval::Matrix<f32>> {
    let mels: Vec<_> = match indices {
        Some(idx) => idx.iter().map(|&i| &bars[i].mel).collect(),
        None => bars.iter().map(|b| &b.mel).collect(),
    };
    diversity::flatten_mels(&mels)
}

fn run_diversity(inputs: &mut EvalInputs) -> anyhow::Result<(diversity::DiversityResult, DiversityParameters)> {
    let a = inputs.args;
    let reference_available = inputs.real()?.len();
    let model = match &a.clusters_in {
        Some(path) => ClusterModel::load(path)?,
        None => {
            let picked = diversity::sample_indices(reference_available, a.max_reference, a.seed);
            if picked.len() < a.k {
                bail!("reference set of {} bars is smaller than k = {}", picked.len(), a.k);
            }
            let vectors = flatten(inputs.real()?, Some(&picked))?;
            diversity::kmeans_fit(&vectors, a.k, a.seed)?
        }
    };
    if let Some(path) = &a.clusters_out {
        model.save(path)?;
    }
    let counts = diversity::assign_bins(&model, &flatten(inputs.fake()?, None)?)?;
    let result = diversity::score_counts(&model, &counts, a.alpha)?;
    let params = DiversityParameters {
        k: model.k,
        alpha: a.alpha,
        critical_value: result.critical_value,
        kmeans_seed: model.seed,
        kmeans_iterations: model.iterations,
        reference_available,
        reference_count: model.reference_total,
        generated_count: result.generated_total,
        max_reference: a.max_reference,
        clusters_in: a.clusters_in.as_ref().map(|p| p.display().to_string()),
        clusters_out: a.clusters_out.as_ref().map(|p| p.display().to_string()),
    };
    Ok((result, params))
}

/// Runs the requested metrics; any failure aborts before a report exists.
pub fn evaluate(a: &EvalArgs, argv: &[String]) -> CliResult<MetricReport> {
    let metrics = requested_metrics(a)?;
    let mut inputs = EvalInputs::new(a);
    let mut report = MetricReport {
        is_mean: None,
        is_std: None,
        fad: None,
        jsd: None,
        ndb: None,
        ndb_over_k: None,
        parameters: ReportParameters {
            metrics: metrics.iter().map(Metric::to_string).collect(),
            seed: a.seed,
            real_dir: a.real.display().to_string(),
            fake_dir: a.fake.display().to_string(),
            inception: None,
            frechet: None,
            diversity: None,
        },
        command: argv.to_vec(),
        toolkit_version: loopeval::VERSION.to_string(),
        timestamp: report::timestamp()?,
    };
    if metrics.contains(&Metric::Is) {
        let out = run_inception(&mut inputs).context("metric is failed")?;
        report.is_mean = Some(out.result.mean);
        report.is_std = Some(out.result.std);
        report.parameters.inception = Some(out.params);
    }
    if metrics.contains(&Metric::Fad) {
        let (fad, params) = run_frechet(&mut inputs).context("metric fad failed")?;
        report.fad = Some(fad);
        report.parameters.frechet = Some(params);
    }
    let want_ndb = metrics.contains(&Metric::Ndb);
    let want_jsd = metrics.contains(&Metric::Jsd);
    if want_ndb || want_jsd {
        let name = if want_ndb { "ndb" } else { "jsd" };
        let (result, params) = run_diversity(&mut inputs).with_context(|| format!("metric {name} failed"))?;
        if want_ndb {
            report.ndb = Some(result.ndb);
            report.ndb_over_k = Some(result.ndb_over_k);
        }
        if want_jsd {
            report.jsd = Some(result.jsd);
        }
        report.parameters.diversity = Some(params);
    }
    Ok(report)
}

pub fn cmd_eval(a: &EvalArgs, argv: &[String]) -> CliResult {
    let report = evaluate(a, argv)?;
    if let Some(path) = &a.report {
        report.write(path)?;
    }
    print!("{}", report.table());
    Ok(())
}
