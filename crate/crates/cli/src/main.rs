//! `profiler`: generate clouds, train quantizers, measure geometry, sample
//! and profile corpora, and fit measure-to-score regressions.
//!
//! Structured results go to stdout (or `--out`) as JSON. Errors go to stderr
//! as `{"error": {"code", "message"}}`. Exit status is 0 on success, 1 when
//! a computation is undefined, 2 on usage or input errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latent_geometry::analysis::{evaluate, fit_linear, pearson, write_residuals_csv, ObservationTable};
use latent_geometry::corpus::{
    compare_profiles, frequency_profile, read_token_lines, sample_sequences, write_rank_table, write_sequences,
    SampleConfig,
};
use latent_geometry::pointcloud::{generate_mixture, generate_uniform, interpolate_noise, load_matrix};
use latent_geometry::quantizer::{AdditiveConfig, ProductConfig};
use latent_geometry::suite::{measure_model, measure_spread, run_suite, summarize, QuantizerConfig, SuiteConfig};
use latent_geometry::{
    Error, Measure, MeasureReport, MeasureValue, MixtureSpec, PointCloud, QuantizationModel, Status,
};
use serde::Serialize;
use serde_json::{json, Value};

/// Version of the `config` block embedded in every report.
const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "profiler", version, about = "Geometry measures for high-dimensional point clouds")]
struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true, env = "PROFILER_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Uniform cloud on [low, high)^d.
    GenUniform(GenUniform),
    /// Gaussian mixture cloud, isotropic or from a JSON recipe.
    GenMixture(GenMixture),
    /// Entrywise (1 − α)·x + α·ε with standard normal ε.
    Interpolate(Interpolate),
    /// Train a quantizer and save the model.
    Quantize(Quantize),
    /// Compute a measure report for a cloud.
    Measure(MeasureCmd),
    /// Whole-cloud spread measures only.
    Spread(SpreadCmd),
    /// Draw a unique, length-bounded sample of token sequences.
    SampleCorpus(SampleCorpus),
    /// Compare a sample's frequency profile with its source corpus.
    Profile(ProfileCmd),
    /// Fit measures (and optionally architecture) to scores.
    Analyze(Analyze),
    /// Measure a cloud under a series of noise interpolation weights.
    Sweep(Sweep),
}

#[derive(Args, Serialize)]
struct GenUniform {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    low: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    high: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; `.csv` writes CSV, anything else the binary format.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GenMixture {
    /// JSON mixture recipe; overrides the isotropic options.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    components: usize,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Common per-axis standard deviation.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Standard deviation of the component means.
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    mean_seed: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct Interpolate {
    input: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Pq,
    Aq,
    Both,
}

#[derive(Args, Serialize, Clone)]
struct Training {
    /// Quantizer to train; `both` measures with each.
    #[arg(long, value_enum, default_value_t = Kind::Both)]
    kind: Kind,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 256)]
    k: usize,
    /// Lloyd iterations per subspace (product quantizer).
    #[arg(long, default_value_t = 25)]
    iters: usize,
    /// Outer iterations (additive quantizer).
    #[arg(long, default_value_t = 10)]
    outer_iters: usize,
    /// ICM sweeps per encoding (additive quantizer).
    #[arg(long, default_value_t = 3)]
    icm_sweeps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train on a seeded subsample of at most this many rows.
    #[arg(long)]
    train_sample: Option<usize>,
}

impl Training {
    fn quantizers(&self) -> Vec<QuantizerConfig> {
        let pq = || {
            QuantizerConfig::Pq(ProductConfig {
                m: self.m,
                k: self.k,
                iters: self.iters,
                seed: self.seed,
                train_sample: self.train_sample,
            })
        };
        let aq = || {
            QuantizerConfig::Aq(AdditiveConfig {
                m: self.m,
                k: self.k,
                outer_iters: self.outer_iters,
                icm_sweeps: self.icm_sweeps,
                seed: self.seed,
                train_sample: self.train_sample,
            })
        };
        match self.kind {
            Kind::Pq => vec![pq()],
            Kind::Aq => vec![aq()],
            Kind::Both => vec![pq(), aq()],
        }
    }
}

#[derive(Args, Serialize)]
struct Quantize {
    input: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    training: Training,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct Measuring {
    /// Comma-separated measure names; all by default.
    #[arg(long, value_delimiter = ',')]
    measures: Option<Vec<String>>,
    /// Vasicek spacing window; ⌊√n⌋ by default.
    #[arg(long)]
    vrm_window: Option<usize>,
    /// Smallest cluster kept by pdeee; max(8, width + 1) by default.
    #[arg(long)]
    min_cluster: Option<usize>,
}

impl Measuring {
    fn measures(&self) -> Result<Vec<Measure>, CliError> {
        match &self.measures {
            None => Ok(Measure::all()),
            Some(names) => names
                .iter()
                .map(|n| n.parse::<Measure>().map_err(|e| CliError::usage(format!("{e}"))))
                .collect(),
        }
    }
}

#[derive(Args, Serialize)]
struct MeasureCmd {
    input: PathBuf,
    /// Saved model to measure with instead of training one.
    #[arg(long, conflicts_with = "kind")]
    quantizer: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    training: Training,
    #[command(flatten)]
    #[serde(flatten)]
    measuring: Measuring,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SpreadCmd {
    input: PathBuf,
    #[arg(long)]
    vrm_window: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SampleCorpus {
    /// Token files, one whitespace-separated sequence per line, read in order.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    count: usize,
    #[arg(long, default_value_t = 3)]
    min: usize,
    #[arg(long, default_value_t = 50)]
    max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ProfileCmd {
    sample: PathBuf,
    #[arg(long)]
    against: Vec<PathBuf>,
    /// Directory for `unigram_ranks.csv`, `bigram_ranks.csv` and
    /// `length_ranks.csv`.
    #[arg(long)]
    tables: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct Analyze {
    observations: PathBuf,
    /// Measure column(s) to regress on; repeat or comma-separate.
    #[arg(long = "feature", value_delimiter = ',', required = true)]
    features: Vec<String>,
    /// Add one-hot architecture indicators (first level is the baseline).
    #[arg(long)]
    architecture: bool,
    /// Replace replicate rows by their per-group median first.
    #[arg(long)]
    median: bool,
    #[arg(long)]
    holdout: Option<PathBuf>,
    /// Residuals CSV: model_id, fitted, residual.
    #[arg(long)]
    residuals: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct Sweep {
    input: PathBuf,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    alphas: Vec<f64>,
    /// Seed of the noise cloud shared by every α.
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    training: Training,
    #[command(flatten)]
    #[serde(flatten)]
    measuring: Measuring,
    /// Plot-ready table with columns alpha, measure, value.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct CliError {
    code: &'static str,
    message: String,
    exit: u8,
}

impl CliError {
    fn usage(message: String) -> Self {
        CliError { code: "usage", message, exit: 2 }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let exit = match e {
            Error::Undefined(_) | Error::InsufficientData(_) | Error::RankDeficient { .. } => 1,
            _ => 2,
        };
        CliError { code: e.code(), message: e.to_string(), exit }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CliResult<T> = Result<T, CliError>;

/// What a command produced: JSON for stdout or a file, and whether any
/// value in it is undefined.
struct Output {
    json: String,
    undefined: bool,
}

impl Output {
    fn ok(value: &impl Serialize) -> Self {
        Output { json: pretty(value), undefined: false }
    }
}

fn pretty(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("output serializes")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(CliError::usage(e.render().to_string().trim_end().to_string())),
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            return fail(CliError::usage("--threads must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            return fail(CliError::usage(format!("thread pool: {e}")));
        }
    }
    match run(&cli.command) {
        Ok(out) => {
            if !out.json.is_empty() {
                println!("{}", out.json);
            }
            if out.undefined {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", json!({ "error": { "code": e.code, "message": e.message } }));
    ExitCode::from(e.exit)
}

/// The serialized command line, embedded as the `config` of every report.
fn run_config(command: &Command) -> Value {
    let mut v = serde_json::to_value(command).expect("config serializes");
    v["schema_version"] = json!(RUN_SCHEMA_VERSION);
    v
}

fn run(command: &Command) -> CliResult<Output> {
    match command {
        Command::GenUniform(a) => {
            let cloud = generate_uniform(a.n, a.d, a.low, a.high, a.seed)?;
            save_cloud(&cloud, &a.out)
        }
        Command::GenMixture(a) => {
            let spec = match &a.spec {
                Some(p) => {
                    let text = read_text(p)?;
                    serde_json::from_str::<MixtureSpec>(&text).map_err(|e| Error::Parse {
                        location: format!("{}:{}:{}", p.display(), e.line(), e.column()),
                        message: e.to_string(),
                    })?
                }
                None => MixtureSpec::isotropic(a.components, a.d, a.scale, a.separation, a.n, a.mean_seed, a.seed),
            };
            save_cloud(&generate_mixture(&spec)?, &a.out)
        }
        Command::Interpolate(a) => {
            let cloud = interpolate_noise(&load(&a.input)?, a.alpha, a.seed)?;
            save_cloud(&cloud, &a.out)
        }
        Command::Quantize(a) => quantize(a),
        Command::Measure(a) => {
            let cloud = load(&a.input)?;
            let report = measure(command, &cloud, a.quantizer.as_deref(), &a.training, &a.measuring)?;
            emit(Output { json: report.to_json(), undefined: report.any_undefined() }, a.out.as_deref())
        }
        Command::Spread(a) => spread(command, a),
        Command::SampleCorpus(a) => sample_corpus(a),
        Command::Profile(a) => profile(a),
        Command::Analyze(a) => analyze(a),
        Command::Sweep(a) => sweep(command, a),
    }
}

fn load(path: &Path) -> CliResult<PointCloud> {
    Ok(load_matrix(path, latent_geometry::MatrixFormat::from_path(path))?)
}

fn read_text(path: &Path) -> CliResult<String> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()).into());
    }
    Ok(fs::read_to_string(path)?)
}

fn save_cloud(cloud: &PointCloud, out: &Path) -> CliResult<Output> {
    cloud.save(out, latent_geometry::MatrixFormat::from_path(out))?;
    Ok(Output::ok(&json!({ "n": cloud.n(), "d": cloud.d(), "label": cloud.label(), "out": out })))
}

/// Writes `out.json` to `path` when given (leaving stdout empty).
fn emit(out: Output, path: Option<&Path>) -> CliResult<Output> {
    match path {
        Some(p) => {
            fs::write(p, format!("{}\n", out.json))?;
            Ok(Output { json: String::new(), undefined: out.undefined })
        }
        None => Ok(out),
    }
}

fn quantize(a: &Quantize) -> CliResult<Output> {
    if a.training.kind == Kind::Both {
        return Err(CliError::usage("quantize needs --kind pq or --kind aq".into()));
    }
    let cloud = load(&a.input)?;
    let q = &a.training.quantizers()[0];
    let (model, log) = q.train(&cloud)?;
    model.save(&a.out)?;
    Ok(Output::ok(&json!({
        "kind": q.kind().short(),
        "m": model.m,
        "k": model.k,
        "d": model.d,
        "seed": q.seed(),
        "training": summarize(&log),
        "out": a.out,
    })))
}

fn measure(
    command: &Command,
    cloud: &PointCloud,
    model_path: Option<&Path>,
    training: &Training,
    measuring: &Measuring,
) -> CliResult<MeasureReport> {
    let measures = measuring.measures()?;
    let Some(path) = model_path else {
        let cfg = SuiteConfig {
            quantizers: training.quantizers(),
            measures,
            vrm_window: measuring.vrm_window,
            min_cluster: measuring.min_cluster,
        };
        let mut report = run_suite(cloud, &cfg)?;
        report.config = run_config(command);
        return Ok(report);
    };
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()).into());
    }
    let model = QuantizationModel::load(path)?;
    let mut report = MeasureReport::new(cloud.label(), run_config(command));
    measure_model(&mut report, None, &model, cloud, &measures, measuring.min_cluster)?;
    measure_spread(&mut report, cloud, &measures, measuring.vrm_window)?;
    Ok(report)
}

fn spread(command: &Command, a: &SpreadCmd) -> CliResult<Output> {
    let cloud = load(&a.input)?;
    let mut report = MeasureReport::new(cloud.label(), run_config(command));
    measure_spread(&mut report, &cloud, &Measure::SPREAD, a.vrm_window)?;
    let get = |m: Measure| report.measures.get(m.name()).cloned().unwrap_or_else(|| MeasureValue::undefined("missing".into()));
    let (eee, vrm, iso) = (get(Measure::Eee), get(Measure::Vrm), get(Measure::IsoScore));
    let fragment = json!({
        "eee": eee.value,
        "vrm": vrm.value,
        "isoscore": iso.value,
        "statuses": { "eee": eee.status, "vrm": vrm.status, "isoscore": iso.status },
        "notes": report.notes,
        "config": report.config,
    });
    let undefined = [&eee, &vrm, &iso].iter().any(|v| v.status == Status::Undefined);
    emit(Output { json: pretty(&fragment), undefined }, a.out.as_deref())
}

fn sample_corpus(a: &SampleCorpus) -> CliResult<Output> {
    let lines = read_token_lines(&a.files)?;
    let cfg = SampleConfig { count: a.count, min_len: a.min, max_len: a.max, seed: a.seed };
    let sample = sample_sequences(lines, &cfg)?;
    write_sequences(&a.out, &sample.sequences)?;
    Ok(Output::ok(&json!({
        "count": sample.sequences.len(),
        "eligible": sample.eligible,
        "seed": sample.seed,
        "source_hash": sample.source_hash,
        "min": a.min,
        "max": a.max,
        "out": a.out,
    })))
}

fn profile(a: &ProfileCmd) -> CliResult<Output> {
    if a.against.is_empty() {
        return Err(CliError::usage("profile needs --against <full corpus file>".into()));
    }
    let sample = frequency_profile(&read_token_lines(&[&a.sample])?)?;
    let full = frequency_profile(&read_token_lines(&a.against)?)?;
    let cmp = compare_profiles(&sample, &full);
    if let Some(dir) = &a.tables {
        fs::create_dir_all(dir)?;
        write_rank_table(&dir.join("unigram_ranks.csv"), &cmp.unigram_table)?;
        write_rank_table(&dir.join("bigram_ranks.csv"), &cmp.bigram_table)?;
        write_rank_table(&dir.join("length_ranks.csv"), &cmp.length_table)?;
    }
    Ok(Output::ok(&cmp))
}

fn analyze(a: &Analyze) -> CliResult<Output> {
    let mut table = ObservationTable::read_csv(&a.observations)?;
    if a.median {
        table = table.median_by_group()?;
    }
    let mut fit = fit_linear(&table, &a.features, a.architecture)?;
    if let Some(h) = &a.holdout {
        let holdout = ObservationTable::read_csv(h)?;
        fit.holdout_mse = Some(evaluate(&fit, &holdout)?);
    }
    if let Some(p) = &a.residuals {
        write_residuals_csv(p, &fit)?;
    }
    let targets: Vec<f64> = table.rows().iter().map(|r| r.target).collect();
    let mut correlations = serde_json::Map::new();
    for f in &a.features {
        let pairs: Vec<(f64, f64)> =
            table.rows().iter().zip(&targets).filter_map(|(r, &t)| r.measure(f).map(|x| (x, t))).collect();
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = pearson(&x, &y).ok();
        correlations.insert(f.clone(), json!(r));
    }
    Ok(Output::ok(&json!({ "fit": fit, "pearson": correlations })))
}

fn sweep(command: &Command, a: &Sweep) -> CliResult<Output> {
    if let Some(bad) = a.alphas.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(CliError::usage(format!("alpha {bad} is outside [0, 1]")));
    }
    let base = load(&a.input)?;
    let mut reports = Vec::with_capacity(a.alphas.len());
    let mut rows = Vec::new();
    for &alpha in &a.alphas {
        let cloud = interpolate_noise(&base, alpha, a.noise_seed)?;
        let mut report = measure(command, &cloud, None, &a.training, &a.measuring)?;
        report.config["alpha"] = json!(alpha);
        report.seeds.insert("noise.seed".into(), a.noise_seed);
        for (name, v) in &report.measures {
            rows.push((alpha, name.clone(), v.value));
        }
        reports.push(report);
    }
    if let Some(p) = &a.csv {
        let mut text = String::from("alpha,measure,value\n");
        for (alpha, name, value) in rows {
            text.push_str(&format!("{alpha},{name},{}\n", value.map_or(String::new(), |v| v.to_string())));
        }
        fs::write(p, text)?;
    }
    let undefined = reports.iter().any(MeasureReport::any_undefined);
    let reports: Vec<Value> = reports
        .into_iter()
        .zip(&a.alphas)
        .map(|(r, &alpha)| json!({ "alpha": alpha, "report": r }))
        .collect();
    emit(Output { json: pretty(&reports), undefined }, a.out.as_deref())
}
