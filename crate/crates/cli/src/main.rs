use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use met3r_client::{Client, ClientError};
use met3r_core::api::{ApiError, JobRequest, JobState, SelftestRequest};
use met3r_core::backends::synthetic::{SceneSurface, SurfaceGeometry, SyntheticSequenceSpec};
use met3r_core::backends::{CorrespondenceBackendConfig, FeatureBackendConfig, PointMapBackendConfig};
use met3r_core::baselines::TsedThresholds;
use met3r_core::harness::{plot, read_summary, write_synthetic_sequence, EvalJob, ExternMetrics, ResizePolicy, Summary};
use met3r_core::metric::{MetricOptions, Variant};

#[derive(Parser)]
#[command(name = "met3r", version, about = "Multi-view consistency scoring for generated image sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every sliding-window pair of a dataset.
    Eval(Box<EvalArgs>),
    /// Overlay the curves of several runs and print their means.
    Compare(CompareArgs),
    /// Run the built-in oracle checks.
    Selftest(SelftestArgs),
    /// Run the scoring service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Write synthetic sequences with ground-truth poses.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PointKind {
    Synthetic,
    Cache,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureKind {
    Rgb,
    Randproj,
    Cache,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Cosine,
    Psnr,
    Ssim,
}

#[derive(Clone, Copy, ValueEnum)]
enum ResizeArg {
    Direct,
    Aspect,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeometryArg {
    Plane,
    Cloud,
    HeightField,
}

#[derive(Args)]
struct ServerArg {
    /// Service URL; an in-process server is started when omitted.
    #[arg(long)]
    server: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Restrict to these sequence ids (repeatable).
    #[arg(long = "sequence")]
    sequences: Vec<String>,
    #[arg(long, value_enum, default_value = "synthetic")]
    point_backend: PointKind,
    #[arg(long, value_enum, default_value = "rgb")]
    feature_backend: FeatureKind,
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    #[arg(long, value_enum, default_value = "direct")]
    resize: ResizeArg,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    one_directional: bool,
    #[arg(long, value_enum, default_value = "cosine")]
    variant: VariantArg,
    /// Also report the similarity averaged over all pixels.
    #[arg(long)]
    unmasked: bool,
    /// Compute SED and TSED.
    #[arg(long)]
    baselines: bool,
    #[arg(long, default_value_t = 2.0)]
    te: f64,
    #[arg(long, default_value_t = 10)]
    tm: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    score_maps: bool,
    /// Splat radius in pixels.
    #[arg(long)]
    splat_radius: Option<f64>,
    /// Tensor cache directory for `cache` backends.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    point_exe: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    point_model: String,
    #[arg(long)]
    feature_exe: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    feature_model: String,
    /// Channel count for `randproj`; checked on arrival for cache and external.
    #[arg(long)]
    feature_channels: Option<usize>,
    /// Resize low-resolution feature maps to image size.
    #[arg(long)]
    upsample: bool,
    /// Correspondence source for baselines; follows the point backend when omitted.
    #[arg(long, value_enum)]
    match_backend: Option<PointKind>,
    #[arg(long)]
    match_exe: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    match_model: String,
    /// Number of correspondences drawn by the synthetic matcher.
    #[arg(long, default_value_t = 256)]
    match_count: usize,
    /// JSON file with fid/kid/fvd values to merge into the summary.
    #[arg(long)]
    extern_metrics: Option<PathBuf>,
    /// Method name in the summary.
    #[arg(long)]
    label: Option<String>,
    #[command(flatten)]
    server: ServerArg,
}

#[derive(Args)]
struct CompareArgs {
    /// summary.json files to overlay.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "met3r")]
    column: String,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side length of the synthetic test images.
    #[arg(long, default_value_t = 48)]
    size: usize,
    #[command(flatten)]
    server: ServerArg,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    sequences: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "height-field")]
    geometry: GeometryArg,
    /// Repaint fraction at the start of the ramp; frame 0 itself is never repainted.
    #[arg(long, default_value_t = 0.0)]
    epsilon_start: f64,
    /// Repaint fraction of the last frame.
    #[arg(long, default_value_t = 0.0)]
    epsilon_end: f64,
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    fn other(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn from_kind(kind: &str, message: String) -> Self {
        let code = match kind {
            "failure_budget" => 2,
            "config" => 3,
            _ => 1,
        };
        Self { code, message }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::from_kind(e.kind(), e.to_string())
    }
}

impl From<&ApiError> for Failure {
    fn from(e: &ApiError) -> Self {
        Failure::from_kind(&e.kind, e.message.clone())
    }
}

impl From<met3r_core::Error> for Failure {
    fn from(e: met3r_core::Error) -> Self {
        Failure::from_kind(e.kind(), e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(dispatch(cli.command)) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

async fn dispatch(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Eval(args) => eval(*args).await,
        Command::Compare(args) => compare(args),
        Command::Selftest(args) => selftest(args).await,
        Command::Serve { addr } => {
            let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Failure::other(e.to_string()))?;
            eprintln!("listening on http://{}", listener.local_addr().map_err(|e| Failure::other(e.to_string()))?);
            met3r_server::serve(listener).await.map_err(|e| Failure::other(e.to_string()))?;
            Ok(0)
        }
        Command::Synth(args) => synth(args),
    }
}

async fn connect(server: &ServerArg) -> Result<Client, Failure> {
    match &server.server {
        Some(url) => Ok(Client::new(url.clone())),
        None => {
            let (addr, _handle) = met3r_server::spawn(([127, 0, 0, 1], 0).into())
                .await
                .map_err(|e| Failure::other(format!("cannot start local server: {e}")))?;
            Ok(Client::new(format!("http://{addr}")))
        }
    }
}

fn absolute(path: &Path, what: &str) -> Result<PathBuf, Failure> {
    std::fs::canonicalize(path).map_err(|e| Failure::config(format!("{what} {}: {e}", path.display())))
}

fn need(path: &Option<PathBuf>, flag: &str, what: &str) -> Result<PathBuf, Failure> {
    match path {
        Some(p) => absolute(p, what),
        None => Err(Failure::config(format!("{flag} is required for {what}"))),
    }
}

fn build_job(args: &EvalArgs) -> Result<EvalJob, Failure> {
    let point_backend = match args.point_backend {
        PointKind::Synthetic => PointMapBackendConfig::SyntheticSidecar,
        PointKind::Cache => PointMapBackendConfig::TensorCache { cache_dir: need(&args.cache_dir, "--cache-dir", "the cache backend")? },
        PointKind::External => PointMapBackendConfig::ExternalProcess {
            executable: need(&args.point_exe, "--point-exe", "the external point backend")?,
            model_id: args.point_model.clone(),
        },
    };
    let feature_backend = match args.feature_backend {
        FeatureKind::Rgb => FeatureBackendConfig::Rgb,
        FeatureKind::Randproj => {
            FeatureBackendConfig::SeededRandomProjection { channels: args.feature_channels.unwrap_or(16), seed: args.seed }
        }
        FeatureKind::Cache => FeatureBackendConfig::TensorCache {
            cache_dir: need(&args.cache_dir, "--cache-dir", "the cache backend")?,
            channels: args.feature_channels,
            upsample: args.upsample,
        },
        FeatureKind::External => FeatureBackendConfig::ExternalProcess {
            executable: need(&args.feature_exe, "--feature-exe", "the external feature backend")?,
            model_id: args.feature_model.clone(),
            channels: args.feature_channels,
            upsample: args.upsample,
        },
    };
    let correspondence_backend = if args.baselines {
        Some(match args.match_backend.unwrap_or(args.point_backend) {
            PointKind::Synthetic => CorrespondenceBackendConfig::SyntheticSidecar { count: args.match_count, seed: args.seed },
            PointKind::Cache => {
                CorrespondenceBackendConfig::TensorCache { cache_dir: need(&args.cache_dir, "--cache-dir", "the cache backend")? }
            }
            PointKind::External => CorrespondenceBackendConfig::ExternalProcess {
                executable: need(&args.match_exe, "--match-exe", "the external match backend")?,
                model_id: args.match_model.clone(),
            },
        })
    } else {
        None
    };

    let mut metric = MetricOptions {
        one_directional: args.one_directional,
        variant: match args.variant {
            VariantArg::Cosine => Variant::FeatureCosine,
            VariantArg::Psnr => Variant::RgbPsnr,
            VariantArg::Ssim => Variant::RgbSsim,
        },
        unmasked_ablation: args.unmasked,
        ..MetricOptions::default()
    };
    if let Some(r) = args.splat_radius {
        metric.rasterizer.splat_radius = r;
    }

    let mut job = EvalJob::new(absolute(&args.data, "data directory")?, point_backend, feature_backend);
    job.sequences = args.sequences.clone();
    job.stride = args.stride;
    job.resolution = args.resolution;
    job.resize = match args.resize {
        ResizeArg::Direct => ResizePolicy::Direct,
        ResizeArg::Aspect => ResizePolicy::Aspect,
    };
    job.correspondence_backend = correspondence_backend;
    job.metric = metric;
    job.baselines = args.baselines;
    job.tsed = TsedThresholds { te: args.te, tm: args.tm };
    job.score_maps = args.score_maps;
    job.workers = args.workers;
    job.seed = args.seed;
    job.label = args.label.clone();
    Ok(job)
}

async fn eval(args: EvalArgs) -> Result<u8, Failure> {
    let job = build_job(&args)?;
    let out_dir = match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Failure::config(format!("output directory {}: {e}", dir.display())))?;
            Some(absolute(dir, "output directory")?)
        }
        None => None,
    };
    let extern_metrics = args.extern_metrics.as_deref().map(ExternMetrics::load).transpose()?;

    let client = connect(&args.server).await?;
    let id = client.submit_job(&JobRequest { job, out_dir, extern_metrics }).await?;
    let status = client.wait_job(&id).await?;
    match status.state {
        JobState::Done => {
            let summary = status.summary.ok_or_else(|| Failure::other("finished job has no summary"))?;
            print!("{}", means_table(&[&summary]));
            if !status.outputs.is_empty() {
                eprintln!("wrote {} files", status.outputs.len());
            }
            Ok(0)
        }
        _ => Err(status.error.as_ref().map(Failure::from).unwrap_or_else(|| Failure::other("job failed"))),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn means_table(rows: &[&Summary]) -> String {
    let header = ["method", "pairs", "excluded", "met3r", "psnr", "ssim", "unmasked", "sed", "tsed", "fid", "kid", "fvd"];
    let mut lines = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for s in rows {
        let m = &s.means;
        let mut row = vec![s.method.clone(), s.pairs.to_string(), s.excluded.to_string()];
        row.extend([m.met3r, m.psnr, m.ssim, m.unmasked, m.sed, m.tsed, m.fid, m.kid, m.fvd].map(fmt_opt));
        lines.push(row);
    }
    let widths: Vec<usize> = (0..header.len()).map(|c| lines.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in lines {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn compare(args: CompareArgs) -> Result<u8, Failure> {
    let summaries = args
        .runs
        .iter()
        .map(|p| read_summary(p).map_err(|e| Failure::config(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let series: Vec<(&str, &_)> = summaries
        .iter()
        .filter_map(|s| s.curves.iter().find(|c| c.column == args.column).map(|c| (s.method.as_str(), c)))
        .collect();
    if series.is_empty() {
        return Err(Failure::config(format!("no run has a `{}` curve", args.column)));
    }
    plot::save_curves(&args.out, &series)?;
    print!("{}", means_table(&summaries.iter().collect::<Vec<_>>()));
    Ok(0)
}

async fn selftest(args: SelftestArgs) -> Result<u8, Failure> {
    let client = connect(&args.server).await?;
    let report = client.selftest(&SelftestRequest { seed: args.seed, size: args.size }).await?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let passed = report.checks.iter().filter(|c| c.passed).count();
    println!("{passed} of {} checks passed", report.checks.len());
    Ok(if report.passed() { 0 } else { 1 })
}

fn synth(args: SynthArgs) -> Result<u8, Failure> {
    if args.frames < 2 || args.size < 16 {
        return Err(Failure::config("synth needs at least 2 frames of at least 16 px"));
    }
    for k in 0..args.sequences {
        let seed = args.seed + k as u64;
        let mut spec = SyntheticSequenceSpec::standard(seed, args.frames, args.size);
        spec.surface = SceneSurface {
            geometry: match args.geometry {
                GeometryArg::Plane => SurfaceGeometry::Plane,
                GeometryArg::Cloud => SurfaceGeometry::RandomCloud,
                GeometryArg::HeightField => SurfaceGeometry::TexturedHeightField,
            },
            ..spec.surface
        };
        spec.inconsistency = (args.epsilon_start, args.epsilon_end);
        let dir = if args.sequences == 1 { args.out.clone() } else { args.out.join(format!("seq_{k:03}")) };
        write_synthetic_sequence(&dir, &spec)?;
        eprintln!("{}", dir.display());
    }
    Ok(0)
}
