use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use repscope::activation_io::DType;
use repscope::segmenter::LayerStatistic;
use repscope_cli::config::load_controls_map;
use repscope_cli::synth::{self, SynthSpec};
use repscope_cli::{pipeline, report, resolve_threads, with_threads};
use repscope_cli::{Analyses, CliError, CliResult, Covariate, RunConfig, TaskFilter};

/// Layer-wise representation analysis of fine-tuned models.
#[derive(Parser)]
#[command(name = "repscope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// CKA between the experimental and control models per task and layer.
    Cka(CommonArgs),
    /// Principal components needed for a share of the variance.
    Variance(CommonArgs),
    /// Readability of each task's instruction texts.
    Readability(CommonArgs),
    /// Correlate per-layer CKA with task covariates.
    Correlate(CommonArgs),
    /// t-SNE of the experimental model's activations.
    Tsne(CommonArgs),
    /// Three-regime segmentation of the layer stack.
    Segment(CommonArgs),
    /// Aggregate step outputs into report.json.
    Report(CommonArgs),
    /// Run the enabled analyses, then the report.
    Run(RunArgs),
    /// Write a synthetic dataset with planted layer regimes.
    Synth(SynthArgs),
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Model id of the multi-task model.
    #[arg(long)]
    experimental: Option<String>,
    /// JSON object mapping task id to control model id.
    #[arg(long)]
    controls_map: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; falls back to REPSCOPE_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "all")]
    tasks: TaskFilter,
    #[arg(long, default_value_t = 0.99)]
    variance_threshold: f64,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    tsne_iterations: usize,
    /// Comma-separated layers to embed; all layers when omitted.
    #[arg(long, value_delimiter = ',')]
    tsne_layers: Option<Vec<usize>>,
    #[arg(long, default_value_t = 2000)]
    tsne_max_points: usize,
    /// Comma-separated subset of fk, cl, data_size.
    #[arg(long, default_value = "fk,cl,data_size", value_parser = parse_covariates)]
    covariates: CovariateList,
    #[arg(long, default_value = "median", value_parser = parse_statistic)]
    statistic: LayerStatistic,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated analyses, or "all".
    #[arg(long, default_value = "all")]
    analyses: Analyses,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    tasks: usize,
    #[arg(long, default_value_t = 2)]
    unseen: usize,
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    #[arg(long, default_value_t = 32)]
    layers: usize,
    #[arg(long, default_value_t = 16)]
    dims: usize,
    #[arg(long, default_value_t = 24)]
    min_examples: usize,
    #[arg(long, default_value_t = 40)]
    max_examples: usize,
    #[arg(long, default_value_t = 9)]
    b1: usize,
    #[arg(long, default_value_t = 15)]
    b2: usize,
    #[arg(long, default_value_t = false)]
    f64: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone)]
struct CovariateList(Vec<Covariate>);

fn parse_covariates(s: &str) -> Result<CovariateList, String> {
    Covariate::parse_list(s).map(CovariateList)
}

fn parse_statistic(s: &str) -> Result<LayerStatistic, String> {
    match s {
        "median" => Ok(LayerStatistic::Median),
        "mean" => Ok(LayerStatistic::Mean),
        other => Err(format!("unknown statistic {other:?}; expected median or mean")),
    }
}

fn build_config(args: &CommonArgs, analyses: Analyses) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::new(&args.manifest, &args.out);
    cfg.experimental = args.experimental.clone();
    if let Some(path) = &args.controls_map {
        cfg.controls = load_controls_map(path)?;
    }
    cfg.analyses = analyses;
    cfg.tasks = args.tasks;
    cfg.seed = args.seed;
    cfg.variance_threshold = args.variance_threshold;
    cfg.perplexity = args.perplexity;
    cfg.tsne_iterations = args.tsne_iterations;
    cfg.tsne_layers = args.tsne_layers.clone();
    cfg.tsne_max_points = args.tsne_max_points;
    cfg.covariates = args.covariates.0.clone();
    cfg.statistic = args.statistic;
    Ok(cfg)
}

fn single(args: &CommonArgs, step: fn(&RunConfig) -> CliResult<()>) -> CliResult<()> {
    let cfg = build_config(args, Analyses::all())?;
    with_threads(resolve_threads(args.threads)?, || step(&cfg))?
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Cka(a) => single(&a, |c| pipeline::cmd_cka(c).map(drop)),
        Command::Variance(a) => single(&a, |c| pipeline::cmd_variance(c).map(drop)),
        Command::Readability(a) => single(&a, |c| pipeline::cmd_readability(c).map(drop)),
        Command::Correlate(a) => single(&a, |c| pipeline::cmd_correlate(c).map(drop)),
        Command::Tsne(a) => single(&a, |c| pipeline::cmd_tsne(c).map(drop)),
        Command::Segment(a) => single(&a, |c| pipeline::cmd_segment(c).map(drop)),
        Command::Report(a) => {
            // A standalone report covers whichever steps left meta files.
            let mut cfg = build_config(&a, Analyses::none())?;
            let present = |step: &str| repscope_cli::output::meta_path(&cfg.out, step).exists();
            cfg.analyses = Analyses {
                cka: true,
                variance: present("variance"),
                readability: present("readability"),
                correlate: present("correlate"),
                tsne: present("tsne"),
                segment: present("segment"),
            };
            report::cmd_report(&cfg).map(drop)
        }
        Command::Run(r) => {
            let cfg = build_config(&r.common, r.analyses)?;
            with_threads(resolve_threads(r.common.threads)?, || pipeline::run_all(&cfg))?
        }
        Command::Synth(s) => {
            let spec = SynthSpec {
                tasks: s.tasks,
                unseen_tasks: s.unseen,
                clusters: s.clusters,
                layers: s.layers,
                dims: s.dims,
                n_examples: (s.min_examples, s.max_examples),
                boundaries: (s.b1, s.b2),
                dtype: if s.f64 { DType::F64 } else { DType::F32 },
                seed: s.seed,
                ..SynthSpec::default()
            };
            let ds = synth::generate(&s.out, &spec)?;
            println!("manifest: {}", ds.manifest_path.display());
            println!("controls: {}", ds.controls_path.display());
            println!("experimental model: {}", synth::EXPERIMENTAL);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("repscope: {e}");
            exit(&e)
        }
    }
}

fn exit(e: &CliError) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
