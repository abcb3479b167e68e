//! `bsplan`: dataset generation, training, prediction, reconstruction,
//! rendering and benchmarking from the command line.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bsplan_core::bench::{run_bench, BenchConfig};
use bsplan_core::dataset::{build_dataset, read_records, scenario_for_index};
use bsplan_core::encoding::render_overlay;
use bsplan_core::neural::train::{train, TrainConfig};
use bsplan_core::neural::{load_checkpoint, predict};
use bsplan_core::pgm::{read_pgm, write_image, write_pgm};
use bsplan_core::reconstruct::reconstruct_path;
use bsplan_core::{
    BeliefPath, DatasetConfig, Error, Obstacle, PlannerParams, Point2, ReconstructionParams, Scenario,
};

/// Radius of obstacles injected with `--circle`.
const PROBE_RADIUS: f64 = 0.1;

#[derive(Parser)]
#[command(name = "bsplan", version, about = "Learned Gaussian belief-space planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled scenario corpus with the baseline planner.
    Gen(GenArgs),
    /// Train the U-Net on a corpus.
    Train(TrainArgs),
    /// Predict a path density image for a scenario.
    Predict(PredictArgs),
    /// Reconstruct a belief path from a density image.
    Reconstruct(ReconstructArgs),
    /// Compare the planner with the learned pipeline.
    Bench(BenchArgs),
    /// Render a scenario, optionally with a path, or one encoding channel.
    Render(RenderArgs),
}

#[derive(Args, Clone)]
struct GeneratorArgs {
    /// Grid points per axis.
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Obstacles per scenario.
    #[arg(long, default_value_t = 5)]
    obstacles: usize,
    /// Baseline planner iterations.
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = bsplan_core::belief::DEFAULT_CHI2)]
    chi2: f64,
    /// Weight of the entropy term in the path cost.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
}

impl GeneratorArgs {
    fn config(&self, seed: u64) -> DatasetConfig {
        DatasetConfig {
            n1: self.n,
            n2: self.n,
            seed_base: seed,
            obstacle_count: self.obstacles,
            chi2: self.chi2,
            alpha: self.alpha,
            planner: PlannerParams { max_iters: self.iters, ..PlannerParams::default() },
            ..DatasetConfig::default()
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 512)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    gen: GeneratorArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written at the best test-loss epoch.
    #[arg(long)]
    out: PathBuf,
    /// Tab-separated loss log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long = "lr-after", default_value_t = 1e-5)]
    lr_after: f64,
    /// First epoch (0-based) trained with `--lr-after`.
    #[arg(long = "lr-switch", default_value_t = 100)]
    lr_switch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 16)]
    base: usize,
    /// Records held out at the end of the corpus.
    #[arg(long = "test-count", default_value_t = 100)]
    test_count: usize,
    /// Stop after this many epochs without improvement.
    #[arg(long = "early-stop")]
    early_stop: Option<usize>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Take the scenario from record `--index` of this corpus.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Record index, or scenario index for generated scenarios.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Seed base for a generated scenario (ignored with `--data`).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Inject a circle of radius 0.1 at this center.
    #[arg(long, num_args = 2, value_names = ["CX", "CY"])]
    circle: Option<Vec<f64>>,
    #[command(flatten)]
    gen: GeneratorArgs,
}

impl ScenarioArgs {
    fn scenario(&self) -> Result<Scenario, CliError> {
        let mut s = match &self.data {
            Some(path) => {
                let mut records = read_records(path)?;
                let count = records.header.record_count as usize;
                if self.index >= count {
                    return Err(CliError::User(format!("index {} out of range for {count} records", self.index)));
                }
                records.nth(self.index).expect("index checked")?.scenario
            }
            None => scenario_for_index(&self.gen.config(self.seed), self.index)?,
        };
        if let Some(c) = &self.circle {
            s.obstacles.push(Obstacle::circle(Point2::new(c[0], c[1]), PROBE_RADIUS)?);
        }
        Ok(s)
    }
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Density graymap.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ReconArgs {
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 10)]
    components: usize,
    #[arg(long = "fallback-rounds", default_value_t = 5)]
    fallback_rounds: usize,
    #[arg(long = "extra-samples", default_value_t = 20)]
    extra_samples: usize,
    #[arg(long = "em-iters", default_value_t = 100)]
    em_iters: usize,
    /// EM stops when the log-likelihood changes by less than this.
    #[arg(long = "em-tol", default_value_t = 1e-6)]
    em_tol: f64,
    /// Vertex covariance scale relative to mixture components.
    #[arg(long = "cov-scale", default_value_t = 1.0)]
    cov_scale: f64,
    /// Connect only nearest neighbours and search with A*.
    #[arg(long = "k-nearest")]
    k_nearest: Option<usize>,
    #[arg(long = "recon-seed", default_value_t = 0)]
    recon_seed: u64,
}

impl ReconArgs {
    fn params(&self) -> ReconstructionParams {
        ReconstructionParams {
            sample_count: self.samples,
            components: self.components,
            fallback_rounds: self.fallback_rounds,
            extra_samples_per_round: self.extra_samples,
            em_max_iters: self.em_iters,
            em_tol: self.em_tol,
            cov_scale: self.cov_scale,
            k_nearest: self.k_nearest,
            seed: self.recon_seed,
            ..ReconstructionParams::default()
        }
    }
}

#[derive(Args)]
struct ReconstructArgs {
    /// Density graymap from `predict`.
    #[arg(long)]
    density: PathBuf,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    recon: ReconArgs,
    /// Path nodes as tab-separated text.
    #[arg(long)]
    out: PathBuf,
    /// Overlay graymap of obstacles, tube and centerline.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Scenario seed base; use one disjoint from the training corpus.
    #[arg(long, default_value_t = 1_000_000)]
    seed: u64,
    #[arg(long = "first-index", default_value_t = 0)]
    first_index: usize,
    #[command(flatten)]
    gen: GeneratorArgs,
    #[command(flatten)]
    recon: ReconArgs,
    /// Run scenarios on this many threads.
    #[arg(long)]
    parallel: Option<usize>,
    /// Report file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Channel {
    Obstacles,
    Target,
    Start,
    Label,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Path file to draw with its confidence tube.
    #[arg(long)]
    path: Option<PathBuf>,
    /// Write one encoding channel instead of the overlay (`label` needs `--data`).
    #[arg(long, value_enum)]
    channel: Option<Channel>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    User(String),
    Internal(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteLoss { .. }
            | Error::DegenerateMixture { .. }
            | Error::DegenerateCovariance { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::TooFewPoints { .. }
            | Error::Disconnected => CliError::Internal(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::User(e.to_string())
    }
}

fn require_file(p: &Path, what: &str) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::User(format!("{what} {} does not exist", p.display())))
    }
}

fn cmd_gen(a: GenArgs) -> Result<(), CliError> {
    let config = DatasetConfig { count: a.count, workers: a.workers.max(1), ..a.gen.config(a.seed) };
    let s = build_dataset(&config, &a.out)?;
    println!(
        "wrote {} of {} records to {} ({} planner failures, {:.1}s)",
        s.written,
        s.requested,
        a.out.display(),
        s.failures,
        s.wall_time.as_secs_f64()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    require_file(&a.data, "dataset")?;
    let config = TrainConfig {
        batch_size: a.batch,
        epochs: a.epochs,
        lr_schedule: vec![(a.lr_switch, a.lr), (usize::MAX, a.lr_after)],
        seed: a.seed,
        early_stop: a.early_stop,
        test_count: a.test_count,
        depth: a.depth,
        base_channels: a.base,
        threads: a.threads,
    };
    let r = train(&a.data, &config, &a.out, a.log.as_deref())?;
    let last = r.epochs.last();
    println!(
        "trained {} epochs in {:.1}s; best epoch {} loss {:.5}; final train {:.5}; checkpoint {}",
        r.epochs.len(),
        r.wall_time.as_secs_f64(),
        r.best_epoch,
        r.best_loss,
        last.map_or(f64::NAN, |e| e.train_bce),
        a.out.display()
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    require_file(&a.weights, "checkpoint")?;
    let net = load_checkpoint(&a.weights)?;
    let scenario = a.scenario.scenario()?;
    let n = a.scenario.gen.n;
    let density = predict(&net, &scenario.encode(n, n))?;
    write_pgm(&density, &a.out, 1.0)?;
    println!("wrote {n}x{n} density to {}", a.out.display());
    Ok(())
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<(), CliError> {
    require_file(&a.density, "density")?;
    let density = read_pgm(&a.density, 1.0)?;
    let scenario = a.scenario.scenario()?;
    let r = match reconstruct_path(&density, &scenario, &a.recon.params()) {
        Ok(r) => r,
        Err(e @ Error::ReconstructionFailed { .. }) => {
            return Err(CliError::User(format!("{e}")));
        }
        Err(e) => return Err(e.into()),
    };
    fs::write(&a.out, r.path.to_tsv())?;
    let d = &r.diagnostics;
    eprintln!(
        "vertices {} edges {} pruned {} fallback rounds {} samples {}",
        d.vertices, d.edges, d.pruned_edges, d.rounds, d.samples
    );
    if let Some(o) = &a.overlay {
        let g = render_overlay(
            &scenario.obstacles,
            &scenario.target,
            Some((&r.path, scenario.chi2)),
            density.n1,
            density.n2,
        )?;
        write_pgm(&g, o, 1.0)?;
    }
    println!("path with {} nodes, cost {:.5}, length {:.5}", r.path.nodes.len(), r.path.cost, r.path.length());
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    require_file(&a.weights, "checkpoint")?;
    let net = load_checkpoint(&a.weights)?;
    let config = BenchConfig {
        scenarios: a.gen.config(a.seed),
        first_index: a.first_index,
        count: a.count,
        reconstruction: a.recon.params(),
        threads: a.parallel.unwrap_or(1),
    };
    let report = run_bench(&config, &net)?;
    match &a.out {
        Some(p) => {
            let mut f = io::BufWriter::new(fs::File::create(p)?);
            report.write_tsv(&mut f)?;
            f.flush()?;
        }
        None => report.write_tsv(&mut io::stdout().lock())?,
    }
    let s = &report.summary;
    eprintln!(
        "pipeline success {:.1}% ({:.1}% without fallback); median length planner {:.4} pipeline {:.4}; speedup {:.2}x; graph fraction {:.2}",
        100.0 * s.pipeline_success_rate,
        100.0 * s.success_rate_without_fallback,
        s.planner_length.median,
        s.pipeline_length.median,
        s.speedup,
        s.graph_fraction
    );
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<(), CliError> {
    let scenario = a.scenario.scenario()?;
    let n = a.scenario.gen.n;
    if let Some(ch) = a.channel {
        let stack = match (&a.scenario.data, ch) {
            (Some(data), _) => {
                let mut records = read_records(data)?;
                records
                    .nth(a.scenario.index)
                    .ok_or_else(|| CliError::User(format!("no record {}", a.scenario.index)))??
                    .grids
            }
            (None, Channel::Label) => return Err(CliError::User("the label channel needs --data".into())),
            (None, _) => scenario.encode(n, n),
        };
        let grid = match ch {
            Channel::Obstacles => stack.obstacles,
            Channel::Target => stack.target,
            Channel::Start => stack.start,
            Channel::Label => stack.label.expect("corpus records are labelled"),
        };
        match ch {
            Channel::Obstacles | Channel::Label => write_pgm(&grid, &a.out, 1.0)?,
            _ => write_image(&grid, &a.out)?,
        }
        return Ok(());
    }
    let path = match &a.path {
        Some(p) => {
            require_file(p, "path")?;
            Some(BeliefPath::from_tsv(&fs::read_to_string(p)?, scenario.alpha)?)
        }
        None => None,
    };
    let g = render_overlay(&scenario.obstacles, &scenario.target, path.as_ref().map(|p| (p, scenario.chi2)), n, n)?;
    write_pgm(&g, &a.out, 1.0)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let run = std::panic::catch_unwind(|| match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Render(a) => cmd_render(a),
    });
    let result = run.unwrap_or_else(|_| Err(CliError::Internal("unexpected panic".into())));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
    }
}
