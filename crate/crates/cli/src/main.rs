use std::io::IsTerminal;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use guidedemo::experiment::{
    compare, export, parse_trials_csv, render_summary, run_header, run_suite, ExperimentConfig, DEFAULT_SEED,
};
use guidedemo::guidance::RuleRegistry;
use guidedemo::metrics::summarize;
use guidedemo::planner::{build_demo_bank, DemoBank, NoiseParams, PlannerParams};
use guidedemo::task::{evaluate_trajectory, TaskSpec};
use guidedemo::tpgmm::DemoSource;
use guidedemo::Error;
use guidedemo_server::{bind, serve, ServerConfig, DEFAULT_ADDR};

/// Offset between the planner seed and the seed of the perturbed copies.
const NOISE_SEED_OFFSET: u64 = 1000;

#[derive(Debug, Parser)]
#[command(name = "guidedemo", version, about = "Entropy-guided demonstration selection for TP-GMM learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan one demonstration per grid point (plus perturbed copies) and save the bank.
    BuildBank(BuildBankArgs),
    /// Run guided teaching trials from every grid point and export the results.
    Run(RunArgs),
    /// Re-summarise exported trial CSVs.
    Compare(CompareArgs),
    /// Serve the teaching API and UI assets.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct BuildBankArgs {
    /// Task file; the `.toml` extension may be omitted.
    #[arg(long)]
    task: PathBuf,
    /// Planner seed; perturbed copies use seed + 1000.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Output file [default: banks/<task name>.json]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the perturbed (noisy) copies.
    #[arg(long)]
    planner_only: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<PathBuf>,
    /// Demonstration bank [default: banks/<task name>.json]
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Comma-separated rule names.
    #[arg(long, value_delimiter = ',')]
    rules: Option<Vec<String>>,
    /// Comma-separated sources: planner, noisy.
    #[arg(long, value_delimiter = ',')]
    sources: Option<Vec<DemoSource>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Learner and bootstrap seed [default: 7]
    #[arg(long)]
    seed: Option<u64>,
    /// Trial worker threads [default: available parallelism]
    #[arg(long)]
    jobs: Option<usize>,
    /// Demonstration cap per trial [default: 20]
    #[arg(long)]
    max_demos: Option<usize>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// One or more trials.csv files.
    #[arg(long, required = true, num_args = 1..)]
    csv: Vec<PathBuf>,
    /// Bootstrap seed.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "GUIDEDEMO_ADDR", default_value = DEFAULT_ADDR)]
    addr: SocketAddr,
    /// Directory of task files.
    #[arg(long, env = "GUIDEDEMO_TASKS", default_value = "tasks")]
    tasks: PathBuf,
    /// Session log directory; sessions are kept in memory only when absent.
    #[arg(long, env = "GUIDEDEMO_DATA")]
    data: Option<PathBuf>,
    /// Built UI bundle served under `/`.
    #[arg(long = "static", env = "GUIDEDEMO_STATIC")]
    static_dir: Option<PathBuf>,
    /// Learner seed.
    #[arg(long, env = "GUIDEDEMO_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
}

fn resolve_task(path: &Path) -> Result<(PathBuf, TaskSpec)> {
    let candidates = [path.to_path_buf(), path.with_extension("toml")];
    let found =
        candidates.iter().find(|p| p.is_file()).ok_or_else(|| anyhow!("task file not found: {}", path.display()))?;
    let spec = TaskSpec::load(found)?;
    Ok((found.clone(), spec))
}

fn default_bank_path(spec: &TaskSpec) -> PathBuf {
    PathBuf::from("banks").join(format!("{}.json", spec.name))
}

fn build_bank(args: BuildBankArgs) -> Result<()> {
    let (_, spec) = resolve_task(&args.task)?;
    let planner = PlannerParams { seed: args.seed, ..PlannerParams::default() };
    let noise = NoiseParams { seed: args.seed.wrapping_add(NOISE_SEED_OFFSET), ..NoiseParams::default() };
    let bank = build_demo_bank(&spec, &planner, (!args.planner_only).then_some(&noise)).map_err(|e| match e {
        Error::BankPointFailed { index, source } => anyhow!("planning failed for grid point {index}: {source}"),
        e => e.into(),
    })?;

    println!(
        "# task={} seed={} noise_seed={}",
        spec.name,
        planner.seed,
        bank.noise.map_or("none".into(), |n| n.seed.to_string())
    );
    println!("{:>5} {:>8} {:>8} {:>9} {:>7}  check", "point", "x", "y", "length", "noisy");
    let mut failures = 0;
    for (i, p) in spec.grid_points().into_iter().enumerate() {
        let traj = bank.get(i, DemoSource::Planner).expect("bank covers every grid point");
        let (_, goal) = spec.endpoints(p);
        let ok = evaluate_trajectory(traj, &spec, goal).success;
        failures += usize::from(!ok);
        let noisy = match bank.get(i, DemoSource::Noisy) {
            Some(t) => {
                if evaluate_trajectory(t, &spec, goal).success {
                    "ok"
                } else {
                    "fail"
                }
            }
            None => "-",
        };
        println!(
            "{i:>5} {:>8.3} {:>8.3} {:>9.2} {noisy:>7}  {}",
            p.x,
            p.y,
            traj.path_length(),
            if ok { "ok" } else { "FAIL" }
        );
    }
    let out = args.out.unwrap_or_else(|| default_bank_path(&spec));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    bank.save(&out).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} ({} demonstrations)", out.display(), bank.records.len());
    if failures > 0 {
        bail!("{failures} planner demonstrations fail their own evaluation");
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(t) = args.task {
        cfg.task = t;
    }
    if let Some(b) = args.bank {
        cfg.bank = Some(b);
    }
    if let Some(r) = args.rules {
        cfg.rules = r;
    }
    if let Some(s) = args.sources {
        cfg.sources = s;
    }
    if let Some(o) = args.out {
        cfg.out = o;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.max_demos = args.max_demos.unwrap_or(cfg.max_demos);
    cfg.validate()?;
    if let Some(n) = args.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }

    let (_, spec) = resolve_task(&cfg.task)?;
    let registry = RuleRegistry::with_builtin();
    for rule in &cfg.rules {
        registry.get(rule)?;
    }
    let bank_path = cfg.bank.clone().unwrap_or_else(|| default_bank_path(&spec));
    let bank = DemoBank::load(&bank_path).with_context(|| format!("reading bank {}", bank_path.display()))?;
    if bank.task != spec.name {
        bail!("bank {} was built for task `{}`, not `{}`", bank_path.display(), bank.task, spec.name);
    }

    println!("# {}", run_header(&spec, &bank, &cfg));
    let records = run_suite(&spec, &bank, &registry, &cfg)?;
    let summary = summarize(&records, cfg.seed)?;
    let report = match compare(&records, cfg.seed) {
        Ok(r) => Some(r),
        Err(Error::MissingGroup(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let paths = export(&cfg.out, &spec, &bank, &cfg, &records, &summary, report.as_ref())?;
    match &report {
        Some(r) => print!("{}", r.render()),
        None => print!("{}", render_summary(&summary)),
    }
    println!("wrote {}, {}, {}", paths.trials.display(), paths.summary.display(), paths.traces.display());
    Ok(())
}

fn compare_csv(args: CompareArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.csv {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if let Some(h) = text.lines().next().filter(|l| l.starts_with('#')) {
            println!("{h} ({})", path.display());
        }
        records.extend(parse_trials_csv(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    println!("# bootstrap_seed={}", args.seed);
    match compare(&records, args.seed) {
        Ok(r) => print!("{}", r.render()),
        Err(Error::MissingGroup(_)) => print!("{}", render_summary(&summarize(&records, args.seed)?)),
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

fn serve_cmd(args: ServeArgs) -> Result<()> {
    let cfg = ServerConfig { tasks_dir: args.tasks, data_dir: args.data, static_dir: args.static_dir, seed: args.seed };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = bind(args.addr).await?;
        serve(listener, &cfg).await
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let result = match cli.command {
        Command::BuildBank(a) => build_bank(a),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare_csv(a),
        Command::Serve(a) => serve_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
