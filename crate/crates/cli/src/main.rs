use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dabp::factor_graph::Family;
use dabp_cli::{cmd_bench, cmd_gen, cmd_solve, Algo, FamilyArgs, FileConfig, SolveSettings};

#[derive(Debug, Parser)]
#[command(
    name = "dabp",
    version,
    about = "Generate, solve and benchmark COP instances"
)]
struct Cli {
    /// TOML file with [train], [model] and [solve] tables. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write instances and a manifest.
    Gen(GenArgs),
    /// Solve one instance file.
    Solve(SolveArgs),
    /// Run several algorithms over a manifest.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FamilyKind {
    RandomCop,
    Wgcp,
    ScaleFree,
    SmallWorld,
}

#[derive(Debug, Args)]
struct GenArgs {
    family: FamilyKind,
    #[arg(long)]
    n: usize,
    /// Constraint probability for random-cop and wgcp.
    #[arg(long, default_value_t = 0.25)]
    p1: f64,
    #[arg(long, default_value_t = 10)]
    m0: usize,
    #[arg(long, default_value_t = 10)]
    m1: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Shortcut probability for small-world.
    #[arg(long, default_value_t = 0.3)]
    p: f64,
    /// Overrides the family's default domain size.
    #[arg(long)]
    domain: Option<usize>,
    #[arg(long, requires = "cost_hi")]
    cost_lo: Option<f64>,
    #[arg(long, requires = "cost_lo")]
    cost_hi: Option<f64>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "instances")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SolverFlags {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Run learned solvers on the unsplit graph.
    #[arg(long)]
    no_scfg: bool,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    tmax: Option<usize>,
    #[arg(long)]
    tupd: Option<usize>,
    #[arg(long)]
    teff: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    exact_cap: Option<u128>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    instance: PathBuf,
    #[arg(long, value_enum)]
    algo: Algo,
    #[command(flatten)]
    solver: SolverFlags,
    /// Initialize the model from this checkpoint.
    #[arg(long)]
    load_params: Option<PathBuf>,
    /// Write the trained model here.
    #[arg(long)]
    save_params: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    manifest: PathBuf,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "bp,dbp,dbp-scfg,dabp"
    )]
    algos: Vec<Algo>,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long, env = "DABP_WORKERS")]
    workers: Option<usize>,
    #[arg(long, default_value = "bench")]
    out: PathBuf,
}

impl SolverFlags {
    fn apply(&self, s: &mut SolveSettings) {
        let t = &mut s.train;
        macro_rules! set {
            ($($dst:expr => $src:expr),* $(,)?) => {
                $(if let Some(v) = $src { $dst = v; })*
            };
        }
        set! {
            s.lambda => self.lambda,
            s.rho => self.rho,
            s.exact_cap => self.exact_cap,
            t.restarts => self.restarts,
            t.t_max => self.tmax,
            t.t_upd => self.tupd,
            t.t_eff => self.teff,
            t.lr => self.lr,
            t.weight_decay => self.weight_decay,
            t.eps => self.eps,
            t.seed => self.seed,
        }
        if self.no_scfg {
            s.scfg = false;
        }
    }
}

fn settings(config: Option<&PathBuf>, flags: &SolverFlags) -> Result<SolveSettings> {
    let file = match config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let mut s = SolveSettings::from(file);
    flags.apply(&mut s);
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => {
            let family = match a.family {
                FamilyKind::RandomCop => Family::RandomCop { p1: a.p1 },
                FamilyKind::Wgcp => Family::Wgcp { p1: a.p1 },
                FamilyKind::ScaleFree => Family::ScaleFree { m0: a.m0, m1: a.m1 },
                FamilyKind::SmallWorld => Family::SmallWorld { k: a.k, p: a.p },
            };
            let args = FamilyArgs {
                family,
                num_variables: a.n,
                domain: a.domain,
                costs: a.cost_lo.zip(a.cost_hi),
            };
            let manifest = cmd_gen(&args, a.count, a.seed, &a.out)?;
            println!(
                "wrote {} instances to {}",
                manifest.instances.len(),
                a.out.display()
            );
        }
        Command::Solve(a) => {
            let mut s = settings(cli.config.as_ref(), &a.solver)?;
            s.load_params = a.load_params;
            s.save_params = a.save_params;
            let summary = cmd_solve(&a.instance, a.algo, &s, &a.out)
                .with_context(|| format!("solving {}", a.instance.display()))?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Bench(a) => {
            let s = settings(cli.config.as_ref(), &a.solver)?;
            let report = cmd_bench(&a.manifest, &a.algos, &s, a.workers)?;
            report.write_csv(&a.out)?;
            for sm in &report.summaries {
                println!(
                    "{:<10} mean={:.4} gap={:.2}% failed={}",
                    sm.algo,
                    sm.mean_normalized_cost,
                    100.0 * sm.gap,
                    sm.failed
                );
            }
            for r in report.rows.iter().filter(|r| r.error.is_some()) {
                eprintln!(
                    "{} {}: {}",
                    r.instance,
                    r.algo,
                    r.error.as_deref().unwrap_or("")
                );
            }
            if report.failures() > 0 {
                bail!("{} runs failed", report.failures());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
