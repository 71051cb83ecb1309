use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use kinslab::collision::{build_kernel_with_cap, KernelFamily, KernelSpec};
use kinslab::config::{RunConfig, DEFAULT_MEMORY_CAP};
use kinslab::diagnostics::{conservation_ledger, entropy_inequality_check, EntropyReport, LedgerReport};
use kinslab::grid::build_velocity_grid;
use kinslab::hydro::{epsilon_sweep, trace_bound_check, SweepConfig, TraceBound};
use kinslab::linearized::{assemble_linearized, transport_coefficients};
use kinslab::solver::{run_simulation, HistoryRow, RunOutput};

#[derive(Parser)]
#[command(name = "kinslab", version, about = "Kinetic slab solver with incoming boundary data")]
struct Cli {
    /// Worker threads for the data-parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// March a configuration and write the history CSV and JSON summary.
    Run(RunArgs),
    /// Run a configuration and exit nonzero if the entropy inequality or a
    /// conservation ledger fails.
    Check(RunArgs),
    /// Compute the linearized transport coefficients of a kernel.
    Coeffs(CoeffArgs),
    /// Run a Knudsen-number sweep described by a TOML file.
    Sweep(SweepArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for `history.csv` and `summary.json`; overrides the
    /// paths in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Bgk,
    HardSphere,
    Maxwell,
}

#[derive(clap::Args)]
struct CoeffArgs {
    #[arg(long, value_enum, default_value = "hard-sphere")]
    kernel: Family,
    /// BGK relaxation time.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 12)]
    n: usize,
    #[arg(long, default_value_t = 6.0)]
    v_max: f64,
    #[arg(long, default_value_t = 4)]
    angular_order: usize,
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Where to write the JSON report; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Sweep file: the sweep parameters plus the ε list.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    epsilons: Vec<f64>,
    sweep: SweepConfig,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a RunConfig,
    steps: usize,
    dt: f64,
    t: f64,
    threads: usize,
    parallel: bool,
    entropy: EntropyReport,
    ledger: LedgerReport,
    trace_bound: Option<TraceBound>,
    ok: bool,
}

const HEADER: [&str; 15] = [
    "t",
    "mass",
    "mom_x",
    "mom_y",
    "mom_z",
    "energy",
    "H",
    "dissipation",
    "influx_mass",
    "outflux_mass",
    "influx_entropy",
    "outflux_entropy",
    "residual_mass",
    "residual_energy",
    "residual_entropy",
];

fn csv_row(r: &HistoryRow) -> [String; 15] {
    [
        r.t,
        r.mass,
        r.momentum[0],
        r.momentum[1],
        r.momentum[2],
        r.energy,
        r.entropy,
        r.dissipation,
        r.influx.mass,
        r.outflux.mass,
        r.influx.entropy,
        r.outflux.entropy,
        r.residual_mass,
        r.residual_energy,
        r.residual_entropy,
    ]
    .map(|x| format!("{x:e}"))
}

type CliResult<T> = Result<T, String>;

fn write_history(path: &Path, history: &[HistoryRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    w.write_record(HEADER).map_err(|e| e.to_string())?;
    for r in history {
        w.write_record(csv_row(r)).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

fn load_run(args: &RunArgs) -> CliResult<RunConfig> {
    let mut config = RunConfig::load(&args.config).map_err(|e| format!("{}: {e}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.output.record_traces = false;
    Ok(config)
}

fn summarize(out: &RunOutput) -> Summary<'_> {
    let entropy = entropy_inequality_check(&out.state.history);
    let ledger = conservation_ledger(&out.state.history, &out.state.ledger);
    Summary {
        config: &out.config,
        steps: out.state.steps,
        dt: out.dt,
        t: out.state.t,
        threads: kinslab::par::num_threads(),
        parallel: kinslab::par::is_parallel(),
        ok: entropy.ok && ledger.ok,
        trace_bound: trace_bound_check(&out.state.ledger).ok(),
        entropy,
        ledger,
    }
}

fn run(args: &RunArgs) -> CliResult<bool> {
    let config = load_run(args)?;
    let out = run_simulation(&config).map_err(|e| e.to_string())?;
    let summary = summarize(&out);
    let (history, summary_path) = match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            (Some(dir.join("history.csv")), Some(dir.join("summary.json")))
        }
        None => (config.output.history.clone(), config.output.summary.clone()),
    };
    if let Some(path) = history {
        write_history(&path, &out.state.history)?;
    }
    let json = serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?;
    match summary_path {
        Some(path) => fs::write(&path, json + "\n").map_err(|e| format!("{}: {e}", path.display()))?,
        None => println!("{json}"),
    }
    Ok(true)
}

fn check(args: &RunArgs) -> CliResult<bool> {
    let config = load_run(args)?;
    let out = run_simulation(&config).map_err(|e| e.to_string())?;
    let s = summarize(&out);
    let mark = |ok: bool| if ok { "ok" } else { "FAILED" };
    println!(
        "entropy inequality: residual {:.3e} (scale {:.3e}) {}",
        s.entropy.residual,
        s.entropy.scale,
        mark(s.entropy.ok)
    );
    let l = &s.ledger;
    println!(
        "ledgers: mass {:.2e}, momentum {:.2e}/{:.2e}/{:.2e}, energy {:.2e}, commutativity {:.2e} (scale {:.2e}) {}",
        l.mass.residual,
        l.momentum[0].residual,
        l.momentum[1].residual,
        l.momentum[2].residual,
        l.energy.residual,
        l.commutativity_residual,
        l.commutativity_scale,
        mark(l.ok)
    );
    if let Some(t) = &s.trace_bound {
        println!("trace bound: lhs {:.4e} rhs {:.4e} {}", t.lhs, t.rhs, mark(t.ok));
    }
    Ok(s.ok && s.trace_bound.is_none_or(|t| t.ok))
}

fn coeffs(args: &CoeffArgs) -> CliResult<bool> {
    let family = match args.kernel {
        Family::Bgk => KernelFamily::Bgk { tau: args.tau },
        Family::HardSphere => KernelFamily::HardSphere,
        Family::Maxwell => KernelFamily::MaxwellPseudo,
    };
    let spec = KernelSpec {
        angular_order: args.angular_order,
        ..KernelSpec::new(family)
    };
    let grid = build_velocity_grid(args.n, args.v_max).map_err(|e| e.to_string())?;
    let engine = build_kernel_with_cap(&spec, &grid, DEFAULT_MEMORY_CAP).map_err(|e| e.to_string())?;
    let lop = assemble_linearized(&engine).map_err(|e| e.to_string())?;
    let c = transport_coefficients(&lop).map_err(|e| e.to_string())?;
    let json = serde_json::json!({
        "kernel": spec.family.tag(),
        "n_per_axis": args.n,
        "v_max": args.v_max,
        "nu": c.nu,
        "k": c.k,
        "nu_components": c.nu_components,
        "k_components": c.k_components,
        "isotropy_spread": c.isotropy_spread,
        "condition": lop.condition(),
    });
    println!("{}", serde_json::to_string_pretty(&json).map_err(|e| e.to_string())?);
    Ok(true)
}

fn sweep(args: &SweepArgs) -> CliResult<bool> {
    let text = fs::read_to_string(&args.config).map_err(|e| format!("{}: {e}", args.config.display()))?;
    let file: SweepFile = toml::from_str(&text).map_err(|e| format!("{}: {e}", args.config.display()))?;
    let report = epsilon_sweep(&file.sweep, &file.epsilons).map_err(|e| e.to_string())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    match &args.out {
        Some(path) => fs::write(path, json + "\n").map_err(|e| format!("{}: {e}", path.display()))?,
        None => println!("{json}"),
    }
    Ok(report.entries.iter().all(|e| e.entropy_ok && e.trace.ok))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("kinslab: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Check(a) => check(a),
        Command::Coeffs(a) => coeffs(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("kinslab: {e}");
            ExitCode::from(2)
        }
    }
}
