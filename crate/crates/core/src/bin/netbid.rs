use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use netbid::analysis::{solve_path_bound, BoundForm, PATH_BOUND_CSV_HEADER};
use netbid::engine::{self, write_metrics, write_metrics_header, write_trace, write_trace_header};
use netbid::harness::{
    build_trial, emit_csv, emit_summary_json, gnuplot_script, load_config, run_bidder_eval,
    run_injection, run_sweep, verify_trial, Dataset, ExperimentConfig, InjectionConfig,
};
use netbid::strategy::{Strategy, StrategyKind};
use netbid::topology::FamilySpec;
use netbid::{Error, Result};

#[derive(Parser)]
#[command(
    name = "netbid",
    version,
    about = "Net-Bidding price-stabilization simulator"
)]
struct Cli {
    /// Experiment config file (flat `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base random seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write the per-contract trace (`run` only).
    #[arg(long, global = true)]
    trace: bool,
    /// Write initial and final node snapshots (`run` only).
    #[arg(long, global = true)]
    dump_state: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Comma-separated families: path, cycle, grid, klink, klink/<divisor>, complete.
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    nodes_max: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// fixed-c, bayes-m1 or bayes-m2.
    #[arg(long)]
    strategy: Option<String>,
    /// Bid parameter for fixed-c.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single trial and print its per-step metrics.
    Run(Overrides),
    /// Stabilization-time sweep over families and node counts.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// Also write a gnuplot script for the per-family CSVs.
        #[arg(long)]
        gnuplot: bool,
    },
    /// Compare the two bidder-count estimators on sparse and dense k-link graphs.
    Bidders {
        #[command(flatten)]
        overrides: Overrides,
        /// Chords of the dense graph (default floor(n / 1.2)).
        #[arg(long)]
        k_dense: Option<usize>,
        /// Chords of the sparse graph (default floor(n / 10)).
        #[arg(long)]
        k_sparse: Option<usize>,
    },
    /// Fund-injection spread experiment.
    Inject(Overrides),
    /// Solve the analytical path stabilization bound.
    PathBound {
        /// Even node count(s).
        #[arg(long, required = true, num_args = 1..)]
        n: Vec<usize>,
        #[arg(long, default_value = "binomial")]
        form: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(o) => cmd_run(cli, o),
        Command::Sweep { overrides, gnuplot } => {
            let cfg = resolve_config(cli, overrides, false)?;
            let data = run_sweep(&cfg)?;
            let mut files = Vec::new();
            for (family, subset) in data.split_by_family() {
                let name = format!("sweep_{}.csv", family.replace('/', "_"));
                emit_csv(&subset, cfg.out.join(&name))?;
                files.push((family, name));
            }
            emit_summary_json(&data, &cfg, cfg.out.join("sweep_summary.json"))?;
            if *gnuplot {
                write_file(&cfg.out.join("sweep.gp"), gnuplot_script(&files).as_bytes())?;
            }
            print!("{}", data.to_csv());
            Ok(())
        }
        Command::Bidders {
            overrides,
            k_dense,
            k_sparse,
        } => {
            let mut cfg = resolve_config(cli, overrides, false)?;
            if overrides.nodes.is_none() && cli.config.is_none() {
                cfg.nodes = 300;
                cfg.nodes_max = 300;
            }
            let n = cfg.nodes;
            let dense = k_dense.unwrap_or((n as f64 / 1.2).floor() as usize);
            let sparse = k_sparse.unwrap_or(n / 10);
            let data = run_bidder_eval(&cfg, dense, sparse)?;
            emit_outputs(&data, &cfg, "bidders")
        }
        Command::Inject(o) => {
            let cfg = resolve_config(cli, o, true)?;
            let data = run_injection(&cfg)?;
            emit_outputs(&data, &cfg, "inject")
        }
        Command::PathBound { n, form } => {
            let form = BoundForm::parse(form)?;
            let stdout = io::stdout();
            let mut w = stdout.lock();
            writeln!(w, "{PATH_BOUND_CSV_HEADER}").map_err(stdout_err)?;
            for &size in n {
                writeln!(w, "{}", solve_path_bound(size, form)?.csv_row()).map_err(stdout_err)?;
            }
            Ok(())
        }
    }
}

fn stdout_err(e: io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn emit_outputs(data: &Dataset, cfg: &ExperimentConfig, stem: &str) -> Result<()> {
    emit_csv(data, cfg.out.join(format!("{stem}.csv")))?;
    emit_summary_json(data, cfg, cfg.out.join(format!("{stem}_summary.json")))?;
    print!("{}", data.to_csv());
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Config file (or built-in defaults) with command-line overrides applied.
fn resolve_config(cli: &Cli, o: &Overrides, injection: bool) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(t) = &o.topology {
        cfg.families = t.split(',').map(FamilySpec::parse).collect::<Result<_>>()?;
    }
    if let Some(n) = o.nodes {
        cfg.nodes = n;
        cfg.nodes_max = o.nodes_max.unwrap_or(n);
        cfg.nodes_step = n;
    } else if let Some(m) = o.nodes_max {
        cfg.nodes_max = m;
    }
    if let Some(t) = o.trials {
        cfg.trials = t;
    }
    if o.strategy.is_some() || o.c.is_some() {
        let c = o.c.unwrap_or(match cfg.strategy {
            StrategyKind::FixedC(c) => c,
            _ => 2.0,
        });
        let name = o
            .strategy
            .clone()
            .unwrap_or_else(|| cfg.strategy.name().to_string());
        cfg.strategy = StrategyKind::parse(&name, c)?;
    }
    if let Some(e) = o.epsilon {
        cfg.epsilon = e;
    }
    if let Some(m) = o.max_steps {
        cfg.max_steps = Some(m);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if injection && cfg.injection.is_none() {
        cfg.injection = Some(InjectionConfig {
            base_funds: 100.0,
            inject_funds: 30_000.0,
            points: 1,
            points_max: 10,
            nodes: 300,
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(cli: &Cli, o: &Overrides) -> Result<()> {
    let mut o = o.clone();
    if cli.config.is_none() {
        o.topology.get_or_insert_with(|| "path".into());
        o.nodes.get_or_insert(50);
    }
    let cfg = resolve_config(cli, &o, false)?;
    let family = cfg.families[0];
    let n = cfg.nodes;
    let params = cfg.sim_params(n);
    let (topo, init) = build_trial(family, n, cfg.seed, &params)?;
    let mut strategy = Strategy::new(params.strategy)?;

    if cli.dump_state {
        let path = cfg.out.join("state_initial.csv");
        write_file(&path, &csv_bytes(|w| init.write_csv(w))?)?;
    }
    let mut trace = Vec::new();
    if cli.trace {
        write_trace_header(&mut trace).map_err(stdout_err)?;
    }
    let mut result = engine::run_observed(
        init,
        &topo,
        &mut strategy,
        params.epsilon,
        params.max_steps_for(n),
        |out| {
            if cli.trace {
                write_trace(&mut trace, out.metrics.step, &out.contracts).map_err(stdout_err)?;
            }
            Ok(())
        },
    )?;
    result.seed = cfg.seed;
    verify_trial(&result, &topo, params.epsilon)?;

    if cli.trace {
        write_file(&cfg.out.join("trace.csv"), &trace)?;
    }
    if cli.dump_state {
        let path = cfg.out.join("state_final.csv");
        write_file(&path, &csv_bytes(|w| result.final_config.write_csv(w))?)?;
    }

    let stdout = io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    write_metrics_header(&mut w).map_err(stdout_err)?;
    write_metrics(&mut w, 0, &result.metrics).map_err(stdout_err)?;
    w.flush().map_err(stdout_err)?;
    eprintln!(
        "{} n={} seed={} strategy={} converged={} steps={} F/Q={} max|p-F/Q|={}",
        topo.family(),
        n,
        cfg.seed,
        params.strategy.name(),
        result.converged,
        result.steps,
        result.equilibrium_price,
        result.max_price_error()
    );
    Ok(())
}

fn csv_bytes<F>(f: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(stdout_err)?;
    Ok(buf)
}
