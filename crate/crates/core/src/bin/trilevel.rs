//! Command-line front end: separatrices, single-point minimization and exact
//! ground states, coupling-plane scans and the finite-N convergence study.
//!
//! Exit codes: 0 on success, 2 when a scan finished with failed points,
//! 1 on invalid input or any other error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use trilevel::scan::{
    convergence_study, extract_crossovers_refined, run_scan, run_scan_with_threads, write_csv, write_gnuplot_matrix,
    write_jsonl, ConvergenceOptions, Engine, OutputFormat, ScanSpec,
};
use trilevel::{
    global_ground, minimize, separatrix, Configuration, Coupling, CouplingRange, MinimizeOptions, ModelParams,
    SearchOptions,
};

#[derive(Parser)]
#[command(name = "trilevel", version, about = "Phase structure of three-level atoms in a single-mode cavity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the analytic normal/collective boundary.
    Separatrix {
        #[command(flatten)]
        common: Common,
        /// Range of the driving coupling (mu23 for xi/lambda, mu13 for v): min,max,steps
        #[arg(long, default_value = "0,3,61")]
        range: String,
    },
    /// Minimize the coherent-state energy surface at one parameter point.
    Minimize {
        #[command(flatten)]
        common: Common,
    },
    /// Exact ground state over all excitation sectors at one parameter point.
    Ground {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        window: u32,
        #[arg(long, default_value_t = 500)]
        hard_cap: u32,
    },
    /// Evaluate a grid over the configuration's coupling plane.
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = EngineArg::Quantum)]
        engine: EngineArg,
        /// x-axis coupling range: min,max,steps
        #[arg(long, default_value = "0,3,61")]
        x_range: String,
        /// y-axis coupling range: min,max,steps
        #[arg(long, default_value = "0,3,61")]
        y_range: String,
        /// Worker threads (defaults to all cores)
        #[arg(long, env = "TRILEVEL_THREADS")]
        threads: Option<usize>,
        /// Also write a matrix-format heat map here
        #[arg(long)]
        gnuplot: Option<PathBuf>,
        /// Also write the crossover polylines (CSV) here
        #[arg(long)]
        crossovers: Option<PathBuf>,
        /// Bisect each crossover to 1e-4 with the scan engine
        #[arg(long)]
        refine: bool,
    },
    /// Finite-N M = 0 boundaries against the separatrix.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Atom counts, ascending
        #[arg(long, default_value = "2,10", value_delimiter = ',')]
        atoms: Vec<u32>,
        /// Shared y-axis samples: min,max,steps
        #[arg(long, default_value = "0,2.5,11")]
        range: String,
        #[arg(long, default_value_t = 3.0)]
        x_max: f64,
        #[arg(long, default_value_t = 61)]
        x_steps: usize,
        /// Keep coarse midpoints instead of bisecting to 1e-4
        #[arg(long)]
        no_refine: bool,
        #[arg(long, env = "TRILEVEL_THREADS")]
        threads: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat key = value parameter file; flags given explicitly override it
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, value_enum)]
    config: Option<ConfigArg>,
    /// Level energies omega1,omega2,omega3
    #[arg(long, value_delimiter = ',', num_args = 3)]
    omega: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    mu12: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mu13: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mu23: Option<f64>,
    #[arg(long)]
    na: Option<u32>,
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigArg {
    Xi,
    Lambda,
    V,
}

impl From<ConfigArg> for Configuration {
    fn from(c: ConfigArg) -> Self {
        match c {
            ConfigArg::Xi => Configuration::Xi,
            ConfigArg::Lambda => Configuration::Lambda,
            ConfigArg::V => Configuration::V,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Semiclassical,
    Quantum,
    Both,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Semiclassical => Engine::Semiclassical,
            EngineArg::Quantum => Engine::Quantum,
            EngineArg::Both => Engine::Both,
        }
    }
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Input(String),
    Partial(String),
    Runtime(String),
}

type CliResult<T> = Result<T, Failure>;

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

impl Common {
    fn params(&self) -> CliResult<ModelParams> {
        let mut p = match &self.params {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
                ModelParams::from_kv_str(&text).map_err(input)?
            }
            None => {
                let config = self.config.ok_or_else(|| input("--config is required without --params"))?;
                ModelParams::new(config.into(), [0.0, 1.0, 2.0], 1)
            }
        };
        if let Some(c) = self.config {
            p.config = c.into();
        }
        if let Some(w) = &self.omega {
            p.omega1 = w[0];
            p.omega2 = w[1];
            p.omega3 = w[2];
        }
        for (coupling, value) in [(Coupling::Mu12, self.mu12), (Coupling::Mu13, self.mu13), (Coupling::Mu23, self.mu23)] {
            if let Some(v) = value {
                *p.coupling_mut(coupling) = v;
            }
        }
        if let Some(n) = self.na {
            p.n_atoms = n;
        }
        p.validate().map_err(input)
    }

    fn emit(&self, text: &str) -> CliResult<()> {
        match &self.out {
            Some(path) => fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display()))),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn parse_range(s: &str) -> CliResult<CouplingRange> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(input(format!("range '{s}' must be min,max,steps")));
    }
    let min = parts[0].parse::<f64>().map_err(|e| input(format!("range '{s}': {e}")))?;
    let max = parts[1].parse::<f64>().map_err(|e| input(format!("range '{s}': {e}")))?;
    let steps = parts[2].parse::<usize>().map_err(|e| input(format!("range '{s}': {e}")))?;
    let range = CouplingRange::new(min, max, steps);
    range.check().map_err(input)?;
    Ok(range)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().map_err(runtime)?;
            Ok(pool.install(f))
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Separatrix { common, range } => {
            let p = common.params()?;
            let curve = separatrix(p.config, &p, parse_range(&range)?).map_err(input)?;
            let text = match common.format {
                FormatArg::Csv => curve.to_csv(),
                FormatArg::Json => serde_json::to_string_pretty(&curve).map_err(runtime)? + "\n",
            };
            common.emit(&text)
        }
        Command::Minimize { common } => {
            let p = common.params()?;
            let r = minimize(&p, &MinimizeOptions::default()).map_err(runtime)?;
            let text = match common.format {
                FormatArg::Json => serde_json::to_string_pretty(&r).map_err(runtime)? + "\n",
                FormatArg::Csv => {
                    let f = trilevel::scan::fmt_f64;
                    format!(
                        "energy_per_atom,rho_bar,rho2,rho3,m_per_atom,pop1,pop2,pop3,phase,degenerate\n{},{},{},{},{},{},{},{},{},{}\n",
                        f(r.energy_per_atom),
                        f(r.point.rho_bar),
                        f(r.point.rho2),
                        f(r.point.rho3),
                        f(r.m_per_atom),
                        f(r.populations[0]),
                        f(r.populations[1]),
                        f(r.populations[2]),
                        match r.phase_label {
                            trilevel::Phase::Normal => "normal",
                            trilevel::Phase::Collective => "collective",
                        },
                        r.degenerate
                    )
                }
            };
            common.emit(&text)
        }
        Command::Ground { common, window, hard_cap } => {
            let p = common.params()?;
            let search = SearchOptions {
                window,
                hard_cap,
                ..SearchOptions::default()
            };
            let g = global_ground(&p, &search).map_err(runtime)?;
            let text = match common.format {
                FormatArg::Json => g.to_json() + "\n",
                FormatArg::Csv => {
                    let mut t = String::from("m,energy\n");
                    for (m, e) in &g.sector_energies {
                        t.push_str(&format!("{m},{}\n", trilevel::scan::fmt_f64(*e)));
                    }
                    t
                }
            };
            common.emit(&text)
        }
        Command::Scan {
            common,
            engine,
            x_range,
            y_range,
            threads,
            gnuplot,
            crossovers,
            refine,
        } => {
            let p = common.params()?;
            let mut spec = ScanSpec::new(p.config, p.omegas(), p.n_atoms, parse_range(&x_range)?, parse_range(&y_range)?, engine.into());
            spec.format = match common.format {
                FormatArg::Csv => OutputFormat::Csv,
                FormatArg::Json => OutputFormat::Json,
            };
            spec.check().map_err(input)?;
            let grid = match threads {
                Some(n) => run_scan_with_threads(&spec, n),
                None => run_scan(&spec),
            }
            .map_err(runtime)?;
            let text = match spec.format {
                OutputFormat::Csv => write_csv(&grid),
                OutputFormat::Json => write_jsonl(&grid),
            }
            .map_err(runtime)?;
            common.emit(&text)?;
            if let Some(path) = gnuplot {
                fs::write(&path, write_gnuplot_matrix(&grid)).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            }
            let failed = grid.failed();
            if let Some(path) = crossovers {
                if failed.is_empty() {
                    let set = with_threads(threads, || extract_crossovers_refined(&grid, refine.then_some(1e-4)))?
                        .map_err(runtime)?;
                    fs::write(&path, set.to_csv()).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
                } else {
                    eprintln!("skipping crossovers: grid has failed points");
                }
            }
            if !failed.is_empty() {
                let mut summary = format!("{} of {} points failed:", failed.len(), grid.records.len());
                for r in failed.iter().take(20) {
                    summary.push_str(&format!("\n  ({}, {}): {}", r.mu_x, r.mu_y, r.error.as_deref().unwrap_or("")));
                }
                return Err(Failure::Partial(summary));
            }
            Ok(())
        }
        Command::Converge {
            common,
            atoms,
            range,
            x_max,
            x_steps,
            no_refine,
            threads,
        } => {
            let p = common.params()?;
            let opts = ConvergenceOptions {
                x_max,
                x_steps,
                refine_tol: (!no_refine).then_some(1e-4),
                search: SearchOptions::default(),
            };
            let range = parse_range(&range)?;
            let table = with_threads(threads, || convergence_study(p.config, p.omegas(), &atoms, range, &opts))?.map_err(input)?;
            let text = match common.format {
                FormatArg::Csv => table.to_csv(),
                FormatArg::Json => serde_json::to_string_pretty(&table).map_err(runtime)? + "\n",
            };
            common.emit(&text)?;
            for c in &table.curves[..table.curves.len() - 1] {
                eprintln!("{}: mean |boundary - separatrix| = {:.6}", c.name, c.mean_gap(table.separatrix()));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Partial(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}
