use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reachkit::harness::commands::default_grid_methods;
use reachkit::harness::record::{append_row, row_header, write_table};
use reachkit::harness::{
    cmd_bench, cmd_certificate, cmd_grid, cmd_solve, cmd_validate, BenchConfig, BenchRow, CertificateRow, MethodTag,
    ProblemFile, RunOptions,
};
use reachkit::{Error, Result};

/// Stochastic reach-avoid lower bounds for LTI systems.
#[derive(Parser)]
#[command(name = "reachkit", version)]
struct Cli {
    /// Worker threads for sweeps and quadrature.
    #[arg(long, env = "REACHKIT_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    problem: PathBuf,
    /// Quadrature accuracy.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            eps: self.eps,
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single-point problem; prints a JSON record, appends a CSV row with --out.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ds")]
        method: MethodTag,
    },
    /// Evaluate every x0 of the problem; writes CSV rows and prints a JSON summary.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Repeat for several methods; defaults to ds, sl and (n <= 3) dp.
        #[arg(long)]
        method: Vec<MethodTag>,
    },
    /// Timing study on chains of integrators.
    Bench {
        /// Optional JSON bench configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// State dimensions; repeat or comma-separate.
        #[arg(long = "n", value_delimiter = ',')]
        dims: Vec<usize>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        method: Vec<MethodTag>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// DP values per grid spacing against the open-loop lower bound.
    Certificate {
        #[command(flatten)]
        common: Common,
        /// Repeat or comma-separate.
        #[arg(long = "spacing", value_delimiter = ',', required = true)]
        spacings: Vec<f64>,
    },
    /// Quadrature versus Monte-Carlo at the direct-search optimizer.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<u64>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn table(out: &Option<PathBuf>, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<()> {
    match out {
        Some(path) => write_table(path, &header, &rows),
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(&header)?;
            for r in rows {
                w.write_record(&r)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<ProblemFile> {
    ProblemFile::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Schema(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve { common, method } => {
            let problem = load(&common.problem)?;
            let rec = cmd_solve(&problem, method, &common.options())?;
            if let Some(path) = &common.out {
                append_row(path, &row_header(rec.x0.len()), &rec.row().fields())?;
            }
            print_json(&rec)
        }
        Command::Grid { common, method } => {
            let problem = load(&common.problem)?;
            let methods = if method.is_empty() {
                default_grid_methods(&problem)?
            } else {
                method
            };
            let out = cmd_grid(&problem, &methods, &common.options())?;
            let n = problem.query()?.system.state_dim();
            let rows = out.rows().iter().map(|r| r.fields()).collect();
            if common.out.is_some() {
                table(&common.out, row_header(n), rows)?;
                print_json(&out.summary)
            } else {
                table(&None, row_header(n), rows)?;
                eprintln!("{}", serde_json::to_string(&out.summary)?);
                Ok(())
            }
        }
        Command::Bench {
            config,
            dims,
            points,
            method,
            eps,
            seed,
            out,
        } => {
            let mut cfg: BenchConfig = match config {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(&path).map_err(|e| {
                    Error::Schema(format!("{}: {e}", path.display()))
                })?)?,
                None => BenchConfig::default(),
            };
            if !dims.is_empty() {
                cfg.dims = dims;
            }
            if let Some(p) = points {
                cfg.points = p;
            }
            if !method.is_empty() {
                cfg.methods = method;
            }
            if let Some(e) = eps {
                cfg.quadrature.eps = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let rows = cmd_bench(&cfg)?;
            table(&out, BenchRow::header(), rows.iter().map(BenchRow::fields).collect())
        }
        Command::Certificate { common, spacings } => {
            let problem = load(&common.problem)?;
            let rows = cmd_certificate(&problem, &spacings, &common.options())?;
            let n = problem.query()?.system.state_dim();
            table(&common.out, CertificateRow::header(n), rows.iter().map(CertificateRow::fields).collect())
        }
        Command::Validate { common, samples } => {
            let problem = load(&common.problem)?;
            let v = cmd_validate(&problem, samples, &common.options())?;
            if let Some(path) = &common.out {
                let n = v.quadrature.x0.len();
                append_row(path, &row_header(n), &v.quadrature.row().fields())?;
                append_row(path, &row_header(n), &v.mc.row().fields())?;
            }
            print_json(&v)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_schema() || matches!(e, Error::Io(_) | Error::Csv(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
