use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use meanfield_core::analysis::{index_weights, method_law, table1, TABLE1_METHODS};
use meanfield_core::EstimateReport;
use meanfield_harness::experiments::{headline, ppcheck, rates, run_method, sweep};
use meanfield_harness::output::{self, num};
use meanfield_harness::{in_pool, resolve_workers, HarnessError, HarnessResult, Method, RateKind, RunConfig};

/// Monte Carlo, multilevel and multi-index estimators for mean-field particle systems.
#[derive(Debug, Parser)]
#[command(name = "meanfield", version)]
struct Cli {
    /// TOML run configuration; defaults describe the standard Kuramoto experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, overriding MEANFIELD_WORKERS and the config (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print predicted work-complexity laws (a,b), work ~ TOL^-a log(1/TOL)^b.
    Predict {
        #[arg(long, default_value_t = 1.0)]
        sp: f64,
        #[arg(long, default_value_t = 2.0)]
        st: f64,
        #[arg(long, default_value_t = 2.0)]
        gp: f64,
        /// Print the full table over s_t, gamma_p in {1, 2} with s_p = 1.
        #[arg(long)]
        table1: bool,
        /// Also write the laws as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Measure means and variances of level differences.
    Rates {
        /// plain, time, particle-subset, particle-partition, joint, mixed-diagonal or mixed-grid.
        #[arg(long)]
        which: RateKind,
        #[arg(long, default_value_t = 0)]
        min_level: u32,
        #[arg(long, default_value_t = 5)]
        max_level: u32,
        /// Samples per level or index.
        #[arg(long, short = 'm', default_value_t = 10_000)]
        samples: u64,
        /// Output CSV; `-` for stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one estimator and write its JSON report.
    Run {
        /// mc, mlmc-n, mlmc-p, mlmc-joint or mimc.
        #[arg(long)]
        method: Method,
        /// Defaults to the first tolerance of the config.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run methods over tolerances and seeds and tabulate work and errors.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "mlmc-joint,mimc")]
        methods: Vec<Method>,
        /// Defaults to the tolerances of the config.
        #[arg(long, value_delimiter = ',')]
        tols: Vec<f64>,
        /// Number of seeds per (method, tol), counting up from the master seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// JSON report whose estimate is the reference value.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat one estimator and compare the spread of estimates with a normal law.
    Ppcheck {
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = 0.1)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        runs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, HarnessError::BudgetInfeasible(_)) {
                println!("{}", output::to_json(&e.to_json()).trim_end());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> HarnessResult<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.execution.master_seed = seed;
    }
    let workers = resolve_workers(cli.workers, cfg.execution.workers)?;
    in_pool(workers, move || dispatch(cli.command, &cfg))?
}

fn emit(out: Option<PathBuf>, default: PathBuf, text: &str) -> HarnessResult<()> {
    let path = out.unwrap_or(default);
    if path == Path::new("-") {
        print!("{text}");
        Ok(())
    } else {
        output::write_file(&path, text)?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }
}

fn dispatch(command: Command, cfg: &RunConfig) -> HarnessResult<()> {
    let seed = cfg.execution.master_seed;
    let dir = &cfg.output.dir;
    match command {
        Command::Predict { sp, st, gp, table1: full, csv } => predict(sp, st, gp, full, csv),
        Command::Rates { which, min_level, max_level, samples, out } => {
            let table = rates(cfg, which, min_level, max_level, samples, seed)?;
            for f in &table.fits {
                eprintln!("{} {} {}: slope {:.3} over {} levels", f.kind, f.psi, f.stat, f.fit.slope, f.fit.points_used);
            }
            emit(out, dir.join(format!("rates-{which}.csv")), &output::rates_csv(&table))
        }
        Command::Run { method, tol, out } => {
            let tol = match tol.or_else(|| cfg.budget.tols.first().copied()) {
                Some(t) => t,
                None => return Err(HarnessError::Usage("no tolerance given".into())),
            };
            let report = run_method(cfg, method, tol, seed)?;
            eprintln!(
                "{method} tol={tol}: estimate {} with {} work units",
                num(headline(&report)),
                num(report.total_work_units)
            );
            emit(out, dir.join(format!("run-{method}-{tol}.json")), &output::to_json(&report))
        }
        Command::Sweep { methods, tols, seeds, reference, out } => {
            let tols = if tols.is_empty() { cfg.budget.tols.clone() } else { tols };
            let seeds: Vec<u64> = (0..seeds).map(|i| seed.wrapping_add(i)).collect();
            let reference = match reference {
                Some(path) => Some(read_reference(&path)?),
                None => None,
            };
            let table = sweep(cfg, &methods, &tols, &seeds, reference)?;
            for f in &table.fits {
                eprintln!("{} {}: slope {:.3} vs 1/tol", f.method, f.stat, f.fit.slope);
            }
            emit(out, dir.join("sweep.csv"), &output::sweep_csv(&table))
        }
        Command::Ppcheck { method, tol, runs, out } => {
            let table = ppcheck(cfg, method, tol, runs, seed)?;
            match table.summary.ks_distance {
                Some(d) => eprintln!("KS distance to N(0,1): {d:.4}"),
                None => eprintln!("degenerate: every estimate is identical, KS skipped"),
            }
            emit(out, dir.join(format!("ppcheck-{method}-{tol}.csv")), &output::ppcheck_csv(&table))
        }
    }
}

fn read_reference(path: &Path) -> HarnessResult<f64> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let report: EstimateReport = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Usage(format!("{} is not a report: {e}", path.display())))?;
    Ok(headline(&report))
}

fn predict(sp: f64, st: f64, gp: f64, full: bool, csv: Option<PathBuf>) -> HarnessResult<()> {
    let usage = |e: meanfield_core::Error| HarnessError::Usage(e.to_string());
    if !(st > 0.0) || !(sp >= 0.0) || !(gp >= 1.0) {
        return Err(HarnessError::Usage("need s_p >= 0, s_t > 0 and gamma_p >= 1".into()));
    }
    let entries = if full {
        table1()
    } else {
        TABLE1_METHODS
            .iter()
            .map(|&method| {
                Ok(meanfield_core::analysis::Table1Entry { method, s_t: st, gamma_p: gp, law: method_law(method, sp, st, gp)? })
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(usage)?
    };
    if full {
        println!("{:<12}{:>12}{:>12}{:>12}{:>12}", "method", "st=1,gp=1", "st=1,gp=2", "st=2,gp=1", "st=2,gp=2");
        for row in entries.chunks(4) {
            print!("{:<12}", row[0].method);
            for e in row {
                print!("{:>12}", e.law.to_string());
            }
            println!();
        }
    } else {
        println!("s_p={sp} s_t={st} gamma_p={gp}");
        for e in &entries {
            println!("{:<12}{}", e.method, e.law);
        }
        let w = index_weights(sp, st, gp).map_err(usage)?;
        println!("MIMC index set: {}*a1 + {}*a2 <= L", num(w[0]), num(w[1]));
    }
    if let Some(path) = csv {
        output::write_file(&path, &output::predict_csv(&entries, if full { 1.0 } else { sp }))?;
    }
    Ok(())
}
