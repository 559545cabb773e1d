use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use powerinterp::bench::{self, BenchConfig, ValidationLevel};
use powerinterp::eim::{eim_offline, EimOptions, DEFAULT_TOL_REL};
use powerinterp::family::sparse::read_vector;
use powerinterp::family::{gen_problem, load_family, write_family, ProblemKind};
use powerinterp::io::fmt17;
use powerinterp::multiindex::count_kappa;
use powerinterp::sampling::{maximin_lhs, write_doe_csv, SampleSet};
use powerinterp::surrogate::{build_surrogate, Mode, Quantity, Surrogate};

#[derive(Parser)]
#[command(name = "powerinterp", version, about = "Interpolated matrix-power surrogates for parametric linear algebra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the greedy offline stage and save a surrogate.
    Offline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        m: i64,
        /// Force the constant multi-index as the first selection.
        #[arg(long)]
        force_k0: bool,
        /// Training sample size (default depends on Q).
        #[arg(long)]
        sample_n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        #[arg(long, default_value_t = DEFAULT_TOL_REL)]
        tol: f64,
        #[arg(long)]
        quantity: Mode,
        /// Right-hand side for `solve`; defaults to the family's load.
        #[arg(long)]
        rhs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved surrogate at one parameter.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mu: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a convergence benchmark; writes the CSV and a `.meta.json` next to it.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a maximin LHS design on the unit cube.
    Doe {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic problem as MatrixMarket files plus `family.json`.
    Gen {
        #[arg(long)]
        problem: ProblemKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in invariant checks.
    Validate {
        #[arg(long, default_value = "fast")]
        level: ValidationLevel,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<powerinterp::Error>())
                .map_or(1, |pe| pe.exit_code());
            ExitCode::from(code as u8)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Offline {
            config,
            m,
            force_k0,
            sample_n,
            sample_seed,
            tol,
            quantity,
            rhs,
            out,
        } => {
            let fam = load_family(&config)?;
            let rhs = match (&rhs, quantity) {
                (Some(p), Mode::Solve) => Some(read_vector(p)?),
                (Some(_), _) => return Err(powerinterp::Error::invalid("--rhs only applies to --quantity solve").into()),
                (None, _) => None,
            };
            let q = count_kappa(m, fam.d() as i64)? as usize;
            let n = sample_n.unwrap_or_else(|| bench::default_sample_size(q));
            let sample = SampleSet::lhs(fam.param_box(), n, sample_seed)?;
            let opts = EimOptions {
                tol_rel: tol,
                n_max: None,
                force_k0: force_k0 || quantity == Mode::Logdet,
            };
            let model = eim_offline(&fam, m, &sample, &opts)?;
            let surrogate = build_surrogate(&model, &fam, quantity, rhs.as_deref())?;
            surrogate.save(&out)?;
            eprintln!(
                "selected N = {} of Q = {q} from {n} samples; final residual {:e}",
                model.n(),
                model.residual_history().last().copied().unwrap_or(0.0)
            );
        }
        Command::Eval { model, mu, out } => {
            let s = Surrogate::load(&model)?;
            let text = quantity_csv(&s.eval(&mu)?);
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Bench { config, out } => {
            let cfg = BenchConfig::from_file(&config)?;
            let report = bench::run_convergence(&cfg)?;
            for f in &report.meta.failures {
                eprintln!("warning: {f}");
            }
            bench::export_csv(&report, &out)?;
            bench::export_meta(&report, &out.with_extension("meta.json"))?;
        }
        Command::Doe { dim, n, seed, out } => {
            let design = maximin_lhs(dim, n, seed)?;
            write_doe_csv(&out, design.points())?;
        }
        Command::Gen { problem, n, seed, out } => {
            let fam = gen_problem(problem, n, seed)?;
            let path = write_family(&out, &fam)?;
            println!("{}", path.display());
        }
        Command::Validate { level } => {
            let outcomes = bench::validate_suite(level);
            for o in &outcomes {
                println!("{o}");
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            println!("{} passed, {failed} failed", outcomes.len() - failed);
            if failed > 0 {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Scalars and vectors as a `value` column; matrices as bare rows.
fn quantity_csv(q: &Quantity) -> String {
    let mut s = String::new();
    match q {
        Quantity::Scalar(v) => {
            let _ = writeln!(s, "value\n{}", fmt17(*v));
        }
        Quantity::Vector(v) => {
            s.push_str("value\n");
            for x in v {
                let _ = writeln!(s, "{}", fmt17(*x));
            }
        }
        Quantity::Matrix(m) => {
            for row in m.row_iter() {
                let cells: Vec<String> = row.iter().map(|x| fmt17(*x)).collect();
                let _ = writeln!(s, "{}", cells.join(","));
            }
        }
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| powerinterp::Error::io(path, e).into())
}
