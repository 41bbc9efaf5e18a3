//! Command-line front end: generate instances, run the mediator, query the
//! exact oracles, measure deviation gains, and re-check result files.
//!
//! Exit codes: 0 success, 2 invariant violation, 3 infeasible input,
//! 4 resource cap.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use flowtoll::cli_io::{self, GenFamily, GenKind, IoError, RunConfig, SEED_ENV_VAR};
use flowtoll::mediator::MediatorConfig;

#[derive(Parser)]
#[command(name = "flowtoll", version, about = "Mediated routing games with private tolls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PrivacyArgs {
    /// Privacy budget epsilon.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Privacy budget delta.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Failure probability beta.
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    /// Disable all mechanism noise (diagnostic mode; the run is NOT
    /// private). Derived constants still use the nominal budget above.
    #[arg(long)]
    noise_free: bool,
    /// Multiplier on the solver's iteration-count formula.
    #[arg(long, default_value_t = 200.0)]
    c_t: f64,
    /// Multiplier on the closed-form optimization-error estimate.
    #[arg(long, default_value_t = 1.0)]
    c_alpha: f64,
    /// Invert the dual player's sign rule (diagnostic flag).
    #[arg(long)]
    flip_dual_sign: bool,
    /// Master seed; falls back to $FLOWTOLL_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

impl PrivacyArgs {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| {
            std::env::var(SEED_ENV_VAR)
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(0)
        })
    }

    fn run_config(&self, trials: usize, compute_oracle: bool) -> RunConfig {
        RunConfig {
            mediator: MediatorConfig {
                epsilon: self.epsilon,
                delta: self.delta,
                beta: self.beta,
                c_t: self.c_t,
                c_alpha: self.c_alpha,
                flip_dual_sign: self.flip_dual_sign,
                noise_free: self.noise_free,
            },
            seed: self.seed(),
            trials,
            compute_oracle,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the mediator end-to-end on an instance file.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        /// Result file path (omit to print to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run the exact oracles and report the realized gap.
        #[arg(long)]
        oracle_gap: bool,
        /// Extra seeds: run one independent cell per seed, in parallel,
        /// writing `<out>.seed<k>` files.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[command(flatten)]
        privacy: PrivacyArgs,
    },
    /// Exact brute-force optimum, relaxation value, and Nash checks.
    Oracle {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Measure deviation gains for one player over the canonical menu.
    Deviate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        player: usize,
        /// Deviation menu (only `canonical` is defined).
        #[arg(long, default_value = "canonical")]
        menu: String,
        /// Monte-Carlo trials per deviation arm (paired seeds).
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[command(flatten)]
        privacy: PrivacyArgs,
    },
    /// Re-verify the invariants of a result file against its instance.
    Check {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        instance: PathBuf,
    },
    /// Generate a seeded random instance.
    Gen {
        /// parallel-links | grid | layered-dag
        #[arg(long)]
        kind: GenKindArg,
        /// Number of players.
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Edge-count target (shape-dependent rounding).
        #[arg(long, default_value_t = 4)]
        m: usize,
        /// affine | quadratic | mixed | pigou
        #[arg(long, default_value = "affine")]
        family: GenFamilyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path (omit to print to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone)]
struct GenKindArg(GenKind);
impl std::str::FromStr for GenKindArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(GenKindArg)
    }
}

#[derive(Clone)]
struct GenFamilyArg(GenFamily);
impl std::str::FromStr for GenFamilyArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(GenFamilyArg)
    }
}

fn load_instance(path: &Path) -> Result<cli_io::InstanceDoc, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::Syntax {
        line: 0,
        col: 0,
        msg: format!("cannot read {}: {e}", path.display()),
    })?;
    let doc = cli_io::parse_instance(&text)?;
    for w in &doc.warnings {
        eprintln!("warning: {w}");
    }
    Ok(doc)
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<(), IoError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| IoError::Syntax {
            line: 0,
            col: 0,
            msg: format!("cannot write {}: {e}", path.display()),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), IoError> {
    match cli.command {
        Command::Solve {
            instance,
            out,
            oracle_gap,
            seeds,
            privacy,
        } => {
            let doc = load_instance(&instance)?;
            let base = privacy.run_config(1, oracle_gap);
            if seeds.is_empty() {
                let started = Instant::now();
                let outcome = cli_io::run_experiment(&doc, &base)?;
                let text = cli_io::render_result(&outcome);
                write_or_print(&out, &text)?;
                eprint!(
                    "{}",
                    cli_io::render_summary(&outcome, started.elapsed().as_millis())
                );
                Ok(())
            } else {
                // independent (instance, seed) cells run in parallel; each
                // cell owns its output file, nothing is shared
                let results: Vec<Result<(), IoError>> = std::thread::scope(|scope| {
                    let handles: Vec<_> = seeds
                        .iter()
                        .map(|&seed| {
                            let doc = &doc;
                            let out = &out;
                            let mut config = base;
                            config.seed = seed;
                            scope.spawn(move || {
                                let outcome = cli_io::run_experiment(doc, &config)?;
                                let text = cli_io::render_result(&outcome);
                                let path = out.as_ref().map(|p| {
                                    let mut s = p.as_os_str().to_os_string();
                                    s.push(format!(".seed{seed}"));
                                    PathBuf::from(s)
                                });
                                write_or_print(&path, &text)
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("worker panicked"))
                        .collect()
                });
                for r in results {
                    r?;
                }
                Ok(())
            }
        }
        Command::Oracle { instance } => {
            let doc = load_instance(&instance)?;
            print!("{}", cli_io::oracle_report(&doc)?);
            Ok(())
        }
        Command::Deviate {
            instance,
            player,
            menu,
            trials,
            privacy,
        } => {
            if menu != "canonical" {
                return Err(IoError::Syntax {
                    line: 0,
                    col: 0,
                    msg: format!("unknown menu '{menu}'"),
                });
            }
            let doc = load_instance(&instance)?;
            let config = privacy.run_config(trials, false);
            print!("{}", cli_io::deviation_report(&doc, player, &config)?);
            Ok(())
        }
        Command::Check { result, instance } => {
            let doc = load_instance(&instance)?;
            let text = std::fs::read_to_string(&result).map_err(|e| IoError::Syntax {
                line: 0,
                col: 0,
                msg: format!("cannot read {}: {e}", result.display()),
            })?;
            let parsed = cli_io::parse_result(&text)?;
            let passed = cli_io::check_result(&doc, &parsed)?;
            for p in &passed {
                println!("ok: {p}");
            }
            Ok(())
        }
        Command::Gen {
            kind,
            n,
            m,
            family,
            seed,
            out,
        } => {
            let doc = cli_io::generate_instance(kind.0, n, m, family.0, seed)?;
            for w in &doc.warnings {
                eprintln!("warning: {w}");
            }
            write_or_print(&out, &cli_io::serialize_instance(&doc))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
