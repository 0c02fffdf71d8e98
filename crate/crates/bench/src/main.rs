use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sbdp_bench::catalog;
use sbdp_bench::runner::{self, RunError, EXIT_SOLVER, EXIT_USAGE};
use sbdp_bench::scenario::{Param, ProblemSpec, Scenario};
use sbdp_core::Variant;

#[derive(Parser)]
#[command(
    name = "sbdp-bench",
    version,
    about = "Distributed NLP runs, certificates and audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the trace and certificate.
    Run(ScenarioArgs),
    /// Linearized analysis at the reference optimum, without running.
    Analyze(ScenarioArgs),
    /// Finite-difference check of the derivative oracles.
    Audit(ScenarioArgs),
    /// List built-in problems and their parameters.
    Catalog {
        /// Show a single problem.
        name: Option<String>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file or built-in scenario name.
    scenario: String,
    /// Data seed (logreg only).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Step size, or `auto`.
    #[arg(long)]
    alpha: Option<String>,
    /// Dual scaling, or `auto`.
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Stopping tolerance; `inf` stops after one iteration.
    #[arg(long)]
    eps: Option<f64>,
}

fn param(v: &str) -> Result<Param, String> {
    if v == "auto" {
        return Ok(Param::Auto);
    }
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(Param::Fixed(x)),
        _ => Err(format!("expected a number or `auto`, got `{v}`")),
    }
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario, String> {
        let mut s = Scenario::load(&self.scenario).map_err(|e| e.to_string())?;
        if let Some(seed) = self.seed {
            match &mut s.problem {
                ProblemSpec::Logreg(p) => p.seed = seed,
                _ => log::warn!(
                    "--seed ignored: problem {} has no random data",
                    s.problem.name()
                ),
            }
        }
        if let Some(v) = &self.out {
            s.out = Some(v.clone());
        }
        if let Some(v) = self.max_iter {
            s.max_iter = v;
        }
        if let Some(v) = self.variant {
            s.variant = v;
        }
        if let Some(v) = &self.alpha {
            s.alpha = param(v)?;
        }
        if let Some(v) = &self.beta {
            s.beta = param(v)?;
        }
        for (flag, v) in [("--rho", self.rho), ("--gamma", self.gamma)] {
            if v.is_some_and(|x| !x.is_finite()) {
                return Err(format!("{flag} must be finite"));
            }
        }
        if let Some(v) = self.rho {
            s.rho = v;
        }
        if let Some(v) = self.gamma {
            s.gamma = v;
        }
        if let Some(v) = self.eps {
            s.eps = v;
        }
        Ok(s)
    }
}

fn fail(e: RunError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

fn execute(cmd: Command) -> i32 {
    let load = |a: &ScenarioArgs| {
        a.load().map_err(|e| {
            eprintln!("error: {e}");
            EXIT_USAGE
        })
    };
    match cmd {
        Command::Catalog { name: None } => {
            print!("{}", catalog::listing());
            0
        }
        Command::Catalog { name: Some(n) } => match catalog::lookup(&n) {
            Some(p) => {
                println!("{}\n  {}", p.name, p.summary);
                for d in p.params {
                    println!("  {:<12} {:<18} default {}", d.key, d.kind, d.default);
                }
                0
            }
            None => {
                eprintln!("error: unknown problem `{n}`");
                EXIT_USAGE
            }
        },
        Command::Run(a) => {
            let s = match load(&a) {
                Ok(s) => s,
                Err(code) => return code,
            };
            let out = s.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            match runner::run_scenario(&s, &out) {
                Ok(r) => {
                    print!("{}", r.summary);
                    for f in &r.files {
                        println!("wrote {}", f.display());
                    }
                    r.exit_code
                }
                Err(e) => fail(e),
            }
        }
        Command::Analyze(a) => {
            let s = match load(&a) {
                Ok(s) => s,
                Err(code) => return code,
            };
            match runner::analyze(&s) {
                Ok((text, cert)) => {
                    print!("{text}");
                    if cert.lyapunov.is_ok() {
                        0
                    } else {
                        EXIT_SOLVER
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Audit(a) => {
            let s = match load(&a) {
                Ok(s) => s,
                Err(code) => return code,
            };
            match runner::audit(&s) {
                Ok((text, ok)) => {
                    print!("{text}");
                    if ok {
                        0
                    } else {
                        EXIT_SOLVER
                    }
                }
                Err(e) => fail(e),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    ExitCode::from(execute(cli.command) as u8)
}
