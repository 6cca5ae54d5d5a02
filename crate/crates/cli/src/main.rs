use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gnes::cournot::CournotConfig;
use gnes::solver::Variant;
use gnes_cli::commands::{cmd_compare, cmd_gen_cournot, cmd_run, cmd_verify, Overrides};
use gnes_cli::config::RunConfig;
use gnes_cli::error::CliError;
use gnes_cli::output::write_atomic;

/// Stochastic generalized Nash equilibrium solver.
#[derive(Parser)]
#[command(name = "gnes", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one variant for several replications.
    Run(Common),
    /// Run several variants or an inertia sweep on shared seeds.
    Compare(Common),
    /// Check the convergence inequalities along a diagnostic run.
    Verify(Common),
    /// Generate problem instances.
    #[command(subcommand)]
    Gen(Gen),
}

#[derive(Subcommand)]
enum Gen {
    /// Write a networked Cournot instance document.
    Cournot {
        /// TOML file with generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        allow_nonmonotone: bool,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; the builtin affine game when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// risfbf, sfbf or sfb. `compare` accepts it several times.
    #[arg(long)]
    variant: Vec<Variant>,
    #[arg(long)]
    reps: Option<usize>,
    /// Record the stochastic-error and Lyapunov quantities.
    #[arg(long)]
    diagnostics: bool,
    #[arg(long)]
    allow_nonmonotone: bool,
}

impl Common {
    fn load(&self, compare: bool) -> Result<(RunConfig, bool), CliError> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let o = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            variants: self.variant.clone(),
            reps: self.reps,
            diagnostics: self.diagnostics,
            allow_nonmonotone: self.allow_nonmonotone,
        };
        o.apply(&mut config, compare);
        Ok((config, o.allow_nonmonotone))
    }
}

fn execute(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run(c) => {
            let (config, allow) = c.load(false)?;
            let s = cmd_run(&config, allow)?;
            print_summary(&s)?;
            Ok(if s.clean() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Compare(c) => {
            let (config, allow) = c.load(true)?;
            let s = cmd_compare(&config, allow)?;
            print_summary(&s)?;
            Ok(if s.clean() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Verify(c) => {
            let (config, allow) = c.load(false)?;
            let report = cmd_verify(&config, allow)?;
            print!("{}", report.table());
            match report.violation() {
                Some(e) => Err(e),
                None => Ok(ExitCode::SUCCESS),
            }
        }
        Command::Gen(Gen::Cournot {
            config,
            seed,
            out,
            allow_nonmonotone,
        }) => {
            let mut c = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                    toml::from_str::<CournotConfig>(&text).map_err(|e| CliError::Config(e.to_string()))?
                }
                None => CournotConfig::default(),
            };
            if let Some(s) = seed {
                c.seed = s;
            }
            c.allow_nonmonotone |= allow_nonmonotone;
            let text = cmd_gen_cournot(&c)?;
            match out {
                Some(p) => write_atomic(&p, text.as_bytes())?,
                None => std::io::stdout()
                    .write_all(text.as_bytes())
                    .map_err(|e| CliError::io("stdout".as_ref(), e))?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_summary(s: &gnes_cli::commands::Summary) -> Result<(), CliError> {
    for f in &s.families {
        for r in &f.replications {
            println!(
                "{} rep {} seed {}: {} after {} iterations, r_psi {}, res {}",
                f.label,
                r.replication,
                r.seed,
                r.stop,
                r.iterations,
                r.final_r_psi.map_or("-".into(), |v| format!("{v:.3e}")),
                r.final_res.map_or("-".into(), |v| format!("{v:.3e}")),
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GNES_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => CliError::Usage(e.to_string()).pipe_exit(),
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => e.pipe_exit(),
    }
}

trait PipeExit {
    fn pipe_exit(self) -> !;
}

impl PipeExit for CliError {
    /// Prints the error document on stderr and exits.
    fn pipe_exit(self) -> ! {
        eprintln!("{}", self.to_json());
        std::process::exit(self.exit_code() as i32)
    }
}
