use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpilc::harness::{
    report, run_experiment, simulate, verify_lemmas, PlantSelection, RunConfig, TrajectorySpec,
};
use gpilc::signals::TimeSeries;
use gpilc::Error;

/// Frequency-domain iterative learning control with a complex Gaussian
/// process plant model.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seed the model, then run learning iterations and write a run directory.
    Run(ConfigArgs),
    /// Summarize a (possibly partial) run directory.
    Report {
        dir: PathBuf,
    },
    /// Monte-Carlo checks of the convergence bounds.
    VerifyLemmas {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Also write the results as CSV into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute the plant on an input CSV and write the output CSV.
    Sim {
        #[command(flatten)]
        config: ConfigArgs,
        /// Input series (`t, u1, u2, …`).
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// slow, fast or custom:<path>
    #[arg(long)]
    trajectory: Option<String>,
    /// sea-arm or lti:<path>
    #[arg(long)]
    plant: Option<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> gpilc::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(n) = self.iterations {
            c.learning.max_iterations = n;
        }
        if let Some(t) = &self.trajectory {
            c.trajectory = TrajectorySpec::parse(t)?;
        }
        if let Some(p) = &self.plant {
            c.plant = PlantSelection::parse(p)?;
        }
        c.validate()?;
        Ok(c)
    }
}

enum Outcome {
    Ok,
    Fault,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::PlantFault(_) | Error::Numerical(_) | Error::State(_) => 1,
        _ => 2,
    }
}

fn run(args: &ConfigArgs) -> gpilc::Result<Outcome> {
    let c = args.resolve()?;
    if args.print_config {
        print!("{}", c.to_toml()?);
        return Ok(Outcome::Ok);
    }
    let s = run_experiment(&c)?;
    let r = report(&s.dir)?;
    fs::write(s.dir.join("report.csv"), &r.csv)?;
    print!("{}", r.text);
    Ok(if s.fault.is_some() { Outcome::Fault } else { Outcome::Ok })
}

fn sim(args: &ConfigArgs, input: &Path) -> gpilc::Result<Outcome> {
    let c = args.resolve()?;
    if args.print_config {
        print!("{}", c.to_toml()?);
        return Ok(Outcome::Ok);
    }
    let file = fs::File::open(input).map_err(|e| Error::Config(format!("cannot open {}: {e}", input.display())))?;
    let u = TimeSeries::read_csv(file)?;
    let (y, fault) = simulate(&c, &u)?;
    let dir = PathBuf::from(&c.out_dir);
    fs::create_dir_all(&dir)?;
    let path = dir.join("sim_output.csv");
    y.write_csv(fs::File::create(&path)?)?;
    println!("wrote {}", path.display());
    Ok(match fault {
        Some(f) => {
            eprintln!("plant fault: {f}");
            Outcome::Fault
        }
        None => Outcome::Ok,
    })
}

fn verify(seed: u64, trials: usize, out: Option<&Path>) -> gpilc::Result<Outcome> {
    let results = verify_lemmas(seed, trials)?;
    let mut csv = String::from("suite,trials,failures,worst,resampled\n");
    for r in &results {
        println!(
            "{} {}: {} trials, {} failures, worst {:.3e}, {} resampled",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.trials,
            r.failures,
            r.worst,
            r.resampled
        );
        csv.push_str(&format!("{},{},{},{},{}\n", r.name, r.trials, r.failures, r.worst, r.resampled));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("verify_lemmas.csv"), csv)?;
    }
    // a failed suite is a numerical finding, not a configuration problem
    Ok(if results.iter().all(|r| r.passed()) { Outcome::Ok } else { Outcome::Fault })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Report { dir } => report(dir).and_then(|r| {
            fs::write(dir.join("report.csv"), &r.csv)?;
            print!("{}", r.text);
            Ok(Outcome::Ok)
        }),
        Command::VerifyLemmas { seed, trials, out } => verify(*seed, *trials, out.as_deref()),
        Command::Sim { config, input } => sim(config, input),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Fault) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
