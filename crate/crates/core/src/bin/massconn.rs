use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use massconn::scenario::{
    preset, run_scenario, Format, Mode, ScenarioError, ScenarioSweep, PRESETS,
};

#[derive(Parser)]
#[command(
    name = "massconn",
    version,
    about = "Rate analysis for massive-connectivity massive MIMO uplinks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        file: PathBuf,
        /// Output directory; overrides the file's `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a built-in scenario.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        name: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Print the scenario as TOML instead of running it.
        #[arg(long)]
        print: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    /// Monte Carlo realizations per point.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// analytic, monte_carlo or both.
    #[arg(long)]
    mode: Option<Mode>,
    /// Output formats, comma separated (csv, json).
    #[arg(long, value_delimiter = ',')]
    format: Option<Vec<Format>>,
    /// Also write state-evolution traces and per-trial Monte Carlo samples.
    #[arg(long)]
    verbose: bool,
}

impl Overrides {
    fn apply(self, s: &mut ScenarioSweep) {
        if let Some(t) = self.trials {
            s.trials = t;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(m) = self.mode {
            s.mode = m;
        }
        if let Some(f) = self.format {
            s.output.formats = f;
        }
        s.output.verbose |= self.verbose;
    }
}

fn execute(cli: Cli) -> Result<(), ScenarioError> {
    let (mut scenario, out, overrides) = match cli.command {
        Command::Run {
            file,
            out,
            overrides,
        } => (ScenarioSweep::from_file(&file)?, out, overrides),
        Command::Preset {
            name,
            out,
            print,
            overrides,
        } => {
            let mut s = preset(&name)?;
            if print {
                overrides.apply(&mut s);
                print!("{}", s.to_toml());
                return Ok(());
            }
            (s, Some(out), overrides)
        }
    };
    overrides.apply(&mut scenario);
    scenario.validate()?;
    let (result, written) = run_scenario(&scenario, out.as_deref())?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    for o in &result.optima {
        let series = o
            .series_value
            .map(|v| format!(" [{v}]"))
            .unwrap_or_default();
        if let Some(r) = &o.pilot_len {
            println!(
                "{}{series}: L* = {} ({:.4} bits/symbol)",
                o.beamformer, r.argmax, r.objective
            );
        }
        if let Some(r) = &o.scheduling {
            println!(
                "{}{series}: J* = {} ({:.4} bits/symbol)",
                o.beamformer, r.argmax, r.objective
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
