//! `thermofreq` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thermofreq::report::{compare_modes, ensure_dir, run_scenario, write_csv, write_json, RunOutput};
use thermofreq::{load_scenario, Error, PumpMode, Scenario};

#[derive(Debug, Parser)]
#[command(name = "thermofreq", version, about = "Heat-pump frequency support in combined heat and power networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write the time series and report.
    Run {
        #[command(flatten)]
        opts: RunArgs,
        /// Exit with code 2 unless the dispatch check and every audit pass.
        #[arg(long)]
        verify: bool,
    },
    /// Run under both pump modes and tabulate the outcomes.
    Compare {
        #[command(flatten)]
        opts: RunArgs,
    },
    /// Run with dispatch verification; exits 2 if verification fails.
    Verify {
        #[command(flatten)]
        opts: RunArgs,
    },
    /// Validate a scenario file without simulating.
    Check {
        /// Scenario file, or the name of a shipped fixture.
        scenario: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario file (TOML), or the name of a shipped fixture.
    scenario: PathBuf,
    /// Pump participation mode (1 or 2); defaults to the scenario's.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    mode: Option<u8>,
    /// Integration step in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Simulation horizon in seconds.
    #[arg(long)]
    t_end: Option<f64>,
    /// Absolute frequency band (rad/s) for settling times.
    #[arg(long)]
    settle_band: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Accepts a path, or a bare fixture name looked up as `<name>.toml` and
/// `scenarios/<name>.toml` relative to the working directory.
fn resolve(scenario: &Path) -> PathBuf {
    if scenario.exists() || scenario.extension().is_some() {
        return scenario.to_path_buf();
    }
    let file = scenario.with_extension("toml");
    [file.clone(), Path::new("scenarios").join(&file)]
        .into_iter()
        .find(|p| p.exists())
        .unwrap_or_else(|| scenario.to_path_buf())
}

impl RunArgs {
    fn load(&self) -> Result<(Scenario, PumpMode), Error> {
        let mut s = load_scenario(resolve(&self.scenario))?;
        if let Some(dt) = self.dt {
            s.settings.dt = dt;
        }
        if let Some(t) = self.t_end {
            s.settings.t_end = t;
        }
        if let Some(b) = self.settle_band {
            s.settle_band = b;
        }
        let mode = match self.mode {
            Some(1) => PumpMode::Mode1,
            Some(_) => PumpMode::Mode2,
            None => s.mode,
        };
        s.mode = mode;
        s.check_settings()?;
        Ok((s, mode))
    }
}

fn write_run(dir: &Path, stem: &str, out: &RunOutput) -> Result<(), Error> {
    write_csv(&dir.join(format!("{stem}.csv")), &out.system, &out.trajectory)?;
    write_json(&dir.join(format!("{stem}.json")), &out.report)
}

fn print_run(out: &RunOutput) {
    let r = &out.report;
    println!("scenario {} (mode {}), {} samples", r.scenario, r.mode, r.samples);
    for b in &r.buses {
        let settle = b
            .settling_time
            .map_or_else(|| "not settled".to_string(), |t| format!("{t:.3} s"));
        let tag = if b.converter { " (converter)" } else { "" };
        println!("  bus {}{tag}: settling {settle}, max |omega| {:.6e}", b.bus, b.max_deviation);
    }
    println!("  steady omega {:.6e}, Tbar {:.6e}", r.steady_omega, r.steady_t_bar);
    if let Some(eq) = &r.equilibrium {
        println!(
            "  equilibrium distance {:.3e}, security margin {:.4} rad ({})",
            eq.final_distance,
            eq.security_margin,
            if eq.secure { "secure" } else { "INSECURE" }
        );
    }
    if let Some(d) = &r.dispatch {
        println!(
            "  dispatch: max |sim - oracle| {:.3e} -> {}",
            d.max_abs_error,
            if d.passed { "pass" } else { "FAIL" }
        );
    }
    if let Some(note) = &r.dispatch_note {
        println!("  dispatch not verified: {note}");
    }
    let failed = r.passivity.iter().filter(|a| !a.report.passed).count();
    println!("  passivity audit: {} blocks, {failed} failed", r.passivity.len());
}

fn run(opts: &RunArgs, strict: bool) -> Result<bool, Error> {
    let (s, mode) = opts.load()?;
    let out = run_scenario(&s, mode, true)?;
    ensure_dir(&opts.out)?;
    write_run(&opts.out, &format!("{}_mode{}", s.name, mode.number()), &out)?;
    print_run(&out);
    let ok = out.report.dispatch.as_ref().is_some_and(|d| d.passed)
        && out.report.passivity.iter().all(|a| a.report.passed);
    Ok(ok || !strict)
}

fn execute(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Check { scenario } => {
            let s = load_scenario(resolve(&scenario))?;
            s.system(PumpMode::Mode1)?;
            if s.coupling.is_empty() || s.converter_link_susceptance.is_some() {
                s.system(PumpMode::Mode2)?;
            }
            println!(
                "{}: ok ({} buses, {} lines, {} heat edges, {} pumps)",
                s.name,
                s.electric.n_buses(),
                s.electric.n_lines(),
                s.heat.n_edges(),
                s.coupling.len()
            );
            Ok(true)
        }
        Command::Run { opts, verify } => run(&opts, verify),
        Command::Verify { opts } => run(&opts, true),
        Command::Compare { opts } => {
            let (s, _) = opts.load()?;
            let (report, r1, r2) = compare_modes(&s)?;
            ensure_dir(&opts.out)?;
            write_run(&opts.out, &format!("{}_mode1", s.name), &r1)?;
            write_run(&opts.out, &format!("{}_mode2", s.name), &r2)?;
            write_json(&opts.out.join(format!("{}_compare.json", s.name)), &report)?;
            println!("{:<28}{:>16}{:>16}", "", "mode 1", "mode 2");
            let row = |name: &str, a: f64, b: f64| println!("{name:<28}{a:>16.6e}{b:>16.6e}");
            row("steady omega", report.mode1.steady_omega, report.mode2.steady_omega);
            row("steady Tbar", report.mode1.steady_t_bar, report.mode2.steady_t_bar);
            row("max |omega|", report.mode1.max_deviation, report.mode2.max_deviation);
            row("mode 1 objective", report.mode1.objective_mode1, report.mode2.objective_mode1);
            row("joint objective", report.mode1.objective_mode2, report.mode2.objective_mode2);
            for (b1, b2) in report.mode1.buses.iter().zip(&report.mode2.buses) {
                let f = |t: Option<f64>| t.map_or_else(|| "-".to_string(), |t| format!("{t:.3}"));
                println!(
                    "{:<28}{:>16}{:>16}",
                    format!("settling bus {} (s)", b1.bus),
                    f(b1.settling_time),
                    f(b2.settling_time)
                );
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: verification failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
