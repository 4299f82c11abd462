//! Command-line driver: run scenarios or presets, sweep one parameter over a
//! value list, and run grid-refinement studies of the transport scheme.
//!
//! Every run writes `diagnostics.csv`, density and agent snapshots, and a
//! `manifest.txt` whose comment header records how the run was produced and
//! whose body is the fully resolved scenario; feeding the manifest back in
//! with `--scenario` reproduces the run bit for bit.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::convergence::{admissible_h, study, FlowCase};
use crate::diagnostics::{average_outflow_time, Recorder};
use crate::error::{Error, Result};
use crate::io::{save_agent_snapshot, save_density_snapshot, sig9};
use crate::scenario::{apply_override, build_world, preset, preset_names, Scenario};
use crate::stepper::{run, RunSummary, StopReason, World};

#[derive(Parser)]
#[command(name = "crowdscale", version, about = "Multiscale crowd flow simulator")]
struct Cli {
    /// Size of the worker pool (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write diagnostics, snapshots, and a manifest.
    Run(RunArgs),
    /// Run a scenario once per value of one key and summarize.
    Sweep(SweepArgs),
    /// Compare one transport step against analytic flows over a list of h.
    Convergence(ConvergenceArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SourceOpts {
    /// Built-in scenario; one of test1, test2_small, test2_large, test3, test4.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,

    /// Scenario text file (a previous run's manifest.txt also works).
    #[arg(long, value_name = "FILE")]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceOpts,

    /// Dotted key=value assignment applied after loading, e.g.
    /// populations.0.theta=0.3; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory.
    #[arg(long, default_value = "out", value_name = "DIR")]
    out: PathBuf,

    /// Write snapshots every N steps on top of the initial and final states.
    #[arg(long, value_name = "N")]
    snapshot_every: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: SourceOpts,

    /// Dotted key=value assignment applied before the sweep key; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Scenario key to vary, e.g. populations.0.theta.
    #[arg(long, visible_alias = "key", value_name = "KEY")]
    sweep_key: String,

    /// Comma-separated list of values for the swept key.
    #[arg(
        long,
        visible_alias = "values",
        value_name = "V1,V2,...",
        value_delimiter = ',',
        required = true
    )]
    sweep_values: Vec<String>,

    /// Output directory; each value gets a subdirectory.
    #[arg(long, default_value = "out", value_name = "DIR")]
    out: PathBuf,

    /// Write snapshots every N steps in each run.
    #[arg(long, value_name = "N")]
    snapshot_every: Option<u64>,
}

#[derive(Args)]
struct ConvergenceArgs {
    /// Analytic flow: translation or rotation.
    #[arg(long, value_name = "CASE")]
    case: String,

    /// Comma-separated grid spacings; each must tile the study square.
    #[arg(long, value_name = "H1,H2,...", value_delimiter = ',')]
    h: Vec<f64>,

    /// Directory for convergence_<case>.csv; the table always goes to stdout.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.exit_code() == 0 { 0 } else { 2 };
        }
    };
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let result = match cli.command {
        Command::Run(args) => run_command(args),
        Command::Sweep(args) => sweep_command(args),
        Command::Convergence(args) => convergence_command(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::StepRejected(_) => 1,
        _ => 2,
    }
}

fn stop_name(reason: StopReason) -> &'static str {
    match reason {
        StopReason::ReachedFinalTime => "reached_final_time",
        StopReason::DomainEmptied => "domain_emptied",
        StopReason::ProbesEmptied => "probes_emptied",
        StopReason::Stalled => "stalled",
    }
}

fn resolve_scenario(source: &SourceOpts, overrides: &[String]) -> Result<(Scenario, String)> {
    let (mut sc, origin) = match (&source.preset, &source.scenario) {
        (Some(name), None) => (preset(name)?, format!("preset {name}")),
        (None, Some(path)) => (Scenario::load(path)?, format!("file {}", path.display())),
        _ => {
            return Err(Error::Validation(vec![format!(
                "exactly one of --preset or --scenario is required; presets: {}",
                preset_names().join(", ")
            )]))
        }
    };
    for assignment in overrides {
        apply_override(&mut sc, assignment)?;
    }
    Ok((sc, origin))
}

pub struct RunOutput {
    pub summary: RunSummary,
    pub recorder: Recorder,
    pub snapshot_files: usize,
}

fn file_tag(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '-' })
        .collect()
}

fn write_snapshots(dir: &Path, world: &World) -> Result<usize> {
    let multi = world.populations.len() > 1;
    let t = world.time;
    let mut written = 0;
    for p in &world.populations {
        let prefix = if multi {
            format!("{}_", file_tag(&p.name))
        } else {
            String::new()
        };
        save_density_snapshot(
            &dir.join(format!("{prefix}density_t{t:012.6}.dat")),
            &p.density,
            t,
        )?;
        save_agent_snapshot(
            &dir.join(format!("{prefix}agents_t{t:012.6}.dat")),
            &p.micro,
            t,
        )?;
        written += 2;
    }
    Ok(written)
}

/// Run a resolved scenario into `out`: diagnostics.csv plus snapshots of the
/// initial state, the final state, and every `snapshot_every`-th step.
pub fn run_scenario(sc: &Scenario, out: &Path, snapshot_every: Option<u64>) -> Result<RunOutput> {
    fs::create_dir_all(out)?;
    let mut world = build_world(sc)?;
    let mut recorder = Recorder::new(&world);
    let mut snapshot_files = write_snapshots(out, &world)?;
    let every = snapshot_every.unwrap_or(0);
    let mut deferred: Result<()> = Ok(());

    let summary = run(&mut world, |w, report| {
        recorder.observe(w, report);
        if deferred.is_ok() && every > 0 && w.step_index % every == 0 {
            match write_snapshots(out, w) {
                Ok(n) => snapshot_files += n,
                Err(e) => deferred = Err(e),
            }
        }
    });
    deferred?;
    if !(every > 0 && world.step_index % every == 0) {
        snapshot_files += write_snapshots(out, &world)?;
    }

    let mut csv = Vec::new();
    recorder
        .write_csv(&mut csv)
        .map_err(Error::from)?;
    fs::write(out.join("diagnostics.csv"), csv)?;

    Ok(RunOutput {
        summary,
        recorder,
        snapshot_files,
    })
}

fn write_manifest(
    path: &Path,
    sc: &Scenario,
    notes: &[(&str, String)],
    summary: &RunSummary,
) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "# crowdscale = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(text, "# format = 1");
    for (key, value) in notes {
        let _ = writeln!(text, "# {key} = {value}");
    }
    let _ = writeln!(text, "# steps = {}", summary.steps);
    let _ = writeln!(text, "# dt_sequence_len = {}", summary.steps);
    let _ = writeln!(text, "# final_time = {}", summary.final_time);
    let _ = writeln!(text, "# stop = {}", stop_name(summary.reason));
    let _ = writeln!(text);
    text.push_str(&sc.to_text());
    fs::write(path, text)?;
    Ok(())
}

fn describe_overrides(overrides: &[String]) -> String {
    if overrides.is_empty() {
        "none".to_string()
    } else {
        overrides.join(" | ")
    }
}

fn report_run(out: &Path, result: &RunOutput) {
    let s = &result.summary;
    println!(
        "{}: {} steps to t = {} ({}), {} snapshot files",
        out.display(),
        s.steps,
        s.final_time,
        stop_name(s.reason),
        result.snapshot_files,
    );
    for (name, probed, t_ave) in average_times(&result.recorder) {
        let basis = if probed { "probe" } else { "domain" };
        println!("  {name}: T_ave = {} ({basis} mass)", sig9(t_ave));
    }
}

/// `(population, has probe, T_ave)` rows for one finished run. The average
/// is over the probe mass history when the population watches a probe
/// region, otherwise over its total measure mass.
fn average_times(recorder: &Recorder) -> Vec<(String, bool, f64)> {
    let mut names = Vec::new();
    for row in recorder.rows() {
        if !names.iter().any(|(n, _): &(String, bool)| n == &row.population) {
            names.push((row.population.clone(), row.probe_mu_mass > 0.0));
        }
    }
    names
        .into_iter()
        .map(|(name, probed)| {
            let series = if probed {
                recorder.probe_mass_series(&name)
            } else {
                recorder.mu_mass_series(&name)
            };
            (name, probed, average_outflow_time(&series))
        })
        .collect()
}

fn run_command(args: RunArgs) -> Result<()> {
    let (sc, origin) = resolve_scenario(&args.source, &args.overrides)?;
    let result = run_scenario(&sc, &args.out, args.snapshot_every)?;
    let notes = [
        ("command", "run".to_string()),
        ("source", origin),
        ("overrides", describe_overrides(&args.overrides)),
    ];
    write_manifest(&args.out.join("manifest.txt"), &sc, &notes, &result.summary)?;
    report_run(&args.out, &result);
    Ok(())
}

fn sweep_command(args: SweepArgs) -> Result<()> {
    let (base, origin) = resolve_scenario(&args.source, &args.overrides)?;

    let mut variants = Vec::with_capacity(args.sweep_values.len());
    for value in &args.sweep_values {
        let assignment = format!("{}={}", args.sweep_key, value);
        let mut sc = base.clone();
        apply_override(&mut sc, &assignment)?;
        variants.push((value.clone(), assignment, sc));
    }

    fs::create_dir_all(&args.out)?;
    let mut summary_csv = String::from("key,value,population,t_ave,steps,final_time,stop\n");
    for (value, assignment, sc) in &variants {
        let dir = args.out.join(file_tag(&format!("{}_{}", args.sweep_key, value)));
        let result = run_scenario(sc, &dir, args.snapshot_every)?;
        let notes = [
            ("command", "sweep".to_string()),
            ("source", origin.clone()),
            ("overrides", describe_overrides(&args.overrides)),
            ("sweep_point", assignment.clone()),
        ];
        write_manifest(&dir.join("manifest.txt"), sc, &notes, &result.summary)?;
        report_run(&dir, &result);
        for (name, _, t_ave) in average_times(&result.recorder) {
            let _ = writeln!(
                summary_csv,
                "{},{},{},{},{},{},{}",
                args.sweep_key,
                value,
                name,
                sig9(t_ave),
                result.summary.steps,
                sig9(result.summary.final_time),
                stop_name(result.summary.reason),
            );
        }
    }

    let summary_path = args.out.join("sweep_summary.csv");
    fs::write(&summary_path, summary_csv)?;
    println!("{}", summary_path.display());
    Ok(())
}

fn convergence_command(args: ConvergenceArgs) -> Result<()> {
    let case = FlowCase::parse(&args.case)?;
    for &h in &args.h {
        if !admissible_h(h) {
            return Err(Error::InvalidScaling(format!(
                "h = {h} does not tile the convergence study square"
            )));
        }
    }

    let mut csv = String::from("h,l1_cell_error\n");
    for level in study(case, &args.h) {
        let _ = writeln!(csv, "{},{}", level.h, sig9(level.error));
    }
    print!("{csv}");

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join(format!("convergence_{}.csv", case.name())), csv)?;
    }
    Ok(())
}
