//! `coverplan` command-line front end.
//!
//! Exit codes: 0 success, 2 input error, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use coverplan::export::atomic_write;
use coverplan::sim::{self, OutputToggles};
use coverplan::world::Scenario;
use coverplan::{scenarios, Error};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const EXIT_INPUT: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn input(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_INPUT,
            error: error.into(),
        }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error: error.into(),
        }
    }

    /// Classify a library error: bad inputs are 2, everything else 3.
    fn from_lib(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::Field { .. } | Error::Invariant(_) | Error::Parse(_) => Failure::input(e),
            _ => Failure::runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "coverplan", version, about = "Coverage inspection planning and mission simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Plan viewpoints and a route on the reference map; no simulation.
    Plan(PlanArgs),
    /// Plan and fly a full simulated mission.
    Run(RunArgs),
    /// Run many missions and write an aggregate CSV.
    Batch(BatchArgs),
    /// Write the built-in scenarios as JSON files.
    Generate(GenerateArgs),
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Parameter override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Skip the SVG figure.
    #[arg(long)]
    no_svg: bool,
}

#[derive(Args, Debug, Clone)]
struct MissionFlags {
    /// Replace the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Parameter override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Disable view-angle adaptation.
    #[arg(long)]
    no_view_adapt: bool,
    /// Remove dynamic obstacles.
    #[arg(long)]
    no_dynamic: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: MissionFlags,
    /// Write the SVG figure. When none of --svg/--ply/--csv is given all are written.
    #[arg(long)]
    svg: bool,
    /// Write the coverage PLY.
    #[arg(long)]
    ply: bool,
    /// Write the telemetry CSV.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct BatchArgs {
    /// JSON file holding an array of run manifests; repeatable.
    #[arg(long)]
    manifest: Vec<PathBuf>,
    /// Scenario to run with the shared flags below; repeatable.
    #[arg(long)]
    scenario: Vec<PathBuf>,
    /// Directory for the aggregate CSV.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: MissionFlags,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Only this scenario (default: all built-in scenarios).
    #[arg(long)]
    name: Option<String>,
}

/// One mission in a batch.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunManifest {
    scenario: PathBuf,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    overrides: Vec<String>,
    #[serde(default = "yes")]
    view_adaptation: bool,
    #[serde(default = "yes")]
    dynamic_obstacles: bool,
    #[serde(default)]
    label: String,
}

fn yes() -> bool {
    true
}

impl RunManifest {
    fn from_flags(scenario: PathBuf, flags: &MissionFlags) -> Self {
        RunManifest {
            scenario,
            out: None,
            seed: flags.seed,
            overrides: flags.overrides.clone(),
            view_adaptation: !flags.no_view_adapt,
            dynamic_obstacles: !flags.no_dynamic,
            label: String::new(),
        }
    }
}

fn load_scenario(path: &Path) -> CliResult<Scenario> {
    Scenario::load(path)
        .with_context(|| format!("cannot load scenario {}", path.display()))
        .map_err(Failure::input)
}

/// Load the scenario and apply seed, overrides and toggles.
fn prepare(m: &RunManifest) -> CliResult<Scenario> {
    let mut s = load_scenario(&m.scenario)?;
    let mut params = s.params.with_overrides(&m.overrides).map_err(Failure::from_lib)?;
    if !m.view_adaptation {
        params.view_adaptation = false;
    }
    if !m.dynamic_obstacles {
        params.dynamic_obstacles_enabled = false;
    }
    s = s.with_params(params).map_err(Failure::from_lib)?;
    if let Some(seed) = m.seed {
        s.seed = seed;
    }
    if s.surfaces.is_empty() {
        return Err(Failure::input(anyhow!("no inspectable surface in {}", m.scenario.display())));
    }
    Ok(s)
}

fn cmd_plan(a: &PlanArgs) -> CliResult<()> {
    let mut s = load_scenario(&a.scenario)?;
    let params = s.params.with_overrides(&a.overrides).map_err(Failure::from_lib)?;
    s = s.with_params(params).map_err(Failure::from_lib)?;
    if s.surfaces.is_empty() {
        return Err(Failure::input(anyhow!("no inspectable surface in {}", a.scenario.display())));
    }
    let plan = sim::plan_global(&s).map_err(Failure::from_lib)?;
    std::fs::create_dir_all(&a.out).map_err(Failure::runtime)?;
    let json = sim::plan_json(&plan).map_err(Failure::from_lib)?;
    atomic_write(&a.out.join("plan.json"), json.as_bytes()).map_err(Failure::runtime)?;
    if !a.no_svg {
        let svg = sim::svg_figure(&s, &plan, None, None);
        atomic_write(&a.out.join("plan.svg"), svg.as_bytes()).map_err(Failure::runtime)?;
    }
    println!(
        "planned {} viewpoints over {} segments; tour length {:.2} m",
        plan.route.order.len(),
        plan.segments.len(),
        plan.route.diagnostics.last().map_or(0.0, |d| d.length_m)
    );
    Ok(())
}

fn run_one(m: &RunManifest, toggles: OutputToggles) -> CliResult<sim::CoverageReport> {
    let s = prepare(m)?;
    let outcome = sim::run_mission(&s).map_err(Failure::from_lib)?;
    if let Some(out) = &m.out {
        sim::write_outputs(&s, &outcome, out, toggles).map_err(Failure::runtime)?;
    }
    Ok(outcome.report)
}

fn summary(r: &sim::CoverageReport) -> String {
    format!(
        "coverage {:.4} ({}/{} cells), path {:.1} m, time {:.1} s, collisions {}, visited {}, adapted {}, abandoned {}",
        r.coverage_rate,
        r.scanned_cells,
        r.inspectable_cells,
        r.path_length_m,
        r.mission_time_s,
        r.collisions,
        r.visited,
        r.adapted,
        r.abandoned.len()
    )
}

fn cmd_run(a: &RunArgs) -> CliResult<()> {
    let mut m = RunManifest::from_flags(a.scenario.clone(), &a.flags);
    m.out = Some(a.out.clone());
    let toggles = if a.svg || a.ply || a.csv {
        OutputToggles {
            svg: a.svg,
            ply: a.ply,
            csv: a.csv,
        }
    } else {
        OutputToggles::default()
    };
    let report = run_one(&m, toggles)?;
    println!("{}", summary(&report));
    if report.collisions > 0 {
        return Err(Failure::runtime(anyhow!("{} collision(s) during the mission", report.collisions)));
    }
    Ok(())
}

#[derive(Debug, Serialize, PartialEq)]
struct BatchRow {
    scenario: String,
    label: String,
    seed: Option<u64>,
    view_adaptation: bool,
    dynamic_obstacles: bool,
    exit_code: u8,
    coverage_rate: Option<f64>,
    path_length_m: Option<f64>,
    mission_time_s: Option<f64>,
    collisions: Option<usize>,
    adapted: Option<usize>,
    error: String,
}

impl BatchRow {
    fn key(&self) -> (&str, &str, Option<u64>, bool, bool) {
        (&self.scenario, &self.label, self.seed, self.view_adaptation, self.dynamic_obstacles)
    }
}

fn read_manifests(path: &Path) -> CliResult<Vec<RunManifest>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read manifest {}", path.display()))
        .map_err(Failure::input)?;
    let mut list: Vec<RunManifest> = serde_json::from_str(&text)
        .with_context(|| format!("invalid manifest {}", path.display()))
        .map_err(Failure::input)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for m in &mut list {
        if m.scenario.is_relative() {
            m.scenario = base.join(&m.scenario);
        }
        if let Some(o) = m.out.as_mut().filter(|o| o.is_relative()) {
            *o = base.join(&*o);
        }
    }
    Ok(list)
}

fn cmd_batch(a: &BatchArgs) -> CliResult<()> {
    let mut manifests = Vec::new();
    for p in &a.manifest {
        manifests.extend(read_manifests(p)?);
    }
    manifests.extend(a.scenario.iter().map(|s| RunManifest::from_flags(s.clone(), &a.flags)));
    if manifests.is_empty() {
        return Err(Failure::input(anyhow!("batch needs at least one --manifest or --scenario")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(Failure::runtime)?;
    let mut rows: Vec<BatchRow> = pool.install(|| {
        manifests
            .par_iter()
            .map(|m| {
                let res = run_one(m, OutputToggles::default());
                let mut row = BatchRow {
                    scenario: m.scenario.display().to_string(),
                    label: m.label.clone(),
                    seed: m.seed,
                    view_adaptation: m.view_adaptation,
                    dynamic_obstacles: m.dynamic_obstacles,
                    exit_code: 0,
                    coverage_rate: None,
                    path_length_m: None,
                    mission_time_s: None,
                    collisions: None,
                    adapted: None,
                    error: String::new(),
                };
                match res {
                    Ok(r) => {
                        row.seed = Some(r.seed);
                        row.exit_code = if r.collisions > 0 { EXIT_RUNTIME } else { 0 };
                        row.coverage_rate = Some(r.coverage_rate);
                        row.path_length_m = Some(r.path_length_m);
                        row.mission_time_s = Some(r.mission_time_s);
                        row.collisions = Some(r.collisions);
                        row.adapted = Some(r.adapted);
                    }
                    Err(f) => {
                        row.exit_code = f.code;
                        row.error = format!("{:#}", f.error);
                    }
                }
                row
            })
            .collect()
    });
    rows.sort_by(|x, y| x.key().partial_cmp(&y.key()).expect("keys are totally ordered"));
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(Failure::runtime)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::runtime(anyhow!("{e}")))?;
    std::fs::create_dir_all(&a.out).map_err(Failure::runtime)?;
    atomic_write(&a.out.join("batch.csv"), &bytes).map_err(Failure::runtime)?;
    let worst = rows.iter().map(|r| r.exit_code).max().unwrap_or(0);
    println!("{} run(s), worst exit code {}", rows.len(), worst);
    if worst != 0 {
        return Err(Failure {
            code: worst,
            error: anyhow!("{} of {} run(s) failed", rows.iter().filter(|r| r.exit_code != 0).count(), rows.len()),
        });
    }
    Ok(())
}

fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let names: Vec<&str> = match &a.name {
        Some(n) => vec![n.as_str()],
        None => scenarios::NAMES.to_vec(),
    };
    std::fs::create_dir_all(&a.out).map_err(Failure::runtime)?;
    for name in names {
        let s = scenarios::by_name(name)
            .ok_or_else(|| Failure::input(anyhow!("unknown scenario `{name}`; known: {}", scenarios::NAMES.join(", "))))?
            .map_err(Failure::from_lib)?;
        let path = a.out.join(format!("{name}.json"));
        s.save(&path).map_err(Failure::runtime)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("COVERPLAN_LOG", "warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Run(a) => cmd_run(a),
        Command::Batch(a) => cmd_batch(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
