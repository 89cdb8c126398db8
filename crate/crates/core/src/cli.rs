//! Command-line front end: `run`, `compare`, `field-dump` and `replay`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::coordination::{read_slp_log, replay_inboxes, write_slp_log, Inboxes, PlannerKind};
use crate::error::{Error, Result};
use crate::field::{universal_potential, World};
use crate::plot::{compare_paths_svg, run_figures};
use crate::scenario::{load_scenario, ScenarioConfig, VehicleState};
use crate::sim::{run_scenario, write_report_json, write_trace_csv, RunFailure, RunMetrics, RunOutput, RunReport, Simulation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ABORT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

fn override_help() -> String {
    let mut s = String::from("Override keys (--set KEY=VALUE, shown for the built-in scenario):\n");
    for k in ScenarioConfig::default_merge().override_keys() {
        s.push_str("  ");
        s.push_str(&k);
        s.push('\n');
    }
    s
}

#[derive(Debug, Parser)]
#[command(name = "pfiso", version, about = "Potential-field merging simulator", after_help = override_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and write traces, metrics, the SLP log and figures.
    #[command(after_help = override_help())]
    Run(RunArgs),
    /// Run the same scenario under several planners.
    #[command(after_help = override_help())]
    Compare(CompareArgs),
    /// Write the potential field each vehicle sees at a snapshot time.
    #[command(name = "field-dump", after_help = override_help())]
    FieldDump(FieldDumpArgs),
    /// Rebuild per-tick inboxes from an SLP log.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Scenario JSON; the built-in merge scenario when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Bus RNG seed, overrides `sim.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Switch every vehicle to this planner.
    #[arg(long)]
    pub planner: Option<PlannerKind>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated planner list.
    #[arg(long, value_delimiter = ',', default_value = "PF_CS,PF_SP,PF_ISO")]
    pub planners: Vec<PlannerKind>,
}

#[derive(Debug, Clone, Args)]
pub struct FieldDumpArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Snapshot time in seconds.
    #[arg(long, default_value_t = 0.0)]
    pub t: f64,
    /// Grid cell size in meters.
    #[arg(long, default_value_t = 0.5)]
    pub resolution: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// NDJSON SLP log written by `run`.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Re-simulate this scenario and check the replayed inboxes against it.
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

/// Why a command failed; decides the exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] Error),
    #[error(transparent)]
    Abort(#[from] RunFailure),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(Error::Io { .. } | Error::Schema { .. } | Error::Validation { .. } | Error::Usage(_) | Error::Range(_)) => EXIT_USAGE,
            CliError::Config(_) | CliError::Abort(_) => EXIT_ABORT,
        }
    }

    /// One-line JSON description for stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let (err, tick) = match self {
            CliError::Config(e) => (e, None),
            CliError::Abort(f) => (&f.error, Some(f.tick)),
        };
        let mut v = json!({
            "error": err.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        match err {
            Error::Io { path, .. } | Error::Schema { path, .. } => {
                v["path"] = json!(path.display().to_string());
            }
            Error::Validation { field, .. } => {
                v["field"] = json!(field);
            }
            _ => {}
        }
        if let Some(t) = tick {
            v["tick"] = json!(t);
        }
        v
    }
}

impl ScenarioArgs {
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_scenario(p)?,
            None => ScenarioConfig::default_merge(),
        };
        for s in &self.set {
            cfg = cfg.apply_override(s)?;
        }
        if let Some(seed) = self.seed {
            cfg.sim.seed = seed;
        }
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value).expect("value serializes");
    write_text(path, &(body + "\n"))
}

/// Files written for one run, relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub traces: Vec<PathBuf>,
    pub metrics: PathBuf,
    pub slp_log: PathBuf,
    pub figures: Vec<PathBuf>,
}

fn write_run(out: &Path, prefix: &Path, cfg: &ScenarioConfig, run: &RunOutput, figures: bool) -> Result<RunArtifacts> {
    let dir = out.join(prefix);
    create_dir(&dir)?;
    let mut art = RunArtifacts::default();
    for trace in &run.traces {
        let name = format!("trace_{}.csv", trace.id);
        write_trace_csv(&dir.join(&name), trace)?;
        art.traces.push(prefix.join(name));
    }
    write_report_json(&dir.join("metrics.json"), &run.report)?;
    art.metrics = prefix.join("metrics.json");
    write_slp_log(&dir.join("slp_log.ndjson"), &run.slp_log)?;
    art.slp_log = prefix.join("slp_log.ndjson");
    if figures {
        for (name, body) in run_figures(&cfg.road, &run.traces) {
            write_text(&dir.join(name), &body)?;
            art.figures.push(prefix.join(name));
        }
    }
    Ok(art)
}

/// Simulates the configured scenario and writes its artifacts into `out`.
///
/// An aborted run still writes what was recorded before the failure.
pub fn cmd_run(cfg: &ScenarioConfig, out: &Path) -> std::result::Result<(RunReport, RunArtifacts), CliError> {
    create_dir(out)?;
    match run_scenario(cfg) {
        Ok(run) => {
            let art = write_run(out, Path::new(""), cfg, &run, true)?;
            Ok((run.report, art))
        }
        Err(failure) => {
            if !failure.partial.traces.is_empty() {
                write_run(out, Path::new(""), cfg, &failure.partial, true)?;
            }
            Err(failure.into())
        }
    }
}

/// Per-planner section of a [`CompareReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerRun {
    pub planner: PlannerKind,
    pub report: RunReport,
    pub artifacts: RunArtifacts,
}

/// Which planners achieved the lowest value of one metric for one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub vehicle: u32,
    pub metric: String,
    pub winners: Vec<PlannerKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub seed: u64,
    pub runs: Vec<PlannerRun>,
    pub verdicts: Vec<Verdict>,
    pub combined_paths_svg: PathBuf,
}

pub const METRIC_NAMES: [&str; 6] = [
    "max_abs_beta_rad",
    "max_abs_yaw_rate_radps",
    "max_abs_psi_rad",
    "min_speed_mps",
    "path_length_m",
    "lateral_oscillation_rms_m",
];

pub fn metric_value(m: &RunMetrics, name: &str) -> Option<f64> {
    Some(match name {
        "max_abs_beta_rad" => m.max_abs_beta_rad,
        "max_abs_yaw_rate_radps" => m.max_abs_yaw_rate_radps,
        "max_abs_psi_rad" => m.max_abs_psi_rad,
        "min_speed_mps" => m.min_speed_mps,
        "path_length_m" => m.path_length_m,
        "lateral_oscillation_rms_m" => m.lateral_oscillation_rms_m,
        _ => return None,
    })
}

fn verdicts(runs: &[PlannerRun]) -> Vec<Verdict> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for vehicle in first.report.metrics.iter().map(|m| m.id) {
        for name in METRIC_NAMES {
            let values: Vec<(PlannerKind, f64)> = runs
                .iter()
                .filter_map(|r| {
                    let m = r.report.metrics.iter().find(|m| m.id == vehicle)?;
                    Some((r.planner, metric_value(m, name)?))
                })
                .collect();
            let best = values.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
            out.push(Verdict {
                vehicle,
                metric: name.to_string(),
                winners: values.iter().filter(|(_, v)| *v == best).map(|(p, _)| *p).collect(),
            });
        }
    }
    out
}

impl CompareReport {
    /// Checks the report covers exactly `requested` and its verdicts agree
    /// with its metrics.
    pub fn validate(&self, requested: &[PlannerKind]) -> Result<()> {
        let mut have: Vec<PlannerKind> = self.runs.iter().map(|r| r.planner).collect();
        let mut want = requested.to_vec();
        have.sort();
        want.sort();
        want.dedup();
        if have != want {
            return Err(Error::validation("runs", format!("planners {have:?} do not match requested {want:?}")));
        }
        if verdicts(&self.runs) != self.verdicts {
            return Err(Error::validation("verdicts", "verdicts disagree with the per-planner metrics"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

/// Runs `cfg` once per planner and writes per-planner artifacts, the
/// report and a combined path figure into `out`.
pub fn cmd_compare(cfg: &ScenarioConfig, planners: &[PlannerKind], out: &Path) -> std::result::Result<CompareReport, CliError> {
    let mut unique = Vec::new();
    for p in planners {
        if !unique.contains(p) {
            unique.push(*p);
        }
    }
    if unique.len() < 2 {
        return Err(Error::Usage("compare needs at least two distinct planners".into()).into());
    }
    create_dir(out)?;
    let mut runs = Vec::new();
    let mut paths = Vec::new();
    for &planner in &unique {
        let run_cfg = cfg.with_planner(planner);
        let prefix = PathBuf::from(planner.as_str());
        let run = match run_scenario(&run_cfg) {
            Ok(run) => run,
            Err(failure) => {
                if !failure.partial.traces.is_empty() {
                    write_run(out, &prefix, &run_cfg, &failure.partial, false)?;
                }
                return Err(failure.into());
            }
        };
        let artifacts = write_run(out, &prefix, &run_cfg, &run, false)?;
        paths.push((planner.as_str().to_string(), run.traces.clone()));
        runs.push(PlannerRun {
            planner,
            report: run.report,
            artifacts,
        });
    }
    let svg = PathBuf::from("paths_compare.svg");
    write_text(&out.join(&svg), &compare_paths_svg(&cfg.road, &paths))?;
    let report = CompareReport {
        seed: cfg.sim.seed,
        verdicts: verdicts(&runs),
        runs,
        combined_paths_svg: svg,
    };
    write_json(&out.join("compare_report.json"), &report)?;
    Ok(report)
}

/// Cell-centered sample coordinates covering `[lo, hi]`.
pub fn grid_axis(lo: f64, hi: f64, resolution: f64) -> Vec<f64> {
    let n = ((hi - lo) / resolution - 1e-9).ceil().max(1.0) as usize;
    (0..n).map(|i| lo + (i as f64 + 0.5) * resolution).collect()
}

/// Universal-potential grid seen by every vehicle at `states`, as CSV text
/// keyed by vehicle id.
pub fn field_grids(cfg: &ScenarioConfig, states: &[VehicleState], resolution: f64) -> Result<BTreeMap<u32, String>> {
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(Error::Range(format!("resolution must be positive, got {resolution}")));
    }
    let xs = grid_axis(0.0, cfg.finish_line(), resolution);
    let ys = grid_axis(cfg.road.y_bottom, cfg.road.y_upper, resolution);
    let mut out = BTreeMap::new();
    for (i, me) in states.iter().enumerate() {
        let others: Vec<VehicleState> = states.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, s)| *s).collect();
        let world = World {
            road: &cfg.road,
            ego: me,
            others: &others,
        };
        let mut csv = String::from("x,y,U\n");
        for &x in &xs {
            for &y in &ys {
                let u = universal_potential(x, y, &world, &cfg.pf);
                csv.push_str(&format!("{x},{y},{u}\n"));
            }
        }
        out.insert(me.id, csv);
    }
    Ok(out)
}

/// Simulates up to `t` and writes `field_<id>.csv` per vehicle.
pub fn cmd_field_dump(cfg: &ScenarioConfig, t: f64, resolution: f64, out: &Path) -> std::result::Result<Vec<PathBuf>, CliError> {
    if !(t.is_finite() && t >= 0.0) || t > cfg.sim.duration + 1e-9 {
        return Err(Error::Range(format!("snapshot time {t} s outside the run duration [0, {}] s", cfg.sim.duration)).into());
    }
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(Error::Range(format!("resolution must be positive, got {resolution}")).into());
    }
    let ticks = (t / cfg.sim.dt).round() as u64;
    let mut sim = Simulation::new(cfg)?;
    while sim.tick() < ticks {
        if let Err(error) = sim.step() {
            let tick = sim.tick();
            return Err(RunFailure {
                tick,
                error,
                partial: Box::new(sim.finish()),
            }
            .into());
        }
    }
    create_dir(out)?;
    let mut written = Vec::new();
    for (id, csv) in field_grids(sim.config(), sim.states(), resolution)? {
        let path = out.join(format!("field_{id}.csv"));
        write_text(&path, &csv)?;
        written.push(path);
    }
    Ok(written)
}

/// Drops empty inbox entries so live and replayed inboxes compare equal.
pub fn nonempty_inboxes(map: &BTreeMap<u64, Inboxes>) -> BTreeMap<u64, Inboxes> {
    map.iter()
        .filter_map(|(&tick, inboxes)| {
            let kept: Inboxes = inboxes.iter().filter(|(_, m)| !m.is_empty()).map(|(&id, m)| (id, m.clone())).collect();
            (!kept.is_empty()).then_some((tick, kept))
        })
        .collect()
}

/// Outcome of `replay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub messages: usize,
    pub deliveries: usize,
    pub ticks_with_mail: usize,
    /// Set when a scenario was supplied for checking.
    pub matches_live_run: Option<bool>,
}

/// Rebuilds inboxes from `log` into `inboxes.json`; with `check` also
/// re-simulates and compares over the ticks the live run consumed.
pub fn cmd_replay(log: &Path, out: &Path, check: Option<&ScenarioConfig>) -> std::result::Result<ReplaySummary, CliError> {
    let entries = read_slp_log(log)?;
    let replayed = replay_inboxes(&entries);
    create_dir(out)?;
    write_json(&out.join("inboxes.json"), &replayed)?;
    let matches_live_run = match check {
        None => None,
        Some(cfg) => {
            let run = run_scenario(cfg)?;
            let ticks = run.report.summary.ticks;
            let live = nonempty_inboxes(&run.inboxes);
            let mut replay = nonempty_inboxes(&replayed);
            replay.retain(|&t, _| t < ticks);
            Some(live == replay)
        }
    };
    Ok(ReplaySummary {
        messages: entries.len(),
        deliveries: entries.iter().map(|e| e.delivered_to.len()).sum(),
        ticks_with_mail: nonempty_inboxes(&replayed).len(),
        matches_live_run,
    })
}

fn execute(cli: Cli, stdout: &mut dyn std::io::Write) -> std::result::Result<(), CliError> {
    let line = |v: serde_json::Value| serde_json::to_string(&v).expect("json");
    let text = match cli.command {
        Command::Run(args) => {
            let mut cfg = args.scenario.resolve()?;
            if let Some(p) = args.planner {
                cfg = cfg.with_planner(p);
            }
            let (report, art) = cmd_run(&cfg, &args.out)?;
            line(json!({ "summary": report.summary, "artifacts": art }))
        }
        Command::Compare(args) => {
            let cfg = args.scenario.resolve()?;
            let report = cmd_compare(&cfg, &args.planners, &args.out)?;
            let winners: Vec<_> = report.verdicts.iter().map(|v| json!({"vehicle": v.vehicle, "metric": v.metric, "winners": v.winners})).collect();
            line(json!({ "report": args.out.join("compare_report.json"), "verdicts": winners }))
        }
        Command::FieldDump(args) => {
            let cfg = args.scenario.resolve()?;
            let files = cmd_field_dump(&cfg, args.t, args.resolution, &args.out)?;
            line(json!({ "files": files }))
        }
        Command::Replay(args) => {
            let check = if args.scenario.config.is_some() || !args.scenario.set.is_empty() || args.scenario.seed.is_some() {
                Some(args.scenario.resolve()?)
            } else {
                None
            };
            let summary = cmd_replay(&args.log, &args.out, check.as_ref())?;
            if summary.matches_live_run == Some(false) {
                return Err(Error::Validation {
                    field: "log".into(),
                    message: "replayed inboxes differ from the re-simulated run".into(),
                }
                .into());
            }
            line(serde_json::to_value(summary).expect("json"))
        }
    };
    let _ = writeln!(stdout, "{text}");
    Ok(())
}

/// Parses `args` and executes the command; returns the process exit code.
/// Errors go to `stderr` as one JSON line.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let v = json!({ "error": "usage", "message": e.to_string().trim_end(), "exit_code": EXIT_USAGE });
            let _ = writeln!(stderr, "{v}");
            return EXIT_USAGE;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.to_json());
            e.exit_code()
        }
    }
}
