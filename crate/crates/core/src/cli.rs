//! Command-line entry point. Every verb reads its inputs without modifying
//! them and writes only under `--out`.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::demo::{demo_manifests, demo_plan, DEMO_ROOT_CREATED_AT, DEMO_ROOT_ID};
use crate::exec::Execution;
use crate::gate::{gate_reports, gate_runset, GateDecision, GateReport, ReportScope};
use crate::manifest::{DirStore, ReleaseRoot, ReplayClass, TaskManifest};
use crate::replay::{replay_run, replay_runs, ReplayBundle, ReplayResult};
use crate::report::{
    claim_matrix, claim_table, decision_study, decision_table, gate_table, invalid_action_table, invalid_action_text,
    latency_decomposition, latency_table, verifier_controls, AdmittedSet, Diagnostics, CLAIM_KEYS,
};
use crate::runner::{load_runset, run_plan, write_runset, RunPlan, RunSet, RUNSET_INDEX};
use crate::schema::RunValidator;
use crate::simenv::SettingLabel;
use crate::study::{run_study, study_manifests, StudyGrid, STUDY_ROOT_CREATED_AT, STUDY_ROOT_ID};

pub const GATE_REPORT_FILE: &str = "gate_report.json";
pub const DECISIONS_FILE: &str = "decisions.json";
pub const STUDY_REPORT_FILE: &str = "study_report.json";
pub const CLAIM_MATRIX_FILE: &str = "claim_matrix.json";
pub const DEMO_PLAN_FILE: &str = "demo_plan.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{message}")]
    Failed { code: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Failed { .. } => 1,
        }
    }

    pub fn code(&self) -> &str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Validation(_) => "validation_failed",
            CliError::Failed { code, .. } => code,
        }
    }

    /// Machine-readable error line written to stderr.
    pub fn record(&self) -> String {
        json!({ "error": self.code(), "message": self.to_string(), "exit_code": self.exit_code() }).to_string()
    }

    fn failed(code: &str, message: impl ToString) -> Self {
        CliError::Failed {
            code: code.to_string(),
            message: message.to_string(),
        }
    }
}

macro_rules! coded {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::failed(e.code(), e)
            }
        }
    )*};
}

coded!(
    crate::runner::RunError,
    crate::manifest::ManifestError,
    crate::gate::GateError,
    crate::replay::ReplayError,
    crate::report::ReportError,
    crate::study::StudyError
);

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::failed("io_error", e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::failed("parse_error", e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "gatebench", version, about = "Evidence-gated agent benchmark harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Publish a release root (manifests plus registry) and the demo plan.
    InitRoot(InitRootArgs),
    /// Execute a run plan and write event logs plus a runset index.
    Run(RunArgs),
    /// Gate a runset and write scoped gate reports and per-run decisions.
    Gate(GateArgs),
    /// Replay a bundle, or every run of one replay class in a runset.
    Replay(ReplayArgs),
    /// Build latency, invalid-action, decision-study and claim tables.
    Report(ReportArgs),
    /// Run the controller decision study grid.
    Study(StudyArgs),
    /// run, gate and report in one pass.
    All(RunArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Host threads; overrides the plan value.
    #[arg(long)]
    pub concurrency: Option<u32>,
    /// Reject unknown payload keys when validating logs.
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub strict_schema: bool,
}

#[derive(Debug, Args)]
pub struct InitRootArgs {
    #[command(flatten)]
    pub common: Common,
    /// Publish the decision-study root for this grid instead of the demo root.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub release_root: Option<PathBuf>,
    /// Operating setting applied to every plan entry.
    #[arg(long)]
    pub setting: Option<String>,
}

#[derive(Debug, Args)]
pub struct GateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub runset: Option<PathBuf>,
    #[arg(long)]
    pub release_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, conflicts_with = "runset")]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub runset: Option<PathBuf>,
    #[arg(long)]
    pub release_root: Option<PathBuf>,
    /// R0, R1 or R2; all classes when omitted.
    #[arg(long)]
    pub class: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub runset: Option<PathBuf>,
    /// Gate output directory or its gate_report.json.
    #[arg(long)]
    pub gate: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "default")]
    pub grid: String,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
}

/// Both scoped gate reports as written to disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct GateReports {
    pub canonical: GateReport,
    pub decision_study: GateReport,
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    v.as_ref()
        .ok_or_else(|| CliError::Usage(format!("missing required flag --{flag}")))
}

fn exec_for(flag: Option<u32>, plan: Option<u32>) -> Execution {
    Execution::with_threads(flag.or(plan).unwrap_or(1) as usize)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::failed("io_error", format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::failed("parse_error", format!("{}: {e}", path.display())))
}

fn out_dir(common: &Common) -> Result<&Path, CliError> {
    let dir = required(&common.out, "out")?;
    fs::create_dir_all(dir)?;
    Ok(dir)
}

/// Parse `argv` (including the program name) and dispatch.
pub fn run_cli<I, T>(argv: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            CliError::failed("display", e.to_string())
        }
        _ => CliError::Usage(e.to_string().trim().to_string()),
    })?;
    dispatch(cli.command)
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::InitRoot(a) => init_root(&a),
        Command::Run(a) => {
            let (dir, runset) = run_verb(&a)?;
            check_traces(&runset, dir)
        }
        Command::Gate(a) => {
            let runset = load_checked(required(&a.runset, "runset")?, a.common.strict_schema)?;
            let root = load_root(required(&a.release_root, "release-root")?)?;
            gate_verb(
                &runset,
                &root,
                exec_for(a.common.concurrency, None),
                out_dir(&a.common)?,
            )?;
            Ok(())
        }
        Command::Replay(a) => replay_verb(&a),
        Command::Report(a) => {
            let runset = load_checked(required(&a.runset, "runset")?, a.common.strict_schema)?;
            let gate = required(&a.gate, "gate")?;
            let (reports, decisions) = load_gate(gate)?;
            report_verb(&runset, &reports, &decisions, out_dir(&a.common)?)
        }
        Command::Study(a) => study_verb(&a),
        Command::All(a) => {
            let (dir, runset) = run_verb(&a)?;
            let root = load_root(required(&a.release_root, "release-root")?)?;
            let gate_dir = dir.join("gate");
            fs::create_dir_all(&gate_dir)?;
            let (reports, decisions) = gate_verb(&runset, &root, exec_for(a.common.concurrency, None), &gate_dir)?;
            let report_dir = dir.join("report");
            fs::create_dir_all(&report_dir)?;
            report_verb(&runset, &reports, &decisions, &report_dir)?;
            check_traces(&runset, dir)
        }
    }
}

fn init_root(a: &InitRootArgs) -> Result<(), CliError> {
    let (mut root, manifests): (ReleaseRoot, Vec<TaskManifest>) = match &a.grid {
        None => (ReleaseRoot::new(DEMO_ROOT_ID, DEMO_ROOT_CREATED_AT), demo_manifests()),
        Some(name) => {
            StudyGrid::by_name(name).map_err(|e| CliError::Usage(e.to_string()))?;
            (
                ReleaseRoot::new(STUDY_ROOT_ID, STUDY_ROOT_CREATED_AT),
                study_manifests(),
            )
        }
    };
    let dir = out_dir(&a.common)?;
    for m in &manifests {
        root.register(m)?;
    }
    DirStore::new(dir).publish(&root, &manifests)?;
    if a.grid.is_none() {
        write_json(&dir.join(DEMO_PLAN_FILE), &demo_plan())?;
    }
    Ok(())
}

fn load_root(dir: &Path) -> Result<ReleaseRoot, CliError> {
    Ok(DirStore::new(dir).load_root()?)
}

fn run_verb(a: &RunArgs) -> Result<(&Path, RunSet), CliError> {
    let plan_path = required(&a.plan, "plan")?;
    let root_dir = required(&a.release_root, "release-root")?;
    let dir = out_dir(&a.common)?;
    let mut plan: RunPlan = read_json(plan_path)?;
    if let Some(label) = &a.setting {
        if SettingLabel::parse(label).is_none() && !plan.settings.contains_key(label) {
            return Err(CliError::Usage(format!("unknown setting {label}")));
        }
        for e in &mut plan.entries {
            e.setting_label = label.clone();
        }
    }
    let exec = exec_for(a.common.concurrency, Some(plan.concurrency));
    let store = DirStore::new(root_dir);
    let root = store.load_root()?;
    let runset = run_plan(&plan, &root, &store, exec)?;
    write_runset(dir, &runset)?;
    Ok((dir, runset))
}

/// Resolved runs must carry complete, valid traces.
fn check_traces(runset: &RunSet, dir: &Path) -> Result<(), CliError> {
    let bad: Vec<&str> = runset
        .records()
        .filter(|r| r.event_log_ref.is_some() && !r.trace_complete)
        .map(|r| r.run_id.as_str())
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "{} run(s) failed trace validation under {}: {}",
            bad.len(),
            dir.display(),
            bad.join(",")
        )))
    }
}

/// Load a runset and revalidate every log line against the schema, marking
/// runs whose logs fail as incomplete.
pub fn load_checked(path: &Path, strict: bool) -> Result<RunSet, CliError> {
    let mut runset = load_runset(path)?;
    let index = if path.is_dir() {
        path.join(RUNSET_INDEX)
    } else {
        path.to_path_buf()
    };
    let base = index.parent().unwrap_or(Path::new("."));
    for run in &mut runset.runs {
        let Some(log) = &run.record.event_log_ref else { continue };
        let reader = BufReader::new(fs::File::open(base.join(log))?);
        let mut v = RunValidator::new(strict);
        let mut ok = true;
        for line in reader.lines().skip(1) {
            let line = line?;
            if !line.trim().is_empty() {
                ok &= v.validate_line(&line).is_ok();
            }
        }
        run.record.trace_complete &= ok && v.finish().is_ok();
    }
    Ok(runset)
}

fn gate_verb(
    runset: &RunSet,
    root: &ReleaseRoot,
    exec: Execution,
    dir: &Path,
) -> Result<(GateReports, Vec<GateDecision>), CliError> {
    let decisions = gate_runset(runset, root, exec);
    let (canonical, decision_study) = gate_reports(runset, &decisions)?;
    let reports = GateReports {
        canonical,
        decision_study,
    };
    write_json(&dir.join(GATE_REPORT_FILE), &reports)?;
    write_json(&dir.join(DECISIONS_FILE), &decisions)?;
    let text = format!(
        "{}\n{}",
        gate_table(&reports.canonical),
        gate_table(&reports.decision_study)
    );
    fs::write(dir.join("gate_report.txt"), text)?;
    Ok((reports, decisions))
}

fn load_gate(path: &Path) -> Result<(GateReports, Vec<GateDecision>), CliError> {
    let file = if path.is_dir() {
        path.join(GATE_REPORT_FILE)
    } else {
        path.to_path_buf()
    };
    let dir = file.parent().unwrap_or(Path::new("."));
    Ok((read_json(&file)?, read_json(&dir.join(DECISIONS_FILE))?))
}

fn report_verb(runset: &RunSet, reports: &GateReports, decisions: &[GateDecision], dir: &Path) -> Result<(), CliError> {
    let (canonical, decision) = gate_reports(runset, decisions)?;
    if canonical != reports.canonical || decision != reports.decision_study {
        return Err(CliError::failed(
            "gate_report_mismatch",
            "gate report does not match the decisions for this runset",
        ));
    }
    let canonical_set = AdmittedSet::select(&runset.runs, decisions, Some(ReportScope::Canonical.planned_strata()));
    let latency = latency_decomposition(&canonical_set);
    write_json(&dir.join("latency.json"), &latency)?;
    fs::write(dir.join("latency.txt"), latency_table(&latency))?;
    let actions = invalid_action_table(&canonical_set);
    write_json(&dir.join("invalid_actions.json"), &actions)?;
    fs::write(dir.join("invalid_actions.txt"), invalid_action_text(&actions))?;
    let study = decision_study(&runset.runs, decisions)?;
    write_json(&dir.join(STUDY_REPORT_FILE), &study)?;
    fs::write(dir.join("study_report.txt"), decision_table(&study))?;
    let controls = verifier_controls(&canonical_set);
    let diagnostics = Diagnostics {
        verifier_controls: (!controls.is_empty()).then_some(controls),
    };
    let study_ref = (study.admitted + study.blocked > 0).then_some(&study);
    let matrix = claim_matrix(&CLAIM_KEYS, &reports.canonical, study_ref, &diagnostics)?;
    write_json(&dir.join(CLAIM_MATRIX_FILE), &matrix)?;
    fs::write(dir.join("claim_matrix.txt"), claim_table(&matrix))?;
    Ok(())
}

fn parse_class(s: &str) -> Result<ReplayClass, CliError> {
    serde_json::from_value(json!(s)).map_err(|_| CliError::Usage(format!("unknown replay class {s}")))
}

fn replay_verb(a: &ReplayArgs) -> Result<(), CliError> {
    let class = a.class.as_deref().map(parse_class).transpose()?;
    if let Some(bundle) = &a.bundle {
        let dir = out_dir(&a.common)?;
        let bundle: ReplayBundle = read_json(bundle)?;
        if class.is_some_and(|c| c != bundle.replay_class) {
            return Err(CliError::Usage("bundle class differs from --class".into()));
        }
        let result = replay_run(&bundle)?;
        write_json(&dir.join(format!("replay_{}.json", bundle.run_id)), &result)?;
        return Ok(());
    }
    let runset_path = a
        .runset
        .as_ref()
        .ok_or_else(|| CliError::Usage("replay needs --bundle or --runset".into()))?;
    let root_dir = required(&a.release_root, "release-root")?;
    let dir = out_dir(&a.common)?;
    let runset = load_checked(runset_path, a.common.strict_schema)?;
    let store = DirStore::new(root_dir);
    let exec = exec_for(a.common.concurrency, None);
    let mut results: Vec<ReplayResult> = Vec::new();
    for r in replay_runs(&runset.runs, &store, class, exec) {
        results.push(r?);
    }
    write_json(&dir.join("replay_results.json"), &results)?;
    Ok(())
}

fn study_verb(a: &StudyArgs) -> Result<(), CliError> {
    let grid = StudyGrid::by_name(&a.grid).map_err(|e| CliError::Usage(e.to_string()))?;
    let dir = out_dir(&a.common)?;
    let out = run_study(&grid, a.seed_base, exec_for(a.common.concurrency, None))?;
    let (_, decision) = gate_reports(&out.runset, &out.decisions)?;
    write_json(&dir.join("grid.json"), &grid)?;
    write_json(&dir.join(GATE_REPORT_FILE), &decision)?;
    write_json(&dir.join(DECISIONS_FILE), &out.decisions)?;
    write_json(&dir.join(STUDY_REPORT_FILE), &out.report)?;
    fs::write(dir.join("study_report.txt"), decision_table(&out.report))?;
    Ok(())
}
