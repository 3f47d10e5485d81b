//! Command-line front end: argument parsing, config loading, report output.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 invalid config
//! or calibration, 4 oracle mismatch or unequal transition.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::domain::{write_calibration, ClusterState, NodeId, Plan, RunConfig, TaskSpec, WorkerId};
use crate::planner::{
    brute_force_solve, micro_batch_split, micro_batches_for, solve, Perturbation, PlannerError, RewardInputs,
};
use crate::simulator::{
    compare_policies, generate_trace, run_simulation, summarize, ComparisonReport, FailureTrace, Policy, PolicyResult,
    RepairModel, SeverityMix, SimOptions, SimSetup, SimSummary, TraceParams, TracePreset,
};
use crate::transition::{run_sweep, sweep_grid, verify_case, FailurePoint, Verdict, VerifyCase};
use crate::workload::{build_tasks, case_config, load_calibration};

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Usage(String),
    Config(String),
    Mismatch(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Mismatch(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Usage(m) | CliError::Config(m) | CliError::Mismatch(m) => m,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes to stdout. A closed pipe (`| head`) ends output quietly.
fn emit(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

macro_rules! say {
    ($($arg:tt)*) => { emit(&format!($($arg)*))? };
}

macro_rules! sayln {
    ($($arg:tt)*) => { emit(&format!("{}\n", format_args!($($arg)*)))? };
}

#[derive(Debug, Parser)]
#[command(name = "unicron", version, about = "Self-healing workload manager for multi-task LLM training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the optimal worker assignment, optionally after perturbations.
    Plan(PlanArgs),
    /// Generate a failure trace.
    TraceGen(TraceGenArgs),
    /// Run one policy over a trace and write the WAF series and summary.
    Simulate(SimulateArgs),
    /// Run several policies over the same traces and report WAF ratios.
    Compare(CompareArgs),
    /// Check that resuming a failed iteration reproduces the failure-free gradient.
    VerifyTransition(VerifyArgs),
    /// Validate a calibration CSV, or synthesize one for a workload.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct WorkloadArgs {
    /// Cluster and task configuration (JSON).
    #[arg(long, conflicts_with = "case")]
    pub config: Option<PathBuf>,
    /// Built-in six-task workload (1-5); the default when no config is given.
    #[arg(long)]
    pub case: Option<u32>,
    /// Nodes of the built-in workload's cluster.
    #[arg(long, default_value_t = 16)]
    pub nodes: usize,
    #[arg(long, default_value_t = 8)]
    pub gpus_per_node: usize,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct SeedArgs {
    #[arg(long, env = "UNICRON_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub workload: WorkloadArgs,
    /// Plan for the loss of a node, e.g. `node:n3`. Repeatable.
    #[arg(long = "fault", value_name = "node:ID")]
    pub faults: Vec<String>,
    /// Plan for a fresh node of N workers joining, e.g. `workers:8`. Repeatable.
    #[arg(long = "join", value_name = "workers:N")]
    pub joins: Vec<String>,
    /// Cross-check every plan against exhaustive search when small enough.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct TraceGenArgs {
    #[command(flatten)]
    pub workload: WorkloadArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    /// Start from a built-in trace's rate, horizon, severity mix and repair model.
    #[arg(long)]
    pub preset: Option<TracePreset>,
    /// Failure arrivals per node per second (overrides the preset).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Trace length in seconds (overrides the preset).
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Severity probabilities `sev1,sev2,sev3`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub sev_mix: Option<Vec<f64>>,
    /// Uniform repair delay bounds in seconds.
    #[arg(long, requires = "repair_max")]
    pub repair_min: Option<f64>,
    #[arg(long, requires = "repair_min")]
    pub repair_max: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TraceSource {
    /// Trace file (JSON Lines). Without it a preset trace is generated from `--seed`.
    #[arg(long, conflicts_with = "preset")]
    pub trace: Option<PathBuf>,
    /// Built-in trace: `trace-a` (8 weeks) or `trace-b` (7 days, 20x the failure rate) [default: trace-a]
    #[arg(long)]
    pub preset: Option<TracePreset>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub workload: WorkloadArgs,
    #[command(flatten)]
    pub source: TraceSource,
    #[command(flatten)]
    pub seed: SeedArgs,
    /// unicron, restart_checkpoint, affected_task_only, static_equally, static_weighted or static_sized.
    #[arg(long, default_value = "unicron")]
    pub policy: Policy,
    /// Give the restart baseline spare nodes instead of waiting for repairs.
    #[arg(long)]
    pub hot_spare: bool,
    /// Zero transition, migration and recomputation costs.
    #[arg(long)]
    pub zero_cost: bool,
    /// Sampling interval between events, seconds; 0 samples at events only.
    #[arg(long, default_value_t = 60.0)]
    pub sample_every: f64,
    /// Metrics CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Summary JSON path; defaults to the CSV path with `.summary.json`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub workload: WorkloadArgs,
    #[command(flatten)]
    pub source: TraceSource,
    #[command(flatten)]
    pub seed: SeedArgs,
    /// Preset traces to average over, with seeds `seed..seed+runs`.
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    /// Comma-separated policies; defaults to unicron and every baseline.
    #[arg(long, value_delimiter = ',')]
    pub policies: Vec<Policy>,
    /// Zero transition, migration and recomputation costs.
    #[arg(long)]
    pub zero_cost: bool,
    /// Report JSON path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 4)]
    pub dp: u32,
    #[arg(long, default_value_t = 2)]
    pub pp: u32,
    /// Micro-batches per global batch.
    #[arg(long, default_value_t = 12)]
    pub microbatches: u32,
    #[arg(long, default_value_t = 0)]
    pub fail_rank: u32,
    /// Pipeline stage of the failed worker; defaults to the last stage.
    #[arg(long)]
    pub fail_stage: Option<u32>,
    /// Fail after every rank finished this many micro-batches.
    #[arg(long, conflicts_with = "fail_after_reduced_segments")]
    pub fail_after_mb: Option<u32>,
    /// Fail after this many gradient segments were all-reduced.
    #[arg(long)]
    pub fail_after_reduced_segments: Option<u32>,
    /// Check the whole grid instead of one failure point.
    #[arg(long)]
    pub sweep: bool,
    /// Iteration id feeding the gradient generator.
    #[command(flatten)]
    pub seed: SeedArgs,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub workload: WorkloadArgs,
    /// Calibration CSV to validate against the workload.
    #[arg(long, conflicts_with = "synthesize")]
    pub input: Option<PathBuf>,
    /// Write the analytic model's table for the workload instead.
    #[arg(long, requires = "out")]
    pub synthesize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Plan(a) => cmd_plan(&a),
        Command::TraceGen(a) => cmd_trace_gen(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::VerifyTransition(a) => cmd_verify(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
    }
}

/// Writes next to the target, then renames over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path.file_name().ok_or_else(|| CliError::Usage(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp-{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// A parsed configuration plus the digest of the bytes it came from.
pub struct Workload {
    pub cfg: RunConfig,
    pub digest: String,
    pub tasks: Vec<TaskSpec>,
}

impl WorkloadArgs {
    fn config_only(&self) -> Result<(RunConfig, String, Option<PathBuf>), CliError> {
        match &self.config {
            Some(path) => {
                let raw = fs::read(path).map_err(io_err(path))?;
                let text = String::from_utf8(raw.clone())
                    .map_err(|_| CliError::Config(format!("{}: not UTF-8", path.display())))?;
                let cfg =
                    RunConfig::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                Ok((cfg, RunConfig::digest(&raw), path.parent().map(Path::to_path_buf)))
            }
            None => {
                let case = self.case.unwrap_or(5);
                let cfg = case_config(case, self.nodes, self.gpus_per_node)
                    .ok_or_else(|| CliError::Usage(format!("--case must be 1-5 (got {case})")))?;
                let problems = cfg.problems();
                if !problems.is_empty() {
                    return Err(CliError::Usage(problems.join("; ")));
                }
                let digest = RunConfig::digest(cfg.to_json().as_bytes());
                Ok((cfg, digest, None))
            }
        }
    }

    pub fn load(&self) -> Result<Workload, CliError> {
        let (cfg, digest, base) = self.config_only()?;
        let rows = match &cfg.calibration {
            Some(rel) => {
                let path = base.map_or_else(|| rel.clone(), |b| b.join(rel));
                Some(load_calibration(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?)
            }
            None => None,
        };
        let tasks = build_tasks(&cfg, rows.as_ref()).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Workload { cfg, digest, tasks })
    }
}

/// Gives tasks workers in declaration order, the way a fresh cluster is filled.
fn place(cluster: &mut ClusterState, plan: &Plan) {
    let mut free = cluster.free_workers().into_iter();
    for t in &plan.tasks {
        let ws: std::collections::BTreeSet<WorkerId> = free.by_ref().take(t.x as usize).collect();
        cluster.assign(&t.id, ws);
    }
}

fn with_micro_batches(mut plan: Plan, w: &Workload) -> Plan {
    for (tp, spec) in plan.tasks.iter_mut().zip(&w.tasks) {
        if let Some(layout) = tp.layout {
            let b = micro_batches_for(spec.model_size, &w.cfg.synthetic);
            tp.micro_batches = micro_batch_split(b, layout.dp);
        }
    }
    plan
}

fn parse_perturbation(s: &str, cluster: &ClusterState, fault: bool) -> Result<Perturbation, CliError> {
    let bad = || CliError::Usage(format!("cannot parse {s:?}; expected node:ID or workers:N"));
    let (kind, value) = s.split_once(':').ok_or_else(bad)?;
    match (kind, fault) {
        ("node", true) => {
            let node = NodeId::new(value);
            cluster.node(&node).ok_or_else(|| CliError::Usage(format!("unknown node {value}")))?;
            Ok(Perturbation::NodeFault(node))
        }
        ("workers", false) => Ok(Perturbation::WorkersJoin(value.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

#[derive(Serialize)]
struct PerturbedPlan {
    perturbation: String,
    capacity: u32,
    plan: Plan,
    /// Tasks whose worker count differs from the unperturbed plan.
    changed: Vec<String>,
}

fn check_oracle(inputs: &RewardInputs, plan: &Plan, what: &str) -> Result<(), CliError> {
    match brute_force_solve(inputs) {
        Ok(o) if o.assignment() == plan.assignment() && o.objective == plan.objective => Ok(()),
        Ok(o) => Err(CliError::Mismatch(format!(
            "oracle mismatch for {what}: solver {:?} ({}), oracle {:?} ({})",
            plan.assignment(),
            plan.objective,
            o.assignment(),
            o.objective
        ))),
        Err(e @ PlannerError::TooLarge { .. }) => {
            eprintln!("note: oracle skipped for {what}: {e}");
            Ok(())
        }
        Err(e) => Err(CliError::Usage(e.to_string())),
    }
}

fn cmd_plan(a: &PlanArgs) -> Result<(), CliError> {
    let w = a.workload.load()?;
    let mut cluster = w.cfg.cluster();
    let base = RewardInputs::new(w.tasks.clone(), cluster.healthy_count(), w.cfg.cost_params);
    let plan = solve(&base);
    if a.oracle {
        check_oracle(&base, &plan, "base plan")?;
    }
    place(&mut cluster, &plan);
    let current = base.clone().with_current(&plan.assignment());

    let mut perturbed = Vec::new();
    let keys = a.faults.iter().map(|s| (s, true)).chain(a.joins.iter().map(|s| (s, false)));
    for (s, fault) in keys {
        let p = parse_perturbation(s, &cluster, fault)?;
        let inputs = p.apply(&cluster, &current);
        let next = solve(&inputs);
        if a.oracle {
            check_oracle(&inputs, &next, &p.to_string())?;
        }
        let changed =
            plan.tasks.iter().zip(&next.tasks).filter(|(x, y)| x.x != y.x).map(|(x, _)| x.id.to_string()).collect();
        perturbed.push(PerturbedPlan {
            perturbation: p.to_string(),
            capacity: inputs.capacity,
            plan: with_micro_batches(next, &w),
            changed,
        });
    }
    let out = json!({
        "config_digest": w.digest,
        "capacity": base.capacity,
        "plan": with_micro_batches(plan, &w),
        "perturbations": perturbed,
    });
    say!("{}", to_json(&out));
    Ok(())
}

fn node_list(cluster: &ClusterState) -> Vec<(NodeId, usize)> {
    cluster.nodes.iter().map(|n| (n.node_id.clone(), n.worker_ids.len())).collect()
}

fn trace_params(a: &TraceGenArgs, nodes: Vec<(NodeId, usize)>) -> Result<TraceParams, CliError> {
    let mut p = match a.preset {
        Some(preset) => preset.params(nodes, a.seed.seed),
        None => {
            let (Some(lambda), Some(horizon)) = (a.lambda, a.horizon) else {
                return Err(CliError::Usage("give --preset, or both --lambda and --horizon".into()));
            };
            TraceParams {
                nodes,
                lambda_node: lambda,
                mix: SeverityMix::default(),
                repair: RepairModel::Uniform { min_s: 86_400.0, max_s: 7.0 * 86_400.0 },
                horizon,
                seed: a.seed.seed,
            }
        }
    };
    if let Some(l) = a.lambda {
        p.lambda_node = l;
    }
    if let Some(h) = a.horizon {
        p.horizon = h;
    }
    if let Some(m) = &a.sev_mix {
        p.mix = SeverityMix { sev1: m[0], sev2: m[1], sev3: m[2] };
    }
    if let (Some(min_s), Some(max_s)) = (a.repair_min, a.repair_max) {
        p.repair = RepairModel::Uniform { min_s, max_s };
    }
    Ok(p)
}

fn cmd_trace_gen(a: &TraceGenArgs) -> Result<(), CliError> {
    let (cfg, digest, _) = a.workload.config_only()?;
    let params = trace_params(a, node_list(&cfg.cluster()))?;
    let mut trace = generate_trace(&params).map_err(|e| CliError::Usage(e.to_string()))?;
    trace.config_digest = Some(digest);
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(&a.out, &buf)?;
    let counts = summarize(&trace);
    let mut line = format!("wrote {} events over {:.0}s (seed {}):", trace.events.len(), trace.horizon, trace.seed);
    for (k, n) in counts {
        let _ = write!(line, " {}={n}", serde_json::to_value(k).expect("kind").as_str().unwrap_or("?"));
    }
    sayln!("{line}");
    Ok(())
}

impl TraceSource {
    fn traces(&self, cluster: &ClusterState, seed: u64, runs: u64) -> Result<Vec<FailureTrace>, CliError> {
        match &self.trace {
            Some(path) => {
                if runs != 1 {
                    return Err(CliError::Usage("--runs needs a preset, not a trace file".into()));
                }
                let f = fs::File::open(path).map_err(io_err(path))?;
                let t = FailureTrace::read_jsonl(BufReader::new(f))
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                Ok(vec![t])
            }
            None => {
                let preset = self.preset.unwrap_or(TracePreset::TraceA);
                (seed..seed + runs)
                    .map(|s| {
                        generate_trace(&preset.params(node_list(cluster), s))
                            .map_err(|e| CliError::Usage(e.to_string()))
                    })
                    .collect()
            }
        }
    }
}

#[derive(Serialize)]
struct SummaryReport<'a> {
    config_digest: &'a str,
    seed: u64,
    trace_config_digest: Option<&'a str>,
    #[serde(flatten)]
    summary: &'a SimSummary,
}

fn setup_for(w: &Workload, zero_cost: bool) -> SimSetup {
    let s = SimSetup::from_config(&w.cfg, w.tasks.clone());
    if zero_cost {
        s.zero_cost()
    } else {
        s
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let policy = match (a.policy, a.hot_spare) {
        (Policy::RestartCheckpoint { .. }, true) => Policy::RestartCheckpoint { hot_spare: true },
        (p, false) => p,
        (p, true) => return Err(CliError::Usage(format!("--hot-spare only applies to restart_checkpoint, not {p}"))),
    };
    if a.sample_every.is_nan() || a.sample_every < 0.0 {
        return Err(CliError::Usage("--sample-every must be >= 0".into()));
    }
    let w = a.workload.load()?;
    let setup = setup_for(&w, a.zero_cost);
    let trace = a.source.traces(&setup.cluster, a.seed.seed, 1)?.remove(0);
    let opts = SimOptions { sample_every: Some(a.sample_every), record: true };
    let out = run_simulation(&setup, &trace, policy, &opts).map_err(|e| CliError::Config(e.to_string()))?;

    let mut csv = Vec::new();
    out.series.write_csv(&mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(&a.out, &csv)?;
    let summary_path = a.summary.clone().unwrap_or_else(|| a.out.with_extension("summary.json"));
    let report = SummaryReport {
        config_digest: &w.digest,
        seed: trace.seed,
        trace_config_digest: trace.config_digest.as_deref(),
        summary: &out.summary,
    };
    write_atomic(&summary_path, to_json(&report).as_bytes())?;
    sayln!(
        "{policy}: accumulated WAF {:.6e} ({:.1}% of failure-free), {} samples -> {}",
        out.summary.accumulated_waf,
        100.0 * out.summary.accumulated_waf / out.summary.ideal_waf.max(f64::MIN_POSITIVE),
        out.series.samples.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct CompareReport {
    config_digest: String,
    seed: u64,
    runs: usize,
    zero_cost: bool,
    traces: Vec<ComparisonReport>,
    /// Mean accumulated WAF per policy and the ratio of unicron's mean to it.
    mean: Vec<PolicyResult>,
}

fn cmd_compare(a: &CompareArgs) -> Result<(), CliError> {
    let mut policies = a.policies.clone();
    if policies.is_empty() {
        policies.push(Policy::Unicron);
        policies.extend(Policy::BASELINES);
    }
    if policies.len() < 2 {
        return Err(CliError::Usage("compare needs at least two policies".into()));
    }
    if a.runs == 0 {
        return Err(CliError::Usage("--runs must be >= 1".into()));
    }
    let w = a.workload.load()?;
    let setup = setup_for(&w, a.zero_cost);
    let traces = a.source.traces(&setup.cluster, a.seed.seed, a.runs)?;
    let reports: Vec<ComparisonReport> = traces
        .iter()
        .map(|t| compare_policies(&setup, t, &policies))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut unicron_sum = 0.0;
    for r in &reports {
        for p in &r.results {
            *sums.entry(p.policy.clone()).or_default() += p.accumulated_waf;
            unicron_sum += if p.policy == "unicron" { p.accumulated_waf } else { 0.0 };
        }
    }
    // Unicron may be absent from the list; its totals are implied by the ratios.
    if !policies.contains(&Policy::Unicron) {
        unicron_sum = reports.iter().map(|r| r.results[0].accumulated_waf * r.results[0].unicron_ratio).sum();
    }
    let n = reports.len() as f64;
    let mean: Vec<PolicyResult> = policies
        .iter()
        .map(|p| {
            let total = sums.get(p.name()).copied().unwrap_or(0.0);
            PolicyResult {
                policy: p.name().to_owned(),
                accumulated_waf: total / n,
                unicron_ratio: if total > 0.0 { unicron_sum / total } else { f64::INFINITY },
            }
        })
        .collect();
    let mut table = String::new();
    for p in &mean {
        let _ = writeln!(table, "{:<30} {:>14.6e} {:>8.3}", p.policy, p.accumulated_waf, p.unicron_ratio);
    }
    let report = CompareReport {
        config_digest: w.digest,
        seed: a.seed.seed,
        runs: reports.len(),
        zero_cost: a.zero_cost,
        traces: reports,
        mean,
    };
    match &a.out {
        Some(path) => {
            write_atomic(path, to_json(&report).as_bytes())?;
            say!("{:<30} {:>14} {:>8}\n{table}", "policy", "mean acc. WAF", "ratio");
        }
        None => say!("{}", to_json(&report)),
    }
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<(), CliError> {
    let iteration = a.seed.seed;
    if a.sweep {
        let grid = sweep_grid();
        let r = run_sweep(&grid, iteration).map_err(|e| CliError::Usage(e.to_string()))?;
        sayln!(
            "sweep: {} cases, {} EQUAL, {} checkpoint fallback, {} UNEQUAL",
            r.cases,
            r.equal,
            r.fallback,
            r.unequal.len()
        );
        if let Some(c) = r.unequal.first() {
            return Err(CliError::Mismatch(format!("UNEQUAL at {c}")));
        }
        return Ok(());
    }
    let point = match (a.fail_after_mb, a.fail_after_reduced_segments) {
        (_, Some(k)) => FailurePoint::AfterReducedSegments(k),
        (Some(m), None) => FailurePoint::AfterMicroBatch(m),
        (None, None) => FailurePoint::AfterMicroBatch(0),
    };
    let case = VerifyCase {
        dp: a.dp,
        pp: a.pp,
        micro_batches: a.microbatches,
        fail_rank: a.fail_rank,
        fail_stage: a.fail_stage.unwrap_or(a.pp.saturating_sub(1)),
        point,
    };
    match verify_case(&case, iteration).map_err(|e| CliError::Usage(e.to_string()))? {
        Verdict::Equal { digest } => {
            sayln!("EQUAL {case} digest={digest}");
            Ok(())
        }
        Verdict::CheckpointFallback => {
            sayln!("CHECKPOINT-FALLBACK {case}: no surviving data-parallel replica, reload from checkpoint");
            Ok(())
        }
        Verdict::Unequal { expected, got } => {
            sayln!("UNEQUAL {case} expected={expected} got={got}");
            Err(CliError::Mismatch(format!("resumed gradient differs at {case}")))
        }
    }
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<(), CliError> {
    if a.synthesize {
        let w = a.workload.load()?;
        let rows: Vec<_> = w.tasks.iter().flat_map(|t| t.calibration.to_rows()).collect();
        let mut buf = Vec::new();
        write_calibration(&mut buf, &rows).map_err(|e| CliError::Io(e.to_string()))?;
        let path = a.out.as_ref().expect("clap enforces --out");
        write_atomic(path, &buf)?;
        sayln!("wrote {} rows for {} tasks to {}", rows.len(), w.tasks.len(), path.display());
        return Ok(());
    }
    let Some(input) = &a.input else {
        return Err(CliError::Usage("give --input CSV or --synthesize --out CSV".into()));
    };
    let (cfg, _, _) = a.workload.config_only()?;
    let rows = load_calibration(input).map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
    let tasks = build_tasks(&cfg, Some(&rows)).map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
    for t in &tasks {
        let sched: Vec<u32> = t.calibration.schedulable().map(|(x, _)| x).collect();
        let best = t.calibration.schedulable().max_by(|a, b| a.1.flops.total_cmp(&b.1.flops)).map(|(x, _)| x);
        sayln!(
            "{}: {} rows, {} schedulable (x {}..{}), peak at x={}",
            t.id,
            t.calibration.len(),
            sched.len(),
            sched.first().copied().unwrap_or(0),
            sched.last().copied().unwrap_or(0),
            best.map_or("-".into(), |x| x.to_string())
        );
    }
    Ok(())
}
