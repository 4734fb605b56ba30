//! Command-line interface. Every command works directly on the store and
//! the bank; none of them needs the service running.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{NaiveDate, NaiveTime};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use dots_core::aggregate::{aggregate_batch, paired_compare, BatchReport, CaseRun, CompareOptions, PairedComparison, RunManifest};
use dots_core::case::CaseBank;
use dots_core::clock::Clock;
use dots_core::dialogue::SimulationLimits;
use dots_core::gateway::ProviderConfig;
use dots_core::monitor::{weekly_report, TrapEntry};

use crate::batch::{load_checkpoint, prior_from_report, BatchContext};
use crate::clock::SystemClock;
use crate::files::{self, check_bank, load_bank, read_transcript, write_json, write_text, RunArtifacts};
use crate::monitor_host::{load_state, stored_probes, MonitorHost, MonitorHostConfig};
use crate::runner::{execute, plan_runs, Agents, AgentsConfig, DEFAULT_WORKERS};
use crate::service::{serve, AppState, TokenScope};
use crate::sessions::SessionRegistry;
use crate::store::{Namespace, RunDraft, RunFilter, RunKind, RunStore};

pub type CliResult = Result<i32, String>;

#[derive(Debug, Parser)]
#[command(name = "dots", version, about = "Simulation-based evaluation of doctor agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every case file of a bank and report the category distribution.
    Validate {
        #[arg(long)]
        bank: PathBuf,
    },
    /// Run consultations and score them.
    Simulate(SimulateArgs),
    /// Re-score a stored run; the result supersedes the original.
    Evaluate(EvaluateArgs),
    /// Run a test level over the bank.
    Batch(BatchArgs),
    /// Paired comparison of two batch reports.
    Compare(CompareArgs),
    /// Run the monitoring loop.
    Monitor(MonitorArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Write the weekly monitoring summary.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct StoreArgs {
    #[arg(long, default_value = "dots-store")]
    pub store: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AgentArgs {
    /// JSON file with doctor, patient and judge provider settings.
    #[arg(long, conflicts_with_all = ["doctor", "patient", "judge"])]
    pub agents: Option<PathBuf>,
    /// Doctor endpoint: an HTTP URL or `scripted:<file-or-dir>`.
    #[arg(long)]
    pub doctor: Option<String>,
    #[arg(long, default_value = "doctor")]
    pub doctor_model: String,
    /// Patient endpoint; the rule-based patient when omitted.
    #[arg(long)]
    pub patient: Option<String>,
    #[arg(long, default_value = "patient")]
    pub patient_model: String,
    /// Judge endpoint; deterministic extraction only when omitted.
    #[arg(long)]
    pub judge: Option<String>,
    #[arg(long, default_value = "judge")]
    pub judge_model: String,
    #[arg(long)]
    pub max_steps: Option<u32>,
}

impl AgentArgs {
    fn config(&self) -> Result<AgentsConfig, String> {
        let mut config = match (&self.agents, &self.doctor) {
            (Some(path), _) => files::read_json::<AgentsConfig>(path).map_err(|e| e.to_string())?,
            (None, Some(doctor)) => {
                let mut c = AgentsConfig::new(ProviderConfig::new(doctor, &self.doctor_model));
                c.patient = self.patient.as_deref().map(|p| ProviderConfig::new(p, &self.patient_model));
                c.judge = self.judge.as_deref().map(|j| ProviderConfig::new(j, &self.judge_model));
                c
            }
            (None, None) => return Err(String::from("either --agents or --doctor is required")),
        };
        if let Some(max) = self.max_steps {
            config.limits = SimulationLimits { max_steps: max, ..config.limits };
        }
        Ok(config)
    }

    fn judge_only(&self) -> Result<AgentsConfig, String> {
        if self.agents.is_some() || self.doctor.is_some() {
            return self.config();
        }
        // Re-scoring never talks to a doctor, so any placeholder will do.
        let mut c = AgentsConfig::new(ProviderConfig::new("scripted:/dev/null", "none"));
        c.judge = self.judge.as_deref().map(|j| ProviderConfig::new(j, &self.judge_model));
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "bank")]
    pub bank: PathBuf,
    /// Case id; repeat for several cases.
    #[arg(long = "case", required = true)]
    pub cases: Vec<String>,
    #[command(flatten)]
    pub agents: AgentArgs,
    #[arg(long, default_value_t = 1)]
    pub runs: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub batch_id: Option<String>,
    #[arg(long, default_value = "unversioned")]
    pub model_version: String,
    #[arg(long, default_value = "dots-out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WORKERS)]
    pub workers: usize,
    #[command(flatten)]
    pub store: StoreArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run: String,
    #[arg(long, default_value = "bank")]
    pub bank: PathBuf,
    /// Score this transcript file instead of the stored one.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[command(flatten)]
    pub agents: AgentArgs,
    #[arg(long, default_value = "dots-out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub store: StoreArgs,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub level: u8,
    #[arg(long, default_value = "bank")]
    pub bank: PathBuf,
    #[command(flatten)]
    pub agents: AgentArgs,
    #[arg(long, default_value_t = 3)]
    pub per_category: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Level 1 trap list (JSON array); defaults to cases tagged or scoped `trap`.
    #[arg(long)]
    pub traps: Option<PathBuf>,
    /// Report whose per-case scores serve as Level 2 priors; defaults to the
    /// latest stored report of the same model version.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Continue a Level 3 run from its checkpoint file.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub batch_id: Option<String>,
    #[arg(long, default_value = "unversioned")]
    pub model_version: String,
    #[arg(long, default_value = "dots-out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WORKERS)]
    pub workers: usize,
    #[command(flatten)]
    pub store: StoreArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub run_a: String,
    #[arg(long)]
    pub run_b: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "dots-out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub store: StoreArgs,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Stop after this many cycles instead of running forever.
    #[arg(long)]
    pub ticks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Case bank for human sessions.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Static bearer token; when set, requests without it are refused.
    #[arg(long)]
    pub token: Option<String>,
    /// Restrict the token to one namespace (`evaluation` or `monitoring`).
    #[arg(long, requires = "token")]
    pub token_namespace: Option<String>,
    #[command(flatten)]
    pub store: StoreArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// First day of the week, YYYY-MM-DD (UTC).
    #[arg(long)]
    pub week: NaiveDate,
    #[arg(long, default_value = "dots-out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub store: StoreArgs,
}

fn clock() -> Arc<dyn Clock + Send + Sync> {
    Arc::new(SystemClock)
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn print_json<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> Result<(), String> {
    writeln!(out, "{}", serde_json::to_string_pretty(value).map_err(err)?).map_err(err)
}

/// Runs one parsed command, writing results to `out`; returns the exit code.
pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Validate { bank } => validate(&bank, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Batch(a) => batch(a, out),
        Command::Compare(a) => compare(a, out),
        Command::Monitor(a) => monitor(a, out),
        Command::Serve(a) => serve_cmd(a),
        Command::Report(a) => report(a, out),
    }
}

fn validate(bank: &Path, out: &mut dyn Write) -> CliResult {
    let check = check_bank(bank).map_err(err)?;
    print_json(out, &check)?;
    Ok(if check.is_valid() { 0 } else { 1 })
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> CliResult {
    let bank = load_bank(&a.bank).map_err(err)?;
    let agents = Agents::new(a.agents.config()?, clock()).map_err(err)?;
    let store = RunStore::open(&a.store.store).map_err(err)?.scoped(Namespace::Evaluation);
    let mut cases = Vec::new();
    for id in &a.cases {
        cases.push(bank.get(id).ok_or_else(|| format!("unknown case {id:?}"))?);
    }
    let batch_id = a.batch_id.clone().unwrap_or_else(|| default_batch_id(&a.cases, a.seed));
    let plan = plan_runs(cases.iter().copied(), a.runs.max(1), &batch_id, a.seed);
    let started_at = agents.clock().now_ms();
    let results = execute(&plan, a.workers, |spec| {
        let case = bank.get(&spec.case_id).expect("planned from the bank");
        agents.run(case, &spec.run_id, spec.seed)
    });
    let ctx = BatchContext {
        bank: &bank,
        bank_dir: &a.bank,
        agents: &agents,
        store,
        out_dir: Some(a.out.clone()),
        workers: a.workers,
        model_version: a.model_version.clone(),
    };
    let mut runs = Vec::new();
    let mut failures = 0;
    for (spec, result) in plan.iter().zip(results) {
        match result {
            Ok(outcome) => {
                ctx.persist_outcome(&outcome, RunKind::Simulation).map_err(err)?;
                if let Some(e) = &outcome.simulation_error {
                    writeln!(out, "{}: dialogue stopped early: {e}", outcome.run_id).map_err(err)?;
                }
                let case = bank.get(&spec.case_id).expect("planned from the bank");
                runs.push(CaseRun::new(case, &outcome.run_id, outcome.dots.clone()));
                writeln!(out, "{}\t{}", outcome.run_id, serde_json::to_string(&outcome.dots).map_err(err)?).map_err(err)?;
            }
            Err(e) => {
                failures += 1;
                writeln!(out, "{}: failed: {e}", spec.run_id).map_err(err)?;
            }
        }
    }
    if !runs.is_empty() {
        let manifest = RunManifest {
            batch_id: batch_id.clone(),
            model_version: a.model_version.clone(),
            seed: a.seed,
            started_at,
            finished_at: agents.clock().now_ms(),
            level: None,
        };
        if let Ok(report) = aggregate_batch(&runs, manifest) {
            ctx.persist_report(&batch_id, RunKind::Report, &format!("{batch_id}.report.json"), &report).map_err(err)?;
            writeln!(out, "batch {batch_id}: {} run(s)", report.run_count).map_err(err)?;
        }
    }
    Ok(if failures == 0 { 0 } else { 1 })
}

/// `sim-<case>-s<seed>` for one case. Several cases are named by their
/// count and a digest of the ordered id list, which keeps the id short and
/// within the store's character set.
fn default_batch_id(cases: &[String], seed: u64) -> String {
    match cases {
        [one] => format!("sim-{one}-s{seed}"),
        many => {
            let digest = Sha256::digest(many.join("\n").as_bytes());
            format!("sim-{}cases-{}-s{seed}", many.len(), &hex::encode(digest)[..8])
        }
    }
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> CliResult {
    let bank = load_bank(&a.bank).map_err(err)?;
    let store = RunStore::open(&a.store.store).map_err(err)?;
    let original = store.resolve(&a.run);
    let transcript = match (&a.transcript, &original) {
        (Some(path), _) => read_transcript(path).map_err(err)?,
        (None, Some(env)) => {
            let bytes = store.artifact(env, "transcript").map_err(err)?;
            dots_core::dialogue::Transcript::from_jsonl(&String::from_utf8_lossy(&bytes)).map_err(err)?
        }
        (None, None) => return Err(format!("run {:?} not found", a.run)),
    };
    let case = bank.get(&transcript.case_id).ok_or_else(|| format!("unknown case {:?}", transcript.case_id))?;
    let agents = Agents::new(a.agents.judge_only()?, clock()).map_err(err)?;
    let eval = agents.evaluate(&transcript, case).map_err(err)?;

    let namespace = original.as_ref().map_or(Namespace::Evaluation, |e| e.namespace);
    let version = original.as_ref().map_or_else(|| String::from("unversioned"), |e| e.model_version.clone());
    let mut n = 1;
    let new_id = loop {
        let candidate = format!("{}.eval{n}", a.run);
        if store.get(&candidate).is_none() {
            break candidate;
        }
        n += 1;
    };
    let mut draft = RunDraft::new(&new_id, RunKind::Simulation, namespace, &version, agents.clock().now_ms())
        .case(&case.id)
        .artifact("transcript", transcript.to_jsonl())
        .json_artifact("extraction", &eval.extraction)
        .json_artifact("dots", &eval.dots)
        .json_artifact("judge_log", &eval.judge_log);
    if let Some(env) = &original {
        draft = draft.supersedes(&env.run_id);
    }
    store.commit(draft).map_err(err)?;
    let artifacts = RunArtifacts::in_dir(&a.out, &new_id);
    artifacts.write_transcript(&transcript).map_err(err)?;
    artifacts.write_scores(&eval.extraction, &eval.dots).map_err(err)?;
    writeln!(out, "{new_id}\t{}", serde_json::to_string(&eval.dots).map_err(err)?).map_err(err)?;
    Ok(0)
}

fn default_traps(bank: &CaseBank) -> Vec<TrapEntry> {
    let mut ids: Vec<String> = bank
        .cases()
        .filter(|c| c.tags.has("trap") || c.scopes.iter().any(|s| s.eq_ignore_ascii_case("trap")))
        .map(|c| c.id.clone())
        .collect();
    ids.sort();
    ids.iter().map(|id| TrapEntry::new(id)).collect()
}

fn batch(a: BatchArgs, out: &mut dyn Write) -> CliResult {
    let bank = load_bank(&a.bank).map_err(err)?;
    let agents = Agents::new(a.agents.config()?, clock()).map_err(err)?;
    let store = RunStore::open(&a.store.store).map_err(err)?;
    let now = agents.clock().now_ms();
    let batch_id = a.batch_id.clone().unwrap_or_else(|| format!("level{}-{}-{now}", a.level, a.model_version));
    let out_dir = a.out.join(&batch_id);
    let ctx = BatchContext {
        bank: &bank,
        bank_dir: &a.bank,
        agents: &agents,
        store: store.scoped(Namespace::Evaluation),
        out_dir: Some(out_dir.clone()),
        workers: a.workers,
        model_version: a.model_version.clone(),
    };
    let manifest = RunManifest {
        batch_id: batch_id.clone(),
        model_version: a.model_version.clone(),
        seed: a.seed,
        started_at: now,
        finished_at: now,
        level: Some(a.level),
    };
    match a.level {
        1 => {
            let traps = match &a.traps {
                Some(p) => files::read_json(p).map_err(err)?,
                None => default_traps(&bank),
            };
            let report = ctx.level1(&traps, &batch_id, a.seed).map_err(err)?;
            print_json(out, &report)?;
            Ok(if report.pass { 0 } else { 1 })
        }
        2 => {
            let prior = match &a.prior {
                Some(p) => prior_from_report(&files::read_json::<BatchReport>(p).map_err(err)?),
                None => ctx
                    .latest_report(&[RunKind::Level2, RunKind::Level3, RunKind::Report])
                    .map(|r| prior_from_report(&r))
                    .unwrap_or_default(),
            };
            let report = ctx.level2(a.per_category, &prior, manifest).map_err(err)?;
            print_json(out, &report.report)?;
            writeln!(out, "forced: {:?}", report.selection.forced()).map_err(err)?;
            Ok(0)
        }
        _ => {
            let checkpoint_path = out_dir.join("level3.checkpoint.json");
            let checkpoint = if a.resume { Some(load_checkpoint(&checkpoint_path).map_err(err)?) } else { None };
            let (outcome, meta) = ctx.level3(manifest, checkpoint).map_err(err)?;
            if let Some(failure) = &outcome.failure {
                writeln!(out, "level 3 stopped: {failure}; resume with --resume --batch-id {batch_id}").map_err(err)?;
                return Ok(2);
            }
            if let Some(report) = &outcome.report {
                print_json(out, report)?;
            }
            print_json(out, &meta)?;
            Ok(if meta.pass { 0 } else { 1 })
        }
    }
}

fn find_report(store: &RunStore, id: &str) -> Result<BatchReport, String> {
    let env = store.resolve(id).ok_or_else(|| format!("run {id:?} not found"))?;
    store.artifact_json(&env, "report").map_err(err)
}

/// Histogram rows of every metric: `metric,bin_low,bin_high,count`.
pub fn histogram_csv(cmp: &PairedComparison) -> String {
    let mut csv = String::from("metric,bin_low,bin_high,count\n");
    for (metric, m) in &cmp.metrics {
        let name = serde_json::to_value(metric).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        for bin in &m.histogram {
            csv.push_str(&format!("{name},{},{},{}\n", bin.bin_low, bin.bin_high, bin.count));
        }
    }
    csv
}

fn compare(a: CompareArgs, out: &mut dyn Write) -> CliResult {
    let store = RunStore::open(&a.store.store).map_err(err)?;
    let ra = find_report(&store, &a.run_a)?;
    let rb = find_report(&store, &a.run_b)?;
    let options = CompareOptions { seed: a.seed, ..CompareOptions::default() };
    let cmp = paired_compare(&ra, &rb, &options).map_err(err)?;
    write_json(&a.out.join("compare.json"), &cmp).map_err(err)?;
    write_text(&a.out.join("histogram.csv"), &histogram_csv(&cmp)).map_err(err)?;
    let id = format!("compare-{}-{}", a.run_a, a.run_b);
    if store.get(&id).is_none() {
        let draft = RunDraft::new(&id, RunKind::Comparison, Namespace::Evaluation, &rb.manifest.model_version, SystemClock.now_ms())
            .json_artifact("report", &cmp);
        store.commit(draft).map_err(err)?;
    }
    let summary: BTreeMap<_, _> = cmp.metrics.iter().map(|(m, c)| (*m, &c.proportions)).collect();
    print_json(out, &summary)?;
    Ok(0)
}

fn monitor(a: MonitorArgs, out: &mut dyn Write) -> CliResult {
    let config = MonitorHostConfig::load(&a.config).map_err(err)?;
    let mut host = MonitorHost::open(&config, clock()).map_err(err)?;
    let mut write_err = None;
    host.run(a.ticks, |tick| {
        let line = serde_json::json!({
            "at": tick.at,
            "probes": tick.probes.len(),
            "failed": tick.probes.iter().filter(|p| !p.pass).count(),
            "verdict": tick.verdict.as_ref().map(|v| v.status),
            "transitions": tick.transitions,
            "notifications": tick.notifications.len(),
        });
        if let Err(e) = writeln!(out, "{line}") {
            write_err = Some(e.to_string());
        }
    })
    .map_err(err)?;
    write_err.map_or(Ok(0), Err)
}

fn serve_cmd(a: ServeArgs) -> CliResult {
    let store = RunStore::open(&a.store.store).map_err(err)?;
    let sessions = match &a.bank {
        Some(dir) => {
            let bank = Arc::new(load_bank(dir).map_err(err)?);
            Some(SessionRegistry::new(bank, store.clone(), SimulationLimits::default(), clock()))
        }
        None => None,
    };
    let namespace = a
        .token_namespace
        .map(|n| serde_json::from_value::<Namespace>(serde_json::Value::String(n.clone())).map_err(|_| format!("bad namespace {n:?}")))
        .transpose()?;
    let tokens = a.token.map(|token| vec![TokenScope { token, namespace }]).unwrap_or_default();
    let state = Arc::new(AppState { store, sessions, tokens, clock: clock() });
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().map_err(err)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(err)?;
    rt.block_on(serve(addr, state)).map_err(|e| format!("cannot serve on {addr}: {e}"))?;
    Ok(0)
}

fn report(a: ReportArgs, out: &mut dyn Write) -> CliResult {
    let store = RunStore::open(&a.store.store).map_err(err)?;
    let start = a.week.and_time(NaiveTime::MIN).and_utc().timestamp_millis();
    let end = start + 7 * 86_400_000;
    let probes: Vec<_> = stored_probes(&store, start).into_iter().filter(|p| p.timestamp_ms < end).collect();
    let (incidents, trap_ids) = match load_state(&a.store.store) {
        Some(m) => (
            m.state.incidents.clone(),
            m.config().schedule.traps.iter().map(|t| t.case_id.clone()).collect::<Vec<_>>(),
        ),
        None => (Vec::new(), Vec::new()),
    };
    let weekly = weekly_report(&probes, &incidents, &trap_ids, start, end);
    let path = a.out.join(format!("weekly-{}.json", a.week));
    write_json(&path, &weekly).map_err(err)?;
    let id = format!("weekly-{}", a.week);
    let scoped = store.scoped(Namespace::Monitoring);
    if scoped.query(&RunFilter { kind: Some(RunKind::Report), ..RunFilter::default() }).iter().all(|e| e.run_id != id) {
        let draft = RunDraft::new(&id, RunKind::Report, Namespace::Monitoring, "all", SystemClock.now_ms()).json_artifact("report", &weekly);
        if let Err(e) = scoped.commit(draft) {
            writeln!(out, "weekly report not stored: {e}").map_err(err)?;
        }
    }
    writeln!(out, "{}", path.display()).map_err(err)?;
    Ok(0)
}
