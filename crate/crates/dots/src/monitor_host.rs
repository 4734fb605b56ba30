//! Runs the monitoring loop against real agents: probes go to worker
//! threads, results come back to the single loop that owns the state.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use dots_core::aggregate::{BatchReport, RunManifest};
use dots_core::case::{CaseBank, Category};
use dots_core::clock::{Clock, EpochMillis};
use dots_core::monitor::{
    baselines, in_warmup, level3_degraded, window_means, DegradationVerdict, Incident, Monitor, MonitorConfig,
    ProbeExecutor, ProbeResult, ProbeTarget, ProbeTask, TickReport, TrapRule,
};
use dots_core::pipeline::case_seed;
use dots_core::scoring::DotsRecord;
use serde::{Deserialize, Serialize};

use crate::batch::{run_single, BatchContext};
use crate::files::{self, FilesError};
use crate::runner::{Agents, AgentsConfig, DEFAULT_WORKERS};
use crate::store::{Namespace, RunDraft, RunFilter, RunKind, RunStore, ScopedStore, StoreError};

/// Path of the persisted monitor inside a run store directory.
pub fn state_path(store_root: &Path) -> PathBuf {
    store_root.join("monitor").join("state.json")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorHostConfig {
    pub bank: PathBuf,
    pub store: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub monitor: MonitorConfig,
    pub versions: BTreeMap<String, AgentsConfig>,
    /// URLs that receive each incident as a JSON POST.
    #[serde(default)]
    pub webhooks: Vec<String>,
    #[serde(default = "default_tick_ms")]
    pub tick_ms: u64,
    /// Level-3 report per version that later Level-3 runs are compared to.
    #[serde(default)]
    pub reference_reports: BTreeMap<String, PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_tick_ms() -> u64 {
    60_000
}

fn default_workers() -> usize {
    DEFAULT_WORKERS
}

#[derive(Debug, thiserror::Error)]
pub enum HostError {
    #[error(transparent)]
    Files(#[from] FilesError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("model version {0:?} has no agent configuration")]
    UnknownVersion(String),
    #[error("trap case {0:?} is not in the bank")]
    UnknownTrap(String),
    #[error("{0}")]
    Agents(String),
}

impl MonitorHostConfig {
    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, FilesError> {
        let mut config: Self = files::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut config.bank);
        fix(&mut config.store);
        if let Some(out) = config.out.as_mut() {
            fix(out);
        }
        for p in config.reference_reports.values_mut() {
            fix(p);
        }
        Ok(config)
    }
}

/// Probe and regression worker backed by configured agents.
pub struct AgentExecutor {
    bank: Arc<CaseBank>,
    bank_dir: PathBuf,
    agents: BTreeMap<String, Agents>,
    store: ScopedStore,
    rules: BTreeMap<String, TrapRule>,
    safety_scopes: Vec<String>,
    references: BTreeMap<String, PathBuf>,
    out: Option<PathBuf>,
    workers: usize,
    seed: u64,
    level3_delta: f64,
    counter: AtomicU64,
}

impl AgentExecutor {
    pub fn new(
        config: &MonitorHostConfig,
        bank: Arc<CaseBank>,
        store: &RunStore,
        clock: Arc<dyn Clock + Send + Sync>,
    ) -> Result<Self, HostError> {
        let mut agents = BTreeMap::new();
        for (version, cfg) in &config.versions {
            let a = Agents::new(cfg.clone(), Arc::clone(&clock)).map_err(|e| HostError::Agents(e.to_string()))?;
            agents.insert(version.clone(), a);
        }
        for target in &config.monitor.schedule.targets {
            if !agents.contains_key(&target.model_version) {
                return Err(HostError::UnknownVersion(target.model_version.clone()));
            }
        }
        let mut rules = BTreeMap::new();
        for trap in &config.monitor.schedule.traps {
            if bank.get(&trap.case_id).is_none() {
                return Err(HostError::UnknownTrap(trap.case_id.clone()));
            }
            rules.insert(trap.case_id.clone(), trap.rule.clone());
        }
        Ok(Self {
            bank,
            bank_dir: config.bank.clone(),
            agents,
            store: store.scoped(Namespace::Monitoring),
            rules,
            safety_scopes: config.monitor.anomaly.safety_scopes.clone(),
            references: config.reference_reports.clone(),
            out: config.out.clone(),
            workers: config.workers.max(1),
            seed: config.seed,
            level3_delta: config.monitor.level3_delta,
            counter: AtomicU64::new(0),
        })
    }

    fn is_safety(&self, case_id: &str) -> bool {
        self.bank.get(case_id).is_some_and(|c| {
            c.scopes.iter().any(|s| self.safety_scopes.iter().any(|w| w.eq_ignore_ascii_case(s)))
        })
    }

    /// Runs one probe; a run that cannot be completed counts as a failure.
    pub fn run_probe(&self, case_id: &str, target: &ProbeTarget, at: EpochMillis) -> ProbeResult {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let run_id = format!("probe-{}-{}-{}-{case_id}-{at}-{n}", target.model_version, target.region, target.language);
        let seed = case_seed(self.seed ^ at as u64, case_id, n as u32);
        let started = Instant::now();
        // Traps are checked against the bank at startup; an unknown id can only
        // come from a stale state file and is kept out of clinical statistics.
        let category = self.bank.get(case_id).map_or(Category::ErrorTests, |c| c.category);
        let rule = self.rules.get(case_id).cloned().unwrap_or_default();
        let outcome = match (self.bank.get(case_id), self.agents.get(&target.model_version)) {
            (Some(case), Some(agents)) => run_single(agents, case, &run_id, seed).map_err(|e| e.to_string()),
            (None, _) => Err(format!("case {case_id:?} not in bank")),
            (_, None) => Err(format!("no agents for {:?}", target.model_version)),
        };
        let latency_ms = started.elapsed().as_millis() as i64;
        let (dots, pass, committed) = match &outcome {
            Ok(o) => (o.dots.clone(), o.simulation_error.is_none() && rule.passes(&o.dots), true),
            Err(_) => (DotsRecord::zeroed(), false, false),
        };
        let result = ProbeResult {
            case_id: case_id.into(),
            category,
            target: target.clone(),
            timestamp_ms: at,
            dots,
            pass,
            safety: self.is_safety(case_id),
            latency_ms,
            run_id: committed.then(|| run_id.clone()),
        };
        let mut draft = RunDraft::new(&run_id, RunKind::Probe, Namespace::Monitoring, &target.model_version, at)
            .case(case_id)
            .json_artifact("probe", &result);
        if let Ok(o) = &outcome {
            draft = draft
                .artifact("transcript", o.transcript.to_jsonl())
                .json_artifact("extraction", &o.extraction)
                .json_artifact("dots", &o.dots);
        }
        if let Err(e) = self.store.commit(draft) {
            eprintln!("probe {run_id}: not persisted: {e}");
        }
        result
    }

    /// Runs due probes on worker threads and returns results in task order.
    pub fn run_tasks(&self, tasks: &[ProbeTask], at: EpochMillis) -> Vec<ProbeResult> {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<ProbeResult>>> = tasks.iter().map(|_| std::sync::Mutex::new(None)).collect();
        thread::scope(|s| {
            for _ in 0..self.workers.min(tasks.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(task) = tasks.get(i) else { break };
                    let r = self.run_probe(&task.case_id, &task.target, at);
                    *slots[i].lock().expect("slot poisoned") = Some(r);
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().expect("slot poisoned").expect("every task ran")).collect()
    }

    fn reference(&self, version: &str, before: &str) -> Option<BatchReport> {
        if let Some(path) = self.references.get(version) {
            return files::read_json(path).ok();
        }
        let filter = RunFilter { kind: Some(RunKind::Level3), model_version: Some(version.into()), ..RunFilter::default() };
        self.store
            .query(&filter)
            .into_iter()
            .rev()
            .filter(|e| e.run_id != before)
            .find_map(|e| self.store.artifact_json::<BatchReport>(&e.run_id, "report").ok())
    }

    /// Full regression of one version, compared with its reference report.
    /// A run that stops early cannot confirm a drop and reports none.
    pub fn run_level3(&self, version: &str, at: EpochMillis) -> DegradationVerdict {
        let none = DegradationVerdict { degraded: false, drops: Vec::new() };
        let Some(agents) = self.agents.get(version) else { return none };
        let batch_id = format!("level3-{version}-{at}");
        let ctx = BatchContext {
            bank: &self.bank,
            bank_dir: &self.bank_dir,
            agents,
            store: self.store.clone(),
            out_dir: self.out.as_ref().map(|o| o.join(&batch_id)),
            workers: self.workers,
            model_version: version.into(),
        };
        let manifest = RunManifest {
            batch_id: batch_id.clone(),
            model_version: version.into(),
            seed: self.seed,
            started_at: at,
            finished_at: at,
            level: Some(3),
        };
        let (outcome, _) = match ctx.level3(manifest, None) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("level 3 for {version} failed: {e}");
                return none;
            }
        };
        match (&outcome.failure, &outcome.report) {
            (None, Some(report)) => {
                let reference = self.reference(version, &batch_id);
                level3_degraded(report, reference.as_ref(), self.level3_delta)
            }
            _ => none,
        }
    }

}

impl ProbeExecutor for AgentExecutor {
    fn probe(&mut self, case_id: &str, target: &ProbeTarget, at: EpochMillis) -> ProbeResult {
        self.run_probe(case_id, target, at)
    }

    fn level3(&mut self, model_version: &str, at: EpochMillis) -> DegradationVerdict {
        self.run_level3(model_version, at)
    }
}

/// Owns the monitor state and drives it from the wall clock.
pub struct MonitorHost {
    pub monitor: Monitor,
    executor: AgentExecutor,
    webhooks: Vec<String>,
    state_file: PathBuf,
    tick: Duration,
    clock: Arc<dyn Clock + Send + Sync>,
}

/// Probe results stored in the monitoring namespace since `since`.
pub fn stored_probes(store: &RunStore, since: EpochMillis) -> Vec<ProbeResult> {
    let scoped = store.scoped(Namespace::Monitoring);
    let filter = RunFilter { from: Some(since), kind: Some(RunKind::Probe), ..RunFilter::default() };
    scoped.query(&filter).iter().filter_map(|e| scoped.artifact_json(&e.run_id, "probe").ok()).collect()
}

pub fn load_state(store_root: &Path) -> Option<Monitor> {
    files::read_json(&state_path(store_root)).ok()
}

impl MonitorHost {
    /// Resumes from the saved state when present; otherwise starts fresh
    /// and seeds the probe history from the store.
    pub fn open(config: &MonitorHostConfig, clock: Arc<dyn Clock + Send + Sync>) -> Result<Self, HostError> {
        let bank = Arc::new(files::load_bank(&config.bank)?);
        let store = RunStore::open(&config.store)?;
        let executor = AgentExecutor::new(config, bank, &store, Arc::clone(&clock))?;
        let now = clock.now_ms();
        let monitor = match load_state(&config.store) {
            Some(m) if m.config() == &config.monitor => m,
            _ => {
                let mut m = Monitor::new(config.monitor.clone(), now);
                let since = now - config.monitor.anomaly.baseline_ms - config.monitor.anomaly.long_window_ms;
                m.preload(stored_probes(&store, since));
                m
            }
        };
        Ok(Self {
            monitor,
            executor,
            webhooks: config.webhooks.clone(),
            state_file: state_path(&config.store),
            tick: Duration::from_millis(config.tick_ms.max(1)),
            clock,
        })
    }

    pub fn save(&self) -> Result<(), FilesError> {
        files::write_json(&self.state_file, &self.monitor)
    }

    /// One cycle at the current time: probes, detection, escalation,
    /// notifications and a state save.
    pub fn step(&mut self) -> Result<TickReport, FilesError> {
        let now = self.clock.now_ms();
        let tasks = self.monitor.due(now);
        let results = self.executor.run_tasks(&tasks, now);
        let report = self.monitor.ingest(now, results, &mut self.executor);
        for incident in &report.notifications {
            self.notify(incident);
        }
        self.save()?;
        Ok(report)
    }

    fn notify(&self, incident: &Incident) {
        for url in &self.webhooks {
            if let Err(e) = post_incident(url, incident) {
                eprintln!("webhook {url}: {e}");
            }
        }
    }

    /// Steps until `ticks` cycles ran, or forever when `None`.
    pub fn run(&mut self, ticks: Option<usize>, mut on_tick: impl FnMut(&TickReport)) -> Result<(), FilesError> {
        let mut done = 0;
        loop {
            let report = self.step()?;
            on_tick(&report);
            done += 1;
            if ticks.is_some_and(|t| done >= t) {
                return Ok(());
            }
            thread::sleep(self.tick);
        }
    }
}

pub fn post_incident(url: &str, incident: &Incident) -> Result<(), String> {
    let agent: ureq::Agent =
        ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(10))).build().into();
    let response = agent.post(url).send_json(incident).map_err(|e| e.to_string())?;
    let status = response.status();
    if status.is_success() { Ok(()) } else { Err(format!("HTTP {status}")) }
}

/// Window statistics for one model version, as served to dashboards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowsView {
    pub model: String,
    pub at: EpochMillis,
    pub warmup: bool,
    pub windows: Vec<dots_core::monitor::WindowStat>,
    pub baselines: Vec<BaselineView>,
    pub probe_count: usize,
    pub pass_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineView {
    pub metric: dots_core::metric::Metric,
    pub category: dots_core::case::Category,
    pub median: f64,
}

pub fn windows_view(monitor: &Monitor, model: &str, now: EpochMillis) -> WindowsView {
    let policy = &monitor.config().anomaly;
    let probes: Vec<ProbeResult> =
        monitor.probes().iter().filter(|p| p.target.model_version == model).cloned().collect();
    let mut windows = window_means(&probes, now, policy.short_window_ms);
    windows.extend(window_means(&probes, now, policy.long_window_ms));
    let baselines = baselines(&probes, now, policy)
        .into_iter()
        .map(|(k, median)| BaselineView { metric: k.metric, category: k.category, median })
        .collect();
    let recent: Vec<&ProbeResult> = probes.iter().filter(|p| p.timestamp_ms > now - policy.long_window_ms).collect();
    let pass_rate =
        (!recent.is_empty()).then(|| 100.0 * recent.iter().filter(|p| p.pass).count() as f64 / recent.len() as f64);
    WindowsView {
        model: model.into(),
        at: now,
        warmup: in_warmup(&probes, now, policy),
        windows,
        baselines,
        probe_count: probes.len(),
        pass_rate,
    }
}
