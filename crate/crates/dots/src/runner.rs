//! Builds agents from provider configs and executes case runs, with the
//! evaluator's four extraction tasks and whole batches run on worker threads.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use dots_core::case::CaseRecord;
use dots_core::clock::Clock;
use dots_core::dialogue::{
    count_steps, run_simulation, CompletionDetector, LlmPatient, MockPatient, ModelDoctor, Patient, SimulationLimits,
    Transcript,
};
use dots_core::evaluator::{merge_outputs, run_task, EvaluationError, ExtractionRecord, Judge, JudgeTask, ModelJudge, NoJudge};
use dots_core::gateway::{CallRecord, Gateway, ProviderConfig};
use dots_core::pipeline::{case_seed, run_id_for, CaseOutcome, CaseRunner, PipelineError};
use dots_core::scoring::{assemble_dots, DotsRecord};
use serde::{Deserialize, Serialize};

use crate::provider::{DynModel, ModelSource, ProviderError};

/// Default number of case runs executed at once.
pub const DEFAULT_WORKERS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentsConfig {
    pub doctor: ProviderConfig,
    /// LLM-backed patient; the rule-based mock patient when absent.
    #[serde(default)]
    pub patient: Option<ProviderConfig>,
    /// Judge model; deterministic extraction only when absent.
    #[serde(default)]
    pub judge: Option<ProviderConfig>,
    #[serde(default)]
    pub limits: SimulationLimits,
    #[serde(default)]
    pub detector: CompletionDetector,
}

impl AgentsConfig {
    pub fn new(doctor: ProviderConfig) -> Self {
        Self {
            doctor,
            patient: None,
            judge: None,
            limits: SimulationLimits::default(),
            detector: CompletionDetector::default(),
        }
    }
}

pub struct Agents {
    pub config: AgentsConfig,
    doctor: ModelSource,
    patient: Option<ModelSource>,
    judge: Option<ModelSource>,
    clock: Arc<dyn Clock + Send + Sync>,
}

/// Extraction, scores and the judge calls behind them.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub extraction: ExtractionRecord,
    pub dots: DotsRecord,
    pub judge_log: Vec<CallRecord>,
}

impl Agents {
    pub fn new(config: AgentsConfig, clock: Arc<dyn Clock + Send + Sync>) -> Result<Self, ProviderError> {
        let doctor = ModelSource::from_config(&config.doctor)?;
        let patient = config.patient.as_ref().map(ModelSource::from_config).transpose()?;
        let judge = config.judge.as_ref().map(ModelSource::from_config).transpose()?;
        Ok(Self { config, doctor, patient, judge, clock })
    }

    pub fn clock(&self) -> Arc<dyn Clock + Send + Sync> {
        Arc::clone(&self.clock)
    }

    fn gateway(&self, source: &ModelSource, config: &ProviderConfig, case: &CaseRecord) -> Result<Gateway<DynModel>, ProviderError> {
        Ok(Gateway::new(source.model_for(&case.id)?, config.clone(), self.clock()))
    }

    pub fn doctor_for(&self, case: &CaseRecord) -> Result<ModelDoctor<DynModel>, ProviderError> {
        Ok(ModelDoctor::new(self.gateway(&self.doctor, &self.config.doctor, case)?))
    }

    pub fn patient_for(&self, case: &CaseRecord, seed: u64) -> Result<Box<dyn Patient + Send>, ProviderError> {
        Ok(match (&self.patient, &self.config.patient) {
            (Some(source), Some(config)) => Box::new(LlmPatient::new(self.gateway(source, config, case)?)),
            _ => Box::new(MockPatient::new(seed)),
        })
    }

    pub fn judge_for(&self, case: &CaseRecord) -> Result<Box<dyn Judge + Send>, ProviderError> {
        Ok(match (&self.judge, &self.config.judge) {
            (Some(source), Some(config)) => Box::new(ModelJudge::new(self.gateway(source, config, case)?)),
            _ => Box::new(NoJudge),
        })
    }

    pub fn judge_name(&self) -> String {
        self.config.judge.as_ref().map_or_else(|| String::from("none"), |j| j.model.clone())
    }

    /// Runs the four extraction tasks on separate threads, each with its
    /// own judge, and merges them in a fixed order.
    pub fn evaluate(&self, transcript: &Transcript, case: &CaseRecord) -> Result<Evaluation, PipelineError> {
        let mut judges = Vec::with_capacity(JudgeTask::ALL.len());
        for _ in JudgeTask::ALL {
            judges.push(self.judge_for(case).map_err(|e| PipelineError::Runner(e.to_string()))?);
        }
        let results: Vec<(Result<_, EvaluationError>, Vec<CallRecord>)> = thread::scope(|s| {
            let handles: Vec<_> = JudgeTask::ALL
                .into_iter()
                .zip(judges)
                .map(|(task, mut judge)| {
                    s.spawn(move || {
                        let out = run_task(task, transcript, case, &mut judge);
                        (out, judge.take_log())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("extraction worker panicked")).collect()
        });
        let mut outputs = Vec::new();
        let mut judge_log = Vec::new();
        for (out, log) in results {
            judge_log.extend(log);
            outputs.push(out.map_err(|error| PipelineError::Evaluation { case_id: case.id.clone(), error })?);
        }
        let extraction = merge_outputs(transcript, case, outputs);
        let dots = assemble_dots(&extraction, case, count_steps(transcript));
        Ok(Evaluation { extraction, dots, judge_log })
    }

    pub fn simulate(&self, case: &CaseRecord, run_id: &str, seed: u64) -> Result<(Transcript, Option<String>), PipelineError> {
        let runner_err = |e: ProviderError| PipelineError::Runner(e.to_string());
        let doctor = self.doctor_for(case).map_err(runner_err)?;
        let patient = self.patient_for(case, seed).map_err(runner_err)?;
        Ok(match run_simulation(case, doctor, patient, &self.config.limits, &self.config.detector, run_id, seed, self.clock()) {
            Ok(t) => (t, None),
            Err(failure) => (failure.transcript, Some(failure.error.to_string())),
        })
    }

    pub fn run(&self, case: &CaseRecord, run_id: &str, seed: u64) -> Result<CaseOutcome, PipelineError> {
        let (transcript, simulation_error) = self.simulate(case, run_id, seed)?;
        let eval = self.evaluate(&transcript, case)?;
        Ok(CaseOutcome { run_id: run_id.into(), transcript, extraction: eval.extraction, dots: eval.dots, simulation_error })
    }
}

/// One planned case run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    pub case_id: String,
    pub run_id: String,
    pub seed: u64,
}

/// Plans `repetitions` runs per case with ids and seeds derived from the
/// batch, so plans are reproducible.
pub fn plan_runs<'a>(cases: impl IntoIterator<Item = &'a CaseRecord>, repetitions: u32, batch_id: &str, seed: u64) -> Vec<RunSpec> {
    cases
        .into_iter()
        .flat_map(|c| {
            (0..repetitions).map(move |r| RunSpec {
                case_id: c.id.clone(),
                run_id: run_id_for(batch_id, &c.id, r),
                seed: case_seed(seed, &c.id, r),
            })
        })
        .collect()
}

/// Executes runs on up to `workers` threads; results come back in plan
/// order regardless of completion order.
pub fn execute<F>(plan: &[RunSpec], workers: usize, run: F) -> Vec<Result<CaseOutcome, PipelineError>>
where
    F: Fn(&RunSpec) -> Result<CaseOutcome, PipelineError> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<CaseOutcome, PipelineError>>>> = plan.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..workers.clamp(1, plan.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(spec) = plan.get(i) else { break };
                let result = run(spec);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()).expect("every planned run executes"))
        .collect()
}

/// Case runner serving prefetched results, falling back to running
/// synchronously for anything not prefetched.
pub struct PrefetchedRunner<'a> {
    pub agents: &'a Agents,
    pub done: BTreeMap<String, Result<CaseOutcome, PipelineError>>,
}

impl<'a> PrefetchedRunner<'a> {
    pub fn new(agents: &'a Agents) -> Self {
        Self { agents, done: BTreeMap::new() }
    }

    pub fn prefetch(&mut self, bank_cases: &BTreeMap<String, &CaseRecord>, plan: &[RunSpec], workers: usize) {
        let agents = self.agents;
        let results = execute(plan, workers, |spec| match bank_cases.get(&spec.case_id) {
            Some(case) => agents.run(case, &spec.run_id, spec.seed),
            None => Err(PipelineError::UnknownCase(spec.case_id.clone())),
        });
        for (spec, r) in plan.iter().zip(results) {
            self.done.insert(spec.run_id.clone(), r);
        }
    }

    /// Outcomes served so far, successful ones only, in run-id order.
    pub fn outcomes(&self) -> impl Iterator<Item = &CaseOutcome> {
        self.done.values().filter_map(|r| r.as_ref().ok())
    }
}

impl CaseRunner for PrefetchedRunner<'_> {
    fn run_case(&mut self, case: &CaseRecord, run_id: &str, seed: u64) -> Result<CaseOutcome, PipelineError> {
        match self.done.get(run_id) {
            Some(r) => r.clone(),
            None => {
                let r = self.agents.run(case, run_id, seed);
                self.done.insert(run_id.into(), r.clone());
                r
            }
        }
    }
}
