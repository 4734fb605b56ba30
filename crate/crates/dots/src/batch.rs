//! Test levels and error tests against real agents, persisted to the run
//! store and the output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dots_core::aggregate::{BatchReport, RunManifest};
use dots_core::case::{CaseBank, CaseRecord};
use dots_core::metric::Metric;
use dots_core::monitor::{
    run_error_tests, ErrorTestVerdict, run_level1, run_level2, run_level3, Level2Report, Level3Checkpoint, Level3Outcome, MetaEvalReport,
    TrapEntry, TrapReport,
};
use dots_core::case::sample_level2;
use dots_core::pipeline::{CaseOutcome, CaseRunner};
use serde::Serialize;

use crate::files::{self, read_transcript, write_json, FilesError, RunArtifacts};
use crate::runner::{plan_runs, Agents, PrefetchedRunner};
use crate::store::{RunDraft, RunEnvelope, RunFilter, RunKind, ScopedStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error(transparent)]
    Level(#[from] dots_core::monitor::LevelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Files(#[from] FilesError),
}

pub struct BatchContext<'a> {
    pub bank: &'a CaseBank,
    pub bank_dir: &'a Path,
    pub agents: &'a Agents,
    pub store: ScopedStore,
    pub out_dir: Option<PathBuf>,
    pub workers: usize,
    pub model_version: String,
}

impl BatchContext<'_> {
    fn now(&self) -> i64 {
        self.agents.clock().now_ms()
    }

    /// Commits one case run (transcript, extraction, scores) and mirrors the
    /// artifacts into the output directory.
    pub fn persist_outcome(&self, outcome: &CaseOutcome, kind: RunKind) -> Result<RunEnvelope, BatchError> {
        if let Some(dir) = &self.out_dir {
            let a = RunArtifacts::in_dir(dir, &outcome.run_id);
            a.write_transcript(&outcome.transcript)?;
            a.write_scores(&outcome.extraction, &outcome.dots)?;
        }
        let draft = RunDraft::new(&outcome.run_id, kind, self.store.namespace(), &self.model_version, self.now())
            .case(&outcome.transcript.case_id)
            .artifact("transcript", outcome.transcript.to_jsonl())
            .json_artifact("extraction", &outcome.extraction)
            .json_artifact("dots", &outcome.dots);
        Ok(self.store.commit(draft)?)
    }

    pub fn persist_report<T: Serialize>(&self, run_id: &str, kind: RunKind, file: &str, report: &T) -> Result<(), BatchError> {
        if let Some(dir) = &self.out_dir {
            write_json(&dir.join(file), report)?;
        }
        let draft = RunDraft::new(run_id, kind, self.store.namespace(), &self.model_version, self.now()).json_artifact("report", report);
        self.store.commit(draft)?;
        Ok(())
    }

    fn persist_all(&self, runner: &PrefetchedRunner<'_>) -> Result<(), BatchError> {
        for outcome in runner.outcomes() {
            self.persist_outcome(outcome, RunKind::Simulation)?;
        }
        Ok(())
    }

    fn case_index(&self) -> BTreeMap<String, &CaseRecord> {
        self.bank.cases().map(|c| (c.id.clone(), c)).collect()
    }

    pub fn level1(&self, traps: &[TrapEntry], batch_id: &str, seed: u64) -> Result<TrapReport, BatchError> {
        let mut runner = PrefetchedRunner::new(self.agents);
        let cases: Vec<&CaseRecord> = traps.iter().filter_map(|t| self.bank.get(&t.case_id)).collect();
        runner.prefetch(&self.case_index(), &plan_runs(cases, 1, batch_id, seed), self.workers);
        let report = run_level1(traps, self.bank, &mut runner, batch_id, seed);
        self.persist_all(&runner)?;
        self.persist_report(batch_id, RunKind::Level1, "level1.json", &report)?;
        Ok(report)
    }

    pub fn level2(&self, per_category: usize, prior: &BTreeMap<String, f64>, manifest: RunManifest) -> Result<Level2Report, BatchError> {
        let mut runner = PrefetchedRunner::new(self.agents);
        if let Ok(selection) = sample_level2(self.bank, per_category, prior, manifest.seed) {
            let cases: Vec<&CaseRecord> = selection.case_ids().iter().filter_map(|id| self.bank.get(id)).collect();
            runner.prefetch(&self.case_index(), &plan_runs(cases, 1, &manifest.batch_id, manifest.seed), self.workers);
        }
        let batch_id = manifest.batch_id.clone();
        let report = run_level2(self.bank, per_category, prior, &mut runner, manifest)?;
        self.persist_all(&runner)?;
        if let Some(dir) = &self.out_dir {
            write_json(&dir.join("report.json"), &report)?;
        }
        // Stored like the other levels so comparisons and priors can read it.
        let draft = RunDraft::new(&batch_id, RunKind::Level2, self.store.namespace(), &self.model_version, self.now())
            .json_artifact("report", &report.report)
            .json_artifact("selection", &report.selection);
        self.store.commit(draft)?;
        Ok(report)
    }

    /// Level 3 plus the error tests that accompany it.
    pub fn level3(&self, manifest: RunManifest, checkpoint: Option<Level3Checkpoint>) -> Result<(Level3Outcome, MetaEvalReport), BatchError> {
        let pending = checkpoint.clone().unwrap_or_else(|| Level3Checkpoint::fresh(self.bank));
        let cases: Vec<&CaseRecord> = pending.remaining.iter().filter_map(|id| self.bank.get(id)).collect();
        let mut runner = PrefetchedRunner::new(self.agents);
        runner.prefetch(&self.case_index(), &plan_runs(cases, 1, &manifest.batch_id, manifest.seed), self.workers);
        let batch_id = manifest.batch_id.clone();
        let outcome = run_level3(self.bank, &mut runner, manifest, checkpoint);
        self.persist_all(&runner)?;
        if let Some(dir) = &self.out_dir {
            write_json(&dir.join("level3.checkpoint.json"), &outcome.checkpoint)?;
        }
        let meta = self.error_tests();
        if outcome.failure.is_none() {
            if let Some(report) = &outcome.report {
                self.persist_report(&batch_id, RunKind::Level3, "report.json", report)?;
            }
            self.persist_report(&format!("{batch_id}-error-tests"), RunKind::ErrorTest, "error_tests.json", &meta)?;
        }
        Ok((outcome, meta))
    }

    /// Scores every error test with the judge configured for that test case.
    pub fn error_tests(&self) -> MetaEvalReport {
        let mut results = Vec::new();
        for case in self.bank.error_tests() {
            let mut judge = match self.agents.judge_for(case) {
                Ok(j) => j,
                Err(e) => {
                    results.push(ErrorTestVerdict { case_id: case.id.clone(), pass: false, checks: Vec::new(), error: Some(e.to_string()) });
                    continue;
                }
            };
            let single = CaseBank::from_cases(self.error_test_closure(case)).expect("ids are unique within a bank");
            results.extend(run_error_tests(&single, |p| read_transcript(&self.bank_dir.join(p)).ok(), &mut judge).results);
        }
        let pass = results.iter().all(|r| r.pass);
        MetaEvalReport { results, pass }
    }

    /// The error test case together with the base case it corrupts.
    fn error_test_closure(&self, case: &CaseRecord) -> Vec<CaseRecord> {
        let mut cases = vec![case.clone()];
        if let Some(base) = case.error_test_spec.as_ref().and_then(|s| self.bank.get(&s.base_case)) {
            if base.id != case.id {
                cases.push(base.clone());
            }
        }
        cases
    }

    /// Latest committed batch report of this model version.
    pub fn latest_report(&self, kinds: &[RunKind]) -> Option<BatchReport> {
        let filter = RunFilter { model_version: Some(self.model_version.clone()), ..RunFilter::default() };
        self.store
            .query(&filter)
            .into_iter()
            .rev()
            .filter(|e| kinds.contains(&e.kind))
            .find_map(|e| self.store.artifact_json::<BatchReport>(&e.run_id, "report").ok())
    }
}

/// Prior scores per case from an earlier report: the minimum of diagnosis,
/// treatment and weighted diagnostic accuracy means.
pub fn prior_from_report(report: &BatchReport) -> BTreeMap<String, f64> {
    report
        .cases
        .iter()
        .map(|c| {
            let get = |m: Metric| c.means.get(&m).copied().unwrap_or(100.0);
            let score = get(Metric::DiagnosisAccuracy).min(get(Metric::TreatmentAccuracy)).min(get(Metric::DiagnosticAccuracy));
            (c.case_id.clone(), score)
        })
        .collect()
}

/// Runs one planned case directly; used by `simulate` and by probes.
pub fn run_single(agents: &Agents, case: &CaseRecord, run_id: &str, seed: u64) -> Result<CaseOutcome, dots_core::pipeline::PipelineError> {
    struct Direct<'a>(&'a Agents);
    impl CaseRunner for Direct<'_> {
        fn run_case(&mut self, case: &CaseRecord, run_id: &str, seed: u64) -> Result<CaseOutcome, dots_core::pipeline::PipelineError> {
            self.0.run(case, run_id, seed)
        }
    }
    Direct(agents).run_case(case, run_id, seed)
}

pub fn load_checkpoint(path: &Path) -> Result<Level3Checkpoint, FilesError> {
    files::read_json(path)
}
