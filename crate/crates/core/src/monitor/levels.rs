//! The three test levels and evaluator meta-evaluation.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::probe::TrapRule;
use super::schedule::TrapEntry;
use crate::aggregate::{aggregate_batch, AggregateError, BatchReport, CaseRun, RunManifest};
use crate::case::{sample_level2, CaseBank, CaseRecord, ErrorTestSpec, Level2Selection, SamplingError};
use crate::dialogue::Transcript;
use crate::evaluator::{EvaluationError, Judge};
use crate::metric::Metric;
use crate::pipeline::{case_seed, run_id_for, score_transcript, CaseRunner, PipelineError};
use crate::scoring::DotsRecord;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LevelError {
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapOutcome {
    pub case_id: String,
    pub run_id: String,
    pub pass: bool,
    pub failures: Vec<String>,
    pub dots: Option<DotsRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapReport {
    pub batch_id: String,
    pub results: Vec<TrapOutcome>,
    pub pass: bool,
}

/// Level 1: every trap end-to-end. A trap that cannot be run at all counts
/// as failed.
pub fn run_level1<R: CaseRunner>(
    traps: &[TrapEntry],
    bank: &CaseBank,
    runner: &mut R,
    batch_id: &str,
    seed: u64,
) -> TrapReport {
    let results: Vec<TrapOutcome> = traps
        .iter()
        .map(|trap| {
            let run_id = run_id_for(batch_id, &trap.case_id, 0);
            let outcome = bank
                .get(&trap.case_id)
                .ok_or_else(|| PipelineError::UnknownCase(trap.case_id.clone()))
                .and_then(|case| runner.run_case(case, &run_id, case_seed(seed, &case.id, 0)));
            trap_outcome(&trap.case_id, run_id, &trap.rule, outcome.map(|o| o.dots))
        })
        .collect();
    let pass = results.iter().all(|r| r.pass);
    TrapReport { batch_id: batch_id.into(), results, pass }
}

fn trap_outcome(case_id: &str, run_id: String, rule: &TrapRule, dots: Result<DotsRecord, PipelineError>) -> TrapOutcome {
    match dots {
        Ok(dots) => {
            let failures = rule.failures(&dots);
            TrapOutcome { case_id: case_id.into(), run_id, pass: failures.is_empty(), failures, dots: Some(dots) }
        }
        Err(e) => TrapOutcome { case_id: case_id.into(), run_id, pass: false, failures: alloc::vec![e.to_string()], dots: None },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level2Report {
    pub selection: Level2Selection,
    pub report: BatchReport,
    pub runs: Vec<CaseRun>,
}

/// Level 2: category-stratified sample with forced low scorers.
pub fn run_level2<R: CaseRunner>(
    bank: &CaseBank,
    per_category: usize,
    prior: &BTreeMap<String, f64>,
    runner: &mut R,
    mut manifest: RunManifest,
) -> Result<Level2Report, LevelError> {
    let selection = sample_level2(bank, per_category, prior, manifest.seed)?;
    let ids = selection.case_ids();
    if ids.is_empty() {
        return Err(AggregateError::EmptyBatch.into());
    }
    let mut runs = Vec::with_capacity(ids.len());
    for id in &ids {
        let case = bank.get(id).ok_or_else(|| PipelineError::UnknownCase(id.clone()))?;
        runs.push(run_one(case, runner, &manifest)?);
    }
    manifest.level = Some(2);
    let report = aggregate_batch(&runs, manifest)?;
    Ok(Level2Report { selection, report, runs })
}

fn run_one<R: CaseRunner>(case: &CaseRecord, runner: &mut R, manifest: &RunManifest) -> Result<CaseRun, PipelineError> {
    let run_id = run_id_for(&manifest.batch_id, &case.id, 0);
    let outcome = runner.run_case(case, &run_id, case_seed(manifest.seed, &case.id, 0))?;
    Ok(CaseRun::new(case, &run_id, outcome.dots))
}

/// Progress of a Level-3 batch, sufficient to resume it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Level3Checkpoint {
    pub completed: Vec<CaseRun>,
    pub remaining: Vec<String>,
}

impl Level3Checkpoint {
    /// All eligible cases still to run.
    pub fn fresh(bank: &CaseBank) -> Self {
        Self { completed: Vec::new(), remaining: bank.regression_cases().map(|c| c.id.clone()).collect() }
    }

    pub fn is_done(&self) -> bool {
        self.remaining.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level3Outcome {
    /// Aggregate over the completed runs; partial when `failure` is set.
    pub report: Option<BatchReport>,
    pub checkpoint: Level3Checkpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Level 3: every non-Technical clinical case. Stops at the first failed
/// run and hands back a checkpoint; call again with it to resume.
pub fn run_level3<R: CaseRunner>(
    bank: &CaseBank,
    runner: &mut R,
    mut manifest: RunManifest,
    checkpoint: Option<Level3Checkpoint>,
) -> Level3Outcome {
    let mut checkpoint = checkpoint.unwrap_or_else(|| Level3Checkpoint::fresh(bank));
    manifest.level = Some(3);
    let mut failure = None;
    while let Some(id) = checkpoint.remaining.first().cloned() {
        let result = bank
            .get(&id)
            .ok_or_else(|| PipelineError::UnknownCase(id.clone()))
            .and_then(|case| run_one(case, runner, &manifest));
        match result {
            Ok(run) => {
                checkpoint.completed.push(run);
                checkpoint.remaining.remove(0);
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    let report = aggregate_batch(&checkpoint.completed, manifest).ok();
    Level3Outcome { report, checkpoint, failure }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDrop {
    pub metric: Metric,
    pub reference: f64,
    pub current: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationVerdict {
    pub degraded: bool,
    pub drops: Vec<MetricDrop>,
}

/// A Level-3 run is degraded when any percentage metric average fell more
/// than `delta` points below the reference run. Without a reference there
/// is nothing to reproduce a drop against, so the run is not degraded.
pub fn level3_degraded(current: &BatchReport, reference: Option<&BatchReport>, delta: f64) -> DegradationVerdict {
    let Some(reference) = reference else {
        return DegradationVerdict { degraded: false, drops: Vec::new() };
    };
    let drops: Vec<MetricDrop> = Metric::ALL
        .into_iter()
        .filter(|m| m.is_percentage())
        .filter_map(|metric| {
            let r = *reference.averages.get(&metric)?;
            let c = *current.averages.get(&metric)?;
            (c < r - delta).then_some(MetricDrop { metric, reference: r, current: c })
        })
        .collect();
    DegradationVerdict { degraded: !drops.is_empty(), drops }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCheck {
    pub metric: Metric,
    pub expected: f64,
    pub observed: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTestVerdict {
    pub case_id: String,
    pub pass: bool,
    pub checks: Vec<MetricCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// PASS iff every expected delta is observed within tolerance. A score that
/// fails to drop is a deviation like any other.
pub fn check_error_test(case_id: &str, spec: &ErrorTestSpec, observed: &BTreeMap<Metric, f64>) -> ErrorTestVerdict {
    let checks: Vec<MetricCheck> = spec
        .expected_deltas
        .iter()
        .map(|(&metric, &expected)| {
            let seen = observed.get(&metric).copied();
            let pass = seen.is_some_and(|o| (o - expected).abs() <= spec.tolerance);
            MetricCheck { metric, expected, observed: seen, tolerance: spec.tolerance, pass }
        })
        .collect();
    let pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
    ErrorTestVerdict { case_id: case_id.into(), pass, checks, error: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaEvalReport {
    pub results: Vec<ErrorTestVerdict>,
    pub pass: bool,
}

/// Scores each error test's reference transcript against both the intact
/// and the corrupted gold standard and checks the observed deltas.
/// `load_transcript` resolves the bank-relative transcript path.
pub fn run_error_tests<J, L>(bank: &CaseBank, mut load_transcript: L, judge: &mut J) -> MetaEvalReport
where
    J: Judge + ?Sized,
    L: FnMut(&str) -> Option<Transcript>,
{
    let results: Vec<ErrorTestVerdict> = bank
        .error_tests()
        .filter_map(|case| case.error_test_spec.as_ref().map(|spec| (case, spec)))
        .map(|(case, spec)| {
            let fail = |msg: String| ErrorTestVerdict { case_id: case.id.clone(), pass: false, checks: Vec::new(), error: Some(msg) };
            let Some(base) = bank.get(&spec.base_case) else {
                return fail(alloc::format!("base case {:?} not in bank", spec.base_case));
            };
            let Some(transcript) = load_transcript(&spec.reference_transcript) else {
                return fail(alloc::format!("reference transcript {:?} not found", spec.reference_transcript));
            };
            match error_test_deltas(&transcript, base, case, judge) {
                Ok(observed) => check_error_test(&case.id, spec, &observed),
                Err(e) => fail(e.to_string()),
            }
        })
        .collect();
    let pass = results.iter().all(|r| r.pass);
    MetaEvalReport { results, pass }
}

/// corrupted − intact for every metric.
pub fn error_test_deltas<J: Judge + ?Sized>(
    transcript: &Transcript,
    base: &CaseRecord,
    corrupted: &CaseRecord,
    judge: &mut J,
) -> Result<BTreeMap<Metric, f64>, EvaluationError> {
    let (_, intact) = score_transcript(transcript, base, judge)?;
    let (_, broken) = score_transcript(transcript, corrupted, judge)?;
    Ok(Metric::ALL.into_iter().map(|m| (m, broken.value(m) - intact.value(m))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::tests::dots;
    use crate::case::Category;
    use crate::pipeline::CaseOutcome;
    use crate::testutil::sample_case;
    use alloc::format;
    use alloc::vec;

    fn spec() -> ErrorTestSpec {
        ErrorTestSpec {
            corruption: "swap treatment weights".into(),
            base_case: "base".into(),
            reference_transcript: "t.jsonl".into(),
            expected_deltas: [(Metric::TreatmentWeightedScore, -50.0)].into_iter().collect(),
            tolerance: 5.0,
        }
    }

    fn observed(v: f64) -> BTreeMap<Metric, f64> {
        [(Metric::TreatmentWeightedScore, v)].into_iter().collect()
    }

    #[test]
    fn error_test_tolerance() {
        assert!(check_error_test("e", &spec(), &observed(-48.0)).pass);
        assert!(!check_error_test("e", &spec(), &observed(-20.0)).pass);
        assert!(!check_error_test("e", &spec(), &observed(0.0)).pass);
        assert!(!check_error_test("e", &spec(), &BTreeMap::new()).pass);
    }

    fn bank(n: usize) -> CaseBank {
        let cases = (0..n).map(|i| {
            let mut c = sample_case();
            c.id = format!("c{i}");
            c
        });
        let mut tech = sample_case();
        tech.id = "tech".into();
        tech.scopes = vec!["Technical".into()];
        CaseBank::from_cases(cases.chain([tech])).unwrap()
    }

    fn manifest() -> RunManifest {
        RunManifest {
            batch_id: "b".into(),
            model_version: "v1".into(),
            seed: 3,
            started_at: 0,
            finished_at: 0,
            level: None,
        }
    }

    fn fake(value: f64) -> impl FnMut(&CaseRecord, &str, u64) -> Result<CaseOutcome, PipelineError> {
        move |case, run_id, _| {
            assert!(!case.is_technical(), "technical case executed");
            Ok(CaseOutcome {
                run_id: run_id.into(),
                transcript: Transcript {
                    case_id: case.id.clone(),
                    run_id: run_id.into(),
                    turns: vec![],
                    is_conversation_complete: true,
                    termination: crate::dialogue::Termination::DoctorFinalized,
                    error: None,
                    doctor: "x".into(),
                    patient: "y".into(),
                    seed: 0,
                },
                extraction: crate::evaluator::ExtractionRecord::empty(&case.id, run_id),
                dots: dots(value, case.num_steps),
                simulation_error: None,
            })
        }
    }

    #[test]
    fn level3_skips_technical_and_resumes() {
        let bank = bank(4);
        let mut calls = 0;
        let mut inner = fake(80.0);
        let mut flaky = |case: &CaseRecord, run_id: &str, seed: u64| {
            calls += 1;
            if calls == 3 {
                return Err(PipelineError::Runner("worker lost".into()));
            }
            inner(case, run_id, seed)
        };
        let first = run_level3(&bank, &mut flaky, manifest(), None);
        assert!(first.failure.is_some());
        assert_eq!(first.checkpoint.completed.len(), 2);
        assert_eq!(first.report.as_ref().unwrap().case_count, 2);
        let second = run_level3(&bank, &mut flaky, manifest(), Some(first.checkpoint));
        assert!(second.failure.is_none());
        assert!(second.checkpoint.is_done());
        assert_eq!(second.report.unwrap().case_count, 4);
    }

    #[test]
    fn level2_reports_forced_cases() {
        let bank = bank(6);
        let prior: BTreeMap<String, f64> = [("c4".to_string(), 40.0)].into_iter().collect();
        let r = run_level2(&bank, 2, &prior, &mut fake(90.0), manifest()).unwrap();
        assert_eq!(r.selection.forced(), ["c4"]);
        assert_eq!(r.report.case_count, 2);
        assert_eq!(r.report.manifest.level, Some(2));
        let empty = CaseBank::from_cases([]).unwrap();
        assert!(matches!(
            run_level2(&empty, 2, &prior, &mut fake(90.0), manifest()),
            Err(LevelError::Aggregate(AggregateError::EmptyBatch))
        ));
    }

    #[test]
    fn level1_flags_critical_violation_and_extra_questions() {
        let mut bank_cases: Vec<CaseRecord> = Vec::new();
        for id in ["ok", "rash"] {
            let mut c = sample_case();
            c.id = id.into();
            c.category = Category::Pediatrics;
            bank_cases.push(c);
        }
        let bank = CaseBank::from_cases(bank_cases).unwrap();
        let mut rash = TrapEntry::new("rash");
        rash.rule.max_steps = Some(0);
        rash.rule.require_step_band = false;
        let mut runner = fake(100.0);
        let report = run_level1(&[TrapEntry::new("ok"), rash.clone()], &bank, &mut runner, "l1", 0);
        assert!(report.results[0].pass);
        assert!(!report.results[1].pass, "asking questions must fail an immediate-escalation trap");
        assert!(!report.pass);

        let mut violating = |case: &CaseRecord, run_id: &str, seed: u64| {
            let mut out = fake(100.0)(case, run_id, seed)?;
            out.dots.critical_passed = 0.0;
            out.dots.critical_flag = true;
            Ok(out)
        };
        let report = run_level1(&[TrapEntry::new("ok")], &bank, &mut violating, "l1", 0);
        assert_eq!(report.results[0].failures, ["critical condition violated"]);
        let missing = run_level1(&[TrapEntry::new("nope")], &bank, &mut runner, "l1", 0);
        assert!(!missing.pass);
    }

    #[test]
    fn degradation_needs_a_reference() {
        let bank = bank(2);
        let good = run_level3(&bank, &mut fake(90.0), manifest(), None).report.unwrap();
        let bad = run_level3(&bank, &mut fake(70.0), manifest(), None).report.unwrap();
        assert!(level3_degraded(&bad, Some(&good), 5.0).degraded);
        assert!(!level3_degraded(&good, Some(&good), 5.0).degraded);
        assert!(!level3_degraded(&bad, None, 5.0).degraded);
    }
}
