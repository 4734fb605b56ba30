use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::critical::verify_critical_conditions;
use super::judge::*;
use super::record::*;
use crate::case::{CaseRecord, WeightedStandard};
use crate::dialogue::{FinalRecommendations, Speaker, Transcript, TurnKind};
use crate::icd10::match_icd10;
use crate::text::{contains_phrase, match_clinical_text, normalize, same_text};

/// An assessment task failed; the run is marked evaluator-failed.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{task:?} task failed: {error}")]
pub struct EvaluationError {
    pub task: JudgeTask,
    pub error: JudgeError,
}

/// Output of the clinical task.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClinicalPart {
    pub diagnoses_results: Vec<DiagnosisResult>,
    pub icd10_results: Vec<Icd10Result>,
    pub differential_results: Vec<DifferentialResult>,
    pub predicted_differential_ranked: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TreatmentPart {
    pub items: Vec<ExtractedItem>,
    pub counts: TreatmentCounts,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WorkupPart {
    pub items: Vec<ExtractedItem>,
    pub matched: WorkupMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskOutput {
    Clinical(ClinicalPart),
    History { questions: Vec<QuestionResult> },
    Treatment(TreatmentPart),
    Workup(WorkupPart),
}

/// Where final recommendations come from.
enum FinalBlock<'a> {
    Absent,
    Structured { block: FinalRecommendations, text: &'a str },
    FreeText(&'a str),
}

fn final_block(transcript: &Transcript) -> FinalBlock<'_> {
    match transcript.final_block() {
        None => FinalBlock::Absent,
        Some(turn) => match FinalRecommendations::parse(&turn.text) {
            Some(block) => FinalBlock::Structured { block, text: &turn.text },
            None => FinalBlock::FreeText(&turn.text),
        },
    }
}

/// Verbatim support for an item inside `scope`: the judge's quote when it
/// occurs there, else the item text itself, else nothing.
pub fn anchor_evidence(quote: Option<&str>, item: &str, scope: &str) -> Option<String> {
    match quote {
        Some(q) if !q.trim().is_empty() && scope.contains(q) => Some(q.to_string()),
        _ if !item.trim().is_empty() && scope.contains(item) => Some(item.to_string()),
        _ => None,
    }
}

fn evidence_or_none(evidence: &Option<String>) -> String {
    evidence.clone().unwrap_or_else(|| NO_EVIDENCE.to_string())
}

/// Gold text a candidate stands for: an equal gold text, or the first gold
/// text when the candidate equals an accepted synonym.
fn canonical_gold(candidate: &str, case: &CaseRecord) -> Option<String> {
    if let Some(g) = case.diagnosis.texts.iter().find(|g| same_text(candidate, g)) {
        return Some(g.clone());
    }
    if case.additional_answers.iter().any(|s| same_text(candidate, s)) {
        return case.diagnosis.texts.first().cloned();
    }
    None
}

fn call<T: serde::de::DeserializeOwned, J: Judge + ?Sized>(
    judge: &mut J,
    task: JudgeTask,
    instructions: &str,
    material: &str,
) -> Result<T, EvaluationError> {
    let wrap = |error| EvaluationError { task, error };
    let value = judge.extract(task, judge_messages(task, instructions, material), &task.schema()).map_err(wrap)?;
    decode(value).map_err(wrap)
}

fn bullet_list(items: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str("- ");
        out.push_str(item.as_ref());
        out.push('\n');
    }
    if out.is_empty() {
        out.push_str("(none)\n");
    }
    out
}

fn standard_names(standard: &WeightedStandard) -> Vec<&str> {
    standard
        .mandatory
        .iter()
        .map(|m| m.name.as_str())
        .chain(standard.optional.iter().map(|o| o.name.as_str()))
        .collect()
}

// ---------------------------------------------------------------- clinical

struct RawDiagnosis {
    text: String,
    quote: Option<String>,
    gold_match: Option<String>,
}

struct RawDifferential {
    text: String,
    quote: Option<String>,
    matches_expected: Option<String>,
}

fn clinical_task<J: Judge + ?Sized>(transcript: &Transcript, case: &CaseRecord, judge: &mut J) -> Result<ClinicalPart, EvaluationError> {
    let (diagnoses, codes, differential, scope): (Vec<RawDiagnosis>, Vec<(String, Option<String>)>, Vec<RawDifferential>, &str) =
        match final_block(transcript) {
            FinalBlock::Absent => return Ok(ClinicalPart::default_for(case)),
            FinalBlock::Structured { block, text } => (
                block.diagnoses.into_iter().map(|d| RawDiagnosis { text: d, quote: None, gold_match: None }).collect(),
                block.icd10.into_iter().map(|c| (c, None)).collect(),
                block
                    .differential
                    .into_iter()
                    .map(|d| RawDifferential { text: d, quote: None, matches_expected: None })
                    .collect(),
                text,
            ),
            FinalBlock::FreeText(text) if judge.enabled() => {
                let instructions = "From the doctor's final recommendation block, list the final diagnoses, \
                    the ICD-10 codes stated, and the differential diagnoses in the order given. For each diagnosis \
                    set \"gold_match\" to the reference diagnosis it is clinically equivalent to, or null. For each \
                    differential item set \"matches_expected\" to the expected differential item it corresponds to, or null.";
                let material = format!(
                    "Reference diagnoses:\n{}Expected differential:\n{}Final recommendation block:\n{}",
                    bullet_list(case.diagnosis.texts.iter().chain(case.additional_answers.iter())),
                    bullet_list(&case.differential),
                    text
                );
                let reply: ClinicalReply = call(judge, JudgeTask::Clinical, instructions, &material)?;
                (
                    reply
                        .diagnoses
                        .into_iter()
                        .map(|d| RawDiagnosis { text: d.text, quote: Some(d.evidence), gold_match: d.gold_match })
                        .collect(),
                    reply.icd10_codes.into_iter().map(|c| (c.code, Some(c.evidence))).collect(),
                    reply
                        .differential
                        .into_iter()
                        .map(|d| RawDifferential { text: d.text, quote: Some(d.evidence), matches_expected: d.matches_expected })
                        .collect(),
                    text,
                )
            }
            FinalBlock::FreeText(_) => return Ok(ClinicalPart::default_for(case)),
        };

    let mut part = ClinicalPart::default();
    let mut ranked: Vec<String> = Vec::new();
    let push_ranked = |ranked: &mut Vec<String>, text: String| {
        let key = normalize(&text);
        if !key.is_empty() && !ranked.iter().any(|r| normalize(r) == key) {
            ranked.push(text);
        }
    };

    for d in diagnoses {
        let evidence = anchor_evidence(d.quote.as_deref(), &d.text, scope);
        let judge_gold = d.gold_match.as_deref().and_then(|g| canonical_gold(g, case));
        let correct = evidence.is_some()
            && match_clinical_text(&d.text, &case.diagnosis.texts, &case.additional_answers, || judge_gold.is_some());
        let matched_gold = if correct { canonical_gold(&d.text, case).or(judge_gold) } else { None };
        if evidence.is_some() {
            push_ranked(&mut ranked, matched_gold.clone().unwrap_or_else(|| d.text.clone()));
        }
        part.diagnoses_results.push(DiagnosisResult {
            predicted: d.text,
            correct,
            evidence: evidence_or_none(&evidence),
            matched_gold,
        });
    }

    for (code, quote) in codes {
        let evidence = anchor_evidence(quote.as_deref(), &code, scope);
        let correct = evidence.is_some() && match_icd10(&code, &case.diagnosis.icd10).unwrap_or(false);
        part.icd10_results.push(Icd10Result { predicted: code, correct, evidence: evidence_or_none(&evidence) });
    }

    let supported: Vec<RawDifferential> =
        differential.into_iter().filter(|d| anchor_evidence(d.quote.as_deref(), &d.text, scope).is_some()).collect();
    let mut used = alloc::vec![false; supported.len()];
    for expected in &case.differential {
        let hit = supported.iter().enumerate().find(|(i, d)| {
            !used[*i]
                && (same_text(&d.text, expected) || d.matches_expected.as_deref().is_some_and(|m| same_text(m, expected)))
        });
        let matched_predicted = hit.map(|(i, d)| {
            used[i] = true;
            d.text.clone()
        });
        part.differential_results.push(DifferentialResult {
            expected: expected.clone(),
            correct: matched_predicted.is_some(),
            matched_predicted,
        });
    }
    for d in supported {
        push_ranked(&mut ranked, d.text);
    }
    part.predicted_differential_ranked = ranked;
    Ok(part)
}

impl ClinicalPart {
    /// Nothing predicted: every expected differential item is unmatched.
    fn default_for(case: &CaseRecord) -> Self {
        Self {
            differential_results: case
                .differential
                .iter()
                .map(|e| DifferentialResult { expected: e.clone(), correct: false, matched_predicted: None })
                .collect(),
            ..Self::default()
        }
    }
}

// ----------------------------------------------------------------- history

fn history_task<J: Judge + ?Sized>(
    transcript: &Transcript,
    case: &CaseRecord,
    judge: &mut J,
) -> Result<Vec<QuestionResult>, EvaluationError> {
    let asked: Vec<&str> = transcript
        .turns
        .iter()
        .filter(|t| t.speaker == Speaker::Doctor && t.kind == TurnKind::Question)
        .map(|t| t.text.as_str())
        .collect();
    let mut results: Vec<QuestionResult> = case
        .control_questions
        .iter()
        .map(|q| match asked.iter().find(|turn| contains_phrase(turn, q)) {
            Some(turn) => QuestionResult { question: q.clone(), asked: true, evidence: turn.to_string() },
            None => QuestionResult { question: q.clone(), asked: false, evidence: NO_EVIDENCE.to_string() },
        })
        .collect();
    let undecided: Vec<usize> = (0..results.len()).filter(|&i| !results[i].asked).collect();
    if undecided.is_empty() || asked.is_empty() || !judge.enabled() {
        return Ok(results);
    }
    let instructions = "For each control question, decide whether the doctor asked it, allowing paraphrase. \
        Set \"asked\" and quote the doctor's question as \"evidence\" (empty string when not asked).";
    let material = format!(
        "Control questions:\n{}Doctor's questions:\n{}",
        bullet_list(undecided.iter().map(|&i| &results[i].question)),
        bullet_list(&asked)
    );
    let reply: HistoryReply = call(judge, JudgeTask::History, instructions, &material)?;
    for &i in &undecided {
        let verdict = reply.questions.iter().find(|j| same_text(&j.question, &results[i].question));
        if let Some(j) = verdict.filter(|j| j.asked) {
            if !j.evidence.trim().is_empty() && asked.iter().any(|turn| turn.contains(j.evidence.as_str())) {
                results[i].asked = true;
                results[i].evidence = j.evidence.clone();
            }
        }
    }
    Ok(results)
}

// ------------------------------------------------- treatments and workup

struct RawItem {
    name: String,
    quote: Option<String>,
    matches: Option<String>,
    targets: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Mandatory(usize),
    Optional(usize),
    Unmatched,
}

fn names_match(item: &str, name: &str, aliases: &[String]) -> bool {
    core::iter::once(name)
        .chain(aliases.iter().map(String::as_str))
        .any(|n| same_text(item, n) || contains_phrase(item, n))
}

fn judge_names(asserted: &str, name: &str, aliases: &[String]) -> bool {
    core::iter::once(name).chain(aliases.iter().map(String::as_str)).any(|n| same_text(asserted, n))
}

fn slot_of(item: &RawItem, standard: &WeightedStandard) -> Slot {
    if let Some(i) = standard.mandatory.iter().position(|m| names_match(&item.name, &m.name, &m.aliases)) {
        return Slot::Mandatory(i);
    }
    if let Some(i) = standard.optional.iter().position(|o| names_match(&item.name, &o.name, &o.aliases)) {
        return Slot::Optional(i);
    }
    if let Some(asserted) = item.matches.as_deref() {
        if let Some(i) = standard.mandatory.iter().position(|m| judge_names(asserted, &m.name, &m.aliases)) {
            return Slot::Mandatory(i);
        }
        if let Some(i) = standard.optional.iter().position(|o| judge_names(asserted, &o.name, &o.aliases)) {
            return Slot::Optional(i);
        }
    }
    Slot::Unmatched
}

/// Items from the final block that carry evidence, with their slot.
fn supported_items(raw: Vec<RawItem>, scope: &str, standard: &WeightedStandard) -> Vec<(RawItem, ExtractedItem, Slot)> {
    raw.into_iter()
        .filter_map(|item| {
            let evidence = anchor_evidence(item.quote.as_deref(), &item.name, scope)?;
            let slot = slot_of(&item, standard);
            let extracted = ExtractedItem { name: item.name.clone(), evidence };
            Some((item, extracted, slot))
        })
        .collect()
}

fn raw_items<J: Judge + ?Sized>(
    task: JudgeTask,
    transcript: &Transcript,
    standard: &WeightedStandard,
    judge: &mut J,
) -> Result<Option<(Vec<RawItem>, String)>, EvaluationError> {
    match final_block(transcript) {
        FinalBlock::Absent => Ok(None),
        FinalBlock::Structured { block, text } => {
            let names = if task == JudgeTask::Treatment { block.treatments } else { block.investigations };
            let items = names.into_iter().map(|name| RawItem { name, quote: None, matches: None, targets: None }).collect();
            Ok(Some((items, text.to_string())))
        }
        FinalBlock::FreeText(text) if judge.enabled() => {
            let material = format!("Reference items:\n{}Final recommendation block:\n{}", bullet_list(standard_names(standard)), text);
            let items = if task == JudgeTask::Treatment {
                let instructions = "List every treatment the doctor prescribes or recommends in the final block. Set \
                    \"matches\" to the reference item it is equivalent to, or null. When an item is a different agent \
                    given for the same purpose as a reference item, set \"targets\" to that reference item.";
                let reply: TreatmentReply = call(judge, task, instructions, &material)?;
                reply.treatments
            } else {
                let instructions = "List every investigation the doctor recommends in the final block. Set \"matches\" \
                    to the reference item it is equivalent to, or null.";
                let reply: WorkupReply = call(judge, task, instructions, &material)?;
                reply.investigations
            };
            let items = items
                .into_iter()
                .map(|j| RawItem { name: j.name, quote: Some(j.evidence), matches: j.matches, targets: j.targets })
                .collect();
            Ok(Some((items, text.to_string())))
        }
        FinalBlock::FreeText(_) => Ok(None),
    }
}

/// Buckets prescribed treatments into matching, extra, missing and different.
fn classify_treatments(items: Vec<(RawItem, ExtractedItem, Slot)>, standard: &WeightedStandard) -> TreatmentPart {
    let mut counts = TreatmentCounts::default();
    let mut covered = alloc::vec![false; standard.mandatory.len()];
    let mut extracted = Vec::new();
    let mut unmatched = Vec::new();
    for (raw, item, slot) in items {
        match slot {
            Slot::Mandatory(i) if !covered[i] => {
                covered[i] = true;
                counts.matching += 1;
                counts.matching_items.push(standard.mandatory[i].name.clone());
            }
            Slot::Mandatory(_) => {}
            Slot::Optional(i) => counts.optional_items.push(standard.optional[i].name.clone()),
            Slot::Unmatched => unmatched.push(raw),
        }
        extracted.push(item);
    }
    for raw in unmatched {
        let target = raw.targets.as_deref().and_then(|t| {
            standard.mandatory.iter().enumerate().position(|(i, m)| !covered[i] && judge_names(t, &m.name, &m.aliases))
        });
        match target {
            Some(i) => {
                covered[i] = true;
                counts.different += 1;
                counts.different_items.push(raw.name);
            }
            None => {
                counts.extra += 1;
                counts.extra_items.push(raw.name);
            }
        }
    }
    for (i, m) in standard.mandatory.iter().enumerate() {
        if !covered[i] {
            counts.missing += 1;
            counts.missing_items.push(m.name.clone());
        }
    }
    TreatmentPart { items: extracted, counts }
}

fn treatment_task<J: Judge + ?Sized>(transcript: &Transcript, case: &CaseRecord, judge: &mut J) -> Result<TreatmentPart, EvaluationError> {
    let standard = case.treatment_standard();
    let raw = raw_items(JudgeTask::Treatment, transcript, standard, judge)?;
    let items = match raw {
        Some((items, scope)) => supported_items(items, &scope, standard),
        None => Vec::new(),
    };
    Ok(classify_treatments(items, standard))
}

fn workup_task<J: Judge + ?Sized>(transcript: &Transcript, case: &CaseRecord, judge: &mut J) -> Result<WorkupPart, EvaluationError> {
    let standard = &case.diagnostic_workup;
    let items = match raw_items(JudgeTask::Workup, transcript, standard, judge)? {
        Some((items, scope)) => supported_items(items, &scope, standard),
        None => Vec::new(),
    };
    let mut part = WorkupPart::default();
    for (raw, item, slot) in items {
        match slot {
            Slot::Mandatory(i) => {
                let name = &standard.mandatory[i].name;
                if !part.matched.matched_mandatory.contains(name) {
                    part.matched.matched_mandatory.push(name.clone());
                }
            }
            Slot::Optional(i) => part.matched.matched_optional.push(standard.optional[i].name.clone()),
            Slot::Unmatched => part.matched.unexpected.push(raw.name),
        }
        part.items.push(item);
    }
    Ok(part)
}

/// Runs one assessment task. Tasks share no mutable state, so callers may
/// run the four concurrently, each with its own judge handle.
pub fn run_task<J: Judge + ?Sized>(
    task: JudgeTask,
    transcript: &Transcript,
    case: &CaseRecord,
    judge: &mut J,
) -> Result<TaskOutput, EvaluationError> {
    Ok(match task {
        JudgeTask::Clinical => TaskOutput::Clinical(clinical_task(transcript, case, judge)?),
        JudgeTask::History => TaskOutput::History { questions: history_task(transcript, case, judge)? },
        JudgeTask::Treatment => TaskOutput::Treatment(treatment_task(transcript, case, judge)?),
        JudgeTask::Workup => TaskOutput::Workup(workup_task(transcript, case, judge)?),
    })
}

/// Joins task outputs into one record and evaluates critical conditions.
pub fn merge_outputs(transcript: &Transcript, case: &CaseRecord, outputs: Vec<TaskOutput>) -> ExtractionRecord {
    let mut record = ExtractionRecord::empty(&transcript.case_id, &transcript.run_id);
    record.is_conversation_complete = transcript.is_conversation_complete;
    for output in outputs {
        match output {
            TaskOutput::Clinical(c) => {
                record.diagnoses_results = c.diagnoses_results;
                record.icd10_results = c.icd10_results;
                record.differential_results = c.differential_results;
                record.predicted_differential_ranked = c.predicted_differential_ranked;
            }
            TaskOutput::History { questions } => record.questions_asked = questions,
            TaskOutput::Treatment(t) => {
                record.treatments = t.items;
                record.treatment_counts = t.counts;
            }
            TaskOutput::Workup(w) => {
                record.investigations = w.items;
                record.workup_match = w.matched;
            }
        }
    }
    record.critical_conditions = verify_critical_conditions(&record, case);
    record
}

/// Runs the four tasks in order with one judge and merges the results.
pub fn evaluate_transcript<J: Judge + ?Sized>(
    transcript: &Transcript,
    case: &CaseRecord,
    judge: &mut J,
) -> Result<ExtractionRecord, EvaluationError> {
    let outputs = JudgeTask::ALL
        .into_iter()
        .map(|task| run_task(task, transcript, case, judge))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(merge_outputs(transcript, case, outputs))
}
