//! Case bank directories, transcripts and per-run artifact files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dots_core::case::{distribution_report, validate_case, CaseBank, CaseRecord, DistributionReport, Provenance, ValidationReport};
use dots_core::dialogue::Transcript;
use dots_core::evaluator::ExtractionRecord;
use dots_core::scoring::DotsRecord;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FilesError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Bank(#[from] dots_core::case::BankError),
}

pub fn read_text(path: &Path) -> Result<String, FilesError> {
    fs::read_to_string(path).map_err(|source| FilesError::Io { path: path.into(), source })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FilesError> {
    serde_json::from_str(&read_text(path)?).map_err(|source| FilesError::Json { path: path.into(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FilesError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| FilesError::Io { path: parent.into(), source })?;
    }
    fs::write(path, text).map_err(|source| FilesError::Io { path: path.into(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FilesError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| FilesError::Json { path: path.into(), source })?;
    write_text(path, &(text + "\n"))
}

/// Case files live in `<bank>/cases/*.json`; `<bank>/provenance.json`
/// optionally maps case ids to authoring metadata.
pub fn case_files(dir: &Path) -> Result<Vec<PathBuf>, FilesError> {
    let cases = dir.join("cases");
    let root = if cases.is_dir() { cases } else { dir.to_path_buf() };
    let entries = fs::read_dir(&root).map_err(|source| FilesError::Io { path: root.clone(), source })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "provenance.json"))
        .collect();
    files.sort();
    Ok(files)
}

fn provenance(dir: &Path) -> Result<BTreeMap<String, Provenance>, FilesError> {
    let path = dir.join("provenance.json");
    if path.exists() {
        read_json(&path)
    } else {
        Ok(BTreeMap::new())
    }
}

pub fn read_case(path: &Path) -> Result<CaseRecord, FilesError> {
    read_json(path)
}

pub fn load_bank(dir: &Path) -> Result<CaseBank, FilesError> {
    let mut prov = provenance(dir)?;
    let mut entries = Vec::new();
    for path in case_files(dir)? {
        let case = read_case(&path)?;
        let p = prov.remove(&case.id).unwrap_or_default();
        entries.push((case, p));
    }
    Ok(CaseBank::new(entries)?)
}

#[derive(Debug, Serialize)]
pub struct BankCheck {
    pub files: usize,
    pub reports: Vec<ValidationReport>,
    pub parse_errors: Vec<String>,
    pub bank_error: Option<String>,
    pub distribution: Option<DistributionReport>,
}

impl BankCheck {
    pub fn is_valid(&self) -> bool {
        self.parse_errors.is_empty() && self.bank_error.is_none() && self.reports.iter().all(ValidationReport::is_valid)
    }
}

/// Validates every file independently so one bad case does not hide others.
pub fn check_bank(dir: &Path) -> Result<BankCheck, FilesError> {
    let files = case_files(dir)?;
    let mut reports = Vec::new();
    let mut parse_errors = Vec::new();
    for path in &files {
        match read_case(path) {
            Ok(case) => reports.push(validate_case(&case)),
            Err(e) => parse_errors.push(e.to_string()),
        }
    }
    let (bank_error, distribution) = match load_bank(dir) {
        Ok(bank) => (None, distribution_report(&bank).ok()),
        Err(e) => (Some(e.to_string()), None),
    };
    Ok(BankCheck { files: files.len(), reports, parse_errors, bank_error, distribution })
}

pub fn read_transcript(path: &Path) -> Result<Transcript, FilesError> {
    let text = read_text(path)?;
    Transcript::from_jsonl(&text).map_err(|e| FilesError::Format { path: path.into(), message: e.to_string() })
}

/// The three per-run files written next to each other.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub transcript: PathBuf,
    pub extraction: PathBuf,
    pub dots: PathBuf,
}

impl RunArtifacts {
    pub fn in_dir(dir: &Path, run_id: &str) -> Self {
        Self {
            transcript: dir.join(format!("{run_id}.transcript.jsonl")),
            extraction: dir.join(format!("{run_id}.extraction.json")),
            dots: dir.join(format!("{run_id}.dots.json")),
        }
    }

    pub fn write_transcript(&self, transcript: &Transcript) -> Result<(), FilesError> {
        write_text(&self.transcript, &transcript.to_jsonl())
    }

    pub fn write_scores(&self, extraction: &ExtractionRecord, dots: &DotsRecord) -> Result<(), FilesError> {
        write_json(&self.extraction, extraction)?;
        write_json(&self.dots, dots)
    }
}

/// Finds `<run-id>.transcript.jsonl` under `dir`.
pub fn find_transcript(dir: &Path, run_id: &str) -> Option<PathBuf> {
    let p = RunArtifacts::in_dir(dir, run_id).transcript;
    p.exists().then_some(p)
}
