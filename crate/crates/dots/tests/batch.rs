use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dots::batch::{load_checkpoint, BatchContext};
use dots::clock::SystemClock;
use dots::files::load_bank;
use dots::runner::{Agents, AgentsConfig};
use dots::store::{Namespace, RunFilter, RunKind, RunStore};
use dots_core::aggregate::RunManifest;
use dots_core::case::CaseBank;
use dots_core::gateway::ProviderConfig;

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn agents(doctor_dir: &Path) -> Agents {
    let mut config = AgentsConfig::new(ProviderConfig::new(&format!("scripted:{}", doctor_dir.display()), "doctor"));
    config.judge = Some(ProviderConfig::new(&format!("scripted:{}", demo().join("replays/judge").display()), "judge"));
    Agents::new(config, Arc::new(SystemClock)).unwrap()
}

fn manifest(batch: &str) -> RunManifest {
    RunManifest { batch_id: batch.into(), model_version: "m1".into(), seed: 0, ..RunManifest::default() }
}

fn context<'a>(bank: &'a CaseBank, bank_dir: &'a Path, agents: &'a Agents, store: &RunStore, out: &Path) -> BatchContext<'a> {
    BatchContext {
        bank,
        bank_dir,
        agents,
        store: store.scoped(Namespace::Evaluation),
        out_dir: Some(out.to_path_buf()),
        workers: 2,
        model_version: "m1".into(),
    }
}

#[test]
fn interrupted_level3_resumes_from_its_checkpoint() {
    let bank_dir = demo().join("bank");
    let bank = load_bank(&bank_dir).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let store = RunStore::open(tmp.path().join("store")).unwrap();
    let out = tmp.path().join("out");

    // The doctor has nothing to say for the last case.
    let partial = tmp.path().join("partial-doctor");
    fs::create_dir_all(&partial).unwrap();
    for case in ["im-pharyngitis-001", "im-uti-001"] {
        let name = format!("{case}.jsonl");
        fs::copy(demo().join("replays/doctor").join(&name), partial.join(&name)).unwrap();
    }
    let broken = agents(&partial);
    let (outcome, _) = context(&bank, &bank_dir, &broken, &store, &out).level3(manifest("l3"), None).unwrap();
    assert!(outcome.failure.is_some());
    assert_eq!(outcome.checkpoint.remaining, ["ped-fever-001"]);
    assert_eq!(outcome.checkpoint.completed.len(), 2);
    let level3_reports = RunFilter { kind: Some(RunKind::Level3), ..RunFilter::default() };
    assert!(store.query(&level3_reports).is_empty(), "a partial run publishes no report");

    let checkpoint = load_checkpoint(&out.join("level3.checkpoint.json")).unwrap();
    assert_eq!(checkpoint, outcome.checkpoint);
    let full = agents(&demo().join("replays/doctor"));
    let (resumed, meta) = context(&bank, &bank_dir, &full, &store, &out).level3(manifest("l3"), Some(checkpoint)).unwrap();
    assert!(resumed.failure.is_none());
    let report = resumed.report.unwrap();
    assert_eq!(report.run_count, 3);
    assert!(meta.pass);
    assert_eq!(store.query(&level3_reports).len(), 1);
}

#[test]
fn error_tests_alone_report_each_case() {
    let bank_dir = demo().join("bank");
    let bank = load_bank(&bank_dir).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let store = RunStore::open(tmp.path()).unwrap();
    let agents = agents(&demo().join("replays/doctor"));
    let meta = context(&bank, &bank_dir, &agents, &store, tmp.path()).error_tests();
    assert_eq!(meta.results.len(), 1);
    assert!(meta.pass);
}
