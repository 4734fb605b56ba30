use std::fs;
use std::thread;

use dots::store::{Namespace, RunDraft, RunFilter, RunKind, RunStore, StoreError};

fn draft(id: &str, at: i64) -> RunDraft {
    RunDraft::new(id, RunKind::Simulation, Namespace::Evaluation, "m1", at)
        .case("case-a")
        .artifact("dots", format!("{{\"run\":\"{id}\"}}"))
}

#[test]
fn parallel_writers_commit_every_run_once() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path()).unwrap();
    thread::scope(|s| {
        for w in 0..8 {
            let store = store.clone();
            s.spawn(move || {
                for i in 0..25 {
                    store.commit(draft(&format!("w{w}-r{i}"), i)).unwrap();
                }
                // Every writer also races on one shared id.
                let _ = store.commit(draft("shared", 0));
            });
        }
    });
    let all = store.query(&RunFilter::default());
    assert_eq!(all.len(), 8 * 25 + 1);

    let reopened = RunStore::open(dir.path()).unwrap();
    assert_eq!(reopened.query(&RunFilter::default()), all);
    let index = fs::read_to_string(dir.path().join("index.jsonl")).unwrap();
    assert_eq!(index.lines().count(), all.len());
}

#[test]
fn second_handle_sees_commits_after_refresh() {
    let dir = tempfile::tempdir().unwrap();
    let writer = RunStore::open(dir.path()).unwrap();
    let reader = RunStore::open(dir.path()).unwrap();
    writer.commit(draft("r1", 1)).unwrap();
    assert!(reader.get("r1").is_none());
    assert_eq!(reader.refresh().unwrap(), 1);
    let env = reader.get("r1").unwrap();
    assert_eq!(reader.artifact(&env, "dots").unwrap(), b"{\"run\":\"r1\"}");
    // The reader cannot reuse an id another process took.
    assert!(matches!(reader.commit(draft("r1", 2)), Err(StoreError::DuplicateRunId(_))));
}

#[test]
fn corrections_resolve_to_the_newest() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path()).unwrap();
    store.commit(draft("r1", 1)).unwrap();
    store.commit(draft("r1.eval1", 2).supersedes("r1")).unwrap();
    store.commit(draft("r1.eval2", 3).supersedes("r1.eval1")).unwrap();
    assert_eq!(store.resolve("r1").unwrap().run_id, "r1.eval2");
    assert_eq!(store.resolve("r1.eval1").unwrap().run_id, "r1.eval2");
    // The original is still readable as committed.
    let original = store.get("r1").unwrap();
    assert_eq!(store.artifact(&original, "dots").unwrap(), b"{\"run\":\"r1\"}");
}

#[test]
fn lost_index_and_stray_temp_files_are_repaired_on_open() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = RunStore::open(dir.path()).unwrap();
        store.commit(draft("r1", 1)).unwrap();
        store.commit(draft("r2", 2)).unwrap();
    }
    fs::remove_file(dir.path().join("index.jsonl")).unwrap();
    let stray = dir.path().join("envelopes/evaluation/.tmp-1-r3.json");
    fs::write(&stray, b"{half").unwrap();

    let store = RunStore::open(dir.path()).unwrap();
    assert!(!stray.exists());
    let index = fs::read_to_string(dir.path().join("index.jsonl")).unwrap();
    assert_eq!(index.lines().count(), 2);
    assert_eq!(store.query(&RunFilter::default()).len(), 2);
}

#[test]
fn bad_run_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path()).unwrap();
    for bad in ["", "../escape", "a/b", ".hidden", "sp ace"] {
        assert!(matches!(store.commit(draft(bad, 0)), Err(StoreError::InvalidRunId(_))), "{bad:?}");
    }
}

#[test]
fn scoped_handles_stay_in_their_namespace() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path()).unwrap();
    store.commit(draft("eval-run", 1)).unwrap();
    let monitoring = store.scoped(Namespace::Monitoring);
    assert!(matches!(monitoring.get("eval-run"), Err(StoreError::Forbidden(_))));
    assert!(matches!(monitoring.commit(draft("other", 2)), Err(StoreError::Forbidden(_))));
    assert!(monitoring.query(&RunFilter::default()).is_empty());
    assert_eq!(store.scoped(Namespace::Evaluation).query(&RunFilter::default()).len(), 1);
}
