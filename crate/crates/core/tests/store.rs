use std::io::Write;

use cyclecap_core::providers::sim::SimWorld;
use cyclecap_core::store::{
    load_gap, load_run, persist_gap, persist_run, Cache, RUN_SCHEMA_VERSION,
};
use cyclecap_core::{compute_gap, human_validation_run, Condition, Error, GapReport, RunConfig};

fn small_runs() -> (cyclecap_core::RunResult, cyclecap_core::RunResult) {
    let world = SimWorld::new(21, 16, 0.05, 0.05, 16).unwrap();
    let dataset = world.synthetic_dataset(3, 5);
    let cfg = RunConfig {
        seed: 21,
        ..RunConfig::default()
    };
    (
        human_validation_run(&dataset, world.providers(), Condition::Correct, &cfg).unwrap(),
        human_validation_run(&dataset, world.providers(), Condition::Incorrect, &cfg).unwrap(),
    )
}

#[test]
fn run_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (run, _) = small_runs();
    assert_eq!(run.records.len(), 3);
    let path = dir.path().join("run.json");
    persist_run(&run, &path).unwrap();
    assert_eq!(load_run(&path).unwrap(), run);

    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(doc["schema_version"], RUN_SCHEMA_VERSION);
}

#[test]
fn truncated_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let (run, _) = small_runs();
    let path = dir.path().join("run.json");
    persist_run(&run, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_run(&path), Err(Error::Json(_))));
}

#[test]
fn other_schema_versions_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (run, _) = small_runs();
    let path = dir.path().join("run.json");
    persist_run(&run, &path).unwrap();
    let mut doc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    doc["schema_version"] = 2.into();
    std::fs::File::create(&path)
        .unwrap()
        .write_all(&serde_json::to_vec(&doc).unwrap())
        .unwrap();
    assert!(matches!(
        load_run(&path),
        Err(Error::UnsupportedVersion {
            found: 2,
            expected: 1
        })
    ));
}

#[test]
fn gap_from_persisted_runs_matches_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let (c, i) = small_runs();
    let gap = compute_gap(&c, &i).unwrap();
    persist_run(&c, &dir.path().join("c.json")).unwrap();
    persist_run(&i, &dir.path().join("i.json")).unwrap();
    persist_gap(&gap, &dir.path().join("gap.json")).unwrap();

    let reloaded: GapReport = load_gap(&dir.path().join("gap.json")).unwrap();
    assert_eq!(reloaded, gap);
    let rows = &reloaded.per_image;
    let mean =
        |f: fn(&cyclecap_core::GapRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let recomputed = mean(|r| r.cosine_correct) - mean(|r| r.cosine_incorrect);
    assert!((recomputed - gap.gap).abs() < 1e-12);

    let again = compute_gap(
        &load_run(&dir.path().join("c.json")).unwrap(),
        &load_run(&dir.path().join("i.json")).unwrap(),
    )
    .unwrap();
    assert!((again.gap - gap.gap).abs() < 1e-12);
}

#[test]
fn cache_entries_are_sharded_and_carry_a_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Cache::open(dir.path()).unwrap();
    let key = cyclecap_core::store::cache_key("p", "op", b"{}");
    assert_eq!(cache.get(&key).unwrap(), None);
    let sidecar = cyclecap_core::store::Sidecar {
        provider_id: "p".into(),
        op: "op".into(),
        created_at: "2026-01-01T00:00:00Z".into(),
        media_type: "application/json".into(),
    };
    cache.put(&key, b"payload", &sidecar).unwrap();
    let path = cache.payload_path(&key);
    assert_eq!(
        path.parent()
            .unwrap()
            .file_name()
            .unwrap()
            .to_str()
            .unwrap(),
        &key.as_str()[..2]
    );
    assert_eq!(cache.get(&key).unwrap().as_deref(), Some(&b"payload"[..]));
    assert_eq!(cache.sidecar(&key).unwrap(), Some(sidecar));
}
