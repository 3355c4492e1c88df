use std::path::{Path, PathBuf};

use cyclecap_cli::{run_args, EXIT_CEILING, EXIT_OK, EXIT_USAGE};
use cyclecap_core::ingest::write_jsonl_dataset;
use cyclecap_core::providers::sim::SimWorld;
use cyclecap_core::store::load_run;
use serde_json::{json, Value};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn cyclecap(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_args(
        std::iter::once("cyclecap").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Setup {
    dir: tempfile::TempDir,
    config: PathBuf,
    dataset: PathBuf,
}

fn sim_setup(n: u64, extra: Value) -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let world = SimWorld::new(3, 32, 0.05, 0.05, 16).unwrap();
    let mut cfg = json!({
        "seed": 3,
        "sim_world": {"dim": 32, "caption_noise": 0.05, "generation_noise": 0.05},
        "providers": {
            "captioner": {"type": "sim"},
            "generator": {"type": "sim"},
            "image_embedder": {"type": "sim"},
            "text_embedder": {"type": "sim"}
        }
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let config = dir.path().join("config.json");
    std::fs::write(&config, cfg.to_string()).unwrap();
    let dataset = dir.path().join("data.jsonl");
    write_jsonl_dataset(&world.synthetic_dataset(n, 5), &dataset).unwrap();
    Setup {
        dir,
        config,
        dataset,
    }
}

#[test]
fn validate_reports_summary_and_warnings() {
    let (code, out, _) = cyclecap(&["validate", s(&fixture("coco_captions.json"))]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("images=4 captions=20"));
    assert!(out.contains("captions_per_image=5:4"));

    let (code, out, _) = cyclecap(&["validate", s(&fixture("coco_three_captions.json"))]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().filter(|l| l.starts_with("warning")).count(), 1);

    let (code, _, err) = cyclecap(&["validate", s(&fixture("coco_dangling.json"))]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("99"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(cyclecap(&[]).0, EXIT_USAGE);
    assert_eq!(cyclecap(&["frobnicate"]).0, EXIT_USAGE);
    let setup = sim_setup(2, json!({}));
    // eval without --config / --out
    assert_eq!(cyclecap(&["eval", s(&setup.dataset)]).0, EXIT_USAGE);
    assert_eq!(
        cyclecap(&["--config", s(&setup.config), "eval", s(&setup.dataset)]).0,
        EXIT_USAGE
    );
    assert_eq!(cyclecap(&["--help"]).0, EXIT_OK);
}

#[test]
fn eval_prints_mean_and_persists_the_run() {
    let setup = sim_setup(6, json!({}));
    let out = setup.dir.path().join("run.json");
    let (code, stdout, err) = cyclecap(&[
        "--config",
        s(&setup.config),
        "--out",
        s(&out),
        "eval",
        s(&setup.dataset),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let run = load_run(&out).unwrap();
    assert_eq!(run.records.len(), 6);
    assert!(stdout.contains(&format!("mean_cosine={:.4} n=6", run.summary.mean.unwrap())));
    assert!(stdout.contains("cache_hit_rate=none"));
}

#[test]
fn missing_credential_exits_before_any_request() {
    let setup = sim_setup(2, json!({}));
    let mut cfg: Value = serde_json::from_slice(&std::fs::read(&setup.config).unwrap()).unwrap();
    // Port 9 (discard) on loopback: a request would fail loudly with a transport error.
    cfg["providers"]["generator"] = json!({
        "type": "http",
        "endpoint": "http://127.0.0.1:9/generate",
        "model": "m",
        "credential_env": "CYCLECAP_TEST_UNSET_CREDENTIAL"
    });
    std::fs::write(&setup.config, cfg.to_string()).unwrap();
    let out = setup.dir.path().join("run.json");
    let (code, _, err) = cyclecap(&[
        "--config",
        s(&setup.config),
        "--out",
        s(&out),
        "eval",
        s(&setup.dataset),
    ]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("CYCLECAP_TEST_UNSET_CREDENTIAL"), "{err}");
    assert!(!out.exists());
}

#[test]
fn failure_ceiling_exits_with_three() {
    let setup = sim_setup(4, json!({}));
    // A precomputed generator with no generations fails every record.
    let table = setup.dir.path().join("table.json");
    std::fs::write(&table, r#"{"embedding_dim": 32}"#).unwrap();
    let mut cfg: Value = serde_json::from_slice(&std::fs::read(&setup.config).unwrap()).unwrap();
    cfg["providers"]["generator"] = json!({"type": "file", "path": "table.json"});
    std::fs::write(&setup.config, cfg.to_string()).unwrap();
    let out = setup.dir.path().join("run.json");
    let (code, _, err) = cyclecap(&[
        "--config",
        s(&setup.config),
        "--out",
        s(&out),
        "eval",
        s(&setup.dataset),
    ]);
    assert_eq!(code, EXIT_CEILING, "{err}");
}

#[test]
fn framework_validation_and_reports() {
    let setup = sim_setup(10, json!({}));
    let out = setup.dir.path().join("fw");
    let (code, stdout, err) = cyclecap(&[
        "--config",
        s(&setup.config),
        "--out",
        s(&out),
        "validate-framework",
        s(&setup.dataset),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(stdout.starts_with("gap="));
    let (c, i) = (out.join("correct.json"), out.join("incorrect.json"));

    let (code, json_out, _) = cyclecap(&["report", "--format", "json", s(&c), s(&i)]);
    assert_eq!(code, EXIT_OK);
    let gap: Value = serde_json::from_str(&json_out).unwrap();
    let diff = gap["mean_correct"].as_f64().unwrap() - gap["mean_incorrect"].as_f64().unwrap();
    assert_eq!(gap["gap"].as_f64().unwrap(), diff);

    let (code, csv_out, _) = cyclecap(&["report", "--format", "csv", s(&c)]);
    assert_eq!(code, EXIT_OK);
    let mut lines = csv_out.lines();
    assert_eq!(
        lines.next(),
        Some("image_id,condition,sample,cosine,bleu,text2text_mean")
    );
    assert_eq!(lines.count(), load_run(&c).unwrap().records.len());

    let (code, plot, _) = cyclecap(&["report", "--format", "plotdata", s(&c), s(&i)]);
    assert_eq!(code, EXIT_OK);
    let plot: Value = serde_json::from_str(&plot).unwrap();
    assert_eq!(plot["series"][0]["scores"].as_array().unwrap().len(), 10);

    let file = setup.dir.path().join("report.csv");
    assert_eq!(
        cyclecap(&["--out", s(&file), "report", "--format", "csv", s(&c), s(&i)]).0,
        EXIT_OK
    );
    assert_eq!(std::fs::read_to_string(&file).unwrap().lines().count(), 21);
}

#[test]
fn model_run_csv_carries_baselines() {
    let setup = sim_setup(3, json!({}));
    let run = setup.dir.path().join("run.json");
    cyclecap(&[
        "--config",
        s(&setup.config),
        "--out",
        s(&run),
        "eval",
        s(&setup.dataset),
    ]);
    let (code, csv_out, _) = cyclecap(&["report", "--format", "csv", s(&run)]);
    assert_eq!(code, EXIT_OK);
    for row in csv_out.lines().skip(1) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], "model");
        assert!(
            cols[4].parse::<f64>().is_ok() && cols[5].parse::<f64>().is_ok(),
            "{row}"
        );
    }
}

#[test]
fn report_rejects_mismatched_or_unreadable_runs() {
    let a = sim_setup(4, json!({}));
    let b = sim_setup(3, json!({}));
    let (ra, rb) = (a.dir.path().join("fw"), b.dir.path().join("fw"));
    for (setup, out) in [(&a, &ra), (&b, &rb)] {
        let (code, _, err) = cyclecap(&[
            "--config",
            s(&setup.config),
            "--out",
            s(out),
            "validate-framework",
            s(&setup.dataset),
        ]);
        assert_eq!(code, EXIT_OK, "{err}");
    }
    let (code, _, err) = cyclecap(&[
        "report",
        s(&ra.join("correct.json")),
        s(&rb.join("incorrect.json")),
    ]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("sim-000003"), "{err}");
    assert_eq!(
        cyclecap(&["report", s(&a.dir.path().join("nope.json"))]).0,
        EXIT_USAGE
    );
}

#[test]
fn single_image_framework_validation_is_a_usage_error() {
    let setup = sim_setup(1, json!({}));
    let out = setup.dir.path().join("fw");
    let (code, _, _) = cyclecap(&[
        "--config",
        s(&setup.config),
        "--out",
        s(&out),
        "validate-framework",
        s(&setup.dataset),
    ]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn seed_override_changes_only_what_it_should() {
    let setup = sim_setup(
        8,
        json!({"sim_world": {"seed": 3, "dim": 32, "caption_noise": 0.05, "generation_noise": 0.05}}),
    );
    let run = |name: &str, extra: &[&str]| {
        let out = setup.dir.path().join(name);
        let mut args = vec!["--config", s(&setup.config), "--out", s(&out)];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["validate-framework", s(&setup.dataset)]);
        let (code, _, err) = cyclecap(&args);
        assert_eq!(code, EXIT_OK, "{err}");
        load_run(&out.join("incorrect.json")).unwrap()
    };
    let base = run("base", &[]);
    let same = run("same", &["--seed", "3"]);
    let other = run("other", &["--seed", "4"]);
    assert_eq!(base.normalized(), same.normalized());
    assert_eq!(other.config.seed, 4);
    let captions = |r: &cyclecap_core::RunResult| {
        r.records
            .iter()
            .map(|x| x.caption.text.clone())
            .collect::<Vec<_>>()
    };
    assert_ne!(captions(&base), captions(&other));
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let setup = sim_setup(1, json!({}));
    let out = setup.dir.path().join("synth.jsonl");
    let (code, stdout, _) = cyclecap(&[
        "--config",
        s(&setup.config),
        "--out",
        s(&out),
        "synth",
        "--n",
        "7",
        "--refs",
        "3",
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("images=7 captions=21"));
    let (code, stdout, _) = cyclecap(&["validate", s(&out)]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(
        stdout.lines().filter(|l| l.starts_with("warning")).count(),
        7
    );
}
