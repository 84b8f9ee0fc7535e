use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tractwise")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .join("config.json")
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(output: Output) -> Output {
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn clean_sample_tables() {
    let tmp = tempfile::tempdir().unwrap();
    ok(run(&["clean"], &fixture("sample"), tmp.path()));
    let csv = std::fs::read_to_string(tmp.path().join("cleaned.csv")).unwrap();
    assert_eq!(
        csv,
        "geoid,median_income,poverty_rate,pct_bachelors,bad_mental_health,obesity\n\
         06001400100,112500,4.5,71.2,9.8,18.3\n\
         06001400600,39800,27.4,15.9,17.6,35.2\n"
    );
    let report = json(&tmp.path().join("cleaning_report.json"));
    assert_eq!(report["source_rows"], 7);
    assert_eq!(report["kept"], 2);
    for reason in [
        "invalid_key",
        "null_value",
        "ragged_row",
        "unmatched_key",
        "unparseable_numeric",
    ] {
        assert_eq!(report["discard_reasons"][reason], 1, "{reason}");
    }
    assert_eq!(report["meta"]["seed"], 7);
    assert!(report.get("warnings").is_none());

    let manifest = json(&tmp.path().join("manifest.clean.json"));
    assert_eq!(manifest["command"], "clean");
    let digest = manifest["artifacts"]["cleaned.csv"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 3);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    ok(run(&["clean", "--seed", "99"], &fixture("sample"), tmp.path()));
    let report = json(&tmp.path().join("cleaning_report.json"));
    assert_eq!(report["meta"]["seed"], 99);
}

#[test]
fn tree_fit_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["fit", "--model", "tree", "--max-depth", "4"];
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(run(&args, &fixture("synthetic"), &a));
    ok(run(&args, &fixture("synthetic"), &b));
    for file in ["model_tree.json", "tree.txt", "tree_fit.svg", "manifest.fit.json"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let model = json(&a.join("model_tree.json"));
    assert_eq!(model["config"]["max_depth"], 4);
    assert_eq!(model["target_name"], "mental_health");
    assert!(model["root"]["rule"]["j"].is_u64());
}

#[test]
fn poly_fit_writes_model_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    ok(run(
        &["fit", "--model", "poly", "--degree", "2", "--feature", "poverty_rate", "--target", "obesity"],
        &fixture("synthetic"),
        tmp.path(),
    ));
    let model = json(&tmp.path().join("model_poly.json"));
    assert_eq!(model["degree"], 2);
    assert_eq!(model["feature"], "poverty_rate");
    assert_eq!(model["target"], "obesity");
    assert_eq!(model["coefficients"].as_array().unwrap().len(), 3);
    let residuals = json(&tmp.path().join("residuals.json"));
    assert!(residuals["rmse"].as_f64().unwrap() > 0.0);
    assert!(residuals["spread_ratio"].as_f64().is_some());
    for svg in ["poly_fit.svg", "poly_residuals.svg"] {
        let text = std::fs::read_to_string(tmp.path().join(svg)).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("<metadata>seed=2017 config_digest="));
    }
}

#[test]
fn exploration_commands() {
    let tmp = tempfile::tempdir().unwrap();
    ok(run(&["correlate"], &fixture("synthetic"), tmp.path()));
    ok(run(&["groups"], &fixture("synthetic"), tmp.path()));
    let corr = std::fs::read_to_string(tmp.path().join("correlation.csv")).unwrap();
    assert!(corr.starts_with("column,median_income,poverty_rate"));
    let summary = json(&tmp.path().join("correlation_summary.json"));
    assert_eq!(
        summary["top_correlated"]["mental_health"].as_array().unwrap().len(),
        4
    );
    let groups = json(&tmp.path().join("groups.json"));
    assert!(groups["mean_difference"].as_f64().unwrap() > 0.0);
    let regions = json(&tmp.path().join("regions.json"));
    let labels: Vec<&str> = regions["regions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels, ["Midwest", "Northeast", "South", "West"]);
    assert!(regions["unmapped_rows"].as_u64().unwrap() > 0);
}

#[test]
fn report_compares_feature_sets_on_shared_folds() {
    let tmp = tempfile::tempdir().unwrap();
    ok(run(&["report", "--n-trees", "10"], &fixture("synthetic"), tmp.path()));
    let report = json(&tmp.path().join("report.json"));
    let digest = report["plan_digest"].as_str().unwrap();
    let targets = report["targets"].as_array().unwrap();
    assert_eq!(targets.len(), 2);
    for t in targets {
        let blocks = t["blocks"].as_array().unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0]["feature_set"], "socioeconomic");
        assert_eq!(blocks[1]["feature_set"], "health_indicators");
        assert_eq!(blocks[1]["features"].as_array().unwrap().len(), 4);
        for b in blocks {
            assert_eq!(b["cv"]["plan_digest"], digest);
            assert_eq!(b["cv"]["per_fold_r2"].as_array().unwrap().len(), 5);
        }
        // The synthetic outcomes are driven by the health indicators.
        assert!(t["comparisons"][0]["mean_r2_difference"].as_f64().unwrap() > 0.0);
    }
    let csv = std::fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn errors_are_json_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["cv"], &fixture("sample"), tmp.path());
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "eval");
    assert_eq!(err["context"]["command"], "cv");
    assert!(err["message"].as_str().unwrap().contains("k must be"));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema": 2, "seed": 1, "tables": []}"#).unwrap();
    let out = run(&["clean"], &bad, tmp.path());
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "config_invalid");

    std::fs::write(&bad, r#"{"schema": 1, "seed": 1, "tables": [], "typo": 3}"#).unwrap();
    let out = run(&["clean"], &bad, tmp.path());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "config_parse");
}

#[test]
fn help_lists_every_flag() {
    let out = Command::new(bin()).arg("--help").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--config",
        "--seed",
        "--out",
        "--model",
        "--degree",
        "--feature",
        "--target",
        "--max-depth",
        "--n-trees",
        "--k",
        "--depths",
        "--feature-set",
    ] {
        assert!(text.contains(flag), "{flag} missing from --help");
    }
    for cmd in ["clean", "correlate", "groups", "fit", "cv", "sweep", "report"] {
        assert!(text.contains(cmd), "{cmd} missing from --help");
    }
}
