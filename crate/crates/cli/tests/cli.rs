use std::fs;

use assert_cmd::Command;

fn cli() -> Command {
    let mut c = Command::cargo_bin("spottunet").unwrap();
    c.env_remove("SPOTTUNET_SEED");
    c
}

fn tiny_config(dir: &std::path::Path) -> std::path::PathBuf {
    let mut cfg: serde_json::Value =
        serde_json::from_str(include_str!("../../../configs/dataset_compact.json")).unwrap();
    cfg["split"] = serde_json::json!({"train": 4, "val": 1, "test": 2});
    let p = dir.join("dataset.json");
    fs::write(&p, cfg.to_string()).unwrap();
    p
}

#[test]
fn help_succeeds_and_bad_arguments_are_validation_errors() {
    cli().arg("--help").assert().code(0);
    cli().arg("compare").assert().code(1);
    cli().args(["pretrain", "--domain", "x", "--profile", "huge"]).assert().code(1);
}

#[test]
fn dataset_build_honours_the_seed_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = |name: &str| tmp.path().join(name);
    cli().args(["dataset", "build", "--config"]).arg(&cfg).arg("--out").arg(out("a")).assert().code(0);
    cli().args(["dataset", "build", "--config"]).arg(&cfg).arg("--out").arg(out("b")).assert().code(0);
    cli()
        .env("SPOTTUNET_SEED", "9")
        .args(["dataset", "build", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(out("c"))
        .assert()
        .code(0);
    let img = |d: &str| fs::read(out(d).join("gamma/0.img")).unwrap();
    assert_eq!(img("a"), img("b"));
    assert_ne!(img("a"), img("c"));
    cli()
        .env("SPOTTUNET_SEED", "nine")
        .args(["dataset", "build", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(out("d"))
        .assert()
        .code(1);
}

#[test]
fn invalid_inputs_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    cli().args(["compare", "--plan"]).arg(&bad).assert().code(1);
    cli().args(["dataset", "build", "--config"]).arg(&bad).arg("--out").arg(tmp.path().join("o")).assert().code(1);

    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    cli().args(["dataset", "build", "--config"]).arg(&cfg).arg("--out").arg(&data).assert().code(0);
    let mut plan: serde_json::Value = serde_json::from_str(include_str!("../../../configs/plan_compact.json")).unwrap();
    plan["dataset_root"] = data.to_str().unwrap().into();
    plan["runs_root"] = tmp.path().join("runs").to_str().unwrap().into();
    plan["scarcity_grid"] = serde_json::json!([2]);
    let p = tmp.path().join("plan.json");
    fs::write(&p, plan.to_string()).unwrap();
    let out = cli().args(["compare", "--plan"]).arg(&p).assert().code(1).get_output().stderr.clone();
    assert!(String::from_utf8(out).unwrap().contains("spottunet pretrain --domain canonical"));

    plan["pairs"] = serde_json::json!([["canonical", "canonical"]]);
    fs::write(&p, plan.to_string()).unwrap();
    cli().args(["compare", "--plan"]).arg(&p).assert().code(1);

    cli().args(["pretrain", "--domain", "missing", "--profile", "compact", "--data"]).arg(&data).assert().code(1);
    cli().args(["plot", "--results"]).arg(tmp.path().join("none.csv")).arg("--out").arg(tmp.path()).assert().code(2);
}
