//! End-to-end checks of the CLI surface: stage subcommands reproduce the
//! matching slice of a full run, skip/error contracts hold, and output
//! files follow the documented schemas.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn aca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aca"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = aca(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_spec(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    fs::write(
        &spec,
        r#"{"n": 88, "user_id": "solo",
  "carbs": {"lo": 0.0, "hi": 100.0}, "fat": {"lo": 0.0, "hi": 60.0},
  "protein": {"lo": 0.0, "hi": 60.0}, "fiber": {"lo": 0.0, "hi": 15.0},
  "pre_bg": {"lo": 90.0, "hi": 180.0},
  "truth": {"kind": "quadratic", "center": 50.0, "coeff": 0.018, "offset": -15.0},
  "noise_sd": 10.0}"#,
    )
    .unwrap();
    spec
}

#[test]
fn run_emits_forty_curve_files_for_an_88_meal_user() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let out = dir.path().join("out");
    ok(&[
        "run",
        "--synth",
        spec.to_str().unwrap(),
        "--seed",
        "3",
        "--bootstrap-iters",
        "4",
        "--bootstrap-size",
        "50",
        "--out",
        out.to_str().unwrap(),
    ]);
    // 5 covariates x 4 subsets (all + 3 meal types) x 2 models
    let curves: Vec<_> = fs::read_dir(out.join("curves"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(curves.len(), 40, "curve files: {curves:?}");
    // curve schema fields
    let text = fs::read_to_string(out.join("curves").join("solo_all_carbs_aca.curve.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    for field in [
        "model",
        "user_id",
        "subset",
        "covariate",
        "units",
        "eval_points",
        "mean",
        "lower",
        "upper",
        "level",
        "seed",
    ] {
        assert!(value.get(field).is_some(), "missing field {field}");
    }
    assert_eq!(value["model"], "aca");
    assert_eq!(value["units"], "g");
    let n = value["eval_points"].as_array().unwrap().len();
    assert_eq!(value["mean"].as_array().unwrap().len(), n);
    assert_eq!(value["lower"].as_array().unwrap().len(), n);
    assert_eq!(value["upper"].as_array().unwrap().len(), n);
    // band ordering in the persisted file
    for (lo, hi) in value["lower"]
        .as_array()
        .unwrap()
        .iter()
        .zip(value["upper"].as_array().unwrap())
    {
        assert!(lo.as_f64().unwrap() <= hi.as_f64().unwrap());
    }
}

#[test]
fn insufficient_user_is_skipped_with_logged_reason_and_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("meals.csv");
    let mut lines =
        String::from("user_id,meal_type,carbs_g,fat_g,protein_g,fiber_g,pre_bg_mgdl,post_bg_mgdl\n");
    // one qualifying user, one user with 10 meals
    for i in 0..40 {
        lines.push_str(&format!(
            "big,{},{},10,20,3,120,{}\n",
            ["breakfast", "lunch", "dinner", "other"][i % 4],
            20 + i,
            130 + (i % 30)
        ));
    }
    for i in 0..10 {
        lines.push_str(&format!("small,lunch,{},5,10,2,110,150\n", 10 + i));
    }
    fs::write(&csv, lines).unwrap();
    let out = dir.path().join("out");
    let stdout = ok(&[
        "run",
        "--input",
        csv.to_str().unwrap(),
        "--bootstrap-iters",
        "2",
        "--bootstrap-size",
        "30",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("user small: skipped (10 meals < 30 required)"));
    let log = fs::read_to_string(out.join("run.log")).unwrap();
    assert!(log.contains("user small: skipped"));
    // no model files for the skipped user
    let models: Vec<_> = fs::read_dir(out.join("models"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(models.iter().all(|name| !name.starts_with("small_")));
}

#[test]
fn hard_errors_exit_nonzero() {
    let out = aca(&["run", "--input", "/nonexistent.csv", "--out", "/tmp/x"]);
    assert!(!out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    // both input and synth
    let out = aca(&[
        "run",
        "--input",
        "/nonexistent.csv",
        "--synth",
        spec.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    // neither
    let out = aca(&["run", "--out", dir.path().join("o2").to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn stage_subcommands_reproduce_run_slices_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let out = dir.path().join("out");
    ok(&[
        "run",
        "--synth",
        spec.to_str().unwrap(),
        "--seed",
        "5",
        "--bootstrap-iters",
        "4",
        "--bootstrap-size",
        "60",
        "--threshold",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    let meals = out.join("meals.csv");

    // synth alone reproduces meals.csv and truth.csv
    let synth_out = dir.path().join("stage_synth");
    ok(&[
        "synth",
        "--synth",
        spec.to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        synth_out.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(&meals).unwrap(),
        fs::read(synth_out.join("meals.csv")).unwrap()
    );
    assert_eq!(
        fs::read(out.join("truth.csv")).unwrap(),
        fs::read(synth_out.join("truth.csv")).unwrap()
    );

    // fit + bootstrap for one (user, subset) reproduce the run's files
    let stage = dir.path().join("stage");
    ok(&[
        "fit",
        "--input",
        meals.to_str().unwrap(),
        "--user",
        "solo",
        "--subset",
        "lunch",
        "--seed",
        "5",
        "--out",
        stage.to_str().unwrap(),
    ]);
    ok(&[
        "bootstrap",
        "--input",
        meals.to_str().unwrap(),
        "--user",
        "solo",
        "--subset",
        "lunch",
        "--seed",
        "5",
        "--bootstrap-iters",
        "4",
        "--bootstrap-size",
        "60",
        "--out",
        stage.to_str().unwrap(),
    ]);
    for name in [
        "models/solo_lunch_aca.model.json",
        "models/solo_lunch_linreg.model.json",
        "curves/solo_lunch_fiber_aca.curve.json",
        "curves/solo_lunch_pre_bg_linreg.curve.json",
    ] {
        assert_eq!(
            fs::read(out.join(name)).unwrap(),
            fs::read(stage.join(name)).unwrap(),
            "{name} differs"
        );
    }

    // evaluate and ranges over the run's artifacts reproduce its tables
    let eval_out = dir.path().join("stage_eval");
    ok(&[
        "evaluate",
        "--input",
        meals.to_str().unwrap(),
        "--models",
        out.join("models").to_str().unwrap(),
        "--curves",
        out.join("curves").to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(out.join("metrics.csv")).unwrap(),
        fs::read(eval_out.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(out.join("bends.csv")).unwrap(),
        fs::read(eval_out.join("bends.csv")).unwrap()
    );
    let ranges_out = dir.path().join("stage_ranges");
    ok(&[
        "ranges",
        "--curves",
        out.join("curves").to_str().unwrap(),
        "--threshold",
        "20",
        "--out",
        ranges_out.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(out.join("ranges.csv")).unwrap(),
        fs::read(ranges_out.join("ranges.csv")).unwrap()
    );
    let ranges = fs::read_to_string(out.join("ranges.csv")).unwrap();
    assert_eq!(
        ranges.lines().next().unwrap(),
        "user_id,subset,covariate,threshold,kind,lo,hi"
    );
    assert!(ranges.lines().count() > 1);
}

#[test]
fn marginal_stage_writes_schema_compliant_curve() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let out = dir.path().join("out");
    ok(&[
        "synth",
        "--synth",
        spec.to_str().unwrap(),
        "--seed",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let meals = out.join("meals.csv");
    ok(&[
        "fit",
        "--input",
        meals.to_str().unwrap(),
        "--user",
        "solo",
        "--seed",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let marg = dir.path().join("marg");
    ok(&[
        "marginal",
        "--model",
        out.join("models/solo_all_aca.model.json").to_str().unwrap(),
        "--input",
        meals.to_str().unwrap(),
        "--covariate",
        "carbs",
        "--out",
        marg.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(marg.join("solo_all_carbs_aca.curve.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["level"], 0.0);
    assert_eq!(value["mean"], value["lower"]);
    assert_eq!(value["mean"], value["upper"]);

    // unknown covariate errors
    let bad = aca(&[
        "marginal",
        "--model",
        out.join("models/solo_all_aca.model.json").to_str().unwrap(),
        "--input",
        meals.to_str().unwrap(),
        "--covariate",
        "sugar",
        "--out",
        marg.to_str().unwrap(),
    ]);
    assert!(!bad.status.success());
}

#[test]
fn metrics_csv_has_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let out = dir.path().join("out");
    ok(&[
        "run",
        "--synth",
        spec.to_str().unwrap(),
        "--seed",
        "8",
        "--bootstrap-iters",
        "2",
        "--bootstrap-size",
        "40",
        "--out",
        out.to_str().unwrap(),
    ]);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let header = metrics.lines().next().unwrap();
    assert_eq!(
        header,
        "user_id,subset,model,rmse_full,rmse_marginal,coverage_mean_pct,\
         coverage_carbs_pct,coverage_fat_pct,coverage_protein_pct,coverage_fiber_pct,\
         coverage_pre_bg_pct,coverage_pooled_pct"
            .replace(" ", "")
    );
    // 4 subsets x 2 models = 8 data rows
    assert_eq!(metrics.lines().count(), 9);
    let ranges_missing = !out.join("ranges.csv").exists();
    assert!(ranges_missing, "no threshold given, no ranges.csv expected");
}
