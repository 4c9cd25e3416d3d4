use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mzimesh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mzimesh")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = mzimesh(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate_small(dir: &Path) {
    ok(&["generate", "--out", s(dir), "--samples", "300", "--sweep-points", "21"]);
}

#[test]
fn generate_writes_sweeps_random_set_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate_small(&a);
    generate_small(&b);

    let jsonl: Vec<String> = {
        let mut v: Vec<String> = fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".jsonl"))
            .collect();
        v.sort();
        v
    };
    let mut expected: Vec<String> = (1..=5).map(|k| format!("sweep_mzi{k}.jsonl")).collect();
    expected.push("random.jsonl".into());
    expected.sort();
    assert_eq!(jsonl, expected);

    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?} differs");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 2021);
    assert_eq!(manifest["command"], "generate");
}

#[test]
fn seeds_change_the_data() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate_small(&a);
    ok(&["--seed", "7", "generate", "--out", s(&b), "--samples", "300", "--sweep-points", "21"]);
    assert_ne!(fs::read(a.join("random.jsonl")).unwrap(), fs::read(b.join("random.jsonl")).unwrap());
}

#[test]
fn model1_without_sweeps_exits_with_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate_small(&data);
    fs::remove_file(data.join("sweep_mzi3.jsonl")).unwrap();
    let out = mzimesh(&[
        "fit",
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("fit")),
        "--model",
        "m1",
        "--n-train",
        "200",
        "--n-val",
        "0",
        "--n-test",
        "50",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_rejects_models_from_another_topology() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let fit = tmp.path().join("fit");
    generate_small(&data);
    ok(&[
        "fit",
        "--data",
        s(&data),
        "--out",
        s(&fit),
        "--model",
        "m1",
        "--n-train",
        "200",
        "--n-val",
        "0",
        "--n-test",
        "50",
    ]);
    let model = fit.join("model_m1.json");
    let mut file: serde_json::Value = serde_json::from_slice(&fs::read(&model).unwrap()).unwrap();
    file["topology_hash"] = "0000".into();
    fs::write(&model, serde_json::to_vec(&file).unwrap()).unwrap();
    let out = mzimesh(&[
        "eval",
        "--model",
        s(&model),
        "--test",
        s(&fit.join("test.jsonl")),
        "--out",
        s(&tmp.path().join("ev")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("topology"));
}

#[test]
fn diverging_training_exits_with_numerical_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate_small(&data);
    // Weights far beyond any physical value overflow the squared error.
    let random = data.join("random.jsonl");
    let text = fs::read_to_string(&random).unwrap();
    let mut lines = Vec::new();
    for line in text.lines() {
        let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
        for row in v["w_db"].as_array_mut().unwrap() {
            for w in row.as_array_mut().unwrap() {
                *w = 1e300.into();
            }
        }
        lines.push(v.to_string());
    }
    fs::write(&random, lines.join("\n") + "\n").unwrap();
    let out = mzimesh(&[
        "fit",
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("fit")),
        "--model",
        "m3",
        "--arch",
        "4",
        "--max-iterations",
        "5",
        "--n-train",
        "200",
        "--n-val",
        "50",
        "--n-test",
        "50",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_architecture_is_a_usage_error() {
    let out = mzimesh(&["fit", "--data", "x", "--out", "y", "--arch", "16,,4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn xor_sigma_override_applies_to_every_row() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let fit = tmp.path().join("fit");
    let xor = tmp.path().join("xor");
    generate_small(&data);
    ok(&[
        "fit",
        "--data",
        s(&data),
        "--out",
        s(&fit),
        "--model",
        "m1",
        "--n-train",
        "200",
        "--n-val",
        "0",
        "--n-test",
        "50",
    ]);
    ok(&["xor", "--fit-dir", s(&fit), "--out", s(&xor), "--sigma", "0", "--realizations", "5"]);
    let csv = fs::read_to_string(xor.join("fig3c.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("m1,0,1,1,1,5"));
}
