use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use repscope::activation_io::{write_tensor, DType, Manifest, TaskEntry};
use repscope::DenseMatrix;
use repscope_cli::pipeline::CkaRow;
use repscope_cli::report::REPORT_SCHEMA;
use repscope_cli::synth::{generate, SynthSpec, EXPERIMENTAL};

fn repscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repscope"))
        .args(args)
        .env_remove("REPSCOPE_THREADS")
        .output()
        .expect("binary runs")
}

fn small_spec() -> SynthSpec {
    SynthSpec {
        tasks: 6,
        unseen_tasks: 1,
        clusters: 2,
        layers: 8,
        dims: 8,
        n_examples: (20, 30),
        boundaries: (2, 5),
        ..SynthSpec::default()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_args<'a>(manifest: &'a Path, controls: &'a Path, out: &'a Path) -> Vec<&'a str> {
    vec![
        "run",
        "--manifest",
        s(manifest),
        "--experimental",
        EXPERIMENTAL,
        "--controls-map",
        s(controls),
        "--out",
        s(out),
        "--perplexity",
        "5",
        "--tsne-iterations",
        "300",
        "--tsne-layers",
        "1,8",
    ]
}

fn read_cka(out: &Path) -> Vec<CkaRow> {
    csv::Reader::from_path(out.join("cka.csv"))
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

/// One task, `layers` layers; the control equals the experimental model
/// except for noise added at the listed layers.
fn paired_fixture(dir: &Path, layers: usize, noisy: &[(usize, f64)]) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let task = TaskEntry {
        task_id: "t1".into(),
        cluster_id: "c".into(),
        n_examples: 30,
        seen: true,
        text_path: None,
        data_size: None,
    };
    let mut manifest = Manifest::new(vec!["e".into(), "c".into()], vec![task], layers)
        .unwrap()
        .with_root(dir);
    for layer in 1..=layers {
        let e = DenseMatrix::from_fn(30, 6, |_, _| StandardNormal.sample(&mut rng)).unwrap();
        let sigma = noisy.iter().find(|(l, _)| *l == layer).map_or(0.0, |(_, s)| *s);
        let c = DenseMatrix::from_fn(30, 6, |i, j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            e.get(i, j) + sigma * z
        })
        .unwrap();
        write_tensor(manifest.tensor_path("e", "t1", layer).unwrap(), &e, DType::F64).unwrap();
        write_tensor(manifest.tensor_path("c", "t1", layer).unwrap(), &c, DType::F64).unwrap();
    }
    let manifest_path = dir.join("manifest.json");
    manifest.save(&manifest_path).unwrap();
    let controls = dir.join("controls.json");
    fs::write(&controls, r#"{"t1": "c"}"#).unwrap();
    (manifest_path, controls)
}

#[test]
fn full_run_produces_valid_report() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&dir.path().join("data"), &small_spec()).unwrap();
    let out = dir.path().join("out");
    let res = repscope(&run_args(&ds.manifest_path, &ds.controls_path, &out));
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    assert_eq!(report["cka"]["layers"], 8);
    assert_eq!(report["layer_profiles"].as_array().unwrap().len(), 8);
    assert_eq!(report["tsne"]["layers"], serde_json::json!([1, 8]));
    assert_eq!(read_cka(&out).len(), 6 * 8);
    for name in ["variance.csv", "variance_means.csv", "readability.csv", "correlation.csv", "profiles.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn identical_models_score_one_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, controls) = paired_fixture(dir.path(), 4, &[]);
    let out = dir.path().join("out");
    let res = repscope(&[
        "cka", "--manifest", s(&manifest), "--experimental", "e", "--controls-map", s(&controls),
        "--out", s(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = read_cka(&out);
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert!((r.cka - 1.0).abs() <= 1e-10, "layer {}: {}", r.layer, r.cka);
    }
}

#[test]
fn noise_at_one_layer_lowers_only_that_layer() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, controls) = paired_fixture(dir.path(), 7, &[(5, 1.0)]);
    let out = dir.path().join("out");
    let res = repscope(&[
        "cka", "--manifest", s(&manifest), "--experimental", "e", "--controls-map", s(&controls),
        "--out", s(&out),
    ]);
    assert!(res.status.success());
    let rows = read_cka(&out);
    let at = |l: usize| rows.iter().find(|r| r.layer == l).unwrap().cka;
    assert!(at(5) < at(4) && at(5) < at(6));
    assert!(at(5) < 0.9);
}

#[test]
fn missing_control_exits_two_and_names_the_task() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&dir.path().join("data"), &small_spec()).unwrap();
    let mut controls = ds.controls.clone();
    controls.remove("task003");
    let partial = dir.path().join("partial.json");
    fs::write(&partial, serde_json::to_string(&controls).unwrap()).unwrap();
    let out = dir.path().join("out");
    let res = repscope(&run_args(&ds.manifest_path, &partial, &out));
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("task003"));
    assert!(!out.join("cka.csv").exists());
}

#[test]
fn missing_tensor_exits_two_and_names_the_triple() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&dir.path().join("data"), &small_spec()).unwrap();
    let victim = ds.manifest.tensor_path("control-task002", "task002", 4).unwrap();
    fs::remove_file(&victim).unwrap();
    let out = dir.path().join("out");
    let res = repscope(&run_args(&ds.manifest_path, &ds.controls_path, &out));
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("task002") && stderr.contains("layer 4"), "{stderr}");
}

#[test]
fn corrupt_tensor_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&dir.path().join("data"), &small_spec()).unwrap();
    let victim = ds.manifest.tensor_path(EXPERIMENTAL, "task001", 2).unwrap();
    let mut bytes = fs::read(&victim).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&victim, bytes).unwrap();
    let out = dir.path().join("out");
    let res = repscope(&run_args(&ds.manifest_path, &ds.controls_path, &out));
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn downstream_steps_without_upstream_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&dir.path().join("data"), &small_spec()).unwrap();
    let out = dir.path().join("out");
    for step in ["segment", "correlate", "report"] {
        let res = repscope(&[step, "--manifest", s(&ds.manifest_path), "--out", s(&out)]);
        assert_eq!(res.status.code(), Some(3), "{step}");
    }
}

#[test]
fn report_warns_when_manifest_changes_between_steps() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&dir.path().join("data"), &small_spec()).unwrap();
    let out = dir.path().join("out");
    let common = [
        "--manifest", s(&ds.manifest_path), "--experimental", EXPERIMENTAL, "--controls-map",
        s(&ds.controls_path), "--out", s(&out),
    ];
    let res = repscope(&[&["cka"], &common[..]].concat());
    assert!(res.status.success());
    let mut text = fs::read_to_string(&ds.manifest_path).unwrap();
    text.push('\n');
    fs::write(&ds.manifest_path, text).unwrap();
    let res = repscope(&[&["report"], &common[..]].concat());
    assert!(res.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let warnings = report["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("manifest changed")));
}

#[test]
fn reruns_with_different_thread_counts_match() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&dir.path().join("data"), &small_spec()).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let mut args_a = run_args(&ds.manifest_path, &ds.controls_path, &a);
    args_a.extend(["--threads", "1"]);
    let mut args_b = run_args(&ds.manifest_path, &ds.controls_path, &b);
    args_b.extend(["--threads", "3"]);
    assert!(repscope(&args_a).status.success());
    assert!(repscope(&args_b).status.success());
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        let (x, y) = (fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        if name == "report.json" {
            let mut x: serde_json::Value = serde_json::from_slice(&x).unwrap();
            let mut y: serde_json::Value = serde_json::from_slice(&y).unwrap();
            for v in [&mut x, &mut y] {
                v["generated_at"] = serde_json::Value::Null;
                v["config"]["out"] = serde_json::Value::Null;
            }
            assert_eq!(x, y);
        } else {
            assert!(x == y, "{name:?} differs");
        }
    }
}

#[test]
fn bad_flags_are_rejected() {
    let res = repscope(&["run", "--manifest", "m.json", "--out", "o", "--analyses", "cka,bogus"]);
    assert_eq!(res.status.code(), Some(2));
    let res = repscope(&["cka", "--manifest", "/nonexistent/m.json", "--out", "o", "--experimental", "e"]);
    assert_eq!(res.status.code(), Some(2));
}
