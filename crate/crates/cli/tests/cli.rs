use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use stemkit_core::audio::{read_wav, write_wav};
use stemkit_core::{AudioBuffer, WavEncoding};
use stemkit_model::{MrxConfig, MrxModel};
use stemkit_neural::PlateauSchedule;
use tempfile::TempDir;

fn stemkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stemkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = stemkit(args);
    assert!(
        out.status.success(),
        "stemkit {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Runs with `--json-errors` and returns the exit code and parsed error.
fn fails(args: &[&str]) -> (i32, Value) {
    let mut all = vec!["--json-errors"];
    all.extend_from_slice(args);
    let out = stemkit(&all);
    let code = out.status.code().expect("exit code");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    let err: Value = serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {stderr}"));
    (code, err["error"].clone())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn schema_check(schema: &str, path: &Path) {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(schema);
    let validator = jsonschema::validator_for(&read_json(&schema_path)).unwrap();
    let value = read_json(path);
    let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{} against {schema}: {errors:?}", path.display());
}

/// Relative path to file bytes for every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Small 8 kHz fixture pools.
fn pools(dir: &Path) -> PathBuf {
    let out = dir.join("pools");
    ok(&["fixtures", "--out", s(&out), "--sample-rate", "8000", "--clips", "6,2,3", "--seed", "1"]);
    out
}

fn mix(pools: &Path, out: &Path, count: &str, duration: &str, extra: &[&str]) {
    let pools_json = pools.join("pools.json");
    let profiles = pools.join("profiles.json");
    let mut args = vec![
        "mix",
        "--pools",
        s(&pools_json),
        "--profiles",
        s(&profiles),
        "--out",
        s(out),
        "--count",
        count,
        "--duration-s",
        duration,
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

/// Arguments for a small, fast network.
const MICRO: &[&str] = &[
    "--preset",
    "toy",
    "--hidden",
    "16",
    "--lstm-hidden",
    "8",
    "--lstm-layers",
    "1",
    "--num-stacks",
    "1",
    "--chunk-s",
    "2",
];

#[test]
fn fixtures_outputs_match_their_schemas() {
    let dir = TempDir::new().unwrap();
    let p = pools(dir.path());
    schema_check("pools.schema.json", &p.join("pools.json"));
    schema_check("profiles.schema.json", &p.join("profiles.json"));
    schema_check("resolved_config.schema.json", &p.join("resolved_config.json"));
}

#[test]
fn mix_is_reproducible_and_well_formed() {
    let dir = TempDir::new().unwrap();
    let p = pools(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    mix(&p, &a, "4", "12", &["--jobs", "2"]);
    mix(&p, &b, "4", "12", &["--jobs", "2"]);
    assert_eq!(tree(&a), tree(&b), "two identical runs differ");
    // the worker count never changes the audio
    mix(&p, &c, "4", "12", &["--jobs", "1"]);
    let strip = |t: BTreeMap<PathBuf, Vec<u8>>| {
        t.into_iter()
            .filter(|(k, _)| k != Path::new("resolved_config.json"))
            .collect::<BTreeMap<_, _>>()
    };
    assert_eq!(strip(tree(&a)), strip(tree(&c)));
    // a clip directory indexes to the same pools as pools.json
    let d = dir.path().join("d");
    ok(&[
        "mix", "--pools", s(&p), "--profiles", s(&p.join("profiles.json")), "--out", s(&d),
        "--count", "4", "--duration-s", "12", "--jobs", "2",
    ]);
    assert_eq!(strip(tree(&a)), strip(tree(&d)));

    for i in 0..4 {
        let m = a.join(format!("mix_{i:05}"));
        schema_check("manifest.schema.json", &m.join("manifest.json"));
        let mixture = read_wav(m.join("mix.wav")).unwrap();
        assert_eq!(mixture.sample_rate(), 8000);
        assert_eq!(mixture.len(), 12 * 8000);
        let stems: Vec<AudioBuffer> = ["music", "speech", "sfx"]
            .iter()
            .map(|n| read_wav(m.join(format!("{n}.wav"))).unwrap())
            .collect();
        for (k, v) in mixture.samples().iter().enumerate() {
            let sum = stems[0].samples()[k] + stems[1].samples()[k] + stems[2].samples()[k];
            assert_eq!(*v, sum, "mix_{i:05} sample {k}");
        }
    }
    let stats = a.join("corpus_stats.json");
    schema_check("corpus_stats.schema.json", &stats);
    schema_check("resolved_config.schema.json", &a.join("resolved_config.json"));
    let o = &read_json(&stats)["overlap"];
    let total: f64 = ["three_active", "two_active", "one_active", "zero_active"]
        .iter()
        .map(|k| o[k].as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12, "fractions sum to {total}");
    assert_eq!(read_json(&stats)["mixtures"], 4);
}

#[test]
fn stats_reproduces_corpus_stats() {
    let dir = TempDir::new().unwrap();
    let p = pools(dir.path());
    let corpus = dir.path().join("corpus");
    mix(&p, &corpus, "3", "10", &[]);
    let out = dir.path().join("stats.json");
    ok(&["stats", "--dir", s(&corpus), "--out", s(&out)]);
    assert_eq!(read_json(&out), read_json(&corpus.join("corpus_stats.json")));
    let stdout = ok(&["stats", "--dir", s(&corpus)]).stdout;
    let printed: Value = serde_json::from_slice(&stdout).unwrap();
    assert_eq!(printed, read_json(&out));
}

#[test]
fn empty_class_pool_names_the_class() {
    let dir = TempDir::new().unwrap();
    let p = pools(dir.path());
    let mut index = read_json(&p.join("pools.json"));
    index["entries"]
        .as_array_mut()
        .unwrap()
        .retain(|e| e["class"] != "speech");
    let pruned = p.join("no_speech.json");
    std::fs::write(&pruned, index.to_string()).unwrap();
    let out = dir.path().join("corpus");
    let (code, err) = fails(&["mix", "--pools", s(&pruned), "--out", s(&out), "--count", "1", "--duration-s", "5"]);
    assert_eq!(code, 2);
    assert_eq!(err["field"], "pools.speech");
    assert_eq!(err["kind"], "validation");
}

#[test]
fn invalid_settings_exit_with_usage_errors() {
    let dir = TempDir::new().unwrap();
    let p = pools(dir.path());
    let corpus = dir.path().join("corpus");
    mix(&p, &corpus, "1", "5", &[]);
    let run = dir.path().join("run");

    let (code, err) = fails(&["train", "--data", s(&corpus), "--out", s(&run), "--preset", "huge"]);
    assert_eq!((code, err["field"].as_str()), (2, Some("preset")));

    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"epochs": 1, "learning_rate": 0.1}"#).unwrap();
    let (code, err) = fails(&["train", "--out", s(&run), "--config", s(&config)]);
    assert_eq!(code, 2);
    assert!(err["message"].as_str().unwrap().contains("learning_rate"), "{err}");

    let (code, _) = fails(&["mix", "--out", s(&run), "--count", "many"]);
    assert_eq!(code, 2);

    let missing = dir.path().join("nowhere");
    let (code, err) = fails(&["train", "--data", s(&missing), "--out", s(&run)]);
    assert_eq!((code, err["field"].as_str()), (2, Some("data")));

    let (code, err) = fails(&["train", "--data", s(&corpus), "--out", s(&run), "--lr", "0"]);
    assert_eq!((code, err["field"].as_str()), (2, Some("lr")));
}

#[test]
fn config_file_and_flags_merge() {
    let dir = TempDir::new().unwrap();
    let p = pools(dir.path());
    let config = dir.path().join("mix.json");
    let pools_json = p.join("pools.json");
    std::fs::write(
        &config,
        serde_json::json!({"pools": pools_json, "count": 2, "duration_s": 5.0, "seed": 9}).to_string(),
    )
    .unwrap();
    let out = dir.path().join("corpus");
    ok(&["mix", "--config", s(&config), "--out", s(&out), "--count", "1"]);
    let resolved = read_json(&out.join("resolved_config.json"));
    assert_eq!(resolved["command"], "mix");
    assert_eq!(resolved["settings"]["count"], 1);
    assert_eq!(resolved["settings"]["seed"], 9);
    assert!(out.join("mix_00000").is_dir());
    assert!(!out.join("mix_00001").exists());
}

#[test]
fn resumed_training_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let p = pools(dir.path());
    let corpus = dir.path().join("corpus");
    mix(&p, &corpus, "2", "6", &[]);
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    let train = |out: &Path, epochs: &str, resume: Option<&Path>| {
        let mut args = vec!["--threads", "1", "train", "--data", s(&corpus), "--out", s(out), "--epochs", epochs];
        args.extend_from_slice(MICRO);
        if let Some(r) = resume {
            args.extend_from_slice(&["--resume", s(r)]);
        }
        ok(&args);
    };
    train(&full, "2", None);
    train(&part, "1", None);
    let first = part.join("checkpoints/epoch_0001.ckpt");
    train(&part, "2", Some(&first));

    assert_eq!(std::fs::read(full.join("history.json")).unwrap(), std::fs::read(part.join("history.json")).unwrap());
    assert_eq!(std::fs::read(full.join("model.ckpt")).unwrap(), std::fs::read(part.join("model.ckpt")).unwrap());
    assert_eq!(
        std::fs::read(full.join("checkpoints/epoch_0002.ckpt")).unwrap(),
        std::fs::read(part.join("checkpoints/epoch_0002.ckpt")).unwrap()
    );
    schema_check("history.schema.json", &full.join("history.json"));
    schema_check("resolved_config.schema.json", &full.join("resolved_config.json"));
    let history = read_json(&full.join("history.json"));
    assert_eq!(history["epochs"].as_array().unwrap().len(), 2);
    assert!(history["epochs"][0]["val_loss"].is_null());
}

#[test]
fn flat_loss_halves_the_learning_rate() {
    let dir = TempDir::new().unwrap();
    let p = pools(dir.path());
    let corpus = dir.path().join("corpus");
    // one 2 s chunk per epoch; a vanishing rate keeps the loss flat
    mix(&p, &corpus, "1", "3", &[]);
    let run = dir.path().join("run");
    let mut args = vec!["--threads", "1", "train", "--data", s(&corpus), "--out", s(&run), "--epochs", "6", "--lr", "1e-30"];
    args.extend_from_slice(MICRO);
    ok(&args);
    let history = read_json(&run.join("history.json"));
    let epochs = history["epochs"].as_array().unwrap();
    let losses: Vec<f64> = epochs.iter().map(|e| e["train_loss"].as_f64().unwrap()).collect();
    assert!(losses.iter().all(|&l| l == losses[0]), "loss moved: {losses:?}");
    let lrs: Vec<f64> = epochs.iter().map(|e| e["lr"].as_f64().unwrap()).collect();
    assert_eq!(lrs, [1e-30, 1e-30, 1e-30, 1e-30, 5e-31, 5e-31]);
    let mut schedule = PlateauSchedule::new(1e-30);
    for (loss, lr) in losses.iter().zip(&lrs) {
        assert_eq!(schedule.lr, *lr);
        schedule.step(*loss);
    }
}

fn write_mixture(path: &Path, len: usize, rate: u32) {
    let x: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / rate as f64;
            0.3 * (2.0 * std::f64::consts::PI * 330.0 * t).sin() + 0.1 * (2.0 * std::f64::consts::PI * 1250.0 * t).sin()
        })
        .collect();
    write_wav(path, &AudioBuffer::from_f64(&x, rate).unwrap(), WavEncoding::Float32).unwrap();
}

fn micro_checkpoint(path: &Path) {
    let config = MrxConfig {
        window_ms: vec![16.0, 32.0],
        sample_rate: 16000,
        hidden: 16,
        lstm_hidden: 8,
        lstm_layers: 1,
        num_stacks: 1,
        num_sources: 3,
        chunk_s: 0.5,
    };
    MrxModel::new(config, 3).unwrap().save(path).unwrap();
}

#[test]
fn separate_keeps_length_and_rate() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    micro_checkpoint(&ckpt);

    let native = dir.path().join("native.wav");
    write_mixture(&native, 16000 + 123, 16000);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["separate", "--checkpoint", s(&ckpt), "--input", s(&native), "--out", s(out)]);
    }
    assert_eq!(tree(&a), tree(&b), "separation is not idempotent");
    for name in ["music", "speech", "sfx"] {
        let stem = read_wav(a.join(format!("{name}.wav"))).unwrap();
        assert_eq!((stem.len(), stem.sample_rate()), (16123, 16000));
        assert!(stem.samples().iter().all(|v| v.is_finite()));
    }
    schema_check("resolved_config.schema.json", &a.join("resolved_config.json"));

    let cd = dir.path().join("cd.wav");
    write_mixture(&cd, 44100, 44100);
    let out = dir.path().join("cd");
    let (code, err) = fails(&["separate", "--checkpoint", s(&ckpt), "--input", s(&cd), "--out", s(&out)]);
    assert_eq!((code, err["field"].as_str()), (2, Some("process_rate")));
    let (code, _) = fails(&[
        "separate",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&cd),
        "--out",
        s(&out),
        "--process-rate",
        "22050",
    ]);
    assert_eq!(code, 2);
    ok(&["separate", "--checkpoint", s(&ckpt), "--input", s(&cd), "--out", s(&out), "--process-rate", "16000"]);
    for name in ["music", "speech", "sfx"] {
        let stem = read_wav(out.join(format!("{name}.wav"))).unwrap();
        assert_eq!((stem.len(), stem.sample_rate()), (44100, 44100));
    }

    let (code, _) = fails(&["separate", "--checkpoint", s(&native), "--input", s(&native), "--out", s(&out)]);
    assert_eq!(code, 3, "a WAV is not a checkpoint");
}

fn global(report: &Value, stem: &str, key: &str) -> f64 {
    report["global"][stem][key].as_f64().unwrap()
}

#[test]
fn evaluate_scores_references_and_baselines() {
    let dir = TempDir::new().unwrap();
    let p = pools(dir.path());
    let corpus = dir.path().join("corpus");
    mix(&p, &corpus, "2", "10", &[]);

    // references scored against themselves hit the metric ceiling
    let perfect = dir.path().join("perfect");
    ok(&["evaluate", "--references", s(&corpus), "--estimates", s(&corpus), "--out", s(&perfect)]);
    let report_path = perfect.join("report.json");
    schema_check("eval_report.schema.json", &report_path);
    let report = read_json(&report_path);
    assert_eq!(report["system"], "estimates");
    assert_eq!(report["tracks"], serde_json::json!(["mix_00000", "mix_00001"]));
    for stem in ["music", "speech", "sfx"] {
        assert!(global(&report, stem, "si_sdr_db") >= 79.0, "{stem}: {report}");
    }
    for scenario in report["scenarios"].as_object().unwrap().values() {
        for cell in scenario["cells"].as_object().unwrap().values() {
            if cell["kind"] == "pes" && !cell["value_db"].is_null() {
                assert!((cell["value_db"].as_f64().unwrap() + 80.0).abs() < 1e-6, "{cell}");
            }
        }
    }
    let table = std::fs::read_to_string(perfect.join("report.txt")).unwrap();
    assert!(table.contains("MSX") && table.contains("PES"), "{table}");

    // the mixture itself improves on nothing
    let baseline = dir.path().join("baseline");
    ok(&["evaluate", "--references", s(&corpus), "--out", s(&baseline), "--oracle", "psf"]);
    let report = read_json(&baseline.join("report.json"));
    schema_check("eval_report.schema.json", &baseline.join("report.json"));
    assert_eq!(report["system"], "mixture");
    for stem in ["music", "speech", "sfx"] {
        assert!(global(&report, stem, "si_sdri_db").abs() < 1e-9);
        let oracle = report["oracle_psf"]["global"][stem]["si_sdri_db"].as_f64().unwrap();
        assert!(oracle > 0.0, "{stem}: oracle {oracle}");
    }

    // one estimate dir for a single mixture directory
    let single = corpus.join("mix_00000");
    let est = dir.path().join("est");
    std::fs::create_dir(&est).unwrap();
    for name in ["music", "speech", "sfx"] {
        let x = read_wav(single.join(format!("{name}.wav"))).unwrap();
        let short = x.excerpt(0, x.len() - 10);
        write_wav(est.join(format!("{name}.wav")), &short, WavEncoding::Float32).unwrap();
    }
    let out = dir.path().join("short");
    let (code, _) = fails(&["evaluate", "--references", s(&single), "--estimates", s(&est), "--out", s(&out)]);
    assert_eq!(code, 2, "length mismatch");

    let (code, err) = fails(&["evaluate", "--references", s(&corpus), "--out", s(&out), "--oracle", "ibm"]);
    assert_eq!((code, err["field"].as_str()), (2, Some("oracle")));
}

#[test]
fn help_and_version_succeed() {
    for args in [&["--help"][..], &["--version"], &["mix", "--help"], &["evaluate", "--help"]] {
        ok(args);
    }
    let out = stemkit(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}
