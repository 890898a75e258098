use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use envdiff_cli::commands::read_sweep_csv;
use envdiff_core::simulate::{DatabaseKind, DatasetIndex};

const CONFIG: &str = r#"
seed = 3

[dataset]
synthetic = true
train_hours = 0.005
test_hours = 0.003

[dataset.synth]
utterances = 10
min_utterance_s = 1.0
max_utterance_s = 1.5
noise_recordings = 2
noise_duration_s = 6.0
rooms = 2
angles_per_room = 5
"#;

fn envdiff(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_envdiff"))
        .current_dir(dir)
        .env_remove("ENVDIFF_CONFIG")
        .env("ENVDIFF_WORKERS", "2")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    dir
}

fn simulate(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["-c", "exp.toml", "simulate", "--out", out];
    args.extend_from_slice(extra);
    ok(envdiff(dir, &args));
    dir.join(out)
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = setup();
    let a = simulate(dir.path(), "a", &[]);
    let b = simulate(dir.path(), "b", &[]);
    let ia = fs::read(a.join("n1-fold1/index.json")).unwrap();
    let ib = fs::read(b.join("n1-fold1/index.json")).unwrap();
    assert_eq!(ia, ib);
    let index: DatasetIndex = serde_json::from_slice(&ia).unwrap();
    let first = index.mixtures[0].files.as_ref().unwrap();
    assert_eq!(
        fs::read(a.join("n1-fold1").join(&first.mixture)).unwrap(),
        fs::read(b.join("n1-fold1").join(&first.mixture)).unwrap()
    );

    let c = simulate(dir.path(), "c", &["--seed", "4"]);
    assert_ne!(ia, fs::read(c.join("n1-fold1/index.json")).unwrap());
}

#[test]
fn four_database_fold_holds_out_its_index() {
    let dir = setup();
    let root = simulate(dir.path(), "data", &["--n", "4", "--fold", "2"]);
    let index = DatasetIndex::load(&root.join("n4-fold2/index.json")).unwrap();
    for kind in [DatabaseKind::Speech, DatabaseKind::Noise, DatabaseKind::Brir] {
        let names = index.train_database_names(kind);
        assert_eq!(names.len(), 4);
        assert!(!names.contains(&format!("{kind}2")), "{names:?}");
    }
}

#[test]
fn enhance_reports_budget_and_reruns_bit_identically() {
    let dir = setup();
    simulate(dir.path(), "data", &[]);
    let run = |out: &str| {
        let o = ok(envdiff(
            dir.path(),
            &["-c", "exp.toml", "enhance", "--dataset", "data/n1-fold1", "--out", out, "--denoiser", "oracle", "--sampler", "pc", "--steps", "16", "--condition", "matched"],
        ));
        String::from_utf8_lossy(&o.stderr).into_owned()
    };
    let stderr = run("e1");
    assert!(stderr.contains("31 denoiser evaluations"), "{stderr}");
    run("e2");
    let mut n = 0;
    for entry in fs::read_dir(dir.path().join("e1")).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "wav") {
            let twin = dir.path().join("e2").join(p.file_name().unwrap());
            assert_eq!(fs::read(&p).unwrap(), fs::read(twin).unwrap());
            n += 1;
        }
    }
    assert!(n > 0);

    let o = ok(envdiff(
        dir.path(),
        &["-c", "exp.toml", "evaluate", "--dataset", "data/n1-fold1", "--enhanced", "e1", "--system", "oracle", "--condition", "matched"],
    ));
    let rows = fs::read_to_string(dir.path().join("e1/rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), n + 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains(&format!("scored {n} mixtures, 0 missing")));
}

#[test]
fn sweep_writes_one_row_per_sampler_step_and_condition() {
    let dir = setup();
    simulate(dir.path(), "data", &[]);
    ok(envdiff(
        dir.path(),
        &["-c", "exp.toml", "sweep", "--dataset", "data/n1-fold1", "--out", "sw", "--steps", "2,4", "--samplers", "pc,edm", "--denoiser", "gaussian"],
    ));
    let rows = read_sweep_csv(&dir.path().join("sw/sweep.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    for r in &rows {
        let expected = 2 * r.n_steps - 1;
        assert_eq!(r.evaluations, Some(expected));
        // clips too short for ESTOI are scored invalid and flag their row
        assert_eq!(r.flagged, r.missing > 0);
    }
    assert!(dir.path().join("sw/sweep-report.json").is_file());
}

#[test]
fn exit_codes_follow_error_category() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "seed = 1\nsneed = 2\n").unwrap();
    let o = envdiff(dir.path(), &["-c", "bad.toml", "selftest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sneed"));

    fs::write(dir.path().join("steps.toml"), "[sampler]\nn_steps = 0\n").unwrap();
    let o = envdiff(dir.path(), &["-c", "steps.toml", "enhance", "--dataset", ".", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));

    let o = envdiff(dir.path(), &["fit", "--dataset", "nowhere"]);
    assert_eq!(o.status.code(), Some(3));

    simulate(dir.path(), "data", &[]);
    fs::write(dir.path().join("huge.toml"), format!("{CONFIG}\n[denoiser]\nsigma_prior = 1e300\n")).unwrap();
    let o = envdiff(
        dir.path(),
        &["-c", "huge.toml", "enhance", "--dataset", "data/n1-fold1", "--out", "h", "--denoiser", "gaussian"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn schedule_dump_csv_and_json() {
    let dir = setup();
    let o = ok(envdiff(dir.path(), &["schedule", "dump", "--points", "11"]));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 12);
    assert!(lines[0].starts_with("t,"));
    assert!(lines[6].starts_with("0.5,"));

    let o = ok(envdiff(dir.path(), &["schedule", "dump", "--points", "5", "--format", "json"]));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 5);
    let mid = &rows[2];
    assert_eq!(mid["t"], 0.5);
    assert!((mid["sigma"].as_f64().unwrap() - (-1.5f64).exp()).abs() < 1e-12);
}

#[test]
fn selftest_passes() {
    let dir = setup();
    let o = ok(envdiff(dir.path(), &["selftest"]));
    let text = String::from_utf8_lossy(&o.stdout).into_owned() + &String::from_utf8_lossy(&o.stderr);
    assert!(!text.contains("FAIL"), "{text}");
}
