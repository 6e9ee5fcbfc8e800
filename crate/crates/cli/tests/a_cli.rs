use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bouncekit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

#[test]
fn noiseless_drop_has_restitution_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.csv");
    ok(&["simulate", "--e", "0.8", "--log10-kappa", "9", "--drops", "1", "--height", "0.26", "--out", s(&out)]);
    let mut r = csv::Reader::from_path(&out).unwrap();
    let t: Vec<f64> = r.records().map(|rec| rec.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(t.len(), 3);
    let ratio = (t[2] - t[1]) / (t[1] - t[0]);
    assert!((ratio - 0.8).abs() < 1e-9, "{ratio}");
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let args = |out: &Path, seed: &str| {
        ok(&["simulate", "--drops", "5", "--position-noise", "0.0067", "--seed", seed, "--out", s(out)]);
    };
    args(&p("a.csv"), "5");
    args(&p("b.csv"), "5");
    args(&p("c.csv"), "6");
    let read = |n: &str| std::fs::read(p(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["track", "--trials", "12", "--workers", "1", "--out", s(&a)]);
    ok(&["track", "--trials", "12", "--workers", "4", "--out", s(&b)]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn manifest_replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.csv");
    let post = dir.path().join("post.json");
    ok(&["simulate", "--drops", "4", "--seed", "2", "--out", s(&obs)]);
    ok(&[
        "calibrate", "--obs", s(&obs), "--train", "300", "--set", "train.epochs=10", "--set", "train.hidden=[8]", "--out", s(&post),
    ]);
    let manifest = dir.path().join("post.json.manifest.json");
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "calibrate");
    assert_eq!(m["config"]["train"]["epochs"], 10);
    assert_eq!(m["config"]["train_size"], 300);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);

    let again = dir.path().join("again");
    ok(&["replay", "--manifest", s(&manifest), "--out-dir", s(&again)]);
    assert_eq!(std::fs::read(&post).unwrap(), std::fs::read(again.join("post.json")).unwrap());

    // a changed input is refused
    std::fs::write(&obs, "drop,bounce,time,x,y\n").unwrap();
    let out = run(&["replay", "--manifest", s(&manifest), "--out-dir", s(&again)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(run(&["teleport"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--warp", "9", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(run(&["localize", "--wav", "a.wav", "--mode", "psychic", "--out", s(&out)]).status.code(), Some(2));

    let cases = [
        (vec!["--set", "drop.bounciness=2"], "drop.bounciness"),
        (vec!["--set", "drops=many"], "drops"),
        (vec!["--e", "1.4"], "restitution"),
        (vec!["--set", "seed=-3"], "seed"),
    ];
    for (extra, key) in cases {
        let mut args = vec!["simulate", "--out", s(&out)];
        args.extend(extra);
        let o = run(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(&format!("`{key}`")), "{args:?}: {err}");
    }
    assert!(!out.exists());

    let o = run(&["track", "--ball", "bowling/ice", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`ball`"));
    let o = run(&["cupmap", "--posterior", "missing.json", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn presets_resolve_to_their_ball() {
    let dir = tempfile::tempdir().unwrap();
    for (file, ball) in [
        ("ping-pong-table.toml", "ping-pong/table"),
        ("tennis-table.toml", "tennis/table"),
        ("moon-table.toml", "moon/table"),
        ("ping-pong-asphalt.toml", "ping-pong/asphalt"),
    ] {
        let out = dir.path().join(file).with_extension("csv");
        ok(&["track", "--config", s(&preset(file)), "--trials", "2", "--out", s(&out)]);
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(file).with_extension("csv.manifest.json")).unwrap())
                .unwrap();
        assert_eq!(m["config"]["ball"], ball);
        assert_eq!(m["config"]["trials"], 2);
    }
    // the calibration and cup files parse against their subcommands
    let obs = dir.path().join("obs.csv");
    ok(&["simulate", "--out", s(&obs)]);
    let post = dir.path().join("post.json");
    ok(&[
        "calibrate", "--config", s(&preset("calibrate.toml")), "--obs", s(&obs), "--train", "200", "--set", "train.epochs=5", "--out",
        s(&post),
    ]);
    ok(&["cupmap", "--config", s(&preset("cupmap.toml")), "--posterior", s(&post), "--n", "2", "--out", s(&dir.path().join("c.csv"))]);
}

#[test]
fn ball_key_selects_preset_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    ok(&["track", "--ball", "moon/table", "--set", "restitution=0.7", "--trials", "1", "--out", s(&out)]);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.csv.manifest.json")).unwrap()).unwrap();
    let c = &m["config"];
    assert_eq!(c["lookahead"], 2);
    assert_eq!(c["log10_kappa"], 1.8);
    assert_eq!(c["restitution"], 0.7);
    assert_eq!(c["e_estimate"], 0.7);
}

#[test]
fn audio_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("drop.wav");
    let loc = dir.path().join("loc.csv");
    ok(&["synth-audio", "--seed", "4", "--out", s(&wav)]);
    let array = dir.path().join("array.json");
    std::fs::write(&array, r#"{"positions": [[0, 0, 0.0762], [0.55, 0, 0.0762], [0, 0.55, 0.0762]]}"#).unwrap();
    ok(&["localize", "--wav", s(&wav), "--mode", "offline", "--array", s(&array), "--out", s(&loc)]);
    let rows = |p: &Path| -> Vec<[f64; 3]> {
        csv::Reader::from_path(p)
            .unwrap()
            .records()
            .map(|r| {
                let r = r.unwrap();
                [r[2].parse().unwrap(), r[3].parse().unwrap(), r[4].parse().unwrap()]
            })
            .collect()
    };
    let truth = rows(&dir.path().join("drop.truth.csv"));
    let found = rows(&loc);
    assert_eq!(truth.len(), found.len());
    for (t, f) in truth.iter().zip(&found) {
        assert!((t[0] - f[0]).abs() < 0.5e-3);
        assert!((t[1] - f[1]).hypot(t[2] - f[2]) < 0.02);
    }
}
