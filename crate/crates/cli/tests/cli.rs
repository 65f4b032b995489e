use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_bfc-sim");

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/small.toml")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn bfc(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("BFC_SIM_OUT")
        .output()
        .unwrap()
}

fn run(experiment: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = fixture();
    let mut args = vec![
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--experiment",
        experiment,
    ];
    args.extend_from_slice(&["--out", out.to_str().unwrap()]);
    args.extend_from_slice(extra);
    let o = bfc(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn validate_accepts_shipped_configs() {
    for cfg in [
        fixture(),
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/microring.toml"),
    ] {
        let o = bfc(&["validate", "--config", cfg.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("ok"));
    }
}

#[test]
fn invalid_config_reports_file_line_and_field() {
    let dir = scratch("invalid");
    let text =
        fs::read_to_string(fixture())
            .unwrap()
            .replacen("jitter_ps = 50.0", "jitter_ps = -5.0", 1);
    let path = dir.join("bad.toml");
    fs::write(&path, &text).unwrap();
    let line = text
        .lines()
        .position(|l| l.trim() == "jitter_ps = -5.0")
        .unwrap()
        + 1;

    let o = bfc(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains(&format!("bad.toml:{line}: detectors.signal.jitter_ps")),
        "{err}"
    );

    // run refuses the same file before simulating anything
    let o = bfc(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--experiment",
        "jsi",
        "--out",
        dir.join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.join("o").exists());
}

#[test]
fn syntax_error_and_missing_file() {
    let dir = scratch("syntax");
    let path = dir.join("broken.toml");
    fs::write(&path, "output_dir = \"x\"\n[ring\n").unwrap();
    let o = bfc(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("broken.toml:2"));

    let o = bfc(&[
        "validate",
        "--config",
        dir.join("absent.toml").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    let cfg = fixture();
    let o = bfc(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--experiment",
        "hom",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical_and_manifest_is_complete() {
    let a = scratch("rerun_a");
    let b = scratch("rerun_b");
    run("all", &a, &[]);
    run("all", &b, &[]);
    let files_a = read_dir(&a);
    assert_eq!(files_a, read_dir(&b));

    let manifest = String::from_utf8(files_a["manifest.txt"].clone()).unwrap();
    let listed: BTreeMap<&str, &str> = manifest
        .lines()
        .filter_map(|l| l.strip_prefix("output="))
        .map(|l| {
            let mut parts = l.split(' ');
            let name = parts.next().unwrap();
            (name, parts.next().unwrap().strip_prefix("sha256=").unwrap())
        })
        .collect();
    assert_eq!(listed.len() + 1, files_a.len());
    for (name, hash) in &listed {
        assert_eq!(
            hex::encode(Sha256::digest(&files_a[*name])),
            *hash,
            "{name}"
        );
    }
    let cfg_hash = hex::encode(Sha256::digest(fs::read(fixture()).unwrap()));
    assert!(manifest.contains(&format!("config_sha256={cfg_hash}")));
    assert!(manifest.contains("seed=7"));

    // a different seed changes the artifact set
    let c = scratch("rerun_c");
    run("all", &c, &["--seed", "8"]);
    let set = |m: &[u8]| {
        String::from_utf8_lossy(m)
            .lines()
            .find(|l| l.starts_with("artifact_set_sha256"))
            .unwrap()
            .to_string()
    };
    let files_c = read_dir(&c);
    assert_ne!(set(&files_a["manifest.txt"]), set(&files_c["manifest.txt"]));
    assert!(String::from_utf8_lossy(&files_c["manifest.txt"]).contains("seed=8"));
}

#[test]
fn svg_outputs_have_expected_elements() {
    let dir = scratch("svg");
    run("jsi", &dir, &[]);
    run("franson_taud", &dir, &[]);
    run("dispersion", &dir, &[]);
    let svg = |name: &str| fs::read_to_string(dir.join(name)).unwrap();

    let jsi = svg("jsi.svg");
    assert_eq!(jsi.matches(r#"class="cell""#).count(), 36);
    // fringe plus upper and lower envelope
    assert_eq!(svg("franson_taud.svg").matches("<path").count(), 3);
    assert_eq!(svg("franson_envelope.svg").matches("<path").count(), 2);
    assert_eq!(svg("dispersion.svg").matches("<path").count(), 4);
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "svg") {
            let text = fs::read_to_string(&p).unwrap();
            assert!(
                text.starts_with("<svg") && text.trim_end().ends_with("</svg>"),
                "{}",
                p.display()
            );
            assert!(
                text.matches("<line").count() >= 2,
                "{} has no axes",
                p.display()
            );
        }
    }
}

#[test]
fn csv_outputs_are_well_formed() {
    let dir = scratch("csv");
    run("correlate", &dir, &[]);
    run("franson_common", &dir, &[]);
    let corr = fs::read_to_string(dir.join("correlation_S2I2.csv")).unwrap();
    let mut lines = corr.lines();
    let cols = lines.next().unwrap().split(',').count();
    assert!(lines.all(|l| l.split(',').count() == cols));

    let (peak_delay, _) = corr
        .lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split(',');
            let d: f64 = f.next().unwrap().parse().unwrap();
            (d, f.next().unwrap().parse::<u64>().unwrap())
        })
        .max_by_key(|&(_, c)| c)
        .unwrap();
    assert!(peak_delay.abs() < 200.0, "peak at {peak_delay} ps");

    let scan = fs::read_to_string(dir.join("franson_common.csv")).unwrap();
    assert!(scan.starts_with("delay_fs,coincidences,visibility\n"));
    assert_eq!(scan.lines().count(), 61);
    let car = fs::read_to_string(dir.join("car_S2I2.txt")).unwrap();
    let value = car.lines().find_map(|l| l.strip_prefix("car=")).unwrap();
    assert!(value.parse::<f64>().unwrap() > 1.0);
}

#[test]
fn output_directory_precedence() {
    let dir = scratch("precedence");
    let cfg = fixture();
    let flag = dir.join("flag");
    let env = dir.join("env");

    // flag beats environment
    let o = Command::new(BIN)
        .args([
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--experiment",
            "jsi",
            "--out",
            flag.to_str().unwrap(),
        ])
        .env("BFC_SIM_OUT", &env)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(flag.join("manifest.txt").exists() && !env.exists());

    // environment beats the config file
    let o = Command::new(BIN)
        .args([
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--experiment",
            "jsi",
        ])
        .env("BFC_SIM_OUT", &env)
        .current_dir(&dir)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(env.join("manifest.txt").exists() && !dir.join("from_config").exists());

    // config file as the last resort, relative to the working directory
    let o = Command::new(BIN)
        .args([
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--experiment",
            "jsi",
        ])
        .env_remove("BFC_SIM_OUT")
        .current_dir(&dir)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.join("from_config/manifest.txt").exists());
}

#[test]
fn unwritable_output_fails_cleanly() {
    let dir = scratch("unwritable");
    let blocker = dir.join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let cfg = fixture();
    let o = bfc(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--experiment",
        "jsi",
        "--out",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot write outputs"));
}

#[test]
fn shared_gate_adds_corrected_histogram() {
    let dir = scratch("gated");
    let text = fs::read_to_string(fixture()).unwrap().replace(
        "jitter_ps = 50.0",
        "jitter_ps = 50.0\ngate = { period_ns = 40.0, width_ns = 20.0 }",
    );
    let path = dir.join("gated.toml");
    fs::write(&path, text).unwrap();
    let out = dir.join("o");
    let o = bfc(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--experiment",
        "correlate",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let corrected = fs::read_to_string(out.join("correlation_S2I2_gate_corrected.csv")).unwrap();
    assert!(corrected.starts_with("delay_ps,counts,valid\n"));
    // beyond one gate width the acceptance vanishes and bins are masked
    assert!(corrected.lines().skip(1).any(|l| l.ends_with(",0")));
}
