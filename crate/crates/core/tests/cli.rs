use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const QUICK: &str = "prior_epochs = 3\nposterior_epochs = 2\nerm_epochs = 3\nmc_samples = 200\nsamples_per_example = 5\n";

fn selfcert(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfcert"))
        .args(args)
        .current_dir(dir)
        .env_remove("SELFCERT_CACHE_DIR")
        .output()
        .unwrap()
}

fn ok_json(args: &[&str], dir: &Path) -> Value {
    let out = selfcert(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn train_certify_evaluate_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("quick.toml"), QUICK).unwrap();
    let common = ["--config", "quick.toml", "--profile", "desk", "--dataset", "blobs:n=400", "--out-dir", "run", "--seed", "3"];
    let with = |cmd: &str, extra: &[&'static str]| -> Vec<String> {
        let mut v = vec![cmd.to_string()];
        v.extend(common.iter().map(|s| s.to_string()));
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let run = |args: Vec<String>| ok_json(&args.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());

    let trained = run(with("train-pnn", &["--mode", "traditional-pnn", "--prior-frac", "0.5"]));
    assert!(dir.path().join("run/prior.model").exists());
    let certified = run(with("certify", &[]));
    for key in ["mc_errors", "kl_div", "final_bound", "n_cert", "m_samples"] {
        assert_eq!(trained[key], certified[key], "{key}");
    }
    assert_eq!(certified["m_samples"], 200);
    let csv = std::fs::read_to_string(dir.path().join("run/certificate.csv")).unwrap();
    assert!(csv.starts_with("mc_avg_01,"));

    let override_m = run(with("certify", &["--mc-samples", "100"]));
    assert_eq!(override_m["m_samples"], 100);

    let erm = run(with("train-erm", &[]));
    let b = erm["binomial"]["value"].as_f64().unwrap();
    let c = erm["chernoff"]["value"].as_f64().unwrap();
    assert!(b <= c + 1e-9);

    let out = selfcert(&with("evaluate", &[]).iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("stochastic_test_err_01") && text.contains("binomial"));

    // same models, different data
    let args = ["certify", "--config", "quick.toml", "--dataset", "blobs:n=401", "--out-dir", "run"];
    let out = selfcert(&args, dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("different data"));
}

#[test]
fn ablate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("quick.toml"), format!("{QUICK}seeds = 2\nprior_fractions = [0.5]\n")).unwrap();
    let out = selfcert(
        &["ablate", "--config", "quick.toml", "--profile", "desk", "--dataset", "blobs:n=300", "--removal", "0.0", "--removal", "0.5", "--out-dir", "sweep"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = std::fs::read_to_string(dir.path().join("sweep/results.csv")).unwrap();
    // 2 removals x 3 modes x 2 seeds, plus header
    assert_eq!(results.lines().count(), 13);
    assert!(results.starts_with("dataset,removal_fraction,mode,seed,prior_fraction,"));

    let out = selfcert(&["report", "--results", "sweep/results.csv", "--out-dir", "plots"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["fig2_left.csv", "fig2_right.csv", "fig3.csv", "report_meta.json"] {
        assert!(dir.path().join("plots").join(f).exists(), "{f}");
    }
}

#[test]
fn fetch_uses_endpoint_and_cache_env() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let body = "x1,x2,label\n0.5,1.5,0\n2.5,0.1,1\n";
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            while reader.read_line(&mut line).unwrap() > 0 && line != "\r\n" {
                line.clear();
            }
            write!(stream, "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len()).unwrap();
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_selfcert"))
        .args(["fetch", "--dataset", "openml:123"])
        .env("SELFCERT_OPENML_URL", format!("http://{addr}/{{id}}"))
        .env("SELFCERT_CACHE_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"], 2);
    assert_eq!(v["origin"], "network");
    assert!(dir.path().join("openml-123.json").exists());
}

#[test]
fn bad_flags_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["train-pnn", "--mode", "sideways"][..],
        &["train-pnn", "--removal", "1.5", "--dataset", "blobs"][..],
        &["certify", "--dataset", "blobs", "--out-dir", "nowhere"][..],
    ] {
        let out = selfcert(args, dir.path());
        assert!(!out.status.success(), "{args:?}");
    }
}
