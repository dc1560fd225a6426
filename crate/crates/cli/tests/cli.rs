use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn staggercast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_staggercast"))
        .args(args)
        .env("STAGGERCAST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(config: &Path, seed: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--config", arg(config), "--seed", seed, "--out", arg(out)];
    args.extend_from_slice(extra);
    staggercast(&args)
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn simulate_writes_manifest_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a");
    let o = simulate(&configs().join("scenario.json"), "7", &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["manifest.json", "summary.json", "series.csv", "dispositions.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let manifest: Value = serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([7]));
    assert_eq!(manifest["dsm"], true);
    assert!(manifest["finished_unix_s"].is_u64());
    assert!(manifest["version"].as_str().unwrap().starts_with("0.1.0"));
    let summary: Value = serde_json::from_str(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(summary["seed"], 7);
    assert!(read(&out.join("series.csv")).starts_with("bin_start_s,resource,"));
}

#[test]
fn outputs_are_write_once_unless_forced() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = configs().join("scenario.json");
    assert!(simulate(&cfg, "1", &out, &["--dsm-off"]).status.success());
    let before = read(&out.join("summary.json"));

    let again = simulate(&cfg, "2", &out, &["--dsm-off"]);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--force"), "{}", stderr(&again));
    assert_eq!(read(&out.join("summary.json")), before);

    let forced = simulate(&cfg, "2", &out, &["--dsm-off", "--force"]);
    assert!(forced.status.success(), "{}", stderr(&forced));
    assert_ne!(read(&out.join("summary.json")), before);

    // a non-empty directory that is not a run is never removed
    let other = tmp.path().join("other");
    fs::create_dir(&other).unwrap();
    fs::write(other.join("keep.txt"), "data").unwrap();
    let o = simulate(&cfg, "1", &other, &["--force"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(read(&other.join("keep.txt")), "data");
}

#[test]
fn seed_range_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("scenario.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(simulate(&cfg, "1..3", &a, &[]).status.success());
    assert!(simulate(&cfg, "1..3", &b, &[]).status.success());
    for seed in 1..=3 {
        for f in ["summary.json", "series.csv", "dispositions.csv"] {
            let (x, y) = (a.join(format!("seed-{seed}/{f}")), b.join(format!("seed-{seed}/{f}")));
            assert_eq!(fs::read(&x).unwrap(), fs::read(&y).unwrap(), "{}", x.display());
        }
    }
    assert_ne!(read(&a.join("seed-1/summary.json")), read(&a.join("seed-2/summary.json")));
}

#[test]
fn report_compares_shift_against_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("shift5.json");
    let (base, dsm) = (tmp.path().join("base"), tmp.path().join("dsm"));
    assert!(simulate(&cfg, "3", &base, &["--dsm-off"]).status.success());
    assert!(simulate(&cfg, "3", &dsm, &["--label", "shifted"]).status.success());

    let csv = staggercast(&["report", arg(&base), arg(&dsm), "--format", "csv"]);
    assert!(csv.status.success(), "{}", stderr(&csv));
    let text = stdout(&csv);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("run,resource,peak_to_mean,p95,acceptance"));
    let ptm = |run: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(&format!("{run},transit,"))).unwrap();
        line.split(',').nth(2).unwrap().parse().unwrap()
    };
    assert!(ptm("shifted") < ptm("baseline"), "{text}");
    assert_eq!(text.lines().count(), 5);

    let table = staggercast(&["report", arg(&base), arg(&dsm)]);
    assert!(stdout(&table).contains("shifted vs baseline: transit peak_to_mean -"), "{}", stdout(&table));
}

#[test]
fn report_on_missing_run_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = staggercast(&["report", arg(&tmp.path().join("nope"))]);
    assert_eq!(o.status.code(), Some(1));
}

/// Copy the shipped configs so a test can break one of them.
fn scratch_configs(dir: &Path) -> PathBuf {
    for entry in fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, dir.join(p.file_name().unwrap())).unwrap();
    }
    dir.join("scenario.json")
}

fn edit(path: &Path, f: impl FnOnce(&mut Value)) {
    let mut v: Value = serde_json::from_str(&read(path)).unwrap();
    f(&mut v);
    fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn validate_accepts_shipped_configs() {
    let o = staggercast(&["validate", "--config", arg(&configs().join("scenario.json"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = staggercast(&[
        "validate",
        "--proxy-config",
        arg(&configs().join("proxy.json")),
        "--ruleset",
        arg(&configs().join("ruleset.json")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn validate_rejects_unknown_app_class_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = scratch_configs(tmp.path());
    edit(&tmp.path().join("ruleset.json"), |v| v[1]["match"]["app_classes"][1] = "Telepathy".into());
    let o = staggercast(&["validate", "--config", arg(&scenario)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("ruleset[1].match.app_classes"), "{err}");
    assert!(err.contains("Telepathy"), "{err}");

    let out = tmp.path().join("out");
    let o = simulate(&scenario, "1", &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists(), "a rejected config must not create output");
}

#[test]
fn validate_rejects_marginals_that_do_not_sum_to_one() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = scratch_configs(tmp.path());
    edit(&tmp.path().join("population.json"), |v| v["content_shift"]["often"] = 0.26.into());
    let o = staggercast(&["validate", "--config", arg(&scenario)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("population.content_shift"), "{}", stderr(&o));
}

#[test]
fn validate_reports_proxy_config_path() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("proxy.json");
    fs::write(&p, r#"{"cache": {"base_url": "ftp://cache"}}"#).unwrap();
    let o = staggercast(&["validate", "--proxy-config", arg(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cache.base_url"), "{}", stderr(&o));
}

#[test]
fn proxy_serves_control_endpoints_until_interrupted() {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::process::Stdio;

    let mut child = Command::new(env!("CARGO_BIN_EXE_staggercast"))
        .args(["proxy", "--listen", "127.0.0.1:0", "--config"])
        .arg(configs().join("proxy.json"))
        .arg("--ruleset")
        .arg(configs().join("ruleset.json"))
        .env("STAGGERCAST_LOG", "warn")
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("{line}")).to_string();

    let mut conn = std::net::TcpStream::connect(&addr).unwrap();
    conn.write_all(b"GET /staggercast/offer/unknown HTTP/1.1\r\nhost: video.example\r\nconnection: close\r\n\r\n")
        .unwrap();
    let mut reply = String::new();
    conn.read_to_string(&mut reply).unwrap();
    assert!(reply.starts_with("HTTP/1.1 410"), "{reply}");

    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn proxy_rejects_invalid_config() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("proxy.json");
    fs::write(&p, r#"{"cache": {"base_url": "http://c"}, "session_ttl_s": 0}"#).unwrap();
    let rules = configs().join("ruleset.json");
    let o = staggercast(&["proxy", "--listen", "127.0.0.1:0", "--config", arg(&p), "--ruleset", arg(&rules)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("session_ttl_s"), "{}", stderr(&o));
}
