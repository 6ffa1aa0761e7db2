use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use base64::Engine;
use firewatch_crypto::Registry;
use firewatch_service::auth::hash_password;
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_firewatch");
const PASSWORD: &str = "s3cret";

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn firewatch(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Server {
    child: Child,
    url: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn write_config(dir: &Path, registry: &Path) -> PathBuf {
    let hash = hash_password(PASSWORD, b"cli-test", 1000);
    let cfg = format!(
        "log_path = \"events.log\"\nregistry_path = \"{}\"\nfsync = false\n\n\
         [[users]]\nusername = \"ops\"\nrole = \"operator\"\npassword_hash = \"{hash}\"\n",
        registry.display()
    );
    let path = dir.join("service.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

fn serve(config: &Path) -> Server {
    let mut child = Command::new(BIN)
        .args(["serve", "--config", s(config), "--port", "0"])
        .env("RUST_LOG", "error")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line
        .split_whitespace()
        .find(|w| w.starts_with("http://"))
        .expect(&line)
        .to_string();
    Server { child, url }
}

async fn login(url: &str) -> String {
    let resp: Value = reqwest::Client::new()
        .post(format!("{url}/auth/login"))
        .json(&json!({"username": "ops", "password": PASSWORD}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    resp["token"].as_str().unwrap().to_string()
}

fn replay(url: &str, token: &str, trace: &Path) -> (Output, [usize; 4]) {
    let out = firewatch(&[
        "replay",
        "--trace",
        s(trace),
        "--service",
        url,
        "--token",
        token,
        "--fast",
    ]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let nums: Vec<usize> = text
        .split(|c: char| !c.is_ascii_digit())
        .filter_map(|w| w.parse().ok())
        .collect();
    assert_eq!(
        code(&out),
        0,
        "{text} {}",
        String::from_utf8_lossy(&out.stderr)
    );
    (out, [nums[0], nums[1], nums[2], nums[3]])
}

/// Flips one ciphertext bit of the `index`-th measured envelope.
fn tamper(trace: &Path, out: &Path, index: usize) {
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut seen = 0;
    let lines: Vec<String> = std::fs::read_to_string(trace)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            if v["event"] == "measured" {
                if seen == index {
                    let mut env = b64.decode(v["envelope"].as_str().unwrap()).unwrap();
                    let last = env.len() - 1;
                    env[last] ^= 0x01;
                    v["envelope"] = Value::String(b64.encode(env));
                }
                seen += 1;
            }
            v.to_string()
        })
        .collect();
    std::fs::write(out, lines.join("\n") + "\n").unwrap();
}

#[test]
fn keygen_writes_private_registry_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("registry.json");
    let devices = "356938035643809,490154203237518,353918051234567";
    let o = firewatch(&[
        "keygen",
        "--devices",
        devices,
        "--out",
        s(&out),
        "--pool-size",
        "16",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let reg = Registry::load(&out).unwrap();
    assert_eq!(reg.len(), 3);
    assert!(reg
        .devices()
        .all(|d| d.key_seed.is_some() && d.node_keys().is_ok()));
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        assert_eq!(
            std::fs::metadata(&out).unwrap().permissions().mode() & 0o777,
            0o600
        );
    }
    let before = std::fs::read(&out).unwrap();
    let o = firewatch(&[
        "keygen",
        "--devices",
        devices,
        "--out",
        s(&out),
        "--pool-size",
        "16",
    ]);
    assert_eq!(code(&o), 1);
    assert_eq!(std::fs::read(&out).unwrap(), before);
    let o = firewatch(&[
        "keygen",
        "--devices",
        devices,
        "--out",
        s(&out),
        "--pool-size",
        "16",
        "--force",
    ]);
    assert_eq!(code(&o), 0);
    assert_ne!(std::fs::read(&out).unwrap(), before);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(
        code(&firewatch(&[
            "keygen",
            "--devices",
            "123",
            "--out",
            s(&out)
        ])),
        2
    );
    assert_eq!(code(&firewatch(&["keygen", "--out", s(&out)])), 2);
    assert_eq!(code(&firewatch(&["frobnicate"])), 2);
    assert_eq!(
        code(&firewatch(&[
            "replay",
            "--trace",
            "t",
            "--service",
            "u",
            "--token",
            "x",
            "--speed",
            "0"
        ])),
        2
    );
    assert_eq!(
        code(&firewatch(&[
            "report", "--log", "l", "--area", "a", "--format", "xml"
        ])),
        2
    );
    assert!(!out.exists());
    assert_eq!(code(&firewatch(&["--help"])), 0);
    // Pool sizes are checked before anything is written.
    let o = firewatch(&[
        "keygen",
        "--devices",
        "356938035643809",
        "--out",
        s(&out),
        "--pool-size",
        "12",
    ]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
}

#[test]
fn simulate_is_deterministic_and_reaches_extreme_risk() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a.jsonl"),
        dir.path().join("b.jsonl"),
        dir.path().join("c.jsonl"),
    );
    let fire = scenario("fire-ramp.toml");
    for out in [&a, &b] {
        let o = firewatch(&[
            "simulate",
            "--scenario",
            s(&fire),
            "--seed",
            "5",
            "--out",
            s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        code(&firewatch(&[
            "simulate",
            "--scenario",
            s(&fire),
            "--seed",
            "6",
            "--out",
            s(&c)
        ])),
        0
    );
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());

    let trace = firewatch_sim::SimTrace::load(&a).unwrap();
    let efr = trace.events.iter().any(|e| {
        matches!(
            &e.kind,
            firewatch_sim::EventKind::Assessed {
                level: firewatch_core::RiskLevel::Efr,
                ..
            }
        )
    });
    assert!(efr);

    let missing = dir.path().join("missing.jsonl");
    let o = firewatch(&[
        "simulate",
        "--scenario",
        s(&dir.path().join("nope.toml")),
        "--out",
        s(&missing),
    ]);
    assert_eq!(code(&o), 1);
    assert!(!missing.exists());
}

#[test]
fn report_exports_assessments_as_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (trace, log) = (dir.path().join("t.jsonl"), dir.path().join("events.log"));
    let o = firewatch(&[
        "simulate",
        "--scenario",
        s(&scenario("fire-ramp.toml")),
        "--out",
        s(&trace),
        "--log",
        s(&log),
    ]);
    assert_eq!(code(&o), 0);

    let o = firewatch(&[
        "report",
        "--log",
        s(&log),
        "--area",
        "valley",
        "--format",
        "csv",
    ]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rows.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header.len(), 17);
    assert_eq!(header[0], "timestamp");
    assert_eq!(
        header[1..8],
        [
            "temperature",
            "humidity",
            "wind_speed",
            "rainfall",
            "co2",
            "co",
            "o2"
        ]
    );
    assert_eq!(header[8], "avg_temperature");
    assert_eq!(header[15..], ["percentage", "level"]);
    let records: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 45);
    assert!(records[records.len() - 3..].iter().all(|r| &r[16] == "EFR"));
    assert!(records.windows(2).all(|w| w[0][0] < w[1][0]));

    let o = firewatch(&["report", "--log", s(&log), "--area", "nowhere"]);
    assert_eq!(code(&o), 1);
    assert!(o.stdout.is_empty());

    let empty = dir.path().join("empty.log");
    std::fs::write(&empty, "").unwrap();
    let o = firewatch(&["report", "--log", s(&empty), "--area", "valley"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1);

    let o = firewatch(&[
        "report",
        "--log",
        s(&dir.path().join("absent.log")),
        "--area",
        "valley",
    ]);
    assert_eq!(code(&o), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn replay_counts_accepted_and_rejected_packages() {
    let dir = tempfile::tempdir().unwrap();
    let (registry, trace, bad) = (
        dir.path().join("registry.json"),
        dir.path().join("t.jsonl"),
        dir.path().join("bad.jsonl"),
    );
    let fire = scenario("fire-ramp.toml");
    assert_eq!(
        code(&firewatch(&[
            "keygen",
            "--scenario",
            s(&fire),
            "--out",
            s(&registry)
        ])),
        0
    );
    let o = firewatch(&[
        "simulate",
        "--scenario",
        s(&fire),
        "--registry",
        s(&registry),
        "--out",
        s(&trace),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let n = firewatch_sim::SimTrace::load(&trace)
        .unwrap()
        .originated()
        .len();

    // Honest trace into one service.
    let server = serve(&write_config(dir.path(), &registry));
    let token = login(&server.url).await;
    let started = Instant::now();
    let (_, [posted, accepted, duplicate, rejected]) = replay(&server.url, &token, &trace);
    assert!(started.elapsed() < Duration::from_secs(5));
    assert_eq!([posted, accepted, duplicate, rejected], [n, n, 0, 0]);
    let (_, counts) = replay(&server.url, &token, &trace);
    assert_eq!(counts, [n, 0, n, 0]);
    drop(server);

    // Tampered trace into a fresh one.
    let fresh = tempfile::tempdir().unwrap();
    let server = serve(&write_config(fresh.path(), &registry));
    let token = login(&server.url).await;
    tamper(&trace, &bad, 17);
    let (out, counts) = replay(&server.url, &token, &bad);
    assert_eq!(
        counts,
        [n, n - 1, 0, 1],
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let o = firewatch(&[
        "replay",
        "--trace",
        s(&trace),
        "--service",
        &server.url,
        "--token",
        "feed",
        "--fast",
    ]);
    assert_eq!(code(&o), 1);
}
