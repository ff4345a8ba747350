use ballchain::session::{bundled_scenario, parse_command_log, replay, to_json_lines};
use serde_json::Value;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn ballchain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ballchain")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = ballchain(args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn csv_column(text: &str, name: &str) -> Vec<f64> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(ballchain(&["solve", "--bogus"]).status.code(), Some(2));
    assert_eq!(ballchain(&["teleport"]).status.code(), Some(2));
    assert_eq!(ballchain(&["solve", "--sleeve", "maybe"]).status.code(), Some(2));
    assert_eq!(ballchain(&["solve", "--config", "/nonexistent/scenario.json"]).status.code(), Some(2));
    assert_eq!(ballchain(&["reconfig", "--angle", "200"]).status.code(), Some(2));
}

#[test]
fn malformed_documents_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"chain": {"max_balls": 4}, "units": [], "colour": "red"}"#).unwrap();
    let o = ballchain(&["solve", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    std::fs::write(&bad, r#"{"measured_force_gf": 132.6, "wattage": 3}"#).unwrap();
    assert_eq!(ballchain(&["design", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn help_lists_every_flag() {
    let top = ok(&["--help"]);
    for sub in ["solve", "sweep", "align", "design", "reconfig", "serve", "replay"] {
        assert!(top.contains(sub), "{sub}");
    }
    let solve = ok(&["solve", "--help"]);
    for flag in ["--config", "--scenario", "--out", "--seed", "--angle", "--balls", "--field-mt", "--sleeve"] {
        assert!(solve.contains(flag), "{flag}");
    }
    assert!(ok(&["serve", "--help"]).contains("--bind"));
}

#[test]
fn design_reports_the_clinical_magnet() {
    let v: Value = serde_json::from_str(&ok(&["design"])).unwrap();
    let d = v["d_d_mm"].as_f64().unwrap();
    let m = v["mass_kg"].as_f64().unwrap();
    assert!((d - 119.0).abs() <= 1.0, "{d}");
    assert!((m - 6.6).abs() <= 0.2, "{m}");
}

#[test]
fn outputs_are_reproducible_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    for (name, args) in [
        ("sweep.csv", vec!["sweep", "--balls", "4,9", "--angle", "0,30,60,90"]),
        ("reconfig.csv", vec!["reconfig", "--angle", "120", "--seed", "5"]),
        ("solve.json", vec!["solve", "--balls", "12", "--angle", "67.5"]),
    ] {
        let mut texts = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{run}-{name}"));
            let mut full = args.clone();
            full.extend(["--out", out.to_str().unwrap()]);
            ok(&full);
            texts.push(std::fs::read(&out).unwrap());
            let record: Value = serde_json::from_slice(&std::fs::read(format!("{}.run.json", out.display())).unwrap()).unwrap();
            for key in ["command", "version", "seed", "config", "outputs", "summary", "started_at", "finished_at"] {
                assert!(record.get(key).is_some(), "{name}: {key}");
            }
            assert_eq!(record["outputs"][0], out.display().to_string());
        }
        assert_eq!(texts[0], texts[1], "{name}");
    }
}

#[test]
fn align_default_table() {
    let text = ok(&["align"]);
    assert_eq!(text.lines().next(), Some("n,angle_deg,alignment_deg"));
    assert_eq!(text.lines().count(), 1 + 16 * 9);
    let n = csv_column(&text, "n");
    let a = csv_column(&text, "alignment_deg");
    let worst = n.iter().zip(&a).filter(|(n, _)| **n >= 10.0).map(|(_, a)| *a).fold(0.0, f64::max);
    assert!(worst <= 1.9, "{worst}");
}

#[test]
fn reconfig_angle_never_grows() {
    let text = ok(&["reconfig", "--angle", "150", "--seed", "9"]);
    let angles = csv_column(&text, "angle_deg");
    assert!((angles[0] - 150.0).abs() < 1e-9);
    assert!(angles.windows(2).all(|w| w[1] <= w[0]));
    assert!(*angles.last().unwrap() < 0.5);
}

#[test]
fn zero_field_gives_a_straight_chain() {
    let v: Value = serde_json::from_str(&ok(&["solve", "--field-mt", "0", "--balls", "6", "--sleeve", "on"])).unwrap();
    let positions = v["positions_mm"].as_array().unwrap();
    assert_eq!(positions.len(), 6);
    let d = 3.175;
    for (i, p) in positions.iter().enumerate() {
        let p: Vec<f64> = p.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!((p[0] - i as f64 * d).abs() < 1e-9 && p[1].abs() < 1e-9 && p[2].abs() < 1e-9, "{p:?}");
    }
}

#[test]
fn perpendicular_field_alignment() {
    let v: Value = serde_json::from_str(&ok(&["solve", "--balls", "10", "--angle", "90", "--field-mt", "23"])).unwrap();
    let a = v["tip_alignment_deg"].as_f64().unwrap();
    assert!(a <= 1.4, "{a}");
    assert_eq!(v["diagnostics"]["converged"], true);
}

#[test]
fn replay_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("commands.jsonl");
    let text = [
        r#"{"tick": 2, "command": {"omega": [[0, 0.4, 0.2], [0, 0, -0.5]]}}"#,
        r#"{"tick": 3, "command": {"feed": "insert"}}"#,
        r#"{"tick": 7, "command": {"omega": [[0.3, 0, 0]], "feed": "retract"}}"#,
        r#"{"tick": 9, "command": {"reconfigure": true}}"#,
    ]
    .join("\n");
    std::fs::write(&log, &text).unwrap();
    let cli = ok(&["replay", "--commands", log.to_str().unwrap(), "--ticks", "30"]);
    let s = bundled_scenario("pv-rings").unwrap();
    let expected = to_json_lines(&replay(&s, &parse_command_log(&text).unwrap(), 30).unwrap()).unwrap();
    assert_eq!(cli, expected);
    assert_eq!(cli.lines().count(), 30);
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn health(port: u16) -> Option<Value> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(2))).ok()?;
    write!(s, "GET /health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    serde_json::from_str(buf.split("\r\n\r\n").nth(1)?).ok()
}

#[test]
fn serve_flushes_logs_on_interrupt() {
    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let bind = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_ballchain"))
        .args(["serve", "--bind", &bind, "--out", dir.path().to_str().unwrap()])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let t0 = Instant::now();
    let status = loop {
        if let Some(h) = health(port) {
            if h["tick"].as_u64().unwrap_or(0) >= 5 {
                break h;
            }
        }
        assert!(t0.elapsed() < Duration::from_secs(20), "service did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert_eq!(status["scenario"], "pv-rings");
    let killed = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let t1 = Instant::now();
    let code = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s.code();
        }
        assert!(t1.elapsed() < Duration::from_secs(10), "service ignored the interrupt");
        std::thread::sleep(Duration::from_millis(20));
    };
    assert_eq!(code, Some(0));
    let mut summary = String::new();
    child.stdout.take().unwrap().read_to_string(&mut summary).unwrap();
    let summary: Value = serde_json::from_str(&summary).unwrap();
    let ticks = summary["ticks"].as_u64().unwrap();
    let log = std::fs::read_to_string(dir.path().join("session.jsonl")).unwrap();
    assert!(log.ends_with('\n'));
    assert_eq!(log.lines().count() as u64, ticks);
    for line in log.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
    assert!(Path::new(&dir.path().join("commands.jsonl")).exists());
}

#[test]
fn serve_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"chain": {"max_balls": 4}, "units": []}"#).unwrap();
    let o = ballchain(&["serve", "--config", bad.to_str().unwrap(), "--bind", "127.0.0.1:0"]);
    assert_eq!(o.status.code(), Some(2));
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    assert_eq!(ballchain(&["serve", "--bind", &addr]).status.code(), Some(1));
}
