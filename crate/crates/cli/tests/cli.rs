//! The `blendlab` binary: flags, files, exit codes and the serve command.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use blendlab::simulator::{compute_metrics, EpisodeLog, CSV_HEADER};
use futures_util::StreamExt;
use serde_json::Value;

fn blendlab() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_blendlab"));
    c.env_remove("BLENDLAB_SEED");
    c
}

fn run(args: &[&str], out: &Path) -> Output {
    blendlab().arg("run").args(args).arg("--out").arg(out).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn run_writes_one_csv_and_a_log_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["--scenario", "fig2", "--method", "ltb,psc", "--seeds", "0..2"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));

    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 1 + 2 * 3);
    let keys: Vec<String> = lines[1..]
        .iter()
        .map(|l| l.split(',').take(3).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(
        keys,
        [
            "fig2,ltb,0",
            "fig2,ltb,1",
            "fig2,ltb,2",
            "fig2,psc,0",
            "fig2,psc,1",
            "fig2,psc,2"
        ]
    );

    // every log replays to exactly its CSV row
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        let file = dir
            .path()
            .join("episodes")
            .join(format!("fig2-{}-seed{}.jsonl", fields[1], fields[2]));
        let log = EpisodeLog::from_jsonl(&std::fs::read_to_string(file).unwrap()).unwrap();
        assert_eq!(
            &compute_metrics(&log).csv_row("fig2", fields[1], fields[2].parse().unwrap()),
            line
        );
    }
}

#[test]
fn operator_passthrough_on_fig3_collides() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--scenario", "fig3", "--method", "lb", "--kh", "1.0"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[..3], ["fig3", "lb", "0"]);
    assert_eq!(row[4], "true", "collision column");
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--scenario", "fig2", "--method", "ltb,blend"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(
        err.contains("\"blend\"") && err.contains("ctb, lb, ltb, ltbo, psc"),
        "{err}"
    );
    assert!(!dir.path().join("metrics.csv").exists());

    for args in [
        &["--scenario", "atlantis"][..],
        &["--scenario", "fig2", "--seeds", "9..1"],
        &["--scenario", "fig2", "--gamma", "0"],
        &["--scenario", "fig2", "--config", "/nonexistent/run.json"],
        &["--method", "psc"],
    ] {
        let out = run(args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(text(&out.stderr).starts_with("error: "), "{args:?}");
    }
}

#[test]
fn config_file_with_flag_overrides_and_env_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"scenario": "open", "methods": ["ltb", "psc"], "seeds": [4, 2]}"#,
    )
    .unwrap();
    let out = blendlab()
        .args(["run", "--method", "lb", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let keys: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| &l[..l.match_indices(',').nth(2).unwrap().0])
        .collect();
    assert_eq!(keys, ["open,lb,4", "open,lb,2"]);

    let out = blendlab()
        .env("BLENDLAB_SEED", "7")
        .args(["run", "--scenario", "open", "--method", "lb", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("open,lb,7,"));
}

#[test]
fn check_prints_criteria_and_sets_the_exit_code() {
    let out = blendlab().args(["check", "lemma1"]).output().unwrap();
    let stdout = text(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(
        stdout.contains("u_LTBo = [") && stdout.contains("u_CTB  = ["),
        "{stdout}"
    );
    assert!(stdout.lines().filter(|l| l.trim_start().starts_with("PASS ")).count() >= 2);
    assert!(stdout.ends_with("2/2 criteria passed\n"), "{stdout}");

    let out = blendlab().args(["check", "t9"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("valid suites"));
}

#[test]
fn serve_rejects_bad_scenarios_and_busy_ports() {
    let out = blendlab()
        .args(["serve", "--port", "0", "--scenario", "atlantis"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("atlantis"));

    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = blendlab().args(["serve", "--port", &port]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("cannot listen"));
}

/// Kills the child process when the test ends, pass or fail.
struct Killer(std::process::Child);

impl Drop for Killer {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serve_streams_state_at_the_tick_rate() {
    let mut child = Killer(
        blendlab()
            .args([
                "serve",
                "--port",
                "0",
                "--scenario",
                "crossing",
                "--method",
                "lb",
                "--tick-ms",
                "50",
            ])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap(),
    );
    let mut banner = String::new();
    BufReader::new(child.0.stdout.take().unwrap())
        .read_line(&mut banner)
        .unwrap();
    assert!(banner.ends_with("(20 Hz)\n"), "{banner}");
    let url = banner.split_whitespace().nth(1).unwrap().to_string();

    let (mut socket, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    let first = socket.next().await.unwrap().unwrap().into_text().unwrap();
    let hello: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(hello["type"], "hello");
    assert_eq!(hello["payload"]["tick_ms"], 50);
    assert_eq!(hello["payload"]["scenario"]["name"], "crossing");

    // the episode lasts longer than the window; states stop after it ends
    let start = Instant::now();
    let mut states = 0;
    while start.elapsed() < Duration::from_secs(1) {
        let msg = tokio::time::timeout(Duration::from_secs(5), socket.next())
            .await
            .expect("state stream stalled")
            .unwrap()
            .unwrap();
        let v: Value = serde_json::from_str(&msg.into_text().unwrap()).unwrap();
        assert_ne!(v["type"], "metrics", "episode ended inside the window");
        if v["type"] == "state" {
            states += 1;
        }
    }
    // 20 Hz for one second, with slack for a loaded test machine
    assert!((14..=22).contains(&states), "{states} states in 1 s");
}
