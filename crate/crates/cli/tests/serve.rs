use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};

use splatspace_core::session::{Pose, SessionOp, UserId};
use splatspace_wire::{Body, Client};

fn spawn_serve(config: &Path) -> (Child, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_splatspace"))
        .args(["serve", "--listen", "127.0.0.1:0", "--config"])
        .arg(config)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected first line {line:?}")).to_owned();
    (child, addr)
}

fn terminate(mut child: Child) -> i32 {
    let status = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    child.wait().unwrap().code().expect("exited normally")
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_splatspace"))
        .args(["serve", "--config", "/nonexistent/server.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: cannot read config"), "{stderr}");
    assert_eq!(stderr.lines().count(), 1);
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("server.toml");
    std::fs::write(&cfg, "queue_depth = 0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_splatspace")).arg("serve").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: invalid config"));
}

#[test]
fn sigterm_persists_sessions_for_the_next_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("server.toml");
    std::fs::write(&cfg, "snapshot_dir = \"snap\"\n").unwrap();
    let pose = Pose { position: [1.0, 1.5, -2.0], forward: [0.0, 0.0, 1.0] };

    let (child, addr) = spawn_serve(&cfg);
    let (mut alice, _) = Client::connect(addr.as_str(), "alice", "lab").unwrap();
    let reply = alice.request(Body::Op { op: SessionOp::ReportPose { pose } }).unwrap();
    assert!(matches!(reply.body, Body::Delta(_)), "{reply:?}");
    assert_eq!(terminate(child), 0);
    drop(alice);
    assert!(dir.path().join("snap").read_dir().unwrap().next().is_some());

    let (child, addr) = spawn_serve(&cfg);
    let (_carol, welcome) = Client::connect(addr.as_str(), "carol", "lab").unwrap();
    assert_eq!(welcome.full_state.poses.get(&UserId("alice".into())), Some(&pose));
    let (_alice, welcome) = Client::connect(addr.as_str(), "alice", "lab").unwrap();
    assert_eq!(welcome.full_state.poses.get(&UserId("alice".into())), Some(&pose));
    assert_eq!(terminate(child), 0);
}
