use std::io::{BufRead, BufReader, Read};
use std::path::PathBuf;
use std::process::{Child, Command, Output, Stdio};

use splatspace_core::oracle::synthetic_scene;
use splatspace_core::render::encode_png;
use splatspace_core::session::SessionId;
use splatspace_core::splat::{AssetId, GaussianSplatAsset, Provenance, Splat};
use splatspace_wire::config::SessionSection;
use splatspace_wire::{BackgroundServer, Clock, ServerConfig};

fn scripts() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/scripts")
}

fn updating() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some()
}

fn server() -> BackgroundServer {
    let config = ServerConfig {
        listen: "127.0.0.1:0".into(),
        session: SessionSection { view_resolution: 48, orbit_frames: 4 },
        ..ServerConfig::default()
    };
    let clock = Clock::Manual(std::sync::Arc::new(std::sync::atomic::AtomicU64::new(5_000)));
    BackgroundServer::start(config, clock, None).unwrap()
}

fn asset(server: &BackgroundServer) -> AssetId {
    server.handle().hub().assets().insert(GaussianSplatAsset::new(
        vec![
            Splat::new([0.0; 3], [1.0, 0.0, 0.0, 0.0], [-2.0; 3], 3.0, [1.0, 0.0, 0.0]),
            Splat::new([0.4, 0.1, 0.0], [1.0, 0.0, 0.0, 0.0], [-2.0; 3], 3.0, [0.0, 0.0, 1.0]),
        ],
        Provenance::File,
    ))
}

fn script_cmd(server: &BackgroundServer, file: &str, user: &str, vars: &[String]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_splatspace"));
    cmd.args(["script", "--file"])
        .arg(scripts().join(file))
        .args(["--connect", &server.addr().to_string(), "--as", user, "--session", "lab"]);
    for v in vars {
        cmd.args(["--var", v]);
    }
    cmd
}

struct Running {
    child: Child,
    first: String,
    rest: std::thread::JoinHandle<String>,
}

/// Starts a script and returns once it has connected.
fn spawn_connected(mut cmd: Command) -> Running {
    let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    let mut reader = BufReader::new(child.stdout.take().unwrap());
    let mut first = String::new();
    reader.read_line(&mut first).unwrap();
    let rest = std::thread::spawn(move || {
        let mut rest = String::new();
        reader.read_to_string(&mut rest).unwrap();
        rest
    });
    Running { child, first, rest }
}

impl Running {
    /// Exit code, full transcript and stderr.
    fn finish(mut self) -> (i32, String, String) {
        let status = self.child.wait().unwrap();
        let mut err = String::new();
        self.child.stderr.take().unwrap().read_to_string(&mut err).unwrap();
        (status.code().unwrap(), self.first + &self.rest.join().unwrap(), err)
    }
}

fn check_golden(name: &str, transcript: &str) {
    let path = scripts().join(format!("{name}.transcript"));
    if updating() {
        std::fs::write(&path, transcript).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(transcript, expected, "{}", path.display());
}

#[test]
fn grab_conflict_between_two_scripted_clients() {
    let server = server();
    let asset = asset(&server);
    let vars = [format!("asset={}", asset.as_str())];
    let alice = spawn_connected(script_cmd(&server, "grab_alice.script", "alice", &vars));
    let bob = spawn_connected(script_cmd(&server, "grab_bob.script", "bob", &[]));
    let (a_code, a_out, a_err) = alice.finish();
    let (b_code, b_out, b_err) = bob.finish();
    assert_eq!(a_code, 0, "{a_err}\n{a_out}");
    assert_eq!(b_code, 0, "{b_err}\n{b_out}");
    assert!(b_out.contains("< error {\"code\":\"grab_denied\""), "{b_out}");
    check_golden("grab_alice", &a_out);
    check_golden("grab_bob", &b_out);
    let last_state = |t: &str| t.lines().rev().find(|l| l.starts_with("state ")).map(str::to_owned);
    assert!(last_state(&a_out).is_some());
    assert_eq!(last_state(&a_out), last_state(&b_out));
}

#[test]
fn pipeline_script_ends_with_pins() {
    let (scene, points) = synthetic_scene(11, 120, 90);
    let png = scripts().join("scene.png");
    if updating() {
        std::fs::write(&png, encode_png(&scene)).unwrap();
    }
    assert_eq!(std::fs::read(&png).unwrap(), encode_png(&scene), "scene.png is stale");
    let points = serde_json::to_string(&points).unwrap();

    let server = server();
    let out = script_cmd(&server, "pipeline.script", "alice", &[format!("points={points}")]).output().unwrap();
    let transcript = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{}\n{transcript}", String::from_utf8_lossy(&out.stderr));
    check_golden("pipeline", &transcript);
    let state = server.handle().hub().state(&SessionId("lab".into())).unwrap();
    assert_eq!(state.pins.len(), 2);
    assert_eq!(state.objects.len(), 1);
}

fn run_inline(server_addr: &str, text: &str) -> Output {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.script");
    std::fs::write(&file, text).unwrap();
    Command::new(env!("CARGO_BIN_EXE_splatspace"))
        .args(["script", "--file"])
        .arg(&file)
        .args(["--connect", server_addr, "--as", "eve", "--session", "lab", "--timeout-ms", "500"])
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn exit_codes() {
    let server = server();
    let addr = server.addr().to_string();

    let ok = run_inline(&addr, "0 ping\n0 expect {\"type\":\"pong\"}\n");
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    let transcript = String::from_utf8(ok.stdout).unwrap();
    let lines: Vec<&str> = transcript.lines().collect();
    assert_eq!(lines[0], "connected eve@lab revision=1");
    assert_eq!(lines[1], "> 0 ping {}");
    assert_eq!(lines[2], "< pong {}");
    assert!(lines[3].starts_with("state revision=1 objects=0 pins=0 hash="));

    let bad = run_inline(&addr, "0 ping\nsoon ping\n");
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(stderr(&bad), "error: script:2: expected <at_ms> <action> [json], got \"soon ping\"\n");

    let unbound = run_inline(&addr, "0 fetch_asset {\"asset_id\":\"$nope\"}\n");
    assert_eq!(unbound.status.code(), Some(2));
    assert_eq!(stderr(&unbound), "error: script:1: unbound variable $nope\n");

    let failed = run_inline(&addr, "0 ping\n0 expect {\"type\":\"delta\"}\n");
    assert_eq!(failed.status.code(), Some(4));
    assert_eq!(stderr(&failed), "error: script:2: expectation failed: $.type: expected \"delta\", got \"pong\"\n");

    let timeout = run_inline(&addr, "0 await {\"type\":\"job\"}\n");
    assert_eq!(timeout.status.code(), Some(4));
    assert!(stderr(&timeout).starts_with("error: script:1: expectation failed: no message matching"));

    let protocol = run_inline(&addr, "0 hello {\"user\":\"eve\",\"session\":\"lab\"}\n");
    assert_eq!(protocol.status.code(), Some(5));
    assert_eq!(stderr(&protocol), "error: script:1: protocol error: already joined\n");

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = listener.local_addr().unwrap().to_string();
    drop(listener);
    let refused = run_inline(&dead, "0 ping\n");
    assert_eq!(refused.status.code(), Some(3));
    assert!(stderr(&refused).starts_with(&format!("error: connection refused: {dead}: ")));
}
