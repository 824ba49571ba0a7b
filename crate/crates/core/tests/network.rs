//! Gateway and agents as separate processes over loopback TCP.

use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

const BIN: &str = env!("CARGO_BIN_EXE_nodeguard");

struct Killed(Child);

impl Drop for Killed {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn spawn(args: &[&str]) -> Killed {
    Killed(
        Command::new(BIN)
            .args(args)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn"),
    )
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("run")
}

fn wait_listening(addr: &str) {
    let deadline = Instant::now() + Duration::from_secs(10);
    while TcpStream::connect(addr).is_err() {
        assert!(Instant::now() < deadline, "gateway never listened on {addr}");
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn deploy_and_attest_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let addr = format!("127.0.0.1:{}", free_port());
    let log = dir.path().join("gw.log");
    let gw_conf = write(
        dir.path(),
        "gw.conf",
        &format!(
            "listen_addr = {addr}\nattest_interval_ms = 60000\nattest_timeout_ms = 2000\nlog_path = {}\n",
            log.display()
        ),
    );
    let gw = spawn(&["gateway", "run", "--config", &gw_conf]);
    wait_listening(&addr);

    let mut agents = Vec::new();
    for n in ["n1", "n2"] {
        let conf = write(
            dir.path(),
            &format!("{n}.conf"),
            &format!("node_id = {n}\ngateway_addr = {addr}\n"),
        );
        agents.push(spawn(&["agent", "run", "--config", &conf]));
    }

    let code = dir.path().join("sensor.app");
    std::fs::write(&code, b"\x00\x00\x00\x01\x00\x00\x00\x10tcp-test").unwrap();
    let code = code.to_string_lossy().into_owned();
    // Registration is asynchronous; retry until the node is known.
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut deployed = 0;
    for n in ["n1", "n2"] {
        loop {
            let out = run(&["deploy", "--node", n, "--code", &code, "--gateway", &addr]);
            if out.status.code() == Some(0) {
                assert!(String::from_utf8_lossy(&out.stdout).contains("verdict=ok"));
                deployed += 1;
                break;
            }
            assert!(Instant::now() < deadline, "deploy to {n} never succeeded");
            std::thread::sleep(Duration::from_millis(200));
        }
    }
    assert_eq!(deployed, 2);

    let out = run(&["attest", "--node", "n1", "--gateway", &addr]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = run(&["attest", "--node", "ghost", "--gateway", &addr]);
    assert_eq!(out.status.code(), Some(1));

    // Let a few data frames arrive, then check the log on disk.
    std::thread::sleep(Duration::from_millis(2500));
    drop(agents);
    drop(gw);
    let out = run(&["logs", "verify", &log.to_string_lossy()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let shown = String::from_utf8_lossy(&run(&["logs", "show", &log.to_string_lossy()]).stdout).into_owned();
    assert!(shown.contains("DataProvenance node=n1"), "{shown}");
}
