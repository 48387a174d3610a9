use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use angioforge_testkit::{StubResponse, StubServer};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_angioforge"));
    c.env("RUST_LOG", "warn");
    c
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn phantom(dir: &Path, size: u32) -> PathBuf {
    let path = dir.join("phantom.png");
    let o = bin()
        .args(["phantom", "--size", &size.to_string(), "--output"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    path
}

fn run(input: &Path, output: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("run")
        .arg("--input")
        .arg(input)
        .arg("--output")
        .arg(output)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn phantom_run_writes_valid_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let input = phantom(dir.path(), 256);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&input, out, &[]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        for name in ["projection.png", "flow.png", "report.json", "model.stl", "manifest.json"] {
            assert!(out.join(name).is_file(), "{name}");
        }
    }
    for name in ["model.stl", "flow.png", "projection.png"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }

    let o = bin().arg("validate").arg(a.join("model.stl")).output().unwrap();
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("watertight              true"), "{text}");

    let o = bin().arg("inspect").arg(a.join("manifest.json")).output().unwrap();
    assert_eq!(code(&o), 0);
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table.lines().filter(|l| l.split_whitespace().nth(2) == Some("accepted")).count(), 16, "{table}");
    assert!(table.contains("Complete"));
}

#[test]
fn validate_reports_holes_and_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let input = phantom(dir.path(), 128);
    let out = dir.path().join("out");
    assert_eq!(code(&run(&input, &out, &["--n-sides", "8"])), 0);
    let stl = std::fs::read(out.join("model.stl")).unwrap();

    let count = u32::from_le_bytes(stl[80..84].try_into().unwrap());
    let mut holed = stl[..stl.len() - 50].to_vec();
    holed[80..84].copy_from_slice(&(count - 1).to_le_bytes());
    let holed_path = dir.path().join("holed.stl");
    std::fs::write(&holed_path, holed).unwrap();
    let o = bin().arg("validate").arg(&holed_path).output().unwrap();
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8(o.stdout).unwrap().contains("boundary_edge_count     3"));

    let o = bin().args(["validate", "--json"]).arg(&holed_path).output().unwrap();
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["boundary_edge_count"], 3);

    let truncated = dir.path().join("truncated.stl");
    std::fs::write(&truncated, &stl[..stl.len() - 7]).unwrap();
    assert_eq!(code(&bin().arg("validate").arg(&truncated).output().unwrap()), 2);
    assert_eq!(code(&bin().arg("validate").arg(dir.path().join("none.stl")).output().unwrap()), 2);
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&run(&dir.path().join("missing.png"), &out, &[])), 2);

    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"\x89PNG\r\n\x1a\nnope").unwrap();
    assert_eq!(code(&run(&junk, &out, &[])), 2);

    let input = phantom(dir.path(), 64);
    assert_eq!(code(&run(&input, &out, &["--n-sides", "3"])), 2);
    assert_eq!(code(&run(&input, &out, &["--auto-accept", "false"])), 2);
    assert_eq!(code(&run(&input, &out, &["--inlet", "nope"])), 2);

    let manifest = dir.path().join("manifest.json");
    std::fs::write(&manifest, b"{\"id\": 3}").unwrap();
    assert_eq!(code(&bin().arg("inspect").arg(&manifest).output().unwrap()), 2);
}

#[test]
fn broken_mesh_exits_four_without_model() {
    let dir = tempfile::tempdir().unwrap();
    let input = phantom(dir.path(), 128);
    let out = dir.path().join("out");
    let o = run(&input, &out, &["--n-sides", "6", "--inject-fault", "drop-triangle"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("model.stl").exists());
    assert!(out.join("manifest.json").is_file());
    let table = String::from_utf8(bin().arg("inspect").arg(out.join("manifest.json")).output().unwrap().stdout).unwrap();
    assert!(table.contains("finalization failed at MeshValidation"), "{table}");
}

#[test]
fn backend_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let input = phantom(dir.path(), 64);
    let stub = StubServer::start(vec![StubResponse::status(503)]);
    let o = bin()
        .env("AF_CLI_TEST_KEY", "sk-cli")
        .args(["run", "--backend", "remote", "--credential-env", "AF_CLI_TEST_KEY", "--endpoint", &stub.url()])
        .arg("--input")
        .arg(&input)
        .arg("--output")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
    assert!(!String::from_utf8_lossy(&o.stderr).contains("sk-cli"));
    assert_eq!(stub.request_count(), 4);
}

#[test]
fn remote_without_auto_accept_stops_at_first_review() {
    let dir = tempfile::tempdir().unwrap();
    let input = phantom(dir.path(), 64);
    let png = std::fs::read(&input).unwrap();
    let body = format!("{{\"image\": \"{}\"}}", STANDARD.encode(&png));
    let stub = StubServer::start(vec![StubResponse::json(200, body)]);
    let out = dir.path().join("out");
    let o = bin()
        .env("AF_CLI_TEST_KEY2", "sk-cli2")
        .args(["run", "--backend", "remote", "--credential-env", "AF_CLI_TEST_KEY2", "--auto-accept", "false"])
        .args(["--endpoint", &stub.url()])
        .arg("--input")
        .arg(&input)
        .arg("--output")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(bin().arg("inspect").arg(out.join("manifest.json")).output().unwrap().stdout).unwrap();
    assert!(table.contains("cursor 1"), "{table}");
    assert_eq!(table.lines().filter(|l| l.split_whitespace().nth(2) == Some("pending")).count(), 1);
    assert!(!out.join("model.stl").exists());
}
