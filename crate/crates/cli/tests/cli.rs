use std::fs;
use std::net::TcpStream;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Duration;

use met3r_core::backends::synthetic::SyntheticSequenceSpec;
use met3r_core::backends::PointMapBackendConfig;
use met3r_core::harness::read_summary;
use met3r_core::tensor::{Container, Tensor};

fn met3r(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_met3r")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", dir.to_str().unwrap(), "--size", "32"];
    args.extend_from_slice(extra);
    let out = met3r(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_and_parse_errors() {
    assert_eq!(code(&met3r(&["--help"])), 0);
    assert_eq!(code(&met3r(&["--version"])), 0);
    assert_eq!(code(&met3r(&["eval", "--bogus"])), 3);
    assert_eq!(code(&met3r(&["eval", "--data", "x", "--variant", "lpips"])), 3);
    assert_eq!(code(&met3r(&[])), 3);
}

#[test]
fn eval_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    synth(&data, &["--sequences", "2", "--frames", "5"]);
    fs::write(tmp.path().join("ext.json"), r#"{"fid": 12.5}"#).unwrap();
    let run = met3r(&[
        "eval", "--data", data.to_str().unwrap(), "--resolution", "32", "--baselines", "--unmasked",
        "--workers", "2", "--score-maps", "--label", "mine", "--out", out.to_str().unwrap(),
        "--extern-metrics", tmp.path().join("ext.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let table = stdout(&run);
    assert!(table.lines().next().unwrap().starts_with("method"));
    assert!(table.lines().nth(1).unwrap().starts_with("mine"));

    let summary = read_summary(&out.join("summary.json")).unwrap();
    assert_eq!((summary.method.as_str(), summary.sequences, summary.pairs), ("mine", 2, 8));
    assert_eq!(summary.means.fid, Some(12.5));
    assert!(summary.means.met3r.unwrap() < 0.05 && summary.means.sed.is_some());
    let csv = fs::read_to_string(out.join("pairs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert!(out.join("curves/met3r.png").is_file());
    assert!(out.join("score_maps/seq_001/pair_3_4.png").is_file());
}

#[test]
fn config_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--frames", "3"]);
    let d = data.to_str().unwrap();
    assert_eq!(code(&met3r(&["eval", "--data", d, "--resolution", "60"])), 3);
    assert_eq!(code(&met3r(&["eval", "--data", d, "--stride", "0"])), 3);
    assert_eq!(code(&met3r(&["eval", "--data", d, "--point-backend", "cache"])), 3);
    assert_eq!(code(&met3r(&["eval", "--data", d, "--sequence", "missing"])), 3);
    assert_eq!(code(&met3r(&["eval", "--data", tmp.path().join("none").to_str().unwrap()])), 3);
}

#[test]
fn failure_budget_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--frames", "4"]);
    // without poses the synthetic backend cannot place any camera
    fs::remove_file(tmp.path().join("poses.txt")).unwrap();
    let run = met3r(&["eval", "--data", tmp.path().to_str().unwrap(), "--resolution", "32"]);
    assert_eq!(code(&run), 2, "{}", String::from_utf8_lossy(&run.stderr));
}

fn script(path: &Path, body: &str) {
    fs::write(path, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(path, fs::Permissions::from_mode(0o755)).unwrap();
}

#[test]
fn external_point_backend_matches_synthetic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--frames", "2", "--seed", "9"]);

    // precompute the point maps the synthetic backend would produce and
    // serve them from a script speaking the external protocol
    let spec = SyntheticSequenceSpec::standard(9, 2, 32);
    let frames = spec.render().unwrap();
    let pair = PointMapBackendConfig::SyntheticPinhole { surface: spec.surface.clone() }
        .build()
        .unwrap()
        .infer(&frames[0], &frames[1])
        .unwrap();
    let fixture = tmp.path().join("pair.met3rt");
    let mut c = Container::new();
    c.push(Tensor::from_f64("x1", &pair.x1))
        .push(Tensor::from_f64("x2", &pair.x2))
        .push(Tensor::from_f64("c1", &pair.c1))
        .push(Tensor::from_f64("c2", &pair.c2));
    c.save(&fixture).unwrap();
    let exe = tmp.path().join("backend.sh");
    script(&exe, &format!("read a\nread b\nread out\ncp '{}' \"$out\"", fixture.display()));

    let d = data.to_str().unwrap();
    let run = |extra: &[&str], out: &Path| {
        let mut args = vec!["eval", "--data", d, "--resolution", "32", "--one-directional", "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let r = met3r(&args);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
        read_summary(&out.join("summary.json")).unwrap().means.met3r.unwrap()
    };
    let external = run(&["--point-backend", "external", "--point-exe", exe.to_str().unwrap()], &tmp.path().join("ext"));
    let synthetic = run(&[], &tmp.path().join("syn"));
    assert_eq!(external, synthetic);

    let broken = tmp.path().join("broken.sh");
    script(&broken, "echo boom >&2\nexit 1");
    let r = met3r(&["eval", "--data", d, "--resolution", "32", "--point-backend", "external", "--point-exe", broken.to_str().unwrap()]);
    assert_eq!(code(&r), 2);
}

#[test]
fn compare_overlays_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--frames", "4", "--epsilon-end", "0.4"]);
    for (label, extra) in [("both", None), ("one", Some("--one-directional"))] {
        let out = tmp.path().join(label);
        let mut args = vec!["eval", "--data", data.to_str().unwrap(), "--resolution", "32", "--label", label, "--out", out.to_str().unwrap()];
        args.extend(extra);
        assert_eq!(code(&met3r(&args)), 0);
    }
    let (a, b) = (tmp.path().join("both/summary.json"), tmp.path().join("one/summary.json"));
    let plot = tmp.path().join("cmp.png");
    let run = met3r(&["compare", "--runs", a.to_str().unwrap(), b.to_str().unwrap(), "--out", plot.to_str().unwrap()]);
    assert_eq!(code(&run), 0);
    let table = stdout(&run);
    assert!(table.contains("\nboth ") && table.contains("\none "));
    assert!(image_dims(&plot).0 > 0);

    let bad = met3r(&["compare", "--runs", a.to_str().unwrap(), "--out", plot.to_str().unwrap(), "--column", "fid"]);
    assert_eq!(code(&bad), 3);
}

fn image_dims(path: &Path) -> (u32, u32) {
    let bytes = fs::read(path).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");
    let be = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
    (be(16), be(20))
}

#[test]
fn selftest_passes() {
    let run = met3r(&["selftest", "--size", "40"]);
    assert_eq!(code(&run), 0, "{}", stdout(&run));
    assert!(stdout(&run).contains("8 of 8 checks passed"));
}

#[test]
fn eval_against_running_server() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut server = Command::new(env!("CARGO_BIN_EXE_met3r")).args(["serve", "--addr", &addr]).spawn().unwrap();
    let up = (0..200).any(|_| {
        std::thread::sleep(Duration::from_millis(25));
        TcpStream::connect(&addr).is_ok()
    });
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--frames", "3"]);
    let run = met3r(&["eval", "--data", tmp.path().to_str().unwrap(), "--resolution", "32", "--server", &format!("http://{addr}")]);
    let bad = met3r(&["eval", "--data", tmp.path().to_str().unwrap(), "--resolution", "40", "--server", &format!("http://{addr}")]);
    server.kill().unwrap();
    server.wait().unwrap();
    assert!(up, "server did not start");
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(code(&bad), 3);
}
