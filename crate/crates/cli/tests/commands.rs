use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn fuselens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuselens")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_exits_zero() {
    assert_eq!(fuselens(&["--help"]).status.code(), Some(0));
    assert_eq!(fuselens(&["train", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.ckpt");
    assert_eq!(fuselens(&["train", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(fuselens(&["train", "--model", "UNet", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(fuselens(&["train", "--model", "deepfuse", "--lambda", "1.5", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(fuselens(&["train", "--model", "deepfuse", "--out", "/no/such/dir/m.ckpt"]).status.code(), Some(2));
    assert_eq!(fuselens(&["bench", "--model", "deepfuse", "--data", "/no/such/manifest.txt"]).status.code(), Some(2));
    assert_eq!(fuselens(&["frobnicate"]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn weighted_averaging_cannot_be_trained() {
    let dir = tempfile::tempdir().unwrap();
    let o = fuselens(&["train", "--model", "WeightedAveraging", "--out", p(&dir.path().join("w.ckpt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no trainable parameters"));
}

#[test]
fn full_synthetic_run_writes_every_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("f.ckpt");
    let o = fuselens(&["train", "--model", "FunFuseAn", "--resolution", "32", "--pairs", "2", "--quiet", "--out", p(&ckpt)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("f.ckpt.history.csv")).unwrap();
    let rows: Vec<_> = csv.lines().collect();
    assert_eq!(rows[0], "epoch,l_ssim_mri,l_ssim_pet,l_l2_mri,l_l2_pet,l_total");
    assert_eq!(rows.len(), 201);
    assert!(rows[200].starts_with("200,"));
    assert!(std::fs::read(&ckpt).unwrap().starts_with(b"FVCKPT1"));
}

#[test]
fn training_is_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let path = dir.path().join(name);
        let o = fuselens(&["train", "--model", "MaskNet", "--epochs", "3", "--seed", seed, "--quiet", "--out", p(&path)]);
        assert!(o.status.success());
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a", "4"), run("b", "4"));
    assert_ne!(run("a", "4"), run("c", "5"));
}

#[test]
fn one_cell_sweep_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--model", "DeepFuse", "--epochs", "4", "--seed", "9", "--resolution", "32", "--pairs", "4"];
    let ckpt = dir.path().join("d.ckpt");
    let table = dir.path().join("sweep.csv");
    let mut train = vec!["train", "--quiet", "--out", p(&ckpt)];
    train.extend(common);
    assert!(fuselens(&train).status.success());
    let mut sweep = vec!["sweep", "--out", p(&table)];
    sweep.extend(common);
    assert!(fuselens(&sweep).status.success());

    let history = std::fs::read_to_string(dir.path().join("d.ckpt.history.csv")).unwrap();
    let last: Vec<f64> = history.lines().last().unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    let csv = std::fs::read_to_string(&table).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    // history: ssim_mri, ssim_pet, l2_mri, l2_pet, total; table: 3 weights, then 4 partials, l_ssim, l_l2, l_total
    assert_eq!(&row[3..7], &last[0..4]);
    assert_eq!(row[9], last[4]);
}

#[test]
fn bench_reports_seconds_per_hover_and_fps() {
    let o = fuselens(&["bench", "--model", "DeepFuse", "--hovers", "100"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("100 hovers")).expect(&text);
    let mean: f64 = line.split("mean ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    let fps: f64 = line.split(", ").last().unwrap().trim_end_matches(" fps").parse().unwrap();
    assert!(mean > 0.0);
    assert!((fps - 1.0 / mean).abs() / fps < 0.01, "{line}");
    assert!(text.contains("128x128"));
}

#[test]
fn guidance_writes_consistent_images() {
    let dir = tempfile::tempdir().unwrap();
    let o = fuselens(&["guidance", "--model", "MaskNet", "--resolution", "48", "--out", p(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("max |guidance - jacobian diagonal| = 0.000e0"));
    for name in ["guidance_x1.png", "guidance_x2.png", "guidance_rgb.png", "fused.png"] {
        let bytes = std::fs::read(dir.path().join(name)).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}

#[test]
fn export_writes_scatter_for_the_pixel() {
    let dir = tempfile::tempdir().unwrap();
    let o = fuselens(&["export", "--model", "FunFuseAn", "--resolution", "32", "--pixel", "33", "--radius", "1", "--out", p(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("scatter.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 32 * 32);
    // pixel 33 is row 2, col 1: its radius-1 window is clipped to 2 x 3
    assert_eq!(csv.lines().skip(1).filter(|l| l.ends_with(",1")).count(), 6);
    let bad = fuselens(&["export", "--model", "FunFuseAn", "--resolution", "32", "--pixel", "0", "--out", p(dir.path())]);
    assert_eq!(bad.status.code(), Some(2));
    let bad = fuselens(&["export", "--model", "FunFuseAn", "--pixel", "1", "--gamma1", "3", "--out", p(dir.path())]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn serve_answers_http() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("fuselens.toml");
    std::fs::write(&config, "host = \"127.0.0.1\"\n[synthetic]\nresolution = 32\ncount = 1\n").unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_fuselens"))
        .args(["serve", "--config", p(&config), "--port", &port.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let body = loop {
        if let Ok(mut s) = TcpStream::connect(("127.0.0.1", port)) {
            s.write_all(b"GET /models HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
            let mut text = String::new();
            s.read_to_string(&mut text).unwrap();
            break text;
        }
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("DeepPedestrian"));
}

#[test]
fn serve_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "prot = 80\n").unwrap();
    assert_eq!(fuselens(&["serve", "--config", p(&config)]).status.code(), Some(2));
}
