use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use patchrev_core::{load_png, save_png, RasterImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn patchrev(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchrev"))
        .args(args)
        .env_remove("PATCHREV_ORACLE")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// `count` synthetic 32×32 images and a trained toy patch.
    fn new(count: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let f = Self { dir };
        ok(&patchrev(&[
            "synth",
            "--out",
            s(&f.originals()),
            "--count",
            &count.to_string(),
            "--seed",
            "4",
        ]));
        ok(&patchrev(&[
            "train-patch",
            "--target",
            "2",
            "--steps",
            "60",
            "--out",
            s(&f.patch()),
        ]));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn originals(&self) -> PathBuf {
        self.path("orig")
    }

    fn patch(&self) -> PathBuf {
        self.path("patch/patch.png")
    }

    fn attack(&self, out: &str, extra: &[&str]) -> Output {
        let (input, out, patch) = (self.originals(), self.path(out), self.patch());
        let mut args = vec![
            "attack",
            "--in",
            s(&input),
            "--out",
            s(&out),
            "--patch",
            s(&patch),
        ];
        args.extend_from_slice(extra);
        patchrev(&args)
    }
}

fn pngs(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    v.sort();
    v
}

#[test]
fn attack_restore_verify_smoke() {
    let f = Fixture::new(10);
    let report = f.path("attack.json");
    ok(&f.attack("rae", &["--pct", "4", "--report", s(&report)]));
    let rae = f.path("rae");
    assert_eq!(pngs(&rae).len(), 10);
    let sidecars = fs::read_dir(&rae)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "json")
        .count();
    assert_eq!(sidecars, 10);

    let rep: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(rep["written"], 10);
    assert_eq!(rep["skipped"], 0);

    let side: Value =
        serde_json::from_slice(&fs::read(rae.join("img_0000.json")).unwrap()).unwrap();
    for key in [
        "bbox",
        "fitness",
        "seed",
        "thresholds",
        "codec",
        "capacity_bits",
        "payload_bits",
    ] {
        assert!(!side[key].is_null(), "sidecar lacks {key}");
    }
    assert_eq!(side["bbox"]["w"], 6); // ⌊√(0.04·1024)⌋

    ok(&patchrev(&[
        "restore",
        "--in",
        s(&rae),
        "--out",
        s(&f.path("restored")),
    ]));
    for name in pngs(&f.originals()) {
        let a = load_png(&f.originals().join(&name)).unwrap();
        let b = load_png(&f.path("restored").join(&name)).unwrap();
        assert_eq!(a, b, "{name}");
    }

    let vreport = f.path("verify.json");
    let out = patchrev(&[
        "verify",
        "--originals",
        s(&f.originals()),
        "--in",
        s(&rae),
        "--report",
        s(&vreport),
    ]);
    ok(&out);
    let rep: Value = serde_json::from_slice(&fs::read(&vreport).unwrap()).unwrap();
    assert_eq!(rep["verified"], 10);
    let entry = &rep["files"][0];
    assert_eq!(entry["original_sha256"], entry["restored_sha256"]);
    assert_eq!(entry["original_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn same_seed_same_bytes() {
    let f = Fixture::new(4);
    ok(&f.attack("a", &["--seed", "9"]));
    ok(&f.attack("b", &["--seed", "9"]));
    for entry in fs::read_dir(f.path("a")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(f.path("a").join(&name)).unwrap(),
            fs::read(f.path("b").join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn capacity_exceeded_is_recorded_not_fatal() {
    let f = Fixture::new(2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = RasterImage::from_fn(32, 32, |_, _| rng.gen());
    save_png(&noise, &f.originals().join("noise.png")).unwrap();

    let report = f.path("report.json");
    ok(&f.attack(
        "rae",
        &["--threshold", "1", "--pct", "6", "--report", s(&report)],
    ));
    let rep: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let noise_status = rep["files"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["file"] == "noise.png")
        .unwrap();
    assert_eq!(noise_status["status"], "capacity_exceeded");
    assert!(!f.path("rae/noise.png").exists());
    assert!(!f.path("rae/noise.json").exists());
}

#[test]
fn verify_names_a_tampered_file() {
    let f = Fixture::new(3);
    ok(&f.attack("rae", &[]));
    let victim = f.path("rae/img_0001.png");
    let mut img = load_png(&victim).unwrap();
    let px = img.pixel(0, 0);
    img.set_pixel(0, 0, [px[0] ^ 1, px[1], px[2]]);
    save_png(&img, &victim).unwrap();

    let out = patchrev(&[
        "verify",
        "--originals",
        s(&f.originals()),
        "--in",
        s(&f.path("rae")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    let flagged: Vec<&str> = text.lines().filter(|l| !l.starts_with("ok")).collect();
    assert_eq!(flagged.len(), 1, "{text}");
    assert!(flagged[0].contains("img_0001.png"));
}

#[test]
fn empty_corpus_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    let out = patchrev(&["verify", "--originals", s(&a), "--in", s(&b)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to verify"));
}

#[test]
fn evaluate_emits_one_row_per_percentage() {
    let f = Fixture::new(12);
    let csv = f.path("eval.csv");
    ok(&patchrev(&[
        "evaluate",
        "--in",
        s(&f.originals()),
        "--patch",
        s(&f.patch()),
        "--report",
        s(&csv),
    ]));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "noise_pct,images,capacity_failures,asr_adv,asr_rae,psnr_rae_vs_adv_db,ssim_rae_vs_adv,psnr_rae_vs_original_db,ssim_rae_vs_original"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(
        rows.iter().map(|r| r[0]).collect::<Vec<_>>(),
        ["3", "4", "5", "6"]
    );
    for r in &rows {
        assert_eq!(r.len(), 9);
        let v: Vec<f64> = r[3..].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v.iter().all(|x| x.is_finite()), "{r:?}");
        assert!(v[1] >= v[0] - 0.05, "ASR dropped: {r:?}");
    }
}

#[test]
fn capacity_and_bench_reports() {
    let f = Fixture::new(3);
    let out = patchrev(&[
        "capacity",
        "--in",
        s(&f.originals()),
        "--patch",
        s(&f.patch()),
        "--pct",
        "5",
    ]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "image,status,x0,y0,side,t_b,t_r,t_g,required_bits,capacity_bits"
    );
    assert_eq!(lines.len(), 4);
    assert!(
        lines[1..]
            .iter()
            .all(|l| l.split(',').nth(1) == Some("fits")),
        "{text}"
    );

    let out = patchrev(&["bench", "--in", s(&f.originals()), "--patch", s(&f.patch())]);
    ok(&out);
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["images"], 3);
    assert!(rep["embed_mean_ms"].as_f64().unwrap() > 0.0);
    assert!(rep["restore_mean_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn config_errors_exit_2() {
    let f = Fixture::new(1);
    let same = f.attack("orig", &[]);
    assert_eq!(same.status.code(), Some(2));
    let partial = f.attack("rae", &["--threshold-b", "3"]);
    assert_eq!(partial.status.code(), Some(2));
    let range = f.attack("rae", &["--threshold", "65"]);
    assert_eq!(range.status.code(), Some(2));
    let bad_oracle = f.attack("rae", &["--oracle", "nonsense"]);
    assert_eq!(bad_oracle.status.code(), Some(2));
}

#[test]
fn oracle_env_overrides_flag() {
    let f = Fixture::new(1);
    // nothing listens on port 1
    let out = Command::new(env!("CARGO_BIN_EXE_patchrev"))
        .args([
            "attack",
            "--in",
            s(&f.originals()),
            "--out",
            s(&f.path("rae")),
            "--patch",
            s(&f.patch()),
        ])
        .args(["--oracle", "toy"])
        .env("PATCHREV_ORACLE", "127.0.0.1:1")
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
