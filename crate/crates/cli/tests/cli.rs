use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use denoise_bench::harness::{RESULTS_CSV, RUN_LOG, SUMMARY_TXT};
use denoise_bench::noise::NoiseSpec;
use denoise_bench::{load_image, save_image, Image};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_denoise-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn clean_dir(root: &Path, n: usize) -> PathBuf {
    let dir = root.join("clean");
    fs::create_dir_all(&dir).unwrap();
    for i in 0..n {
        let img = Image::from_fn(32, 24, |r, c| ((r * 9 + c * 5 + i * 31) % 256) as f64);
        save_image(&img, dir.join(format!("im{i:02}.png"))).unwrap();
    }
    dir
}

fn identity_script(root: &Path) -> String {
    let path = root.join("identity.sh");
    fs::write(
        &path,
        r#"#!/bin/sh
while [ $# -gt 0 ]; do case "$1" in --input) IN="$2"; shift 2;; --output) OUT="$2"; shift 2;; *) shift;; esac; done
cp "$IN"/*.png "$OUT"/
"#,
    )
    .unwrap();
    path.display().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn corrupt_with_zero_sigma_copies_input() {
    let d = tempfile::tempdir().unwrap();
    let clean = clean_dir(d.path(), 3);
    let out = d.path().join("noisy");
    let o = bench(&["corrupt", "--in", s(&clean), "--out", s(&out), "--noise", "gaussian:sigma=0", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{o:?}");
    for i in 0..3 {
        let name = format!("im{i:02}.png");
        assert_eq!(fs::read(clean.join(&name)).unwrap(), fs::read(out.join(&name)).unwrap());
    }
}

#[test]
fn corrupt_mixture_matches_library_and_counts() {
    let d = tempfile::tempdir().unwrap();
    let clean = d.path().join("clean");
    fs::create_dir(&clean).unwrap();
    for i in 0..10 {
        save_image(&Image::constant(40, 25, 128.0), clean.join(format!("c{i}.png"))).unwrap();
    }
    let out = d.path().join("noisy");
    let o = bench(&[
        "corrupt", "--in", s(&clean), "--out", s(&out), "--noise", "mixture:sigma=5,fraction=0.2", "--seed", "42",
        "--jobs", "3",
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let spec = NoiseSpec::mixture(5.0, 0.2, 42);
    for i in 0..10 {
        let id = format!("c{i}");
        let got = load_image(out.join(format!("{id}.png"))).unwrap();
        let expected = spec.apply(&Image::constant(40, 25, 128.0), spec.stream_seed(&id)).unwrap();
        assert_eq!(got, expected);
        // sigma 5 around 128 never reaches the extremes, so every 0/255 is an impulse
        let impulses = got.pixels().iter().filter(|&&v| v == 0.0 || v == 255.0).count();
        assert_eq!(impulses, 200);
    }
}

#[test]
fn malformed_noise_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let clean = clean_dir(d.path(), 1);
    for noise in ["gaussian", "gaussian:sigma=abc", "poisson:lambda=3", "sp:fraction=2", "sp|gaussian:sigma=1"] {
        let o = bench(&["corrupt", "--in", s(&clean), "--out", s(&d.path().join("o")), "--noise", noise, "--seed", "1"]);
        assert_eq!(code(&o), 2, "{noise}");
    }
    assert_eq!(code(&bench(&["corrupt", "--bogus"])), 2);
    assert_eq!(code(&bench(&["frobnicate"])), 2);
}

#[test]
fn validate_reports_checks() {
    let d = tempfile::tempdir().unwrap();
    let good = identity_script(d.path());
    let o = bench(&["validate", "--timeout", "10", "--", "sh", &good]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS name contract"));

    let bad = d.path().join("rename.sh");
    fs::write(
        &bad,
        "#!/bin/sh\nwhile [ $# -gt 0 ]; do case \"$1\" in --input) IN=\"$2\"; shift 2;; --output) OUT=\"$2\"; shift 2;; *) shift;; esac; done\nfor f in \"$IN\"/*.png; do cp \"$f\" \"$OUT/x_$(basename \"$f\")\"; done\n",
    )
    .unwrap();
    let o = bench(&["validate", "--", "sh", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL name contract"), "{}", stdout(&o));
}

fn write_manifest(root: &Path, clean: &Path, out: &str, methods: &str) -> PathBuf {
    let path = root.join(format!("{out}.toml"));
    fs::write(
        &path,
        format!(
            r#"
master_seed = 11
output_dir = "{out}"

[[datasets]]
name = "g30"
kind = "synthetic"
clean_dir = "{clean}"
noise = "gaussian:sigma=30"

[[datasets]]
name = "mix"
kind = "synthetic"
clean_dir = "{clean}"
noise = "gaussian:sigma=30|sp:fraction=0.1"
{methods}
"#,
            clean = clean.display()
        ),
    )
    .unwrap();
    path
}

const BUILTINS: &str = r#"
[[methods]]
name = "identity"
kind = "builtin"
builtin = "identity"

[[methods]]
name = "median"
kind = "builtin"
builtin = "median"
params = { radius = 1 }
"#;

#[test]
fn run_then_report_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let clean = clean_dir(d.path(), 3);
    let manifest = write_manifest(d.path(), &clean, "out", BUILTINS);
    let o = bench(&["run", "--manifest", s(&manifest), "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let out = d.path().join("out");
    let csv = out.join(RESULTS_CSV);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + 2 * 2 * 3);
    assert!(out.join("median/mix/im01.png").is_file());

    let r = bench(&["report", "--csv", s(&csv), "--rank", "--tau"]);
    assert_eq!(code(&r), 0);
    assert_eq!(stdout(&r), fs::read_to_string(out.join(SUMMARY_TXT)).unwrap());
    let plain = stdout(&bench(&["report", "--csv", s(&csv)]));
    assert!(!plain.contains("Kendall") && !plain.contains("Rankings"));
}

#[test]
fn report_tau_single_dataset() {
    let d = tempfile::tempdir().unwrap();
    let csv = d.path().join("r.csv");
    fs::write(
        &csv,
        "method,dataset,image_id,psnr_db,ssim,wall_time_s,output_path\n\
         a,only,1,20,0.5,0.1,a/only/1.png\n\
         b,only,1,25,0.6,0.1,b/only/1.png\n",
    )
    .unwrap();
    let o = bench(&["report", "--csv", s(&csv), "--tau"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let tau_block = text.split("Kendall tau").nth(1).unwrap();
    let rows: Vec<&str> = tau_block.lines().skip(2).filter(|l| !l.is_empty()).collect();
    assert_eq!(rows, vec!["only    1.0000"]);
}

#[test]
fn report_rejects_unknown_column() {
    let d = tempfile::tempdir().unwrap();
    let csv = d.path().join("r.csv");
    fs::write(&csv, "method,dataset,image_id,psnr_db,ssim,wall_time_s,output_path,extra\n").unwrap();
    let o = bench(&["report", "--csv", s(&csv)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema"));
}

#[test]
fn missing_plugin_binary_fails_run() {
    let d = tempfile::tempdir().unwrap();
    let clean = clean_dir(d.path(), 2);
    let methods = format!(
        "{BUILTINS}\n[[methods]]\nname = \"ghost\"\nkind = \"external\"\ncommand = [\"{}\"]\n",
        d.path().join("no-such-plugin").display()
    );
    let manifest = write_manifest(d.path(), &clean, "out", &methods);
    let o = bench(&["run", "--manifest", s(&manifest)]);
    assert_eq!(code(&o), 1);
    let out = d.path().join("out");
    let log = fs::read_to_string(out.join(RUN_LOG)).unwrap();
    assert!(log.contains("ghost") && log.contains("failed"));
    // the other methods still produced their records
    assert_eq!(fs::read_to_string(out.join(RESULTS_CSV)).unwrap().lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn external_identity_matches_builtin_identity() {
    let d = tempfile::tempdir().unwrap();
    let clean = clean_dir(d.path(), 3);
    let script = identity_script(d.path());
    let methods = format!("{BUILTINS}\n[[methods]]\nname = \"ext\"\nkind = \"external\"\ncommand = [\"sh\", \"{script}\"]\n");
    let manifest = write_manifest(d.path(), &clean, "out", &methods);
    let o = bench(&["run", "--manifest", s(&manifest)]);
    assert_eq!(code(&o), 0, "{o:?}");
    let recs = denoise_bench::harness::read_csv(d.path().join("out").join(RESULTS_CSV)).unwrap();
    let col = |m: &str| -> Vec<(String, String, Option<f64>)> {
        recs.iter()
            .filter(|r| r.method == m)
            .map(|r| (r.dataset.clone(), r.image_id.clone(), r.psnr_db))
            .collect()
    };
    assert_eq!(col("ext"), col("identity"));
    assert_eq!(col("ext").len(), 6);
}

#[test]
fn dry_run_executes_nothing() {
    let d = tempfile::tempdir().unwrap();
    let clean = clean_dir(d.path(), 2);
    let manifest = write_manifest(d.path(), &clean, "out", BUILTINS);
    let o = bench(&["run", "--manifest", s(&manifest), "--dry-run"]);
    assert_eq!(code(&o), 0);
    let plan = stdout(&o);
    assert!(plan.contains("g30: 2 images") && plan.contains("expected records: 8"), "{plan}");
    assert!(!d.path().join("out").exists());
}

fn without_wall_time(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(5);
            f.join(",")
        })
        .collect()
}

#[test]
fn jobs_do_not_change_results() {
    let d = tempfile::tempdir().unwrap();
    let clean = clean_dir(d.path(), 3);
    let mut csvs = Vec::new();
    for (out, jobs) in [("one", "1"), ("eight", "8")] {
        let manifest = write_manifest(d.path(), &clean, out, BUILTINS);
        assert_eq!(code(&bench(&["run", "--manifest", s(&manifest), "--jobs", jobs])), 0);
        csvs.push(fs::read_to_string(d.path().join(out).join(RESULTS_CSV)).unwrap());
    }
    assert_eq!(without_wall_time(&csvs[0]), without_wall_time(&csvs[1]));
}
