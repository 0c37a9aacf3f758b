use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const ONE_TRIPLE: &str = r#"
[grid]
dimensions = ["D2"]
resolutions = ["single"]
qualities = ["ALLQ"]
feature_levels = [100, 75, 50, 25, 20, 15, 10]
operating_points = [0.1, 0.01, 0.001]
"#;

fn iriscap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iriscap"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = iriscap(dir, args);
    assert!(
        out.status.success(),
        "iriscap {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, body: &str) {
    fs::write(dir.join("iriscap.toml"), body).unwrap();
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = fs::read_dir(dir) {
        for e in entries {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(files_under(&p));
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    files_under(dir)
        .into_iter()
        .map(|p| (p.clone(), fs::read(p).unwrap()))
        .collect()
}

/// Binary PGM with a deterministic pattern.
fn write_pgm(path: &Path, rows: usize, cols: usize, seed: u64) {
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    for r in 0..rows {
        for c in 0..cols {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let noise = (state >> 59) as f64;
            let v = 128.0 + 40.0 * ((c as f64 / 9.0).sin() * (r as f64 / 5.0).cos()) + noise;
            bytes.push(v.clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(path, bytes).unwrap();
}

const MANIFEST_HEADER: &str = "identity_id,sample_id,path,overall_quality_score,iris_radius,dilation,usable_iris_area,iris_sclera_contrast,iris_pupil_contrast,grayscale_utilization,iris_pupil_concentricity,margin_adequacy\n";

#[test]
fn encode_writes_four_templates_per_sample_deterministically() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_pgm(&dir.join("a.pgm"), 64, 512, 1);
    fs::write(
        dir.join("manifest.csv"),
        format!("{MANIFEST_HEADER}id1,id1_0,a.pgm,80,,,,,,,,\n"),
    )
    .unwrap();
    write_config(
        dir,
        &format!("[dataset]\nmanifest = \"manifest.csv\"\n{ONE_TRIPLE}"),
    );
    ok(dir, &["encode"]);
    let files = files_under(&dir.join("out/templates"));
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        [
            "id1_0.f0.irc",
            "id1_0.f1.irc",
            "id1_0.f2.irc",
            "id1_0.multi.irc"
        ]
    );
    let first = snapshot(&dir.join("out/templates"));
    ok(dir, &["encode"]);
    assert_eq!(first, snapshot(&dir.join("out/templates")));
}

#[test]
fn encode_uses_sibling_occlusion_mask() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_pgm(&dir.join("a.pgm"), 64, 512, 1);
    fs::write(
        dir.join("manifest.csv"),
        format!("{MANIFEST_HEADER}id1,id1_0,a.pgm,80,,,,,,,,\n"),
    )
    .unwrap();
    write_config(
        dir,
        &format!("[dataset]\nmanifest = \"manifest.csv\"\n{ONE_TRIPLE}"),
    );
    ok(dir, &["encode"]);
    let plain = fs::read(dir.join("out/templates/D2/id1_0.f0.irc")).unwrap();
    // Occlude the left half.
    let mut mask = b"P5\n512 64\n255\n".to_vec();
    for _ in 0..64 {
        mask.extend([0u8; 256]);
        mask.extend([255u8; 256]);
    }
    fs::write(dir.join("a.mask.pgm"), mask).unwrap();
    ok(dir, &["encode"]);
    let masked = fs::read(dir.join("out/templates/D2/id1_0.f0.irc")).unwrap();
    assert_ne!(plain, masked);
}

#[test]
fn empty_manifest_encodes_nothing() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("manifest.csv"), MANIFEST_HEADER).unwrap();
    write_config(dir, "[dataset]\nmanifest = \"manifest.csv\"\n");
    let out = iriscap(dir, &["encode"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to encode"));
    assert!(files_under(&dir.join("out/templates")).is_empty());
}

#[test]
fn one_triple_gives_seven_stores_and_resumes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_config(dir, &format!("experiment_seed = 3\n[synth]\nn_identities = 8\nseed = 4\n[engine]\nworkers = 2\nchunk_size = 8\n{ONE_TRIPLE}"));
    ok(dir, &["synth"]);
    ok(dir, &["run"]);
    let stores: Vec<PathBuf> = files_under(&dir.join("out/stores"))
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "store"))
        .collect();
    assert_eq!(stores.len(), 7);
    let before = snapshot(&dir.join("out/stores"));

    // Cut a store short and resume it.
    let victim = dir.join("out/stores/D2_single_ALLQ_fl50.store");
    let len = fs::metadata(&victim).unwrap().len();
    fs::OpenOptions::new()
        .write(true)
        .open(&victim)
        .unwrap()
        .set_len(len / 2)
        .unwrap();
    let out = iriscap(dir, &["report"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fl50"));
    ok(dir, &["run", "--resume"]);
    assert_eq!(before, snapshot(&dir.join("out/stores")));

    // A different seed cannot resume these stores.
    let out = iriscap(dir, &["run", "--resume", "--seed", "4"]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn zero_identities_fail_before_compute() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("manifest.csv"), MANIFEST_HEADER).unwrap();
    write_config(
        dir,
        &format!("[dataset]\nmanifest = \"manifest.csv\"\n{ONE_TRIPLE}"),
    );
    let out = iriscap(dir, &["run"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(files_under(&dir.join("out/stores")).is_empty());
}

#[test]
fn full_grid_report_is_complete_and_repeatable() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_config(
        dir,
        "experiment_seed = 1\n[synth]\nn_identities = 6\nseed = 2\n",
    );
    ok(dir, &["synth"]);
    ok(dir, &["run"]);
    ok(dir, &["calibrate"]);
    ok(dir, &["report"]);
    let results = fs::read_to_string(dir.join("out/results.csv")).unwrap();
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(
        lines[0],
        "dimension,resolution,quality,feature_level,op,hd_threshold,fa,far,cc,pc,nicf,frr"
    );
    assert_eq!(lines.len() - 1, 24 * 7);
    // Six identities give 15 imposter pairs; even 0.1% admits none, so the
    // sentinel threshold leaves every identity clash-free.
    for row in &lines[1..] {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!((f[6], f[9], f[10]), ("0", "100.0000", "0"), "{row}");
        if f[2] == "ALLQ" {
            assert_eq!(f[8], "6", "{row}");
        }
    }
    assert_eq!(files_under(&dir.join("out/curves")).len(), 24 * 7);
    let thresholds = fs::read_to_string(dir.join("out/thresholds.csv")).unwrap();
    assert_eq!(thresholds.lines().count(), 1 + 24);

    let first = snapshot(&dir.join("out"));
    ok(dir, &["report"]);
    ok(dir, &["calibrate"]);
    assert_eq!(first, snapshot(&dir.join("out")));
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_config(dir, "[grid]\ndimensions = [\"D9\"]\n");
    assert_eq!(iriscap(dir, &["run"]).status.code(), Some(2));
    write_config(dir, "[engine]\nworkers = 0\nchunk_size = 5\n");
    assert_eq!(iriscap(dir, &["run"]).status.code(), Some(2));
    assert_eq!(
        iriscap(dir, &["--config", "missing.toml", "run"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn missing_templates_are_data_errors() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("manifest.csv"),
        format!("{MANIFEST_HEADER}id1,id1_0,a.pgm,80,,,,,,,,\nid2,id2_0,b.pgm,80,,,,,,,,\n"),
    )
    .unwrap();
    write_config(
        dir,
        &format!("[dataset]\nmanifest = \"manifest.csv\"\n{ONE_TRIPLE}"),
    );
    let out = iriscap(dir, &["run"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("id1_0"));
}
