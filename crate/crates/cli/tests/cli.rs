//! Subcommands driven through `run`, as the binary would be.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::Command;

use medmus_core::stats::{mann_whitney_u, wilcoxon_signed_rank, Alternative};
use serde_json::Value;
use sha2::{Digest, Sha256};

fn medmus(args: &[&dyn AsRef<std::ffi::OsStr>]) -> i32 {
    let argv: Vec<OsString> = std::iter::once(OsString::from("medmus"))
        .chain(["--threads", "1"].map(OsString::from))
        .chain(args.iter().map(|a| a.as_ref().to_owned()))
        .collect();
    medmus_cli::run(argv)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn sha_hex(path: &Path) -> String {
    Sha256::digest(std::fs::read(path).unwrap()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of every file under `root`, keyed by path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let digest = sha_hex(&p);
                out.insert(p, digest);
            }
        }
    }
    out
}

fn synth(out: &Path, count: usize) {
    let n = count.to_string();
    assert_eq!(medmus(&[&"synth", &"--out", &out, &"--count", &n, &"--seed", &"3"]), 0);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(medmus(&[&"synth", &"--out", &dir.path(), &"--bogus"]), 2);
    assert_eq!(medmus(&[&"teleport"]), 2);
    assert_eq!(medmus(&[&"reconstruct", &"--out", &dir.path().join("v.json")]), 2);
    assert_eq!(medmus(&[&"synth", &"--out", &dir.path(), &"--count", &"0"]), 2);
    let table = dir.path().join("t.csv");
    std::fs::write(&table, "x\n1\n2\n").unwrap();
    assert_eq!(medmus(&[&"stats", &"--test", &"wilcoxon", &"--a", &table, &"--b", &table]), 2);
    assert_eq!(medmus(&[&"stats", &"--test", &"mannwhitney", &"--paired", &"--a", &table, &"--b", &table]), 2);
    let m = dir.path().join("m.json");
    assert_eq!(
        medmus(&[&"eval", &"--pred", &m, &"--pred", &m, &"--gt", &m, &"--prostate", &m, &"--out", &dir.path()]),
        2
    );
}

#[test]
fn runtime_failures_exit_one_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_medmus"))
        .args(["reconstruct", "--stack"])
        .arg(dir.path().join("missing"))
        .arg("--out")
        .arg(dir.path().join("v.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
    let out = Command::new(env!("CARGO_BIN_EXE_medmus")).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("e2e"));
}

#[test]
fn eval_of_identical_masks_has_unit_dice() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1);
    let case = data.join("case_000/frames");
    let report = dir.path().join("report");
    let labels = case.join("labels");
    let prostate = case.join("prostate");
    assert_eq!(
        medmus(&[&"eval", &"--pred", &labels, &"--gt", &labels, &"--prostate", &prostate, &"--out", &report]),
        0
    );
    let m = json(&report.join("metrics.json"));
    assert_eq!(m["cases"][0]["dsc"], 1.0);
    assert_eq!(m["cases"][0]["matching"]["fn"], 0);
    let csv = std::fs::read_to_string(report.join("metrics.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("case_000,1.000000,"));
    let prov = json(&report.join("provenance.json"));
    assert_eq!(prov["command"], "eval");
    assert!(!prov["inputs"].as_array().unwrap().is_empty());
}

#[test]
fn pipeline_chain_keeps_inputs_and_writes_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    synth(&data, 2);
    let frames_before = snapshot(&data.join("case_000/frames"));

    for i in 0..2 {
        let case = data.join(format!("case_{i:03}"));
        for ch in ["image", "labels", "prostate"] {
            let vol = case.join("volume").join(format!("{ch}.json"));
            assert_eq!(medmus(&[&"reconstruct", &"--stack", &case.join("frames").join(ch), &"--out", &vol]), 0);
            assert!(vol.with_file_name(format!("{ch}.provenance.json")).exists());
        }
    }
    let case = data.join("case_000");
    let labels_vol = case.join("volume/labels.json");
    // Labels refuse trilinear resampling.
    assert_eq!(
        medmus(&[&"project", &"--vol", &labels_vol, &"--geom", &case.join("frames/labels"), &"--out", &root.join("x"), &"--interp", &"trilinear"]),
        2
    );
    let back = root.join("back");
    assert_eq!(medmus(&[&"project", &"--vol", &labels_vol, &"--geom", &case.join("frames/labels"), &"--out", &back]), 0);
    let report = root.join("roundtrip");
    assert_eq!(
        medmus(&[&"eval", &"--pred", &back, &"--gt", &case.join("frames/labels"), &"--prostate", &case.join("frames/prostate"), &"--out", &report]),
        0
    );
    let dice = json(&report.join("metrics.json"))["cases"][0]["dsc"].as_f64().unwrap();
    assert!(dice > 0.9, "label round trip dice {dice}");

    // A small network and one epoch keep this quick.
    let cfg = root.join("train.json");
    std::fs::write(&cfg, r#"{"model": {"num_levels": 3, "base_channels": 2, "patch_size": [8, 16, 16]}, "eval_every": 0}"#)
        .unwrap();
    let ckpt = root.join("model/net.ckpt");
    assert_eq!(medmus(&[&"train", &"--data", &data, &"--out", &ckpt, &"--config", &cfg, &"--epochs", &"1"]), 0);
    for suffix in ["net.curve.csv", "net.train.json", "net.provenance.json"] {
        assert!(ckpt.with_file_name(suffix).exists(), "{suffix}");
    }
    let summary = json(&ckpt.with_file_name("net.train.json"));
    assert_eq!(summary["epochs_run"], 1);

    let pred = root.join("pred/mask.json");
    let probs = root.join("pred/probs.json");
    let image = case.join("volume/image.json");
    assert_eq!(medmus(&[&"predict", &"--model", &ckpt, &"--vol", &image, &"--out", &pred, &"--probs", &probs]), 0);
    assert!(probs.exists());
    let post = root.join("pred/post.json");
    assert_eq!(medmus(&[&"postproc", &"--in", &pred, &"--out", &post]), 0);
    let prov = json(&root.join("pred/post.provenance.json"));
    assert_eq!(prov["command"], "postproc");
    let digest = sha_hex(&pred);
    assert!(prov["inputs"].as_array().unwrap().iter().any(|f| f["sha256"] == digest.as_str()));

    // The inputs read along the way are untouched.
    assert_eq!(snapshot(&data.join("case_000/frames")), frames_before);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1);
    let other = dir.path().join("again");
    synth(&other, 1);
    let strip = |m: BTreeMap<PathBuf, String>, root: &Path| -> Vec<(PathBuf, String)> {
        m.into_iter()
            .filter(|(p, _)| !p.ends_with("provenance.json"))
            .map(|(p, d)| (p.strip_prefix(root).unwrap().to_owned(), d))
            .collect()
    };
    assert_eq!(strip(snapshot(&data), &data), strip(snapshot(&other), &other));
    let stack = data.join("case_000/frames/image");
    let (a, b) = (dir.path().join("a/v.json"), dir.path().join("b/v.json"));
    assert_eq!(medmus(&[&"reconstruct", &"--stack", &stack, &"--out", &a]), 0);
    assert_eq!(medmus(&[&"reconstruct", &"--stack", &stack, &"--out", &b]), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(a.with_extension("raw")).unwrap(), std::fs::read(b.with_extension("raw")).unwrap());
}

#[test]
fn stats_reports_the_library_p_values() {
    let dir = tempfile::tempdir().unwrap();
    let a = [0.61, 0.72, 0.55, 0.80, 0.67, 0.74, 0.59];
    let b = [0.52, 0.70, 0.41, 0.66, 0.69, 0.58, 0.47];
    let write = |name: &str, v: &[f64]| {
        let p = dir.path().join(name);
        let body: String = v.iter().enumerate().map(|(i, x)| format!("case_{i:03},{x}\n")).collect();
        std::fs::write(&p, format!("case,dsc\n{body}")).unwrap();
        p
    };
    let (pa, pb) = (write("a.csv", &a), write("b.csv", &b));
    let out = dir.path().join("w.json");
    assert_eq!(
        medmus(&[&"stats", &"--test", &"wilcoxon", &"--paired", &"--a", &pa, &"--b", &pb, &"--bonferroni", &"3", &"--out", &out]),
        0
    );
    let r = json(&out);
    let expect = wilcoxon_signed_rank(&a, &b, Alternative::TwoSided).unwrap();
    assert_eq!(r["results"][0]["column"], "dsc");
    assert_eq!(r["results"][0]["p_value"].as_f64().unwrap(), expect.p_value);
    assert_eq!(r["results"][0]["p_adjusted"].as_f64().unwrap(), (3.0 * expect.p_value).min(1.0));
    assert!(out.with_file_name("w.provenance.json").exists());

    let out = dir.path().join("u.json");
    assert_eq!(
        medmus(&[&"stats", &"--test", &"mannwhitney", &"--alternative", &"greater", &"--a", &pa, &"--b", &pb, &"--out", &out]),
        0
    );
    let expect = mann_whitney_u(&a, &b, Alternative::Greater).unwrap();
    assert_eq!(json(&out)["results"][0]["p_value"].as_f64().unwrap(), expect.p_value);
}
