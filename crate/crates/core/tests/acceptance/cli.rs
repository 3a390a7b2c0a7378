use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::support::{exclusive, verdict, Timer};

const CONFIG: &str = r#"{
  "seed": 11,
  "model": {
    "patch": 4, "embed_dim": 16, "encoder_depth": 2, "decoder_depth": 1, "heads": 2,
    "mlp_ratio": 2.0, "use_cls": false, "mask_ratio": 0.75, "precision": "f32"
  },
  "plans": {
    "mae": {"total_steps": 6, "batch": 2, "log_every": 1},
    "decoder": {"total_steps": 6, "batch": 2, "log_every": 1},
    "cfm": {"total_steps": 4, "align_steps": 2, "batch": 2, "log_every": 1},
    "mfm": {"total_steps": 4, "align_steps": 2, "batch": 2, "log_every": 1}
  },
  "holdout": 2
}
"#;

/// The full command sequence, every path relative to the working directory.
const STEPS: &[&[&str]] = &[
    &["synth", "--n", "6", "--size", "16", "--seed", "5", "--patch", "4", "--overexposure", "--out", "data"],
    &["pretrain", "--stage", "mae", "--config", "cfg.json"],
    &["pretrain", "--stage", "mae", "--config", "cfg.json", "--resume"],
    &["pretrain", "--stage", "decoder", "--config", "cfg.json"],
    &["train", "--target", "cfm", "--config", "cfg.json"],
    &["train", "--target", "mfm", "--config", "cfg.json"],
    &["fuse", "--checkpoint", "checkpoints/final", "--vi", "data/vi", "--ir", "data/ir", "--out", "fused"],
    &["fuse", "--checkpoint", "checkpoints/cfm", "--vi", "data/vi/0000.png", "--ir", "data/ir/0000.png", "--out", "single.png", "--path", "cfm-only"],
    &["eval", "--vi", "data/vi", "--ir", "data/ir", "--fused", "fused", "--out-report", "reports/metrics"],
    &["train", "--hierarchical", "--config", "cfg.json"],
    &["ablate", "--study", "two-stage", "--config", "cfg.json"],
    &["ablate", "--study", "hierarchy", "--config", "cfg.json"],
    &["ablate", "--study", "feature-probe", "--config", "cfg.json"],
];

fn run_all(dir: &Path) -> Vec<String> {
    fs::write(dir.join("cfg.json"), CONFIG).unwrap();
    let mut failures = Vec::new();
    for args in STEPS {
        let out = Command::new(env!("CARGO_BIN_EXE_maefuse"))
            .args(*args)
            .current_dir(dir)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        if !out.status.success() {
            failures.push(format!(
                "`{}` exited {:?}: {}",
                args.join(" "),
                out.status.code(),
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
    }
    failures
}

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            walk(root, &path, out);
        } else {
            out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
        }
    }
}

/// Wall-clock timings and report timestamps are the only content allowed to differ.
fn comparable(path: &Path, bytes: &[u8]) -> Option<Vec<u8>> {
    let name = path.to_string_lossy();
    if name.ends_with(".timing.csv") {
        return None;
    }
    if name.ends_with(".json") {
        if let Ok(mut v) = serde_json::from_slice::<serde_json::Value>(bytes) {
            if let Some(meta) = v.get_mut("meta").and_then(|m| m.as_object_mut()) {
                if meta.remove("timestamp").is_some() {
                    return Some(serde_json::to_vec(&v).unwrap());
                }
            }
        }
    }
    Some(bytes.to_vec())
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut all = BTreeMap::new();
    walk(root, root, &mut all);
    all.into_iter()
        .filter_map(|(p, b)| comparable(&p, &b).map(|b| (p, b)))
        .collect()
}

#[test]
fn criterion_10_cli_determinism() {
    let _serial = exclusive();
    let timer = Timer::start();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut failures = run_all(a.path());
    failures.extend(run_all(b.path()));
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let differing: Vec<String> = sa
        .keys()
        .chain(sb.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| sa.get(*k) != sb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let logs = sa.keys().filter(|k| k.extension().is_some_and(|e| e == "jsonl")).count();
    let pngs = sa.keys().filter(|k| k.extension().is_some_and(|e| e == "png")).count();
    if sa.is_empty() {
        failures.push("no outputs".into());
    }
    if !differing.is_empty() {
        failures.push(format!("differing: {}", differing.join(", ")));
    }
    verdict(
        10,
        "CLI determinism",
        failures.is_empty(),
        format!(
            "{} commands run twice, {} files compared ({logs} logs, {pngs} images), {} differ; {:.0}s{}",
            STEPS.len(),
            sa.len(),
            differing.len(),
            timer.secs(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    );
}
