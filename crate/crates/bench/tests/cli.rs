//! The `wavefill` binary end to end on a tiny grid with the physics-only
//! sampler.

use std::path::Path;
use std::process::Command;

fn wavefill(args: &[&str], dir: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_wavefill"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn generate_observe_sample_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let msg = wavefill(
        &[
            "gen", "--n", "12", "--size", "16", "--seed", "3", "--out", "corpus",
        ],
        d,
    );
    assert!(msg.contains("12 scenes"), "{msg}");
    let truth = std::fs::read_dir(d.join("corpus").join("test"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "wfld"))
        .min()
        .expect("corpus holds field files");
    let truth = truth.to_str().unwrap();

    wavefill(
        &[
            "observe", "--truth", truth, "--row", "0.25", "--lambda", "3", "--out", "obs.wobs",
        ],
        d,
    );
    wavefill(
        &[
            "sample",
            "--scheme",
            "aas",
            "--obs",
            "obs.wobs",
            "--out",
            "pred.wfld",
            "--png",
            "pred.png",
        ],
        d,
    );
    assert!(d.join("pred.png").exists());

    // the mask for scoring comes from the observation
    let grid = wavefill_core::field::GridSpec::new(16, 16, 200.0, 5.0, 110.0).unwrap();
    let obs = wavefill_core::io::read_observation(&d.join("obs.wobs"), &grid).unwrap();
    wavefill_core::io::write_mask(&d.join("obs.wmsk"), &obs.mask).unwrap();
    let score = wavefill(
        &[
            "eval",
            "--pred",
            "pred.wfld",
            "--truth",
            truth,
            "--mask",
            "obs.wmsk",
        ],
        d,
    );
    let mse: f64 = score
        .lines()
        .find_map(|l| l.strip_prefix("masked_mse_2x2:"))
        .expect("score line")
        .trim()
        .parse()
        .unwrap();
    assert!((0.0..1.0).contains(&mse));
}

#[test]
fn bad_arguments_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wavefill"))
        .args([
            "sample",
            "--scheme",
            "repaint",
            "--obs",
            "missing.wobs",
            "--out",
            "x",
        ])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let out = Command::new(env!("CARGO_BIN_EXE_wavefill"))
        .args(["train", "--corpus", "c", "--mode", "m9", "--out", "x"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
