use std::path::Path;
use std::process::Command;

use image::{Rgb, RgbImage};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vinpaint"))
}

fn write_inputs(dir: &Path) {
    let (frames, masks) = (dir.join("in"), dir.join("mask"));
    std::fs::create_dir_all(&frames).unwrap();
    std::fs::create_dir_all(&masks).unwrap();
    for t in 0..8u32 {
        let img = RgbImage::from_fn(32, 24, |x, y| {
            let v = ((x + t) % 4) * 50 + (y % 3) * 20;
            Rgb([v as u8, (255 - v) as u8, ((x * 7 + y * 3) % 64) as u8])
        });
        img.save(frames.join(format!("frame_{t:05}.png"))).unwrap();
        let m = RgbImage::from_fn(32, 24, |x, y| {
            if (12..18).contains(&x) && (9..15).contains(&y) {
                Rgb([255, 255, 255])
            } else {
                Rgb([0, 0, 0])
            }
        });
        m.save(masks.join(format!("frame_{t:05}.png"))).unwrap();
    }
}

fn run_inpaint(dir: &Path, out: &str) -> std::process::Output {
    bin()
        .args(["inpaint", "--input"])
        .arg(dir.join("in"))
        .arg("--mask")
        .arg(dir.join("mask"))
        .arg("--output")
        .arg(dir.join(out))
        .args(["--seed", "7", "--threads", "1", "--patch-size", "5,5,3", "--log-energy"])
        .arg(dir.join(format!("{out}.csv")))
        .output()
        .unwrap()
}

#[test]
fn inpaint_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    for out in ["a", "b"] {
        let o = run_inpaint(dir.path(), out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for t in 0..8 {
        let name = format!("frame_{t:05}.png");
        let a = std::fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let log = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert!(log.starts_with("level,iteration,e,energy\n"));
    assert!(log.lines().count() > 1);
}

#[test]
fn missing_mask_is_a_usage_error() {
    let o = bin().args(["inpaint", "--input", "x", "--output", "y"]).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--mask"));
}

#[test]
fn ambiguity_table_rows() {
    let o = bin()
        .args(["ambiguity-table", "--shapes", "3x3,5x5", "--trials", "1000000", "--seed", "1"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "shape,trials,estimate,stderr,published");
    assert!(lines[1].starts_with("3x3,1000000,"));
    assert!(lines[2].starts_with("5x5,1000000,"));
}

#[test]
fn runtime_errors_are_one_line() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    std::fs::remove_file(dir.path().join("in").join("frame_00003.png")).unwrap();
    let o = run_inpaint(dir.path(), "out");
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1);
    assert!(err.contains("frame_00003.png"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# bad patch size, fixed on the command line\npatch_size = 4,5,5\n").unwrap();
    let o = run_inpaint(dir.path(), "x");
    assert!(o.status.success());
    let bad = bin()
        .args(["inpaint", "--input"])
        .arg(dir.path().join("in"))
        .arg("--mask")
        .arg(dir.path().join("mask"))
        .arg("--output")
        .arg(dir.path().join("y"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!bad.status.success());
    std::fs::write(&cfg, "patch_size = 7,7,7\nseed = 7\nthreads = 1\n").unwrap();
    let ok = bin()
        .args(["inpaint", "--input"])
        .arg(dir.path().join("in"))
        .arg("--mask")
        .arg(dir.path().join("mask"))
        .arg("--output")
        .arg(dir.path().join("z"))
        .arg("--config")
        .arg(&cfg)
        .args(["--patch-size", "5,5,3"])
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    // Same effective settings as the plain run.
    for t in 0..8 {
        let name = format!("frame_{t:05}.png");
        assert_eq!(
            std::fs::read(dir.path().join("x").join(&name)).unwrap(),
            std::fs::read(dir.path().join("z").join(&name)).unwrap()
        );
    }
    std::fs::write(&cfg, "lamda = 3\n").unwrap();
    let typo = bin()
        .args(["inpaint", "--input", "a", "--mask", "b", "--output", "c", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&typo.stderr).contains("unknown key"));
}

#[test]
fn help_lists_flags_with_defaults() {
    let o = bin().args(["inpaint", "--help"]).output().unwrap();
    let help = String::from_utf8(o.stdout).unwrap();
    for flag in [
        "--patch-size",
        "--lambda",
        "--levels",
        "--rho",
        "--pm-iters",
        "--max-iters",
        "--stop-eps",
        "--no-texture",
        "--no-align",
        "--recon",
        "--seed",
        "--threads",
        "--config",
        "--log-energy",
        "--dump-warps",
        "--pattern",
    ] {
        assert!(help.contains(flag), "{flag}");
    }
    let d = vinpaint::PipelineConfig::default();
    for text in [
        "[default: 5,5,5]".to_string(),
        format!("[default: {}]", d.lambda),
        format!("[default: {}]", d.rho),
        format!("[default: {}]", d.pm_iters),
        format!("[default: {}]", d.max_iters),
        format!("[default: {}]", d.stop_eps),
    ] {
        assert!(help.contains(&text), "{text}");
    }
}

#[test]
fn estimate_motion_writes_one_row_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let o = bin().args(["estimate-motion", "--input"]).arg(dir.path().join("in")).output().unwrap();
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 9);
    assert!(out.starts_with("frame,a1,a2,a3,a4,a5,a6\n"));
}
