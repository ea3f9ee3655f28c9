//! End-to-end checks of the command-line driver on the desk preset.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_svilc"))
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("cli-{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn dump_config_parses_back() {
    let out = bin().args(["dump-config"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    svilc_core::config::RunConfig::from_toml(&text).unwrap();
    let out = bin().args(["dump-config", "--preset", "paper-3dcq"]).output().unwrap();
    assert!(out.status.success());
}

#[test]
fn missing_config_is_a_validation_error() {
    let out = bin().args(["scf"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["scf", "--preset", "no-such-preset"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_feed_site_names_the_field() {
    let dir = tmpdir("badfeed");
    let mut cfg = svilc_core::config::RunConfig::preset("desk-1svq").unwrap();
    cfg.feeds.insert(
        "bad".into(),
        svilc_core::config::FeedSection {
            sources: vec![(0, 0)],
            drains: vec![(1, 1)],
        },
    );
    let path = dir.join("bad.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let out = bin()
        .args(["spectrum", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("feeds.bad"), "stderr: {msg}");
    assert!(msg.contains("(0, 0)"), "stderr: {msg}");
}

#[test]
fn desk_pipeline_subcommands() {
    let dir = tmpdir("desk");
    let out_arg = dir.to_str().unwrap();

    let out = bin()
        .args(["scf", "--preset", "desk-1svq", "--out", out_arg])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("scf_summary.txt").exists());
    assert!(dir.join("meanfield_checkpoint.bin").exists());

    let out = bin()
        .args(["patterns", "--preset", "desk-1svq", "--out", out_arg])
        .output()
        .unwrap();
    assert!(out.status.success());
    let patterns = std::fs::read_to_string(dir.join("patterns.csv")).unwrap();
    // 16 patterns + headers.
    assert_eq!(patterns.lines().filter(|l| !l.starts_with('#')).count(), 17);

    let out = bin()
        .args([
            "spectrum",
            "--preset",
            "desk-1svq",
            "--out",
            out_arg,
            "--feed",
            "Jex1=0.01",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let spectrum = std::fs::read_to_string(dir.join("spectrum.csv")).unwrap();
    assert!(spectrum.contains("state,E_hf_mev,E_field_mev,E_total_mev"));

    let out = bin()
        .args(["chi", "--preset", "desk-1svq", "--out", out_arg])
        .output()
        .unwrap();
    assert!(out.status.success());
    let currents = std::fs::read_to_string(dir.join("currents_u.dat")).unwrap();
    let rows: Vec<&str> = currents.lines().filter(|l| !l.starts_with('#')).collect();
    // One row per bond: 2 * 8 * 7 = 112.
    assert_eq!(rows.len(), 112);
    for row in rows {
        assert_eq!(row.split_whitespace().count(), 5);
    }

    let out = bin()
        .args(["dipoles", "--preset", "desk-1svq", "--out", out_arg])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.join("dipoles.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir_a = tmpdir("det-a");
    let dir_b = tmpdir("det-b");
    for dir in [&dir_a, &dir_b] {
        let out = bin()
            .args([
                "sweep",
                "--preset",
                "desk-1svq",
                "--out",
                dir.to_str().unwrap(),
                "--parameter",
                "Jex1",
                "--grid",
                "0:0.02:3",
                "--threads",
                "1",
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir_a.join("sweep_Jex1.csv")).unwrap();
    let b = std::fs::read(dir_b.join("sweep_Jex1.csv")).unwrap();
    assert_eq!(a, b, "sweep outputs differ between identical runs");
}
