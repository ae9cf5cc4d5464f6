use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_floquet-defect"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn vacuum_bands_have_no_gap_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bands.csv");
    let o = run(&["bands"], &config("vacuum.json"), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,alpha,trace,class"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|r| !r.ends_with(",gap")));
    assert!(dir.path().join("bands.csv.manifest.json").exists());
}

#[test]
fn sweep_dips_near_mode_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(run(&["sweep"], &config("golden.json"), &a).status.success());
    assert!(run(&["sweep", "--jobs", "2"], &config("golden.json"), &b)
        .status
        .success());
    let ta = std::fs::read_to_string(&a).unwrap();
    assert_eq!(ta, std::fs::read_to_string(&b).unwrap());
    let (kmin, _) = ta
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse::<f64>().unwrap(), f[7].parse::<f64>().unwrap())
        })
        .filter(|&(k, _)| k > 1.7 && k < 2.4)
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap();
    assert!((kmin - 1.8418).abs() < 2e-3, "{kmin}");
}

#[test]
fn json_output_parses() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("modes.json");
    let o = bin()
        .args(["modes", "--format", "json", "--config"])
        .arg(config("golden.json"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let k0 = v[0]["k0"].as_f64().unwrap();
    assert!((k0 - 1.841_797_668_228_9).abs() < 1e-11);
}

#[test]
fn negative_thickness_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"cell": [[-0.5, 4.0], [1.5, 1.0]], "defect": {"width": 0.8, "layers": [[0.8, 2.25]]},
            "sweep": {"k": {"lo": 1.7, "hi": 2.0, "points": 3}, "n": 2}}"#,
    )
    .unwrap();
    let o = run(&["sweep"], &cfg, &dir.path().join("x.csv"));
    assert_eq!(o.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("cell") && msg.contains("thickness"), "{msg}");
}

#[test]
fn unknown_key_and_missing_block_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"cell": [[0.5, 4.0], [0.5, 1.0]], "defect": {"width": 0.8, "layers": [[0.8, 2.25]]}, "colour": 1}"#,
    )
    .unwrap();
    assert_eq!(
        run(&["bands"], &cfg, &dir.path().join("x.csv"))
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(
            &["bands"],
            &config("vacuum.json"),
            &dir.path().join("y.csv")
        )
        .status
        .code(),
        Some(0)
    );
    assert_eq!(
        run(
            &["sweep"],
            &config("vacuum.json"),
            &dir.path().join("z.csv")
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("missing").join("out.csv");
    assert_eq!(
        run(&["bands"], &config("vacuum.json"), &out).status.code(),
        Some(4)
    );
}

#[test]
fn numerical_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("nomode.json");
    // defect equal to one period: no mode to track
    std::fs::write(
        &cfg,
        r#"{"cell": [[0.5, 4.0], [0.5, 1.0]], "defect": {"width": 1.0, "layers": [[0.5, 4.0], [0.5, 1.0]]},
            "polezero": {"ns": [6], "k_lo": 1.0, "k_hi": 3.0}}"#,
    )
    .unwrap();
    let o = run(&["polezero"], &cfg, &dir.path().join("x.csv"));
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
