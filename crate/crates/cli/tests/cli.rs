use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gwn(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwn"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("GWN_SEED")
        .output()
        .unwrap()
}

/// Runs a command that must succeed and returns the run directory it prints.
fn run_dir(out: &Path, args: &[&str]) -> PathBuf {
    let o = gwn(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const TINY: &[&str] = &["--epochs", "1", "--steps-per-epoch", "3", "--latent-dim", "4"];

#[test]
fn check_bounds_on_independent_bits() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_dir(tmp.path(), &["check-bounds", "--preset", "independent-bits"]);
    let r = json(dir.join("bounds.json"));
    assert_eq!(r["ordering_satisfied"], true);
    for k in ["gk_value", "max_receive_ii", "min_transmit_ii", "wyner_value"] {
        assert!(r[k].as_f64().unwrap().abs() < 1e-6, "{k}: {}", r[k]);
    }
    assert!(r["config_hash"].is_string() && r["seed"].is_u64());
}

#[test]
fn common_info_and_gw_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_dir(tmp.path(), &["common-info", "--preset", "copy-bits", "--aux-size", "2"]);
    let r = json(dir.join("common_info.json"));
    assert!((r["gacs_korner"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((r["wyner"].as_f64().unwrap() - 1.0).abs() < 1e-6);

    let dir = run_dir(tmp.path(), &["gw-discrete", "--preset", "copy-3"]);
    let r = json(dir.join("gw.json"));
    assert!((r["value"].as_f64().unwrap() - 3f64.log2()).abs() < 1e-12);
}

#[test]
fn exit_codes_separate_validation_and_numerical_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nlearning_rate = 3\n").unwrap();
    let o = gwn(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));

    assert_eq!(gwn(tmp.path(), &["common-info", "--preset", "nope"]).status.code(), Some(2));
    assert_eq!(gwn(tmp.path(), &["bdrate", "--rate", "sideways", "--matrix", "x.csv"]).status.code(), Some(2));

    // One Y1 symbol cannot reach zero distortion on three source symbols.
    let o = gwn(tmp.path(), &["gw-discrete", "--preset", "copy-3", "--sizes", "1,1,3"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("common_info"));
}

#[test]
fn training_is_reproducible_and_seed_override_applies() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--arch", "shared"];
    args.extend_from_slice(TINY);
    let a = run_dir(tmp.path(), &args);
    let first: Vec<Vec<u8>> = ["points.csv", "point.json", "history.csv", "model.bin"]
        .iter()
        .map(|f| std::fs::read(a.join(f)).unwrap())
        .collect();
    let b = run_dir(tmp.path(), &args);
    assert_eq!(a, b);
    for (f, bytes) in ["points.csv", "point.json", "history.csv", "model.bin"].iter().zip(&first) {
        assert_eq!(&std::fs::read(b.join(f)).unwrap(), bytes, "{f}");
    }
    let csv = String::from_utf8(first[0].clone()).unwrap();
    assert!(csv.starts_with("arch,beta,eta,seed,R1,R2,R0,Rt,Rr,D1,D2,acc1,acc2,config_hash\r\n"));

    let o = Command::new(env!("CARGO_BIN_EXE_gwn"))
        .arg("--out")
        .arg(tmp.path())
        .args(&args)
        .env("GWN_SEED", "9")
        .output()
        .unwrap();
    assert!(o.status.success());
    let c = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
    assert_ne!(c, a);
    assert_eq!(json(c.join("point.json"))["seed"], 9);
}

#[test]
fn encode_then_decode() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--arch", "separated"];
    args.extend_from_slice(TINY);
    let run = run_dir(tmp.path(), &args);
    let enc = run_dir(tmp.path(), &["encode", "--run", run.to_str().unwrap(), "--batches", "2", "--batch-size", "10"]);
    let summary = json(enc.join("encode.json"));
    let batches = summary["batches"].as_array().unwrap();
    assert_eq!(batches.len(), 2);
    for b in batches {
        let payload = b["payload_bits"].as_f64().unwrap();
        let model = b["model_bits"].as_f64().unwrap();
        assert!((payload - model).abs() <= 0.02 * model + 64.0, "{payload} vs {model}");
    }
    let input = enc.join("batch-000.gwn");
    let dec = run_dir(
        tmp.path(),
        &["decode", "--run", run.to_str().unwrap(), "--input", input.to_str().unwrap(), "--samples", "10"],
    );
    let codes = std::fs::read_to_string(dec.join("codes.csv")).unwrap();
    // Separated with E = 4: three channels of 10 x 4 codes.
    assert_eq!(codes.lines().count(), 1 + 3 * 10 * 4);

    let o = gwn(
        tmp.path(),
        &["decode", "--run", run.to_str().unwrap(), "--input", input.to_str().unwrap(), "--samples", "11"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_rows_do_not_depend_on_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--archs", "shared,joint", "--betas", "1", "--etas", "0.1,0.5"];
    args.extend_from_slice(TINY);
    let mut serial = args.clone();
    serial.extend_from_slice(&["--jobs", "1"]);
    let dir = run_dir(tmp.path(), &serial);
    let one = std::fs::read(dir.join("points.csv")).unwrap();
    let mut parallel = args.clone();
    parallel.extend_from_slice(&["--jobs", "3"]);
    let dir2 = run_dir(tmp.path(), &parallel);
    assert_eq!(dir, dir2);
    assert_eq!(std::fs::read(dir2.join("points.csv")).unwrap(), one);
    let text = String::from_utf8(one).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("shared,1,0.1,") && rows[3].starts_with("joint,1,0.5,"));

    let points = dir.join("points.csv");
    let o = gwn(tmp.path(), &["bdrate", "--reference", points.to_str().unwrap(), "--test", points.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim().parse::<f64>().unwrap(), 0.0);
    let m = run_dir(tmp.path(), &["bdrate", "--matrix", points.to_str().unwrap()]);
    assert!(json(m.join("bd_matrix.json"))["entries"].is_array());
}

#[test]
fn curves_sources_and_mi() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_dir(tmp.path(), &["ba-curves", "--preset", "independent-bits", "--slopes", "-1,-2,-4"]);
    let text = std::fs::read_to_string(dir.join("curves.csv")).unwrap();
    assert!(text.starts_with("curve,slope,rate,d1,d2,config_hash,seed\r\n"));
    assert_eq!(text.lines().count(), 1 + 9);
    // Independent sources: the joint rate is the sum of the marginals.
    let rate = |curve: &str, slope: &str| -> f64 {
        let row = text.lines().find(|l| l.starts_with(&format!("{curve},{slope},"))).unwrap();
        row.split(',').nth(2).unwrap().parse().unwrap()
    };
    assert!((rate("joint", "-2") - rate("x1", "-2") - rate("x2", "-2")).abs() < 1e-6);

    let dir = run_dir(tmp.path(), &["gen-source", "--samples", "2"]);
    let src = json(dir.join("source.json"));
    assert_eq!(src["kind"], "synthetic");
    let samples = std::fs::read_to_string(dir.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 2 * 16);

    let joint = tmp.path().join("joint.csv");
    let indep = tmp.path().join("indep.csv");
    let header = "arch,beta,eta,seed,R1,R2,R0,Rt,Rr,D1,D2,acc1,acc2\r\n";
    std::fs::write(&joint, format!("{header}joint,1,1,0,0,0,4,4,8,0.1,0.1,,\r\njoint,1,1,0,0,0,2,2,4,0.3,0.3,,\r\n")).unwrap();
    std::fs::write(
        &indep,
        format!("{header}independent,1,1,0,2.5,2.5,0,5,5,0.1,0.1,,\r\nindependent,1,1,0,1.5,1.5,0,3,3,0.3,0.3,,\r\n"),
    )
    .unwrap();
    let dir = run_dir(
        tmp.path(),
        &["empirical-mi", "--joint", joint.to_str().unwrap(), "--independent", indep.to_str().unwrap()],
    );
    let mi = std::fs::read_to_string(dir.join("mi.csv")).unwrap();
    assert!(mi.lines().nth(1).unwrap().starts_with("0.1,1,false"), "{mi}");
}
