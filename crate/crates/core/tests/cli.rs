use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use segloss::io::{read_mha, write_mha, MhaImage, ReportDocument};
use segloss::volume::{BinaryMask, Geometry, ScalarVolume};

fn segloss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segloss"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn geometry() -> Geometry {
    Geometry::new([12, 10, 6], [0.8, 0.8, 3.0], [1.0, -2.0, 0.5]).unwrap()
}

fn blob(offset: usize) -> BinaryMask {
    BinaryMask::from_fn(geometry(), |x, y, z| {
        (3 + offset..8 + offset).contains(&x) && (2..7).contains(&y) && (1..4).contains(&z)
    })
}

fn write_mask(path: &Path, m: &BinaryMask) {
    write_mha(&MhaImage::from_mask(m), path, false).unwrap();
}

fn write_scalar(path: &Path, v: &ScalarVolume) {
    write_mha(&MhaImage::from_scalar(v), path, false).unwrap();
}

fn write_case(dir: &Path) {
    let g = geometry();
    write_scalar(
        &dir.join("adc.mha"),
        &ScalarVolume::from_fn(g, |x, y, z| (x * 7 + y * 3 + z) as f32).unwrap(),
    );
    write_scalar(
        &dir.join("zadc.mha"),
        &ScalarVolume::from_fn(g, |x, _, _| x as f32 - 4.0).unwrap(),
    );
    write_mask(&dir.join("label.mha"), &blob(0));
}

#[test]
fn preprocess_writes_four_files() {
    let tmp = tempfile::tempdir().unwrap();
    write_case(tmp.path());
    let out = tmp.path().join("pre");
    let r = segloss(&[
        "preprocess",
        "--adc",
        s(&tmp.path().join("adc.mha")),
        "--zadc",
        s(&tmp.path().join("zadc.mha")),
        "--label",
        s(&tmp.path().join("label.mha")),
        "--out",
        s(&out),
        "--dims",
        "16,16,8",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["input_ch0.mha", "input_ch1.mha", "label.mha", "meta.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let label = read_mha(out.join("label.mha")).unwrap();
    assert_eq!(label.geometry.dims(), [16, 16, 8]);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(
        meta["original_geometry"]["dims"],
        serde_json::json!([12, 10, 6])
    );
}

#[test]
fn preprocess_error_codes() {
    let tmp = tempfile::tempdir().unwrap();
    write_case(tmp.path());
    let args = |adc: &str, dims: &str| {
        segloss(&[
            "preprocess",
            "--adc",
            adc,
            "--zadc",
            s(&tmp.path().join("zadc.mha")),
            "--label",
            s(&tmp.path().join("label.mha")),
            "--out",
            s(&tmp.path().join("o")),
            "--dims",
            dims,
        ])
    };
    assert_eq!(
        args(s(&tmp.path().join("missing.mha")), "8,8,8")
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        args(s(&tmp.path().join("adc.mha")), "0,1,1").status.code(),
        Some(3)
    );
}

fn eval(pred: &Path, truth: &Path, format: &str, out: &Path) -> Output {
    segloss(&[
        "eval",
        "--pred",
        s(pred),
        "--truth",
        s(truth),
        "--format",
        format,
        "--out",
        s(out),
    ])
}

#[test]
fn eval_identical_and_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let (pred, truth) = (tmp.path().join("pred"), tmp.path().join("truth"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&truth).unwrap();
    write_mask(&pred.join("a.mha"), &blob(0));
    write_mask(&truth.join("a.mha"), &blob(0));
    write_mask(&pred.join("b.mha"), &BinaryMask::zeros(geometry()));
    write_mask(&truth.join("b.mha"), &blob(2));

    let report = tmp.path().join("r.json");
    let r = eval(&pred, &truth, "json", &report);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let doc: ReportDocument = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let cases = &doc.groups[0].cases;
    assert_eq!(
        cases.iter().map(|c| c.case_id.as_str()).collect::<Vec<_>>(),
        ["a", "b"]
    );
    assert_eq!(
        (cases[0].dice, cases[0].msd_mm, cases[0].nsd),
        (1.0, 0.0, 1.0)
    );
    assert_eq!(
        (cases[1].dice, cases[1].msd_mm, cases[1].nsd),
        (0.0, f64::INFINITY, 0.0)
    );
    assert_eq!(doc.groups[0].aggregate.msd_mm, f64::INFINITY);
    assert_eq!(doc.groups[0].aggregate.msd_finite_count, 1);

    let csv = tmp.path().join("r.csv");
    assert!(eval(&pred, &truth, "csv", &csv).status.success());
    assert_eq!(
        fs::read_to_string(&csv).unwrap(),
        "label,dice,msd_mm,nsd\nprediction,0.5000,Inf,0.5000\n"
    );
}

#[test]
fn eval_error_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let (pred, truth) = (tmp.path().join("pred"), tmp.path().join("truth"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&truth).unwrap();
    write_mask(&pred.join("a.mha"), &blob(0));
    write_mask(&truth.join("a.mha"), &blob(0));
    write_mask(&pred.join("orphan.mha"), &blob(0));
    assert_eq!(
        eval(&pred, &truth, "json", &tmp.path().join("r.json"))
            .status
            .code(),
        Some(4)
    );

    fs::remove_file(pred.join("orphan.mha")).unwrap();
    let other = Geometry::new([12, 10, 6], [1.0, 0.8, 3.0], [1.0, -2.0, 0.5]).unwrap();
    write_mask(&truth.join("a.mha"), &BinaryMask::zeros(other));
    assert_eq!(
        eval(&pred, &truth, "json", &tmp.path().join("r.json"))
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn loss_command() {
    let tmp = tempfile::tempdir().unwrap();
    let (p, g) = (tmp.path().join("p.mha"), tmp.path().join("g.mha"));
    write_mask(&p, &blob(0));
    write_mask(&g, &blob(0));
    let spec = tmp.path().join("spec.json");

    fs::write(&spec, r#"{"kind": "dice"}"#).unwrap();
    let r = segloss(&[
        "loss",
        "--spec",
        s(&spec),
        "--pred",
        s(&p),
        "--truth",
        s(&g),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert!(v["value"].as_f64().unwrap().abs() < 1e-9);

    write_mask(&p, &blob(1));
    fs::write(&spec, r#"{"kind": "tversky-hausdorffdt"}"#).unwrap();
    let grad = tmp.path().join("grad.mha");
    let r = segloss(&[
        "loss",
        "--spec",
        s(&spec),
        "--pred",
        s(&p),
        "--truth",
        s(&g),
        "--grad",
        s(&grad),
    ]);
    assert!(r.status.success());
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert!(v["diagnostics"]["base"].is_number() && v["diagnostics"]["hausdorff_dt"].is_number());
    assert_eq!(
        read_mha(&grad).unwrap().data.element_type().tag(),
        "MET_DOUBLE"
    );

    fs::write(&spec, r#"{"kind": "dice", "epsilon": }"#).unwrap();
    let r = segloss(&[
        "loss",
        "--spec",
        s(&spec),
        "--pred",
        s(&p),
        "--truth",
        s(&g),
    ]);
    assert_eq!(r.status.code(), Some(5));
    fs::write(&spec, r#"{"kind": "dice", "gamma": 2}"#).unwrap();
    let r = segloss(&[
        "loss",
        "--spec",
        s(&spec),
        "--pred",
        s(&p),
        "--truth",
        s(&g),
    ]);
    assert_eq!(r.status.code(), Some(5));
}

#[test]
fn gradcheck_default_passes() {
    let r = segloss(&["gradcheck"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stdout));
    let table = String::from_utf8_lossy(&r.stdout);
    assert_eq!(table.matches("PASS").count(), 6);
}

#[test]
fn gradcheck_failure_is_nonzero() {
    // A huge finite-difference step makes the numeric gradient inaccurate.
    let r = segloss(&[
        "gradcheck",
        "--loss",
        "dicefocal",
        "--cases",
        "2",
        "--step",
        "0.015",
    ]);
    assert_eq!(
        r.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&r.stdout)
    );
}

#[test]
fn demo_optimize_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("demo");
    let r = segloss(&[
        "demo-optimize",
        "--loss",
        "dice",
        "--seed",
        "1",
        "--out",
        s(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = fs::read_to_string(out.join("trajectory.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert!((1..=300).contains(&rows), "{rows}");
    assert!(out.join("prediction.mha").exists() && out.join("target.mha").exists());
    let again = tmp.path().join("again");
    assert!(segloss(&[
        "demo-optimize",
        "--loss",
        "dice",
        "--seed",
        "1",
        "--out",
        s(&again)
    ])
    .status
    .success());
    assert_eq!(
        fs::read(out.join("trajectory.csv")).unwrap(),
        fs::read(again.join("trajectory.csv")).unwrap()
    );

    let r = segloss(&["demo-optimize", "--loss", "nope", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(5));
}

#[test]
fn edt_of_empty_mask_warns() {
    let tmp = tempfile::tempdir().unwrap();
    let (m, out) = (tmp.path().join("m.mha"), tmp.path().join("d.mha"));
    write_mask(&m, &BinaryMask::zeros(geometry()));
    let r = segloss(&["edt", "--mask", s(&m), "--out", s(&out)]);
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("warning"));
    assert!(read_mha(&out)
        .unwrap()
        .to_f64()
        .iter()
        .all(|d| d.is_infinite()));
}

#[test]
fn augment_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let g = geometry();
    write_scalar(
        &tmp.path().join("input_ch0.mha"),
        &ScalarVolume::from_fn(g, |x, y, _| (x + y) as f32).unwrap(),
    );
    write_scalar(
        &tmp.path().join("input_ch1.mha"),
        &ScalarVolume::from_fn(g, |_, _, z| z as f32).unwrap(),
    );
    write_mask(&tmp.path().join("label.mha"), &blob(0));
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let r = segloss(&[
            "augment",
            "--input",
            s(tmp.path()),
            "--seed",
            "7",
            "--out",
            s(&out),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in [
        "input_ch0.mha",
        "input_ch1.mha",
        "label.mha",
        "augment_log.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(read_mha(a.join("label.mha")).unwrap().to_mask().is_ok());
}
