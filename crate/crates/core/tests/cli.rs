use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sftrack_core::kitti_io::read_labels;

fn sftrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sftrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sftrack(args);
    assert!(
        out.status.success(),
        "sftrack {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn kv(report: &Path, section: &str, key: &str) -> String {
    let text = fs::read_to_string(report).unwrap();
    let body = text.split(&format!("[{section}]\n")).nth(1).unwrap();
    body.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap()
        .to_string()
}

#[test]
fn sim_track_eval_zero_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("demo");
    let res = tmp.path().join("res");
    let eval = tmp.path().join("eval");
    ok(&["sim", "--out", p(&seq)]);
    for f in [
        "calib.txt",
        "gt.txt",
        "detections.txt",
        "motions.txt",
        "manifest.json",
        "velodyne/000029.bin",
    ] {
        assert!(seq.join(f).is_file(), "{f}");
    }
    ok(&["track", "--sequence", p(&seq), "--out", p(&res)]);
    assert!(res.join("manifest.json").is_file());

    // one id per object
    let rows = read_labels(&res.join("demo.txt")).unwrap();
    let mut ids: Vec<i64> = rows.values().flatten().map(|r| r.track_id).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 5);

    let out = ok(&[
        "eval",
        "--gt",
        p(&res.join("gt")),
        "--results",
        p(&res),
        "--out",
        p(&eval),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("sAMOTA").count(), 2, "one section per threshold");
    let kvp = eval.join("report_kv.txt");
    for sec in ["iou_0.25", "iou_0.70"] {
        assert_eq!(kv(&kvp, sec, "sAMOTA"), "100.00");
        assert_eq!(kv(&kvp, sec, "MOTA"), "1.00");
        assert_eq!(kv(&kvp, sec, "IDS"), "0");
        assert_eq!(kv(&kvp, sec, "FRAG"), "0");
    }
}

#[test]
fn track_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("s");
    ok(&["sim", "--out", p(&seq), "--seed", "5"]);
    let run = |name: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "track",
            "--sequence",
            p(&seq),
            "--flow-source",
            "nn",
            "--seed",
            "9",
            "--out",
            p(&out),
        ]);
        fs::read(out.join("s.txt")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn cv_predictor_needs_no_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("s");
    ok(&["sim", "--out", p(&seq)]);
    let out = tmp.path().join("out");
    ok(&[
        "track",
        "--detections",
        p(&seq.join("detections.txt")),
        "--calib",
        p(&seq.join("calib.txt")),
        "--predictor",
        "cv",
        "--out",
        p(&out),
    ]);
    assert!(!read_labels(&out.join("detections.txt")).unwrap().is_empty());
}

#[test]
fn missing_flow_files_fail_with_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("s");
    ok(&["sim", "--out", p(&seq)]);
    let flow = tmp.path().join("flow");
    fs::create_dir(&flow).unwrap();
    let out = sftrack(&[
        "track",
        "--sequence",
        p(&seq),
        "--flow-source",
        "file",
        "--flow-dir",
        p(&flow),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("frame 1") && err.contains("000001.sfl"), "{err}");
}

#[test]
fn empty_results_score_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("s");
    ok(&["sim", "--out", p(&seq)]);
    let empty = tmp.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    let eval = tmp.path().join("eval");
    ok(&[
        "eval",
        "--gt",
        p(&seq.join("gt.txt")),
        "--results",
        p(&empty),
        "--iou-thres",
        "0.25",
        "--out",
        p(&eval),
    ]);
    let kvp = eval.join("report_kv.txt");
    assert!(kv(&kvp, "iou_0.25", "MOTA").parse::<f64>().unwrap() <= 0.0);
    assert_eq!(kv(&kvp, "iou_0.25", "sAMOTA"), "0.00");
}

#[test]
fn decimate_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = tmp.path().join("twenty.toml");
    fs::write(
        &scen,
        "frames = 20\n[[object]]\nid = 0\ncategory = \"Car\"\nsize = [4.0, 1.8, 1.5]\n\
         trajectory = { arc = { start = [10.0, 0.0, -0.98], yaw0 = 0.0, speed = 1.0, yaw_rate = 0.0 } }\n",
    )
    .unwrap();
    let seq = tmp.path().join("s");
    ok(&["sim", "--scenario", p(&scen), "--out", p(&seq)]);
    let half = tmp.path().join("half");
    ok(&["decimate", "--input", p(&seq), "--keep", "even", "--out", p(&half)]);
    assert_eq!(fs::read_dir(half.join("velodyne")).unwrap().count(), 10);
    let gt = read_labels(&half.join("gt.txt")).unwrap();
    assert_eq!(gt.keys().copied().collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
    assert_eq!(
        fs::read(half.join("velodyne/000003.bin")).unwrap(),
        fs::read(seq.join("velodyne/000006.bin")).unwrap()
    );

    // the decimated copy is itself trackable
    ok(&["track", "--sequence", p(&half), "--out", p(&tmp.path().join("r"))]);

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = ok(&["decimate", "--input", p(&empty), "--out", p(&tmp.path().join("e"))]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn scenario_input_tracks_in_memory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    ok(&["track", "--scenario", "demo", "--out", p(&out)]);
    let eval = tmp.path().join("e");
    ok(&[
        "eval",
        "--gt",
        p(&out.join("gt/demo.txt")),
        "--results",
        p(&out.join("demo.txt")),
        "--out",
        p(&eval),
    ]);
    assert_eq!(kv(&eval.join("report_kv.txt"), "iou_0.70", "MOTA"), "1.00");
}

#[test]
fn bad_inputs_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!sftrack(&["track", "--out", p(tmp.path())]).status.success());
    assert!(!sftrack(&[
        "eval",
        "--gt",
        "/nonexistent",
        "--results",
        "/nonexistent",
        "--out",
        p(tmp.path())
    ])
    .status
    .success());
    assert!(!sftrack(&[
        "decimate",
        "--input",
        p(tmp.path()),
        "--keep",
        "stride:0",
        "--out",
        p(tmp.path())
    ])
    .status
    .success());
}
