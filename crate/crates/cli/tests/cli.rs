use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn rskc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rskc"))
        .args(args)
        .env_remove("RSKC_THREADS")
        .output()
        .expect("spawn rskc")
}

fn ok(args: &[&str]) -> Output {
    let out = rskc(args);
    assert!(
        out.status.success(),
        "rskc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// 16^3 solid cube with smooth RGB colors, 4096 points.
fn write_cube(path: &Path) {
    let mut text = String::from(
        "ply\nformat ascii 1.0\nelement vertex 4096\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    for x in 0..16 {
        for y in 0..16 {
            for z in 0..16 {
                text += &format!(
                    "{x} {y} {z} {} {} {}\n",
                    40 + x * 12,
                    60 + y * 8,
                    200 - z * 9
                );
            }
        }
    }
    fs::write(path, text).unwrap();
}

#[test]
fn encode_decode_metrics_smoke() {
    let dir = TempDir::new().unwrap();
    let (input, stream, recon) = (
        p(&dir, "cube.ply"),
        p(&dir, "cube.rskc"),
        p(&dir, "recon.ply"),
    );
    write_cube(&input);
    let enc = json(&ok(&[
        "encode",
        "-i",
        s(&input),
        "-o",
        s(&stream),
        "--depth",
        "4",
        "--qp",
        "30",
        "--verbose",
    ]));
    assert_eq!(enc["frames"][0]["points"], 4096);
    assert!(enc["frames"][0]["channels"][0]["table"].is_object());
    ok(&["decode", "-i", s(&stream), "-o", s(&recon)]);
    let m = json(&ok(&[
        "metrics",
        "--orig",
        s(&input),
        "--recon",
        s(&recon),
        "--depth",
        "4",
        "--stream",
        s(&stream),
    ]));
    for key in ["psnr_y", "psnr_cb", "psnr_cr", "psnr_weighted"] {
        assert!(
            m[key].as_f64().is_some_and(f64::is_finite),
            "{key}: {}",
            m[key]
        );
    }
    assert_eq!(m["attribute_bits"], enc["attribute_bits"]);
}

#[test]
fn skip_on_is_smaller_at_high_qp() {
    let dir = TempDir::new().unwrap();
    let input = p(&dir, "shell.ply");
    ok(&["generate", "--depth", "7", "--seed", "5", "-o", s(&input)]);
    let bits = |skip: &str| {
        let out = p(&dir, &format!("{skip}.rskc"));
        let v = json(&ok(&[
            "encode",
            "-i",
            s(&input),
            "-o",
            s(&out),
            "--depth",
            "7",
            "--qp",
            "46",
            "--skip",
            skip,
        ]));
        v["attribute_bits"].as_u64().unwrap()
    };
    assert!(bits("on") < bits("off"));
}

#[test]
fn usage_and_pipeline_errors() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "x.rskc");
    assert_eq!(
        rskc(&["encode", "-i", "a.ply", "-o", s(&out), "--qp", "99"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        rskc(&["encode", "-i", "a.ply", "-o", s(&out), "--c", "0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(rskc(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        rskc(&["encode", "-i", "/nonexistent.ply", "-o", s(&out)])
            .status
            .code(),
        Some(1)
    );
    let garbage = p(&dir, "garbage.rskc");
    fs::write(&garbage, b"not a container at all").unwrap();
    let r = rskc(&["decode", "-i", s(&garbage), "-o", s(&p(&dir, "g.ply"))]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("magic"));
    let threads = Command::new(env!("CARGO_BIN_EXE_rskc"))
        .args(["stats", "--synthetic", "1", "--depth", "4"])
        .env("RSKC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(1));
}

#[test]
fn sweep_rows_and_header() {
    let one = ok(&[
        "sweep",
        "--synthetic",
        "1",
        "--depth",
        "5",
        "--c-values",
        "0.26",
    ]);
    let text = String::from_utf8(one.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "c,bdbr_luma,bdbr_cb,bdbr_cr,bdbr_total");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0.26,"));

    let dir = TempDir::new().unwrap();
    let csv = p(&dir, "sweep.csv");
    ok(&[
        "sweep",
        "--synthetic",
        "2",
        "--depth",
        "5",
        "--c-values",
        "0.05,0.26,0.5",
        "-o",
        s(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    for row in text.lines().skip(1) {
        let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), 5);
        assert!((cols[4] - (7.0 * cols[1] + cols[2] + cols[3])).abs() < 1e-4);
    }
}

#[test]
fn stats_trends() {
    let out = ok(&[
        "stats",
        "--synthetic",
        "1",
        "--depth",
        "7",
        "--qps",
        "16,46",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "qp,layer,ac_count,zero_fraction,zero_fraction_y,zero_fraction_cb,zero_fraction_cr"
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    let of = |qp: f64| -> Vec<&Vec<f64>> { rows.iter().filter(|r| r[0] == qp).collect() };
    for qp in [16.0, 46.0] {
        let layers = of(qp);
        assert_eq!(layers.len(), 7);
        assert!(layers[0][2] <= 7.0, "root block has at most 7 ACs");
        for w in layers.windows(2).skip(2) {
            assert!(w[1][2] > w[0][2], "ac_count grows with depth");
        }
    }
    let last = |qp: f64| of(qp).last().unwrap()[3];
    assert!(last(46.0) >= last(16.0));
}

#[test]
fn outputs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let input = p(&dir, "in.ply");
    ok(&[
        "generate",
        "--depth",
        "6",
        "--seed",
        "11",
        "--grain",
        "3",
        "-o",
        s(&input),
    ]);
    let run = |name: &str| {
        let out = p(&dir, name);
        let o = ok(&[
            "encode",
            "-i",
            s(&input),
            "-o",
            s(&out),
            "--depth",
            "6",
            "--qp",
            "28",
            "--no-timings",
        ]);
        (fs::read(out).unwrap(), o.stdout)
    };
    assert_eq!(run("a.rskc"), run("b.rskc"));
    let sweep = || {
        ok(&[
            "sweep",
            "--synthetic",
            "1",
            "--depth",
            "5",
            "--seed",
            "4",
            "--c-values",
            "0.1,0.3",
        ])
        .stdout
    };
    assert_eq!(sweep(), sweep());
}

#[test]
fn sequences_roundtrip_through_files() {
    let dir = TempDir::new().unwrap();
    let pattern = p(&dir, "f_{}.ply");
    ok(&[
        "generate",
        "--depth",
        "6",
        "--frames",
        "3",
        "-o",
        s(&pattern),
    ]);
    let frames: Vec<PathBuf> = (0..3).map(|i| p(&dir, &format!("f_{i:04}.ply"))).collect();
    let stream = p(&dir, "seq.rskc");
    let mut args = vec![
        "encode",
        "-o",
        s(&stream),
        "--depth",
        "6",
        "--mode",
        "inter",
        "--qp",
        "28",
    ];
    for f in &frames {
        args.extend(["-i", s(f)]);
    }
    let enc = json(&ok(&args));
    let sizes: Vec<u64> = (0..3)
        .map(|i| enc["frames"][i]["attribute_bits"].as_u64().unwrap())
        .collect();
    assert!(sizes[1] < sizes[0] && sizes[2] < sizes[0], "{sizes:?}");
    let out = p(&dir, "dec.ply");
    let dec = json(&ok(&["decode", "-i", s(&stream), "-o", s(&out)]));
    assert_eq!(dec["frames"].as_array().unwrap().len(), 3);
    for (i, frame) in frames.iter().enumerate() {
        let m = json(&ok(&[
            "metrics",
            "--orig",
            s(frame),
            "--recon",
            s(&p(&dir, &format!("dec_{i:04}.ply"))),
            "--depth",
            "6",
        ]));
        assert!(m["psnr_y"].as_f64().unwrap() > 30.0);
    }
}

#[test]
fn bdrate_from_csv() {
    let dir = TempDir::new().unwrap();
    let a = p(&dir, "a.csv");
    let b = p(&dir, "b.csv");
    fs::write(
        &a,
        "bpop,psnr_y,psnr_cb,psnr_cr\n0.1,30,35,36\n0.2,33,38,39\n0.4,36,41,42\n0.8,39,44,45\n",
    )
    .unwrap();
    fs::write(
        &b,
        "bpop,psnr_y,psnr_cb,psnr_cr\n0.2,30,35,36\n0.4,33,38,39\n0.8,36,41,42\n1.6,39,44,45\n",
    )
    .unwrap();
    let same = json(&ok(&["bdrate", "--anchor", s(&a), "--test", s(&a)]));
    assert_eq!(same["bdbr_total"].as_f64().unwrap(), 0.0);
    let doubled = json(&ok(&["bdrate", "--anchor", s(&a), "--test", s(&b)]));
    assert!((doubled["bdbr_luma"].as_f64().unwrap() - 100.0).abs() < 0.1);
    assert!((doubled["bdbr_total"].as_f64().unwrap() - 900.0).abs() < 1.0);
    fs::write(&b, "bpop,psnr_y,psnr_cb,psnr_cr\n0.2,30,35,36\n").unwrap();
    assert_eq!(
        rskc(&["bdrate", "--anchor", s(&a), "--test", s(&b)])
            .status
            .code(),
        Some(1)
    );
}
