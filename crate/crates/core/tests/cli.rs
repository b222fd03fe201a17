use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qttdos::dos::read_dos_csv;
use qttdos::qtt::relative_error;
use qttdos::structured_matrix::read_bdlr;
use qttdos::QttVector;
use tempfile::TempDir;

fn qttdos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qttdos")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = qttdos(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = qttdos(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_laplacian_and_presets() {
    let dir = TempDir::new().unwrap();
    let lap = path(&dir, "lap.bdlr");
    ok(&["gen", "--kind", "laplacian1d", "--n", "2047", "--out", s(&lap)]);
    assert_eq!(read_bdlr(&lap).unwrap().n(), 2047);

    let h2o = path(&dir, "h2o.bdlr");
    ok(&["gen", "--kind", "synthetic", "--preset", "h2o-like", "--out", s(&h2o)]);
    let m = read_bdlr(&h2o).unwrap();
    assert_eq!((m.n(), m.rank()), (180, 36));
    assert!(Path::new(&format!("{}.config.json", s(&h2o))).exists());
}

#[test]
fn gen_rejects_bad_parameters() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "bad.bdlr");
    let err = fails(&["gen", "--kind", "synthetic", "--n", "16", "--nb", "20", "--rank", "2", "--out", s(&out)]);
    assert!(err.contains("n_B"), "{err}");
    assert!(!out.exists());
    fails(&["gen", "--kind", "synthetic", "--preset", "benzene-like", "--out", s(&out)]);
}

#[test]
fn dos_rows_and_eta_validation() {
    let dir = TempDir::new().unwrap();
    let h2o = path(&dir, "h2o.bdlr");
    ok(&["gen", "--kind", "synthetic", "--preset", "h2o-like", "--out", s(&h2o)]);
    let csv = path(&dir, "h2o.csv");
    ok(&["dos", "--matrix", s(&h2o), "--method", "smw", "--eta", "0.4", "--grid-points", "16384", "--out", s(&csv)]);
    let (t, phi) = read_dos_csv(&csv).unwrap();
    assert_eq!((t.len(), phi.len()), (16384, 16384));

    let err = fails(&["dos", "--matrix", s(&h2o), "--eta", "0", "--out", s(&path(&dir, "x.csv"))]);
    assert!(err.contains("eta"), "{err}");
}

#[test]
fn smw_and_dense_curves_agree() {
    let dir = TempDir::new().unwrap();
    let m = path(&dir, "m.bdlr");
    ok(&["--seed", "3", "gen", "--kind", "synthetic", "--n", "256", "--nb", "6", "--rank", "8", "--out", s(&m)]);
    let run = |method: &str| {
        let out = path(&dir, &format!("{method}.csv"));
        ok(&["dos", "--matrix", s(&m), "--method", method, "--eta", "0.4", "--grid-points", "2048", "--out", s(&out)]);
        read_dos_csv(&out).unwrap().1
    };
    let smw = run("smw");
    let dense = run("dense");
    let real = run("smw-real");
    let max_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(max_diff(&smw, &dense) <= 1e-9, "{}", max_diff(&smw, &dense));
    assert!(max_diff(&real, &dense) <= 1e-9, "{}", max_diff(&real, &dense));
}

#[test]
fn qtt_compress_reports_and_verifies() {
    let dir = TempDir::new().unwrap();
    let lap = path(&dir, "lap.bdlr");
    ok(&["gen", "--kind", "laplacian1d", "--n", "2047", "--out", s(&lap)]);
    let csv = path(&dir, "lap.csv");
    ok(&["dos", "--matrix", s(&lap), "--eta", "0.1", "--interval", "0:4.4", "--out", s(&csv)]);
    let json = path(&dir, "lap.qtt.json");
    let text = ok(&["qtt-compress", "--in", s(&csv), "--eps", "0.04", "--out", s(&json)]);
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(report["average_rank"].as_f64().unwrap() <= 8.0, "{report}");

    let tt = QttVector::<f64>::read_json(&json).unwrap();
    let (_, phi) = read_dos_csv(&csv).unwrap();
    let err = relative_error(&tt.unfold(), &phi);
    assert!(err <= 0.04);
    assert!((err - report["unfold_error"].as_f64().unwrap()).abs() <= 1e-12);
}

#[test]
fn qtt_compress_constant_and_bad_length() {
    let dir = TempDir::new().unwrap();
    let write = |name: &str, rows: usize| {
        let p = path(&dir, name);
        let mut text = String::from("t,phi\n");
        for i in 0..rows {
            text.push_str(&format!("{i},1.5\n"));
        }
        std::fs::write(&p, text).unwrap();
        p
    };
    let flat = write("flat.csv", 1024);
    let json = path(&dir, "flat.json");
    ok(&["qtt-compress", "--in", s(&flat), "--eps", "1e-10", "--out", s(&json)]);
    assert!(QttVector::<f64>::read_json(&json).unwrap().ranks().iter().all(|&r| r == 1));

    let odd = write("odd.csv", 1000);
    let err = fails(&["qtt-compress", "--in", s(&odd), "--eps", "0.01", "--out", s(&path(&dir, "odd.json"))]);
    assert!(err.contains("power of 2"), "{err}");
}

#[test]
fn qtt_cross_writes_report_and_sweep() {
    let dir = TempDir::new().unwrap();
    let h2o = path(&dir, "h2o.bdlr");
    ok(&["gen", "--kind", "synthetic", "--preset", "h2o-like", "--out", s(&h2o)]);
    let json = path(&dir, "cross.json");
    ok(&[
        "qtt-cross", "--matrix", s(&h2o), "--eta", "0.2", "--eps", "0.05", "--grid-points", "1024", "--sweep-dprime", "8:10",
        "--out", s(&json),
    ]);
    let tt = QttVector::<f64>::read_json(&json).unwrap();
    assert_eq!(tt.len(), 1024);
    let report: serde_json::Value = serde_json::from_reader(std::fs::File::open(format!("{}.report.json", s(&json))).unwrap()).unwrap();
    for key in ["calls", "ranks", "average_rank", "validation_error", "sweeps"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    let mut r = csv::Reader::from_path(format!("{}.sweep.csv", s(&json))).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][0], "8");

    fails(&["qtt-cross", "--matrix", s(&h2o), "--eta", "0.2", "--eps", "0.05", "--grid-points", "1000", "--out", s(&json)]);
}

#[test]
fn bench_single_size_and_determinism() {
    let dir = TempDir::new().unwrap();
    let columns = |name: &str| {
        let out = path(&dir, name);
        ok(&["bench-scaling", "--sizes", "128", "--ranks", "8", "--grid-points", "256", "--repeats", "1", "--out", s(&out)]);
        let mut r = csv::Reader::from_path(&out).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(&rows[0][5], "");
        (rows[0][0].to_string(), rows[0][1].to_string(), rows[0][2].to_string())
    };
    assert_eq!(columns("a.csv"), columns("b.csv"));
}

#[test]
fn replay_and_thread_count_reproduce_outputs() {
    let dir = TempDir::new().unwrap();
    let m = path(&dir, "m.bdlr");
    ok(&["--seed", "11", "gen", "--kind", "synthetic", "--n", "200", "--nb", "6", "--rank", "5", "--out", s(&m)]);
    let a = path(&dir, "a.csv");
    ok(&["--threads", "1", "dos", "--matrix", s(&m), "--method", "smw-real", "--eta", "0.3", "--grid-points", "512", "--out", s(&a)]);
    let first = std::fs::read(&a).unwrap();

    let b = path(&dir, "b.csv");
    ok(&["--threads", "4", "dos", "--matrix", s(&m), "--method", "smw-real", "--eta", "0.3", "--grid-points", "512", "--out", s(&b)]);
    assert_eq!(first, std::fs::read(&b).unwrap());

    std::fs::remove_file(&a).unwrap();
    ok(&["replay", "--config", &format!("{}.config.json", s(&a))]);
    assert_eq!(first, std::fs::read(&a).unwrap());

    let m_bytes = std::fs::read(&m).unwrap();
    std::fs::remove_file(&m).unwrap();
    ok(&["replay", "--config", &format!("{}.config.json", s(&m))]);
    assert_eq!(m_bytes, std::fs::read(&m).unwrap());
}
