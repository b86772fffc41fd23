use std::path::Path;
use std::process::{Command, Output};

fn kinetic_flow(args: &[&str], workers: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinetic-flow")).args(args).env("KF_WORKERS", workers).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn kernel_config(dir: &Path, out: &str) -> String {
    let body = format!("# smallest valid run\nexperiment = kernel\nseed = 1\noutput = {}\n", dir.join(out).display());
    write_config(dir, &format!("{out}.cfg"), &body)
}

#[test]
fn kernel_run_writes_covariance_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = kernel_config(dir.path(), "k");
    let out = kinetic_flow(&["run", &cfg], "1");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("k/covariance.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("block,row,col,value"));
    let values: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    let expected = [1.0 / 3.0, 0.5, 0.5, 1.0];
    for (v, e) in values.iter().zip(expected) {
        assert!((v - e).abs() < 1e-15, "{v} vs {e}");
    }
    let manifest = std::fs::read_to_string(dir.path().join("k/manifest.txt")).unwrap();
    assert!(manifest.contains("# content-hash "));
    assert!(manifest.contains("experiment = kernel"));
}

#[test]
fn krylov_rejects_low_integrability() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("experiment = krylov\nseed = 1\np = 2\nN = 10\noutput = {}\n", dir.path().join("o").display());
    let cfg = write_config(dir.path(), "krylov.cfg", &body);
    let out = kinetic_flow(&["run", &cfg], "1");
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn unknown_key_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "experiment = kernel\nseed = 1\n\nwidth = 3\n");
    let out = kinetic_flow(&["run", &cfg], "1");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4") && err.contains("width"), "{err}");
}

#[test]
fn missing_file_and_bad_suite_are_validation_errors() {
    assert_eq!(kinetic_flow(&["run", "/nonexistent/config.cfg"], "1").status.code(), Some(2));
    assert_eq!(kinetic_flow(&["acceptance", "medium"], "1").status.code(), Some(2));
}

#[test]
fn runs_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let body = |out: &str| {
        format!(
            "experiment = fokker-planck\nseed = 42\nN = 400\ndt = 1/32\nmollify = 4\noutput = {}\n",
            dir.path().join(out).display()
        )
    };
    let a = write_config(dir.path(), "a.cfg", &body("a"));
    let b = write_config(dir.path(), "b.cfg", &body("b"));
    assert!(kinetic_flow(&["run", &a], "1").status.success());
    assert!(kinetic_flow(&["run", &b], "4").status.success());
    for name in ["atoms.csv", "residual.csv"] {
        let x = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let body = format!("experiment = kernel\nseed = 5\nN = 2000\nT = 0.5\noutput = {}\n", first.display());
    let cfg = write_config(dir.path(), "k.cfg", &body);
    assert!(kinetic_flow(&["run", &cfg], "2").status.success());
    let second = dir.path().join("second");
    let manifest = first.join("manifest.txt");
    let out = kinetic_flow(&["run", manifest.to_str().unwrap(), &format!("output={}", second.display())], "1");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["covariance.csv", "sample_covariance.csv"] {
        assert_eq!(std::fs::read(first.join(name)).unwrap(), std::fs::read(second.join(name)).unwrap());
    }
}

#[test]
fn every_experiment_runs_at_small_size() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("flow", "N = 2\ndt = 1/16\nmollify = 4\n", "homeomorphism.csv", "replica,min_ratio,failures"),
        ("converge", "N = 20\ndt = 1/64\nn_ladder = 3\n", "convergence.csv", "n,e_n,B_n,ratio"),
        ("zvonkin", "N = 50\nlambda = 4\nmollify = 4\n", "contraction.csv", "iter,increment_sup"),
        ("krylov", "p = 7\nN = 50\ndt = 1/64\n", "krylov.csv", "f_id,window,estimate,se,norm_lp,ratio"),
        ("fokker-planck", "N = 100\ndt = 1/16\n", "residual.csv", "phi_id,t,residual,se"),
        ("spaces", "N = 2\n", "spaces.csv", "sample,lipschitz_c,maximal_ratio"),
    ];
    for (experiment, extra, file, header) in cases {
        let out_dir = dir.path().join(experiment);
        let body = format!("experiment = {experiment}\nseed = 3\n{extra}output = {}\n", out_dir.display());
        let cfg = write_config(dir.path(), &format!("{experiment}.cfg"), &body);
        let out = kinetic_flow(&["run", &cfg], "1");
        assert!(out.status.success(), "{experiment}: {}", String::from_utf8_lossy(&out.stderr));
        let csv = std::fs::read_to_string(out_dir.join(file)).unwrap();
        assert_eq!(csv.lines().next(), Some(header), "{experiment}");
    }
}
