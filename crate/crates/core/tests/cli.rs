use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fbsde-llr");

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).arg("-o").arg(dir).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = "problem = allen_cahn_dw\nd = 4\nN = 10\nM = 20\nseed = 9\n";

/// CSV text with the `runtime_s` column blanked.
fn without_runtime(csv_text: &str) -> String {
    let mut lines = csv_text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "runtime_s").unwrap();
    lines
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f[col] = "";
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn run_writes_csv_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = cli(&["run", "-c", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert!(text.starts_with("problem,d,T,N,M,seed,Y0"));
    assert!(!text.contains('\r'));
}

#[test]
fn same_seed_gives_identical_csv() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let cfg = write_config(dir.path(), SMALL);
        assert_eq!(cli(&["run", "-c", &cfg], dir.path()).status.code(), Some(0));
    }
    let read = |d: &tempfile::TempDir| fs::read_to_string(d.path().join("run.csv")).unwrap();
    assert_eq!(without_runtime(&read(&a)), without_runtime(&read(&b)));
}

#[test]
fn overrides_and_seed_flag_apply() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["run", "--set", "problem=linear_heat", "--set", "d=2", "--set", "N=4", "--set", "M=30"])
        .args(["--seed", "77", "-o"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("run.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("linear_heat,2,"));
    assert!(row.contains(",4,30,77,"));
}

#[test]
fn unknown_figure_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["reproduce", "fig99"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}bandwith = 3\n"));
    let out = cli(&["run", "-c", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bandwith"), "{err}");
    assert!(err.contains("line 6"), "{err}");
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", "-c", "/nonexistent/x.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_one() {
    // explicit blow-up: huge horizon with a cubic driver and a fixed tiny
    // bandwidth leaves the forward ensemble fine but the backward step
    // cannot be resolved by Newton
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "problem = allen_cahn_dw\nd = 2\nN = 2\nM = 4\nT = 1e6\nnewton_maxiter = 1\nnewton_tol = 1e-300\n",
    );
    let out = cli(&["run", "-c", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_and_gradtest_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "problem = linear_heat\nd = 3\nsweep_N = 4, 8\nsweep_M = 40\nseeds_per_cell = 2\n",
    );
    assert_eq!(cli(&["sweep", "-c", &cfg], dir.path()).status.code(), Some(0));
    let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 2);
    assert!(dir.path().join("sweep_plot.csv").exists());

    let cfg = write_config(dir.path(), "problem = burgers\nd = 3\nN = 8\nM = 200\n");
    let out = cli(&["gradtest", "-c", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("gradtest.csv").exists());
}

#[test]
fn help_exits_zero() {
    let out = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["run", "sweep", "gradtest", "scaling", "reproduce"] {
        assert!(text.contains(sub));
    }
}
