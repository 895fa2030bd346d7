use std::path::Path;
use std::process::{Command, Output};

fn invop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invop"))
        .args(args)
        .current_dir(dir)
        .env("INVOP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["gen-data", "--out", out, "-n", "6", "-s", "grid=10"];
    args.extend_from_slice(extra);
    invop(dir, &args)
}

fn dir_bytes(p: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(p)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_data_is_reproducible_and_guarded() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let a = gen(d, "a", &[]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert!(stdout(&a).contains("n_samples=6"));
    assert_eq!(code(&gen(d, "b", &["--threads", "2"])), 0);
    assert_eq!(dir_bytes(&d.join("a")), dir_bytes(&d.join("b")));

    assert_eq!(code(&gen(d, "a", &[])), 2);
    assert_eq!(code(&gen(d, "a", &["--force"])), 0);

    let zero = invop(d, &["gen-data", "--out", "z", "-n", "0"]);
    assert_eq!(code(&zero), 2);
    assert!(!d.join("z").exists());

    assert_eq!(code(&gen(d, "c", &["-s", "grdi=10"])), 2);
    assert_eq!(code(&gen(d, "c", &["--problem", "darcy", "-s", "horizon=2"])), 2);

    let audit = invop(d, &["check", "--dataset", "a"]);
    assert_eq!(code(&audit), 0, "{}", stdout(&audit));
    assert!(stdout(&audit).contains("PASS dataset"));
}

#[test]
fn config_file_and_flags_resolve_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("run.cfg"), "# recipe\nproblem=helmholtz\ngrid=14\nmeasure_block=10\nn_samples=9\n").unwrap();
    let o = invop(d, &["gen-data", "-c", "run.cfg", "--out", "h", "-n", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("problem=helmholtz") && out.contains("n_samples=2") && out.contains("grid=14"));
    std::fs::write(d.join("bad.cfg"), "problme=rd\n").unwrap();
    assert_eq!(code(&invop(d, &["gen-data", "-c", "bad.cfg", "--out", "x"])), 2);
}

fn column(csv: &str, col: usize) -> Vec<f64> {
    csv.lines().skip(1).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

#[test]
fn train_eval_infer_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&gen(d, "data", &[])), 0);
    let t = invop(
        d,
        &[
            "train", "-d", "data", "-o", "run", "--steps", "20", "-s", "n_train=4", "-s", "p=4", "-s", "branch_width=6",
            "-s", "trunk_width=6", "-s", "eval_every=10",
        ],
    );
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));
    let metrics = std::fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    let meta = std::fs::read_to_string(d.join("run/metrics.csv.meta.json")).unwrap();
    assert!(meta.contains("config_hash") && meta.contains("tool_version") && meta.contains("seeds"));

    let e = invop(d, &["eval", "--checkpoint", "run/checkpoint", "-d", "data", "-o", "eval.csv"]);
    assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));
    let eval = std::fs::read_to_string(d.join("eval.csv")).unwrap();
    let (eu, es) = (column(&eval, 2), column(&eval, 3));

    // inference on the dataset grid reproduces eval's per-sample errors
    let i = invop(d, &["infer", "--checkpoint", "run/checkpoint", "-d", "data", "-o", "inf", "--sample", "5"]);
    assert_eq!(code(&i), 0, "{}", String::from_utf8_lossy(&i.stderr));
    let line = stdout(&i).lines().find(|l| l.starts_with("sample 5:")).unwrap().to_string();
    let nums: Vec<f64> = line.split_whitespace().filter_map(|w| w.parse().ok()).collect();
    assert!((nums[0] - eu[5]).abs() < 1e-6 && (nums[1] - es[5]).abs() < 1e-6, "{line} vs {} {}", eu[5], es[5]);
    assert_eq!(std::fs::read_to_string(d.join("inf/u.csv")).unwrap().lines().count(), 101);

    let big = invop(d, &["infer", "--checkpoint", "run/checkpoint", "-d", "data", "-o", "big", "--grid", "200x200"]);
    assert_eq!(code(&big), 0);
    let u = std::fs::read_to_string(d.join("big/u.csv")).unwrap();
    assert_eq!(u.lines().count(), 40001);
    assert_eq!(u.lines().next(), Some("x,t,value"));
    assert!(d.join("big/u.csv.meta.json").is_file());

    // resuming extends the run
    let r = invop(d, &["train", "-d", "data", "-o", "run2", "--resume", "run/checkpoint", "--steps", "30", "-s", "n_train=4"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(stdout(&r).contains("step 30:"));
    let locked = invop(d, &["train", "-d", "data", "-o", "run3", "--resume", "run/checkpoint", "-s", "lr=0.1"]);
    assert_eq!(code(&locked), 2);

    // a checkpoint does not fit another problem's dataset
    let h = invop(d, &["gen-data", "--out", "h", "--problem", "helmholtz", "-n", "2", "-s", "grid=14", "-s", "measure_block=10"]);
    assert_eq!(code(&h), 0);
    assert_eq!(code(&invop(d, &["eval", "--checkpoint", "run/checkpoint", "-d", "h"])), 2);
    assert_eq!(code(&invop(d, &["eval", "--checkpoint", "missing", "-d", "data"])), 2);
}

#[test]
fn sweep_writes_one_row_per_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&gen(d, "data", &[])), 0);
    let s = invop(
        d,
        &[
            "sweep", "-d", "data", "-o", "sw", "-s", "n_train=4", "-s", "steps=5", "-s", "p=4", "-s", "branch_width=6", "-s",
            "trunk_width=6", "-s", "sweep_values=1:100,100:1", "-s", "sweep_seeds=0,1",
        ],
    );
    assert_eq!(code(&s), 0, "{}", String::from_utf8_lossy(&s.stderr));
    let csv = std::fs::read_to_string(d.join("sw/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("setting,lambda1,lambda2"));
}

#[test]
fn bad_arguments_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&invop(tmp.path(), &["frobnicate"])), 2);
    assert_eq!(code(&invop(tmp.path(), &["check", "-s", "steps=1"])), 2);
    assert_eq!(code(&invop(tmp.path(), &["check", "--inject-fault", "nonsense"])), 2);
    assert_eq!(code(&invop(tmp.path(), &["--help"])), 0);
}
