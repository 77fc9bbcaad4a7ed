use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn drim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run drim")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path) {
    let o = drim(&["synth", "--out", "data.tsv", "--users", "150", "--seed", "3"], dir);
    assert!(o.status.success(), "{o:?}");
}

#[test]
fn train_twice_prints_identical_losses() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let args = |ckpt: &'static str| {
        vec![
            "train", "--data", "data.tsv", "--checkpoint", ckpt, "--k", "2", "--dim", "8", "--epochs", "2", "--seed", "7",
        ]
    };
    let a = drim(&args("a.ckpt"), dir.path());
    let b = drim(&args("b.ckpt"), dir.path());
    assert!(a.status.success(), "{a:?}");
    let losses = |o: &Output| {
        stdout(o)
            .lines()
            .filter(|l| l.starts_with("epoch"))
            .map(|l| l.split(" secs ").next().unwrap().to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(losses(&a).len(), 2);
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(
        fs::read(dir.path().join("a.ckpt")).unwrap(),
        fs::read(dir.path().join("b.ckpt")).unwrap()
    );
}

#[test]
fn eval_reports_each_requested_size() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let t = drim(
        &["train", "--data", "data.tsv", "--checkpoint", "m.ckpt", "--k", "2", "--dim", "8", "--epochs", "1"],
        dir.path(),
    );
    assert!(t.status.success(), "{t:?}");
    let e = drim(
        &["eval", "--checkpoint", "m.ckpt", "--data", "data.tsv", "--n", "50,100", "--json", "e.jsonl"],
        dir.path(),
    );
    assert!(e.status.success(), "{e:?}");
    let text = stdout(&e);
    assert!(text.contains("hr@50: "), "{text}");
    assert!(text.contains("hr@100: "), "{text}");
    assert!(text.contains("most_popular_hr@50: "), "{text}");
    let json = fs::read_to_string(dir.path().join("e.jsonl")).unwrap();
    assert!(json.lines().next().unwrap().contains("\"record\":\"summary\""));

    let off = drim(
        &["eval", "--checkpoint", "m.ckpt", "--data", "data.tsv", "--n", "50", "--exclude-history", "off"],
        dir.path(),
    );
    assert!(stdout(&off).contains("exclude_history: off"));
}

#[test]
fn retrieve_and_export_write_tsv() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    drim(
        &["train", "--data", "data.tsv", "--checkpoint", "m.ckpt", "--k", "2", "--dim", "8", "--epochs", "1"],
        dir.path(),
    );
    fs::write(dir.path().join("users.txt"), "u1\nu4\n").unwrap();
    let r = drim(
        &["retrieve", "--checkpoint", "m.ckpt", "--data", "data.tsv", "--users", "users.txt", "--n", "5", "--out", "r.tsv"],
        dir.path(),
    );
    assert!(r.status.success(), "{r:?}");
    let rows = fs::read_to_string(dir.path().join("r.tsv")).unwrap();
    let lines: Vec<&str> = rows.lines().collect();
    assert_eq!(lines.len(), 10);
    assert!(lines[0].starts_with("u1\t"));
    assert_eq!(lines[0].split('\t').nth(2), Some("1"));

    let x = drim(
        &["export", "--checkpoint", "m.ckpt", "--data", "data.tsv", "--max-users", "1", "--out", "x.tsv"],
        dir.path(),
    );
    assert!(x.status.success(), "{x:?}");
    let exported = fs::read_to_string(dir.path().join("x.tsv")).unwrap();
    assert_eq!(exported.lines().count(), 2);
    assert_eq!(exported.lines().next().unwrap().split('\t').nth(2).unwrap().split(',').count(), 8);
}

#[test]
fn check_grad_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = drim(&["check-grad", "--seed", "7"], dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("max_rel_error: "));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(drim(&["train", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(drim(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(
        drim(&["train", "--data", "missing.tsv", "--checkpoint", "m.ckpt"], dir.path()).status.code(),
        Some(2)
    );
    synth(dir.path());
    assert_eq!(
        drim(&["train", "--data", "data.tsv", "--checkpoint", "m.ckpt", "--separator", "cosine"], dir.path())
            .status
            .code(),
        Some(1)
    );
    let o = drim(&["check-grad", "--tol", "1e-12"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    fs::write(dir.path().join("c.cfg"), "k=3\ndim=6\nepochs=1\nlambda=0.5\n").unwrap();
    let o = drim(
        &["train", "--data", "data.tsv", "--config", "c.cfg", "--k", "2", "--checkpoint", "m.ckpt"],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let e = drim(&["eval", "--checkpoint", "m.ckpt", "--data", "data.tsv", "--n", "5"], dir.path());
    // two interests from the flag, not three from the file
    let util = stdout(&e)
        .lines()
        .find(|l| l.starts_with("interest_utilization"))
        .unwrap()
        .to_string();
    assert_eq!(util.split(',').count(), 2, "{util}");
}

#[test]
fn sweep_prints_one_row_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = drim(
        &[
            "sweep", "--data", "data.tsv", "--lambdas", "0,0.1", "--n", "20", "--k", "2", "--dim", "8", "--epochs", "1",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("lambda\t"));
}

#[test]
fn prepare_filters_rare_items() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("raw.tsv"), "u1\ta\t1\nu1\tb\t2\nu2\ta\t3\nu2\ta\t4\n").unwrap();
    let o = drim(&["prepare", "--data", "raw.tsv", "--out", "f.tsv", "--min-item", "2"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let kept = fs::read_to_string(dir.path().join("f.tsv")).unwrap();
    assert_eq!(kept.lines().filter(|l| l.contains("\ta\t")).count(), 3);
    assert!(!kept.contains("\tb\t"));
}
