use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedgraph-cp")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth_into(dir: &Path) {
    let o = cli(&["synth", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_writes_the_three_files_and_refuses_to_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    for f in ["features.tsv", "edges.txt", "labels.tsv"] {
        assert!(data.join(f).metadata().unwrap().len() > 0, "{f}");
    }
    let again = cli(&["synth", "--out", data.to_str().unwrap()]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("not empty"));
}

#[test]
fn partition_writes_one_line_per_node() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let out = tmp.path().join("parts.tsv");
    let o = cli(&["partition", "--data-dir", data.to_str().unwrap(), "--clients", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("K=4: "), "{}", stdout(&o));
    let text = std::fs::read_to_string(out).unwrap();
    let labels = std::fs::read_to_string(data.join("labels.tsv")).unwrap();
    assert_eq!(text.lines().count(), labels.lines().filter(|l| !l.starts_with('#')).count());
    assert!(text.lines().all(|l| l.split('\t').nth(1).is_some_and(|c| c.parse::<usize>().unwrap() < 4)));
}

#[test]
fn tiny_run_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let out = tmp.path().join("out");
    let o = cli(&[
        "run", "--data-dir", data.to_str().unwrap(), "--out", out.to_str().unwrap(), "--pipeline", "fed",
        "--clients", "3", "--seed", "0", "--rounds", "2", "--alpha", "0.1", "--score", "aps", "--quantile", "exact,tdigest",
        "--no-wall-time",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["summary.csv", "delta_e.csv", "set_size.csv", "coverage.csv", "accuracy.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "dataset,seed,K,pipeline,model,score,alpha,qmethod,coverage,inefficiency,accuracy,qhat,delta_e_pct,scalars_comm,wall_ms"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ends_with(",0")));
}

#[test]
fn bad_arguments_are_rejected() {
    assert!(!cli(&["run", "--pipeline", "central"]).status.success());
    assert!(!cli(&["run", "--quantile", "median"]).status.success());
    let o = cli(&["run", "--alpha", "1.5", "--out", "/nonexistent/never"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
}

#[test]
fn quick_verify_passes() {
    let o = cli(&["verify"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("checks passed"));
}
