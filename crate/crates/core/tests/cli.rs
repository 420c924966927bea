//! The `hdpmf` binary and its results files.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use hdpmf::cli;
use hdpmf::config::parse_config_str;
use hdpmf::eval::{AGGREGATE_HEADER, SEED_HEADER};

fn write_csv_dataset(dir: &Path) -> std::path::PathBuf {
    let d = common::synthetic(30, 25, 0.5, 3);
    let mut text = String::from("user,item,rating\n");
    for r in d.entries() {
        text.push_str(&format!("u{},i{},{}\n", r.user, r.item, r.value));
    }
    let path = dir.join("toy.csv");
    fs::write(&path, text).unwrap();
    path
}

fn config_text(dataset: &Path, output: &Path) -> String {
    format!(
        "dataset = {}\nformat = csv\nmethod = mf,hdpmf,pdpmf\nk = 3\nepochs = 15\n\
         n_test = 2\nseeds = 1,2,3\noutput = {}\n",
        dataset.display(),
        output.display()
    )
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hdpmf"))
}

#[test]
fn results_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_csv_dataset(dir.path());
    let out = dir.path().join("results.csv");
    let cfg = parse_config_str(&config_text(&data, &out)).unwrap();
    let (results, _) = cli::cmd_run(&cfg).unwrap();
    let text = fs::read_to_string(&out).unwrap();

    let echoed: String = text
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter(|l| l.contains(" = "))
        .map(|l| format!("{l}\n"))
        .collect();
    assert_eq!(parse_config_str(&echoed).unwrap(), cfg);

    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], SEED_HEADER);
    let agg_at = rows.iter().position(|l| *l == AGGREGATE_HEADER).unwrap();
    let seed_rows = &rows[1..agg_at];
    assert_eq!(seed_rows.len(), 9);
    for (row, (r, s)) in seed_rows
        .iter()
        .zip(results.iter().flat_map(|r| r.seeds.iter().map(move |s| (r, s))))
    {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f.len(), 10);
        assert_eq!(f[0], r.method.name());
        assert_eq!(f[7].parse::<u64>().unwrap(), s.seed);
        let m = s.metrics.as_ref().unwrap();
        assert_eq!(f[8].parse::<f64>().unwrap(), m.mse);
        assert_eq!(f[9].parse::<f64>().unwrap(), m.mae);
    }
    for (row, r) in rows[agg_at + 1..].iter().zip(&results) {
        let f: Vec<&str> = row.split(',').collect();
        let s = r.summary.unwrap();
        assert_eq!(f[8].parse::<f64>().unwrap(), s.mse_mean);
        assert_eq!(f[9].parse::<f64>().unwrap(), s.mse_std);
        assert_eq!(f[12], "complete");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_csv_dataset(dir.path());
    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let conf = dir.path().join(format!("{name}.conf"));
        fs::write(&conf, config_text(&data, &out)).unwrap();
        let status = bin().arg("run").arg(&conf).output().unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        outputs.push(fs::read_to_string(&out).unwrap());
    }
    let strip = |t: &str| -> String { t.lines().filter(|l| !l.starts_with("# output")).collect() };
    assert_eq!(strip(&outputs[0]), strip(&outputs[1]));
}

#[test]
fn missing_dataset_is_a_config_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    fs::write(&conf, "dataset = /nonexistent/ratings.dat\nepochs = 2\n").unwrap();
    let out = bin().arg("run").arg(&conf).env_remove("HDPMF_DATA_DIR").output().unwrap();
    assert_eq!(out.status.code(), Some(cli::EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/ratings.dat"));
}

#[test]
fn data_dir_env_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    write_csv_dataset(dir.path());
    let out = dir.path().join("r.csv");
    let conf = dir.path().join("c.conf");
    fs::write(
        &conf,
        format!(
            "dataset = toy.csv\nformat = csv\nmethod = mf\nk = 2\nepochs = 3\nseeds = 1\noutput = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let res = bin().arg("run").arg(&conf).env("HDPMF_DATA_DIR", dir.path()).output().unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.exists());
}

#[test]
fn bad_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    for (i, text) in [
        "no equals sign here\n",
        "colour = blue\n",
        "k = ten\n",
        "k = 5\nk = 6\n",
        "f_uc = 0.8\nf_um = 0.5\n",
        "method = svd\n",
    ]
    .iter()
    .enumerate()
    {
        let conf = dir.path().join(format!("{i}.conf"));
        fs::write(&conf, text).unwrap();
        let out = bin().arg("run").arg(&conf).output().unwrap();
        assert_eq!(out.status.code(), Some(cli::EXIT_CONFIG), "{text:?}");
    }
    let out = bin().args(["sweep", "--key", "k", "--values", "1,2"]).arg(dir.path().join("0.conf")).output().unwrap();
    assert_eq!(out.status.code(), Some(cli::EXIT_CONFIG));
}

#[test]
fn check_noise_reports_and_passes() {
    let out = bin()
        .args(["check-noise", "--raters", "4", "--samples", "200000"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("variance") && text.contains("KS"));
}

#[test]
fn sweep_writes_one_block_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_csv_dataset(dir.path());
    let out = dir.path().join("sweep.csv");
    let conf = dir.path().join("s.conf");
    fs::write(
        &conf,
        format!(
            "dataset = {}\nformat = csv\nmethod = hdpmf\nk = 2\nepochs = 5\nseeds = 1,2\noutput = {}\n",
            data.display(),
            out.display()
        ),
    )
    .unwrap();
    let res = bin()
        .args(["sweep", "--key", "eps_uc", "--values", "0.1,0.3"])
        .arg(&conf)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let agg: Vec<&str> = text.lines().skip_while(|l| *l != AGGREGATE_HEADER).skip(1).collect();
    assert_eq!(agg.len(), 2);
    assert!(agg[0].contains(",0.1,") && agg[1].contains(",0.3,"));
}

#[test]
fn trace_lists_every_update() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_csv_dataset(dir.path());
    let trace = dir.path().join("trace.tsv");
    let conf = dir.path().join("t.conf");
    fs::write(
        &conf,
        format!(
            "dataset = {}\nformat = csv\nmethod = mf,dpmf\nk = 2\nepochs = 3\nseeds = 4\n\
             output = {}\ntrace = {}\n",
            data.display(),
            dir.path().join("r.csv").display(),
            trace.display()
        ),
    )
    .unwrap();
    let res = bin().arg("run").arg(&conf).output().unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(hdpmf::protocol::TRACE_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    // 25 items and 30 users per epoch
    assert_eq!(rows.len(), 3 * (25 + 30));
    assert!(rows.iter().all(|r| r.len() == 5 && r[4].parse::<f64>().unwrap().is_finite()));
}
