use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ddce_core::sim::{self, FlopParams};

fn ddce(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddce"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        format!(
            "# small smoke configuration\n\
             code = alamouti\n\
             predictor = dd-cc, dd-ar1\n\
             scenarios = cars, trains\n\
             snr_db = 10, 20\n\
             nb = 5\n\
             trials = 3\n\
             seed = 9\n{extra}"
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn flops_prints_one_integer() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddce(&["flops", "--predictor", "dl-dd", "--nt", "2", "--nr", "2", "--nx", "2", "--np", "10"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let value: i128 = text.trim().parse().expect("a single integer");
    let p = FlopParams {
        n_t: 2,
        n_r: 2,
        n_x: 2,
        n_p: 10,
    };
    assert_eq!(value, sim::flops("dl-dd", p).unwrap());
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn flops_rejects_unknown_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddce(&["flops", "--predictor", "magic"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_model_path_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "predictor = dl-dd\n");
    let o = ddce(&["--config", &cfg, "simulate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model_path"), "{}", stderr(&o));
}

#[test]
fn unknown_key_and_bad_override_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "colour = blue\n");
    assert_eq!(ddce(&["--config", &cfg, "simulate"], dir.path()).status.code(), Some(2));
    let cfg = small_config(dir.path(), "");
    assert_eq!(ddce(&["--config", &cfg, "--set", "trials", "simulate"], dir.path()).status.code(), Some(2));
    assert_eq!(ddce(&["--config", &cfg, "--set", "trials=0", "simulate"], dir.path()).status.code(), Some(2));
}

#[test]
fn unreadable_model_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "predictor = dl-dd\nmodel_path = nowhere.model\n");
    let o = ddce(&["--config", &cfg, "simulate"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn sweep_then_report_keeps_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "out_path = ber.csv\n");
    let o = ddce(&["--config", &cfg, "sweep"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("ber.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), sim::BER_HEADER);
    // 2 scenarios x 2 SNRs x 2 predictors
    assert_eq!(csv.lines().count(), 1 + 8);

    let manifest = fs::read_to_string(dir.path().join("ber.csv.manifest")).unwrap();
    assert!(manifest.contains("base_seed = 9"));
    assert!(manifest.contains("# git = "));
    assert!(manifest.contains("trials = 3"));

    let o = ddce(&["--config", &cfg, "--set", "out_path=report.csv", "report", "ber.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(rep.lines().count(), 1 + 8);
    assert!(rep.lines().next().unwrap().ends_with(",ber_std,ci95_low,ci95_high"));
}

#[test]
fn simulate_writes_to_stdout_without_out_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let o = ddce(&["--config", &cfg, "--set", "snr_db=15", "--set", "scenarios=trains", "simulate"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 1 + 2);
}

#[test]
fn train_then_simulate_with_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        "model_path = tiny.model\ntrain_samples = 40\nepochs = 2\nrho_min = 0.01\nrho_max = 0.05\n",
    );
    let o = ddce(&["--config", &cfg, "--set", "out_path=loss.csv", "train"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("tiny.model").exists());
    assert!(dir.path().join("tiny.model.manifest").exists());
    let loss = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 2);

    let o = ddce(&["--config", &cfg, "--set", "predictor=dl-dd,dd-cc", "simulate"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    // one custom scenario x 2 SNRs x 2 predictors
    assert_eq!(out.lines().count(), 1 + 4);
    assert!(out.contains(",dl-dd,"));

    // a model for other dimensions is rejected up front
    let o = ddce(&["--config", &cfg, "--set", "predictor=dl-dd", "--set", "np=12", "simulate"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn track_and_gen_data_emit_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let o = ddce(&["--config", &cfg, "track"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("k,rx,tx,true_re"));
    // 5 blocks x 2 slots x 2 rx x 2 tx
    assert_eq!(out.lines().count(), 1 + 40);

    let o = ddce(&["--config", &cfg, "--set", "train_samples=7", "gen-data"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 1 + 14);
    // n_t·n_r·n_p inputs and n_t·n_r·n_x targets after part,row
    assert_eq!(out.lines().nth(1).unwrap().split(',').count(), 2 + 40 + 8);
}

#[test]
fn packet_length_sweep_skips_empty_packets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "sweep = packet-length\nnb_list = 0, 5, 10\nscenarios = trains\nsnr_db = 15\n");
    let o = ddce(&["--config", &cfg, "sweep"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("nb = 0"));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().next().unwrap().ends_with(",n_b,packet_len,r"));
    assert_eq!(out.lines().count(), 1 + 2 * 2);
}
