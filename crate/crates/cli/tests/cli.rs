use std::path::Path;
use std::process::Command;

use mhmm::inference::{read_samples_csv, PosteriorSamples};
use mhmm::ingest::read_panel_csv;
use mhmm::policy::{Classification, PolicyReport};
use mhmm::ModelParameters;
use mhmm_cli::artifacts::{read_json, ReportArtifact, SummaryArtifact, TruthArtifact};

fn mhmm(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mhmm"))
        .args(args)
        .arg("--paths.output_dir")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = mhmm(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

const SMALL: [&str; 6] = ["--simulate.n_borrowers", "6", "--simulate.weeks_min", "8", "--simulate.weeks_max", "8"];
const SHORT_MCMC: [&str; 6] = ["--mcmc.chains", "2", "--mcmc.iterations", "200", "--mcmc.burn_in", "100"];

#[test]
fn artifacts_follow_their_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let panel = d.join("panel.csv");
    let input = ["--paths.input", panel.to_str().unwrap()];
    ok(d, &[&["simulate", "--seed", "5"][..], &SMALL].concat());
    ok(d, &[&["fit", "--baseline"][..], &SHORT_MCMC, &input].concat());
    ok(d, &[&["decode"][..], &input].concat());
    ok(d, &["policy"]);
    ok(d, &[&["evaluate"][..], &input].concat());
    ok(d, &["report"]);

    let truth: TruthArtifact = read_json(&d.join("truth.json")).unwrap();
    assert_eq!(truth.states.len(), 6);
    let panel = read_panel_csv(std::fs::File::open(&panel).unwrap(), true).unwrap();
    assert_eq!(panel.borrowers.len(), 6);

    let summary: SummaryArtifact = read_json(&d.join("summary.json")).unwrap();
    assert_eq!(summary.mcmc.chains, 2);
    assert_eq!(summary.covariate_names, panel.covariate_names);
    assert!(summary.summary.parameter("beta[2][0]").is_some());
    let baseline: SummaryArtifact = read_json(&d.join("baseline_summary.json")).unwrap();
    assert_eq!(baseline.model.to_string(), "ME-Poisson");

    let samples: PosteriorSamples<ModelParameters> =
        read_samples_csv(std::fs::File::open(d.join("samples.csv")).unwrap()).unwrap();
    assert_eq!(samples.len(), 200);

    let policy: PolicyReport = read_json(&d.join("policy.json")).unwrap();
    assert_eq!(policy.flow.total(), 6);

    let report: ReportArtifact = read_json(&d.join("report.json")).unwrap();
    assert_eq!(report.metrics.len(), 2);
    assert_eq!(report.summary, summary);
    assert_eq!(report.flow, policy.flow);
}

#[test]
fn policy_reads_hand_written_states() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("borrower_id,week,state,count\n");
    for t in 1..=13 {
        let state = if t <= 12 { 2 } else { 1 };
        csv.push_str(&format!("A,{t},{state},0\n"));
    }
    for t in 1..=12 {
        csv.push_str(&format!("B,{t},2,1\n"));
    }
    std::fs::write(dir.path().join("states.csv"), csv).unwrap();
    ok(dir.path(), &["policy"]);
    let report: PolicyReport = read_json(&dir.path().join("policy.json")).unwrap();
    let classes: Vec<_> = report.outcomes.iter().map(|o| o.classification).collect();
    assert_eq!(classes, [Classification::DefaultRecovered, Classification::DefaultNonRecovered]);
    assert_eq!(report.outcomes[0].default_week, Some(12));
}

#[test]
fn exit_codes_separate_usage_from_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(mhmm(d, &["bogus"]).status.code(), Some(2));
    assert_eq!(mhmm(d, &["simulate", "--nonsense.key", "1"]).status.code(), Some(2));
    assert_eq!(mhmm(d, &["simulate", "--mcmc.chains", "0"]).status.code(), Some(2));
    assert_eq!(mhmm(d, &["decode"]).status.code(), Some(2));
    assert_eq!(mhmm(d, &["report"]).status.code(), Some(2));
    assert_eq!(mhmm(d, &["--help"]).status.code(), Some(0));

    std::fs::write(d.join("states.csv"), "borrower_id,week,state,count\nA,1,3,0\n").unwrap();
    assert_eq!(mhmm(d, &["policy"]).status.code(), Some(2));

    std::fs::create_dir(d.join("policy.json")).unwrap();
    std::fs::write(d.join("states.csv"), "borrower_id,week,state,count\nA,1,1,0\n").unwrap();
    assert_eq!(mhmm(d, &["policy"]).status.code(), Some(1));
}

#[test]
fn transaction_input_is_aggregated_before_fitting() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tx = d.join("tx.csv");
    std::fs::write(
        &tx,
        "borrower_id,date,amount,category,loan_flag\n\
         A,2024-01-01,-50.0,basic_expenses,0\n\
         A,2024-01-09,200.0,non_recurrent_income,1\n\
         B,2024-01-02,10.0,luxury_expenses,0\n\
         B,2024-01-10,300.0,non_recurrent_income,1\n",
    )
    .unwrap();
    ok(d, &["fit", "--paths.input", tx.to_str().unwrap(), "--mcmc.chains", "1", "--mcmc.iterations", "20", "--mcmc.burn_in", "10"]);
    let summary: SummaryArtifact = read_json(&d.join("summary.json")).unwrap();
    let mut expected = vec!["intercept".to_string()];
    expected.extend(mhmm::ingest::covariate_names());
    assert_eq!(summary.covariate_names, expected);
}
