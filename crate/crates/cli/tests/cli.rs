use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mbivs::io;
use mbivs::model::{PosteriorSamples, ScenarioId};
use mbivs::simdata::{cycled_group_sizes, scenario, scenario_coefficients};
use nalgebra::DMatrix;
use serde_json::Value;

fn mbivs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbivs")).args(args).env("MBIVS_THREADS", "2").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mbivs(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    mbivs(args).status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small heterogeneous scenario (n=60, p=12, q=4) written as JSON.
fn small_spec(dir: &Path) -> std::path::PathBuf {
    let mut spec = scenario(ScenarioId::III).unwrap();
    spec.id = ScenarioId::Custom;
    spec.n = 60;
    spec.p = 12;
    spec.q = 4;
    spec.group_sizes = cycled_group_sizes(12);
    spec.true_b = scenario_coefficients(ScenarioId::III, 12, 4, &spec.group_sizes).unwrap().map(|v| v * 4.0);
    let path = dir.join("spec.json");
    io::write_json(&path, &spec).unwrap();
    path
}

#[test]
fn simulate_writes_scenario_dimensions_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--scenario", "I", "--seed", "7", "--out", p(&a)]);
    ok(&["simulate", "--scenario", "I", "--seed", "7", "--out", p(&b)]);
    for f in ["X.csv", "Y.csv", "groups.csv", "truth.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let data = io::read_dataset(&a).unwrap();
    assert_eq!((data.design.n(), data.design.p(), data.y.q()), (500, 100, 6));
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["subcommand"], "simulate");
    assert_eq!(m["seed"], 7);

    let v = dir.path().join("v");
    ok(&["simulate", "--scenario", "V", "--out", p(&v)]);
    let dims = &json(&v.join("manifest.json"))["settings"]["dims"];
    assert_eq!((dims["n"].as_u64(), dims["p"].as_u64()), (Some(300), Some(500)));

    let other = dir.path().join("c");
    ok(&["simulate", "--scenario", "I", "--seed", "8", "--out", p(&other)]);
    assert_ne!(fs::read(a.join("Y.csv")).unwrap(), fs::read(other.join("Y.csv")).unwrap());
}

#[test]
fn fit_records_defaults_and_guards_burn_in() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--spec", p(&small_spec(dir.path())), "--out", p(&data)]);
    let fit = dir.path().join("fit");
    ok(&["fit", "--data", p(&data), "--out", p(&fit)]);
    let meta = json(&fit.join("samples.json"));
    assert_eq!(meta["metadata"]["iterations"], 7500);
    assert_eq!(meta["metadata"]["burn_in"], 2500);
    assert_eq!(meta["chains"][0]["draws"], 5000);

    let bad = dir.path().join("bad");
    assert_eq!(code(&["fit", "--data", p(&data), "--out", p(&bad), "--iterations", "100", "--burn-in", "100"]), 2);
    assert!(!bad.exists());
}

#[test]
fn multi_chain_fit_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--spec", p(&small_spec(dir.path())), "--out", p(&data)]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["fit", "--data", p(&data), "--out", p(&out), "--chains", "4", "--seed", "1", "--iterations", "300", "--burn-in", "100"]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    let meta = json(&a.join("samples.json"));
    let ids: Vec<u64> = meta["chains"].as_array().unwrap().iter().map(|c| c["stream_id"].as_u64().unwrap()).collect();
    assert_eq!(ids, vec![0, 1, 2, 3]);
    let mut files = Vec::new();
    for c in 0..4 {
        for kind in ["z", "b", "sigma", "scalars"] {
            let f = format!("chain{c}_{kind}.csv");
            assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f} differs");
            files.push(fs::read(a.join(&f)).unwrap());
        }
    }
    assert_ne!(files[0], files[4], "chains share a stream");
}

#[test]
fn fit_with_annotations_tracks_d1() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--spec", p(&small_spec(dir.path())), "--out", p(&data)]);
    let ann = dir.path().join("ann.csv");
    io::write_column(&ann, "annotation", &(0..12).map(|j| (j % 2) as u8).collect::<Vec<_>>()).unwrap();
    let fit = dir.path().join("fit");
    ok(&["fit", "--data", p(&data), "--out", p(&fit), "--annotations", p(&ann), "--mu-d", "-0.5", "--iterations", "200", "--burn-in", "50"]);
    let (chains, sidecar) = io::read_samples(&fit).unwrap();
    assert_eq!(chains[0].d1.len(), 150);
    assert_eq!(sidecar.settings["priors"]["annotation_prior"]["mu_d"], -0.5);

    io::write_column(&ann, "annotation", &[1u8, 0]).unwrap();
    assert_eq!(code(&["fit", "--data", p(&data), "--out", p(&fit), "--annotations", p(&ann), "--iterations", "20", "--burn-in", "5"]), 3);
}

#[test]
fn infer_selects_saturated_predictors_with_full_subsets() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples");
    let z = vec![DMatrix::from_element(3, 4, true); 50];
    io::write_samples(&samples, &[PosteriorSamples::from_inclusions(z).unwrap()], Value::Null).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["infer", "--samples", p(&samples), "--out", p(&a), "--permutations", "200"]);
    ok(&["infer", "--samples", p(&samples), "--out", p(&b), "--permutations", "200"]);
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    let report = io::read_report(&a).unwrap();
    assert_eq!(report.bfdr.alpha, 0.1);
    assert_eq!(report.bfdr.selected, vec![0, 1, 2]);
    assert!(report.best_subsets.iter().all(|s| s.subset == vec![0, 1, 2, 3]));
    let table = fs::read_to_string(a.join("pip_table.csv")).unwrap();
    assert_eq!(table.lines().nth(1).unwrap(), "0,,1,1,1,1,1,1");
    assert!(fs::read_to_string(a.join("subsets.csv")).unwrap().contains("0;1;2;3"));
}

#[test]
fn fit_then_infer_recovers_heterogeneous_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--spec", p(&small_spec(dir.path())), "--out", p(&data), "--seed", "3"]);
    let fit = dir.path().join("fit");
    ok(&["fit", "--data", p(&data), "--out", p(&fit), "--iterations", "2000", "--burn-in", "500", "--chains", "2"]);
    let inf = dir.path().join("inf");
    ok(&["infer", "--samples", p(&fit), "--out", p(&inf)]);
    let report = io::read_report(&inf).unwrap();
    let truth = io::read_dataset(&data).unwrap().true_b.unwrap();
    let causal: Vec<usize> = (0..12).filter(|&j| truth.row(j).iter().any(|&v| v != 0.0)).collect();
    assert_eq!(report.bfdr.selected, causal);
    let table = fs::read_to_string(inf.join("pip_table.csv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("0,1,"), "group column filled from the fit");
}

#[test]
fn bench_emits_one_table_row_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let stdout = ok(&["bench", "--scenario", "I", "--replicates", "5", "--out", p(&a)]);
    assert!(stdout.contains("AUC"));
    let table = fs::read_to_string(a.join("bench.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "scenario,replicates,AUC,FDR,FOR,MSE");
    assert_eq!(fs::read_to_string(a.join("replicates.csv")).unwrap().lines().count(), 6);
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["settings"]["bench"]["sampler"]["iterations"], 3000);

    let quick = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        ok(&["bench", "--scenario", "II", "--replicates", "3", "--iterations", "400", "--burn-in", "100", "--seed", "5", "--threads", threads, "--out", p(&out)]);
        (fs::read(out.join("bench.csv")).unwrap(), fs::read(out.join("replicates.csv")).unwrap())
    };
    assert_eq!(quick("b", "1"), quick("c", "3"));
}

#[test]
fn validate_suites_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle");
    let stdout = ok(&["validate", "--suite", "oracle", "--out", p(&out)]);
    assert!(stdout.starts_with("PASS oracle grid"));
    assert!(fs::read_to_string(out.join("oracle_grid.csv")).unwrap().lines().count() > 7000);
    let stdout = ok(&["validate", "--suite", "geweke"]);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    ok(&["validate", "--suite", "distributions", "--draws", "20000"]);
    assert_eq!(code(&["validate", "--suite", "bogus"]), 2);
    assert_eq!(code(&["validate", "--suite", "geweke", "--draws", "10"]), 2);
    assert_eq!(code(&["bench", "--scenario", "VII", "--out", p(dir.path())]), 2);
    assert_eq!(code(&["infer", "--samples", p(&dir.path().join("none")), "--out", p(dir.path())]), 5);
    assert_eq!(code(&["infer", "--samples", p(dir.path()), "--out", p(dir.path()), "--alpha", "1.5"]), 2);

    let data = dir.path().join("data");
    ok(&["simulate", "--spec", p(&small_spec(dir.path())), "--out", p(&data)]);
    fs::write(data.join("groups.csv"), "group\n0\n").unwrap();
    assert_eq!(code(&["fit", "--data", p(&data), "--out", p(&dir.path().join("f"))]), 3);
}

#[test]
fn replay_reproduces_an_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--spec", p(&small_spec(dir.path())), "--out", p(&data), "--seed", "11"]);
    let again = dir.path().join("again");
    ok(&["replay", "--manifest", p(&data.join("manifest.json")), "--out", p(&again)]);
    assert_eq!(fs::read(data.join("Y.csv")).unwrap(), fs::read(again.join("Y.csv")).unwrap());
    assert_eq!(json(&again.join("manifest.json"))["output"], p(&again));
}
