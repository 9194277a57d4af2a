use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use log::info;
use mbivs::distributions::{moment_suite, RngStream};
use mbivs::gibbs::geweke::{geweke_priors, geweke_validation, geweke_validation_with, GewekeDims};
use mbivs::gibbs::{run_chains, GibbsKernel, KernelMutation, SamplerConfig};
use mbivs::inference::build_report;
use mbivs::io;
use mbivs::model::{validate_dataset, PosteriorSamples, PriorConfig, ScenarioSpec};
use mbivs::oracle::{beta_grid, default_grid, grid_comparison};
use mbivs::pipeline::{run_replicate, summarize_outcomes, BenchConfig};
use mbivs::simdata::{scenario, simulate_dataset, with_signal_strength};
use mbivs::Error;
use rayon::prelude::*;
use serde_json::json;

use crate::manifest::{replay_args, unix_now, RunManifest};
use crate::{BenchArgs, Cli, Command, FitArgs, InferArgs, ReplayArgs, SimulateArgs, Suite, ValidateArgs};

pub const EXIT_CHECKS_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;
pub const EXIT_IO: u8 = 5;

const ORACLE_TOLERANCE: f64 = 1e-6;
const GEWEKE_THRESHOLD: f64 = 4.0;
const MOMENT_SE: f64 = 3.0;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
    Checks(usize),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Checks(_) => EXIT_CHECKS_FAILED,
            Failure::Core(e) if e.is_io() => EXIT_IO,
            Failure::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            Failure::Core(Error::InvalidConfig(_) | Error::UnknownScenario(_)) => EXIT_USAGE,
            Failure::Core(_) => EXIT_VALIDATION,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Checks(n) => write!(f, "{n} validation check(s) failed"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = Result<(), Failure>;

pub fn run(cli: Cli) -> Outcome {
    run_with_args(cli, std::env::args().collect())
}

fn run_with_args(cli: Cli, argv: Vec<String>) -> Outcome {
    if cli.threads > 0 {
        // A second build (replay) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match cli.command {
        Command::Simulate(a) => simulate(a, argv),
        Command::Fit(a) => fit(a, argv),
        Command::Infer(a) => infer(a, argv),
        Command::Bench(a) => bench(a, argv),
        Command::Validate(a) => validate(a, argv),
        Command::Replay(a) => replay(a),
    }
}

fn manifest(subcommand: &str, out: &Path, started: u64, argv: Vec<String>) -> RunManifest {
    RunManifest::new(subcommand, out, started, argv)
}

fn check_alpha(alpha: f64) -> Outcome {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Failure::Usage(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn simulate(a: SimulateArgs, argv: Vec<String>) -> Outcome {
    let started = unix_now();
    let mut spec: ScenarioSpec = match (a.scenario, &a.spec) {
        (Some(id), _) => scenario(id)?,
        (None, Some(path)) => io::read_json(path)?,
        (None, None) => return Err(Failure::Usage("one of --scenario or --spec is required".into())),
    };
    if let Some(b) = a.beta {
        spec = with_signal_strength(spec, b);
    }
    spec.validate()?;
    let data = simulate_dataset(&spec, &mut RngStream::new(a.seed, 0))?;
    io::write_dataset(&a.out, &data.design, &data.y, Some(&data.true_b))?;

    let mut m = manifest("simulate", &a.out, started, argv);
    m.seed = Some(a.seed);
    m.config = a.spec.clone();
    m.inputs = a.spec.iter().cloned().collect();
    m.settings = json!({ "dims": { "n": spec.n, "p": spec.p, "q": spec.q }, "scenario": spec });
    m.write(&a.out)?;
    println!("simulated scenario {} (n={}, p={}, q={}) into {}", spec.id, spec.n, spec.p, spec.q, a.out.display());
    Ok(())
}

fn fit(a: FitArgs, argv: Vec<String>) -> Outcome {
    let started = unix_now();
    let mut sampler = SamplerConfig {
        iterations: a.iterations,
        burn_in: a.burn_in,
        thin: a.thin,
        chains: a.chains,
        seed: a.seed,
        ..SamplerConfig::default()
    };
    sampler.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut priors: PriorConfig = match &a.priors {
        Some(p) => io::read_json(p)?,
        None => PriorConfig::default(),
    };
    let mut data = io::read_dataset(&a.data)?;
    data.design.annotations = None;
    if let Some(path) = &a.annotations {
        data.design.annotations = Some(io::read_annotations(path)?);
        let mut prior = priors.annotation_prior.unwrap_or_default();
        if let Some(mu) = a.mu_d {
            prior.mu_d = mu;
        }
        priors.annotation_prior = Some(prior);
        sampler.annotation_prior_enabled = true;
    } else if a.mu_d.is_some() {
        log::warn!("--mu-d has no effect without --annotations");
    }
    let (design, y) = validate_dataset(data.design, data.y)?;
    priors.validate(y.q())?;

    let clock = Instant::now();
    let chains = run_chains(&design, &y, &priors, &sampler)?;
    info!("{} chain(s) finished in {:.1?}", chains.len(), clock.elapsed());
    let settings = json!({
        "data": a.data,
        "sampler": sampler,
        "priors": priors,
        "group_of": design.group_of,
    });
    io::write_samples(&a.out, &chains, settings.clone())?;

    let mut m = manifest("fit", &a.out, started, argv);
    m.seed = Some(a.seed);
    m.config = a.priors.clone();
    m.inputs = std::iter::once(a.data.clone()).chain(a.annotations.clone()).collect();
    m.settings = settings;
    m.write(&a.out)?;
    let draws: usize = chains.iter().map(|c| c.len()).sum();
    println!("{} chain(s), {draws} recorded draws written to {}", chains.len(), a.out.display());
    Ok(())
}

fn infer(a: InferArgs, argv: Vec<String>) -> Outcome {
    let started = unix_now();
    check_alpha(a.alpha)?;
    let (chains, sidecar) = io::read_samples(&a.samples)?;
    let samples = PosteriorSamples::merge(chains)?;
    let report = build_report(&samples, a.alpha, a.permutations, a.min_subset_pip, a.seed)?;
    let group_of: Option<Vec<usize>> =
        sidecar.settings.get("group_of").and_then(|g| serde_json::from_value(g.clone()).ok());
    io::write_report(&a.out, &report, group_of.as_deref())?;

    let mut m = manifest("infer", &a.out, started, argv);
    m.seed = Some(a.seed);
    m.inputs = vec![a.samples.clone()];
    m.settings = json!({
        "alpha": a.alpha,
        "permutations": a.permutations,
        "min_subset_pip": a.min_subset_pip,
        "draws": samples.len(),
    });
    m.write(&a.out)?;
    println!(
        "{} of {} predictors selected at BFDR {:.3} (alpha {})",
        report.bfdr.selected.len(),
        report.predictor_pip.len(),
        report.bfdr.bfdr,
        a.alpha
    );
    for b in &report.best_subsets {
        println!("  predictor {}: responses {:?} (PIP {:.3}, Z {:.2})", b.predictor, b.subset, b.pip, b.z);
    }
    Ok(())
}

fn bench(a: BenchArgs, argv: Vec<String>) -> Outcome {
    let started = unix_now();
    check_alpha(a.alpha)?;
    if a.replicates == 0 {
        return Err(Failure::Usage("--replicates must be at least 1".into()));
    }
    let mut spec = scenario(a.scenario)?;
    if let Some(b) = a.beta {
        spec = with_signal_strength(spec, b);
    }
    let mut cfg = BenchConfig::new(spec, a.replicates, a.seed);
    cfg.sampler = SamplerConfig {
        iterations: a.iterations,
        burn_in: a.burn_in,
        thin: a.thin,
        chains: a.chains,
        ..cfg.sampler
    };
    cfg.sampler.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    cfg.alpha = a.alpha;
    cfg.permutations = a.permutations;
    if let Some(p) = &a.priors {
        cfg.priors = io::read_json(p)?;
    }
    fs::create_dir_all(&a.out).map_err(Error::from)?;

    let replicate_path = a.out.join(io::REPLICATES_FILE);
    let log = Mutex::new(io::ReplicateLog::create(&replicate_path)?);
    let outcomes = (0..a.replicates)
        .into_par_iter()
        .map(|r| {
            let clock = Instant::now();
            let o = run_replicate(&cfg, r)?;
            info!("replicate {r} done in {:.1?}", clock.elapsed());
            log.lock().expect("replicate log poisoned").push(&o)?;
            Ok(o)
        })
        .collect::<mbivs::Result<Vec<_>>>()?;
    // Rewrite in replicate order so the file does not depend on scheduling.
    let mut ordered = io::ReplicateLog::create(&replicate_path)?;
    for o in &outcomes {
        ordered.push(o)?;
    }

    let summary = summarize_outcomes(outcomes);
    let name = a.scenario.to_string();
    io::write_bench_table(&a.out.join(io::BENCH_FILE), &name, &summary)?;
    io::write_bench_detail(&a.out.join(io::BENCH_DETAIL_FILE), &name, &summary)?;

    let mut m = manifest("bench", &a.out, started, argv);
    m.seed = Some(a.seed);
    m.config = a.priors.clone();
    m.settings = json!({ "bench": cfg });
    m.write(&a.out)?;
    let e = &summary.entry;
    println!(
        "scenario {name}, {} replicates: AUC {:.4} ({:.4}) FDR {:.4} ({:.4}) FOR {:.4} ({:.4}) MSE {:.4} ({:.4})",
        e.replicates, e.auc.mean, e.auc.se, e.fdr.mean, e.fdr.se, e.for_rate.mean, e.for_rate.se, e.mse.mean, e.mse.se
    );
    Ok(())
}

fn status(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn validate(a: ValidateArgs, argv: Vec<String>) -> Outcome {
    let started = unix_now();
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    let clock = Instant::now();
    let mut failures = 0;
    let mut tally = |ok: bool, line: String| {
        println!("{} {line}", status(ok));
        failures += !ok as usize;
    };
    match a.suite {
        Suite::Oracle => {
            let grid = grid_comparison(&default_grid(), &beta_grid(41))?;
            let worst = grid.iter().map(|g| g.abs_diff).fold(0.0, f64::max);
            let bad = grid.iter().filter(|g| !(g.abs_diff < ORACLE_TOLERANCE)).count();
            tally(bad == 0, format!("oracle grid: {} points, max |diff| {worst:.3e}, {bad} above {ORACLE_TOLERANCE:e}", grid.len()));
            if let Some(dir) = &a.out {
                io::write_records(&dir.join("oracle_grid.csv"), &grid)?;
            }
        }
        Suite::Geweke => {
            let draws = a.draws.unwrap_or(50_000);
            let dims = GewekeDims::tiny();
            let priors = geweke_priors(dims.q);
            let report = geweke_validation(&priors, &dims, draws, &mut RngStream::new(a.seed, 0))?;
            for s in &report.statistics {
                tally(
                    s.z.is_finite() && s.z.abs() < GEWEKE_THRESHOLD,
                    format!("geweke {}: prior {:.4}, chain {:.4}, z {:.2}", s.name, s.prior_mean, s.chain_mean, s.z),
                );
            }
            let mutated = GibbsKernel::new(priors).with_mutation(KernelMutation::HalvedS2Rate);
            let broken = geweke_validation_with(&mutated, &dims, draws, &mut RngStream::new(a.seed, 1))?;
            tally(
                broken.max_abs_z() > GEWEKE_THRESHOLD,
                format!("geweke sensitivity: mutated kernel max |z| {:.1}", broken.max_abs_z()),
            );
            if let Some(dir) = &a.out {
                io::write_records(&dir.join("geweke.csv"), &report.statistics)?;
            }
        }
        Suite::Distributions => {
            let checks = moment_suite(a.draws.unwrap_or(100_000), a.seed)?;
            for c in &checks {
                tally(
                    c.passes(MOMENT_SE),
                    format!("{}: expected {:.5}, observed {:.5}, z {:.2}", c.name, c.expected, c.observed, c.z()),
                );
            }
            if let Some(dir) = &a.out {
                io::write_records(&dir.join("distributions.csv"), &checks)?;
            }
        }
    }
    println!("suite {:?} finished in {:.1?}", a.suite, clock.elapsed());
    if let Some(dir) = &a.out {
        let mut m = manifest("validate", dir, started, argv);
        m.seed = Some(a.seed);
        m.settings = json!({ "suite": format!("{:?}", a.suite).to_lowercase(), "draws": a.draws, "failures": failures });
        m.write(dir)?;
    }
    if failures == 0 {
        Ok(())
    } else {
        Err(Failure::Checks(failures))
    }
}

fn replay(a: ReplayArgs) -> Outcome {
    let m: RunManifest = io::read_json(&a.manifest)?;
    if m.subcommand == "replay" || m.command_line.get(1).map(String::as_str) == Some("replay") {
        return Err(Failure::Usage("a replay manifest cannot be replayed".into()));
    }
    let args = replay_args(&m.command_line, a.out.as_deref());
    let cli = <Cli as clap::Parser>::try_parse_from(&args).map_err(|e| Failure::Usage(e.to_string()))?;
    info!("replaying {} from {}", m.subcommand, a.manifest.display());
    run_with_args(cli, args)
}
