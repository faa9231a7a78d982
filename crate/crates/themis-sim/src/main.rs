//! Command-line harness: single runs, parameter sweeps, the worked-example
//! validation, and the property suites.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use themis_sim::app::{AppRuntime, RhoCtx};
use themis_sim::bidding::{prepare_bid, Offer};
use themis_sim::cluster::SlowdownProfile;
use themis_sim::config::ConfigFile;
use themis_sim::metrics::{records_to_csv, summarize, MetricsSummary};
use themis_sim::props;
use themis_sim::schedulers::PolicyKind;
use themis_sim::sim::{run, SimConfig};
use themis_sim::workload::{worked_example, WORKED_EXAMPLE_CONTENTION};
use themis_sim::{Error, Result};

#[derive(Parser)]
#[command(name = "themis-sim", version, about = "Finish-time-fair GPU scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write per-app CSV plus a summary.
    Simulate(SimulateArgs),
    /// Run one simulation per parameter value, in parallel, and merge
    /// summaries.
    Sweep(SweepArgs),
    /// Reproduce the 16-GPU successive-halving bid table; non-zero exit on
    /// mismatch.
    ValidateExample,
    /// Run the counterexample instances and the auction property suites.
    CheckProperties(CheckArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Workload file overriding the configured one.
    #[arg(long, conflicts_with = "synthetic")]
    workload: Option<PathBuf>,
    /// Force the synthetic sampler even if the config names a file.
    #[arg(long)]
    synthetic: bool,
    /// Scheduler override.
    #[arg(long)]
    scheduler: Option<PolicyKind>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also dump sorted rho and placement-score lists for plotting.
    #[arg(long)]
    emit_cdf: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Parameter to sweep: f | lease | contention | theta | lying-x.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long)]
    values: String,
    /// Seeds per value (seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    seeds_per_value: u64,
    #[arg(long)]
    scheduler: Option<PolicyKind>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Randomized auction instances for the invariant suite.
    #[arg(long, default_value_t = 2000)]
    instances: usize,
    /// Trials for the strategy-proofness grid.
    #[arg(long, default_value_t = 200)]
    sp_instances: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Sweep(args) => sweep(args),
        Command::ValidateExample => validate_example(),
        Command::CheckProperties(args) => check_properties_cmd(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn build_run(
    config_path: &Path,
    scheduler: Option<PolicyKind>,
    seed: Option<u64>,
) -> Result<(ConfigFile, SimConfig)> {
    let file = ConfigFile::load(config_path)?;
    let mut sim = file.to_sim_config()?;
    if let Some(kind) = scheduler {
        sim.policy.kind = kind;
    }
    if let Some(seed) = seed {
        sim.seed = seed;
    }
    Ok((file, sim))
}

fn write_run_outputs(
    out_dir: &std::path::Path,
    outcome: &themis_sim::sim::SimOutcome,
    summary: &MetricsSummary,
    emit_cdf: bool,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let csv = records_to_csv(&outcome.records, &summary.scheduler, summary.seed);
    std::fs::write(out_dir.join("apps.csv"), csv)?;
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out_dir.join("summary.json"), json)?;
    if emit_cdf {
        let mut rhos: Vec<f64> = outcome
            .records
            .iter()
            .filter(|r| !r.censored)
            .map(|r| r.rho)
            .collect();
        rhos.sort_by(f64::total_cmp);
        let mut scores: Vec<f64> = outcome
            .records
            .iter()
            .map(|r| r.mean_placement_score)
            .collect();
        scores.sort_by(f64::total_cmp);
        let dump = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("\n");
        std::fs::write(out_dir.join("cdf_rho.txt"), dump(&rhos))?;
        std::fs::write(out_dir.join("cdf_placement.txt"), dump(&scores))?;
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let (mut file, sim) = build_run(&args.config, args.scheduler, args.seed)?;
    if let Some(path) = &args.workload {
        file.workload.mode = themis_sim::config::WorkloadMode::File;
        file.workload.file = Some(path.clone());
    }
    if args.synthetic {
        file.workload.mode = themis_sim::config::WorkloadMode::Synthetic;
    }
    let apps = file.resolve_workload(sim.seed)?;
    let outcome = run(&sim, &apps)?;
    let summary = summarize(&outcome, &sim.policy.kind.to_string(), sim.seed);
    write_run_outputs(&args.out, &outcome, &summary, args.emit_cdf)?;
    println!(
        "{} seed={} finished={} censored={} max_rho={} jain={} gpu_s={:.0}",
        summary.scheduler,
        summary.seed,
        summary.finished_apps,
        summary.censored_apps,
        summary.max_rho.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
        summary.jain_index.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
        summary.total_gpu_seconds,
    );
    Ok(ExitCode::SUCCESS)
}

/// Apply one sweep point to a config.
fn apply_param(file: &mut ConfigFile, param: &str, value: f64) -> Result<()> {
    match param {
        "f" => file.policy.f = value,
        "lease" => file.policy.lease_s = value,
        "theta" => file.seeds.error_theta = value,
        "lying-x" => {
            if file.seeds.lying_app_id.is_none() {
                file.seeds.lying_app_id = Some(0);
            }
            file.seeds.lying_x_pct = value;
        }
        "contention" => {
            // contention scales the arrival rate
            if value <= 0.0 {
                return Err(Error::InvalidParameter("contention must be > 0".into()));
            }
            file.workload.synthetic.mean_interarrival_s /= value;
        }
        other => {
            return Err(Error::InvalidParameter(format!("unknown sweep param {other}")))
        }
    }
    Ok(())
}

fn sweep_threads() -> usize {
    std::env::var("THEMIS_SIM_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}

fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let values: Vec<f64> = args
        .values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad sweep value {v:?}")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::InvalidParameter("no sweep values".into()));
    }
    let base = ConfigFile::load(&args.config)?;
    // validate the parameter name once up front
    apply_param(&mut base.clone(), &args.param, values[0])?;

    let mut jobs: Vec<(f64, u64)> = Vec::new();
    for &value in &values {
        for s in 0..args.seeds_per_value {
            jobs.push((value, base.seeds.seed + s));
        }
    }

    let threads = sweep_threads().min(jobs.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<MetricsSummary>>>> =
        jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let (value, seed) = jobs[i];
                let result = (|| -> Result<MetricsSummary> {
                    let mut file = base.clone();
                    apply_param(&mut file, &args.param, value)?;
                    file.seeds.seed = seed;
                    let mut sim = file.to_sim_config()?;
                    if let Some(kind) = args.scheduler {
                        sim.policy.kind = kind;
                    }
                    let apps = file.resolve_workload(seed)?;
                    let outcome = run(&sim, &apps)?;
                    let summary = summarize(&outcome, &sim.policy.kind.to_string(), seed);
                    let dir = args
                        .out
                        .join(format!("{}_{}", args.param, value))
                        .join(format!("seed_{seed}"));
                    write_run_outputs(&dir, &outcome, &summary, false)?;
                    Ok(summary)
                })();
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });

    std::fs::create_dir_all(&args.out)?;
    let mut merged = String::from(
        "param,value,seed,scheduler,finished,censored,max_rho,median_rho,jain,total_gpu_seconds,mean_completion_s\n",
    );
    for ((value, seed), slot) in jobs.iter().zip(slots) {
        let s = slot
            .into_inner()
            .unwrap()
            .expect("worker wrote a result")
            .map_err(|e| Error::Config(format!("sweep point failed: {e}")))?;
        merged.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            args.param,
            value,
            seed,
            s.scheduler,
            s.finished_apps,
            s.censored_apps,
            s.max_rho.unwrap_or(f64::NAN),
            s.median_rho.unwrap_or(f64::NAN),
            s.jain_index.unwrap_or(f64::NAN),
            s.total_gpu_seconds,
            s.mean_completion_s.unwrap_or(f64::NAN),
        ));
    }
    std::fs::write(args.out.join("sweep.csv"), &merged)?;
    print!("{merged}");
    Ok(ExitCode::SUCCESS)
}

fn validate_example() -> Result<ExitCode> {
    let started = std::time::Instant::now();
    let (cluster, app) = worked_example();
    let rt = AppRuntime::new(&app, 0.0, WORKED_EXAMPLE_CONTENTION);
    let profile = SlowdownProfile::compute_class();
    let ctx = RhoCtx::new(0.0, &cluster, &profile);
    let offer = Offer { round: 0, gpus: cluster.all_gpus() };
    let table = prepare_bid(&app, &rt, &offer, &ctx, None, 4096)?;

    // T_id must come out at exactly 2500 s.
    let t_id = themis_sim::schedulers::t_id(&app, &rt, &ctx);
    let mut ok = (t_id - 2500.0).abs() < 1e-9;
    println!("T_id = {t_id} s (expected 2500)");

    // reference bid table: per GPU count, the published value and the
    // phase-by-phase evaluation
    let reference: [(usize, f64, f64); 5] = [
        (1, 4.0, 4.0),
        (2, 2.0, 2.0),
        (4, 1.0, 1.064),
        (8, 0.5, 0.532),
        (16, 0.34, 0.356),
    ];
    println!("{:>5} {:>10} {:>10} {:>10}", "GPUs", "rho", "published", "oracle");
    for (count, published, oracle) in reference {
        let rows: Vec<f64> = table
            .rows
            .iter()
            .filter(|r| r.allocation.count() == count)
            .map(|r| r.rho)
            .collect();
        let rho = rows.first().copied().unwrap_or(f64::NAN);
        // all same-count signatures are equivalent for this compute-class app
        let consistent = rows.iter().all(|r| (r - rho).abs() < 1e-9);
        let exact = (rho - oracle).abs() < 1e-9;
        let near_published = (rho - published).abs() <= 0.07;
        println!(
            "{count:>5} {rho:>10.4} {published:>10.2} {oracle:>10.3} {}",
            if exact && near_published && consistent { "ok" } else { "MISMATCH" }
        );
        ok &= exact && near_published && consistent;
    }
    let elapsed = started.elapsed();
    println!("validate-example: {} in {elapsed:?}", if ok { "PASS" } else { "FAIL" });
    Ok(if ok && elapsed.as_secs_f64() < 1.0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn check_properties_cmd(args: CheckArgs) -> Result<ExitCode> {
    let mut ok = true;

    let t31 = props::counterexamples()?;
    let i1 = t31.instance1_blind.si_violations.len() == 2 && t31.instance1_ideal.clean();
    println!(
        "instance 1: SI violations {:?} under count-equal spread, ideal clean = {} ... {}",
        t31.instance1_blind.si_violations,
        t31.instance1_ideal.clean(),
        if i1 { "PASS" } else { "FAIL" }
    );
    ok &= i1;
    let i2 = !t31.instance2_blind.ef_violations.is_empty()
        && t31.instance2_blind.pe_witness.is_some()
        && t31.instance2_ideal.clean();
    println!(
        "instance 2: EF violations {:?}, PE witness = {}, ideal clean = {} ... {}",
        t31.instance2_blind.ef_violations,
        t31.instance2_blind.pe_witness.is_some(),
        t31.instance2_ideal.clean(),
        if i2 { "PASS" } else { "FAIL" }
    );
    ok &= i2;

    match props::auction_invariant_suite(2024, args.instances) {
        Ok(stats) => println!(
            "auction invariants: {} instances, max leftover ratio {:.3} ... PASS",
            stats.instances, stats.max_leftover_ratio
        ),
        Err(e) => {
            println!("auction invariants ... FAIL: {e}");
            ok = false;
        }
    }
    match props::strategyproofness_suite(2025, args.sp_instances) {
        Ok(worst) => println!(
            "strategy-proofness grid: {} trials, worst excess {worst:.3e} ... PASS",
            args.sp_instances
        ),
        Err(e) => {
            println!("strategy-proofness grid ... FAIL: {e}");
            ok = false;
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
