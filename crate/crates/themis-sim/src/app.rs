//! ML app model: jobs, tuning schemes, finish-time estimates and the
//! fairness metric rho, plus forward progress under an allocation.
//!
//! rho = T_sh / T_id. T_sh is the estimated finish time in the shared
//! cluster (elapsed time plus remaining time under the evaluated
//! allocation, allocation assumed binding until completion). T_id is the
//! finish time on a dedicated 1/N_avg slice, approximated as the
//! full-cluster time scaled by the average contention. Smaller is better;
//! an app that holds no GPUs and has work left has rho = +inf.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{slowdown, ClusterSpec, GpuSet, SlowdownProfile};
use crate::error::{Error, Result};

/// Identifier of an ML app.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct AppId(pub u32);

impl std::fmt::Display for AppId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Loss model l(i) = a / (i + b) + c, non-increasing in the iteration count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LossCurve {
    pub fn eval(&self, iters: f64) -> f64 {
        self.a / (iters + self.b) + self.c
    }
}

/// One training job: serial iteration time, work size, parallelism cap and
/// loss model. Work W = total_iters * serial_iter_time (GPU-seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub serial_iter_time: f64,
    pub total_iters: f64,
    pub iters_done: f64,
    pub job_demand_max: u32,
    pub loss: LossCurve,
}

impl JobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.serial_iter_time <= 0.0 {
            return Err(Error::WorkloadInvariant {
                field: "serial_iter_s".into(),
                msg: "must be > 0".into(),
            });
        }
        if self.total_iters < 0.0 || self.iters_done < 0.0 || self.iters_done > self.total_iters {
            return Err(Error::WorkloadInvariant {
                field: "total_iters".into(),
                msg: "need 0 <= iters_done <= total_iters".into(),
            });
        }
        if self.job_demand_max == 0 {
            return Err(Error::WorkloadInvariant {
                field: "job_demand_max".into(),
                msg: "must be >= 1".into(),
            });
        }
        if self.loss.a <= 0.0 || self.loss.b <= 0.0 {
            return Err(Error::WorkloadInvariant {
                field: "loss_curve".into(),
                msg: "need a > 0 and b > 0".into(),
            });
        }
        Ok(())
    }
}

/// How the app's internal scheduler drives its jobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TuningScheme {
    SingleJob,
    SuccessiveHalving {
        budget_gpu_seconds: f64,
        iters_per_phase: Vec<f64>,
    },
    PerfCurve {
        /// Remaining fraction of the achievable loss drop at which a job is
        /// forecast to stop.
        loss_margin: f64,
    },
}

/// Placement-sensitivity class; resolved to a SlowdownProfile by config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppClass {
    Compute,
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSpec {
    pub id: AppId,
    pub arrival_time: f64,
    pub jobs: Vec<JobSpec>,
    pub scheme: TuningScheme,
    pub class: AppClass,
    pub app_demand_max: u32,
}

impl AppSpec {
    pub fn validate(&self) -> Result<()> {
        if self.jobs.is_empty() {
            return Err(Error::WorkloadInvariant {
                field: "jobs".into(),
                msg: "app must have at least one job".into(),
            });
        }
        for j in &self.jobs {
            j.validate()?;
        }
        let max_job = self.jobs.iter().map(|j| j.job_demand_max).max().unwrap();
        if self.app_demand_max < max_job {
            return Err(Error::WorkloadInvariant {
                field: "app_demand_max".into(),
                msg: "must be >= every job_demand_max".into(),
            });
        }
        if let TuningScheme::SuccessiveHalving { budget_gpu_seconds, iters_per_phase } =
            &self.scheme
        {
            if *budget_gpu_seconds <= 0.0 {
                return Err(Error::WorkloadInvariant {
                    field: "budget_gpu_s".into(),
                    msg: "must be > 0".into(),
                });
            }
            let expect = phase_count(self.jobs.len());
            if iters_per_phase.len() != expect {
                return Err(Error::WorkloadInvariant {
                    field: "iters_per_phase".into(),
                    msg: format!("need {expect} phases for {} jobs", self.jobs.len()),
                });
            }
        }
        if let TuningScheme::PerfCurve { loss_margin } = &self.scheme {
            if !(*loss_margin > 0.0 && *loss_margin < 1.0) {
                return Err(Error::WorkloadInvariant {
                    field: "loss_margin".into(),
                    msg: "must be in (0, 1)".into(),
                });
            }
        }
        Ok(())
    }

    /// Total work in GPU-seconds used for the dedicated-share denominator.
    pub fn total_work_gpu_seconds(&self) -> f64 {
        match &self.scheme {
            TuningScheme::SingleJob => {
                let j = &self.jobs[0];
                j.total_iters * j.serial_iter_time
            }
            TuningScheme::SuccessiveHalving { budget_gpu_seconds, .. } => *budget_gpu_seconds,
            TuningScheme::PerfCurve { loss_margin } => self
                .jobs
                .iter()
                .map(|j| forecast_iters(j, *loss_margin) * j.serial_iter_time)
                .sum(),
        }
    }
}

/// Number of successive-halving phases for n initial jobs: job counts go
/// n, ceil(n/2), ..., 1.
pub fn phase_count(n_jobs: usize) -> usize {
    (n_jobs.max(1) as f64).log2().ceil() as usize + 1
}

fn lower_median(sorted: &[f64]) -> f64 {
    sorted[(sorted.len() - 1) / 2]
}

/// Split a GPU-second budget into per-phase iteration counts: each phase
/// gets an equal share of the budget priced at the median serial time, the
/// last phase absorbs the remainder.
pub fn derive_phase_iters(budget_gpu_seconds: f64, serial_times: &[f64]) -> Vec<f64> {
    let n = serial_times.len();
    let phases = phase_count(n);
    let mut sorted = serial_times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = lower_median(&sorted);
    let per_phase = budget_gpu_seconds / phases as f64;
    let mut iters = Vec::with_capacity(phases);
    let mut spent = 0.0;
    let mut jobs_in_phase = n;
    for k in 0..phases {
        let cost_per_iter = jobs_in_phase as f64 * median;
        let i = if k + 1 == phases {
            ((budget_gpu_seconds - spent) / cost_per_iter).floor()
        } else {
            (per_phase / cost_per_iter).floor()
        }
        .max(1.0);
        spent += i * cost_per_iter;
        iters.push(i);
        jobs_in_phase = jobs_in_phase.div_ceil(2);
    }
    iters
}

/// Iteration at which a perf-curve job is forecast to stop: when the loss has
/// closed all but `margin` of the achievable gap, capped at total_iters.
pub fn forecast_iters(job: &JobSpec, margin: f64) -> f64 {
    let i_term = job.loss.b * (1.0 / margin - 1.0);
    i_term.clamp(0.0, job.total_iters)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppStatus {
    Queued,
    Running,
    Finished,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobState {
    pub iters_done: f64,
    pub phase_iters_done: f64,
    pub live: bool,
}

/// Live state of an app in the simulator.
#[derive(Debug, Clone)]
pub struct AppRuntime {
    pub t_start: f64,
    pub allocation: GpuSet,
    pub phase: usize,
    pub jobs: Vec<JobState>,
    pub status: AppStatus,
    pub gpu_seconds: f64,
    pub overhead_gpu_seconds: f64,
    /// Progress is paused until this instant after a reallocation.
    pub paused_until: f64,
    pub finish_time: Option<f64>,
    navg_integral: f64,
    navg_lifetime: f64,
    navg_fallback: usize,
    /// Time-weighted placement score accumulators.
    pub score_integral: f64,
    pub score_time: f64,
}

impl AppRuntime {
    pub fn new(app: &AppSpec, now: f64, live_apps: usize) -> Self {
        Self {
            t_start: now,
            allocation: GpuSet::new(),
            phase: 0,
            jobs: app
                .jobs
                .iter()
                .map(|j| JobState {
                    iters_done: j.iters_done,
                    phase_iters_done: 0.0,
                    live: true,
                })
                .collect(),
            status: AppStatus::Queued,
            gpu_seconds: 0.0,
            overhead_gpu_seconds: 0.0,
            paused_until: now,
            finish_time: None,
            navg_integral: 0.0,
            navg_lifetime: 0.0,
            navg_fallback: live_apps.max(1),
            score_integral: 0.0,
            score_time: 0.0,
        }
    }

    pub fn is_live(&self) -> bool {
        self.status != AppStatus::Finished
    }

    pub fn live_jobs(&self) -> Vec<usize> {
        self.jobs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.live)
            .map(|(i, _)| i)
            .collect()
    }

    /// Time-weighted average contention over this app's lifetime, floored at
    /// one. Before the first accumulation, the live-app count at arrival.
    pub fn navg(&self) -> f64 {
        if self.navg_lifetime > 0.0 {
            (self.navg_integral / self.navg_lifetime).max(1.0)
        } else {
            self.navg_fallback as f64
        }
    }

    pub fn accumulate_navg(&mut self, live_apps: usize, dt: f64) {
        self.navg_integral += live_apps as f64 * dt;
        self.navg_lifetime += dt;
    }

    pub fn mean_placement_score(&self) -> f64 {
        if self.score_time > 0.0 {
            self.score_integral / self.score_time
        } else {
            1.0
        }
    }
}

/// Evaluation context for rho: where the app runs and how its slowdown is
/// reported. `slowdown_scale` multiplies every S(G) used in T_sh; honest
/// evaluation uses 1.0.
#[derive(Debug, Clone, Copy)]
pub struct RhoCtx<'a> {
    pub now: f64,
    pub cluster: &'a ClusterSpec,
    pub profile: &'a SlowdownProfile,
    pub slowdown_scale: f64,
}

impl<'a> RhoCtx<'a> {
    pub fn new(now: f64, cluster: &'a ClusterSpec, profile: &'a SlowdownProfile) -> Self {
        Self { now, cluster, profile, slowdown_scale: 1.0 }
    }
}

/// Scheme-appropriate rho for the app holding exactly `g`.
pub fn rho(app: &AppSpec, rt: &AppRuntime, g: &GpuSet, ctx: &RhoCtx) -> Result<f64> {
    match &app.scheme {
        TuningScheme::SingleJob => rho_single_job(app, rt, g, ctx),
        TuningScheme::SuccessiveHalving { .. } => rho_successive_halving(app, rt, g, ctx),
        TuningScheme::PerfCurve { .. } => rho_perf_curve(app, rt, g, ctx),
    }
}

/// rho for a one-job app: T_sh = elapsed + iter_left * iter_time(g),
/// T_id = T_cluster * N_avg.
pub fn rho_single_job(app: &AppSpec, rt: &AppRuntime, g: &GpuSet, ctx: &RhoCtx) -> Result<f64> {
    let job = &app.jobs[0];
    let state = &rt.jobs[0];
    if job.total_iters <= 0.0 {
        return Err(Error::DegenerateJob);
    }
    let navg = rt.navg();
    if navg < 1.0 {
        return Err(Error::InvalidNavg(navg));
    }
    let iter_left = (job.total_iters - state.iters_done).max(0.0);
    let t_cluster = job.total_iters * job.serial_iter_time
        / (ctx.cluster.total_gpus().min(job.job_demand_max as usize) as f64);
    let t_id = t_cluster * navg;
    let elapsed = ctx.now - rt.t_start;
    if iter_left <= 0.0 {
        return Ok(elapsed / t_id);
    }
    if g.is_empty() {
        return Ok(f64::INFINITY);
    }
    let s = slowdown(ctx.profile, g)? * ctx.slowdown_scale;
    let iter_time = job.serial_iter_time * s / (g.count().min(job.job_demand_max as usize) as f64);
    Ok((elapsed + iter_left * iter_time) / t_id)
}

struct PhaseJob {
    iters: f64,
    serial: f64,
    demand: u32,
}

/// Remaining time of one phase: with at least as many GPUs as jobs, every
/// job runs in parallel on its greedy share; with fewer GPUs, single-GPU job
/// executions are serialized and the phase lasts the work-conserving bound
/// max(longest job, total work / GPUs).
fn phase_time(jobs: &[PhaseJob], g: &GpuSet, ctx: &RhoCtx) -> Result<f64> {
    let active: Vec<&PhaseJob> = jobs.iter().filter(|j| j.iters > 0.0).collect();
    if active.is_empty() {
        return Ok(0.0);
    }
    let m = g.count();
    if m == 0 {
        return Ok(f64::INFINITY);
    }
    if m >= active.len() {
        // `active` arrives sorted by remaining work descending.
        let shares = split_shares(g, &active.iter().map(|j| j.demand).collect::<Vec<_>>());
        let mut t = 0.0f64;
        for (job, share) in active.iter().zip(&shares) {
            let s = slowdown(ctx.profile, share)? * ctx.slowdown_scale;
            let k = share.count().min(job.demand as usize) as f64;
            t = t.max(job.iters * job.serial * s / k);
        }
        Ok(t)
    } else {
        let works: Vec<f64> = active.iter().map(|j| j.iters * j.serial).collect();
        let total: f64 = works.iter().sum();
        let longest = works.iter().cloned().fold(0.0, f64::max);
        Ok(longest.max(total / m as f64))
    }
}

/// Split `g` into one consolidated share per job (jobs already ordered by
/// remaining work descending): each job takes up to its demand cap, the
/// remaining pool is divided evenly with earlier jobs rounding up.
fn split_shares(g: &GpuSet, demands: &[u32]) -> Vec<GpuSet> {
    let mut pool = g.clone();
    let mut shares = Vec::with_capacity(demands.len());
    for (i, &demand) in demands.iter().enumerate() {
        let jobs_left = demands.len() - i;
        let quota = (pool.count().div_ceil(jobs_left)).min(demand as usize);
        let share = crate::cluster::pick_consolidated(&pool, quota);
        pool = pool.difference(&share);
        shares.push(share);
    }
    shares
}

/// Remaining iterations a job must run before its next scheme threshold.
fn job_iters_to_threshold(app: &AppSpec, rt: &AppRuntime, job_idx: usize) -> f64 {
    let job = &app.jobs[job_idx];
    let state = &rt.jobs[job_idx];
    match &app.scheme {
        TuningScheme::SingleJob => (job.total_iters - state.iters_done).max(0.0),
        TuningScheme::SuccessiveHalving { iters_per_phase, .. } => {
            (iters_per_phase[rt.phase] - state.phase_iters_done).max(0.0)
        }
        TuningScheme::PerfCurve { loss_margin } => {
            (forecast_iters(job, *loss_margin) - state.iters_done).max(0.0)
        }
    }
}

/// Greedy job-level split of an app-level allocation: live jobs sorted by
/// remaining work descending each receive up to their demand cap, placed as
/// consolidated as the pool allows. Returns per-job sets plus the surplus
/// that no job can use.
pub fn job_level_assign(
    app: &AppSpec,
    rt: &AppRuntime,
    g: &GpuSet,
) -> (BTreeMap<usize, GpuSet>, GpuSet) {
    let mut order: Vec<usize> = rt.live_jobs();
    order.sort_by(|&a, &b| {
        let wa = job_iters_to_threshold(app, rt, a) * app.jobs[a].serial_iter_time;
        let wb = job_iters_to_threshold(app, rt, b) * app.jobs[b].serial_iter_time;
        wb.total_cmp(&wa).then(a.cmp(&b))
    });
    let mut pool = g.clone();
    let mut out = BTreeMap::new();
    for (i, &job_idx) in order.iter().enumerate() {
        let jobs_left = order.len() - i;
        let quota = (pool.count().div_ceil(jobs_left))
            .min(app.jobs[job_idx].job_demand_max as usize);
        let share = crate::cluster::pick_consolidated(&pool, quota);
        pool = pool.difference(&share);
        out.insert(job_idx, share);
    }
    (out, pool)
}

/// rho for a successive-halving app. The current phase is priced with the
/// survivors' actual serial times; future phases use the median surviving
/// job. T_id = (B / min(R, app_demand_max)) * N_avg.
pub fn rho_successive_halving(
    app: &AppSpec,
    rt: &AppRuntime,
    g: &GpuSet,
    ctx: &RhoCtx,
) -> Result<f64> {
    let TuningScheme::SuccessiveHalving { budget_gpu_seconds, iters_per_phase } = &app.scheme
    else {
        return Err(Error::InvalidParameter("scheme is not successive halving".into()));
    };
    let live = rt.live_jobs();
    if live.is_empty() || rt.phase >= iters_per_phase.len() {
        return Err(Error::AppFinished);
    }
    let navg = rt.navg();
    if navg < 1.0 {
        return Err(Error::InvalidNavg(navg));
    }
    let t_cluster = budget_gpu_seconds
        / (ctx.cluster.total_gpus().min(app.app_demand_max as usize) as f64);
    let t_id = t_cluster * navg;
    let elapsed = ctx.now - rt.t_start;
    if g.is_empty() {
        return Ok(f64::INFINITY);
    }

    // Current phase at actual serial times, ordered by remaining work.
    let mut current: Vec<PhaseJob> = live
        .iter()
        .map(|&j| PhaseJob {
            iters: (iters_per_phase[rt.phase] - rt.jobs[j].phase_iters_done).max(0.0),
            serial: app.jobs[j].serial_iter_time,
            demand: app.jobs[j].job_demand_max,
        })
        .collect();
    current.sort_by(|a, b| (b.iters * b.serial).total_cmp(&(a.iters * a.serial)));
    let mut t_rest = phase_time(&current, g, ctx)?;

    // Future phases at the median surviving job.
    let mut serials: Vec<f64> = live.iter().map(|&j| app.jobs[j].serial_iter_time).collect();
    serials.sort_by(f64::total_cmp);
    let med_serial = lower_median(&serials);
    let mut demands: Vec<u32> = live.iter().map(|&j| app.jobs[j].job_demand_max).collect();
    demands.sort_unstable();
    let med_demand = demands[(demands.len() - 1) / 2];
    let mut n_jobs = live.len();
    for &phase_iters in &iters_per_phase[rt.phase + 1..] {
        n_jobs = n_jobs.div_ceil(2);
        let jobs: Vec<PhaseJob> = (0..n_jobs)
            .map(|_| PhaseJob { iters: phase_iters, serial: med_serial, demand: med_demand })
            .collect();
        t_rest += phase_time(&jobs, g, ctx)?;
    }
    Ok((elapsed + t_rest) / t_id)
}

/// rho for a perf-curve app: every live job runs to its forecast stopping
/// iteration; the slowest live job sets the finish time. T_id uses the total
/// forecast work as the budget.
pub fn rho_perf_curve(app: &AppSpec, rt: &AppRuntime, g: &GpuSet, ctx: &RhoCtx) -> Result<f64> {
    let TuningScheme::PerfCurve { loss_margin } = &app.scheme else {
        return Err(Error::InvalidParameter("scheme is not perf-curve".into()));
    };
    let live = rt.live_jobs();
    if live.is_empty() {
        return Err(Error::AppFinished);
    }
    let navg = rt.navg();
    if navg < 1.0 {
        return Err(Error::InvalidNavg(navg));
    }
    // Forecast work over all jobs; stopped jobs contribute what they ran.
    let budget: f64 = app
        .jobs
        .iter()
        .zip(&rt.jobs)
        .map(|(j, s)| {
            let f = if s.live { forecast_iters(j, *loss_margin) } else { s.iters_done };
            f * j.serial_iter_time
        })
        .sum();
    let t_cluster =
        budget / (ctx.cluster.total_gpus().min(app.app_demand_max as usize) as f64);
    let t_id = t_cluster * navg;
    let elapsed = ctx.now - rt.t_start;

    let mut jobs: Vec<PhaseJob> = live
        .iter()
        .map(|&j| PhaseJob {
            iters: (forecast_iters(&app.jobs[j], *loss_margin) - rt.jobs[j].iters_done).max(0.0),
            serial: app.jobs[j].serial_iter_time,
            demand: app.jobs[j].job_demand_max,
        })
        .collect();
    if jobs.iter().all(|j| j.iters <= 0.0) {
        return Ok(elapsed / t_id);
    }
    if g.is_empty() {
        return Ok(f64::INFINITY);
    }
    jobs.sort_by(|a, b| (b.iters * b.serial).total_cmp(&(a.iters * a.serial)));
    Ok((elapsed + phase_time(&jobs, g, ctx)?) / t_id)
}

/// What happened while advancing an app.
#[derive(Debug, Clone, Default)]
pub struct ProgressReport {
    pub iters_completed: Vec<f64>,
    pub phase_transitions: usize,
    /// Number of internal rate changes (job or phase thresholds reached).
    pub thresholds_hit: usize,
    pub finished: bool,
}

const ITER_EPS: f64 = 1e-9;

/// Whether a progress value has reached a threshold, up to relative
/// floating-point slack.
fn reached(done: f64, target: f64) -> bool {
    target - done <= ITER_EPS * target.max(1.0)
}

/// Advance the app by `dt` seconds of productive time on `allocation`.
/// Rates are piecewise constant between internal thresholds (job or phase
/// completions); the split of GPUs over jobs is recomputed at each one.
pub fn advance(
    app: &AppSpec,
    rt: &mut AppRuntime,
    allocation: &GpuSet,
    dt: f64,
    profile: &SlowdownProfile,
) -> Result<ProgressReport> {
    if dt < 0.0 {
        return Err(Error::InvalidParameter("advance with negative dt".into()));
    }
    let mut report = ProgressReport {
        iters_completed: vec![0.0; app.jobs.len()],
        ..Default::default()
    };
    let mut remaining = dt;
    loop {
        if rt.status == AppStatus::Finished {
            rt.gpu_seconds += remaining * allocation.count() as f64;
            break;
        }
        // Per-job rates under the current split; jobs already at their
        // threshold idle until the app reacts.
        let (assign, _) = job_level_assign(app, rt, allocation);
        let live = rt.live_jobs();
        let mut rates = vec![0.0f64; app.jobs.len()];
        let mut needs = vec![0.0f64; app.jobs.len()];
        for &j in &live {
            needs[j] = job_iters_to_threshold(app, rt, j);
            let share = &assign[&j];
            if share.is_empty() || needs[j] <= 0.0 {
                continue;
            }
            let s = slowdown(profile, share)?;
            let k = share.count().min(app.jobs[j].job_demand_max as usize) as f64;
            rates[j] = k / (app.jobs[j].serial_iter_time * s);
        }
        // Earliest threshold crossing under these rates.
        let mut t_next = f64::INFINITY;
        for &j in &live {
            if rates[j] > 0.0 {
                t_next = t_next.min(needs[j] / rates[j]);
            }
        }
        let step = remaining.min(t_next);
        if step > 0.0 && step >= t_next {
            report.thresholds_hit += 1;
        }
        if step > 0.0 {
            for &j in &live {
                if rates[j] == 0.0 {
                    continue;
                }
                // snap exactly onto the threshold to keep event times and
                // progress consistent
                let gain = (rates[j] * step).min(needs[j]);
                let gain = if needs[j] - gain <= ITER_EPS * needs[j].max(1.0) {
                    needs[j]
                } else {
                    gain
                };
                rt.jobs[j].iters_done += gain;
                rt.jobs[j].phase_iters_done += gain;
                report.iters_completed[j] += gain;
            }
            rt.gpu_seconds += step * allocation.count() as f64;
            remaining -= step;
        }
        apply_thresholds(app, rt, &mut report);
        if remaining <= 1e-12 || (t_next.is_infinite() && step == 0.0) {
            if remaining > 0.0 && t_next.is_infinite() {
                // Nothing can progress; the held GPUs still burn time.
                rt.gpu_seconds += remaining * allocation.count() as f64;
            }
            break;
        }
    }
    report.finished = rt.status == AppStatus::Finished;
    Ok(report)
}

/// Process any job/phase thresholds that have been reached.
fn apply_thresholds(app: &AppSpec, rt: &mut AppRuntime, report: &mut ProgressReport) {
    match &app.scheme {
        TuningScheme::SingleJob => {
            let job = &app.jobs[0];
            if rt.jobs[0].live && reached(rt.jobs[0].iters_done, job.total_iters) {
                rt.jobs[0].iters_done = job.total_iters;
                rt.jobs[0].live = false;
                rt.status = AppStatus::Finished;
            }
        }
        TuningScheme::SuccessiveHalving { iters_per_phase, .. } => {
            loop {
                let target = iters_per_phase[rt.phase];
                let live = rt.live_jobs();
                let done = live
                    .iter()
                    .all(|&j| reached(rt.jobs[j].phase_iters_done, target));
                if !done {
                    break;
                }
                for &j in &live {
                    rt.jobs[j].phase_iters_done = 0.0;
                }
                if rt.phase + 1 >= iters_per_phase.len() {
                    for &j in &live {
                        rt.jobs[j].live = false;
                    }
                    rt.status = AppStatus::Finished;
                    break;
                }
                // Keep the better-converging half: lowest loss value first.
                let survivors = live.len().div_ceil(2);
                let mut ranked = live.clone();
                ranked.sort_by(|&a, &b| {
                    let la = app.jobs[a].loss.eval(rt.jobs[a].iters_done);
                    let lb = app.jobs[b].loss.eval(rt.jobs[b].iters_done);
                    la.total_cmp(&lb).then(a.cmp(&b))
                });
                for &j in ranked.iter().skip(survivors) {
                    rt.jobs[j].live = false;
                }
                rt.phase += 1;
                report.phase_transitions += 1;
            }
        }
        TuningScheme::PerfCurve { loss_margin } => {
            for j in 0..app.jobs.len() {
                if rt.jobs[j].live
                    && reached(rt.jobs[j].iters_done, forecast_iters(&app.jobs[j], *loss_margin))
                {
                    rt.jobs[j].live = false;
                }
            }
            if rt.jobs.iter().all(|s| !s.live) {
                rt.status = AppStatus::Finished;
            }
        }
    }
}

/// Time until this app's next internal threshold (job completion or phase
/// boundary) under the given allocation, or None if it cannot progress.
pub fn time_to_next_threshold(
    app: &AppSpec,
    rt: &AppRuntime,
    allocation: &GpuSet,
    profile: &SlowdownProfile,
) -> Option<f64> {
    if rt.status == AppStatus::Finished {
        return None;
    }
    let (assign, _) = job_level_assign(app, rt, allocation);
    let mut t_next = f64::INFINITY;
    for &j in &rt.live_jobs() {
        let share = &assign[&j];
        if share.is_empty() {
            continue;
        }
        let s = slowdown(profile, share).ok()?;
        let k = share.count().min(app.jobs[j].job_demand_max as usize) as f64;
        let rate = k / (app.jobs[j].serial_iter_time * s);
        let need = job_iters_to_threshold(app, rt, j);
        if rate > 0.0 && need > 0.0 {
            t_next = t_next.min(need / rate);
        }
    }
    t_next.is_finite().then_some(t_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::GpuId;

    fn flat_loss() -> LossCurve {
        LossCurve { a: 1.0, b: 1.0, c: 0.0 }
    }

    fn single_job_app(serial: f64, total: f64, demand: u32) -> AppSpec {
        AppSpec {
            id: AppId(0),
            arrival_time: 0.0,
            jobs: vec![JobSpec {
                serial_iter_time: serial,
                total_iters: total,
                iters_done: 0.0,
                job_demand_max: demand,
                loss: flat_loss(),
            }],
            scheme: TuningScheme::SingleJob,
            class: AppClass::Compute,
            app_demand_max: demand,
        }
    }

    /// The worked 16-GPU successive-halving app: 4 jobs at 80/100/100/120 s
    /// per iteration, a 10000 GPU-second budget, demand cap 8 per job.
    pub(crate) fn sh_example_app() -> AppSpec {
        let serials = [80.0, 100.0, 100.0, 120.0];
        let jobs: Vec<JobSpec> = serials
            .iter()
            .map(|&s| JobSpec {
                serial_iter_time: s,
                total_iters: 60.0,
                iters_done: 0.0,
                job_demand_max: 8,
                loss: flat_loss(),
            })
            .collect();
        let iters = derive_phase_iters(10_000.0, &serials);
        AppSpec {
            id: AppId(0),
            arrival_time: 0.0,
            jobs,
            scheme: TuningScheme::SuccessiveHalving {
                budget_gpu_seconds: 10_000.0,
                iters_per_phase: iters,
            },
            class: AppClass::Compute,
            app_demand_max: 16,
        }
    }

    fn runtime_with_navg(app: &AppSpec, navg: usize) -> AppRuntime {
        AppRuntime::new(app, 0.0, navg)
    }

    fn gpus(n: usize) -> GpuSet {
        // n GPUs inside one 16-GPU machine (4 slots x 4)
        (0..n).map(|i| GpuId::new(0, 0, i / 4, i % 4)).collect()
    }

    #[test]
    fn phase_iters_reproduce_worked_example() {
        let iters = derive_phase_iters(10_000.0, &[80.0, 100.0, 100.0, 120.0]);
        assert_eq!(iters, vec![8.0, 16.0, 36.0]);
    }

    #[test]
    fn single_job_rho_matches_scalar_oracle() {
        // iter_left=100, serial=10 s, 4 same-machine GPUs, S=1, elapsed=0,
        // T_id=500 -> T_sh=250, rho=0.5
        let cluster = ClusterSpec::uniform(1, 4, 4, 1);
        let app = single_job_app(10.0, 100.0, 4);
        let mut rt = runtime_with_navg(&app, 2);
        rt.accumulate_navg(2, 100.0); // navg = 2 -> T_id = 1000/4 * 2 = 500
        let profile = SlowdownProfile::compute_class();
        let ctx = RhoCtx::new(0.0, &cluster, &profile);
        let g: GpuSet = (0..4).map(|s| GpuId::new(0, 0, s, 0)).collect();
        let rho_v = rho_single_job(&app, &rt, &g, &ctx).unwrap();
        assert!((rho_v - 0.5).abs() < 1e-12, "rho = {rho_v}");

        // same but spanning machines with S=2 -> T_sh=500, rho=1.0
        let net = SlowdownProfile::network_class();
        let ctx2 = RhoCtx::new(0.0, &cluster, &net);
        let spread: GpuSet = (0..4).map(|m| GpuId::new(0, m, 0, 0)).collect();
        let rho_s = rho_single_job(&app, &rt, &spread, &ctx2).unwrap();
        assert!((rho_s - 1.0).abs() < 1e-12, "rho = {rho_s}");

        // no GPUs anywhere -> unbounded
        let rho_inf = rho_single_job(&app, &rt, &GpuSet::new(), &ctx).unwrap();
        assert!(rho_inf.is_infinite());
    }

    #[test]
    fn sh_rho_reproduces_bid_table() {
        // Frozen values from phase-by-phase hand evaluation:
        //   count 2: 1600 + 1600 + 1800 = 5000 over T_id 2500 -> 2
        //   count 1: 3200 + 3200 + 3600 = 10000 -> 4
        //   count 4: 960 + 800 + 900 = 2660 -> 1.064
        //   count 8: 480 + 400 + 450 = 1330 -> 0.532
        //   count 16: 240 + 200 + 450 = 890 -> 0.356
        let cluster = ClusterSpec::uniform(1, 1, 4, 4);
        let app = sh_example_app();
        let mut rt = runtime_with_navg(&app, 4);
        rt.accumulate_navg(4, 1.0);
        let profile = SlowdownProfile::compute_class();
        let ctx = RhoCtx::new(0.0, &cluster, &profile);
        for (count, expect) in [(1, 4.0), (2, 2.0), (4, 1.064), (8, 0.532), (16, 0.356)] {
            let got = rho_successive_halving(&app, &rt, &gpus(count), &ctx).unwrap();
            assert!(
                (got - expect).abs() < 1e-9,
                "count {count}: got {got}, expect {expect}"
            );
        }
    }

    #[test]
    fn sh_t_id_is_2500() {
        let cluster = ClusterSpec::uniform(1, 1, 4, 4);
        let app = sh_example_app();
        let TuningScheme::SuccessiveHalving { budget_gpu_seconds, .. } = &app.scheme else {
            unreachable!()
        };
        let t_cluster =
            budget_gpu_seconds / cluster.total_gpus().min(app.app_demand_max as usize) as f64;
        assert_eq!(t_cluster * 4.0, 2500.0);
    }

    #[test]
    fn job_level_assign_examples() {
        // 1 job, 2 GPUs in one machine -> job gets both
        let app = single_job_app(10.0, 100.0, 4);
        let rt = runtime_with_navg(&app, 1);
        let g: GpuSet = [GpuId::new(0, 0, 0, 0), GpuId::new(0, 0, 0, 1)]
            .into_iter()
            .collect();
        let (assign, rest) = job_level_assign(&app, &rt, &g);
        assert_eq!(assign[&0].count(), 2);
        assert!(rest.is_empty());

        // demand cap: 1 job with cap 1, 3 GPUs -> 1 assigned, 2 unassigned
        let app1 = single_job_app(10.0, 100.0, 1);
        let rt1 = runtime_with_navg(&app1, 1);
        let g3: GpuSet = (0..3).map(|i| GpuId::new(0, 0, 0, i)).collect();
        let (assign1, rest1) = job_level_assign(&app1, &rt1, &g3);
        assert_eq!(assign1[&0].count(), 1);
        assert_eq!(rest1.count(), 2);

        // 2 equal jobs over a 2-GPU machine plus two singles: each job's set
        // minimizes its own span
        let mut app2 = single_job_app(10.0, 100.0, 2);
        app2.jobs.push(app2.jobs[0].clone());
        app2.app_demand_max = 4;
        let rt2 = runtime_with_navg(&app2, 1);
        let pool: GpuSet = [
            GpuId::new(0, 0, 0, 0),
            GpuId::new(0, 0, 0, 1),
            GpuId::new(0, 1, 0, 0),
            GpuId::new(0, 2, 0, 0),
        ]
        .into_iter()
        .collect();
        let (assign2, rest2) = job_level_assign(&app2, &rt2, &pool);
        assert!(rest2.is_empty());
        let spans: Vec<_> = [0, 1]
            .iter()
            .map(|j| crate::cluster::span_level(&assign2[j]).unwrap())
            .collect();
        assert_eq!(spans[0], crate::cluster::SpanLevel::Slot);
        assert_eq!(spans[1], crate::cluster::SpanLevel::Rack);
    }

    #[test]
    fn advance_basics() {
        let cluster = ClusterSpec::uniform(1, 1, 1, 4);
        let _ = cluster;
        let app = single_job_app(10.0, 100.0, 4);
        let mut rt = runtime_with_navg(&app, 1);
        let profile = SlowdownProfile::compute_class();
        let one: GpuSet = [GpuId::new(0, 0, 0, 0)].into_iter().collect();

        // dt=0 is the identity
        let r0 = advance(&app, &mut rt, &one, 0.0, &profile).unwrap();
        assert_eq!(r0.iters_completed[0], 0.0);

        // one serial iteration time on one GPU -> exactly one iteration
        let r1 = advance(&app, &mut rt, &one, 10.0, &profile).unwrap();
        assert!((r1.iters_completed[0] - 1.0).abs() < 1e-12);
        assert!((rt.gpu_seconds - 10.0).abs() < 1e-12);

        assert!(advance(&app, &mut rt, &one, -1.0, &profile).is_err());
    }

    #[test]
    fn advance_is_additive_in_dt() {
        let app = sh_example_app();
        let profile = SlowdownProfile::compute_class();
        let alloc = gpus(3);

        let mut whole = runtime_with_navg(&app, 4);
        advance(&app, &mut whole, &alloc, 5000.0, &profile).unwrap();

        let mut parts = runtime_with_navg(&app, 4);
        for dt in [123.0, 1000.0, 7.5, 2869.5, 1000.0] {
            advance(&app, &mut parts, &alloc, dt, &profile).unwrap();
        }
        for (w, p) in whole.jobs.iter().zip(&parts.jobs) {
            assert!((w.iters_done - p.iters_done).abs() < 1e-6);
            assert_eq!(w.live, p.live);
        }
        assert_eq!(whole.phase, parts.phase);
        assert!((whole.gpu_seconds - parts.gpu_seconds).abs() < 1e-6);
    }

    #[test]
    fn sh_phase_end_kills_worse_half() {
        // 4 jobs, highest loss at the phase boundary die
        let mut app = sh_example_app();
        for (i, j) in app.jobs.iter_mut().enumerate() {
            j.loss = LossCurve { a: 1.0 + i as f64, b: 1.0, c: 0.0 };
        }
        let profile = SlowdownProfile::compute_class();
        let mut rt = runtime_with_navg(&app, 4);
        // run phase 1 to completion on 4 GPUs
        advance(&app, &mut rt, &gpus(4), 961.0, &profile).unwrap();
        assert_eq!(rt.phase, 1);
        let live = rt.live_jobs();
        // jobs 0 and 1 have the smallest loss curves
        assert_eq!(live, vec![0, 1]);
    }

    #[test]
    fn perf_curve_degenerate_matches_single_job() {
        let cluster = ClusterSpec::uniform(1, 2, 2, 2);
        let mut app = single_job_app(10.0, 100.0, 4);
        // margin so large the forecast hits total_iters
        app.scheme = TuningScheme::PerfCurve { loss_margin: 0.001 };
        assert_eq!(forecast_iters(&app.jobs[0], 0.001), 100.0);
        let rt = runtime_with_navg(&app, 2);
        let profile = SlowdownProfile::compute_class();
        let ctx = RhoCtx::new(0.0, &cluster, &profile);
        let g: GpuSet = (0..4).map(|i| GpuId::new(0, 0, i / 2, i % 2)).collect();
        let pc = rho_perf_curve(&app, &rt, &g, &ctx).unwrap();
        let mut app_sj = app.clone();
        app_sj.scheme = TuningScheme::SingleJob;
        let sj = rho_single_job(&app_sj, &rt, &g, &ctx).unwrap();
        assert!((pc - sj).abs() < 1e-12);
    }

    #[test]
    fn rho_monotone_in_gpus_at_fixed_span() {
        let cluster = ClusterSpec::uniform(1, 1, 4, 4);
        let app = single_job_app(10.0, 100.0, 16);
        let rt = runtime_with_navg(&app, 2);
        let net = SlowdownProfile::network_class();
        let ctx = RhoCtx::new(0.0, &cluster, &net);
        let mut prev = f64::INFINITY;
        // growing within one slot, then machine: span never shrinks rho's
        // denominator, count only helps
        for n in 1..=16 {
            let g = gpus(n);
            let r = rho_single_job(&app, &rt, &g, &ctx).unwrap();
            assert!(r <= prev + 1e-12, "rho increased at {n} GPUs");
            prev = r;
        }
    }

    #[test]
    fn remaining_time_halves_with_doubled_gpus_same_span() {
        let cluster = ClusterSpec::uniform(1, 2, 2, 4);
        let app = single_job_app(7.0, 50.0, 16);
        let rt = runtime_with_navg(&app, 3);
        let net = SlowdownProfile::network_class();
        let ctx = RhoCtx::new(0.0, &cluster, &net);
        // 2 GPUs on machines 0 and 1 vs 4 GPUs on the same machines
        let g2: GpuSet = (0..2).map(|m| GpuId::new(0, m, 0, 0)).collect();
        let g4: GpuSet = (0..2)
            .flat_map(|m| (0..2).map(move |g| GpuId::new(0, m, 0, g)))
            .collect();
        let r2 = rho_single_job(&app, &rt, &g2, &ctx).unwrap();
        let r4 = rho_single_job(&app, &rt, &g4, &ctx).unwrap();
        // elapsed = 0 so rho is proportional to remaining time
        assert!((r2 / r4 - 2.0).abs() < 1e-12);
    }
}
