//! Pluggable scheduler policies behind one decide() interface, plus the
//! SI/PE/EF fairness-property checkers used to reproduce the counterexample
//! instances.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::app::{
    job_level_assign, rho, AppId, AppRuntime, AppSpec, RhoCtx, TuningScheme,
};
use crate::auction::{
    for_each_assignment, run_round, OracleApp, RoundApp, RoundParams,
};
use crate::bidding::{enumerate_candidates, LieSlowdown, Offer};
use crate::cluster::{
    pick_consolidated, placement_score, ClusterSpec, GpuId, GpuSet, SlowdownProfile,
};
use crate::error::{Error, Result};

/// Which allocation rule runs the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Themis,
    Gandiva,
    Tiresias,
    Optimus,
    Slaq,
    Drf,
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "themis" => PolicyKind::Themis,
            "gandiva" => PolicyKind::Gandiva,
            "tiresias" => PolicyKind::Tiresias,
            "optimus" => PolicyKind::Optimus,
            "slaq" => PolicyKind::Slaq,
            "drf" => PolicyKind::Drf,
            other => {
                return Err(Error::InvalidParameter(format!("unknown scheduler {other}")))
            }
        })
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PolicyKind::Themis => "themis",
            PolicyKind::Gandiva => "gandiva",
            PolicyKind::Tiresias => "tiresias",
            PolicyKind::Optimus => "optimus",
            PolicyKind::Slaq => "slaq",
            PolicyKind::Drf => "drf",
        };
        f.write_str(s)
    }
}

/// Policy variant with its parameters. Every policy shares the same lease
/// mechanism so comparisons isolate the allocation rule.
#[derive(Debug, Clone, Copy)]
pub struct SchedulerPolicy {
    pub kind: PolicyKind,
    /// Round-by-round filtering knob (Themis only).
    pub f: f64,
    pub lease_duration: f64,
    pub candidate_cap: usize,
    pub theta: f64,
}

/// What a policy sees for one live app when deciding.
pub struct PolicyApp<'a> {
    pub spec: &'a AppSpec,
    pub rt: &'a AppRuntime,
    pub profile: &'a SlowdownProfile,
    pub lie: Option<LieSlowdown>,
}

impl<'a> PolicyApp<'a> {
    fn headroom(&self, extra: usize) -> usize {
        (self.spec.app_demand_max as usize)
            .saturating_sub(self.rt.allocation.count() + extra)
    }
}

/// Outcome of one decide(): newly assigned GPUs per app (leases all share
/// the policy's duration) plus auction bookkeeping when the policy ran one.
#[derive(Debug, Clone, Default)]
pub struct Decision {
    pub assignments: BTreeMap<AppId, GpuSet>,
    pub participants: Vec<AppId>,
    pub fractional_leftover: f64,
}

/// Dispatch a resource-available event to the configured policy.
#[allow(clippy::too_many_arguments)]
pub fn decide<R: Rng>(
    policy: &SchedulerPolicy,
    apps: &[PolicyApp],
    free: &GpuSet,
    now: f64,
    round: u64,
    cluster: &ClusterSpec,
    error_rng: &mut R,
    leftover_rng: &mut R,
) -> Result<Decision> {
    if free.is_empty() || apps.is_empty() {
        return Ok(Decision::default());
    }
    match policy.kind {
        PolicyKind::Themis => themis_decide(policy, apps, free, now, round, cluster, error_rng, leftover_rng),
        PolicyKind::Gandiva => gandiva_decide(policy, apps, free),
        PolicyKind::Tiresias => tiresias_decide(apps, free),
        PolicyKind::Optimus => optimus_decide(apps, free, now, cluster),
        PolicyKind::Slaq => slaq_decide(policy, apps, free),
        PolicyKind::Drf => drf_decide(apps, free),
    }
}

#[allow(clippy::too_many_arguments)]
fn themis_decide<R: Rng>(
    policy: &SchedulerPolicy,
    apps: &[PolicyApp],
    free: &GpuSet,
    now: f64,
    round: u64,
    cluster: &ClusterSpec,
    error_rng: &mut R,
    leftover_rng: &mut R,
) -> Result<Decision> {
    let round_apps: Vec<RoundApp> = apps
        .iter()
        .map(|a| RoundApp { spec: a.spec, rt: a.rt, profile: a.profile, lie: a.lie })
        .collect();
    let params = RoundParams {
        f: policy.f,
        lease_duration: policy.lease_duration,
        theta: policy.theta,
        candidate_cap: policy.candidate_cap,
    };
    let outcome = run_round(
        &round_apps,
        free,
        &params,
        now,
        round,
        cluster,
        error_rng,
        leftover_rng,
    )?;
    Ok(Decision {
        assignments: outcome.assignments,
        participants: outcome.participants,
        fractional_leftover: outcome.result.fractional_leftover,
    })
}

/// Greedy highest-placement-score-first: every app scores candidate
/// signatures over the remaining free GPUs; the best (score, then larger
/// count, then earlier arrival) pair wins until demand or GPUs run out.
fn gandiva_decide(
    policy: &SchedulerPolicy,
    apps: &[PolicyApp],
    free: &GpuSet,
) -> Result<Decision> {
    let mut decision = Decision::default();
    let mut pool = free.clone();
    loop {
        let mut best: Option<(f64, usize, f64, AppId, GpuSet)> = None;
        for a in apps {
            let extra = decision
                .assignments
                .get(&a.spec.id)
                .map(|s| s.count())
                .unwrap_or(0);
            if a.headroom(extra) == 0 {
                continue;
            }
            let offer = Offer { round: 0, gpus: pool.clone() };
            for cand in enumerate_candidates(
                &offer,
                a.spec,
                a.rt.allocation.count() + extra,
                policy.candidate_cap,
            ) {
                let score = placement_score(a.profile, &cand)?;
                let better = match &best {
                    None => true,
                    Some((s, n, arr, id, _)) => {
                        (score, cand.count(), -a.spec.arrival_time, std::cmp::Reverse(a.spec.id))
                            > (*s, *n, -*arr, std::cmp::Reverse(*id))
                    }
                };
                if better {
                    best = Some((score, cand.count(), a.spec.arrival_time, a.spec.id, cand));
                }
            }
        }
        let Some((_, _, _, app, grant)) = best else { break };
        pool = pool.difference(&grant);
        decision.assignments.entry(app).or_default().extend_from(&grant);
        if pool.is_empty() {
            break;
        }
    }
    Ok(decision)
}

/// Least attained service: apps sorted by accumulated GPU-seconds ascending
/// take free GPUs in canonical order up to their demand cap.
fn tiresias_decide(apps: &[PolicyApp], free: &GpuSet) -> Result<Decision> {
    let mut order: Vec<&PolicyApp> = apps.iter().collect();
    order.sort_by(|a, b| {
        a.rt.gpu_seconds
            .total_cmp(&b.rt.gpu_seconds)
            .then(a.spec.arrival_time.total_cmp(&b.spec.arrival_time))
            .then(a.spec.id.cmp(&b.spec.id))
    });
    let mut decision = Decision::default();
    let mut pool: Vec<GpuId> = free.iter().copied().collect();
    for a in order {
        if pool.is_empty() {
            break;
        }
        let take = a.headroom(0).min(pool.len());
        if take == 0 {
            continue;
        }
        let grant: GpuSet = pool.drain(..take).collect();
        decision.assignments.insert(a.spec.id, grant);
    }
    Ok(decision)
}

/// Shortest-remaining-time-first: each app reports its remaining time under
/// min(free, demand) consolidated GPUs; shortest goes first.
fn optimus_decide(
    apps: &[PolicyApp],
    free: &GpuSet,
    now: f64,
    cluster: &ClusterSpec,
) -> Result<Decision> {
    let mut decision = Decision::default();
    let mut pool = free.clone();
    let mut remaining: Vec<&PolicyApp> = apps.iter().filter(|a| a.headroom(0) > 0).collect();
    while !pool.is_empty() && !remaining.is_empty() {
        let mut best: Option<(f64, f64, AppId, usize, GpuSet)> = None;
        for (idx, a) in remaining.iter().enumerate() {
            let hypothetical = pick_consolidated(&pool, a.headroom(0).min(pool.count()));
            let aggregate = a.rt.allocation.union(&hypothetical);
            let ctx = RhoCtx::new(now, cluster, a.profile);
            let t_rest = remaining_time(a.spec, a.rt, &aggregate, &ctx)?;
            let better = match &best {
                None => true,
                Some((t, arr, id, _, _)) => {
                    (t_rest, a.spec.arrival_time, a.spec.id) < (*t, *arr, *id)
                }
            };
            if better {
                best = Some((t_rest, a.spec.arrival_time, a.spec.id, idx, hypothetical));
            }
        }
        let Some((t_rest, _, app, idx, grant)) = best else { break };
        if !t_rest.is_finite() || grant.is_empty() {
            break;
        }
        pool = pool.difference(&grant);
        decision.assignments.insert(app, grant);
        remaining.remove(idx);
    }
    Ok(decision)
}

/// Greedy highest-loss-decrease-first over the next lease window.
fn slaq_decide(
    policy: &SchedulerPolicy,
    apps: &[PolicyApp],
    free: &GpuSet,
) -> Result<Decision> {
    let mut decision = Decision::default();
    let mut pool = free.clone();
    let mut remaining: Vec<&PolicyApp> = apps.iter().filter(|a| a.headroom(0) > 0).collect();
    while !pool.is_empty() && !remaining.is_empty() {
        let mut best: Option<(f64, f64, AppId, usize, GpuSet)> = None;
        for (idx, a) in remaining.iter().enumerate() {
            let hypothetical = pick_consolidated(&pool, a.headroom(0).min(pool.count()));
            let aggregate = a.rt.allocation.union(&hypothetical);
            let drop = loss_decrease(a.spec, a.rt, &aggregate, policy.lease_duration, a.profile)?;
            let better = match &best {
                None => true,
                Some((d, arr, id, _, _)) => {
                    (-drop, a.spec.arrival_time, a.spec.id) < (-*d, *arr, *id)
                }
            };
            if better {
                best = Some((drop, a.spec.arrival_time, a.spec.id, idx, hypothetical));
            }
        }
        let Some((_, _, app, idx, grant)) = best else { break };
        if grant.is_empty() {
            break;
        }
        pool = pool.difference(&grant);
        decision.assignments.insert(app, grant);
        remaining.remove(idx);
    }
    Ok(decision)
}

/// Water-filling on GPU count: one free GPU at a time, in canonical order,
/// to the live app with the smallest current share. Placement-blind.
fn drf_decide(apps: &[PolicyApp], free: &GpuSet) -> Result<Decision> {
    let mut decision = Decision::default();
    let mut counts: BTreeMap<AppId, usize> = apps
        .iter()
        .map(|a| (a.spec.id, a.rt.allocation.count()))
        .collect();
    for gpu in free.iter() {
        let pick = apps
            .iter()
            .filter(|a| a.headroom(counts[&a.spec.id] - a.rt.allocation.count()) > 0)
            .min_by(|a, b| {
                counts[&a.spec.id]
                    .cmp(&counts[&b.spec.id])
                    .then(a.spec.arrival_time.total_cmp(&b.spec.arrival_time))
                    .then(a.spec.id.cmp(&b.spec.id))
            });
        let Some(a) = pick else { break };
        *counts.get_mut(&a.spec.id).unwrap() += 1;
        decision.assignments.entry(a.spec.id).or_default().insert(*gpu);
    }
    Ok(decision)
}

/// Estimated time to finish on allocation `g` from now (T_sh minus elapsed).
pub fn remaining_time(
    app: &AppSpec,
    rt: &AppRuntime,
    g: &GpuSet,
    ctx: &RhoCtx,
) -> Result<f64> {
    let r = rho(app, rt, g, ctx)?;
    if !r.is_finite() {
        return Ok(f64::INFINITY);
    }
    let t_id = t_id(app, rt, ctx);
    Ok((r * t_id - (ctx.now - rt.t_start)).max(0.0))
}

/// T_id = (total work / min(cluster, demand cap)) * N_avg, matching the rho
/// evaluators' denominator.
pub fn t_id(app: &AppSpec, rt: &AppRuntime, ctx: &RhoCtx) -> f64 {
    let cap = match &app.scheme {
        TuningScheme::SingleJob => app.jobs[0].job_demand_max,
        _ => app.app_demand_max,
    };
    let work = match &app.scheme {
        TuningScheme::SingleJob => app.jobs[0].total_iters * app.jobs[0].serial_iter_time,
        TuningScheme::SuccessiveHalving { budget_gpu_seconds, .. } => *budget_gpu_seconds,
        TuningScheme::PerfCurve { loss_margin } => app
            .jobs
            .iter()
            .zip(&rt.jobs)
            .map(|(j, s)| {
                let f = if s.live {
                    crate::app::forecast_iters(j, *loss_margin)
                } else {
                    s.iters_done
                };
                f * j.serial_iter_time
            })
            .sum(),
    };
    work / (ctx.cluster.total_gpus().min(cap as usize) as f64) * rt.navg()
}

/// Predicted aggregate loss decrease over the next `window` seconds if the
/// app ran on `g`.
fn loss_decrease(
    app: &AppSpec,
    rt: &AppRuntime,
    g: &GpuSet,
    window: f64,
    profile: &SlowdownProfile,
) -> Result<f64> {
    if g.is_empty() {
        return Ok(0.0);
    }
    let (assign, _) = job_level_assign(app, rt, g);
    let mut total = 0.0;
    for &j in &rt.live_jobs() {
        let share = &assign[&j];
        if share.is_empty() {
            continue;
        }
        let s = crate::cluster::slowdown(profile, share)?;
        let k = share.count().min(app.jobs[j].job_demand_max as usize) as f64;
        let gained = window * k / (app.jobs[j].serial_iter_time * s);
        let done = rt.jobs[j].iters_done;
        let capped = (done + gained).min(app.jobs[j].total_iters);
        total += app.jobs[j].loss.eval(done) - app.jobs[j].loss.eval(capped);
    }
    Ok(total)
}

/// Per-app fairness-property findings on one allocation snapshot.
#[derive(Debug, Clone)]
pub struct PropertyReport {
    /// Apps whose shared finish time exceeds their dedicated-1/N-slice time.
    pub si_violations: Vec<AppId>,
    /// (i, j) pairs where i would finish strictly sooner on j's allocation.
    pub ef_violations: Vec<(AppId, AppId)>,
    /// A reallocation improving at least one app and worsening none.
    pub pe_witness: Option<Vec<GpuSet>>,
}

impl PropertyReport {
    pub fn clean(&self) -> bool {
        self.si_violations.is_empty()
            && self.ef_violations.is_empty()
            && self.pe_witness.is_none()
    }
}

const PROP_TOL: f64 = 1e-9;

/// Check SI, EF and PE on a small instance: apps all present at t = 0 with
/// contention N = number of apps. Exhaustive over reallocations, exact up to
/// within-slot symmetry.
pub fn check_properties(
    apps: &[OracleApp],
    allocations: &[GpuSet],
    cluster: &ClusterSpec,
) -> Result<PropertyReport> {
    if apps.len() > 4 || cluster.total_gpus() > 12 {
        return Err(Error::OracleScaleExceeded);
    }
    if apps.len() != allocations.len() {
        return Err(Error::InvalidParameter(
            "one allocation per app required".into(),
        ));
    }
    let n = apps.len();
    let runtimes: Vec<AppRuntime> = apps
        .iter()
        .map(|a| AppRuntime::new(a.spec, 0.0, n))
        .collect();
    let finish = |i: usize, g: &GpuSet| -> Result<f64> {
        let ctx = RhoCtx::new(0.0, cluster, apps[i].profile);
        remaining_time(apps[i].spec, &runtimes[i], g, &ctx)
    };

    // SI: no slower than a dedicated best-consolidated 1/N slice.
    let slice_size = (cluster.total_gpus() / n).max(1);
    let pool = cluster.all_gpus();
    let mut si_violations = Vec::new();
    let mut current = Vec::with_capacity(n);
    for i in 0..n {
        let slice = pick_consolidated(&pool, slice_size.min(apps[i].spec.app_demand_max as usize));
        let dedicated = finish(i, &slice)?;
        let shared = finish(i, &allocations[i])?;
        current.push(shared);
        if shared > dedicated * (1.0 + PROP_TOL) {
            si_violations.push(apps[i].spec.id);
        }
    }

    // EF: i envies j if it would finish strictly sooner on j's allocation.
    let mut ef_violations = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && finish(i, &allocations[j])? < current[i] * (1.0 - PROP_TOL) {
                ef_violations.push((apps[i].spec.id, apps[j].spec.id));
            }
        }
    }

    // PE: search for a reallocation that improves someone and hurts nobody.
    let caps: Vec<usize> = apps.iter().map(|a| a.spec.app_demand_max as usize).collect();
    let mut pe_witness: Option<Vec<GpuSet>> = None;
    let mut eval_err = None;
    for_each_assignment(&pool, &caps, |assignment| {
        if pe_witness.is_some() || eval_err.is_some() {
            return;
        }
        let mut improved = false;
        for i in 0..n {
            match finish(i, &assignment[i]) {
                Ok(t) => {
                    if t > current[i] * (1.0 + PROP_TOL) {
                        return; // someone is worse off
                    }
                    if t < current[i] * (1.0 - PROP_TOL) {
                        improved = true;
                    }
                }
                Err(e) => {
                    eval_err = Some(e);
                    return;
                }
            }
        }
        if improved {
            pe_witness = Some(assignment.to_vec());
        }
    })?;
    if let Some(e) = eval_err {
        return Err(e);
    }
    // Re-verify the witness by re-evaluation before reporting it.
    if let Some(w) = &pe_witness {
        let mut improved = false;
        for i in 0..n {
            let t = finish(i, &w[i])?;
            assert!(t <= current[i] * (1.0 + PROP_TOL));
            improved |= t < current[i] * (1.0 - PROP_TOL);
        }
        assert!(improved);
    }
    Ok(PropertyReport { si_violations, ef_violations, pe_witness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::{AppClass, JobSpec, LossCurve};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_job(id: u32, class: AppClass, demand: u32, serial: f64) -> AppSpec {
        AppSpec {
            id: AppId(id),
            arrival_time: id as f64,
            jobs: vec![JobSpec {
                serial_iter_time: serial,
                total_iters: 100.0,
                iters_done: 0.0,
                job_demand_max: demand,
                loss: LossCurve { a: 1.0, b: 1.0, c: 0.0 },
            }],
            scheme: TuningScheme::SingleJob,
            class,
            app_demand_max: demand,
        }
    }

    fn policy(kind: PolicyKind) -> SchedulerPolicy {
        SchedulerPolicy {
            kind,
            f: 0.8,
            lease_duration: 600.0,
            candidate_cap: 256,
            theta: 0.0,
        }
    }

    struct Fixture {
        specs: Vec<AppSpec>,
        runtimes: Vec<AppRuntime>,
        profiles: Vec<SlowdownProfile>,
    }

    impl Fixture {
        fn apps(&self) -> Vec<PolicyApp<'_>> {
            self.specs
                .iter()
                .zip(&self.runtimes)
                .zip(&self.profiles)
                .map(|((spec, rt), profile)| PolicyApp { spec, rt, profile, lie: None })
                .collect()
        }
    }

    fn fixture(specs: Vec<AppSpec>) -> Fixture {
        let n = specs.len();
        let runtimes = specs.iter().map(|s| AppRuntime::new(s, 0.0, n)).collect();
        let profiles = specs
            .iter()
            .map(|s| match s.class {
                AppClass::Compute => SlowdownProfile::compute_class(),
                AppClass::Network => SlowdownProfile::network_class(),
            })
            .collect();
        Fixture { specs, runtimes, profiles }
    }

    #[test]
    fn tiresias_orders_by_service_then_arrival() {
        let cluster = ClusterSpec::uniform(1, 2, 1, 2);
        let mut fx = fixture(vec![
            single_job(0, AppClass::Compute, 2, 10.0),
            single_job(1, AppClass::Compute, 2, 10.0),
        ]);
        fx.runtimes[0].gpu_seconds = 500.0; // app 0 already got service
        let d = decide(
            &policy(PolicyKind::Tiresias),
            &fx.apps(),
            &cluster.all_gpus(),
            0.0,
            0,
            &cluster,
            &mut ChaCha8Rng::seed_from_u64(0),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        // app 1 (zero service) picks first, in GPU order; both demand 2
        assert_eq!(d.assignments[&AppId(1)].count(), 2);
        assert_eq!(d.assignments[&AppId(0)].count(), 2);
        let first: Vec<_> = d.assignments[&AppId(1)].iter().copied().collect();
        assert_eq!(first[0], GpuId::new(0, 0, 0, 0));
    }

    #[test]
    fn tiresias_is_placement_blind() {
        // a network app gets GPUs straddling machines without complaint
        let cluster = ClusterSpec::uniform(2, 1, 1, 1);
        let fx = fixture(vec![single_job(0, AppClass::Network, 2, 10.0)]);
        let d = decide(
            &policy(PolicyKind::Tiresias),
            &fx.apps(),
            &cluster.all_gpus(),
            0.0,
            0,
            &cluster,
            &mut ChaCha8Rng::seed_from_u64(0),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let alloc = &d.assignments[&AppId(0)];
        assert_eq!(alloc.count(), 2);
        assert_eq!(crate::cluster::span_level(alloc).unwrap(), crate::cluster::SpanLevel::CrossRack);
    }

    #[test]
    fn gandiva_prefers_consolidated_and_earlier_arrival() {
        // one free 4-GPU machine; two apps both score 1.0 on it
        let cluster = ClusterSpec::uniform(1, 1, 1, 4);
        let fx = fixture(vec![
            single_job(0, AppClass::Network, 4, 10.0),
            single_job(1, AppClass::Compute, 4, 10.0),
        ]);
        let d = decide(
            &policy(PolicyKind::Gandiva),
            &fx.apps(),
            &cluster.all_gpus(),
            0.0,
            0,
            &cluster,
            &mut ChaCha8Rng::seed_from_u64(0),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        // the earlier arrival (app 0) wins the machine
        assert_eq!(d.assignments[&AppId(0)].count(), 4);
        assert!(!d.assignments.contains_key(&AppId(1)));
    }

    #[test]
    fn gandiva_picks_consolidated_over_spread() {
        // network app chooses the 2-GPU slot over two spread GPUs
        let cluster = ClusterSpec::new(vec![vec![vec![2]], vec![vec![1]], vec![vec![1]]]).unwrap();
        let fx = fixture(vec![single_job(0, AppClass::Network, 2, 10.0)]);
        let d = decide(
            &policy(PolicyKind::Gandiva),
            &fx.apps(),
            &cluster.all_gpus(),
            0.0,
            0,
            &cluster,
            &mut ChaCha8Rng::seed_from_u64(0),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let first = &d.assignments[&AppId(0)];
        assert!(first.iter().all(|g| g.rack == 0));
    }

    #[test]
    fn optimus_serves_shortest_first() {
        let cluster = ClusterSpec::uniform(1, 2, 1, 2);
        let fx = fixture(vec![
            single_job(0, AppClass::Compute, 4, 50.0), // long
            single_job(1, AppClass::Compute, 4, 5.0),  // short
        ]);
        let d = decide(
            &policy(PolicyKind::Optimus),
            &fx.apps(),
            &cluster.all_gpus(),
            0.0,
            0,
            &cluster,
            &mut ChaCha8Rng::seed_from_u64(0),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        // the short app reports min(free, demand) = 4 GPUs and wins them all
        assert_eq!(d.assignments[&AppId(1)].count(), 4);
        assert!(!d.assignments.contains_key(&AppId(0)));
    }

    #[test]
    fn slaq_feeds_steepest_curve() {
        let cluster = ClusterSpec::uniform(1, 1, 1, 2);
        let mut young = single_job(0, AppClass::Compute, 2, 10.0);
        young.jobs[0].loss = LossCurve { a: 100.0, b: 1.0, c: 0.0 }; // steep
        let mut old = single_job(1, AppClass::Compute, 2, 10.0);
        old.jobs[0].loss = LossCurve { a: 0.1, b: 1000.0, c: 0.0 }; // flat
        let fx = fixture(vec![young, old]);
        let d = decide(
            &policy(PolicyKind::Slaq),
            &fx.apps(),
            &cluster.all_gpus(),
            0.0,
            0,
            &cluster,
            &mut ChaCha8Rng::seed_from_u64(0),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(d.assignments[&AppId(0)].count(), 2);
    }

    #[test]
    fn drf_waterfills_gpu_counts() {
        let cluster = ClusterSpec::uniform(1, 2, 1, 4);
        let fx = fixture(vec![
            single_job(0, AppClass::Network, 4, 10.0),
            single_job(1, AppClass::Network, 4, 10.0),
        ]);
        let d = decide(
            &policy(PolicyKind::Drf),
            &fx.apps(),
            &cluster.all_gpus(),
            0.0,
            0,
            &cluster,
            &mut ChaCha8Rng::seed_from_u64(0),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        // alternating grants spread each app across both machines
        for id in [AppId(0), AppId(1)] {
            assert_eq!(d.assignments[&id].count(), 4);
            assert_eq!(d.assignments[&id].machines().len(), 2);
        }
    }

    #[test]
    fn drf_single_app_gets_demand() {
        let cluster = ClusterSpec::uniform(1, 2, 1, 4);
        let fx = fixture(vec![single_job(0, AppClass::Compute, 3, 10.0)]);
        let d = decide(
            &policy(PolicyKind::Drf),
            &fx.apps(),
            &cluster.all_gpus(),
            0.0,
            0,
            &cluster,
            &mut ChaCha8Rng::seed_from_u64(0),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(d.assignments[&AppId(0)].count(), 3);
    }

    #[test]
    fn themis_single_app_wins_best_row_fully() {
        let cluster = ClusterSpec::uniform(1, 1, 1, 4);
        let fx = fixture(vec![single_job(0, AppClass::Compute, 4, 10.0)]);
        let d = decide(
            &policy(PolicyKind::Themis),
            &fx.apps(),
            &cluster.all_gpus(),
            0.0,
            0,
            &cluster,
            &mut ChaCha8Rng::seed_from_u64(0),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(d.assignments[&AppId(0)].count(), 4);
    }

    #[test]
    fn all_policies_grant_disjoint_free_gpus() {
        let cluster = ClusterSpec::new(vec![vec![vec![2, 2], vec![2]], vec![vec![2]]]).unwrap();
        let fx = fixture(vec![
            single_job(0, AppClass::Network, 4, 10.0),
            single_job(1, AppClass::Compute, 3, 20.0),
            single_job(2, AppClass::Network, 2, 5.0),
        ]);
        for kind in [
            PolicyKind::Themis,
            PolicyKind::Gandiva,
            PolicyKind::Tiresias,
            PolicyKind::Optimus,
            PolicyKind::Slaq,
            PolicyKind::Drf,
        ] {
            let d = decide(
                &policy(kind),
                &fx.apps(),
                &cluster.all_gpus(),
                0.0,
                0,
                &cluster,
                &mut ChaCha8Rng::seed_from_u64(0),
                &mut ChaCha8Rng::seed_from_u64(1),
            )
            .unwrap();
            let mut seen = GpuSet::new();
            for set in d.assignments.values() {
                assert!(seen.is_disjoint(set), "{kind}: overlapping grants");
                seen.extend_from(set);
                assert!(set.is_subset(&cluster.all_gpus()));
            }
        }
    }

    /// Instance 1: two 4-GPU machines, two placement-sensitive apps spread
    /// across both machines violates SI for both.
    #[test]
    fn instance1_spread_violates_si() {
        let cluster = ClusterSpec::uniform(1, 2, 1, 4);
        let net = SlowdownProfile::network_class();
        let a = single_job(0, AppClass::Network, 4, 10.0);
        let b = single_job(1, AppClass::Network, 4, 10.0);
        let apps = [
            OracleApp { spec: &a, profile: &net },
            OracleApp { spec: &b, profile: &net },
        ];
        // DRF-style spread: each app has 2 GPUs on each machine
        let spread_a: GpuSet = [GpuId::new(0, 0, 0, 0), GpuId::new(0, 0, 0, 1),
                                GpuId::new(0, 1, 0, 0), GpuId::new(0, 1, 0, 1)]
            .into_iter().collect();
        let spread_b: GpuSet = [GpuId::new(0, 0, 0, 2), GpuId::new(0, 0, 0, 3),
                                GpuId::new(0, 1, 0, 2), GpuId::new(0, 1, 0, 3)]
            .into_iter().collect();
        let report = check_properties(&apps, &[spread_a, spread_b], &cluster).unwrap();
        assert_eq!(report.si_violations, vec![AppId(0), AppId(1)]);

        // the min-max-rho allocation is clean
        let ideal = crate::auction::offline_minmax_rho(&apps, &cluster).unwrap();
        let clean = check_properties(&apps, &ideal, &cluster).unwrap();
        assert!(clean.clean(), "{clean:?}");
    }

    /// Instance 2: compute app on the 4-GPU machine, network app across the
    /// 2-GPU machines: EF and PE both violated; swapping fixes it.
    #[test]
    fn instance2_flags_ef_and_pe() {
        let cluster = ClusterSpec::new(vec![vec![vec![4], vec![2], vec![2]]]).unwrap();
        let comp = SlowdownProfile::compute_class();
        let net = SlowdownProfile::network_class();
        let a = single_job(0, AppClass::Compute, 4, 10.0);
        let b = single_job(1, AppClass::Network, 4, 10.0);
        let apps = [
            OracleApp { spec: &a, profile: &comp },
            OracleApp { spec: &b, profile: &net },
        ];
        let on_big: GpuSet = (0..4).map(|g| GpuId::new(0, 0, 0, g)).collect();
        let on_small: GpuSet = [GpuId::new(0, 1, 0, 0), GpuId::new(0, 1, 0, 1),
                                GpuId::new(0, 2, 0, 0), GpuId::new(0, 2, 0, 1)]
            .into_iter().collect();
        let report = check_properties(&apps, &[on_big, on_small], &cluster).unwrap();
        assert_eq!(report.ef_violations, vec![(AppId(1), AppId(0))]);
        assert!(report.pe_witness.is_some());

        let ideal = crate::auction::offline_minmax_rho(&apps, &cluster).unwrap();
        let clean = check_properties(&apps, &ideal, &cluster).unwrap();
        assert!(clean.clean(), "{clean:?}");
    }

    #[test]
    fn congruent_dedicated_shares_satisfy_everything() {
        let cluster = ClusterSpec::uniform(1, 2, 1, 4);
        let net = SlowdownProfile::network_class();
        let a = single_job(0, AppClass::Network, 4, 10.0);
        let b = single_job(1, AppClass::Network, 4, 10.0);
        let apps = [
            OracleApp { spec: &a, profile: &net },
            OracleApp { spec: &b, profile: &net },
        ];
        let m0: GpuSet = (0..4).map(|g| GpuId::new(0, 0, 0, g)).collect();
        let m1: GpuSet = (0..4).map(|g| GpuId::new(0, 1, 0, g)).collect();
        let report = check_properties(&apps, &[m0, m1], &cluster).unwrap();
        assert!(report.clean(), "{report:?}");
    }

    #[test]
    fn property_checker_rejects_large_instances() {
        let cluster = ClusterSpec::uniform(1, 4, 1, 4); // 16 GPUs > 12
        let comp = SlowdownProfile::compute_class();
        let a = single_job(0, AppClass::Compute, 4, 10.0);
        let apps = [OracleApp { spec: &a, profile: &comp }];
        assert!(matches!(
            check_properties(&apps, &[GpuSet::new()], &cluster),
            Err(Error::OracleScaleExceeded)
        ));
    }
}
