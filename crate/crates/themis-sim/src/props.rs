//! Randomized property suites over the auction mechanism and the canonical
//! counterexample instances. Shared by the check-properties subcommand and
//! the acceptance tests.
//!
//! The proportional-fair reference used here walks every row combination
//! directly and never touches the branch-and-bound path, so solver and
//! oracle stay independent.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::app::{
    rho, AppClass, AppId, AppRuntime, AppSpec, JobSpec, LossCurve, RhoCtx, TuningScheme,
};
use crate::auction::{
    discretize_grant, hidden_payment, materialize_rows, offline_minmax_rho,
    proportional_fair, AuctionInput, OracleApp,
};
use crate::bidding::{prepare_bid, BidTable, Offer, ValuationRow};
use crate::cluster::{ClusterSpec, GpuId, GpuSet, SlowdownProfile};
use crate::error::Result;
use crate::schedulers::{check_properties, PropertyReport};

/// Exhaustive proportional-fair reference: every feasible row combination,
/// scored exactly as (infinite-rho count, product of finite rho as integer
/// mantissa times power of two); the first lexicographic optimum wins.
pub fn enumerate_pf(input: &AuctionInput) -> Vec<usize> {
    use num_bigint::BigUint;

    #[derive(PartialEq)]
    struct ExactProduct {
        inf: u32,
        mantissa: BigUint,
        exp: i64,
    }

    fn product_of(rhos: &[f64]) -> ExactProduct {
        let mut inf = 0u32;
        let mut mantissa = BigUint::from(1u32);
        let mut exp = 0i64;
        for &rho in rhos {
            if !rho.is_finite() {
                inf += 1;
                continue;
            }
            let bits = rho.to_bits();
            let raw_exp = ((bits >> 52) & 0x7ff) as i64;
            let frac = bits & 0xf_ffff_ffff_ffff;
            let (mut m, mut e) = if raw_exp == 0 {
                (frac, -1074i64)
            } else {
                (frac | (1 << 52), raw_exp - 1075)
            };
            let tz = m.trailing_zeros() as i64;
            m >>= tz;
            e += tz;
            mantissa *= m;
            exp += e;
        }
        ExactProduct { inf, mantissa, exp }
    }

    fn smaller(a: &ExactProduct, b: &ExactProduct) -> bool {
        if a.inf != b.inf {
            return a.inf < b.inf;
        }
        let bits_a = a.mantissa.bits() as i64 + a.exp;
        let bits_b = b.mantissa.bits() as i64 + b.exp;
        if bits_a != bits_b {
            return bits_a < bits_b;
        }
        if a.exp >= b.exp {
            (&a.mantissa << (a.exp - b.exp) as u64) < b.mantissa
        } else {
            a.mantissa < (&b.mantissa << (b.exp - a.exp) as u64)
        }
    }

    let n = input.participants.len();
    let mut best: Option<(ExactProduct, Vec<usize>)> = None;
    let mut choice = vec![0usize; n];

    fn feasible(offer: &GpuSet, rows: &[&ValuationRow]) -> bool {
        let free = offer.slot_counts();
        let mut used: std::collections::BTreeMap<(usize, usize, usize), usize> =
            std::collections::BTreeMap::new();
        for r in rows {
            for (slot, n) in r.allocation.slot_counts() {
                let u = used.entry(slot).or_insert(0);
                *u += n;
                if *u > free.get(&slot).copied().unwrap_or(0) {
                    return false;
                }
            }
        }
        true
    }

    fn walk(
        input: &AuctionInput,
        i: usize,
        choice: &mut Vec<usize>,
        best: &mut Option<(ExactProduct, Vec<usize>)>,
    ) {
        if i == input.participants.len() {
            let rows: Vec<&ValuationRow> = input
                .participants
                .iter()
                .zip(choice.iter())
                .map(|((_, t), &c)| &t.rows[c])
                .collect();
            if !feasible(&input.offer, &rows) {
                return;
            }
            let rhos: Vec<f64> = rows.iter().map(|r| r.rho).collect();
            let score = product_of(&rhos);
            let better = match best {
                None => true,
                Some((b, _)) => smaller(&score, b),
            };
            if better {
                *best = Some((score, choice.clone()));
            }
            return;
        }
        for j in 0..input.participants[i].1.rows.len() {
            choice[i] = j;
            walk(input, i + 1, choice, best);
        }
        choice[i] = 0;
    }

    walk(input, 0, &mut choice, &mut best);
    best.expect("empty rows always feasible").1
}

/// A randomly drawn auction instance over at most 4 apps and 8 GPUs, with
/// bid tables produced by the apps themselves (the leftover bound is a
/// property of such valuations, not of arbitrary tables). Some apps start
/// with elapsed time and a held GPU withheld from the offer.
pub fn random_instance(rng: &mut ChaCha8Rng) -> AuctionInput {
    let layouts: [Vec<Vec<Vec<u32>>>; 5] = [
        vec![vec![vec![8]]],
        vec![vec![vec![4], vec![4]]],
        vec![vec![vec![2, 2], vec![2]], vec![vec![2]]],
        vec![vec![vec![4], vec![2], vec![2]]],
        vec![vec![vec![2, 2]], vec![vec![2, 2]]],
    ];
    let cluster = ClusterSpec::new(layouts[rng.gen_range(0..layouts.len())].clone()).unwrap();
    let n_apps = rng.gen_range(1..=4usize);
    let mut held_all = GpuSet::new();
    let mut participants = Vec::with_capacity(n_apps);
    let mut held_sets = Vec::with_capacity(n_apps);
    let mut specs = Vec::with_capacity(n_apps);
    for a in 0..n_apps {
        let spec = random_app(rng, a as u32, 4);
        // at most one already-held GPU per app keeps the offer >= n_apps
        let mut held = GpuSet::new();
        if rng.gen_bool(0.4) {
            let free: Vec<GpuId> = cluster
                .all_gpus()
                .difference(&held_all)
                .iter()
                .copied()
                .collect();
            if free.len() > n_apps {
                let g = free[rng.gen_range(0..free.len())];
                held.insert(g);
                held_all.insert(g);
            }
        }
        held_sets.push(held);
        specs.push(spec);
    }
    let offer = cluster.all_gpus().difference(&held_all);
    for (a, spec) in specs.iter().enumerate() {
        let mut rt = AppRuntime::new(spec, 0.0, n_apps);
        rt.allocation = held_sets[a].clone();
        let elapsed = if rng.gen_bool(0.5) { rng.gen_range(0.0..500.0) } else { 0.0 };
        let profile = match spec.class {
            AppClass::Compute => SlowdownProfile::compute_class(),
            AppClass::Network => SlowdownProfile::network_class(),
        };
        let ctx = RhoCtx::new(elapsed, &cluster, &profile);
        let table = prepare_bid(
            spec,
            &rt,
            &Offer { round: 0, gpus: offer.clone() },
            &ctx,
            None,
            8,
        )
        .expect("bid");
        participants.push((AppId(a as u32), table));
    }
    AuctionInput { round: 0, offer, participants }
}

/// Invariants checked on each random instance.
#[derive(Debug, Default, Clone, Copy)]
pub struct AuctionInvariantStats {
    pub instances: usize,
    pub max_leftover_ratio: f64,
}

/// Run the full invariant battery on one instance. Returned Err describes
/// the violated invariant.
pub fn check_auction_invariants(
    input: &AuctionInput,
    stats: &mut AuctionInvariantStats,
) -> std::result::Result<(), String> {
    let (choice, _) = proportional_fair(input).map_err(|e| e.to_string())?;
    let reference = enumerate_pf(input);
    if choice != reference {
        return Err(format!("solver {choice:?} != enumeration {reference:?}"));
    }
    let payments = hidden_payment(input, &choice).map_err(|e| e.to_string())?;
    let concrete = materialize_rows(input, &choice);

    let mut granted = GpuSet::new();
    let mut fractional = 0.0;
    for ((app, table), (&row_idx, row)) in input
        .participants
        .iter()
        .zip(choice.iter().zip(&concrete))
    {
        if row.slot_counts() != table.rows[row_idx].allocation.slot_counts() {
            return Err("materialized row has different slot counts".into());
        }
        let c = payments[app];
        if !(c > 0.0 && c <= 1.0) {
            return Err(format!("c_{app} = {c} outside (0, 1]"));
        }
        let grant = discretize_grant(row, c);
        if !grant.is_subset(row) {
            return Err("grant outside chosen row".into());
        }
        if !granted.is_disjoint(&grant) {
            return Err("overlapping grants".into());
        }
        granted.extend_from(&grant);
        fractional += (1.0 - c) * row.count() as f64;
    }
    if !granted.is_subset(&input.offer) {
        return Err("grant outside offer".into());
    }
    let bound =
        input.offer.count() as f64 / std::f64::consts::E + input.participants.len() as f64;
    if fractional > bound + 1e-9 {
        return Err(format!("fractional leftover {fractional} exceeds bound {bound}"));
    }
    if input.offer.count() > 0 {
        stats.max_leftover_ratio = stats
            .max_leftover_ratio
            .max(fractional / input.offer.count() as f64);
    }

    // Table-level Pareto efficiency: no feasible combination improves one
    // participant without hurting another.
    let chosen_rhos: Vec<f64> = input
        .participants
        .iter()
        .zip(&choice)
        .map(|((_, t), &c)| t.rows[c].rho)
        .collect();
    let n = input.participants.len();
    let free = input.offer.slot_counts();
    let mut alt = vec![0usize; n];
    loop {
        let rows: Vec<&ValuationRow> = input
            .participants
            .iter()
            .zip(&alt)
            .map(|((_, t), &c)| &t.rows[c])
            .collect();
        let mut used: std::collections::BTreeMap<(usize, usize, usize), usize> =
            std::collections::BTreeMap::new();
        let mut ok = true;
        'feas: for r in &rows {
            for (slot, cnt) in r.allocation.slot_counts() {
                let u = used.entry(slot).or_insert(0);
                *u += cnt;
                if *u > free.get(&slot).copied().unwrap_or(0) {
                    ok = false;
                    break 'feas;
                }
            }
        }
        if ok {
            let dominates = rows
                .iter()
                .zip(&chosen_rhos)
                .all(|(r, &c)| r.rho <= c + 1e-12)
                && rows
                    .iter()
                    .zip(&chosen_rhos)
                    .any(|(r, &c)| r.rho < c - 1e-12);
            if dominates {
                return Err(format!("pf outcome dominated by {alt:?}"));
            }
        }
        let mut k = 0;
        loop {
            if k == n {
                stats.instances += 1;
                return Ok(());
            }
            alt[k] += 1;
            if alt[k] < input.participants[k].1.rows.len() {
                break;
            }
            alt[k] = 0;
            k += 1;
        }
    }
}

/// Run `count` random instances through the invariant battery.
pub fn auction_invariant_suite(
    seed: u64,
    count: usize,
) -> std::result::Result<AuctionInvariantStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = AuctionInvariantStats::default();
    for i in 0..count {
        let input = random_instance(&mut rng);
        check_auction_invariants(&input, &mut stats)
            .map_err(|e| format!("instance {i}: {e}"))?;
    }
    Ok(stats)
}

fn random_app(rng: &mut ChaCha8Rng, id: u32, demand_cap: u32) -> AppSpec {
    let demand = *[1u32, 2, 4]
        .iter()
        .filter(|&&d| d <= demand_cap)
        .nth(rng.gen_range(0..2))
        .unwrap_or(&1);
    AppSpec {
        id: AppId(id),
        arrival_time: 0.0,
        jobs: vec![JobSpec {
            serial_iter_time: rng.gen_range(4..=40) as f64,
            total_iters: rng.gen_range(50..=200) as f64,
            iters_done: 0.0,
            job_demand_max: demand,
            loss: LossCurve { a: 1.0, b: 10.0, c: 0.0 },
        }],
        scheme: TuningScheme::SingleJob,
        class: if rng.gen_bool(0.5) { AppClass::Network } else { AppClass::Compute },
        app_demand_max: demand,
    }
}

/// Epsilon-strategy-proofness trial: a misreporter scaling its whole table
/// by a constant never improves its true post-auction rho by more than the
/// value of one extra GPU on its honest grant. Returns the worst observed
/// improvement-beyond-slack (<= 0 when the property holds strictly).
pub fn strategyproofness_suite(
    seed: u64,
    instances: usize,
) -> std::result::Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_excess: f64 = f64::NEG_INFINITY;
    for trial in 0..instances {
        let cluster = ClusterSpec::new(vec![vec![vec![2, 2], vec![2]], vec![vec![2]]]).unwrap();
        let offer = cluster.all_gpus();
        let n_apps = rng.gen_range(2..=4usize);
        let specs: Vec<AppSpec> = (0..n_apps)
            .map(|i| random_app(&mut rng, i as u32, 4))
            .collect();
        let runtimes: Vec<AppRuntime> = specs
            .iter()
            .map(|s| AppRuntime::new(s, 0.0, n_apps))
            .collect();
        let profiles: Vec<SlowdownProfile> = specs
            .iter()
            .map(|s| match s.class {
                AppClass::Compute => SlowdownProfile::compute_class(),
                AppClass::Network => SlowdownProfile::network_class(),
            })
            .collect();
        let honest: Vec<BidTable> = specs
            .iter()
            .zip(&runtimes)
            .zip(&profiles)
            .map(|((s, rt), p)| {
                let ctx = RhoCtx::new(0.0, &cluster, p);
                prepare_bid(s, rt, &Offer { round: 0, gpus: offer.clone() }, &ctx, None, 64)
            })
            .collect::<Result<_>>()
            .map_err(|e| e.to_string())?;

        let run = |tables: Vec<BidTable>| -> std::result::Result<Vec<GpuSet>, String> {
            let input = AuctionInput {
                round: 0,
                offer: offer.clone(),
                participants: tables
                    .iter()
                    .map(|t| (t.app, t.clone()))
                    .collect(),
            };
            let (choice, _) = proportional_fair(&input).map_err(|e| e.to_string())?;
            let payments = hidden_payment(&input, &choice).map_err(|e| e.to_string())?;
            let concrete = materialize_rows(&input, &choice);
            Ok(input
                .participants
                .iter()
                .zip(concrete)
                .map(|((app, _), row)| discretize_grant(&row, payments[app]))
                .collect())
        };

        let honest_grants = run(honest.clone())?;
        let liar = rng.gen_range(0..n_apps);
        let true_rho = |grant: &GpuSet| -> std::result::Result<f64, String> {
            let ctx = RhoCtx::new(0.0, &cluster, &profiles[liar]);
            rho(&specs[liar], &runtimes[liar], grant, &ctx).map_err(|e| e.to_string())
        };
        let honest_rho = true_rho(&honest_grants[liar])?;
        // slack: the rho gain from one extra GPU on top of the honest grant
        let extra = offer.difference(&honest_grants[liar]);
        let slack = match extra.iter().next() {
            Some(g) => {
                let mut plus = honest_grants[liar].clone();
                plus.insert(*g);
                (honest_rho - true_rho(&plus)?).max(0.0)
            }
            None => 0.0,
        };
        for scale in [0.25, 0.5, 2.0, 4.0] {
            let mut tables = honest.clone();
            tables[liar] = BidTable {
                app: tables[liar].app,
                rows: tables[liar]
                    .rows
                    .iter()
                    .map(|r| ValuationRow {
                        allocation: r.allocation.clone(),
                        rho: r.rho * scale,
                    })
                    .collect(),
            };
            let grants = run(tables)?;
            let lie_rho = true_rho(&grants[liar])?;
            let improvement = match (honest_rho.is_finite(), lie_rho.is_finite()) {
                (true, true) => honest_rho - lie_rho,
                (false, true) => f64::INFINITY,
                _ => 0.0,
            };
            let excess = improvement - slack;
            worst_excess = worst_excess.max(excess);
            if excess > 1e-9 {
                return Err(format!(
                    "trial {trial}: scaling by {scale} improved true rho by {improvement} \
                     (slack {slack})"
                ));
            }
        }
    }
    Ok(worst_excess)
}

/// The two counterexample instances with their canonical placement-blind
/// allocations, the property reports on them, and the reports on the exact
/// min-max-rho allocations.
pub struct CounterexampleOutcome {
    pub instance1_blind: PropertyReport,
    pub instance1_ideal: PropertyReport,
    pub instance2_blind: PropertyReport,
    pub instance2_ideal: PropertyReport,
}

fn counterexample_app(id: u32, class: AppClass) -> AppSpec {
    AppSpec {
        id: AppId(id),
        arrival_time: 0.0,
        jobs: vec![JobSpec {
            serial_iter_time: 10.0,
            total_iters: 100.0,
            iters_done: 0.0,
            job_demand_max: 4,
            loss: LossCurve { a: 1.0, b: 10.0, c: 0.0 },
        }],
        scheme: TuningScheme::SingleJob,
        class,
        app_demand_max: 4,
    }
}

pub fn counterexamples() -> Result<CounterexampleOutcome> {
    let net = SlowdownProfile::network_class();
    let comp = SlowdownProfile::compute_class();

    // Instance 1: two 4-GPU machines, two placement-sensitive apps, each
    // spread 2+2 across both machines by a count-equalizing allocator.
    let cluster1 = ClusterSpec::uniform(1, 2, 1, 4);
    let a1 = counterexample_app(0, AppClass::Network);
    let a2 = counterexample_app(1, AppClass::Network);
    let apps1 = [
        OracleApp { spec: &a1, profile: &net },
        OracleApp { spec: &a2, profile: &net },
    ];
    let spread_a: GpuSet = [
        GpuId::new(0, 0, 0, 0),
        GpuId::new(0, 0, 0, 1),
        GpuId::new(0, 1, 0, 0),
        GpuId::new(0, 1, 0, 1),
    ]
    .into_iter()
    .collect();
    let spread_b: GpuSet = [
        GpuId::new(0, 0, 0, 2),
        GpuId::new(0, 0, 0, 3),
        GpuId::new(0, 1, 0, 2),
        GpuId::new(0, 1, 0, 3),
    ]
    .into_iter()
    .collect();
    let instance1_blind = check_properties(&apps1, &[spread_a, spread_b], &cluster1)?;
    let ideal1 = offline_minmax_rho(&apps1, &cluster1)?;
    let instance1_ideal = check_properties(&apps1, &ideal1, &cluster1)?;

    // Instance 2: one 4-GPU and two 2-GPU machines; the placement-blind
    // outcome parks the insensitive app on the big machine.
    let cluster2 = ClusterSpec::new(vec![vec![vec![4], vec![2], vec![2]]]).unwrap();
    let b1 = counterexample_app(0, AppClass::Compute);
    let b2 = counterexample_app(1, AppClass::Network);
    let apps2 = [
        OracleApp { spec: &b1, profile: &comp },
        OracleApp { spec: &b2, profile: &net },
    ];
    let on_big: GpuSet = (0..4).map(|g| GpuId::new(0, 0, 0, g)).collect();
    let on_small: GpuSet = [
        GpuId::new(0, 1, 0, 0),
        GpuId::new(0, 1, 0, 1),
        GpuId::new(0, 2, 0, 0),
        GpuId::new(0, 2, 0, 1),
    ]
    .into_iter()
    .collect();
    let instance2_blind = check_properties(&apps2, &[on_big, on_small], &cluster2)?;
    let ideal2 = offline_minmax_rho(&apps2, &cluster2)?;
    let instance2_ideal = check_properties(&apps2, &ideal2, &cluster2)?;

    Ok(CounterexampleOutcome {
        instance1_blind,
        instance1_ideal,
        instance2_blind,
        instance2_ideal,
    })
}
