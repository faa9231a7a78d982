//! The Arbiter: round-by-round filtering, exact proportional-fair winner
//! determination over bid tables, hidden payments, grant discretization and
//! work-conserving leftover allocation, plus a tiny-instance exact oracle
//! for the offline min-max-rho program.

use std::collections::BTreeMap;

use rand::Rng;

use crate::app::{rho, AppId, AppRuntime, AppSpec, RhoCtx};
use crate::bidding::{
    current_rho, perturb_bid, prepare_bid, BidTable, LieSlowdown, Offer,
};
use crate::cluster::{pick_consolidated, ClusterSpec, GpuId, GpuSet, SlowdownProfile};
use crate::error::{Error, Result};

/// Everything the Arbiter collects for one auction round.
#[derive(Debug, Clone)]
pub struct AuctionInput {
    pub round: u64,
    pub offer: GpuSet,
    pub participants: Vec<(AppId, BidTable)>,
}

/// One winner: the proportional-fair row, the kept fraction c, and the
/// discrete grant actually handed out.
#[derive(Debug, Clone)]
pub struct WinnerGrant {
    pub app: AppId,
    pub chosen_row: GpuSet,
    pub c: f64,
    pub grant: GpuSet,
}

#[derive(Debug, Clone)]
pub struct AuctionResult {
    pub winners: Vec<WinnerGrant>,
    /// Offered GPUs not granted to any auction winner.
    pub leftover: GpuSet,
    /// Sum of (1 - c_i) * |row_i| before rounding; bounded by |offer|/e plus
    /// rounding slack.
    pub fractional_leftover: f64,
    pub solver_nodes: u64,
}

/// A time-bounded grant of GPUs to an app.
#[derive(Debug, Clone)]
pub struct Lease {
    pub app: AppId,
    pub gpus: GpuSet,
    pub start: f64,
    pub duration: f64,
}

/// A probe reply used for filtering: the app's current rho estimate.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub app: AppId,
    pub rho: f64,
    pub arrival: f64,
}

/// Keep the ceil((1 - f) * N) apps with the worst (largest) current rho,
/// at least one. Ties break toward earlier arrival, then smaller id.
pub fn filter_apps(probes: &[Probe], f: f64) -> Result<Vec<AppId>> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::InvalidParameter(format!("filter fraction f = {f}")));
    }
    if probes.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted = probes.to_vec();
    sorted.sort_by(|a, b| {
        b.rho
            .total_cmp(&a.rho)
            .then(a.arrival.total_cmp(&b.arrival))
            .then(a.app.cmp(&b.app))
    });
    let n = sorted.len();
    let k = (((1.0 - f) * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted.into_iter().take(k).map(|p| p.app).collect())
}

/// Product objective tracked exactly: the number of infinite rho terms, and
/// the product of the finite ones as an integer mantissa times 2^exp.
/// Smaller is better (maximizing the product of 1/rho). Exact arithmetic
/// makes ties associative, so the memoized search and a plain enumeration
/// break them identically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Score {
    inf: u32,
    mantissa: num_bigint::BigUint,
    exp: i64,
}

/// (mantissa, exponent) of a positive finite f64 with the mantissa's
/// trailing zeros normalized away.
pub(crate) fn decompose(rho: f64) -> (u64, i64) {
    assert!(rho > 0.0 && rho.is_finite());
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
    (m, e)
}

impl Score {
    fn zero() -> Score {
        Score { inf: 0, mantissa: num_bigint::BigUint::from(1u32), exp: 0 }
    }

    fn plus(&self, rho: f64) -> Score {
        if rho.is_finite() {
            let (m, e) = decompose(rho);
            Score {
                inf: self.inf,
                mantissa: &self.mantissa * m,
                exp: self.exp + e,
            }
        } else {
            Score { inf: self.inf + 1, mantissa: self.mantissa.clone(), exp: self.exp }
        }
    }

    fn strictly_better(&self, o: &Score) -> bool {
        if self.inf != o.inf {
            return self.inf < o.inf;
        }
        // compare mantissa_a * 2^exp_a with mantissa_b * 2^exp_b
        let bits_a = self.mantissa.bits() as i64 + self.exp;
        let bits_b = o.mantissa.bits() as i64 + o.exp;
        if bits_a != bits_b {
            return bits_a < bits_b;
        }
        if self.exp >= o.exp {
            (&self.mantissa << (self.exp - o.exp) as u64) < o.mantissa
        } else {
            self.mantissa < (&o.mantissa << (o.exp - self.exp) as u64)
        }
    }

    /// log2 of the finite-part product, for hidden-payment ratios.
    fn log2(&self) -> f64 {
        let bits = self.mantissa.bits();
        let top = if bits > 64 {
            let shifted: num_bigint::BigUint = &self.mantissa >> (bits - 64);
            shifted.to_u64_digits()[0]
        } else if self.mantissa.bits() == 0 {
            return f64::NEG_INFINITY;
        } else {
            self.mantissa.to_u64_digits()[0]
        };
        let shift = bits.saturating_sub(64) as f64;
        (top as f64).log2() + shift + self.exp as f64
    }
}

const SOLVER_NODE_LIMIT: u64 = 1_000_000;

type MemoTable = std::collections::HashMap<(usize, Box<[u32]>), (Score, usize)>;

/// One bid row as the solver sees it: GPU counts demanded per offer slot.
/// Bids claim capacity, not named GPUs; winners get concrete GPUs carved
/// out of each slot afterwards.
struct SolverRow {
    counts: Vec<u32>,
    rho: f64,
}

struct Solver {
    /// Free GPUs per slot of the offer.
    free: Vec<u32>,
    /// rows[i][j]: participant i's j-th row, in bid-table order.
    rows: Vec<Vec<SolverRow>>,
    /// Value-to-go and lex-smallest optimal row per (participant index,
    /// remaining per-slot capacity). Sound because rows claim counts, so
    /// equal capacity vectors are identical subproblems.
    memo: MemoTable,
    nodes: u64,
}

impl Solver {
    fn build(input: &AuctionInput) -> Result<Solver> {
        let slot_index: BTreeMap<(usize, usize, usize), usize> = input
            .offer
            .slot_counts()
            .keys()
            .enumerate()
            .map(|(i, k)| (*k, i))
            .collect();
        let mut free = vec![0u32; slot_index.len()];
        for (slot, n) in input.offer.slot_counts() {
            free[slot_index[&slot]] = n as u32;
        }
        let mut rows = Vec::with_capacity(input.participants.len());
        for (app, table) in &input.participants {
            if table.empty_row().is_none() {
                return Err(Error::MalformedBid(format!("app {app} has no empty row")));
            }
            let mut solver_rows = Vec::with_capacity(table.rows.len());
            for row in &table.rows {
                if row.rho.is_nan() || row.rho <= 0.0 {
                    return Err(Error::MalformedBid(format!(
                        "app {app} has non-positive rho {}",
                        row.rho
                    )));
                }
                let mut counts = vec![0u32; free.len()];
                for (slot, n) in row.allocation.slot_counts() {
                    let Some(&i) = slot_index.get(&slot) else {
                        return Err(Error::MalformedBid(format!(
                            "app {app} bids on GPU outside the offer"
                        )));
                    };
                    counts[i] = n as u32;
                }
                solver_rows.push(SolverRow { counts, rho: row.rho });
            }
            rows.push(solver_rows);
        }
        Ok(Solver { free, rows, memo: MemoTable::new(), nodes: 0 })
    }

    fn solve(mut self) -> Result<(Vec<usize>, u64)> {
        let mut capacity = self.free.clone();
        self.value_to_go(0, &mut capacity)?;

        // Reconstruct the lex-smallest optimal assignment from the memo.
        let mut choice = Vec::with_capacity(self.rows.len());
        let mut cap = self.free.clone();
        for i in 0..self.rows.len() {
            let (_, j) = self.memo[&(i, cap.clone().into_boxed_slice())];
            choice.push(j);
            for (s, &c) in self.rows[i][j].counts.iter().enumerate() {
                cap[s] -= c;
            }
        }
        Ok((choice, self.nodes))
    }

    /// Best achievable score over participants i.. given the remaining
    /// per-slot capacity; picks the smallest row index among optima, which
    /// composes into the lexicographically smallest optimal assignment.
    fn value_to_go(&mut self, i: usize, capacity: &mut [u32]) -> Result<Score> {
        if i == self.rows.len() {
            return Ok(Score::zero());
        }
        let key = (i, capacity.to_vec().into_boxed_slice());
        if let Some((score, _)) = self.memo.get(&key) {
            return Ok(score.clone());
        }
        self.nodes += 1;
        if self.nodes > SOLVER_NODE_LIMIT {
            return Err(Error::SolverNodeLimit(self.nodes));
        }
        let mut best: Option<(Score, usize)> = None;
        'rows: for j in 0..self.rows[i].len() {
            for (s, &c) in self.rows[i][j].counts.iter().enumerate() {
                if c > capacity[s] {
                    continue 'rows;
                }
            }
            for (s, &c) in self.rows[i][j].counts.iter().enumerate() {
                capacity[s] -= c;
            }
            let tail = self.value_to_go(i + 1, capacity)?;
            for (s, &c) in self.rows[i][j].counts.iter().enumerate() {
                capacity[s] += c;
            }
            let score = tail.plus(self.rows[i][j].rho);
            let improves = best
                .as_ref()
                .map(|(b, _)| score.strictly_better(b))
                .unwrap_or(true);
            if improves {
                best = Some((score, j));
            }
        }
        let (score, j) = best.expect("empty row always fits");
        self.memo.insert(key, (score.clone(), j));
        Ok(score)
    }
}

/// Exact proportional-fair allocation: per participant, the row choice
/// maximizing the product of 1/rho, subject to the offer's per-slot GPU
/// capacity (rows demand counts per slot; concrete GPUs are assigned to
/// winners afterwards). Returns chosen row indices in participant order
/// plus the solver node count.
pub fn proportional_fair(input: &AuctionInput) -> Result<(Vec<usize>, u64)> {
    Solver::build(input)?.solve()
}

/// Carve concrete, pairwise-disjoint GPU sets for the chosen rows out of
/// the offer, slot by slot in canonical order. Each result has exactly the
/// slot counts (hence the rho) of its row.
pub fn materialize_rows(input: &AuctionInput, choice: &[usize]) -> Vec<GpuSet> {
    let mut free: BTreeMap<(usize, usize, usize), Vec<GpuId>> = BTreeMap::new();
    for g in input.offer.iter() {
        free.entry(g.slot_key()).or_default().push(*g);
    }
    let mut out = Vec::with_capacity(choice.len());
    for ((_, table), &row_idx) in input.participants.iter().zip(choice) {
        let mut set = GpuSet::new();
        for (slot, n) in table.rows[row_idx].allocation.slot_counts() {
            let pool = free.get_mut(&slot).expect("row inside offer");
            for g in pool.drain(..n) {
                set.insert(g);
            }
        }
        out.push(set);
    }
    out
}

/// Hidden payment fractions: c_i compares the other apps' collective
/// valuation at the optimum with app i present versus absent.
pub fn hidden_payment(input: &AuctionInput, pf: &[usize]) -> Result<BTreeMap<AppId, f64>> {
    let n = input.participants.len();
    let mut out = BTreeMap::new();
    for i in 0..n {
        let app = input.participants[i].0;
        if n == 1 {
            out.insert(app, 1.0);
            continue;
        }
        let mut with_i = Score::zero();
        for (j, (_, table)) in input.participants.iter().enumerate() {
            if j != i {
                with_i = with_i.plus(table.rows[pf[j]].rho);
            }
        }
        let reduced = AuctionInput {
            round: input.round,
            offer: input.offer.clone(),
            participants: input
                .participants
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| p.clone())
                .collect(),
        };
        let (without_choice, _) = proportional_fair(&reduced)?;
        let mut without_i = Score::zero();
        for (p, &row) in reduced.participants.iter().zip(&without_choice) {
            without_i = without_i.plus(p.1.rows[row].rho);
        }
        // c_i = prod_{j!=i} (1/rho_pf) / prod_{j!=i} (1/rho_without)
        let c = if with_i.inf > without_i.inf {
            0.0
        } else {
            // equal infinite counts cancel; fewer is impossible at optimum
            2f64.powf(without_i.log2() - with_i.log2()).min(1.0)
        };
        out.insert(app, c);
    }
    Ok(out)
}

/// Keep floor(c * |row|) GPUs of a winning row, chosen to maximize the kept
/// set's placement score (ties in canonical GPU order).
pub fn discretize_grant(row: &GpuSet, c: f64) -> GpuSet {
    let k = ((c * row.count() as f64) + 1e-9).floor() as usize;
    pick_consolidated(row, k.min(row.count()))
}

/// An app eligible for leftover GPUs.
#[derive(Debug, Clone)]
pub struct LeftoverCandidate {
    pub app: AppId,
    pub holdings: GpuSet,
    pub headroom: usize,
}

/// Hand out leftover GPUs one at a time: prefer apps already holding GPUs on
/// the same machine, otherwise any candidate with headroom, uniformly at
/// random from the seeded stream. Unassignable GPUs stay free.
pub fn leftover_allocate<R: Rng>(
    leftover: &GpuSet,
    candidates: &mut [LeftoverCandidate],
    rng: &mut R,
) -> BTreeMap<AppId, GpuSet> {
    let mut out: BTreeMap<AppId, GpuSet> = BTreeMap::new();
    for gpu in leftover.iter() {
        let machine = gpu.machine_key();
        let local: Vec<usize> = candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                c.headroom > 0 && c.holdings.iter().any(|g| g.machine_key() == machine)
            })
            .map(|(i, _)| i)
            .collect();
        let pool = if local.is_empty() {
            candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| c.headroom > 0)
                .map(|(i, _)| i)
                .collect::<Vec<_>>()
        } else {
            local
        };
        if pool.is_empty() {
            continue;
        }
        let pick = pool[rng.gen_range(0..pool.len())];
        candidates[pick].headroom -= 1;
        candidates[pick].holdings.insert(*gpu);
        out.entry(candidates[pick].app).or_default().insert(*gpu);
    }
    out
}

/// One live app as the Arbiter sees it during a round.
pub struct RoundApp<'a> {
    pub spec: &'a AppSpec,
    pub rt: &'a AppRuntime,
    pub profile: &'a SlowdownProfile,
    pub lie: Option<LieSlowdown>,
}

#[derive(Debug, Clone, Copy)]
pub struct RoundParams {
    pub f: f64,
    pub lease_duration: f64,
    pub theta: f64,
    pub candidate_cap: usize,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub result: AuctionResult,
    pub participants: Vec<AppId>,
    /// All GPUs newly assigned this round (winner grants plus leftover).
    pub assignments: BTreeMap<AppId, GpuSet>,
    pub leases: Vec<Lease>,
}

/// One full auction round: probe, filter, collect bids, solve, pay, round
/// down, then allocate leftovers work-conservingly.
#[allow(clippy::too_many_arguments)]
pub fn run_round<R: Rng>(
    apps: &[RoundApp],
    offer: &GpuSet,
    params: &RoundParams,
    now: f64,
    round: u64,
    cluster: &ClusterSpec,
    error_rng: &mut R,
    leftover_rng: &mut R,
) -> Result<RoundOutcome> {
    if offer.is_empty() {
        return Err(Error::EmptyAllocation);
    }
    let probes: Vec<Probe> = apps
        .iter()
        .map(|a| {
            let ctx = RhoCtx::new(now, cluster, a.profile);
            Ok(Probe {
                app: a.spec.id,
                rho: current_rho(a.spec, a.rt, &ctx, a.lie)?,
                arrival: a.spec.arrival_time,
            })
        })
        .collect::<Result<_>>()?;
    let participant_ids = filter_apps(&probes, params.f)?;

    let mut participants: Vec<(AppId, BidTable)> = Vec::new();
    let mut sorted_ids = participant_ids.clone();
    sorted_ids.sort();
    // keep the joint row space tractable when many apps participate
    let n = sorted_ids.len().max(1);
    let cap = (params.candidate_cap / (n * n)).max(8);
    for id in &sorted_ids {
        let a = apps.iter().find(|a| a.spec.id == *id).unwrap();
        let ctx = RhoCtx::new(now, cluster, a.profile);
        let offer_msg = Offer { round, gpus: offer.clone() };
        let mut table = prepare_bid(a.spec, a.rt, &offer_msg, &ctx, a.lie, cap)?;
        if params.theta > 0.0 {
            table = perturb_bid(&table, params.theta, error_rng)?;
        }
        participants.push((*id, table));
    }

    let input = AuctionInput { round, offer: offer.clone(), participants };
    let (choice, solver_nodes) = proportional_fair(&input)?;
    let payments = hidden_payment(&input, &choice)?;
    let concrete_rows = materialize_rows(&input, &choice);

    let mut winners = Vec::new();
    let mut assignments: BTreeMap<AppId, GpuSet> = BTreeMap::new();
    let mut granted = GpuSet::new();
    let mut fractional_leftover = 0.0;
    for ((app, _), row) in input.participants.iter().zip(concrete_rows) {
        let c = payments[app];
        let grant = discretize_grant(&row, c);
        fractional_leftover += (1.0 - c) * row.count() as f64;
        granted = granted.union(&grant);
        if !grant.is_empty() {
            assignments.entry(*app).or_default().extend_from(&grant);
        }
        winners.push(WinnerGrant { app: *app, chosen_row: row, c, grant });
    }
    let leftover = offer.difference(&granted);

    // Leftover goes to non-participants first...
    let headroom_of = |a: &RoundApp, extra: usize| {
        (a.spec.app_demand_max as usize).saturating_sub(a.rt.allocation.count() + extra)
    };
    let mut non_participants: Vec<LeftoverCandidate> = apps
        .iter()
        .filter(|a| !sorted_ids.contains(&a.spec.id))
        .map(|a| LeftoverCandidate {
            app: a.spec.id,
            holdings: a.rt.allocation.clone(),
            headroom: headroom_of(a, 0),
        })
        .collect();
    let mut assigned_leftover = leftover_allocate(&leftover, &mut non_participants, leftover_rng);
    let mut still_free = leftover.clone();
    for set in assigned_leftover.values() {
        still_free = still_free.difference(set);
    }
    // ...then, to stay work-conserving, to any live app with unmet demand.
    if !still_free.is_empty() {
        let mut everyone: Vec<LeftoverCandidate> = apps
            .iter()
            .map(|a| {
                let extra = assignments
                    .get(&a.spec.id)
                    .map(|s| s.count())
                    .unwrap_or(0)
                    + assigned_leftover
                        .get(&a.spec.id)
                        .map(|s| s.count())
                        .unwrap_or(0);
                let mut holdings = a.rt.allocation.clone();
                if let Some(s) = assignments.get(&a.spec.id) {
                    holdings = holdings.union(s);
                }
                LeftoverCandidate {
                    app: a.spec.id,
                    holdings,
                    headroom: headroom_of(a, extra),
                }
            })
            .collect();
        let fallback = leftover_allocate(&still_free, &mut everyone, leftover_rng);
        for (app, set) in fallback {
            assigned_leftover.entry(app).or_default().extend_from(&set);
        }
    }
    for (app, set) in &assigned_leftover {
        assignments.entry(*app).or_default().extend_from(set);
    }

    let leases: Vec<Lease> = assignments
        .iter()
        .map(|(app, gpus)| Lease {
            app: *app,
            gpus: gpus.clone(),
            start: now,
            duration: params.lease_duration,
        })
        .collect();

    Ok(RoundOutcome {
        result: AuctionResult {
            winners,
            leftover,
            fractional_leftover,
            solver_nodes,
        },
        participants: participant_ids,
        assignments,
        leases,
    })
}

/// An app together with its slowdown profile, as seen by the offline oracle
/// and the property checkers.
pub struct OracleApp<'a> {
    pub spec: &'a AppSpec,
    pub profile: &'a SlowdownProfile,
}

const ORACLE_VISIT_LIMIT: u64 = 4_000_000;

/// Enumerate every assignment of the pool's GPUs to apps (or to nobody),
/// exact up to within-slot symmetry. The visitor receives one GpuSet per
/// app.
pub(crate) fn for_each_assignment<F: FnMut(&[GpuSet])>(
    pool: &GpuSet,
    caps: &[usize],
    mut visit: F,
) -> Result<()> {
    let mut slots: Vec<Vec<GpuId>> = Vec::new();
    let mut last = None;
    for g in pool.iter() {
        if last != Some(g.slot_key()) {
            slots.push(Vec::new());
            last = Some(g.slot_key());
        }
        slots.last_mut().unwrap().push(*g);
    }
    let n = caps.len();
    let mut sets = vec![GpuSet::new(); n];
    let mut counts = vec![0usize; n];
    let mut visits: u64 = 0;

    fn recurse<F: FnMut(&[GpuSet])>(
        slots: &[Vec<GpuId>],
        caps: &[usize],
        sets: &mut Vec<GpuSet>,
        counts: &mut Vec<usize>,
        visits: &mut u64,
        visit: &mut F,
    ) -> Result<()> {
        *visits += 1;
        if *visits > ORACLE_VISIT_LIMIT {
            return Err(Error::OracleScaleExceeded);
        }
        let Some(slot) = slots.first() else {
            visit(sets);
            return Ok(());
        };
        // Per-app take counts for this slot, remainder left free.
        #[allow(clippy::too_many_arguments)]
        fn split<F: FnMut(&[GpuSet])>(
            slot: &[GpuId],
            offset: usize,
            app: usize,
            slots: &[Vec<GpuId>],
            caps: &[usize],
            sets: &mut Vec<GpuSet>,
            counts: &mut Vec<usize>,
            visits: &mut u64,
            visit: &mut F,
        ) -> Result<()> {
            if app == caps.len() {
                return recurse(&slots[1..], caps, sets, counts, visits, visit);
            }
            let room = (caps[app] - counts[app]).min(slot.len() - offset);
            for take in 0..=room {
                for g in &slot[offset..offset + take] {
                    sets[app].insert(*g);
                }
                counts[app] += take;
                split(
                    slot,
                    offset + take,
                    app + 1,
                    slots,
                    caps,
                    sets,
                    counts,
                    visits,
                    visit,
                )?;
                counts[app] -= take;
                for g in &slot[offset..offset + take] {
                    sets[app].remove(g);
                }
            }
            Ok(())
        }
        split(slot, 0, 0, slots, caps, sets, counts, visits, visit)
    }
    recurse(&slots, caps, &mut sets, &mut counts, &mut visits, &mut visit)
}

/// Exhaustive offline min-max-rho allocation for tiny instances with all
/// apps present at t = 0 and contention N = number of apps. Oracle only.
pub fn offline_minmax_rho(
    apps: &[OracleApp],
    cluster: &ClusterSpec,
) -> Result<Vec<GpuSet>> {
    if apps.is_empty() {
        return Ok(Vec::new());
    }
    if apps.len() > 4 || cluster.total_gpus() > 8 {
        return Err(Error::OracleScaleExceeded);
    }
    let runtimes: Vec<AppRuntime> = apps
        .iter()
        .map(|a| AppRuntime::new(a.spec, 0.0, apps.len()))
        .collect();
    let caps: Vec<usize> = apps.iter().map(|a| a.spec.app_demand_max as usize).collect();
    let pool = cluster.all_gpus();
    let mut best: Option<(f64, usize, Vec<GpuSet>)> = None;
    let mut eval_err = None;
    for_each_assignment(&pool, &caps, |assignment| {
        if eval_err.is_some() {
            return;
        }
        let mut worst = 0.0f64;
        let mut total = 0usize;
        for (a, (rt, g)) in apps.iter().zip(runtimes.iter().zip(assignment)) {
            let ctx = RhoCtx::new(0.0, cluster, a.profile);
            match rho(a.spec, rt, g, &ctx) {
                Ok(r) => worst = worst.max(r),
                Err(e) => {
                    eval_err = Some(e);
                    return;
                }
            }
            total += g.count();
        }
        let better = match &best {
            None => true,
            Some((w, t, _)) => worst < *w || (worst == *w && total > *t),
        };
        if better {
            best = Some((worst, total, assignment.to_vec()));
        }
    })?;
    if let Some(e) = eval_err {
        return Err(e);
    }
    Ok(best.expect("at least the empty assignment").2)
}
