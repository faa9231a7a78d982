//! The per-app Agent: candidate enumeration over an offer, bid tables of
//! rho estimates, current-rho probes, and the error/lying knobs used in the
//! robustness experiments.

use rand::Rng;

use crate::app::{rho, AppRuntime, AppSpec, RhoCtx};
use crate::cluster::{pick_consolidated, pick_spread, span_level, GpuSet, SpanLevel};
use crate::error::{Error, Result};

/// A non-binding resource offer for one auction round.
#[derive(Debug, Clone)]
pub struct Offer {
    pub round: u64,
    pub gpus: GpuSet,
}

/// One row of a bid: a candidate subset of the offer and the rho the app
/// estimates after adding it to what it already holds.
#[derive(Debug, Clone)]
pub struct ValuationRow {
    pub allocation: GpuSet,
    pub rho: f64,
}

/// An app's complete bid for a round. Contains exactly one empty row whose
/// rho is the app's current metric.
#[derive(Debug, Clone)]
pub struct BidTable {
    pub app: crate::app::AppId,
    pub rows: Vec<ValuationRow>,
}

impl BidTable {
    pub fn empty_row(&self) -> Option<&ValuationRow> {
        self.rows.iter().find(|r| r.allocation.is_empty())
    }
}

/// Strategic misreporting: scale the reported slowdown up by X% for spread
/// placements and down by the same factor for dense ones. Execution always
/// uses the true slowdown.
#[derive(Debug, Clone, Copy)]
pub struct LieSlowdown {
    pub x_percent: f64,
}

impl LieSlowdown {
    pub fn scale_for(&self, set: &GpuSet) -> f64 {
        if self.x_percent <= 0.0 || set.is_empty() {
            return 1.0;
        }
        let factor = 1.0 + self.x_percent / 100.0;
        match span_level(set).expect("non-empty") {
            SpanLevel::Slot | SpanLevel::Machine => 1.0 / factor,
            SpanLevel::Rack | SpanLevel::CrossRack => factor,
        }
    }
}

const EXHAUSTIVE_NODE_LIMIT: usize = 200_000;

/// Candidate allocations from an offer, deduplicated by per-slot GPU
/// counts (GPUs within a slot are fungible, so rho cannot distinguish
/// same-count choices). Small offers are enumerated exhaustively; if the
/// distinct signatures exceed `cap`, only the most-consolidated and
/// most-spread set per power-of-two GPU count is kept.
pub fn enumerate_candidates(
    offer: &Offer,
    app: &AppSpec,
    held: usize,
    cap: usize,
) -> Vec<GpuSet> {
    if offer.gpus.is_empty() {
        return Vec::new();
    }
    let max_count = offer
        .gpus
        .count()
        .min((app.app_demand_max as usize).saturating_sub(held));
    if max_count == 0 {
        return Vec::new();
    }

    if let Some(all) = enumerate_exhaustive(&offer.gpus, max_count) {
        if all.len() <= cap {
            return all;
        }
    }
    representative_candidates(&offer.gpus, max_count, cap)
}

/// All distinct signatures realizable from the offer, or None when the
/// search space is too large to walk. Output is sorted by (count, signature)
/// for determinism.
fn enumerate_exhaustive(offer: &GpuSet, max_count: usize) -> Option<Vec<GpuSet>> {
    let mut slots: Vec<Vec<crate::cluster::GpuId>> = Vec::new();
    let mut last_key = None;
    for g in offer.iter() {
        if last_key != Some(g.slot_key()) {
            slots.push(Vec::new());
            last_key = Some(g.slot_key());
        }
        slots.last_mut().unwrap().push(*g);
    }
    let mut space: usize = 1;
    for s in &slots {
        space = space.saturating_mul(s.len() + 1);
        if space > EXHAUSTIVE_NODE_LIMIT {
            return None;
        }
    }

    let mut found: Vec<GpuSet> = Vec::new();
    let mut take = vec![0usize; slots.len()];
    loop {
        let total: usize = take.iter().sum();
        if total > 0 && total <= max_count {
            // one canonical set per per-slot count vector
            found.push(
                slots
                    .iter()
                    .zip(&take)
                    .flat_map(|(slot, &k)| slot.iter().take(k).copied())
                    .collect(),
            );
        }
        // odometer over per-slot take counts
        let mut i = 0;
        loop {
            if i == slots.len() {
                found.sort_by(|a, b| a.count().cmp(&b.count()).then_with(|| a.cmp(b)));
                return Some(found);
            }
            take[i] += 1;
            if take[i] <= slots[i].len() {
                break;
            }
            take[i] = 0;
            i += 1;
        }
    }
}

/// Fallback when the signature space is too big: the tightest and widest
/// placement per count in {1, 2, 4, ...} up to the demand cap, plus
/// single-GPU rows across the offer's slots (so contending apps always
/// have disjoint fallbacks), truncated to `cap` rows.
fn representative_candidates(offer: &GpuSet, max_count: usize, cap: usize) -> Vec<GpuSet> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    let mut push = |set: GpuSet| {
        if !set.is_empty() && seen.insert(set.slot_counts()) {
            out.push(set);
        }
    };
    // the full ask first, then one single per slot so contending apps keep
    // disjoint fallbacks, then placement extremes per count
    push(pick_consolidated(offer, max_count));
    let mut last_slot = None;
    for g in offer.iter() {
        if last_slot != Some(g.slot_key()) {
            last_slot = Some(g.slot_key());
            push([*g].into_iter().collect());
        }
    }
    let mut counts = Vec::new();
    let mut c = 1;
    while c < max_count {
        counts.push(c);
        c *= 2;
    }
    for k in counts.into_iter().rev() {
        push(pick_consolidated(offer, k));
        push(pick_spread(offer, k));
    }
    push(pick_spread(offer, max_count));
    out.truncate(cap.max(3));
    out
}

/// Build the bid table: one row per candidate, each valued on the aggregate
/// of the candidate and the app's current holdings, plus the mandatory empty
/// row at the current rho.
pub fn prepare_bid(
    app: &AppSpec,
    rt: &AppRuntime,
    offer: &Offer,
    ctx: &RhoCtx,
    lie: Option<LieSlowdown>,
    cap: usize,
) -> Result<BidTable> {
    let mut rows = vec![ValuationRow {
        allocation: GpuSet::new(),
        rho: current_rho(app, rt, ctx, lie)?,
    }];
    for candidate in enumerate_candidates(offer, app, rt.allocation.count(), cap) {
        let aggregate = rt.allocation.union(&candidate);
        // a lie is keyed on the candidate row's own placement
        let scale = lie.map(|l| l.scale_for(&candidate)).unwrap_or(1.0);
        let row_ctx = RhoCtx { slowdown_scale: scale, ..*ctx };
        rows.push(ValuationRow {
            allocation: candidate,
            rho: rho(app, rt, &aggregate, &row_ctx)?,
        });
    }
    Ok(BidTable { app: app.id, rows })
}

/// rho at the app's current allocation. Queued apps with nothing report the
/// +inf sentinel; the caller breaks those ties by arrival time.
pub fn current_rho(
    app: &AppSpec,
    rt: &AppRuntime,
    ctx: &RhoCtx,
    lie: Option<LieSlowdown>,
) -> Result<f64> {
    let scale = lie.map(|l| l.scale_for(&rt.allocation)).unwrap_or(1.0);
    let probe_ctx = RhoCtx { slowdown_scale: scale, ..*ctx };
    rho(app, rt, &rt.allocation, &probe_ctx)
}

/// Multiply every finite rho by (1 + e), e drawn uniformly from
/// [-theta, theta] per row. theta must stay below 1 so rho stays positive.
pub fn perturb_bid<R: Rng>(table: &BidTable, theta: f64, rng: &mut R) -> Result<BidTable> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::InvalidParameter(format!(
            "bid error theta {theta} outside [0, 1)"
        )));
    }
    if theta == 0.0 {
        return Ok(table.clone());
    }
    let rows = table
        .rows
        .iter()
        .map(|r| {
            let rho = if r.rho.is_finite() {
                r.rho * (1.0 + rng.gen_range(-theta..=theta))
            } else {
                r.rho
            };
            ValuationRow { allocation: r.allocation.clone(), rho }
        })
        .collect();
    Ok(BidTable { app: table.app, rows })
}
