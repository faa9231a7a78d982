//! Cluster topology, GPU ownership/leases, and placement math.
//!
//! The cluster is a 4-level hierarchy: racks hold machines, machines hold
//! slots, slots hold GPUs. An allocation's slowdown depends only on the
//! widest boundary it crosses.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::app::AppId;
use crate::error::{Error, Result};

/// Position of one GPU: (rack, machine, slot, gpu), all 0-based.
///
/// `Ord` gives the canonical deterministic GPU ordering used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GpuId {
    pub rack: usize,
    pub machine: usize,
    pub slot: usize,
    pub gpu: usize,
}

impl GpuId {
    pub fn new(rack: usize, machine: usize, slot: usize, gpu: usize) -> Self {
        Self { rack, machine, slot, gpu }
    }

    /// (rack, machine) pair; machines are identified cluster-wide by this.
    pub fn machine_key(&self) -> (usize, usize) {
        (self.rack, self.machine)
    }

    pub fn slot_key(&self) -> (usize, usize, usize) {
        (self.rack, self.machine, self.slot)
    }
}

/// Cluster description: `racks[r][m][s]` is the GPU count of slot `s` on
/// machine `m` of rack `r`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterSpec {
    pub racks: Vec<Vec<Vec<u32>>>,
}

impl ClusterSpec {
    pub fn new(racks: Vec<Vec<Vec<u32>>>) -> Result<Self> {
        let spec = Self { racks };
        if spec.total_gpus() == 0 {
            return Err(Error::InvalidCluster("cluster has no GPUs".into()));
        }
        if spec
            .racks
            .iter()
            .flatten()
            .flatten()
            .any(|&gpus| gpus == 0)
        {
            return Err(Error::InvalidCluster("slot with zero GPUs".into()));
        }
        Ok(spec)
    }

    /// Uniform helper: `racks` racks of `machines` machines of `slots` slots
    /// holding `gpus_per_slot` GPUs each.
    pub fn uniform(racks: usize, machines: usize, slots: usize, gpus_per_slot: u32) -> Self {
        Self {
            racks: vec![vec![vec![gpus_per_slot; slots]; machines]; racks],
        }
    }

    pub fn total_gpus(&self) -> usize {
        self.racks
            .iter()
            .flatten()
            .flatten()
            .map(|&g| g as usize)
            .sum()
    }

    pub fn contains(&self, id: GpuId) -> bool {
        self.racks
            .get(id.rack)
            .and_then(|r| r.get(id.machine))
            .and_then(|m| m.get(id.slot))
            .map(|&g| id.gpu < g as usize)
            .unwrap_or(false)
    }

    /// All GPUs in canonical (rack, machine, slot, gpu) order.
    pub fn all_gpus(&self) -> GpuSet {
        let mut set = GpuSet::new();
        for (r, rack) in self.racks.iter().enumerate() {
            for (m, machine) in rack.iter().enumerate() {
                for (s, &gpus) in machine.iter().enumerate() {
                    for g in 0..gpus as usize {
                        set.insert(GpuId::new(r, m, s, g));
                    }
                }
            }
        }
        set
    }
}

/// A set of GPUs (an allocation vector). No duplicates by construction.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GpuSet {
    gpus: BTreeSet<GpuId>,
}

impl GpuSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.gpus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gpus.is_empty()
    }

    pub fn insert(&mut self, id: GpuId) -> bool {
        self.gpus.insert(id)
    }

    pub fn remove(&mut self, id: &GpuId) -> bool {
        self.gpus.remove(id)
    }

    pub fn contains(&self, id: &GpuId) -> bool {
        self.gpus.contains(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &GpuId> {
        self.gpus.iter()
    }

    pub fn is_subset(&self, other: &GpuSet) -> bool {
        self.gpus.is_subset(&other.gpus)
    }

    pub fn is_disjoint(&self, other: &GpuSet) -> bool {
        self.gpus.is_disjoint(&other.gpus)
    }

    pub fn union(&self, other: &GpuSet) -> GpuSet {
        GpuSet {
            gpus: self.gpus.union(&other.gpus).copied().collect(),
        }
    }

    pub fn extend_from(&mut self, other: &GpuSet) {
        for g in other.iter() {
            self.gpus.insert(*g);
        }
    }

    pub fn difference(&self, other: &GpuSet) -> GpuSet {
        GpuSet {
            gpus: self.gpus.difference(&other.gpus).copied().collect(),
        }
    }

    /// Distinct (rack, machine) pairs touched by this set.
    pub fn machines(&self) -> BTreeSet<(usize, usize)> {
        self.gpus.iter().map(|g| g.machine_key()).collect()
    }

    /// GPU counts per slot, keyed by slot identity. Two sets with equal slot
    /// counts are interchangeable: rho depends only on counts and spans, and
    /// GPUs within a slot are fungible.
    pub fn slot_counts(&self) -> BTreeMap<(usize, usize, usize), usize> {
        let mut counts = BTreeMap::new();
        for g in &self.gpus {
            *counts.entry(g.slot_key()).or_insert(0) += 1;
        }
        counts
    }

    /// Canonical topology signature: per-rack sorted lists of per-machine
    /// sorted slot counts, racks sorted. Two sets with the same signature are
    /// indistinguishable to any span-based computation.
    pub fn signature(&self) -> Vec<Vec<Vec<usize>>> {
        let mut per_slot: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
        for g in &self.gpus {
            *per_slot.entry(g.slot_key()).or_insert(0) += 1;
        }
        let mut per_machine: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for ((r, m, _), n) in per_slot {
            per_machine.entry((r, m)).or_default().push(n);
        }
        let mut per_rack: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
        for ((r, _), mut slots) in per_machine {
            slots.sort_unstable_by(|a, b| b.cmp(a));
            per_rack.entry(r).or_default().push(slots);
        }
        let mut sig: Vec<Vec<Vec<usize>>> = per_rack
            .into_values()
            .map(|mut machines| {
                machines.sort_unstable_by(|a, b| b.cmp(a));
                machines
            })
            .collect();
        sig.sort_unstable_by(|a, b| b.cmp(a));
        sig
    }
}

impl FromIterator<GpuId> for GpuSet {
    fn from_iter<T: IntoIterator<Item = GpuId>>(iter: T) -> Self {
        GpuSet {
            gpus: iter.into_iter().collect(),
        }
    }
}

/// Widest topological boundary crossed by an allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpanLevel {
    Slot,
    Machine,
    Rack,
    CrossRack,
}

/// Widest boundary crossed by a non-empty set of GPUs.
pub fn span_level(gpus: &GpuSet) -> Result<SpanLevel> {
    let mut iter = gpus.iter();
    let first = iter.next().ok_or(Error::EmptyAllocation)?;
    let mut level = SpanLevel::Slot;
    for g in iter {
        let pair = if g.rack != first.rack {
            SpanLevel::CrossRack
        } else if g.machine != first.machine {
            SpanLevel::Rack
        } else if g.slot != first.slot {
            SpanLevel::Machine
        } else {
            SpanLevel::Slot
        };
        level = level.max(pair);
    }
    Ok(level)
}

/// Multiplicative iteration-time slowdown per span level. The slot factor is
/// pinned to 1.0 and factors are non-decreasing toward cross-rack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowdownProfile {
    pub slot: f64,
    pub machine: f64,
    pub rack: f64,
    pub cross_rack: f64,
}

impl SlowdownProfile {
    pub fn new(slot: f64, machine: f64, rack: f64, cross_rack: f64) -> Result<Self> {
        let p = Self { slot, machine, rack, cross_rack };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slot != 1.0 {
            return Err(Error::InvalidProfile("slot factor must be exactly 1.0".into()));
        }
        if !(self.slot <= self.machine && self.machine <= self.rack && self.rack <= self.cross_rack)
        {
            return Err(Error::InvalidProfile(
                "factors must be non-decreasing from slot to cross-rack".into(),
            ));
        }
        Ok(())
    }

    /// Placement-insensitive apps: no penalty at any spread.
    pub fn compute_class() -> Self {
        Self { slot: 1.0, machine: 1.0, rack: 1.0, cross_rack: 1.0 }
    }

    /// Placement-sensitive apps. The machine-spread factor of 2.0 matches the
    /// observed throughput halving of communication-heavy models; the
    /// within-machine and cross-rack values are interpolations.
    pub fn network_class() -> Self {
        Self { slot: 1.0, machine: 1.2, rack: 2.0, cross_rack: 2.5 }
    }

    pub fn factor(&self, level: SpanLevel) -> f64 {
        match level {
            SpanLevel::Slot => self.slot,
            SpanLevel::Machine => self.machine,
            SpanLevel::Rack => self.rack,
            SpanLevel::CrossRack => self.cross_rack,
        }
    }
}

/// Slowdown of an allocation: the profile factor at its span level.
pub fn slowdown(profile: &SlowdownProfile, gpus: &GpuSet) -> Result<f64> {
    Ok(profile.factor(span_level(gpus)?))
}

/// Placement score in (0, 1]: the reciprocal of slowdown.
pub fn placement_score(profile: &SlowdownProfile, gpus: &GpuSet) -> Result<f64> {
    Ok(1.0 / slowdown(profile, gpus)?)
}

/// Per-GPU lease bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpuLease {
    pub owner: AppId,
    pub expiry: f64,
}

/// Ownership map for every GPU in a cluster. A GPU is free when it has no
/// owner or its lease has expired (expiry is inclusive).
#[derive(Debug, Clone)]
pub struct OwnershipState {
    leases: BTreeMap<GpuId, GpuLease>,
    all: GpuSet,
}

impl OwnershipState {
    pub fn new(cluster: &ClusterSpec) -> Self {
        Self {
            leases: BTreeMap::new(),
            all: cluster.all_gpus(),
        }
    }

    pub fn lease(&self, gpu: &GpuId) -> Option<GpuLease> {
        self.leases.get(gpu).copied()
    }

    pub fn owner(&self, gpu: &GpuId) -> Option<AppId> {
        self.leases.get(gpu).map(|l| l.owner)
    }

    /// Install a lease. Panics if the GPU is unknown; the caller is expected
    /// to hand out only free GPUs.
    pub fn install(&mut self, gpu: GpuId, owner: AppId, expiry: f64) {
        assert!(self.all.contains(&gpu), "lease on GPU outside cluster");
        self.leases.insert(gpu, GpuLease { owner, expiry });
    }

    /// Drop every lease with expiry <= now; returns the freed GPUs grouped by
    /// previous owner.
    pub fn expire(&mut self, now: f64) -> BTreeMap<AppId, GpuSet> {
        let expired: Vec<GpuId> = self
            .leases
            .iter()
            .filter(|(_, l)| l.expiry <= now)
            .map(|(g, _)| *g)
            .collect();
        let mut freed: BTreeMap<AppId, GpuSet> = BTreeMap::new();
        for g in expired {
            let lease = self.leases.remove(&g).unwrap();
            freed.entry(lease.owner).or_default().insert(g);
        }
        freed
    }

    /// Release all GPUs held by an app (e.g. on finish).
    pub fn release_owner(&mut self, owner: AppId) -> GpuSet {
        let gone: Vec<GpuId> = self
            .leases
            .iter()
            .filter(|(_, l)| l.owner == owner)
            .map(|(g, _)| *g)
            .collect();
        let mut freed = GpuSet::new();
        for g in gone {
            self.leases.remove(&g);
            freed.insert(g);
        }
        freed
    }

    /// GPUs with no owner or an expired lease at `now`, in canonical order.
    pub fn free_gpus(&self, now: f64) -> GpuSet {
        self.all
            .iter()
            .filter(|g| match self.leases.get(g) {
                None => true,
                Some(l) => l.expiry <= now,
            })
            .copied()
            .collect()
    }

    pub fn holdings(&self, owner: AppId) -> GpuSet {
        self.leases
            .iter()
            .filter(|(_, l)| l.owner == owner)
            .map(|(g, _)| *g)
            .collect()
    }

    /// Earliest lease expiry strictly greater than `now`, if any.
    pub fn next_expiry(&self, now: f64) -> Option<f64> {
        self.leases
            .values()
            .map(|l| l.expiry)
            .filter(|&e| e > now)
            .min_by(f64::total_cmp)
    }
}

/// Pick `k` GPUs from `pool` minimizing the span of the picked set: first try
/// a single slot, then a single machine, then a single rack, else fall back
/// to canonical order. Ties go to the container that appears first in
/// canonical order. Returns fewer than `k` only when the pool is smaller.
pub fn pick_consolidated(pool: &GpuSet, k: usize) -> GpuSet {
    if k == 0 {
        return GpuSet::new();
    }
    if pool.count() <= k {
        return pool.clone();
    }
    let mut by_slot: BTreeMap<(usize, usize, usize), Vec<GpuId>> = BTreeMap::new();
    let mut by_machine: BTreeMap<(usize, usize), Vec<GpuId>> = BTreeMap::new();
    let mut by_rack: BTreeMap<usize, Vec<GpuId>> = BTreeMap::new();
    for g in pool.iter() {
        by_slot.entry(g.slot_key()).or_default().push(*g);
        by_machine.entry(g.machine_key()).or_default().push(*g);
        by_rack.entry(g.rack).or_default().push(*g);
    }
    for container in [&by_slot]
        .into_iter()
        .flat_map(|m| m.values())
        .chain(by_machine.values())
        .chain(by_rack.values())
    {
        if container.len() >= k {
            return container.iter().take(k).copied().collect();
        }
    }
    pool.iter().take(k).copied().collect()
}

/// Pick `k` GPUs from `pool` maximizing spread: round-robin one GPU at a time
/// across racks, then machines within racks. Deterministic.
pub fn pick_spread(pool: &GpuSet, k: usize) -> GpuSet {
    if k == 0 {
        return GpuSet::new();
    }
    if pool.count() <= k {
        return pool.clone();
    }
    let mut by_machine: BTreeMap<(usize, usize), Vec<GpuId>> = BTreeMap::new();
    for g in pool.iter() {
        by_machine.entry(g.machine_key()).or_default().push(*g);
    }
    // Interleave racks so consecutive picks cross the widest boundary first.
    let mut queues: Vec<Vec<GpuId>> = by_machine.into_values().collect();
    for q in &mut queues {
        q.reverse(); // pop() yields canonical order
    }
    let mut picked = GpuSet::new();
    while picked.count() < k {
        let mut progressed = false;
        for q in &mut queues {
            if picked.count() >= k {
                break;
            }
            if let Some(g) = q.pop() {
                picked.insert(g);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    picked
}
