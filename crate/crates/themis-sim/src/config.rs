//! Run configuration: a TOML file with cluster, policy, overheads, workload
//! and seeds sections, resolved into a SimConfig plus a workload.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::app::{AppId, AppSpec};
use crate::cluster::{ClusterSpec, SlowdownProfile};
use crate::error::{Error, Result};
use crate::schedulers::{PolicyKind, SchedulerPolicy};
use crate::sim::{ClassProfiles, LyingConfig, SimConfig};
use crate::workload::{self, SyntheticSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub cluster: ClusterSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub overheads: OverheadsSection,
    #[serde(default)]
    pub workload: WorkloadSection,
    #[serde(default)]
    pub seeds: SeedsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    /// racks[r][m][s] = GPUs in slot s of machine m of rack r.
    pub racks: Vec<Vec<Vec<u32>>>,
    /// Slowdown factors [slot, machine, rack, cross_rack] per app class.
    #[serde(default = "default_compute_profile")]
    pub compute_profile: [f64; 4],
    #[serde(default = "default_network_profile")]
    pub network_profile: [f64; 4],
}

fn default_compute_profile() -> [f64; 4] {
    [1.0, 1.0, 1.0, 1.0]
}

fn default_network_profile() -> [f64; 4] {
    [1.0, 1.2, 2.0, 2.5]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub scheduler: String,
    pub f: f64,
    pub lease_s: f64,
    pub candidate_cap: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            scheduler: "themis".into(),
            f: 0.8,
            lease_s: 600.0,
            candidate_cap: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverheadsSection {
    pub checkpoint_s: f64,
    pub container_s: f64,
}

impl Default for OverheadsSection {
    fn default() -> Self {
        // midpoints of the measured 5-10 s checkpoint and 35-50 s container
        // change windows
        Self { checkpoint_s: 7.5, container_s: 42.5 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum WorkloadMode {
    #[default]
    Synthetic,
    File,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    #[serde(default)]
    pub mode: WorkloadMode,
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsSection {
    pub seed: u64,
    pub horizon_s: f64,
    pub error_theta: f64,
    pub lying_app_id: Option<u32>,
    pub lying_x_pct: f64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        Self {
            seed: 42,
            horizon_s: 500_000.0,
            error_theta: 0.0,
            lying_app_id: None,
            lying_x_pct: 0.0,
        }
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ConfigFile> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_sim_config(&self) -> Result<SimConfig> {
        let cluster = ClusterSpec::new(self.cluster.racks.clone())?;
        let [s0, m0, r0, x0] = self.cluster.compute_profile;
        let [s1, m1, r1, x1] = self.cluster.network_profile;
        let profiles = ClassProfiles {
            compute: SlowdownProfile::new(s0, m0, r0, x0)?,
            network: SlowdownProfile::new(s1, m1, r1, x1)?,
        };
        let kind: PolicyKind = self.policy.scheduler.parse()?;
        let config = SimConfig {
            cluster,
            policy: SchedulerPolicy {
                kind,
                f: self.policy.f,
                lease_duration: self.policy.lease_s,
                candidate_cap: self.policy.candidate_cap,
                theta: self.seeds.error_theta,
            },
            profiles,
            checkpoint_overhead: self.overheads.checkpoint_s,
            container_overhead: self.overheads.container_s,
            lying: self.seeds.lying_app_id.map(|id| LyingConfig {
                app: AppId(id),
                x_percent: self.seeds.lying_x_pct,
            }),
            seed: self.seeds.seed,
            horizon: self.seeds.horizon_s,
        };
        config.validate()?;
        Ok(config)
    }

    /// Produce the run's workload: either loaded from the configured file or
    /// drawn from the synthetic sampler with the run seed.
    pub fn resolve_workload(&self, seed: u64) -> Result<Vec<AppSpec>> {
        match self.workload.mode {
            WorkloadMode::File => {
                let path = self.workload.file.as_ref().ok_or_else(|| {
                    Error::Config("workload.mode = file requires workload.file".into())
                })?;
                workload::load(path)
            }
            WorkloadMode::Synthetic => workload::generate(&self.workload.synthetic, seed),
        }
    }
}
