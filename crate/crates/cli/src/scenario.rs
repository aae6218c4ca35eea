//! The scenario document every subcommand except `ingest` and `compare` reads.

use std::fs;
use std::path::{Path, PathBuf};

use livecap_core::allocation::{CellConfig, TwoClassConfig, User};
use livecap_core::channel::{read_trace, split_by_user, McsTable, RatePmf, SignalMap, TraceRecord};
use livecap_core::playout::{FrameParams, QoeConstraints};
use livecap_core::presets;
use livecap_core::sim::{AbrParams, PacketSizes};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(rename = "K")]
    pub blocks: u32,
    pub frame_ms: f64,
    pub packet_bits: f64,
    pub buffer_packets: usize,
    pub users: Vec<UserEntry>,
    pub epsilon: f64,
    pub delta0: f64,
    #[serde(default)]
    pub u_min_bps: Option<f64>,
    #[serde(default)]
    pub u_max_bps: Option<f64>,
    #[serde(default)]
    pub two_class: Option<TwoClassEntry>,
    #[serde(default)]
    pub sim: SimEntry,
    /// Directory of the scenario file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A user's rate distribution comes from exactly one of `pmf`, `pmf_file`
/// or `preset` (reference users 1 to 8).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEntry {
    pub id: String,
    #[serde(default)]
    pub pmf: Option<RatePmf>,
    #[serde(default)]
    pub pmf_file: Option<PathBuf>,
    #[serde(default)]
    pub preset: Option<usize>,
    /// Static frame ratio; defaults to an equal split.
    #[serde(default)]
    pub share: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoClassEntry {
    /// Ids of the premium users; everyone else is regular.
    pub premium: Vec<String>,
    pub rate_ratio: f64,
    #[serde(default)]
    pub delta_premium: Option<f64>,
    #[serde(default)]
    pub delta_regular: Option<f64>,
    #[serde(default)]
    pub epsilon_premium: Option<f64>,
    #[serde(default)]
    pub epsilon_regular: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Constant,
    Abr,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimEntry {
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    /// Constant policy batch; defaults to the analytical maximum.
    #[serde(default)]
    pub service: Option<usize>,
    #[serde(default)]
    pub abr: AbrEntry,
    /// Packet sizes uniform in `[(1 - s) sigma, (1 + s) sigma]`.
    #[serde(default)]
    pub packet_spread: Option<f64>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Replay a signal trace instead of sampling the PMFs.
    #[serde(default)]
    pub trace: Option<TraceEntry>,
}

fn default_frames() -> usize {
    900_000
}

fn default_runs() -> usize {
    10
}

fn default_policy() -> PolicyKind {
    PolicyKind::Constant
}

fn default_eta() -> f64 {
    0.05
}

impl Default for SimEntry {
    fn default() -> Self {
        SimEntry {
            frames: default_frames(),
            runs: default_runs(),
            seed: 0,
            policy: default_policy(),
            service: None,
            abr: AbrEntry::default(),
            packet_spread: None,
            eta: default_eta(),
            trace: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbrEntry {
    /// Lower threshold as a fraction of the buffer.
    pub low: f64,
    pub high: f64,
    pub theta: f64,
    /// Starting rate; defaults to the analytical equal-experience rate.
    #[serde(default)]
    pub u_init_bps: Option<f64>,
}

impl Default for AbrEntry {
    fn default() -> Self {
        let (low, high, theta) = AbrParams::SCENARIOS[0];
        AbrEntry {
            low,
            high,
            theta,
            u_init_bps: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub path: PathBuf,
    #[serde(default)]
    pub mcs: Option<PathBuf>,
    #[serde(default)]
    pub mapping: Option<PathBuf>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_mcs(path: Option<&Path>) -> CliResult<McsTable> {
    path.map_or_else(|| Ok(presets::mcs_table()), read_json)
}

pub fn load_mapping(path: Option<&Path>) -> CliResult<SignalMap> {
    path.map_or_else(|| Ok(SignalMap::default()), read_json)
}

pub fn load_trace(path: &Path) -> CliResult<Vec<TraceRecord>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(read_trace(file)?)
}

fn scenario_err(msg: impl Into<String>) -> CliError {
    CliError::Scenario(msg.into())
}

impl Scenario {
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut sc: Scenario = read_json(path)?;
        sc.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        sc.validate()?;
        Ok(sc)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> CliResult<()> {
        if self.users.is_empty() {
            return Err(scenario_err("no users"));
        }
        if self.buffer_packets < 2 {
            return Err(scenario_err("buffer_packets must be at least 2"));
        }
        let mut ids: Vec<&str> = self.users.iter().map(|u| u.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(scenario_err(format!("duplicate user id {:?}", w[0])));
        }
        for u in &self.users {
            let sources =
                u.pmf.is_some() as u8 + u.pmf_file.is_some() as u8 + u.preset.is_some() as u8;
            if sources != 1 {
                return Err(scenario_err(format!(
                    "user {}: give exactly one of pmf, pmf_file, preset",
                    u.id
                )));
            }
            if let Some(f) = &u.pmf_file {
                let p = self.resolve(f);
                if !p.is_file() {
                    return Err(scenario_err(format!("user {}: {} not found", u.id, p.display())));
                }
            }
            if let Some(k) = u.preset {
                if !(1..=8).contains(&k) {
                    return Err(scenario_err(format!("user {}: preset must be 1..=8", u.id)));
                }
            }
            if let Some(s) = u.share {
                if !(s > 0.0 && s <= 1.0) {
                    return Err(scenario_err(format!("user {}: share must lie in (0, 1]", u.id)));
                }
            }
        }
        let total: f64 = self.shares().iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(scenario_err(format!("shares add up to {total:.6} > 1")));
        }
        if let (Some(lo), Some(hi)) = (self.u_min_bps, self.u_max_bps) {
            if hi < lo {
                return Err(scenario_err("u_max_bps must be >= u_min_bps"));
            }
        }
        if let Some(s) = self.sim.service {
            if s == 0 || s >= self.buffer_packets {
                return Err(scenario_err(format!(
                    "sim.service {s} must lie in [1, buffer_packets)"
                )));
            }
        }
        if let Some(tc) = &self.two_class {
            for id in &tc.premium {
                if !self.users.iter().any(|u| &u.id == id) {
                    return Err(scenario_err(format!("two_class: unknown premium user {id:?}")));
                }
            }
        }
        if let Some(t) = &self.sim.trace {
            for p in [Some(&t.path), t.mcs.as_ref(), t.mapping.as_ref()].into_iter().flatten() {
                let p = self.resolve(p);
                if !p.is_file() {
                    return Err(scenario_err(format!("{} not found", p.display())));
                }
            }
        }
        self.frame()?;
        self.constraints()?;
        Ok(())
    }

    pub fn frame(&self) -> CliResult<FrameParams> {
        Ok(FrameParams::new(self.frame_ms / 1e3, self.packet_bits)?)
    }

    pub fn constraints(&self) -> CliResult<QoeConstraints> {
        Ok(QoeConstraints::new(self.epsilon, self.delta0)?)
    }

    /// Static frame ratio of every user; unset shares split what is left equally.
    pub fn shares(&self) -> Vec<f64> {
        let fixed: f64 = self.users.iter().filter_map(|u| u.share).sum();
        let unset = self.users.iter().filter(|u| u.share.is_none()).count();
        let rest = if unset > 0 {
            (1.0 - fixed).max(0.0) / unset as f64
        } else {
            0.0
        };
        self.users.iter().map(|u| u.share.unwrap_or(rest)).collect()
    }

    pub fn pmf(&self, user: &UserEntry) -> CliResult<RatePmf> {
        if let Some(p) = &user.pmf {
            return Ok(p.clone());
        }
        if let Some(f) = &user.pmf_file {
            return read_json(&self.resolve(f));
        }
        Ok(presets::user_pmf(user.preset.expect("validated")))
    }

    pub fn cell(&self) -> CliResult<CellConfig> {
        let users = self
            .users
            .iter()
            .map(|u| Ok(User::new(u.id.clone(), self.pmf(u)?)))
            .collect::<CliResult<Vec<_>>>()?;
        Ok(CellConfig::new(users, self.blocks, self.frame()?, self.buffer_packets)?)
    }

    pub fn two_class_config(&self) -> CliResult<TwoClassConfig> {
        let tc = self
            .two_class
            .as_ref()
            .ok_or_else(|| scenario_err("objective two-class needs a two_class section"))?;
        let mut premium = Vec::new();
        let mut regular = Vec::new();
        for u in &self.users {
            let pmf = self.pmf(u)?;
            if tc.premium.contains(&u.id) {
                premium.push(pmf);
            } else {
                regular.push(pmf);
            }
        }
        Ok(TwoClassConfig {
            premium,
            regular,
            rate_ratio: tc.rate_ratio,
            delta_premium: tc.delta_premium.unwrap_or(self.delta0),
            delta_regular: tc.delta_regular.unwrap_or(self.delta0),
            epsilon_premium: tc.epsilon_premium.unwrap_or(self.epsilon),
            epsilon_regular: tc.epsilon_regular.unwrap_or(self.epsilon),
        })
    }

    pub fn packet_sizes(&self) -> PacketSizes {
        match self.sim.packet_spread {
            Some(spread) => PacketSizes::Uniform { spread },
            None => PacketSizes::Fixed,
        }
    }

    /// Per-user trace records keyed by user id, when trace playback is on.
    pub fn trace(&self) -> CliResult<Option<(std::collections::BTreeMap<String, Vec<TraceRecord>>, McsTable, SignalMap)>> {
        let Some(t) = &self.sim.trace else {
            return Ok(None);
        };
        let records = load_trace(&self.resolve(&t.path))?;
        let mcs = load_mcs(t.mcs.as_ref().map(|p| self.resolve(p)).as_deref())?;
        let map = load_mapping(t.mapping.as_ref().map(|p| self.resolve(p)).as_deref())?;
        Ok(Some((split_by_user(records), mcs, map)))
    }
}
