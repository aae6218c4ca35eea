//! Sharing the frame between the users of a cell.
//!
//! A user holding frame ratio `Y` in a frame gets `K * Y * R` bits/s, where
//! `R` is its per-block rate in that frame. Three operator objectives are
//! covered: the same playout rate for everybody (shares inversely
//! proportional to the per-block rates), the largest number of users at a
//! target resolution on top of a guaranteed minimum (static shares), and a
//! premium/regular split of the blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::RatePmf;
use crate::error::{Error, Result};
use crate::playout::{max_playout_rate, FrameParams, PlayoutSolution, QoeConstraints};
use crate::queueing::ArrivalPmf;

pub mod baseline;

/// A user and its per-block rate distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: String,
    pub pmf: RatePmf,
}

impl User {
    pub fn new(id: impl Into<String>, pmf: RatePmf) -> Self {
        User { id: id.into(), pmf }
    }
}

/// Users of one cell sharing `blocks` resource blocks per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub users: Vec<User>,
    pub blocks: u32,
    pub frame: FrameParams,
    /// Playout buffer of every user, in packets.
    pub buffer: usize,
}

impl CellConfig {
    pub fn new(users: Vec<User>, blocks: u32, frame: FrameParams, buffer: usize) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::InvalidInput("a cell needs at least one block".into()));
        }
        if users.is_empty() {
            return Err(Error::InvalidInput("a cell needs at least one user".into()));
        }
        if buffer <= 1 {
            return Err(Error::BufferTooSmall { packets: buffer });
        }
        Ok(CellConfig {
            users,
            blocks,
            frame,
            buffer,
        })
    }

    pub fn pmfs(&self) -> Vec<RatePmf> {
        self.users.iter().map(|u| u.pmf.clone()).collect()
    }
}

/// Frame ratios `Y_i = (1/R_i) / sum_j (1/R_j)`, which give every user the
/// same rate `K / sum_j (1/R_j)` in this frame.
pub fn dynamic_share(rates_bps: &[f64]) -> Result<Vec<f64>> {
    if rates_bps.is_empty() {
        return Err(Error::InvalidInput("no users".into()));
    }
    if let Some(i) = rates_bps.iter().position(|&r| r <= 0.0) {
        return Err(Error::UserInOutage(i));
    }
    let total: f64 = rates_bps.iter().map(|r| 1.0 / r).sum();
    Ok(rates_bps.iter().map(|r| (1.0 / r) / total).collect())
}

/// Resolution of the grid on which `sum_j 1/R_j` is convolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Bins spanning `[sum_j min 1/R_j, sum_j max 1/R_j]`.
    pub bins: usize,
    /// Requests above this many bins fail with a grid-overflow error.
    pub max_bins: usize,
    /// Rate substituted for zero-rate atoms; `None` uses a tenth of the
    /// smallest positive rate in the cell.
    pub rate_floor: Option<f64>,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            bins: 1 << 14,
            max_bins: 1 << 22,
            rate_floor: None,
        }
    }
}

/// Per-block rate used in place of a zero-rate atom: a tenth of the smallest
/// positive rate among all users, unless overridden.
pub fn rate_floor(pmfs: &[RatePmf], options: &GridOptions) -> Result<f64> {
    if let Some(r) = options.rate_floor {
        if r > 0.0 {
            return Ok(r);
        }
        return Err(Error::InvalidInput("rate floor must be > 0".into()));
    }
    pmfs.iter()
        .flat_map(|p| p.support().iter().copied())
        .filter(|&r| r > 0.0)
        .min_by(f64::total_cmp)
        .map(|r| r / 10.0)
        .ok_or_else(|| Error::InvalidInput("every user has zero rate in every frame".into()))
}

/// Distribution of `sum_j 1/R_j` as `(value, probability)` atoms.
///
/// Users are added one at a time. Each partial sum lives on a uniform grid of
/// common bin width; a bin keeps its probability mass and the mass-weighted
/// mean of the values that fell into it, so the total mass and the mean are
/// preserved exactly and only the spread within a bin is lost.
pub fn reciprocal_sum_distribution(
    pmfs: &[RatePmf],
    options: &GridOptions,
) -> Result<Vec<(f64, f64)>> {
    if pmfs.is_empty() {
        return Err(Error::InvalidInput("no users".into()));
    }
    if options.bins == 0 {
        return Err(Error::InvalidInput("grid needs at least one bin".into()));
    }
    if options.bins > options.max_bins {
        return Err(Error::GridOverflow {
            requested: options.bins,
            suggested: options.max_bins,
        });
    }
    let floor = rate_floor(pmfs, options)?;
    let reciprocals: Vec<Vec<(f64, f64)>> = pmfs
        .iter()
        .map(|pmf| {
            pmf.atoms()
                .filter(|(_, p)| *p > 0.0)
                .map(|(r, p)| (1.0 / r.max(floor), p))
                .collect()
        })
        .collect();
    let lowest = |atoms: &[(f64, f64)]| atoms.iter().map(|a| a.0).fold(f64::INFINITY, f64::min);
    let highest = |atoms: &[(f64, f64)]| atoms.iter().map(|a| a.0).fold(0.0, f64::max);
    let total_lo: f64 = reciprocals.iter().map(|a| lowest(a)).sum();
    let total_hi: f64 = reciprocals.iter().map(|a| highest(a)).sum();
    let width = (total_hi - total_lo) / options.bins as f64;

    // (mass, mass * value) per bin of the running partial sum
    let mut lo = 0.0;
    let mut bins: Vec<(f64, f64)> = vec![(1.0, 0.0)];
    for atoms in &reciprocals {
        let next_lo = lo + lowest(atoms);
        let span = highest(atoms) - lowest(atoms);
        let extra = if width > 0.0 {
            (span / width).ceil() as usize + 1
        } else {
            0
        };
        let mut next = vec![(0.0, 0.0); (bins.len() + extra).min(options.bins + 1).max(1)];
        let last = next.len() - 1;
        for &(mass, moment) in &bins {
            if mass == 0.0 {
                continue;
            }
            let centre = moment / mass;
            for &(x, p) in atoms {
                let value = centre + x;
                let idx = if width > 0.0 {
                    (((value - next_lo) / width).floor().max(0.0) as usize).min(last)
                } else {
                    0
                };
                let m = mass * p;
                next[idx].0 += m;
                next[idx].1 += m * value;
            }
        }
        bins = next;
        lo = next_lo;
    }
    Ok(bins
        .into_iter()
        .filter(|(m, _)| *m > 0.0)
        .map(|(m, moment)| (moment / m, m))
        .collect())
}

/// Arrival distribution `floor(C dt / sigma)` with `C = K / sum_j (1/R_j)`,
/// the common rate under inverse-proportional sharing.
pub fn equal_experience_arrivals(cell: &CellConfig, options: &GridOptions) -> Result<ArrivalPmf> {
    let sums = reciprocal_sum_distribution(&cell.pmfs(), options)?;
    ArrivalPmf::from_atoms(
        sums.into_iter()
            .map(|(s, p)| (cell.frame.packets_delivered(cell.blocks as f64, 1.0 / s), p)),
    )
}

/// Highest playout rate every user of the cell can sustain when the blocks
/// are shared inversely to the per-block rates.
pub fn equal_experience_rate(
    cell: &CellConfig,
    constraints: &QoeConstraints,
    options: &GridOptions,
) -> Result<PlayoutSolution> {
    let arrivals = equal_experience_arrivals(cell, options)?;
    max_playout_rate(&arrivals, cell.buffer, &cell.frame, constraints)
}

/// Static frame ratio that gives a user `u_min` bits/s on average after
/// losing a fraction `delta0` of its packets:
/// `u_min / ((1 - delta0) K E[R])`. Values above 1 mean the user cannot be
/// served at `u_min` even with the whole frame.
pub fn min_rate_share(u_min: f64, delta0: f64, blocks: u32, pmf: &RatePmf) -> Result<f64> {
    let mean = pmf.mean();
    if mean <= 0.0 {
        return Err(Error::InvalidInput("user has zero mean rate".into()));
    }
    if !(0.0..1.0).contains(&delta0) || u_min < 0.0 {
        return Err(Error::InvalidInput("need u_min >= 0 and delta0 in [0, 1)".into()));
    }
    Ok(u_min / ((1.0 - delta0) * blocks as f64 * mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanKind {
    DynamicInverse,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserShare {
    pub id: String,
    pub share: f64,
}

/// Frame ratios of the users of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub kind: PlanKind,
    /// Static frame ratios; empty for dynamic plans.
    pub shares: Vec<UserShare>,
    /// Unallocated part of the frame.
    pub leftover: f64,
}

impl AllocationPlan {
    fn fixed(shares: Vec<UserShare>) -> Self {
        let used: f64 = shares.iter().map(|s| s.share).sum();
        AllocationPlan {
            kind: PlanKind::Static,
            shares,
            leftover: (1.0 - used).max(0.0),
        }
    }

    pub fn dynamic() -> Self {
        AllocationPlan {
            kind: PlanKind::DynamicInverse,
            shares: Vec::new(),
            leftover: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub admitted: Vec<String>,
    pub rejected: Vec<String>,
    pub plan: AllocationPlan,
}

fn min_shares(cell: &CellConfig, u_min: f64, delta0: f64) -> Result<Vec<f64>> {
    cell.users
        .iter()
        .map(|u| min_rate_share(u_min, delta0, cell.blocks, &u.pmf))
        .collect()
}

/// Admits users cheapest first (smallest minimum share, ties by id) while
/// the minimum shares fit in one frame.
pub fn admission_control(cell: &CellConfig, u_min: f64, delta0: f64) -> Result<Admission> {
    let needs = min_shares(cell, u_min, delta0)?;
    let mut order: Vec<usize> = (0..cell.users.len()).collect();
    order.sort_by(|&a, &b| {
        needs[a]
            .total_cmp(&needs[b])
            .then_with(|| cell.users[a].id.cmp(&cell.users[b].id))
    });
    let mut used = 0.0;
    let mut admitted = vec![false; order.len()];
    for &i in &order {
        if used + needs[i] <= 1.0 + 1e-12 {
            used += needs[i];
            admitted[i] = true;
        } else {
            break;
        }
    }
    let shares = (0..cell.users.len())
        .filter(|&i| admitted[i])
        .map(|i| UserShare {
            id: cell.users[i].id.clone(),
            share: needs[i],
        })
        .collect();
    Ok(Admission {
        admitted: (0..cell.users.len())
            .filter(|&i| admitted[i])
            .map(|i| cell.users[i].id.clone())
            .collect(),
        rejected: (0..cell.users.len())
            .filter(|&i| !admitted[i])
            .map(|i| cell.users[i].id.clone())
            .collect(),
        plan: AllocationPlan::fixed(shares),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxResolutionPlan {
    /// Number of users upgraded to the maximum rate.
    pub count: usize,
    pub upgraded: Vec<String>,
    pub plan: AllocationPlan,
}

/// Guarantees `u_min` to every user with static shares, then upgrades users
/// to `u_max` in decreasing order of mean per-block rate (ties by id) while
/// the upgrade costs `(u_max - u_min) / ((1 - delta0) K E[R_i])` fit in the
/// leftover frame.
pub fn max_users_max_resolution(
    cell: &CellConfig,
    u_min: f64,
    u_max: f64,
    delta0: f64,
) -> Result<MaxResolutionPlan> {
    if u_max < u_min {
        return Err(Error::InvalidInput("u_max must be >= u_min".into()));
    }
    let needs = min_shares(cell, u_min, delta0)?;
    let total: f64 = needs.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::InvalidInput(format!(
            "minimum shares add up to {total:.4} > 1; run admission control first"
        )));
    }
    let mut leftover = 1.0 - total;
    let mut order: Vec<usize> = (0..cell.users.len()).collect();
    order.sort_by(|&a, &b| {
        cell.users[b]
            .pmf
            .mean()
            .total_cmp(&cell.users[a].pmf.mean())
            .then_with(|| cell.users[a].id.cmp(&cell.users[b].id))
    });
    let mut shares = needs.clone();
    let mut upgraded = Vec::new();
    for &i in &order {
        let extra = min_rate_share(u_max - u_min, delta0, cell.blocks, &cell.users[i].pmf)?;
        if extra > leftover + 1e-12 {
            break;
        }
        leftover -= extra;
        shares[i] += extra;
        upgraded.push(cell.users[i].id.clone());
    }
    let plan = AllocationPlan::fixed(
        cell.users
            .iter()
            .zip(shares)
            .map(|(u, share)| UserShare {
                id: u.id.clone(),
                share,
            })
            .collect(),
    );
    Ok(MaxResolutionPlan {
        count: upgraded.len(),
        upgraded,
        plan,
    })
}

/// How `E[1 / sum_j (1/R_j)]` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum ExpectationMethod {
    /// Sum over every combination of rate levels.
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
    /// Exact when the number of combinations is at most `max_combinations`,
    /// Monte Carlo otherwise.
    Auto {
        max_combinations: usize,
        samples: usize,
        seed: u64,
    },
}

impl Default for ExpectationMethod {
    fn default() -> Self {
        ExpectationMethod::Auto {
            max_combinations: 1_000_000,
            samples: 1_000_000,
            seed: 0,
        }
    }
}

/// `E[1 / sum_j (1/R_j)]` over independent users. Zero-rate atoms make the
/// expectation undefined here.
pub fn harmonic_expectation(pmfs: &[RatePmf], method: ExpectationMethod) -> Result<f64> {
    if pmfs.is_empty() {
        return Err(Error::NotComputable("no users".into()));
    }
    if pmfs
        .iter()
        .any(|p| p.atoms().any(|(r, q)| r <= 0.0 && q > 0.0))
    {
        return Err(Error::NotComputable("zero-rate atom".into()));
    }
    let combinations = pmfs
        .iter()
        .try_fold(1usize, |acc, p| acc.checked_mul(p.support().len()));
    let method = match method {
        ExpectationMethod::Auto {
            max_combinations,
            samples,
            seed,
        } => match combinations {
            Some(c) if c <= max_combinations => ExpectationMethod::Exact,
            _ => ExpectationMethod::MonteCarlo { samples, seed },
        },
        m => m,
    };
    match method {
        ExpectationMethod::Exact => {
            let mut partial: Vec<(f64, f64)> = vec![(0.0, 1.0)];
            for pmf in pmfs {
                partial = partial
                    .iter()
                    .flat_map(|&(s, q)| pmf.atoms().map(move |(r, p)| (s + 1.0 / r, q * p)))
                    .collect();
            }
            Ok(partial.iter().map(|(s, q)| q / s).sum())
        }
        ExpectationMethod::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::InvalidInput("need at least one sample".into()));
            }
            let samplers: Vec<_> = pmfs.iter().map(|p| p.sampler()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut total = 0.0;
            for _ in 0..samples {
                let s: f64 = samplers.iter().map(|d| 1.0 / d.sample(&mut rng)).sum();
                total += 1.0 / s;
            }
            Ok(total / samples as f64)
        }
        ExpectationMethod::Auto { .. } => unreachable!("resolved above"),
    }
}

/// Premium and regular users with their rate and drop targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoClassConfig {
    pub premium: Vec<RatePmf>,
    pub regular: Vec<RatePmf>,
    /// `U_p / U_r`.
    pub rate_ratio: f64,
    pub delta_premium: f64,
    pub delta_regular: f64,
    /// Outage targets; only used to validate a split afterwards.
    pub epsilon_premium: f64,
    pub epsilon_regular: f64,
}

impl TwoClassConfig {
    pub fn validate(&self) -> Result<()> {
        if self.premium.is_empty() || self.regular.is_empty() {
            return Err(Error::InvalidInput("both classes need users".into()));
        }
        if !(self.rate_ratio >= 1.0) {
            return Err(Error::InvalidInput("rate ratio must be >= 1".into()));
        }
        for v in [
            self.delta_premium,
            self.delta_regular,
            self.epsilon_premium,
            self.epsilon_regular,
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidInput("targets must lie in [0, 1)".into()));
            }
        }
        if self.delta_regular < self.delta_premium || self.epsilon_regular < self.epsilon_premium {
            return Err(Error::InvalidInput(
                "regular targets must not be tighter than premium ones".into(),
            ));
        }
        Ok(())
    }
}

/// Block split between the classes and the rates each class can sustain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoClassSplit {
    #[serde(rename = "K_p")]
    pub blocks_premium: u32,
    #[serde(rename = "K_r")]
    pub blocks_regular: u32,
    /// Continuous ratio of premium to regular blocks.
    pub ratio: f64,
    #[serde(rename = "U_p_bps")]
    pub rate_premium: f64,
    #[serde(rename = "U_r_bps")]
    pub rate_regular: f64,
    /// `E[1 / sum 1/R]` over the regular users.
    #[serde(rename = "E1")]
    pub harmonic_regular: f64,
    /// `E[1 / sum 1/R]` over the premium users.
    #[serde(rename = "E2")]
    pub harmonic_premium: f64,
}

/// Splits `blocks` between premium and regular users so that the premium
/// rate is `rate_ratio` times the regular one, with each class sharing its
/// blocks inversely to the per-block rates.
///
/// With `E1`, `E2` the harmonic expectations of the regular and premium
/// classes, the ratio of premium to regular blocks is
/// `c = k (1 - delta_r) / (1 - delta_p) * E1 / E2`, and the rates are
/// `U_p = (1 - delta_p) c K E2 / (1 + c)` and `U_r = (1 - delta_r) K E1 / (1 + c)`.
/// The integer block counts floor the premium share.
pub fn two_class_split(
    cfg: &TwoClassConfig,
    blocks: u32,
    method: ExpectationMethod,
) -> Result<TwoClassSplit> {
    cfg.validate()?;
    let e1 = harmonic_expectation(&cfg.regular, method)?;
    let e2 = harmonic_expectation(&cfg.premium, method)?;
    let k = blocks as f64;
    let ratio = cfg.rate_ratio * (1.0 - cfg.delta_regular) / (1.0 - cfg.delta_premium) * e1 / e2;
    let premium_blocks = (ratio * k / (1.0 + ratio) + 1e-9).floor() as u32;
    Ok(TwoClassSplit {
        blocks_premium: premium_blocks,
        blocks_regular: blocks - premium_blocks,
        ratio,
        rate_premium: (1.0 - cfg.delta_premium) * ratio * k * e2 / (1.0 + ratio),
        rate_regular: (1.0 - cfg.delta_regular) * k * e1 / (1.0 + ratio),
        harmonic_regular: e1,
        harmonic_premium: e2,
    })
}

/// Arrival distribution of a user holding a fixed frame ratio `share`.
pub fn static_share_arrivals(cell: &CellConfig, pmf: &RatePmf, share: f64) -> Result<ArrivalPmf> {
    cell.frame.arrivals(pmf, cell.blocks as f64 * share)
}

/// Smallest static frame ratio (to within `tolerance`) at which the user can
/// play out at least `rate_bps` within the targets, found by trial and error
/// on the exact queue solution: a share qualifies when some service batch of
/// at least `floor(rate_bps dt / sigma)` packets meets both targets.
/// Returns `None` when even the whole frame does not qualify.
pub fn min_static_share(
    cell: &CellConfig,
    pmf: &RatePmf,
    rate_bps: f64,
    constraints: &QoeConstraints,
    tolerance: f64,
) -> Result<Option<f64>> {
    let s_min = cell.frame.packets_per_frame(rate_bps);
    if s_min == 0 || s_min >= cell.buffer {
        return Err(Error::InvalidInput(format!(
            "rate {rate_bps} b/s maps to {s_min} packets per frame"
        )));
    }
    let qualifies = |share: f64| -> Result<bool> {
        let a = static_share_arrivals(cell, pmf, share)?;
        if a.mean() <= 0.0 {
            return Ok(false);
        }
        let window = crate::playout::candidate_services(&a, cell.buffer, constraints);
        for s in s_min.max(*window.start())..=*window.end() {
            let (o, d) = crate::playout::evaluate(&a, s, cell.buffer)?;
            if constraints.satisfied_by(o, d) {
                return Ok(true);
            }
        }
        Ok(false)
    };
    // Grow from a small share so the solves stay cheap, then bisect.
    let mut hi: f64 = 1.0 / 1024.0;
    while !qualifies(hi)? {
        if hi >= 1.0 {
            return Ok(None);
        }
        hi = (2.0 * hi).min(1.0);
    }
    let mut lo = 0.0;
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if qualifies(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}
