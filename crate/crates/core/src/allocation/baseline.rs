//! Reference sharing policies to compare static allocations against.
//!
//! Each policy turns the joint per-block rates of a frame into per-user data
//! rates. Per-user arrival distributions are estimated by sampling frames.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rate_floor, CellConfig, GridOptions};
use crate::error::{Error, Result};
use crate::playout::{evaluate, QoeConstraints};
use crate::queueing::ArrivalPmf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselinePolicy {
    /// Every user holds `1/n` of the frame.
    EqualShare,
    /// Every user first gets the same constant data rate, chosen so the frame
    /// suffices in all but a fraction `epsilon` of frames; what is left of
    /// the frame is then split equally.
    ConstantThenRedistribute,
    /// `Y_i = R_i / sum_j R_j`.
    ProportionalToRate,
}

impl BaselinePolicy {
    pub const ALL: [BaselinePolicy; 3] = [
        BaselinePolicy::EqualShare,
        BaselinePolicy::ConstantThenRedistribute,
        BaselinePolicy::ProportionalToRate,
    ];
}

/// Sampling settings for [`baseline_arrivals`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineOptions {
    pub frames: usize,
    pub seed: u64,
    /// Fraction of frames in which the constant rate may not fit.
    pub epsilon: f64,
}

/// Per-user data rates (bits/s) in one frame.
fn frame_rates(
    policy: BaselinePolicy,
    blocks: f64,
    rates: &[f64],
    constant_rate: f64,
    out: &mut [f64],
) {
    let n = rates.len() as f64;
    match policy {
        BaselinePolicy::EqualShare => {
            for (o, r) in out.iter_mut().zip(rates) {
                *o = blocks * r / n;
            }
        }
        BaselinePolicy::ProportionalToRate => {
            let total: f64 = rates.iter().sum();
            for (o, r) in out.iter_mut().zip(rates) {
                *o = if total > 0.0 { blocks * r * r / total } else { 0.0 };
            }
        }
        BaselinePolicy::ConstantThenRedistribute => {
            let needed: f64 = rates
                .iter()
                .filter(|&&r| r > 0.0)
                .map(|r| constant_rate / (blocks * r))
                .sum();
            let (scale, spare) = if needed > 1.0 {
                (1.0 / needed, 0.0)
            } else {
                (1.0, (1.0 - needed) / n)
            };
            for (o, &r) in out.iter_mut().zip(rates) {
                *o = if r > 0.0 {
                    constant_rate * scale + spare * blocks * r
                } else {
                    0.0
                };
            }
        }
    }
}

/// Estimated arrival distribution of every user of the cell under `policy`.
///
/// Equal sharing does not couple the users and is computed exactly; the
/// other policies sample `options.frames` frames.
pub fn baseline_arrivals(
    cell: &CellConfig,
    policy: BaselinePolicy,
    options: &BaselineOptions,
) -> Result<Vec<ArrivalPmf>> {
    let blocks = cell.blocks as f64;
    let n = cell.users.len();
    if policy == BaselinePolicy::EqualShare {
        return cell
            .users
            .iter()
            .map(|u| cell.frame.arrivals(&u.pmf, blocks / n as f64))
            .collect();
    }
    if options.frames == 0 {
        return Err(Error::InvalidInput("need at least one sampled frame".into()));
    }
    let samplers: Vec<_> = cell.users.iter().map(|u| u.pmf.sampler()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let draws: Vec<Vec<f64>> = (0..options.frames)
        .map(|_| samplers.iter().map(|s| s.sample(&mut rng)).collect())
        .collect();

    let constant_rate = if policy == BaselinePolicy::ConstantThenRedistribute {
        let floor = rate_floor(&cell.pmfs(), &GridOptions::default())?;
        let mut common: Vec<f64> = draws
            .iter()
            .map(|r| blocks / r.iter().map(|x| 1.0 / x.max(floor)).sum::<f64>())
            .collect();
        common.sort_by(f64::total_cmp);
        let idx = ((options.epsilon * common.len() as f64).floor() as usize).min(common.len() - 1);
        common[idx]
    } else {
        0.0
    };

    let mut counts: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut per_user = vec![0.0; n];
    for rates in &draws {
        frame_rates(policy, blocks, rates, constant_rate, &mut per_user);
        for (i, c) in per_user.iter().enumerate() {
            let a = cell.frame.packets_per_frame(*c);
            if counts[i].len() <= a {
                counts[i].resize(a + 1, 0.0);
            }
            counts[i][a] += 1.0;
        }
    }
    counts
        .into_iter()
        .map(|c| {
            let total = options.frames as f64;
            ArrivalPmf::new(c.into_iter().map(|x| x / total).collect())
        })
        .collect()
}

/// Number of users whose arrivals sustain `rate_bps` within the targets.
pub fn users_sustaining(
    cell: &CellConfig,
    arrivals: &[ArrivalPmf],
    rate_bps: f64,
    constraints: &QoeConstraints,
) -> Result<usize> {
    let s = cell.frame.packets_per_frame(rate_bps);
    if s == 0 || s >= cell.buffer {
        return Err(Error::InvalidInput(format!(
            "rate {rate_bps} b/s maps to {s} packets per frame"
        )));
    }
    let mut count = 0;
    for a in arrivals {
        if a.mean() <= 0.0 {
            continue;
        }
        let (o, d) = evaluate(a, s, cell.buffer)?;
        if constraints.satisfied_by(o, d) {
            count += 1;
        }
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rate_fits_the_frame() {
        let rates = [100.0, 300.0];
        let mut out = [0.0; 2];
        // needed share: 75/100 + 75/300 = 1, nothing left over
        frame_rates(BaselinePolicy::ConstantThenRedistribute, 1.0, &rates, 75.0, &mut out);
        assert_eq!(out, [75.0, 75.0]);
        frame_rates(BaselinePolicy::ConstantThenRedistribute, 1.0, &rates, 50.0, &mut out);
        // leftover 1/3 split equally
        assert!((out[0] - (50.0 + 100.0 / 6.0)).abs() < 1e-12);
        assert!((out[1] - (50.0 + 300.0 / 6.0)).abs() < 1e-12);
        frame_rates(BaselinePolicy::ProportionalToRate, 1.0, &rates, 0.0, &mut out);
        assert_eq!(out, [25.0, 225.0]);
    }
}
