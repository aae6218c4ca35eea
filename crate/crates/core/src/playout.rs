//! Largest constant playout rate meeting outage and drop targets, and the
//! inverse problem of sizing the buffer for a given rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::RatePmf;
use crate::error::{Error, Result};
use crate::queueing::{drop_rate, solve_finite, ArrivalPmf};

/// Slack applied to constraint checks so that exact targets (0) are usable.
pub const CONSTRAINT_SLACK: f64 = 1e-12;
/// Buffers beyond this many packets are not explored by [`min_buffer`].
pub const MAX_BUFFER_PACKETS: usize = 10_000_000;

/// Guards `floor` against values like `9.999999999999998` that are integers
/// up to rounding.
fn floor_count(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

/// Frame duration and packet size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    /// Seconds.
    pub frame_duration: f64,
    /// Bits.
    pub packet_size: f64,
}

impl FrameParams {
    pub fn new(frame_duration: f64, packet_size: f64) -> Result<Self> {
        if !(frame_duration > 0.0 && frame_duration.is_finite()) {
            return Err(Error::InvalidInput("frame duration must be > 0".into()));
        }
        if !(packet_size > 0.0 && packet_size.is_finite()) {
            return Err(Error::InvalidInput("packet size must be > 0".into()));
        }
        Ok(FrameParams {
            frame_duration,
            packet_size,
        })
    }

    /// Playout rate in bits/s for `S` packets per frame.
    pub fn rate_bps(&self, packets_per_frame: usize) -> f64 {
        packets_per_frame as f64 * self.packet_size / self.frame_duration
    }

    /// `floor(U dt / sigma)`.
    pub fn packets_per_frame(&self, rate_bps: f64) -> usize {
        floor_count(rate_bps * self.frame_duration / self.packet_size)
    }

    /// Packets delivered in one frame by `blocks` resource blocks at per-block
    /// rate `rate_bps`.
    pub fn packets_delivered(&self, blocks: f64, rate_bps: f64) -> usize {
        self.packets_per_frame(blocks * rate_bps)
    }

    /// Arrival distribution `floor(blocks * R * dt / sigma)` for a user with
    /// per-block rate distribution `pmf` holding `blocks` blocks every frame.
    pub fn arrivals(&self, pmf: &RatePmf, blocks: f64) -> Result<ArrivalPmf> {
        ArrivalPmf::from_atoms(
            pmf.atoms()
                .map(|(r, p)| (self.packets_delivered(blocks, r), p)),
        )
    }
}

/// Outage and drop targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoeConstraints {
    pub epsilon: f64,
    pub delta0: f64,
}

impl QoeConstraints {
    pub fn new(epsilon: f64, delta0: f64) -> Result<Self> {
        for (name, v) in [("epsilon", epsilon), ("delta0", delta0)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(QoeConstraints { epsilon, delta0 })
    }

    pub fn satisfied_by(&self, outage: f64, drop: f64) -> bool {
        outage <= self.epsilon + CONSTRAINT_SLACK && drop <= self.delta0 + CONSTRAINT_SLACK
    }

    /// Largest violation of either target; non-positive when both hold.
    fn excess(&self, outage: f64, drop: f64) -> f64 {
        (outage - self.epsilon).max(drop - self.delta0)
    }
}

/// A playout operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayoutSolution {
    #[serde(rename = "S")]
    pub service: usize,
    #[serde(rename = "U_bps")]
    pub rate_bps: f64,
    pub outage: f64,
    pub drop: f64,
}

/// Outage and drop of the finite-buffer queue at service batch `s`.
pub fn evaluate(arrivals: &ArrivalPmf, s: usize, buffer: usize) -> Result<(f64, f64)> {
    let dist = solve_finite(arrivals, s, buffer)?;
    Ok((dist.outage(), drop_rate(&dist, arrivals)?))
}

/// Service batches that can possibly meet the targets.
///
/// Whatever the buffer, at most `min(S, E[A])` packets are played per frame
/// and at least `S (1 - outage)`, so `outage >= 1 - E[A]/S` and
/// `drop >= 1 - S/E[A]`. Batches violating either bound are left out.
pub fn candidate_services(
    arrivals: &ArrivalPmf,
    buffer: usize,
    constraints: &QoeConstraints,
) -> std::ops::RangeInclusive<usize> {
    let mean = arrivals.mean();
    let top = (buffer - 1).min(arrivals.max_count());
    let margin = 1e-9;
    // drop bound: S >= E[A] (1 - delta0)
    let low = (mean * (1.0 - constraints.delta0 - margin)).ceil().max(1.0) as usize;
    // outage bound: S <= E[A] / (1 - epsilon)
    let high = (mean / (1.0 - constraints.epsilon - margin)).floor() as usize;
    low..=high.min(top)
}

/// Largest `S` in `[1, B-1]` whose finite-buffer queue meets both targets.
///
/// Every candidate left by the bounds of [`candidate_services`] is solved;
/// no monotonicity in `S` is assumed.
pub fn max_playout_rate(
    arrivals: &ArrivalPmf,
    buffer: usize,
    frame: &FrameParams,
    constraints: &QoeConstraints,
) -> Result<PlayoutSolution> {
    scan_services(arrivals, buffer, frame, constraints, true)
}

/// [`max_playout_rate`] without the pruning bounds: solves every `S` from 1
/// to `min(B - 1, max arrivals)`.
pub fn max_playout_rate_exhaustive(
    arrivals: &ArrivalPmf,
    buffer: usize,
    frame: &FrameParams,
    constraints: &QoeConstraints,
) -> Result<PlayoutSolution> {
    scan_services(arrivals, buffer, frame, constraints, false)
}

fn scan_services(
    arrivals: &ArrivalPmf,
    buffer: usize,
    frame: &FrameParams,
    constraints: &QoeConstraints,
    prune: bool,
) -> Result<PlayoutSolution> {
    if buffer <= 1 {
        return Err(Error::BufferTooSmall { packets: buffer });
    }
    if arrivals.mean() <= 0.0 {
        return Err(Error::NoArrivals);
    }
    let top = (buffer - 1).min(arrivals.max_count());
    let mut candidates = if prune {
        candidate_services(arrivals, buffer, constraints)
    } else {
        1..=top
    };
    if candidates.is_empty() {
        // nothing can work; solve around the mean to report the closest point
        let m = arrivals.mean();
        let near = (m.floor().max(1.0) as usize).min(top);
        candidates = near..=(m.ceil() as usize).clamp(near, top);
    }
    let evaluated: Vec<(usize, f64, f64)> = candidates
        .into_par_iter()
        .map(|s| evaluate(arrivals, s, buffer).map(|(o, d)| (s, o, d)))
        .collect::<Result<_>>()?;

    let point = |&(s, outage, drop): &(usize, f64, f64)| PlayoutSolution {
        service: s,
        rate_bps: frame.rate_bps(s),
        outage,
        drop,
    };
    if let Some(best) = evaluated
        .iter()
        .filter(|(_, o, d)| constraints.satisfied_by(*o, *d))
        .max_by_key(|(s, _, _)| *s)
    {
        return Ok(point(best));
    }
    let closest = evaluated
        .iter()
        .min_by(|a, b| {
            constraints
                .excess(a.1, a.2)
                .total_cmp(&constraints.excess(b.1, b.2))
                .then(b.0.cmp(&a.0))
        })
        .expect("at least one candidate");
    Err(Error::Unsatisfiable {
        best_service: closest.0,
        best_outage: closest.1,
        best_drop: closest.2,
    })
}

/// Smallest buffer `B > S` for which playout at `rate_bps` meets both
/// targets, with `S = floor(U dt / sigma)`.
///
/// Doubles `B` until the targets hold, then bisects. Outage and drop do not
/// increase with `B`.
pub fn min_buffer(
    rate_bps: f64,
    arrivals: &ArrivalPmf,
    frame: &FrameParams,
    constraints: &QoeConstraints,
) -> Result<usize> {
    let s = frame.packets_per_frame(rate_bps);
    if s == 0 {
        return Err(Error::InvalidInput(format!(
            "rate {rate_bps} b/s is below one packet per frame"
        )));
    }
    let mean = arrivals.mean();
    if mean <= 0.0 {
        return Err(Error::NoArrivals);
    }
    // beta <= min(S, E[A]) and beta >= S (1 - outage) bound both metrics for any B.
    let drop_floor = 1.0 - s as f64 / mean;
    let outage_floor = 1.0 - mean / s as f64;
    if drop_floor > constraints.delta0 + CONSTRAINT_SLACK
        || outage_floor > constraints.epsilon + CONSTRAINT_SLACK
    {
        return Err(Error::RateUnsustainable(format!(
            "S = {s} against mean arrivals {mean:.4}: drop >= {:.4}, outage >= {:.4} for every buffer",
            drop_floor.max(0.0),
            outage_floor.max(0.0)
        )));
    }

    let feasible = |b: usize| -> Result<(bool, f64, f64)> {
        let (o, d) = evaluate(arrivals, s, b)?;
        Ok((constraints.satisfied_by(o, d), o, d))
    };

    let mut lo = s; // largest buffer known to fail (S itself is not a valid buffer)
    let mut hi = s + 1;
    let mut previous: Option<(f64, f64)> = None;
    loop {
        let (ok, o, d) = feasible(hi)?;
        if ok {
            break;
        }
        if let Some((po, pd)) = previous {
            if (po - o).abs() < 1e-13 && (pd - d).abs() < 1e-13 && hi > 64 * (s + 1) {
                return Err(Error::RateUnsustainable(format!(
                    "metrics settle at outage {o:.6}, drop {d:.6} as the buffer grows"
                )));
            }
        }
        previous = Some((o, d));
        if hi >= MAX_BUFFER_PACKETS {
            return Err(Error::RateUnsustainable(format!(
                "targets unmet at a buffer of {hi} packets (outage {o:.6}, drop {d:.6})"
            )));
        }
        lo = hi;
        hi = (hi * 2).min(MAX_BUFFER_PACKETS);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if feasible(mid)?.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Buffer of `seconds` of content at playout rate `rate_bps`, in packets.
pub fn buffer_from_seconds(seconds: f64, rate_bps: f64, packet_size: f64) -> Result<usize> {
    if !(seconds > 0.0 && rate_bps > 0.0 && packet_size > 0.0) {
        return Err(Error::InvalidInput(
            "buffer length, rate and packet size must be > 0".into(),
        ));
    }
    let packets = floor_count(rate_bps * seconds / packet_size);
    if packets <= 1 {
        return Err(Error::BufferTooSmall { packets });
    }
    Ok(packets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn frame() -> FrameParams {
        FrameParams::new(0.01, 5000.0).unwrap()
    }

    #[test]
    fn frame_conversions() {
        let f = frame();
        assert_eq!(f.packets_per_frame(5e6), 10);
        assert_eq!(f.rate_bps(10), 5e6);
        assert_eq!(f.packets_per_frame(4.99e6), 9);
        assert!(FrameParams::new(0.0, 1.0).is_err());
        assert!(QoeConstraints::new(1.0, 0.1).is_err());
    }

    #[test]
    fn arrivals_from_rates() {
        let pmf = RatePmf::new(vec![100e3, 200e3], vec![0.5, 0.5]).unwrap();
        let a = frame().arrivals(&pmf, 10.0).unwrap();
        // 10 blocks * 100 kb/s * 10 ms / 5 kb = 2 packets
        assert_eq!(a.probs(), &[0.0, 0.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn deterministic_supply_matches_demand() {
        let a = ArrivalPmf::deterministic(2);
        let c = QoeConstraints::new(0.0, 0.0).unwrap();
        let sol = max_playout_rate(&a, 50, &frame(), &c).unwrap();
        assert_eq!(sol.service, 2);
        assert_eq!(sol.rate_bps, 2.0 * 5000.0 / 0.01);
        assert_eq!((sol.outage, sol.drop), (0.0, 0.0));
    }

    #[test]
    fn unsatisfiable_reports_closest_point() {
        let a = ArrivalPmf::new(vec![0.5, 0.25, 0.25]).unwrap();
        let c = QoeConstraints::new(0.0, 0.0).unwrap();
        match max_playout_rate(&a, 3, &frame(), &c) {
            Err(Error::Unsatisfiable {
                best_service,
                best_outage,
                ..
            }) => {
                assert_eq!(best_service, 1);
                assert_abs_diff_eq!(best_outage, 2.0 / 7.0, epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn min_buffer_without_variability() {
        let a = ArrivalPmf::deterministic(4);
        let c = QoeConstraints::new(0.0, 0.0).unwrap();
        assert_eq!(min_buffer(frame().rate_bps(4), &a, &frame(), &c).unwrap(), 5);
    }

    #[test]
    fn min_buffer_is_tight() {
        let a = ArrivalPmf::from_atoms([(0, 0.3), (1, 0.4), (3, 0.3)]).unwrap();
        let c = QoeConstraints::new(0.6, 0.001).unwrap();
        let rate = frame().rate_bps(2);
        let b = min_buffer(rate, &a, &frame(), &c).unwrap();
        let (o, d) = evaluate(&a, 2, b).unwrap();
        assert!(c.satisfied_by(o, d));
        assert!(b > 3);
        {
            let (o, d) = evaluate(&a, 2, b - 1).unwrap();
            assert!(!c.satisfied_by(o, d));
        }
    }

    #[test]
    fn overloaded_rate_is_unsustainable() {
        let a = ArrivalPmf::from_atoms([(0, 0.5), (4, 0.5)]).unwrap();
        let c = QoeConstraints::new(0.5, 0.01).unwrap();
        // S = 1 against mean 2: half the packets must go
        assert!(matches!(
            min_buffer(frame().rate_bps(1), &a, &frame(), &c),
            Err(Error::RateUnsustainable(_))
        ));
    }

    #[test]
    fn seconds_to_packets() {
        assert_eq!(buffer_from_seconds(1.0, 5e6, 5000.0).unwrap(), 1000);
        assert_eq!(buffer_from_seconds(3.0, 8e6, 5000.0).unwrap(), 4800);
        assert!(matches!(
            buffer_from_seconds(0.01, 0.1e6, 5000.0),
            Err(Error::BufferTooSmall { .. })
        ));
    }

    #[test]
    fn solution_json_keys() {
        let sol = PlayoutSolution {
            service: 10,
            rate_bps: 5e6,
            outage: 0.01,
            drop: 0.0,
        };
        let v = serde_json::to_value(sol).unwrap();
        assert_eq!(v["S"], 10);
        assert_eq!(v["U_bps"], 5e6);
        assert!(v.get("outage").is_some() && v.get("drop").is_some());
    }
}
