//! Frame-level simulation of one user's playout buffer.
//!
//! Each frame: the occupancy is measured (an outage is counted when fewer
//! than `S` packets are buffered), up to `S` packets are played, then the
//! frame's batch of arrivals is accepted until the buffer is full and the
//! rest is dropped. Under the adaptive policy the playout rate is revised
//! after arrivals and playout.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64(seed)`, with
//! replication `r` on stream `r`. Per-frame draws use inverse-CDF sampling of
//! one `f64` uniform in `[0, 1)` (53 random bits).

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{rate_sequence, DiscreteSampler, McsTable, SignalMap, TraceRecord};
use crate::error::{Error, Result};
use crate::playout::{FrameParams, QoeConstraints};
use crate::queueing::ArrivalPmf;

/// Where the per-frame packet arrivals come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalSource {
    /// Independent draws from a distribution.
    Iid(ArrivalPmf),
    /// A recorded sequence of per-frame arrivals, replayed cyclically from a
    /// random starting frame in each replication.
    Trace(Vec<usize>),
}

/// Two-threshold adaptive bitrate policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbrParams {
    /// Below this occupancy (packets) the rate drops by `theta`.
    pub b_min: f64,
    /// Above this occupancy (packets) the rate rises by `theta`.
    pub b_max: f64,
    pub theta: f64,
    /// Initial playout rate, bits/s.
    pub u_init: f64,
    pub u_floor: f64,
    pub u_ceil: f64,
}

impl AbrParams {
    /// Thresholds as fractions of the buffer; the rate is bounded between one
    /// packet per frame and half the buffer per frame.
    pub fn with_fractions(
        buffer: usize,
        low: f64,
        high: f64,
        theta: f64,
        u_init: f64,
        frame: &FrameParams,
    ) -> Self {
        AbrParams {
            b_min: low * buffer as f64,
            b_max: high * buffer as f64,
            theta,
            u_init,
            u_floor: frame.rate_bps(1),
            u_ceil: frame.rate_bps(buffer / 2),
        }
    }

    /// The three threshold settings (low, high, theta) compared against in
    /// the evaluation of constant playout.
    pub const SCENARIOS: [(f64, f64, f64); 3] = [(0.25, 0.75, 0.10), (0.30, 0.80, 0.05), (0.35, 0.85, 0.20)];

    pub fn validate(&self, buffer: usize) -> Result<()> {
        if !(0.0 < self.b_min && self.b_min < self.b_max && self.b_max < buffer as f64) {
            return Err(Error::InvalidInput(
                "ABR thresholds need 0 < b_min < b_max < B".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::InvalidInput("ABR theta must lie in [0, 1)".into()));
        }
        if !(0.0 < self.u_floor && self.u_floor <= self.u_ceil) {
            return Err(Error::InvalidInput("ABR rate bounds need 0 < floor <= ceil".into()));
        }
        if !(self.u_init > 0.0) {
            return Err(Error::InvalidInput("ABR initial rate must be > 0".into()));
        }
        Ok(())
    }

    fn clamp(&self, rate: f64) -> f64 {
        rate.clamp(self.u_floor, self.u_ceil)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy")]
pub enum Policy {
    /// Constant playout of `service` packets per frame.
    Constant { service: usize },
    Abr(AbrParams),
}

/// Packet size model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum PacketSizes {
    /// Every packet carries exactly the nominal packet size.
    Fixed,
    /// Sizes uniform in `[(1 - spread) sigma, (1 + spread) sigma]`; the buffer
    /// holds `B sigma` bits and playout removes whole packets.
    Uniform { spread: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub frames: usize,
    pub seed: u64,
    pub runs: usize,
    /// Buffer size in packets.
    pub buffer: usize,
    pub frame: FrameParams,
    pub packets: PacketSizes,
    /// Weight of the rate variance in the QoE score, per Mbps^2.
    pub eta: f64,
}

impl SimConfig {
    pub fn new(frames: usize, seed: u64, runs: usize, buffer: usize, frame: FrameParams) -> Self {
        SimConfig {
            frames,
            seed,
            runs,
            buffer,
            frame,
            packets: PacketSizes::Fixed,
            eta: 0.05,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.runs == 0 {
            return Err(Error::InvalidInput("need at least one frame and one run".into()));
        }
        if self.buffer == 0 {
            return Err(Error::BufferTooSmall { packets: 0 });
        }
        if let PacketSizes::Uniform { spread } = self.packets {
            if !(0.0..1.0).contains(&spread) {
                return Err(Error::InvalidInput("packet size spread must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Counters of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub frames: u64,
    pub outage_frames: u64,
    pub arrived: u64,
    pub played: u64,
    pub dropped: u64,
    pub final_occupancy: u64,
    pub outage: f64,
    pub drop: f64,
    /// Mean playout rate over frames, bits/s.
    pub mean_playout_bps: f64,
    /// Population variance of the playout rate, (bits/s)^2.
    pub playout_variance: f64,
    /// Mean minus `eta` times variance, with rates in Mbps.
    pub qoe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    /// Outage frames over all frames of all runs.
    pub empirical_outage: f64,
    /// Dropped over arrived packets, all runs pooled.
    pub empirical_drop: f64,
    pub mean_playout_bps: f64,
    pub playout_variance: f64,
    pub qoe: f64,
    /// Standard error of the per-run outage; absent for a single run.
    pub outage_std_error: Option<f64>,
    pub drop_std_error: Option<f64>,
    pub runs: Vec<RunStats>,
}

/// State of one frame, for the optional per-frame dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: u64,
    /// Packets buffered at the start of the frame.
    pub occupancy: u64,
    pub arrived: u64,
    pub played: u64,
    pub dropped: u64,
    pub rate_bps: f64,
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }
}

/// `mean(U) - eta * Var(U)` with the rates (given in bits/s) expressed in
/// Mbps and the population variance.
pub fn qoe_score(rates_bps: &[f64], eta: f64) -> Result<f64> {
    if rates_bps.is_empty() {
        return Err(Error::InvalidInput("empty playout series".into()));
    }
    let mut m = Moments::default();
    for r in rates_bps {
        m.push(r / 1e6);
    }
    Ok(m.mean - eta * m.variance())
}

enum Draw<'a> {
    Iid(DiscreteSampler<usize>),
    Trace { seq: &'a [usize], pos: usize },
}

impl Draw<'_> {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            Draw::Iid(s) => s.sample(rng),
            Draw::Trace { seq, pos } => {
                let a = seq[*pos];
                *pos = (*pos + 1) % seq.len();
                a
            }
        }
    }
}

fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

/// Packet buffer holding either identical packets (a counter) or packets of
/// individual sizes (bits).
enum Buffer {
    Fixed { packets: u64, capacity: u64 },
    Sized { sizes: VecDeque<f64>, bits: f64, capacity_bits: f64 },
}

impl Buffer {
    fn packets(&self) -> u64 {
        match self {
            Buffer::Fixed { packets, .. } => *packets,
            Buffer::Sized { sizes, .. } => sizes.len() as u64,
        }
    }

    /// Occupancy in nominal packets, for threshold checks.
    fn level(&self, sigma: f64) -> f64 {
        match self {
            Buffer::Fixed { packets, .. } => *packets as f64,
            Buffer::Sized { bits, .. } => bits / sigma,
        }
    }
}

/// One replication. `on_frame` sees every frame.
fn run_once(
    source: &ArrivalSource,
    policy: &Policy,
    cfg: &SimConfig,
    run: usize,
    mut on_frame: impl FnMut(&FrameRecord),
) -> RunStats {
    let mut rng = run_rng(cfg.seed, run);
    let mut draw = match source {
        ArrivalSource::Iid(pmf) => Draw::Iid(pmf.sampler()),
        ArrivalSource::Trace(seq) => {
            let pos = rng.random_range(0..seq.len());
            Draw::Trace { seq, pos }
        }
    };
    let sigma = cfg.frame.packet_size;
    let budget_per_frame = |rate: f64| rate * cfg.frame.frame_duration;
    let mut buffer = match cfg.packets {
        PacketSizes::Fixed => Buffer::Fixed {
            packets: 0,
            capacity: cfg.buffer as u64,
        },
        PacketSizes::Uniform { .. } => Buffer::Sized {
            sizes: VecDeque::new(),
            bits: 0.0,
            capacity_bits: cfg.buffer as f64 * sigma,
        },
    };

    let (mut rate, abr) = match *policy {
        Policy::Constant { service } => (cfg.frame.rate_bps(service), None),
        Policy::Abr(p) => (p.clamp(p.u_init), Some(p)),
    };
    let mut service = cfg.frame.packets_per_frame(rate) as u64;

    let (mut arrived, mut played, mut dropped, mut outages) = (0u64, 0u64, 0u64, 0u64);
    let mut moments = Moments::default();
    for t in 0..cfg.frames as u64 {
        let start = buffer.packets();
        let (frame_played, frame_arrived, frame_dropped);
        match &mut buffer {
            Buffer::Fixed { packets, capacity } => {
                if *packets < service {
                    outages += 1;
                }
                frame_played = (*packets).min(service);
                *packets -= frame_played;
                frame_arrived = draw.next(&mut rng) as u64;
                let accepted = frame_arrived.min(*capacity - *packets);
                frame_dropped = frame_arrived - accepted;
                *packets += accepted;
            }
            Buffer::Sized {
                sizes,
                bits,
                capacity_bits,
            } => {
                let budget = budget_per_frame(rate);
                if *bits < budget {
                    outages += 1;
                }
                let mut n = 0;
                let mut removed = 0.0;
                while removed < budget {
                    match sizes.pop_front() {
                        Some(s) => {
                            removed += s;
                            *bits -= s;
                            n += 1;
                        }
                        None => break,
                    }
                }
                if sizes.is_empty() {
                    *bits = 0.0;
                }
                frame_played = n;
                frame_arrived = draw.next(&mut rng) as u64;
                let spread = match cfg.packets {
                    PacketSizes::Uniform { spread } => spread,
                    PacketSizes::Fixed => 0.0,
                };
                let mut lost = 0;
                for _ in 0..frame_arrived {
                    let size = sigma * (1.0 - spread + 2.0 * spread * rng.random::<f64>());
                    if lost == 0 && *bits + size <= *capacity_bits {
                        sizes.push_back(size);
                        *bits += size;
                    } else {
                        lost += 1;
                    }
                }
                frame_dropped = lost;
            }
        }
        arrived += frame_arrived;
        played += frame_played;
        dropped += frame_dropped;
        moments.push(rate);
        on_frame(&FrameRecord {
            frame: t,
            occupancy: start,
            arrived: frame_arrived,
            played: frame_played,
            dropped: frame_dropped,
            rate_bps: rate,
        });

        if let Some(p) = abr {
            let level = buffer.level(sigma);
            if level < p.b_min {
                rate = p.clamp(rate * (1.0 - p.theta));
            } else if level > p.b_max {
                rate = p.clamp(rate * (1.0 + p.theta));
            }
            service = cfg.frame.packets_per_frame(rate) as u64;
        }
    }

    let frames = cfg.frames as u64;
    let mean_mbps = moments.mean / 1e6;
    let var_mbps = moments.variance() / 1e12;
    RunStats {
        frames,
        outage_frames: outages,
        arrived,
        played,
        dropped,
        final_occupancy: buffer.packets(),
        outage: outages as f64 / frames as f64,
        drop: if arrived > 0 {
            dropped as f64 / arrived as f64
        } else {
            0.0
        },
        mean_playout_bps: moments.mean,
        playout_variance: moments.variance(),
        qoe: mean_mbps - cfg.eta * var_mbps,
    }
}

fn std_error(values: impl Iterator<Item = f64> + Clone) -> Option<f64> {
    let mut m = Moments::default();
    for v in values {
        m.push(v);
    }
    if m.count < 2 {
        return None;
    }
    let sample_var = m.m2 / (m.count - 1) as f64;
    Some((sample_var / m.count as f64).sqrt())
}

fn summarize(runs: Vec<RunStats>) -> SimReport {
    let n = runs.len() as f64;
    let frames: u64 = runs.iter().map(|r| r.frames).sum();
    let outages: u64 = runs.iter().map(|r| r.outage_frames).sum();
    let arrived: u64 = runs.iter().map(|r| r.arrived).sum();
    let dropped: u64 = runs.iter().map(|r| r.dropped).sum();
    SimReport {
        empirical_outage: outages as f64 / frames as f64,
        empirical_drop: if arrived > 0 {
            dropped as f64 / arrived as f64
        } else {
            0.0
        },
        mean_playout_bps: runs.iter().map(|r| r.mean_playout_bps).sum::<f64>() / n,
        playout_variance: runs.iter().map(|r| r.playout_variance).sum::<f64>() / n,
        qoe: runs.iter().map(|r| r.qoe).sum::<f64>() / n,
        outage_std_error: std_error(runs.iter().map(|r| r.outage)),
        drop_std_error: std_error(runs.iter().map(|r| r.drop)),
        runs,
    }
}

fn check_source(source: &ArrivalSource) -> Result<()> {
    match source {
        ArrivalSource::Trace(seq) if seq.is_empty() => Err(Error::NoSamples),
        _ => Ok(()),
    }
}

/// Runs `cfg.runs` replications in parallel; the report does not depend on
/// the thread count.
pub fn simulate(source: &ArrivalSource, policy: &Policy, cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    check_source(source)?;
    match policy {
        Policy::Constant { service } if *service == 0 => {
            return Err(Error::InvalidInput("service batch must be >= 1".into()))
        }
        Policy::Abr(p) => p.validate(cfg.buffer)?,
        _ => {}
    }
    let runs: Vec<RunStats> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| run_once(source, policy, cfg, r, |_| {}))
        .collect();
    Ok(summarize(runs))
}

/// Constant playout of `service` packets per frame.
pub fn simulate_constant(source: &ArrivalSource, service: usize, cfg: &SimConfig) -> Result<SimReport> {
    simulate(source, &Policy::Constant { service }, cfg)
}

pub fn simulate_abr(source: &ArrivalSource, params: &AbrParams, cfg: &SimConfig) -> Result<SimReport> {
    simulate(source, &Policy::Abr(*params), cfg)
}

/// Replays replication `run` and writes every frame as CSV with header
/// `frame,occupancy,arrived,played,dropped,rate_bps`.
pub fn write_frames_csv<W: Write>(
    out: W,
    source: &ArrivalSource,
    policy: &Policy,
    cfg: &SimConfig,
    run: usize,
) -> Result<RunStats> {
    cfg.validate()?;
    check_source(source)?;
    let mut writer = csv::Writer::from_writer(out);
    let mut failure = None;
    let stats = run_once(source, policy, cfg, run, |rec| {
        if failure.is_none() {
            if let Err(e) = writer.serialize(rec) {
                failure = Some(e);
            }
        }
    });
    if let Some(e) = failure {
        return Err(Error::InvalidInput(format!("writing frame dump: {e}")));
    }
    writer
        .flush()
        .map_err(|e| Error::InvalidInput(format!("writing frame dump: {e}")))?;
    Ok(stats)
}

/// Per-frame arrivals `floor(blocks R(t) dt / sigma)` from a signal trace,
/// where `blocks = K Y` is the number of blocks the user holds.
pub fn trace_playback_arrivals(
    trace: &[TraceRecord],
    table: &McsTable,
    map: &SignalMap,
    blocks: f64,
    frame: &FrameParams,
) -> Result<Vec<usize>> {
    if trace.is_empty() {
        return Err(Error::NoSamples);
    }
    Ok(rate_sequence(trace, table, map)
        .into_iter()
        .map(|r| frame.packets_delivered(blocks, r))
        .collect())
}

/// Largest constant service batch in `1..=max_service` whose simulated
/// outage and drop meet the targets, scanning downwards.
pub fn simulated_max_service(
    source: &ArrivalSource,
    cfg: &SimConfig,
    constraints: &QoeConstraints,
    max_service: usize,
) -> Result<Option<(usize, SimReport)>> {
    for s in (1..=max_service).rev() {
        let report = simulate_constant(source, s, cfg)?;
        if constraints.satisfied_by(report.empirical_outage, report.empirical_drop) {
            return Ok(Some((s, report)));
        }
    }
    Ok(None)
}
