//! Signal-quality traces, MCS lookup and per-block rate distributions.
//!
//! A user's per-block rate in a frame is set by the MCS level its SINR falls
//! into: level `j` covers `[thresholds[j], thresholds[j + 1])`, anything below
//! the first threshold gets no service (rate 0) and anything above the last
//! threshold saturates at the top rate.

use std::collections::BTreeMap;
use std::io::Read;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a probability vector.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Modulation-and-coding table: SINR thresholds (dB) and per-block rates (bits/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMcsTable", into = "RawMcsTable")]
pub struct McsTable {
    thresholds_db: Vec<f64>,
    rates_bps: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMcsTable {
    thresholds_db: Vec<f64>,
    rates_bps: Vec<f64>,
}

impl TryFrom<RawMcsTable> for McsTable {
    type Error = Error;
    fn try_from(raw: RawMcsTable) -> Result<Self> {
        McsTable::new(raw.thresholds_db, raw.rates_bps)
    }
}

impl From<McsTable> for RawMcsTable {
    fn from(t: McsTable) -> Self {
        RawMcsTable {
            thresholds_db: t.thresholds_db,
            rates_bps: t.rates_bps,
        }
    }
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

impl McsTable {
    pub fn new(thresholds_db: Vec<f64>, rates_bps: Vec<f64>) -> Result<Self> {
        if thresholds_db.is_empty() {
            return Err(Error::InvalidInput("MCS table needs at least one level".into()));
        }
        if thresholds_db.len() != rates_bps.len() {
            return Err(Error::InvalidInput(format!(
                "MCS table has {} thresholds but {} rates",
                thresholds_db.len(),
                rates_bps.len()
            )));
        }
        if thresholds_db.iter().chain(&rates_bps).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("MCS table entries must be finite".into()));
        }
        if !strictly_increasing(&thresholds_db) || !strictly_increasing(&rates_bps) {
            return Err(Error::InvalidInput(
                "MCS thresholds and rates must be strictly increasing".into(),
            ));
        }
        if rates_bps[0] <= 0.0 {
            return Err(Error::InvalidInput("MCS rates must be positive".into()));
        }
        Ok(McsTable {
            thresholds_db,
            rates_bps,
        })
    }

    pub fn levels(&self) -> usize {
        self.rates_bps.len()
    }

    pub fn thresholds_db(&self) -> &[f64] {
        &self.thresholds_db
    }

    pub fn rates_bps(&self) -> &[f64] {
        &self.rates_bps
    }

    /// Per-block rate for a measured SINR.
    pub fn rate_for_sinr(&self, sinr_db: f64) -> f64 {
        // number of thresholds <= sinr
        let level = self.thresholds_db.partition_point(|&g| g <= sinr_db);
        if level == 0 {
            0.0
        } else {
            self.rates_bps[level - 1]
        }
    }
}

/// Free-function form of [`McsTable::rate_for_sinr`].
pub fn map_sinr_to_rate(sinr_db: f64, table: &McsTable) -> f64 {
    table.rate_for_sinr(sinr_db)
}

/// Piecewise-linear RSSI (dBm) to SINR (dB) mapping.
///
/// Between anchors the map interpolates linearly; outside the anchor range it
/// extends the first or last segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSignalMap", into = "RawSignalMap")]
pub struct SignalMap {
    rssi_dbm: Vec<f64>,
    sinr_db: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSignalMap {
    rssi_dbm: Vec<f64>,
    sinr_db: Vec<f64>,
}

impl TryFrom<RawSignalMap> for SignalMap {
    type Error = Error;
    fn try_from(raw: RawSignalMap) -> Result<Self> {
        SignalMap::new(raw.rssi_dbm, raw.sinr_db)
    }
}

impl From<SignalMap> for RawSignalMap {
    fn from(m: SignalMap) -> Self {
        RawSignalMap {
            rssi_dbm: m.rssi_dbm,
            sinr_db: m.sinr_db,
        }
    }
}

impl SignalMap {
    pub fn new(rssi_dbm: Vec<f64>, sinr_db: Vec<f64>) -> Result<Self> {
        if rssi_dbm.is_empty() || rssi_dbm.len() != sinr_db.len() {
            return Err(Error::InvalidInput(
                "signal map needs equal-length, non-empty anchor lists".into(),
            ));
        }
        if !strictly_increasing(&rssi_dbm) {
            return Err(Error::InvalidInput(
                "signal map RSSI anchors must be strictly increasing".into(),
            ));
        }
        if rssi_dbm.iter().chain(&sinr_db).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("signal map anchors must be finite".into()));
        }
        Ok(SignalMap { rssi_dbm, sinr_db })
    }

    /// Affine map `sinr = slope * rssi + offset`.
    pub fn affine(slope: f64, offset: f64) -> Result<Self> {
        SignalMap::new(vec![-100.0, 0.0], vec![offset - 100.0 * slope, offset])
    }

    /// SINR for a measured RSSI.
    pub fn sinr(&self, rssi_dbm: f64) -> f64 {
        let xs = &self.rssi_dbm;
        let ys = &self.sinr_db;
        if xs.len() == 1 {
            return ys[0] + (rssi_dbm - xs[0]);
        }
        let k = xs.partition_point(|&x| x <= rssi_dbm).clamp(1, xs.len() - 1);
        let (x0, x1, y0, y1) = (xs[k - 1], xs[k], ys[k - 1], ys[k]);
        y0 + (y1 - y0) * (rssi_dbm - x0) / (x1 - x0)
    }
}

impl Default for SignalMap {
    /// RSSI anchors from -110 dBm to -54 dBm in 4 dB steps, paired with the
    /// SINR thresholds of the default 15-level MCS table.
    fn default() -> Self {
        let sinr = crate::presets::TABLE_SINR_DB.to_vec();
        let rssi = (0..sinr.len()).map(|k| -110.0 + 4.0 * k as f64).collect();
        SignalMap::new(rssi, sinr).expect("default anchors are valid")
    }
}

/// Discrete per-block rate distribution of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRatePmf", into = "RawRatePmf")]
pub struct RatePmf {
    support: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawRatePmf {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl TryFrom<RawRatePmf> for RatePmf {
    type Error = Error;
    fn try_from(raw: RawRatePmf) -> Result<Self> {
        RatePmf::new(raw.support, raw.probs)
    }
}

impl From<RatePmf> for RawRatePmf {
    fn from(p: RatePmf) -> Self {
        RawRatePmf {
            support: p.support,
            probs: p.probs,
        }
    }
}

impl RatePmf {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::InvalidInput(
                "rate PMF needs equal-length, non-empty support and probabilities".into(),
            ));
        }
        if !strictly_increasing(&support) || support[0] < 0.0 {
            return Err(Error::InvalidInput(
                "rate PMF support must be non-negative and strictly increasing".into(),
            ));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidInput("rate PMF probabilities must be >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "rate PMF probabilities sum to {total}, not 1"
            )));
        }
        Ok(RatePmf { support, probs })
    }

    /// Single-atom distribution.
    pub fn deterministic(rate_bps: f64) -> Result<Self> {
        RatePmf::new(vec![rate_bps], vec![1.0])
    }

    /// Builds a PMF over `rates`, dropping levels with zero probability.
    pub fn from_levels(rates: &[f64], probs: &[f64]) -> Result<Self> {
        if rates.len() != probs.len() {
            return Err(Error::InvalidInput("level and probability counts differ".into()));
        }
        let (support, probs) = rates
            .iter()
            .zip(probs)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&r, &p)| (r, p))
            .unzip();
        RatePmf::new(support, probs)
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.atoms().map(|(r, p)| r * p).sum()
    }

    /// Coefficient of variation (standard deviation over mean).
    pub fn coefficient_of_variation(&self) -> f64 {
        let m = self.mean();
        let var: f64 = self.atoms().map(|(r, p)| p * (r - m).powi(2)).sum();
        var.sqrt() / m
    }

    pub fn min_rate(&self) -> f64 {
        self.support[0]
    }

    pub fn max_rate(&self) -> f64 {
        *self.support.last().unwrap()
    }

    /// Total-variation distance to another rate distribution.
    pub fn total_variation(&self, other: &RatePmf) -> f64 {
        let mut merged: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for (r, p) in self.atoms() {
            merged.entry(r.to_bits()).or_default().0 += p;
        }
        for (r, p) in other.atoms() {
            merged.entry(r.to_bits()).or_default().1 += p;
        }
        0.5 * merged.values().map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// Inverse-CDF sampler over a finite distribution: draws `u` uniform in
/// `[0, 1)` and returns the first value whose cumulative probability exceeds it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSampler<T> {
    values: Vec<T>,
    cumulative: Vec<f64>,
}

impl<T: Copy> DiscreteSampler<T> {
    /// `probs` must be non-negative with positive total; it is normalized here.
    pub fn new(values: Vec<T>, probs: &[f64]) -> Self {
        assert_eq!(values.len(), probs.len());
        let total: f64 = probs.iter().sum();
        assert!(total > 0.0, "sampler needs positive mass");
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p / total;
                acc
            })
            .collect();
        DiscreteSampler { values, cumulative }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.values[i.min(self.values.len() - 1)]
    }
}

impl RatePmf {
    pub fn sampler(&self) -> DiscreteSampler<f64> {
        DiscreteSampler::new(self.support.clone(), &self.probs)
    }
}

/// Expected per-block rate `sum p_k r_k`.
pub fn mean_rate(pmf: &RatePmf) -> f64 {
    pmf.mean()
}

/// One signal-quality measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    RssiDbm(f64),
    SinrDb(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub timestamp_ms: u64,
    pub user_id: String,
    pub signal: Signal,
}

impl TraceRecord {
    pub fn sinr_db(&self, map: &SignalMap) -> f64 {
        match self.signal {
            Signal::RssiDbm(rssi) => map.sinr(rssi),
            Signal::SinrDb(sinr) => sinr,
        }
    }
}

/// Per-block rate sequence of a trace, in record order.
pub fn rate_sequence(trace: &[TraceRecord], table: &McsTable, map: &SignalMap) -> Vec<f64> {
    trace
        .iter()
        .map(|rec| table.rate_for_sinr(rec.sinr_db(map)))
        .collect()
}

/// Empirical per-block rate distribution of one user's trace.
///
/// Ordering is discarded: only the frequency of each mapped rate matters.
pub fn estimate_pmf(trace: &[TraceRecord], table: &McsTable, map: &SignalMap) -> Result<RatePmf> {
    if trace.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for rate in rate_sequence(trace, table, map) {
        // rates are non-negative, so bit patterns sort like the values
        *counts.entry(rate.to_bits()).or_default() += 1;
    }
    let n = trace.len() as f64;
    let (support, probs): (Vec<f64>, Vec<f64>) = counts
        .into_iter()
        .map(|(bits, c)| (f64::from_bits(bits), c as f64 / n))
        .unzip();
    // renormalize so the mass is exact to rounding
    let total: f64 = probs.iter().sum();
    RatePmf::new(support, probs.into_iter().map(|p| p / total).collect())
}

/// Reads a trace CSV with header `timestamp_ms,user_id,rssi_dbm` (or `sinr_db`).
pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedRow {
            row: 1,
            reason: e.to_string(),
        })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let ts_col = find("timestamp_ms");
    let id_col = find("user_id");
    let (sig_col, is_rssi) = match (find("rssi_dbm"), find("sinr_db")) {
        (Some(c), _) => (Some(c), true),
        (None, Some(c)) => (Some(c), false),
        (None, None) => (None, true),
    };
    let (Some(ts_col), Some(id_col), Some(sig_col)) = (ts_col, id_col, sig_col) else {
        return Err(Error::MalformedRow {
            row: 1,
            reason: "header must contain timestamp_ms, user_id and rssi_dbm or sinr_db".into(),
        });
    };

    let mut out = Vec::new();
    let mut last_ts: BTreeMap<String, u64> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            row: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |reason: String| Error::MalformedRow { row, reason };
        let field = |c: usize| rec.get(c).ok_or_else(|| bad(format!("missing column {c}")));
        let ts_text = field(ts_col)?;
        let timestamp_ms = ts_text
            .parse::<u64>()
            .or_else(|_| ts_text.parse::<f64>().map(|v| v as u64))
            .map_err(|_| bad(format!("bad timestamp {ts_text:?}")))?;
        let user_id = field(id_col)?.to_string();
        if user_id.is_empty() {
            return Err(bad("empty user_id".into()));
        }
        let sig_text = field(sig_col)?;
        let value: f64 = sig_text
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad(format!("bad signal value {sig_text:?}")))?;
        if let Some(&prev) = last_ts.get(&user_id) {
            if timestamp_ms < prev {
                return Err(bad(format!("timestamp goes backwards for user {user_id}")));
            }
        }
        last_ts.insert(user_id.clone(), timestamp_ms);
        let signal = if is_rssi {
            Signal::RssiDbm(value)
        } else {
            Signal::SinrDb(value)
        };
        out.push(TraceRecord {
            timestamp_ms,
            user_id,
            signal,
        });
    }
    Ok(out)
}

/// Splits a mixed trace into per-user traces, ordered by user id.
pub fn split_by_user(trace: Vec<TraceRecord>) -> BTreeMap<String, Vec<TraceRecord>> {
    let mut users: BTreeMap<String, Vec<TraceRecord>> = BTreeMap::new();
    for rec in trace {
        users.entry(rec.user_id.clone()).or_default().push(rec);
    }
    users
}
