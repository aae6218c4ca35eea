//! Discrete-time queue with i.i.d. batch arrivals and deterministic service of
//! `S` packets per frame.
//!
//! The buffer occupancy at the start of a frame evolves as
//!
//! ```text
//! Q(t+1) = min{B, max{S, Q(t)} - S + A(t)}
//! ```
//!
//! with `B` the buffer size (unbounded for the infinite-buffer analysis).
//! For the infinite buffer the boundary probabilities `q_0..q_{S-1}` follow
//! from the `S - 1` roots of `z^S - A(z)` inside the unit disk. For a finite
//! buffer the full stationary distribution is obtained from the transition
//! matrix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{DiscreteSampler, MASS_TOLERANCE};
use crate::error::{Error, Result};

/// Roots closer than this to the unit circle are treated as lying on it.
pub const UNIT_CIRCLE_GUARD: f64 = 1e-10;
/// Largest acceptable `|z^S - A(z)|` at a reported root.
pub const ROOT_RESIDUAL: f64 = 1e-9;
/// Largest acceptable imaginary part of a boundary probability.
pub const IMAGINARY_RESIDUE: f64 = 1e-8;

/// Distribution of the number of packets arriving in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArrivalPmf", into = "RawArrivalPmf")]
pub struct ArrivalPmf {
    probs: Vec<f64>,
    mean: f64,
}

#[derive(Serialize, Deserialize)]
struct RawArrivalPmf {
    probs: Vec<f64>,
}

impl TryFrom<RawArrivalPmf> for ArrivalPmf {
    type Error = Error;
    fn try_from(raw: RawArrivalPmf) -> Result<Self> {
        ArrivalPmf::new(raw.probs)
    }
}

impl From<ArrivalPmf> for RawArrivalPmf {
    fn from(a: ArrivalPmf) -> Self {
        RawArrivalPmf { probs: a.probs }
    }
}

impl ArrivalPmf {
    /// `probs[i]` is the probability of `i` arrivals. The vector is
    /// renormalized to unit mass and trailing zeros are dropped.
    pub fn new(mut probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("arrival PMF is empty".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidInput(
                "arrival probabilities must be finite and >= 0".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "arrival probabilities sum to {total}, not 1"
            )));
        }
        for p in &mut probs {
            *p /= total;
        }
        while probs.len() > 1 && *probs.last().unwrap() == 0.0 {
            probs.pop();
        }
        let mean = probs.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
        Ok(ArrivalPmf { probs, mean })
    }

    /// Builds a PMF from `(count, probability)` atoms; repeated counts add up.
    pub fn from_atoms<I: IntoIterator<Item = (usize, f64)>>(atoms: I) -> Result<Self> {
        let mut probs = Vec::new();
        for (k, p) in atoms {
            if probs.len() <= k {
                probs.resize(k + 1, 0.0);
            }
            probs[k] += p;
        }
        ArrivalPmf::new(probs)
    }

    /// Every frame brings exactly `count` packets.
    pub fn deterministic(count: usize) -> Self {
        let mut probs = vec![0.0; count + 1];
        probs[count] = 1.0;
        ArrivalPmf::new(probs).expect("point mass is valid")
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, count: usize) -> f64 {
        self.probs.get(count).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn max_count(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn min_count(&self) -> usize {
        self.probs.iter().position(|&p| p > 0.0).unwrap_or(0)
    }

    /// `P[A <= count]`.
    pub fn cdf(&self, count: usize) -> f64 {
        self.probs.iter().take(count + 1).sum()
    }

    /// Probability generating function `A(z)`.
    pub fn pgf(&self, z: Complex64) -> Complex64 {
        self.probs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &p| acc * z + p)
    }

    pub fn variance(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| p * (i as f64 - self.mean).powi(2))
            .sum()
    }

    pub fn sampler(&self) -> DiscreteSampler<usize> {
        DiscreteSampler::new((0..self.probs.len()).collect(), &self.probs)
    }

    pub fn total_variation(&self, other: &ArrivalPmf) -> f64 {
        let n = self.probs.len().max(other.probs.len());
        0.5 * (0..n)
            .map(|i| (self.prob(i) - other.prob(i)).abs())
            .sum::<f64>()
    }
}

/// Queue parameters: arrivals, service batch `S` and optional buffer bound `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueModel {
    pub arrivals: ArrivalPmf,
    pub service: usize,
    pub buffer: Option<usize>,
}

impl QueueModel {
    pub fn new(arrivals: ArrivalPmf, service: usize, buffer: Option<usize>) -> Result<Self> {
        if service == 0 {
            return Err(Error::InvalidInput("service batch S must be >= 1".into()));
        }
        if let Some(b) = buffer {
            if b <= service {
                return Err(Error::BufferTooSmallForService { buffer: b, service });
            }
        }
        Ok(QueueModel {
            arrivals,
            service,
            buffer,
        })
    }

    /// `rho = E[A] / S`.
    pub fn utilization(&self) -> f64 {
        self.arrivals.mean() / self.service as f64
    }

    /// Checks the conditions under which the infinite-buffer chain is
    /// irreducible, aperiodic and positive recurrent.
    pub fn check_ergodic(&self) -> Result<()> {
        let s = self.service;
        if s == 0 {
            return Err(Error::InvalidInput("service batch S must be >= 1".into()));
        }
        if self.arrivals.cdf(s - 1) <= 0.0 {
            return Err(Error::NotErgodic(format!("P[A <= {}] = 0", s - 1)));
        }
        if self.arrivals.cdf(s) >= 1.0 {
            return Err(Error::NotErgodic(format!("P[A <= {s}] = 1")));
        }
        if self.utilization() >= 1.0 {
            return Err(Error::NotErgodic(format!(
                "utilization {} >= 1",
                self.utilization()
            )));
        }
        Ok(())
    }
}

/// Coefficients (ascending powers) of `z^S - A(z)`.
fn characteristic_coeffs(arrivals: &ArrivalPmf, s: usize) -> Vec<f64> {
    let degree = s.max(arrivals.max_count());
    let mut c = vec![0.0; degree + 1];
    for (k, &p) in arrivals.probs().iter().enumerate() {
        c[k] -= p;
    }
    c[s] += 1.0;
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    c
}

/// Horner evaluation of a real-coefficient polynomial and its derivative.
fn eval_with_derivative(coeffs: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

fn polish(coeffs: &[f64], mut z: Complex64) -> Complex64 {
    let (mut best, _) = eval_with_derivative(coeffs, z);
    for _ in 0..8 {
        let (p, dp) = eval_with_derivative(coeffs, z);
        if dp.norm() == 0.0 {
            break;
        }
        let candidate = z - p / dp;
        let (pc, _) = eval_with_derivative(coeffs, candidate);
        if pc.norm() < best.norm() {
            z = candidate;
            best = pc;
        } else {
            break;
        }
    }
    z
}

/// Roots of a polynomial (ascending coefficients, non-zero leading term) via
/// the eigenvalues of its companion matrix.
fn companion_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let n = coeffs.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let lead = coeffs[n];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        m[(i, n - 1)] = -coeffs[i] / lead;
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// The `S - 1` roots of `z^S - A(z)` strictly inside the unit disk, repeated
/// according to multiplicity.
pub fn find_roots(arrivals: &ArrivalPmf, s: usize) -> Result<Vec<Complex64>> {
    QueueModel::new(arrivals.clone(), s, None)?.check_ergodic()?;
    if s == 1 {
        return Ok(Vec::new());
    }
    let coeffs = characteristic_coeffs(arrivals, s);

    // exact roots at the origin
    let zeros = coeffs.iter().take_while(|&&c| c == 0.0).count();
    let reduced = &coeffs[zeros..];

    // deflate the root at z = 1
    let deg = reduced.len() - 1;
    let mut deflated = vec![0.0; deg];
    let mut carry = 0.0;
    for k in (1..=deg).rev() {
        carry += reduced[k];
        deflated[k - 1] = carry;
    }

    let mut inside: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); zeros];
    for raw in companion_roots(&deflated) {
        if raw.im < 0.0 {
            continue; // taken from its conjugate partner
        }
        let real = raw.im.abs() <= 1e-12 * raw.norm().max(1.0);
        let start = if real { Complex64::new(raw.re, 0.0) } else { raw };
        let mut z = polish(&coeffs, start);
        if real {
            z.im = 0.0;
        }
        let r = z.norm();
        if (r - 1.0).abs() <= UNIT_CIRCLE_GUARD {
            return Err(Error::RootOnUnitCircle { re: z.re, im: z.im });
        }
        if r < 1.0 {
            let (residual, _) = eval_with_derivative(&coeffs, z);
            if residual.norm() >= ROOT_RESIDUAL {
                continue;
            }
            inside.push(z);
            if !real {
                inside.push(z.conj());
            }
        }
    }
    if inside.len() != s - 1 {
        return Err(Error::RootCountMismatch {
            expected: s - 1,
            found: inside.len(),
        });
    }
    inside.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
    Ok(inside)
}

/// Boundary probabilities of the infinite-buffer queue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfiniteBufferBoundary {
    /// `q_0 .. q_{S-1}`.
    pub boundary_probs: Vec<f64>,
    pub roots: Vec<Complex64>,
    /// `N(1) = S - E[A]`.
    pub n_one: f64,
}

impl InfiniteBufferBoundary {
    pub fn service(&self) -> usize {
        self.boundary_probs.len()
    }

    /// `sum_{i<S} q_i`, the infinite-buffer outage.
    pub fn outage(&self) -> f64 {
        self.boundary_probs.iter().sum()
    }
}

/// Roots closer than this are treated as one root of higher multiplicity.
const ROOT_CLUSTER: f64 = 1e-7;

/// `d^m/dz^m sum_{l=from}^{S-1} z^l`.
fn boundary_coefficient(z: Complex64, from: usize, s: usize, order: usize) -> Complex64 {
    let mut total = Complex64::new(0.0, 0.0);
    for l in from.max(order)..s {
        let falling: f64 = ((l - order + 1)..=l).map(|v| v as f64).product();
        total += z.powu((l - order) as u32) * falling;
    }
    total
}

/// Solves the infinite-buffer boundary system: `N(z_k) = 0` at every interior
/// root and `N(1) = S - E[A]`, where `N(z) = sum_i q_i sum_{l=i}^{S-1} z^l`.
/// Repeated roots contribute derivative conditions.
pub fn solve_infinite(arrivals: &ArrivalPmf, s: usize) -> Result<InfiniteBufferBoundary> {
    let roots = find_roots(arrivals, s)?;
    let n_one = s as f64 - arrivals.mean();
    if s == 1 {
        return Ok(InfiniteBufferBoundary {
            boundary_probs: vec![n_one],
            roots,
            n_one,
        });
    }

    let mut m = DMatrix::<Complex64>::zeros(s, s);
    let mut rhs = DVector::<Complex64>::zeros(s);
    for (row, &z) in roots.iter().enumerate() {
        let order = roots[..row]
            .iter()
            .filter(|&&w| (w - z).norm() < ROOT_CLUSTER)
            .count();
        for i in 0..s {
            m[(row, i)] = boundary_coefficient(z, i, s, order);
        }
    }
    for i in 0..s {
        m[(s - 1, i)] = Complex64::new((s - i) as f64, 0.0);
    }
    rhs[s - 1] = Complex64::new(n_one, 0.0);

    let solution = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateBoundary("singular boundary matrix".into()))?;
    if solution.iter().any(|q| !(q.re.is_finite() && q.im.is_finite())) {
        return Err(Error::DegenerateBoundary("non-finite solution".into()));
    }
    let worst_im = solution.iter().map(|q| q.im.abs()).fold(0.0, f64::max);
    if worst_im >= IMAGINARY_RESIDUE {
        return Err(Error::DegenerateBoundary(format!(
            "imaginary residue {worst_im:e} in boundary probabilities"
        )));
    }
    Ok(InfiniteBufferBoundary {
        boundary_probs: solution.iter().map(|q| q.re).collect(),
        roots,
        n_one,
    })
}

/// Sparse row-stochastic transition matrix of the finite-buffer chain.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<(usize, f64)>>,
}

impl TransitionMatrix {
    /// Number of states, `B + 1`.
    pub fn size(&self) -> usize {
        self.rows.len()
    }

    /// Non-zero entries of row `i`, by increasing column.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|(c, _)| *c == j)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|(_, p)| p).sum()
    }

    /// Dense copy, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.size();
        self.rows
            .iter()
            .map(|r| {
                let mut dense = vec![0.0; n];
                for &(j, p) in r {
                    dense[j] = p;
                }
                dense
            })
            .collect()
    }

    /// Row vector times matrix, `q Psi`.
    pub fn left_multiply(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        for (i, row) in self.rows.iter().enumerate() {
            let qi = q[i];
            if qi == 0.0 {
                continue;
            }
            for &(j, p) in row {
                out[j] += qi * p;
            }
        }
        out
    }
}

fn check_finite_params(s: usize, b: usize) -> Result<()> {
    if s == 0 {
        return Err(Error::InvalidInput("service batch S must be >= 1".into()));
    }
    if b <= s {
        return Err(Error::BufferTooSmallForService {
            buffer: b,
            service: s,
        });
    }
    Ok(())
}

/// Transition matrix `Psi` over states `0..=B`.
///
/// From state `i` the next state is `min(B, max(S, i) - S + A)`; the mass
/// that would overflow the buffer lands in column `B`.
pub fn build_transition_matrix(
    arrivals: &ArrivalPmf,
    s: usize,
    b: usize,
) -> Result<TransitionMatrix> {
    check_finite_params(s, b)?;
    let support: Vec<(usize, f64)> = arrivals
        .probs()
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, p)| *p > 0.0)
        .collect();
    let rows = (0..=b)
        .map(|i| {
            let base = i.max(s) - s;
            let mut row = Vec::with_capacity(support.len() + 1);
            let mut tail = 0.0;
            for &(k, p) in &support {
                let j = base + k;
                if j < b {
                    row.push((j, p));
                } else {
                    tail += p;
                }
            }
            if tail > 0.0 {
                row.push((b, tail));
            }
            row
        })
        .collect();
    Ok(TransitionMatrix { rows })
}

/// Stationary buffer occupancy of the finite-buffer queue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteBufferDist {
    /// `q_{0,B} .. q_{B,B}`.
    pub probs: Vec<f64>,
    /// `beta_B`, mean packets played out per frame.
    pub served_mean: f64,
    pub service: usize,
}

impl FiniteBufferDist {
    fn from_probs(probs: Vec<f64>, s: usize) -> Self {
        let below: f64 = probs[..s]
            .iter()
            .enumerate()
            .map(|(i, q)| i as f64 * q)
            .sum();
        let at_least: f64 = probs[s..].iter().sum();
        FiniteBufferDist {
            served_mean: below + s as f64 * at_least,
            probs,
            service: s,
        }
    }

    pub fn buffer(&self) -> usize {
        self.probs.len() - 1
    }

    /// `P[Q_B < S]`.
    pub fn outage(&self) -> f64 {
        self.probs[..self.service].iter().sum()
    }

    /// `max_i |(q Psi)_i - q_i|`.
    pub fn residual(&self, psi: &TransitionMatrix) -> f64 {
        psi.left_multiply(&self.probs)
            .iter()
            .zip(&self.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Stationary distribution of the finite-buffer chain started empty.
///
/// States `0..=S` have identical transition rows (every one of them is fully
/// drained in the next frame), so they are lumped into a single state. The
/// lumped chain is banded, and its stationary vector is computed by state
/// reduction (Grassmann-Taksar-Heyman), which involves no subtractions. The
/// individual probabilities of states `0..=S` are then recovered from their
/// balance equations.
pub fn solve_finite(arrivals: &ArrivalPmf, s: usize, b: usize) -> Result<FiniteBufferDist> {
    check_finite_params(s, b)?;
    if arrivals.mean() == 0.0 {
        return Err(Error::NotIrreducible(
            "no packets ever arrive; the buffer stays empty".into(),
        ));
    }
    let a = arrivals.probs();
    let a_min = arrivals.min_count();
    let a_max = arrivals.max_count();

    if a_min >= s {
        // The occupancy never decreases once the first batch has arrived.
        let mut probs = vec![0.0; b + 1];
        if a_max == s {
            probs[s] = 1.0;
        } else {
            probs[b] = 1.0;
        }
        return Ok(FiniteBufferDist::from_probs(probs, s));
    }

    let n = b - s + 1;
    let lo = s - a_min;
    let hi = a_max.saturating_sub(s);
    let width = lo + hi + 1;
    let mut band = vec![0.0; n * width];
    let at = |i: usize, j: usize| i * width + (j + lo - i);

    for i in 0..n {
        for (k, &p) in a.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let target = (i + k).min(b);
            let j = target.saturating_sub(s);
            band[at(i, j)] += p;
        }
    }

    for k in (1..n).rev() {
        let j0 = k.saturating_sub(lo);
        let i0 = k.saturating_sub(hi);
        let leave: f64 = (j0..k).map(|j| band[at(k, j)]).sum();
        debug_assert!(leave > 0.0);
        for i in i0..k {
            band[at(i, k)] /= leave;
        }
        for i in i0..k {
            let up = band[at(i, k)];
            if up == 0.0 {
                continue;
            }
            for j in j0..k {
                let down = band[at(k, j)];
                band[at(i, j)] += up * down;
            }
        }
    }

    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        let i0 = k.saturating_sub(hi);
        let v: f64 = (i0..k).map(|i| pi[i] * band[at(i, k)]).sum();
        pi[k] = v;
        if v > 1e200 {
            for x in &mut pi[..=k] {
                *x *= 1e-200;
            }
        }
    }
    let total: f64 = pi.iter().sum();

    let mut probs = vec![0.0; b + 1];
    for k in 1..n {
        probs[s + k] = pi[k] / total;
    }
    let lumped = pi[0] / total;
    for j in 0..=s {
        let mut v = lumped * arrivals.prob(j);
        for i in (s + 1)..=(j + s).min(b) {
            v += probs[i] * arrivals.prob(j + s - i);
        }
        probs[j] = v;
    }
    Ok(FiniteBufferDist::from_probs(probs, s))
}

/// `sum_{i<S} q_{i,B}`.
pub fn outage_probability(dist: &FiniteBufferDist, s: usize) -> f64 {
    dist.probs[..s.min(dist.probs.len())].iter().sum()
}

/// Fraction of arriving packets dropped because the buffer is full,
/// `1 - beta_B / E[A]`.
pub fn drop_rate(finite: &FiniteBufferDist, arrivals: &ArrivalPmf) -> Result<f64> {
    let mean = arrivals.mean();
    if mean <= 0.0 {
        return Err(Error::NoArrivals);
    }
    let raw = 1.0 - finite.served_mean / mean;
    let clamped = raw.clamp(0.0, 1.0);
    if (raw - clamped).abs() > 1e-9 {
        log::warn!("drop rate {raw} clamped to [0, 1]");
    }
    Ok(clamped)
}

/// Drop rate expressed through the infinite-buffer boundary probabilities:
///
/// ```text
/// sum_{i<S} (1 - i/S)(q_{i,B} - q_i) / (1 - sum_{i<S} (1 - i/S) q_i)
/// ```
pub fn drop_rate_closed_form(finite: &FiniteBufferDist, infinite: &InfiniteBufferBoundary) -> f64 {
    let s = infinite.service();
    let weight = |i: usize| 1.0 - i as f64 / s as f64;
    let num: f64 = (0..s)
        .map(|i| weight(i) * (finite.probs[i] - infinite.boundary_probs[i]))
        .sum();
    let den: f64 = 1.0
        - (0..s)
            .map(|i| weight(i) * infinite.boundary_probs[i])
            .sum::<f64>();
    num / den
}

/// JSON solver report: `q`, `beta`, `outage`, `drop_rate`, `roots`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub service: usize,
    pub buffer: usize,
    pub q: Vec<f64>,
    pub beta: f64,
    pub outage: f64,
    pub drop_rate: f64,
    /// Interior roots as `[re, im]` pairs; empty when not computed.
    pub roots: Vec<[f64; 2]>,
    /// Infinite-buffer boundary probabilities, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infinite_boundary: Option<Vec<f64>>,
}

impl SolverReport {
    /// Solves the finite-buffer chain and, when the infinite-buffer queue is
    /// ergodic, its boundary system too.
    pub fn solve(arrivals: &ArrivalPmf, s: usize, b: usize) -> Result<Self> {
        let finite = solve_finite(arrivals, s, b)?;
        let drop = drop_rate(&finite, arrivals)?;
        let infinite = solve_infinite(arrivals, s).ok();
        Ok(SolverReport {
            service: s,
            buffer: b,
            outage: finite.outage(),
            beta: finite.served_mean,
            drop_rate: drop,
            roots: infinite
                .as_ref()
                .map(|inf| inf.roots.iter().map(|z| [z.re, z.im]).collect())
                .unwrap_or_default(),
            infinite_boundary: infinite.map(|inf| inf.boundary_probs),
            q: finite.probs,
        })
    }
}
