//! Eavesdroppers that intercept each agent's transmission independently with
//! probability `gamma`, their estimation error by Monte Carlo, and the exact
//! first and second moments of that error.
//!
//! Indexing: the message on the wire at step `k` is the state `x(k)`
//! (classical) or the innovation produced at `k - 1` (ICC/BICC), with the
//! initial state standing in for the innovation at `-1`. Both the simulation
//! and the recursions below use the interception indicator `mu(k)` for it.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocols::{ProtocolKind, SimulationTrace};

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    Ok(())
}

/// Interception pattern. `Always` and `Never` pin every `mu_i(k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskMode {
    Bernoulli(f64),
    Always,
    Never,
}

/// Draws `mu_i(k)` in `k`-major order from one stream per trial.
pub struct MaskSampler {
    rng: ChaCha8Rng,
    threshold: u64,
    mode: MaskMode,
}

impl MaskSampler {
    pub fn new(mode: MaskMode, seed: u64, trial: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let threshold = match mode {
            // P(u < gamma 2^64) = gamma for u uniform on u64.
            MaskMode::Bernoulli(g) => (g * 18_446_744_073_709_551_616.0) as u64,
            _ => 0,
        };
        Self { rng, threshold, mode }
    }

    pub fn fill(&mut self, mask: &mut [bool]) {
        match self.mode {
            MaskMode::Always => mask.fill(true),
            MaskMode::Never => mask.fill(false),
            MaskMode::Bernoulli(_) => {
                for m in mask.iter_mut() {
                    *m = self.rng.next_u64() < self.threshold;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloOptions {
    pub mode: MaskMode,
    pub trials: usize,
    pub seed: u64,
}

impl MonteCarloOptions {
    pub fn bernoulli(gamma: f64, trials: usize, seed: u64) -> Self {
        Self {
            mode: MaskMode::Bernoulli(gamma),
            trials,
            seed,
        }
    }
}

/// Sample moments of `e(k) = x(k) - xhat(k)`, `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub kind: ProtocolKind,
    pub trials: usize,
    pub e_mean: Vec<Vec<f64>>,
    pub e_mean_se: Vec<Vec<f64>>,
    /// Sample mean of `e(k)^T e(k)`.
    pub sq_error: Vec<f64>,
    pub sq_error_se: Vec<f64>,
    /// Fraction of intercepted transmissions over all trials.
    pub interception_rate: f64,
}

/// Running mean and sum of squared deviations with a shared sample count.
#[derive(Debug, Clone)]
struct Welford {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(len: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn begin_sample(&mut self) {
        self.count += 1;
    }

    fn push(&mut self, slot: usize, v: f64) {
        let delta = v - self.mean[slot];
        self.mean[slot] += delta / self.count as f64;
        self.m2[slot] += delta * (v - self.mean[slot]);
    }

    fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for s in 0..self.mean.len() {
            let delta = other.mean[s] - self.mean[s];
            self.mean[s] += delta * nb / n;
            self.m2[s] += other.m2[s] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    fn std_error(&self, slot: usize) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        (self.m2[slot] / (n - 1.0) / n).sqrt()
    }
}

struct Chunk {
    components: Welford,
    squares: Welford,
    intercepted: u64,
}

const CHUNK_TRIALS: usize = 128;
const CHUNKS_PER_WAVE: usize = 16;

/// How the eavesdropper's estimate evolves on interception.
#[derive(Clone, Copy)]
enum Estimator {
    /// `xhat(k) = x(k)` if intercepted, else hold.
    Replace,
    /// `xhat(k) = xhat(k-1) + mu(k) obs(k-1)`.
    Integrate,
}

fn run_chunk(trace: &SimulationTrace, est: Estimator, opts: &MonteCarloOptions, trials: std::ops::Range<usize>) -> Chunk {
    let n = trace.n();
    let steps = trace.horizon + 1;
    let mut chunk = Chunk {
        components: Welford::new(steps * n),
        squares: Welford::new(steps),
        intercepted: 0,
    };
    let mut xhat = vec![0.0; n];
    let mut mask = vec![false; n];
    for trial in trials {
        let mut sampler = MaskSampler::new(opts.mode, opts.seed, trial as u64);
        xhat.fill(0.0);
        chunk.components.begin_sample();
        chunk.squares.begin_sample();
        for k in 0..steps {
            sampler.fill(&mut mask);
            let x = &trace.states[k];
            let obs = match est {
                Estimator::Replace => x.as_slice(),
                Estimator::Integrate if k == 0 => trace.initial_message(),
                Estimator::Integrate => trace.transmitted(k - 1),
            };
            let mut sq = 0.0;
            for i in 0..n {
                if mask[i] {
                    chunk.intercepted += 1;
                    match est {
                        Estimator::Replace => xhat[i] = obs[i],
                        Estimator::Integrate => xhat[i] += obs[i],
                    }
                }
                let e = x[i] - xhat[i];
                sq += e * e;
                chunk.components.push(k * n + i, e);
            }
            chunk.squares.push(k, sq);
        }
    }
    chunk
}

fn monte_carlo(trace: &SimulationTrace, est: Estimator, opts: &MonteCarloOptions) -> Result<EmpiricalMoments> {
    if let MaskMode::Bernoulli(g) = opts.mode {
        check_gamma(g)?;
    }
    if opts.trials == 0 {
        return Err(Error::Config("Monte Carlo needs at least one trial".into()));
    }
    let n = trace.n();
    let steps = trace.horizon + 1;
    let mut total = Chunk {
        components: Welford::new(steps * n),
        squares: Welford::new(steps),
        intercepted: 0,
    };
    let chunks: Vec<std::ops::Range<usize>> = (0..opts.trials)
        .step_by(CHUNK_TRIALS)
        .map(|s| s..(s + CHUNK_TRIALS).min(opts.trials))
        .collect();
    // Chunks run in parallel; merging follows chunk order so results do not
    // depend on the thread count.
    for wave in chunks.chunks(CHUNKS_PER_WAVE) {
        let done: Vec<Chunk> = wave
            .par_iter()
            .map(|r| run_chunk(trace, est, opts, r.clone()))
            .collect();
        for c in &done {
            total.components.merge(&c.components);
            total.squares.merge(&c.squares);
            total.intercepted += c.intercepted;
        }
    }
    let e_mean = (0..steps)
        .map(|k| total.components.mean[k * n..(k + 1) * n].to_vec())
        .collect();
    let e_mean_se = (0..steps)
        .map(|k| (0..n).map(|i| total.components.std_error(k * n + i)).collect())
        .collect();
    Ok(EmpiricalMoments {
        kind: trace.kind,
        trials: opts.trials,
        e_mean,
        e_mean_se,
        sq_error: total.squares.mean.clone(),
        sq_error_se: (0..steps).map(|k| total.squares.std_error(k)).collect(),
        interception_rate: total.intercepted as f64 / (opts.trials * steps * n) as f64,
    })
}

/// Eavesdropper on classical consensus, which sees states directly.
pub fn run_adversary_classical_mc(trace: &SimulationTrace, opts: &MonteCarloOptions) -> Result<EmpiricalMoments> {
    trace.expect_kind(&[ProtocolKind::Classical], "classical")?;
    monte_carlo(trace, Estimator::Replace, opts)
}

/// Eavesdropper on ICC or BICC, which integrates the innovations it catches.
pub fn run_adversary_icc_mc(trace: &SimulationTrace, opts: &MonteCarloOptions) -> Result<EmpiricalMoments> {
    trace.expect_kind(&[ProtocolKind::Icc, ProtocolKind::Bicc], "icc or bicc")?;
    monte_carlo(trace, Estimator::Integrate, opts)
}

/// Either estimator, chosen by the trace's protocol.
pub fn run_adversary_mc(trace: &SimulationTrace, opts: &MonteCarloOptions) -> Result<EmpiricalMoments> {
    match trace.kind {
        ProtocolKind::Classical => run_adversary_classical_mc(trace, opts),
        ProtocolKind::Icc | ProtocolKind::Bicc => run_adversary_icc_mc(trace, opts),
    }
}

/// Deliberate defects for checking that the verification suite notices.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negates the mean cross term of the innovation update.
    FlipCrossTerm,
}

/// Exact `E[e(k)]` and `Sigma(k) = E[e(k) e(k)^T]`, advanced one step at a time.
#[derive(Debug, Clone)]
pub struct MomentRecursion {
    pub kind: ProtocolKind,
    pub gamma: f64,
    pub mean: DVector<f64>,
    pub second_moment: DMatrix<f64>,
    /// Additive constant of the protection bound.
    pub c_constant: f64,
    fault: Fault,
}

impl MomentRecursion {
    /// State at `k = -1`: no estimate yet and no error.
    pub fn new(kind: ProtocolKind, n: usize, gamma: f64, c_constant: f64) -> Self {
        Self {
            kind,
            gamma,
            mean: DVector::zeros(n),
            second_moment: DMatrix::zeros(n, n),
            c_constant,
            fault: Fault::None,
        }
    }

    #[doc(hidden)]
    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = fault;
        self
    }

    /// Classical step with `d = x(k) - x(k-1)`:
    /// `e(k) = (I - M(k)) (e(k-1) + d)`.
    pub fn step_classical(&mut self, d: &DVector<f64>) {
        let g = self.gamma;
        let q = 1.0 - g;
        let m = &self.mean;
        let s = &self.second_moment + d * m.transpose() + m * d.transpose() + d * d.transpose();
        let mut next = &s * (q * q);
        for i in 0..s.nrows() {
            next[(i, i)] += g * q * s[(i, i)];
        }
        self.mean = (m + d) * q;
        self.second_moment = next;
    }

    /// Innovation step with observation `o`: `e(k) = e(k-1) + (I - M(k)) o`.
    pub fn step_innovation(&mut self, o: &DVector<f64>) {
        let g = self.gamma;
        let q = 1.0 - g;
        let m = &self.mean;
        let sign = if self.fault == Fault::FlipCrossTerm { -1.0 } else { 1.0 };
        let mut gamma_k = o * o.transpose() * (q * q) + (m * o.transpose() + o * m.transpose()) * (sign * q);
        for i in 0..o.len() {
            gamma_k[(i, i)] += g * q * o[i] * o[i];
        }
        self.second_moment += gamma_k;
        self.mean += o * q;
    }

    pub fn trace(&self) -> f64 {
        self.second_moment.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.second_moment.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Closed-form moments over `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries {
    pub kind: ProtocolKind,
    pub gamma: f64,
    pub c_constant: f64,
    pub mean: Vec<Vec<f64>>,
    pub trace: Vec<f64>,
    pub min_eigenvalue: Vec<f64>,
    /// `(1-gamma)^2 ||x(k)||^2 + gamma(1-gamma) sum_t ||obs(t)||^2`, the
    /// unrolled innovation-protocol second moment; `None` for classical.
    pub simplified_trace: Option<Vec<f64>>,
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

pub fn closed_form_moments(kind: ProtocolKind, trace: &SimulationTrace, gamma: f64) -> Result<MomentSeries> {
    closed_form_moments_with(kind, trace, gamma, Fault::None)
}

#[doc(hidden)]
pub fn closed_form_moments_with(
    kind: ProtocolKind,
    trace: &SimulationTrace,
    gamma: f64,
    fault: Fault,
) -> Result<MomentSeries> {
    if trace.kind != kind {
        return Err(Error::ProtocolMismatch {
            expected: kind.name(),
            got: trace.kind.name(),
        });
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidGamma(gamma));
    }
    let n = trace.n();
    let steps = trace.horizon + 1;
    let c = match kind {
        ProtocolKind::Classical => 0.0,
        _ => gamma * (1.0 - gamma) * norm_sq(trace.initial_message()),
    };
    let mut rec = MomentRecursion::new(kind, n, gamma, c).with_fault(fault);
    let mut out = MomentSeries {
        kind,
        gamma,
        c_constant: c,
        mean: Vec::with_capacity(steps),
        trace: Vec::with_capacity(steps),
        min_eigenvalue: Vec::with_capacity(steps),
        simplified_trace: (kind != ProtocolKind::Classical).then(|| Vec::with_capacity(steps)),
    };
    let mut obs_power = 0.0;
    for k in 0..steps {
        match kind {
            ProtocolKind::Classical => {
                let x = DVector::from_column_slice(&trace.states[k]);
                let d = if k == 0 {
                    x
                } else {
                    x - DVector::from_column_slice(&trace.states[k - 1])
                };
                rec.step_classical(&d);
            }
            _ => {
                let o = if k == 0 {
                    trace.initial_message()
                } else {
                    trace.transmitted(k - 1)
                };
                obs_power += norm_sq(o);
                rec.step_innovation(&DVector::from_column_slice(o));
                if let Some(s) = out.simplified_trace.as_mut() {
                    let q = 1.0 - gamma;
                    s.push(q * q * norm_sq(&trace.states[k]) + gamma * q * obs_power);
                }
            }
        }
        out.mean.push(rec.mean.iter().copied().collect());
        out.trace.push(rec.trace());
        out.min_eigenvalue.push(rec.min_eigenvalue());
    }
    Ok(out)
}

/// Protection summary for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectionReport {
    pub gamma: f64,
    pub trials: usize,
    pub min_protection: f64,
    pub asymptotic_protection: f64,
    pub floor: f64,
    pub c: f64,
    /// `p(k) = E[e^T e] / ||x(k)||^2`, `+inf` where `x(k) = 0`.
    #[serde(skip)]
    pub per_step: Vec<f64>,
    /// Largest `eps` with `E[e^T e] >= eps ||x(k)||^2 + c` over this run.
    #[serde(skip)]
    pub epsilon: f64,
}

impl ProtectionReport {
    /// Steps where the closed-form second moment falls below the floor.
    pub fn floor_violations(&self, moments: &MomentSeries, trace: &SimulationTrace) -> Vec<usize> {
        (0..moments.trace.len())
            .filter(|&k| {
                let bound = self.floor * norm_sq(&trace.states[k]) + self.c;
                moments.trace[k] < bound - 1e-12 * bound.abs().max(1.0)
            })
            .collect()
    }
}

pub fn protection_report(trace: &SimulationTrace, moments: &MomentSeries, trials: usize) -> ProtectionReport {
    let per_step: Vec<f64> = moments
        .trace
        .iter()
        .zip(&trace.states)
        .map(|(&e, x)| {
            let nx = norm_sq(x);
            if nx == 0.0 {
                f64::INFINITY
            } else {
                e / nx
            }
        })
        .collect();
    let epsilon = moments
        .trace
        .iter()
        .zip(&trace.states)
        .filter_map(|(&e, x)| {
            let nx = norm_sq(x);
            (nx > 0.0).then(|| (e - moments.c_constant) / nx)
        })
        .fold(f64::INFINITY, f64::min);
    let q = 1.0 - moments.gamma;
    ProtectionReport {
        gamma: moments.gamma,
        trials,
        min_protection: per_step.iter().copied().fold(f64::INFINITY, f64::min),
        asymptotic_protection: *per_step.last().unwrap_or(&f64::NAN),
        floor: match moments.kind {
            ProtocolKind::Classical => 0.0,
            _ => q * q,
        },
        c: moments.c_constant,
        per_step,
        epsilon,
    }
}

/// Largest standardized discrepancy between Monte Carlo and closed form over
/// the given steps. A zero standard error only tolerates rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub max_z_mean: f64,
    pub max_z_trace: f64,
}

impl Agreement {
    pub fn within(&self, z: f64) -> bool {
        self.max_z_mean <= z && self.max_z_trace <= z
    }
}

fn z_score(mc: f64, cf: f64, se: f64) -> f64 {
    let diff = (mc - cf).abs();
    if se > 0.0 {
        diff / se
    } else if diff <= 1e-9 * cf.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn agreement(mc: &EmpiricalMoments, cf: &MomentSeries, steps: &[usize]) -> Agreement {
    let mut out = Agreement {
        max_z_mean: 0.0,
        max_z_trace: 0.0,
    };
    for &k in steps {
        for i in 0..cf.mean[k].len() {
            out.max_z_mean = out.max_z_mean.max(z_score(mc.e_mean[k][i], cf.mean[k][i], mc.e_mean_se[k][i]));
        }
        out.max_z_trace = out.max_z_trace.max(z_score(mc.sq_error[k], cf.trace[k], mc.sq_error_se[k]));
    }
    out
}

/// Columns `k, agent, e_mean_mc, e_mean_cf, trace_sigma_mc, trace_sigma_cf,
/// protection_level`; one row per `(k, agent)`.
pub fn write_adversary_csv<W: Write>(
    w: W,
    mc: &EmpiricalMoments,
    cf: &MomentSeries,
    report: &ProtectionReport,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "k",
        "agent",
        "e_mean_mc",
        "e_mean_cf",
        "trace_sigma_mc",
        "trace_sigma_cf",
        "protection_level",
    ])?;
    for k in 0..cf.trace.len() {
        for i in 0..cf.mean[k].len() {
            out.write_record([
                k.to_string(),
                (i + 1).to_string(),
                mc.e_mean[k][i].to_string(),
                cf.mean[k][i].to_string(),
                mc.sq_error[k].to_string(),
                cf.trace[k].to_string(),
                report.per_step[k].to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
