//! Dynamic fixed-length quantizer and its parameter schedules.
//!
//! A `b`-bit quantizer with window `[alpha, alpha + beta]` splits the window
//! into `2^b` cells of width `beta / 2^b`. Inputs outside the window saturate
//! to the extreme codes. Decoding returns the cell midpoint.
//!
//! The window width `beta(k)` follows a network-global schedule that every
//! agent can precompute from `N`, `|lambda_2|`, `b` and the initial-state
//! range; the offset `alpha_i(k)` recentres on the last decoded innovation.

use crate::error::{Error, Result};
use crate::graph::ConsensusNetwork;

pub const MAX_BITS: u32 = 63;

fn check_bits(bits: u32) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::InvalidBits(bits));
    }
    Ok(())
}

fn levels(bits: u32) -> f64 {
    (1u64 << bits) as f64
}

pub fn encode(x: f64, alpha: f64, beta: f64, bits: u32) -> Result<u64> {
    check_bits(bits)?;
    if !(beta > 0.0) {
        return Err(Error::NonPositiveBeta(beta));
    }
    let top = (1u64 << bits) - 1;
    if x <= alpha {
        return Ok(0);
    }
    if x >= alpha + beta {
        return Ok(top);
    }
    let delta = beta / levels(bits);
    // `as` saturates, and the min guards against the quotient rounding up to 2^b.
    Ok((((x - alpha) / delta).floor() as u64).min(top))
}

pub fn decode(code: u64, alpha: f64, beta: f64, bits: u32) -> Result<f64> {
    check_bits(bits)?;
    if !(beta > 0.0) {
        return Err(Error::NonPositiveBeta(beta));
    }
    if code >> bits != 0 {
        return Err(Error::CodeOutOfRange { code, bits });
    }
    let delta = beta / levels(bits);
    Ok(code as f64 * delta + delta / 2.0 + alpha)
}

/// Width actually used for a window: `beta`, floored so the cell width
/// `beta / 2^b` never underflows once the schedule has decayed to nothing.
pub fn window_width(beta: f64, bits: u32) -> f64 {
    beta.max(f64::MIN_POSITIVE * levels(bits))
}

/// One quantizer instance `q(., alpha, beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicQuantizer {
    pub alpha: f64,
    pub beta: f64,
    pub bits: u32,
}

impl DynamicQuantizer {
    pub fn new(alpha: f64, beta: f64, bits: u32) -> Result<Self> {
        check_bits(bits)?;
        if !(beta > 0.0) {
            return Err(Error::NonPositiveBeta(beta));
        }
        Ok(Self { alpha, beta, bits })
    }

    pub fn encode(&self, x: f64) -> u64 {
        encode(x, self.alpha, self.beta, self.bits).expect("validated at construction")
    }

    pub fn decode(&self, code: u64) -> Result<f64> {
        decode(code, self.alpha, self.beta, self.bits)
    }

    /// Closed window membership; outside it the quantizer saturates.
    pub fn contains(&self, x: f64) -> bool {
        x >= self.alpha && x <= self.alpha + self.beta
    }

    pub fn step(&self) -> f64 {
        self.beta / levels(self.bits)
    }
}

/// Everything the `beta` schedule depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    pub n: usize,
    pub lambda2_mag: f64,
    pub bits: u32,
    pub x_min: f64,
    pub x_max: f64,
}

impl BetaParams {
    pub fn new(n: usize, lambda2_mag: f64, bits: u32, x_min: f64, x_max: f64) -> Result<Self> {
        check_bits(bits)?;
        if !(x_min < x_max) {
            return Err(Error::InvalidRange(x_min, x_max));
        }
        Ok(Self {
            n,
            lambda2_mag,
            bits,
            x_min,
            x_max,
        })
    }

    /// `max(|x_min|, |x_max|)`
    pub fn magnitude(&self) -> f64 {
        self.x_min.abs().max(self.x_max.abs())
    }

    pub fn beta0(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn beta1(&self) -> f64 {
        3.0 * self.magnitude()
    }

    /// `beta(2)`, the first width produced by the summed update (at `k = 1`).
    pub fn beta2(&self) -> f64 {
        let sqrt_n = (self.n as f64).sqrt();
        let half_scale = sqrt_n / levels(self.bits) / 2.0;
        2.0 * (3.0 * half_scale * self.beta1()
            + 4.0 * half_scale * self.beta0()
            + 4.0 * sqrt_n * self.magnitude())
    }

    /// Coefficients `(a, c)` of `beta(k+1) = a beta(k) + c beta(k-1)`.
    pub fn recursion_coefficients(&self) -> (f64, f64) {
        recursion_coefficients(self.n, self.lambda2_mag, self.bits)
    }

    /// `||(beta(1), beta(0))||_2`
    pub fn beta_bar(&self) -> f64 {
        self.beta1().hypot(self.beta0())
    }
}

fn recursion_coefficients(n: usize, lambda2_mag: f64, bits: u32) -> (f64, f64) {
    let ratio = (n as f64).sqrt() / levels(bits);
    (3.0 * ratio + lambda2_mag, ratio * (4.0 - 3.0 * lambda2_mag))
}

/// Two-term linear update `beta(k+1)` from `beta(k)` and `beta(k-1)`; valid
/// from `k = 2` onwards.
pub fn beta_recursion_step(params: &BetaParams, beta_k: f64, beta_km1: f64) -> f64 {
    let (a, c) = params.recursion_coefficients();
    a * beta_k + c * beta_km1
}

/// `beta(0..=k_max)` straight from the summed definition, `O(k^2)`. Kept as an
/// independent route to check the recursion against.
pub fn beta_summed(params: &BetaParams, k_max: usize) -> Vec<f64> {
    let sqrt_n = (params.n as f64).sqrt();
    let half_scale = sqrt_n / levels(params.bits) / 2.0;
    let lambda = params.lambda2_mag;
    let m = params.magnitude();
    let mut beta = vec![params.beta0()];
    if k_max >= 1 {
        beta.push(params.beta1());
    }
    for k in 1..k_max {
        let tail: f64 = (0..k)
            .map(|l| lambda.powi((k - 1 - l) as i32) * beta[l])
            .sum();
        let half = 3.0 * half_scale * beta[k]
            + 4.0 * half_scale * tail
            + 4.0 * lambda.powi((k - 1) as i32) * sqrt_n * m;
        beta.push(2.0 * half);
    }
    beta
}

/// Rolling quantizer parameters of one protocol run.
#[derive(Debug, Clone)]
pub struct QuantizerSchedule {
    params: BetaParams,
    k: usize,
    beta_prev: f64,
    beta_cur: f64,
    alpha: Vec<f64>,
}

impl QuantizerSchedule {
    /// Schedule at `k = 0`: `beta(0) = x_max - x_min`, every `alpha_i(0) = x_min`.
    pub fn new(params: BetaParams) -> Self {
        Self {
            k: 0,
            beta_prev: f64::NAN,
            beta_cur: params.beta0(),
            alpha: vec![params.x_min; params.n],
            params,
        }
    }

    pub fn params(&self) -> &BetaParams {
        &self.params
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn beta(&self) -> f64 {
        self.beta_cur
    }

    /// `(beta(k), beta(k-1))`; the second entry is NaN at `k = 0`.
    pub fn beta_pair(&self) -> (f64, f64) {
        (self.beta_cur, self.beta_prev)
    }

    /// `beta(k)` as used by the quantizer, see [`window_width`].
    pub fn window(&self) -> f64 {
        window_width(self.beta_cur, self.params.bits)
    }

    pub fn alpha(&self, agent: usize) -> f64 {
        self.alpha[agent]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn quantizer(&self, agent: usize) -> DynamicQuantizer {
        DynamicQuantizer {
            alpha: self.alpha[agent],
            beta: self.window(),
            bits: self.params.bits,
        }
    }

    /// Advances `k -> k + 1`. The first two steps come from the closed-form
    /// initial widths; afterwards the two-term recursion takes over.
    pub fn beta_step(&mut self) {
        let next = match self.k {
            0 => self.params.beta1(),
            1 => self.params.beta2(),
            _ => beta_recursion_step(&self.params, self.beta_cur, self.beta_prev),
        };
        self.beta_prev = self.beta_cur;
        self.beta_cur = next;
        self.k += 1;
    }

    /// `alpha_i(k) = xi_i^q(k-2) - beta(k)/2` for the current `k >= 1`, where
    /// at `k = 1` the caller passes the quantized initial state.
    pub fn alpha_update(&mut self, agent: usize, xi_q_prev2: f64) -> f64 {
        debug_assert!(self.k >= 1, "alpha_i(0) is fixed to x_min");
        let a = xi_q_prev2 - self.window() / 2.0;
        self.alpha[agent] = a;
        a
    }
}

/// `beta(0..=horizon)` produced by stepping a fresh schedule.
pub fn beta_schedule(params: &BetaParams, horizon: usize) -> Vec<f64> {
    let mut s = QuantizerSchedule::new(*params);
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(s.beta());
    for _ in 0..horizon {
        s.beta_step();
        out.push(s.beta());
    }
    out
}

fn check_contractive(lambda2_mag: f64) -> Result<()> {
    if !(lambda2_mag < 1.0) || lambda2_mag < 0.0 {
        return Err(Error::Lambda2NotContractive(lambda2_mag));
    }
    Ok(())
}

/// `1/2 log2 N + log2((7 - 3|lambda_2|) / (1 - |lambda_2|))`, the bit count
/// that `b` must strictly exceed for `beta(k) -> 0`.
pub fn bits_threshold(n: usize, lambda2_mag: f64) -> Result<f64> {
    check_contractive(lambda2_mag)?;
    Ok(0.5 * (n as f64).log2() + ((7.0 - 3.0 * lambda2_mag) / (1.0 - lambda2_mag)).log2())
}

/// Smallest integer strictly above [`bits_threshold`].
pub fn min_bits(n: usize, lambda2_mag: f64) -> Result<u32> {
    let t = bits_threshold(n, lambda2_mag)?;
    Ok((t.floor() as u32) + 1)
}

/// Bits that guarantee the width decays at rate `eta`, rounded up.
pub fn bits_for_rate(n: usize, lambda2_mag: f64, eta: f64) -> Result<u32> {
    check_contractive(lambda2_mag)?;
    if !(eta > lambda2_mag && eta < 1.0) {
        return Err(Error::EtaOutOfRange {
            eta,
            lambda2: lambda2_mag,
        });
    }
    let gap = eta - lambda2_mag;
    let b = 0.5 * (n as f64).log2() + ((4.0 + 3.0 * gap) / (eta * gap)).log2();
    Ok(b.ceil().max(1.0) as u32)
}

/// Dominant eigenvalue of the two-term width recursion, the decay rate of
/// `beta(k)`.
pub fn effective_eta(n: usize, lambda2_mag: f64, bits: u32) -> f64 {
    let (a, c) = recursion_coefficients(n, lambda2_mag, bits);
    0.5 * (a + (a * a + 4.0 * c).sqrt())
}

/// Per-message bit budget of a shared channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBudget {
    /// Bits per time step for the whole network.
    pub total_rate: u64,
    /// Overhead bits per message.
    pub overhead: u64,
    /// Messages per step, `sum_i |N_i|`.
    pub link_count: usize,
}

impl RateBudget {
    pub fn for_network(network: &ConsensusNetwork, total_rate: u64, overhead: u64) -> Self {
        Self {
            total_rate,
            overhead,
            link_count: network.link_count(),
        }
    }

    /// `floor(B0 / links) - b0`, which must be at least one bit.
    pub fn bits_per_message(&self) -> Result<u32> {
        let per_link = (self.total_rate / self.link_count.max(1) as u64) as i64;
        let b = per_link - self.overhead as i64;
        if b < 1 {
            return Err(Error::InsufficientRate(b));
        }
        Ok(b.min(MAX_BITS as i64) as u32)
    }
}

/// Total bits per step above which quantized consensus is guaranteed;
/// callers round up.
pub fn required_total_rate(link_count: usize, n: usize, lambda2_mag: f64, overhead: f64) -> Result<f64> {
    Ok(link_count as f64 * (overhead + bits_threshold(n, lambda2_mag)?))
}
