//! Consensus detection and the finite bit-rate deviation bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{consensus_value, SpectralData};
use crate::protocols::{envelope_widths, SimulationTrace};
use crate::quantizer::{beta_schedule, effective_eta, BetaParams};

/// Consecutive steps the envelope must stay inside the tolerance.
pub const SUSTAIN_STEPS: usize = 50;

/// `1e-6 max(1, ||x0||_inf)`
pub fn consensus_tolerance(x0: &[f64]) -> f64 {
    1e-6 * x0.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

/// First step of the earliest run of [`SUSTAIN_STEPS`] steps whose envelope
/// width stays below `tol`.
pub fn consensus_reached(trace: &SimulationTrace, tol: f64) -> Option<usize> {
    let mut run = 0;
    for (k, w) in envelope_widths(trace).into_iter().enumerate() {
        if w < tol {
            run += 1;
            if run == SUSTAIN_STEPS {
                return Some(k + 1 - SUSTAIN_STEPS);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// True when the run ends inside a sustained stretch of agreement.
pub fn converged(trace: &SimulationTrace) -> bool {
    let tol = consensus_tolerance(&trace.x0);
    let widths = envelope_widths(trace);
    widths.len() >= SUSTAIN_STEPS && widths[widths.len() - SUSTAIN_STEPS..].iter().all(|&w| w < tol)
}

/// `(beta(0) + beta_bar eta / (1 - eta)) sqrt(N) 2^-(b+1)`
pub fn deviation_bound(params: &BetaParams, eta: f64) -> Result<f64> {
    if !(eta > params.lambda2_mag && eta < 1.0) {
        return Err(Error::EtaOutOfRange {
            eta,
            lambda2: params.lambda2_mag,
        });
    }
    let sqrt_n = (params.n as f64).sqrt();
    Ok((params.beta0() + params.beta_bar() * eta / (1.0 - eta)) * sqrt_n * 0.5f64.powi(params.bits as i32 + 1))
}

/// `sqrt(N) 2^-(b+1) sum_{k<=K} beta(k)`: the worst case accumulated by the
/// actual width schedule over a horizon, valid whenever nothing saturates.
pub fn schedule_deviation_bound(params: &BetaParams, horizon: usize) -> f64 {
    let sum: f64 = beta_schedule(params, horizon).iter().sum();
    (params.n as f64).sqrt() * sum * 0.5f64.powi(params.bits as i32 + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub x_inf_ideal: f64,
    pub x_inf_observed: f64,
    /// `sqrt(N) |x_inf_observed - x_inf_ideal|`
    pub deviation: f64,
    /// Zero without quantization.
    pub bound: f64,
    pub eta: Option<f64>,
    pub b: Option<u32>,
    pub converged: bool,
    #[serde(skip)]
    pub slack: f64,
}

/// Compares the terminal agreement value with `w^T x0`. For quantized runs
/// `eta` defaults to the effective decay rate of the width schedule.
pub fn verify_deviation(trace: &SimulationTrace, spectral: &SpectralData, eta: Option<f64>) -> Result<DeviationReport> {
    let widths = envelope_widths(trace);
    if !converged(trace) {
        return Err(Error::NotConverged {
            width: *widths.last().expect("trace holds x(0)"),
        });
    }
    let report = deviation_summary(trace, spectral, eta)?;
    Ok(report)
}

/// Same figures as [`verify_deviation`] without requiring convergence.
pub fn deviation_summary(trace: &SimulationTrace, spectral: &SpectralData, eta: Option<f64>) -> Result<DeviationReport> {
    let n = trace.n();
    let ideal = consensus_value(spectral, &trace.x0)?;
    let last = trace.final_state();
    let observed = last.iter().sum::<f64>() / n as f64;
    let deviation = (n as f64).sqrt() * (observed - ideal).abs();
    let (bound, eta, b) = match &trace.quantized {
        Some(q) => {
            let params = BetaParams::new(n, spectral.lambda2_mag, q.bits, q.x_min, q.x_max)?;
            let eta = eta.unwrap_or_else(|| effective_eta(n, spectral.lambda2_mag, q.bits));
            (deviation_bound(&params, eta)?, Some(eta), Some(q.bits))
        }
        None => (0.0, None, None),
    };
    Ok(DeviationReport {
        x_inf_ideal: ideal,
        x_inf_observed: observed,
        deviation,
        bound,
        eta,
        b,
        converged: converged(trace),
        slack: bound - deviation,
    })
}
