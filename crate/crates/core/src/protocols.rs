//! Classical, innovation-communication (ICC) and bit-rate constrained (BICC)
//! consensus, simulated agent by agent.
//!
//! All three accumulate `sum_j kappa_ij (x_j - x_i)` over incoming neighbours
//! in ascending index, so ICC reproduces the classical trajectory bit for bit.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ConsensusNetwork, SpectralData};
use crate::quantizer::{decode, encode, BetaParams, QuantizerSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Classical,
    Icc,
    Bicc,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Classical => "classical",
            ProtocolKind::Icc => "icc",
            ProtocolKind::Bicc => "bicc",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classical" => Ok(ProtocolKind::Classical),
            "icc" => Ok(ProtocolKind::Icc),
            "bicc" => Ok(ProtocolKind::Bicc),
            other => Err(Error::Config(format!("unknown protocol '{other}'"))),
        }
    }
}

/// Receiver-side view of one incoming link.
#[derive(Debug, Clone)]
struct LinkState {
    from: usize,
    kappa: f64,
    xhat: f64,
    /// Last decoded innovation, which centres the next quantizer window.
    last_xi_q: f64,
}

/// What a single agent knows and stores.
#[derive(Debug, Clone)]
pub struct AgentRuntime {
    pub x: f64,
    pub xi_prev: f64,
    links: Vec<LinkState>,
}

impl AgentRuntime {
    fn new(network: &ConsensusNetwork, agent: usize, x0: f64) -> Self {
        let links = network
            .incoming(agent)
            .iter()
            .map(|&(from, kappa)| LinkState {
                from,
                kappa,
                xhat: 0.0,
                last_xi_q: 0.0,
            })
            .collect();
        Self {
            x: x0,
            xi_prev: x0,
            links,
        }
    }

    /// Local estimate `xhat_j^i` of each incoming neighbour, ascending `j`.
    pub fn estimates(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.links.iter().map(|l| (l.from, l.xhat))
    }

    fn innovation(&self) -> f64 {
        self.links
            .iter()
            .fold(0.0, |acc, l| acc + l.kappa * (l.xhat - self.x))
    }
}

/// Quantizer-side records of a BICC run.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedRecord {
    pub bits: u32,
    pub x_min: f64,
    pub x_max: f64,
    /// Quantized initial state, which is also `xi^q(-1)`.
    pub x0_q: Vec<f64>,
    pub x0_codes: Vec<u64>,
    /// Row `k` holds the quantization of `xi(k)`, which uses `alpha(k+1)` and
    /// `beta(k+1)`.
    pub codes: Vec<Vec<u64>>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub xi_q: Vec<Vec<f64>>,
    pub saturated: Vec<Vec<bool>>,
    /// Distance of `xi(k)` outside its window, 0 inside.
    pub overshoot: Vec<Vec<f64>>,
    /// Rounding resolution of the state at step `k`; see [`RESOLUTION_ULPS`].
    pub resolution: Vec<f64>,
}

/// Overshoots up to this many ulps of `max_i |x_i(k)|` are rounding noise:
/// once the window is narrower than the state's own spacing, the computed
/// innovation cannot land inside it reliably.
pub const RESOLUTION_ULPS: f64 = 16.0;

impl QuantizedRecord {
    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().flatten().any(|&s| s)
    }

    pub fn saturation_count(&self) -> usize {
        self.saturated.iter().flatten().filter(|&&s| s).count()
    }

    /// Saturations whose overshoot exceeds the state's rounding resolution.
    pub fn material_saturation_count(&self) -> usize {
        self.overshoot
            .iter()
            .zip(&self.resolution)
            .map(|(row, &r)| row.iter().filter(|&&o| o > r).count())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub kind: ProtocolKind,
    pub horizon: usize,
    /// The caller's initial state, before any quantization.
    pub x0: Vec<f64>,
    /// `x(0..=K)`
    pub states: Vec<Vec<f64>>,
    /// Innovation each agent added, `xi(0..K)`.
    pub innovations: Vec<Vec<f64>>,
    /// `(L - I) x(k)` from the true states, `k < K`.
    pub ideal_innovations: Vec<Vec<f64>>,
    /// `max |xhat_j^i(k) - x_j(k)|` over the run; zero for classical.
    pub estimate_mismatch: f64,
    pub quantized: Option<QuantizedRecord>,
}

impl SimulationTrace {
    pub fn n(&self) -> usize {
        self.x0.len()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trace holds x(0)")
    }

    /// What an eavesdropper sees before any innovation, the message at `k = 0`.
    pub fn initial_message(&self) -> &[f64] {
        match &self.quantized {
            Some(q) => &q.x0_q,
            None => &self.states[0],
        }
    }

    /// The innovation actually on the wire for step `k`.
    pub fn transmitted(&self, k: usize) -> &[f64] {
        match &self.quantized {
            Some(q) => &q.xi_q[k],
            None => &self.innovations[k],
        }
    }

    pub fn expect_kind(&self, allowed: &[ProtocolKind], expected: &'static str) -> Result<()> {
        if allowed.contains(&self.kind) {
            Ok(())
        } else {
            Err(Error::ProtocolMismatch {
                expected,
                got: self.kind.name(),
            })
        }
    }

    /// One row per `(k, agent)`, `k = 0..=K`. Row `k` carries `x(k)`, `xi(k)`
    /// and the quantization of `xi(k)`; the last step has no innovation.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "agent", "x", "xi", "xi_q", "code", "alpha", "beta", "saturated"])?;
        let blank = String::new;
        for k in 0..=self.horizon {
            for i in 0..self.n() {
                let xi = self.innovations.get(k).map(|v| v[i].to_string());
                let q = self.quantized.as_ref().filter(|_| k < self.horizon);
                let row = [
                    k.to_string(),
                    (i + 1).to_string(),
                    self.states[k][i].to_string(),
                    xi.unwrap_or_else(blank),
                    q.map(|q| q.xi_q[k][i].to_string()).unwrap_or_else(blank),
                    q.map(|q| q.codes[k][i].to_string()).unwrap_or_else(blank),
                    q.map(|q| q.alpha[k][i].to_string()).unwrap_or_else(blank),
                    q.map(|q| q.beta[k].to_string()).unwrap_or_else(blank),
                    q.map(|q| q.saturated[k][i].to_string()).unwrap_or_else(blank),
                ];
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn check_inputs(network: &ConsensusNetwork, x0: &[f64], horizon: usize) -> Result<()> {
    if x0.len() != network.n() {
        return Err(Error::DimensionMismatch {
            expected: network.n(),
            got: x0.len(),
        });
    }
    if horizon == 0 {
        return Err(Error::EmptyHorizon);
    }
    Ok(())
}

fn ideal_innovation(network: &ConsensusNetwork, x: &[f64]) -> Vec<f64> {
    (0..network.n())
        .map(|i| {
            network
                .incoming(i)
                .iter()
                .fold(0.0, |acc, &(j, kappa)| acc + kappa * (x[j] - x[i]))
        })
        .collect()
}

/// `x(k+1) = L x(k)`, evaluated as `x_i + sum_j kappa_ij (x_j - x_i)`.
pub fn run_classical(network: &ConsensusNetwork, x0: &[f64], horizon: usize) -> Result<SimulationTrace> {
    check_inputs(network, x0, horizon)?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut innovations = Vec::with_capacity(horizon);
    states.push(x0.to_vec());
    for k in 0..horizon {
        let x = &states[k];
        let xi = ideal_innovation(network, x);
        let next = x.iter().zip(&xi).map(|(a, d)| a + d).collect();
        innovations.push(xi);
        states.push(next);
    }
    Ok(SimulationTrace {
        kind: ProtocolKind::Classical,
        horizon,
        x0: x0.to_vec(),
        states,
        ideal_innovations: innovations.clone(),
        innovations,
        estimate_mismatch: 0.0,
        quantized: None,
    })
}

fn mismatch(agents: &[AgentRuntime], x: &[f64]) -> f64 {
    agents
        .iter()
        .flat_map(|a| a.links.iter())
        .map(|l| (l.xhat - x[l.from]).abs())
        .fold(0.0, f64::max)
}

/// Agents broadcast innovations and integrate them into local estimates.
pub fn run_icc(network: &ConsensusNetwork, x0: &[f64], horizon: usize) -> Result<SimulationTrace> {
    check_inputs(network, x0, horizon)?;
    let n = network.n();
    let mut agents: Vec<AgentRuntime> = (0..n).map(|i| AgentRuntime::new(network, i, x0[i])).collect();
    let mut states = vec![x0.to_vec()];
    let mut innovations = Vec::with_capacity(horizon);
    let mut ideal = Vec::with_capacity(horizon);
    let mut worst = 0.0f64;

    for _ in 0..horizon {
        // Receive xi_j(k-1) and fold it into the estimate, then innovate.
        let sent: Vec<f64> = agents.iter().map(|a| a.xi_prev).collect();
        for agent in agents.iter_mut() {
            for l in agent.links.iter_mut() {
                l.xhat += sent[l.from];
            }
        }
        let x: Vec<f64> = agents.iter().map(|a| a.x).collect();
        worst = worst.max(mismatch(&agents, &x));
        ideal.push(ideal_innovation(network, &x));
        let xi: Vec<f64> = agents.iter().map(AgentRuntime::innovation).collect();
        for (agent, &d) in agents.iter_mut().zip(&xi) {
            agent.x += d;
            agent.xi_prev = d;
        }
        innovations.push(xi);
        states.push(agents.iter().map(|a| a.x).collect());
    }

    Ok(SimulationTrace {
        kind: ProtocolKind::Icc,
        horizon,
        x0: x0.to_vec(),
        states,
        innovations,
        ideal_innovations: ideal,
        estimate_mismatch: worst,
        quantized: None,
    })
}

/// ICC with every transmitted value passed through the dynamic quantizer.
///
/// Each receiver decodes incoming codes with its own copy of the sender's
/// window, reconstructed from the public `beta` schedule and the previously
/// decoded innovation.
pub fn run_bicc(
    network: &ConsensusNetwork,
    spectral: &SpectralData,
    x0: &[f64],
    bits: u32,
    x_range: (f64, f64),
    horizon: usize,
) -> Result<SimulationTrace> {
    check_inputs(network, x0, horizon)?;
    if spectral.n() != network.n() {
        return Err(Error::DimensionMismatch {
            expected: network.n(),
            got: spectral.n(),
        });
    }
    let (x_min, x_max) = x_range;
    let params = BetaParams::new(network.n(), spectral.lambda2_mag, bits, x_min, x_max)?;
    for (agent, &v) in x0.iter().enumerate() {
        if !(v > x_min && v < x_max) {
            return Err(Error::InitialStateOutOfRange {
                agent,
                value: v,
                x_min,
                x_max,
            });
        }
    }

    let n = network.n();
    let mut schedule = QuantizerSchedule::new(params);
    let beta0 = schedule.beta();
    let x0_codes = x0
        .iter()
        .map(|&v| encode(v, x_min, beta0, bits))
        .collect::<Result<Vec<_>>>()?;
    let x0_q = x0_codes
        .iter()
        .map(|&c| decode(c, x_min, beta0, bits))
        .collect::<Result<Vec<_>>>()?;

    let mut agents: Vec<AgentRuntime> = (0..n).map(|i| AgentRuntime::new(network, i, x0_q[i])).collect();
    // The k = 0 message carries the initial code; receivers decode it themselves.
    for agent in agents.iter_mut() {
        for l in agent.links.iter_mut() {
            let v = decode(x0_codes[l.from], x_min, beta0, bits)?;
            l.xhat = v;
            l.last_xi_q = v;
        }
    }
    // Sender's own copy of xi^q(k-1), which centres its next window.
    let mut own_last: Vec<f64> = x0_q.clone();

    let mut rec = QuantizedRecord {
        bits,
        x_min,
        x_max,
        x0_q: x0_q.clone(),
        x0_codes,
        codes: Vec::with_capacity(horizon),
        alpha: Vec::with_capacity(horizon),
        beta: Vec::with_capacity(horizon),
        xi_q: Vec::with_capacity(horizon),
        saturated: Vec::with_capacity(horizon),
        overshoot: Vec::with_capacity(horizon),
        resolution: Vec::with_capacity(horizon),
    };
    let mut states = vec![x0_q.clone()];
    let mut innovations = Vec::with_capacity(horizon);
    let mut ideal = Vec::with_capacity(horizon);
    let mut worst = 0.0f64;

    for _ in 0..horizon {
        let x: Vec<f64> = agents.iter().map(|a| a.x).collect();
        worst = worst.max(mismatch(&agents, &x));
        ideal.push(ideal_innovation(network, &x));
        let xi: Vec<f64> = agents.iter().map(AgentRuntime::innovation).collect();

        // Encode xi(k) with the window of step k+1.
        schedule.beta_step();
        let beta = schedule.window();
        let mut codes = Vec::with_capacity(n);
        let mut alphas = Vec::with_capacity(n);
        let mut sat = Vec::with_capacity(n);
        let mut xi_q = Vec::with_capacity(n);
        let mut over = Vec::with_capacity(n);
        for i in 0..n {
            let alpha = schedule.alpha_update(i, own_last[i]);
            let q = schedule.quantizer(i);
            let code = q.encode(xi[i]);
            xi_q.push(q.decode(code)?);
            sat.push(!q.contains(xi[i]));
            over.push((q.alpha - xi[i]).max(xi[i] - (q.alpha + q.beta)).max(0.0));
            codes.push(code);
            alphas.push(alpha);
        }

        for (i, agent) in agents.iter_mut().enumerate() {
            agent.x += xi_q[i];
            agent.xi_prev = xi_q[i];
            for l in agent.links.iter_mut() {
                let alpha = l.last_xi_q - beta / 2.0;
                let v = decode(codes[l.from], alpha, beta, bits)?;
                l.xhat += v;
                l.last_xi_q = v;
            }
        }
        own_last.copy_from_slice(&xi_q);

        rec.codes.push(codes);
        rec.alpha.push(alphas);
        rec.beta.push(beta);
        rec.xi_q.push(xi_q);
        rec.saturated.push(sat);
        rec.overshoot.push(over);
        rec.resolution
            .push(RESOLUTION_ULPS * f64::EPSILON * x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        innovations.push(xi);
        states.push(agents.iter().map(|a| a.x).collect());
    }
    let x: Vec<f64> = agents.iter().map(|a| a.x).collect();
    worst = worst.max(mismatch(&agents, &x));

    Ok(SimulationTrace {
        kind: ProtocolKind::Bicc,
        horizon,
        x0: x0.to_vec(),
        states,
        innovations,
        ideal_innovations: ideal,
        estimate_mismatch: worst,
        quantized: Some(rec),
    })
}

/// `(min_i x_i(k), max_i x_i(k))` per step.
pub fn consensus_envelope(trace: &SimulationTrace) -> Vec<(f64, f64)> {
    trace
        .states
        .iter()
        .map(|x| {
            x.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        })
        .collect()
}

pub fn envelope_widths(trace: &SimulationTrace) -> Vec<f64> {
    consensus_envelope(trace).into_iter().map(|(lo, hi)| hi - lo).collect()
}

pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-9;

/// First step whose envelope width is below `tol`.
pub fn first_converged(trace: &SimulationTrace, tol: f64) -> Option<usize> {
    envelope_widths(trace).iter().position(|&w| w < tol)
}
