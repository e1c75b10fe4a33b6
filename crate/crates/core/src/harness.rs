//! Experiment configuration, orchestration and file output.

use std::fs;
use std::path::{Path, PathBuf};

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    agreement, closed_form_moments, closed_form_moments_with, protection_report, run_adversary_mc,
    write_adversary_csv, Fault, MonteCarloOptions, ProtectionReport,
};
use crate::error::{Error, Result};
use crate::graph::{
    dense_spectral_radius, is_strongly_connected, spectral_analysis, verify_projector_identities, ConsensusNetwork,
    Edge, RingWeights, SpectralData, SpectralOptions,
};
use crate::metrics::{deviation_summary, DeviationReport};
use crate::protocols::{envelope_widths, run_bicc, run_classical, run_icc, ProtocolKind, SimulationTrace};
use crate::quantizer::{
    beta_schedule, beta_summed, bits_threshold, decode, effective_eta, encode, min_bits, required_total_rate,
    BetaParams,
};

/// Uniform ring weight when the file says `"uniform"`.
pub const UNIFORM_RING_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RingWeightSpec {
    Named(String),
    Explicit(Vec<f64>),
}

impl Default for RingWeightSpec {
    fn default() -> Self {
        RingWeightSpec::Named("uniform".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Generator {
    Ring {
        step: usize,
        #[serde(default)]
        weights: RingWeightSpec,
    },
    Explicit {
        /// 1-based `[source, target, kappa]`.
        edges: Vec<(usize, usize, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub n: usize,
    pub generator: Generator,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkSpec {
    pub fn build(&self) -> Result<ConsensusNetwork> {
        match &self.generator {
            Generator::Ring { step, weights } => {
                let w = match weights {
                    RingWeightSpec::Named(s) if s == "uniform" => RingWeights::Uniform(UNIFORM_RING_WEIGHT),
                    RingWeightSpec::Named(s) if s == "random" => RingWeights::Random(self.seed),
                    RingWeightSpec::Named(s) => {
                        return Err(Error::Config(format!(
                            "ring weights must be \"uniform\", \"random\" or a list, got \"{s}\""
                        )))
                    }
                    RingWeightSpec::Explicit(v) => RingWeights::Explicit(v.clone()),
                };
                ConsensusNetwork::ring_lattice(self.n, *step, w)
            }
            Generator::Explicit { edges } => ConsensusNetwork::from_one_based(self.n, edges),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum X0Spec {
    Uniform { uniform: (f64, f64), seed: u64 },
    Explicit(Vec<f64>),
}

impl X0Spec {
    /// Uniform draws lie in the open interval, so they always fit a quantizer
    /// range equal to it.
    pub fn realize(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            X0Spec::Uniform { uniform: (lo, hi), seed } => {
                if !(lo < hi) {
                    return Err(Error::Config(format!("x0 range [{lo}, {hi}] is empty")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..n)
                    .map(|_| {
                        let u: f64 = rng.sample(Open01);
                        lo + (hi - lo) * u
                    })
                    .collect())
            }
            X0Spec::Explicit(v) => {
                if v.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: v.len(),
                    });
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkRef {
    Inline(NetworkSpec),
    /// Path to a network file, relative to the experiment file.
    File(PathBuf),
}

fn default_protocol() -> ProtocolKind {
    ProtocolKind::Icc
}
fn default_bits() -> u32 {
    12
}
fn default_gamma() -> f64 {
    0.5
}
fn default_horizon() -> usize {
    1000
}
fn default_trials() -> usize {
    10_000
}
fn default_x_range() -> (f64, f64) {
    (4.0, 6.0)
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkRef,
    /// Defaults to uniform draws over `x_range` seeded by `seed`.
    #[serde(default)]
    pub x0: Option<X0Spec>,
    #[serde(default = "default_protocol")]
    pub protocol: ProtocolKind,
    #[serde(default = "default_bits")]
    pub bits: u32,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_x_range")]
    pub x_range: (f64, f64),
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidGamma(self.gamma));
        }
        if self.horizon == 0 {
            return Err(Error::EmptyHorizon);
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.x_range.0 < self.x_range.1) {
            return Err(Error::InvalidRange(self.x_range.0, self.x_range.1));
        }
        Ok(())
    }

    pub fn x0_spec(&self) -> X0Spec {
        self.x0.clone().unwrap_or(X0Spec::Uniform {
            uniform: self.x_range,
            seed: self.seed,
        })
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// A parsed experiment with its network file, if any, already resolved.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub network: NetworkSpec,
}

/// Reads an experiment file; a bare network file is accepted too and gets
/// the default experiment around it.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = read(path)?;
    let value: serde_json::Value = parse_json(path, &text)?;
    let config: ExperimentConfig = if value.get("generator").is_some() {
        let network: NetworkSpec = parse_json(path, &text)?;
        parse_json(path, &serde_json::json!({ "network": network }).to_string())?
    } else {
        parse_json(path, &text)?
    };
    let network = match &config.network {
        NetworkRef::Inline(spec) => spec.clone(),
        NetworkRef::File(rel) => {
            let full = path.parent().unwrap_or(Path::new(".")).join(rel);
            parse_json(&full, &read(&full)?)?
        }
    };
    Ok(LoadedConfig { config, network })
}

/// Command-line values that replace the file's.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub protocol: Option<ProtocolKind>,
    pub bits: Option<u32>,
    pub gamma: Option<f64>,
    pub horizon: Option<usize>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(p) = self.protocol {
            c.protocol = p;
        }
        if let Some(b) = self.bits {
            c.bits = b;
        }
        if let Some(g) = self.gamma {
            c.gamma = g;
        }
        if let Some(k) = self.horizon {
            c.horizon = k;
        }
        if let Some(m) = self.trials {
            c.trials = m;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub n: usize,
    pub lambda2: f64,
    pub w_left: Vec<f64>,
    pub b_min: u32,
    pub total_rate_min: f64,
}

pub fn cmd_spectral(network: &NetworkSpec) -> Result<SpectralSummary> {
    let net = network.build()?;
    let s = spectral_analysis(&net, SpectralOptions::default())?;
    Ok(SpectralSummary {
        n: net.n(),
        lambda2: s.lambda2_mag,
        w_left: s.w_left.iter().copied().collect(),
        b_min: min_bits(net.n(), s.lambda2_mag)?,
        total_rate_min: required_total_rate(net.link_count(), net.n(), s.lambda2_mag, 0.0)?.ceil(),
    })
}

/// Everything one run produces, before it touches the disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: SimulationTrace,
    pub protection: ProtectionReport,
    pub deviation: Option<DeviationReport>,
    /// Human-readable runtime invariant failures; empty on success.
    pub breaches: Vec<String>,
    files: Vec<(&'static str, Vec<u8>)>,
}

impl RunOutcome {
    pub fn file_names(&self) -> Vec<&'static str> {
        self.files.iter().map(|(n, _)| *n).collect()
    }

    /// Writes every output or none of them.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, bytes) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                return Err(e.into());
            }
            written.push(path);
        }
        Ok(())
    }
}

fn run_protocol(
    kind: ProtocolKind,
    net: &ConsensusNetwork,
    spectral: &SpectralData,
    x0: &[f64],
    bits: u32,
    x_range: (f64, f64),
    horizon: usize,
) -> Result<SimulationTrace> {
    match kind {
        ProtocolKind::Classical => run_classical(net, x0, horizon),
        ProtocolKind::Icc => run_icc(net, x0, horizon),
        ProtocolKind::Bicc => run_bicc(net, spectral, x0, bits, x_range, horizon),
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("plain data serializes");
    out.push(b'\n');
    out
}

pub fn cmd_run(loaded: &LoadedConfig) -> Result<RunOutcome> {
    let c = &loaded.config;
    c.validate()?;
    let net = loaded.network.build()?;
    let spectral = spectral_analysis(&net, SpectralOptions::default())?;
    let x0 = c.x0_spec().realize(net.n())?;
    let trace = run_protocol(c.protocol, &net, &spectral, &x0, c.bits, c.x_range, c.horizon)?;

    let cf = closed_form_moments(trace.kind, &trace, c.gamma)?;
    let mc = run_adversary_mc(&trace, &MonteCarloOptions::bernoulli(c.gamma, c.trials, c.seed))?;
    let protection = protection_report(&trace, &cf, c.trials);

    let mut breaches = Vec::new();
    let worst_eig = cf.min_eigenvalue.iter().copied().fold(f64::INFINITY, f64::min);
    if worst_eig < -1e-10 {
        breaches.push(format!("second moment not positive semidefinite (min eigenvalue {worst_eig:e})"));
    }
    let violations = protection.floor_violations(&cf, &trace);
    if !violations.is_empty() {
        breaches.push(format!(
            "protection floor violated at {} steps, first k = {}",
            violations.len(),
            violations[0]
        ));
    }
    let deviation = match trace.kind {
        ProtocolKind::Bicc => {
            let q = trace.quantized.as_ref().expect("bicc trace is quantized");
            let material = q.material_saturation_count();
            if material > 0 {
                breaches.push(format!("quantizer saturated {material} times beyond rounding resolution"));
            }
            let widths = envelope_widths(&trace);
            if widths[c.horizon] > widths[0] {
                breaches.push(format!(
                    "consensus envelope diverged: width {:e} at k = {} vs {:e} at k = 0",
                    widths[c.horizon], c.horizon, widths[0]
                ));
            }
            match deviation_summary(&trace, &spectral, None) {
                Ok(d) => Some(d),
                Err(Error::EtaOutOfRange { eta, .. }) => {
                    breaches.push(format!("b = {} leaves the width schedule non-contracting (eta {eta})", c.bits));
                    None
                }
                Err(e) => return Err(e),
            }
        }
        _ => None,
    };

    let mut files = Vec::new();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    files.push(("trace.csv", buf));
    let mut buf = Vec::new();
    write_adversary_csv(&mut buf, &mc, &cf, &protection)?;
    files.push(("adversary.csv", buf));
    files.push(("summary.json", json_bytes(&protection)));
    if let Some(d) = &deviation {
        files.push(("deviation.json", json_bytes(d)));
    }
    Ok(RunOutcome {
        trace,
        protection,
        deviation,
        breaches,
        files,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub b: u32,
    pub converged: Option<bool>,
    pub saturations: Option<usize>,
    pub material_saturations: Option<usize>,
    pub final_width: Option<f64>,
    pub deviation: Option<f64>,
    pub bound: Option<f64>,
    pub min_protection: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// `(b, k, min, max)` per step of each successful run.
    pub envelopes: Vec<(u32, usize, f64, f64)>,
}

impl SweepOutcome {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut rows = csv::Writer::from_writer(Vec::new());
        rows.write_record([
            "b",
            "converged",
            "saturations",
            "material_saturations",
            "final_width",
            "deviation",
            "bound",
            "min_protection",
            "error",
        ])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.rows {
            rows.write_record([
                r.b.to_string(),
                opt(r.converged.map(|v| v.to_string())),
                opt(r.saturations.map(|v| v.to_string())),
                opt(r.material_saturations.map(|v| v.to_string())),
                opt(r.final_width.map(|v| v.to_string())),
                opt(r.deviation.map(|v| v.to_string())),
                opt(r.bound.map(|v| v.to_string())),
                opt(r.min_protection.map(|v| v.to_string())),
                opt(r.error.clone()),
            ])?;
        }
        let mut env = csv::Writer::from_writer(Vec::new());
        env.write_record(["b", "k", "min", "max"])?;
        for (b, k, lo, hi) in &self.envelopes {
            env.write_record([b.to_string(), k.to_string(), lo.to_string(), hi.to_string()])?;
        }
        let rows = rows.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let env = env.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let sweep = dir.join("sweep.csv");
        fs::write(&sweep, rows)?;
        if let Err(e) = fs::write(dir.join("envelopes.csv"), env) {
            let _ = fs::remove_file(&sweep);
            return Err(e.into());
        }
        Ok(())
    }
}

/// BICC once per bit width; a failing width becomes a row with its error.
/// Protection comes from the closed form only.
pub fn cmd_sweep_bits(loaded: &LoadedConfig, bits: &[u32]) -> Result<SweepOutcome> {
    if bits.is_empty() {
        return Err(Error::Config("bit list is empty".into()));
    }
    let c = &loaded.config;
    c.validate()?;
    let net = loaded.network.build()?;
    let spectral = spectral_analysis(&net, SpectralOptions::default())?;
    let x0 = c.x0_spec().realize(net.n())?;
    let mut out = SweepOutcome {
        rows: Vec::new(),
        envelopes: Vec::new(),
    };
    for &b in bits {
        let attempt = || -> Result<(SweepRow, SimulationTrace)> {
            let t = run_bicc(&net, &spectral, &x0, b, c.x_range, c.horizon)?;
            let cf = closed_form_moments(ProtocolKind::Bicc, &t, c.gamma)?;
            let p = protection_report(&t, &cf, 0);
            let dev = deviation_summary(&t, &spectral, None);
            let q = t.quantized.as_ref().expect("bicc trace is quantized");
            let row = SweepRow {
                b,
                converged: Some(crate::metrics::converged(&t)),
                saturations: Some(q.saturation_count()),
                material_saturations: Some(q.material_saturation_count()),
                final_width: Some(*envelope_widths(&t).last().expect("nonempty")),
                deviation: dev.as_ref().ok().map(|d| d.deviation),
                bound: dev.as_ref().ok().map(|d| d.bound),
                min_protection: Some(p.min_protection),
                error: dev.err().map(|e| e.to_string()),
            };
            Ok((row, t))
        };
        match attempt() {
            Ok((row, t)) => {
                for (k, (lo, hi)) in crate::protocols::consensus_envelope(&t).into_iter().enumerate() {
                    out.envelopes.push((b, k, lo, hi));
                }
                out.rows.push(row);
            }
            Err(e) => out.rows.push(SweepRow {
                b,
                converged: None,
                saturations: None,
                material_saturations: None,
                final_width: None,
                deviation: None,
                bound: None,
                min_protection: None,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn verify_initial(n: usize, seed: u64) -> Vec<f64> {
    X0Spec::Uniform {
        uniform: (4.0, 6.0),
        seed,
    }
    .realize(n)
    .expect("valid range")
}

/// Built-in invariant suite on small canned instances.
pub fn cmd_verify(fault: Fault) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();

    let pair = ConsensusNetwork::from_one_based(2, &[(1, 2, 0.5), (2, 1, 0.5)])?;
    let ring = ConsensusNetwork::ring_lattice(25, 2, RingWeights::Uniform(UNIFORM_RING_WEIGHT))?;
    let mut worst = 0.0f64;
    for (net, horizon) in [(&pair, 10), (&ring, 50)] {
        let s = spectral_analysis(net, SpectralOptions::default())?;
        worst = worst.max(verify_projector_identities(net, &s, horizon).max_residual());
    }
    out.push(check("projector identities", worst <= 1e-8, format!("max residual {worst:.2e}")));

    let s = spectral_analysis(&ring, SpectralOptions::default())?;
    let dense = dense_spectral_radius(&s.deflated(&ring));
    let gap = (dense - s.lambda2_mag).abs();
    out.push(check(
        "power iteration vs dense eigensolver",
        gap <= 1e-8,
        format!("|lambda2| {:.10} vs {dense:.10}", s.lambda2_mag),
    ));

    let edges = vec![Edge {
        source: 0,
        target: 1,
        weight: 0.5,
    }];
    out.push(check(
        "strong connectivity",
        !is_strongly_connected(2, &edges) && ring.is_strongly_connected(),
        "one-way pair rejected, step-2 ring accepted".into(),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_ratio = 0.0f64;
    for _ in 0..100_000 {
        let alpha: f64 = rng.gen_range(-100.0..100.0);
        let beta: f64 = rng.gen_range(1e-3..100.0);
        let bits: u32 = rng.gen_range(1..=32);
        let x = alpha + beta * rng.gen::<f64>();
        let xq = decode(encode(x, alpha, beta, bits)?, alpha, beta, bits)?;
        worst_ratio = worst_ratio.max((x - xq).abs() / (beta / 2f64.powi(bits as i32 + 1)));
    }
    out.push(check(
        "quantizer round trip",
        worst_ratio <= 1.0 + 1e-9,
        format!("worst error / half cell {worst_ratio:.6}"),
    ));

    let mut worst_rel = 0.0f64;
    let mut iff = true;
    for n in [2usize, 10, 25] {
        for bits in [8u32, 12, 16, 24] {
            for lambda in [0.0, 0.5, 0.9, 0.992] {
                let p = BetaParams::new(n, lambda, bits, 4.0, 6.0)?;
                for (a, b) in beta_schedule(&p, 200).iter().zip(beta_summed(&p, 200)) {
                    worst_rel = worst_rel.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
                }
                iff &= (effective_eta(n, lambda, bits) < 1.0) == (bits as f64 > bits_threshold(n, lambda)?);
            }
        }
    }
    out.push(check(
        "width recursion vs summed form",
        worst_rel <= 1e-9,
        format!("max relative gap {worst_rel:.2e}"),
    ));
    out.push(check("decay iff bit threshold", iff, "grid of N, b, |lambda2|".into()));

    let mut same = true;
    let mut exact = true;
    let mut unsaturated = true;
    for seed in 0..20u64 {
        let net = ConsensusNetwork::random(3 + (seed as usize % 12), 0.25, seed)?;
        let x0 = verify_initial(net.n(), seed);
        let a = run_classical(&net, &x0, 300)?;
        let b = run_icc(&net, &x0, 300)?;
        same &= a.states == b.states;
        let sp = spectral_analysis(&net, SpectralOptions::default())?;
        let q = run_bicc(&net, &sp, &x0, min_bits(net.n(), sp.lambda2_mag)?, (4.0, 6.0), 300)?;
        exact &= b.estimate_mismatch == 0.0 && q.estimate_mismatch == 0.0;
        unsaturated &= !q.quantized.as_ref().is_some_and(|r| r.any_saturated());
    }
    out.push(check("icc equals classical", same, "20 random networks, bit-exact".into()));
    out.push(check("receiver estimates exact", exact, "icc and bicc, 20 networks".into()));
    out.push(check("no saturation at minimum bits", unsaturated, "bicc, 20 networks".into()));

    // Slow pair so the classical error has no unresolvable rare events.
    let slow = ConsensusNetwork::from_one_based(2, &[(1, 2, 0.1), (2, 1, 0.05)])?;
    let sp = spectral_analysis(&slow, SpectralOptions::default())?;
    let traces = [
        run_classical(&slow, &[2.0, -1.0], 20)?,
        run_icc(&slow, &[4.2, 5.9], 20)?,
        run_bicc(&slow, &sp, &[4.2, 5.9], 10, (4.0, 6.0), 20)?,
    ];
    let steps: Vec<usize> = (0..=20).collect();
    let mut z = 0.0f64;
    let mut floor_ok = true;
    for t in &traces {
        let cf = closed_form_moments_with(t.kind, t, 0.5, fault)?;
        let mc = run_adversary_mc(t, &MonteCarloOptions::bernoulli(0.5, 20_000, 42))?;
        let a = agreement(&mc, &cf, &steps);
        z = z.max(a.max_z_mean).max(a.max_z_trace);
        if t.kind != ProtocolKind::Classical {
            let r = protection_report(t, &cf, 0);
            floor_ok &= r.floor_violations(&cf, t).is_empty();
        }
    }
    out.push(check(
        "monte carlo vs closed form",
        z <= 4.0,
        format!("max |z| {z:.2} over 3 protocols, 21 steps"),
    ));
    out.push(check("protection floor", floor_ok, "icc and bicc closed form".into()));
    Ok(out)
}

/// Plain-text table of a verification run.
pub fn format_checks(checks: &[CheckResult]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for c in checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        s.push_str(&format!("{mark}  {:<width$}  {}\n", c.name, c.detail));
    }
    s
}

/// Process exit status for an error: 2 for bad input, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Io(_)
        | Error::TooFewAgents(_)
        | Error::AgentOutOfRange { .. }
        | Error::SelfLoop(_)
        | Error::DuplicateEdge { .. }
        | Error::NegativeWeight { .. }
        | Error::RowSumExceeded { .. }
        | Error::NotStronglyConnected
        | Error::WeightCount { .. }
        | Error::DimensionMismatch { .. }
        | Error::InitialStateOutOfRange { .. }
        | Error::InvalidRange(..)
        | Error::InvalidBits(_)
        | Error::InvalidGamma(_)
        | Error::EmptyHorizon
        | Error::EtaOutOfRange { .. }
        | Error::InsufficientRate(_)
        | Error::Lambda2NotContractive(_) => 2,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_spec() -> NetworkSpec {
        NetworkSpec {
            n: 25,
            generator: Generator::Ring {
                step: 2,
                weights: RingWeightSpec::default(),
            },
            seed: 0,
        }
    }

    #[test]
    fn network_file_formats() {
        let ring: NetworkSpec =
            serde_json::from_str(r#"{"n": 25, "generator": {"type": "ring", "step": 2, "weights": "uniform"}, "seed": 1}"#)
                .unwrap();
        assert_eq!(ring.build().unwrap().link_count(), 25);
        let random: NetworkSpec =
            serde_json::from_str(r#"{"n": 5, "generator": {"type": "ring", "step": 1, "weights": "random"}, "seed": 3}"#)
                .unwrap();
        assert!(random.build().is_ok());
        let list: NetworkSpec = serde_json::from_str(
            r#"{"n": 3, "generator": {"type": "ring", "step": 1, "weights": [0.1, 0.2, 0.3]}}"#,
        )
        .unwrap();
        assert_eq!(list.build().unwrap().incoming(1), &[(0, 0.2)]);
        let explicit: NetworkSpec = serde_json::from_str(
            r#"{"n": 2, "generator": {"type": "explicit", "edges": [[1, 2, 0.6], [2, 1, 0.7]]}, "seed": 0}"#,
        )
        .unwrap();
        let m = explicit.build().unwrap();
        assert!((m.matrix()[(0, 0)] - 0.3).abs() < 1e-15);
        let bad: NetworkSpec =
            serde_json::from_str(r#"{"n": 3, "generator": {"type": "ring", "step": 1, "weights": "heavy"}}"#).unwrap();
        assert!(matches!(bad.build(), Err(Error::Config(_))));
    }

    #[test]
    fn initial_state_formats() {
        let u: X0Spec = serde_json::from_str(r#"{"uniform": [4, 6], "seed": 9}"#).unwrap();
        let a = u.realize(100).unwrap();
        assert!(a.iter().all(|&v| v > 4.0 && v < 6.0));
        assert_eq!(a, u.realize(100).unwrap());
        let e: X0Spec = serde_json::from_str("[1.0, 2.5]").unwrap();
        assert_eq!(e.realize(2).unwrap(), vec![1.0, 2.5]);
        assert!(matches!(e.realize(3), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn defaults_follow_the_experiments() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"network": "ring.json"}"#).unwrap();
        assert_eq!((c.horizon, c.trials, c.gamma, c.x_range), (1000, 10_000, 0.5, (4.0, 6.0)));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"network": "x", "horizn": 3}"#).is_err());
    }

    #[test]
    fn spectral_summary_for_pair_and_ring() {
        let pair = NetworkSpec {
            n: 2,
            generator: Generator::Explicit {
                edges: vec![(1, 2, 0.5), (2, 1, 0.5)],
            },
            seed: 0,
        };
        let s = cmd_spectral(&pair).unwrap();
        assert!(s.lambda2.abs() < 1e-12);
        assert!((s.w_left[0] - 0.5).abs() < 1e-12 && (s.w_left[1] - 0.5).abs() < 1e-12);
        let r = cmd_spectral(&ring_spec()).unwrap();
        // Uniform ring: |lambda2| = cos(pi/25), just above the experiments' 0.992.
        assert_eq!(r.b_min, 12);
        assert_eq!(r.total_rate_min, (25.0 * bits_threshold(25, r.lambda2).unwrap()).ceil());
    }

    fn loaded(protocol: ProtocolKind, horizon: usize, trials: usize) -> LoadedConfig {
        LoadedConfig {
            config: ExperimentConfig {
                network: NetworkRef::Inline(ring_spec()),
                x0: None,
                protocol,
                bits: 12,
                gamma: 0.5,
                horizon,
                trials,
                seed: 3,
                x_range: (4.0, 6.0),
                out: PathBuf::from("unused"),
            },
            network: ring_spec(),
        }
    }

    #[test]
    fn icc_run_meets_the_floor() {
        let r = cmd_run(&loaded(ProtocolKind::Icc, 200, 200)).unwrap();
        assert!(r.breaches.is_empty(), "{:?}", r.breaches);
        assert!(r.protection.min_protection >= 0.25);
        assert_eq!(r.file_names(), ["trace.csv", "adversary.csv", "summary.json"]);
    }

    #[test]
    fn bicc_below_threshold_is_a_breach() {
        let mut l = loaded(ProtocolKind::Bicc, 3000, 20);
        l.config.bits = 10;
        let r = cmd_run(&l).unwrap();
        assert!(r.breaches.len() >= 2, "{:?}", r.breaches);
        assert_eq!(r.file_names(), ["trace.csv", "adversary.csv", "summary.json"]);
        let ok = cmd_run(&loaded(ProtocolKind::Bicc, 100, 20)).unwrap();
        assert!(ok.breaches.is_empty(), "{:?}", ok.breaches);
        assert_eq!(ok.file_names().last(), Some(&"deviation.json"));
    }

    #[test]
    fn sweep_records_failures_and_rejects_empty_lists() {
        let mut l = loaded(ProtocolKind::Bicc, 200, 1);
        l.config.x0 = Some(X0Spec::Explicit(vec![4.0; 25]));
        let s = cmd_sweep_bits(&l, &[12, 0]).unwrap();
        assert_eq!(s.rows.len(), 2);
        assert!(s.rows.iter().all(|r| r.error.is_some()));
        assert!(matches!(cmd_sweep_bits(&l, &[]), Err(Error::Config(_))));
    }

    #[test]
    fn verify_detects_injected_fault() {
        let clean = cmd_verify(Fault::None).unwrap();
        assert!(clean.iter().all(|c| c.passed), "{}", format_checks(&clean));
        let broken = cmd_verify(Fault::FlipCrossTerm).unwrap();
        let mc = broken.iter().find(|c| c.name == "monte carlo vs closed form").unwrap();
        assert!(!mc.passed);
    }
}
