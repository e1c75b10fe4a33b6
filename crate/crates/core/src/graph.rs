//! Consensus networks and the spectral quantities of their gain matrix.
//!
//! A network is a strongly connected digraph over agents `0..n` where every
//! agent `i` mixes the states of its incoming neighbours `j` with gains
//! `kappa[i][j] >= 0`, `sum_j kappa[i][j] <= 1`. The consensus matrix `L` has
//! those gains off the diagonal and `1 - sum_j kappa[i][j]` on it, so every row
//! sums to one.
//!
//! Spectral analysis works in two passes of power iteration: first on `L^T`
//! for the unit-eigenvalue left eigenvector `w` (normalised to `w^T 1 = 1`),
//! then on the deflated matrix `L - 1 w^T`, whose spectral radius is the
//! second largest eigenvalue modulus `|lambda_2|`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Directed link `source -> target`: `source` is an incoming neighbour of
/// `target`, and `weight` is the gain `target` applies to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

/// Gain assignment for [`ConsensusNetwork::ring_lattice`].
#[derive(Debug, Clone, PartialEq)]
pub enum RingWeights {
    /// Every agent uses the same gain on its single neighbour.
    Uniform(f64),
    /// Seeded random gains, see [`random_row_weights`].
    Random(u64),
    /// One gain per agent, indexed by the receiving agent.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct ConsensusNetwork {
    n: usize,
    edges: Vec<Edge>,
    /// Incoming neighbours of each agent with their gains, ascending by index.
    incoming: Vec<Vec<(usize, f64)>>,
    matrix: DMatrix<f64>,
}

impl ConsensusNetwork {
    /// Builds a network from 0-based edges, checking weights and strong
    /// connectivity.
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewAgents(n));
        }
        let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for e in &edges {
            if e.source >= n || e.target >= n {
                return Err(Error::AgentOutOfRange {
                    source_agent: e.source + 1,
                    target_agent: e.target + 1,
                    n,
                });
            }
            if e.source == e.target {
                return Err(Error::SelfLoop(e.source + 1));
            }
            if !(e.weight >= 0.0) {
                return Err(Error::NegativeWeight {
                    source_agent: e.source + 1,
                    target_agent: e.target + 1,
                    weight: e.weight,
                });
            }
            if incoming[e.target].iter().any(|&(j, _)| j == e.source) {
                return Err(Error::DuplicateEdge {
                    source_agent: e.source + 1,
                    target_agent: e.target + 1,
                });
            }
            incoming[e.target].push((e.source, e.weight));
        }
        for row in &mut incoming {
            row.sort_by_key(|&(j, _)| j);
        }

        let mut matrix = DMatrix::zeros(n, n);
        for (i, row) in incoming.iter().enumerate() {
            let sum: f64 = row.iter().map(|&(_, w)| w).sum();
            // Allow rounding slack from user-supplied decimal gains.
            if sum > 1.0 + 1e-12 {
                return Err(Error::RowSumExceeded { agent: i + 1, sum });
            }
            for &(j, w) in row {
                matrix[(i, j)] = w;
            }
            matrix[(i, i)] = 1.0 - sum;
        }

        if !is_strongly_connected(n, &edges) {
            return Err(Error::NotStronglyConnected);
        }

        Ok(Self {
            n,
            edges,
            incoming,
            matrix,
        })
    }

    /// Builds a network from 1-based `(source, target, weight)` triplets, the
    /// convention used by network description files.
    pub fn from_one_based(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(triplets.len());
        for &(s, t, w) in triplets {
            if s == 0 || t == 0 || s > n || t > n {
                return Err(Error::AgentOutOfRange {
                    source_agent: s,
                    target_agent: t,
                    n,
                });
            }
            edges.push(Edge {
                source: s - 1,
                target: t - 1,
                weight: w,
            });
        }
        Self::new(n, edges)
    }

    /// Ring where agent `i` listens to agent `i - step (mod n)` only.
    pub fn ring_lattice(n: usize, step: usize, weights: RingWeights) -> Result<Self> {
        if n < 3 {
            return Err(Error::TooFewAgents(n));
        }
        if step.is_multiple_of(n) {
            return Err(Error::NotStronglyConnected);
        }
        let gains: Vec<f64> = match weights {
            RingWeights::Uniform(w) => vec![w; n],
            RingWeights::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| random_row_weights(&mut rng, 1)[0]).collect()
            }
            RingWeights::Explicit(list) => {
                if list.len() != n {
                    return Err(Error::WeightCount { n, got: list.len() });
                }
                list
            }
        };
        let edges = (0..n)
            .map(|i| Edge {
                source: (i + n - step % n) % n,
                target: i,
                weight: gains[i],
            })
            .collect();
        Self::new(n, edges)
    }

    /// Random strongly connected digraph: a directed Hamiltonian cycle over a
    /// shuffled agent order, plus every other ordered pair with probability
    /// `extra_edge_prob`. Gains follow [`random_row_weights`].
    pub fn random(n: usize, extra_edge_prob: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewAgents(n));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut adjacency = vec![vec![false; n]; n];
        for k in 0..n {
            let (s, t) = (order[k], order[(k + 1) % n]);
            adjacency[t][s] = true;
        }
        for t in 0..n {
            for s in 0..n {
                if s != t && !adjacency[t][s] && rng.gen::<f64>() < extra_edge_prob {
                    adjacency[t][s] = true;
                }
            }
        }
        let mut edges = Vec::new();
        for (t, row) in adjacency.iter().enumerate() {
            let sources: Vec<usize> = (0..n).filter(|&s| row[s]).collect();
            let gains = random_row_weights(&mut rng, sources.len());
            edges.extend(sources.into_iter().zip(gains).map(|(s, w)| Edge {
                source: s,
                target: t,
                weight: w,
            }));
        }
        Self::new(n, edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Incoming neighbours of agent `i` and their gains, ascending by index.
    pub fn incoming(&self, i: usize) -> &[(usize, f64)] {
        &self.incoming[i]
    }

    /// Outgoing neighbours of agent `i`, ascending.
    pub fn outgoing(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter(|e| e.source == i)
            .map(|e| e.target)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Number of messages sent per step, `sum_i |N_i|`.
    pub fn link_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_strongly_connected(&self) -> bool {
        is_strongly_connected(self.n, &self.edges)
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        (0..self.n).all(|j| (self.matrix.column(j).sum() - 1.0).abs() <= tol)
    }
}

/// Per-agent random gains: raw draws uniform in (0, 1) rescaled so that they
/// sum to `u`, with `u` uniform in (0.2, 1).
pub fn random_row_weights<R: Rng>(rng: &mut R, count: usize) -> Vec<f64> {
    if count == 0 {
        return Vec::new();
    }
    let raw: Vec<f64> = (0..count).map(|_| 1.0 - rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let budget = rng.gen_range(0.2..1.0);
    raw.into_iter().map(|r| r / total * budget).collect()
}

/// Forward and backward reachability from agent 0.
pub fn is_strongly_connected(n: usize, edges: &[Edge]) -> bool {
    if n == 0 {
        return false;
    }
    let mut forward = vec![Vec::new(); n];
    let mut backward = vec![Vec::new(); n];
    for e in edges {
        if e.source < n && e.target < n {
            forward[e.source].push(e.target);
            backward[e.target].push(e.source);
        }
    }
    reaches_all(&forward) && reaches_all(&backward)
}

fn reaches_all(adjacency: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; adjacency.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &u in &adjacency[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                queue.push_back(u);
            }
        }
    }
    count == adjacency.len()
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 100_000,
        }
    }
}

/// Convergence diagnostics of the two power iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralResiduals {
    /// `||w^T L - w^T||_inf` at exit.
    pub left_residual: f64,
    pub left_iterations: usize,
    /// Relative residual of the Krylov fit used for `|lambda_2|`.
    pub lambda2_residual: f64,
    pub lambda2_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    pub lambda2_mag: f64,
    pub w_left: DVector<f64>,
    pub projector_j: DMatrix<f64>,
    pub residuals: SpectralResiduals,
}

impl SpectralData {
    pub fn n(&self) -> usize {
        self.w_left.len()
    }

    /// `L - J`, the part of `L` that decays.
    pub fn deflated(&self, network: &ConsensusNetwork) -> DMatrix<f64> {
        network.matrix() - &self.projector_j
    }
}

pub fn spectral_analysis(network: &ConsensusNetwork, opts: SpectralOptions) -> Result<SpectralData> {
    let (w_left, left_residual, left_iterations) = left_eigenvector(network.matrix(), opts)?;
    let n = network.n();
    let ones = DVector::from_element(n, 1.0);
    let projector_j = &ones * w_left.transpose();
    let (lambda2_mag, lambda2_residual, lambda2_iterations) =
        deflated_spectral_radius(network.matrix(), &w_left, opts)?;
    // Periodic digraphs (no self-weight anywhere on a cycle) keep other
    // eigenvalues on the unit circle.
    if lambda2_mag >= 1.0 - 1e-12 {
        return Err(Error::Lambda2NotContractive(lambda2_mag));
    }
    Ok(SpectralData {
        lambda2_mag,
        w_left,
        projector_j,
        residuals: SpectralResiduals {
            left_residual,
            left_iterations,
            lambda2_residual,
            lambda2_iterations,
        },
    })
}

fn left_eigenvector(l: &DMatrix<f64>, opts: SpectralOptions) -> Result<(DVector<f64>, f64, usize)> {
    let n = l.nrows();
    let lt = l.transpose();
    let mut w = DVector::from_element(n, 1.0 / n as f64);
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iters {
        let mut next = &lt * &w;
        let s = next.sum();
        next /= s;
        residual = (&next - &w).amax();
        w = next;
        if residual <= opts.tol {
            // Report the residual of the vector actually returned.
            let check = (&lt * &w - &w).amax();
            return Ok((w, check, it));
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iters,
        residual,
    })
}

/// Spectral radius of `A = L - 1 w^T` by power iteration. The dominant part
/// of `A` may be a single real eigenvalue or a complex-conjugate pair, so each
/// step fits both a one-term (`A z = r z`) and a two-term
/// (`A^2 z = s A z - p z`) recurrence to the latest Krylov vectors and accepts
/// whichever fit reaches the tolerance.
fn deflated_spectral_radius(
    l: &DMatrix<f64>,
    w: &DVector<f64>,
    opts: SpectralOptions,
) -> Result<(f64, f64, usize)> {
    let n = l.nrows();
    let apply = |v: &DVector<f64>| -> DVector<f64> {
        let shift = w.dot(v);
        l * v - DVector::from_element(n, shift)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a2b);
    let start = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
    let mut z0 = apply(&start);
    let norm0 = z0.norm();
    // The defect of L - J below rounding level means it is numerically zero.
    if norm0 <= 1e-13 * start.norm() {
        return Ok((0.0, 0.0, 0));
    }
    z0 /= norm0;
    let mut z1 = apply(&z0);

    let mut best_residual = f64::INFINITY;
    let mut previous = f64::NAN;
    for it in 1..=opts.max_iters {
        let n1 = z1.norm();
        if n1 <= 1e-13 {
            return Ok((0.0, n1, it));
        }
        let z2 = apply(&z1);
        let n2 = z2.norm();
        if n2 <= 1e-13 * n1 {
            // A^2 z vanishes: nilpotent on the Krylov space.
            return Ok((0.0, n2 / n1, it));
        }

        let (rho1, res1) = one_term_fit(&z0, &z1);
        let fit2 = two_term_fit(&z0, &z1, &z2);
        let (estimate, residual) = match fit2 {
            Some((rho2, res2)) if res1 > opts.tol && res2 < res1 => (rho2, res2),
            _ => (rho1, res1),
        };
        best_residual = best_residual.min(residual);
        if residual <= opts.tol && (estimate - previous).abs() <= opts.tol {
            return Ok((estimate, residual, it));
        }
        previous = estimate;

        z0 = z1 / n1;
        z1 = z2 / n1;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iters,
        residual: best_residual,
    })
}

fn one_term_fit(z0: &DVector<f64>, z1: &DVector<f64>) -> (f64, f64) {
    let r = z0.dot(z1) / z0.dot(z0);
    let res = (z1 - z0 * r).norm() / z1.norm();
    (r.abs(), res)
}

fn two_term_fit(z0: &DVector<f64>, z1: &DVector<f64>, z2: &DVector<f64>) -> Option<(f64, f64)> {
    // Least squares for z2 = s z1 - p z0.
    let a = z1.dot(z1);
    let b = z1.dot(z0);
    let c = z0.dot(z0);
    let d = z1.dot(z2);
    let e = z0.dot(z2);
    let det = b * b - a * c;
    if det.abs() <= 1e-14 * a * c {
        return None;
    }
    let s = (b * e - c * d) / det;
    let p = (a * e - b * d) / det;
    let res = (z2 - z1 * s + z0 * p).norm() / z2.norm();
    let disc = s * s - 4.0 * p;
    let rho = if disc < 0.0 {
        p.sqrt()
    } else {
        let root = disc.sqrt();
        ((s + root) / 2.0).abs().max(((s - root) / 2.0).abs())
    };
    Some((rho, res))
}

/// Ideal consensus value `w^T x0`.
pub fn consensus_value(spectral: &SpectralData, x0: &[f64]) -> Result<f64> {
    if x0.len() != spectral.n() {
        return Err(Error::DimensionMismatch {
            expected: spectral.n(),
            got: x0.len(),
        });
    }
    Ok(spectral.w_left.iter().zip(x0).map(|(w, x)| w * x).sum())
}

/// Spectral radius of a dense matrix through its Schur form. Used as an
/// independent route against the power-iteration estimate.
pub fn dense_spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Maximum residual of each projector identity, all in the matrix inf-norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectorReport {
    /// `||J J - J||`
    pub idempotence: f64,
    /// `max_k ||J^k - J||`
    pub power_idempotence: f64,
    /// `max(||L1 J||, ||J L1||)` with `L1 = L - J`
    pub annihilation: f64,
    /// `||L J - J||`
    pub fixed_projector: f64,
    /// `max_k ||(L - J)^k - (L^k - J)||`
    pub power_split: f64,
    /// `max_k ||(L - I) L^k - (L - I)(L - J)^k||`
    pub innovation_power: f64,
    /// `|rho(L - J) - |lambda_2||` with `rho` from a dense eigensolver
    pub spectral_radius: f64,
    /// `||L^m - J||` for `m` large enough that `|lambda_2|^m <= 1e-20`
    pub limit: f64,
    pub limit_power: u64,
}

impl ProjectorReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.idempotence,
            self.power_idempotence,
            self.annihilation,
            self.fixed_projector,
            self.power_split,
            self.innovation_power,
            self.spectral_radius,
            self.limit,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn verify_projector_identities(
    network: &ConsensusNetwork,
    spectral: &SpectralData,
    horizon: usize,
) -> ProjectorReport {
    let n = network.n();
    let l = network.matrix();
    let j = &spectral.projector_j;
    let id = DMatrix::<f64>::identity(n, n);
    let l1 = l - j;
    let l_minus_i = l - &id;

    let idempotence = inf_norm(&(j * j - j));
    let annihilation = inf_norm(&(&l1 * j)).max(inf_norm(&(j * &l1)));
    let fixed_projector = inf_norm(&(l * j - j));

    let mut power_idempotence: f64 = 0.0;
    let mut power_split: f64 = 0.0;
    let mut innovation_power: f64 = 0.0;
    let mut l_pow = id.clone();
    let mut l1_pow = id.clone();
    let mut j_pow = id.clone();
    // k = 0 of (iv) is trivially exact; L^0 - J^0 = 0 = (L-J)^0 - I is not part of (iii).
    for _ in 1..=horizon {
        l_pow = &l_pow * l;
        l1_pow = &l1_pow * &l1;
        j_pow = &j_pow * j;
        power_idempotence = power_idempotence.max(inf_norm(&(&j_pow - j)));
        power_split = power_split.max(inf_norm(&(&l1_pow - (&l_pow - j))));
        innovation_power =
            innovation_power.max(inf_norm(&(&l_minus_i * &l_pow - &l_minus_i * &l1_pow)));
    }

    let spectral_radius = (dense_spectral_radius(&l1) - spectral.lambda2_mag).abs();

    let limit_power = if spectral.lambda2_mag <= 1e-12 {
        64
    } else {
        let m = (-20.0 * std::f64::consts::LN_10 / spectral.lambda2_mag.ln()).ceil();
        (m as u64).clamp(64, 1 << 40)
    };
    let limit = inf_norm(&(matrix_power(l, limit_power) - j));

    ProjectorReport {
        idempotence,
        power_idempotence,
        annihilation,
        fixed_projector,
        power_split,
        innovation_power,
        spectral_radius,
        limit,
        limit_power,
    }
}

/// `m^p` by binary powering.
pub fn matrix_power(m: &DMatrix<f64>, mut p: u64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut base = m.clone();
    while p > 0 {
        if p & 1 == 1 {
            result = &result * &base;
        }
        p >>= 1;
        if p > 0 {
            base = &base * &base;
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: f64, b: f64) -> ConsensusNetwork {
        ConsensusNetwork::from_one_based(2, &[(2, 1, a), (1, 2, b)]).unwrap()
    }

    #[test]
    fn two_agent_symmetric_matrix() {
        let net = pair(0.5, 0.5);
        let l = net.matrix();
        for v in l.iter() {
            assert_eq!(*v, 0.5);
        }
    }

    #[test]
    fn two_agent_row_sums() {
        // kappa_12 = 0.6 is agent 1's gain on agent 2, carried by edge 2 -> 1.
        let net = pair(0.6, 0.7);
        let l = net.matrix();
        assert!((l[(0, 0)] - 0.4).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.6);
        assert_eq!(l[(1, 0)], 0.7);
        assert!((l[(1, 1)] - 0.3).abs() < 1e-15);
        for i in 0..2 {
            assert!((l.row(i).sum() - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn unreachable_agent_is_rejected() {
        let err = ConsensusNetwork::from_one_based(3, &[(1, 2, 0.5), (2, 1, 0.5)]).unwrap_err();
        assert!(matches!(err, Error::NotStronglyConnected));
    }

    #[test]
    fn weight_errors() {
        let neg = ConsensusNetwork::from_one_based(2, &[(2, 1, -0.1), (1, 2, 0.5)]).unwrap_err();
        assert!(matches!(neg, Error::NegativeWeight { .. }));
        let over = ConsensusNetwork::from_one_based(3, &[(2, 1, 0.6), (3, 1, 0.6), (1, 2, 0.5), (2, 3, 0.5)])
            .unwrap_err();
        assert!(matches!(over, Error::RowSumExceeded { agent: 1, .. }));
        let range = ConsensusNetwork::from_one_based(2, &[(3, 1, 0.1)]).unwrap_err();
        assert!(matches!(range, Error::AgentOutOfRange { .. }));
        assert!(matches!(
            ConsensusNetwork::new(1, vec![]).unwrap_err(),
            Error::TooFewAgents(1)
        ));
    }

    #[test]
    fn ring_connectivity() {
        assert!(ConsensusNetwork::ring_lattice(25, 2, RingWeights::Uniform(0.5)).is_ok());
        assert!(matches!(
            ConsensusNetwork::ring_lattice(4, 2, RingWeights::Uniform(0.5)).unwrap_err(),
            Error::NotStronglyConnected
        ));
    }

    #[test]
    fn ring_rows_mix_self_and_predecessor() {
        let net = ConsensusNetwork::ring_lattice(3, 1, RingWeights::Uniform(0.5)).unwrap();
        let l = net.matrix();
        for i in 0..3 {
            let pred = (i + 2) % 3;
            assert_eq!(l[(i, i)], 0.5);
            assert_eq!(l[(i, pred)], 0.5);
            assert_eq!(l[(i, (i + 1) % 3)], 0.0);
        }
    }

    #[test]
    fn ring_random_weights_respect_budget() {
        let net = ConsensusNetwork::ring_lattice(25, 2, RingWeights::Random(9)).unwrap();
        for i in 0..25 {
            let (_, w) = net.incoming(i)[0];
            assert!(w > 0.2 && w < 1.0);
        }
    }

    #[test]
    fn strong_connectivity_examples() {
        let single = [Edge {
            source: 0,
            target: 1,
            weight: 0.5,
        }];
        assert!(!is_strongly_connected(2, &single));
        assert!(pair(0.5, 0.5).is_strongly_connected());
        let ring = ConsensusNetwork::ring_lattice(25, 2, RingWeights::Uniform(0.5)).unwrap();
        assert!(ring.is_strongly_connected());
    }

    #[test]
    fn two_agent_spectrum() {
        let net = pair(0.5, 0.5);
        let s = spectral_analysis(&net, SpectralOptions::default()).unwrap();
        assert!((s.w_left[0] - 0.5).abs() < 1e-12);
        assert!((s.w_left[1] - 0.5).abs() < 1e-12);
        assert!(s.lambda2_mag.abs() < 1e-12);
    }

    #[test]
    fn two_agent_asymmetric_spectrum() {
        // L = [0.4 0.6; 0.7 0.3]: eigenvalues 1 and -0.3, w = (7, 6) / 13.
        let net = pair(0.6, 0.7);
        let s = spectral_analysis(&net, SpectralOptions::default()).unwrap();
        assert!((s.w_left[0] - 7.0 / 13.0).abs() < 1e-10);
        assert!((s.lambda2_mag - 0.3).abs() < 1e-9);
    }

    #[test]
    fn uniform_ring_spectrum_matches_closed_form() {
        // L = (I + P) / 2 with P a 25-cycle: |lambda_2| = cos(pi / 25).
        let net = ConsensusNetwork::ring_lattice(25, 2, RingWeights::Uniform(0.5)).unwrap();
        let s = spectral_analysis(&net, SpectralOptions::default()).unwrap();
        let expected = (std::f64::consts::PI / 25.0).cos();
        assert!((s.lambda2_mag - expected).abs() < 1e-8, "{}", s.lambda2_mag);
        assert!((s.lambda2_mag - 0.992).abs() < 5e-4);
        for w in s.w_left.iter() {
            assert!((w - 0.04).abs() < 1e-9);
        }
    }

    #[test]
    fn doubly_stochastic_gives_uniform_left_vector() {
        let net = ConsensusNetwork::from_one_based(
            3,
            &[(2, 1, 0.3), (3, 1, 0.2), (1, 2, 0.3), (3, 2, 0.4), (1, 3, 0.2), (2, 3, 0.4)],
        )
        .unwrap();
        assert!(net.is_doubly_stochastic(1e-14));
        let s = spectral_analysis(&net, SpectralOptions::default()).unwrap();
        for w in s.w_left.iter() {
            assert!((w - 1.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn random_networks_match_dense_oracle() {
        for seed in 0..30 {
            let n = 2 + (seed as usize * 7) % 20;
            let net = ConsensusNetwork::random(n, 0.15, seed).unwrap();
            let s = spectral_analysis(&net, SpectralOptions::default()).unwrap();
            let wl = s.w_left.transpose() * net.matrix() - s.w_left.transpose();
            assert!(wl.amax() <= 1e-9);
            assert!((s.w_left.sum() - 1.0).abs() <= 1e-12);
            let dense = dense_spectral_radius(&s.deflated(&net));
            assert!((dense - s.lambda2_mag).abs() <= 1e-8, "seed {seed}: {dense} vs {}", s.lambda2_mag);
        }
    }

    #[test]
    fn consensus_value_examples() {
        let s = spectral_analysis(&pair(0.5, 0.5), SpectralOptions::default()).unwrap();
        assert!((consensus_value(&s, &[0.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((consensus_value(&s, &[3.0, 3.0]).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(
            consensus_value(&s, &[1.0]).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));

        let mut manual = s.clone();
        manual.w_left = DVector::from_vec(vec![0.25, 0.75]);
        assert_eq!(consensus_value(&manual, &[4.0, 8.0]).unwrap(), 7.0);
    }

    #[test]
    fn projector_identities_two_agent() {
        let net = pair(0.5, 0.5);
        let s = spectral_analysis(&net, SpectralOptions::default()).unwrap();
        let r = verify_projector_identities(&net, &s, 10);
        assert!(r.max_residual() <= 1e-12, "{r:?}");
        assert!(r.power_idempotence <= 1e-15);
    }

    #[test]
    fn projector_identities_ring() {
        let net = ConsensusNetwork::ring_lattice(25, 2, RingWeights::Uniform(0.5)).unwrap();
        let s = spectral_analysis(&net, SpectralOptions::default()).unwrap();
        let r = verify_projector_identities(&net, &s, 50);
        assert!(r.max_residual() <= 1e-8, "{r:?}");
    }

    #[test]
    fn periodic_network_is_not_contractive() {
        // Pure 3-cycle with unit gains has all eigenvalues on the unit circle.
        let net = ConsensusNetwork::ring_lattice(3, 1, RingWeights::Uniform(1.0)).unwrap();
        let err = spectral_analysis(&net, SpectralOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Lambda2NotContractive(_)));
    }

    #[test]
    fn iteration_cap_reports_no_convergence() {
        let net = ConsensusNetwork::ring_lattice(25, 2, RingWeights::Random(3)).unwrap();
        let err = spectral_analysis(
            &net,
            SpectralOptions {
                tol: 1e-10,
                max_iters: 5,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 5, .. }));
    }
}
