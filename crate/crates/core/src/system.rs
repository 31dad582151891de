//! Networked discrete-time LTI plants.
//!
//! `N` nodes each carry a state `x_i` in `R^n` and an input `u_i` in `R^m`.
//! The stacked state `x = [x_0; x_1; ...]` (node-major) evolves as
//! `x(t+1) = A x(t) + B u(t) + w(t)`, where the `n x n` block `A[i, j]`
//! (and the `n x m` block `B[i, j]`) is nonzero only when node `i` couples
//! to node `j`, i.e. `j` is an in-neighbor of `i` or `j == i`.

use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::linalg::{numerical_rank, spectral_norm, spectral_radius, symmetrize};
use crate::seed::{SeedSplitter, Stream};
use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// A generated networked plant, tied to its coupling topology.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkedSystem {
    topology: Topology,
    state_dim: usize,
    input_dim: usize,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    noise_std: f64,
}

impl NetworkedSystem {
    /// Assembles a system from stacked matrices, validating dimensions,
    /// finiteness, and block sparsity against the topology.
    pub fn from_parts(
        topology: Topology,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        state_dim: usize,
        input_dim: usize,
        noise_std: f64,
    ) -> Result<Self> {
        let nn = topology.n() * state_dim;
        let mn = topology.n() * input_dim;
        if state_dim == 0 || input_dim == 0 {
            return Err(Error::invalid("state_dim and input_dim must be positive"));
        }
        if a.nrows() != nn || a.ncols() != nn {
            return Err(Error::invalid(format!(
                "A must be {nn}x{nn}, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != nn || b.ncols() != mn {
            return Err(Error::invalid(format!(
                "B must be {nn}x{mn}, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be finite and >= 0"));
        }
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("system matrices must be finite"));
        }
        let sys = NetworkedSystem {
            topology,
            state_dim,
            input_dim,
            a,
            b,
            noise_std,
        };
        if !sys.matches_sparsity() {
            return Err(Error::invalid(
                "system matrices have nonzero blocks off the topology",
            ));
        }
        Ok(sys)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn n_nodes(&self) -> usize {
        self.topology.n()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Copy of this system with a different noise level (used to evaluate
    /// noise-free variants of a generated plant).
    pub fn with_noise_std(&self, noise_std: f64) -> Result<Self> {
        Self::from_parts(
            self.topology.clone(),
            self.a.clone(),
            self.b.clone(),
            self.state_dim,
            self.input_dim,
            noise_std,
        )
    }

    /// The `n x n` coupling block from node `j` into node `i`.
    pub fn a_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let n = self.state_dim;
        self.a.view((i * n, j * n), (n, n)).into()
    }

    /// The `n x m` input block from node `j` into node `i`.
    pub fn b_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let (n, m) = (self.state_dim, self.input_dim);
        self.b.view((i * n, j * m), (n, m)).into()
    }

    fn matches_sparsity(&self) -> bool {
        let nn = self.topology.n();
        for i in 0..nn {
            for j in 0..nn {
                if i == j || self.topology.has_edge(j, i) {
                    continue;
                }
                if self.a_block(i, j).iter().any(|v| *v != 0.0) {
                    return false;
                }
                if self.b_block(i, j).iter().any(|v| *v != 0.0) {
                    return false;
                }
            }
        }
        true
    }

    /// One noise-free plant step.
    pub fn step_deterministic(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    /// One plant step with additive `N(0, noise_std^2 I)` noise drawn from
    /// `rng` in stacked (node-major) order.
    pub fn step<R: Rng>(&self, x: &DVector<f64>, u: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let mut next = self.step_deterministic(x, u);
        if self.noise_std > 0.0 {
            for v in next.iter_mut() {
                let w: f64 = StandardNormal.sample(rng);
                *v += self.noise_std * w;
            }
        }
        next
    }

    /// Rank of the Krylov controllability matrix `[B, AB, ..., A^{nN-1} B]`
    /// (relative SVD tolerance 1e-9). Beware: numerically meaningless for
    /// large `nN`; `is_controllable` switches to an eigenvector test there.
    pub fn controllability_rank(&self) -> usize {
        let nn = self.a.nrows();
        let mn = self.b.ncols();
        let mut krylov = DMatrix::zeros(nn, nn * mn);
        let mut akb = self.b.clone();
        for k in 0..nn {
            krylov.view_mut((0, k * mn), (nn, mn)).copy_from(&akb);
            if k + 1 < nn {
                akb = &self.a * akb;
            }
        }
        numerical_rank(&krylov, 1e-9)
    }

    /// Controllability check. Up to `nN = 50` this is the Krylov rank; above
    /// that the powers `A^k B` under/overflow, so the
    /// Popov–Belevitch–Hautus test is applied at every eigenvalue instead.
    pub fn is_controllable(&self) -> bool {
        let nn = self.a.nrows();
        if nn <= 50 {
            return self.controllability_rank() == nn;
        }
        let eigs = self.a.complex_eigenvalues();
        let mn = self.b.ncols();
        for lambda in eigs.iter() {
            let mut pencil = DMatrix::<Complex<f64>>::zeros(nn, nn + mn);
            for r in 0..nn {
                for c in 0..nn {
                    pencil[(r, c)] = Complex::new(self.a[(r, c)], 0.0);
                }
                pencil[(r, r)] -= lambda;
                for c in 0..mn {
                    pencil[(r, nn + c)] = Complex::new(self.b[(r, c)], 0.0);
                }
            }
            let sv = pencil.svd(false, false).singular_values;
            let smax = sv.iter().copied().fold(0.0, f64::max);
            let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
            if smax == 0.0 || smin <= 1e-9 * smax {
                return false;
            }
        }
        true
    }

    pub fn to_json(&self) -> String {
        let doc = SystemJson {
            n_nodes: self.topology.n(),
            state_dim: self.state_dim,
            input_dim: self.input_dim,
            noise_std: self.noise_std,
            a: self.a.transpose().as_slice().to_vec(), // row-major
            b: self.b.transpose().as_slice().to_vec(),
        };
        serde_json::to_string_pretty(&doc).expect("system serialization cannot fail")
    }

    /// Rebuilds a system from its JSON document plus the topology it was
    /// generated on (stored separately).
    pub fn from_json(text: &str, topology: Topology) -> Result<Self> {
        let doc: SystemJson = serde_json::from_str(text)?;
        if doc.n_nodes != topology.n() {
            return Err(Error::invalid(format!(
                "system document has {} nodes but topology has {}",
                doc.n_nodes,
                topology.n()
            )));
        }
        let nn = doc.n_nodes * doc.state_dim;
        let mn = doc.n_nodes * doc.input_dim;
        if doc.a.len() != nn * nn || doc.b.len() != nn * mn {
            return Err(Error::invalid("system document matrix sizes are wrong"));
        }
        let a = DMatrix::from_row_slice(nn, nn, &doc.a);
        let b = DMatrix::from_row_slice(nn, mn, &doc.b);
        Self::from_parts(topology, a, b, doc.state_dim, doc.input_dim, doc.noise_std)
    }
}

#[derive(Serialize, Deserialize)]
struct SystemJson {
    n_nodes: usize,
    state_dim: usize,
    input_dim: usize,
    noise_std: f64,
    /// Row-major stacked coupling matrix.
    a: Vec<f64>,
    /// Row-major stacked input matrix.
    b: Vec<f64>,
}

/// Samples a controllable system on `topology`: coupled blocks get standard
/// normal entries, then `A` is scaled to spectral norm `scale` and `B` to
/// spectral norm 1. Redraws (bounded) until the result is controllable.
pub fn generate_system(
    topology: &Topology,
    state_dim: usize,
    input_dim: usize,
    scale: f64,
    noise_std: f64,
    seed: u64,
) -> Result<NetworkedSystem> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid("scale must be finite and > 0"));
    }
    let splitter = SeedSplitter::new(seed);
    const MAX_ATTEMPTS: u64 = 16;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = splitter.rng(Stream::System, &[attempt]);
        let nn = topology.n() * state_dim;
        let mn = topology.n() * input_dim;
        let mut a = DMatrix::zeros(nn, nn);
        let mut b = DMatrix::zeros(nn, mn);
        for i in 0..topology.n() {
            let mut coupled: Vec<usize> = topology.in_neighbors(i).to_vec();
            coupled.push(i);
            coupled.sort_unstable();
            for j in coupled {
                for r in 0..state_dim {
                    for c in 0..state_dim {
                        a[(i * state_dim + r, j * state_dim + c)] =
                            StandardNormal.sample(&mut rng);
                    }
                }
                for r in 0..state_dim {
                    for c in 0..input_dim {
                        b[(i * state_dim + r, j * input_dim + c)] =
                            StandardNormal.sample(&mut rng);
                    }
                }
            }
        }
        let na = spectral_norm(&a);
        let nb = spectral_norm(&b);
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        a *= scale / na;
        b /= nb;
        let sys = NetworkedSystem::from_parts(
            topology.clone(),
            a,
            b,
            state_dim,
            input_dim,
            noise_std,
        )?;
        if sys.is_controllable() {
            return Ok(sys);
        }
    }
    Err(Error::numerical(format!(
        "no controllable system found on this topology after {MAX_ATTEMPTS} draws"
    )))
}

/// Infinite-horizon discrete LQR solution for the stacked system.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    /// Fixed point of the Riccati recursion.
    pub p_inf: DMatrix<f64>,
    /// Optimal feedback gain; the control law is `u = -K x`.
    pub k: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Iterates the Riccati recursion
/// `P <- Q + A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A`
/// from `P = p_terminal` to its fixed point (max-abs tolerance 1e-10,
/// capped at 1e5 sweeps), then forms `K = (R + B^T P B)^{-1} B^T P A`.
pub fn solve_lqr(
    system: &NetworkedSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_terminal: &DMatrix<f64>,
) -> Result<LqrSolution> {
    let a = &system.a;
    let b = &system.b;
    let nn = a.nrows();
    let mn = b.ncols();
    if q.nrows() != nn || q.ncols() != nn || p_terminal.nrows() != nn || p_terminal.ncols() != nn {
        return Err(Error::invalid("lqr: Q and P_T must match the stacked state dim"));
    }
    if r.nrows() != mn || r.ncols() != mn {
        return Err(Error::invalid("lqr: R must match the stacked input dim"));
    }
    let mut p = symmetrize(p_terminal);
    let mut converged = false;
    for _ in 0..100_000 {
        let btp = b.transpose() * &p;
        let gram = r + &btp * b;
        let gram_inv = gram.clone().try_inverse().ok_or_else(|| {
            Error::numerical("lqr: R + B^T P B became singular during iteration")
        })?;
        let pa = &p * a;
        let next = q + a.transpose() * &pa - pa.transpose() * b * gram_inv * &btp * a;
        let next = symmetrize(&next);
        let delta = (&next - &p).iter().map(|v| v.abs()).fold(0.0, f64::max);
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("lqr: Riccati iteration diverged"));
        }
        if delta < 1e-10 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numerical(
            "lqr: Riccati iteration did not reach its fixed point within 1e5 sweeps",
        ));
    }
    let gram = r + b.transpose() * &p * b;
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::numerical("lqr: R + B^T P B singular at the fixed point"))?;
    let k = gram_inv * b.transpose() * &p * a;

    // The fixed point must actually solve the Riccati equation ...
    let btp = b.transpose() * &p;
    let gram2 = r + &btp * b;
    let gram2_inv = gram2
        .try_inverse()
        .expect("inverse existed a moment ago");
    let resid = q + a.transpose() * &p * a
        - a.transpose() * &p * b * gram2_inv * &btp * a
        - &p;
    if spectral_norm(&resid) > 1e-8 {
        return Err(Error::numerical(format!(
            "lqr: Riccati residual {:.3e} exceeds 1e-8",
            spectral_norm(&resid)
        )));
    }
    // ... and the closed loop must be Schur stable.
    let acl = a - b * &k;
    let rho = spectral_radius(&acl);
    if rho >= 1.0 {
        return Err(Error::numerical(format!(
            "lqr: closed loop not Schur stable (spectral radius {rho:.6})"
        )));
    }
    Ok(LqrSolution {
        p_inf: p,
        k,
        q: q.clone(),
        r: r.clone(),
    })
}

/// A recorded closed-loop run: `T+1` stacked states and `T` stacked controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n_nodes: usize,
    state_dim: usize,
    input_dim: usize,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(n_nodes: usize, state_dim: usize, input_dim: usize) -> Self {
        Trajectory {
            n_nodes,
            state_dim,
            input_dim,
            states: Vec::new(),
            controls: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// State of node `i` at time `t`.
    pub fn node_state(&self, t: usize, i: usize) -> DVector<f64> {
        self.states[t].rows(i * self.state_dim, self.state_dim).into()
    }

    /// Control of node `i` at time `t`.
    pub fn node_control(&self, t: usize, i: usize) -> DVector<f64> {
        self.controls[t].rows(i * self.input_dim, self.input_dim).into()
    }

    /// Writes `t,node,x0..,u0..` rows; the final state snapshot has empty
    /// control fields (there is no control at the horizon).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut header = String::from("t,node");
        for d in 0..self.state_dim {
            header.push_str(&format!(",x{d}"));
        }
        for d in 0..self.input_dim {
            header.push_str(&format!(",u{d}"));
        }
        writeln!(out, "{header}")?;
        for t in 0..self.states.len() {
            for i in 0..self.n_nodes {
                let mut row = format!("{t},{i}");
                let xs = self.node_state(t, i);
                for d in 0..self.state_dim {
                    row.push_str(&format!(",{}", fmt_f64(xs[d])));
                }
                if t < self.controls.len() {
                    let us = self.node_control(t, i);
                    for d in 0..self.input_dim {
                        row.push_str(&format!(",{}", fmt_f64(us[d])));
                    }
                } else {
                    for _ in 0..self.input_dim {
                        row.push(',');
                    }
                }
                writeln!(out, "{row}")?;
            }
        }
        Ok(())
    }
}

/// 17 significant digits — enough to round-trip an f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Runs the closed loop for `t_steps` steps from `x0`. Noise is drawn from
/// `rng` when the system has `noise_std > 0`; pass a fixed-seed stream for
/// reproducible runs.
pub fn rollout<R: Rng>(
    system: &NetworkedSystem,
    controller: &mut dyn Controller,
    x0: DVector<f64>,
    t_steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let nn = system.a.nrows();
    if x0.len() != nn {
        return Err(Error::invalid(format!(
            "rollout: x0 has length {}, expected {nn}",
            x0.len()
        )));
    }
    let mut traj = Trajectory::new(system.n_nodes(), system.state_dim, system.input_dim);
    controller.reset();
    let mut x = x0;
    for _ in 0..t_steps {
        let u = controller.control(&x)?;
        if u.len() != system.b.ncols() {
            return Err(Error::invalid(format!(
                "controller produced control of length {}, expected {}",
                u.len(),
                system.b.ncols()
            )));
        }
        let next = system.step(&x, &u, rng);
        traj.states.push(x);
        traj.controls.push(u);
        x = next;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("rollout diverged to non-finite state"));
        }
    }
    traj.states.push(x);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{LqrController, ZeroController};
    use crate::graph::generate_random_partition_graph;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn small_system(seed: u64) -> NetworkedSystem {
        let topo = generate_random_partition_graph(2, 1, 1.0, 0.0, seed).unwrap();
        generate_system(&topo, 2, 1, 0.9, 0.0, seed).unwrap()
    }

    #[test]
    fn scalar_single_node_generation() {
        let topo = Topology::from_edges(1, []).unwrap();
        let sys = generate_system(&topo, 1, 1, 0.995, 0.0, 3).unwrap();
        // Normalizing a scalar leaves only its sign.
        assert_relative_eq!(sys.a()[(0, 0)].abs(), 0.995, epsilon = 1e-12);
        assert_relative_eq!(sys.b()[(0, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_eq!(sys.controllability_rank(), 1);
    }

    #[test]
    fn generated_norms_and_sparsity() {
        let topo = generate_random_partition_graph(6, 2, 0.7, 0.1, 17).unwrap();
        let sys = generate_system(&topo, 2, 2, 0.995, 0.1, 17).unwrap();
        assert_relative_eq!(spectral_norm(sys.a()), 0.995, epsilon = 1e-9);
        assert_relative_eq!(spectral_norm(sys.b()), 1.0, epsilon = 1e-9);
        assert!(sys.is_controllable());
        // Off-topology blocks are exactly zero.
        for i in 0..6 {
            for j in 0..6 {
                if i != j && !topo.has_edge(j, i) {
                    assert!(sys.a_block(i, j).iter().all(|v| *v == 0.0));
                    assert!(sys.b_block(i, j).iter().all(|v| *v == 0.0));
                }
            }
        }
    }

    #[test]
    fn disconnected_pair_gives_block_diagonal() {
        let topo = Topology::from_edges(2, []).unwrap();
        let sys = generate_system(&topo, 2, 1, 0.9, 0.0, 5).unwrap();
        assert!(sys.a_block(0, 1).iter().all(|v| *v == 0.0));
        assert!(sys.a_block(1, 0).iter().all(|v| *v == 0.0));
        assert!(sys.b_block(0, 1).iter().all(|v| *v == 0.0));
        assert!(sys.b_block(1, 0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn from_parts_rejects_off_topology_blocks() {
        let topo = Topology::from_edges(2, []).unwrap();
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = 0.3; // coupling without an edge
        let b = DMatrix::identity(2, 2);
        assert!(NetworkedSystem::from_parts(topo, a, b, 1, 1, 0.0).is_err());
    }

    #[test]
    fn deterministic_step_matches_matrices() {
        let sys = small_system(7);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.25]);
        let u = DVector::from_vec(vec![0.1, -0.3]);
        let next = sys.step_deterministic(&x, &u);
        let expect = sys.a() * &x + sys.b() * &u;
        assert_eq!(next, expect);
    }

    #[test]
    fn noise_statistics_match_declared_std() {
        let topo = Topology::from_edges(1, []).unwrap();
        let sys = generate_system(&topo, 1, 1, 0.5, 0.2, 1).unwrap();
        let x = DVector::zeros(1);
        let u = DVector::zeros(1);
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let k = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..k {
            let v = sys.step(&x, &u, &mut rng)[0];
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / k as f64;
        let std = (sumsq / k as f64 - mean * mean).sqrt();
        // 3-sigma band for the sample mean of k draws.
        assert!(mean.abs() < 3.0 * 0.2 / (k as f64).sqrt(), "mean {mean}");
        assert!((std - 0.2).abs() < 0.005, "std {std}");
    }

    #[test]
    fn zero_noise_step_is_deterministic() {
        let sys = small_system(11);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let u = DVector::from_vec(vec![0.5, -0.5]);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert_eq!(sys.step(&x, &u, &mut rng), sys.step_deterministic(&x, &u));
    }

    #[test]
    fn scalar_riccati_matches_quadratic_root() {
        // a = 0.5, b = 1, q = r = 1: the fixed point solves
        // p^2 - 0.25 p - 1 = 0, so p = (0.25 + sqrt(4.0625)) / 2 and
        // k = 0.5 p / (1 + p).
        let topo = Topology::from_edges(1, []).unwrap();
        let a = DMatrix::from_element(1, 1, 0.5);
        let b = DMatrix::from_element(1, 1, 1.0);
        let sys = NetworkedSystem::from_parts(topo, a, b, 1, 1, 0.0).unwrap();
        let i1 = DMatrix::identity(1, 1);
        let sol = solve_lqr(&sys, &i1, &i1, &i1).unwrap();
        let p_expected = (0.25 + 4.0625f64.sqrt()) / 2.0; // 1.1327822185373186
        let k_expected = 0.5 * p_expected / (1.0 + p_expected); // 0.26556383...
        assert_relative_eq!(sol.p_inf[(0, 0)], p_expected, epsilon = 1e-9);
        assert_relative_eq!(sol.k[(0, 0)], k_expected, epsilon = 1e-9);
    }

    #[test]
    fn lqr_cost_identity_on_noise_free_rollout() {
        // With u = -Kx and no noise, sum of stage costs over a long horizon
        // equals x0' P_inf x0 (the tail is negligible once the state decays).
        let sys = small_system(23);
        let nn = sys.a().nrows();
        let q = DMatrix::identity(nn, nn);
        let r = DMatrix::identity(sys.b().ncols(), sys.b().ncols());
        let sol = solve_lqr(&sys, &q, &r, &q).unwrap();
        let mut ctrl = LqrController::new(sol.k.clone());
        let x0 = DVector::from_fn(nn, |i, _| 1.0 - 0.3 * i as f64);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let traj = rollout(&sys, &mut ctrl, x0.clone(), 500, &mut rng).unwrap();
        let mut cost = 0.0;
        for t in 0..traj.len() {
            cost += (traj.states[t].transpose() * &q * &traj.states[t])[(0, 0)];
            cost += (traj.controls[t].transpose() * &r * &traj.controls[t])[(0, 0)];
        }
        let predicted = (x0.transpose() * &sol.p_inf * x0)[(0, 0)];
        assert_relative_eq!(cost, predicted, max_relative = 1e-6);
    }

    #[test]
    fn lqr_rejects_mismatched_weights() {
        let sys = small_system(31);
        let bad = DMatrix::identity(3, 3);
        let nn = sys.a().nrows();
        let q = DMatrix::identity(nn, nn);
        assert!(solve_lqr(&sys, &bad, &q, &q).is_err());
    }

    #[test]
    fn rollout_records_consistent_shapes() {
        let sys = small_system(41);
        let mut ctrl = ZeroController::new(sys.b().ncols());
        let x0 = DVector::from_element(sys.a().nrows(), 1.0);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let traj = rollout(&sys, &mut ctrl, x0, 25, &mut rng).unwrap();
        assert_eq!(traj.states.len(), 26);
        assert_eq!(traj.controls.len(), 25);
        assert!(traj.controls.iter().all(|u| u.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn per_node_restacking_matches_stacked_state() {
        let sys = small_system(43);
        let mut ctrl = ZeroController::new(sys.b().ncols());
        let x0 = DVector::from_fn(sys.a().nrows(), |i, _| i as f64 + 0.5);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let traj = rollout(&sys, &mut ctrl, x0, 5, &mut rng).unwrap();
        for t in 0..=traj.len() {
            let mut restacked = Vec::new();
            for i in 0..traj.n_nodes() {
                restacked.extend(traj.node_state(t, i).iter().copied());
            }
            assert_eq!(DVector::from_vec(restacked), traj.states[t]);
        }
    }

    #[test]
    fn json_round_trip_preserves_system() {
        let sys = small_system(53);
        let text = sys.to_json();
        let back = NetworkedSystem::from_json(&text, sys.topology().clone()).unwrap();
        assert_eq!(sys, back);
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn trajectory_csv_has_expected_shape() {
        let sys = small_system(61);
        let mut ctrl = ZeroController::new(sys.b().ncols());
        let x0 = DVector::from_element(sys.a().nrows(), 1.0);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let traj = rollout(&sys, &mut ctrl, x0, 3, &mut rng).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,node,x0,x1,u0");
        // (3+1) time points x 2 nodes + header.
        assert_eq!(lines.len(), 1 + 4 * 2);
        // Final snapshot rows end with an empty control field.
        assert!(lines.last().unwrap().ends_with(','));
    }
}
