//! The graph-recurrent controller.
//!
//! Each node `i` keeps a hidden row vector `z_i` in `R^p` and computes, per
//! step (row-vector convention):
//!
//! ```text
//! h_i = z_i(t-1) Θ1_i + x_i Θ2_i + (Σ_{j in N_i ∪ {i}} S_ij x_j) Θ3_i
//! z_i = σ(h_i)
//! u_i = z_i Θ4_i
//! ```
//!
//! Only own state, own memory, and shift-weighted neighbor states enter —
//! the map is local by construction. The same map has a stacked (column)
//! form `h = K1 z(t-1) + (K2 + K3 (S ⊗ I_n)) x`, `u = K4 z`, where each `K`
//! is block-diagonal in the transposed per-node weights; the stability layer
//! works on that representation.

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg::kron;
use nalgebra::{DMatrix, RowDVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Weights of one node's controller.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeWeights {
    /// `p x p`: memory-to-hidden.
    pub theta1: DMatrix<f64>,
    /// `n x p`: own-state-to-hidden.
    pub theta2: DMatrix<f64>,
    /// `n x p`: aggregated-neighborhood-to-hidden.
    pub theta3: DMatrix<f64>,
    /// `p x m`: hidden-to-control readout.
    pub theta4: DMatrix<f64>,
}

impl NodeWeights {
    pub fn zeros(state_dim: usize, hidden_dim: usize, input_dim: usize) -> Self {
        NodeWeights {
            theta1: DMatrix::zeros(hidden_dim, hidden_dim),
            theta2: DMatrix::zeros(state_dim, hidden_dim),
            theta3: DMatrix::zeros(state_dim, hidden_dim),
            theta4: DMatrix::zeros(hidden_dim, input_dim),
        }
    }

    /// Entries i.i.d. uniform on [0, 1), drawn in slot order
    /// theta1, theta2, theta3, theta4, each row-major. The draw order is a
    /// compatibility contract between the two execution engines.
    pub fn random_uniform<R: Rng>(
        state_dim: usize,
        hidden_dim: usize,
        input_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut fill = |rows: usize, cols: usize| {
            let mut m = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    m[(r, c)] = rng.gen::<f64>();
                }
            }
            m
        };
        NodeWeights {
            theta1: fill(hidden_dim, hidden_dim),
            theta2: fill(state_dim, hidden_dim),
            theta3: fill(state_dim, hidden_dim),
            theta4: fill(hidden_dim, input_dim),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.theta1.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.theta2.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.theta4.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.theta1.nrows();
        let n = self.theta2.nrows();
        if self.theta1.ncols() != p {
            return Err(Error::invalid("theta1 must be square (p x p)"));
        }
        if self.theta2.ncols() != p || self.theta3.nrows() != n || self.theta3.ncols() != p {
            return Err(Error::invalid("theta2/theta3 must be n x p"));
        }
        if self.theta4.nrows() != p {
            return Err(Error::invalid("theta4 must be p x m"));
        }
        let all_finite = self
            .theta1
            .iter()
            .chain(self.theta2.iter())
            .chain(self.theta3.iter())
            .chain(self.theta4.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("weights must be finite"));
        }
        Ok(())
    }

    /// Elementwise linear combination `self + alpha * other` (used by the
    /// optimizer and consensus mixing).
    pub fn axpy(&mut self, alpha: f64, other: &NodeWeights) {
        self.theta1 += alpha * &other.theta1;
        self.theta2 += alpha * &other.theta2;
        self.theta3 += alpha * &other.theta3;
        self.theta4 += alpha * &other.theta4;
    }

    pub fn scale(&mut self, alpha: f64) {
        self.theta1 *= alpha;
        self.theta2 *= alpha;
        self.theta3 *= alpha;
        self.theta4 *= alpha;
    }

    /// Largest absolute entry across all four slots.
    pub fn max_abs(&self) -> f64 {
        self.theta1
            .iter()
            .chain(self.theta2.iter())
            .chain(self.theta3.iter())
            .chain(self.theta4.iter())
            .map(|v| v.abs())
            .fold(0.0, f64::max)
    }
}

/// One incoming row for the neighborhood aggregation of `local_forward`:
/// sender, its shift coefficient `S_ij`, and its state row.
#[derive(Debug, Clone)]
pub struct NeighborRow {
    pub node: usize,
    pub coeff: f64,
    pub state: RowDVector<f64>,
}

/// Result of one local controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStep {
    /// Pre-activation `1 x p`.
    pub h: RowDVector<f64>,
    /// Hidden state `1 x p`.
    pub z: RowDVector<f64>,
    /// Control `1 x m`.
    pub u: RowDVector<f64>,
    /// The aggregated neighborhood row `Σ_j S_ij x_j` (`1 x n`); the
    /// gradient of the Θ3 slot needs it.
    pub aggregated: RowDVector<f64>,
}

/// One control step of node `node`, given exactly the rows its neighborhood
/// (`expected`, sorted, self included) is allowed to provide. A missing or
/// extra row is a locality violation: the caller either failed to deliver a
/// neighbor's state or smuggled in a non-neighbor's.
pub fn local_forward(
    node: usize,
    weights: &NodeWeights,
    z_prev: &RowDVector<f64>,
    x_own: &RowDVector<f64>,
    neighbor_rows: &[NeighborRow],
    expected: &[usize],
    activation: &dyn Activation,
) -> Result<LocalStep> {
    let p = weights.hidden_dim();
    let n = weights.state_dim();
    if z_prev.len() != p {
        return Err(Error::invalid(format!(
            "z_prev has length {}, hidden dim is {p}",
            z_prev.len()
        )));
    }
    if x_own.len() != n {
        return Err(Error::invalid(format!(
            "x_own has length {}, state dim is {n}",
            x_own.len()
        )));
    }
    for row in neighbor_rows {
        if !expected.contains(&row.node) {
            return Err(Error::LocalityViolation {
                reader: node,
                target: row.node,
                phase: "local_forward (extra row)".into(),
            });
        }
        if row.state.len() != n {
            return Err(Error::invalid(format!(
                "state row from node {} has length {}, expected {n}",
                row.node,
                row.state.len()
            )));
        }
    }
    // Aggregate in ascending sender order so the summation order matches the
    // stacked matrix product exactly.
    let mut s = RowDVector::zeros(n);
    for &j in expected {
        let row = neighbor_rows
            .iter()
            .find(|r| r.node == j)
            .ok_or(Error::LocalityViolation {
                reader: node,
                target: j,
                phase: "local_forward (missing row)".into(),
            })?;
        s += row.coeff * &row.state;
    }
    let h = z_prev * &weights.theta1 + x_own * &weights.theta2 + &s * &weights.theta3;
    let z = RowDVector::from_iterator(p, h.iter().map(|&v| activation.value(v)));
    let u = &z * &weights.theta4;
    Ok(LocalStep {
        h,
        z,
        u,
        aggregated: s,
    })
}

/// The shared-weight reference form: all nodes use the same `weights`, and
/// the whole network advances as matrices: `H = Z_prev Θ1 + X Θ2 + S X Θ3`,
/// `Z = σ(H)`, `U = Z Θ4` with one row per node.
pub fn centralized_forward(
    weights: &NodeWeights,
    z_prev: &DMatrix<f64>,
    x: &DMatrix<f64>,
    shift: &DMatrix<f64>,
    activation: &dyn Activation,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n_nodes = x.nrows();
    if z_prev.nrows() != n_nodes || shift.nrows() != n_nodes || shift.ncols() != n_nodes {
        return Err(Error::invalid(
            "centralized_forward: row counts must all equal the node count",
        ));
    }
    if z_prev.ncols() != weights.hidden_dim() || x.ncols() != weights.state_dim() {
        return Err(Error::invalid("centralized_forward: column dims do not match weights"));
    }
    let h = z_prev * &weights.theta1 + x * &weights.theta2 + shift * x * &weights.theta3;
    let z = h.map(|v| activation.value(v));
    let u = &z * &weights.theta4;
    Ok((h, z, u))
}

/// Stacked block-diagonal weight matrices for the column-vector form of the
/// controller.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBlocks {
    /// `pN x pN` — block-diagonal `Θ1_i^T`.
    pub k1: DMatrix<f64>,
    /// `pN x nN` — block-diagonal `Θ2_i^T`.
    pub k2: DMatrix<f64>,
    /// `pN x nN` — block-diagonal `Θ3_i^T`.
    pub k3: DMatrix<f64>,
    /// `mN x pN` — block-diagonal `Θ4_i^T`.
    pub k4: DMatrix<f64>,
}

impl WeightBlocks {
    /// `K2 + K3 (S ⊗ I_n)`: the total state-to-hidden map of the stacked
    /// closed loop.
    pub fn state_to_hidden(&self, shift: &DMatrix<f64>, state_dim: usize) -> DMatrix<f64> {
        &self.k2 + &self.k3 * kron(shift, &DMatrix::identity(state_dim, state_dim))
    }
}

/// Assembles the stacked blocks from per-node weights. All nodes must share
/// the same dimensions.
pub fn stacked_weight_blocks(weights: &[NodeWeights]) -> Result<WeightBlocks> {
    if weights.is_empty() {
        return Err(Error::invalid("no node weights given"));
    }
    let p = weights[0].hidden_dim();
    let n = weights[0].state_dim();
    let m = weights[0].input_dim();
    let nodes = weights.len();
    for (i, w) in weights.iter().enumerate() {
        w.validate()?;
        if w.hidden_dim() != p || w.state_dim() != n || w.input_dim() != m {
            return Err(Error::invalid(format!(
                "node {i} weights have inconsistent dimensions"
            )));
        }
    }
    let mut k1 = DMatrix::zeros(p * nodes, p * nodes);
    let mut k2 = DMatrix::zeros(p * nodes, n * nodes);
    let mut k3 = DMatrix::zeros(p * nodes, n * nodes);
    let mut k4 = DMatrix::zeros(m * nodes, p * nodes);
    for (i, w) in weights.iter().enumerate() {
        k1.view_mut((i * p, i * p), (p, p)).copy_from(&w.theta1.transpose());
        k2.view_mut((i * p, i * n), (p, n)).copy_from(&w.theta2.transpose());
        k3.view_mut((i * p, i * n), (p, n)).copy_from(&w.theta3.transpose());
        k4.view_mut((i * m, i * p), (m, p)).copy_from(&w.theta4.transpose());
    }
    Ok(WeightBlocks { k1, k2, k3, k4 })
}

/// Averages per-node weights into one shared set (slotwise mean).
pub fn approximate_shared_weights(weights: &[NodeWeights]) -> Result<NodeWeights> {
    if weights.is_empty() {
        return Err(Error::invalid("no node weights given"));
    }
    let mut mean = weights[0].clone();
    for w in &weights[1..] {
        if w.hidden_dim() != mean.hidden_dim()
            || w.state_dim() != mean.state_dim()
            || w.input_dim() != mean.input_dim()
        {
            return Err(Error::invalid("inconsistent weight dimensions"));
        }
        mean.axpy(1.0, w);
    }
    mean.scale(1.0 / weights.len() as f64);
    Ok(mean)
}

#[derive(Serialize, Deserialize)]
struct NodeWeightsJson {
    node: usize,
    state_dim: usize,
    hidden_dim: usize,
    input_dim: usize,
    theta1: Vec<f64>,
    theta2: Vec<f64>,
    theta3: Vec<f64>,
    theta4: Vec<f64>,
}

/// Serializes per-node weights (row-major slots, full precision).
pub fn weights_to_json(weights: &[NodeWeights]) -> String {
    let docs: Vec<NodeWeightsJson> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| NodeWeightsJson {
            node: i,
            state_dim: w.state_dim(),
            hidden_dim: w.hidden_dim(),
            input_dim: w.input_dim(),
            theta1: w.theta1.transpose().as_slice().to_vec(),
            theta2: w.theta2.transpose().as_slice().to_vec(),
            theta3: w.theta3.transpose().as_slice().to_vec(),
            theta4: w.theta4.transpose().as_slice().to_vec(),
        })
        .collect();
    serde_json::to_string_pretty(&docs).expect("weight serialization cannot fail")
}

pub fn weights_from_json(text: &str) -> Result<Vec<NodeWeights>> {
    let docs: Vec<NodeWeightsJson> = serde_json::from_str(text)?;
    let mut out = Vec::with_capacity(docs.len());
    for (i, d) in docs.into_iter().enumerate() {
        if d.node != i {
            return Err(Error::invalid(format!(
                "weights document out of order: entry {i} is labeled node {}",
                d.node
            )));
        }
        let (n, p, m) = (d.state_dim, d.hidden_dim, d.input_dim);
        if d.theta1.len() != p * p
            || d.theta2.len() != n * p
            || d.theta3.len() != n * p
            || d.theta4.len() != p * m
        {
            return Err(Error::invalid(format!("weights entry {i} has wrong slot sizes")));
        }
        let w = NodeWeights {
            theta1: DMatrix::from_row_slice(p, p, &d.theta1),
            theta2: DMatrix::from_row_slice(n, p, &d.theta2),
            theta3: DMatrix::from_row_slice(n, p, &d.theta3),
            theta4: DMatrix::from_row_slice(p, m, &d.theta4),
        };
        w.validate()?;
        out.push(w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::{parse_activation, Tanh};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn scalar_weights(t1: f64, t2: f64, t3: f64, t4: f64) -> NodeWeights {
        NodeWeights {
            theta1: DMatrix::from_element(1, 1, t1),
            theta2: DMatrix::from_element(1, 1, t2),
            theta3: DMatrix::from_element(1, 1, t3),
            theta4: DMatrix::from_element(1, 1, t4),
        }
    }

    #[test]
    fn passthrough_of_own_state() {
        // Θ2 = Θ4 = 1, everything else 0: u = tanh(x).
        let w = scalar_weights(0.0, 1.0, 0.0, 1.0);
        let out = local_forward(
            0,
            &w,
            &RowDVector::zeros(1),
            &RowDVector::from_element(1, 0.5),
            &[NeighborRow {
                node: 0,
                coeff: 0.0,
                state: RowDVector::from_element(1, 0.5),
            }],
            &[0],
            &Tanh,
        )
        .unwrap();
        assert_relative_eq!(out.u[0], 0.46211715726000974, epsilon = 1e-15);
    }

    #[test]
    fn neighbor_aggregation_via_theta3() {
        // Only the aggregation path: u = tanh(S_ij * x_j) = tanh(2).
        let w = scalar_weights(0.0, 0.0, 1.0, 1.0);
        let rows = vec![
            NeighborRow {
                node: 0,
                coeff: 0.0,
                state: RowDVector::from_element(1, 7.0), // own coeff 0: ignored
            },
            NeighborRow {
                node: 1,
                coeff: 1.0,
                state: RowDVector::from_element(1, 2.0),
            },
        ];
        let out = local_forward(
            0,
            &w,
            &RowDVector::zeros(1),
            &RowDVector::from_element(1, 7.0),
            &rows,
            &[0, 1],
            &Tanh,
        )
        .unwrap();
        assert_relative_eq!(out.u[0], 0.9640275800758169, epsilon = 1e-15);
    }

    #[test]
    fn zero_input_zero_memory_gives_zero_output() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let w = NodeWeights::random_uniform(3, 2, 2, &mut rng);
        let rows = vec![NeighborRow {
            node: 0,
            coeff: 0.3,
            state: RowDVector::zeros(3),
        }];
        let out = local_forward(
            0,
            &w,
            &RowDVector::zeros(2),
            &RowDVector::zeros(3),
            &rows,
            &[0],
            &Tanh,
        )
        .unwrap();
        assert!(out.h.iter().all(|v| *v == 0.0));
        assert!(out.u.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn missing_and_extra_rows_are_locality_violations() {
        let w = scalar_weights(0.0, 1.0, 1.0, 1.0);
        let x = RowDVector::from_element(1, 1.0);
        let own_only = vec![NeighborRow {
            node: 0,
            coeff: 1.0,
            state: x.clone(),
        }];
        // Expected {0, 2}, delivered {0}: missing row for 2.
        let missing = local_forward(0, &w, &RowDVector::zeros(1), &x, &own_only, &[0, 2], &Tanh);
        match missing {
            Err(crate::Error::LocalityViolation { reader: 0, target: 2, .. }) => {}
            other => panic!("expected locality violation, got {other:?}"),
        }
        // Delivered a row from node 5 that is not in the neighborhood.
        let smuggled = vec![
            NeighborRow {
                node: 0,
                coeff: 1.0,
                state: x.clone(),
            },
            NeighborRow {
                node: 5,
                coeff: 1.0,
                state: x.clone(),
            },
        ];
        let extra = local_forward(0, &w, &RowDVector::zeros(1), &x, &smuggled, &[0], &Tanh);
        match extra {
            Err(crate::Error::LocalityViolation { reader: 0, target: 5, .. }) => {}
            other => panic!("expected locality violation, got {other:?}"),
        }
    }

    #[test]
    fn non_neighbor_state_cannot_influence_output() {
        // Perturbing a node outside the delivered neighborhood cannot change
        // anything, because the API never sees it: outputs are a function of
        // the rows alone. Check bit-identity under an unrelated change.
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let w = NodeWeights::random_uniform(2, 2, 1, &mut rng);
        let x = RowDVector::from_vec(vec![0.4, -0.2]);
        let rows = vec![
            NeighborRow {
                node: 1,
                coeff: 0.5,
                state: RowDVector::from_vec(vec![1.0, 2.0]),
            },
            NeighborRow {
                node: 3,
                coeff: -0.25,
                state: RowDVector::from_vec(vec![-1.0, 0.5]),
            },
        ];
        let z = RowDVector::from_vec(vec![0.1, 0.2]);
        let a = local_forward(3, &w, &z, &x, &rows, &[1, 3], &Tanh).unwrap();
        let b = local_forward(3, &w, &z, &x, &rows, &[1, 3], &Tanh).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn centralized_matches_per_node_with_shared_weights() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let (n_nodes, n, p, m) = (4, 2, 3, 2);
        let w = NodeWeights::random_uniform(n, p, m, &mut rng);
        let act = parse_activation("tanh").unwrap();
        let x = DMatrix::from_fn(n_nodes, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let z_prev = DMatrix::from_fn(n_nodes, p, |_, _| rng.gen::<f64>() - 0.5);
        // A ring shift with self loops.
        let mut s = DMatrix::zeros(n_nodes, n_nodes);
        for i in 0..n_nodes {
            s[(i, i)] = 0.5;
            s[(i, (i + 1) % n_nodes)] = 1.0;
        }
        let (hc, zc, uc) = centralized_forward(&w, &z_prev, &x, &s, act.as_ref()).unwrap();
        for i in 0..n_nodes {
            let mut rows = Vec::new();
            let mut expected = Vec::new();
            for j in 0..n_nodes {
                if s[(i, j)] != 0.0 {
                    expected.push(j);
                    rows.push(NeighborRow {
                        node: j,
                        coeff: s[(i, j)],
                        state: x.row(j).into_owned(),
                    });
                }
            }
            let out = local_forward(
                i,
                &w,
                &z_prev.row(i).into_owned(),
                &x.row(i).into_owned(),
                &rows,
                &expected,
                act.as_ref(),
            )
            .unwrap();
            for c in 0..p {
                assert_relative_eq!(out.h[c], hc[(i, c)], epsilon = 1e-12);
                assert_relative_eq!(out.z[c], zc[(i, c)], epsilon = 1e-12);
            }
            for c in 0..m {
                assert_relative_eq!(out.u[c], uc[(i, c)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn stacked_blocks_reproduce_per_node_hidden_map() {
        // h = K1 z_prev + (K2 + K3 (S ⊗ I_n)) x on stacked vectors must equal
        // the per-node rows restacked.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let (n_nodes, n, p) = (3, 2, 2);
        let weights: Vec<NodeWeights> = (0..n_nodes)
            .map(|_| NodeWeights::random_uniform(n, p, 1, &mut rng))
            .collect();
        let blocks = stacked_weight_blocks(&weights).unwrap();
        let s = dmatrix![
            0.0, 1.0, 0.0;
            1.0, 0.0, 0.5;
            0.0, 0.5, 0.0
        ];
        let x = DMatrix::from_fn(n_nodes, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let z_prev = DMatrix::from_fn(n_nodes, p, |_, _| rng.gen::<f64>() - 0.5);
        // Stacked column vectors (node-major).
        let xs = nalgebra::DVector::from_iterator(
            n_nodes * n,
            (0..n_nodes).flat_map(|i| x.row(i).iter().copied().collect::<Vec<_>>()),
        );
        let zs = nalgebra::DVector::from_iterator(
            n_nodes * p,
            (0..n_nodes).flat_map(|i| z_prev.row(i).iter().copied().collect::<Vec<_>>()),
        );
        let h_stacked = &blocks.k1 * zs + blocks.state_to_hidden(&s, n) * xs;
        for i in 0..n_nodes {
            let mut rows = Vec::new();
            let mut expected = Vec::new();
            for j in 0..n_nodes {
                if s[(i, j)] != 0.0 || j == i {
                    expected.push(j);
                    rows.push(NeighborRow {
                        node: j,
                        coeff: s[(i, j)],
                        state: x.row(j).into_owned(),
                    });
                }
            }
            let out = local_forward(
                i,
                &weights[i],
                &z_prev.row(i).into_owned(),
                &x.row(i).into_owned(),
                &rows,
                &expected,
                &Tanh,
            )
            .unwrap();
            for c in 0..p {
                assert_relative_eq!(h_stacked[i * p + c], out.h[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn shared_weight_average_is_slotwise_mean() {
        let a = scalar_weights(1.0, 2.0, 3.0, 4.0);
        let b = scalar_weights(3.0, 2.0, 1.0, 0.0);
        let mean = approximate_shared_weights(&[a, b]).unwrap();
        assert_eq!(mean.theta1[(0, 0)], 2.0);
        assert_eq!(mean.theta2[(0, 0)], 2.0);
        assert_eq!(mean.theta3[(0, 0)], 2.0);
        assert_eq!(mean.theta4[(0, 0)], 2.0);
    }

    #[test]
    fn weights_json_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let weights: Vec<NodeWeights> = (0..3)
            .map(|_| NodeWeights::random_uniform(2, 2, 1, &mut rng))
            .collect();
        let text = weights_to_json(&weights);
        let back = weights_from_json(&text).unwrap();
        assert_eq!(weights, back);
        assert_eq!(text, weights_to_json(&back));
    }

    #[test]
    fn validate_flags_bad_shapes_and_nan() {
        let mut w = NodeWeights::zeros(2, 2, 1);
        w.theta1[(0, 0)] = f64::NAN;
        assert!(w.validate().is_err());
        let w2 = NodeWeights {
            theta1: DMatrix::zeros(2, 2),
            theta2: DMatrix::zeros(3, 2),
            theta3: DMatrix::zeros(2, 2),
            theta4: DMatrix::zeros(2, 1),
        };
        assert!(w2.validate().is_err());
    }
}
