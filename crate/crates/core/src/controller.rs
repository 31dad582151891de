//! Controller strategies.
//!
//! Every control law used by the simulator implements [`Controller`] and is
//! reachable by name through [`build_controller`], so experiment configs can
//! pick one at runtime. The stacked state convention is node-major:
//! node `i` owns rows `i*n .. (i+1)*n` of `x` and rows `i*m .. (i+1)*m` of
//! `u`.

use crate::activation::ActivationRef;
use crate::error::{Error, Result};
use crate::graph::{ShiftOperator, Topology};
use crate::grnn::{local_forward, NeighborRow, NodeWeights};
use crate::system::{LqrSolution, NetworkedSystem};
use nalgebra::{DMatrix, DVector, RowDVector};

/// A state-feedback policy with (possibly) internal memory.
pub trait Controller {
    fn name(&self) -> &'static str;
    /// Clears internal memory; called once before every rollout.
    fn reset(&mut self);
    /// Maps the full stacked state to the stacked control for this step.
    fn control(&mut self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Applies no control at all: `u = 0`. The open-loop baseline.
pub struct ZeroController {
    input_total: usize,
}

impl ZeroController {
    pub fn new(input_total: usize) -> Self {
        ZeroController { input_total }
    }
}

impl Controller for ZeroController {
    fn name(&self) -> &'static str {
        "zero"
    }

    fn reset(&mut self) {}

    fn control(&mut self, _x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.input_total))
    }
}

/// Static linear feedback `u = -K x` (typically the LQR gain). Centralized:
/// `K` is dense, so every node's control may read every state.
pub struct LqrController {
    k: DMatrix<f64>,
}

impl LqrController {
    pub fn new(k: DMatrix<f64>) -> Self {
        LqrController { k }
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.k
    }
}

impl Controller for LqrController {
    fn name(&self) -> &'static str {
        "lqr"
    }

    fn reset(&mut self) {}

    fn control(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.k.ncols() {
            return Err(Error::invalid(format!(
                "state has length {}, gain expects {}",
                x.len(),
                self.k.ncols()
            )));
        }
        Ok(-&self.k * x)
    }
}

/// The graph-recurrent controller: per-node weights, shared shift operator,
/// and a hidden row per node carried across steps. Each node's control is
/// computed strictly from its own rows, its memory, and shift-weighted
/// neighbor rows.
pub struct GrnnController {
    weights: Vec<NodeWeights>,
    shift: DMatrix<f64>,
    /// Sorted `N_i ∪ {i}` per node: who may contribute to the aggregation.
    neighborhoods: Vec<Vec<usize>>,
    activation: ActivationRef,
    state_dim: usize,
    hidden_dim: usize,
    input_dim: usize,
    /// Hidden rows, one per node; zeroed on reset.
    memory: DMatrix<f64>,
}

impl GrnnController {
    pub fn new(
        topology: &Topology,
        weights: Vec<NodeWeights>,
        shift: &ShiftOperator,
        activation: ActivationRef,
    ) -> Result<Self> {
        let nodes = topology.n();
        if weights.len() != nodes {
            return Err(Error::invalid(format!(
                "{} weight sets for {} nodes",
                weights.len(),
                nodes
            )));
        }
        if !shift.matches_sparsity(topology) {
            return Err(Error::invalid(
                "shift operator has support outside the communication graph",
            ));
        }
        let p = weights[0].hidden_dim();
        let n = weights[0].state_dim();
        let m = weights[0].input_dim();
        for (i, w) in weights.iter().enumerate() {
            w.validate()?;
            if w.hidden_dim() != p || w.state_dim() != n || w.input_dim() != m {
                return Err(Error::invalid(format!(
                    "node {i} weights have inconsistent dimensions"
                )));
            }
        }
        let neighborhoods = (0..nodes)
            .map(|i| {
                let mut nb = topology.in_neighbors(i).to_vec();
                if !nb.contains(&i) {
                    nb.push(i);
                }
                nb.sort_unstable();
                nb
            })
            .collect();
        Ok(GrnnController {
            weights,
            shift: shift.matrix().clone(),
            neighborhoods,
            activation,
            state_dim: n,
            hidden_dim: p,
            input_dim: m,
            memory: DMatrix::zeros(nodes, p),
        })
    }

    pub fn weights(&self) -> &[NodeWeights] {
        &self.weights
    }

    pub fn hidden(&self) -> &DMatrix<f64> {
        &self.memory
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
}

impl Controller for GrnnController {
    fn name(&self) -> &'static str {
        "grnn"
    }

    fn reset(&mut self) {
        self.memory.fill(0.0);
    }

    fn control(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let nodes = self.weights.len();
        let n = self.state_dim;
        if x.len() != nodes * n {
            return Err(Error::invalid(format!(
                "state has length {}, expected {}",
                x.len(),
                nodes * n
            )));
        }
        let node_row =
            |i: usize| RowDVector::from_iterator(n, x.rows(i * n, n).iter().copied());
        let mut u = DVector::zeros(nodes * self.input_dim);
        let mut next_memory = self.memory.clone();
        for i in 0..nodes {
            let rows: Vec<NeighborRow> = self.neighborhoods[i]
                .iter()
                .map(|&j| NeighborRow {
                    node: j,
                    coeff: self.shift[(i, j)],
                    state: node_row(j),
                })
                .collect();
            let out = local_forward(
                i,
                &self.weights[i],
                &self.memory.row(i).into_owned(),
                &node_row(i),
                &rows,
                &self.neighborhoods[i],
                self.activation.as_ref(),
            )?;
            next_memory.row_mut(i).copy_from(&out.z);
            u.rows_mut(i * self.input_dim, self.input_dim)
                .copy_from(&out.u.transpose());
        }
        self.memory = next_memory;
        Ok(u)
    }
}

/// Names accepted by [`build_controller`].
pub const CONTROLLER_NAMES: &[&str] = &["zero", "lqr", "grnn"];

/// Everything a controller might need at build time. Strategies take what
/// they require and error if it is absent.
pub struct ControllerContext<'a> {
    pub system: &'a NetworkedSystem,
    pub lqr: Option<&'a LqrSolution>,
    pub grnn_weights: Option<&'a [NodeWeights]>,
    pub shift: Option<&'a ShiftOperator>,
    pub activation: Option<ActivationRef>,
}

impl<'a> ControllerContext<'a> {
    pub fn new(system: &'a NetworkedSystem) -> Self {
        ControllerContext {
            system,
            lqr: None,
            grnn_weights: None,
            shift: None,
            activation: None,
        }
    }

    pub fn with_lqr(mut self, sol: &'a LqrSolution) -> Self {
        self.lqr = Some(sol);
        self
    }

    pub fn with_grnn(
        mut self,
        weights: &'a [NodeWeights],
        shift: &'a ShiftOperator,
        activation: ActivationRef,
    ) -> Self {
        self.grnn_weights = Some(weights);
        self.shift = Some(shift);
        self.activation = Some(activation);
        self
    }
}

/// Builds a controller strategy by name.
pub fn build_controller(name: &str, ctx: &ControllerContext) -> Result<Box<dyn Controller>> {
    match name {
        "zero" => Ok(Box::new(ZeroController::new(ctx.system.b().ncols()))),
        "lqr" => {
            let sol = ctx
                .lqr
                .ok_or_else(|| Error::invalid("controller 'lqr' needs a solved gain"))?;
            Ok(Box::new(LqrController::new(sol.k.clone())))
        }
        "grnn" => {
            let weights = ctx
                .grnn_weights
                .ok_or_else(|| Error::invalid("controller 'grnn' needs node weights"))?;
            let shift = ctx
                .shift
                .ok_or_else(|| Error::invalid("controller 'grnn' needs a shift operator"))?;
            let activation = ctx
                .activation
                .clone()
                .ok_or_else(|| Error::invalid("controller 'grnn' needs an activation"))?;
            Ok(Box::new(GrnnController::new(
                ctx.system.topology(),
                weights.to_vec(),
                shift,
                activation,
            )?))
        }
        other => Err(Error::invalid(format!(
            "unknown controller '{other}' (known: {})",
            CONTROLLER_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::parse_activation;
    use crate::graph::{shift_operator, ShiftKind};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn zero_controller_is_zero() {
        let mut c = ZeroController::new(3);
        let u = c.control(&dvector![1.0, -2.0, 5.0, 0.1]).unwrap();
        assert_eq!(u, DVector::zeros(3));
    }

    #[test]
    fn lqr_controller_negates_gain_product() {
        let k = DMatrix::from_row_slice(1, 2, &[0.5, -1.0]);
        let mut c = LqrController::new(k);
        let u = c.control(&dvector![2.0, 1.0]).unwrap();
        assert_relative_eq!(u[0], -(0.5 * 2.0 - 1.0), epsilon = 1e-15);
        assert!(c.control(&dvector![1.0]).is_err());
    }

    fn tiny_grnn() -> (Topology, ShiftOperator, Vec<NodeWeights>) {
        let topology = Topology::path(2).unwrap();
        let shift = shift_operator(&topology, ShiftKind::Adjacency);
        let weights = vec![
            NodeWeights {
                theta1: DMatrix::from_element(1, 1, 0.5),
                theta2: DMatrix::from_element(1, 1, 1.0),
                theta3: DMatrix::from_element(1, 1, 0.0),
                theta4: DMatrix::from_element(1, 1, 1.0),
            };
            2
        ];
        (topology, shift, weights)
    }

    #[test]
    fn grnn_memory_carries_between_steps_and_resets() {
        let (topology, shift, weights) = tiny_grnn();
        let act = parse_activation("tanh").unwrap();
        let mut c = GrnnController::new(&topology, weights, &shift, act).unwrap();
        let x = dvector![0.5, 0.0];
        // Step 1: z = tanh(0.5) at node 0.
        let u1 = c.control(&x).unwrap();
        let z1 = 0.5f64.tanh();
        assert_relative_eq!(u1[0], z1, epsilon = 1e-15);
        // Step 2 with the same state: h = 0.5 z1 + 0.5.
        let u2 = c.control(&x).unwrap();
        assert_relative_eq!(u2[0], (0.5 * z1 + 0.5).tanh(), epsilon = 1e-15);
        // Reset wipes the memory: back to step-1 output.
        c.reset();
        let u3 = c.control(&x).unwrap();
        assert_relative_eq!(u3[0], z1, epsilon = 1e-15);
    }

    #[test]
    fn registry_builds_by_name_and_rejects_unknown() {
        let topology = Topology::path(2).unwrap();
        let sys = crate::system::generate_system(&topology, 1, 1, 0.9, 0.0, 5).unwrap();
        let ctx = ControllerContext::new(&sys);
        let c = build_controller("zero", &ctx).unwrap();
        assert_eq!(c.name(), "zero");
        assert!(build_controller("lqr", &ctx).is_err()); // no gain supplied
        assert!(build_controller("pid", &ctx).is_err());
        let (_, shift, weights) = tiny_grnn();
        let act = parse_activation("tanh").unwrap();
        let ctx2 = ControllerContext::new(&sys).with_grnn(&weights, &shift, act);
        assert_eq!(build_controller("grnn", &ctx2).unwrap().name(), "grnn");
    }

    #[test]
    fn grnn_rejects_mismatched_shift_support() {
        // A shift with an entry on a non-edge must be refused.
        let (topology, shift, weights) = tiny_grnn();
        let act = parse_activation("tanh").unwrap();
        assert!(GrnnController::new(&topology, weights.clone(), &shift, act.clone()).is_ok());
        // The same (dense path) shift against a graph missing the 1 -> 0
        // edge: support falls outside the graph, so construction fails.
        let sparse = Topology::from_edges(2, [(0, 1)]).unwrap();
        assert!(GrnnController::new(&sparse, weights, &shift, act).is_err());
    }
}
