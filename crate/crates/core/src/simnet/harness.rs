//! The message-passing execution engine.
//!
//! This engine runs the same training loop as [`crate::training::train`],
//! but every value a node consumes from another node travels through a
//! mailbox, and mailboxes only exist along graph edges. It is an execution
//! strategy, not a different algorithm: node computations call the very same
//! per-node functions (`local_forward`, `node_gradients`,
//! `batch_mean_gradients`, `mix_one_node`) in the same order, so for equal
//! seeds the two engines produce bit-identical weights and losses.
//!
//! Phases are global barriers; the scheduler (this module) is the only party
//! that advances the round counter, steps the plant, and owns the RNGs.
//! Node-facing computation only touches its own state and a
//! [`MailboxView`](crate::simnet::mailbox::MailboxView).

use crate::activation::ActivationRef;
use crate::error::{Error, Result};
use crate::graph::{ConsensusMatrix, ShiftOperator};
use crate::grnn::{local_forward, NeighborRow, NodeWeights};
use crate::seed::{SeedSplitter, Stream};
use crate::simnet::mailbox::MailboxGrid;
use crate::simnet::message::{MessageLog, NodeEnvelope, PayloadKind, Phase};
use crate::system::NetworkedSystem;
use crate::training::{
    apply_gradient_step, batch_mean_gradients, closed_neighborhoods, control_loss_derivative,
    draw_initial_state, mix_one_node, node_gradients, node_loss, validate_training_inputs,
    EpochRecord, GradientMode, LossConfig, NodeGradients, NodeWindow, RolloutMode, StepRecord,
    TrainConfig, TrainOutput,
};
use nalgebra::{DMatrix, DVector, RowDVector};
use rand_chacha::ChaCha12Rng;

/// The canonical phase order of one epoch: the window block repeats for each
/// batch rollout (and again, without the gradient tail, for each test
/// rollout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundSchedule {
    pub window: usize,
}

impl RoundSchedule {
    pub fn epoch_phases(&self) -> Vec<Phase> {
        let mut v = Vec::with_capacity(3 * self.window + 4);
        for _ in 0..self.window {
            v.push(Phase::BroadcastStates);
            v.push(Phase::LocalForward);
            v.push(Phase::PlantStep);
        }
        v.extend([
            Phase::ComputeGradients,
            Phase::LocalSgd,
            Phase::BroadcastWeights,
            Phase::ConsensusMix,
        ]);
        v
    }
}

#[derive(Clone, Copy)]
enum Bank {
    Train,
    Test,
}

struct NodeRuntime {
    weights: NodeWeights,
    /// Controller memory rows, one per train replica slot.
    train_memory: Vec<RowDVector<f64>>,
    /// Controller memory rows, one per test replica slot.
    test_memory: Vec<RowDVector<f64>>,
    /// This epoch's recorded windows, one per batch.
    stored: Vec<(NodeWindow, Vec<StepRecord>)>,
    /// This epoch's per-batch gradients.
    batch_grads: Vec<NodeGradients>,
}

struct Engine<'a> {
    system: &'a NetworkedSystem,
    shift_m: &'a DMatrix<f64>,
    consensus: &'a ConsensusMatrix,
    activation: &'a ActivationRef,
    loss: &'a LossConfig,
    config: &'a TrainConfig,
    seeds: &'a SeedSplitter,
    neighborhoods: Vec<Vec<usize>>,
    /// `state_out[i]`: receivers of node `i`'s state broadcast (everyone who
    /// lists `i` in their closed neighborhood), ascending.
    state_out: Vec<Vec<usize>>,
    /// `weight_out[i]`: receivers of node `i`'s weight broadcast (everyone
    /// whose consensus support contains `i`), ascending.
    weight_out: Vec<Vec<usize>>,
    nodes: Vec<NodeRuntime>,
    train_x: Vec<DVector<f64>>,
    test_x: Vec<DVector<f64>>,
    state_grid: MailboxGrid<RowDVector<f64>>,
    weight_grid: MailboxGrid<NodeWeights>,
    ack_grid: MailboxGrid<u64>,
    round: u64,
    log: Option<&'a mut MessageLog>,
    n: usize,
    m: usize,
    p: usize,
}

impl<'a> Engine<'a> {
    fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn log_envelope(
        &mut self,
        phase: Phase,
        sender: usize,
        receiver: usize,
        kind: PayloadKind,
        bytes: usize,
    ) {
        if let Some(log) = self.log.as_deref_mut() {
            log.record(NodeEnvelope {
                round: self.round,
                phase,
                sender,
                receiver,
                kind,
                bytes,
            });
        }
    }

    fn plant_row(&self, bank: Bank, idx: usize, i: usize) -> RowDVector<f64> {
        let x = match bank {
            Bank::Train => &self.train_x[idx],
            Bank::Test => &self.test_x[idx],
        };
        RowDVector::from_iterator(self.n, x.rows(i * self.n, self.n).iter().copied())
    }

    /// Rolls one ΔT window on replica `idx` of the given bank, advancing the
    /// plant in place. Returns each node's recorded window.
    fn run_window(
        &mut self,
        bank: Bank,
        idx: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Vec<(NodeWindow, Vec<StepRecord>)>> {
        let nodes_n = self.n_nodes();
        let mut windows: Vec<NodeWindow> = (0..nodes_n)
            .map(|_| NodeWindow {
                states: Vec::with_capacity(self.loss.window + 1),
                controls: Vec::with_capacity(self.loss.window),
            })
            .collect();
        let mut records: Vec<Vec<StepRecord>> =
            vec![Vec::with_capacity(self.loss.window); nodes_n];
        for _t in 0..self.loss.window {
            // broadcast_states: each node reads its own plant row and posts
            // it to everyone whose neighborhood contains it (incl. itself).
            self.round += 1;
            self.state_grid.clear();
            for i in 0..nodes_n {
                let row = self.plant_row(bank, idx, i);
                let receivers = self.state_out[i].clone();
                for j in receivers {
                    self.state_grid
                        .post(i, j, Phase::BroadcastStates, row.clone())?;
                    self.log_envelope(
                        Phase::BroadcastStates,
                        i,
                        j,
                        PayloadKind::StateRow,
                        8 * self.n,
                    );
                }
            }
            // local_forward: pure node-local computation over the mailbox.
            self.round += 1;
            let mut u_rows: Vec<RowDVector<f64>> = Vec::with_capacity(nodes_n);
            for i in 0..nodes_n {
                let view = self.state_grid.view(i);
                let x_own = view.read(i, Phase::LocalForward)?.clone();
                let rows: Vec<NeighborRow> = self.neighborhoods[i]
                    .iter()
                    .map(|&j| {
                        Ok(NeighborRow {
                            node: j,
                            coeff: self.shift_m[(i, j)],
                            state: view.read(j, Phase::LocalForward)?.clone(),
                        })
                    })
                    .collect::<Result<_>>()?;
                let z_prev = match bank {
                    Bank::Train => self.nodes[i].train_memory[idx].clone(),
                    Bank::Test => self.nodes[i].test_memory[idx].clone(),
                };
                let out = local_forward(
                    i,
                    &self.nodes[i].weights,
                    &z_prev,
                    &x_own,
                    &rows,
                    &self.neighborhoods[i],
                    self.activation.as_ref(),
                )?;
                match bank {
                    Bank::Train => self.nodes[i].train_memory[idx] = out.z.clone(),
                    Bank::Test => self.nodes[i].test_memory[idx] = out.z.clone(),
                }
                windows[i].states.push(x_own.clone());
                windows[i].controls.push(out.u.clone());
                records[i].push(StepRecord {
                    z_prev,
                    x: x_own,
                    s: out.aggregated,
                    h: out.h,
                    z: out.z,
                    u: out.u.clone(),
                });
                u_rows.push(out.u);
            }
            // plant_step: the environment owns the plant and the noise.
            self.round += 1;
            let mut u = DVector::zeros(nodes_n * self.m);
            for (i, row) in u_rows.iter().enumerate() {
                u.rows_mut(i * self.m, self.m).copy_from(&row.transpose());
            }
            let system = self.system;
            let x = match bank {
                Bank::Train => &mut self.train_x[idx],
                Bank::Test => &mut self.test_x[idx],
            };
            let next = system.step(x, &u, rng);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical("state became non-finite during rollout"));
            }
            *x = next;
        }
        for (i, w) in windows.iter_mut().enumerate() {
            w.states.push(self.plant_row(bank, idx, i));
        }
        Ok(windows.into_iter().zip(records).collect())
    }

    fn run(&mut self) -> Result<TrainOutput> {
        let nodes_n = self.n_nodes();
        let total = nodes_n * self.n;
        let mut history = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            if self.config.rollout == RolloutMode::Restarted {
                for b in 0..self.loss.batch {
                    let mut rng = self.seeds.rng(Stream::TrainInit, &[epoch as u64, b as u64]);
                    self.train_x[b] =
                        draw_initial_state(total, self.config.init_mean, self.config.init_std, &mut rng);
                }
                for s in 0..self.config.test_samples {
                    let mut rng = self.seeds.rng(Stream::TestInit, &[epoch as u64, s as u64]);
                    self.test_x[s] =
                        draw_initial_state(total, self.config.init_mean, self.config.init_std, &mut rng);
                }
                for node in &mut self.nodes {
                    for row in node.train_memory.iter_mut().chain(node.test_memory.iter_mut()) {
                        row.fill(0.0);
                    }
                }
            }

            for node in &mut self.nodes {
                node.stored.clear();
                node.batch_grads.clear();
            }
            for b in 0..self.loss.batch {
                let mut rng = self.seeds.rng(Stream::TrainNoise, &[epoch as u64, b as u64]);
                let data = self.run_window(Bank::Train, b, &mut rng)?;
                for (node, d) in self.nodes.iter_mut().zip(data) {
                    node.stored.push(d);
                }
            }

            // compute_gradients: node-local; each node acknowledges with its
            // batch count so the scheduler can verify the barrier.
            self.round += 1;
            self.ack_grid.clear();
            let mut train_loss = vec![0.0; nodes_n];
            for i in 0..nodes_n {
                let stored = std::mem::take(&mut self.nodes[i].stored);
                let mut grads_i = Vec::with_capacity(stored.len());
                for (window, recs) in &stored {
                    train_loss[i] += node_loss(window, i, self.loss)?;
                    let mut acc = NodeGradients::zeros(self.n, self.p, self.m);
                    for rec in recs {
                        let du = control_loss_derivative(&rec.u, &self.loss.control_weights[i]);
                        let g = node_gradients(
                            &du,
                            rec,
                            &self.nodes[i].weights,
                            self.activation.as_ref(),
                        )?;
                        acc.axpy(1.0, &g);
                    }
                    grads_i.push(acc);
                }
                let count = grads_i.len() as u64;
                self.nodes[i].batch_grads = grads_i;
                self.ack_grid.post(i, i, Phase::ComputeGradients, count)?;
                self.log_envelope(Phase::ComputeGradients, i, i, PayloadKind::GradientAck, 8);
            }
            for i in 0..nodes_n {
                let count = *self.ack_grid.view(i).read(i, Phase::ComputeGradients)?;
                if count != self.loss.batch as u64 {
                    return Err(Error::invalid(format!(
                        "node {i} acknowledged {count} gradient batches, expected {}",
                        self.loss.batch
                    )));
                }
            }
            for v in train_loss.iter_mut() {
                *v /= self.loss.batch as f64;
            }
            if let Some(bad) = train_loss.iter().find(|v| !v.is_finite() || **v > 1e6) {
                return Err(Error::numerical(format!(
                    "training diverged at epoch {epoch}: node train loss {bad}"
                )));
            }

            // local_sgd: node-local step with the batch-averaged gradient.
            self.round += 1;
            let eta = self.config.schedule.rate(epoch);
            for i in 0..nodes_n {
                let batch = std::mem::take(&mut self.nodes[i].batch_grads);
                let mean = batch_mean_gradients(i, &self.nodes[i].weights, &batch)?;
                apply_gradient_step(&mut self.nodes[i].weights, &mean, eta);
            }

            // broadcast_weights along consensus support channels.
            self.round += 1;
            self.weight_grid.clear();
            let weight_bytes =
                8 * (self.p * self.p + 2 * self.n * self.p + self.p * self.m);
            for i in 0..nodes_n {
                let w_i = self.nodes[i].weights.clone();
                let receivers = self.weight_out[i].clone();
                for j in receivers {
                    self.weight_grid
                        .post(i, j, Phase::BroadcastWeights, w_i.clone())?;
                    self.log_envelope(
                        Phase::BroadcastWeights,
                        i,
                        j,
                        PayloadKind::WeightBlock,
                        weight_bytes,
                    );
                }
            }

            // consensus_mix: synchronous — everyone combines the pre-step
            // broadcasts, then all nodes swap to the mixed weights at once.
            self.round += 1;
            let mut mixed = Vec::with_capacity(nodes_n);
            for i in 0..nodes_n {
                let view = self.weight_grid.view(i);
                let mut table: Vec<Option<&NodeWeights>> = vec![None; nodes_n];
                for j in self.consensus.support(i) {
                    table[j] = Some(view.read(j, Phase::ConsensusMix)?);
                }
                mixed.push(mix_one_node(i, &self.nodes[i].weights, self.consensus, |j| {
                    table[j].expect("support channel pre-read")
                }));
            }
            for (node, w) in self.nodes.iter_mut().zip(mixed) {
                node.weights = w;
            }

            // Held-out evaluation with the just-updated weights.
            let mut test_loss = vec![0.0; nodes_n];
            for s in 0..self.config.test_samples {
                let mut rng = self.seeds.rng(Stream::TestNoise, &[epoch as u64, s as u64]);
                let data = self.run_window(Bank::Test, s, &mut rng)?;
                for (i, (window, _)) in data.iter().enumerate() {
                    test_loss[i] += node_loss(window, i, self.loss)?;
                }
            }
            for v in test_loss.iter_mut() {
                *v /= self.config.test_samples as f64;
                if !v.is_finite() {
                    return Err(Error::numerical(format!(
                        "test evaluation non-finite at epoch {epoch}"
                    )));
                }
            }

            history.push(EpochRecord {
                epoch,
                train_loss,
                test_loss,
            });
        }
        Ok(TrainOutput {
            weights: self.nodes.iter().map(|nd| nd.weights.clone()).collect(),
            history,
        })
    }
}

/// Runs the training loop on the message-passing engine. Same contract and
/// output as [`crate::training::train`]; pass a [`MessageLog`] to record
/// every delivered envelope. Full-window backpropagation is refused here —
/// it needs the global plant model, which no node owns.
#[allow(clippy::too_many_arguments)]
pub fn run_training(
    system: &NetworkedSystem,
    shift: &ShiftOperator,
    consensus: &ConsensusMatrix,
    initial_weights: &[NodeWeights],
    loss: &LossConfig,
    config: &TrainConfig,
    activation: &ActivationRef,
    seeds: &SeedSplitter,
    log: Option<&mut MessageLog>,
) -> Result<TrainOutput> {
    let nodes_n = system.n_nodes();
    let n = system.state_dim();
    let m = system.input_dim();
    let p = validate_training_inputs(system, shift, initial_weights, loss, config)?;
    if config.gradients == GradientMode::Bptt {
        return Err(Error::invalid(
            "the message-passing engine only supports truncated gradients; \
             full-window backpropagation needs the global plant model",
        ));
    }
    if consensus.matrix().nrows() != nodes_n {
        return Err(Error::invalid(format!(
            "consensus matrix is {}x{} for {nodes_n} nodes",
            consensus.matrix().nrows(),
            consensus.matrix().ncols()
        )));
    }

    let neighborhoods = closed_neighborhoods(system.topology());
    let mut state_out: Vec<Vec<usize>> = vec![Vec::new(); nodes_n];
    for (j, nb) in neighborhoods.iter().enumerate() {
        for &i in nb {
            state_out[i].push(j);
        }
    }
    let mut weight_out: Vec<Vec<usize>> = vec![Vec::new(); nodes_n];
    for j in 0..nodes_n {
        for i in consensus.support(j) {
            weight_out[i].push(j);
        }
    }
    // Receiver lists come out ascending because j runs ascending.

    let nodes = initial_weights
        .iter()
        .map(|w| NodeRuntime {
            weights: w.clone(),
            train_memory: vec![RowDVector::zeros(p); loss.batch],
            test_memory: vec![RowDVector::zeros(p); config.test_samples],
            stored: Vec::new(),
            batch_grads: Vec::new(),
        })
        .collect();
    let train_x = (0..loss.batch)
        .map(|b| {
            let mut rng = seeds.rng(Stream::TrainInit, &[b as u64]);
            draw_initial_state(nodes_n * n, config.init_mean, config.init_std, &mut rng)
        })
        .collect();
    let test_x = (0..config.test_samples)
        .map(|s| {
            let mut rng = seeds.rng(Stream::TestInit, &[s as u64]);
            draw_initial_state(nodes_n * n, config.init_mean, config.init_std, &mut rng)
        })
        .collect();

    let mut engine = Engine {
        system,
        shift_m: shift.matrix(),
        consensus,
        activation,
        loss,
        config,
        seeds,
        state_grid: MailboxGrid::new(&neighborhoods),
        weight_grid: MailboxGrid::new(&neighborhoods),
        ack_grid: MailboxGrid::new(&neighborhoods),
        neighborhoods,
        state_out,
        weight_out,
        nodes,
        train_x,
        test_x,
        round: 0,
        log,
        n,
        m,
        p,
    };
    engine.run()
}
