//! Envelopes, phases, and the optional message log.

/// Barrier phases of one training epoch, in schedule order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    BroadcastStates,
    LocalForward,
    PlantStep,
    ComputeGradients,
    LocalSgd,
    BroadcastWeights,
    ConsensusMix,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::BroadcastStates => "broadcast_states",
            Phase::LocalForward => "local_forward",
            Phase::PlantStep => "plant_step",
            Phase::ComputeGradients => "compute_gradients",
            Phase::LocalSgd => "local_sgd",
            Phase::BroadcastWeights => "broadcast_weights",
            Phase::ConsensusMix => "consensus_mix",
        }
    }
}

/// What a message carries. Payload sizes are full-precision: 8 bytes per
/// scalar, no quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    StateRow,
    WeightBlock,
    GradientAck,
}

impl PayloadKind {
    pub fn name(&self) -> &'static str {
        match self {
            PayloadKind::StateRow => "state_row",
            PayloadKind::WeightBlock => "weight_block",
            PayloadKind::GradientAck => "gradient_ack",
        }
    }
}

/// One delivered message, as recorded in the log. Deliveries happen only on
/// topology edges (plus self); the round tag is the global phase counter, so
/// tags are strictly increasing on every (sender, receiver) channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeEnvelope {
    pub round: u64,
    pub phase: Phase,
    pub sender: usize,
    pub receiver: usize,
    pub kind: PayloadKind,
    pub bytes: usize,
}

/// Ordered record of every envelope delivered during a run. Fixed seed and
/// schedule give a bit-identical log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageLog {
    pub envelopes: Vec<NodeEnvelope>,
}

impl MessageLog {
    pub fn new() -> Self {
        MessageLog::default()
    }

    pub fn record(&mut self, envelope: NodeEnvelope) {
        self.envelopes.push(envelope);
    }

    pub fn len(&self) -> usize {
        self.envelopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envelopes.is_empty()
    }

    /// Number of envelopes delivered in a given phase kind across the run.
    pub fn count_kind(&self, kind: PayloadKind) -> usize {
        self.envelopes.iter().filter(|e| e.kind == kind).count()
    }

    /// Envelopes delivered during the given round.
    pub fn round(&self, round: u64) -> impl Iterator<Item = &NodeEnvelope> {
        self.envelopes.iter().filter(move |e| e.round == round)
    }

    /// `round,phase,sender,receiver,kind,bytes` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,phase,sender,receiver,kind,bytes\n");
        for e in &self.envelopes {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.round,
                e.phase.name(),
                e.sender,
                e.receiver,
                e.kind.name(),
                e.bytes
            ));
        }
        out
    }
}
