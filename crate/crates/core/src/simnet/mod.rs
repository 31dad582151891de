//! Round-based message-passing execution of the distributed training loop.
//!
//! Locality is enforced structurally: node code reaches other nodes only
//! through per-round mailboxes, and mailboxes exist only along graph edges.
//! For identical seeds the harness reproduces the monolithic engine's
//! output bit for bit — see [`harness::run_training`].

pub mod harness;
pub mod mailbox;
pub mod message;

pub use harness::{run_training, RoundSchedule};
pub use mailbox::{MailboxGrid, MailboxView};
pub use message::{MessageLog, NodeEnvelope, PayloadKind, Phase};
