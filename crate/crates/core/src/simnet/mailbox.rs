//! Per-round mailboxes with structural locality.
//!
//! A node's mailbox has one slot per member of its closed neighborhood
//! (in-neighbors plus itself). Posting to a slot that does not exist — i.e.
//! injecting a message along a non-edge — and reading from a non-neighbor
//! both fail with a locality violation naming the reader, the target, and
//! the phase. Node-facing code only ever sees a [`MailboxView`], which has
//! no way to address the rest of the network.

use crate::error::{Error, Result};
use crate::simnet::message::Phase;

#[derive(Debug, Clone)]
pub struct MailboxGrid<T> {
    /// Sorted closed in-neighborhoods, one per node; slot order follows it.
    neighborhoods: Vec<Vec<usize>>,
    slots: Vec<Vec<Option<T>>>,
}

impl<T> MailboxGrid<T> {
    pub fn new(neighborhoods: &[Vec<usize>]) -> Self {
        let slots = neighborhoods.iter().map(|nb| {
            let mut v = Vec::with_capacity(nb.len());
            v.resize_with(nb.len(), || None);
            v
        });
        MailboxGrid {
            neighborhoods: neighborhoods.to_vec(),
            slots: slots.collect(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.neighborhoods.len()
    }

    /// Delivers `value` from `sender` into `receiver`'s mailbox. Fails if
    /// the channel does not exist in the graph.
    pub fn post(&mut self, sender: usize, receiver: usize, phase: Phase, value: T) -> Result<()> {
        let nb = self.neighborhoods.get(receiver).ok_or_else(|| {
            Error::invalid(format!("no such node {receiver} among {}", self.n_nodes()))
        })?;
        let pos = nb.binary_search(&sender).map_err(|_| Error::LocalityViolation {
            reader: receiver,
            target: sender,
            phase: format!("{} (message injection)", phase.name()),
        })?;
        self.slots[receiver][pos] = Some(value);
        Ok(())
    }

    /// The read-only, locality-restricted facade handed to node code.
    pub fn view(&self, reader: usize) -> MailboxView<'_, T> {
        MailboxView { grid: self, reader }
    }

    /// Empties every slot at a phase barrier.
    pub fn clear(&mut self) {
        for row in &mut self.slots {
            for slot in row.iter_mut() {
                *slot = None;
            }
        }
    }
}

/// What a node sees of the network: its own slot plus neighbor slots.
pub struct MailboxView<'a, T> {
    grid: &'a MailboxGrid<T>,
    reader: usize,
}

impl<'a, T> MailboxView<'a, T> {
    pub fn reader(&self) -> usize {
        self.reader
    }

    /// Reads the message `sender` delivered this round. Non-neighbor reads
    /// are locality violations; an empty neighbor slot means the schedule
    /// was violated and is reported as such.
    pub fn read(&self, sender: usize, phase: Phase) -> Result<&'a T> {
        let nb = &self.grid.neighborhoods[self.reader];
        let pos = nb.binary_search(&sender).map_err(|_| Error::LocalityViolation {
            reader: self.reader,
            target: sender,
            phase: phase.name().to_string(),
        })?;
        self.grid.slots[self.reader][pos].as_ref().ok_or_else(|| {
            Error::invalid(format!(
                "node {} has no message from {sender} in phase {}",
                self.reader,
                phase.name()
            ))
        })
    }
}
