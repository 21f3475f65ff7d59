//! Message accounting for the simulated transport.
//!
//! Delivery itself happens in memory; what matters for evaluation is how
//! many messages each party sends and receives per round. A "message" is
//! one transport bundle between two actors, however many records it carries
//! (a distributor's per-user delivery bundles all of that user's shares,
//! and one agreement step bundles all parallel instances).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Actor {
    Distributor(u32),
    User(u64),
    BridgeHost(u64),
}

#[derive(Debug, Clone, Default)]
pub struct MessageLog {
    sent: BTreeMap<Actor, u64>,
    received: BTreeMap<Actor, u64>,
}

/// Per-round accounting summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundTraffic {
    /// Largest number of messages any single user received this round.
    pub max_user_received: u64,
    /// Smallest number of messages any user received this round (0 when no
    /// user traffic happened).
    pub min_user_received: u64,
    /// Largest send+receive count over the distributors this round.
    pub max_distributor_total: u64,
}

impl MessageLog {
    pub fn new() -> MessageLog {
        MessageLog::default()
    }

    /// Records one bundle from `from` to `to`.
    pub fn record(&mut self, from: Actor, to: Actor) {
        *self.sent.entry(from).or_insert(0) += 1;
        *self.received.entry(to).or_insert(0) += 1;
    }

    /// Records a broadcast: one bundle to each of the given recipients.
    pub fn record_broadcast<I: IntoIterator<Item = Actor>>(&mut self, from: Actor, to: I) {
        for t in to {
            self.record(from, t);
        }
    }

    pub fn received_by(&self, actor: Actor) -> u64 {
        self.received.get(&actor).copied().unwrap_or(0)
    }

    pub fn sent_by(&self, actor: Actor) -> u64 {
        self.sent.get(&actor).copied().unwrap_or(0)
    }

    /// Summarizes and clears the counters for the next round. `users` and
    /// `distributors` name the actors that must be covered by the min/max
    /// statistics even if they saw no traffic.
    pub fn finish_round(
        &mut self,
        users: impl IntoIterator<Item = u64>,
        distributors: impl IntoIterator<Item = u32>,
    ) -> RoundTraffic {
        let mut max_user = 0u64;
        let mut min_user = u64::MAX;
        let mut any_user = false;
        for u in users {
            let r = self.received_by(Actor::User(u));
            max_user = max_user.max(r);
            min_user = min_user.min(r);
            any_user = true;
        }
        let mut max_dist = 0u64;
        for d in distributors {
            let total =
                self.sent_by(Actor::Distributor(d)) + self.received_by(Actor::Distributor(d));
            max_dist = max_dist.max(total);
        }
        self.sent.clear();
        self.received.clear();
        RoundTraffic {
            max_user_received: max_user,
            min_user_received: if any_user { min_user } else { 0 },
            max_distributor_total: max_dist,
        }
    }
}
