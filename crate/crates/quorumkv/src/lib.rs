//! A replicated, strongly consistent key-value store.
//!
//! Writes are replicated through a Paxos-ordered command log and execute
//! identically on every node; a time-bounded master lease (a diskless Paxos
//! variant) routes all safe reads and writes through a single node at a time,
//! and a deterministic whole-cluster simulator drives the stack through
//! message loss, duplication, reordering, delays, partitions, and
//! crash-restarts while checking the safety properties the design promises.
//!
//! The crate is organized in the same layers as a running node:
//!
//! - [`types`] / [`codec`]: domain types and canonical binary encodings.
//! - [`storage`]: write-ahead-logged ordered key-value store, synced on commit.
//! - [`kvdb`]: command execution and read/listing semantics.
//! - [`transport`]: message transport with lossy and reliable delivery classes.
//! - [`paxos`]: single-decree consensus roles.
//! - [`lease`]: master lease election and renewal.
//! - [`rlog`]: the replicated log — batching, phase-1 skipping, commit
//!   chaining, and catchup for lagging nodes.
//! - [`node`]: one node's event-driven core, wiring the above together.
//! - [`server`]: configuration, client wire protocol, HTTP mapping, and the
//!   real-network runtime.
//! - [`sim`]: the deterministic simulator, invariant checkers, exhaustive
//!   lease-schedule explorer, liveness calculator, and benchmark driver.
//!
//! See the crate examples for runnable demonstrations of each capability, and
//! the `quorumkv` binary for the server/client/sim command-line front end.

pub mod codec;
pub mod kvdb;
pub mod lease;
pub mod node;
pub mod paxos;
pub mod rlog;
pub mod server;
pub mod sim;
pub mod storage;
pub mod transport;
pub mod types;

pub use types::{Ballot, Batch, Command, InstanceId, Key, Micros, NodeId, Prefix, Value, WriteOp};
