//! Proximity-based network stack for meeting-minutes sharing.
//!
//! * [`identity`]: device ids, advertisements, discovery notifications
//! * [`routing`]: neighbor-list multi-hop routing and packet forwarding
//! * [`session`]: Scribe/Member sessions
//! * [`mom`]: minutes-of-meeting documents and per-device stores
//! * [`sim`]: deterministic discrete-event simulator
//! * [`scenario`] and [`runner`]: scenario files, assertions, run summaries
//! * [`trace`]: the line-oriented trace format
//! * [`sweep`]: seeded random-topology batches, parallel with the `parallel` feature

pub mod identity;
pub mod mom;
pub mod routing;
pub mod runner;
pub mod scenario;
pub mod session;
pub mod sim;
pub mod sweep;
pub mod trace;
