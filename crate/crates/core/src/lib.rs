//! Closed-loop tabletop manipulation: a deterministic block-and-bowl
//! simulator, an action-primitive protocol, a dual-mode (fast/slow)
//! agent loop with execution monitoring, pluggable reasoner backends,
//! and a seeded benchmark harness with replayable trial logs.

pub mod agent;
pub mod bench;
pub mod monitor;
pub mod primitives;
pub mod reasoner;
pub mod replay;
pub mod world;
