//! Capability-exploration simulation for agent-based manufacturing control.
//!
//! Resource agents run finite-state capability models, product agents bid
//! their parts through a process plan, and a central controller reacts to
//! breakdowns by granting a broken agent's events to a suitable neighbour.

pub mod bundled;
pub mod engine;
pub mod exploration;
pub mod ids;
pub mod knowledge;
pub mod layout;
pub mod model;
pub mod output;
pub mod product;
pub mod resource;
pub mod route;
pub mod scenario;
