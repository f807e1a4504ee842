//! Cloud-edge deployment pipeline: wire protocol, planner+foresight
//! service, and the edge control loop.

pub mod edge;
pub mod server;
pub mod wire;
