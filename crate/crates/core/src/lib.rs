//! Shared-control navigation stack for a simulated power wheelchair.

pub mod distance;
pub mod geometry;
pub mod grid;
pub mod mapper;
pub mod sim;
pub mod worldfile;
pub mod arbiter;
pub mod costmap;
pub mod planner;
pub mod runtime;
pub mod survey;
pub mod trials;
pub mod gateway;
