//! Continual reinforcement learning with diffusion-based trajectory replay.
//!
//! Each arriving task is learned by a soft actor-critic "immediate" policy.
//! Its best trajectories are memorized by a task-conditioned trajectory
//! diffusion model, and a long-lived "general" policy is distilled by
//! behavior cloning from the real trajectories of the current task plus
//! generated trajectories of prioritized past tasks.

pub mod agent;
pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod method;
pub mod metrics;
pub mod priority;
pub mod sac;
pub mod seed;
pub mod tasksuite;
pub mod trajdiff;

pub use error::{Error, Result};
