//! Scale-free regulated state synchronization of discrete-time
//! double-integrator agents with saturated actuators.
//!
//! The crate builds the network matrices of a directed communication
//! graph, runs the two linear dynamic protocols (full-state and
//! partial-state coupling) in a synchronous closed-loop simulation, and
//! numerically certifies the hypotheses and Lyapunov function behind the
//! convergence guarantee.
//!
//! ```
//! use satsync::prelude::*;
//!
//! let cfg = satsync::output::suite_config(SuiteCase::I, 1, 7, 2000).unwrap();
//! let report = certify(&cfg);
//! assert!(report.passed);
//!
//! let tr = run(&cfg).unwrap();
//! assert!(sync_metrics(&tr).final_error < 1e-6);
//! ```

pub mod agent;
pub mod analysis;
pub mod config;
pub mod graph;
pub mod linalg;
pub mod output;
pub mod protocol;
pub mod sim;

pub mod prelude {
    pub use crate::agent::{saturate, AgentState, ExoState, PlantDims};
    pub use crate::analysis::{certify, lyapunov_trace, CertificationReport, LyapunovTrace};
    pub use crate::config::{parse_config, render_config};
    pub use crate::graph::{cases, DegreeBounds, Graph, NetworkMatrices, RootSet};
    pub use crate::linalg::Matrix;
    pub use crate::output::SuiteCase;
    pub use crate::protocol::{gain_region_contains, CouplingMode, GainSet, ZetaBarForm};
    pub use crate::sim::{run, run_with, sync_metrics, RunOptions, SimConfig, Trajectory};
}
