//! Synchronous closed-loop simulation: N agents, the exosystem, one
//! controller per agent and the network exchange between them.
//!
//! Every tick reads only values from the previous tick: outputs and
//! broadcasts are collected first, then all states advance together.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{agent_step_saturated, exo_step, output, saturate, AgentState, DynamicsError, ExoState, PlantDims};
use crate::graph::{in_graph_set, DegreeBounds, Graph, GraphError, RootSet};
use crate::linalg::{spectral_radius, LinalgError};
use crate::protocol::{
    compute_zeta_bar, compute_zeta_hat, gain_region_contains, observer_matrix, CouplingMode,
    ExchangePacket, FullStateController, GainSet, PartialStateController, ProtocolError,
    ZetaBarForm,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("gain region violated: (k1, k2) = ({k1}, {k2})")]
    GainRegion { k1: f64, k2: f64 },
    #[error("observer matrix A - FC is not Schur stable (spectral radius {0})")]
    ObserverNotSchur(f64),
}

/// Initial plant and exosystem states.
#[derive(Debug, Clone, PartialEq)]
pub enum StateInit {
    /// Agent states, then the exosystem state, drawn uniformly on
    /// `[low, high]` from a ChaCha8 stream seeded with `seed`.
    Seeded { seed: u64, low: f64, high: f64 },
    Explicit { agents: Vec<Vec<f64>>, exo: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum ControllerInit {
    #[default]
    Zero,
    /// `xhat` is only used in partial-state mode; missing means zero.
    Explicit {
        chi: Vec<Vec<f64>>,
        xhat: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialConditions {
    pub states: StateInit,
    pub controllers: ControllerInit,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self {
            states: StateInit::Seeded {
                seed: 0,
                low: -10.0,
                high: 10.0,
            },
            controllers: ControllerInit::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dims: PlantDims,
    pub graph: Graph,
    pub roots: RootSet,
    pub bounds: DegreeBounds,
    pub gains: GainSet,
    pub mode: CouplingMode,
    pub zeta_bar_form: ZetaBarForm,
    pub steps: usize,
    pub record_every: usize,
    pub init: InitialConditions,
}

pub const DEFAULT_STEPS: usize = 5000;

/// Every tick for small networks, every tenth beyond ten agents.
pub fn default_record_every(n_agents: usize) -> usize {
    if n_agents <= 10 {
        1
    } else {
        10
    }
}

impl SimConfig {
    /// Config with tight degree bounds, normalized `ζ̄`, `T = 5000`,
    /// seed 0 initial states on `[−10, 10]` and zero controller states.
    pub fn new(dims: PlantDims, graph: Graph, roots: RootSet, gains: GainSet, mode: CouplingMode) -> Self {
        let bounds = DegreeBounds::tight(&graph);
        let record_every = default_record_every(graph.n_nodes());
        Self {
            dims,
            graph,
            roots,
            bounds,
            gains,
            mode,
            zeta_bar_form: ZetaBarForm::Normalized,
            steps: DEFAULT_STEPS,
            record_every,
            init: InitialConditions::default(),
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_record_every(mut self, record_every: usize) -> Self {
        self.record_every = record_every;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self.init.states {
            StateInit::Seeded { seed: s, .. } => *s = seed,
            states => {
                *states = StateInit::Seeded {
                    seed,
                    low: -10.0,
                    high: 10.0,
                }
            }
        }
        self
    }

    pub fn n_agents(&self) -> usize {
        self.graph.n_nodes()
    }

    /// Checks that all pieces agree on sizes.
    pub fn validate(&self) -> Result<(), SimError> {
        let n_agents = self.n_agents();
        let len = self.dims.state_len();
        if self.roots.n_nodes() != n_agents {
            return Err(SimError::Config(format!(
                "root set is for {} nodes, graph has {n_agents}",
                self.roots.n_nodes()
            )));
        }
        if self.bounds.as_slice().len() != n_agents {
            return Err(SimError::Config(format!(
                "{} degree bounds for {n_agents} nodes",
                self.bounds.as_slice().len()
            )));
        }
        if self.steps == 0 {
            return Err(SimError::Config("steps must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(SimError::Config("record_every must be at least 1".into()));
        }
        let g = &self.gains;
        if ![g.k1, g.k2, g.f1, g.f2].iter().all(|v| v.is_finite()) {
            return Err(SimError::Config("gains must be finite".into()));
        }
        let check_rows = |what: &str, rows: &[Vec<f64>]| -> Result<(), SimError> {
            if rows.len() != n_agents {
                return Err(SimError::Config(format!(
                    "{what}: {} rows for {n_agents} agents",
                    rows.len()
                )));
            }
            if let Some(r) = rows.iter().position(|r| r.len() != len) {
                return Err(SimError::Config(format!(
                    "{what}: row {} has length {}, expected {len}",
                    r + 1,
                    rows[r].len()
                )));
            }
            if rows.iter().flatten().any(|v| !v.is_finite()) {
                return Err(SimError::Config(format!("{what}: non-finite entry")));
            }
            Ok(())
        };
        match &self.init.states {
            StateInit::Seeded { low, high, .. } => {
                if !(low.is_finite() && high.is_finite() && low <= high) {
                    return Err(SimError::Config(format!("bad init range [{low}, {high}]")));
                }
            }
            StateInit::Explicit { agents, exo } => {
                check_rows("agent_states", agents)?;
                if exo.len() != len || exo.iter().any(|v| !v.is_finite()) {
                    return Err(SimError::Config(format!(
                        "exo_state must have {len} finite entries"
                    )));
                }
            }
        }
        if let ControllerInit::Explicit { chi, xhat } = &self.init.controllers {
            check_rows("controller chi", chi)?;
            if let Some(xhat) = xhat {
                check_rows("controller xhat", xhat)?;
            }
        }
        Ok(())
    }

    fn initial_states(&self) -> (Vec<AgentState>, ExoState) {
        let len = self.dims.state_len();
        match &self.init.states {
            StateInit::Seeded { seed, low, high } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let dist = Uniform::new_inclusive(*low, *high).expect("validated range");
                let agents = (0..self.n_agents())
                    .map(|_| AgentState {
                        x: (0..len).map(|_| dist.sample(&mut rng)).collect(),
                    })
                    .collect();
                let exo = ExoState {
                    x: (0..len).map(|_| dist.sample(&mut rng)).collect(),
                };
                (agents, exo)
            }
            StateInit::Explicit { agents, exo } => (
                agents.iter().map(|x| AgentState { x: x.clone() }).collect(),
                ExoState { x: exo.clone() },
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Run even if the gain region or observer checks fail.
    pub force: bool,
}

/// State of the closed loop at one recorded tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    pub x: Vec<Vec<f64>>,
    pub x_r: Vec<f64>,
    pub chi: Vec<Vec<f64>>,
    pub xhat: Option<Vec<Vec<f64>>>,
    /// Input computed from the controller state at `t`.
    pub u: Vec<Vec<f64>>,
    pub sat_u: Vec<Vec<f64>>,
    /// `max_i ‖x_i − x_r‖_∞`
    pub sync_error_inf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mode: CouplingMode,
    pub block: usize,
    pub n_agents: usize,
    pub steps: usize,
    pub record_every: usize,
    pub snapshots: Vec<Snapshot>,
    /// Largest `|u_i|` component over every applied input, recorded or not.
    pub max_abs_input: f64,
    pub warnings: Vec<String>,
}

pub fn sync_error_inf(x: &[Vec<f64>], x_r: &[f64]) -> f64 {
    x.iter()
        .flat_map(|xi| xi.iter().zip(x_r).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

enum Controllers {
    Full(Vec<FullStateController>),
    Partial(Vec<PartialStateController>),
}

impl Controllers {
    fn chi(&self) -> Vec<Vec<f64>> {
        match self {
            Controllers::Full(cs) => cs.iter().map(|c| c.chi.clone()).collect(),
            Controllers::Partial(cs) => cs.iter().map(|c| c.chi.clone()).collect(),
        }
    }

    fn xhat(&self) -> Option<Vec<Vec<f64>>> {
        match self {
            Controllers::Full(_) => None,
            Controllers::Partial(cs) => Some(cs.iter().map(|c| c.xhat.clone()).collect()),
        }
    }

    fn control(&self, gains: &GainSet) -> Vec<Vec<f64>> {
        match self {
            Controllers::Full(cs) => cs.iter().map(|c| c.control(gains)).collect(),
            Controllers::Partial(cs) => cs.iter().map(|c| c.control(gains)).collect(),
        }
    }
}

fn build_controllers(cfg: &SimConfig) -> Controllers {
    let n_agents = cfg.n_agents();
    let (chi0, xhat0) = match &cfg.init.controllers {
        ControllerInit::Zero => (None, None),
        ControllerInit::Explicit { chi, xhat } => (Some(chi), xhat.as_ref()),
    };
    match cfg.mode {
        CouplingMode::FullState => Controllers::Full(
            (0..n_agents)
                .map(|i| {
                    let c = FullStateController::new(cfg.dims, cfg.roots.contains(i), cfg.bounds.get(i));
                    match chi0 {
                        Some(chi) => c.with_state(chi[i].clone()),
                        None => c,
                    }
                })
                .collect(),
        ),
        CouplingMode::PartialState => Controllers::Partial(
            (0..n_agents)
                .map(|i| {
                    let c = PartialStateController::new(cfg.dims, cfg.roots.contains(i), cfg.bounds.get(i));
                    let chi = chi0.map_or_else(|| c.chi.clone(), |chi| chi[i].clone());
                    let xhat = xhat0.map_or_else(|| c.xhat.clone(), |xh| xh[i].clone());
                    c.with_state(chi, xhat)
                })
                .collect(),
        ),
    }
}

/// Runs with the default (non-forcing) options.
pub fn run(cfg: &SimConfig) -> Result<Trajectory, SimError> {
    run_with(cfg, RunOptions::default())
}

pub fn run_with(cfg: &SimConfig, opts: RunOptions) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let gains = cfg.gains;
    if !gain_region_contains(gains.k1, gains.k2) {
        if !opts.force {
            return Err(SimError::GainRegion {
                k1: gains.k1,
                k2: gains.k2,
            });
        }
        warnings.push(format!(
            "forced run: gains ({}, {}) outside the admissible region",
            gains.k1, gains.k2
        ));
    }
    if cfg.mode == CouplingMode::PartialState {
        let rho = spectral_radius(&observer_matrix(cfg.dims, &gains))?;
        if rho >= 1.0 {
            if !opts.force {
                return Err(SimError::ObserverNotSchur(rho));
            }
            warnings.push(format!("forced run: rho(A - FC) = {rho} >= 1"));
        }
    }
    if !in_graph_set(&cfg.graph, &cfg.roots) {
        warnings.push("graph has nodes unreachable from the root set; convergence is not guaranteed".into());
    }

    let n_agents = cfg.n_agents();
    let (mut agents, mut exo) = cfg.initial_states();
    let mut controllers = build_controllers(cfg);
    let mut snapshots = Vec::with_capacity(cfg.steps / cfg.record_every + 2);
    let mut max_abs_input: f64 = 0.0;

    for t in 0..=cfg.steps {
        let u = controllers.control(&gains);
        let sat_u: Vec<Vec<f64>> = u.iter().map(|ui| saturate(ui)).collect();

        if t % cfg.record_every == 0 || t == cfg.steps {
            let x: Vec<Vec<f64>> = agents.iter().map(|a| a.x.clone()).collect();
            let sync_error_inf = sync_error_inf(&x, &exo.x);
            snapshots.push(Snapshot {
                t,
                x,
                x_r: exo.x.clone(),
                chi: controllers.chi(),
                xhat: controllers.xhat(),
                u: u.clone(),
                sat_u: sat_u.clone(),
                sync_error_inf,
            });
        }
        if t == cfg.steps {
            break;
        }
        max_abs_input = u.iter().flatten().fold(max_abs_input, |m, v| m.max(v.abs()));

        controllers = match controllers {
            Controllers::Full(cs) => {
                let ys: Vec<Vec<f64>> = agents.iter().map(|a| a.x.clone()).collect();
                let packets: Vec<ExchangePacket> = cs.iter().map(|c| c.broadcast()).collect();
                let next = cs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let zb = compute_zeta_bar(i, &ys, &exo.x, &cfg.graph, &cfg.roots, &cfg.bounds, cfg.zeta_bar_form);
                        let zh = compute_zeta_hat(i, &packets, &cfg.graph, &cfg.bounds)?;
                        c.advance(&zb, &zh.xi1, &sat_u[i])
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Controllers::Full(next)
            }
            Controllers::Partial(cs) => {
                let ys: Vec<Vec<f64>> = agents.iter().map(|a| output(&a.x).to_vec()).collect();
                let y_r = output(&exo.x);
                let packets: Vec<ExchangePacket> =
                    cs.iter().zip(&sat_u).map(|(c, s)| c.broadcast(s)).collect();
                let next = cs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let zb = compute_zeta_bar(i, &ys, y_r, &cfg.graph, &cfg.roots, &cfg.bounds, cfg.zeta_bar_form);
                        let zh = compute_zeta_hat(i, &packets, &cfg.graph, &cfg.bounds)?;
                        let zh2 = zh.xi2.unwrap_or_default();
                        c.step(&zb, &zh.xi1, &zh2, &sat_u[i], &gains).map(|(c, _)| c)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Controllers::Partial(next)
            }
        };
        agents = agents
            .iter()
            .zip(&sat_u)
            .map(|(a, s)| agent_step_saturated(a, s))
            .collect();
        exo = exo_step(&exo);
    }

    Ok(Trajectory {
        mode: cfg.mode,
        block: cfg.dims.n(),
        n_agents,
        steps: cfg.steps,
        record_every: cfg.record_every,
        snapshots,
        max_abs_input,
        warnings,
    })
}

pub const SYNC_THRESHOLDS: [f64; 3] = [1e-2, 1e-4, 1e-6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncMetrics {
    pub final_error: f64,
    /// First recorded tick with error below 1e-2, 1e-4 and 1e-6.
    pub first_below: [Option<usize>; 3],
    pub max_abs_input: f64,
}

pub fn sync_metrics(tr: &Trajectory) -> SyncMetrics {
    let final_error = tr.snapshots.last().map_or(0.0, |s| s.sync_error_inf);
    let first_below = SYNC_THRESHOLDS.map(|th| {
        tr.snapshots
            .iter()
            .find(|s| s.sync_error_inf < th)
            .map(|s| s.t)
    });
    SyncMetrics {
        final_error,
        first_below,
        max_abs_input: tr.max_abs_input,
    }
}
