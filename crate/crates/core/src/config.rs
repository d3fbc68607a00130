//! TOML run configuration.
//!
//! ```toml
//! mode = "partial-state"          # or "full-state"
//! roots = [1]                     # one-based node ids
//! bounds = [0, 1, 1]              # optional D̄_in per node, defaults to in-degrees
//!
//! [plant]
//! n = 1
//!
//! [graph]
//! nodes = 3
//! edges = [[1, 2, 1.0], [2, 3, 1.0]]   # [from, to, weight]
//!
//! [gains]
//! k1 = 0.5
//! k2 = 1.0
//! f1 = 1.5                        # optional
//! f2 = 0.5                        # optional
//!
//! [sim]                           # optional
//! steps = 5000
//! record_every = 1
//! seed = 7                        # or agent_states = [[..], ..] with exo_state = [..]
//! init_low = -10.0
//! init_high = 10.0
//! zeta_bar_form = "normalized"    # or "literal"
//!
//! [sim.controllers]               # optional, zero when absent
//! chi = [[0.0, 0.0], ...]
//! xhat = [[0.0, 0.0], ...]
//! ```
//!
//! Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::PlantDims;
use crate::graph::{DegreeBounds, Graph, RootSet};
use crate::protocol::{gain_region_contains, CouplingMode, GainSet, ZetaBarForm};
use crate::sim::{default_record_every, ControllerInit, InitialConditions, SimConfig, StateInit, DEFAULT_STEPS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: CouplingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    roots: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<Vec<f64>>,
    plant: RawPlant,
    graph: RawGraph,
    gains: RawGains,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sim: Option<RawSim>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    n: usize,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    nodes: usize,
    #[serde(default)]
    edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawGains {
    k1: f64,
    k2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f2: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    record_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    init_low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    init_high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    agent_states: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exo_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zeta_bar_form: Option<ZetaBarForm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    controllers: Option<RawControllers>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawControllers {
    chi: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xhat: Option<Vec<Vec<f64>>>,
}

fn line_col(doc: &str, offset: usize) -> (usize, usize) {
    let before = &doc[..offset.min(doc.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

/// Parses and fully validates a configuration document.
pub fn parse_config(document: &str) -> Result<SimConfig, ConfigError> {
    parse(document, true)
}

/// Like [`parse_config`] but accepts gains outside the admissible region,
/// for deliberately forced runs.
pub fn parse_config_forced(document: &str) -> Result<SimConfig, ConfigError> {
    parse(document, false)
}

fn parse(document: &str, check_gains: bool) -> Result<SimConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(document).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(document, s.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;

    let dims = PlantDims::new(raw.plant.n).map_err(|e| invalid("plant.n", e.to_string()))?;
    let nodes = raw.graph.nodes;
    if nodes == 0 {
        return Err(invalid("graph.nodes", "must be at least 1"));
    }
    let one_based = |field: &str, id: usize| -> Result<usize, ConfigError> {
        if id == 0 || id > nodes {
            return Err(invalid(field, format!("node id {id} outside 1..={nodes}")));
        }
        Ok(id - 1)
    };
    let edges = raw
        .graph
        .edges
        .iter()
        .map(|&(from, to, w)| Ok((one_based("graph.edges", from)?, one_based("graph.edges", to)?, w)))
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let graph = Graph::from_edges(nodes, &edges).map_err(|e| invalid("graph.edges", e.to_string()))?;

    let roots = raw.roots.ok_or_else(|| invalid("roots", "roots required"))?;
    let roots = roots
        .iter()
        .map(|&r| one_based("roots", r))
        .collect::<Result<Vec<_>, _>>()?;
    let roots = RootSet::new(nodes, roots).map_err(|_| invalid("roots", "roots required"))?;

    let bounds = match raw.bounds {
        Some(b) => DegreeBounds::new(&graph, b).map_err(|e| invalid("bounds", e.to_string()))?,
        None => DegreeBounds::tight(&graph),
    };

    let g = raw.gains;
    let gains = GainSet::new(g.k1, g.k2).with_observer(
        g.f1.unwrap_or(GainSet::DEFAULT_F1),
        g.f2.unwrap_or(GainSet::DEFAULT_F2),
    );
    if ![gains.k1, gains.k2, gains.f1, gains.f2].iter().all(|v| v.is_finite()) {
        return Err(invalid("gains", "gains must be finite"));
    }
    if check_gains && !gain_region_contains(gains.k1, gains.k2) {
        return Err(invalid(
            "gains",
            format!(
                "gain region: (k1, k2) = ({}, {}) needs 0 < k1 < 2, k2 > 0, (4 + k1 - 2k2)(3k1 - 2k2) < 0",
                gains.k1, gains.k2
            ),
        ));
    }

    let sim = raw.sim.unwrap_or_default();
    let states = match (sim.agent_states, sim.exo_state) {
        (Some(agents), Some(exo)) => {
            if sim.seed.is_some() {
                return Err(invalid("sim.seed", "seed and explicit agent_states are exclusive"));
            }
            StateInit::Explicit { agents, exo }
        }
        (Some(_), None) => return Err(invalid("sim.exo_state", "required with agent_states")),
        (None, Some(_)) => return Err(invalid("sim.agent_states", "required with exo_state")),
        (None, None) => StateInit::Seeded {
            seed: sim.seed.unwrap_or(0),
            low: sim.init_low.unwrap_or(-10.0),
            high: sim.init_high.unwrap_or(10.0),
        },
    };
    let controllers = match sim.controllers {
        Some(c) => ControllerInit::Explicit {
            chi: c.chi,
            xhat: c.xhat,
        },
        None => ControllerInit::Zero,
    };

    let cfg = SimConfig {
        dims,
        bounds,
        gains,
        mode: raw.mode,
        zeta_bar_form: sim.zeta_bar_form.unwrap_or_default(),
        steps: sim.steps.unwrap_or(DEFAULT_STEPS),
        record_every: sim.record_every.unwrap_or_else(|| default_record_every(nodes)),
        init: InitialConditions {
            states,
            controllers,
        },
        graph,
        roots,
    };
    cfg.validate().map_err(|e| invalid("sim", e.to_string()))?;
    Ok(cfg)
}

/// Renders a configuration back into the document format.
pub fn render_config(cfg: &SimConfig) -> String {
    let n = cfg.n_agents();
    let edges = (0..n)
        .flat_map(|i| cfg.graph.in_edges(i).map(move |(j, w)| (j + 1, i + 1, w)))
        .collect::<Vec<_>>();
    let mut edges = edges;
    edges.sort_by_key(|&(from, to, _)| (from, to));
    let (seed, init_low, init_high, agent_states, exo_state) = match &cfg.init.states {
        StateInit::Seeded { seed, low, high } => (Some(*seed), Some(*low), Some(*high), None, None),
        StateInit::Explicit { agents, exo } => (None, None, None, Some(agents.clone()), Some(exo.clone())),
    };
    let controllers = match &cfg.init.controllers {
        ControllerInit::Zero => None,
        ControllerInit::Explicit { chi, xhat } => Some(RawControllers {
            chi: chi.clone(),
            xhat: xhat.clone(),
        }),
    };
    let raw = RawConfig {
        mode: cfg.mode,
        roots: Some(cfg.roots.members().iter().map(|r| r + 1).collect()),
        bounds: Some(cfg.bounds.as_slice().to_vec()),
        plant: RawPlant { n: cfg.dims.n() },
        graph: RawGraph { nodes: n, edges },
        gains: RawGains {
            k1: cfg.gains.k1,
            k2: cfg.gains.k2,
            f1: Some(cfg.gains.f1),
            f2: Some(cfg.gains.f2),
        },
        sim: Some(RawSim {
            steps: Some(cfg.steps),
            record_every: Some(cfg.record_every),
            seed,
            init_low,
            init_high,
            agent_states,
            exo_state,
            zeta_bar_form: Some(cfg.zeta_bar_form),
            controllers,
        }),
    };
    toml::to_string(&raw).expect("configuration is always representable")
}
