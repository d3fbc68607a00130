//! Saturated double-integrator agents and the exosystem.
//!
//! A state in `R^{2n}` is stored as `[x_I; x_II]` (position block, then
//! velocity block). `A = [[I, I], [0, I]]`, `B = [0; I]`, `C = [I, 0]`.

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DynamicsError {
    #[error("block size n must be at least 1")]
    ZeroBlock,
    #[error("{what}: expected length {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Block size `n`; agent states live in `R^{2n}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantDims {
    n: usize,
}

impl PlantDims {
    pub fn new(n: usize) -> Result<Self, DynamicsError> {
        if n == 0 {
            return Err(DynamicsError::ZeroBlock);
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn state_len(&self) -> usize {
        2 * self.n
    }

    pub fn check(&self, what: &'static str, expected: usize, got: usize) -> Result<(), DynamicsError> {
        if expected != got {
            return Err(DynamicsError::Length {
                what,
                expected,
                got,
            });
        }
        Ok(())
    }

    pub fn a_matrix(&self) -> Matrix {
        let n = self.n;
        Matrix::from_fn(2 * n, 2 * n, |i, j| {
            if i == j || (i < n && j == i + n) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn b_matrix(&self) -> Matrix {
        let n = self.n;
        Matrix::from_fn(2 * n, n, |i, j| if i == j + n { 1.0 } else { 0.0 })
    }

    pub fn c_matrix(&self) -> Matrix {
        let n = self.n;
        Matrix::from_fn(n, 2 * n, |i, j| if i == j { 1.0 } else { 0.0 })
    }
}

/// `sat(w) = sgn(w) min(1, |w|)`, zero mapping to zero.
pub fn sat(w: f64) -> f64 {
    w.clamp(-1.0, 1.0)
}

/// Componentwise saturation `σ`.
pub fn saturate(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&w| sat(w)).collect()
}

/// `A x`: position accumulates velocity.
pub fn apply_a(x: &[f64]) -> Vec<f64> {
    let n = x.len() / 2;
    let (pos, vel) = x.split_at(n);
    pos.iter()
        .zip(vel)
        .map(|(p, v)| p + v)
        .chain(vel.iter().copied())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: Vec<f64>,
}

impl AgentState {
    pub fn new(dims: PlantDims, x: Vec<f64>) -> Result<Self, DynamicsError> {
        dims.check("agent state", dims.state_len(), x.len())?;
        Ok(Self { x })
    }

    pub fn position(&self) -> &[f64] {
        &self.x[..self.x.len() / 2]
    }

    pub fn velocity(&self) -> &[f64] {
        &self.x[self.x.len() / 2..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExoState {
    pub x: Vec<f64>,
}

impl ExoState {
    pub fn new(dims: PlantDims, x: Vec<f64>) -> Result<Self, DynamicsError> {
        dims.check("exosystem state", dims.state_len(), x.len())?;
        Ok(Self { x })
    }
}

/// One plant step `x' = A x + B σ(u)`.
pub fn agent_step(s: &AgentState, u: &[f64]) -> Result<AgentState, DynamicsError> {
    let n = s.x.len() / 2;
    if u.len() != n {
        return Err(DynamicsError::Length {
            what: "input",
            expected: n,
            got: u.len(),
        });
    }
    Ok(agent_step_saturated(s, &saturate(u)))
}

/// Plant step with an input that has already been saturated.
pub(crate) fn agent_step_saturated(s: &AgentState, sat_u: &[f64]) -> AgentState {
    let n = s.x.len() / 2;
    let mut x = apply_a(&s.x);
    for (xv, su) in x[n..].iter_mut().zip(sat_u) {
        *xv += su;
    }
    AgentState { x }
}

pub fn exo_step(s: &ExoState) -> ExoState {
    ExoState { x: apply_a(&s.x) }
}

/// `y = C x`, the position block.
pub fn output(x: &[f64]) -> &[f64] {
    &x[..x.len() / 2]
}
