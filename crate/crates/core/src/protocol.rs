//! The two scale-free linear dynamic protocols.
//!
//! A controller is built from purely local data: the block size, whether
//! the agent is a root (`ι_i`) and its own in-degree bound `D̄_in(i)`.
//! Network-weighted quantities (`ζ̄_i`, `ζ̂_i`) are computed by the
//! communication layer and handed to the controller each tick.
//!
//! With full-state coupling agent `i` runs
//!
//! ```text
//! u_i     = −K χ_i
//! χ_i(+)  = A χ_i + B σ(u_i) + A ζ̄_i − A ζ̂_i − ι_i/(2+D̄_in(i)) A χ_i
//! ```
//!
//! and broadcasts `ξ_i = χ_i`. With partial-state coupling an observer
//! state `x̂_i` is added:
//!
//! ```text
//! x̂_i(+)  = (A − FC) x̂_i + B ζ̂_i2 + F ζ̄_i + ι_i/(2+D̄_in(i)) B σ(u_i)
//! χ_i(+)  = A χ_i + B σ(u_i) + A x̂_i − A ζ̂_i1 − ι_i/(2+D̄_in(i)) A χ_i
//! ```
//!
//! and `ξ_i = (χ_i, σ(u_i))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{apply_a, saturate, PlantDims};
use crate::graph::{DegreeBounds, Graph, RootSet};
use crate::linalg::Matrix;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("broadcast {index} has shape ({got1}, {got2:?}), expected ({want1}, {want2:?})")]
    PacketShape {
        index: usize,
        got1: usize,
        got2: Option<usize>,
        want1: usize,
        want2: Option<usize>,
    },
    #[error("expected {expected} broadcasts, got {got}")]
    PacketCount { expected: usize, got: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ProtocolError> {
    if expected != got {
        return Err(ProtocolError::Length {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Feedback gains `K = [k1 I, k2 I]` and observer gains `F = [f1 I; f2 I]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub k1: f64,
    pub k2: f64,
    pub f1: f64,
    pub f2: f64,
}

impl GainSet {
    pub const DEFAULT_F1: f64 = 1.5;
    pub const DEFAULT_F2: f64 = 0.5;

    /// Feedback gains with the default observer `F = (1.5, 0.5)`, which
    /// places the eigenvalues of `A − FC` at `{0, 0.5}` for `n = 1`.
    pub fn new(k1: f64, k2: f64) -> Self {
        Self {
            k1,
            k2,
            f1: Self::DEFAULT_F1,
            f2: Self::DEFAULT_F2,
        }
    }

    pub fn with_observer(mut self, f1: f64, f2: f64) -> Self {
        self.f1 = f1;
        self.f2 = f2;
        self
    }

    /// `u = −K χ`
    pub fn feedback(&self, chi: &[f64]) -> Vec<f64> {
        let n = chi.len() / 2;
        (0..n)
            .map(|j| -(self.k1 * chi[j] + self.k2 * chi[n + j]))
            .collect()
    }
}

/// The open triangle with vertices (0,0), (0,2), (2,3):
/// `0 < k1 < 2`, `k2 > 0`, `(4 + k1 − 2k2)(3k1 − 2k2) < 0`.
pub fn gain_region_contains(k1: f64, k2: f64) -> bool {
    0.0 < k1 && k1 < 2.0 && k2 > 0.0 && (4.0 + k1 - 2.0 * k2) * (3.0 * k1 - 2.0 * k2) < 0.0
}

/// `A − FC` for the given block size.
pub fn observer_matrix(dims: PlantDims, gains: &GainSet) -> Matrix {
    let n = dims.n();
    let mut m = dims.a_matrix();
    for j in 0..n {
        m[(j, j)] -= gains.f1;
        m[(n + j, j)] -= gains.f2;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    /// `C = I`: agents exchange full relative states.
    FullState,
    /// `C = [I, 0]`: only positions are measured; an observer is added.
    PartialState,
}

/// Where the `ι_i (y_i − y_r)` term sits relative to the `1/(2 + D̄_in(i))` factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZetaBarForm {
    /// Whole sum scaled, i.e. `1/(2+D̄_in(i)) Σ_j ℓ̄_ij (y_j − y_r)`. The closed
    /// loop error dynamics are exactly `D̄ ⊗ A` only in this form.
    #[default]
    Normalized,
    /// Only the neighbour differences are scaled; the root term enters
    /// with unit weight.
    Literal,
}

/// `ζ̄_i`, the relative-output measurement delivered by the network.
pub fn compute_zeta_bar(
    i: usize,
    outputs: &[Vec<f64>],
    y_r: &[f64],
    g: &Graph,
    roots: &RootSet,
    bounds: &DegreeBounds,
    form: ZetaBarForm,
) -> Vec<f64> {
    let y_i = &outputs[i];
    let mut zeta = vec![0.0; y_i.len()];
    for (j, a) in g.in_edges(i) {
        for (z, (yi, yj)) in zeta.iter_mut().zip(y_i.iter().zip(&outputs[j])) {
            *z += a * (yi - yj);
        }
    }
    let w = bounds.normalizer(i);
    let root_weight = match form {
        ZetaBarForm::Normalized => w,
        ZetaBarForm::Literal => 1.0,
    };
    let iota = roots.indicator(i);
    for (z, (yi, yr)) in zeta.iter_mut().zip(y_i.iter().zip(y_r)) {
        *z = w * *z + root_weight * iota * (yi - yr);
    }
    zeta
}

/// `ζ̄_i = 1/(2+D̄_in(i)) Σ_j ℓ̄_ij (y_j − y_r)`, read off a row of `L̄`.
///
/// Independent of [`compute_zeta_bar`]; agrees with its normalized form.
pub fn compute_zeta_bar_expanded(
    i: usize,
    outputs: &[Vec<f64>],
    y_r: &[f64],
    lbar: &Matrix,
    bounds: &DegreeBounds,
) -> Vec<f64> {
    let w = bounds.normalizer(i);
    (0..y_r.len())
        .map(|k| {
            let s: f64 = outputs
                .iter()
                .enumerate()
                .map(|(j, y)| lbar[(i, j)] * (y[k] - y_r[k]))
                .sum();
            w * s
        })
        .collect()
}

/// What each agent broadcasts to its neighbours: `ξ_i1 = χ_i`, and in
/// partial-state mode `ξ_i2 = σ(u_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangePacket {
    pub xi1: Vec<f64>,
    pub xi2: Option<Vec<f64>>,
}

impl ExchangePacket {
    fn shape(&self) -> (usize, Option<usize>) {
        (self.xi1.len(), self.xi2.as_ref().map(Vec::len))
    }
}

/// `ζ̂_i = 1/(2+D̄_in(i)) Σ_j a_ij (ξ_i − ξ_j)`, blockwise.
pub fn compute_zeta_hat(
    i: usize,
    packets: &[ExchangePacket],
    g: &Graph,
    bounds: &DegreeBounds,
) -> Result<ExchangePacket, ProtocolError> {
    if packets.len() != g.n_nodes() {
        return Err(ProtocolError::PacketCount {
            expected: g.n_nodes(),
            got: packets.len(),
        });
    }
    let own = &packets[i];
    let (want1, want2) = own.shape();
    for (index, p) in packets.iter().enumerate() {
        let (got1, got2) = p.shape();
        if (got1, got2) != (want1, want2) {
            return Err(ProtocolError::PacketShape {
                index,
                got1,
                got2,
                want1,
                want2,
            });
        }
    }
    let w = bounds.normalizer(i);
    let weighted_diff = |own: &[f64], pick: &dyn Fn(&ExchangePacket) -> &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0; own.len()];
        for (j, a) in g.in_edges(i) {
            for (z, (xi, xj)) in acc.iter_mut().zip(own.iter().zip(pick(&packets[j]))) {
                *z += a * (xi - xj);
            }
        }
        acc.iter().map(|z| w * z).collect()
    };
    let xi1 = weighted_diff(&own.xi1, &|p| &p.xi1);
    let xi2 = own
        .xi2
        .as_ref()
        .map(|own2| weighted_diff(own2, &|p| p.xi2.as_deref().unwrap_or(&[])));
    Ok(ExchangePacket { xi1, xi2 })
}

/// Controller of agent `i` under full-state coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct FullStateController {
    pub chi: Vec<f64>,
    pub iota: bool,
    pub dbar_in: f64,
}

impl FullStateController {
    /// Zero-initialized controller. Takes only local data.
    pub fn new(dims: PlantDims, iota: bool, dbar_in: f64) -> Self {
        Self {
            chi: vec![0.0; dims.state_len()],
            iota,
            dbar_in,
        }
    }

    pub fn with_state(mut self, chi: Vec<f64>) -> Self {
        self.chi = chi;
        self
    }

    fn root_gain(&self) -> f64 {
        if self.iota {
            1.0 / (2.0 + self.dbar_in)
        } else {
            0.0
        }
    }

    pub fn control(&self, gains: &GainSet) -> Vec<f64> {
        gains.feedback(&self.chi)
    }

    pub fn broadcast(&self) -> ExchangePacket {
        ExchangePacket {
            xi1: self.chi.clone(),
            xi2: None,
        }
    }

    /// Computes `u` from the current `χ`, then advances `χ`.
    pub fn step(
        &self,
        zeta_bar: &[f64],
        zeta_hat: &[f64],
        gains: &GainSet,
    ) -> Result<(Self, Vec<f64>), ProtocolError> {
        let u = self.control(gains);
        let next = self.advance(zeta_bar, zeta_hat, &saturate(&u))?;
        Ok((next, u))
    }

    /// Advances `χ` given the already saturated input `σ(u_i)`.
    pub fn advance(
        &self,
        zeta_bar: &[f64],
        zeta_hat: &[f64],
        sat_u: &[f64],
    ) -> Result<Self, ProtocolError> {
        let len = self.chi.len();
        let n = len / 2;
        check_len("zeta_bar", len, zeta_bar.len())?;
        check_len("zeta_hat", len, zeta_hat.len())?;
        check_len("saturated input", n, sat_u.len())?;
        let rg = self.root_gain();
        let inner: Vec<f64> = (0..len)
            .map(|k| self.chi[k] + zeta_bar[k] - zeta_hat[k] - rg * self.chi[k])
            .collect();
        let mut chi = apply_a(&inner);
        for (c, s) in chi[n..].iter_mut().zip(sat_u) {
            *c += s;
        }
        Ok(Self {
            chi,
            iota: self.iota,
            dbar_in: self.dbar_in,
        })
    }
}

/// Controller of agent `i` under partial-state coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialStateController {
    pub chi: Vec<f64>,
    pub xhat: Vec<f64>,
    pub iota: bool,
    pub dbar_in: f64,
}

impl PartialStateController {
    /// Zero-initialized controller. Takes only local data.
    pub fn new(dims: PlantDims, iota: bool, dbar_in: f64) -> Self {
        Self {
            chi: vec![0.0; dims.state_len()],
            xhat: vec![0.0; dims.state_len()],
            iota,
            dbar_in,
        }
    }

    pub fn with_state(mut self, chi: Vec<f64>, xhat: Vec<f64>) -> Self {
        self.chi = chi;
        self.xhat = xhat;
        self
    }

    fn root_gain(&self) -> f64 {
        if self.iota {
            1.0 / (2.0 + self.dbar_in)
        } else {
            0.0
        }
    }

    pub fn control(&self, gains: &GainSet) -> Vec<f64> {
        gains.feedback(&self.chi)
    }

    pub fn broadcast(&self, sat_u: &[f64]) -> ExchangePacket {
        ExchangePacket {
            xi1: self.chi.clone(),
            xi2: Some(sat_u.to_vec()),
        }
    }

    /// Advances `(x̂, χ)` with the already saturated own input `σ(u_i)`
    /// and returns the input `u_i = −K χ_i` that was in force.
    pub fn step(
        &self,
        zeta_bar: &[f64],
        zeta_hat1: &[f64],
        zeta_hat2: &[f64],
        sat_u: &[f64],
        gains: &GainSet,
    ) -> Result<(Self, Vec<f64>), ProtocolError> {
        let len = self.chi.len();
        let n = len / 2;
        check_len("zeta_bar", n, zeta_bar.len())?;
        check_len("zeta_hat1", len, zeta_hat1.len())?;
        check_len("zeta_hat2", n, zeta_hat2.len())?;
        check_len("saturated input", n, sat_u.len())?;
        let u = self.control(gains);
        let rg = self.root_gain();

        let mut xhat = vec![0.0; len];
        for j in 0..n {
            let (p, v) = (self.xhat[j], self.xhat[n + j]);
            xhat[j] = p + v - gains.f1 * p + gains.f1 * zeta_bar[j];
            xhat[n + j] = v - gains.f2 * p + gains.f2 * zeta_bar[j] + zeta_hat2[j] + rg * sat_u[j];
        }

        let inner: Vec<f64> = (0..len)
            .map(|k| self.chi[k] + self.xhat[k] - zeta_hat1[k] - rg * self.chi[k])
            .collect();
        let mut chi = apply_a(&inner);
        for (c, s) in chi[n..].iter_mut().zip(sat_u) {
            *c += s;
        }
        Ok((
            Self {
                chi,
                xhat,
                iota: self.iota,
                dbar_in: self.dbar_in,
            },
            u,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::cases::case_i;
    use crate::graph::{build_laplacian, expand_laplacian};
    use crate::linalg::{matrix_from_rows, spectral_radius};

    fn dims1() -> PlantDims {
        PlantDims::new(1).unwrap()
    }

    #[test]
    fn gain_region_examples() {
        assert!(gain_region_contains(0.5, 1.0));
        assert!(!gain_region_contains(1.0, 0.5));
        assert!(!gain_region_contains(2.0, 3.0));
        assert!(gain_region_contains(1.0, 2.0));
        assert!(gain_region_contains(1.5, 2.5));
        assert!(!gain_region_contains(0.0, 1.0));
        assert!(!gain_region_contains(1.9, 5.0));
        assert!(!gain_region_contains(1.0, -1.0));
    }

    #[test]
    fn zeta_bar_examples() {
        let g = case_i();
        let roots = RootSet::new(3, [0]).unwrap();
        let bounds = DegreeBounds::tight(&g);
        let y = vec![vec![4.0], vec![4.0], vec![4.0]];
        for form in [ZetaBarForm::Normalized, ZetaBarForm::Literal] {
            for i in 0..3 {
                assert_eq!(compute_zeta_bar(i, &y, &[4.0], &g, &roots, &bounds, form), vec![0.0]);
            }
        }
        let y = vec![vec![1.0], vec![2.0], vec![0.0]];
        let z = compute_zeta_bar(1, &y, &[0.0], &g, &roots, &bounds, ZetaBarForm::Normalized);
        assert!((z[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zeta_bar_root_without_in_edges() {
        // ι = 1, D̄_in = 0, y_i − y_r = 1
        let g = Graph::empty(1).unwrap();
        let roots = RootSet::new(1, [0]).unwrap();
        let bounds = DegreeBounds::tight(&g);
        let y = vec![vec![1.0]];
        let literal = compute_zeta_bar(0, &y, &[0.0], &g, &roots, &bounds, ZetaBarForm::Literal);
        assert_eq!(literal, vec![1.0]);
        let normalized =
            compute_zeta_bar(0, &y, &[0.0], &g, &roots, &bounds, ZetaBarForm::Normalized);
        assert_eq!(normalized, vec![0.5]);
    }

    #[test]
    fn zeta_bar_routes_agree_on_case_i() {
        let g = case_i();
        let roots = RootSet::new(3, [0]).unwrap();
        let bounds = DegreeBounds::tight(&g);
        let lbar = expand_laplacian(&build_laplacian(&g), &roots);
        let y = vec![vec![1.5, -2.0], vec![0.25, 3.0], vec![-7.0, 0.5]];
        let yr = [0.75, -0.125];
        for i in 0..3 {
            let a = compute_zeta_bar(i, &y, &yr, &g, &roots, &bounds, ZetaBarForm::Normalized);
            let b = compute_zeta_bar_expanded(i, &y, &yr, &lbar, &bounds);
            for (x, z) in a.iter().zip(&b) {
                assert!((x - z).abs() < 1e-12);
            }
        }
    }

    fn scalar_packets(values: &[f64]) -> Vec<ExchangePacket> {
        values
            .iter()
            .map(|&v| ExchangePacket {
                xi1: vec![v],
                xi2: None,
            })
            .collect()
    }

    #[test]
    fn zeta_hat_examples() {
        let g = case_i();
        let bounds = DegreeBounds::tight(&g);
        let same = scalar_packets(&[2.0, 2.0, 2.0]);
        for i in 0..3 {
            assert_eq!(compute_zeta_hat(i, &same, &g, &bounds).unwrap().xi1, vec![0.0]);
        }
        let p = scalar_packets(&[0.0, 0.0, 1.0]);
        let z = compute_zeta_hat(2, &p, &g, &bounds).unwrap();
        assert!((z.xi1[0] - 1.0 / 3.0).abs() < 1e-15);
        // node 1 has no in-edges
        assert_eq!(compute_zeta_hat(0, &p, &g, &bounds).unwrap().xi1, vec![0.0]);
    }

    #[test]
    fn zeta_hat_shape_errors() {
        let g = case_i();
        let bounds = DegreeBounds::tight(&g);
        let mut p = scalar_packets(&[0.0, 1.0, 2.0]);
        p[1].xi2 = Some(vec![0.0]);
        assert!(matches!(
            compute_zeta_hat(0, &p, &g, &bounds),
            Err(ProtocolError::PacketShape { index: 1, .. })
        ));
        assert!(matches!(
            compute_zeta_hat(0, &p[..2], &g, &bounds),
            Err(ProtocolError::PacketCount { .. })
        ));
    }

    #[test]
    fn zeta_hat_blockwise_in_partial_mode() {
        let g = case_i();
        let bounds = DegreeBounds::tight(&g);
        let p: Vec<_> = [(1.0, 0.5), (3.0, -1.0), (0.0, 1.0)]
            .iter()
            .map(|&(c, s)| ExchangePacket {
                xi1: vec![c, 0.0],
                xi2: Some(vec![s]),
            })
            .collect();
        let z = compute_zeta_hat(1, &p, &g, &bounds).unwrap();
        assert!((z.xi1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((z.xi2.unwrap()[0] - (-1.5 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn full_state_step_examples() {
        let gains = GainSet::new(0.5, 1.0);
        let c = FullStateController::new(dims1(), false, 0.0);
        let (next, u) = c.step(&[0.0, 0.0], &[0.0, 0.0], &gains).unwrap();
        assert_eq!(next.chi, vec![0.0, 0.0]);
        assert_eq!(u, vec![0.0]);

        let c = c.with_state(vec![1.0, 0.0]);
        let (next, u) = c.step(&[0.0, 0.0], &[0.0, 0.0], &gains).unwrap();
        assert_eq!(u, vec![-0.5]);
        assert_eq!(next.chi, vec![1.0, -0.5]);
    }

    #[test]
    fn full_state_single_agent_matches_error_oracle() {
        // N = 1, S = {1}: D̄ = 1 − 1/2 = 1/2, so e(t+1) = (A/2) e(t).
        let gains = GainSet::new(1.0, 2.0);
        let mut ctrl = FullStateController::new(dims1(), true, 0.0);
        let mut x = vec![3.0, -1.0];
        let mut xr = vec![0.5, 0.25];
        let mut e: Vec<f64> = vec![x[0] - xr[0], x[1] - xr[1]];
        for _ in 0..60 {
            let xt: Vec<f64> = x.iter().zip(&xr).map(|(a, b)| a - b).collect();
            let zeta_bar: Vec<f64> = xt.iter().map(|v| 0.5 * v).collect();
            let (next, u) = ctrl.step(&zeta_bar, &[0.0, 0.0], &gains).unwrap();
            let s = u[0].clamp(-1.0, 1.0);
            x = vec![x[0] + x[1], x[1] + s];
            xr = vec![xr[0] + xr[1], xr[1]];
            ctrl = next;
            e = vec![0.5 * (e[0] + e[1]), 0.5 * e[1]];
            for k in 0..2 {
                let rec = x[k] - xr[k] - ctrl.chi[k];
                assert!((rec - e[k]).abs() < 1e-12, "{rec} vs {}", e[k]);
            }
        }
    }

    #[test]
    fn partial_state_step_examples() {
        let gains = GainSet::new(0.5, 1.0);
        let c = PartialStateController::new(dims1(), false, 1.0);
        let (next, u) = c.step(&[0.0], &[0.0, 0.0], &[0.0], &[0.0], &gains).unwrap();
        assert_eq!((next.chi.clone(), next.xhat.clone(), u), (vec![0.0; 2], vec![0.0; 2], vec![0.0]));

        let c = c.with_state(vec![0.0, 0.0], vec![1.0, 0.0]);
        let (next, _) = c.step(&[0.0], &[0.0, 0.0], &[0.0], &[0.0], &gains).unwrap();
        assert_eq!(next.xhat, vec![-0.5, -0.5]);
    }

    #[test]
    fn observer_matrix_default_gains() {
        let m = observer_matrix(dims1(), &GainSet::new(0.5, 1.0));
        assert_eq!(m, matrix_from_rows(2, 2, &[-0.5, 1.0, -0.5, 1.0]).unwrap());
        assert!((spectral_radius(&m).unwrap() - 0.5).abs() < 1e-8);
    }

    #[test]
    fn feedback_is_linear() {
        let g = GainSet::new(1.5, 2.5);
        let chi = [0.3, -1.7, 2.0, 0.1];
        let u = g.feedback(&chi);
        let scaled: Vec<f64> = chi.iter().map(|c| 4.0 * c).collect();
        let us = g.feedback(&scaled);
        for (a, b) in u.iter().zip(&us) {
            assert_eq!(4.0 * a, *b);
        }
    }
}
