//! Numerical certification of the convergence argument.
//!
//! [`certify`] checks every hypothesis the synchronization guarantee rests
//! on and builds the ingredients of the Lyapunov function
//!
//! ```text
//! V  = (1 − h) V1 + h V2
//! V1 = Σ [σ(u); x̃_II]ᵀ [[1 + k1/2, k1], [k1, k1]] [σ(u); x̃_II] + 2 σ(u)ᵀ(u − σ(u))
//! V2 = eᵀ P_D e,   (D̄⊗A)ᵀ P_D (D̄⊗A) − P_D = −2I
//! ```
//!
//! where `e = x̃ − χ`. [`lyapunov_trace`] evaluates `V` along a recorded
//! full-state trajectory.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{in_graph_set, NetworkMatrices};
use crate::linalg::{
    kron, min_symmetric_eigenvalue, solve_discrete_lyapunov, spectral_norm, spectral_radius,
    Matrix, TOLERANCES,
};
use crate::protocol::{gain_region_contains, observer_matrix, CouplingMode};
use crate::sim::{SimConfig, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("configuration is not certified: {}", .0.join("; "))]
    NotCertified(Vec<String>),
    #[error("Lyapunov trace needs every tick recorded, got record_every = {0}")]
    RecordEvery(usize),
    #[error("trajectory does not match configuration: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificationReport {
    pub mode: CouplingMode,
    pub n_agents: usize,
    pub graph_in_set: bool,
    pub gains_in_region: bool,
    pub rho_dbar: Option<f64>,
    #[serde(rename = "rho_dbarA")]
    pub rho_dbar_a: Option<f64>,
    /// Only checked in partial-state mode.
    #[serde(rename = "rho_AmFC")]
    pub rho_a_minus_fc: Option<f64>,
    pub pd_residual: Option<f64>,
    pub pd_min_eig: Option<f64>,
    /// `‖D̄⊗A − I‖₂`
    pub psi_norm: Option<f64>,
    pub h_found: Option<f64>,
    /// Eigenvalues of Φ at `h_found`, or near `h = 1` when no `h` was found.
    pub phi_eigs: Option<[f64; 2]>,
    pub passed: bool,
    pub failures: Vec<String>,
    #[serde(skip)]
    pub p_d: Option<Matrix>,
}

impl CertificationReport {
    pub fn overall(&self) -> &'static str {
        if self.passed {
            "pass"
        } else {
            "fail"
        }
    }
}

/// Φ from the decrease estimate of `V`, for `h ∈ (0, 1)`.
pub fn phi_matrix(k1: f64, k2: f64, h: f64, psi_norm: f64) -> [[f64; 2]; 2] {
    let coupling = 1.0 + k1 - k2;
    let diag = -1.0 + k1 / 2.0;
    let leak = psi_norm * psi_norm * (1.0 - h) * (k1 * k1 + k2 * k2) / h;
    [[diag + leak, coupling], [coupling, diag]]
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn symmetric_eigs_2x2(m: [[f64; 2]; 2]) -> [f64; 2] {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half_gap = 0.5 * (m[0][0] - m[1][1]);
    let r = half_gap.hypot(m[0][1]);
    [mean - r, mean + r]
}

/// Smallest `h` on the grid `1 − 2^−j`, `j = 1..=40`, making Φ negative definite.
pub fn find_h(k1: f64, k2: f64, psi_norm: f64) -> Option<f64> {
    (1..=40)
        .map(|j| 1.0 - 0.5f64.powi(j))
        .find(|&h| symmetric_eigs_2x2(phi_matrix(k1, k2, h, psi_norm))[1] < -TOLERANCES.phi_margin)
}

pub fn certify(cfg: &SimConfig) -> CertificationReport {
    let mut failures = Vec::new();
    let graph_in_set = in_graph_set(&cfg.graph, &cfg.roots);
    if !graph_in_set {
        failures.push("graph set: some node is unreachable from the root set".to_string());
    }
    let (k1, k2) = (cfg.gains.k1, cfg.gains.k2);
    let gains_in_region = gain_region_contains(k1, k2);
    if !gains_in_region {
        failures.push(format!("gain region: ({k1}, {k2}) violates the gain conditions"));
    }

    let net = NetworkMatrices::new(&cfg.graph, &cfg.roots, &cfg.bounds);
    let a = cfg.dims.a_matrix();
    let closed = kron(&net.dbar, &a);

    let mut schur_check = |label: &str, m: &Matrix| match spectral_radius(m) {
        Ok(rho) => {
            if rho >= 1.0 {
                failures.push(format!("{label} not Schur: spectral radius {rho}"));
            }
            Some(rho)
        }
        Err(e) => {
            failures.push(format!("{label}: {e}"));
            None
        }
    };
    let rho_dbar = schur_check("dbar", &net.dbar);
    let rho_dbar_a = schur_check("dbar (x) A", &closed);
    let rho_a_minus_fc = match cfg.mode {
        CouplingMode::PartialState => schur_check("A - FC", &observer_matrix(cfg.dims, &cfg.gains)),
        CouplingMode::FullState => None,
    };

    let dim = closed.nrows();
    let (p_d, pd_residual, pd_min_eig) =
        match solve_discrete_lyapunov(&closed, &(Matrix::identity(dim, dim) * 2.0)) {
            Ok(sol) => {
                let min_eig = min_symmetric_eigenvalue(&sol.p).ok();
                if !min_eig.is_some_and(|m| m > 0.0) {
                    failures.push("P_D: not positive definite".to_string());
                }
                (Some(sol.p), Some(sol.residual), min_eig)
            }
            Err(e) => {
                failures.push(format!("P_D: {e}"));
                (None, None, None)
            }
        };

    let psi = &closed - Matrix::identity(dim, dim);
    let psi_norm = match spectral_norm(&psi) {
        Ok(v) => Some(v),
        Err(e) => {
            failures.push(format!("psi norm: {e}"));
            None
        }
    };

    let mut h_found = None;
    let mut phi_eigs = None;
    if let Some(psi_norm) = psi_norm {
        if gains_in_region {
            h_found = find_h(k1, k2, psi_norm);
            if h_found.is_none() {
                failures.push("phi: no h on the search grid makes phi negative definite".to_string());
            }
        }
        let h = h_found.unwrap_or(1.0 - 0.5f64.powi(40));
        phi_eigs = Some(symmetric_eigs_2x2(phi_matrix(k1, k2, h, psi_norm)));
    }

    CertificationReport {
        mode: cfg.mode,
        n_agents: cfg.n_agents(),
        graph_in_set,
        gains_in_region,
        rho_dbar,
        rho_dbar_a,
        rho_a_minus_fc,
        pd_residual,
        pd_min_eig,
        psi_norm,
        h_found,
        phi_eigs,
        passed: failures.is_empty(),
        failures,
        p_d,
    }
}

/// `V1`, `V2`, `V` per recorded tick and `ΔV(t) = V(t+1) − V(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovTrace {
    pub h: f64,
    pub t: Vec<usize>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub v: Vec<f64>,
    /// One shorter than `v`.
    pub delta_v: Vec<f64>,
}

/// Evaluates the certified Lyapunov function along `tr`.
///
/// The decrease guarantee belongs to full-state coupling; on partial-state
/// trajectories the same function is evaluated but `e` also carries the
/// observer error, so monotonicity is not implied.
pub fn lyapunov_trace(
    tr: &Trajectory,
    report: &CertificationReport,
    cfg: &SimConfig,
) -> Result<LyapunovTrace, AnalysisError> {
    if !report.passed {
        return Err(AnalysisError::NotCertified(report.failures.clone()));
    }
    if tr.record_every != 1 {
        return Err(AnalysisError::RecordEvery(tr.record_every));
    }
    let (Some(p_d), Some(h)) = (&report.p_d, report.h_found) else {
        return Err(AnalysisError::NotCertified(vec!["missing P_D or h".into()]));
    };
    let n = cfg.dims.n();
    let len = 2 * n;
    if tr.n_agents != cfg.n_agents() || tr.block != n || p_d.nrows() != tr.n_agents * len {
        return Err(AnalysisError::Mismatch(format!(
            "{} agents of block {} against a {}x{} P_D",
            tr.n_agents,
            tr.block,
            p_d.nrows(),
            p_d.ncols()
        )));
    }
    let chol = p_d
        .clone()
        .cholesky()
        .ok_or_else(|| AnalysisError::NotCertified(vec!["P_D is not positive definite".into()]))?;
    let lower_t = chol.l().transpose();

    let k1 = cfg.gains.k1;
    // [[a, b], [b, c]] = [[1 + k1/2, k1], [k1, k1]], written as a sum of squares
    let (a, b, c) = (1.0 + k1 / 2.0, k1, k1);
    let ratio = b / a;
    let schur = c - b * b / a;

    let mut out = LyapunovTrace {
        h,
        t: Vec::with_capacity(tr.snapshots.len()),
        v1: Vec::with_capacity(tr.snapshots.len()),
        v2: Vec::with_capacity(tr.snapshots.len()),
        v: Vec::with_capacity(tr.snapshots.len()),
        delta_v: Vec::with_capacity(tr.snapshots.len()),
    };
    for snap in &tr.snapshots {
        let mut v1 = 0.0;
        for i in 0..tr.n_agents {
            for j in 0..n {
                let s = snap.sat_u[i][j];
                let u = snap.u[i][j];
                let vel = snap.x[i][n + j] - snap.x_r[n + j];
                let r = s + ratio * vel;
                v1 += a * r * r + schur * vel * vel + 2.0 * s * (u - s);
            }
        }
        let e = DVector::from_iterator(
            tr.n_agents * len,
            (0..tr.n_agents)
                .flat_map(|i| (0..len).map(move |k| (i, k)))
                .map(|(i, k)| snap.x[i][k] - snap.x_r[k] - snap.chi[i][k]),
        );
        let v2 = (&lower_t * e).norm_squared();
        out.t.push(snap.t);
        out.v1.push(v1);
        out.v2.push(v2);
        out.v.push((1.0 - h) * v1 + h * v2);
    }
    out.delta_v = out.v.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(out)
}
