//! Run artifacts: trajectory and metrics CSV, certification reports,
//! the run manifest, and the orchestration shared by the CLI subcommands.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::PlantDims;
use crate::analysis::{certify, lyapunov_trace, AnalysisError, CertificationReport, LyapunovTrace};
use crate::config::render_config;
use crate::graph::{cases, RootSet};
use crate::protocol::{CouplingMode, GainSet};
use crate::sim::{run_with, sync_metrics, RunOptions, SimConfig, SimError, StateInit, SyncMetrics, Trajectory, SYNC_THRESHOLDS};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("unknown case `{0}` (expected I, II or III)")]
    UnknownCase(String),
    #[error("unknown gain set {0} (expected 1, 2 or 3)")]
    UnknownGains(usize),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trajectory_header(block: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "agent_id".to_string()];
    cols.extend((1..=2 * block).map(|k| format!("x_{k}")));
    cols.extend((1..=2 * block).map(|k| format!("xr_{k}")));
    cols.extend((1..=block).map(|k| format!("u_{k}")));
    cols.extend((1..=block).map(|k| format!("sat_u_{k}")));
    cols.push("sync_error_inf".to_string());
    cols
}

/// One header row, then one row per `(t, agent)` ordered by tick then agent.
pub fn write_trajectory_csv<W: Write>(tr: &Trajectory, w: &mut W) -> io::Result<()> {
    writeln!(w, "{}", trajectory_header(tr.block).join(","))?;
    let mut line = String::new();
    for s in &tr.snapshots {
        for i in 0..tr.n_agents {
            line.clear();
            let _ = write!(line, "{},{}", s.t, i + 1);
            for v in s.x[i].iter().chain(&s.x_r).chain(&s.u[i]).chain(&s.sat_u[i]) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            line.push(',');
            line.push_str(&fmt_f64(s.sync_error_inf));
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

pub fn emit_trajectory_csv(tr: &Trajectory, path: &Path) -> Result<(), OutputError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_trajectory_csv(tr, &mut w)
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}

pub fn write_lyapunov_csv<W: Write>(trace: &LyapunovTrace, w: &mut W) -> io::Result<()> {
    writeln!(w, "t,V1,V2,V,dV")?;
    for k in 0..trace.v.len() {
        let dv = trace.delta_v.get(k).map(|d| fmt_f64(*d)).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{}",
            trace.t[k],
            fmt_f64(trace.v1[k]),
            fmt_f64(trace.v2[k]),
            fmt_f64(trace.v[k]),
            dv
        )?;
    }
    Ok(())
}

/// One row of the metrics summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub mode: CouplingMode,
    pub n_agents: usize,
    pub gains: GainSet,
    pub steps: usize,
    pub certified: bool,
    pub metrics: SyncMetrics,
}

pub fn metrics_header() -> String {
    let mut cols: Vec<String> = [
        "label", "mode", "n_agents", "k1", "k2", "f1", "f2", "steps", "certified", "final_error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend(SYNC_THRESHOLDS.iter().map(|th| format!("first_below_{th:e}")));
    cols.push("max_abs_u".into());
    cols.join(",")
}

pub fn metrics_line(row: &MetricsRow) -> String {
    let mode = match row.mode {
        CouplingMode::FullState => "full-state",
        CouplingMode::PartialState => "partial-state",
    };
    let g = &row.gains;
    let mut line = format!(
        "{},{},{},{},{},{},{},{},{},{}",
        row.label,
        mode,
        row.n_agents,
        g.k1,
        g.k2,
        g.f1,
        g.f2,
        row.steps,
        row.certified,
        fmt_f64(row.metrics.final_error)
    );
    for tick in row.metrics.first_below {
        line.push(',');
        line.push_str(&tick.map_or_else(|| "never".to_string(), |t| t.to_string()));
    }
    line.push(',');
    line.push_str(&fmt_f64(row.metrics.max_abs_input));
    line
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.12}"))
}

/// Human-readable rendering of a certification report.
pub fn render_report_text(report: &CertificationReport, forced: bool) -> String {
    let mut s = String::new();
    if forced && !report.passed {
        s.push_str("WARNING: forced run despite failed certification\n\n");
    }
    let yes_no = |b: bool| if b { "yes" } else { "no" };
    let _ = writeln!(s, "certification: {}", report.overall().to_uppercase());
    let _ = writeln!(s, "mode:                 {:?}", report.mode);
    let _ = writeln!(s, "agents:               {}", report.n_agents);
    let _ = writeln!(s, "graph in set:         {}", yes_no(report.graph_in_set));
    let _ = writeln!(s, "gains in region:      {}", yes_no(report.gains_in_region));
    let _ = writeln!(s, "rho(dbar):            {}", fmt_opt(report.rho_dbar));
    let _ = writeln!(s, "rho(dbar (x) A):      {}", fmt_opt(report.rho_dbar_a));
    let _ = writeln!(s, "rho(A - FC):          {}", fmt_opt(report.rho_a_minus_fc));
    let _ = writeln!(s, "P_D residual:         {}", report.pd_residual.map_or("n/a".into(), |v| format!("{v:e}")));
    let _ = writeln!(s, "P_D min eigenvalue:   {}", fmt_opt(report.pd_min_eig));
    let _ = writeln!(s, "||Psi||:              {}", fmt_opt(report.psi_norm));
    let _ = writeln!(s, "h:                    {}", fmt_opt(report.h_found));
    let _ = writeln!(
        s,
        "phi eigenvalues:      {}",
        report
            .phi_eigs
            .map_or("n/a".into(), |e| format!("{:.12}, {:.12}", e[0], e[1]))
    );
    for f in &report.failures {
        let _ = writeln!(s, "failure: {f}");
    }
    s
}

pub fn config_hash(document: &str) -> String {
    hex::encode(Sha256::digest(document.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub mode: CouplingMode,
    pub n_agents: usize,
    pub gains: GainSet,
    pub steps: usize,
    pub files: Vec<String>,
    pub started_unix: u64,
    pub tool_version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Certify,
    Simulate,
    Lyapunov,
}

impl RunKind {
    fn name(self) -> &'static str {
        match self {
            RunKind::Certify => "certify",
            RunKind::Simulate => "simulate",
            RunKind::Lyapunov => "lyapunov",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunRequest<'a> {
    pub kind: RunKind,
    pub config: SimConfig,
    /// Source document, hashed into the manifest and copied next to it.
    pub document: &'a str,
    pub output_dir: &'a Path,
    pub label: &'a str,
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: CertificationReport,
    pub metrics: Option<SyncMetrics>,
    pub trajectory: Option<Trajectory>,
    pub lyapunov: Option<LyapunovTrace>,
}

impl RunOutcome {
    /// Certified, and the simulation (if requested) completed.
    pub fn success(&self, kind: RunKind) -> bool {
        self.report.passed && (kind == RunKind::Certify || self.metrics.is_some())
    }
}

fn unique_dir(base: &Path, stem: &str) -> Result<PathBuf, OutputError> {
    fs::create_dir_all(base).map_err(io_err(base))?;
    let mut candidate = base.join(stem);
    let mut k = 2;
    while candidate.exists() {
        candidate = base.join(format!("{stem}-{k}"));
        k += 1;
    }
    fs::create_dir(&candidate).map_err(io_err(&candidate))?;
    Ok(candidate)
}

fn write_file(path: &Path, contents: &str) -> Result<(), OutputError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Certifies, then (for simulate/lyapunov) runs and writes all artifacts
/// into a fresh directory under `output_dir`.
pub fn execute(req: RunRequest<'_>) -> Result<RunOutcome, OutputError> {
    let mut cfg = req.config;
    if req.kind == RunKind::Lyapunov {
        cfg.record_every = 1;
    }
    let hash = config_hash(req.document);
    let dir = unique_dir(req.output_dir, &format!("{}-{}-{}", req.label, req.kind.name(), &hash[..12]))?;

    let mut files = vec!["manifest.json", "config.toml", "report.txt", "report.json"];
    match req.kind {
        RunKind::Certify => {}
        RunKind::Simulate => files.extend(["trajectory.csv", "metrics.csv"]),
        RunKind::Lyapunov => files.extend(["lyapunov.csv", "metrics.csv"]),
    }
    let manifest = RunManifest {
        command: req.kind.name().to_string(),
        config_hash: hash,
        seed: match cfg.init.states {
            StateInit::Seeded { seed, .. } => Some(seed),
            StateInit::Explicit { .. } => None,
        },
        mode: cfg.mode,
        n_agents: cfg.n_agents(),
        gains: cfg.gains,
        steps: cfg.steps,
        files: files.iter().map(|f| dir.join(f).display().to_string()).collect(),
        started_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_file(
        &dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    write_file(&dir.join("config.toml"), req.document)?;

    let report = certify(&cfg);
    write_file(&dir.join("report.txt"), &render_report_text(&report, req.force))?;
    write_file(
        &dir.join("report.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;

    let mut outcome = RunOutcome {
        dir: dir.clone(),
        report,
        metrics: None,
        trajectory: None,
        lyapunov: None,
    };
    if req.kind == RunKind::Certify || (!outcome.report.passed && !req.force) {
        return Ok(outcome);
    }

    let tr = run_with(&cfg, RunOptions { force: req.force })?;
    let metrics = sync_metrics(&tr);
    match req.kind {
        RunKind::Simulate => emit_trajectory_csv(&tr, &dir.join("trajectory.csv"))?,
        RunKind::Lyapunov => {
            let trace = lyapunov_trace(&tr, &outcome.report, &cfg)?;
            let path = dir.join("lyapunov.csv");
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            let mut w = BufWriter::new(file);
            write_lyapunov_csv(&trace, &mut w)
                .and_then(|_| w.flush())
                .map_err(io_err(&path))?;
            outcome.lyapunov = Some(trace);
        }
        RunKind::Certify => unreachable!(),
    }
    let row = MetricsRow {
        label: req.label.to_string(),
        mode: cfg.mode,
        n_agents: cfg.n_agents(),
        gains: cfg.gains,
        steps: cfg.steps,
        certified: outcome.report.passed,
        metrics: metrics.clone(),
    };
    write_file(
        &dir.join("metrics.csv"),
        &format!("{}\n{}\n", metrics_header(), metrics_line(&row)),
    )?;
    outcome.metrics = Some(metrics);
    outcome.trajectory = Some(tr);
    Ok(outcome)
}

/// The three example networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteCase {
    I,
    II,
    III,
}

impl SuiteCase {
    pub const ALL: [SuiteCase; 3] = [SuiteCase::I, SuiteCase::II, SuiteCase::III];

    pub fn parse(s: &str) -> Result<Self, OutputError> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(SuiteCase::I),
            "II" | "2" => Ok(SuiteCase::II),
            "III" | "3" => Ok(SuiteCase::III),
            _ => Err(OutputError::UnknownCase(s.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SuiteCase::I => "I",
            SuiteCase::II => "II",
            SuiteCase::III => "III",
        }
    }
}

/// Feedback gain pairs used by the suite, numbered 1 to 3.
pub const SUITE_GAINS: [(f64, f64); 3] = [(0.5, 1.0), (1.0, 2.0), (1.5, 2.5)];

pub const SUITE_SEED: u64 = 1;

/// Partial-state suite configuration: node 1 is the only root, observer
/// gains `F = (1.5, 0.5)`, seeded initial states on `[−10, 10]`, zero
/// controller states.
pub fn suite_config(case: SuiteCase, gains_id: usize, seed: u64, steps: usize) -> Result<SimConfig, OutputError> {
    let (k1, k2) = *gains_id
        .checked_sub(1)
        .and_then(|k| SUITE_GAINS.get(k))
        .ok_or(OutputError::UnknownGains(gains_id))?;
    let graph = match case {
        SuiteCase::I => cases::case_i(),
        SuiteCase::II => cases::case_ii(),
        SuiteCase::III => cases::case_iii(),
    };
    let roots = RootSet::new(graph.n_nodes(), [0]).expect("node 0 exists");
    Ok(SimConfig::new(
        PlantDims::new(1).expect("n = 1"),
        graph,
        roots,
        GainSet::new(k1, k2),
        CouplingMode::PartialState,
    )
    .with_seed(seed)
    .with_steps(steps))
}

/// Builds, certifies and simulates one suite entry.
pub fn run_suite(
    case: SuiteCase,
    gains_id: usize,
    seed: u64,
    steps: usize,
    output_dir: &Path,
    force: bool,
) -> Result<RunOutcome, OutputError> {
    let cfg = suite_config(case, gains_id, seed, steps)?;
    let document = render_config(&cfg);
    let label = format!("case{}-gains{}", case.name(), gains_id);
    execute(RunRequest {
        kind: RunKind::Simulate,
        config: cfg,
        document: &document,
        output_dir,
        label: &label,
        force,
    })
}
