//! CSV and JSON outputs. Numbers are written with 17 significant digits so
//! every `f64` reads back exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::experiment::{ResultBundle, RunSummary, Timing};
use crate::error::{Error, Result};
use crate::runtime::{ResidualRow, RunRecord};
use crate::tasks::TaskSpec;
use crate::trajectory::Trajectory;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header and rows of the trajectory CSV. Row `(t, i)` holds the state of
/// agent `i` after applying its control `u_t`, followed by `u_t`.
pub fn trajectory_csv(record: &RunRecord<f64>, task: &TaskSpec<f64>) -> String {
    let kind = task.model.kind;
    let (nx, nu) = (kind.state_dim(), kind.control_dim());
    let mut out = String::from("step,agent");
    for name in kind.state_names().iter().chain(kind.control_names()) {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for t in 0..record.controls.len() {
        let x = record.states.col(t + 1);
        let u = record.controls.col(t);
        for i in 0..record.num_agents {
            let _ = write!(out, "{t},{i}");
            for v in x[i * nx..(i + 1) * nx].iter().chain(&u[i * nu..(i + 1) * nu]) {
                out.push(',');
                out.push_str(&num(*v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn residuals_csv(rows: &[ResidualRow<f64>]) -> String {
    let mut out = String::from("mpc_step,admm_iter,primal_state,primal_control\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.mpc_step,
            r.admm_iter,
            num(r.primal_state),
            num(r.primal_control)
        );
    }
    out
}

/// Executed states after each step and the applied controls, as read back
/// from a trajectory CSV with `nx` states per agent.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedTrajectory {
    pub num_agents: usize,
    /// Joint states `x_1 .. x_T`.
    pub states: Trajectory<f64>,
    /// Joint controls `u_0 .. u_{T-1}`.
    pub controls: Trajectory<f64>,
}

pub fn parse_trajectory_csv(text: &str, nx: usize, path: &Path) -> Result<ParsedTrajectory> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| format_err(path, "missing header"))?;
    let width = header.split(',').count();
    if width < 2 + nx {
        return Err(format_err(path, "header too short"));
    }
    let nu = width - 2 - nx;
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(format_err(path, format!("row {}: expected {width} fields", k + 1)));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| format_err(path, format!("row {}: {e}", k + 1)));
        let vals = fields[2..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| format_err(path, format!("row {}: {e}", k + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push((int(fields[0])?, int(fields[1])?, vals));
    }
    let num_agents = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let steps = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    if rows.len() != num_agents * steps {
        return Err(format_err(path, "rows do not cover every (step, agent)"));
    }
    let mut states = Trajectory::zeros(num_agents * nx, steps);
    let mut controls = Trajectory::zeros(num_agents * nu, steps);
    for (t, i, vals) in rows {
        states.col_mut(t)[i * nx..(i + 1) * nx].copy_from_slice(&vals[..nx]);
        controls.col_mut(t)[i * nu..(i + 1) * nu].copy_from_slice(&vals[nx..]);
    }
    Ok(ParsedTrajectory {
        num_agents,
        states,
        controls,
    })
}

pub fn read_trajectory_csv(path: &Path, nx: usize) -> Result<ParsedTrajectory> {
    parse_trajectory_csv(&read_text(path)?, nx, path)
}

fn to_json<S: serde::Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}"))
}

/// Writes one run: `trajectory.csv`, `residuals.csv` and `summary.json`.
pub fn export_record(summary: &RunSummary, record: &RunRecord<f64>, task: &TaskSpec<f64>, dir: &Path) -> Result<()> {
    write_text(&dir.join("trajectory.csv"), &trajectory_csv(record, task))?;
    write_text(&dir.join("residuals.csv"), &residuals_csv(&record.residuals))?;
    write_text(&dir.join("summary.json"), &to_json(summary))
}

/// Writes the bundle summary, its timing and each seed's files.
pub fn export_bundle(
    bundle: &ResultBundle,
    records: &[(u64, &RunRecord<f64>)],
    task: &TaskSpec<f64>,
    out_dir: &Path,
) -> Result<()> {
    write_text(&out_dir.join("summary.json"), &to_json(bundle))?;
    write_text(&out_dir.join("timing.json"), &to_json(&bundle.timing))?;
    for summary in &bundle.runs {
        let dir = seed_dir(out_dir, summary.seed);
        match records.iter().find(|(s, _)| *s == summary.seed) {
            Some((_, record)) => export_record(summary, record, task, &dir)?,
            None => write_text(&dir.join("summary.json"), &to_json(summary))?,
        }
    }
    Ok(())
}

pub fn read_bundle(out_dir: &Path) -> Result<ResultBundle> {
    let path = out_dir.join("summary.json");
    let mut bundle: ResultBundle =
        serde_json::from_str(&read_text(&path)?).map_err(|e| format_err(&path, e.to_string()))?;
    let timing_path = out_dir.join("timing.json");
    if timing_path.exists() {
        bundle.timing = serde_json::from_str::<Timing>(&read_text(&timing_path)?)
            .map_err(|e| format_err(&timing_path, e.to_string()))?;
    }
    Ok(bundle)
}

pub fn read_run_summary(path: &Path) -> Result<RunSummary> {
    serde_json::from_str(&read_text(path)?).map_err(|e| format_err(path, e.to_string()))
}
