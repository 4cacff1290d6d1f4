//! Run-directory artifacts.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use super::{RunOutcome, RunSummary, ScenarioConfig};
use crate::dynamics::SpacecraftState;
use crate::error::{Error, Result};
use crate::nlp::IterationRecord;
use crate::propagate::PropagationResult;
use crate::transcription::{GridSpec, Trajectory, TransferSpec};

pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SOLUTION_FILE: &str = "solution.csv";

const NODE_HEADER: [&str; 13] = [
    "node", "t", "r", "theta", "v_r", "v_theta", "m", "P_E", "alpha", "T", "mdot", "P_SA",
    "P_avail",
];

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v:.17e}")
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_config(dir: &Path, cfg: &ScenarioConfig) -> Result<()> {
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))
}

fn node_times(grid: &GridSpec, t_f: f64) -> Vec<f64> {
    grid.node_fractions().iter().map(|f| f * t_f).collect()
}

/// Node table; the final point leaves the control columns empty.
pub fn write_trajectory_csv(
    spec: &TransferSpec,
    grid: &GridSpec,
    traj: &Trajectory,
    writer: impl std::io::Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(NODE_HEADER)?;
    let times = node_times(grid, traj.t_f);
    let n = grid.n_nodes();
    for (k, (s, t)) in traj.states.iter().zip(&times).enumerate() {
        let mut rec = vec![k.to_string(), num(*t)];
        rec.extend(s.to_array().iter().map(|v| num(*v)));
        if k < n {
            let (thrust, mdot) = spec.engine.thrust_and_mdot(traj.power[k]);
            let p = spec.power.evaluate(traj.area, *t);
            rec.extend(
                [
                    traj.power[k],
                    traj.alpha[k],
                    thrust,
                    mdot,
                    p.p_sa,
                    p.p_avail,
                ]
                .map(num),
            );
        } else {
            rec.extend(std::iter::repeat_n(String::new(), 6));
        }
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
    Ok(())
}

/// Reads a node table written by [`write_trajectory_csv`].
pub fn read_trajectory_csv(path: &Path, grid: &GridSpec, area: f64) -> Result<Trajectory> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    if headers.iter().ne(NODE_HEADER) {
        return Err(parse_err(format!(
            "header must be `{}`",
            NODE_HEADER.join(",")
        )));
    }
    let mut states = Vec::new();
    let mut power = Vec::new();
    let mut alpha = Vec::new();
    let mut t_f = 0.0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let field = |i: usize| -> Result<Option<f64>> {
            let s = rec.get(i).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| {
                parse_err(format!(
                    "row {}: bad number `{s}` in column {}",
                    line + 2,
                    NODE_HEADER[i]
                ))
            })
        };
        let need = |i: usize| -> Result<f64> {
            field(i)?
                .ok_or_else(|| parse_err(format!("row {}: missing {}", line + 2, NODE_HEADER[i])))
        };
        t_f = need(1)?;
        let x: Vec<f64> = (2..7).map(need).collect::<Result<_>>()?;
        states.push(SpacecraftState::from_array(&x));
        if let (Some(p), Some(a)) = (field(7)?, field(8)?) {
            power.push(p);
            alpha.push(a);
        }
    }
    let n = grid.n_nodes();
    if states.len() != n + 1 || power.len() != n {
        return Err(Error::Dimension {
            expected: n + 1,
            got: states.len(),
            context: "solution rows for the configured grid",
        });
    }
    Ok(Trajectory {
        t_f,
        area,
        states,
        power,
        alpha,
    })
}

pub fn write_iterations_csv(
    logs: &[Vec<IterationRecord>],
    bandwidths: &[f64],
    writer: impl std::io::Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "stage",
        "bandwidth",
        "iteration",
        "objective",
        "max_violation",
        "stationarity",
        "step_norm",
        "barrier",
        "factorizations",
        "constraint_evals",
        "jacobian_evals",
    ])?;
    for (stage, (log, bw)) in logs.iter().zip(bandwidths).enumerate() {
        for r in log {
            w.write_record([
                stage.to_string(),
                num(*bw),
                r.iteration.to_string(),
                num(r.objective),
                num(r.max_violation),
                num(r.stationarity),
                num(r.step_norm),
                num(r.penalty),
                r.inner_iterations.to_string(),
                r.constraint_evals.to_string(),
                r.jacobian_evals.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<iterations csv>", e))?;
    Ok(())
}

/// Figure data: polar path, radius, controls, mass and node markers.
pub fn write_plot_data(
    dir: &Path,
    spec: &TransferSpec,
    grid: &GridSpec,
    traj: &Trajectory,
    prop: Option<&PropagationResult>,
) -> Result<()> {
    let times = node_times(grid, traj.t_f);
    let dense: Vec<(f64, SpacecraftState)> = prop
        .map(|p| {
            p.times
                .iter()
                .copied()
                .zip(p.states.iter().copied())
                .collect()
        })
        .unwrap_or_default();
    let nodes: Vec<(f64, SpacecraftState)> = times
        .iter()
        .copied()
        .zip(traj.states.iter().copied())
        .collect();

    let mut polar = csv::Writer::from_writer(create(&dir.join("plot_polar.csv"))?);
    polar.write_record(["source", "t", "x", "y"])?;
    let mut radius = csv::Writer::from_writer(create(&dir.join("plot_radius.csv"))?);
    radius.write_record(["source", "t", "r"])?;
    let mut mass = csv::Writer::from_writer(create(&dir.join("plot_mass.csv"))?);
    mass.write_record(["source", "t", "m"])?;
    for (source, rows) in [("node", &nodes), ("propagated", &dense)] {
        for (t, s) in rows {
            polar.write_record([
                source.into(),
                num(*t),
                num(s.r * s.theta.cos()),
                num(s.r * s.theta.sin()),
            ])?;
            radius.write_record([source.into(), num(*t), num(s.r)])?;
            mass.write_record([source.into(), num(*t), num(s.m)])?;
        }
    }

    let mut controls = csv::Writer::from_writer(create(&dir.join("plot_controls.csv"))?);
    controls.write_record(["t", "alpha", "P_E", "P_avail"])?;
    let mut markers = csv::Writer::from_writer(create(&dir.join("plot_nodes.csv"))?);
    markers.write_record(["node", "t", "x", "y", "r"])?;
    for k in 0..grid.n_nodes() {
        let t = times[k];
        let p = spec.power.evaluate(traj.area, t);
        controls.write_record([t, traj.alpha[k], traj.power[k], p.p_avail].map(num))?;
        let s = &traj.states[k];
        markers.write_record([
            k.to_string(),
            num(t),
            num(s.r * s.theta.cos()),
            num(s.r * s.theta.sin()),
            num(s.r),
        ])?;
    }
    for w in [
        &mut polar,
        &mut radius,
        &mut mass,
        &mut controls,
        &mut markers,
    ] {
        w.flush().map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Writes every artifact of a run into `dir`, creating it if needed.
pub fn write_run(dir: &Path, run: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let grid = run.config.grid;
    write_config(dir, &run.config)?;
    write_json(&dir.join(SUMMARY_FILE), &run.summary)?;
    write_json(&dir.join("guess_summary.json"), &run.guess_summary)?;
    write_trajectory_csv(
        &run.spec,
        &grid,
        &run.trajectory,
        create(&dir.join(SOLUTION_FILE))?,
    )?;
    write_trajectory_csv(
        &run.spec,
        &grid,
        &run.guess,
        create(&dir.join("guess.csv"))?,
    )?;
    run.defects.write_csv(create(&dir.join("defects.csv"))?)?;
    let bws: Vec<f64> = run.summary.stages.iter().map(|s| s.bandwidth).collect();
    write_iterations_csv(&run.logs, &bws, create(&dir.join("iterations.csv"))?)?;
    if let Some(p) = &run.propagation {
        p.write_csv(
            &run.spec,
            run.trajectory.area,
            create(&dir.join("propagated.csv"))?,
        )?;
    }
    write_plot_data(
        dir,
        &run.spec,
        &grid,
        &run.trajectory,
        run.propagation.as_ref(),
    )
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path,
        message: e.to_string(),
    })
}

/// Resolved config, summary and node solution of a run directory.
pub fn read_run(dir: &Path) -> Result<(ScenarioConfig, RunSummary, Trajectory)> {
    let cfg = ScenarioConfig::load(&dir.join(CONFIG_FILE), &[])?;
    let summary = read_summary(dir)?;
    let traj = read_trajectory_csv(&dir.join(SOLUTION_FILE), &cfg.grid, summary.area)?;
    Ok((cfg, summary, traj))
}
