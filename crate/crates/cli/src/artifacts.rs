//! Artifact files: trajectory tables, plot tables and the run manifest.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use crossflow::analysis::{fmt_num, resample, sample_times};
use crossflow::ocp::Trajectory;
use crossflow::vehicle::{ControlInput, VehicleState};
use serde::Serialize;

pub const TRAJECTORY_COLUMNS: [&str; 10] = ["t", "vehicle_id", "x", "y", "theta", "v", "beta", "r", "a", "delta"];

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let file_name = path.file_name().ok_or_else(|| anyhow!("{} has no file name", path.display()))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(contents.as_bytes())?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Trajectory table with one row per vehicle sample, 9 significant digits.
pub fn trajectory_csv(trajs: &[Trajectory]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAJECTORY_COLUMNS)?;
    for tr in trajs {
        for k in 0..tr.len() {
            let s = &tr.states[k];
            let u = &tr.controls[k];
            let nums = [tr.times[k], s.x, s.y, s.theta, s.v, s.beta, s.r, u.a, u.delta].map(fmt_num);
            let mut row = vec![nums[0].clone(), tr.vehicle_id.clone()];
            row.extend_from_slice(&nums[1..]);
            w.write_record(&row)?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Parses a trajectory table; vehicles keep their order of first appearance.
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<Trajectory>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != TRAJECTORY_COLUMNS {
        bail!("trajectory header must be {}, got {}", TRAJECTORY_COLUMNS.join(","), header.join(","));
    }
    let mut out: Vec<Trajectory> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("trajectory row {}", i + 2))?;
        let num = |c: usize| -> Result<f64> {
            let v: f64 = rec[c].trim().parse().with_context(|| format!("row {} column {}", i + 2, TRAJECTORY_COLUMNS[c]))?;
            if !v.is_finite() {
                bail!("row {} column {} is not finite", i + 2, TRAJECTORY_COLUMNS[c]);
            }
            Ok(v)
        };
        let id = rec[1].trim().to_string();
        let t = num(0)?;
        let state = VehicleState { x: num(2)?, y: num(3)?, theta: num(4)?, v: num(5)?, beta: num(6)?, r: num(7)? };
        let control = ControlInput { a: num(8)?, delta: num(9)? };
        let idx = match out.iter().position(|tr| tr.vehicle_id == id) {
            Some(p) => p,
            None => {
                out.push(Trajectory { vehicle_id: id, times: vec![], states: vec![], controls: vec![] });
                out.len() - 1
            }
        };
        let tr = &mut out[idx];
        tr.times.push(t);
        tr.states.push(state);
        tr.controls.push(control);
    }
    if out.is_empty() {
        bail!("trajectory file has no rows");
    }
    Ok(out)
}

/// Plot-ready table on a uniform grid: paths, speed and acceleration.
pub fn profiles_csv(trajs: &[Trajectory], degree: usize, sample_dt: f64) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "vehicle_id", "x", "y", "v", "a"])?;
    for tr in trajs {
        let Some(&t_end) = tr.times.last() else { continue };
        let dense = resample(tr, degree, &sample_times(t_end, sample_dt));
        for k in 0..dense.len() {
            let s = &dense.states[k];
            w.write_record([
                fmt_num(dense.times[k]),
                dense.vehicle_id.clone(),
                fmt_num(s.x),
                fmt_num(s.y),
                fmt_num(s.v),
                fmt_num(dense.controls[k].a),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub scenario: String,
    pub overrides: serde_json::Value,
    pub seed: Option<u64>,
    pub solver: crossflow::nlp::SolverConfig,
    pub outputs: Vec<String>,
    pub wall_time_s: Option<f64>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        self.write_to(&dir.join("manifest.json"))
    }

    pub fn write_to(&self, path: &Path) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, &text)?;
        Ok(path.to_path_buf())
    }
}
