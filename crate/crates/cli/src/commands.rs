//! Command implementations. Each returns the process exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use crossflow::analysis::{
    fmt_num, metrics, pareto_sweep, pareto_table, validate as audit, ValidationOptions, ValidationReport,
};
use crossflow::nlp::{iteration_log_tsv, SolverConfig};
use crossflow::ocp::OcpOptions;
use crossflow::planner::plan;
use crossflow::scenario::{generate_scenario, load_scenario, theoretical_lower_bound, GeneratorOptions, Scenario};
use serde_json::json;

use crate::artifacts::{parse_trajectory_csv, profiles_csv, trajectory_csv, write_atomic, Manifest};
use crate::exit;
use crate::{OutputFlags, ProblemFlags};
use serde::Deserialize;

fn fail(code: u8, err: anyhow::Error) -> u8 {
    eprintln!("error: {err:#}");
    code
}

fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_scenario(&text).with_context(|| format!("scenario {}", path.display()))
}

/// Applies command-line overrides and re-validates.
fn apply_overrides(mut scn: Scenario, f: &ProblemFlags) -> Result<Scenario> {
    if let Some(g) = f.gamma {
        scn.weights.gamma = g;
    }
    if let Some(a) = f.alpha {
        scn.weights.alpha = a;
    }
    if let Some(q) = &f.q {
        if q.len() != 3 {
            bail!("--q expects three comma-separated values, got {}", q.len());
        }
        scn.weights.q = [q[0], 0.0, 0.0, 0.0, q[1], 0.0, 0.0, 0.0, q[2]];
    }
    if let Some(k) = f.intervals {
        scn.transcription.intervals = k;
    }
    if let Some(d) = f.degree {
        scn.transcription.degree = d;
    }
    Ok(scn.validated()?)
}

fn solver_config(f: &ProblemFlags) -> Result<SolverConfig> {
    let mut cfg = SolverConfig::default();
    if let Some(t) = f.kkt_tol {
        cfg.kkt_tol = t;
    }
    if let Some(n) = f.max_iters {
        cfg.max_iters = n;
    }
    cfg.validate().map_err(|e| anyhow!("solver configuration: {e}"))?;
    Ok(cfg)
}

fn overrides_json(f: &ProblemFlags, sample_dt: Option<f64>) -> serde_json::Value {
    let mut v = serde_json::to_value(f).unwrap_or_default();
    v["sample_dt"] = json!(sample_dt);
    v
}

fn validation_options(scn: &Scenario, sample_dt: Option<f64>, degree: Option<usize>) -> Result<ValidationOptions> {
    let mut opts = ValidationOptions::for_scenario(scn);
    if let Some(dt) = sample_dt {
        if !(dt > 0.0 && dt.is_finite()) {
            bail!("--sample-dt must be positive, got {dt}");
        }
        opts.sample_dt = dt;
    }
    if let Some(d) = degree {
        opts.degree = d;
    }
    Ok(opts)
}

fn prepare_problem(scenario: &Path, problem: &ProblemFlags) -> Result<(Scenario, SolverConfig, OcpOptions)> {
    let scn = apply_overrides(read_scenario(scenario)?, problem)?;
    let cfg = solver_config(problem)?;
    let opts = OcpOptions { prune_pairs: problem.prune_pairs, ..OcpOptions::default() };
    Ok((scn, cfg, opts))
}

pub fn solve(scenario: &Path, problem: &ProblemFlags, output: &OutputFlags) -> u8 {
    let start = Instant::now();
    let (scn, cfg, opts) = match prepare_problem(scenario, problem) {
        Ok(v) => v,
        Err(e) => return fail(exit::INPUT, e),
    };
    let vopts = match validation_options(&scn, output.sample_dt, None) {
        Ok(v) => v,
        Err(e) => return fail(exit::INPUT, e),
    };
    let p = match plan(&scn, &opts, &cfg) {
        Ok(p) => p,
        Err(e) => return fail(exit::INPUT, e.into()),
    };
    let result = (|| -> Result<(bool, bool)> {
        fs::create_dir_all(&output.out).with_context(|| format!("creating {}", output.out.display()))?;
        let dir = &output.out;
        let traj_text = trajectory_csv(&p.solution.trajectories)?;
        write_atomic(&dir.join("trajectory.csv"), &traj_text)?;
        // Reports are computed from the file as written so that `validate`
        // on it reproduces them exactly.
        let trajs = parse_trajectory_csv(&traj_text)?;
        write_atomic(&dir.join("profiles.csv"), &profiles_csv(&trajs, vopts.degree, vopts.sample_dt)?)?;
        write_atomic(&dir.join("iterations.tsv"), &iteration_log_tsv(&p.report.log))?;

        let report = audit(&scn, &trajs, &vopts)?;
        write_atomic(&dir.join("validation.txt"), &report.to_text())?;

        let mut m = String::new();
        let _ = writeln!(m, "solver_status\t{}", p.report.status);
        let _ = writeln!(m, "iterations\t{}", p.report.iterations);
        let _ = writeln!(m, "objective\t{}", fmt_num(p.report.objective));
        let _ = writeln!(m, "final_time_s\t{}", fmt_num(p.solution.tf));
        let _ = writeln!(m, "kkt_residual\t{}", fmt_num(p.report.residuals.max()));
        match metrics(&scn, &trajs, &vopts, &report) {
            Ok(r) => m.push_str(&r.to_text()),
            Err(e) => {
                let _ = writeln!(m, "metrics_error\t{e}");
            }
        }
        if output.timing {
            let _ = writeln!(m, "solver_wall_time_s\t{}", fmt_num(p.report.wall_time));
        }
        for w in &p.report.warnings {
            let _ = writeln!(m, "warning\t{w}");
        }
        write_atomic(&dir.join("metrics.txt"), &m)?;

        let outputs = ["trajectory.csv", "profiles.csv", "iterations.tsv", "validation.txt", "metrics.txt"];
        Manifest {
            tool: "crossflow",
            version: env!("CARGO_PKG_VERSION"),
            command: "solve",
            scenario: scenario.display().to_string(),
            overrides: overrides_json(problem, output.sample_dt),
            seed: None,
            solver: cfg,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            wall_time_s: output.timing.then(|| start.elapsed().as_secs_f64()),
        }
        .write(dir)?;
        print!("{m}");
        Ok((p.converged(), report.passed()))
    })();
    match result {
        Err(e) => fail(exit::INPUT, e),
        Ok((false, _)) => {
            eprintln!("solver did not converge: {}", p.report.status);
            exit::NOT_CONVERGED
        }
        Ok((true, false)) => {
            eprintln!("validation failed; see {}", output.out.join("validation.txt").display());
            exit::VALIDATION
        }
        Ok((true, true)) => exit::OK,
    }
}

pub fn bound(scenario: &Path) -> u8 {
    match read_scenario(scenario) {
        Ok(scn) => {
            println!("{:.3}", theoretical_lower_bound(&scn));
            exit::OK
        }
        Err(e) => fail(exit::INPUT, e),
    }
}

pub fn validate(scenario: &Path, trajectory: &Path, sample_dt: Option<f64>, degree: Option<usize>) -> u8 {
    let report = (|| -> Result<ValidationReport> {
        let scn = read_scenario(scenario)?;
        let opts = validation_options(&scn, sample_dt, degree)?;
        let text = fs::read_to_string(trajectory).with_context(|| format!("reading {}", trajectory.display()))?;
        let trajs = parse_trajectory_csv(&text)?;
        Ok(audit(&scn, &trajs, &opts)?)
    })();
    match report {
        Err(e) => fail(exit::INPUT, e),
        Ok(r) => {
            print!("{}", r.to_text());
            if r.passed() {
                exit::OK
            } else {
                exit::VALIDATION
            }
        }
    }
}

fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [a, b, n] = parts.as_slice() else { bail!("--gamma-range expects start:stop:count, got '{spec}'") };
    let a: f64 = a.trim().parse().context("range start")?;
    let b: f64 = b.trim().parse().context("range stop")?;
    let n: usize = n.trim().parse().context("range count")?;
    match n {
        0 => bail!("range count must be positive"),
        1 => Ok(vec![a]),
        _ => Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()),
    }
}

pub fn sweep(scenario: &Path, gammas: Vec<f64>, range: Option<&str>, problem: &ProblemFlags, output: &OutputFlags) -> u8 {
    let start = Instant::now();
    let prepared = (|| -> Result<_> {
        let gammas = match range {
            Some(r) => parse_range(r)?,
            None => gammas,
        };
        let (scn, cfg, opts) = prepare_problem(scenario, problem)?;
        Ok((gammas, scn, cfg, opts))
    })();
    let (gammas, scn, cfg, opts) = match prepared {
        Ok(v) => v,
        Err(e) => return fail(exit::INPUT, e),
    };
    let points = match pareto_sweep(&scn, &gammas, &opts, &cfg) {
        Ok(p) => p,
        Err(e) => return fail(exit::INPUT, e.into()),
    };
    let table = pareto_table(&points);
    let written = (|| -> Result<()> {
        fs::create_dir_all(&output.out).with_context(|| format!("creating {}", output.out.display()))?;
        write_atomic(&output.out.join("pareto.tsv"), &table)?;
        let mut overrides = overrides_json(problem, output.sample_dt);
        overrides["gammas"] = json!(gammas);
        Manifest {
            tool: "crossflow",
            version: env!("CARGO_PKG_VERSION"),
            command: "sweep",
            scenario: scenario.display().to_string(),
            overrides,
            seed: None,
            solver: cfg,
            outputs: vec!["pareto.tsv".into()],
            wall_time_s: output.timing.then(|| start.elapsed().as_secs_f64()),
        }
        .write(&output.out)?;
        Ok(())
    })();
    if let Err(e) = written {
        return fail(exit::INPUT, e);
    }
    print!("{table}");
    if points.iter().any(|p| p.outcome.is_ok()) {
        exit::OK
    } else {
        eprintln!("no solve in the sweep converged");
        exit::NOT_CONVERGED
    }
}

pub fn generate(n: usize, seed: u64, allow_right_turns: bool, out: Option<&Path>) -> u8 {
    let scn = match generate_scenario(n, seed, GeneratorOptions { allow_right_turns }) {
        Ok(s) => s,
        Err(e) => return fail(exit::INPUT, e.into()),
    };
    let mut text = scn.to_json();
    text.push('\n');
    match out {
        None => {
            print!("{text}");
            exit::OK
        }
        Some(path) => {
            let written = write_atomic(path, &text).and_then(|_| {
                let mut name = path.file_name().unwrap_or_default().to_os_string();
                name.push(".manifest.json");
                Manifest {
                    tool: "crossflow",
                    version: env!("CARGO_PKG_VERSION"),
                    command: "generate",
                    scenario: path.display().to_string(),
                    overrides: json!({ "vehicles": n, "allow_right_turns": allow_right_turns }),
                    seed: Some(seed),
                    solver: SolverConfig::default(),
                    outputs: vec![path.display().to_string()],
                    wall_time_s: None,
                }
                .write_to(&path.with_file_name(name))
            });
            match written {
                Ok(_) => exit::OK,
                Err(e) => fail(exit::INPUT, e),
            }
        }
    }
}

#[derive(Deserialize)]
struct RecordedRun {
    command: String,
    scenario: String,
    overrides: serde_json::Value,
    seed: Option<u64>,
}

/// Re-runs a recorded command; the outputs match the original byte for byte.
pub fn replay(manifest: &Path, out: &Path) -> u8 {
    let run = (|| -> Result<(RecordedRun, ProblemFlags, Option<f64>)> {
        let text = fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
        let run: RecordedRun = serde_json::from_str(&text).with_context(|| format!("manifest {}", manifest.display()))?;
        let flags = ProblemFlags::deserialize(&run.overrides).context("manifest overrides")?;
        let sample_dt = run.overrides.get("sample_dt").and_then(|v| v.as_f64());
        Ok((run, flags, sample_dt))
    })();
    let (run, flags, sample_dt) = match run {
        Ok(v) => v,
        Err(e) => return fail(exit::INPUT, e),
    };
    let output = OutputFlags { out: out.to_path_buf(), sample_dt, timing: false };
    let scenario = Path::new(&run.scenario);
    match run.command.as_str() {
        "solve" => solve(scenario, &flags, &output),
        "sweep" => {
            let gammas = run.overrides.get("gammas").and_then(|g| serde_json::from_value(g.clone()).ok());
            match gammas {
                Some(g) => sweep(scenario, g, None, &flags, &output),
                None => fail(exit::INPUT, anyhow!("sweep manifest has no gamma list")),
            }
        }
        "generate" => {
            let n = run.overrides.get("vehicles").and_then(|v| v.as_u64());
            let right = run.overrides.get("allow_right_turns").and_then(|v| v.as_bool()).unwrap_or(false);
            match (n, run.seed) {
                (Some(n), Some(seed)) => generate(n as usize, seed, right, Some(out)),
                _ => fail(exit::INPUT, anyhow!("generate manifest needs vehicles and seed")),
            }
        }
        other => fail(exit::INPUT, anyhow!("cannot replay command '{other}'")),
    }
}
