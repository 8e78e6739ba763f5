//! Scenario documents: intersection layout, fleet, limits, safety margins and
//! objective weights, plus the road-boundary blocks and the crossing-time
//! lower bound.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, base_polytope, primal_distance, transform_polytope, Polytope, Pose};
use crate::ocp::TranscriptionConfig;
use crate::vehicle::{Limits, VehicleParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{path}: {message}")]
    Semantic { path: String, message: String },
}

fn semantic(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Semantic { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntersectionLayout {
    pub road_half_width: f64,
    pub arm_extent: f64,
}

impl Default for IntersectionLayout {
    fn default() -> Self {
        Self { road_half_width: 5.0, arm_extent: 40.0 }
    }
}

impl IntersectionLayout {
    /// Four-legged intersections only.
    pub const N_BOUNDARIES: usize = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Safety {
    pub d_min: f64,
    pub d_rmin: f64,
}

impl Default for Safety {
    fn default() -> Self {
        Self { d_min: 0.1, d_rmin: 0.1 }
    }
}

/// Gains on crossing time, pose error (row-major 3x3) and squared acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    #[serde(rename = "Q")]
    pub q: [f64; 9],
    pub gamma: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        // Pose error in meters integrates to O(10^4) at unit gain; these gains
        // bring it to the O(10^2) scale of the time term.
        Self { alpha: 1.0, q: [0.01, 0.0, 0.0, 0.0, 0.01, 0.0, 0.0, 0.0, 0.001], gamma: 0.0 }
    }
}

impl ObjectiveWeights {
    fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.alpha >= 0.0) {
            return Err(semantic("weights.alpha", "must be nonnegative"));
        }
        if !(self.gamma >= 0.0) {
            return Err(semantic("weights.gamma", "must be nonnegative"));
        }
        let q = &self.q;
        if q.iter().any(|v| !v.is_finite()) {
            return Err(semantic("weights.Q", "entries must be finite"));
        }
        let scale = q.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            if (q[3 * i + j] - q[3 * j + i]).abs() > 1e-12 * scale {
                return Err(semantic("weights.Q", "must be symmetric"));
            }
        }
        // PSD iff every principal minor is nonnegative.
        let m = |i: usize, j: usize| q[3 * i + j];
        let minor2 = |a: usize, b: usize| m(a, a) * m(b, b) - m(a, b) * m(b, a);
        let det = m(0, 0) * minor2(1, 2) - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
            + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
        let tol = -1e-12 * scale * scale * scale;
        let minors = [m(0, 0), m(1, 1), m(2, 2), minor2(0, 1), minor2(0, 2), minor2(1, 2), det];
        if minors.iter().any(|&v| v < tol) {
            return Err(semantic("weights.Q", "must be positive semidefinite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    #[serde(default = "default_initial_speed")]
    pub v: f64,
}

fn default_initial_speed() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub id: String,
    pub initial: InitialState,
    pub terminal: TerminalPose,
}

impl VehicleSpec {
    pub fn initial_pose(&self) -> Pose {
        Pose::new(self.initial.x, self.initial.y, self.initial.theta)
    }

    pub fn terminal_pose(&self) -> Pose {
        Pose::new(self.terminal.x, self.terminal.y, self.terminal.theta)
    }

    pub fn initial_speed(&self) -> f64 {
        self.initial.v
    }

    /// Straight-line displacement from initial to terminal position.
    pub fn displacement(&self) -> f64 {
        (self.terminal.x - self.initial.x).hypot(self.terminal.y - self.initial.y)
    }
}

/// A validated scenario. Construct through [`load_scenario`] or
/// [`Scenario::validated`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub layout: IntersectionLayout,
    #[serde(default)]
    pub vehicle_params: VehicleParams,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub safety: Safety,
    #[serde(default)]
    pub weights: ObjectiveWeights,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub transcription: TranscriptionConfig,
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scn: Scenario = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => ScenarioError::Schema(e.to_string()),
            _ => ScenarioError::Parse { line: e.line(), column: e.column(), message: e.to_string() },
        }
    })?;
    scn.validated()
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn footprint(&self) -> Polytope {
        base_polytope(self.vehicle_params.body_length, self.vehicle_params.body_width)
            .expect("validated body dimensions")
    }

    /// Runs every semantic check and returns the scenario unchanged on success.
    pub fn validated(self) -> Result<Self, ScenarioError> {
        let l = &self.layout;
        if !(l.road_half_width > 0.0) {
            return Err(semantic("layout.road_half_width", "must be positive"));
        }
        if !(l.arm_extent > l.road_half_width) {
            return Err(semantic("layout.arm_extent", "must exceed road_half_width"));
        }
        self.vehicle_params.validate().map_err(|m| semantic("vehicle_params", m))?;
        self.limits.validate().map_err(|m| semantic("limits", m))?;
        if !(self.safety.d_min >= 0.0) {
            return Err(semantic("safety.d_min", "must be nonnegative"));
        }
        if !(self.safety.d_rmin >= 0.0) {
            return Err(semantic("safety.d_rmin", "must be nonnegative"));
        }
        self.weights.validate()?;
        self.transcription.validate().map_err(|m| semantic("transcription", m))?;
        if self.vehicles.is_empty() {
            return Err(semantic("vehicles", "at least one vehicle is required"));
        }
        let base = self.footprint();
        let blocks = build_road_boundaries(&self.layout);
        let mut initial = Vec::with_capacity(self.vehicles.len());
        for (i, v) in self.vehicles.iter().enumerate() {
            let path = format!("vehicles[{i}]");
            if v.id.is_empty() {
                return Err(semantic(format!("{path}.id"), "must be nonempty"));
            }
            if let Some(j) = self.vehicles[..i].iter().position(|o| o.id == v.id) {
                return Err(semantic(format!("{path}.id"), format!("duplicates vehicles[{j}].id '{}'", v.id)));
            }
            let vals = [v.initial.x, v.initial.y, v.initial.theta, v.initial.v, v.terminal.x, v.terminal.y, v.terminal.theta];
            if vals.iter().any(|x| !x.is_finite()) {
                return Err(semantic(path, "non-finite pose or speed"));
            }
            if v.initial.v < self.limits.v_min || v.initial.v > self.limits.v_max {
                return Err(semantic(
                    format!("{path}.initial.v"),
                    format!("initial speed {} outside [{}, {}]", v.initial.v, self.limits.v_min, self.limits.v_max),
                ));
            }
            let start = transform_polytope(&base, v.initial_pose());
            let end = transform_polytope(&base, v.terminal_pose());
            for (r, block) in blocks.iter().enumerate() {
                let d0 = primal_distance(&start, block).map_err(|e| semantic(path.clone(), e.to_string()))?;
                if d0 < self.safety.d_rmin {
                    return Err(semantic(
                        format!("{path}.initial"),
                        format!("footprint is {d0:.3} m from road boundary {r}, below d_rmin"),
                    ));
                }
                let d1 = primal_distance(&end, block).map_err(|e| semantic(path.clone(), e.to_string()))?;
                if d1 <= 0.0 {
                    return Err(semantic(format!("{path}.terminal"), format!("footprint overlaps road boundary {r}")));
                }
            }
            for (j, other) in initial.iter().enumerate() {
                let d = primal_distance(&start, other).map_err(|e| semantic(path.clone(), e.to_string()))?;
                if d <= 0.0 {
                    return Err(semantic(
                        format!("{path}.initial"),
                        format!("initial footprints overlap with '{}'", self.vehicles[j].id),
                    ));
                }
                if d < self.safety.d_min {
                    return Err(semantic(
                        format!("{path}.initial"),
                        format!("initial footprint is {d:.3} m from '{}', below d_min", self.vehicles[j].id),
                    ));
                }
            }
            initial.push(start);
        }
        Ok(self)
    }
}

/// Corner blocks in quadrant order (+,+), (-,+), (-,-), (+,-).
pub fn build_road_boundaries(layout: &IntersectionLayout) -> [Polytope; 4] {
    let (w, e) = (layout.road_half_width, layout.arm_extent);
    let rect = |x0, x1, y0, y1| Polytope::rectangle(x0, x1, y0, y1).expect("valid layout");
    [rect(w, e, w, e), rect(-e, -w, w, e), rect(-e, -w, -e, -w), rect(w, e, -e, -w)]
}

/// Time to cover `distance` from `v0` accelerating at `a_max` and then
/// cruising at `v_max`.
pub fn accelerate_then_cruise_time(distance: f64, v0: f64, a_max: f64, v_max: f64) -> f64 {
    if distance <= 0.0 {
        return 0.0;
    }
    if v0 >= v_max {
        return distance / v0;
    }
    let t_acc = (v_max - v0) / a_max;
    let d_acc = v0 * t_acc + 0.5 * a_max * t_acc * t_acc;
    if distance <= d_acc {
        (-v0 + (v0 * v0 + 2.0 * a_max * distance).sqrt()) / a_max
    } else {
        t_acc + (distance - d_acc) / v_max
    }
}

/// Crossing time of the farthest vehicle driving straight at full acceleration.
pub fn theoretical_lower_bound(scn: &Scenario) -> f64 {
    scn.vehicles
        .iter()
        .map(|v| accelerate_then_cruise_time(v.displacement(), v.initial_speed(), scn.limits.a_max, scn.limits.v_max))
        .fold(0.0, f64::max)
}

/// Distance from the intersection center to the first vehicle of each queue.
pub const GENERATOR_ENTRY_DISTANCE: f64 = 35.0;
/// Spacing between queued vehicles on one lane.
pub const GENERATOR_QUEUE_SPACING: f64 = 6.5;
/// Vehicles per incoming lane.
pub const GENERATOR_LANE_CAPACITY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Movement {
    Straight,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorOptions {
    pub allow_right_turns: bool,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self { allow_right_turns: false }
    }
}

/// Unit vector of arm `k` pointing away from the center (east, north, west, south).
fn arm_direction(k: usize) -> [f64; 2] {
    [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]][k % 4]
}

/// Seeded random fleet on the default layout.
///
/// Vehicle `i` of an `n`-vehicle scenario is the same for every `n > i` with a
/// given seed, so fleets are nested. Vehicle 0 turns left and vehicle 1 drives
/// straight through on lanes of its own; the rest draw their movement at random. Lanes follow
/// right-hand traffic with queues of up to [`GENERATOR_LANE_CAPACITY`].
pub fn generate_scenario(n: usize, seed: u64, opts: GeneratorOptions) -> Result<Scenario, ScenarioError> {
    let capacity = 4 * GENERATOR_LANE_CAPACITY;
    if n == 0 || n > capacity {
        return Err(semantic("vehicles", format!("vehicle count {n} outside 1..={capacity}")));
    }
    let layout = IntersectionLayout::default();
    let lane = layout.road_half_width / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arms_order: Vec<usize> = (0..4).collect();
    arms_order.shuffle(&mut rng);
    // Keep vehicle 1 out of vehicle 0's exit lane so that its straight run is
    // full length and every fleet of two or more shares the same bound.
    if arms_order[1] == (arms_order[0] + 1) % 4 {
        arms_order.swap(1, 2);
    }
    let mut entries = [0usize; 4];
    let mut exits = [0usize; 4];
    let mut vehicles = Vec::with_capacity(n);
    // Draw the full sequence so that prefixes are identical across n.
    for i in 0..capacity {
        let arm = arms_order[i % 4];
        let movement = match i {
            0 => Movement::Left,
            1 => Movement::Straight,
            _ => {
                let choices: &[Movement] = if opts.allow_right_turns {
                    &[Movement::Straight, Movement::Left, Movement::Right]
                } else {
                    &[Movement::Straight, Movement::Left]
                };
                choices[rng.random_range(0..choices.len())]
            }
        };
        if i >= n {
            continue;
        }
        let (exit_arm, turn) = match movement {
            Movement::Straight => ((arm + 2) % 4, 0.0),
            Movement::Left => ((arm + 3) % 4, std::f64::consts::FRAC_PI_2),
            Movement::Right => ((arm + 1) % 4, -std::f64::consts::FRAC_PI_2),
        };
        let e = arm_direction(arm);
        let heading_in = (-e[1]).atan2(-e[0]);
        let right_in = [heading_in.sin(), -heading_in.cos()];
        let d_in = GENERATOR_ENTRY_DISTANCE - GENERATOR_QUEUE_SPACING * entries[arm] as f64;
        entries[arm] += 1;
        let heading_out = heading_in + turn;
        let right_out = [heading_out.sin(), -heading_out.cos()];
        let x_out = arm_direction(exit_arm);
        let d_out = GENERATOR_ENTRY_DISTANCE - GENERATOR_QUEUE_SPACING * exits[exit_arm] as f64;
        exits[exit_arm] += 1;
        let round = |v: f64| (v * 1e9).round() / 1e9;
        vehicles.push(VehicleSpec {
            id: format!("cav{}", i + 1),
            initial: InitialState {
                x: round(d_in * e[0] + lane * right_in[0]),
                y: round(d_in * e[1] + lane * right_in[1]),
                theta: round(heading_in),
                v: default_initial_speed(),
            },
            terminal: TerminalPose {
                x: round(d_out * x_out[0] + lane * right_out[0]),
                y: round(d_out * x_out[1] + lane * right_out[1]),
                theta: round(heading_out),
            },
        });
    }
    Scenario {
        layout,
        vehicle_params: VehicleParams::default(),
        limits: Limits::default(),
        safety: Safety::default(),
        weights: ObjectiveWeights::default(),
        vehicles,
        transcription: TranscriptionConfig::default(),
    }
    .validated()
}

/// Footprint polytope of a vehicle at a pose under this scenario's body size.
pub fn footprint_at(scn: &Scenario, pose: Pose) -> Polytope {
    geometry::transform_polytope(&scn.footprint(), pose)
}
