//! Point-mass impedance dynamics, sensor model and observation assembly.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{CutterModel, MaterialParams, SimConfig};
use super::force::{cutting_force, Force3};
use crate::error::Result;
use crate::rng::Rng;

pub const N_S: usize = 7;
pub const N_A: usize = 5;

/// Observation channel indices.
pub mod obs {
    pub const FX: usize = 0;
    pub const FY: usize = 1;
    pub const FZ: usize = 2;
    /// m/min
    pub const FEED: usize = 3;
    /// mm, positive when the tool is pushed out of the cut.
    pub const DEVIATION: usize = 4;
    /// mm
    pub const DOC: usize = 5;
    pub const PROGRESS: usize = 6;
}

pub const FEED_ADJUST_RANGE: (f64, f64) = (-0.5, 1.0);
/// mm
pub const DOC_OFFSET_RANGE: (f64, f64) = (-1.0, 1.0);

/// Policy output: `[a_f, doc_offset (mm), k_x, k_y, k_z (N/m)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub feed_adjust: f64,
    pub doc_offset: f64,
    pub stiffness: [f64; 3],
}

impl Action {
    pub fn nominal(k: f64) -> Self {
        Action {
            feed_adjust: 0.0,
            doc_offset: 0.0,
            stiffness: [k; 3],
        }
    }

    pub fn to_vec(&self) -> [f64; N_A] {
        [self.feed_adjust, self.doc_offset, self.stiffness[0], self.stiffness[1], self.stiffness[2]]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Action {
            feed_adjust: v[0],
            doc_offset: v[1],
            stiffness: [v[2], v[3], v[4]],
        }
    }
}

/// Per-channel action bounds, `(lo, hi)`.
pub fn action_bounds(k_min: f64, k_max: f64) -> [(f64, f64); N_A] {
    [FEED_ADJUST_RANGE, DOC_OFFSET_RANGE, (k_min, k_max), (k_min, k_max), (k_min, k_max)]
}

/// TCP state of the point-mass impedance model, SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub stiffness: [f64; 3],
    pub mass: f64,
    pub reference: [f64; 3],
    pub reference_velocity: [f64; 3],
}

impl ImpedanceState {
    pub fn damping(&self, axis: usize) -> f64 {
        2.0 * (self.mass * self.stiffness[axis]).sqrt()
    }

    /// `½ m v² + ½ K e²` with `e` the tracking error.
    pub fn energy(&self) -> f64 {
        (0..3)
            .map(|a| {
                let e = self.reference[a] - self.position[a];
                0.5 * self.mass * self.velocity[a] * self.velocity[a] + 0.5 * self.stiffness[a] * e * e
            })
            .sum()
    }

    /// One linearly implicit Euler step: spring and damper are evaluated at
    /// the new state, the external force at the old one. `deadband` (m) is
    /// subtracted from the tracking error before the spring acts.
    pub fn step(&mut self, external: &Force3, dt: f64, deadband: f64) {
        let m = self.mass;
        for a in 0..3 {
            let k = self.stiffness[a];
            let d = self.damping(a);
            let e = self.reference[a] - self.position[a];
            let (k_eff, shift) = if deadband > 0.0 {
                if e.abs() <= deadband {
                    (0.0, 0.0)
                } else {
                    (k, deadband * e.signum())
                }
            } else {
                (k, 0.0)
            };
            let rhs = m * self.velocity[a]
                + dt * (k_eff * (e - shift) + d * self.reference_velocity[a] + external[a]);
            let v = rhs / (m + dt * d + dt * dt * k_eff);
            self.velocity[a] = v;
            self.position[a] += dt * v;
        }
    }
}

/// Closed-form error of a critically damped oscillator released from rest
/// with error `e0`: `e0 (1 + ω t) e^{−ω t}`, `ω = √(K/m)`.
pub fn critically_damped_error(e0: f64, k: f64, m: f64, t: f64) -> f64 {
    let w = (k / m).sqrt();
    e0 * (1.0 + w * t) * (-w * t).exp()
}

/// First-order lag with exact discretisation for a zero-order-held input.
#[derive(Debug, Clone, PartialEq)]
pub struct LagFilter {
    pub tau: f64,
    pub state: [f64; 3],
}

impl LagFilter {
    pub fn new(tau: f64) -> Self {
        LagFilter { tau, state: [0.0; 3] }
    }

    pub fn update(&mut self, input: &Force3, dt: f64) -> Force3 {
        if self.tau <= 0.0 {
            self.state = *input;
        } else {
            let a = 1.0 - (-dt / self.tau).exp();
            for k in 0..3 {
                self.state[k] += a * (input[k] - self.state[k]);
            }
        }
        self.state
    }
}

/// Clamp `a` into bounds. Returns the clamped action and whether anything moved.
pub fn clamp_action(a: &Action, k_min: f64, k_max: f64) -> (Action, bool) {
    let b = action_bounds(k_min, k_max);
    let v = a.to_vec();
    let mut out = [0.0; N_A];
    let mut moved = false;
    for i in 0..N_A {
        let x = if v[i].is_nan() { 0.5 * (b[i].0 + b[i].1) } else { v[i] };
        out[i] = x.clamp(b[i].0, b[i].1);
        moved |= out[i] != v[i];
    }
    (Action::from_slice(&out), moved)
}

/// A running simulation.
#[derive(Debug, Clone)]
pub struct Sim {
    pub config: SimConfig,
    pub cutter: CutterModel,
    pub material: MaterialParams,
    pub state: ImpedanceState,
    pub time: f64,
    pub spindle_angle: f64,
    pub action: Action,
    pub true_force: Force3,
    pub sensor: LagFilter,
    pub sensed: Force3,
    /// m along the path.
    pub path_pos: f64,
    pub clamp_events: usize,
    pub fault: Option<String>,
    /// Time the reference reached the end of the path, when it has.
    pub completion_time: Option<f64>,
    noise: Rng,
}

impl Sim {
    pub fn new(config: &SimConfig, noise: Rng) -> Result<Self> {
        config.validate()?;
        let cutter = config.effective_cutter()?;
        let material = config.effective_material();
        let k0 = config.impedance.k_max.min(config.impedance.k_min.max(1000.0));
        let z0 = -config.nominal_doc * 1e-3;
        let state = ImpedanceState {
            position: [0.0, 0.0, z0],
            velocity: [0.0; 3],
            stiffness: [k0; 3],
            mass: config.impedance.mass,
            reference: [0.0, 0.0, z0],
            reference_velocity: [0.0; 3],
        };
        let completion_time = if config.path_length == 0.0 { Some(0.0) } else { None };
        Ok(Sim {
            config: config.clone(),
            cutter,
            material,
            state,
            time: 0.0,
            spindle_angle: 0.0,
            action: Action::nominal(k0),
            true_force: [0.0; 3],
            sensor: LagFilter::new(config.perturbation.sensor_lag),
            sensed: [0.0; 3],
            path_pos: 0.0,
            clamp_events: 0,
            fault: None,
            completion_time,
            noise,
        })
    }

    pub fn done(&self) -> bool {
        self.fault.is_some() || self.completion_time.is_some()
    }

    pub fn progress(&self) -> f64 {
        if self.config.path_length > 0.0 {
            (self.path_pos / self.config.path_length).clamp(0.0, 1.0)
        } else {
            1.0
        }
    }

    /// m/min
    pub fn commanded_feed(&self) -> f64 {
        self.config.nominal_feed * (1.0 + self.action.feed_adjust)
    }

    /// mm
    pub fn commanded_doc(&self) -> f64 {
        (self.config.nominal_doc + self.action.doc_offset).max(0.0)
    }

    /// Fraction of the material span covered at path position `x` (m), or
    /// `None` outside the material.
    fn material_fraction(&self, x: f64) -> Option<f64> {
        let start = self.config.approach;
        let end = self.config.path_length;
        if x < start || x > end || end <= start {
            return None;
        }
        Some((x - start) / (end - start))
    }

    /// Depth of the tool below the true material surface, mm (0 outside it).
    pub fn engaged_doc(&self) -> f64 {
        match self.material_fraction(self.state.position[0]) {
            Some(s) => {
                let surface = self.config.geometry.surface_offset(s);
                (surface - self.state.position[2] * 1e3).max(0.0)
            }
            None => 0.0,
        }
    }

    /// Install a new action; out-of-bounds values are clamped and counted.
    pub fn apply_action(&mut self, a: &Action) {
        let imp = &self.config.impedance;
        let (c, moved) = clamp_action(a, imp.k_min, imp.k_max);
        if moved {
            self.clamp_events += 1;
            log::debug!("action clamped at t={:.3}: {a:?} -> {c:?}", self.time);
        }
        self.action = c;
        self.state.stiffness = c.stiffness;
    }

    /// Advance one control step.
    pub fn step(&mut self) -> Result<()> {
        if self.done() {
            return Ok(());
        }
        let dt = self.config.control_dt;
        let v = self.commanded_feed() / 60.0;
        let l = self.config.path_length;

        let doc = self.engaged_doc();
        let feed_actual = (self.state.velocity[0] * 60.0).max(0.0);
        let f = match cutting_force(&self.cutter, &self.material, doc, feed_actual, self.spindle_angle) {
            Ok(f) => f,
            Err(e) => {
                self.fault = Some(format!("t={:.3}s: {e}", self.time));
                return Ok(());
            }
        };
        self.true_force = f;

        let next = self.path_pos + v * dt;
        if next >= l {
            self.completion_time = Some(self.time + (l - self.path_pos) / v);
            self.path_pos = l;
        } else {
            self.path_pos = next;
        }
        self.state.reference = [self.path_pos, 0.0, -self.commanded_doc() * 1e-3];
        self.state.reference_velocity = [v, 0.0, 0.0];
        self.state.step(&f, dt, self.config.perturbation.backlash * 1e-3);

        let p = &self.config.perturbation;
        let lagged = self.sensor.update(&f, dt);
        self.time += dt;
        self.spindle_angle = (self.spindle_angle + self.cutter.angular_speed() * dt).rem_euclid(std::f64::consts::TAU);
        let bias = p.drift_rate * self.time;
        for k in 0..3 {
            self.sensed[k] = lagged[k] + bias;
        }

        let bound = 10.0 * l.max(2.0 * self.cutter.radius);
        if self.state.position.iter().chain(&self.state.velocity).any(|x| !x.is_finite())
            || self.state.position.iter().any(|x| x.abs() > bound)
        {
            self.fault = Some(format!("t={:.3}s: TCP left the workspace", self.time));
        }
        Ok(())
    }

    /// Current observation vector.
    pub fn observe(&mut self) -> [f64; N_S] {
        let p = &self.config.perturbation;
        let mut f = self.sensed;
        if p.sensor_noise > 0.0 {
            for v in &mut f {
                let n: f64 = self.noise.sample(StandardNormal);
                *v += p.sensor_noise * n;
            }
        }
        let dev = (self.state.position[2] - self.state.reference[2]) * 1e3;
        [
            f[0],
            f[1],
            f[2],
            self.state.velocity[0] * 60.0,
            dev,
            self.commanded_doc(),
            self.progress(),
        ]
    }

    /// Run control steps until the next observation instant.
    pub fn advance_observation(&mut self) -> Result<()> {
        let n = self.config.substeps()?;
        for _ in 0..n {
            self.step()?;
            if self.done() {
                break;
            }
        }
        Ok(())
    }
}
