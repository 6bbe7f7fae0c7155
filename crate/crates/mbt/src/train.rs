//! Autonomous freight-train case study: the cyclic position/speed estimator,
//! the speed-control SFSM, ground-truth physics, sensor models with
//! confidence values, and a scenario-driven simulation with intrusion hooks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predicate::{parse_pred, rat_from_f64_lifted, Decls, Valuation, Value, VarDecl, rat_int};
use crate::sfsm::{OutputAssignment, Sfsm, StepError, Tag, Transition};

/// Physical and operational constants of the case study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Acceleration command magnitude (m/s^2).
    pub a_plus: f64,
    /// Braking command (m/s^2), negative.
    pub a_minus: f64,
    /// Control cycle period (s).
    pub dt: f64,
    /// Minimum admissible overall confidence.
    pub c_min: f64,
    /// Safe speed under degraded confidence (m/s).
    pub v_safe: f64,
    /// Maximum allowed speed (m/s).
    pub v_max: f64,
    /// Creep speed near the target (m/s).
    pub v_min: f64,
    /// Distance band before the stopping point where acceleration is forbidden (m).
    pub delta: f64,
    /// Halt tolerance around the movement authority (m).
    pub alpha: f64,
    /// Constant confidence of the dead-reckoning estimate.
    pub c4: f64,
    /// Noise bound scale: |noise_i| <= (1 - c_i) * noise_gain (m).
    pub noise_gain: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            a_plus: 1.0,
            a_minus: -1.0,
            dt: 0.1,
            c_min: 0.9,
            v_safe: 8.0,
            v_max: 22.0,
            v_min: 1.0,
            delta: 200.0,
            alpha: 0.6,
            c4: 0.9,
            noise_gain: 10.0,
        }
    }
}

impl Constants {
    pub fn check(&self) {
        assert!(self.a_minus < 0.0 && 0.0 < self.a_plus);
        assert!(self.v_min < self.v_safe && self.v_safe < self.v_max);
        assert!(0.0 < self.c_min && self.c_min <= 1.0);
        assert!(self.alpha > 0.0 && self.delta > 0.0 && self.dt > 0.0);
    }
}

/// Observables of the controller: commanded power, obstacle flag, and the
/// estimator outputs. Order is the canonical variable order.
pub fn controller_decls() -> Decls {
    Decls::new(vec![
        VarDecl::boolean("pwr"),
        VarDecl::boolean("omega"),
        VarDecl::real("x", rat_int(0), rat_int(1_000_000), "m"),
        VarDecl::real("v", rat_int(0), rat_int(100), "m/s"),
        VarDecl::real("c", rat_int(0), rat_int(1), ""),
        VarDecl::real("xB", rat_int(0), rat_int(1_000_000), "m"),
        VarDecl::real("xStop", rat_int(0), rat_int(2_000_000), "m"),
    ])
}

pub fn controller_outputs() -> Decls {
    Decls::new(vec![VarDecl::enumerated("a", &["aminus", "zero", "aplus"])])
}

pub const STATES: [&str; 9] = [
    "POWER_OFF",
    "WAIT_FOR_MA",
    "DRIVING",
    "SAFE_DRIVING",
    "NO_ACCEL",
    "BRAKE_TO_TARGET",
    "STOP_TRAIN",
    "BRAKE_FOR_OBSTACLE",
    "HALTED",
];

/// The speed-control SFSM with default constants.
pub fn controller_model() -> Sfsm {
    controller_model_with(&Constants::default())
}

/// Build the controller for a given constant set. Guard regions:
/// movement authority held (`xB - x > alpha`), distance to the predicted
/// stopping point (beyond delta / within delta / at or past it), confidence
/// admissible, and speed relative to 0, v_min, v_safe, v_max.
pub fn controller_model_with(k: &Constants) -> Sfsm {
    k.check();
    let ma = format!("(> (- xB x) {})", k.alpha);
    let no_ma = format!("(<= (- xB x) {})", k.alpha);
    let far = format!("(> (- xB xStop) {})", k.delta);
    let mid = format!("(and (<= (- xB xStop) {}) (> (- xB xStop) 0))", k.delta);
    let brake = "(<= (- xB xStop) 0)".to_string();
    let no_brake = "(> (- xB xStop) 0)".to_string();
    let conf = format!("(>= c {})", k.c_min);
    let no_conf = format!("(< c {})", k.c_min);
    let v0 = "(= v 0)";
    let v_pos = "(> v 0)";
    let below_min = format!("(< v {})", k.v_min);
    let at_least_min = format!("(>= v {})", k.v_min);
    let above_min = format!("(> v {})", k.v_min);
    let up_to_min = format!("(and (> v 0) (<= v {}))", k.v_min);
    let min_band = format!("(and (> v 0) (< v {}))", k.v_min);
    let below_safe = format!("(< v {})", k.v_safe);
    let at_safe = format!("(= v {})", k.v_safe);
    let above_safe = format!("(> v {})", k.v_safe);
    let below_max = format!("(< v {})", k.v_max);
    let at_max = format!("(= v {})", k.v_max);
    let above_max = format!("(> v {})", k.v_max);
    let up_to_max = format!("(and (> v 0) (<= v {}))", k.v_max);

    let t = |src: &str, parts: &[&str], out: &str, dst: &str, tag: Tag| -> Transition {
        let guard = if parts.len() == 1 {
            parts[0].to_string()
        } else {
            format!("(and {})", parts.join(" "))
        };
        Transition {
            source: src.into(),
            guard: parse_pred(&guard).expect("controller guard parses"),
            outputs: vec![OutputAssignment::new("a", out)],
            dest: dst.into(),
            tag,
        }
    };

    use Tag::{Normal as N, Robustness as R};
    let mut ts: Vec<Transition> = Vec::new();

    // POWER_OFF / WAIT_FOR_MA: idle states; any observed motion is treated as
    // implausible and answered by braking toward STOP_TRAIN.
    for (src, na_tag) in [("POWER_OFF", R), ("WAIT_FOR_MA", N)] {
        let off_dest = "POWER_OFF";
        let off_tag = N;
        ts.push(t(src, &["(not pwr)"], "zero", off_dest, off_tag));
        ts.push(t(src, &["pwr", "omega", v0], "zero", "HALTED", N));
        ts.push(t(src, &["pwr", "omega", v_pos], "aminus", "BRAKE_FOR_OBSTACLE", R));
        ts.push(t(src, &["pwr", "(not omega)", &no_ma, v0], "zero", "WAIT_FOR_MA", N));
        ts.push(t(src, &["pwr", "(not omega)", &no_ma, v_pos], "aminus", "STOP_TRAIN", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &at_least_min], "aminus", "STOP_TRAIN", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &conf, &below_min], "aplus", "DRIVING", N));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &no_conf, &below_min], "aplus", "SAFE_DRIVING", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &mid, &below_min], "aplus", "NO_ACCEL", na_tag));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &brake, &below_min], "zero", "BRAKE_TO_TARGET", R));
    }

    // DRIVING / SAFE_DRIVING: closed-loop speed holding at v_max (full
    // confidence) respectively v_safe (degraded confidence).
    for (src, tags) in [
        ("DRIVING", [N, R, R, N, R, N, N, N, R, R, R]),
        ("SAFE_DRIVING", [R, R, R, N, R, R, N, N, N, R, R]),
    ] {
        ts.push(t(src, &["(not pwr)"], "zero", "POWER_OFF", R));
        ts.push(t(src, &["pwr", "omega", v_pos], "aminus", "BRAKE_FOR_OBSTACLE", tags[0]));
        ts.push(t(src, &["pwr", "omega", v0], "zero", "HALTED", tags[1]));
        ts.push(t(src, &["pwr", "(not omega)", &no_ma, v_pos], "aminus", "STOP_TRAIN", tags[2]));
        ts.push(t(src, &["pwr", "(not omega)", &no_ma, v0], "zero", "WAIT_FOR_MA", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &conf, &below_max], "aplus", "DRIVING", tags[3]));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &conf, &at_max], "zero", "DRIVING", if src == "DRIVING" { N } else { R }));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &conf, &above_max], "aminus", "DRIVING", tags[4]));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &no_conf, &below_safe], "aplus", "SAFE_DRIVING", tags[5]));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &no_conf, &at_safe], "zero", "SAFE_DRIVING", tags[6]));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &no_conf, &above_safe], "aminus", "SAFE_DRIVING", tags[7]));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &mid, v0], "aplus", "NO_ACCEL", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &mid, &up_to_max], "zero", "NO_ACCEL", tags[8]));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &mid, &above_max], "aminus", "NO_ACCEL", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &brake, &above_min], "aminus", "BRAKE_TO_TARGET", tags[9]));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &brake, &up_to_min], "zero", "BRAKE_TO_TARGET", tags[10]));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &brake, v0], "zero", "BRAKE_TO_TARGET", R));
    }

    // NO_ACCEL: inside the delta band no further acceleration is allowed,
    // even if the stopping-point estimate momentarily reads far again.
    {
        let src = "NO_ACCEL";
        ts.push(t(src, &["(not pwr)"], "zero", "POWER_OFF", R));
        ts.push(t(src, &["pwr", "omega", v_pos], "aminus", "BRAKE_FOR_OBSTACLE", R));
        ts.push(t(src, &["pwr", "omega", v0], "zero", "HALTED", R));
        ts.push(t(src, &["pwr", "(not omega)", &no_ma, v_pos], "aminus", "STOP_TRAIN", N));
        ts.push(t(src, &["pwr", "(not omega)", &no_ma, v0], "zero", "WAIT_FOR_MA", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, v_pos], "zero", "NO_ACCEL", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, v0], "aplus", "NO_ACCEL", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &mid, v0], "aplus", "NO_ACCEL", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &mid, &up_to_max], "zero", "NO_ACCEL", N));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &mid, &above_max], "aminus", "NO_ACCEL", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &brake, &above_min], "aminus", "BRAKE_TO_TARGET", N));
        // at v <= v_min with a <= 0 the stop forecast lies within alpha of the
        // train, so the authority is already withdrawn; unreachable in normal
        // operation
        ts.push(t(src, &["pwr", "(not omega)", &ma, &brake, &up_to_min], "zero", "BRAKE_TO_TARGET", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &brake, v0], "zero", "BRAKE_TO_TARGET", R));
    }

    // BRAKE_TO_TARGET: service braking toward the stopping point, with the
    // creep band at v_min; a far reading in this state keeps the brake on.
    {
        let src = "BRAKE_TO_TARGET";
        ts.push(t(src, &["(not pwr)"], "zero", "POWER_OFF", R));
        ts.push(t(src, &["pwr", "omega", v_pos], "aminus", "BRAKE_FOR_OBSTACLE", R));
        ts.push(t(src, &["pwr", "omega", v0], "zero", "HALTED", R));
        ts.push(t(src, &["pwr", "(not omega)", &no_ma, &brake, v_pos], "aminus", "STOP_TRAIN", N));
        ts.push(t(src, &["pwr", "(not omega)", &no_ma, &no_brake, v_pos], "aminus", "STOP_TRAIN", R));
        ts.push(t(src, &["pwr", "(not omega)", &no_ma, &brake, v0], "zero", "WAIT_FOR_MA", R));
        ts.push(t(src, &["pwr", "(not omega)", &no_ma, &no_brake, v0], "zero", "WAIT_FOR_MA", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &at_least_min], "aminus", "BRAKE_TO_TARGET", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &min_band], "zero", "BRAKE_TO_TARGET", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, v0], "zero", "BRAKE_TO_TARGET", R));
        // braking hysteresis: keep the brake on through the middle band until
        // the creep speed is reached; releasing at speed would overshoot
        ts.push(t(src, &["pwr", "(not omega)", &ma, &mid, v0], "aplus", "NO_ACCEL", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &mid, &up_to_min], "zero", "NO_ACCEL", N));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &mid, &above_min], "aminus", "BRAKE_TO_TARGET", N));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &brake, &above_min], "aminus", "BRAKE_TO_TARGET", N));
        // same forecast argument as in NO_ACCEL: v <= v_min excludes ma here
        ts.push(t(src, &["pwr", "(not omega)", &ma, &brake, &up_to_min], "zero", "BRAKE_TO_TARGET", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &brake, v0], "zero", "BRAKE_TO_TARGET", R));
    }

    // STOP_TRAIN: finish the stop regardless of a newly arrived authority;
    // from standstill, dispatch on the fresh situation.
    {
        let src = "STOP_TRAIN";
        ts.push(t(src, &["(not pwr)"], "zero", "POWER_OFF", R));
        ts.push(t(src, &["pwr", "omega", v_pos], "aminus", "BRAKE_FOR_OBSTACLE", R));
        ts.push(t(src, &["pwr", "omega", v0], "zero", "HALTED", R));
        ts.push(t(src, &["pwr", "(not omega)", &no_ma, v_pos], "aminus", "STOP_TRAIN", N));
        ts.push(t(src, &["pwr", "(not omega)", &ma, v_pos], "aminus", "STOP_TRAIN", R));
        ts.push(t(src, &["pwr", "(not omega)", &no_ma, v0], "zero", "WAIT_FOR_MA", N));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &conf, v0], "aplus", "DRIVING", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &no_conf, v0], "aplus", "SAFE_DRIVING", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &mid, v0], "aplus", "NO_ACCEL", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &brake, v0], "zero", "BRAKE_TO_TARGET", R));
    }

    // BRAKE_FOR_OBSTACLE: emergency stop; once standing, resume from the
    // fresh situation if the obstacle is gone.
    {
        let src = "BRAKE_FOR_OBSTACLE";
        ts.push(t(src, &["(not pwr)"], "zero", "POWER_OFF", R));
        ts.push(t(src, &["pwr", "omega", v_pos], "aminus", "BRAKE_FOR_OBSTACLE", N));
        ts.push(t(src, &["pwr", "omega", v0], "zero", "HALTED", N));
        ts.push(t(src, &["pwr", "(not omega)", v_pos], "aminus", "BRAKE_FOR_OBSTACLE", R));
        ts.push(t(src, &["pwr", "(not omega)", &no_ma, v0], "zero", "WAIT_FOR_MA", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &conf, v0], "aplus", "DRIVING", N));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &far, &no_conf, v0], "aplus", "SAFE_DRIVING", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &mid, v0], "aplus", "NO_ACCEL", R));
        ts.push(t(src, &["pwr", "(not omega)", &ma, &brake, v0], "zero", "BRAKE_TO_TARGET", R));
    }

    // HALTED: standing before an obstacle until it is removed.
    {
        let src = "HALTED";
        ts.push(t(src, &["(not pwr)"], "zero", "POWER_OFF", R));
        ts.push(t(src, &["pwr", "omega", v0], "zero", "HALTED", N));
        ts.push(t(src, &["pwr", "omega", v_pos], "aminus", "BRAKE_FOR_OBSTACLE", R));
        ts.push(t(src, &["pwr", "(not omega)"], "zero", "WAIT_FOR_MA", N));
    }

    Sfsm {
        name: "train-speed-control".into(),
        inputs: controller_decls(),
        outputs: controller_outputs(),
        states: STATES.iter().map(|s| s.to_string()).collect(),
        initial: "POWER_OFF".into(),
        end_states: ["POWER_OFF", "WAIT_FOR_MA"].iter().map(|s| s.to_string()).collect(),
        transitions: ts,
    }
}

/// Map an output assignment to a commanded acceleration.
pub fn acceleration_of(out: &[OutputAssignment], k: &Constants) -> Option<f64> {
    let a = out.iter().find(|o| o.target == "a")?;
    match a.value.as_str() {
        "aminus" => Some(k.a_minus),
        "zero" => Some(0.0),
        "aplus" => Some(k.a_plus),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Estimator (cyclic computation C0)
// ---------------------------------------------------------------------------

/// Estimator state plus the controller-visible quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Aggregated position estimate (m).
    pub x: f64,
    /// Overall confidence in [0,1].
    pub c: f64,
    /// Dead-reckoning position estimate (m).
    pub x4: f64,
    /// Speed estimate (m/s), clamped at 0.
    pub v: f64,
    /// Commanded acceleration of the previous cycle (m/s^2).
    pub a: f64,
    /// Predicted earliest stopping position (m).
    pub x_stop: f64,
    /// Current movement authority (m).
    pub x_b: f64,
    /// Previous-cycle snapshots.
    pub x_prev: f64,
    pub v_prev: f64,
    /// Speed held while no further acceleration is allowed (m/s).
    pub v_const: f64,
}

impl TrainState {
    /// Initial state at position `x_a` with full confidence and xB = x_a.
    pub fn initial(x_a: f64) -> Self {
        TrainState {
            x: x_a,
            c: 1.0,
            x4: x_a,
            v: 0.0,
            a: 0.0,
            x_stop: x_a,
            x_b: x_a,
            x_prev: x_a,
            v_prev: 0.0,
            v_const: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub x: f64,
    pub c: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EstimatorError {
    #[error("all position confidences are zero; weighted mean undefined")]
    DegenerateWeights,
}

/// One estimator cycle: dead reckoning, confidence-weighted position fusion,
/// speed from position increments, overall confidence, stopping prediction.
pub fn c0_update(
    s: &TrainState,
    readings: &[SensorReading; 3],
    k: &Constants,
) -> Result<TrainState, EstimatorError> {
    let x4 = s.x + s.v * k.dt + s.a / 2.0 * k.dt * k.dt;
    let weight = readings.iter().map(|r| r.c).sum::<f64>() + k.c4;
    if weight == 0.0 {
        return Err(EstimatorError::DegenerateWeights);
    }
    let x = (readings.iter().map(|r| r.c * r.x).sum::<f64>() + k.c4 * x4) / weight;
    let v = (2.0 * (x - s.x) / k.dt - s.v).max(0.0);
    let c = (readings.iter().map(|r| r.c).sum::<f64>() + k.c4) / 4.0;
    let d_stop = -(v + s.a * k.dt) / k.a_minus;
    let x_stop = x + v * k.dt + s.a / 2.0 * k.dt * k.dt - k.a_minus / 2.0 * d_stop * d_stop;
    Ok(TrainState {
        x,
        c,
        x4,
        v,
        a: s.a,
        x_stop,
        x_b: s.x_b,
        x_prev: s.x,
        v_prev: s.v,
        v_const: s.v_const,
    })
}

/// Algebraically expanded form of the stopping prediction, used as an oracle.
pub fn x_stop_expanded(x: f64, v: f64, a: f64, k: &Constants) -> f64 {
    let u = v + a * k.dt;
    x + v * k.dt + a / 2.0 * k.dt * k.dt + u * u / (-2.0 * k.a_minus)
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub true_pos: f64,
    pub true_vel: f64,
    pub obstacle: bool,
    pub x_b: f64,
    pub v_max_cmd: f64,
    pub pwr: bool,
    pub t: f64,
}

impl EnvState {
    pub fn initial(x_a: f64, v_max_cmd: f64) -> Self {
        EnvState { true_pos: x_a, true_vel: 0.0, obstacle: false, x_b: x_a, v_max_cmd, pwr: false, t: 0.0 }
    }
}

/// Constant-acceleration kinematics over one cycle; speed clamps at 0 so a
/// braking train halts instead of reversing.
pub fn env_step(e: &EnvState, a: f64, k: &Constants) -> EnvState {
    let new_vel = (e.true_vel + a * k.dt).max(0.0);
    let new_pos = e.true_pos + (e.true_vel + new_vel) / 2.0 * k.dt;
    EnvState { true_pos: new_pos, true_vel: new_vel, t: e.t + k.dt, ..e.clone() }
}

/// Per-sensor confidence profile plus optional intrusive overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorProfile {
    pub c: [f64; 3],
}

impl Default for SensorProfile {
    fn default() -> Self {
        SensorProfile { c: [1.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorOverride {
    /// Reported confidences, per sensor.
    pub c: [Option<f64>; 3],
    /// Absolute reported positions, per sensor.
    pub x: [Option<f64>; 3],
}

/// Produce the three position readings: true position plus bounded noise
/// scaled by (1 - c_i), with intrusion overrides applied afterwards.
pub fn sensor_model(
    e: &EnvState,
    profile: &SensorProfile,
    intrusion: Option<&SensorOverride>,
    rng: &mut ChaCha8Rng,
    k: &Constants,
) -> [SensorReading; 3] {
    let mut out = [SensorReading { x: 0.0, c: 0.0 }; 3];
    for i in 0..3 {
        let ci = profile.c[i];
        let bound = (1.0 - ci) * k.noise_gain;
        let noise = if bound > 0.0 { rng.gen_range(-bound..=bound) } else { 0.0 };
        out[i] = SensorReading { x: e.true_pos + noise, c: ci };
    }
    if let Some(over) = intrusion {
        for i in 0..3 {
            if let Some(c) = over.c[i] {
                out[i].c = c;
            }
            if let Some(x) = over.x[i] {
                out[i].x = x;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Scenarios and simulation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Event {
    Power { on: bool },
    MovementAuthority { x_b: f64 },
    Obstacle { present: bool },
    Intrusion { overrides: SensorOverride },
    IntrusionEnd,
    SpeedLimit { v: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    /// Simulated time (s) at which the event takes effect.
    pub at: f64,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Track position of the initial standstill (m).
    pub start: f64,
    /// Number of control cycles to simulate.
    pub cycles: usize,
    #[serde(default)]
    pub profile: SensorProfile,
    pub events: Vec<TimedEvent>,
}

/// One line of the cycle-by-cycle trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub t: f64,
    pub true_pos: f64,
    pub x: f64,
    pub c: f64,
    pub v: f64,
    pub a: f64,
    pub state: String,
    pub x_b: f64,
    pub x_stop: f64,
    pub omega: bool,
    pub pwr: bool,
    /// Index of the controller transition fired this cycle.
    pub fired: usize,
}

pub fn trace_csv(records: &[CycleRecord]) -> String {
    let mut out = String::from("t,truePos,x,c,v,a,state,xB,xStop,omega\n");
    for r in records {
        out.push_str(&format!(
            "{:.1},{:.4},{:.4},{:.4},{:.4},{:.1},{},{:.1},{:.4},{}\n",
            r.t,
            r.true_pos,
            r.x,
            r.c,
            r.v,
            r.a,
            r.state,
            r.x_b,
            r.x_stop,
            r.omega as u8
        ));
    }
    out
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("controller produced no acceleration command")]
    MissingOutput,
}

/// Single-owner simulation instance: environment, estimator, controller.
pub struct TrainSim {
    pub k: Constants,
    pub model: Sfsm,
    pub env: EnvState,
    pub train: TrainState,
    pub control: String,
    pub profile: SensorProfile,
    pub intrusion: Option<SensorOverride>,
    rng: ChaCha8Rng,
}

impl TrainSim {
    pub fn new(k: Constants, start: f64, seed: u64) -> Self {
        let model = controller_model_with(&k);
        let control = model.initial.clone();
        TrainSim {
            env: EnvState::initial(start, k.v_max),
            train: TrainState::initial(start),
            model,
            control,
            profile: SensorProfile::default(),
            intrusion: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            k,
        }
    }

    pub fn apply(&mut self, ev: &Event) {
        match ev {
            Event::Power { on } => self.env.pwr = *on,
            Event::MovementAuthority { x_b } => {
                self.env.x_b = *x_b;
                self.train.x_b = *x_b;
            }
            Event::Obstacle { present } => self.env.obstacle = *present,
            Event::Intrusion { overrides } => self.intrusion = Some(overrides.clone()),
            Event::IntrusionEnd => self.intrusion = None,
            Event::SpeedLimit { v } => self.env.v_max_cmd = *v,
        }
    }

    /// Controller-visible valuation, lifted to exact rationals.
    pub fn observation(&self) -> Valuation {
        let mut u = Valuation::new();
        u.insert("pwr".into(), Value::Bool(self.env.pwr));
        u.insert("omega".into(), Value::Bool(self.env.obstacle));
        u.insert("x".into(), Value::Num(rat_from_f64_lifted(self.train.x)));
        u.insert("v".into(), Value::Num(rat_from_f64_lifted(self.train.v)));
        u.insert("c".into(), Value::Num(rat_from_f64_lifted(self.train.c)));
        u.insert("xB".into(), Value::Num(rat_from_f64_lifted(self.train.x_b)));
        u.insert("xStop".into(), Value::Num(rat_from_f64_lifted(self.train.x_stop)));
        u
    }

    /// One control cycle: sense, estimate, decide, move.
    pub fn step(&mut self) -> Result<CycleRecord, SimError> {
        let readings = sensor_model(&self.env, &self.profile, self.intrusion.as_ref(), &mut self.rng, &self.k);
        self.train = c0_update(&self.train, &readings, &self.k)?;
        let u = self.observation();
        let (fired, dest, outputs) = self.model.step_indexed(&self.control, &u)?;
        let a = acceleration_of(&outputs, &self.k).ok_or(SimError::MissingOutput)?;
        if dest == "NO_ACCEL" && self.control != "NO_ACCEL" {
            self.train.v_const = self.train.v;
        }
        let record = CycleRecord {
            t: self.env.t,
            true_pos: self.env.true_pos,
            x: self.train.x,
            c: self.train.c,
            v: self.train.v,
            a,
            state: dest.clone(),
            x_b: self.train.x_b,
            x_stop: self.train.x_stop,
            omega: self.env.obstacle,
            pwr: self.env.pwr,
            fired,
        };
        self.control = dest;
        self.train.a = a;
        self.env = env_step(&self.env, a, &self.k);
        Ok(record)
    }

    /// Run a scenario to completion, firing events at their due times.
    pub fn run_scenario(scenario: &Scenario, k: Constants) -> Result<Vec<CycleRecord>, SimError> {
        let mut sim = TrainSim::new(k, scenario.start, scenario.seed);
        sim.profile = scenario.profile.clone();
        let mut events: Vec<&TimedEvent> = scenario.events.iter().collect();
        events.sort_by(|a, b| a.at.partial_cmp(&b.at).unwrap());
        let mut next = 0usize;
        let mut trace = Vec::with_capacity(scenario.cycles);
        for _ in 0..scenario.cycles {
            while next < events.len() && events[next].at <= sim.env.t + 1e-9 {
                sim.apply(&events[next].event);
                next += 1;
            }
            trace.push(sim.step()?);
        }
        Ok(trace)
    }
}

/// The baseline mission: power on at the origin, receive a 10 km movement
/// authority, drive, and stop at the target.
pub fn standard_run() -> Scenario {
    Scenario {
        name: "standard-run".into(),
        seed: 1,
        start: 0.0,
        cycles: 5400,
        profile: SensorProfile::default(),
        events: vec![
            TimedEvent { at: 0.0, event: Event::Power { on: true } },
            TimedEvent { at: 1.0, event: Event::MovementAuthority { x_b: 10_000.0 } },
            TimedEvent { at: 530.0, event: Event::Power { on: false } },
        ],
    }
}

fn intrusion_all(c: f64) -> Event {
    Event::Intrusion {
        overrides: SensorOverride { c: [Some(c); 3], x: [None; 3] },
    }
}

/// Power-up while a distant authority is already present; the idle cycles
/// before power-on and the direct idle-to-driving dispatch are the point.
pub fn powered_handover() -> Scenario {
    Scenario {
        name: "powered-handover".into(),
        seed: 2,
        start: 0.0,
        cycles: 1500,
        profile: SensorProfile::default(),
        events: vec![
            TimedEvent { at: 0.0, event: Event::MovementAuthority { x_b: 2_000.0 } },
            TimedEvent { at: 0.5, event: Event::Power { on: true } },
            TimedEvent { at: 145.0, event: Event::Power { on: false } },
        ],
    }
}

/// A two-metre authority: the whole mission happens inside the braking band.
pub fn short_authority() -> Scenario {
    Scenario {
        name: "short-authority".into(),
        seed: 3,
        start: 0.0,
        cycles: 300,
        profile: SensorProfile::default(),
        events: vec![
            TimedEvent { at: 0.0, event: Event::Power { on: true } },
            TimedEvent { at: 1.0, event: Event::MovementAuthority { x_b: 2.0 } },
            TimedEvent { at: 28.0, event: Event::Power { on: false } },
        ],
    }
}

/// An obstacle signal during cruise forces an emergency stop and a wait
/// until the obstacle is removed.
pub fn obstacle_run() -> Scenario {
    Scenario {
        name: "obstacle-run".into(),
        seed: 4,
        start: 0.0,
        cycles: 640,
        profile: SensorProfile::default(),
        events: vec![
            TimedEvent { at: 0.0, event: Event::Power { on: true } },
            TimedEvent { at: 1.0, event: Event::MovementAuthority { x_b: 10_000.0 } },
            TimedEvent { at: 30.0, event: Event::Obstacle { present: true } },
            TimedEvent { at: 59.9, event: Event::MovementAuthority { x_b: 0.0 } },
            TimedEvent { at: 60.0, event: Event::Obstacle { present: false } },
            TimedEvent { at: 63.0, event: Event::Power { on: false } },
        ],
    }
}

/// Obstacle signals while standing, under power and across a power cycle.
pub fn obstacle_at_standstill() -> Scenario {
    Scenario {
        name: "obstacle-at-standstill".into(),
        seed: 5,
        start: 0.0,
        cycles: 80,
        profile: SensorProfile::default(),
        events: vec![
            TimedEvent { at: 0.5, event: Event::Power { on: true } },
            TimedEvent { at: 1.0, event: Event::Obstacle { present: true } },
            TimedEvent { at: 3.0, event: Event::Obstacle { present: false } },
            TimedEvent { at: 4.0, event: Event::Power { on: false } },
            TimedEvent { at: 4.9, event: Event::Obstacle { present: true } },
            TimedEvent { at: 5.0, event: Event::Power { on: true } },
            TimedEvent { at: 6.0, event: Event::Obstacle { present: false } },
            TimedEvent { at: 7.0, event: Event::Power { on: false } },
        ],
    }
}

/// Sensor corruption at cruise speed: confidence drops below the threshold,
/// speed is reduced to the safe level and held until confidence returns.
pub fn degraded_cruise() -> Scenario {
    Scenario {
        name: "degraded-cruise".into(),
        seed: 6,
        start: 0.0,
        cycles: 1900,
        profile: SensorProfile::default(),
        events: vec![
            TimedEvent { at: 0.0, event: Event::Power { on: true } },
            TimedEvent { at: 1.0, event: Event::MovementAuthority { x_b: 2_500.0 } },
            TimedEvent { at: 40.0, event: intrusion_all(0.8) },
            TimedEvent { at: 70.0, event: Event::IntrusionEnd },
            TimedEvent { at: 185.0, event: Event::Power { on: false } },
        ],
    }
}

/// Sensor corruption during the initial acceleration, below the safe speed.
pub fn degraded_start() -> Scenario {
    Scenario {
        name: "degraded-start".into(),
        seed: 7,
        start: 0.0,
        cycles: 700,
        profile: SensorProfile::default(),
        events: vec![
            TimedEvent { at: 0.0, event: Event::Power { on: true } },
            TimedEvent { at: 1.0, event: Event::MovementAuthority { x_b: 400.0 } },
            TimedEvent { at: 4.0, event: intrusion_all(0.8) },
            TimedEvent { at: 10.0, event: Event::IntrusionEnd },
            TimedEvent { at: 68.0, event: Event::Power { on: false } },
        ],
    }
}

/// The movement authority is pulled back to a point the train can no longer
/// stop before, forcing a full-length emergency-style brake past the target.
pub fn authority_retraction() -> Scenario {
    Scenario {
        name: "authority-retraction".into(),
        seed: 8,
        start: 0.0,
        cycles: 760,
        profile: SensorProfile::default(),
        events: vec![
            TimedEvent { at: 0.0, event: Event::Power { on: true } },
            TimedEvent { at: 1.0, event: Event::MovementAuthority { x_b: 2_000.0 } },
            TimedEvent { at: 30.0, event: Event::MovementAuthority { x_b: 500.0 } },
            TimedEvent { at: 74.0, event: Event::Power { on: false } },
        ],
    }
}

/// The shipped mission library; campaign seeds are lowered from these runs.
pub fn scenario_library() -> Vec<Scenario> {
    vec![
        standard_run(),
        powered_handover(),
        short_authority(),
        obstacle_run(),
        obstacle_at_standstill(),
        degraded_cruise(),
        degraded_start(),
        authority_retraction(),
    ]
}

#[cfg(test)]
pub mod tests_support {
    use crate::predicate::{rat, rat_to_f64, Decls, Valuation, Value, VarKind};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    /// Random input valuation on a millimetre grid (exactly representable),
    /// uniform over each variable's declared bounds.
    pub fn random_valuation(rng: &mut ChaCha8Rng, decls: &Decls) -> Valuation {
        let mut u = Valuation::new();
        for d in decls.iter() {
            let v = match &d.kind {
                VarKind::Boolean => Value::Bool(rng.gen_bool(0.5)),
                VarKind::Real { bounds, .. } => {
                    let (lo, hi) = bounds.clone().expect("inputs are bounded");
                    let lo_i = (rat_to_f64(&lo) * 1000.0) as i64;
                    let hi_i = (rat_to_f64(&hi) * 1000.0) as i64;
                    Value::Num(rat(rng.gen_range(lo_i..=hi_i), 1000))
                }
                VarKind::Enumerated { .. } => unreachable!("no enumerated inputs"),
            };
            u.insert(d.name.clone(), v);
        }
        u
    }
}
