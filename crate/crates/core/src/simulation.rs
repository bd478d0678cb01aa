//! Deterministic route replay, salt accounting, and synthetic routes.
//!
//! Replay integrates chainage from the trace's speed channel (trapezoidal
//! rule between samples) and evaluates the controller at every fixed-width
//! chainage crossing — 2 ft by default — feeding it the most recent filtered
//! sample and the zone summary from the tags passed so far. Each evaluation
//! accounts `rate × width × step/5280` pounds of salt.
//!
//! The synthetic route generator produces traces from a segment list (grade,
//! curve radius, speed per segment) at the nominal 10 ms sample period, with
//! optional seeded Gaussian sensor noise, so experiments are reproducible
//! from a small spec instead of a recorded drive.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::controller::{self, ConfigError, ControllerConfig, ControllerState, StepOutput};
use crate::rfid::{ChainageDecreased, CodecError, ReaderState, RoadsideTag, TagPlacement};
use crate::telemetry::{grade_to_angle, SensorSample, Trace};
use crate::{FEET_PER_MILE, MPH_TO_FPS};

/// Default spacing between controller evaluations, feet.
pub const DEFAULT_STEP_FT: f64 = 2.0;

/// Column order of the per-step replay CSV.
pub const RUN_CSV_HEADER: &str = "chainage_ft,incline_deg,omega_dps,effective_rate,discharge_lb_per_hr,width,material,zone_multiplier,blast_active";

/// One controller evaluation during replay.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStep {
    /// Evaluation position, an exact multiple of the step width.
    pub chainage_ft: f64,
    /// What the controller decided.
    pub output: StepOutput,
    /// The sample the controller saw.
    pub sample: SensorSample,
}

/// A completed replay.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteRun {
    /// Label copied from the trace.
    pub route_id: String,
    /// Evaluation spacing, feet.
    pub step_ft: f64,
    /// Every evaluation, in chainage order.
    pub steps: Vec<RunStep>,
    /// Σ rate·width·(step/5280) over the steps, pounds.
    pub total_salt_lb: f64,
    /// Integrated trace distance, miles.
    pub distance_mi: f64,
}

impl RouteRun {
    /// Min and max effective rate over steps that actually discharged.
    /// `(0, 0)` if nothing was discharged at all.
    pub fn rate_range(&self) -> (f64, f64) {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for s in &self.steps {
            let r = s.output.effective_rate;
            if r > 0.0 {
                min = if r < min { r } else { min };
                max = if r > max { r } else { max };
            }
        }
        if min.is_finite() {
            (min, max)
        } else {
            (0.0, 0.0)
        }
    }
}

/// Replay failures.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    /// The trace has no samples.
    #[error("trace contains no samples")]
    EmptyTrace,
    /// Step width must be positive.
    #[error("step_ft must be positive and finite")]
    BadStep,
    /// The trace does not travel even one step.
    #[error("trace too short to cover one {step_ft} ft step (distance {distance_ft} ft)")]
    TraceTooShort {
        /// Integrated distance of the trace.
        distance_ft: f64,
        /// Requested step width.
        step_ft: f64,
    },
    /// The controller config is invalid.
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// A placed tag violates its own invariants.
    #[error("invalid tag placement at {chainage_ft} ft: {source}")]
    Tag {
        /// Placement position.
        chainage_ft: f64,
        /// Underlying tag error.
        source: CodecError,
    },
    /// A placement position is negative or non-finite.
    #[error("tag placement chainage must be finite and >= 0, got {0}")]
    BadPlacement(f64),
    /// Internal: the reader was driven backwards.
    #[error(transparent)]
    Reader(#[from] ChainageDecreased),
}

/// Replay `trace` against `placements` under `cfg`, evaluating every
/// `step_ft` feet of chainage.
///
/// Evaluations happen at chainage 0, `step_ft`, `2·step_ft`, …, each using
/// the sample that was current when the crossing was reached, so the
/// decision for a step never looks at readings from beyond it. A route of
/// exactly `N·step_ft` feet produces `N + 1` evaluations (the last sits on
/// the route's end).
pub fn run(
    trace: &Trace,
    placements: &[TagPlacement],
    cfg: &ControllerConfig,
    step_ft: f64,
) -> Result<RouteRun, SimError> {
    cfg.validate()?;
    if !(step_ft > 0.0 && step_ft.is_finite()) {
        return Err(SimError::BadStep);
    }
    let samples = &trace.samples;
    if samples.is_empty() {
        return Err(SimError::EmptyTrace);
    }

    let mut tags: Vec<TagPlacement> = placements.to_vec();
    for t in &tags {
        if !(t.chainage_ft >= 0.0 && t.chainage_ft.is_finite()) {
            return Err(SimError::BadPlacement(t.chainage_ft));
        }
        t.tag.validate().map_err(|source| SimError::Tag {
            chainage_ft: t.chainage_ft,
            source,
        })?;
    }
    tags.sort_by(|a, b| a.chainage_ft.total_cmp(&b.chainage_ft));

    let step_mi = step_ft / FEET_PER_MILE;
    let mut reader = ReaderState::new();
    let mut state = ControllerState::new(cfg);
    let mut steps = Vec::new();
    let mut total_salt_lb = 0.0;
    let mut next_tag = 0usize;
    let mut next_step: u64 = 0;
    let mut chainage_ft = 0.0f64;

    let fire = |chainage_ft: f64,
                    next_step: &mut u64,
                    sample: &SensorSample,
                    reader: &mut ReaderState,
                    state: &mut ControllerState,
                    steps: &mut Vec<RunStep>,
                    total: &mut f64,
                    next_tag: &mut usize|
     -> Result<(), SimError> {
        while (*next_step as f64) * step_ft <= chainage_ft {
            let c = *next_step as f64 * step_ft;
            reader.advance(c)?;
            while *next_tag < tags.len() && tags[*next_tag].chainage_ft <= c {
                reader.on_tag_read(tags[*next_tag].tag, tags[*next_tag].chainage_ft);
                *next_tag += 1;
            }
            let zones = reader.summarize();
            let (next_state, output) = controller::step(state, sample, &zones, cfg);
            *state = next_state;
            *total += output.effective_rate * output.width * step_mi;
            steps.push(RunStep {
                chainage_ft: c,
                output,
                sample: *sample,
            });
            *next_step += 1;
        }
        Ok(())
    };

    // the crossing at chainage 0 is reached by the first sample itself
    fire(
        chainage_ft,
        &mut next_step,
        &samples[0],
        &mut reader,
        &mut state,
        &mut steps,
        &mut total_salt_lb,
        &mut next_tag,
    )?;
    for pair in samples.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let dt_s = (cur.t_ms - prev.t_ms) as f64 / 1000.0;
        chainage_ft += 0.5 * (prev.speed_mph + cur.speed_mph) * MPH_TO_FPS * dt_s;
        // crossings inside this interval happened before `cur` completed
        fire(
            chainage_ft,
            &mut next_step,
            prev,
            &mut reader,
            &mut state,
            &mut steps,
            &mut total_salt_lb,
            &mut next_tag,
        )?;
    }

    if chainage_ft < step_ft {
        return Err(SimError::TraceTooShort {
            distance_ft: chainage_ft,
            step_ft,
        });
    }

    Ok(RouteRun {
        route_id: trace.route_id.clone(),
        step_ft,
        steps,
        total_salt_lb,
        distance_mi: chainage_ft / FEET_PER_MILE,
    })
}

/// Per-step replay CSV, one row per evaluation.
pub fn emit_run_csv(run: &RouteRun) -> String {
    let mut out = String::with_capacity(RUN_CSV_HEADER.len() + 1 + run.steps.len() * 48);
    out.push_str(RUN_CSV_HEADER);
    out.push('\n');
    for s in &run.steps {
        let o = &s.output;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.chainage_ft,
            s.sample.incline_deg,
            s.sample.omega_dps,
            o.effective_rate,
            o.discharge_lb_per_hr,
            o.width,
            o.material.as_str(),
            o.factors.zone_multiplier,
            o.blast_active
        );
    }
    out
}

/// Totals of a run, shaped for the summary JSON.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunSummary {
    /// Route label.
    pub route_id: String,
    /// Number of controller evaluations.
    pub steps: usize,
    /// Evaluation spacing, feet.
    pub step_ft: f64,
    /// Integrated distance, miles.
    pub distance_mi: f64,
    /// Accounted salt, pounds.
    pub total_salt_lb: f64,
    /// Smallest nonzero effective rate seen.
    pub rate_min_seen: f64,
    /// Largest effective rate seen.
    pub rate_max_seen: f64,
}

impl From<&RouteRun> for RunSummary {
    fn from(run: &RouteRun) -> Self {
        let (rate_min_seen, rate_max_seen) = run.rate_range();
        RunSummary {
            route_id: run.route_id.clone(),
            steps: run.steps.len(),
            step_ft: run.step_ft,
            distance_mi: run.distance_mi,
            total_salt_lb: run.total_salt_lb,
            rate_min_seen,
            rate_max_seen,
        }
    }
}

/// Flat-rate policy versus the sensor-driven one on the same trace.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicyComparison {
    /// Pounds under the constant-rate policy.
    pub flat_rate_total_lb: f64,
    /// Pounds under the sensor-driven policy.
    pub variable_total_lb: f64,
    /// `100 · (1 − variable/flat)`.
    pub savings_pct: f64,
    /// Smallest nonzero rate the variable policy used.
    pub rate_min_seen: f64,
    /// Largest rate the variable policy used.
    pub rate_max_seen: f64,
}

/// Run both policies over one trace: a constant `flat_rate_lb_per_lane_mi`
/// with no factors and no zones, and the full model under `cfg` with
/// `placements`.
pub fn compare_policies(
    trace: &Trace,
    placements: &[TagPlacement],
    cfg: &ControllerConfig,
    flat_rate_lb_per_lane_mi: f64,
    step_ft: f64,
) -> Result<PolicyComparison, SimError> {
    let variable = run(trace, placements, cfg, step_ft)?;
    // pinning both clamps to the flat rate forces every step to it
    let flat_cfg = ControllerConfig {
        base_rate_a: flat_rate_lb_per_lane_mi,
        k1: 0.0,
        k2_incline: 0.0,
        k2_decline: 0.0,
        k3: 0.0,
        rate_min: flat_rate_lb_per_lane_mi,
        rate_max: flat_rate_lb_per_lane_mi,
        ..cfg.clone()
    };
    let flat = run(trace, &[], &flat_cfg, step_ft)?;
    let (rate_min_seen, rate_max_seen) = variable.rate_range();
    Ok(PolicyComparison {
        flat_rate_total_lb: flat.total_salt_lb,
        variable_total_lb: variable.total_salt_lb,
        savings_pct: 100.0 * (1.0 - variable.total_salt_lb / flat.total_salt_lb),
        rate_min_seen,
        rate_max_seen,
    })
}

/// One stretch of a synthetic route.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Segment {
    /// Length along the road, feet.
    pub length_ft: f64,
    /// Signed grade, percent.
    pub grade_pct: f64,
    /// Curve radius in feet, or `None` for a straight. Must exceed 100 ft.
    #[cfg_attr(feature = "serde", serde(default))]
    pub radius_ft: Option<f64>,
    /// Constant speed over the segment, mph.
    pub speed_mph: f64,
}

/// Per-sample Gaussian sensor noise.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseSpec {
    /// Standard deviation added to incline readings, degrees.
    pub sigma_incline_deg: f64,
    /// Standard deviation added to yaw-rate readings, deg/s.
    pub sigma_omega_dps: f64,
}

/// Recipe for a synthetic route.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RouteSpec {
    /// Label carried into the generated trace.
    #[cfg_attr(feature = "serde", serde(default))]
    pub route_id: String,
    /// Stretches in driving order.
    pub segments: Vec<Segment>,
    /// Optional sensor noise; omit for clean geometry.
    #[cfg_attr(feature = "serde", serde(default))]
    pub noise: Option<NoiseSpec>,
}

/// Invalid [`RouteSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum RouteSpecError {
    /// No segments.
    #[error("route must contain at least one segment")]
    NoSegments,
    /// Bad segment length.
    #[error("segment {0}: length_ft must be positive and finite")]
    BadLength(usize),
    /// Radius too tight to be a road.
    #[error("segment {0}: radius_ft must be > 100")]
    BadRadius(usize),
    /// Bad segment speed.
    #[error("segment {0}: speed_mph must be positive and finite")]
    BadSpeed(usize),
    /// Grade at or beyond 100%.
    #[error("segment {0}: |grade_pct| must be < 100")]
    BadGrade(usize),
    /// Negative or non-finite noise sigma.
    #[error("noise sigmas must be finite and >= 0")]
    BadNoise,
}

impl RouteSpec {
    /// Check the spec invariants.
    pub fn validate(&self) -> Result<(), RouteSpecError> {
        if self.segments.is_empty() {
            return Err(RouteSpecError::NoSegments);
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.length_ft > 0.0 && seg.length_ft.is_finite()) {
                return Err(RouteSpecError::BadLength(i));
            }
            if let Some(r) = seg.radius_ft {
                if !(r > 100.0 && r.is_finite()) {
                    return Err(RouteSpecError::BadRadius(i));
                }
            }
            if !(seg.speed_mph > 0.0 && seg.speed_mph.is_finite()) {
                return Err(RouteSpecError::BadSpeed(i));
            }
            if !(seg.grade_pct.is_finite() && seg.grade_pct > -100.0 && seg.grade_pct < 100.0) {
                return Err(RouteSpecError::BadGrade(i));
            }
        }
        if let Some(n) = self.noise {
            if !(n.sigma_incline_deg >= 0.0
                && n.sigma_incline_deg.is_finite()
                && n.sigma_omega_dps >= 0.0
                && n.sigma_omega_dps.is_finite())
            {
                return Err(RouteSpecError::BadNoise);
            }
        }
        Ok(())
    }

    /// A featureless route: flat, straight, constant speed.
    pub fn flat_straight(length_mi: f64, speed_mph: f64) -> Self {
        RouteSpec {
            route_id: String::from("flat-straight"),
            segments: alloc::vec![Segment {
                length_ft: length_mi * FEET_PER_MILE,
                grade_pct: 0.0,
                radius_ft: None,
                speed_mph,
            }],
            noise: None,
        }
    }

    /// A 10-mile parkway-like mix of flats, grades to ±6%, and curves down
    /// to 900 ft radius at 30–55 mph. Synthetic stand-in for a hilly,
    /// curvy commuter parkway; pair with [`tsp_like_placements`] for the
    /// ramp hazard zones.
    pub fn tsp_like() -> Self {
        let seg = |length_ft: f64, grade_pct: f64, radius_ft: Option<f64>, speed_mph: f64| Segment {
            length_ft,
            grade_pct,
            radius_ft,
            speed_mph,
        };
        RouteSpec {
            route_id: String::from("tsp-like"),
            segments: alloc::vec![
                seg(3000.0, 0.0, None, 40.0),
                seg(2000.0, 3.0, None, 40.0),
                seg(1500.0, 0.0, Some(1200.0), 35.0),
                seg(2500.0, -4.0, None, 40.0),
                seg(3000.0, 0.0, None, 45.0),
                seg(1800.0, 5.0, Some(2000.0), 35.0),
                seg(2200.0, -2.0, None, 45.0),
                seg(2600.0, 0.0, None, 50.0),
                seg(1400.0, 0.0, Some(900.0), 30.0),
                seg(2800.0, 2.0, None, 45.0),
                seg(2000.0, -6.0, None, 35.0),
                seg(3000.0, 0.0, None, 50.0),
                seg(1600.0, 4.0, None, 40.0),
                seg(1200.0, 0.0, Some(1000.0), 35.0),
                seg(2400.0, -3.0, Some(2500.0), 45.0),
                seg(3500.0, 0.0, None, 55.0),
                seg(1900.0, 6.0, None, 35.0),
                seg(2100.0, -1.0, None, 45.0),
                seg(1500.0, 0.0, Some(1500.0), 40.0),
                seg(2800.0, 1.0, None, 50.0),
                seg(2000.0, -5.0, None, 40.0),
                seg(3000.0, 0.0, None, 55.0),
                seg(3000.0, 0.0, None, 45.0),
            ],
            noise: None,
        }
    }
}

/// Ramp hazard zones for the [`RouteSpec::tsp_like`] route: rate zones high
/// enough that the clamp pins them at the maximum, standing in for blast
/// presses on the ramps.
pub fn tsp_like_placements() -> Vec<TagPlacement> {
    use crate::rfid::Command;
    let ramp = |tag_id: u32, chainage_ft: f64| TagPlacement {
        chainage_ft,
        tag: RoadsideTag {
            tag_id,
            command: Command::RateAdjust,
            magnitude: 1500,
            extent_ft: 800,
        },
    };
    alloc::vec![ramp(101, 18_000.0), ramp(102, 41_000.0)]
}

/// Generate the 10 ms sample stream a drive over `spec` would record.
///
/// Incline comes from the segment grade, yaw rate from speed over radius.
/// Identical `(spec, seed)` pairs produce identical traces, noise included.
pub fn synth_route(spec: &RouteSpec, seed: u64) -> Result<Trace, RouteSpecError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = spec.noise.map(|n| {
        (
            Normal::new(0.0, n.sigma_incline_deg).expect("validated sigma"),
            Normal::new(0.0, n.sigma_omega_dps).expect("validated sigma"),
        )
    });

    let tick_s = crate::telemetry::NOMINAL_SAMPLE_PERIOD_MS as f64 / 1000.0;
    let est: f64 = spec
        .segments
        .iter()
        .map(|s| s.length_ft / (s.speed_mph * MPH_TO_FPS * tick_s))
        .sum();
    let mut samples = Vec::with_capacity(est as usize + spec.segments.len() + 2);

    let mut emit = |t_ms: u64, seg: &Segment, rng: &mut ChaCha8Rng| {
        let mut incline_deg = grade_to_angle(seg.grade_pct);
        let mut omega_dps = seg
            .radius_ft
            .map_or(0.0, |r| (seg.speed_mph * MPH_TO_FPS / r).to_degrees());
        if let Some((n_inc, n_om)) = &noise {
            incline_deg = (incline_deg + n_inc.sample(rng)).clamp(-44.99, 44.99);
            omega_dps = (omega_dps + n_om.sample(rng)).clamp(-89.99, 89.99);
        }
        samples.push(SensorSample {
            t_ms,
            speed_mph: seg.speed_mph,
            incline_deg,
            omega_dps,
            pavement_temp_f: None,
        });
    };

    let mut t_ms: u64 = 0;
    let mut seg_idx = 0usize;
    let mut remaining_ft = spec.segments[0].length_ft;
    emit(0, &spec.segments[0], &mut rng);
    loop {
        let seg = &spec.segments[seg_idx];
        remaining_ft -= seg.speed_mph * MPH_TO_FPS * tick_s;
        t_ms += crate::telemetry::NOMINAL_SAMPLE_PERIOD_MS;
        while remaining_ft <= 0.0 {
            seg_idx += 1;
            if seg_idx == spec.segments.len() {
                // close the trace with one final sample at the route end
                emit(t_ms, &spec.segments[seg_idx - 1], &mut rng);
                return Ok(Trace {
                    route_id: spec.route_id.clone(),
                    samples,
                });
            }
            remaining_ft += spec.segments[seg_idx].length_ft;
        }
        emit(t_ms, &spec.segments[seg_idx], &mut rng);
    }
}
