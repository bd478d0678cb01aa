//! The discharge-rate law and its overrides.
//!
//! The spreader discharges `d` pounds/hour as a product of a speed term and
//! three multiplicative factors:
//!
//! ```text
//! d = (s + k3·|ω|) · A · (1 + k1·ΔT) · (1 + k2·|θ|)
//! ```
//!
//! where `s` is speed (mph), `ω` yaw rate (deg/s), `A` the operator's base
//! application rate (lb/lane-mile), `ΔT` the expected-minus-actual pavement
//! temperature (°F), and `θ` the incline angle (degrees). With ΔT, θ, and ω
//! all zero the law reverts to the plain speed-proportional `d = s·A`.
//!
//! The per-lane-mile *effective application rate* is `d / s`, and policy
//! clamps it to `[rate_min, rate_max]`. Roadside zones multiply the rate
//! before the clamp and can override width and material; the operator blast
//! forces the maximum rate for a short fixed duration; a stop zone wins over
//! everything.

use crate::math;
use crate::rfid::ZoneSummary;
use crate::telemetry::SensorSample;
use alloc::string::String;

/// Names of the built-in configuration presets.
pub const PRESET_NAMES: [&str; 3] = ["tsp-2018", "tsp-initial", "nysdot-general"];

/// Material currently being spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Material {
    /// Pre-wetted rock salt, the default.
    Salt,
    /// Alternative chemical (bridge decks and similar).
    Alternative,
    /// Nothing is applied.
    None,
}

impl Material {
    /// Stable lowercase token used in CSV output and config files.
    pub fn as_str(self) -> &'static str {
        match self {
            Material::Salt => "salt",
            Material::Alternative => "alternative",
            Material::None => "none",
        }
    }
}

/// All constants of the rate law plus the policy clamps and overrides.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ControllerConfig {
    /// Base application rate `A`, lb/lane-mile.
    pub base_rate_a: f64,
    /// Temperature sensitivity, fraction per °F of ΔT.
    pub k1: f64,
    /// Grade sensitivity on inclines (θ ≥ 0), fraction per degree.
    pub k2_incline: f64,
    /// Grade sensitivity on declines (θ < 0), fraction per degree.
    pub k2_decline: f64,
    /// Curve sensitivity: mph of equivalent speed per deg/s of yaw rate.
    pub k3: f64,
    /// Lower clamp on the effective application rate, lb/lane-mile.
    pub rate_min: f64,
    /// Upper clamp on the effective application rate, lb/lane-mile.
    pub rate_max: f64,
    /// Pavement temperature the base rate was chosen for, °F.
    pub expected_temp_f: f64,
    /// Below this speed the spreader is treated as stationary and shut off, mph.
    pub speed_floor: f64,
    /// How long one blast press holds the maximum rate, milliseconds.
    pub blast_duration_ms: u64,
    /// Spreading width when no zone overrides it, lanes.
    pub lane_width_default: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            base_rate_a: 150.0,
            k1: 0.05,
            k2_incline: 0.06,
            k2_decline: 0.06,
            k3: 2.5,
            rate_min: 150.0,
            rate_max: 350.0,
            expected_temp_f: 32.0,
            speed_floor: 1.0,
            blast_duration_ms: 10_000,
            lane_width_default: 1.0,
        }
    }
}

impl ControllerConfig {
    /// The retuned parkway setup: unified grade weight 0.06, baseline 150.
    pub fn tsp_2018() -> Self {
        ControllerConfig::default()
    }

    /// The first parkway setup: inclines weighted 0.04, declines 0.08.
    pub fn tsp_initial() -> Self {
        ControllerConfig {
            k2_incline: 0.04,
            k2_decline: 0.08,
            ..ControllerConfig::default()
        }
    }

    /// General guideline baseline of 160 lb/lane-mile for light/moderate
    /// snow above 23 °F, with the retuned geometry weights.
    pub fn nysdot_general() -> Self {
        ControllerConfig {
            base_rate_a: 160.0,
            ..ControllerConfig::default()
        }
    }

    /// Look up a built-in preset by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tsp-2018" => Some(Self::tsp_2018()),
            "tsp-initial" => Some(Self::tsp_initial()),
            "nysdot-general" => Some(Self::nysdot_general()),
            _ => None,
        }
    }

    /// Check the config invariants.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("k1", self.k1),
            ("k2_incline", self.k2_incline),
            ("k2_decline", self.k2_decline),
            ("k3", self.k3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::BadConstant(name));
            }
        }
        if !(self.rate_min > 0.0
            && self.rate_min <= self.base_rate_a
            && self.base_rate_a <= self.rate_max)
        {
            return Err(ConfigError::BadRateClamp);
        }
        if !(self.speed_floor > 0.0 && self.speed_floor.is_finite()) {
            return Err(ConfigError::BadSpeedFloor);
        }
        if self.blast_duration_ms == 0 {
            return Err(ConfigError::BadBlastDuration);
        }
        if !(self.lane_width_default > 0.0 && self.lane_width_default.is_finite()) {
            return Err(ConfigError::BadLaneWidth);
        }
        if !self.expected_temp_f.is_finite() {
            return Err(ConfigError::BadExpectedTemp);
        }
        Ok(())
    }
}

/// Invalid [`ControllerConfig`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    /// A model constant is negative or non-finite.
    #[error("constant `{0}` must be finite and >= 0")]
    BadConstant(&'static str),
    /// The clamp ordering is violated.
    #[error("rates must satisfy 0 < rate_min <= base_rate_a <= rate_max")]
    BadRateClamp,
    /// Non-positive speed floor.
    #[error("speed_floor must be > 0")]
    BadSpeedFloor,
    /// Zero blast duration.
    #[error("blast_duration_ms must be > 0")]
    BadBlastDuration,
    /// Non-positive default width.
    #[error("lane_width_default must be > 0")]
    BadLaneWidth,
    /// Non-finite expected temperature.
    #[error("expected_temp_f must be finite")]
    BadExpectedTemp,
    /// Preset name not recognized.
    #[error("unknown config preset `{0}` (known: tsp-2018, tsp-initial, nysdot-general)")]
    UnknownPreset(String),
}

/// Difference between expected and actual pavement temperature, °F.
///
/// Positive means the pavement is colder than planned for, which raises the
/// discharge rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TempDelta {
    /// ΔT = expected − actual, °F.
    pub delta_t_f: f64,
}

impl TempDelta {
    /// ΔT from an expected temperature and a measured one.
    pub fn from_readings(expected_f: f64, actual_f: f64) -> Self {
        TempDelta {
            delta_t_f: expected_f - actual_f,
        }
    }

    /// ΔT for a sample; a sample without a temperature reading contributes
    /// no adjustment.
    pub fn from_sample(cfg: &ControllerConfig, sample: &SensorSample) -> Self {
        match sample.pavement_temp_f {
            Some(actual) => Self::from_readings(cfg.expected_temp_f, actual),
            None => TempDelta::default(),
        }
    }
}

/// Mutable controller state that persists across steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Blast holds until this timestamp (exclusive), if triggered.
    pub blast_until_ms: Option<u64>,
    /// Baseline spreading width in lanes; zones override it per-extent.
    pub current_width: f64,
    /// Baseline material; zones override it per-extent.
    pub current_material: Material,
}

impl ControllerState {
    /// Initial state for a run under `cfg`.
    pub fn new(cfg: &ControllerConfig) -> Self {
        ControllerState {
            blast_until_ms: None,
            current_width: cfg.lane_width_default,
            current_material: Material::Salt,
        }
    }

    /// Press the blast button: hold the maximum rate for the configured
    /// duration starting now. Re-triggering restarts the window rather than
    /// extending it.
    pub fn trigger_blast(&mut self, now_ms: u64, cfg: &ControllerConfig) {
        self.blast_until_ms = Some(now_ms + cfg.blast_duration_ms);
    }

    /// Whether a blast window covers `now_ms` (end exclusive).
    pub fn blast_active(&self, now_ms: u64) -> bool {
        self.blast_until_ms.is_some_and(|until| now_ms < until)
    }
}

/// The multiplicative pieces of one step's rate computation, for audit.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FactorBreakdown {
    /// `s + k3·|ω|`, mph.
    pub speed_term_mph: f64,
    /// `max(0, 1 + k1·ΔT)`.
    pub temp_factor: f64,
    /// `1 + k2·|θ|`.
    pub geometry_factor: f64,
    /// Product of active roadside rate zones.
    pub zone_multiplier: f64,
}

/// One controller decision.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepOutput {
    /// Total mass flow leaving the spreader, lb/hour (all lanes).
    pub discharge_lb_per_hr: f64,
    /// Clamped per-lane application rate, lb/lane-mile.
    pub effective_rate: f64,
    /// Spreading width, lanes.
    pub width: f64,
    /// Material being applied.
    pub material: Material,
    /// Whether the blast override forced this step's rate.
    pub blast_active: bool,
    /// Audit record of the factors behind the rate.
    pub factors: FactorBreakdown,
}

/// Error from [`effective_rate`] when the vehicle is at or below the speed floor.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("rate undefined at rest (speed {speed_mph} mph, floor {floor_mph} mph)")]
pub struct RateUndefined {
    /// Offending speed.
    pub speed_mph: f64,
    /// Configured floor.
    pub floor_mph: f64,
}

/// Speed-proportional discharge `d = s·A`, lb/hour.
pub fn base_discharge(speed_mph: f64, base_rate_a: f64) -> f64 {
    speed_mph * base_rate_a
}

/// Temperature factor `1 + k1·ΔT`, floored at zero — warm pavement reduces
/// discharge but can never drive it negative.
pub fn temp_factor(dt: TempDelta, k1: f64) -> f64 {
    let f = 1.0 + k1 * dt.delta_t_f;
    if f > 0.0 {
        f
    } else {
        0.0
    }
}

/// Grade factor `1 + k2·|θ|`, with the incline or decline weight chosen by
/// the sign of θ.
pub fn geometry_factor(theta_deg: f64, cfg: &ControllerConfig) -> f64 {
    let k2 = if theta_deg >= 0.0 {
        cfg.k2_incline
    } else {
        cfg.k2_decline
    };
    1.0 + k2 * math::abs(theta_deg)
}

/// The full rate law `d = (s + k3·|ω|) · A · (1 + k1·ΔT) · (1 + k2·|θ|)`,
/// lb/hour per lane.
///
/// At or below the speed floor the result is zero: the law would otherwise
/// discharge while turning in place, which a stopped spreader must not do.
pub fn full_discharge(
    speed_mph: f64,
    dt: TempDelta,
    theta_deg: f64,
    omega_dps: f64,
    cfg: &ControllerConfig,
) -> f64 {
    if speed_mph <= cfg.speed_floor {
        return 0.0;
    }
    let speed_term = speed_mph + cfg.k3 * math::abs(omega_dps);
    speed_term * cfg.base_rate_a * temp_factor(dt, cfg.k1) * geometry_factor(theta_deg, cfg)
}

/// Effective application rate: discharge divided by speed, clamped to the
/// policy range `[rate_min, rate_max]`.
pub fn effective_rate(
    discharge_lb_per_hr: f64,
    speed_mph: f64,
    cfg: &ControllerConfig,
) -> Result<f64, RateUndefined> {
    if !(speed_mph > cfg.speed_floor) {
        return Err(RateUndefined {
            speed_mph,
            floor_mph: cfg.speed_floor,
        });
    }
    Ok((discharge_lb_per_hr / speed_mph).clamp(cfg.rate_min, cfg.rate_max))
}

/// Evaluate one control step.
///
/// Order of authority, lowest to highest: sensor factors and zone rate
/// multiplier (clamped together), then the blast override, then a stop zone.
/// Zone width/material overrides apply only while their zone is active; the
/// baseline in `state` is untouched. The reported discharge always equals
/// `effective_rate × speed × width`.
pub fn step(
    state: &ControllerState,
    sample: &SensorSample,
    zones: &ZoneSummary,
    cfg: &ControllerConfig,
) -> (ControllerState, StepOutput) {
    let width = zones.width_override.unwrap_or(state.current_width);
    let blast = state.blast_active(sample.t_ms);
    let dt = TempDelta::from_sample(cfg, sample);
    let factors = FactorBreakdown {
        speed_term_mph: sample.speed_mph + cfg.k3 * math::abs(sample.omega_dps),
        temp_factor: temp_factor(dt, cfg.k1),
        geometry_factor: geometry_factor(sample.incline_deg, cfg),
        zone_multiplier: zones.rate_multiplier,
    };

    let material = if zones.stop {
        Material::None
    } else {
        zones.material_override.unwrap_or(state.current_material)
    };

    let rate = if sample.speed_mph <= cfg.speed_floor || zones.stop {
        0.0
    } else if blast {
        cfg.rate_max
    } else {
        let raw = full_discharge(sample.speed_mph, dt, sample.incline_deg, sample.omega_dps, cfg)
            / sample.speed_mph;
        (raw * zones.rate_multiplier).clamp(cfg.rate_min, cfg.rate_max)
    };

    let output = StepOutput {
        discharge_lb_per_hr: rate * sample.speed_mph * width,
        effective_rate: rate,
        width,
        material,
        blast_active: blast,
        factors,
    };
    (state.clone(), output)
}
