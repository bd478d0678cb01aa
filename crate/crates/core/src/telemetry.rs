//! Route-trace ingestion, sensor noise filtering, and road-geometry math.
//!
//! A trace is a time-ordered sequence of onboard sensor readings (speed,
//! incline angle, yaw rate, optional pavement temperature) at a nominal
//! 10 ms period. Inclinometers and gyros pick up bumps and vibration, so the
//! controller consumes a causally filtered trace: a trailing moving average
//! over a configurable window, applied to the geometry channels only.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::math;
use crate::MPH_TO_FPS;

/// Nominal spacing between sensor readings, in milliseconds.
pub const NOMINAL_SAMPLE_PERIOD_MS: u64 = 10;

/// Speed below which per-distance quantities (curvature, application rate)
/// are undefined, in miles/hour.
pub const DEFAULT_SPEED_FLOOR_MPH: f64 = 1.0;

/// Column order of the trace CSV format.
pub const TRACE_CSV_HEADER: &str = "t_ms,speed_mph,incline_deg,omega_dps,pavement_temp_f";

/// Largest credible incline reading; anything wilder is sensor corruption.
pub const MAX_INCLINE_DEG: f64 = 45.0;

/// Largest credible yaw-rate reading, degrees/second.
pub const MAX_OMEGA_DPS: f64 = 90.0;

/// One timestamped sensor reading.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SensorSample {
    /// Milliseconds since trace start; strictly increasing within a trace.
    pub t_ms: u64,
    /// Vehicle speed, miles/hour, >= 0.
    pub speed_mph: f64,
    /// Incline angle in degrees, positive uphill. |value| < 45.
    pub incline_deg: f64,
    /// Yaw rate in degrees/second, positive for leftward yaw. |value| < 90.
    pub omega_dps: f64,
    /// Pavement temperature in degrees Fahrenheit, when the sensor reported one.
    pub pavement_temp_f: Option<f64>,
}

/// An ordered, validated sequence of sensor samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Label for reports; not part of the serialized form.
    pub route_id: String,
    /// Samples in strictly increasing timestamp order; never empty.
    pub samples: Vec<SensorSample>,
}

impl Trace {
    /// Total covered time span in milliseconds.
    pub fn duration_ms(&self) -> u64 {
        self.samples.last().map_or(0, |s| s.t_ms) - self.samples.first().map_or(0, |s| s.t_ms)
    }

    /// Indices of samples that follow a sampling gap, i.e. where the step
    /// from the previous sample exceeds `nominal_ms`. Gaps are permitted in
    /// a valid trace but downstream consumers may want to report them.
    pub fn gap_indices(&self, nominal_ms: u64) -> Vec<usize> {
        self.samples
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].t_ms - w[0].t_ms > nominal_ms)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// Settings for the causal moving-average filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Width of the trailing window in milliseconds. Must be at least the
    /// sample period; at 10 ms sampling the 500 ms default averages ~50
    /// readings, enough to flatten bump transients while still tracking
    /// real grade changes (~22 ft of travel at highway speed).
    pub window_ms: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { window_ms: 500 }
    }
}

/// Failures while parsing or validating a trace.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    /// The header line is missing a required column.
    #[error("missing required column `{0}` in trace header")]
    MissingColumn(&'static str),
    /// The header has all required columns but not in the canonical order.
    #[error("trace header must be exactly `{TRACE_CSV_HEADER}`")]
    HeaderMismatch,
    /// A data row has the wrong number of fields. Rows are 1-based file
    /// line numbers (the header is line 1).
    #[error("row {row}: expected 5 fields, found {found}")]
    FieldCount {
        /// 1-based file line number.
        row: usize,
        /// Number of comma-separated fields found.
        found: usize,
    },
    /// A field failed to parse as a number.
    #[error("row {row}: invalid value for `{column}`")]
    BadNumber {
        /// 1-based file line number.
        row: usize,
        /// Column name.
        column: &'static str,
    },
    /// Timestamps must be strictly increasing.
    #[error("non-monotone timestamp at row {row}")]
    NonMonotoneTimestamp {
        /// 1-based file line number.
        row: usize,
    },
    /// A value is outside its credible sensor range.
    #[error("row {row}: `{column}` value {value} out of range")]
    OutOfRange {
        /// 1-based file line number.
        row: usize,
        /// Column name.
        column: &'static str,
        /// Offending value.
        value: f64,
    },
    /// The input has a header but no samples.
    #[error("trace contains no samples")]
    Empty,
}

/// Error from [`curvature`] when the vehicle is effectively stationary.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("curvature undefined at rest (speed {speed_mph} mph, floor {floor_mph} mph)")]
pub struct CurvatureUndefined {
    /// Speed that was at or below the floor.
    pub speed_mph: f64,
    /// The configured floor.
    pub floor_mph: f64,
}

/// Parse the trace CSV format.
///
/// Expects the exact header [`TRACE_CSV_HEADER`], one sample per line, LF
/// line endings, and an empty trailing field where pavement temperature is
/// missing. Errors carry the 1-based file line number.
pub fn parse_trace(input: &str) -> Result<Trace, TraceError> {
    let mut lines = input.lines();
    let header = lines.next().unwrap_or("");
    check_header(header)?;

    let mut samples = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 2;
        if line.is_empty() {
            continue;
        }
        let mut fields = [""; 5];
        let mut n = 0;
        for f in line.split(',') {
            if n == 5 {
                n += 1;
                break;
            }
            fields[n] = f;
            n += 1;
        }
        if n != 5 {
            return Err(TraceError::FieldCount { row, found: n });
        }

        let t_ms: u64 = fields[0]
            .parse()
            .map_err(|_| TraceError::BadNumber { row, column: "t_ms" })?;
        let speed_mph = parse_field(fields[1], row, "speed_mph")?;
        let incline_deg = parse_field(fields[2], row, "incline_deg")?;
        let omega_dps = parse_field(fields[3], row, "omega_dps")?;
        let pavement_temp_f = if fields[4].is_empty() {
            None
        } else {
            Some(parse_field(fields[4], row, "pavement_temp_f")?)
        };

        if let Some(prev) = samples.last() {
            let prev: &SensorSample = prev;
            if t_ms <= prev.t_ms {
                return Err(TraceError::NonMonotoneTimestamp { row });
            }
        }
        check_range(speed_mph >= 0.0, row, "speed_mph", speed_mph)?;
        check_range(math::abs(incline_deg) < MAX_INCLINE_DEG, row, "incline_deg", incline_deg)?;
        check_range(math::abs(omega_dps) < MAX_OMEGA_DPS, row, "omega_dps", omega_dps)?;
        if let Some(t) = pavement_temp_f {
            check_range(t.is_finite(), row, "pavement_temp_f", t)?;
        }

        samples.push(SensorSample {
            t_ms,
            speed_mph,
            incline_deg,
            omega_dps,
            pavement_temp_f,
        });
    }

    if samples.is_empty() {
        return Err(TraceError::Empty);
    }
    Ok(Trace {
        route_id: String::new(),
        samples,
    })
}

fn check_header(header: &str) -> Result<(), TraceError> {
    let header = header.trim_end_matches('\r');
    if header == TRACE_CSV_HEADER {
        return Ok(());
    }
    for expected in TRACE_CSV_HEADER.split(',') {
        if !header.split(',').any(|h| h == expected) {
            return Err(TraceError::MissingColumn(expected));
        }
    }
    Err(TraceError::HeaderMismatch)
}

fn parse_field(s: &str, row: usize, column: &'static str) -> Result<f64, TraceError> {
    let v: f64 = s
        .parse()
        .map_err(|_| TraceError::BadNumber { row, column })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TraceError::BadNumber { row, column })
    }
}

fn check_range(ok: bool, row: usize, column: &'static str, value: f64) -> Result<(), TraceError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(TraceError::OutOfRange { row, column, value })
    }
}

/// Serialize a trace to the canonical CSV form parsed by [`parse_trace`].
///
/// Numbers use the shortest representation that round-trips through an f64,
/// so `parse_trace(&emit_trace(t))` reproduces `t` exactly and re-emitting
/// yields byte-identical output.
pub fn emit_trace(trace: &Trace) -> String {
    // ~24 bytes/row is a comfortable upper bound for typical values
    let mut out = String::with_capacity(TRACE_CSV_HEADER.len() + 1 + trace.samples.len() * 24);
    out.push_str(TRACE_CSV_HEADER);
    out.push('\n');
    for s in &trace.samples {
        let _ = write!(out, "{},{},{},{},", s.t_ms, s.speed_mph, s.incline_deg, s.omega_dps);
        if let Some(t) = s.pavement_temp_f {
            let _ = write!(out, "{t}");
        }
        out.push('\n');
    }
    out
}

/// Trailing moving average over the geometry channels of a trace.
///
/// For each sample at time `t`, the output incline and yaw rate are the
/// arithmetic mean of all samples with timestamp in `(t - window, t]` — a
/// causal filter, since the controller runs in real time and cannot see
/// future readings. Speed and temperature pass through unfiltered and
/// timestamps are unchanged. A window wider than the data so far degrades
/// to the running mean of everything seen yet.
pub fn moving_average(trace: &Trace, cfg: &FilterConfig) -> Trace {
    let window = cfg.window_ms.max(1);
    let samples = &trace.samples;
    let mut out = Vec::with_capacity(samples.len());
    let mut start = 0usize;
    for (i, s) in samples.iter().enumerate() {
        while s.t_ms - samples[start].t_ms >= window {
            start += 1;
        }
        let w = &samples[start..=i];
        out.push(SensorSample {
            incline_deg: window_mean(w, |x| x.incline_deg),
            omega_dps: window_mean(w, |x| x.omega_dps),
            ..*s
        });
    }
    Trace {
        route_id: trace.route_id.clone(),
        samples: out,
    }
}

fn window_mean(window: &[SensorSample], field: impl Fn(&SensorSample) -> f64) -> f64 {
    let mut sum = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in window {
        let v = field(s);
        sum += v;
        lo = if v < lo { v } else { lo };
        hi = if v > hi { v } else { hi };
    }
    // The exact mean lies in [lo, hi]; clamping strips summation rounding at
    // the edges, so a constant window reproduces its value bit-exactly.
    (sum / window.len() as f64).clamp(lo, hi)
}

/// Convert a signed road grade in percent to an incline angle in degrees.
///
/// A −6% grade is an incline of −arctan(0.06) ≈ −3.43°.
pub fn grade_to_angle(grade_pct: f64) -> f64 {
    math::atan(grade_pct / 100.0).to_degrees()
}

/// Inverse of [`grade_to_angle`]: incline angle in degrees to grade percent.
pub fn angle_to_grade(angle_deg: f64) -> f64 {
    math::tan(angle_deg.to_radians()) * 100.0
}

/// Road curvature from yaw rate and speed, in 1/feet.
///
/// κ = ω / s with ω in radians/second and s in feet/second; the sign follows
/// the yaw-rate sign. The reciprocal of the result is the turn radius in
/// feet. Undefined at or below the speed floor — a stopped vehicle yawing in
/// place has no road curvature.
pub fn curvature(
    omega_dps: f64,
    speed_mph: f64,
    speed_floor_mph: f64,
) -> Result<f64, CurvatureUndefined> {
    if !(speed_mph > speed_floor_mph) {
        return Err(CurvatureUndefined {
            speed_mph,
            floor_mph: speed_floor_mph,
        });
    }
    Ok(omega_dps.to_radians() / (speed_mph * MPH_TO_FPS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn trace_of(samples: Vec<SensorSample>) -> Trace {
        Trace {
            route_id: String::new(),
            samples,
        }
    }

    fn sample(t_ms: u64, incline_deg: f64, omega_dps: f64) -> SensorSample {
        SensorSample {
            t_ms,
            speed_mph: 30.0,
            incline_deg,
            omega_dps,
            pavement_temp_f: None,
        }
    }

    #[test]
    fn parses_minimal_trace() {
        let t = parse_trace("t_ms,speed_mph,incline_deg,omega_dps,pavement_temp_f\n0,30.0,0.0,0.0,\n")
            .unwrap();
        assert_eq!(t.samples.len(), 1);
        assert_eq!(t.samples[0].speed_mph, 30.0);
        assert_eq!(t.samples[0].pavement_temp_f, None);
    }

    #[test]
    fn rejects_non_monotone_timestamp() {
        let err = parse_trace(
            "t_ms,speed_mph,incline_deg,omega_dps,pavement_temp_f\n0,30,0,0,\n10,30,0,0,\n5,30,0,0,\n",
        )
        .unwrap_err();
        assert_eq!(err, TraceError::NonMonotoneTimestamp { row: 4 });
        assert!(alloc::format!("{err}").contains("row 4"));
    }

    #[test]
    fn rejects_missing_column() {
        let err = parse_trace("t_ms,speed_mph,incline_deg,omega_dps\n").unwrap_err();
        assert_eq!(err, TraceError::MissingColumn("pavement_temp_f"));
    }

    #[test]
    fn rejects_out_of_range_fields() {
        let base = "t_ms,speed_mph,incline_deg,omega_dps,pavement_temp_f\n";
        let err = parse_trace(&alloc::format!("{base}0,30,50.0,0,\n")).unwrap_err();
        assert!(matches!(err, TraceError::OutOfRange { row: 2, column: "incline_deg", .. }));
        let err = parse_trace(&alloc::format!("{base}0,-1,0,0,\n")).unwrap_err();
        assert!(matches!(err, TraceError::OutOfRange { row: 2, column: "speed_mph", .. }));
        let err = parse_trace(&alloc::format!("{base}0,30,0,95,\n")).unwrap_err();
        assert!(matches!(err, TraceError::OutOfRange { row: 2, column: "omega_dps", .. }));
        let err = parse_trace(&alloc::format!("{base}0,30,0,abc,\n")).unwrap_err();
        assert_eq!(err, TraceError::BadNumber { row: 2, column: "omega_dps" });
        let err = parse_trace(&alloc::format!("{base}0,inf,0,0,\n")).unwrap_err();
        assert_eq!(err, TraceError::BadNumber { row: 2, column: "speed_mph" });
    }

    #[test]
    fn rejects_empty_trace() {
        let err = parse_trace("t_ms,speed_mph,incline_deg,omega_dps,pavement_temp_f\n").unwrap_err();
        assert_eq!(err, TraceError::Empty);
    }

    #[test]
    fn emit_parse_round_trip() {
        let t = trace_of(vec![
            SensorSample {
                t_ms: 0,
                speed_mph: 30.0,
                incline_deg: -3.4336,
                omega_dps: 0.1,
                pavement_temp_f: Some(28.5),
            },
            SensorSample {
                t_ms: 10,
                speed_mph: 30.5,
                incline_deg: 0.0,
                omega_dps: -2.25,
                pavement_temp_f: None,
            },
        ]);
        let text = emit_trace(&t);
        let parsed = parse_trace(&text).unwrap();
        assert_eq!(parsed.samples, t.samples);
        assert_eq!(emit_trace(&parsed), text);
    }

    #[test]
    fn filter_constant_trace_is_identity() {
        let samples: Vec<_> = (0..200).map(|i| sample(i * 10, 2.0, -1.25)).collect();
        let t = trace_of(samples);
        let f = moving_average(&t, &FilterConfig::default());
        assert_eq!(f, t);
    }

    #[test]
    fn filter_attenuates_single_spike() {
        // 10° one-sample spike in a 0° signal, 500 ms window at 10 ms period:
        // once the window holds 50 samples the output is at most 10/50 = 0.2°.
        let mut samples: Vec<_> = (0..200).map(|i| sample(i * 10, 0.0, 0.0)).collect();
        samples[100].incline_deg = 10.0;
        let f = moving_average(&trace_of(samples), &FilterConfig { window_ms: 500 });
        let max_after = f.samples[100..]
            .iter()
            .map(|s| s.incline_deg)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(max_after <= 10.0 / 50.0, "max_after = {max_after}");
        assert_eq!(f.samples[100].incline_deg, 10.0 / 50.0);
        // spike fully leaves the window 500 ms later
        assert_eq!(f.samples[150].incline_deg, 0.0);
    }

    #[test]
    fn window_of_one_sample_period_is_identity() {
        let samples: Vec<_> = (0..50)
            .map(|i| sample(i * 10, (i as f64).sin(), (i as f64 * 0.7).cos()))
            .collect();
        let t = trace_of(samples);
        let f = moving_average(&t, &FilterConfig { window_ms: 10 });
        assert_eq!(f, t);
    }

    #[test]
    fn wide_window_degrades_to_running_mean() {
        let t = trace_of(vec![sample(0, 3.0, 0.0), sample(10, 6.0, 0.0), sample(20, 9.0, 0.0)]);
        let f = moving_average(&t, &FilterConfig { window_ms: 10_000 });
        let got: Vec<_> = f.samples.iter().map(|s| s.incline_deg).collect();
        assert_eq!(got, vec![3.0, 4.5, 6.0]);
    }

    #[test]
    fn grade_angle_conversions() {
        assert_relative_eq!(grade_to_angle(-6.0), -3.4336, epsilon = 1e-3);
        assert_relative_eq!(grade_to_angle(-6.0), -3.433630362450522, epsilon = 1e-12);
        assert_eq!(grade_to_angle(0.0), 0.0);
        assert_eq!(grade_to_angle(6.0), -grade_to_angle(-6.0));
        assert_relative_eq!(angle_to_grade(grade_to_angle(4.25)), 4.25, max_relative = 1e-9);
    }

    #[test]
    fn curvature_basics() {
        assert_eq!(curvature(0.0, 30.0, 1.0).unwrap(), 0.0);
        // 44 ft/s on a 1000 ft radius: ω = 0.044 rad/s
        let omega_dps = 0.044_f64.to_degrees();
        let kappa = curvature(omega_dps, 30.0, 1.0).unwrap();
        assert_relative_eq!(kappa, 1e-3, max_relative = 1e-9);
        assert_relative_eq!(1.0 / kappa, 1000.0, max_relative = 1e-9);
        let err = curvature(1.0, 0.5, 1.0).unwrap_err();
        assert!(alloc::format!("{err}").contains("curvature undefined at rest"));
    }

    #[test]
    fn gap_detection() {
        let t = trace_of(vec![sample(0, 0.0, 0.0), sample(10, 0.0, 0.0), sample(40, 0.0, 0.0)]);
        assert_eq!(t.gap_indices(NOMINAL_SAMPLE_PERIOD_MS), vec![2]);
    }
}
