//! Accident-data analysis and constant tuning.
//!
//! Twenty years of accident records, filtered to wintry surface conditions
//! and binned along the route, give an empirical hazard profile. Correlating
//! that profile with the per-segment mean effective application rate tells
//! us whether the law puts salt where the accidents are; grid-searching the
//! geometry constants for the best rank correlation — optionally holding
//! total salt fixed by rescaling the base rate — turns the visual map
//! comparison into a reproducible procedure.
//!
//! Spearman is the tuning objective (Pearson is reported alongside):
//! accident counts are small integers with outliers, and rank correlation is
//! robust to both the outliers and the unknown scale between rate and risk.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, Uniform};

use crate::controller::ControllerConfig;
use crate::math;
use crate::simulation::{run, RouteRun, SimError};
use crate::telemetry::Trace;
use crate::FEET_PER_MILE;

/// Column order of the accident CSV format. Extra columns after these are
/// tolerated and ignored (reserved for time-of-day and similar).
pub const ACCIDENT_CSV_HEADER: &str = "chainage_mi,direction,surface,date";

/// Travel direction of the involved roadway side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Direction {
    /// Northbound.
    NB,
    /// Southbound.
    SB,
}

impl Direction {
    /// Parse the CSV token.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "NB" => Some(Direction::NB),
            "SB" => Some(Direction::SB),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::NB => "NB",
            Direction::SB => "SB",
        })
    }
}

/// Pavement surface condition recorded for an accident.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
#[allow(missing_docs)]
pub enum Surface {
    Dry,
    Wet,
    Slush,
    Snow,
    Ice,
    Other,
}

impl Surface {
    /// Parse the CSV token.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dry" => Some(Surface::Dry),
            "wet" => Some(Surface::Wet),
            "slush" => Some(Surface::Slush),
            "snow" => Some(Surface::Snow),
            "ice" => Some(Surface::Ice),
            "other" => Some(Surface::Other),
            _ => None,
        }
    }

    /// Stable lowercase CSV token.
    pub fn as_str(self) -> &'static str {
        match self {
            Surface::Dry => "dry",
            Surface::Wet => "wet",
            Surface::Slush => "slush",
            Surface::Snow => "snow",
            Surface::Ice => "ice",
            Surface::Other => "other",
        }
    }
}

/// Calendar date, `YYYY-MM-DD`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IsoDate {
    /// Four-digit year.
    pub year: u16,
    /// 1..=12.
    pub month: u8,
    /// 1..=31.
    pub day: u8,
}

impl IsoDate {
    /// Parse `YYYY-MM-DD`.
    pub fn parse(s: &str) -> Option<Self> {
        let bytes = s.as_bytes();
        if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
            return None;
        }
        let year: u16 = s[0..4].parse().ok()?;
        let month: u8 = s[5..7].parse().ok()?;
        let day: u8 = s[8..10].parse().ok()?;
        if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
            return None;
        }
        Some(IsoDate { year, month, day })
    }
}

impl fmt::Display for IsoDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year, self.month, self.day)
    }
}

/// One accident record located along the route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccidentRecord {
    /// Position along the route, miles from origin.
    pub chainage_mi: f64,
    /// Roadway side.
    pub direction: Direction,
    /// Surface condition at the time.
    pub surface: Surface,
    /// Date of the accident.
    pub date: IsoDate,
}

/// Failures while parsing the accident CSV.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AccidentCsvError {
    /// A required column is absent from the header.
    #[error("missing required column `{0}` in accident header")]
    MissingColumn(&'static str),
    /// Required columns present but not leading in canonical order.
    #[error("accident header must start with `{ACCIDENT_CSV_HEADER}`")]
    HeaderMismatch,
    /// Too few fields on a row (1-based file line number).
    #[error("row {row}: expected at least 4 fields, found {found}")]
    FieldCount {
        /// 1-based file line number.
        row: usize,
        /// Fields found.
        found: usize,
    },
    /// Unparseable or negative chainage.
    #[error("row {row}: invalid chainage_mi")]
    BadChainage {
        /// 1-based file line number.
        row: usize,
    },
    /// Direction token other than NB/SB.
    #[error("row {row}: direction must be NB or SB")]
    BadDirection {
        /// 1-based file line number.
        row: usize,
    },
    /// Unknown surface token.
    #[error("row {row}: unknown surface condition")]
    BadSurface {
        /// 1-based file line number.
        row: usize,
    },
    /// Malformed date.
    #[error("row {row}: date must be YYYY-MM-DD")]
    BadDate {
        /// 1-based file line number.
        row: usize,
    },
}

/// Parse the accident CSV format. Rows may carry extra trailing columns,
/// which are ignored.
pub fn parse_accidents(input: &str) -> Result<Vec<AccidentRecord>, AccidentCsvError> {
    let mut lines = input.lines();
    let header = lines.next().unwrap_or("").trim_end_matches('\r');
    let canonical_prefix = "chainage_mi,direction,surface,date,";
    if !(header == ACCIDENT_CSV_HEADER || header.starts_with(canonical_prefix)) {
        for expected in ACCIDENT_CSV_HEADER.split(',') {
            if !header.split(',').any(|h| h == expected) {
                return Err(AccidentCsvError::MissingColumn(expected));
            }
        }
        return Err(AccidentCsvError::HeaderMismatch);
    }

    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 2;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let chainage = fields.next().unwrap_or("");
        let direction = fields.next();
        let surface = fields.next();
        let date = fields.next();
        let found = 1 + [direction, surface, date].iter().filter(|f| f.is_some()).count();
        let (Some(direction), Some(surface), Some(date)) = (direction, surface, date) else {
            return Err(AccidentCsvError::FieldCount { row, found });
        };

        let chainage_mi: f64 = chainage
            .parse()
            .ok()
            .filter(|c: &f64| c.is_finite() && *c >= 0.0)
            .ok_or(AccidentCsvError::BadChainage { row })?;
        let direction =
            Direction::parse(direction).ok_or(AccidentCsvError::BadDirection { row })?;
        let surface = Surface::parse(surface).ok_or(AccidentCsvError::BadSurface { row })?;
        let date = IsoDate::parse(date).ok_or(AccidentCsvError::BadDate { row })?;

        records.push(AccidentRecord {
            chainage_mi,
            direction,
            surface,
            date,
        });
    }
    Ok(records)
}

/// Serialize records to the accident CSV format.
pub fn emit_accidents(records: &[AccidentRecord]) -> String {
    let mut out = String::with_capacity(ACCIDENT_CSV_HEADER.len() + 1 + records.len() * 32);
    out.push_str(ACCIDENT_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.chainage_mi, r.direction, r.surface.as_str(), r.date);
    }
    out
}

/// Keep accidents that happened on wintry pavement: slush and snow, plus ice
/// unless `include_ice` is off (ice is a documented, toggleable inclusion).
pub fn winter_filter(records: &[AccidentRecord], include_ice: bool) -> Vec<AccidentRecord> {
    records
        .iter()
        .filter(|r| {
            matches!(r.surface, Surface::Slush | Surface::Snow)
                || (include_ice && r.surface == Surface::Ice)
        })
        .copied()
        .collect()
}

/// Analysis failures.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    /// An accident lies outside the route.
    #[error("record {index} at {chainage_mi} mi is outside the route (length {route_len_mi} mi)")]
    RecordOutOfBounds {
        /// Index into the record slice.
        index: usize,
        /// Offending chainage.
        chainage_mi: f64,
        /// Route length used for binning.
        route_len_mi: f64,
    },
    /// Bad segment length.
    #[error("segment_mi must be positive and finite")]
    BadSegmentLength,
    /// Correlation needs at least 3 segments.
    #[error("need at least 3 segments to correlate, got {0}")]
    TooFewSegments(usize),
    /// Rate and count series must share the segmentation.
    #[error("segment mismatch: {rates} rate segments vs {counts} count segments")]
    SegmentMismatch {
        /// Rate-side segment count.
        rates: usize,
        /// Accident-side segment count.
        counts: usize,
    },
    /// A segment contains no replay steps (segment shorter than the step width).
    #[error("segment {0} contains no replay steps")]
    EmptySegment(usize),
    /// The tuning grid has no candidates.
    #[error("tuning grid is empty")]
    EmptyGrid,
    /// Conservation rescale did not converge.
    #[error("could not conserve total salt within {tolerance_pct}% (achieved {achieved_lb} lb vs target {target_lb} lb)")]
    CannotConserveTotal {
        /// Required tolerance, percent.
        tolerance_pct: f64,
        /// Best total reached.
        achieved_lb: f64,
        /// Pre-tune total.
        target_lb: f64,
    },
    /// Replay failed.
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Count winter accidents per route segment.
///
/// Segments are half-open `[i·L, (i+1)·L)` intervals of length `segment_mi`;
/// the last segment absorbs any remainder of the route (and the route's
/// exact endpoint). Records outside `[0, route_len_mi]` are an error naming
/// the record.
pub fn bin_accidents(
    records: &[AccidentRecord],
    segment_mi: f64,
    route_len_mi: f64,
) -> Result<Vec<u32>, AnalysisError> {
    if !(segment_mi > 0.0 && segment_mi.is_finite() && route_len_mi > 0.0) {
        return Err(AnalysisError::BadSegmentLength);
    }
    let n = segment_count(route_len_mi, segment_mi);
    let mut counts = vec![0u32; n];
    for (index, r) in records.iter().enumerate() {
        if !(r.chainage_mi >= 0.0 && r.chainage_mi <= route_len_mi) {
            return Err(AnalysisError::RecordOutOfBounds {
                index,
                chainage_mi: r.chainage_mi,
                route_len_mi,
            });
        }
        let bin = ((r.chainage_mi / segment_mi) as usize).min(n - 1);
        counts[bin] += 1;
    }
    Ok(counts)
}

fn segment_count(route_len_mi: f64, segment_mi: f64) -> usize {
    ((route_len_mi / segment_mi) as usize).max(1)
}

/// Mean effective application rate per segment of a replay, using the same
/// segmentation as [`bin_accidents`].
pub fn segment_mean_rates(run: &RouteRun, segment_mi: f64) -> Result<Vec<f64>, AnalysisError> {
    if !(segment_mi > 0.0 && segment_mi.is_finite()) {
        return Err(AnalysisError::BadSegmentLength);
    }
    let n = segment_count(run.distance_mi, segment_mi);
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0u32; n];
    for s in &run.steps {
        let mi = s.chainage_ft / FEET_PER_MILE;
        let bin = ((mi / segment_mi) as usize).min(n - 1);
        sums[bin] += s.output.effective_rate;
        counts[bin] += 1;
    }
    sums.iter()
        .zip(&counts)
        .enumerate()
        .map(|(i, (sum, count))| {
            if *count == 0 {
                Err(AnalysisError::EmptySegment(i))
            } else {
                Ok(sum / *count as f64)
            }
        })
        .collect()
}

/// Per-segment pairing of hazard history and spreading policy.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SegmentStats {
    /// Segment number from the route origin.
    pub segment_index: usize,
    /// Segment start, miles.
    pub start_mi: f64,
    /// Winter-condition accidents in the segment.
    pub accident_count: u32,
    /// Mean effective application rate over the segment, lb/lane-mile.
    pub mean_effective_rate: f64,
}

/// Join binned accident counts with per-segment mean rates.
pub fn segment_stats(
    run: &RouteRun,
    records: &[AccidentRecord],
    segment_mi: f64,
) -> Result<Vec<SegmentStats>, AnalysisError> {
    let rates = segment_mean_rates(run, segment_mi)?;
    let counts = bin_accidents(records, segment_mi, run.distance_mi)?;
    debug_assert_eq!(rates.len(), counts.len());
    Ok(rates
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(i, (rate, count))| SegmentStats {
            segment_index: i,
            start_mi: i as f64 * segment_mi,
            accident_count: *count,
            mean_effective_rate: *rate,
        })
        .collect())
}

/// Pearson product-moment correlation, or `None` when either side has zero
/// variance (the coefficient is undefined there, not zero).
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / math::sqrt(sxx * syy))
}

/// Spearman rank correlation with average ranks for ties, or `None` when
/// either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    pearson(&ranks(xs), &ranks(ys))
}

/// Average ranks (1-based); tied values share the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Both correlation coefficients for one segmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Correlation {
    /// Pearson on the raw pairs; `None` when undefined.
    pub pearson: Option<f64>,
    /// Spearman on average ranks; `None` when undefined.
    pub spearman: Option<f64>,
}

/// Correlate per-segment mean rates of a replay with binned accident counts.
pub fn correlate(
    run: &RouteRun,
    counts: &[u32],
    segment_mi: f64,
) -> Result<Correlation, AnalysisError> {
    let rates = segment_mean_rates(run, segment_mi)?;
    if rates.len() != counts.len() {
        return Err(AnalysisError::SegmentMismatch {
            rates: rates.len(),
            counts: counts.len(),
        });
    }
    if rates.len() < 3 {
        return Err(AnalysisError::TooFewSegments(rates.len()));
    }
    let counts_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    Ok(Correlation {
        pearson: pearson(&rates, &counts_f),
        spearman: spearman(&rates, &counts_f),
    })
}

/// Draw synthetic accident records whose per-segment intensity is
/// proportional to the replay's mean effective rate: counts are Poisson with
/// mean `events_per_unit_rate × mean_rate`, positions uniform within the
/// segment. Deterministic per seed.
pub fn synth_accidents(
    run: &RouteRun,
    segment_mi: f64,
    events_per_unit_rate: f64,
    direction: Direction,
    seed: u64,
) -> Result<Vec<AccidentRecord>, AnalysisError> {
    let rates = segment_mean_rates(run, segment_mi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surfaces = [Surface::Slush, Surface::Snow, Surface::Ice];
    let mut records = Vec::new();
    for (i, rate) in rates.iter().enumerate() {
        let lambda = events_per_unit_rate * rate;
        let count = if lambda > 0.0 {
            Poisson::new(lambda).expect("positive finite lambda").sample(&mut rng) as u64
        } else {
            0
        };
        let start = i as f64 * segment_mi;
        let end = if i + 1 == rates.len() {
            run.distance_mi
        } else {
            start + segment_mi
        };
        let position = Uniform::new(start, end).expect("non-empty segment");
        for k in 0..count {
            records.push(AccidentRecord {
                chainage_mi: position.sample(&mut rng),
                direction,
                surface: surfaces[(k % 3) as usize],
                date: IsoDate {
                    year: 2018,
                    month: 1,
                    day: 15,
                },
            });
        }
    }
    Ok(records)
}

/// One (k2_incline, k2_decline, k3) grid candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Incline weight.
    pub k2_incline: f64,
    /// Decline weight.
    pub k2_decline: f64,
    /// Curve weight.
    pub k3: f64,
}

/// Search space for [`tune_constants`].
#[derive(Debug, Clone, PartialEq)]
pub struct TuneGrid {
    /// Values tried for the incline weight.
    pub k2_incline: Vec<f64>,
    /// Values tried for the decline weight.
    pub k2_decline: Vec<f64>,
    /// Values tried for the curve weight.
    pub k3: Vec<f64>,
}

impl Default for TuneGrid {
    /// k2 ∈ 0.00..=0.12 step 0.01 on each side, k3 ∈ 0.0..=5.0 step 0.5.
    fn default() -> Self {
        let k2: Vec<f64> = (0..=12).map(|i| i as f64 / 100.0).collect();
        TuneGrid {
            k2_incline: k2.clone(),
            k2_decline: k2,
            k3: (0..=10).map(|i| i as f64 / 2.0).collect(),
        }
    }
}

impl TuneGrid {
    /// Candidates in deterministic order: k2_incline outermost, k3 innermost,
    /// each ascending. The tie-break in [`select_best`] relies on this order.
    pub fn candidates(&self) -> Vec<Candidate> {
        let mut out = Vec::with_capacity(self.k2_incline.len() * self.k2_decline.len() * self.k3.len());
        for &k2_incline in &self.k2_incline {
            for &k2_decline in &self.k2_decline {
                for &k3 in &self.k3 {
                    out.push(Candidate {
                        k2_incline,
                        k2_decline,
                        k3,
                    });
                }
            }
        }
        out
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridPoint {
    /// Incline weight.
    pub k2_incline: f64,
    /// Decline weight.
    pub k2_decline: f64,
    /// Curve weight.
    pub k3: f64,
    /// Spearman correlation of segment rates vs accident counts; `None`
    /// when undefined (e.g. the candidate yields a constant rate).
    pub spearman: Option<f64>,
    /// Total salt the candidate would use, pounds.
    pub total_salt_lb: f64,
}

/// Options shared by [`tune_constants`] and the per-candidate evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneOptions {
    /// Segment length for binning and rate averaging, miles.
    pub segment_mi: f64,
    /// Hold total salt at the pre-tune value by rescaling the base rate.
    pub conserve_total: bool,
    /// Replay step width, feet.
    pub step_ft: f64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            segment_mi: 0.1,
            conserve_total: false,
            step_ft: crate::simulation::DEFAULT_STEP_FT,
        }
    }
}

/// Relative tolerance for total-salt conservation.
pub const CONSERVE_TOLERANCE: f64 = 0.005;

/// Outcome of a grid search.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TuneResult {
    /// Selected incline weight.
    pub best_k2_incline: f64,
    /// Selected decline weight.
    pub best_k2_decline: f64,
    /// Selected curve weight.
    pub best_k3: f64,
    /// Spearman correlation at the selected point.
    pub correlation: Option<f64>,
    /// Total salt under the original constants, pounds.
    pub total_salt_before: f64,
    /// Total salt under the selected constants (after any conservation
    /// rescale), pounds.
    pub total_salt_after: f64,
    /// Number of grid points evaluated.
    pub grid_evaluated: usize,
    /// Base rate after the conservation rescale, when one was applied.
    pub rescaled_base_rate_a: Option<f64>,
    /// The full tuning landscape, in candidate order.
    pub grid: Vec<GridPoint>,
}

/// Evaluate one candidate against fixed per-segment accident counts.
///
/// Pure in all inputs; tuning may evaluate candidates in parallel and merge
/// with [`select_best`] to get results identical to a serial pass.
pub fn evaluate_candidate(
    trace: &Trace,
    counts: &[u32],
    cfg: &ControllerConfig,
    candidate: Candidate,
    opts: &TuneOptions,
) -> Result<GridPoint, AnalysisError> {
    let cfg = ControllerConfig {
        k2_incline: candidate.k2_incline,
        k2_decline: candidate.k2_decline,
        k3: candidate.k3,
        ..cfg.clone()
    };
    let run = run(trace, &[], &cfg, opts.step_ft)?;
    let rates = segment_mean_rates(&run, opts.segment_mi)?;
    if rates.len() != counts.len() {
        return Err(AnalysisError::SegmentMismatch {
            rates: rates.len(),
            counts: counts.len(),
        });
    }
    let counts_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    Ok(GridPoint {
        k2_incline: candidate.k2_incline,
        k2_decline: candidate.k2_decline,
        k3: candidate.k3,
        spearman: spearman(&rates, &counts_f),
        total_salt_lb: run.total_salt_lb,
    })
}

/// Pick the winning grid point: highest Spearman, with ties (and undefined
/// correlations) broken toward smaller k2_incline, then k2_decline, then k3.
/// Relies on candidate-order input (see [`TuneGrid::candidates`]); a strict
/// improvement is required to displace an earlier point, which makes the
/// serial and parallel merge orders agree exactly.
pub fn select_best(grid: &[GridPoint]) -> Option<&GridPoint> {
    let mut best: Option<&GridPoint> = None;
    for point in grid {
        match best {
            None => best = Some(point),
            Some(b) => {
                let better = match (point.spearman, b.spearman) {
                    (Some(p), Some(q)) => p > q,
                    (Some(_), None) => true,
                    _ => false,
                };
                if better {
                    best = Some(point);
                }
            }
        }
    }
    best
}

/// Grid-search the geometry constants for the best rank correlation between
/// per-segment mean rates and winter accident counts.
///
/// `accidents` should already be winter-filtered (and direction-filtered if
/// desired). With `conserve_total`, the base rate is rescaled after
/// selection so the tuned policy's total salt matches the pre-tune total
/// within 0.5% — tuning then changes only the distribution of salt.
pub fn tune_constants(
    trace: &Trace,
    accidents: &[AccidentRecord],
    cfg: &ControllerConfig,
    grid: &TuneGrid,
    opts: &TuneOptions,
) -> Result<TuneResult, AnalysisError> {
    let candidates = grid.candidates();
    if candidates.is_empty() {
        return Err(AnalysisError::EmptyGrid);
    }
    let baseline = run(trace, &[], cfg, opts.step_ft)?;
    let counts = bin_accidents(accidents, opts.segment_mi, baseline.distance_mi)?;

    let evaluated: Vec<GridPoint> = candidates
        .iter()
        .map(|&c| evaluate_candidate(trace, &counts, cfg, c, opts))
        .collect::<Result<_, _>>()?;

    finish_tune(trace, cfg, opts, baseline.total_salt_lb, evaluated)
}

/// Select the best point from evaluated candidates and apply the optional
/// conservation rescale. Split out so a caller that evaluated the grid in
/// parallel produces the identical result.
pub fn finish_tune(
    trace: &Trace,
    cfg: &ControllerConfig,
    opts: &TuneOptions,
    total_salt_before: f64,
    evaluated: Vec<GridPoint>,
) -> Result<TuneResult, AnalysisError> {
    let best = *select_best(&evaluated).ok_or(AnalysisError::EmptyGrid)?;

    let mut total_salt_after = best.total_salt_lb;
    let mut rescaled_base_rate_a = None;
    if opts.conserve_total {
        let tuned = ControllerConfig {
            k2_incline: best.k2_incline,
            k2_decline: best.k2_decline,
            k3: best.k3,
            ..cfg.clone()
        };
        let (a, total) = conserve_rescale(trace, &tuned, total_salt_before, opts.step_ft)?;
        total_salt_after = total;
        if a != cfg.base_rate_a {
            rescaled_base_rate_a = Some(a);
        }
    }

    Ok(TuneResult {
        best_k2_incline: best.k2_incline,
        best_k2_decline: best.k2_decline,
        best_k3: best.k3,
        correlation: best.spearman,
        total_salt_before,
        total_salt_after,
        grid_evaluated: evaluated.len(),
        rescaled_base_rate_a,
        grid: evaluated,
    })
}

/// Fixed-point rescale of the base rate until the run total matches the
/// target. The clamp bounds stay put, so the base rate is the only knob; if
/// the clamps make the target unreachable this errors rather than reporting
/// a silently-off total.
fn conserve_rescale(
    trace: &Trace,
    cfg: &ControllerConfig,
    target_lb: f64,
    step_ft: f64,
) -> Result<(f64, f64), AnalysisError> {
    let mut a = cfg.base_rate_a;
    let mut total = run(trace, &[], cfg, step_ft)?.total_salt_lb;
    for _ in 0..32 {
        if math::abs(total / target_lb - 1.0) <= CONSERVE_TOLERANCE {
            return Ok((a, total));
        }
        a = (a * target_lb / total).clamp(cfg.rate_min, cfg.rate_max);
        let rescaled = ControllerConfig {
            base_rate_a: a,
            ..cfg.clone()
        };
        total = run(trace, &[], &rescaled, step_ft)?.total_salt_lb;
    }
    if math::abs(total / target_lb - 1.0) <= CONSERVE_TOLERANCE {
        return Ok((a, total));
    }
    Err(AnalysisError::CannotConserveTotal {
        tolerance_pct: CONSERVE_TOLERANCE * 100.0,
        achieved_lb: total,
        target_lb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{synth_route, RouteSpec};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn record(chainage_mi: f64, surface: Surface) -> AccidentRecord {
        AccidentRecord {
            chainage_mi,
            direction: Direction::NB,
            surface,
            date: IsoDate::parse("2015-02-03").unwrap(),
        }
    }

    #[test]
    fn winter_filter_keeps_wintry_surfaces() {
        let records = [
            record(0.1, Surface::Dry),
            record(0.2, Surface::Slush),
            record(0.3, Surface::Snow),
            record(0.4, Surface::Ice),
            record(0.5, Surface::Wet),
            record(0.6, Surface::Other),
        ];
        let kept = winter_filter(&records, true);
        assert_eq!(kept.len(), 3);
        assert!(kept.iter().all(|r| matches!(
            r.surface,
            Surface::Slush | Surface::Snow | Surface::Ice
        )));
        let no_ice = winter_filter(&records, false);
        assert_eq!(no_ice.len(), 2);
        assert!(winter_filter(&[], true).is_empty());
    }

    #[test]
    fn accident_csv_round_trip_and_errors() {
        let text = "chainage_mi,direction,surface,date\n0.05,NB,slush,2014-01-30\n9.9,SB,dry,2001-12-04\n";
        let records = parse_accidents(text).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].direction, Direction::NB);
        assert_eq!(records[1].surface, Surface::Dry);
        assert_eq!(emit_accidents(&records), text);

        // extra columns are tolerated
        let extra = "chainage_mi,direction,surface,date,time_of_day\n1.5,NB,snow,2010-02-01,17:40\n";
        assert_eq!(parse_accidents(extra).unwrap().len(), 1);

        let err = parse_accidents("chainage_mi,direction,surface\n").unwrap_err();
        assert_eq!(err, AccidentCsvError::MissingColumn("date"));
        let err = parse_accidents("chainage_mi,direction,surface,date\n1.0,EB,dry,2010-01-01\n")
            .unwrap_err();
        assert_eq!(err, AccidentCsvError::BadDirection { row: 2 });
        let err = parse_accidents("chainage_mi,direction,surface,date\n1.0,NB,dry,2010-13-01\n")
            .unwrap_err();
        assert_eq!(err, AccidentCsvError::BadDate { row: 2 });
    }

    #[test]
    fn binning_boundaries_and_conservation() {
        let records = [record(0.05, Surface::Snow)];
        let counts = bin_accidents(&records, 0.1, 10.0).unwrap();
        assert_eq!(counts.len(), 100);
        assert_eq!(counts[0], 1);

        // exactly on a boundary goes to the upper segment (half-open bins)
        let records = [record(0.1, Surface::Snow)];
        let counts = bin_accidents(&records, 0.1, 10.0).unwrap();
        assert_eq!(counts[0], 0);
        assert_eq!(counts[1], 1);

        // the route's exact end lands in the last segment
        let records = [record(10.0, Surface::Snow)];
        let counts = bin_accidents(&records, 0.1, 10.0).unwrap();
        assert_eq!(counts[99], 1);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let records: Vec<_> = (0..100)
            .map(|_| record(rng.random::<f64>() * 10.0, Surface::Slush))
            .collect();
        let counts = bin_accidents(&records, 0.1, 10.0).unwrap();
        assert_eq!(counts.iter().sum::<u32>(), 100);
    }

    #[test]
    fn binning_rejects_out_of_bounds() {
        let records = [record(0.5, Surface::Snow), record(10.5, Surface::Snow)];
        let err = bin_accidents(&records, 0.1, 10.0).unwrap_err();
        assert_eq!(
            err,
            AnalysisError::RecordOutOfBounds {
                index: 1,
                chainage_mi: 10.5,
                route_len_mi: 10.0
            }
        );
    }

    #[test]
    fn pearson_and_spearman_against_reference_values() {
        // frozen from an independent statistics package
        let xs = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let ys = [2.0, 7.0, 1.0, 8.0, 2.0, 8.0, 1.0, 8.0];
        assert_relative_eq!(pearson(&xs, &ys).unwrap(), 0.20965531907301216, max_relative = 1e-12);
        assert_relative_eq!(spearman(&xs, &ys).unwrap(), 0.19885368120992467, max_relative = 1e-12);

        let xs = [5.0, 5.0, 1.0, 3.0, 3.0, 3.0];
        let ys = [2.0, 9.0, 4.0, 4.0, 7.0, 1.0];
        assert_relative_eq!(pearson(&xs, &ys).unwrap(), 0.2201838568875385, max_relative = 1e-12);
        assert_relative_eq!(spearman(&xs, &ys).unwrap(), 0.15655607277128739, max_relative = 1e-12);

        // ties on both sides, perfectly concordant
        let xs = [1.0, 2.0, 2.0, 3.0];
        let ys = [10.0, 20.0, 20.0, 40.0];
        assert_relative_eq!(spearman(&xs, &ys).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn correlation_undefined_for_constant_series() {
        let xs = [1.0, 1.0, 1.0, 1.0];
        let ys = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(pearson(&xs, &ys), None);
        assert_eq!(spearman(&xs, &ys), None);
    }

    #[test]
    fn correlate_proportional_counts_is_perfect() {
        let trace = synth_route(&RouteSpec::tsp_like(), 0).unwrap();
        let cfg = ControllerConfig::default();
        let run = run(&trace, &[], &cfg, 2.0).unwrap();
        let rates = segment_mean_rates(&run, 0.5).unwrap();
        // counts proportional to the mean rate (scaled and truncated)
        let counts: Vec<u32> = rates.iter().map(|r| (r * 10.0) as u32).collect();
        let c = correlate(&run, &counts, 0.5).unwrap();
        assert_relative_eq!(c.pearson.unwrap(), 1.0, epsilon = 1e-3);
        assert!(c.spearman.unwrap() > 0.999);

        let constant = vec![5u32; rates.len()];
        let c = correlate(&run, &constant, 0.5).unwrap();
        assert_eq!(c.spearman, None);
        assert_eq!(c.pearson, None);

        let err = correlate(&run, &counts[..3], 0.5).unwrap_err();
        assert!(matches!(err, AnalysisError::SegmentMismatch { .. }));
    }

    #[test]
    fn tune_single_point_grid_returns_it() {
        let trace = synth_route(&RouteSpec::tsp_like(), 0).unwrap();
        let cfg = ControllerConfig::default();
        let run = run(&trace, &[], &cfg, 2.0).unwrap();
        let accidents =
            synth_accidents(&run, 0.1, 0.3, Direction::NB, 11).unwrap();
        let grid = TuneGrid {
            k2_incline: vec![0.06],
            k2_decline: vec![0.06],
            k3: vec![2.5],
        };
        let result = tune_constants(&trace, &accidents, &cfg, &grid, &TuneOptions::default())
            .unwrap();
        assert_eq!(result.grid_evaluated, 1);
        assert_eq!(result.best_k2_incline, 0.06);
        assert_eq!(result.best_k3, 2.5);
        assert!(result.correlation.is_some());
        assert_eq!(result.grid.len(), 1);
    }

    #[test]
    fn select_best_prefers_defined_then_smaller_constants() {
        let point = |k2i: f64, k3: f64, sp: Option<f64>| GridPoint {
            k2_incline: k2i,
            k2_decline: k2i,
            k3,
            spearman: sp,
            total_salt_lb: 0.0,
        };
        let grid = [
            point(0.02, 1.0, Some(0.5)),
            point(0.04, 1.0, Some(0.9)),
            point(0.06, 1.0, Some(0.9)), // tie: earlier (smaller) wins
            point(0.08, 1.0, None),
        ];
        let best = select_best(&grid).unwrap();
        assert_eq!(best.k2_incline, 0.04);

        let all_undefined = [point(0.0, 0.0, None), point(0.01, 0.0, None)];
        assert_eq!(select_best(&all_undefined).unwrap().k2_incline, 0.0);
    }

    #[test]
    fn conserve_total_holds_total_within_tolerance() {
        let trace = synth_route(&RouteSpec::tsp_like(), 0).unwrap();
        // base rate away from the lower clamp so the rescale has headroom
        let cfg = ControllerConfig {
            base_rate_a: 200.0,
            ..ControllerConfig::default()
        };
        let baseline = run(&trace, &[], &cfg, 2.0).unwrap();
        let accidents = synth_accidents(&baseline, 0.1, 0.3, Direction::NB, 5).unwrap();
        // a grid away from the generating point, so the rescale has work to do
        let grid = TuneGrid {
            k2_incline: vec![0.12],
            k2_decline: vec![0.12],
            k3: vec![5.0],
        };
        let opts = TuneOptions {
            conserve_total: true,
            ..TuneOptions::default()
        };
        let result = tune_constants(&trace, &accidents, &cfg, &grid, &opts).unwrap();
        let drift = (result.total_salt_after / result.total_salt_before - 1.0).abs();
        assert!(drift <= CONSERVE_TOLERANCE, "drift = {drift}");
        let a = result.rescaled_base_rate_a.unwrap();
        assert!(a < 200.0 && a >= 150.0, "rescaled base rate = {a}");
    }

    #[test]
    fn conserve_total_errors_when_clamps_make_target_unreachable() {
        let trace = synth_route(&RouteSpec::tsp_like(), 0).unwrap();
        // base rate already at rate_min: inflated constants can only add salt,
        // and the rescale has nowhere to go
        let cfg = ControllerConfig::default();
        let baseline = run(&trace, &[], &cfg, 2.0).unwrap();
        let accidents = synth_accidents(&baseline, 0.1, 0.3, Direction::NB, 5).unwrap();
        let grid = TuneGrid {
            k2_incline: vec![0.12],
            k2_decline: vec![0.12],
            k3: vec![5.0],
        };
        let opts = TuneOptions {
            conserve_total: true,
            ..TuneOptions::default()
        };
        let err = tune_constants(&trace, &accidents, &cfg, &grid, &opts).unwrap_err();
        assert!(matches!(err, AnalysisError::CannotConserveTotal { .. }));
    }
}
