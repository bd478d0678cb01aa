//! Roadside tag frames and the onboard reader state machine.
//!
//! A roadside tag carries one fixed 16-byte frame telling a passing spreader
//! to adjust its behavior over the next stretch of road: scale the
//! application rate, set width or material or spread pattern, or stop
//! application entirely (bridges treated by other means). The frame is small
//! enough for passive-tag user memory and is integrity-checked with
//! CRC-16/CCITT-FALSE.
//!
//! Frame layout, big-endian:
//!
//! ```text
//! offset  size  field
//!      0     2  magic 0x5254 ("RT")
//!      2     1  version, currently 0x01
//!      3     1  command code
//!      4     4  tag_id
//!      8     2  magnitude (signed)
//!     10     2  extent, feet
//!     12     2  reserved, zero
//!     14     2  CRC-16/CCITT-FALSE over bytes 0..14
//! ```
//!
//! The reader side ([`ReaderState`]) turns tag reads plus distance traveled
//! into the [`ZoneSummary`] the controller consumes each step.

use alloc::vec::Vec;

use crate::controller::Material;

/// Encoded frame size in bytes.
pub const FRAME_LEN: usize = 16;

/// Frame magic, "RT".
pub const MAGIC: [u8; 2] = [0x52, 0x54];

/// Wire protocol version this implementation speaks.
pub const VERSION: u8 = 0x01;

/// Magnitude code for salt in a `MaterialSet` tag.
pub const MATERIAL_CODE_SALT: i16 = 1;

/// Magnitude code for the alternative chemical in a `MaterialSet` tag.
pub const MATERIAL_CODE_ALTERNATIVE: i16 = 2;

/// What a tag instructs the spreader to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Command {
    /// Scale the effective application rate by `magnitude` per-mille
    /// (−1000 = −100%, +5000 = +500%).
    RateAdjust,
    /// Set spreading width; `magnitude` is tenths of a lane, 1..=40.
    WidthSet,
    /// Switch material; `magnitude` is a material code.
    MaterialSet,
    /// Stop application entirely; `magnitude` is ignored.
    StopApplication,
    /// Switch spread pattern; `magnitude` is an installation-defined
    /// pattern preset, 1..=8.
    PatternSet,
}

impl Command {
    fn code(self) -> u8 {
        match self {
            Command::RateAdjust => 0x01,
            Command::WidthSet => 0x02,
            Command::MaterialSet => 0x03,
            Command::StopApplication => 0x04,
            Command::PatternSet => 0x05,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(Command::RateAdjust),
            0x02 => Some(Command::WidthSet),
            0x03 => Some(Command::MaterialSet),
            0x04 => Some(Command::StopApplication),
            0x05 => Some(Command::PatternSet),
            _ => None,
        }
    }

    /// Valid magnitude range for this command, or `None` when the magnitude
    /// is ignored.
    pub fn magnitude_range(self) -> Option<(i16, i16)> {
        match self {
            Command::RateAdjust => Some((-1000, 5000)),
            Command::WidthSet => Some((1, 40)),
            Command::MaterialSet => Some((MATERIAL_CODE_SALT, MATERIAL_CODE_ALTERNATIVE)),
            Command::PatternSet => Some((1, 8)),
            Command::StopApplication => None,
        }
    }
}

/// One decoded roadside tag payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoadsideTag {
    /// Installation-assigned identifier.
    pub tag_id: u32,
    /// Instruction kind.
    pub command: Command,
    /// Severity / setting, interpretation per [`Command`].
    pub magnitude: i16,
    /// How far past the tag the instruction applies, feet (>= 1).
    pub extent_ft: u16,
}

impl RoadsideTag {
    /// Check the per-command magnitude range and the extent invariant.
    pub fn validate(&self) -> Result<(), CodecError> {
        if let Some((min, max)) = self.command.magnitude_range() {
            if self.magnitude < min || self.magnitude > max {
                return Err(CodecError::MagnitudeOutOfRange {
                    command: self.command,
                    magnitude: self.magnitude,
                    min,
                    max,
                });
            }
        }
        if self.extent_ft == 0 {
            return Err(CodecError::ZeroExtent);
        }
        Ok(())
    }
}

/// Encode or decode failures, each distinct so a reader log can name the
/// reason a frame was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    /// Payload is not exactly [`FRAME_LEN`] bytes.
    #[error("payload must be {FRAME_LEN} bytes, got {0}")]
    BadLength(usize),
    /// First two bytes are not the frame magic.
    #[error("bad magic")]
    BadMagic,
    /// Version byte is not one we speak.
    #[error("unsupported version {0:#04x}")]
    UnsupportedVersion(u8),
    /// Stored CRC does not match the computed one.
    #[error("CRC mismatch (computed {computed:#06x}, stored {stored:#06x})")]
    CrcMismatch {
        /// CRC computed over the received frame body.
        computed: u16,
        /// CRC carried in the frame.
        stored: u16,
    },
    /// Command code not assigned in this version.
    #[error("unknown command code {0:#04x}")]
    UnknownCommand(u8),
    /// Magnitude out of range for the command.
    #[error("magnitude out of range: {magnitude} for {command:?} (valid {min}..={max})")]
    MagnitudeOutOfRange {
        /// Command whose range was violated.
        command: Command,
        /// Offending magnitude.
        magnitude: i16,
        /// Smallest valid magnitude.
        min: i16,
        /// Largest valid magnitude.
        max: i16,
    },
    /// Extent of zero feet.
    #[error("extent_ft must be >= 1")]
    ZeroExtent,
}

/// CRC-16/CCITT-FALSE: polynomial 0x1021, init 0xFFFF, no reflection, no
/// final xor. Check value over `"123456789"` is 0x29B1.
pub fn crc16_ccitt_false(data: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in data {
        crc ^= (byte as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
        }
    }
    crc
}

/// Encode a tag into its 16-byte frame. Refuses tags that violate their
/// command's magnitude range or carry a zero extent.
pub fn encode_tag(tag: &RoadsideTag) -> Result<[u8; FRAME_LEN], CodecError> {
    tag.validate()?;
    let mut frame = [0u8; FRAME_LEN];
    frame[0..2].copy_from_slice(&MAGIC);
    frame[2] = VERSION;
    frame[3] = tag.command.code();
    frame[4..8].copy_from_slice(&tag.tag_id.to_be_bytes());
    frame[8..10].copy_from_slice(&tag.magnitude.to_be_bytes());
    frame[10..12].copy_from_slice(&tag.extent_ft.to_be_bytes());
    // frame[12..14] reserved, zero
    let crc = crc16_ccitt_false(&frame[0..14]);
    frame[14..16].copy_from_slice(&crc.to_be_bytes());
    Ok(frame)
}

/// Decode and validate a received frame.
///
/// Checks, in order: length, magic, version, CRC, command code, field
/// ranges. Reserved bytes are covered by the CRC but otherwise ignored.
pub fn decode_tag(bytes: &[u8]) -> Result<RoadsideTag, CodecError> {
    if bytes.len() != FRAME_LEN {
        return Err(CodecError::BadLength(bytes.len()));
    }
    if bytes[0..2] != MAGIC {
        return Err(CodecError::BadMagic);
    }
    if bytes[2] != VERSION {
        return Err(CodecError::UnsupportedVersion(bytes[2]));
    }
    let computed = crc16_ccitt_false(&bytes[0..14]);
    let stored = u16::from_be_bytes([bytes[14], bytes[15]]);
    if computed != stored {
        return Err(CodecError::CrcMismatch { computed, stored });
    }
    let command = Command::from_code(bytes[3]).ok_or(CodecError::UnknownCommand(bytes[3]))?;
    let tag = RoadsideTag {
        tag_id: u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]),
        command,
        magnitude: i16::from_be_bytes([bytes[8], bytes[9]]),
        extent_ft: u16::from_be_bytes([bytes[10], bytes[11]]),
    };
    tag.validate()?;
    Ok(tag)
}

/// A tag the reader has passed, active over a chainage interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveZone {
    /// The instruction.
    pub tag: RoadsideTag,
    /// Chainage where the tag was read, feet.
    pub start_chainage_ft: f64,
    /// `start + extent`; the zone covers `[start, end)`.
    pub end_chainage_ft: f64,
}

impl ActiveZone {
    /// Whether the zone applies at `chainage_ft`.
    pub fn contains(&self, chainage_ft: f64) -> bool {
        self.start_chainage_ft <= chainage_ft && chainage_ft < self.end_chainage_ft
    }
}

/// A tag positioned along a route, as listed in a placement file.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TagPlacement {
    /// Where the tag sits, feet from the route origin.
    pub chainage_ft: f64,
    /// Its payload.
    pub tag: RoadsideTag,
}

/// Replay attempted to move the reader backwards.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("chainage decreased from {from_ft} to {to_ft} ft; replay is forward-only")]
pub struct ChainageDecreased {
    /// Chainage before the bad advance.
    pub from_ft: f64,
    /// Requested chainage.
    pub to_ft: f64,
}

/// Onboard reader state: current chainage and the zones read so far, in
/// read order (order matters for last-wins overrides).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReaderState {
    /// Current distance along the route, feet.
    pub chainage_ft: f64,
    /// Zones not yet expired, oldest read first.
    pub zones: Vec<ActiveZone>,
}

impl ReaderState {
    /// Fresh reader at chainage zero.
    pub fn new() -> Self {
        ReaderState::default()
    }

    /// Record a tag read at `chainage_ft`.
    ///
    /// Real readers report the same tag many times per pass, so a re-read of
    /// a `tag_id` whose zone still covers the read point is a no-op. Once a
    /// zone has expired, the same id may start a fresh zone.
    pub fn on_tag_read(&mut self, tag: RoadsideTag, chainage_ft: f64) {
        let duplicate = self
            .zones
            .iter()
            .any(|z| z.tag.tag_id == tag.tag_id && z.contains(chainage_ft));
        if duplicate {
            return;
        }
        self.zones.push(ActiveZone {
            tag,
            start_chainage_ft: chainage_ft,
            end_chainage_ft: chainage_ft + tag.extent_ft as f64,
        });
    }

    /// Move the reader forward and expire zones ending at or before the new
    /// chainage. Moving backwards is an error.
    pub fn advance(&mut self, chainage_ft: f64) -> Result<(), ChainageDecreased> {
        if chainage_ft < self.chainage_ft {
            return Err(ChainageDecreased {
                from_ft: self.chainage_ft,
                to_ft: chainage_ft,
            });
        }
        self.chainage_ft = chainage_ft;
        self.zones.retain(|z| z.end_chainage_ft > chainage_ft);
        Ok(())
    }

    /// Collapse the zones active at the current chainage into the summary
    /// the controller consumes.
    ///
    /// Rate zones stack multiplicatively (order-independent, and a hazard
    /// zone cannot be silently annulled by an overlapping reduction zone);
    /// width and material take the most recently read active zone; any
    /// active stop zone sets `stop`.
    pub fn summarize(&self) -> ZoneSummary {
        let mut summary = ZoneSummary::default();
        for zone in &self.zones {
            if !zone.contains(self.chainage_ft) {
                continue;
            }
            match zone.tag.command {
                Command::RateAdjust => {
                    summary.rate_multiplier *= 1.0 + zone.tag.magnitude as f64 / 1000.0;
                }
                Command::WidthSet => {
                    summary.width_override = Some(zone.tag.magnitude as f64 / 10.0);
                }
                Command::MaterialSet => {
                    summary.material_override = Some(match zone.tag.magnitude {
                        MATERIAL_CODE_SALT => Material::Salt,
                        _ => Material::Alternative,
                    });
                }
                Command::StopApplication => summary.stop = true,
                // Pattern changes have no actuator in this artifact; the
                // zone is tracked but does not surface in the summary.
                Command::PatternSet => {}
            }
        }
        summary
    }
}

/// Aggregate effect of the currently active zones on one controller step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneSummary {
    /// Product of active rate adjustments; 1.0 when none.
    pub rate_multiplier: f64,
    /// Width in lanes from the most recent active width zone.
    pub width_override: Option<f64>,
    /// Material from the most recent active material zone.
    pub material_override: Option<Material>,
    /// Whether any active zone stops application outright.
    pub stop: bool,
}

impl Default for ZoneSummary {
    /// The identity summary: controller output unchanged.
    fn default() -> Self {
        ZoneSummary {
            rate_multiplier: 1.0,
            width_override: None,
            material_override: None,
            stop: false,
        }
    }
}
