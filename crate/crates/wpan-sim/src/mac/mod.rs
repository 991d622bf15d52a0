//! Beacon-enabled IEEE 802.15.4 MAC building blocks: protocol constants,
//! superframe timing, frame formats, the slotted CSMA/CA engine and the
//! coordinator's GTS allocation table.

pub mod csma;
pub mod frame;
pub mod gts;

use crate::engine::SymbolTime;
use thiserror::Error;

/// MAC and PHY constants (2.4 GHz band defaults).
pub mod consts {
    /// Symbols in a superframe slot at SO = 0.
    pub const A_BASE_SLOT_DURATION: u64 = 60;
    pub const A_NUM_SUPERFRAME_SLOTS: u64 = 16;
    /// Symbols in a superframe at SO = 0.
    pub const A_BASE_SUPERFRAME_DURATION: u64 = A_BASE_SLOT_DURATION * A_NUM_SUPERFRAME_SLOTS;
    /// The basic CSMA/CA time unit; all CAP channel activity aligns to it.
    pub const A_UNIT_BACKOFF_PERIOD: u64 = 20;
    /// CCA detection time in symbols.
    pub const CCA_SYMBOLS: u64 = 8;
    /// RX-to-TX / TX-to-RX turnaround in symbols.
    pub const TURNAROUND_SYMBOLS: u64 = 12;
    /// How long a transmitter waits for an acknowledgment after TX end.
    pub const MAC_ACK_WAIT_SYMBOLS: u64 = 54;
    pub const MAC_MIN_BE: u8 = 3;
    pub const A_MAX_BE: u8 = 5;
    pub const MAC_MAX_CSMA_BACKOFFS: u8 = 5;
    /// Maximum retransmissions of a frame after a missing acknowledgment.
    pub const MAC_MAX_FRAME_RETRIES: u8 = 3;
    pub const A_MAX_GTS: usize = 7;
    /// The CAP may never shrink below this many symbols.
    pub const A_MIN_CAP_LENGTH: u64 = 440;
    pub const A_MAX_LOST_BEACONS: u8 = 4;
    /// Beacons a device waits for its GTS descriptor before giving up.
    pub const A_GTS_DESC_PERSISTENCE_TIME: u8 = 4;
    /// Symbols a device waits between an association request ack and the
    /// data request poll (macResponseWaitTime).
    pub const RESPONSE_WAIT_SYMBOLS: u64 = 32 * A_BASE_SUPERFRAME_DURATION;
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MacError {
    #[error("invalid superframe configuration: bo={bo} so={so} (need 0 <= so <= bo <= 14)")]
    InvalidConfig { bo: u8, so: u8 },
}

/// Beacon Order / Superframe Order pair with the derived durations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SuperframeConfig {
    pub bo: u8,
    pub so: u8,
    pub battery_life_extension: bool,
}

impl SuperframeConfig {
    pub fn new(bo: u8, so: u8) -> Result<Self, MacError> {
        if so > bo || bo > 14 {
            return Err(MacError::InvalidConfig { bo, so });
        }
        Ok(SuperframeConfig {
            bo,
            so,
            battery_life_extension: false,
        })
    }

    /// Superframe (active portion) duration in symbols.
    pub fn sd_symbols(&self) -> u64 {
        consts::A_BASE_SUPERFRAME_DURATION << self.so
    }

    /// Beacon interval in symbols.
    pub fn bi_symbols(&self) -> u64 {
        consts::A_BASE_SUPERFRAME_DURATION << self.bo
    }

    /// Superframe slot duration in symbols.
    pub fn slot_symbols(&self) -> u64 {
        consts::A_BASE_SLOT_DURATION << self.so
    }

    pub fn has_inactive_portion(&self) -> bool {
        self.bo > self.so
    }

    /// SD / BI as a percentage; exact for any bo/so pair.
    pub fn duty_cycle_pct(&self) -> f64 {
        100.0 * (self.sd_symbols() as f64 / self.bi_symbols() as f64)
    }
}

/// The intervals making up one superframe, all half-open in symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Timeline {
    pub cap: (SymbolTime, SymbolTime),
    pub cfp: (SymbolTime, SymbolTime),
    pub inactive: (SymbolTime, SymbolTime),
    pub slot_boundaries: [SymbolTime; 16],
}

/// Carves a superframe starting at `beacon_start` into CAP, CFP and inactive
/// intervals. The CAP starts when the beacon ends and runs to the boundary
/// after `final_cap_slot`; the CFP covers the rest of the active portion.
pub fn superframe_timeline(
    cfg: &SuperframeConfig,
    beacon_start: SymbolTime,
    beacon_air_symbols: u64,
    final_cap_slot: u8,
) -> Timeline {
    let slot = cfg.slot_symbols();
    let sd_end = beacon_start + cfg.sd_symbols();
    let bi_end = beacon_start + cfg.bi_symbols();
    let cap_start = beacon_start + beacon_air_symbols;
    let cap_end = beacon_start + (final_cap_slot as u64 + 1) * slot;
    let mut slot_boundaries = [SymbolTime::ZERO; 16];
    for (i, b) in slot_boundaries.iter_mut().enumerate() {
        *b = beacon_start + i as u64 * slot;
    }
    Timeline {
        cap: (cap_start, cap_end),
        cfp: (cap_end, sd_end),
        inactive: (sd_end, bi_end),
        slot_boundaries,
    }
}
