//! MAC frame formats with byte-accurate lengths.
//!
//! Every frame is MAC header (11 bytes) + payload + FCS (2 bytes), except
//! the immediate acknowledgment which is 5 bytes total. Air time follows
//! from the byte length at 4 bits per symbol.

use crate::engine::BITS_PER_SYMBOL;

pub const BROADCAST: u16 = 0xffff;
pub const MAC_HEADER_BYTES: u64 = 11;
pub const FCS_BYTES: u64 = 2;
pub const ACK_FRAME_BYTES: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GtsDirection {
    DeviceTransmit,
    DeviceReceive,
}

/// One GTS allocation as carried in the beacon payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GtsDescriptor {
    pub dev_addr: u16,
    pub start_slot: u8,
    pub length: u8,
    pub direction: GtsDirection,
}

impl GtsDescriptor {
    pub fn end_slot_exclusive(&self) -> u8 {
        self.start_slot + self.length
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeaconPayload {
    pub bo: u8,
    pub so: u8,
    pub final_cap_slot: u8,
    pub gts_permit: bool,
    pub gts_list: Vec<GtsDescriptor>,
    pub pending: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FrameKind {
    Beacon(BeaconPayload),
    Data,
    Ack,
    AssocRequest,
    AssocResponse,
    DataRequest,
    GtsRequest {
        length: u8,
        direction: GtsDirection,
        deallocate: bool,
    },
}

impl FrameKind {
    pub fn name(&self) -> &'static str {
        match self {
            FrameKind::Beacon(_) => "beacon",
            FrameKind::Data => "data",
            FrameKind::Ack => "ack",
            FrameKind::AssocRequest => "association request",
            FrameKind::AssocResponse => "association response",
            FrameKind::DataRequest => "data request",
            FrameKind::GtsRequest { .. } => "gts request",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub src: u16,
    pub dst: u16,
    pub seq: u8,
    pub payload_len: u64,
    pub ack_request: bool,
}

impl Frame {
    pub fn beacon(src: u16, payload: BeaconPayload) -> Frame {
        // superframe spec (2) + GTS spec (1) + pending spec (1) + descriptors
        let payload_len =
            4 + 3 * payload.gts_list.len() as u64 + 2 * payload.pending.len() as u64;
        Frame {
            kind: FrameKind::Beacon(payload),
            src,
            dst: BROADCAST,
            seq: 0,
            payload_len,
            ack_request: false,
        }
    }

    /// Air symbols of a beacon carrying `n_gts` descriptors, without
    /// building the frame. Used by the GTS table for CAP-floor checks.
    pub fn beacon_air_symbols(n_gts: usize) -> u64 {
        bytes_to_symbols(MAC_HEADER_BYTES + 4 + 3 * n_gts as u64 + FCS_BYTES)
    }

    pub fn data(src: u16, dst: u16, seq: u8, payload_len: u64) -> Frame {
        Frame {
            kind: FrameKind::Data,
            src,
            dst,
            seq,
            payload_len,
            ack_request: true,
        }
    }

    pub fn ack(src: u16, dst: u16, seq: u8) -> Frame {
        Frame {
            kind: FrameKind::Ack,
            src,
            dst,
            seq,
            payload_len: 0,
            ack_request: false,
        }
    }

    pub fn assoc_request(src: u16, dst: u16, seq: u8) -> Frame {
        Frame {
            kind: FrameKind::AssocRequest,
            src,
            dst,
            seq,
            payload_len: 2,
            ack_request: true,
        }
    }

    pub fn assoc_response(src: u16, dst: u16, seq: u8) -> Frame {
        Frame {
            kind: FrameKind::AssocResponse,
            src,
            dst,
            seq,
            payload_len: 4,
            ack_request: true,
        }
    }

    pub fn data_request(src: u16, dst: u16, seq: u8) -> Frame {
        Frame {
            kind: FrameKind::DataRequest,
            src,
            dst,
            seq,
            payload_len: 1,
            ack_request: true,
        }
    }

    pub fn gts_request(
        src: u16,
        dst: u16,
        seq: u8,
        length: u8,
        direction: GtsDirection,
        deallocate: bool,
    ) -> Frame {
        Frame {
            kind: FrameKind::GtsRequest {
                length,
                direction,
                deallocate,
            },
            src,
            dst,
            seq,
            payload_len: 2,
            ack_request: true,
        }
    }

    pub fn total_bytes(&self) -> u64 {
        match self.kind {
            FrameKind::Ack => ACK_FRAME_BYTES,
            _ => MAC_HEADER_BYTES + self.payload_len + FCS_BYTES,
        }
    }

    pub fn air_symbols(&self) -> u64 {
        bytes_to_symbols(self.total_bytes())
    }

    pub fn is_data(&self) -> bool {
        matches!(self.kind, FrameKind::Data)
    }
}

pub fn bytes_to_symbols(bytes: u64) -> u64 {
    (bytes * 8).div_ceil(BITS_PER_SYMBOL)
}

/// Air symbols of an immediate acknowledgment.
pub fn ack_air_symbols() -> u64 {
    bytes_to_symbols(ACK_FRAME_BYTES)
}
