//! Coordinator-side GTS allocation.
//!
//! Slots are granted first-come-first-served from the end of the superframe
//! growing downward: the first allocation of length L occupies slots
//! [16-L, 16). A request is denied when seven GTSs exist or when granting it
//! would shrink the CAP below aMinCapLength.

use crate::mac::consts::{A_MAX_GTS, A_MIN_CAP_LENGTH, A_NUM_SUPERFRAME_SLOTS};
use crate::mac::frame::{Frame, GtsDescriptor, GtsDirection};
use crate::mac::SuperframeConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GtsDenial {
    TableFull,
    CapTooShort,
}

#[derive(Debug, Default)]
pub struct GtsTable {
    list: Vec<GtsDescriptor>,
}

impl GtsTable {
    pub fn new() -> Self {
        GtsTable::default()
    }

    pub fn descriptors(&self) -> &[GtsDescriptor] {
        &self.list
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn for_device(&self, dev_addr: u16) -> Option<GtsDescriptor> {
        self.list.iter().copied().find(|d| d.dev_addr == dev_addr)
    }

    /// Final CAP slot given the current allocations: min(start_slot) - 1,
    /// or 15 when nothing is allocated.
    pub fn final_cap_slot(&self) -> u8 {
        self.list
            .iter()
            .map(|d| d.start_slot - 1)
            .min()
            .unwrap_or(A_NUM_SUPERFRAME_SLOTS as u8 - 1)
    }

    fn lowest_start(&self) -> u8 {
        self.list
            .iter()
            .map(|d| d.start_slot)
            .min()
            .unwrap_or(A_NUM_SUPERFRAME_SLOTS as u8)
    }

    /// CAP length in symbols if the lowest allocated slot were `lowest`,
    /// accounting for the beacon with `n_gts` descriptors at the front.
    fn cap_symbols(cfg: &SuperframeConfig, lowest: u8, n_gts: usize) -> u64 {
        let cap_end = lowest as u64 * cfg.slot_symbols();
        cap_end.saturating_sub(Frame::beacon_air_symbols(n_gts))
    }

    /// Grants a GTS or explains why not. A repeated request from a device
    /// that already holds a slot returns the existing descriptor.
    pub fn allocate(
        &mut self,
        cfg: &SuperframeConfig,
        dev_addr: u16,
        length: u8,
        direction: GtsDirection,
    ) -> Result<GtsDescriptor, GtsDenial> {
        if let Some(existing) = self.for_device(dev_addr) {
            return Ok(existing);
        }
        if self.list.len() >= A_MAX_GTS {
            return Err(GtsDenial::TableFull);
        }
        let lowest = self.lowest_start();
        if length == 0 || length > lowest {
            return Err(GtsDenial::CapTooShort);
        }
        let new_start = lowest - length;
        if Self::cap_symbols(cfg, new_start, self.list.len() + 1) < A_MIN_CAP_LENGTH {
            return Err(GtsDenial::CapTooShort);
        }
        let desc = GtsDescriptor {
            dev_addr,
            start_slot: new_start,
            length,
            direction,
        };
        self.list.push(desc);
        Ok(desc)
    }

    /// Removes a device's allocation and re-compacts the remaining GTSs
    /// toward the superframe end, preserving their relative order.
    pub fn deallocate(&mut self, dev_addr: u16) -> bool {
        let before = self.list.len();
        self.list.retain(|d| d.dev_addr != dev_addr);
        if self.list.len() == before {
            return false;
        }
        // re-pack from slot 16 downward in descending start order
        self.list.sort_by_key(|d| std::cmp::Reverse(d.start_slot));
        let mut next_end = A_NUM_SUPERFRAME_SLOTS as u8;
        for d in &mut self.list {
            d.start_slot = next_end - d.length;
            next_end = d.start_slot;
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg33() -> SuperframeConfig {
        SuperframeConfig::new(3, 3).unwrap()
    }

    #[test]
    fn first_length_two_starts_at_fourteen() {
        let mut t = GtsTable::new();
        let d = t
            .allocate(&cfg33(), 1, 2, GtsDirection::DeviceReceive)
            .unwrap();
        assert_eq!(d.start_slot, 14);
        assert_eq!(d.length, 2);
        assert_eq!(t.final_cap_slot(), 13);
    }

    #[test]
    fn second_length_one_starts_at_thirteen() {
        let mut t = GtsTable::new();
        t.allocate(&cfg33(), 1, 2, GtsDirection::DeviceReceive)
            .unwrap();
        let d = t
            .allocate(&cfg33(), 2, 1, GtsDirection::DeviceTransmit)
            .unwrap();
        assert_eq!(d.start_slot, 13);
        assert_eq!(t.final_cap_slot(), 12);
    }

    #[test]
    fn eighth_device_denied() {
        let mut t = GtsTable::new();
        for dev in 1..=7 {
            t.allocate(&cfg33(), dev, 1, GtsDirection::DeviceTransmit)
                .unwrap();
        }
        assert_eq!(
            t.allocate(&cfg33(), 8, 1, GtsDirection::DeviceTransmit),
            Err(GtsDenial::TableFull)
        );
        assert_eq!(t.len(), 7);
    }

    #[test]
    fn impossible_length_denied() {
        let mut t = GtsTable::new();
        assert_eq!(
            t.allocate(&cfg33(), 1, 16, GtsDirection::DeviceTransmit),
            Err(GtsDenial::CapTooShort)
        );
    }

    #[test]
    fn cap_floor_enforced_at_so_zero() {
        // at SO=0 a slot is 60 symbols; a single descriptor beacon is 40
        // symbols, so lowest start 8 leaves 8*60-40 = 440 = floor exactly,
        // while lowest start 7 leaves 380 < 440.
        let cfg = SuperframeConfig::new(0, 0).unwrap();
        let mut t = GtsTable::new();
        assert_eq!(
            t.allocate(&cfg, 1, 9, GtsDirection::DeviceTransmit),
            Err(GtsDenial::CapTooShort)
        );
        let d = t.allocate(&cfg, 1, 8, GtsDirection::DeviceTransmit).unwrap();
        assert_eq!(d.start_slot, 8);
    }

    #[test]
    fn repeated_request_returns_existing() {
        let mut t = GtsTable::new();
        let a = t
            .allocate(&cfg33(), 1, 2, GtsDirection::DeviceTransmit)
            .unwrap();
        let b = t
            .allocate(&cfg33(), 1, 2, GtsDirection::DeviceTransmit)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn deallocation_recompacts_toward_end() {
        let mut t = GtsTable::new();
        t.allocate(&cfg33(), 1, 2, GtsDirection::DeviceTransmit)
            .unwrap(); // 14..16
        t.allocate(&cfg33(), 2, 1, GtsDirection::DeviceTransmit)
            .unwrap(); // 13..14
        t.allocate(&cfg33(), 3, 2, GtsDirection::DeviceTransmit)
            .unwrap(); // 11..13
        assert!(t.deallocate(1));
        let d2 = t.for_device(2).unwrap();
        let d3 = t.for_device(3).unwrap();
        assert_eq!(d2.start_slot, 15);
        assert_eq!(d3.start_slot, 13);
        assert_eq!(t.final_cap_slot(), 12);
        assert!(!t.deallocate(1));
    }

    #[test]
    fn descriptors_never_overlap() {
        let mut t = GtsTable::new();
        let cfg = SuperframeConfig::new(5, 5).unwrap();
        for dev in 1..=7 {
            t.allocate(&cfg, dev, (dev % 2 + 1) as u8, GtsDirection::DeviceTransmit)
                .unwrap();
        }
        let mut list = t.descriptors().to_vec();
        list.sort_by_key(|d| d.start_slot);
        for w in list.windows(2) {
            assert!(w[0].end_slot_exclusive() <= w[1].start_slot);
        }
        assert!(list.last().unwrap().end_slot_exclusive() <= 16);
    }
}
