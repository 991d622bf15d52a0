//! Structural run audit.
//!
//! The simulation records every beacon, CCA, transmission and collision with
//! exact symbol times; the checks here verify the structural invariants of
//! the MAC after a run completes: beacon periodicity, backoff-boundary
//! alignment in the CAP, the GTS descriptor limit, silence during the
//! inactive portion, and contention-free GTS intervals.

use crate::engine::SymbolTime;
use crate::mac::frame::GtsDirection;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxPath {
    /// Beacon owns the start of slot 0.
    BeaconSlot,
    /// Slotted CSMA/CA in the CAP; must align to backoff boundaries.
    CapCsma,
    /// Acknowledgment or CAP-rule direct send; unaligned but inside the CAP.
    CapDirect,
    /// Inside an allocated GTS.
    Cfp,
}

#[derive(Clone, Debug)]
pub struct BeaconAudit {
    pub start: SymbolTime,
    pub air_symbols: u64,
    pub final_cap_slot: u8,
    pub n_gts: usize,
    /// Absolute GTS intervals in this superframe.
    pub gts_intervals: Vec<(SymbolTime, SymbolTime, u16, GtsDirection)>,
}

#[derive(Clone, Copy, Debug)]
pub struct TxAudit {
    pub node: usize,
    pub start: SymbolTime,
    pub end: SymbolTime,
    pub path: TxPath,
}

#[derive(Clone, Debug, Default)]
pub struct Audit {
    pub beacons: Vec<BeaconAudit>,
    pub txs: Vec<TxAudit>,
    pub ccas: Vec<(SymbolTime, usize)>,
    /// Times at which a corrupted delivery was observed.
    pub collisions: Vec<SymbolTime>,
}

impl Audit {
    /// The beacon in force at time `t` (the last one starting at or before it).
    fn beacon_at(&self, t: SymbolTime) -> Option<&BeaconAudit> {
        match self.beacons.binary_search_by(|b| b.start.cmp(&t)) {
            Ok(i) => Some(&self.beacons[i]),
            Err(0) => None,
            Err(i) => Some(&self.beacons[i - 1]),
        }
    }

    /// Beacon start times are exactly k * BI.
    pub fn check_beacon_periodicity(&self, bi_symbols: u64) -> Result<(), String> {
        for (k, b) in self.beacons.iter().enumerate() {
            let expected = k as u64 * bi_symbols;
            if b.start.0 != expected {
                return Err(format!(
                    "beacon {k} at {} symbols, expected {expected}",
                    b.start.0
                ));
            }
        }
        Ok(())
    }

    /// Every CAP CCA and CSMA transmission start is a multiple of 20 symbols
    /// from the CAP start of its superframe.
    pub fn check_backoff_alignment(&self) -> Result<(), String> {
        for &(at, node) in &self.ccas {
            let b = self
                .beacon_at(at)
                .ok_or_else(|| format!("CCA at {at:?} before any beacon"))?;
            let cap_start = b.start.0 + b.air_symbols;
            if (at.0 - cap_start) % 20 != 0 {
                return Err(format!(
                    "node {node} CCA at {at:?} off the backoff grid (cap start {cap_start})"
                ));
            }
        }
        for tx in self.txs.iter().filter(|t| t.path == TxPath::CapCsma) {
            let b = self
                .beacon_at(tx.start)
                .ok_or_else(|| format!("tx at {:?} before any beacon", tx.start))?;
            let cap_start = b.start.0 + b.air_symbols;
            if (tx.start.0 - cap_start) % 20 != 0 {
                return Err(format!(
                    "node {} CSMA tx at {:?} off the backoff grid",
                    tx.node, tx.start
                ));
            }
        }
        Ok(())
    }

    pub fn check_gts_limit(&self) -> Result<(), String> {
        for b in &self.beacons {
            if b.n_gts > 7 {
                return Err(format!("beacon at {:?} advertises {} GTSs", b.start, b.n_gts));
            }
        }
        Ok(())
    }

    /// No transmission may touch the inactive portion [SD, BI).
    pub fn check_no_inactive_tx(&self, sd_symbols: u64, bi_symbols: u64) -> Result<(), String> {
        if sd_symbols == bi_symbols {
            return Ok(());
        }
        for tx in &self.txs {
            let b = self
                .beacon_at(tx.start)
                .ok_or_else(|| format!("tx at {:?} before any beacon", tx.start))?;
            let active_end = b.start.0 + sd_symbols;
            if tx.end.0 > active_end {
                return Err(format!(
                    "node {} tx [{:?}, {:?}) crosses into the inactive portion at {active_end}",
                    tx.node, tx.start, tx.end
                ));
            }
        }
        Ok(())
    }

    /// No collision event falls inside any allocated GTS interval.
    pub fn check_no_collision_in_gts(&self) -> Result<(), String> {
        for &t in &self.collisions {
            if let Some(b) = self.beacon_at(t) {
                for &(gs, ge, dev, _) in &b.gts_intervals {
                    if t >= gs && t < ge {
                        return Err(format!(
                            "collision at {t:?} inside GTS [{gs:?}, {ge:?}) of device {dev}"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs every structural check; BI/SD from the run configuration.
    pub fn check_all(&self, sd_symbols: u64, bi_symbols: u64) -> Result<(), String> {
        self.check_beacon_periodicity(bi_symbols)?;
        self.check_backoff_alignment()?;
        self.check_gts_limit()?;
        self.check_no_inactive_tx(sd_symbols, bi_symbols)?;
        self.check_no_collision_in_gts()
    }
}
