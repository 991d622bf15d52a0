//! Radio channel and transceiver model.
//!
//! Unit-disk propagation with zero propagation delay: a node hears another
//! iff their distance is within the range threshold. Any overlap between
//! two transmissions audible at a receiver corrupts both there (no capture
//! effect). Corrupted frames are dropped silently; the MAC only ever sees
//! the missing acknowledgment.

use crate::engine::SymbolTime;
use crate::mac::consts::CCA_SYMBOLS;
use crate::mac::frame::Frame;
use thiserror::Error;

/// Flights older than this many symbols past their end can no longer
/// overlap anything still in the air and are pruned.
const FLIGHT_RETENTION_SYMBOLS: u64 = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrxState {
    TxOn,
    RxOn,
    TrxOff,
}

#[derive(Clone, Copy, Debug)]
pub struct RadioConfig {
    pub position: (f64, f64),
    /// Decode-and-sense threshold in meters.
    pub range_m: f64,
    pub bitrate: u64,
}

impl RadioConfig {
    pub fn at(x: f64, y: f64) -> Self {
        RadioConfig {
            position: (x, y),
            range_m: 18.0,
            bitrate: 250_000,
        }
    }
}

#[derive(Debug)]
struct Radio {
    cfg: RadioConfig,
    state: TrxState,
    /// When the current state was entered; a reception is delivered only if
    /// the receiver stayed in RX for the whole flight.
    state_since: SymbolTime,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct TxId(u64);

#[derive(Clone, Debug)]
pub struct Transmission {
    pub id: TxId,
    pub sender: usize,
    pub frame: Frame,
    pub start: SymbolTime,
    pub end: SymbolTime,
    finished: bool,
}

/// Outcome of one flight at one potential receiver.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub receiver: usize,
    pub corrupted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CcaResult {
    Idle,
    Busy,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PhyError {
    #[error("node {node} transceiver in {state:?}, operation requires {required:?}")]
    TrxState {
        node: usize,
        state: TrxState,
        required: TrxState,
    },
    #[error("node {node} already has a transmission in progress")]
    TxInProgress { node: usize },
}

pub struct Channel {
    radios: Vec<Radio>,
    flights: Vec<Transmission>,
    next_id: u64,
}

impl Channel {
    pub fn new(configs: Vec<RadioConfig>) -> Self {
        Channel {
            radios: configs
                .into_iter()
                .map(|cfg| Radio {
                    cfg,
                    state: TrxState::TrxOff,
                    state_since: SymbolTime::ZERO,
                })
                .collect(),
            flights: Vec::new(),
            next_id: 0,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.radios.len()
    }

    pub fn trx_state(&self, node: usize) -> TrxState {
        self.radios[node].state
    }

    pub fn set_position(&mut self, node: usize, x: f64, y: f64) {
        self.radios[node].cfg.position = (x, y);
    }

    fn distance(&self, a: usize, b: usize) -> f64 {
        let (ax, ay) = self.radios[a].cfg.position;
        let (bx, by) = self.radios[b].cfg.position;
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    /// Whether `listener` can hear `talker` at all.
    pub fn in_range(&self, listener: usize, talker: usize) -> bool {
        listener != talker && self.distance(listener, talker) <= self.radios[listener].cfg.range_m
    }

    /// PLME-SET-TRX-STATE: applies the mode, returning the prior state.
    /// Leaving RX_ON aborts any in-flight reception (enforced at delivery
    /// time via the state timestamp).
    pub fn set_trx(&mut self, now: SymbolTime, node: usize, mode: TrxState) -> TrxState {
        let radio = &mut self.radios[node];
        let prior = radio.state;
        if prior != mode {
            radio.state = mode;
            radio.state_since = now;
        }
        prior
    }

    /// PD-DATA.request: registers the frame on the channel. The caller is
    /// responsible for invoking [`finish_tx`](Self::finish_tx) at the
    /// returned end time.
    pub fn start_tx(
        &mut self,
        now: SymbolTime,
        sender: usize,
        frame: Frame,
    ) -> Result<(TxId, SymbolTime), PhyError> {
        let radio = &self.radios[sender];
        if radio.state != TrxState::TxOn {
            return Err(PhyError::TrxState {
                node: sender,
                state: radio.state,
                required: TrxState::TxOn,
            });
        }
        if self
            .flights
            .iter()
            .any(|t| !t.finished && t.sender == sender)
        {
            return Err(PhyError::TxInProgress { node: sender });
        }
        self.prune(now);
        let id = TxId(self.next_id);
        self.next_id += 1;
        let end = now + frame.air_symbols();
        self.flights.push(Transmission {
            id,
            sender,
            frame,
            start: now,
            end,
            finished: false,
        });
        Ok((id, end))
    }

    /// PLME-CCA.request: BUSY iff any audible transmission overlaps the
    /// 8-symbol window ending at the call time.
    pub fn cca(&self, now: SymbolTime, observer: usize) -> Result<CcaResult, PhyError> {
        let radio = &self.radios[observer];
        if radio.state != TrxState::RxOn {
            return Err(PhyError::TrxState {
                node: observer,
                state: radio.state,
                required: TrxState::RxOn,
            });
        }
        let win_start = now.saturating_sub(CCA_SYMBOLS);
        let busy = self.flights.iter().any(|t| {
            self.in_range(observer, t.sender) && t.start < now && t.end > win_start
        });
        Ok(if busy { CcaResult::Busy } else { CcaResult::Idle })
    }

    /// Completes a flight and computes per-receiver outcomes. A node counts
    /// as a receiver when it is in range, in RX_ON, and stayed there for the
    /// whole flight; its copy is corrupted when any other audible flight
    /// overlapped this one.
    pub fn finish_tx(&mut self, now: SymbolTime, id: TxId) -> (Transmission, Vec<Delivery>) {
        let idx = self
            .flights
            .iter()
            .position(|t| t.id == id)
            .expect("finish_tx: unknown transmission");
        assert_eq!(self.flights[idx].end, now, "finish_tx before end time");
        self.flights[idx].finished = true;
        let tx = self.flights[idx].clone();
        let mut deliveries = Vec::new();
        for (r, radio) in self.radios.iter().enumerate() {
            if r == tx.sender
                || radio.state != TrxState::RxOn
                || radio.state_since > tx.start
                || !self.in_range(r, tx.sender)
            {
                continue;
            }
            let corrupted = self.flights.iter().any(|u| {
                u.id != tx.id
                    && u.sender != r
                    && u.start < tx.end
                    && u.end > tx.start
                    && self.in_range(r, u.sender)
            });
            deliveries.push(Delivery {
                receiver: r,
                corrupted,
            });
        }
        (tx, deliveries)
    }

    fn prune(&mut self, now: SymbolTime) {
        self.flights
            .retain(|t| !t.finished || t.end + FLIGHT_RETENTION_SYMBOLS > now);
    }
}
