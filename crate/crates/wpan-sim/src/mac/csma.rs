//! Slotted CSMA/CA channel-access engine.
//!
//! The engine is a pure step machine: the caller supplies the CAP geometry,
//! a random-draw source and CCA outcomes, and receives back the next action
//! (perform a CCA at a boundary, transmit at a boundary, defer to the next
//! CAP, or give up). All boundaries are multiples of aUnitBackoffPeriod from
//! the CAP start. The engine records its decision trace, which conformance
//! tests compare against an independent flowchart interpreter.

use crate::engine::SymbolTime;
use crate::mac::consts::{
    A_MAX_BE, A_UNIT_BACKOFF_PERIOD as UBP, CCA_SYMBOLS, MAC_MAX_CSMA_BACKOFFS, MAC_MIN_BE,
    TURNAROUND_SYMBOLS,
};
use crate::mac::frame::ack_air_symbols;

/// One CAP interval. Backoff boundaries are `start + k * 20` symbols.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cap {
    pub start: SymbolTime,
    pub end: SymbolTime,
}

impl Cap {
    /// First backoff boundary at or after `t`.
    pub fn next_boundary(&self, t: SymbolTime) -> SymbolTime {
        if t <= self.start {
            return self.start;
        }
        let off = t.0 - self.start.0;
        self.start + off.div_ceil(UBP) * UBP
    }
}

/// What the caller must do next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsmaAction {
    /// Perform a CCA over the 8 symbols starting at this boundary.
    Cca { at: SymbolTime },
    /// Begin the transmission at this boundary.
    Transmit { at: SymbolTime },
    /// The remaining CAP cannot hold the full sequence; resume at the next
    /// superframe's CAP (state preserved, delay re-drawn).
    Defer,
    /// NB exceeded macMaxCSMABackoffs: channel access failure.
    Failure,
}

/// Decision-trace entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsmaStep {
    Draw { be: u8, delay: u64 },
    Defer,
    Cca { at: SymbolTime, busy: bool },
    Transmit { at: SymbolTime },
    Failure,
}

#[derive(Debug)]
pub struct CsmaEngine {
    nb: u8,
    cw: u8,
    be: u8,
    frame_symbols: u64,
    ack: bool,
    steps: Vec<CsmaStep>,
}

impl CsmaEngine {
    pub fn new(battery_life_extension: bool, frame_symbols: u64, ack: bool) -> Self {
        let be = if battery_life_extension {
            MAC_MIN_BE.min(2)
        } else {
            MAC_MIN_BE
        };
        CsmaEngine {
            nb: 0,
            cw: 2,
            be,
            frame_symbols,
            ack,
            steps: Vec::new(),
        }
    }

    /// (NB, CW, BE)
    pub fn state(&self) -> (u8, u8, u8) {
        (self.nb, self.cw, self.be)
    }

    pub fn steps(&self) -> &[CsmaStep] {
        &self.steps
    }

    /// Symbols from the first CCA boundary to the end of the sequence
    /// (two CCA periods, the frame, and the acknowledgment if requested).
    fn span_after_first_cca(&self) -> u64 {
        let ack_span = if self.ack {
            TURNAROUND_SYMBOLS + ack_air_symbols()
        } else {
            0
        };
        2 * UBP + self.frame_symbols + ack_span
    }

    /// Steps (a)+(b) of the algorithm: locate a boundary, draw the random
    /// delay, and check that the whole sequence fits in the remaining CAP.
    pub fn begin(
        &mut self,
        now: SymbolTime,
        cap: Cap,
        draw: &mut dyn FnMut(u64) -> u64,
    ) -> CsmaAction {
        self.cw = 2;
        let boundary = cap.next_boundary(now);
        let delay = draw((1u64 << self.be) - 1);
        self.steps.push(CsmaStep::Draw {
            be: self.be,
            delay,
        });
        let first_cca = boundary + delay * UBP;
        let completion = first_cca + self.span_after_first_cca();
        if completion > cap.end {
            self.steps.push(CsmaStep::Defer);
            return CsmaAction::Defer;
        }
        CsmaAction::Cca { at: first_cca }
    }

    /// Feed back the result of the CCA performed at `boundary`.
    pub fn on_cca(
        &mut self,
        boundary: SymbolTime,
        busy: bool,
        cap: Cap,
        draw: &mut dyn FnMut(u64) -> u64,
    ) -> CsmaAction {
        self.steps.push(CsmaStep::Cca {
            at: boundary,
            busy,
        });
        if busy {
            self.cw = 2;
            self.nb += 1;
            self.be = (self.be + 1).min(A_MAX_BE);
            if self.nb > MAC_MAX_CSMA_BACKOFFS {
                self.steps.push(CsmaStep::Failure);
                return CsmaAction::Failure;
            }
            // back to step (a); the CCA result was known 8 symbols into the
            // boundary period, so the next candidate boundary follows it
            return self.begin(boundary + CCA_SYMBOLS, cap, draw);
        }
        self.cw -= 1;
        if self.cw > 0 {
            CsmaAction::Cca { at: boundary + UBP }
        } else {
            let at = boundary + UBP;
            self.steps.push(CsmaStep::Transmit { at });
            CsmaAction::Transmit { at }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cap(start: u64, end: u64) -> Cap {
        Cap {
            start: SymbolTime(start),
            end: SymbolTime(end),
        }
    }

    #[test]
    fn battery_life_extension_caps_initial_be_at_two() {
        let eng = CsmaEngine::new(true, 100, true);
        assert_eq!(eng.state(), (0, 2, 2));
        let eng = CsmaEngine::new(false, 100, true);
        assert_eq!(eng.state(), (0, 2, 3));
    }

    #[test]
    fn idle_channel_two_ccas_then_transmit() {
        let mut eng = CsmaEngine::new(false, 100, false);
        let c = cap(0, 10_000);
        let mut draw = |_hi: u64| 2u64;
        let a = eng.begin(SymbolTime(0), c, &mut draw);
        assert_eq!(a, CsmaAction::Cca { at: SymbolTime(40) });
        assert_eq!(eng.state(), (0, 2, 3));
        let a = eng.on_cca(SymbolTime(40), false, c, &mut draw);
        assert_eq!(a, CsmaAction::Cca { at: SymbolTime(60) });
        assert_eq!(eng.state(), (0, 1, 3));
        let a = eng.on_cca(SymbolTime(60), false, c, &mut draw);
        assert_eq!(
            a,
            CsmaAction::Transmit {
                at: SymbolTime(80)
            }
        );
        assert_eq!(eng.state(), (0, 0, 3));
    }

    #[test]
    fn busy_six_times_fails_with_nb_six() {
        let mut eng = CsmaEngine::new(false, 100, false);
        let c = cap(0, 1_000_000);
        let mut draw = |_| 0u64;
        let mut action = eng.begin(SymbolTime(0), c, &mut draw);
        let mut busy_count = 0;
        loop {
            match action {
                CsmaAction::Cca { at } => {
                    busy_count += 1;
                    action = eng.on_cca(at, true, c, &mut draw);
                }
                CsmaAction::Failure => break,
                other => panic!("unexpected action {other:?}"),
            }
        }
        assert_eq!(busy_count, 6);
        let (nb, _, be) = eng.state();
        assert_eq!(nb, 6);
        assert_eq!(be, A_MAX_BE);
    }

    #[test]
    fn be_three_first_delay_in_zero_to_seven() {
        let mut eng = CsmaEngine::new(false, 100, false);
        let c = cap(0, 10_000);
        let mut seen_hi = None;
        let mut draw = |hi| {
            seen_hi = Some(hi);
            0
        };
        eng.begin(SymbolTime(0), c, &mut draw);
        assert_eq!(seen_hi, Some(7));
    }

    #[test]
    fn sequence_that_cannot_fit_defers() {
        // frame 166 + ack 22(=12+10) + 40 = 228 symbols after the first CCA
        let mut eng = CsmaEngine::new(false, 166, true);
        let c = cap(0, 200);
        let mut draw = |_| 0u64;
        assert_eq!(eng.begin(SymbolTime(0), c, &mut draw), CsmaAction::Defer);
        // same sequence fits once the CAP is long enough
        let c2 = cap(0, 228);
        let mut eng2 = CsmaEngine::new(false, 166, true);
        assert_eq!(
            eng2.begin(SymbolTime(0), c2, &mut draw),
            CsmaAction::Cca { at: SymbolTime(0) }
        );
    }

    #[test]
    fn boundary_location_rounds_up() {
        let c = cap(100, 1000);
        assert_eq!(c.next_boundary(SymbolTime(50)), SymbolTime(100));
        assert_eq!(c.next_boundary(SymbolTime(100)), SymbolTime(100));
        assert_eq!(c.next_boundary(SymbolTime(101)), SymbolTime(120));
        assert_eq!(c.next_boundary(SymbolTime(120)), SymbolTime(120));
    }

    proptest! {
        // CW only moves 2 -> 1 -> 0 on idle and resets to 2 on busy; NB never
        // decreases; every CCA and transmit lands on a backoff boundary.
        #[test]
        fn state_trajectory_and_alignment(
            cca_script in proptest::collection::vec(any::<bool>(), 1..40),
            delays in proptest::collection::vec(0u64..32, 1..40),
            frame_symbols in 20u64..300,
            ack in any::<bool>(),
        ) {
            let c = cap(960, 960 + 100_000);
            let mut eng = CsmaEngine::new(false, frame_symbols, ack);
            let mut di = 0usize;
            let mut draw = move |hi: u64| {
                let v = delays[di % delays.len()].min(hi);
                di += 1;
                v
            };
            let mut action = eng.begin(SymbolTime(960), c, &mut draw);
            let mut prev_nb = 0u8;
            for &busy in &cca_script {
                match action {
                    CsmaAction::Cca { at } => {
                        prop_assert_eq!((at.0 - c.start.0) % 20, 0);
                        action = eng.on_cca(at, busy, c, &mut draw);
                        let (nb, cw, be) = eng.state();
                        prop_assert!(nb >= prev_nb);
                        prop_assert!(cw <= 2);
                        prop_assert!(be <= A_MAX_BE);
                        prev_nb = nb;
                    }
                    CsmaAction::Transmit { at } => {
                        prop_assert_eq!((at.0 - c.start.0) % 20, 0);
                        break;
                    }
                    CsmaAction::Failure => break,
                    CsmaAction::Defer => break,
                }
            }
        }
    }
}
