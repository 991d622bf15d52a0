//! One complete simulation instance: the PAN coordinator, the devices, the
//! radio channel and the event loop that drives them.
//!
//! Node 0 is the coordinator at the circle center; devices are nodes
//! 1..=n_devices placed equally spaced on the circle. Everything runs
//! single-threaded inside one instance; instances are self-contained and a
//! parameter sweep may run several in parallel.

use std::collections::VecDeque;

use crate::audit::{Audit, BeaconAudit, TxAudit, TxPath};
use crate::engine::{EventHandle, EventQueue, RngStreams, SymbolTime};
use crate::mac::consts::{
    A_GTS_DESC_PERSISTENCE_TIME, A_MAX_LOST_BEACONS, MAC_ACK_WAIT_SYMBOLS, MAC_MAX_FRAME_RETRIES,
    RESPONSE_WAIT_SYMBOLS, TURNAROUND_SYMBOLS,
};
use crate::mac::csma::{Cap, CsmaAction, CsmaEngine};
use crate::mac::frame::{
    ack_air_symbols, BeaconPayload, Frame, FrameKind, GtsDescriptor, GtsDirection, BROADCAST,
};
use crate::mac::gts::{GtsDenial, GtsTable};
use crate::mac::SuperframeConfig;
use crate::metrics::{Counters, DropCause, MetricsReport, NodeCounters};
use crate::phy::{CcaResult, Channel, RadioConfig, Transmission, TrxState, TxId};
use crate::trace::TraceBuf;

/// Slack after the expected beacon end before a device declares it missed.
const BEACON_GUARD_SYMBOLS: u64 = 64;

#[derive(Clone, Debug)]
pub struct RunParams {
    pub cfg: SuperframeConfig,
    pub n_devices: usize,
    pub radius_m: f64,
    pub range_m: f64,
    /// The first `n_gts_devices` devices request a GTS after associating.
    pub n_gts_devices: usize,
    pub gts_length: u8,
    pub gts_direction: GtsDirection,
    pub cbr_payload_bytes: u64,
    pub cbr_interval: SymbolTime,
    pub cbr_start_offset: SymbolTime,
    pub queue_capacity: usize,
    pub sim_time: SymbolTime,
    pub seed: u64,
    pub assoc_stagger: SymbolTime,
    pub trace: bool,
}

impl RunParams {
    pub fn new(cfg: SuperframeConfig, n_devices: usize, seed: u64) -> Self {
        RunParams {
            cfg,
            n_devices,
            radius_m: 10.0,
            range_m: 18.0,
            n_gts_devices: 0,
            gts_length: 1,
            gts_direction: GtsDirection::DeviceTransmit,
            cbr_payload_bytes: 70,
            cbr_interval: SymbolTime::from_secs(0.2),
            // traffic begins after the association stagger window
            cbr_start_offset: SymbolTime::from_secs(2.0 * n_devices as f64 + 1.0),
            queue_capacity: 50,
            sim_time: SymbolTime::from_secs(60.0),
            seed,
            assoc_stagger: SymbolTime::from_secs(2.0),
            trace: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub counters: Counters,
    /// Per-device packet accounting, index = device node id - 1.
    pub node_counters: Vec<NodeCounters>,
    pub audit: Audit,
    pub trace: String,
    pub cfg: SuperframeConfig,
    pub n_devices: usize,
    pub seed: u64,
    pub sim_time_s: f64,
}

impl RunOutcome {
    pub fn report(&self) -> MetricsReport {
        MetricsReport::from_counters(
            &self.counters,
            &self.cfg,
            self.n_devices,
            self.seed,
            self.sim_time_s,
        )
    }
}

#[derive(Clone, Debug)]
enum Ev {
    BeaconTx,
    TxEnd { id: TxId, tag: TxTag },
    SendAck { node: usize, dst: u16, seq: u8 },
    AckTimeout { node: usize },
    StartScan { dev: usize },
    ScanTimeout { dev: usize },
    BeaconTimeout { dev: usize },
    CcaDone { dev: usize },
    CsmaTxStart { dev: usize, at: SymbolTime },
    ResponseWaitDone { dev: usize },
    AssocResponseTimeout { dev: usize },
    CbrTick { dev: usize },
    GtsStart { dev: usize },
    GtsNext { dev: usize },
    CoordSend,
    CoordGts { dev: u16 },
    CoordGtsNext { dev: u16 },
    Sleep { node: usize },
    Wake { node: usize },
    Inject { node: usize, frame: Frame },
}

#[derive(Clone, Copy, Debug)]
enum TxTag {
    Beacon,
    Ack { sender: usize },
    DevCsma { dev: usize },
    DevGts { dev: usize },
    CoordDirect,
    CoordCfp { dev: u16 },
    Inject { node: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Purpose {
    AssocRequest,
    DataRequest,
    GtsRequest,
    Data,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Idle,
    Scanning,
    AssocSendingRequest,
    AssocWaitingResponseTime,
    AssocSendingDataRequest,
    AssocAwaitResponse,
    Associated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum GtsPhase {
    NotRequested,
    Requesting,
    AwaitDescriptor { beacons_left: u8 },
    Confirmed(GtsDescriptor),
    Failed,
}

/// Superframe timing learned from the last beacon.
#[derive(Clone, Copy, Debug)]
struct SfInfo {
    beacon_start: SymbolTime,
    beacon_air: u64,
    final_cap_slot: u8,
}

impl SfInfo {
    fn cap(&self, cfg: &SuperframeConfig) -> Cap {
        Cap {
            start: self.beacon_start + self.beacon_air,
            end: self.beacon_start + (self.final_cap_slot as u64 + 1) * cfg.slot_symbols(),
        }
    }
}

struct CsmaRun {
    eng: CsmaEngine,
    frame: Frame,
    purpose: Purpose,
    retries: u8,
    waiting_cap: bool,
    cca_boundary: SymbolTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum AckCtx {
    Csma,
    Gts,
}

struct AckWait {
    seq: u8,
    handle: EventHandle,
    ctx: AckCtx,
}

struct GtsSend {
    frame: Frame,
    retries: u8,
}

struct Dev {
    node: usize,
    addr: u16,
    is_gts_device: bool,
    phase: Phase,
    sf: Option<SfInfo>,
    synced: bool,
    missed: u8,
    beacon_timeout: Option<EventHandle>,
    scan_timeout: Option<EventHandle>,
    response_wait: Option<EventHandle>,
    assoc_resp_timeout: Option<EventHandle>,
    seq: u8,
    csma: Option<CsmaRun>,
    ack_wait: Option<AckWait>,
    gts: GtsPhase,
    gts_send: Option<GtsSend>,
    gts_window_end: SymbolTime,
    gts_announced: bool,
    cap_fallback: bool,
    queue: VecDeque<u64>,
}

impl Dev {
    fn new(node: usize, is_gts_device: bool) -> Self {
        Dev {
            node,
            addr: node as u16,
            is_gts_device,
            phase: Phase::Idle,
            sf: None,
            synced: false,
            missed: 0,
            beacon_timeout: None,
            scan_timeout: None,
            response_wait: None,
            assoc_resp_timeout: None,
            seq: 0,
            csma: None,
            ack_wait: None,
            gts: GtsPhase::NotRequested,
            gts_send: None,
            gts_window_end: SymbolTime::ZERO,
            gts_announced: false,
            cap_fallback: false,
            queue: VecDeque::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CoordAckCtx {
    Direct,
    Cfp { dev: u16 },
}

struct DirectSend {
    frame: Frame,
    retries: u8,
}

struct Coord {
    gts: GtsTable,
    pending_assoc: Vec<u16>,
    associated: Vec<u16>,
    seq: u8,
    outbox: VecDeque<Frame>,
    outbox_wait_next_cap: bool,
    direct: Option<DirectSend>,
    ack_wait: Option<(u8, EventHandle, CoordAckCtx)>,
    /// Pending CFP downlink payloads per destination device address.
    cfp_queues: Vec<(u16, VecDeque<u64>)>,
    cfp_send: Option<GtsSend>,
    cfp_window_end: SymbolTime,
    sf: SfInfo,
}

pub struct World {
    q: EventQueue<Ev>,
    rng: RngStreams,
    ch: Channel,
    p: RunParams,
    coord: Coord,
    devs: Vec<Dev>,
    counters: Counters,
    node_counters: Vec<NodeCounters>,
    trace: TraceBuf,
    audit: Audit,
}

impl World {
    pub fn new(p: RunParams) -> Self {
        let mut radios = Vec::with_capacity(p.n_devices + 1);
        let mut coord_cfg = RadioConfig::at(0.0, 0.0);
        coord_cfg.range_m = p.range_m;
        radios.push(coord_cfg);
        for k in 1..=p.n_devices {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / p.n_devices as f64;
            let mut cfg = RadioConfig::at(p.radius_m * angle.cos(), p.radius_m * angle.sin());
            cfg.range_m = p.range_m;
            radios.push(cfg);
        }
        let mut q = EventQueue::new();
        let mut rng = RngStreams::new(p.seed);
        q.schedule(SymbolTime::ZERO, Ev::BeaconTx);
        let mut devs = Vec::with_capacity(p.n_devices);
        for k in 1..=p.n_devices {
            devs.push(Dev::new(k, k <= p.n_gts_devices));
            q.schedule(
                SymbolTime(p.assoc_stagger.0 * k as u64),
                Ev::StartScan { dev: k },
            );
            // open-loop CBR: ticks run from a random per-device phase
            // regardless of MAC state; frames drain once associated
            if p.cbr_start_offset <= p.sim_time && p.cbr_interval.0 > 0 {
                let phase = rng.uniform_int(0, p.cbr_interval.0 - 1, k);
                q.schedule(p.cbr_start_offset + phase, Ev::CbrTick { dev: k });
            }
        }
        World {
            q,
            rng,
            ch: Channel::new(radios),
            coord: Coord {
                gts: GtsTable::new(),
                pending_assoc: Vec::new(),
                associated: Vec::new(),
                seq: 0,
                outbox: VecDeque::new(),
                outbox_wait_next_cap: false,
                direct: None,
                ack_wait: None,
                cfp_queues: Vec::new(),
                cfp_send: None,
                cfp_window_end: SymbolTime::ZERO,
                sf: SfInfo {
                    beacon_start: SymbolTime::ZERO,
                    beacon_air: Frame::beacon_air_symbols(0),
                    final_cap_slot: 15,
                },
            },
            node_counters: vec![NodeCounters::default(); p.n_devices],
            devs,
            counters: Counters::default(),
            trace: TraceBuf::new(p.trace),
            audit: Audit::default(),
            p,
        }
    }

    /// Test scaffolding: moves a node before the run starts.
    pub fn set_position(&mut self, node: usize, x: f64, y: f64) {
        self.ch.set_position(node, x, y);
    }

    /// Test scaffolding: forces a raw transmission on the channel at `at`,
    /// outside all MAC rules. Not recorded in the structural audit.
    pub fn inject_transmission(&mut self, at: SymbolTime, node: usize, frame: Frame) {
        self.q.schedule(at, Ev::Inject { node, frame });
    }

    pub fn run(mut self) -> RunOutcome {
        let end = self.p.sim_time;
        while let Some((_, ev)) = self.q.pop_due(end) {
            self.handle(ev);
        }
        self.q.finish_at(end);
        for (i, dev) in self.devs.iter().enumerate() {
            let nc = &mut self.node_counters[i];
            nc.queued_at_end = dev.queue.len() as u64;
            let mut in_flight = 0;
            if let Some(run) = &dev.csma {
                if run.purpose == Purpose::Data {
                    in_flight += 1;
                }
            }
            if dev.gts_send.is_some() {
                in_flight += 1;
            }
            nc.in_flight_at_end = in_flight;
        }
        RunOutcome {
            counters: self.counters,
            node_counters: self.node_counters,
            audit: self.audit,
            trace: self.trace.into_contents(),
            cfg: self.p.cfg,
            n_devices: self.p.n_devices,
            seed: self.p.seed,
            sim_time_s: self.p.sim_time.as_secs(),
        }
    }

    /// Queues a downlink payload for delivery inside a device-receive GTS.
    pub fn queue_coordinator_data(&mut self, dev_addr: u16, payload_bytes: u64) {
        if let Some((_, q)) = self
            .coord
            .cfp_queues
            .iter_mut()
            .find(|(a, _)| *a == dev_addr)
        {
            q.push_back(payload_bytes);
        } else {
            self.coord
                .cfp_queues
                .push((dev_addr, VecDeque::from([payload_bytes])));
        }
    }

    fn now(&self) -> SymbolTime {
        self.q.now()
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::BeaconTx => self.beacon_tx(),
            Ev::TxEnd { id, tag } => self.tx_end(id, tag),
            Ev::SendAck { node, dst, seq } => self.send_ack(node, dst, seq),
            Ev::AckTimeout { node } => self.ack_timeout(node),
            Ev::StartScan { dev } => self.start_scan(dev),
            Ev::ScanTimeout { dev } => self.scan_timeout(dev),
            Ev::BeaconTimeout { dev } => self.beacon_timeout(dev),
            Ev::CcaDone { dev } => self.cca_done(dev),
            Ev::CsmaTxStart { dev, at } => self.csma_tx_start(dev, at),
            Ev::ResponseWaitDone { dev } => self.response_wait_done(dev),
            Ev::AssocResponseTimeout { dev } => self.assoc_response_timeout(dev),
            Ev::CbrTick { dev } => self.cbr_tick(dev),
            Ev::GtsStart { dev } => self.gts_start(dev),
            Ev::GtsNext { dev } => self.gts_try_send(dev),
            Ev::CoordSend => self.coord_send(),
            Ev::CoordGts { dev } => self.coord_gts_start(dev),
            Ev::CoordGtsNext { dev } => self.coord_gts_try_send(dev),
            Ev::Sleep { node } => self.sleep(node),
            Ev::Wake { node } => self.wake(node),
            Ev::Inject { node, frame } => self.inject(node, frame),
        }
    }

    // ------------------------------------------------------------------
    // coordinator
    // ------------------------------------------------------------------

    fn beacon_tx(&mut self) {
        let now = self.now();
        let cfg = self.p.cfg;
        let payload = BeaconPayload {
            bo: cfg.bo,
            so: cfg.so,
            final_cap_slot: self.coord.gts.final_cap_slot(),
            gts_permit: true,
            gts_list: self.coord.gts.descriptors().to_vec(),
            pending: Vec::new(),
        };
        let frame = Frame::beacon(0, payload);
        let air = frame.air_symbols();
        let slot = cfg.slot_symbols();
        let gts_intervals: Vec<(SymbolTime, SymbolTime, u16, GtsDirection)> = self
            .coord
            .gts
            .descriptors()
            .iter()
            .map(|d| {
                (
                    now + d.start_slot as u64 * slot,
                    now + d.end_slot_exclusive() as u64 * slot,
                    d.dev_addr,
                    d.direction,
                )
            })
            .collect();
        self.coord.sf = SfInfo {
            beacon_start: now,
            beacon_air: air,
            final_cap_slot: self.coord.gts.final_cap_slot(),
        };
        self.audit.beacons.push(BeaconAudit {
            start: now,
            air_symbols: air,
            final_cap_slot: self.coord.gts.final_cap_slot(),
            n_gts: self.coord.gts.len(),
            gts_intervals: gts_intervals.clone(),
        });
        self.ch.set_trx(now, 0, TrxState::TxOn);
        let (id, end) = self
            .ch
            .start_tx(now, 0, frame)
            .expect("coordinator beacon transmission");
        self.audit.txs.push(TxAudit {
            node: 0,
            start: now,
            end,
            path: TxPath::BeaconSlot,
        });
        self.q.schedule(end, Ev::TxEnd { id, tag: TxTag::Beacon });
        self.q
            .schedule(now + cfg.bi_symbols(), Ev::BeaconTx);
        if cfg.has_inactive_portion() {
            self.q.schedule(now + cfg.sd_symbols(), Ev::Sleep { node: 0 });
        }
        // CFP downlink sessions for device-receive GTSs with pending data
        for (ws, _we, dev, dir) in gts_intervals {
            if dir == GtsDirection::DeviceReceive
                && self
                    .coord
                    .cfp_queues
                    .iter()
                    .any(|(a, q)| *a == dev && !q.is_empty())
            {
                self.q.schedule(ws, Ev::CoordGts { dev });
            }
        }
    }

    fn coord_send(&mut self) {
        let now = self.now();
        if self.coord.ack_wait.is_some() {
            return;
        }
        if self.coord.direct.is_none() {
            let Some(frame) = self.coord.outbox.pop_front() else {
                return;
            };
            self.coord.direct = Some(DirectSend { frame, retries: 0 });
        }
        if self.ch.trx_state(0) == TrxState::TxOn {
            self.q.schedule(now + 20, Ev::CoordSend);
            return;
        }
        let frame = self.coord.direct.as_ref().unwrap().frame.clone();
        let cap = self.coord.sf.cap(&self.p.cfg);
        let completion = now + frame.air_symbols() + TURNAROUND_SYMBOLS + ack_air_symbols();
        if now < cap.start || completion > cap.end {
            // wait for the next superframe's CAP
            self.coord.outbox_wait_next_cap = true;
            return;
        }
        self.ch.set_trx(now, 0, TrxState::TxOn);
        let (id, end) = self
            .ch
            .start_tx(now, 0, frame.clone())
            .expect("coordinator direct transmission");
        self.trace(0, format_args!(
            "sending {} command to node {} ...",
            frame.kind.name(),
            frame.dst
        ));
        self.audit.txs.push(TxAudit {
            node: 0,
            start: now,
            end,
            path: TxPath::CapDirect,
        });
        self.q
            .schedule(end, Ev::TxEnd { id, tag: TxTag::CoordDirect });
    }

    fn coord_gts_start(&mut self, dev: u16) {
        // window boundaries come from the coordinator's own beacon schedule
        let slot = self.p.cfg.slot_symbols();
        let Some(desc) = self.coord.gts.for_device(dev) else {
            return;
        };
        self.coord.cfp_window_end =
            self.coord.sf.beacon_start + desc.end_slot_exclusive() as u64 * slot;
        self.coord_gts_try_send(dev);
    }

    fn coord_gts_try_send(&mut self, dev: u16) {
        let now = self.now();
        if self.coord.ack_wait.is_some() {
            return;
        }
        if self.coord.cfp_send.is_none() {
            let Some((_, q)) = self
                .coord
                .cfp_queues
                .iter_mut()
                .find(|(a, _)| *a == dev)
            else {
                return;
            };
            let Some(payload) = q.pop_front() else {
                return;
            };
            self.coord.seq = self.coord.seq.wrapping_add(1);
            let frame = Frame::data(0, dev, self.coord.seq, payload);
            self.coord.cfp_send = Some(GtsSend { frame, retries: 0 });
        }
        let frame = self.coord.cfp_send.as_ref().unwrap().frame.clone();
        let completion = now + frame.air_symbols() + TURNAROUND_SYMBOLS + ack_air_symbols();
        if completion > self.coord.cfp_window_end {
            return; // held until the next superframe's GTS
        }
        self.ch.set_trx(now, 0, TrxState::TxOn);
        let (id, end) = self
            .ch
            .start_tx(now, 0, frame.clone())
            .expect("coordinator CFP transmission");
        self.counters.sent_data_frames += 1;
        self.trace(0, format_args!(
            "sending data frame seq={} bytes={} (gts downlink)",
            frame.seq, frame.payload_len
        ));
        self.audit.txs.push(TxAudit {
            node: 0,
            start: now,
            end,
            path: TxPath::Cfp,
        });
        self.q
            .schedule(end, Ev::TxEnd { id, tag: TxTag::CoordCfp { dev } });
    }

    fn coord_on_frame(&mut self, tx: &Transmission) {
        let now = self.now();
        let frame = &tx.frame;
        match &frame.kind {
            FrameKind::Data => {
                self.counters.received_data_frames += 1;
                self.counters.received_data_bytes += frame.payload_len;
                self.trace(0, format_args!(
                    "data frame received from node {} seq={} bytes={}",
                    frame.src, frame.seq, frame.payload_len
                ));
                if frame.ack_request {
                    self.schedule_ack(0, frame.src, frame.seq);
                }
            }
            FrameKind::AssocRequest => {
                self.schedule_ack(0, frame.src, frame.seq);
                if !self.coord.pending_assoc.contains(&frame.src) {
                    self.coord.pending_assoc.push(frame.src);
                }
                self.trace(0, format_args!(
                    "association request command received from node {}",
                    frame.src
                ));
            }
            FrameKind::DataRequest => {
                self.schedule_ack(0, frame.src, frame.seq);
                if let Some(i) = self.coord.pending_assoc.iter().position(|&a| a == frame.src) {
                    self.coord.pending_assoc.remove(i);
                    if !self.coord.associated.contains(&frame.src) {
                        self.coord.associated.push(frame.src);
                    }
                    self.coord.seq = self.coord.seq.wrapping_add(1);
                    let resp = Frame::assoc_response(0, frame.src, self.coord.seq);
                    self.coord.outbox.push_back(resp);
                    // the response follows the data-request ack directly,
                    // without CSMA: ack ends 22 symbols after this frame
                    self.q.schedule(
                        now + TURNAROUND_SYMBOLS + ack_air_symbols() + TURNAROUND_SYMBOLS,
                        Ev::CoordSend,
                    );
                }
            }
            FrameKind::GtsRequest {
                length,
                direction,
                deallocate,
            } => {
                self.schedule_ack(0, frame.src, frame.seq);
                if *deallocate {
                    let removed = self.coord.gts.deallocate(frame.src);
                    self.trace(0, format_args!(
                        "gts deallocation request from node {} ({})",
                        frame.src,
                        if removed { "removed" } else { "no allocation" }
                    ));
                } else {
                    match self.coord.gts.allocate(&self.p.cfg, frame.src, *length, *direction) {
                        Ok(d) => {
                            self.trace(0, format_args!(
                                "gts request received: devAddr:{} length:{} slotStart:{} FinCAP:{}",
                                d.dev_addr,
                                d.length,
                                d.start_slot,
                                self.coord.gts.final_cap_slot()
                            ));
                        }
                        Err(denial) => {
                            self.trace(0, format_args!(
                                "gts request denied for node {} ({})",
                                frame.src,
                                match denial {
                                    GtsDenial::TableFull => "gts table full",
                                    GtsDenial::CapTooShort => "cap length floor",
                                }
                            ));
                        }
                    }
                }
            }
            FrameKind::Ack => {
                if let Some((seq, handle, ctx)) = self.coord.ack_wait.take() {
                    if seq == frame.seq {
                        self.q.cancel(handle);
                        match ctx {
                            CoordAckCtx::Direct => {
                                self.coord.direct = None;
                                if !self.coord.outbox.is_empty() {
                                    self.q.schedule(now + TURNAROUND_SYMBOLS, Ev::CoordSend);
                                }
                            }
                            CoordAckCtx::Cfp { dev } => {
                                self.coord.cfp_send = None;
                                self.q.schedule(
                                    now + TURNAROUND_SYMBOLS,
                                    Ev::CoordGtsNext { dev },
                                );
                            }
                        }
                    } else {
                        self.coord.ack_wait = Some((seq, handle, ctx));
                    }
                }
            }
            _ => {}
        }
    }

    // ------------------------------------------------------------------
    // shared PHY plumbing
    // ------------------------------------------------------------------

    fn schedule_ack(&mut self, node: usize, dst: u16, seq: u8) {
        let now = self.now();
        self.q.schedule(
            now + TURNAROUND_SYMBOLS,
            Ev::SendAck { node, dst, seq },
        );
    }

    fn send_ack(&mut self, node: usize, dst: u16, seq: u8) {
        let now = self.now();
        if self.ch.trx_state(node) == TrxState::TxOn {
            // mid-transmission; retry shortly (should not happen in practice)
            self.q.schedule(now + 2, Ev::SendAck { node, dst, seq });
            return;
        }
        self.ch.set_trx(now, node, TrxState::TxOn);
        let frame = Frame::ack(node as u16, dst, seq);
        let (id, end) = self
            .ch
            .start_tx(now, node, frame)
            .expect("ack transmission");
        self.audit.txs.push(TxAudit {
            node,
            start: now,
            end,
            path: TxPath::CapDirect,
        });
        self.q
            .schedule(end, Ev::TxEnd { id, tag: TxTag::Ack { sender: node } });
    }

    fn tx_end(&mut self, id: TxId, tag: TxTag) {
        let now = self.now();
        let (tx, deliveries) = self.ch.finish_tx(now, id);

        // restore the sender's transceiver and arm ack timers
        match tag {
            TxTag::Beacon => {
                self.ch.set_trx(now, 0, TrxState::RxOn);
                self.trace(0, format_args!(
                    "beacon transmission successful [channel:11] [PAN_ID:0] [CoordAddr:0]"
                ));
                if self.coord.outbox_wait_next_cap {
                    self.coord.outbox_wait_next_cap = false;
                    self.q.schedule(now, Ev::CoordSend);
                }
            }
            TxTag::Ack { sender } => {
                self.ch.set_trx(now, sender, TrxState::RxOn);
            }
            TxTag::DevCsma { dev } => {
                self.ch.set_trx(now, dev, TrxState::RxOn);
                if tx.frame.ack_request && self.devs[dev - 1].csma.is_some() {
                    let handle = self
                        .q
                        .schedule(now + MAC_ACK_WAIT_SYMBOLS, Ev::AckTimeout { node: dev });
                    self.devs[dev - 1].ack_wait = Some(AckWait {
                        seq: tx.frame.seq,
                        handle,
                        ctx: AckCtx::Csma,
                    });
                }
            }
            TxTag::DevGts { dev } => {
                self.ch.set_trx(now, dev, TrxState::RxOn);
                if self.devs[dev - 1].gts_send.is_some() {
                    let handle = self
                        .q
                        .schedule(now + MAC_ACK_WAIT_SYMBOLS, Ev::AckTimeout { node: dev });
                    self.devs[dev - 1].ack_wait = Some(AckWait {
                        seq: tx.frame.seq,
                        handle,
                        ctx: AckCtx::Gts,
                    });
                }
            }
            TxTag::CoordDirect => {
                self.ch.set_trx(now, 0, TrxState::RxOn);
                if tx.frame.ack_request && self.coord.direct.is_some() {
                    let handle = self
                        .q
                        .schedule(now + MAC_ACK_WAIT_SYMBOLS, Ev::AckTimeout { node: 0 });
                    self.coord.ack_wait = Some((tx.frame.seq, handle, CoordAckCtx::Direct));
                }
            }
            TxTag::CoordCfp { dev } => {
                self.ch.set_trx(now, 0, TrxState::RxOn);
                if self.coord.cfp_send.is_some() {
                    let handle = self
                        .q
                        .schedule(now + MAC_ACK_WAIT_SYMBOLS, Ev::AckTimeout { node: 0 });
                    self.coord.ack_wait = Some((tx.frame.seq, handle, CoordAckCtx::Cfp { dev }));
                }
            }
            TxTag::Inject { node } => {
                self.ch.set_trx(now, node, TrxState::TrxOff);
            }
        }

        // collision accounting at intended destinations
        if tx.frame.dst == BROADCAST {
            if deliveries.iter().any(|d| d.corrupted) {
                let cause = if tx.frame.is_data() {
                    DropCause::CollisionData
                } else {
                    DropCause::CollisionOther
                };
                self.counters.count_drop(cause);
                let r = deliveries.iter().find(|d| d.corrupted).unwrap().receiver;
                self.trace(r, format_args!(
                    "collision dropped {} frame from node {}",
                    tx.frame.kind.name(),
                    tx.frame.src
                ));
                self.audit.collisions.push(now);
            }
        } else if let Some(d) = deliveries
            .iter()
            .find(|d| d.receiver as u16 == tx.frame.dst)
        {
            if d.corrupted {
                let cause = if tx.frame.is_data() {
                    DropCause::CollisionData
                } else {
                    DropCause::CollisionOther
                };
                self.counters.count_drop(cause);
                self.trace(d.receiver, format_args!(
                    "collision dropped {} frame from node {}",
                    tx.frame.kind.name(),
                    tx.frame.src
                ));
                self.audit.collisions.push(now);
            }
        }

        // route intact deliveries to addressed receivers
        for d in &deliveries {
            if d.corrupted {
                continue;
            }
            if tx.frame.dst != BROADCAST && tx.frame.dst != d.receiver as u16 {
                continue;
            }
            if d.receiver == 0 {
                self.coord_on_frame(&tx);
            } else {
                self.dev_on_frame(d.receiver, &tx);
            }
        }
    }

    fn sleep(&mut self, node: usize) {
        let now = self.now();
        if node == 0 {
            self.ch.set_trx(now, 0, TrxState::TrxOff);
            return;
        }
        let dev = &self.devs[node - 1];
        if dev.synced && dev.phase != Phase::Scanning {
            self.ch.set_trx(now, node, TrxState::TrxOff);
        }
    }

    fn wake(&mut self, node: usize) {
        let now = self.now();
        if self.ch.trx_state(node) == TrxState::TrxOff {
            self.ch.set_trx(now, node, TrxState::RxOn);
        }
    }

    fn inject(&mut self, node: usize, frame: Frame) {
        let now = self.now();
        self.ch.set_trx(now, node, TrxState::TxOn);
        let (id, end) = self
            .ch
            .start_tx(now, node, frame)
            .expect("injected transmission");
        self.q
            .schedule(end, Ev::TxEnd { id, tag: TxTag::Inject { node } });
    }

    // ------------------------------------------------------------------
    // device: association and synchronization
    // ------------------------------------------------------------------

    fn start_scan(&mut self, dev: usize) {
        let now = self.now();
        let bi = self.p.cfg.bi_symbols();
        self.ch.set_trx(now, dev, TrxState::RxOn);
        let d = &mut self.devs[dev - 1];
        d.phase = Phase::Scanning;
        let handle = self.q.schedule(now + 2 * bi + 960, Ev::ScanTimeout { dev });
        d.scan_timeout = Some(handle);
        self.trace(dev, format_args!("scanning channel 11"));
    }

    fn scan_timeout(&mut self, dev: usize) {
        let now = self.now();
        let bi = self.p.cfg.bi_symbols();
        let d = &mut self.devs[dev - 1];
        if d.phase != Phase::Scanning {
            return;
        }
        d.scan_timeout = None;
        d.phase = Phase::Idle;
        self.trace(dev, format_args!("association fails (coordinators not found)"));
        self.q.schedule(now + 2 * bi, Ev::StartScan { dev });
    }

    fn beacon_timeout(&mut self, dev: usize) {
        let now = self.now();
        let cfg = self.p.cfg;
        // missed a beacon: stop transmitting until resynchronized
        self.ch.set_trx(now, dev, TrxState::RxOn);
        let d = &mut self.devs[dev - 1];
        d.beacon_timeout = None;
        d.synced = false;
        d.missed += 1;
        if d.missed >= A_MAX_LOST_BEACONS {
            self.trace(dev, format_args!(
                "synchronization lost after {} missed beacons, re-associating",
                A_MAX_LOST_BEACONS
            ));
            self.teardown_device(dev);
            self.q.schedule(now, Ev::StartScan { dev });
            return;
        }
        // extrapolate the timeline and keep listening for the next beacon
        if let Some(sf) = &mut d.sf {
            sf.beacon_start += cfg.bi_symbols();
            let next = sf.beacon_start + cfg.bi_symbols() + sf.beacon_air + BEACON_GUARD_SYMBOLS;
            let next = next.max(now + 1);
            d.beacon_timeout = Some(self.q.schedule(next, Ev::BeaconTimeout { dev }));
        }
    }

    /// Drops all MAC state after orphaning; queued data packets survive,
    /// anything half-sent returns to the queue front.
    fn teardown_device(&mut self, dev: usize) {
        let d = &mut self.devs[dev - 1];
        d.phase = Phase::Idle;
        d.synced = false;
        d.missed = 0;
        d.sf = None;
        for h in [
            d.beacon_timeout.take(),
            d.scan_timeout.take(),
            d.response_wait.take(),
            d.assoc_resp_timeout.take(),
        ]
        .into_iter()
        .flatten()
        {
            self.q.cancel(h);
        }
        if let Some(w) = d.ack_wait.take() {
            self.q.cancel(w.handle);
        }
        if let Some(run) = d.csma.take() {
            if run.purpose == Purpose::Data {
                d.queue.push_front(run.frame.payload_len);
            }
        }
        if let Some(send) = d.gts_send.take() {
            d.queue.push_front(send.frame.payload_len);
        }
        d.gts = GtsPhase::NotRequested;
        d.gts_announced = false;
        d.cap_fallback = false;
    }

    fn dev_on_frame(&mut self, dev: usize, tx: &Transmission) {
        let now = self.now();
        let frame = &tx.frame;
        match &frame.kind {
            FrameKind::Beacon(payload) => {
                let payload = payload.clone();
                self.dev_on_beacon(dev, tx.start, tx.frame.air_symbols(), payload);
            }
            FrameKind::Ack => {
                let d = &mut self.devs[dev - 1];
                if let Some(w) = d.ack_wait.take() {
                    if w.seq == frame.seq {
                        self.q.cancel(w.handle);
                        match w.ctx {
                            AckCtx::Csma => self.csma_acked(dev),
                            AckCtx::Gts => self.gts_acked(dev),
                        }
                    } else {
                        d.ack_wait = Some(w);
                    }
                }
            }
            FrameKind::AssocResponse => {
                self.schedule_ack(dev, frame.src, frame.seq);
                let d = &mut self.devs[dev - 1];
                if d.phase == Phase::AssocAwaitResponse {
                    if let Some(h) = d.assoc_resp_timeout.take() {
                        self.q.cancel(h);
                    }
                    d.phase = Phase::Associated;
                    self.trace(dev, format_args!("association response command received"));
                    self.trace(dev, format_args!(
                        "association successful (beacon enabled) [channel:11] [PAN_ID:0] [CoordAddr:0]"
                    ));
                    let d = &mut self.devs[dev - 1];
                    if d.is_gts_device && d.gts == GtsPhase::NotRequested {
                        d.gts = GtsPhase::Requesting;
                        let frame = Frame::gts_request(
                            d.addr,
                            0,
                            next_seq(d),
                            self.p.gts_length,
                            self.p.gts_direction,
                            false,
                        );
                        self.submit_csma(dev, frame, Purpose::GtsRequest);
                    } else {
                        self.try_drain(dev);
                    }
                }
            }
            FrameKind::Data => {
                // CFP downlink
                self.counters.received_data_frames += 1;
                self.counters.received_data_bytes += frame.payload_len;
                self.trace(dev, format_args!(
                    "data frame received from node {} seq={} bytes={}",
                    frame.src, frame.seq, frame.payload_len
                ));
                if frame.ack_request {
                    self.schedule_ack(dev, frame.src, frame.seq);
                }
                let _ = now;
            }
            _ => {}
        }
    }

    fn dev_on_beacon(&mut self, dev: usize, start: SymbolTime, air: u64, payload: BeaconPayload) {
        let now = self.now();
        let cfg = self.p.cfg;
        {
            let d = &mut self.devs[dev - 1];
            if d.phase == Phase::Idle {
                return; // not yet scanning
            }
            d.sf = Some(SfInfo {
                beacon_start: start,
                beacon_air: air,
                final_cap_slot: payload.final_cap_slot,
            });
            d.synced = true;
            d.missed = 0;
            if let Some(h) = d.beacon_timeout.take() {
                self.q.cancel(h);
            }
            let timeout = start + cfg.bi_symbols() + air + BEACON_GUARD_SYMBOLS;
            d.beacon_timeout = Some(self.q.schedule(timeout, Ev::BeaconTimeout { dev }));
        }
        if cfg.has_inactive_portion() && self.devs[dev - 1].phase != Phase::Scanning {
            self.q.schedule(start + cfg.sd_symbols(), Ev::Sleep { node: dev });
            self.q.schedule(start + cfg.bi_symbols(), Ev::Wake { node: dev });
        }
        // a scanning device has found its coordinator
        if self.devs[dev - 1].phase == Phase::Scanning {
            let d = &mut self.devs[dev - 1];
            if let Some(h) = d.scan_timeout.take() {
                self.q.cancel(h);
            }
            d.phase = Phase::AssocSendingRequest;
            self.trace(dev, format_args!(
                "sending association request to [channel:11] [PAN_ID:0] [CoordAddr:0] ..."
            ));
            let frame = Frame::assoc_request(
                self.devs[dev - 1].addr,
                0,
                next_seq(&mut self.devs[dev - 1]),
            );
            self.submit_csma(dev, frame, Purpose::AssocRequest);
            return;
        }
        // GTS descriptor tracking
        let addr = self.devs[dev - 1].addr;
        let own = payload.gts_list.iter().copied().find(|g| g.dev_addr == addr);
        match self.devs[dev - 1].gts {
            GtsPhase::AwaitDescriptor { beacons_left } => {
                if let Some(desc) = own {
                    let d = &mut self.devs[dev - 1];
                    d.gts = GtsPhase::Confirmed(desc);
                    self.trace(dev, format_args!("gts confirm success received"));
                } else if beacons_left <= 1 {
                    let d = &mut self.devs[dev - 1];
                    d.gts = GtsPhase::Failed;
                    d.cap_fallback = true;
                    self.trace(dev, format_args!("gts fails (no descriptor in beacon)"));
                } else {
                    self.devs[dev - 1].gts = GtsPhase::AwaitDescriptor {
                        beacons_left: beacons_left - 1,
                    };
                }
            }
            GtsPhase::Confirmed(_) => {
                if let Some(desc) = own {
                    // slots may shift after another device deallocates
                    self.devs[dev - 1].gts = GtsPhase::Confirmed(desc);
                }
            }
            _ => {}
        }
        if let GtsPhase::Confirmed(desc) = self.devs[dev - 1].gts {
            if desc.direction == GtsDirection::DeviceTransmit {
                let ws = start + desc.start_slot as u64 * cfg.slot_symbols();
                self.q.schedule(ws.max(now), Ev::GtsStart { dev });
            }
        }
        // resume any channel access that deferred to this CAP
        if self.devs[dev - 1]
            .csma
            .as_ref()
            .is_some_and(|r| r.waiting_cap)
        {
            self.devs[dev - 1].csma.as_mut().unwrap().waiting_cap = false;
            self.csma_begin(dev);
        } else {
            self.try_drain(dev);
        }
    }

    fn response_wait_done(&mut self, dev: usize) {
        let d = &mut self.devs[dev - 1];
        d.response_wait = None;
        if d.phase != Phase::AssocWaitingResponseTime {
            return;
        }
        d.phase = Phase::AssocSendingDataRequest;
        let frame = Frame::data_request(d.addr, 0, next_seq(d));
        self.trace(dev, format_args!("sending data request command ..."));
        self.submit_csma(dev, frame, Purpose::DataRequest);
    }

    fn assoc_response_timeout(&mut self, dev: usize) {
        let now = self.now();
        let bi = self.p.cfg.bi_symbols();
        let d = &mut self.devs[dev - 1];
        d.assoc_resp_timeout = None;
        if d.phase != Phase::AssocAwaitResponse {
            return;
        }
        d.phase = Phase::Idle;
        self.trace(dev, format_args!("association fails (association response not received)"));
        self.q.schedule(now + bi, Ev::StartScan { dev });
    }

    fn association_failed(&mut self, dev: usize, reason: &str) {
        let now = self.now();
        let bi = self.p.cfg.bi_symbols();
        self.trace(dev, format_args!("association fails ({reason})"));
        let d = &mut self.devs[dev - 1];
        d.phase = Phase::Idle;
        self.q.schedule(now + bi, Ev::StartScan { dev });
    }

    // ------------------------------------------------------------------
    // device: CSMA/CA channel access
    // ------------------------------------------------------------------

    fn submit_csma(&mut self, dev: usize, frame: Frame, purpose: Purpose) {
        debug_assert!(self.devs[dev - 1].csma.is_none());
        let eng = CsmaEngine::new(
            self.p.cfg.battery_life_extension,
            frame.air_symbols(),
            frame.ack_request,
        );
        self.devs[dev - 1].csma = Some(CsmaRun {
            eng,
            frame,
            purpose,
            retries: 0,
            waiting_cap: false,
            cca_boundary: SymbolTime::ZERO,
        });
        self.csma_begin(dev);
    }

    fn csma_begin(&mut self, dev: usize) {
        let now = self.now();
        let cfg = self.p.cfg;
        let d = &mut self.devs[dev - 1];
        if !d.synced {
            if let Some(run) = &mut d.csma {
                run.waiting_cap = true;
            }
            return;
        }
        let cap = d.sf.as_ref().unwrap().cap(&cfg);
        let node = d.node;
        let rng = &mut self.rng;
        let run = d.csma.as_mut().unwrap();
        let mut draw = |hi: u64| rng.uniform_int(0, hi, node);
        let action = run.eng.begin(now, cap, &mut draw);
        self.csma_action(dev, action);
    }

    fn csma_action(&mut self, dev: usize, action: CsmaAction) {
        match action {
            CsmaAction::Cca { at } => {
                let d = &mut self.devs[dev - 1];
                d.csma.as_mut().unwrap().cca_boundary = at;
                self.q.schedule(at + 8, Ev::CcaDone { dev });
            }
            CsmaAction::Defer => {
                self.devs[dev - 1].csma.as_mut().unwrap().waiting_cap = true;
            }
            CsmaAction::Transmit { at } => {
                self.q.schedule(at, Ev::CsmaTxStart { dev, at });
            }
            CsmaAction::Failure => self.csma_failed(dev, true),
        }
    }

    fn cca_done(&mut self, dev: usize) {
        let now = self.now();
        let cfg = self.p.cfg;
        let d = &mut self.devs[dev - 1];
        let Some(run) = &mut d.csma else {
            return; // torn down since scheduling
        };
        if run.waiting_cap || run.cca_boundary + 8 != now {
            return;
        }
        let boundary = run.cca_boundary;
        // a radio that is mid-transmission (own ack) or off cannot assess
        // the channel; count the attempt as busy and back off
        let busy = !matches!(self.ch.cca(now, dev), Ok(CcaResult::Idle));
        self.audit.ccas.push((boundary, dev));
        let d = &mut self.devs[dev - 1];
        let cap = d.sf.as_ref().unwrap().cap(&cfg);
        let node = d.node;
        let rng = &mut self.rng;
        let run = d.csma.as_mut().unwrap();
        let mut draw = |hi: u64| rng.uniform_int(0, hi, node);
        let action = run.eng.on_cca(boundary, busy, cap, &mut draw);
        self.csma_action(dev, action);
    }

    fn csma_tx_start(&mut self, dev: usize, at: SymbolTime) {
        let now = self.now();
        let d = &self.devs[dev - 1];
        let Some(run) = &d.csma else {
            return;
        };
        if run.waiting_cap || now != at {
            return;
        }
        let frame = run.frame.clone();
        let purpose = run.purpose;
        self.ch.set_trx(now, dev, TrxState::TxOn);
        let (id, end) = self
            .ch
            .start_tx(now, dev, frame.clone())
            .expect("CSMA transmission");
        match purpose {
            Purpose::Data => {
                self.counters.sent_data_frames += 1;
                self.trace(dev, format_args!(
                    "sending data frame seq={} bytes={}",
                    frame.seq, frame.payload_len
                ));
            }
            Purpose::AssocRequest => {
                self.trace(dev, format_args!("sending association request command ..."));
            }
            Purpose::DataRequest => {}
            Purpose::GtsRequest => {
                self.trace(dev, format_args!("sending gts request command ..."));
            }
        }
        self.audit.txs.push(TxAudit {
            node: dev,
            start: now,
            end,
            path: TxPath::CapCsma,
        });
        self.q
            .schedule(end, Ev::TxEnd { id, tag: TxTag::DevCsma { dev } });
    }

    fn csma_acked(&mut self, dev: usize) {
        let now = self.now();
        let run = self.devs[dev - 1].csma.take().unwrap();
        match run.purpose {
            Purpose::Data => {
                self.node_counters[dev - 1].delivered += 1;
                self.try_drain(dev);
            }
            Purpose::AssocRequest => {
                self.trace(dev, format_args!("ack for association request command received"));
                let d = &mut self.devs[dev - 1];
                d.phase = Phase::AssocWaitingResponseTime;
                d.response_wait = Some(
                    self.q
                        .schedule(now + RESPONSE_WAIT_SYMBOLS, Ev::ResponseWaitDone { dev }),
                );
            }
            Purpose::DataRequest => {
                self.trace(dev, format_args!("ack for data request command received"));
                let d = &mut self.devs[dev - 1];
                d.phase = Phase::AssocAwaitResponse;
                d.assoc_resp_timeout = Some(
                    self.q
                        .schedule(now + RESPONSE_WAIT_SYMBOLS, Ev::AssocResponseTimeout { dev }),
                );
            }
            Purpose::GtsRequest => {
                self.trace(dev, format_args!("ack for gts request command received"));
                self.devs[dev - 1].gts = GtsPhase::AwaitDescriptor {
                    beacons_left: A_GTS_DESC_PERSISTENCE_TIME,
                };
                self.try_drain(dev);
            }
        }
    }

    fn ack_timeout(&mut self, node: usize) {
        let now = self.now();
        if node == 0 {
            // coordinator direct / CFP send missed its ack
            let Some((_, _, ctx)) = self.coord.ack_wait.take() else {
                return;
            };
            match ctx {
                CoordAckCtx::Direct => {
                    let send = self.coord.direct.as_mut().unwrap();
                    send.retries += 1;
                    if send.retries > MAC_MAX_FRAME_RETRIES {
                        self.trace(0, format_args!(
                            "association response dropped (no ack after retries)"
                        ));
                        self.coord.direct = None;
                        if !self.coord.outbox.is_empty() {
                            self.q.schedule(now + 20, Ev::CoordSend);
                        }
                    } else {
                        self.q.schedule(now + 20, Ev::CoordSend);
                    }
                }
                CoordAckCtx::Cfp { dev } => {
                    let send = self.coord.cfp_send.as_mut().unwrap();
                    send.retries += 1;
                    if send.retries > MAC_MAX_FRAME_RETRIES {
                        self.counters.count_drop(DropCause::NoAckExhausted);
                        self.trace(0, format_args!("no ack after retries, data frame dropped"));
                        self.coord.cfp_send = None;
                    }
                    self.q.schedule(now, Ev::CoordGtsNext { dev });
                }
            }
            return;
        }
        let d = &mut self.devs[node - 1];
        let Some(w) = d.ack_wait.take() else {
            return;
        };
        match w.ctx {
            AckCtx::Csma => {
                let run = d.csma.as_mut().unwrap();
                run.retries += 1;
                if run.retries > MAC_MAX_FRAME_RETRIES {
                    self.csma_failed(node, false);
                } else {
                    // fresh CSMA attempt for the retransmission
                    let frame_air = run.frame.air_symbols();
                    let wants_ack = run.frame.ack_request;
                    run.eng = CsmaEngine::new(
                        self.p.cfg.battery_life_extension,
                        frame_air,
                        wants_ack,
                    );
                    self.csma_begin(node);
                }
            }
            AckCtx::Gts => {
                let send = d.gts_send.as_mut().unwrap();
                send.retries += 1;
                if send.retries > MAC_MAX_FRAME_RETRIES {
                    self.counters.count_drop(DropCause::NoAckExhausted);
                    self.node_counters[node - 1].no_ack_drops += 1;
                    self.trace(node, format_args!("no ack after retries, data frame dropped"));
                    self.devs[node - 1].gts_send = None;
                }
                self.gts_try_send(node);
            }
        }
    }

    /// Terminal CSMA failure: channel-access failure when `caf`, otherwise
    /// retry exhaustion with no acknowledgment.
    fn csma_failed(&mut self, dev: usize, caf: bool) {
        let run = self.devs[dev - 1].csma.take().unwrap();
        match run.purpose {
            Purpose::Data => {
                if caf {
                    self.counters.count_drop(DropCause::ChannelAccessFailure);
                    self.node_counters[dev - 1].caf_drops += 1;
                    self.trace(dev, format_args!("channel access failure, data frame dropped"));
                } else {
                    self.counters.count_drop(DropCause::NoAckExhausted);
                    self.node_counters[dev - 1].no_ack_drops += 1;
                    self.trace(dev, format_args!("no ack after retries, data frame dropped"));
                }
                self.try_drain(dev);
            }
            Purpose::AssocRequest | Purpose::DataRequest => {
                self.association_failed(
                    dev,
                    if caf { "channel access failure" } else { "ACK not received" },
                );
            }
            Purpose::GtsRequest => {
                let d = &mut self.devs[dev - 1];
                d.gts = GtsPhase::Failed;
                d.cap_fallback = true;
                self.trace(dev, format_args!(
                    "gts fails ({})",
                    if caf { "channel access failure" } else { "ACK not received" }
                ));
                self.try_drain(dev);
            }
        }
    }

    // ------------------------------------------------------------------
    // device: application traffic and the CFP
    // ------------------------------------------------------------------

    fn cbr_tick(&mut self, dev: usize) {
        let now = self.now();
        let interval = self.p.cbr_interval.0;
        let capacity = self.p.queue_capacity;
        let payload = self.p.cbr_payload_bytes;
        self.node_counters[dev - 1].generated += 1;
        let d = &mut self.devs[dev - 1];
        if d.queue.len() >= capacity {
            self.counters.count_drop(DropCause::QueueDrop);
            self.node_counters[dev - 1].queue_drops += 1;
            self.trace(dev, format_args!("queue full, data frame dropped"));
        } else {
            d.queue.push_back(payload);
        }
        if interval > 0 && now + interval <= self.p.sim_time {
            self.q.schedule(now + interval, Ev::CbrTick { dev });
        }
        self.try_drain(dev);
    }

    fn try_drain(&mut self, dev: usize) {
        let d = &mut self.devs[dev - 1];
        if d.phase != Phase::Associated
            || !d.synced
            || d.csma.is_some()
            || d.ack_wait.is_some()
            || d.gts_send.is_some()
            || d.queue.is_empty()
        {
            return;
        }
        // a device holding a transmit GTS keeps its data out of the CAP
        if let GtsPhase::Confirmed(desc) = d.gts {
            if desc.direction == GtsDirection::DeviceTransmit && !d.cap_fallback {
                return;
            }
        }
        if matches!(d.gts, GtsPhase::Requesting | GtsPhase::AwaitDescriptor { .. }) {
            return; // settle the GTS handshake before moving data
        }
        let payload = d.queue.pop_front().unwrap();
        let frame = Frame::data(d.addr, 0, next_seq(d), payload);
        self.submit_csma(dev, frame, Purpose::Data);
    }

    fn gts_start(&mut self, dev: usize) {
        let cfg = self.p.cfg;
        let d = &self.devs[dev - 1];
        if !d.synced {
            return;
        }
        let GtsPhase::Confirmed(desc) = d.gts else {
            return;
        };
        let sf = d.sf.as_ref().unwrap();
        self.devs[dev - 1].gts_window_end =
            sf.beacon_start + desc.end_slot_exclusive() as u64 * cfg.slot_symbols();
        self.gts_try_send(dev);
    }

    fn gts_try_send(&mut self, dev: usize) {
        let now = self.now();
        let d = &mut self.devs[dev - 1];
        if d.ack_wait.is_some() || !d.synced {
            return;
        }
        if d.gts_send.is_none() {
            let Some(payload) = d.queue.pop_front() else {
                return;
            };
            let frame = Frame::data(d.addr, 0, next_seq(d), payload);
            d.gts_send = Some(GtsSend { frame, retries: 0 });
        }
        let frame = d.gts_send.as_ref().unwrap().frame.clone();
        let completion = now + frame.air_symbols() + TURNAROUND_SYMBOLS + ack_air_symbols();
        if completion > self.devs[dev - 1].gts_window_end {
            return; // held until the next superframe's GTS
        }
        self.ch.set_trx(now, dev, TrxState::TxOn);
        let (id, end) = self
            .ch
            .start_tx(now, dev, frame.clone())
            .expect("GTS transmission");
        self.counters.sent_data_frames += 1;
        self.trace(dev, format_args!(
            "sending data frame seq={} bytes={} (gts)",
            frame.seq, frame.payload_len
        ));
        self.audit.txs.push(TxAudit {
            node: dev,
            start: now,
            end,
            path: TxPath::Cfp,
        });
        self.q
            .schedule(end, Ev::TxEnd { id, tag: TxTag::DevGts { dev } });
    }

    fn gts_acked(&mut self, dev: usize) {
        let now = self.now();
        self.devs[dev - 1].gts_send = None;
        self.node_counters[dev - 1].delivered += 1;
        if !self.devs[dev - 1].gts_announced {
            self.devs[dev - 1].gts_announced = true;
            self.trace(dev, format_args!("gts transmit success"));
        }
        self.q.schedule(now + TURNAROUND_SYMBOLS, Ev::GtsNext { dev });
    }

    fn trace(&mut self, node: usize, args: std::fmt::Arguments<'_>) {
        self.trace.rec(self.q.now(), node, args);
    }
}

fn next_seq(d: &mut Dev) -> u8 {
    d.seq = d.seq.wrapping_add(1);
    d.seq
}
