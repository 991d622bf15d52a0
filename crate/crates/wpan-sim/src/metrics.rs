//! Run counters and the performance metric formulas, plus an independent
//! trace-file scanner that recomputes the metrics from trace records alone.

use crate::mac::SuperframeConfig;
use crate::trace::parse_record;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DropCause {
    /// Data frame corrupted by overlap at its destination.
    CollisionData,
    /// Beacon, acknowledgment or MAC command corrupted by overlap.
    CollisionOther,
    ChannelAccessFailure,
    NoAckExhausted,
    QueueDrop,
}

pub const DROP_CAUSES: [DropCause; 5] = [
    DropCause::CollisionData,
    DropCause::CollisionOther,
    DropCause::ChannelAccessFailure,
    DropCause::NoAckExhausted,
    DropCause::QueueDrop,
];

/// Global run counters; all monotone non-decreasing during a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    /// MAC data transmissions, retransmissions included.
    pub sent_data_frames: u64,
    /// Intact data deliveries at the final recipient's MAC.
    pub received_data_frames: u64,
    pub received_data_bytes: u64,
    drops: [u64; 5],
}

impl Counters {
    pub fn drop_count(&self, cause: DropCause) -> u64 {
        self.drops[Self::idx(cause)]
    }

    pub fn count_drop(&mut self, cause: DropCause) {
        self.drops[Self::idx(cause)] += 1;
    }

    fn idx(cause: DropCause) -> usize {
        DROP_CAUSES.iter().position(|&c| c == cause).unwrap()
    }
}

/// Per-node packet accounting for the drop-conservation identity:
/// generated == delivered + caf + no_ack + queue_drop + left over at end.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeCounters {
    pub generated: u64,
    pub delivered: u64,
    pub caf_drops: u64,
    pub no_ack_drops: u64,
    pub queue_drops: u64,
    pub queued_at_end: u64,
    pub in_flight_at_end: u64,
}

impl NodeCounters {
    pub fn accounted(&self) -> u64 {
        self.delivered
            + self.caf_drops
            + self.no_ack_drops
            + self.queue_drops
            + self.queued_at_end
            + self.in_flight_at_end
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
}

/// Per-node throughput in kbps: bytes received, over time and node count.
pub fn throughput(counters: &Counters, sim_time_s: f64, n_nodes: usize) -> Result<f64, MetricsError> {
    if sim_time_s <= 0.0 {
        return Err(MetricsError::InvalidInput("sim_time_s must be positive"));
    }
    if n_nodes == 0 {
        return Err(MetricsError::InvalidInput("n_nodes must be positive"));
    }
    Ok(counters.received_data_bytes as f64 * 8.0 / (sim_time_s * n_nodes as f64 * 1000.0))
}

/// Packets successfully received over packets sent, in percent.
/// Retransmissions count in the denominator. None when nothing was sent.
pub fn packet_delivery_ratio(counters: &Counters) -> Option<f64> {
    if counters.sent_data_frames == 0 {
        return None;
    }
    Some(counters.received_data_frames as f64 / counters.sent_data_frames as f64 * 100.0)
}

/// Share of collision-removed packets that were data, in percent.
/// None when no collisions occurred.
pub fn collision_rate(counters: &Counters) -> Option<f64> {
    let data = counters.drop_count(DropCause::CollisionData);
    let total = data + counters.drop_count(DropCause::CollisionOther);
    if total == 0 {
        return None;
    }
    Some(data as f64 / total as f64 * 100.0)
}

pub fn duty_cycle(cfg: &SuperframeConfig) -> f64 {
    cfg.duty_cycle_pct()
}

/// One run's metrics together with the parameters that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub bo: u8,
    pub so: u8,
    pub n_nodes: usize,
    pub seed: u64,
    pub sim_time_s: f64,
    pub s_kbps: f64,
    pub pd_pct: Option<f64>,
    pub c_pct: Option<f64>,
    pub duty_cycle_pct: f64,
    pub drops: [u64; 5],
}

impl MetricsReport {
    pub fn from_counters(
        counters: &Counters,
        cfg: &SuperframeConfig,
        n_nodes: usize,
        seed: u64,
        sim_time_s: f64,
    ) -> Self {
        MetricsReport {
            bo: cfg.bo,
            so: cfg.so,
            n_nodes,
            seed,
            sim_time_s,
            s_kbps: throughput(counters, sim_time_s, n_nodes).unwrap_or(0.0),
            pd_pct: packet_delivery_ratio(counters),
            c_pct: collision_rate(counters),
            duty_cycle_pct: duty_cycle(cfg),
            drops: DROP_CAUSES.map(|c| counters.drop_count(c)),
        }
    }
}

/// Counts reconstructed purely from trace records.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScannedCounts {
    pub sent_data_frames: u64,
    pub received_data_frames: u64,
    pub received_data_bytes: u64,
    pub collision_data: u64,
    pub collision_other: u64,
}

/// Scans a trace file's text and recounts the metric inputs from the event
/// lines. Independent of the live counters: the only shared contract is the
/// event-text vocabulary.
pub fn scan_trace(text: &str) -> ScannedCounts {
    let mut s = ScannedCounts::default();
    for line in text.lines() {
        let Some(rec) = parse_record(line) else {
            continue;
        };
        let ev = rec.event.as_str();
        if ev.starts_with("sending data frame") {
            s.sent_data_frames += 1;
        } else if ev.starts_with("data frame received from node") {
            s.received_data_frames += 1;
            if let Some(b) = ev.rsplit("bytes=").next() {
                s.received_data_bytes += b.parse::<u64>().unwrap_or(0);
            }
        } else if ev.starts_with("collision dropped data frame") {
            s.collision_data += 1;
        } else if ev.starts_with("collision dropped ") {
            s.collision_other += 1;
        }
    }
    s
}

impl ScannedCounts {
    /// Recomputes (S, Pd, C) from the scanned counts.
    pub fn metrics(&self, sim_time_s: f64, n_nodes: usize) -> (f64, Option<f64>, Option<f64>) {
        let mut c = Counters {
            sent_data_frames: self.sent_data_frames,
            received_data_frames: self.received_data_frames,
            received_data_bytes: self.received_data_bytes,
            ..Counters::default()
        };
        for _ in 0..self.collision_data {
            c.count_drop(DropCause::CollisionData);
        }
        for _ in 0..self.collision_other {
            c.count_drop(DropCause::CollisionOther);
        }
        (
            throughput(&c, sim_time_s, n_nodes).unwrap_or(0.0),
            packet_delivery_ratio(&c),
            collision_rate(&c),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn throughput_hand_value() {
        let c = Counters {
            received_data_bytes: 125_000,
            ..Default::default()
        };
        assert_eq!(throughput(&c, 10.0, 10).unwrap(), 10.0);
        // doubling the node count halves S
        assert_eq!(throughput(&c, 10.0, 20).unwrap(), 5.0);
    }

    #[test]
    fn throughput_zero_bytes_is_zero() {
        let c = Counters::default();
        assert_eq!(throughput(&c, 10.0, 10).unwrap(), 0.0);
    }

    #[test]
    fn throughput_rejects_degenerate_inputs() {
        let c = Counters::default();
        assert!(throughput(&c, 0.0, 10).is_err());
        assert!(throughput(&c, 10.0, 0).is_err());
    }

    #[test]
    fn pdr_direct_and_retransmission_denominator() {
        let c = Counters {
            sent_data_frames: 100,
            received_data_frames: 95,
            ..Default::default()
        };
        assert_eq!(packet_delivery_ratio(&c), Some(95.0));
        // one packet, one retransmission, delivered once
        let c = Counters {
            sent_data_frames: 2,
            received_data_frames: 1,
            ..Default::default()
        };
        assert_eq!(packet_delivery_ratio(&c), Some(50.0));
    }

    #[test]
    fn pdr_absent_when_nothing_sent() {
        assert_eq!(packet_delivery_ratio(&Counters::default()), None);
    }

    #[test]
    fn collision_rate_composition() {
        let mut c = Counters::default();
        for _ in 0..30 {
            c.count_drop(DropCause::CollisionData);
        }
        for _ in 0..10 {
            c.count_drop(DropCause::CollisionOther);
        }
        assert_eq!(collision_rate(&c), Some(75.0));
    }

    #[test]
    fn collision_rate_single_class_and_absent() {
        let mut c = Counters::default();
        assert_eq!(collision_rate(&c), None);
        c.count_drop(DropCause::CollisionData);
        assert_eq!(collision_rate(&c), Some(100.0));
    }

    #[test]
    fn duty_cycle_values() {
        assert_eq!(duty_cycle(&SuperframeConfig::new(3, 3).unwrap()), 100.0);
        assert_eq!(duty_cycle(&SuperframeConfig::new(4, 3).unwrap()), 50.0);
        assert_eq!(duty_cycle(&SuperframeConfig::new(5, 2).unwrap()), 12.5);
    }

    #[test]
    fn scanner_counts_trace_vocabulary() {
        let text = "\
[0.0010000](node 1) sending data frame seq=3 bytes=70
[0.0030000](node 0) data frame received from node 1 seq=3 bytes=70
[0.0050000](node 0) collision dropped data frame from node 2
[0.0060000](node 0) collision dropped association request frame from node 3
not a trace line
";
        let s = scan_trace(text);
        assert_eq!(s.sent_data_frames, 1);
        assert_eq!(s.received_data_frames, 1);
        assert_eq!(s.received_data_bytes, 70);
        assert_eq!(s.collision_data, 1);
        assert_eq!(s.collision_other, 1);
    }

    #[test]
    fn metrics_are_pure_functions_of_counters() {
        let c = Counters {
            sent_data_frames: 10,
            received_data_frames: 9,
            received_data_bytes: 630,
            ..Default::default()
        };
        assert_eq!(packet_delivery_ratio(&c), packet_delivery_ratio(&c));
        assert_eq!(
            throughput(&c, 60.0, 10).unwrap(),
            throughput(&c, 60.0, 10).unwrap()
        );
    }
}
