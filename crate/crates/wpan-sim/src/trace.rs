//! Human-readable run trace.
//!
//! One line per record, `[<seconds, 7 decimals>](node <id>) <event>`,
//! strictly ordered by dispatch. The trace doubles as the input to the
//! post-hoc metrics scanner, so the event texts for countable events are
//! stable strings.

use crate::engine::SymbolTime;
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub time: SymbolTime,
    pub node: usize,
    pub event: String,
}

pub fn format_record(time: SymbolTime, node: usize, event: &str) -> String {
    format!("[{:.7}](node {}) {}", time.as_secs(), node, event)
}

/// Parses a trace line back into a record. Returns None for malformed input.
pub fn parse_record(line: &str) -> Option<TraceRecord> {
    let rest = line.strip_prefix('[')?;
    let (secs, rest) = rest.split_once("](node ")?;
    let (node, event) = rest.split_once(") ")?;
    Some(TraceRecord {
        time: SymbolTime::from_secs(secs.parse().ok()?),
        node: node.parse().ok()?,
        event: event.to_string(),
    })
}

#[derive(Debug, Default)]
pub struct TraceBuf {
    enabled: bool,
    out: String,
}

impl TraceBuf {
    pub fn new(enabled: bool) -> Self {
        TraceBuf {
            enabled,
            out: String::new(),
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn rec(&mut self, time: SymbolTime, node: usize, event: std::fmt::Arguments<'_>) {
        if !self.enabled {
            return;
        }
        let _ = write!(self.out, "[{:.7}](node {}) ", time.as_secs(), node);
        let _ = self.out.write_fmt(event);
        self.out.push('\n');
    }

    pub fn contents(&self) -> &str {
        &self.out
    }

    pub fn into_contents(self) -> String {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_matches_expected_shape() {
        let t = SymbolTime::from_secs(27.0016);
        assert_eq!(
            format_record(t, 1, "sending gts request command"),
            "[27.0016000](node 1) sending gts request command"
        );
    }

    #[test]
    fn round_trip_parse() {
        let line = format_record(SymbolTime(12_500), 4, "scanning channel 11");
        let rec = parse_record(&line).unwrap();
        assert_eq!(rec.node, 4);
        assert_eq!(rec.time, SymbolTime(12_500));
        assert_eq!(rec.event, "scanning channel 11");
    }

    #[test]
    fn disabled_buffer_stays_empty() {
        let mut tb = TraceBuf::new(false);
        tb.rec(SymbolTime(0), 0, format_args!("x"));
        assert!(tb.contents().is_empty());
    }
}
