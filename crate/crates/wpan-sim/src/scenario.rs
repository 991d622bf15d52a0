//! Scenario configuration, parameter sweeps and CSV output.
//!
//! Config files are flat `key = value` text. Values may be scalars, lists
//! (`[0, 1, 2]`), inclusive integer ranges (`[0..5]`), or for `so` the
//! literal `bo` to tie the superframe order to the beacon order. A
//! `duty_cycle_pct` sweep may be given instead of `so`; each entry must be
//! 100/2^k and derives `so = bo - k`.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::engine::SymbolTime;
use crate::mac::frame::GtsDirection;
use crate::mac::SuperframeConfig;
use crate::metrics::{MetricsReport, DROP_CAUSES};
use crate::world::{RunOutcome, RunParams, World};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: cannot parse `{text}`: {reason}")]
    Parse {
        line: usize,
        text: String,
        reason: String,
    },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("{0}")]
    Invalid(String),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

/// One value position in the config: scalar or sweep list.
#[derive(Clone, Debug, PartialEq)]
enum Sweep {
    Values(Vec<f64>),
    TiedToBo, // `so = bo`
}

#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub bo: Vec<u8>,
    /// Expanded (bo, so) points in sweep order.
    pub points: Vec<(u8, u8)>,
    pub n_devices: Vec<usize>,
    pub seeds: Vec<u64>,
    pub radius_m: f64,
    pub range_m: f64,
    pub n_gts_devices: usize,
    pub gts_length: u8,
    pub gts_direction: GtsDirection,
    pub payload_bytes: u64,
    pub interval_s: f64,
    pub start_offset_s: Option<f64>,
    pub sim_time_s: f64,
    pub queue_capacity: usize,
    pub assoc_stagger_s: f64,
    pub ble: bool,
    pub trace: bool,
}

impl ScenarioConfig {
    /// Full cartesian run matrix, sorted by parameter point then seed.
    pub fn matrix(&self) -> Vec<RunParams> {
        let mut out = Vec::new();
        for &(bo, so) in &self.points {
            for &n in &self.n_devices {
                for &seed in &self.seeds {
                    let mut cfg = SuperframeConfig::new(bo, so).expect("validated point");
                    cfg.battery_life_extension = self.ble;
                    let mut p = RunParams::new(cfg, n, seed);
                    p.radius_m = self.radius_m;
                    p.range_m = self.range_m;
                    p.n_gts_devices = self.n_gts_devices;
                    p.gts_length = self.gts_length;
                    p.gts_direction = self.gts_direction;
                    p.cbr_payload_bytes = self.payload_bytes;
                    p.cbr_interval = SymbolTime::from_secs(self.interval_s);
                    if let Some(off) = self.start_offset_s {
                        p.cbr_start_offset = SymbolTime::from_secs(off);
                    }
                    p.sim_time = SymbolTime::from_secs(self.sim_time_s);
                    p.queue_capacity = self.queue_capacity;
                    p.assoc_stagger = SymbolTime::from_secs(self.assoc_stagger_s);
                    p.trace = self.trace;
                    out.push(p);
                }
            }
        }
        out
    }
}

fn err(line: usize, text: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Parse {
        line,
        text: text.to_string(),
        reason: reason.into(),
    }
}

/// Parses a scalar, `[a, b, c]` list, or `[lo..hi]` inclusive range.
fn parse_sweep(line: usize, raw: &str) -> Result<Vec<f64>, ConfigError> {
    let raw = raw.trim();
    if let Some(inner) = raw.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
        if let Some((lo, hi)) = inner.split_once("..") {
            let lo: i64 = lo
                .trim()
                .parse()
                .map_err(|_| err(line, raw, "range bound is not an integer"))?;
            let hi: i64 = hi
                .trim()
                .parse()
                .map_err(|_| err(line, raw, "range bound is not an integer"))?;
            if lo > hi {
                return Err(err(line, raw, "empty range"));
            }
            return Ok((lo..=hi).map(|v| v as f64).collect());
        }
        let mut out = Vec::new();
        for item in inner.split(',') {
            let item = item.trim();
            if item.is_empty() {
                return Err(err(line, raw, "empty list element"));
            }
            out.push(
                item.parse()
                    .map_err(|_| err(line, raw, "list element is not a number"))?,
            );
        }
        if out.is_empty() {
            return Err(err(line, raw, "empty list"));
        }
        return Ok(out);
    }
    Ok(vec![raw
        .parse()
        .map_err(|_| err(line, raw, "not a number"))?])
}

fn as_u8(v: f64, what: &str) -> Result<u8, ConfigError> {
    if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
        return Err(ConfigError::Invalid(format!("{what}: {v} is not a small integer")));
    }
    Ok(v as u8)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut bo: Option<Vec<f64>> = None;
    let mut so: Option<Sweep> = None;
    let mut duty: Option<Vec<f64>> = None;
    let mut n_devices: Option<Vec<f64>> = None;
    let mut seeds = vec![1.0];
    let mut radius_m = 10.0;
    let mut range_m = 18.0;
    let mut n_gts_devices = 0usize;
    let mut gts_length = 1u8;
    let mut gts_direction = GtsDirection::DeviceTransmit;
    let mut payload_bytes = 70u64;
    let mut interval_s = 0.2;
    let mut start_offset_s: Option<f64> = None;
    let mut sim_time_s = 60.0;
    let mut queue_capacity = 50usize;
    let mut assoc_stagger_s = 2.0;
    let mut ble = false;
    let mut trace = false;

    for (i, raw_line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw_line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(lineno, line, "expected `key = value`"));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "bo" => bo = Some(parse_sweep(lineno, value)?),
            "so" => {
                so = Some(if value == "bo" {
                    Sweep::TiedToBo
                } else {
                    Sweep::Values(parse_sweep(lineno, value)?)
                })
            }
            "duty_cycle_pct" => duty = Some(parse_sweep(lineno, value)?),
            "n_devices" => n_devices = Some(parse_sweep(lineno, value)?),
            "seeds" => seeds = parse_sweep(lineno, value)?,
            "radius_m" => radius_m = parse_sweep(lineno, value)?[0],
            "range_m" => range_m = parse_sweep(lineno, value)?[0],
            "n_gts_devices" => n_gts_devices = parse_sweep(lineno, value)?[0] as usize,
            "gts_length" => gts_length = as_u8(parse_sweep(lineno, value)?[0], "gts_length")?,
            "gts_direction" => {
                gts_direction = match value {
                    "transmit" => GtsDirection::DeviceTransmit,
                    "receive" => GtsDirection::DeviceReceive,
                    _ => return Err(err(lineno, value, "expected `transmit` or `receive`")),
                }
            }
            "payload_bytes" => payload_bytes = parse_sweep(lineno, value)?[0] as u64,
            "interval_s" => interval_s = parse_sweep(lineno, value)?[0],
            "start_offset_s" => start_offset_s = Some(parse_sweep(lineno, value)?[0]),
            "sim_time_s" => sim_time_s = parse_sweep(lineno, value)?[0],
            "queue_capacity" => queue_capacity = parse_sweep(lineno, value)?[0] as usize,
            "assoc_stagger_s" => assoc_stagger_s = parse_sweep(lineno, value)?[0],
            "ble" => {
                ble = value
                    .parse()
                    .map_err(|_| err(lineno, value, "expected true/false"))?
            }
            "trace" => {
                trace = value
                    .parse()
                    .map_err(|_| err(lineno, value, "expected true/false"))?
            }
            other => {
                return Err(ConfigError::UnknownKey {
                    line: lineno,
                    key: other.to_string(),
                })
            }
        }
    }

    let bo_vals = bo.ok_or_else(|| ConfigError::Invalid("missing required key `bo`".into()))?;
    let n_vals = n_devices
        .ok_or_else(|| ConfigError::Invalid("missing required key `n_devices`".into()))?;
    if interval_s <= 0.0 {
        return Err(ConfigError::Invalid(format!(
            "interval_s must be positive, got {interval_s}"
        )));
    }
    if sim_time_s <= 0.0 {
        return Err(ConfigError::Invalid(format!(
            "sim_time_s must be positive, got {sim_time_s}"
        )));
    }
    let mut bos = Vec::new();
    for v in bo_vals {
        let b = as_u8(v, "bo")?;
        if b > 14 {
            return Err(ConfigError::Invalid(format!("bo = {b} exceeds 14")));
        }
        bos.push(b);
    }
    if so.is_some() && duty.is_some() {
        return Err(ConfigError::Invalid(
            "`so` and `duty_cycle_pct` are mutually exclusive".into(),
        ));
    }

    let mut points = Vec::new();
    if let Some(duties) = duty {
        for &b in &bos {
            for &d in &duties {
                // valid duties are 100/2^k; derive so = bo - k
                let k = (100.0 / d).log2();
                let k_round = k.round();
                if d <= 0.0 || (k - k_round).abs() > 1e-9 {
                    return Err(ConfigError::Invalid(format!(
                        "duty_cycle_pct = {d} is not 100/2^k"
                    )));
                }
                let k = k_round as i32;
                if k > b as i32 {
                    return Err(ConfigError::Invalid(format!(
                        "duty_cycle_pct = {d} needs so = bo - {k} < 0 at bo = {b}"
                    )));
                }
                points.push((b, (b as i32 - k) as u8));
            }
        }
    } else {
        match so.unwrap_or(Sweep::TiedToBo) {
            Sweep::TiedToBo => {
                for &b in &bos {
                    points.push((b, b));
                }
            }
            Sweep::Values(vals) => {
                for &b in &bos {
                    for &v in &vals {
                        let s = as_u8(v, "so")?;
                        if s > b {
                            return Err(ConfigError::Invalid(format!(
                                "so = {s} exceeds bo = {b}"
                            )));
                        }
                        points.push((b, s));
                    }
                }
            }
        }
    }

    let mut ns = Vec::new();
    for v in n_vals {
        if v.fract() != 0.0 || v < 1.0 {
            return Err(ConfigError::Invalid(format!(
                "n_devices = {v} is not a positive integer"
            )));
        }
        ns.push(v as usize);
    }
    let seeds: Vec<u64> = seeds.iter().map(|&s| s as u64).collect();
    if seeds.is_empty() {
        return Err(ConfigError::Invalid("seeds list is empty".into()));
    }
    for n in &ns {
        if n_gts_devices > *n {
            return Err(ConfigError::Invalid(format!(
                "n_gts_devices = {n_gts_devices} exceeds n_devices = {n}"
            )));
        }
    }

    Ok(ScenarioConfig {
        bo: bos,
        points,
        n_devices: ns,
        seeds,
        radius_m,
        range_m,
        n_gts_devices,
        gts_length,
        gts_direction,
        payload_bytes,
        interval_s,
        start_offset_s,
        sim_time_s,
        queue_capacity,
        assoc_stagger_s,
        ble,
        trace,
    })
}

pub const CSV_HEADER: &str = "bo,so,n_nodes,seed,sim_time_s,S_kbps,Pd_pct,C_pct,duty_cycle_pct,\
collision_data,collision_other,channel_access_failure,no_ack,queue_drop";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => String::new(),
    }
}

pub fn csv_row(r: &MetricsReport) -> String {
    let mut row = format!(
        "{},{},{},{},{:.1},{:.4},{},{},{:.4}",
        r.bo,
        r.so,
        r.n_nodes,
        r.seed,
        r.sim_time_s,
        r.s_kbps,
        fmt_opt(r.pd_pct),
        fmt_opt(r.c_pct),
        r.duty_cycle_pct,
    );
    for cause in DROP_CAUSES {
        write!(row, ",{}", r.drops[cause as usize]).unwrap();
    }
    row
}

fn aggregate_row(label: &str, group: &[&MetricsReport]) -> String {
    let first = group[0];
    let stat = |vals: Vec<f64>| -> (f64, f64) {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = if vals.len() < 2 {
            0.0
        } else {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        };
        (mean, var.sqrt())
    };
    let pick = |f: fn(&MetricsReport) -> Option<f64>| -> Option<(f64, f64)> {
        let vals: Vec<f64> = group.iter().filter_map(|r| f(r)).collect();
        if vals.is_empty() {
            None
        } else {
            Some(stat(vals))
        }
    };
    let (s_mean, s_sd) = stat(group.iter().map(|r| r.s_kbps).collect());
    let pd = pick(|r| r.pd_pct);
    let c = pick(|r| r.c_pct);
    let idx = if label == "mean" { 0 } else { 1 };
    let take = |p: Option<(f64, f64)>| p.map(|t| if idx == 0 { t.0 } else { t.1 });
    let s = if idx == 0 { s_mean } else { s_sd };
    let mut row = format!(
        "{},{},{},{},{:.1},{:.4},{},{},{:.4}",
        first.bo,
        first.so,
        first.n_nodes,
        label,
        first.sim_time_s,
        s,
        fmt_opt(take(pd)),
        fmt_opt(take(c)),
        first.duty_cycle_pct,
    );
    for cause in DROP_CAUSES {
        let (m, sd) = stat(group.iter().map(|r| r.drops[cause as usize] as f64).collect());
        write!(row, ",{:.2}", if idx == 0 { m } else { sd }).unwrap();
    }
    row
}

pub struct MatrixOutput {
    pub csv: String,
    /// (file name, trace text) per run when tracing is on.
    pub traces: Vec<(String, String)>,
    pub reports: Vec<MetricsReport>,
}

/// Runs every point in the matrix and renders the CSV, including per-point
/// mean and sample standard deviation rows across seeds.
pub fn run_matrix(cfg: &ScenarioConfig) -> MatrixOutput {
    let outcomes: Vec<RunOutcome> = cfg
        .matrix()
        .into_iter()
        .map(|p| World::new(p).run())
        .collect();
    render_matrix(cfg, &outcomes)
}

pub fn render_matrix(cfg: &ScenarioConfig, outcomes: &[RunOutcome]) -> MatrixOutput {
    let reports: Vec<MetricsReport> = outcomes.iter().map(|o| o.report()).collect();
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut traces = Vec::new();
    // group contiguous rows per parameter point (matrix order is
    // point-major, seed-minor)
    let per_point = cfg.seeds.len();
    for (chunk, outcome_chunk) in reports.chunks(per_point).zip(outcomes.chunks(per_point)) {
        for (r, o) in chunk.iter().zip(outcome_chunk) {
            csv.push_str(&csv_row(r));
            csv.push('\n');
            if cfg.trace {
                traces.push((
                    format!(
                        "trace_bo{}_so{}_n{}_seed{}.txt",
                        r.bo, r.so, r.n_nodes, r.seed
                    ),
                    o.trace.clone(),
                ));
            }
        }
        let refs: Vec<&MetricsReport> = chunk.iter().collect();
        csv.push_str(&aggregate_row("mean", &refs));
        csv.push('\n');
        csv.push_str(&aggregate_row("stddev", &refs));
        csv.push('\n');
    }
    MatrixOutput {
        csv,
        traces,
        reports,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_and_tie_expansion() {
        let cfg = parse_config("bo = [0..5]\nso = bo\nn_devices = 10\n").unwrap();
        assert_eq!(cfg.points, vec![(0, 0), (1, 1), (2, 2), (3, 3), (4, 4), (5, 5)]);
        assert_eq!(cfg.matrix().len(), 6);
    }

    #[test]
    fn duty_cycle_sweep_derives_so() {
        let cfg =
            parse_config("bo = 5\nduty_cycle_pct = [100, 50, 25, 12.5]\nn_devices = 10\n").unwrap();
        assert_eq!(cfg.points, vec![(5, 5), (5, 4), (5, 3), (5, 2)]);
    }

    #[test]
    fn invalid_duty_rejected() {
        let e = parse_config("bo = 5\nduty_cycle_pct = 30\nn_devices = 5\n").unwrap_err();
        assert!(e.to_string().contains("100/2^k"), "{e}");
    }

    #[test]
    fn so_above_bo_rejected() {
        let e = parse_config("bo = 3\nso = 5\nn_devices = 5\n").unwrap_err();
        assert!(e.to_string().contains("exceeds bo"), "{e}");
    }

    #[test]
    fn bo_above_14_rejected() {
        let e = parse_config("bo = 15\nn_devices = 5\n").unwrap_err();
        assert!(e.to_string().contains("exceeds 14"), "{e}");
    }

    #[test]
    fn missing_n_devices_rejected() {
        let e = parse_config("bo = 3\n").unwrap_err();
        assert!(e.to_string().contains("n_devices"), "{e}");
    }

    #[test]
    fn zero_interval_rejected() {
        let e = parse_config("bo = 3\nn_devices = 5\ninterval_s = 0\n").unwrap_err();
        assert!(e.to_string().contains("interval_s"), "{e}");
    }

    #[test]
    fn parse_error_names_line() {
        let e = parse_config("bo = 3\nn_devices = [5,\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn unknown_key_rejected() {
        let e = parse_config("bo = 3\nn_devices = 5\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = parse_config("# sweep\nbo = 2 # inline\n\nn_devices = 5\nseeds = [1, 2]\n").unwrap();
        assert_eq!(cfg.matrix().len(), 2);
    }

    #[test]
    fn matrix_sorted_point_major() {
        let cfg =
            parse_config("bo = [1, 2]\nso = bo\nn_devices = [5, 10]\nseeds = [7, 8]\n").unwrap();
        let m = cfg.matrix();
        assert_eq!(m.len(), 8);
        assert_eq!((m[0].cfg.bo, m[0].n_devices, m[0].seed), (1, 5, 7));
        assert_eq!((m[1].cfg.bo, m[1].n_devices, m[1].seed), (1, 5, 8));
        assert_eq!((m[2].cfg.bo, m[2].n_devices, m[2].seed), (1, 10, 7));
        assert_eq!((m[7].cfg.bo, m[7].n_devices, m[7].seed), (2, 10, 8));
    }

    #[test]
    fn csv_has_aggregate_rows_per_point() {
        let cfg = parse_config(
            "bo = 1\nso = bo\nn_devices = 2\nseeds = [1, 2]\nsim_time_s = 5\n",
        )
        .unwrap();
        let out = run_matrix(&cfg);
        let lines: Vec<&str> = out.csv.trim_end().lines().collect();
        // header + 2 seed rows + mean + stddev
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("bo,so,n_nodes,seed"));
        assert!(lines[3].contains(",mean,"));
        assert!(lines[4].contains(",stddev,"));
    }
}
