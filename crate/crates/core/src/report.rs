//! Run traces, summary reports and the exact CSV trace format.
//!
//! Trace CSV columns, in order: `row_index,phase,iteration,wall_seconds,
//! u0_estimate,loss`. Header mandatory, UTF-8, LF line endings, floats
//! printed with 10 significant digits.

use std::io::{BufRead, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

pub const TRACE_HEADER: &str = "row_index,phase,iteration,wall_seconds,u0_estimate,loss";

/// One trace row of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub phase: String,
    pub iteration: u64,
    pub wall_seconds: f64,
    pub u0_estimate: f64,
    pub loss: f64,
}

/// Reference value a run is compared against.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Reference {
    pub value: f64,
    pub source: String,
}

/// Per-run trace plus final summary; self-describing via the echoed
/// resolved configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub config_echo: serde_json::Value,
    pub rows: Vec<TraceRow>,
    pub final_u0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<Reference>,
    /// `100 * |u0 - ref| / |ref|` when a reference is present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_pct_error: Option<f64>,
    pub total_wall_seconds: f64,
    pub seed: u64,
    /// Negative forward-state entries encountered across the run
    /// (diagnostic; states are never clamped).
    #[serde(default)]
    pub negative_coords: usize,
}

impl RunReport {
    pub fn set_reference(&mut self, reference: Option<Reference>) {
        self.abs_pct_error = reference
            .as_ref()
            .map(|r| 100.0 * (self.final_u0 - r.value).abs() / r.value.abs());
        self.reference = reference;
    }
}

/// Formats a float with 10 significant digits, stable across runs.
pub fn format_sig10(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x:.9e}")
    }
}

/// Writes the trace in the exact CSV format.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut w: W) -> Result<()> {
    w.write_all(TRACE_HEADER.as_bytes())?;
    w.write_all(b"\n")?;
    for (i, row) in rows.iter().enumerate() {
        let line = format!(
            "{},{},{},{},{},{}\n",
            i,
            row.phase,
            row.iteration,
            format_sig10(row.wall_seconds),
            format_sig10(row.u0_estimate),
            format_sig10(row.loss)
        );
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn trace_csv_string(rows: &[TraceRow]) -> String {
    let mut buf = Vec::new();
    write_trace_csv(rows, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("trace CSV is UTF-8")
}

/// Parses a trace CSV produced by [`write_trace_csv`].
pub fn parse_trace_csv<R: BufRead>(reader: R) -> Result<Vec<TraceRow>> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| SolverError::Config("empty trace file".into()))??;
    if header != TRACE_HEADER {
        return Err(SolverError::Config(format!(
            "unexpected trace header: {header}"
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(SolverError::Config(format!(
                "trace row {i} has {} fields, expected 6",
                parts.len()
            )));
        }
        let field = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| SolverError::Config(format!("bad {what} in trace row {i}: {s}")))
        };
        rows.push(TraceRow {
            phase: parts[1].to_string(),
            iteration: parts[2]
                .parse()
                .map_err(|_| SolverError::Config(format!("bad iteration in trace row {i}")))?,
            wall_seconds: field(parts[3], "wall_seconds")?,
            u0_estimate: field(parts[4], "u0_estimate")?,
            loss: field(parts[5], "loss")?,
        });
    }
    Ok(rows)
}

/// How run time is reported.
///
/// `Measured` reads the process monotonic clock (the mode behind timing
/// comparisons). `Logical` charges a deterministic cost of one unit per
/// million rollout sample-steps, so repeated runs of the same seed and
/// config produce byte-identical traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimingMode {
    #[default]
    Measured,
    Logical,
}

/// Run clock started when the first sample is drawn (config parsing and
/// process startup are excluded). Row timestamps are strictly
/// increasing.
#[derive(Debug)]
pub struct RunClock {
    mode: TimingMode,
    start: Instant,
    logical_units: f64,
    last_row: f64,
}

impl RunClock {
    pub fn start(mode: TimingMode) -> Self {
        RunClock {
            mode,
            start: Instant::now(),
            logical_units: 0.0,
            last_row: 0.0,
        }
    }

    pub fn mode(&self) -> TimingMode {
        self.mode
    }

    /// Charges `sample_steps` rollout sample-steps to the logical clock;
    /// no effect on measured time.
    pub fn add_work(&mut self, sample_steps: f64) {
        self.logical_units += sample_steps * 1e-6;
    }

    /// Current time in (logical) seconds.
    pub fn now(&self) -> f64 {
        match self.mode {
            TimingMode::Measured => self.start.elapsed().as_secs_f64(),
            TimingMode::Logical => self.logical_units,
        }
    }

    /// A timestamp for a trace row; bumped by 1 ns if needed so rows are
    /// strictly increasing.
    pub fn row_time(&mut self) -> f64 {
        let t = self.now().max(self.last_row + 1e-9);
        self.last_row = t;
        t
    }
}
