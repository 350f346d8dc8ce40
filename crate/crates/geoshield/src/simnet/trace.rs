use std::io::Write;

use serde::Serialize;

use crate::core::{NodeId, SimTime};

/// One fired event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceRow {
    pub time_ns: u64,
    pub node: String,
    pub event_kind: String,
    pub details: String,
}

/// Append-only record of fired events, exported as `time_ns,node,event_kind,details`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    rows: Vec<TraceRow>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, time: SimTime, node: Option<NodeId>, kind: &str, details: impl Into<String>) {
        self.rows.push(TraceRow {
            time_ns: time.as_nanos(),
            node: node.map(|n| n.to_string()).unwrap_or_default(),
            event_kind: kind.to_string(),
            details: details.into(),
        });
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        if self.rows.is_empty() {
            out.write_record(["time_ns", "node", "event_kind", "details"])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory CSV write");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}
