//! Self-describing run artifacts.
//!
//! Every series file begins with a provenance line naming the scenario hash
//! and the seed that produced it, so artifacts found on disk can always be
//! traced back to their inputs. Two formats are supported: CSV (comment
//! header) and JSONL (header object on the first line).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::rateless::FileId;

/// On-disk encoding of a trace series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Jsonl,
}

impl TraceFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            TraceFormat::Csv => "csv",
            TraceFormat::Jsonl => "jsonl",
        }
    }
}

impl std::str::FromStr for TraceFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TraceFormat::Csv),
            "jsonl" => Ok(TraceFormat::Jsonl),
            other => Err(format!("unknown format '{other}' (expected csv or jsonl)")),
        }
    }
}

/// A row type that knows how to lay itself out as CSV; JSONL comes from
/// `Serialize` for free.
pub trait TraceRecord: Serialize {
    fn csv_header() -> &'static str;
    fn csv_row(&self) -> String;
}

/// Fingerprint of a scenario: 64-bit FNV-1a over its canonical JSON form.
/// Stable across runs and platforms for equal configs.
pub fn scenario_hash(cfg: &ScenarioConfig) -> String {
    let canon = serde_json::to_string(cfg).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in canon.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Write one series with its provenance header.
pub fn write_trace<T: TraceRecord>(
    path: &Path,
    format: TraceFormat,
    scenario: &str,
    seed: u64,
    rows: &[T],
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        TraceFormat::Csv => {
            writeln!(w, "# scenario={scenario} seed={seed}")?;
            writeln!(w, "{}", T::csv_header())?;
            for row in rows {
                writeln!(w, "{}", row.csv_row())?;
            }
        }
        TraceFormat::Jsonl => {
            writeln!(w, "{{\"scenario\":\"{scenario}\",\"seed\":{seed}}}")?;
            for row in rows {
                writeln!(w, "{}", serde_json::to_string(row)?)?;
            }
        }
    }
    w.flush()
}

/// Write a standalone summary document (always JSON, pretty-printed).
pub fn write_summary<T: Serialize>(path: &Path, summary: &T) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, summary)?;
    writeln!(w)?;
    w.flush()
}

/// Pipe-joined file ids, so cache contents stay a single CSV cell.
pub fn join_ids(ids: &[FileId]) -> String {
    let parts: Vec<String> = ids.iter().map(|f| f.0.to_string()).collect();
    parts.join("|")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Serialize;

    #[derive(Serialize)]
    struct Row {
        slot: u64,
        value: f64,
    }

    impl TraceRecord for Row {
        fn csv_header() -> &'static str {
            "slot,value"
        }
        fn csv_row(&self) -> String {
            format!("{},{}", self.slot, self.value)
        }
    }

    #[test]
    fn hash_tracks_config_content() {
        let a = ScenarioConfig::reference_scenario();
        let mut b = a.clone();
        assert_eq!(scenario_hash(&a), scenario_hash(&b));
        b.cache.capacity = 16;
        assert_ne!(scenario_hash(&a), scenario_hash(&b));
        assert_eq!(scenario_hash(&a).len(), 16);
    }

    #[test]
    fn csv_carries_provenance_then_rows() {
        let dir = std::env::temp_dir().join("femtosim-trace-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rows.csv");
        let rows = vec![Row { slot: 1, value: 0.5 }, Row { slot: 2, value: 1.25 }];
        write_trace(&path, TraceFormat::Csv, "deadbeefdeadbeef", 7, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "# scenario=deadbeefdeadbeef seed=7\nslot,value\n1,0.5\n2,1.25\n"
        );
    }

    #[test]
    fn jsonl_header_object_comes_first() {
        let dir = std::env::temp_dir().join("femtosim-trace-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rows.jsonl");
        let rows = vec![Row { slot: 3, value: 2.0 }];
        write_trace(&path, TraceFormat::Jsonl, "00ff00ff00ff00ff", 9, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let header: serde_json::Value =
            serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(header["scenario"], "00ff00ff00ff00ff");
        assert_eq!(header["seed"], 9);
        let row: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(row["slot"], 3);
    }

    #[test]
    fn id_join_is_pipe_separated() {
        assert_eq!(join_ids(&[FileId(0), FileId(4), FileId(8)]), "0|4|8");
        assert_eq!(join_ids(&[]), "");
    }
}
