//! Append-only mutation journal: one JSON record per line.
//!
//! ```text
//! {"op":"add","fact":{...},"seq":17}
//! {"op":"modify","id":3,"fact":{...},"seq":18}
//! {"op":"delete","id":3,"seq":19}
//! ```

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fact::{Fact, FactId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum JournalOp {
    Add { fact: Fact },
    Modify { id: FactId, fact: Fact },
    Delete { id: FactId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    #[serde(flatten)]
    pub op: JournalOp,
    pub seq: u64,
}

impl JournalRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("journal record serializes")
    }
}

#[derive(Debug)]
pub(crate) struct JournalWriter {
    out: BufWriter<File>,
}

impl JournalWriter {
    pub(crate) fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JournalWriter { out: BufWriter::new(file) })
    }

    pub(crate) fn append(&mut self, record: &JournalRecord) -> io::Result<()> {
        self.out.write_all(record.to_line().as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }

    pub(crate) fn flush(&mut self) -> io::Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data()
    }
}

/// Reads every record of a journal. Blank lines are skipped; anything else
/// that fails to parse is an error carrying the 1-based line number.
pub fn read_records(reader: impl BufRead) -> io::Result<Vec<JournalRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("journal line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
