//! Append-only record store: one directory per lineage, one file pair per revision.
//!
//! ```text
//! <root>/<lineage>/r000001.record.json   machine report of the cycle
//! <root>/<lineage>/r000001.inputs.json   scenario, vote ledger and config it was run on
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::cycle::{CycleInputs, CycleRecord};
use crate::error::{PclError, Result};
use crate::scenario_io::{emit_record, parse_record};

#[derive(Debug, Clone)]
pub struct RecordStore {
    root: PathBuf,
}

fn revision_stem(revision: u32) -> String {
    format!("r{revision:06}")
}

fn parse_revision(file_name: &str) -> Option<u32> {
    file_name.strip_prefix('r')?.strip_suffix(".record.json")?.parse().ok()
}

impl RecordStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RecordStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn lineage_dir(&self, lineage: &str) -> Result<PathBuf> {
        let ok = !lineage.is_empty()
            && lineage != "."
            && lineage != ".."
            && lineage.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if !ok {
            return Err(PclError::Reference(format!("invalid lineage name {lineage:?}")));
        }
        Ok(self.root.join(lineage))
    }

    fn revisions(&self, lineage: &str) -> Result<Vec<u32>> {
        let dir = self.lineage_dir(lineage)?;
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut revisions: Vec<u32> = fs::read_dir(&dir)?
            .filter_map(|entry| entry.ok())
            .filter_map(|entry| parse_revision(&entry.file_name().to_string_lossy()))
            .collect();
        revisions.sort_unstable();
        Ok(revisions)
    }

    pub fn latest_revision(&self, lineage: &str) -> Result<Option<u32>> {
        Ok(self.revisions(lineage)?.last().copied())
    }

    /// Writes a record and its inputs; refuses to overwrite or go backwards.
    pub fn append(&self, record: &CycleRecord, inputs: &CycleInputs) -> Result<()> {
        if let Some(latest) = self.latest_revision(&record.lineage)? {
            if record.revision <= latest {
                return Err(PclError::State(format!(
                    "lineage {} already has revision {latest}; cannot append revision {}",
                    record.lineage, record.revision
                )));
            }
        }
        let dir = self.lineage_dir(&record.lineage)?;
        fs::create_dir_all(&dir)?;
        let stem = revision_stem(record.revision);
        let inputs_text = serde_json::to_string_pretty(inputs).map_err(|e| PclError::Consistency(e.to_string()))? + "\n";
        write_new(&dir.join(format!("{stem}.inputs.json")), &inputs_text)?;
        write_new(&dir.join(format!("{stem}.record.json")), &emit_record(record))?;
        Ok(())
    }

    pub fn load(&self, lineage: &str, revision: u32) -> Result<CycleRecord> {
        let path = self.lineage_dir(lineage)?.join(format!("{}.record.json", revision_stem(revision)));
        if !path.is_file() {
            return Err(PclError::Reference(format!("no record {lineage} revision {revision}")));
        }
        parse_record(&fs::read_to_string(path)?)
    }

    pub fn load_inputs(&self, lineage: &str, revision: u32) -> Result<CycleInputs> {
        let path = self.lineage_dir(lineage)?.join(format!("{}.inputs.json", revision_stem(revision)));
        if !path.is_file() {
            return Err(PclError::Reference(format!("no inputs for {lineage} revision {revision}")));
        }
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| PclError::Consistency(format!("corrupt inputs file: {e}")))
    }

    pub fn history(&self, lineage: &str) -> Result<Vec<CycleRecord>> {
        self.revisions(lineage)?.into_iter().map(|r| self.load(lineage, r)).collect()
    }

    /// Every lineage that has at least one record, sorted.
    pub fn lineages(&self) -> Result<Vec<String>> {
        if !self.root.is_dir() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.path().is_dir() && !self.revisions(&name).unwrap_or_default().is_empty() {
                out.push(name);
            }
        }
        out.sort();
        Ok(out)
    }
}

fn write_new(path: &Path, text: &str) -> Result<()> {
    let mut file = fs::OpenOptions::new().write(true).create_new(true).open(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}
