//! JSON-lines dataset files: one header record, then condition and sample
//! records. Samples reference their condition by scenario id.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Condition, Dataset, Sample, SamplingConfig};
use crate::error::DatasetError;
use crate::network::NetworkTopology;

pub const DATASET_SCHEMA_VERSION: u32 = 1;
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const SAMPLES_CSV: &str = "samples.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub topology_hash: String,
    pub sensors: usize,
    pub boundary_samples: usize,
    pub horizon_s: f64,
    pub pipe_ids: Vec<String>,
    pub scenario_count: usize,
    pub sample_count: usize,
    pub sampling: SamplingConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header(DatasetHeader),
    Condition(Condition),
    Sample(Sample),
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum RecordRef<'a> {
    Header(&'a DatasetHeader),
    Condition(&'a Condition),
    Sample(&'a Sample),
}

impl Dataset {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), DatasetError> {
        let mut line = |r: RecordRef<'_>| -> Result<(), DatasetError> {
            serde_json::to_writer(&mut out, &r)?;
            out.write_all(b"\n")?;
            Ok(())
        };
        line(RecordRef::Header(&self.header))?;
        for c in &self.conditions {
            line(RecordRef::Condition(c))?;
        }
        for s in &self.samples {
            line(RecordRef::Sample(s))?;
        }
        Ok(())
    }

    /// Parses a dataset; when `topology` is given its hash must match the header.
    pub fn read_jsonl<R: BufRead>(input: R, topology: Option<&NetworkTopology>) -> Result<Self, DatasetError> {
        let mut header: Option<DatasetHeader> = None;
        let mut conditions = Vec::new();
        let mut samples = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let number = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line).map_err(|e| DatasetError::Format {
                line: number,
                reason: e.to_string(),
            })?;
            match (record, &header) {
                (Record::Header(h), None) => {
                    if h.schema_version != DATASET_SCHEMA_VERSION {
                        return Err(DatasetError::Version(h.schema_version));
                    }
                    if let Some(t) = topology {
                        let network = t.topology_hash();
                        if network != h.topology_hash {
                            return Err(DatasetError::TopologyMismatch {
                                file: h.topology_hash,
                                network,
                            });
                        }
                    }
                    header = Some(h);
                }
                (Record::Header(_), Some(_)) => {
                    return Err(DatasetError::Format {
                        line: number,
                        reason: "second header record".into(),
                    })
                }
                (_, None) => {
                    return Err(DatasetError::Format {
                        line: number,
                        reason: "first record must be the header".into(),
                    })
                }
                (Record::Condition(c), Some(_)) => conditions.push(c),
                (Record::Sample(s), Some(_)) => samples.push(s),
            }
        }
        let header = header.ok_or(DatasetError::Format {
            line: 0,
            reason: "empty dataset file".into(),
        })?;
        let dataset = Dataset {
            header,
            conditions,
            samples,
        };
        dataset.check_consistency()?;
        Ok(dataset)
    }

    fn check_consistency(&self) -> Result<(), DatasetError> {
        let bad = |reason: String| Err(DatasetError::Format { line: 0, reason });
        if self.conditions.len() != self.header.scenario_count || self.samples.len() != self.header.sample_count {
            return bad(format!(
                "header announces {} scenarios and {} samples, file has {} and {}",
                self.header.scenario_count,
                self.header.sample_count,
                self.conditions.len(),
                self.samples.len()
            ));
        }
        let ids: std::collections::HashSet<&str> = self.conditions.iter().map(|c| c.scenario_id.as_str()).collect();
        if ids.len() != self.conditions.len() {
            return bad("duplicate scenario id".into());
        }
        for s in &self.samples {
            if !ids.contains(s.scenario_id.as_str()) {
                return bad(format!("sample references unknown scenario `{}`", s.scenario_id));
            }
            if !(0.0..=1.0).contains(&s.target) {
                return bad(format!("target {} outside [0, 1]", s.target));
            }
        }
        Ok(())
    }

    /// Writes `samples.csv`: one row per sample with its split.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), DatasetError> {
        let split: std::collections::HashMap<&str, &str> = self
            .conditions
            .iter()
            .map(|c| (c.scenario_id.as_str(), c.split.as_str()))
            .collect();
        writeln!(out, "scenario_id,split,pipe_id,x_rel,t_rel,target")?;
        for s in &self.samples {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.scenario_id, split[s.scenario_id.as_str()], s.pipe_id, s.x_rel, s.t_rel, s.target
            )?;
        }
        Ok(())
    }

    /// Writes `dataset.jsonl` and `samples.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir)?;
        let mut jsonl = BufWriter::new(File::create(dir.join(DATASET_FILE))?);
        self.write_jsonl(&mut jsonl)?;
        jsonl.flush()?;
        let mut csv = BufWriter::new(File::create(dir.join(SAMPLES_CSV))?);
        self.write_csv(&mut csv)?;
        csv.flush()?;
        Ok(())
    }

    /// Loads from a dataset directory or a `.jsonl` file.
    pub fn load(path: &Path, topology: Option<&NetworkTopology>) -> Result<Self, DatasetError> {
        let file = if path.is_dir() { path.join(DATASET_FILE) } else { path.to_path_buf() };
        Self::read_jsonl(BufReader::new(File::open(file)?), topology)
    }
}
