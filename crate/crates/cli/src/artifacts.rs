use std::fmt::Write as _;
use std::path::Path;

use qhead_core::circuit::{CandidateDescriptor, CANDIDATES_PER_BLOCK};
use qhead_core::data::write_atomic;
use qhead_core::diffqas::{StructuralWeights, WeightSnapshot};
use qhead_core::head::HeadConfig;
use qhead_core::Block;
use serde::{Deserialize, Serialize};

use crate::config::parse_json;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub const ARCHITECTURE_FILE: &str = "architecture.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_ECHO_FILE: &str = "config-echo.json";
pub const PARAMS_FILE: &str = "params.json";
pub const SEARCH_SUMMARY_FILE: &str = "search-summary.json";
pub const PARAM_REPORT_FILE: &str = "param-report.json";
pub const DATASET_FILE: &str = "dataset.qdvr";
pub const ERROR_FILE: &str = "error.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockExport {
    pub block: Block,
    pub candidate_index: usize,
    pub weight: f64,
    pub descriptor: CandidateDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureExport {
    pub schema_version: u32,
    pub run_id: String,
    pub blocks: Vec<BlockExport>,
}

impl ArchitectureExport {
    pub fn from_search(
        run_id: String,
        sw: &StructuralWeights,
        arch: (&CandidateDescriptor, &CandidateDescriptor),
    ) -> Self {
        let entry = |block, desc: &CandidateDescriptor| BlockExport {
            block,
            candidate_index: desc.index(),
            weight: sw.block(block)[desc.index()],
            descriptor: *desc,
        };
        Self {
            schema_version: SCHEMA_VERSION,
            run_id,
            blocks: vec![entry(Block::Timestep, arch.0), entry(Block::Qff, arch.1)],
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("export serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        parse_json(text, "architecture")
    }

    /// Checks the schema invariants and returns the (timestep, QFF) pair.
    pub fn validate(&self, head: &HeadConfig) -> Result<(CandidateDescriptor, CandidateDescriptor), CliError> {
        let bad = |field: String, message: String| {
            Err(CliError::Schema {
                what: "architecture".into(),
                field,
                message,
            })
        };
        if self.schema_version != SCHEMA_VERSION {
            return bad("schema_version".into(), format!("expected {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        if self.blocks.len() != 2 {
            return bad("blocks".into(), format!("expected 2 entries, got {}", self.blocks.len()));
        }
        let mut found: [Option<CandidateDescriptor>; 2] = [None, None];
        for (i, b) in self.blocks.iter().enumerate() {
            let (slot, layers) = match b.block {
                Block::Timestep => (0, head.timestep_layers),
                Block::Qff => (1, head.qff_layers),
            };
            if found[slot].is_some() {
                return bad(format!("blocks[{i}].block"), format!("duplicate {} entry", b.block));
            }
            if b.candidate_index >= CANDIDATES_PER_BLOCK {
                return bad(format!("blocks[{i}].candidate_index"), format!("{} is not below 24", b.candidate_index));
            }
            if b.descriptor.index() != b.candidate_index {
                return bad(
                    format!("blocks[{i}].candidate_index"),
                    format!("descriptor {} has index {}", b.descriptor, b.descriptor.index()),
                );
            }
            if !(b.weight > 0.0 && b.weight <= 1.0) {
                return bad(format!("blocks[{i}].weight"), format!("{} is outside (0, 1]", b.weight));
            }
            if b.descriptor.layers() != layers {
                return bad(
                    format!("blocks[{i}].descriptor.layers"),
                    format!("{} block runs {layers} layers, got {}", b.block, b.descriptor.layers()),
                );
            }
            found[slot] = Some(b.descriptor);
        }
        match found {
            [Some(ts), Some(qff)] => Ok((ts, qff)),
            _ => bad("blocks".into(), "need one timestep and one qff entry".into()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_json(&crate::config::read_text(path)?)
    }
}

/// `epoch,block,candidate_index,weight`, one row per candidate per block per epoch.
pub fn trajectory_csv(trajectory: &[WeightSnapshot]) -> String {
    let mut out = String::from("epoch,block,candidate_index,weight\n");
    for snap in trajectory {
        for (block, weights) in [(Block::Timestep, &snap.ts), (Block::Qff, &snap.qff)] {
            for (i, w) in weights.iter().enumerate() {
                writeln!(out, "{},{},{},{}", snap.epoch, block, i, w).expect("string write");
            }
        }
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(write_atomic(path, text.as_bytes())?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}
