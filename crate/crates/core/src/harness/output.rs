use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sweep::{CurvePoint, Record, SweepSpec};
use crate::error::Result;
use crate::scenario::Scenario;

pub fn write_records<W: Write>(records: &[Record], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record([
            "point", "variable", "value", "trial", "trial_seed", "method", "record", "group", "user", "estimator",
            "provenance", "x", "y", "note", "elapsed_ms",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curves<W: Write>(curves: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in curves {
        w.serialize(c)?;
    }
    if curves.is_empty() {
        w.write_record([
            "variable", "value", "method", "metric", "group", "estimator", "provenance", "mean", "stderr", "count",
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario_name: String,
    /// SHA-256 of the canonical scenario and sweep JSON.
    pub config_sha256: String,
    pub seed: u64,
    pub trials: usize,
    pub points: usize,
    pub records: usize,
    pub errors: usize,
    pub scenario: Scenario,
    pub sweep: SweepSpec,
}

impl Manifest {
    pub fn new(scenario: &Scenario, sweep: &SweepSpec, seed: u64, records: &[Record]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_string(scenario).expect("scenario serialises"));
        hasher.update(b"\n");
        hasher.update(serde_json::to_string(sweep).expect("sweep serialises"));
        let digest = hasher.finalize();
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            scenario_name: scenario.name.clone(),
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed,
            trials: sweep.trials,
            points: sweep.values.len(),
            records: records.len(),
            errors: records.iter().filter(|r| r.record == "error").count(),
            scenario: scenario.clone(),
            sweep: sweep.clone(),
        }
    }
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
