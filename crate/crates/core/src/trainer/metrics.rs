//! Metrics files and training checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train::{EpochRecord, Summary};
use crate::error::Result;
use crate::student::CacheModel;
use crate::teacher::TeacherParams;

/// Writes `epoch,loss,ce,focal,lr`, one row per epoch. Floats use Rust's
/// shortest round-trip formatting, so identical runs give identical files.
pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[EpochRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,loss,ce,focal,lr")?;
    for r in records {
        writeln!(w, "{},{},{},{},{}", r.epoch, r.loss, r.ce, r.focal, r.lr)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_json(path: impl AsRef<Path>, summary: &Summary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, summary)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Everything a run produced, teacher included. Only the student part is
/// ever exported for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub student: CacheModel,
    pub teacher: TeacherParams,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Self = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
        ck.student.validate()?;
        Ok(ck)
    }
}
