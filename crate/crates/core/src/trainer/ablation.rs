//! Named ablation arms and the sweep runner.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, ViewSet};
use super::train::train;
use crate::embedbank::{sample_episode, EmbeddingBank};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    /// Full method: mixture CE plus focal teacher forcing.
    Default,
    /// Teacher detached (`δ = λ = 0`).
    Baseline,
    /// Mixture CE only (`λ = 0`).
    LossCe,
    /// Mixture CE plus plain CE on the graph branch (`γ = 0`).
    LossCeGraphCe,
    /// Keep this percentage of patch nodes.
    Pool(u8),
    Grid2x2,
    Grid3x3,
    GridMultiscale,
    NoMgt,
    /// Patch-only graph: no text nodes, hence no patch-text edges.
    NoText,
    /// Unimodal encoders reduced to their input projection.
    NoUnimodal,
    /// Every patch node pooled.
    NoFilter,
}

const ARMS: [Arm; 15] = [
    Arm::Default,
    Arm::Baseline,
    Arm::LossCe,
    Arm::LossCeGraphCe,
    Arm::Pool(25),
    Arm::Pool(50),
    Arm::Pool(75),
    Arm::Pool(100),
    Arm::Grid2x2,
    Arm::Grid3x3,
    Arm::GridMultiscale,
    Arm::NoMgt,
    Arm::NoText,
    Arm::NoUnimodal,
    Arm::NoFilter,
];

impl Arm {
    pub fn all() -> &'static [Arm] {
        &ARMS
    }

    pub fn name(&self) -> String {
        match self {
            Arm::Default => "default".into(),
            Arm::Baseline => "baseline".into(),
            Arm::LossCe => "loss_ce".into(),
            Arm::LossCeGraphCe => "loss_ce_graphce".into(),
            Arm::Pool(100) => "pool_all".into(),
            Arm::Pool(p) => format!("pool_{p}"),
            Arm::Grid2x2 => "grid_2x2".into(),
            Arm::Grid3x3 => "grid_3x3".into(),
            Arm::GridMultiscale => "grid_multiscale".into(),
            Arm::NoMgt => "no_mgt".into(),
            Arm::NoText => "no_text".into(),
            Arm::NoUnimodal => "no_unimodal".into(),
            Arm::NoFilter => "no_filter".into(),
        }
    }

    /// Comma-separated list of every arm name.
    pub fn catalog() -> String {
        ARMS.iter().map(Arm::name).collect::<Vec<_>>().join(", ")
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match *self {
            Arm::Default => {}
            Arm::Baseline => c = base.baseline(),
            Arm::LossCe => c.loss.lambda = 0.0,
            Arm::LossCeGraphCe => c.loss.gamma = 0.0,
            Arm::Pool(p) => c.teacher.keep = f64::from(p) / 100.0,
            Arm::Grid2x2 => c.views = ViewSet::Grid2x2,
            Arm::Grid3x3 => c.views = ViewSet::Grid3x3,
            Arm::GridMultiscale => c.views = ViewSet::Multiscale,
            Arm::NoMgt => c.teacher.use_mgt = false,
            Arm::NoText => c.teacher.use_text_nodes = false,
            Arm::NoUnimodal => c.teacher.layers = 0,
            Arm::NoFilter => c.teacher.keep = 1.0,
        }
        c
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ARMS.iter().copied().find(|a| a.name() == s).ok_or_else(|| Error::UnknownArm(s.to_string()))
    }
}

/// One trained cell of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub accuracy: f64,
    pub teacher_accuracy: Option<f64>,
    pub filter_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub shots: Vec<usize>,
    pub arms: Vec<String>,
    pub seeds: Vec<u64>,
    /// Indexed `[shot][arm][seed]`.
    pub cells: Vec<Vec<Vec<CellResult>>>,
}

impl AblationTable {
    /// Mean query accuracy over seeds.
    pub fn mean(&self, shot: usize, arm: usize) -> f64 {
        let runs = &self.cells[shot][arm];
        runs.iter().map(|c| c.accuracy).sum::<f64>() / runs.len() as f64
    }

    /// Mean filter precision over seeds, when every run reported one.
    pub fn mean_precision(&self, shot: usize, arm: usize) -> Option<f64> {
        let runs = &self.cells[shot][arm];
        let total = runs.iter().map(|c| c.filter_precision).sum::<Option<f64>>()?;
        Some(total / runs.len() as f64)
    }

    /// `shots,<arm>...` header, one row of seed-mean accuracies per K.
    pub fn to_csv(&self) -> String {
        let mut out = format!("shots,{}\n", self.arms.join(","));
        for (i, k) in self.shots.iter().enumerate() {
            let row: Vec<String> = (0..self.arms.len()).map(|a| self.mean(i, a).to_string()).collect();
            out.push_str(&format!("{k},{}\n", row.join(",")));
        }
        out
    }
}

/// Trains every `(K, arm, seed)` cell, `jobs` at a time. The episode and all
/// randomness of a cell depend only on its seed, so the table is the same for
/// any `jobs`.
pub fn run_ablation(
    bank: &EmbeddingBank,
    shots: &[usize],
    arms: &[Arm],
    seeds: &[u64],
    base: &TrainConfig,
    jobs: usize,
) -> Result<AblationTable> {
    if shots.is_empty() || arms.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one shot count, arm, and seed".into()));
    }
    let cells: Vec<(usize, Arm, u64)> = shots
        .iter()
        .flat_map(|&k| arms.iter().flat_map(move |&a| seeds.iter().map(move |&s| (k, a, s))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results = pool.install(|| {
        cells
            .par_iter()
            .map(|&(k, arm, seed)| {
                let episode = sample_episode(bank, k, seed)?;
                let mut cfg = arm.apply(base);
                cfg.seed = seed;
                let s = train(bank, &episode, &cfg)?.metrics.summary;
                Ok(CellResult {
                    accuracy: s.accuracy,
                    teacher_accuracy: s.teacher_accuracy,
                    filter_precision: s.filter_precision,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut it = results.into_iter();
    let table_cells = shots
        .iter()
        .map(|_| arms.iter().map(|_| seeds.iter().map(|_| it.next().expect("cell count")).collect()).collect())
        .collect();
    Ok(AblationTable {
        shots: shots.to_vec(),
        arms: arms.iter().map(Arm::name).collect(),
        seeds: seeds.to_vec(),
        cells: table_cells,
    })
}
