//! The permanent cache model and its `TOGS` export format.
//!
//! This is everything inference needs: the zero-shot branch against class
//! prompts plus a key-value cache over support global features, read through a
//! linear adapter. Nothing here knows the teacher exists.
//!
//! `TOGS` layout (little-endian): `"TOGS" | u32 version=1 | u32 D | u32 C |
//! u32 N | f64 τ | f64 α | f64 β | N×D keys | N×C values | D×D adapter`,
//! all blocks as row-major `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedbank::{EmbeddingBank, Episode};
use crate::error::{Error, Result};
use crate::numcore::{dot, l2_normalize, norm, Tensor2D, Var};

pub const STUDENT_MAGIC: &[u8; 4] = b"TOGS";
pub const STUDENT_VERSION: u32 = 1;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 5.5;
pub const DEFAULT_TAU: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheModel {
    /// `N×D` unit support features.
    pub keys: Tensor2D,
    /// `N×C` one-hot labels.
    pub values: Tensor2D,
    /// `D×D` adapter, applied as `W_A·z`.
    pub adapter: Tensor2D,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl CacheModel {
    pub fn new(
        keys: Tensor2D,
        values: Tensor2D,
        adapter: Tensor2D,
        alpha: f64,
        beta: f64,
        tau: f64,
    ) -> Result<Self> {
        let m = Self { keys, values, adapter, alpha, beta, tau };
        m.validate()?;
        Ok(m)
    }

    /// Training-free cache: identity adapter.
    pub fn tip_adapter(keys: Tensor2D, values: Tensor2D, alpha: f64, beta: f64, tau: f64) -> Result<Self> {
        let d = keys.cols();
        Self::new(keys, values, Tensor2D::identity(d), alpha, beta, tau)
    }

    pub fn dim(&self) -> usize {
        self.keys.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.values.cols()
    }

    pub fn num_supports(&self) -> usize {
        self.keys.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.keys.shape();
        if n == 0 || d == 0 || self.values.cols() == 0 {
            return Err(Error::Validation("empty cache".into()));
        }
        if self.values.rows() != n || self.adapter.shape() != (d, d) {
            return Err(Error::Validation(format!(
                "cache shapes disagree: keys {:?}, values {:?}, adapter {:?}",
                self.keys.shape(),
                self.values.shape(),
                self.adapter.shape()
            )));
        }
        for t in [&self.keys, &self.values, &self.adapter] {
            t.check_finite("cache model")?;
        }
        for j in 0..n {
            let k = norm(self.keys.row(j));
            if (k - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!("key {j} has norm {k}")));
            }
            let row = self.values.row(j);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            if ones != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Validation(format!("value row {j} is not one-hot")));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Validation(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        for (name, v) in [("beta", self.beta), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, d) = self.keys.shape();
        let c = self.values.cols();
        let mut out = Vec::with_capacity(44 + 8 * (n * d + n * c + d * d));
        out.extend_from_slice(STUDENT_MAGIC);
        for v in [STUDENT_VERSION, d as u32, c as u32, n as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.tau, self.alpha, self.beta] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for t in [&self.keys, &self.values, &self.adapter] {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_reader(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != STUDENT_MAGIC {
            return Err(Error::Format(format!("bad student magic {:?}", String::from_utf8_lossy(&magic))));
        }
        let version = read_u32(&mut r)?;
        if version != STUDENT_VERSION {
            return Err(Error::Format(format!("unsupported student version {version}")));
        }
        let d = read_u32(&mut r)? as usize;
        let c = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let tau = read_f64(&mut r)?;
        let alpha = read_f64(&mut r)?;
        let beta = read_f64(&mut r)?;
        let keys = read_block(&mut r, n, d)?;
        let values = read_block(&mut r, n, c)?;
        let adapter = read_block(&mut r, d, d)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after adapter".into()));
        }
        Self::new(keys, values, adapter, alpha, beta, tau)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_block(r: &mut impl Read, rows: usize, cols: usize) -> Result<Tensor2D> {
    let data = (0..rows * cols).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
    Tensor2D::new(rows, cols, data).map_err(|e| Error::Validation(e.to_string()))
}

pub fn save_student(model: &CacheModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&model.to_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_student(path: impl AsRef<Path>) -> Result<CacheModel> {
    CacheModel::from_reader(BufReader::new(File::open(path)?))
}

/// Keys are support global features, values their one-hot labels, both in
/// episode support order.
pub fn build_cache(bank: &EmbeddingBank, episode: &Episode) -> Result<(Tensor2D, Tensor2D)> {
    episode.validate(bank)?;
    let n = episode.support_ids.len();
    let keys = Tensor2D::from_fn(n, bank.dim(), |j, k| bank.global(episode.support_ids[j])[k]);
    let values = Tensor2D::from_fn(n, bank.num_classes(), |j, c| {
        if bank.label(episode.support_ids[j]) == c {
            1.0
        } else {
            0.0
        }
    });
    Ok((keys, values))
}

/// `τ·cos(z, t_c)` for every class; both sides are assumed unit norm.
pub fn zero_shot_logits(z: &[f64], prompts: &Tensor2D, tau: f64) -> Vec<f64> {
    (0..prompts.rows()).map(|c| tau * dot(z, prompts.row(c))).collect()
}

pub fn adapter_apply(adapter: &Tensor2D, z: &[f64]) -> Vec<f64> {
    (0..adapter.rows()).map(|i| dot(adapter.row(i), z)).collect()
}

/// `Σ_j exp(−β(1 − cos(az, K_j)))·V_j`.
pub fn cache_logits(az: &[f64], keys: &Tensor2D, values: &Tensor2D, beta: f64) -> Result<Vec<f64>> {
    let unit = l2_normalize(az)?;
    let mut out = vec![0.0; values.cols()];
    for j in 0..keys.rows() {
        let affinity = (-beta * (1.0 - dot(&unit, keys.row(j)))).exp();
        for (o, v) in out.iter_mut().zip(values.row(j)) {
            *o += affinity * v;
        }
    }
    Ok(out)
}

pub fn test_logits(z: &[f64], model: &CacheModel, prompts: &Tensor2D) -> Result<Vec<f64>> {
    let zs = zero_shot_logits(z, prompts, model.tau);
    let cache = cache_logits(&adapter_apply(&model.adapter, z), &model.keys, &model.values, model.beta)?;
    Ok(zs.iter().zip(&cache).map(|(a, b)| a + model.alpha * b).collect())
}

/// Test logits for each row of `features`, computed in parallel.
pub fn batch_test_logits(model: &CacheModel, prompts: &Tensor2D, features: &Tensor2D) -> Result<Tensor2D> {
    let rows = (0..features.rows())
        .into_par_iter()
        .map(|i| test_logits(features.row(i), model, prompts))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(Tensor2D::zeros(0, prompts.rows()));
    }
    Tensor2D::from_rows(&rows)
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Tensor2D, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels.iter().enumerate().filter(|&(i, &y)| logits.argmax_row(i) == y).count();
    hits as f64 / labels.len() as f64
}

/// Tape form of the cache branch for a batch `z` (`B×D`): `adapter` is the
/// trainable `D×D` map, keys and values are frozen.
pub fn cache_logits_var<'t>(
    z: Var<'t>,
    adapter: Var<'t>,
    keys: &Tensor2D,
    values: &Tensor2D,
    beta: f64,
) -> Result<Var<'t>> {
    let tape = z.tape();
    let az = z.matmul_nt(adapter)?.l2_normalize_rows()?;
    let sims = az.matmul_nt(tape.constant(keys.clone()))?;
    sims.add_scalar(-1.0).scale(beta).exp().matmul(tape.constant(values.clone()))
}
