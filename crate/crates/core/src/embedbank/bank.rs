//! In-memory embedding bank and the `TOGB` binary format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "TOGB" | u32 version=1 | u32 D | u32 C | u32 M | u32 num_images
//! C×D f32 prompt rows
//! per image: u32 label | u8 split | u16 fg_count | fg_count × u16 | M×D f32 rows
//! ```
//!
//! A foreground count of zero means no metadata. Features are held as the
//! stored `f32` values; the `f64` views used for computation are re-normalized
//! once at construction.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{l2_normalize_rows, Tensor2D};

pub const BANK_MAGIC: &[u8; 4] = b"TOGB";
pub const BANK_VERSION: u32 = 1;
/// Allowed deviation of a stored row's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    SupportPool,
    Query,
}

impl Split {
    fn tag(self) -> u8 {
        match self {
            Split::SupportPool => 0,
            Split::Query => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Split::SupportPool),
            1 => Ok(Split::Query),
            other => Err(Error::Format(format!("unknown split tag {other}"))),
        }
    }
}

/// One image: label, split, optional planted-foreground view indices, and its
/// `M×D` stored features (row 0 is the global view).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub label: usize,
    pub split: Split,
    pub foreground: Option<Vec<u16>>,
    pub features: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingBank {
    dim: usize,
    num_classes: usize,
    patches_per_image: usize,
    prompts_raw: Vec<f32>,
    images: Vec<ImageRecord>,
    prompts: Tensor2D,
    features: Vec<Tensor2D>,
}

impl PartialEq for EmbeddingBank {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.num_classes == other.num_classes
            && self.patches_per_image == other.patches_per_image
            && self.prompts_raw == other.prompts_raw
            && self.images == other.images
    }
}

fn widen(rows: usize, cols: usize, raw: &[f32], what: &str) -> Result<Tensor2D> {
    let t = Tensor2D::new(rows, cols, raw.iter().map(|&v| f64::from(v)).collect())?;
    for r in 0..rows {
        let n = crate::numcore::norm(t.row(r));
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Validation(format!("{what} row {r} has norm {n}")));
        }
    }
    l2_normalize_rows(&t)
}

impl EmbeddingBank {
    /// Validates and assembles a bank from stored fields.
    pub fn new(
        dim: usize,
        num_classes: usize,
        patches_per_image: usize,
        prompts_raw: Vec<f32>,
        images: Vec<ImageRecord>,
    ) -> Result<Self> {
        if dim == 0 || num_classes == 0 || patches_per_image == 0 {
            return Err(Error::Validation(format!(
                "bank dimensions must be positive (D={dim}, C={num_classes}, M={patches_per_image})"
            )));
        }
        if prompts_raw.len() != num_classes * dim {
            return Err(Error::Validation("prompt block has the wrong size".into()));
        }
        let prompts = widen(num_classes, dim, &prompts_raw, "prompt")?;
        let mut has_query = vec![false; num_classes];
        let mut features = Vec::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if img.label >= num_classes {
                return Err(Error::Validation(format!("image {i} label {} out of range", img.label)));
            }
            if img.features.len() != patches_per_image * dim {
                return Err(Error::Validation(format!("image {i} feature block has the wrong size")));
            }
            if let Some(fg) = &img.foreground {
                if fg.iter().any(|&p| usize::from(p) >= patches_per_image) {
                    return Err(Error::Validation(format!("image {i} foreground index out of range")));
                }
            }
            if img.split == Split::Query {
                has_query[img.label] = true;
            }
            features.push(widen(patches_per_image, dim, &img.features, &format!("image {i} feature"))?);
        }
        if let Some(c) = has_query.iter().position(|&q| !q) {
            return Err(Error::Validation(format!("class {c} has no query image")));
        }
        Ok(Self { dim, num_classes, patches_per_image, prompts_raw, images, prompts, features })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn patches_per_image(&self) -> usize {
        self.patches_per_image
    }

    pub fn num_images(&self) -> usize {
        self.images.len()
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn image(&self, id: usize) -> &ImageRecord {
        &self.images[id]
    }

    /// Unit-norm class prompt embeddings, `C×D`.
    pub fn prompts(&self) -> &Tensor2D {
        &self.prompts
    }

    /// Unit-norm multi-scale features of image `id`, `M×D`.
    pub fn features(&self, id: usize) -> &Tensor2D {
        &self.features[id]
    }

    /// Global feature (view 0) of image `id`.
    pub fn global(&self, id: usize) -> &[f64] {
        self.features[id].row(0)
    }

    pub fn label(&self, id: usize) -> usize {
        self.images[id].label
    }

    pub fn ids_with_split(&self, split: Split) -> Vec<usize> {
        (0..self.images.len()).filter(|&i| self.images[i].split == split).collect()
    }

    pub fn query_ids(&self) -> Vec<usize> {
        self.ids_with_split(Split::Query)
    }

    /// Serializes to `TOGB` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.prompts_raw.len());
        out.extend_from_slice(BANK_MAGIC);
        for v in [
            BANK_VERSION,
            self.dim as u32,
            self.num_classes as u32,
            self.patches_per_image as u32,
            self.images.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.prompts_raw {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for img in &self.images {
            out.extend_from_slice(&(img.label as u32).to_le_bytes());
            out.push(img.split.tag());
            let fg = img.foreground.as_deref().unwrap_or(&[]);
            out.extend_from_slice(&(fg.len() as u16).to_le_bytes());
            for p in fg {
                out.extend_from_slice(&p.to_le_bytes());
            }
            for v in &img.features {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses `TOGB` bytes. Truncation surfaces as an I/O error.
    pub fn from_reader(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BANK_MAGIC {
            return Err(Error::Format(format!("bad bank magic {:?}", String::from_utf8_lossy(&magic))));
        }
        let version = read_u32(&mut r)?;
        if version != BANK_VERSION {
            return Err(Error::Format(format!("unsupported bank version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let num_classes = read_u32(&mut r)? as usize;
        let m = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let prompts_raw = read_f32s(&mut r, num_classes * dim)?;
        let mut images = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let label = read_u32(&mut r)? as usize;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let split = Split::from_tag(tag[0])?;
            let count = read_u16(&mut r)? as usize;
            let foreground = if count == 0 {
                None
            } else {
                Some((0..count).map(|_| read_u16(&mut r)).collect::<Result<Vec<_>>>()?)
            };
            let features = read_f32s(&mut r, m * dim)?;
            images.push(ImageRecord { label, split, foreground, features });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after last image".into()));
        }
        Self::new(dim, num_classes, m, prompts_raw, images)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(n.min(1 << 24));
    let mut b = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f32::from_le_bytes(b));
    }
    Ok(out)
}

pub fn save_bank(bank: &EmbeddingBank, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bank.to_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<EmbeddingBank> {
    EmbeddingBank::from_reader(BufReader::new(File::open(path)?))
}
