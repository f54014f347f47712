//! Precomputed embedding banks: layout, storage format, synthetic data and
//! episode sampling.

mod bank;
mod episode;
mod layout;
mod synthetic;

pub use bank::{
    load_bank, save_bank, EmbeddingBank, ImageRecord, Split, BANK_MAGIC, BANK_VERSION,
    NORM_TOLERANCE,
};
pub use episode::{sample_episode, Episode};
pub use layout::{multiscale_layout, PatchLayout, Rect, View, ViewKind};
pub use synthetic::{gen_synthetic, SyntheticSpec};
