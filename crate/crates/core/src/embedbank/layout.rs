//! Multi-scale crop layout over the unit square.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Global,
    Grid3x3,
    Grid2x2,
    VHalf,
    HHalf,
}

/// Axis-aligned rectangle `(x0, y0, x1, y1)` in unit-square coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// Area of the overlap with `other` (zero when they only share an edge).
    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub kind: ViewKind,
    pub rect: Rect,
}

/// Ordered list of crop views; index 0 is the global view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchLayout {
    pub views: Vec<View>,
}

fn grid(kind: ViewKind, n: usize) -> impl Iterator<Item = View> {
    let step = 1.0 / n as f64;
    (0..n).flat_map(move |row| {
        (0..n).map(move |col| View {
            kind,
            rect: Rect::new(
                col as f64 * step,
                row as f64 * step,
                (col + 1) as f64 * step,
                (row + 1) as f64 * step,
            ),
        })
    })
}

impl PatchLayout {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Indices of all views of `kind`, in layout order.
    pub fn indices_of(&self, kind: ViewKind) -> Vec<usize> {
        self.views
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }
}

/// The 18-view layout: global, 3×3 grid and 2×2 grid (row-major), vertical
/// halves (left, right), horizontal halves (top, bottom).
pub fn multiscale_layout() -> PatchLayout {
    let mut views = vec![View { kind: ViewKind::Global, rect: Rect::new(0.0, 0.0, 1.0, 1.0) }];
    views.extend(grid(ViewKind::Grid3x3, 3));
    views.extend(grid(ViewKind::Grid2x2, 2));
    views.push(View { kind: ViewKind::VHalf, rect: Rect::new(0.0, 0.0, 0.5, 1.0) });
    views.push(View { kind: ViewKind::VHalf, rect: Rect::new(0.5, 0.0, 1.0, 1.0) });
    views.push(View { kind: ViewKind::HHalf, rect: Rect::new(0.0, 0.0, 1.0, 0.5) });
    views.push(View { kind: ViewKind::HHalf, rect: Rect::new(0.0, 0.5, 1.0, 1.0) });
    PatchLayout { views }
}
