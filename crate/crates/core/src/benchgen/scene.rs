use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Shape::Square => "squares",
            Shape::Circle => "circles",
            Shape::Triangle => "triangles",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
    Cyan,
    White,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
        Color::Cyan,
        Color::White,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
            Color::Cyan => "cyan",
            Color::White => "white",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [255, 0, 0],
            Color::Green => [0, 255, 0],
            Color::Blue => [0, 0, 255],
            Color::Yellow => [255, 255, 0],
            Color::Purple => [128, 0, 128],
            Color::Orange => [255, 165, 0],
            Color::Cyan => [0, 255, 255],
            Color::White => [255, 255, 255],
        }
    }
}

/// A (color, shape) pair; unique within a scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Kind {
    pub color: Color,
    pub shape: Shape,
}

impl Kind {
    pub fn all() -> impl Iterator<Item = Kind> {
        Color::ALL
            .into_iter()
            .flat_map(|color| Shape::ALL.into_iter().map(move |shape| Kind { color, shape }))
    }

    pub fn phrase(self) -> String {
        format!("{} {}", self.color.name(), self.shape.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    /// `(row, col)` on the placement grid.
    pub cell: (usize, usize),
    /// Side of the bounding square in pixels.
    pub size: usize,
}

impl SceneObject {
    pub fn kind(&self) -> Kind {
        Kind {
            color: self.color,
            shape: self.shape,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// `(H, W)` in pixels.
    pub canvas: (usize, usize),
    pub rows: usize,
    pub cols: usize,
    pub max_objects: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            canvas: (256, 256),
            rows: 4,
            cols: 4,
            max_objects: 6,
        }
    }
}

pub const MIN_CELL: usize = 4;

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.canvas;
        if self.rows == 0 || self.cols == 0 || h < MIN_CELL * self.rows || w < MIN_CELL * self.cols {
            return Err(Error::Config(format!(
                "canvas {h}x{w} cannot hold a {}x{} grid of cells at least {MIN_CELL}px wide",
                self.rows, self.cols
            )));
        }
        if self.max_objects == 0 || self.max_objects > self.rows * self.cols {
            return Err(Error::Config(format!(
                "max_objects {} must be in 1..={}",
                self.max_objects,
                self.rows * self.cols
            )));
        }
        if self.max_objects > Color::ALL.len() * Shape::ALL.len() {
            return Err(Error::Config("more objects than distinct color/shape kinds".into()));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> (usize, usize) {
        (self.canvas.0 / self.rows, self.canvas.1 / self.cols)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub canvas: (usize, usize),
    /// `(R, C)` placement grid.
    pub grid: (usize, usize),
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

/// Pixel box `[y0, y1) × [x0, x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl BBox {
    pub fn overlaps(&self, o: &BBox) -> bool {
        self.y0 < o.y1 && o.y0 < self.y1 && self.x0 < o.x1 && o.x0 < self.x1
    }
}

impl SceneSpec {
    pub fn cell_size(&self) -> (usize, usize) {
        (self.canvas.0 / self.grid.0, self.canvas.1 / self.grid.1)
    }

    /// Objects are centered in their cell.
    pub fn bbox(&self, o: &SceneObject) -> BBox {
        let (ch, cw) = self.cell_size();
        let y0 = o.cell.0 * ch + (ch - o.size) / 2;
        let x0 = o.cell.1 * cw + (cw - o.size) / 2;
        BBox {
            y0,
            x0,
            y1: y0 + o.size,
            x1: x0 + o.size,
        }
    }

    pub fn find(&self, kind: Kind) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.kind() == kind)
    }

    /// Left-right mirror on the placement grid.
    pub fn mirrored(&self) -> SceneSpec {
        let c = self.grid.1;
        SceneSpec {
            objects: self
                .objects
                .iter()
                .map(|o| SceneObject {
                    cell: (o.cell.0, c - 1 - o.cell.1),
                    ..*o
                })
                .collect(),
            ..self.clone()
        }
    }

    /// Hash of the scene content, ignoring the seed.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut objs = self.objects.clone();
        objs.sort_by_key(|o| o.cell);
        let mut h = Sha256::new();
        for v in [self.canvas.0, self.canvas.1, self.grid.0, self.grid.1] {
            h.update((v as u64).to_le_bytes());
        }
        for o in &objs {
            h.update([o.shape as u8, o.color as u8]);
            for v in [o.cell.0, o.cell.1, o.size] {
                h.update((v as u64).to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

pub fn gen_scene(seed: u64, cfg: &SceneConfig) -> Result<SceneSpec> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=cfg.max_objects);
    let cells = sample(&mut rng, cfg.rows * cfg.cols, n).into_vec();
    let kinds: Vec<Kind> = Kind::all().collect();
    let picked = sample(&mut rng, kinds.len(), n).into_vec();
    let (ch, cw) = cfg.cell_size();
    let side = ch.min(cw);
    let (lo, hi) = (side.div_ceil(2), side * 7 / 8);
    let objects = cells
        .into_iter()
        .zip(picked)
        .map(|(c, k)| SceneObject {
            shape: kinds[k].shape,
            color: kinds[k].color,
            cell: (c / cfg.cols, c % cfg.cols),
            size: rng.random_range(lo..=hi),
        })
        .collect();
    Ok(SceneSpec {
        canvas: cfg.canvas,
        grid: (cfg.rows, cfg.cols),
        objects,
        seed,
    })
}
