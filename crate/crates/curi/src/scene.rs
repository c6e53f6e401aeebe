//! Schema scenes: 2-5 objects with categorical properties on an 8x8 grid.

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{Color, Material, Shape, Size};
use crate::rng::substream;

pub const GRID: u8 = 8;
pub const DEFAULT_OBJECT_RANGE: (usize, usize) = (2, 5);

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("cannot place {0} objects on a {1}-cell grid without overlap")]
    InfeasibleRange(usize, usize),
    #[error("object count range {0}..={1} is empty")]
    EmptyRange(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub color: Color,
    pub shape: Shape,
    pub material: Material,
    pub size: Size,
    /// Grid column, 1-8.
    pub locx: u8,
    /// Grid row, 1-8.
    pub locy: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Scene invariants: object count within range, fields in-domain, and
    /// no two objects sharing a grid cell.
    pub fn is_valid(&self) -> bool {
        if self.objects.len() < DEFAULT_OBJECT_RANGE.0 || self.objects.len() > DEFAULT_OBJECT_RANGE.1
        {
            return false;
        }
        let mut cells: Vec<(u8, u8)> = self.objects.iter().map(|o| (o.locx, o.locy)).collect();
        cells.sort_unstable();
        let distinct = cells.windows(2).all(|w| w[0] != w[1]);
        distinct
            && self
                .objects
                .iter()
                .all(|o| (1..=GRID).contains(&o.locx) && (1..=GRID).contains(&o.locy))
    }
}

/// Samples one scene: object count uniform over the range, properties
/// uniform over their domains, grid cells without replacement.
pub fn sample_scene(
    rng: &mut impl Rng,
    id: u64,
    range: (usize, usize),
) -> Result<Scene, SceneError> {
    let (lo, hi) = range;
    if lo > hi {
        return Err(SceneError::EmptyRange(lo, hi));
    }
    let cells = (GRID as usize) * (GRID as usize);
    if hi > cells {
        return Err(SceneError::InfeasibleRange(hi, cells));
    }
    let count = rng.gen_range(lo..=hi);
    let positions = index_sample(rng, cells, count);
    let objects = positions
        .iter()
        .map(|cell| SceneObject {
            color: Color::ALL[rng.gen_range(0..Color::ALL.len())],
            shape: Shape::ALL[rng.gen_range(0..Shape::ALL.len())],
            material: Material::ALL[rng.gen_range(0..Material::ALL.len())],
            size: Size::ALL[rng.gen_range(0..Size::ALL.len())],
            locx: (cell % GRID as usize) as u8 + 1,
            locy: (cell / GRID as usize) as u8 + 1,
        })
        .collect();
    Ok(Scene { id, objects })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePool {
    pub seed: u64,
    pub scenes: Vec<Scene>,
}

impl ScenePool {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

pub const POOL_STREAM_TAG: &str = "scene_pool";

/// Builds a deterministic pool. Scene `i` comes from `substream(seed, i)`,
/// so pools of different sizes share prefixes and construction parallelizes
/// without affecting content.
pub fn build_pool(n: usize, seed: u64) -> ScenePool {
    let scenes: Vec<Scene> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, POOL_STREAM_TAG, i);
            sample_scene(&mut rng, i, DEFAULT_OBJECT_RANGE).expect("default range is feasible")
        })
        .collect();
    ScenePool { seed, scenes }
}
