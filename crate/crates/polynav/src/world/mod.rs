//! Procedural continuous 2D indoor worlds.
//!
//! A world is an occupancy grid at 0.05 m resolution with a fully occupied
//! border, room/corridor layout metadata, freestanding objects, sound
//! sources, and a per-cell texture field. Worlds are immutable once
//! generated and regenerate deterministically from `(seed, params)`, which
//! is also their serialized form. Rollout workers share worlds read-only;
//! agent pose and stepping state stay worker-local.

mod gen;
mod geodesic;
mod render;
#[cfg(test)]
mod tests;

pub use gen::{clearance_free, free_space_connected, generate_world};
pub use geodesic::DistanceField;
pub use render::{render_panorama, step, StepOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Occupancy grid resolution in meters.
pub const GRID_RES: f64 = 0.05;
/// Number of panoramic sub-views (30 degree sectors, counter-clockwise).
pub const NUM_SUBVIEWS: usize = 12;
/// Translation distance of one move action in meters.
pub const MOVE_STEP: f64 = 0.25;
/// Action ids 0..11 move toward the matching sub-view; 12 stops.
pub const STOP_ACTION: usize = 12;
pub const NUM_ACTIONS: usize = 13;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("world generation retry limit exceeded for seed {seed}")]
    RetryLimit { seed: u64 },
    #[error("invalid world params: {0}")]
    BadParams(String),
    #[error("position ({0:.2}, {1:.2}) is not in free space")]
    Occupied(f64, f64),
    #[error("points ({0:.2}, {1:.2}) and ({2:.2}, {3:.2}) are geodesically disconnected")]
    Disconnected(f64, f64, f64, f64),
}

pub type Result<T> = std::result::Result<T, WorldError>;

/// Dense row-major matrix of plain (non-differentiable) features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Boolean occupancy grid; `true` cells are blocked.
#[derive(Debug, Clone)]
pub struct GridMap {
    pub width: usize,
    pub height: usize,
    occupied: Vec<bool>,
}

impl GridMap {
    pub fn filled(width: usize, height: usize, occupied: bool) -> Self {
        GridMap {
            width,
            height,
            occupied: vec![occupied; width * height],
        }
    }

    #[inline]
    pub fn idx(&self, cx: usize, cy: usize) -> usize {
        cy * self.width + cx
    }

    #[inline]
    pub fn is_occupied_cell(&self, cx: usize, cy: usize) -> bool {
        cx >= self.width || cy >= self.height || self.occupied[self.idx(cx, cy)]
    }

    pub fn set_cell(&mut self, cx: usize, cy: usize, occupied: bool) {
        let i = self.idx(cx, cy);
        self.occupied[i] = occupied;
    }

    /// Cell coordinates containing a continuous point, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let cx = (x / GRID_RES) as usize;
        let cy = (y / GRID_RES) as usize;
        if cx >= self.width || cy >= self.height {
            None
        } else {
            Some((cx, cy))
        }
    }

    /// True when the continuous point lies in a free cell.
    pub fn is_free(&self, x: f64, y: f64) -> bool {
        match self.cell_of(x, y) {
            Some((cx, cy)) => !self.occupied[self.idx(cx, cy)],
            None => false,
        }
    }

    pub fn center_of(&self, cx: usize, cy: usize) -> (f64, f64) {
        ((cx as f64 + 0.5) * GRID_RES, (cy as f64 + 0.5) * GRID_RES)
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |cy| {
            (0..self.width).filter_map(move |cx| {
                if self.occupied[self.idx(cx, cy)] {
                    None
                } else {
                    Some((cx, cy))
                }
            })
        })
    }

    /// FNV-1a over the occupancy bits; used for determinism checks.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for &b in &self.occupied {
            h ^= b as u64 + 1;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= self.width as u64;
        h = h.wrapping_mul(0x100000001b3);
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoomKind {
    Room,
    Corridor,
}

/// Axis-aligned interior region in meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Room {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub kind: RoomKind,
}

impl Room {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub category: usize,
    pub x: f64,
    pub y: f64,
    pub footprint_radius: f64,
    pub emits_sound: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoundSource {
    pub x: f64,
    pub y: f64,
    pub waveform_seed: u64,
    pub category: usize,
}

/// Agent pose; sub-view 0 points along `heading`. Motion never rotates the
/// agent, so heading stays at its initial value (0: world-aligned views).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl AgentPose {
    pub fn at(x: f64, y: f64) -> Self {
        AgentPose {
            x,
            y,
            heading: 0.0,
        }
    }
}

/// One 360-degree observation: per-sub-view visual features, depth rays,
/// and binaural audio features. Sub-view 0 is heading-relative; views are
/// ordered counter-clockwise at 30 degree increments.
#[derive(Debug, Clone, PartialEq)]
pub struct Panorama {
    /// `[12, F_v]` hashed texture/object features.
    pub rgb: Mat,
    /// `[12, F_d]` ray distances across each sector, in `(0, max_range]`.
    pub depth: Mat,
    /// `[12, F_a]` per ear.
    pub audio_left: Mat,
    pub audio_right: Mat,
}

impl Panorama {
    pub fn audio_channel(&self, ch: usize) -> &Mat {
        if ch == 0 {
            &self.audio_left
        } else {
            &self.audio_right
        }
    }

    /// Mean ray distance of one sub-view.
    pub fn mean_depth(&self, subview: usize) -> f64 {
        let row = self.depth.row(subview);
        row.iter().sum::<f64>() / row.len() as f64
    }

    /// Total received amplitude over sub-views, channels, and features.
    pub fn total_audio_amplitude(&self) -> f64 {
        self.audio_left.data.iter().sum::<f64>() + self.audio_right.data.iter().sum::<f64>()
    }
}

/// Generation parameters; `(seed, params)` is the complete serialized form
/// of a world.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WorldParams {
    pub width_m: f64,
    pub height_m: f64,
    pub rooms_x: usize,
    pub rooms_y: usize,
    pub obstacles: usize,
    pub objects: usize,
    /// Number of object categories (semantic tags).
    pub categories: usize,
    /// Ambient sources placed at sounding objects.
    pub ambient_sources: usize,
    /// Depth clip range in meters.
    pub max_range: f64,
    /// Visual / depth / audio feature widths.
    pub f_v: usize,
    pub f_d: usize,
    pub f_a: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            width_m: 10.0,
            height_m: 8.0,
            rooms_x: 2,
            rooms_y: 2,
            obstacles: 4,
            objects: 10,
            categories: 8,
            ambient_sources: 1,
            max_range: 12.0,
            f_v: 16,
            f_d: 16,
            f_a: 8,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        if self.width_m < 6.0 || self.height_m < 6.0 {
            return Err(WorldError::BadParams(format!(
                "bounds {}x{} m below the 6 m minimum",
                self.width_m, self.height_m
            )));
        }
        if self.rooms_x == 0 || self.rooms_y == 0 {
            return Err(WorldError::BadParams("room count must be >= 1".into()));
        }
        if self.categories == 0 || self.objects == 0 {
            return Err(WorldError::BadParams(
                "need at least one object and category".into(),
            ));
        }
        Ok(())
    }
}

/// Serialized world reference: worlds regenerate from this manifest and are
/// never stored raw.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WorldManifest {
    pub seed: u64,
    pub params: WorldParams,
}

#[derive(Debug, Clone)]
pub struct World {
    pub id: u64,
    pub params: WorldParams,
    pub grid: GridMap,
    pub rooms: Vec<Room>,
    pub objects: Vec<ObjectInstance>,
    pub sound_sources: Vec<SoundSource>,
    /// Per-cell texture seeds for visual feature hashing.
    pub texture: Vec<u64>,
    /// Geodesic distance field per sound source, aligned with
    /// `sound_sources`; precomputed so rendering is O(1) per source.
    source_fields: Vec<DistanceField>,
}

impl World {
    pub fn manifest(&self) -> WorldManifest {
        WorldManifest {
            seed: self.id,
            params: self.params.clone(),
        }
    }

    /// World with one extra sound source (used to bind an audio target to a
    /// goal position). The original world is untouched.
    pub fn with_source(&self, src: SoundSource) -> Result<World> {
        let field = DistanceField::from_point(self, src.x, src.y)?;
        let mut w = self.clone();
        w.sound_sources.push(src);
        w.source_fields.push(field);
        Ok(w)
    }

    pub(crate) fn set_source_fields(&mut self, fields: Vec<DistanceField>) {
        self.source_fields = fields;
    }

    pub fn source_field(&self, i: usize) -> &DistanceField {
        &self.source_fields[i]
    }

    /// Shortest obstacle-avoiding path length between two free points.
    pub fn geodesic(&self, ax: f64, ay: f64, bx: f64, by: f64) -> Result<f64> {
        let field = DistanceField::from_point(self, ax, ay)?;
        field.to_point(self, bx, by)
    }

    pub fn texture_seed(&self, cx: usize, cy: usize) -> u64 {
        self.texture[cy * self.grid.width + cx]
    }

    /// Room index containing a point, if any.
    pub fn room_at(&self, x: f64, y: f64) -> Option<usize> {
        self.rooms.iter().position(|r| r.contains(x, y))
    }
}

/// SplitMix64; the deterministic hash behind texture and signature features.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// `n` deterministic features in [-1, 1] derived from a seed.
pub(crate) fn signed_features(seed: u64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut s = seed;
    for _ in 0..n {
        s = splitmix64(s);
        out.push((s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0);
    }
    out
}

/// `n` deterministic features in [0.2, 1.0]; used for audio signatures so
/// amplitudes stay positive.
pub(crate) fn positive_features(seed: u64, n: usize) -> Vec<f64> {
    signed_features(seed ^ 0xA5A5_5A5A_DEAD_BEEF, n)
        .into_iter()
        .map(|v| 0.6 + 0.4 * v)
        .collect()
}
