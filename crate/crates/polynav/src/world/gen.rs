//! Deterministic world generation: a room grid with door openings, random
//! interior obstacles, objects, and ambient sound sources, retried until
//! the free space is a single connected region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::geodesic::DistanceField;
use super::{
    splitmix64, GridMap, ObjectInstance, Result, Room, RoomKind, SoundSource, World, WorldError,
    WorldParams, GRID_RES,
};

const WALL_CELLS: usize = 2; // 0.10 m interior walls
const DOOR_WIDTH_M: f64 = 1.0;
const RETRY_LIMIT: usize = 32;

pub fn generate_world(seed: u64, params: &WorldParams) -> Result<World> {
    params.validate()?;
    for attempt in 0..RETRY_LIMIT {
        let attempt_seed = splitmix64(seed ^ (attempt as u64) << 32);
        if let Some(world) = try_generate(seed, attempt_seed, params) {
            return Ok(world);
        }
    }
    Err(WorldError::RetryLimit { seed })
}

fn try_generate(id: u64, attempt_seed: u64, params: &WorldParams) -> Option<World> {
    let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed);
    let width = (params.width_m / GRID_RES).round() as usize;
    let height = (params.height_m / GRID_RES).round() as usize;
    let mut grid = GridMap::filled(width, height, true);

    // Room grid with walls between rooms and along the border.
    let rx = params.rooms_x;
    let ry = params.rooms_y;
    let cell_w = (width - WALL_CELLS * (rx + 1)) / rx;
    let cell_h = (height - WALL_CELLS * (ry + 1)) / ry;
    let mut rooms = Vec::new();
    for gy in 0..ry {
        for gx in 0..rx {
            let x0 = WALL_CELLS + gx * (cell_w + WALL_CELLS);
            let y0 = WALL_CELLS + gy * (cell_h + WALL_CELLS);
            for cy in y0..y0 + cell_h {
                for cx in x0..x0 + cell_w {
                    grid.set_cell(cx, cy, false);
                }
            }
            let (w_m, h_m) = (cell_w as f64 * GRID_RES, cell_h as f64 * GRID_RES);
            let aspect = w_m.max(h_m) / w_m.min(h_m);
            rooms.push(Room {
                x0: x0 as f64 * GRID_RES,
                y0: y0 as f64 * GRID_RES,
                x1: (x0 + cell_w) as f64 * GRID_RES,
                y1: (y0 + cell_h) as f64 * GRID_RES,
                kind: if aspect > 2.2 {
                    RoomKind::Corridor
                } else {
                    RoomKind::Room
                },
            });
        }
    }

    // Door openings between horizontally and vertically adjacent rooms.
    let door_cells = (DOOR_WIDTH_M / GRID_RES) as usize;
    for gy in 0..ry {
        for gx in 0..rx {
            if gx + 1 < rx {
                let wall_x0 = WALL_CELLS + gx * (cell_w + WALL_CELLS) + cell_w;
                let y0 = WALL_CELLS + gy * (cell_h + WALL_CELLS);
                let off = rng.random_range(0..cell_h.saturating_sub(door_cells).max(1));
                for cy in y0 + off..(y0 + off + door_cells).min(y0 + cell_h) {
                    for cx in wall_x0..wall_x0 + WALL_CELLS {
                        grid.set_cell(cx, cy, false);
                    }
                }
            }
            if gy + 1 < ry {
                let wall_y0 = WALL_CELLS + gy * (cell_h + WALL_CELLS) + cell_h;
                let x0 = WALL_CELLS + gx * (cell_w + WALL_CELLS);
                let off = rng.random_range(0..cell_w.saturating_sub(door_cells).max(1));
                for cx in x0 + off..(x0 + off + door_cells).min(x0 + cell_w) {
                    for cy in wall_y0..wall_y0 + WALL_CELLS {
                        grid.set_cell(cx, cy, false);
                    }
                }
            }
        }
    }

    // Interior obstacle blocks.
    for _ in 0..params.obstacles {
        let room = &rooms[rng.random_range(0..rooms.len())];
        let ow = rng.random_range(0.3..0.8);
        let oh = rng.random_range(0.3..0.8);
        let ox = rng.random_range(room.x0..(room.x1 - ow).max(room.x0 + 0.01));
        let oy = rng.random_range(room.y0..(room.y1 - oh).max(room.y0 + 0.01));
        let (c0x, c0y) = ((ox / GRID_RES) as usize, (oy / GRID_RES) as usize);
        let (c1x, c1y) = (
            (((ox + ow) / GRID_RES) as usize).min(width - 1),
            (((oy + oh) / GRID_RES) as usize).min(height - 1),
        );
        for cy in c0y..=c1y {
            for cx in c0x..=c1x {
                grid.set_cell(cx, cy, true);
            }
        }
    }

    if !free_space_connected(&grid) {
        return None;
    }

    // Objects in free space with wall clearance.
    let mut objects = Vec::new();
    let mut guard = 0;
    while objects.len() < params.objects {
        guard += 1;
        if guard > 10_000 {
            return None;
        }
        let x = rng.random_range(0.0..params.width_m);
        let y = rng.random_range(0.0..params.height_m);
        if !clearance_free(&grid, x, y, 0.15) {
            continue;
        }
        objects.push(ObjectInstance {
            category: rng.random_range(0..params.categories),
            x,
            y,
            footprint_radius: rng.random_range(0.15..0.3),
            emits_sound: false,
        });
    }
    // Every category should appear somewhere so tag goals stay samplable.
    for (i, obj) in objects.iter_mut().enumerate() {
        if i < params.categories {
            obj.category = i;
        }
    }

    // Ambient sources sit at sounding objects of matching category.
    let mut sound_sources = Vec::new();
    for k in 0..params.ambient_sources.min(objects.len()) {
        let idx = rng.random_range(0..objects.len());
        let obj = &mut objects[idx];
        obj.emits_sound = true;
        sound_sources.push(SoundSource {
            x: obj.x,
            y: obj.y,
            waveform_seed: splitmix64(attempt_seed ^ (k as u64 + 1)),
            category: obj.category,
        });
    }

    let texture: Vec<u64> = (0..width * height)
        .map(|i| splitmix64(id ^ (i as u64).wrapping_mul(0x9E37_79B9)))
        .collect();

    let mut world = World {
        id,
        params: params.clone(),
        grid,
        rooms,
        objects,
        sound_sources,
        texture,
        source_fields: Vec::new(),
    };
    let fields: Option<Vec<DistanceField>> = world
        .sound_sources
        .iter()
        .map(|s| DistanceField::from_point(&world, s.x, s.y).ok())
        .collect();
    world.set_source_fields(fields?);
    Some(world)
}

/// Flood fill (4-connected) over free cells; true when one region covers
/// all of them.
pub fn free_space_connected(grid: &GridMap) -> bool {
    let total_free = grid.free_cells().count();
    if total_free == 0 {
        return false;
    }
    let start = grid.free_cells().next().unwrap();
    let mut seen = vec![false; grid.width * grid.height];
    let mut stack = vec![start];
    seen[grid.idx(start.0, start.1)] = true;
    let mut count = 0;
    while let Some((cx, cy)) = stack.pop() {
        count += 1;
        let neighbors = [
            (cx.wrapping_sub(1), cy),
            (cx + 1, cy),
            (cx, cy.wrapping_sub(1)),
            (cx, cy + 1),
        ];
        for (nx, ny) in neighbors {
            if nx < grid.width && ny < grid.height && !grid.is_occupied_cell(nx, ny) {
                let i = grid.idx(nx, ny);
                if !seen[i] {
                    seen[i] = true;
                    stack.push((nx, ny));
                }
            }
        }
    }
    count == total_free
}

/// Free with a square clearance margin around the point.
pub fn clearance_free(grid: &GridMap, x: f64, y: f64, margin: f64) -> bool {
    let mut dx = -margin;
    while dx <= margin {
        let mut dy = -margin;
        while dy <= margin {
            if !grid.is_free(x + dx, y + dy) {
                return false;
            }
            dy += GRID_RES;
        }
        dx += GRID_RES;
    }
    true
}
