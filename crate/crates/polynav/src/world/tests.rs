use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn single_room_params() -> WorldParams {
    WorldParams {
        rooms_x: 1,
        rooms_y: 1,
        obstacles: 0,
        objects: 4,
        width_m: 8.0,
        height_m: 6.0,
        ..WorldParams::default()
    }
}

/// Queue-based label-correcting shortest path (SPFA); deliberately a
/// different algorithm and data structure from the production Dijkstra so
/// the two form an independent pair. Works on an arbitrary resolution so it
/// doubles as the fine-grid oracle.
pub(crate) fn spfa_oracle(
    world: &World,
    ax: f64,
    ay: f64,
    bx: f64,
    by: f64,
    res: f64,
) -> Option<f64> {
    let w = (world.params.width_m / res).round() as usize;
    let h = (world.params.height_m / res).round() as usize;
    let occ = |cx: usize, cy: usize| -> bool {
        // Sample the underlying continuous world at this finer cell center.
        let x = (cx as f64 + 0.5) * res;
        let y = (cy as f64 + 0.5) * res;
        !world.grid.is_free(x, y)
    };
    let cell = |x: f64, y: f64| -> Option<(usize, usize)> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let cx = (x / res) as usize;
        let cy = (y / res) as usize;
        if cx < w && cy < h {
            Some((cx, cy))
        } else {
            None
        }
    };
    let (sx, sy) = cell(ax, ay)?;
    let (tx, ty) = cell(bx, by)?;
    if occ(sx, sy) || occ(tx, ty) {
        return None;
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let sqrt5 = 5f64.sqrt();
    let moves: Vec<(i32, i32, f64)> = vec![
        (1, 0, 1.0),
        (-1, 0, 1.0),
        (0, 1, 1.0),
        (0, -1, 1.0),
        (1, 1, sqrt2),
        (1, -1, sqrt2),
        (-1, 1, sqrt2),
        (-1, -1, sqrt2),
        (1, 2, sqrt5),
        (1, -2, sqrt5),
        (-1, 2, sqrt5),
        (-1, -2, sqrt5),
        (2, 1, sqrt5),
        (2, -1, sqrt5),
        (-2, 1, sqrt5),
        (-2, -1, sqrt5),
    ];
    let mut dist = vec![f64::INFINITY; w * h];
    let mut queue = std::collections::VecDeque::new();
    dist[sy * w + sx] = 0.0;
    queue.push_back((sx, sy));
    while let Some((cx, cy)) = queue.pop_front() {
        let d = dist[cy * w + cx];
        for &(dx, dy, cost) in &moves {
            let nx = cx as i32 + dx;
            let ny = cy as i32 + dy;
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if occ(nx, ny) {
                continue;
            }
            if dx != 0 && dy != 0 {
                let g1 = (cx as i32 + dx.signum(), cy as i32);
                let g2 = (cx as i32, cy as i32 + dy.signum());
                let g3 = (cx as i32 + dx.signum(), cy as i32 + dy.signum());
                let guards: &[(i32, i32)] = if dx.abs() + dy.abs() == 2 {
                    &[g1, g2]
                } else if dx.abs() == 2 {
                    &[g1, g3]
                } else {
                    &[g2, g3]
                };
                if guards.iter().any(|&(gx, gy)| {
                    gx < 0 || gy < 0 || gx as usize >= w || gy as usize >= h
                        || occ(gx as usize, gy as usize)
                }) {
                    continue;
                }
            }
            let nd = d + cost * res;
            if nd + 1e-12 < dist[ny * w + nx] {
                dist[ny * w + nx] = nd;
                queue.push_back((nx, ny));
            }
        }
    }
    let d = dist[ty * w + tx];
    d.is_finite().then_some(d)
}

fn sample_free(world: &World, rng: &mut ChaCha8Rng) -> (f64, f64) {
    loop {
        let x = rng.random_range(0.0..world.params.width_m);
        let y = rng.random_range(0.0..world.params.height_m);
        if clearance_free(&world.grid, x, y, 0.1) {
            return (x, y);
        }
    }
}

#[test]
fn single_room_world_is_one_rectangle() {
    let world = generate_world(1, &single_room_params()).unwrap();
    assert_eq!(world.rooms.len(), 1);
    let r = &world.rooms[0];
    // Every free cell lies inside the room rectangle and vice versa.
    for (cx, cy) in world.grid.free_cells() {
        let (x, y) = world.grid.center_of(cx, cy);
        assert!(r.contains(x, y), "free cell outside room at ({x},{y})");
    }
    let mut x = r.x0 + GRID_RES;
    while x < r.x1 - GRID_RES {
        let mut y = r.y0 + GRID_RES;
        while y < r.y1 - GRID_RES {
            assert!(world.grid.is_free(x, y));
            y += 0.5;
        }
        x += 0.5;
    }
}

#[test]
fn same_seed_same_occupancy_hash() {
    let params = WorldParams::default();
    let a = generate_world(123, &params).unwrap();
    let b = generate_world(123, &params).unwrap();
    assert_eq!(a.grid.content_hash(), b.grid.content_hash());
    let c = generate_world(124, &params).unwrap();
    assert_ne!(a.grid.content_hash(), c.grid.content_hash());
}

#[test]
fn hundred_seeds_pass_connectivity_flood_fill() {
    let params = WorldParams::default();
    for seed in 0..100 {
        let world = generate_world(seed, &params).unwrap();
        assert!(
            free_space_connected(&world.grid),
            "seed {seed} produced disconnected free space"
        );
        assert!(!world.objects.is_empty());
        // Border closed.
        for cx in 0..world.grid.width {
            assert!(world.grid.is_occupied_cell(cx, 0));
            assert!(world.grid.is_occupied_cell(cx, world.grid.height - 1));
        }
        for cy in 0..world.grid.height {
            assert!(world.grid.is_occupied_cell(0, cy));
            assert!(world.grid.is_occupied_cell(world.grid.width - 1, cy));
        }
        // Objects and sources in free space.
        for o in &world.objects {
            assert!(world.grid.is_free(o.x, o.y));
        }
        for s in &world.sound_sources {
            assert!(world.grid.is_free(s.x, s.y));
        }
    }
}

#[test]
fn world_manifest_round_trips_and_regenerates() {
    let params = WorldParams::default();
    let world = generate_world(77, &params).unwrap();
    let json = serde_json::to_string(&world.manifest()).unwrap();
    let manifest: WorldManifest = serde_json::from_str(&json).unwrap();
    let again = generate_world(manifest.seed, &manifest.params).unwrap();
    assert_eq!(world.grid.content_hash(), again.grid.content_hash());
}

#[test]
fn depth_one_meter_from_wall() {
    let world = generate_world(1, &single_room_params()).unwrap();
    let r = world.rooms[0].clone();
    // Face the east wall from one meter away (sub-view 0 points along +x).
    let pose = AgentPose::at(r.x1 - 1.0, (r.y0 + r.y1) / 2.0);
    let pano = render_panorama(&world, &pose).unwrap();
    let d = pano.mean_depth(0);
    // Rays fan over +/-15 degrees, so the sector mean sits slightly above
    // the perpendicular distance; both stay within grid tolerance.
    assert!((d - 1.0).abs() < 0.07, "mean depth {d}");
    let straight = pano.depth.get(0, world.params.f_d / 2);
    assert!((straight - 1.0).abs() < GRID_RES + 1e-9, "center ray {straight}");
}

#[test]
fn colocated_source_maxes_both_channels() {
    let world = generate_world(5, &single_room_params()).unwrap();
    let r = world.rooms[0].clone();
    let (cx, cy) = r.center();
    let src = SoundSource {
        x: cx,
        y: cy,
        waveform_seed: 99,
        category: 2,
    };
    let world = world.with_source(src.clone()).unwrap();
    let pano = render_panorama(&world, &AgentPose::at(cx, cy)).unwrap();
    let sig = positive_features(splitmix64(99 ^ (2u64) << 17), world.params.f_a);
    let idx = world.sound_sources.len() - 1;
    let _ = idx;
    for k in 0..NUM_SUBVIEWS {
        for f in 0..world.params.f_a {
            // The colocated source contributes its full signature to both
            // ears in every sub-view (other ambient sources only add).
            assert!(pano.audio_left.get(k, f) >= sig[f] - 1e-12);
            assert!(pano.audio_right.get(k, f) >= sig[f] - 1e-12);
        }
    }
}

#[test]
fn source_on_the_left_louder_in_left_channel() {
    let mut params = single_room_params();
    params.ambient_sources = 0;
    let world = generate_world(6, &params).unwrap();
    let r = world.rooms[0].clone();
    let (cx, cy) = r.center();
    // Heading 0 looks along +x; the left ear points toward +y.
    let world = world
        .with_source(SoundSource {
            x: cx,
            y: cy + 1.2,
            waveform_seed: 7,
            category: 1,
        })
        .unwrap();
    let pano = render_panorama(&world, &AgentPose::at(cx, cy)).unwrap();
    for k in 0..NUM_SUBVIEWS {
        let l: f64 = pano.audio_left.row(k).iter().sum();
        let rch: f64 = pano.audio_right.row(k).iter().sum();
        assert!(l > rch, "sub-view {k}: left {l} <= right {rch}");
    }
}

#[test]
fn render_is_deterministic() {
    let world = generate_world(9, &WorldParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, y) = sample_free(&world, &mut rng);
    let pose = AgentPose::at(x, y);
    let a = render_panorama(&world, &pose).unwrap();
    let b = render_panorama(&world, &pose).unwrap();
    assert_eq!(a, b);
}

#[test]
fn render_rejects_occupied_pose() {
    let world = generate_world(9, &WorldParams::default()).unwrap();
    let err = render_panorama(&world, &AgentPose::at(0.01, 0.01)).unwrap_err();
    assert!(matches!(err, WorldError::Occupied(_, _)));
}

#[test]
fn step_moves_quarter_meter_in_open_space() {
    let world = generate_world(1, &single_room_params()).unwrap();
    let (cx, cy) = world.rooms[0].center();
    let pose = AgentPose::at(cx, cy);
    let out = step(&world, &pose, 0);
    assert!(!out.collided);
    assert!((out.pose.x - (cx + MOVE_STEP)).abs() < 1e-9);
    assert!((out.pose.y - cy).abs() < 1e-9);
}

#[test]
fn stop_leaves_pose_unchanged() {
    let world = generate_world(1, &single_room_params()).unwrap();
    let (cx, cy) = world.rooms[0].center();
    let pose = AgentPose::at(cx, cy);
    let out = step(&world, &pose, STOP_ACTION);
    assert_eq!(out.pose, pose);
    assert!(!out.collided);
}

#[test]
fn blocked_step_clips_at_wall_and_flags_collision() {
    let world = generate_world(1, &single_room_params()).unwrap();
    let r = world.rooms[0].clone();
    // Wall 0.1 m ahead along +x (ray-clip oracle: displacement can never
    // exceed the free distance to the wall).
    let pose = AgentPose::at(r.x1 - 0.1, (r.y0 + r.y1) / 2.0);
    let out = step(&world, &pose, 0);
    assert!(out.collided);
    let moved = out.pose.x - pose.x;
    assert!(moved <= 0.1 + 1e-9, "moved {moved}");
    assert!(world.grid.is_free(out.pose.x, out.pose.y));
}

#[test]
fn geodesic_zero_for_same_point() {
    let world = generate_world(1, &single_room_params()).unwrap();
    let (cx, cy) = world.rooms[0].center();
    assert_eq!(world.geodesic(cx, cy, cx, cy).unwrap(), 0.0);
}

#[test]
fn geodesic_of_straight_line_close_to_euclidean() {
    // Free 3-4-5 line inside a large empty room: expect 5.0 within 2%.
    let params = WorldParams {
        rooms_x: 1,
        rooms_y: 1,
        obstacles: 0,
        objects: 1,
        width_m: 8.0,
        height_m: 8.0,
        ..WorldParams::default()
    };
    let world = generate_world(1, &params).unwrap();
    let r = world.rooms[0].clone();
    let (ax, ay) = (r.x0 + 0.5, r.y0 + 0.5);
    let d = world.geodesic(ax, ay, ax + 3.0, ay + 4.0).unwrap();
    assert!((d - 5.0).abs() / 5.0 < 0.02, "geodesic {d}");
    assert!(d >= 5.0 - 2.0 * GRID_RES, "below Euclidean: {d}");
}

#[test]
fn geodesic_detour_matches_independent_oracle() {
    // A U-shaped wall forcing a detour.
    let params = single_room_params();
    let mut world = generate_world(3, &params).unwrap();
    let r = world.rooms[0].clone();
    let (cx, cy) = r.center();
    // Build three wall segments forming a U open toward +y.
    let mut wall = |x0: f64, y0: f64, x1: f64, y1: f64| {
        let (c0x, c0y) = ((x0 / GRID_RES) as usize, (y0 / GRID_RES) as usize);
        let (c1x, c1y) = ((x1 / GRID_RES) as usize, (y1 / GRID_RES) as usize);
        for cyy in c0y..=c1y {
            for cxx in c0x..=c1x {
                world.grid.set_cell(cxx, cyy, true);
            }
        }
    };
    wall(cx - 1.0, cy - 1.0, cx + 1.0, cy - 0.9);
    wall(cx - 1.0, cy - 1.0, cx - 0.9, cy + 1.0);
    wall(cx + 0.9, cy - 1.0, cx + 1.0, cy + 1.0);
    world.set_source_fields(vec![]);
    let mut w2 = world.clone();
    w2.sound_sources.clear();
    let (ax, ay) = (cx, cy); // inside the U
    let (bx, by) = (cx, cy - 1.5); // below the U: must walk around
    let got = w2.geodesic(ax, ay, bx, by).unwrap();
    let oracle = spfa_oracle(&w2, ax, ay, bx, by, GRID_RES).unwrap();
    let diag = GRID_RES * std::f64::consts::SQRT_2;
    assert!((got - oracle).abs() <= diag, "got {got}, oracle {oracle}");
    assert!(got > 2.5, "detour should be much longer than 1.5 m: {got}");
}

#[test]
fn geodesic_symmetry_and_lower_bound() {
    let params = WorldParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for seed in [11u64, 22, 33] {
        let world = generate_world(seed, &params).unwrap();
        for _ in 0..10 {
            let (ax, ay) = sample_free(&world, &mut rng);
            let (bx, by) = sample_free(&world, &mut rng);
            let ab = world.geodesic(ax, ay, bx, by).unwrap();
            let ba = world.geodesic(bx, by, ax, ay).unwrap();
            assert!((ab - ba).abs() < 1e-9, "asymmetry {ab} vs {ba}");
            let euclid = (ax - bx).hypot(ay - by);
            // Cell-center snapping can shave at most about one diagonal
            // per endpoint.
            let eps_grid = 2.0 * GRID_RES * std::f64::consts::SQRT_2;
            assert!(ab >= euclid - eps_grid, "geodesic {ab} < euclid {euclid}");
        }
    }
}

#[test]
fn geodesic_disconnected_pair_is_error() {
    let params = single_room_params();
    let mut world = generate_world(4, &params).unwrap();
    // Seal off a corner cell region completely.
    let r = world.rooms[0].clone();
    let (px, py) = (r.x0 + 0.3, r.y0 + 0.3);
    let (c0x, c0y) = ((r.x0 / GRID_RES) as usize, (r.y0 / GRID_RES) as usize);
    for i in 0..=14 {
        world.grid.set_cell(c0x + 14, c0y + i, true);
        world.grid.set_cell(c0x + i, c0y + 14, true);
    }
    world.set_source_fields(vec![]);
    let mut w2 = world.clone();
    w2.sound_sources.clear();
    let (cx, cy) = r.center();
    let err = w2.geodesic(px, py, cx, cy).unwrap_err();
    assert!(matches!(err, WorldError::Disconnected(..)));
}

#[test]
fn audio_amplitude_monotone_in_source_distance() {
    let mut params = single_room_params();
    params.ambient_sources = 0;
    params.width_m = 9.0;
    let base = generate_world(8, &params).unwrap();
    let r = base.rooms[0].clone();
    let src = SoundSource {
        x: r.x1 - 0.5,
        y: (r.y0 + r.y1) / 2.0,
        waveform_seed: 42,
        category: 3,
    };
    let world = base.with_source(src).unwrap();
    let y = (r.y0 + r.y1) / 2.0 + 0.3;
    let mut last = -f64::INFINITY;
    let mut x = r.x0 + 0.5;
    // Walking straight toward the only source: total amplitude never drops.
    while x < r.x1 - 0.6 {
        let pano = render_panorama(&world, &AgentPose::at(x, y)).unwrap();
        let amp = pano.total_audio_amplitude();
        assert!(
            amp >= last - 1e-9,
            "amplitude dropped from {last} to {amp} at x={x}"
        );
        last = amp;
        x += 0.25;
    }
}
