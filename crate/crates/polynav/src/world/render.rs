//! Panoramic observation rendering and agent kinematics.

use std::f64::consts::TAU;

use super::{
    positive_features, signed_features, splitmix64, AgentPose, Mat, Panorama, Result, World,
    WorldError, GRID_RES, MOVE_STEP, NUM_SUBVIEWS, STOP_ACTION,
};

const RAY_STEP: f64 = GRID_RES / 2.0;
const MIN_DEPTH: f64 = GRID_RES / 2.0;
/// A source within this range of the agent counts as colocated and is
/// heard omnidirectionally at full gain on both ears.
const COLOCATED_RANGE: f64 = 0.25;

/// Direction angle of one sub-view (counter-clockwise, 30 degree sectors,
/// sub-view 0 along the agent heading).
pub fn subview_angle(pose: &AgentPose, subview: usize) -> f64 {
    pose.heading + subview as f64 * TAU / NUM_SUBVIEWS as f64
}

/// March a ray until it hits an occupied cell or `max_range`; returns the
/// travel distance and the hit cell.
fn ray_march(world: &World, x: f64, y: f64, angle: f64) -> (f64, Option<(usize, usize)>) {
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut s = RAY_STEP;
    while s <= world.params.max_range {
        let (px, py) = (x + s * dx, y + s * dy);
        match world.grid.cell_of(px, py) {
            Some((cx, cy)) => {
                if world.grid.is_occupied_cell(cx, cy) {
                    return (s, Some((cx, cy)));
                }
            }
            None => return (s, None),
        }
        s += RAY_STEP;
    }
    (world.params.max_range, None)
}

/// True when the straight segment from the agent to `(tx, ty)` crosses no
/// occupied cell (visibility test for objects).
fn line_of_sight(world: &World, x: f64, y: f64, tx: f64, ty: f64) -> bool {
    let (dx, dy) = (tx - x, ty - y);
    let len = (dx * dx + dy * dy).sqrt();
    if len < RAY_STEP {
        return true;
    }
    let steps = (len / RAY_STEP).ceil() as usize;
    for i in 1..steps {
        let f = i as f64 / steps as f64;
        if !world.grid.is_free(x + f * dx, y + f * dy) {
            return false;
        }
    }
    true
}

/// Smallest signed angle difference in (-pi, pi].
fn angle_diff(a: f64, b: f64) -> f64 {
    let mut d = (a - b) % TAU;
    if d > TAU / 2.0 {
        d -= TAU;
    }
    if d <= -TAU / 2.0 {
        d += TAU;
    }
    d
}

/// Cosine lobe peaking at zero offset, floored so no direction or ear is
/// ever fully silent. The floor keeps per-source sums over sub-views and
/// over ears constant, which makes total amplitude monotone in distance.
fn lobe(offset: f64) -> f64 {
    0.06 + 0.94 * 0.5 * (1.0 + offset.cos())
}

/// Render the full 360-degree observation at a pose.
///
/// - depth: `F_d` rays fanned across each 30 degree sector, clipped to
///   `(MIN_DEPTH, max_range]`;
/// - rgb: per-ray hit-cell texture hashes plus signatures of visible
///   objects, both attenuated by `1/(1+distance)`;
/// - audio: for each source, its waveform signature scaled by a sub-view
///   cosine lobe, a per-ear cosine lobe (ears at heading +/- 90 degrees),
///   and `1/(1+geodesic distance)`.
pub fn render_panorama(world: &World, pose: &AgentPose) -> Result<Panorama> {
    if !world.grid.is_free(pose.x, pose.y) {
        return Err(WorldError::Occupied(pose.x, pose.y));
    }
    let p = &world.params;
    let sector = TAU / NUM_SUBVIEWS as f64;
    let mut rgb = Mat::zeros(NUM_SUBVIEWS, p.f_v);
    let mut depth = Mat::zeros(NUM_SUBVIEWS, p.f_d);
    let mut audio_left = Mat::zeros(NUM_SUBVIEWS, p.f_a);
    let mut audio_right = Mat::zeros(NUM_SUBVIEWS, p.f_a);

    for k in 0..NUM_SUBVIEWS {
        let center = subview_angle(pose, k);
        // Depth rays; texture features accumulate from the hit cells.
        for r in 0..p.f_d {
            let frac = (r as f64 + 0.5) / p.f_d as f64;
            let angle = center + (frac - 0.5) * sector;
            let (dist, hit) = ray_march(world, pose.x, pose.y, angle);
            depth.set(k, r, dist.max(MIN_DEPTH));
            if let Some((cx, cy)) = hit {
                let tex = signed_features(world.texture_seed(cx, cy), p.f_v);
                let w = 1.0 / (1.0 + dist);
                let row = rgb.row_mut(k);
                for (acc, t) in row.iter_mut().zip(tex.iter()) {
                    *acc += t * w / p.f_d as f64;
                }
            }
        }
        // Visible objects contribute their category signature.
        for obj in &world.objects {
            let (dx, dy) = (obj.x - pose.x, obj.y - pose.y);
            let dist = dx.hypot(dy);
            let ang = dy.atan2(dx);
            let off = angle_diff(ang, center);
            if off.abs() > sector / 2.0 && dist > COLOCATED_RANGE {
                continue;
            }
            if !line_of_sight(world, pose.x, pose.y, obj.x, obj.y) {
                continue;
            }
            let sig = signed_features(
                splitmix64(0x0B9EC7 ^ obj.category as u64),
                p.f_v,
            );
            let w = 1.0 / (1.0 + dist);
            let row = rgb.row_mut(k);
            for (acc, s) in row.iter_mut().zip(sig.iter()) {
                *acc += s * w;
            }
        }
        // Binaural audio.
        for (i, src) in world.sound_sources.iter().enumerate() {
            let geo = world.source_field(i).to_point(world, pose.x, pose.y)?;
            let sig = positive_features(
                splitmix64(src.waveform_seed ^ (src.category as u64) << 17),
                p.f_a,
            );
            let att = 1.0 / (1.0 + geo);
            let (sv_gain, l_gain, r_gain) = if geo <= COLOCATED_RANGE {
                (1.0, 1.0, 1.0)
            } else {
                let ang = (src.y - pose.y).atan2(src.x - pose.x);
                (
                    lobe(angle_diff(ang, center)),
                    lobe(angle_diff(ang, pose.heading + TAU / 4.0)),
                    lobe(angle_diff(ang, pose.heading - TAU / 4.0)),
                )
            };
            for f in 0..p.f_a {
                let base = sig[f] * sv_gain * att;
                audio_left.data[k * p.f_a + f] += base * l_gain;
                audio_right.data[k * p.f_a + f] += base * r_gain;
            }
        }
    }
    Ok(Panorama {
        rgb,
        depth,
        audio_left,
        audio_right,
    })
}

/// Result of one motion action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub pose: AgentPose,
    pub collided: bool,
}

/// Apply an action: ids 0..11 translate 0.25 m toward that sub-view,
/// clipping at the first obstacle (collision flag set); 12 stops in place.
pub fn step(world: &World, pose: &AgentPose, action: usize) -> StepOutcome {
    assert!(action <= STOP_ACTION, "action id {action} out of range");
    if action == STOP_ACTION {
        return StepOutcome {
            pose: *pose,
            collided: false,
        };
    }
    let angle = subview_angle(pose, action);
    let (dx, dy) = (angle.cos(), angle.sin());
    let samples = 25;
    let mut reach = 0.0;
    for i in 1..=samples {
        let s = MOVE_STEP * i as f64 / samples as f64;
        if world.grid.is_free(pose.x + s * dx, pose.y + s * dy) {
            reach = s;
        } else {
            break;
        }
    }
    StepOutcome {
        pose: AgentPose {
            x: pose.x + reach * dx,
            y: pose.y + reach * dy,
            heading: pose.heading,
        },
        collided: reach < MOVE_STEP - 1e-12,
    }
}
