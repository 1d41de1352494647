//! Template instruction generation over shortest-path waypoints.
//!
//! The grammar is deterministic and invertible for turns:
//!   instruction := segment+ "stop" ("at" "the" <category>)?
//!   segment     := "go" "straight" ("through" "the" <room-kind>)?
//!               |  "turn" ("left" | "right")
//! so parsing the tokens back recovers the waypoint turn sequence exactly.

use super::vocab::{category_token, token_id, token_name};
use super::{Instruction, Result, TaskError};
use crate::world::{RoomKind, World};

/// Direction changes sharper than this become turn tokens.
const TURN_THRESHOLD: f64 = std::f64::consts::PI / 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TurnDir {
    Left,
    Right,
}

/// Douglas-Peucker simplification so short grid wiggles do not become turns.
pub fn simplify_path(path: &[(f64, f64)], tolerance: f64) -> Vec<(f64, f64)> {
    if path.len() <= 2 {
        return path.to_vec();
    }
    let (a, b) = (path[0], *path.last().unwrap());
    let mut max_d = 0.0;
    let mut max_i = 0;
    for (i, &p) in path.iter().enumerate().skip(1).take(path.len() - 2) {
        let d = point_segment_distance(p, a, b);
        if d > max_d {
            max_d = d;
            max_i = i;
        }
    }
    if max_d <= tolerance {
        return vec![a, b];
    }
    let mut left = simplify_path(&path[..=max_i], tolerance);
    let right = simplify_path(&path[max_i..], tolerance);
    left.pop();
    left.extend(right);
    left
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    if len2 < 1e-12 {
        return (p.0 - a.0).hypot(p.1 - a.1);
    }
    let t = (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0);
    (p.0 - (a.0 + t * vx)).hypot(p.1 - (a.1 + t * vy))
}

/// Realize an instruction over a waypoint path. Segments become
/// "go straight [through the <room-kind>]", direction changes become
/// "turn left/right", and the ending names the nearest goal object when
/// one sits within a meter.
pub fn generate_instruction(world: &World, path: &[(f64, f64)], max_tokens: usize) -> Result<Instruction> {
    assert!(path.len() >= 2, "instruction paths need at least 2 waypoints");
    for &(x, y) in path {
        if !world.grid.is_free(x, y) {
            return Err(TaskError::PathOutsideWorld(x, y));
        }
    }
    let simplified = simplify_path(path, 0.35);
    let mut tokens: Vec<u16> = Vec::new();

    // First segment, annotated with the room kind at its midpoint.
    push_go_straight(&mut tokens, world, simplified[0], simplified[1]);
    for w in simplified.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        let d1 = ((b.0 - a.0), (b.1 - a.1));
        let d2 = ((c.0 - b.0), (c.1 - b.1));
        let angle = cross_angle(d1, d2);
        if angle.abs() > TURN_THRESHOLD {
            tokens.push(token_id("turn"));
            tokens.push(token_id(if angle > 0.0 { "left" } else { "right" }));
            push_go_straight(&mut tokens, world, b, c);
        }
    }
    tokens.push(token_id("stop"));
    let goal = *simplified.last().unwrap();
    if let Some(obj) = world
        .objects
        .iter()
        .filter(|o| (o.x - goal.0).hypot(o.y - goal.1) < 1.0)
        .min_by(|a, b| {
            let da = (a.x - goal.0).hypot(a.y - goal.1);
            let db = (b.x - goal.0).hypot(b.y - goal.1);
            da.total_cmp(&db)
        })
    {
        tokens.push(token_id("at"));
        tokens.push(token_id("the"));
        tokens.push(category_token(obj.category));
    }
    if tokens.len() > max_tokens {
        return Err(TaskError::InstructionTooLong {
            len: tokens.len(),
            max: max_tokens,
        });
    }
    Ok(Instruction {
        tokens,
        source_path: path.to_vec(),
    })
}

fn push_go_straight(tokens: &mut Vec<u16>, world: &World, a: (f64, f64), b: (f64, f64)) {
    tokens.push(token_id("go"));
    tokens.push(token_id("straight"));
    let mid = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
    if let Some(idx) = world.room_at(mid.0, mid.1) {
        tokens.push(token_id("through"));
        tokens.push(token_id("the"));
        tokens.push(token_id(match world.rooms[idx].kind {
            RoomKind::Room => "room",
            RoomKind::Corridor => "corridor",
        }));
    }
}

/// Signed angle from d1 to d2; positive is a left (counter-clockwise) turn.
fn cross_angle(d1: (f64, f64), d2: (f64, f64)) -> f64 {
    let cross = d1.0 * d2.1 - d1.1 * d2.0;
    let dot = d1.0 * d2.0 + d1.1 * d2.1;
    cross.atan2(dot)
}

/// Recover the turn sequence from instruction tokens (grammar round-trip).
pub fn parse_turns(tokens: &[u16]) -> Vec<TurnDir> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if token_name(tokens[i]) == "turn" && i + 1 < tokens.len() {
            match token_name(tokens[i + 1]) {
                "left" => out.push(TurnDir::Left),
                "right" => out.push(TurnDir::Right),
                _ => {}
            }
            i += 2;
        } else {
            i += 1;
        }
    }
    out
}

/// The turn sequence a waypoint path implies (for round-trip checks).
pub fn path_turns(path: &[(f64, f64)]) -> Vec<TurnDir> {
    let simplified = simplify_path(path, 0.35);
    let mut out = Vec::new();
    for w in simplified.windows(3) {
        let d1 = ((w[1].0 - w[0].0), (w[1].1 - w[0].1));
        let d2 = ((w[2].0 - w[1].0), (w[2].1 - w[1].1));
        let angle = cross_angle(d1, d2);
        if angle.abs() > TURN_THRESHOLD {
            out.push(if angle > 0.0 { TurnDir::Left } else { TurnDir::Right });
        }
    }
    out
}
