use super::*;
use crate::world::{generate_world, render_panorama, AgentPose, WorldParams, STOP_ACTION};

fn desk_splits() -> Splits {
    Splits::desk(100, WorldParams::default())
}

fn sampler() -> EpisodeSampler {
    EpisodeSampler::new(
        7,
        desk_splits(),
        SamplerConfig {
            max_goal_dist: 5.0,
            ..SamplerConfig::default()
        },
    )
}

#[test]
fn exactly_four_task_kinds() {
    assert_eq!(TaskKind::ALL.len(), 4);
    let names: Vec<_> = TaskKind::ALL.iter().map(|k| k.index()).collect();
    assert_eq!(names, vec![0, 1, 2, 3]);
}

#[test]
fn split_world_pools_are_disjoint() {
    let s = desk_splits();
    assert_eq!(s.train_seeds.len(), 24);
    assert_eq!(s.unseen_seeds.len(), 8);
    for t in &s.train_seeds {
        assert!(!s.unseen_seeds.contains(t));
    }
    // Validation-seen reuses the training pool.
    assert_eq!(s.seeds(SplitId::Train), s.seeds(SplitId::ValSeen));
}

#[test]
fn image_goal_target_is_the_goal_panorama() {
    let mut s = sampler();
    let ep = s.sample(SplitId::Train, TaskKind::ImageGoal).unwrap();
    let TargetSpec::GoalView(view) = &ep.target else {
        panic!("wrong target variant");
    };
    let pano = render_panorama(&ep.world, &AgentPose::at(ep.goal.0, ep.goal.1)).unwrap();
    assert_eq!(view, &pano.rgb);
}

#[test]
fn audio_goal_world_has_source_exactly_at_goal() {
    let mut s = sampler();
    let ep = s.sample(SplitId::Train, TaskKind::AudioGoal).unwrap();
    assert!(matches!(ep.target, TargetSpec::TargetSound));
    let src = ep.world.sound_sources.last().unwrap();
    assert_eq!((src.x, src.y), ep.goal);
    assert_eq!(src.waveform_seed, ep.audio_seed);
}

#[test]
fn object_goal_points_at_instance_of_tag() {
    let mut s = sampler();
    let ep = s.sample(SplitId::Train, TaskKind::ObjectGoal).unwrap();
    let TargetSpec::ClassTag(cat) = ep.target else {
        panic!("wrong target variant");
    };
    assert!(cat < ep.world.params.categories);
    let found = ep
        .world
        .objects
        .iter()
        .any(|o| o.category == cat && (o.x, o.y) == ep.goal);
    assert!(found, "goal is not an instance of category {cat}");
}

#[test]
fn sampled_episodes_are_nontrivial_and_connected() {
    let mut s = sampler();
    for kind in TaskKind::ALL {
        for split in [SplitId::Train, SplitId::ValSeen, SplitId::ValUnseen] {
            let ep = s.sample(split, kind).unwrap();
            let d = ep.dist_to_goal(&ep.start).unwrap();
            assert!(d.is_finite() && d >= 1.0, "{kind}: start-goal distance {d}");
        }
    }
}

#[test]
fn straight_path_instruction_has_no_turn_tokens() {
    let params = WorldParams {
        rooms_x: 1,
        rooms_y: 1,
        obstacles: 0,
        ..WorldParams::default()
    };
    let world = generate_world(2, &params).unwrap();
    let (cx, cy) = world.rooms[0].center();
    let path = vec![(cx - 1.5, cy), (cx + 1.5, cy)];
    let ins = generate_instruction(&world, &path, 24).unwrap();
    let words = ins.words();
    assert!(words.starts_with(&["go", "straight"]));
    assert!(!words.contains(&"turn"));
    assert!(words.contains(&"stop"));
}

#[test]
fn left_turn_path_names_the_turn() {
    let params = WorldParams {
        rooms_x: 1,
        rooms_y: 1,
        obstacles: 0,
        ..WorldParams::default()
    };
    let world = generate_world(2, &params).unwrap();
    let (cx, cy) = world.rooms[0].center();
    // +x then +y is a counter-clockwise (left) turn.
    let path = vec![(cx - 1.5, cy), (cx + 1.0, cy), (cx + 1.0, cy + 1.5)];
    let ins = generate_instruction(&world, &path, 24).unwrap();
    let words = ins.words();
    let turn_pos = words.iter().position(|w| *w == "turn").expect("no turn token");
    assert_eq!(words[turn_pos + 1], "left");
    assert_eq!(parse_turns(&ins.tokens), vec![TurnDir::Left]);
}

#[test]
fn instruction_ending_names_sounding_object_category() {
    let params = WorldParams {
        rooms_x: 1,
        rooms_y: 1,
        obstacles: 0,
        ..WorldParams::default()
    };
    let world = generate_world(2, &params).unwrap();
    // Path ending right at a sounding object.
    let obj = world
        .objects
        .iter()
        .find(|o| o.emits_sound)
        .expect("world has a sounding object");
    let start = world.rooms[0].center();
    let path = vec![start, (obj.x, obj.y)];
    let ins = generate_instruction(&world, &path, 24).unwrap();
    let words = ins.words();
    assert_eq!(words.last().unwrap(), &vocab::CATEGORY_NAMES[obj.category]);
}

#[test]
fn identical_path_gives_identical_tokens() {
    let params = WorldParams::default();
    let world = generate_world(3, &params).unwrap();
    let mut s = sampler();
    let ep = s.sample(SplitId::Train, TaskKind::VisionLanguage).unwrap();
    let TargetSpec::Instruction(ins) = &ep.target else {
        panic!()
    };
    let again = generate_instruction(&ep.world, &ins.source_path, 24).unwrap();
    assert_eq!(ins.tokens, again.tokens);
    let _ = world;
}

#[test]
fn instruction_grammar_round_trips_turn_sequence() {
    let mut s = sampler();
    let mut checked = 0;
    for _ in 0..20 {
        let ep = s.sample(SplitId::Train, TaskKind::VisionLanguage).unwrap();
        let TargetSpec::Instruction(ins) = &ep.target else {
            panic!()
        };
        assert!(ins.tokens.len() <= 24);
        assert_eq!(parse_turns(&ins.tokens), path_turns(&ins.source_path));
        checked += 1;
    }
    assert_eq!(checked, 20);
}

#[test]
fn success_requires_stop_distance_and_horizon() {
    let mut s = sampler();
    let ep = s.sample(SplitId::Train, TaskKind::ObjectGoal).unwrap();

    // Walk the oracle to within a meter, then stop: success.
    let traj = run_oracle(&ep).unwrap();
    assert_eq!(check_success(&ep, &traj).unwrap(), Outcome::Success);
    assert_eq!(*traj.actions.last().unwrap(), STOP_ACTION);
    let final_d = ep.dist_to_goal(&traj.final_pose()).unwrap();
    assert!(final_d < SUCCESS_RADIUS, "stopped {final_d} m from goal");

    // Same endpoint without a stop action: failure.
    let mut no_stop = traj.clone();
    no_stop.actions.pop();
    no_stop.poses.pop();
    no_stop.collisions.pop();
    if !no_stop.actions.is_empty() {
        assert_eq!(check_success(&ep, &no_stop).unwrap(), Outcome::Failure);
    }

    // Stopping on the spot at the start (> 1 m away): failure.
    let mut far = Trajectory::start(ep.start);
    far.push(STOP_ACTION, ep.start, false);
    assert_eq!(check_success(&ep, &far).unwrap(), Outcome::Failure);
}

#[test]
fn oracle_succeeds_on_every_sampled_episode() {
    let mut s = sampler();
    for kind in TaskKind::ALL {
        for i in 0..25 {
            let ep = s.sample(SplitId::Train, kind).unwrap();
            let traj = run_oracle(&ep).unwrap();
            assert_eq!(
                check_success(&ep, &traj).unwrap(),
                Outcome::Success,
                "{kind} episode {i} ({}) unsolved by oracle",
                ep.id
            );
        }
    }
}

#[test]
fn episode_log_record_serializes() {
    let mut s = sampler();
    let ep = s.sample(SplitId::ValUnseen, TaskKind::AudioGoal).unwrap();
    let traj = run_oracle(&ep).unwrap();
    let outcome = check_success(&ep, &traj).unwrap();
    let rec = EpisodeLogRecord::new(&ep, &traj, outcome);
    let line = serde_json::to_string(&rec).unwrap();
    assert!(line.contains("\"task\":\"audio_goal\""));
    assert!(line.contains("\"outcome\":\"success\""));
    let back: EpisodeLogRecord = serde_json::from_str(&line).unwrap();
    assert_eq!(back.episode_id, rec.episode_id);
    assert_eq!(back.epochs, traj.epochs());
}
