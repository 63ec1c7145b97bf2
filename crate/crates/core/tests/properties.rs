mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensorimotor::cmp::validate_votes;
use sensorimotor::environment::{apply_action, look_rotation, Action, AgentKind, AgentState, ObjectInstance, Primitive, Scene, SceneObject};
use sensorimotor::geometry::{align_frames, displacement_between, Pose, Rotation, Vec3};
use sensorimotor::learning_module::{
    build_graph, init_hypotheses, most_likely_hypothesis, possible_matches, possible_poses, update_evidence,
    update_graph, Buffer, HypothesisSpace, LmConfig, Models, ObjectHypotheses, ObjectPose,
};
use sensorimotor::policies::{random_walk_step, StepSizes};
use sensorimotor::voting::{emit_vote, integrate_votes, transform_votes};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        rng_seed: proptest::test_runner::RngSeed::Fixed(7),
        ..ProptestConfig::default()
    }
}

fn space_of(evs: &[Vec<f64>]) -> HypothesisSpace {
    let objects = evs
        .iter()
        .enumerate()
        .map(|(o, e)| ObjectHypotheses {
            object_id: format!("o{o}"),
            locations: (0..e.len()).map(|i| Vec3::new(i as f64 * 0.003, o as f64 * 0.003, 0.0)).collect(),
            rotations: vec![Rotation::identity(); e.len()],
            evidences: e.clone(),
        })
        .collect();
    HypothesisSpace::from_objects(objects, Vec3::zeros())
}

fn evidences() -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(-20.0f64..20.0, 1..12), 1..6)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn aligned_rotations_map_normals(seed in any::<u64>(), degenerate in any::<bool>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (sensed, stored) = (random_frame(&mut rng), random_frame(&mut rng));
        let rots = align_frames(&sensed, &stored, degenerate, n).unwrap();
        prop_assert_eq!(rots.len(), if degenerate { n } else { 2 });
        for r in rots {
            prop_assert!(r.is_valid(1e-9));
            prop_assert!((r.apply(&stored.normal) - sensed.normal).norm() < 1e-9);
        }
    }

    #[test]
    fn evidence_increments_are_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = LmConfig::default();
        let models: Models = (0..2)
            .map(|i| {
                let id = format!("m{i}");
                let count = rng.random_range(1..20);
                (id.clone(), random_model(&mut rng, &id, count))
            })
            .collect();
        let r = random_rotation(&mut rng);
        let msgs = trajectory(&mut rng, &models["m1"], (&r, &Vec3::zeros()), 6);
        let mut space = init_hypotheses(&models, &msgs[0], &config).unwrap();
        for o in &space.objects {
            prop_assert!(o.evidences.iter().all(|e| (0.0..=1.0).contains(e)));
        }
        for w in msgs.windows(2) {
            for o in &mut space.objects {
                o.evidences.iter_mut().for_each(|e| *e = 0.0);
            }
            update_evidence(&mut space, &displacement_between(&w[0].location, &w[1].location), &w[1], &models, &config).unwrap();
            for o in &space.objects {
                prop_assert!(o.evidences.iter().all(|e| (-1.0..=2.0).contains(e)));
            }
        }
    }

    #[test]
    fn threshold_rule_matches_definition(evs in evidences(), pct in 0.05f64..0.95) {
        let config = LmConfig { percent_threshold: pct, ..LmConfig::default() };
        let space = space_of(&evs);
        let best = evs.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let expected: Vec<String> = evs
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m > 0.0 && m >= best * (1.0 - pct)
            })
            .map(|(o, _)| format!("o{o}"))
            .collect();
        prop_assert_eq!(possible_matches(&space, &config), expected);
        for (o, e) in evs.iter().enumerate() {
            let local = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let want: Vec<usize> = (0..e.len()).filter(|&i| e[i] > 0.0 && e[i] >= local * (1.0 - pct)).collect();
            prop_assert_eq!(possible_poses(&space.objects[o], &config), want);
        }
    }

    #[test]
    fn mlh_is_the_first_global_maximum(evs in evidences()) {
        let space = space_of(&evs);
        let mlh = most_likely_hypothesis(&space).unwrap();
        let mut best = (0, 0);
        for (o, e) in evs.iter().enumerate() {
            for (i, x) in e.iter().enumerate() {
                if *x > evs[best.0][best.1] {
                    best = (o, i);
                }
            }
        }
        prop_assert_eq!(mlh.object_id, format!("o{}", best.0));
        prop_assert_eq!(mlh.evidence, evs[best.0][best.1]);
        prop_assert_eq!(mlh.location, space.objects[best.0].locations[best.1]);
    }

    #[test]
    fn votes_are_scaled_and_bounded(evs in evidences(), frac in 0.01f64..1.0) {
        let space = space_of(&evs);
        let total: usize = evs.iter().map(Vec::len).sum();
        let packet = emit_vote(&space, "lm_0", &Vec3::new(0.01, 0.0, 0.0), frac);
        prop_assert_eq!(packet.votes.len(), ((total as f64 * frac).ceil() as usize).min(total));
        prop_assert!(validate_votes(&packet).is_ok());
        let mut receiver = space.clone();
        for o in &mut receiver.objects {
            o.evidences.iter_mut().for_each(|e| *e = 0.0);
        }
        let votes = transform_votes(&packet, &Vec3::new(0.0, 0.004, 0.0));
        integrate_votes(&mut receiver, &votes, &LmConfig::default());
        for o in &receiver.objects {
            prop_assert!(o.evidences.iter().all(|d| (-1.0..=1.0).contains(d)));
        }
    }

    #[test]
    fn graph_updates_keep_nodes_apart(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = LmConfig::default();
        let mut buffer = Buffer::default();
        let source = random_model(&mut rng, "src", n);
        for node in source.nodes() {
            buffer.push(message(node.location, node.frame, &node.features), None);
        }
        let mut model = build_graph("m", &buffer, &config).unwrap();
        prop_assert!(model.dedup_invariant_holds(&config));
        prop_assert!(model.len() <= n);
        let pose = ObjectPose { object_id: "m".into(), rotation: random_rotation(&mut rng), translation: unit(&mut rng) * 0.01 };
        let before = model.len();
        let added = update_graph(&mut model, &buffer, &pose, &config).unwrap();
        prop_assert_eq!(model.len(), before + added);
        prop_assert!(model.dedup_invariant_holds(&config));
    }

    #[test]
    fn random_walk_is_seed_deterministic(seed in any::<u64>(), alpha in 0.0f64..1.0) {
        let scene = Scene::single(ObjectInstance {
            object: SceneObject::primitive(Primitive::Sphere { radius: 0.05 }, [1.0; 4]),
            pose: Pose::identity(),
            label: "ball".into(),
        });
        let walk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut agent = AgentState::single_sensor(AgentKind::Distant, Pose::identity());
            let at = Vec3::new(0.0, 0.0, 0.25);
            agent.pose = Pose::new(at, look_rotation(&-at, &Vec3::x()));
            let mut prev: Option<Action> = None;
            let mut poses = Vec::new();
            for _ in 0..25 {
                let a = random_walk_step(prev.as_ref(), false, alpha, &agent, &StepSizes::default(), &mut rng);
                agent = apply_action(&scene, &agent, &a).unwrap_or(agent);
                poses.push(agent.pose);
                prev = Some(a);
            }
            poses
        };
        prop_assert_eq!(walk(), walk());
    }
}
