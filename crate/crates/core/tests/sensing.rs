use ergoscout::dynamics::BodyState;
use ergoscout::ergodic::Workspace;
use ergoscout::infomap::{CameraAngles, Label};
use ergoscout::world::{generate_scenario, CameraModel, Placement, Rock, Scenario};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sure_camera() -> CameraModel {
    CameraModel { tp_igneous: 1.0, tp_sedimentary: 1.0, ..CameraModel::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn detections_respect_occlusion_range_and_truth(
        rocks in prop::collection::vec((40.0..60.0f64, 40.0..60.0f64, prop::bool::ANY), 1..12),
        heading in -3.2..3.2f64,
        yaw in -3.0..3.0f64,
        pitch in -1.2..0.4f64,
        seed in 0u64..1000,
    ) {
        let ws = Workspace::planar(100.0, 100.0).unwrap();
        let scenario = Scenario {
            seed,
            rocks: rocks
                .iter()
                .map(|&(x, y, ig)| Rock { x, y, class: if ig { Label::Igneous } else { Label::Sedimentary } })
                .collect(),
        };
        let camera = sure_camera();
        let body = BodyState::new(50.0, 50.0, heading);
        let angles = CameraAngles { yaw, pitch };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cls = camera.classify_view(&scenario, &body, angles, &mut rng);
        if let Some(offset) = cls.offset {
            prop_assert!(yaw.abs() < camera.yaw_limit);
            let p = camera.project_detection(&body, angles, offset, &ws).unwrap();
            let range = ((p[0] - body.x).powi(2) + (p[1] - body.y).powi(2)).sqrt();
            prop_assert!(range <= camera.max_range + 0.5, "range {range}");
            let miss = scenario
                .rocks
                .iter()
                .map(|r| ((p[0] - r.x).powi(2) + (p[1] - r.y).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            prop_assert!(miss <= 0.5, "miss {miss}");
        } else {
            prop_assert_eq!(cls.label, Label::Background);
        }
    }

    #[test]
    fn scenarios_are_seeded_and_inside(seed in 0u64..10_000, count in 0usize..40) {
        let ws = Workspace::planar(100.0, 100.0).unwrap();
        let a = generate_scenario(seed, count, Placement::Uniform, &ws, &[]);
        let b = generate_scenario(seed, count, Placement::Uniform, &ws, &[]);
        prop_assert_eq!(a.ground_truth_hash(), b.ground_truth_hash());
        prop_assert_eq!(a.rocks.len(), count);
        prop_assert!(a.validate(&ws).is_ok());
    }
}
