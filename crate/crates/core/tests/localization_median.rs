use poselabel::board::BoardSpec;
use poselabel::calib::localize_camera;
use poselabel::synth::{generate_board_session, generate_rig, BoardSessionSpec, RigSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TRIALS: usize = 500;

/// Median translation error (mm) of the seed-1 run, times 1.5.
const MEDIAN_TRANSLATION_BOUND_MM: f64 = 2.526174 * 1.5;

fn median_translation_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let board = BoardSpec::default();
    let session = BoardSessionSpec { placements: 8, min_distance: 5500.0, max_distance: 6500.0, corner_noise_px: 0.5, ..BoardSessionSpec::default() };
    let rig_spec = RigSpec { camera_count: 1, ..RigSpec::default() };
    let mut errors = Vec::with_capacity(TRIALS);
    for _ in 0..TRIALS {
        let rig = generate_rig(&rig_spec, &mut rng).unwrap();
        let obs = generate_board_session(&rig, &board, &session, &mut rng).unwrap();
        for (cid, o) in &obs {
            let e = localize_camera(&board, o, &rig.intrinsics[cid]).unwrap();
            errors.push(e.pose_mc_cam.distance(&rig.extrinsics[cid].pose_mc_cam).1);
        }
    }
    errors.sort_by(f64::total_cmp);
    errors[errors.len() / 2]
}

#[test]
#[ignore = "prints the seed-1 median used to set the bound"]
fn record_median() {
    println!("median translation error {:.6} mm", median_translation_error(1));
}

#[test]
fn half_pixel_noise_median_within_bound() {
    let m = median_translation_error(2);
    assert!(m <= MEDIAN_TRANSLATION_BOUND_MM, "median {m} mm, bound {MEDIAN_TRANSLATION_BOUND_MM} mm");
}
