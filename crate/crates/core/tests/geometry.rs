use nalgebra::Vector3;
use oazr_core::geometry::skeleton::*;
use oazr_core::geometry::{
    build_camera_rig, corrupt_2d, project_motion, render_all_views, sample_indices, uniform_sample_frames, Frame3,
    Intrinsics, MotionSequence3D, NoiseParams, RigSpec, VirtualCamera,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Facing -y, right wrist held in front of the chest.
fn reaching_pose() -> Frame3 {
    let mut f = [[0.0; 3]; NUM_JOINTS];
    for j in [NOSE, LEFT_EYE, RIGHT_EYE, LEFT_EAR, RIGHT_EAR] {
        f[j] = [0.0, -0.05, 1.7];
    }
    f[LEFT_SHOULDER] = [0.2, 0.0, 1.5];
    f[RIGHT_SHOULDER] = [-0.2, 0.0, 1.5];
    f[LEFT_HIP] = [0.1, 0.0, 1.0];
    f[RIGHT_HIP] = [-0.1, 0.0, 1.0];
    f[LEFT_ELBOW] = [0.3, 0.0, 1.2];
    f[LEFT_WRIST] = [0.35, 0.0, 0.95];
    f[RIGHT_ELBOW] = [-0.25, -0.15, 1.3];
    f[RIGHT_WRIST] = [0.0, -0.2, 1.3];
    f[LEFT_KNEE] = [0.1, 0.0, 0.5];
    f[RIGHT_KNEE] = [-0.1, 0.0, 0.5];
    f[LEFT_ANKLE] = [0.1, 0.0, 0.05];
    f[RIGHT_ANKLE] = [-0.1, 0.0, 0.05];
    f
}

fn reaching_motion() -> MotionSequence3D {
    MotionSequence3D {
        label: "reach".into(),
        fps: 30.0,
        subject: None,
        joints: vec![reaching_pose(); 3],
    }
}

#[test]
fn back_camera_loses_the_wrist_front_camera_keeps_it() {
    let m = reaching_motion();
    let rig = RigSpec::default().rig_for(&m).unwrap();
    let cam = |yaw: i32| rig.cameras.iter().find(|c| c.yaw_deg == yaw).unwrap();
    let front = project_motion(&m, cam(0)).unwrap();
    let back = project_motion(&m, cam(-180)).unwrap();
    assert_eq!(front.theta_deg, 0);
    assert_eq!(back.theta_deg, -180);
    for f in 0..3 {
        assert!(front.is_visible(f, RIGHT_WRIST));
        assert!(!back.is_visible(f, RIGHT_WRIST));
        assert_eq!(back.joints2d[f][RIGHT_WRIST], [0.0, 0.0]);
        // the left arm hangs at the side and the head is never tested
        assert!(back.is_visible(f, LEFT_WRIST));
        assert!(back.is_visible(f, NOSE));
    }
    // side views see past the torso
    assert!(project_motion(&m, cam(90)).unwrap().is_visible(0, RIGHT_WRIST));
}

#[test]
fn nose_on_the_optical_axis_hits_the_principal_point() {
    let m = reaching_motion();
    let nose = Vector3::from(m.joints[0][NOSE]);
    let k = Intrinsics {
        focal: 800.0,
        cx: 321.0,
        cy: 123.0,
    };
    let cam = VirtualCamera::look_at(0, Vector3::new(1.0, -3.0, 2.0), nose, 0, k).unwrap();
    let v = project_motion(&m, &cam).unwrap();
    let [u, w] = v.joints2d[1][NOSE];
    assert!((u - 321.0).abs() < 1e-9 && (w - 123.0).abs() < 1e-9, "{u} {w}");
}

#[test]
fn pixel_offsets_scale_with_focal_length() {
    let m = reaching_motion();
    let target = Vector3::new(0.0, 0.0, 1.0);
    let render = |focal: f64| {
        let k = Intrinsics { focal, cx: 40.0, cy: -7.0 };
        let rig = build_camera_rig(3.0, 1.5, target, k).unwrap();
        rig.cameras.iter().map(|c| project_motion(&m, c).unwrap()).collect::<Vec<_>>()
    };
    let (a, b) = (render(500.0), render(1250.0));
    for (va, vb) in a.iter().zip(&b) {
        assert_eq!(va.visibility, vb.visibility);
        for (fa, fb) in va.joints2d.iter().zip(&vb.joints2d) {
            for j in 0..NUM_JOINTS {
                if va.visibility[0][j] == 0 {
                    continue;
                }
                let du = (fb[j][0] - 40.0) - 2.5 * (fa[j][0] - 40.0);
                let dv = (fb[j][1] + 7.0) - 2.5 * (fa[j][1] + 7.0);
                assert!(du.abs() < 1e-9 && dv.abs() < 1e-9);
            }
        }
    }
}

#[test]
fn rotating_the_body_rotates_the_bins() {
    let m = reaching_motion();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for turn in [30.0, 90.0, -120.0] {
        let r = m.rotated_about_vertical(turn);
        let rig = RigSpec::default().rig_for(&r).unwrap();
        let out = render_all_views(&r, &rig, &NoiseParams::NONE, &mut rng).unwrap();
        assert_eq!(out.views.len(), 12);
        let mut thetas: Vec<i32> = out.views.iter().map(|v| v.theta_deg).collect();
        thetas.sort();
        assert_eq!(thetas, oazr_core::geometry::ORIENTATION_BINS.to_vec());
        // the camera facing the body still sees the wrist, the one behind it does not
        let front = out.views.iter().find(|v| v.theta_deg == 0).unwrap();
        let back = out.views.iter().find(|v| v.theta_deg == -180).unwrap();
        assert!(front.is_visible(0, RIGHT_WRIST) && !back.is_visible(0, RIGHT_WRIST));
    }
}

#[test]
fn resampling_keeps_order_and_labels() {
    let mut m = reaching_motion();
    m.joints = (0..40)
        .map(|i| {
            let mut f = reaching_pose();
            f[NOSE][0] = i as f64;
            f
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = uniform_sample_frames(&m, 16, &mut rng).unwrap();
    assert_eq!(s.frames(), 16);
    assert_eq!(s.label, m.label);
    let xs: Vec<f64> = s.joints.iter().map(|f| f[NOSE][0]).collect();
    assert!(xs.windows(2).all(|w| w[0] < w[1]), "{xs:?}");
    assert!((s.fps - 12.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn one_sample_per_segment(frames in 1usize..400, n in 1usize..200, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = sample_indices(frames, n, &mut rng).unwrap();
        prop_assert_eq!(idx.len(), n);
        let width = frames as f64 / n as f64;
        for (k, &i) in idx.iter().enumerate() {
            prop_assert!(i < frames);
            prop_assert!(i as f64 >= (k as f64 * width).floor());
            prop_assert!((i as f64) < ((k + 1) as f64 * width).ceil().max(1.0));
        }
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        // whole-frame segments cannot share a frame
        if frames % n == 0 {
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn corruption_keeps_the_mask(
        p in 0.0f64..=1.0,
        sigma in 0.0f64..20.0,
        margin in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let m = reaching_motion();
        let rig = RigSpec::default().rig_for(&m).unwrap();
        let clean = project_motion(&m, &rig.cameras[0]).unwrap();
        let params = NoiseParams { p_outlier: p, sigma, bbox_margin: margin };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = corrupt_2d(&clean, &params, &mut rng).unwrap();
        prop_assert_eq!(&noisy.visibility, &clean.visibility);
        for (fa, (fv, vis)) in noisy.joints2d.iter().zip(clean.joints2d.iter().zip(&clean.visibility)) {
            for j in 0..NUM_JOINTS {
                prop_assert!(fa[j][0].is_finite() && fa[j][1].is_finite());
                if vis[j] == 0 {
                    prop_assert_eq!(fa[j], fv[j]);
                }
            }
        }
        noisy.validate().unwrap();
    }
}
