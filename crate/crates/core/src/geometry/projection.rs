use nalgebra::Vector3;
use rand::Rng;

use super::camera::{assign_orientation_bin, reference_yaw, relative_bin, CameraRig, RigSpec, VirtualCamera};
use super::occlusion::{occlusion_test, Occlusion, TorsoPlane};
use super::preprocess::{corrupt_2d, NoiseParams};
use super::skeleton::{is_limb, NUM_JOINTS};
use super::{Frame2, MotionSequence3D, ProjectedView};
use crate::error::{Error, Result};

/// Counters gathered while projecting one view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub behind_camera: usize,
    pub occluded: usize,
    pub degenerate_torso_frames: usize,
}

/// Pinhole projection of every frame with torso self-occlusion.
///
/// Joints behind the camera or hidden by the torso are zero-filled and
/// marked invisible. Only limb joints can be occluded.
pub fn project_motion(motion: &MotionSequence3D, camera: &VirtualCamera) -> Result<ProjectedView> {
    project_motion_with_stats(motion, camera).map(|(v, _)| v)
}

pub(crate) fn project_motion_with_stats(
    motion: &MotionSequence3D,
    camera: &VirtualCamera,
) -> Result<(ProjectedView, ProjectionStats)> {
    let body_bin = assign_orientation_bin(reference_yaw(motion)?)?;
    let mut stats = ProjectionStats::default();
    let mut joints2d = Vec::with_capacity(motion.frames());
    let mut visibility = Vec::with_capacity(motion.frames());
    let mut any_in_front = false;

    for frame in &motion.joints {
        let torso = TorsoPlane::from_frame(frame);
        let mut pts: Frame2 = [[0.0; 2]; NUM_JOINTS];
        let mut vis = [0u8; NUM_JOINTS];
        let mut degenerate = false;
        for j in 0..NUM_JOINTS {
            let world = Vector3::from(frame[j]);
            let Some(px) = camera.project(&world) else {
                stats.behind_camera += 1;
                continue;
            };
            any_in_front = true;
            let visible = if is_limb(j) {
                match occlusion_test(&camera.position, &world, &torso)? {
                    Occlusion::Visible => true,
                    Occlusion::Occluded => {
                        stats.occluded += 1;
                        false
                    }
                    Occlusion::DegenerateTorso => {
                        degenerate = true;
                        true
                    }
                }
            } else {
                true
            };
            if visible {
                pts[j] = px;
                vis[j] = 1;
            }
        }
        if degenerate {
            stats.degenerate_torso_frames += 1;
        }
        joints2d.push(pts);
        visibility.push(vis);
    }
    if !any_in_front {
        return Err(Error::EmptyProjection);
    }
    if stats.degenerate_torso_frames > 0 {
        log::warn!(
            "view {}: {} frame(s) with a degenerate torso; limbs left visible",
            camera.index,
            stats.degenerate_torso_frames
        );
    }
    let view = ProjectedView {
        label: motion.label.clone(),
        sequence: None,
        view_index: camera.index,
        theta_deg: relative_bin(body_bin, camera.yaw_deg),
        joints2d,
        visibility,
    };
    Ok((view, stats))
}

/// Views rendered from a rig plus the views that could not be produced.
#[derive(Debug, Default)]
pub struct RenderedViews {
    pub views: Vec<ProjectedView>,
    pub dropped: Vec<(usize, Error)>,
    pub stats: ProjectionStats,
}

/// Projects `motion` into every rig camera and corrupts the 2D joints.
///
/// A camera that fails to produce a view is dropped and reported in
/// [`RenderedViews::dropped`]. Errors that concern the motion itself, such as
/// a degenerate first-frame pose, abort the whole call.
pub fn render_all_views<R: Rng + ?Sized>(
    motion: &MotionSequence3D,
    rig: &CameraRig,
    params: &NoiseParams,
    rng: &mut R,
) -> Result<RenderedViews> {
    motion.validate()?;
    params.validate()?;
    reference_yaw(motion)?;
    let mut out = RenderedViews::default();
    for camera in &rig.cameras {
        match project_motion_with_stats(motion, camera) {
            Ok((view, stats)) => {
                out.stats.behind_camera += stats.behind_camera;
                out.stats.occluded += stats.occluded;
                out.stats.degenerate_torso_frames += stats.degenerate_torso_frames;
                out.views.push(corrupt_2d(&view, params, rng)?);
            }
            Err(e) => {
                log::warn!("dropping view {} of `{}`: {e}", camera.index, motion.label);
                out.dropped.push((camera.index, e));
            }
        }
    }
    Ok(out)
}

/// Resamples every motion to `frames` frames and renders it from a rig
/// around its first-frame mid-hip.
///
/// Motion `k` draws from stream `k` of a generator seeded with `seed`, so the
/// result does not depend on how many motions precede it. Views carry
/// `sequence = Some(k)`.
pub fn render_dataset(
    motions: &[MotionSequence3D],
    rig: &RigSpec,
    params: &NoiseParams,
    frames: usize,
    seed: u64,
) -> Result<RenderedViews> {
    use rand::SeedableRng;
    let mut out = RenderedViews::default();
    for (k, motion) in motions.iter().enumerate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let sampled = super::uniform_sample_frames(motion, frames, &mut rng)?;
        let r = render_all_views(&sampled, &rig.rig_for(&sampled)?, params, &mut rng)?;
        out.stats.behind_camera += r.stats.behind_camera;
        out.stats.occluded += r.stats.occluded;
        out.stats.degenerate_torso_frames += r.stats.degenerate_torso_frames;
        out.dropped.extend(r.dropped);
        out.views.extend(r.views.into_iter().map(|mut v| {
            v.sequence = Some(k);
            v
        }));
    }
    Ok(out)
}
