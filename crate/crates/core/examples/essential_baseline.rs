//! Classical two-view baseline: 8-point essential matrix inside RANSAC,
//! then decomposition with positive-depth voting, on a synthetic point
//! cloud with pixel noise and outliers.
//!
//! ```bash
//! cargo run --release --example essential_baseline
//! ```

use relpose::camera::CameraIntrinsics;
use relpose::epipolar::{estimate_relative_pose, RansacConfig};
use relpose::geom::{relative_pose, roe, rte, AbsolutePose};
use relpose::synth::{make_box_correspondences, sample_box_pose, BoxScene, MatchNoise};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640, 480)?;
    let scene = BoxScene::default();
    let noise = MatchNoise { noise_px: 0.5, outlier_ratio: 0.3 };
    // about 2 px at f = 800
    let cfg = RansacConfig { threshold: 2.5e-3, ..RansacConfig::default() };

    for seed in 0..5 {
        let pose2 = sample_box_pose(seed, &scene, 20.0, 1.5);
        let gt = relative_pose(&AbsolutePose::identity(), &pose2)?;
        let (set, _) = make_box_correspondences(&scene, &pose2, &k, 100, &noise, seed)?;
        let est = estimate_relative_pose(&set, &RansacConfig { seed, ..cfg })?;
        let truth = set.inlier_mask.as_ref().unwrap();
        let found = est.inliers.iter().zip(truth).filter(|(&a, &b)| a && b).count();
        println!(
            "scene {seed}: ROE {:.3} deg, RTE {:.3} deg, {found}/{} true inliers kept",
            roe(&est.pose.dq, &gt.dq)?,
            rte(&est.pose.dt, &gt.dt)?,
            truth.iter().filter(|&&b| b).count()
        );
    }
    Ok(())
}
