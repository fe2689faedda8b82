//! Relative pose between two absolute cameras and the ROE / RTE error
//! metrics.
//!
//! ```bash
//! cargo run --example pose_metrics
//! ```

use nalgebra::Vector3;
use relpose::geom::{relative_pose, roe, rte, AbsolutePose, Quaternion};

fn main() -> Result<(), relpose::geom::GeomError> {
    let cam1 = AbsolutePose::identity();
    let q = Quaternion::from_axis_angle(&Vector3::y(), 20f64.to_radians());
    let cam2 = AbsolutePose::from_quat_translation(&q, Vector3::new(-0.5, 0.0, 0.1))?;
    let gt = relative_pose(&cam1, &cam2)?;
    println!("ground truth: {gt}");

    // an estimate that is 3 degrees off in rotation and tilted in translation
    let noisy_q = gt.dq.mul(&Quaternion::from_axis_angle(&Vector3::x(), 3f64.to_radians()));
    let noisy_t = gt.dt + Vector3::new(0.0, 0.1, 0.0);
    println!("ROE {:.4} deg", roe(&noisy_q, &gt.dq)?);
    println!("RTE {:.4} deg", rte(&noisy_t, &gt.dt)?);

    // q and -q are the same rotation; opposite translations are 180 degrees apart
    println!("roe(q, -q) = {}", roe(&gt.dq, &gt.dq.neg())?);
    println!("rte(t, -t) = {}", rte(&gt.dt, &-gt.dt)?);
    Ok(())
}
