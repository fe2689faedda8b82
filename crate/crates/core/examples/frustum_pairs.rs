//! Builds viewing frusta and enumerates overlapping camera pairs, for a
//! small scene file and for a ring of cameras looking at a common point.
//!
//! ```bash
//! cargo run --example frustum_pairs
//! ```

use nalgebra::{Matrix3, Vector3};
use relpose::camera::{overlapping_pairs, CameraIntrinsics, Scene, DEFAULT_FAR, DEFAULT_NEAR};
use relpose::geom::{AbsolutePose, Rotation3};

/// Camera at `center` looking at `target`, image x axis horizontal.
fn look_at(center: Vector3<f64>, target: Vector3<f64>) -> AbsolutePose {
    let z = (target - center).normalize();
    let x = Vector3::y().cross(&z).normalize();
    let y = z.cross(&x);
    let r = Rotation3::from_matrix(Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])).unwrap();
    AbsolutePose::new(r, -r.apply(&center))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480)?;

    // two cameras facing the same way side by side, one turned away far off
    let cams = vec![
        (k, look_at(Vector3::zeros(), Vector3::z())),
        (k, look_at(Vector3::new(0.5, 0.0, 0.0), Vector3::new(0.5, 0.0, 1.0))),
        (k, look_at(Vector3::new(0.0, 0.0, -40.0), Vector3::new(0.0, 0.0, -50.0))),
    ];
    let scene = Scene::from_cameras(&cams);
    let path = std::env::temp_dir().join("relpose-micro-scene.json");
    scene.save(&path)?;
    let loaded = Scene::load(&path)?.cameras()?;
    println!("micro scene: {:?}", overlapping_pairs(&loaded, DEFAULT_NEAR, DEFAULT_FAR)?);

    let ring: Vec<_> = (0..12)
        .map(|i| {
            let a = i as f64 / 12.0 * std::f64::consts::TAU;
            (k, look_at(Vector3::new(3.0 * a.cos(), 0.0, 3.0 * a.sin()), Vector3::zeros()))
        })
        .collect();
    let pairs = overlapping_pairs(&ring, DEFAULT_NEAR, DEFAULT_FAR)?;
    println!("ring of {} cameras: {} of {} pairs overlap", ring.len(), pairs.len(), 12 * 11 / 2);
    Ok(())
}
