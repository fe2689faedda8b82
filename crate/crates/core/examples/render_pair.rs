//! Renders one synthetic image pair of a textured plane and checks the
//! plane-induced homography against direct projection.
//!
//! ```bash
//! cargo run --example render_pair -- [out_dir]
//! ```

use nalgebra::{Vector2, Vector3};
use relpose::camera::project;
use relpose::synth::{render_pair, sample_pair_pose, square_intrinsics, PairSampling, PlanarScene, Texture};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("relpose-pair"));
    std::fs::create_dir_all(&out)?;

    let k = square_intrinsics(128, 0.8);
    let scene = PlanarScene::fronto_parallel(1.0, Texture::new(42));
    let poses = sample_pair_pose(42, &PairSampling::default(), &scene, &k)?;
    let pair = render_pair(&scene, &poses, &k)?;
    pair.image1.save_ppm(&out.join("view1.ppm"))?;
    pair.image2.save_ppm(&out.join("view2.ppm"))?;
    println!("ground truth {}", pair.ground_truth);

    let h = scene.homography(&k, &poses.1);
    let uv = Vector2::new(30.0, 90.0);
    let x = scene.point_from_cam1_pixel(&k, &uv).expect("plane in view");
    let direct = project(&k, &poses.1, &x).pixel;
    let p = h * Vector3::new(uv.x, uv.y, 1.0);
    println!("pixel {uv:?}: homography {:?}, projection {direct:?}", (p.x / p.z, p.y / p.z));
    println!("images written to {}", out.display());
    Ok(())
}
