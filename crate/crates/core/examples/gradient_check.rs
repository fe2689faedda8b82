//! Central finite-difference check of a small convolution / SPP / affine
//! graph built on the autodiff tape.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use relpose::nn::{grad_check, graph_objective, ConvSpec, GradCheckConfig, Graph, SppSpec, Tensor};

fn filled(shape: &[usize], phase: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| (i as f64 * 0.71 + phase).sin()).collect()).unwrap()
}

fn main() -> Result<(), relpose::nn::NnError> {
    let inputs = vec![
        filled(&[1, 2, 9, 9], 0.3),   // image
        filled(&[3, 2, 3, 3], 1.1),   // conv weight
        filled(&[3], 0.2),            // conv bias
        filled(&[2, 3 * 5], 2.0),     // affine weight
        filled(&[2], 0.7),            // affine bias
        filled(&[1, 2], 5.0),         // target
    ];
    let spp = SppSpec::new(vec![1, 2])?;
    let f = graph_objective(|g: &mut Graph<'_>, v: &[_]| {
        let y = g.conv2d(v[0], v[1], v[2], ConvSpec::new(3, 3, 2, 1)?)?;
        let y = g.relu(y);
        let y = g.spp(y, &spp)?;
        let y = g.linear(y, v[3], v[4])?;
        g.euclidean_loss(y, v[5])
    });
    let report = grad_check(&inputs, f, GradCheckConfig::default())?;
    for (i, r) in report.inputs.iter().enumerate() {
        println!("input {i}: max relative error {:.2e}", r.max_rel_error);
    }
    println!("passed: {}", report.passed());
    Ok(())
}
