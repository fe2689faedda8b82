//! Generates a synthetic dataset, trains the tiny Siamese preset on it and
//! compares the result with the untrained network and the identity guess.
//!
//! ```bash
//! cargo run --release --example train_tiny -- [n_train] [epochs] [seed]
//! ```

use std::time::Instant;

use relpose::eval::median;
use relpose::geom::{roe, Quaternion};
use relpose::regressor::{build_model, load_samples, median_errors, train, ModelConfig, Preset, TrainConfig};
use relpose::synth::{build_dataset, DatasetConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n_train: usize = arg(1, 400);
    let epochs: usize = arg(2, 3);
    let seed: u64 = arg(3, 0);
    let n_val = (n_train / 10).max(20);

    let dir = std::env::temp_dir().join(format!("relpose-train-tiny-{seed}"));
    let ratio = n_train as f64 / (n_train + n_val) as f64;
    let (tr, va) = build_dataset(n_train + n_val, ratio, &DatasetConfig::default(), seed, &dir)?;
    let (train_set, val_set) = (load_samples(&tr)?, load_samples(&va)?);

    let mut model = build_model(&ModelConfig::preset(Preset::Tiny), seed)?;
    let (roe0, _) = median_errors(&model, &val_set)?;
    let gt_angles: Vec<f64> =
        val_set.iter().map(|s| roe(&Quaternion::IDENTITY, &s.gt.dq)).collect::<Result<_, _>>()?;
    println!("untrained median ROE {roe0:.2} deg, identity guess {:.2} deg", median(&gt_angles).unwrap());

    let cfg = TrainConfig { batch_size: 32, epochs, seed, ..TrainConfig::default() };
    let start = Instant::now();
    train(&mut model, &train_set, &val_set, &cfg, |e| {
        println!(
            "epoch {:2}  loss {:.4}  val ROE {:.2}  RTE {:.2}  ({:.0}s)",
            e.epoch,
            e.train_loss,
            e.val_median_roe_deg,
            e.val_median_rte_deg,
            start.elapsed().as_secs_f64()
        )
    })?;
    Ok(())
}
