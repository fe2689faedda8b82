//! Scores two predictors on a generated dataset and writes the comparison
//! report: per-pair CSV, JSON with cumulative histograms, and SVG plots.
//!
//! ```bash
//! cargo run --example evaluate_report -- [out_dir]
//! ```

use relpose::eval::{default_bin_edges, pair_errors, plot_cumulative, summarize, ErrorReport, Metric};
use relpose::geom::{Quaternion, RelativePose};
use relpose::synth::{build_dataset, DatasetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("relpose-report"));
    let (_, val) = build_dataset(60, 0.5, &DatasetConfig { image_size: 32, ..Default::default() }, 1, &out.join("data"))?;
    let gts = val.ground_truths()?;

    // constant identity rotation, forward motion
    let identity: Vec<_> = gts.iter().map(|_| RelativePose::new(Quaternion::IDENTITY, nalgebra::Vector3::z())).collect::<Result<_, _>>()?;
    // the ground truth with its rotation halved
    let halved: Vec<_> = gts
        .iter()
        .map(|g| RelativePose::new(Quaternion::new(g.dq.w + 1.0, g.dq.x, g.dq.y, g.dq.z), g.dt))
        .collect::<Result<_, _>>()?;

    let mut records = pair_errors("identity", &identity, &gts)?;
    records.extend(pair_errors("half-rotation", &halved, &gts)?);
    let report = ErrorReport::new(records, default_bin_edges())?;
    report.save_json(&out.join("report.json"))?;
    report.save_csv(&out.join("errors.csv"))?;
    plot_cumulative(&report, Metric::Roe, &out.join("roe.svg"))?;
    plot_cumulative(&report, Metric::Rte, &out.join("rte.svg"))?;
    for row in summarize(&[report]) {
        println!("{:14} median ROE {:6.2} deg  median RTE {:6.2} deg", row.method, row.median_roe_deg, row.median_rte_deg);
    }
    println!("report written to {}", out.display());
    Ok(())
}
