//! Feature-map shapes of the network presets, including the fixed-length
//! output of spatial pyramid pooling for different input sizes.
//!
//! ```bash
//! cargo run --example architectures
//! ```

use relpose::regressor::{ModelConfig, Preset};

fn main() {
    for preset in Preset::ALL {
        let c = ModelConfig::preset(preset);
        let spp = c.spp.as_ref().map(|s| format!("{:?}", s.levels())).unwrap_or_else(|| "-".into());
        print!("{preset:8} spp {spp:18} min input {:4}", c.min_input_size());
        for size in [64, 227, 323] {
            let accepted = if c.spp.is_some() { size >= c.min_input_size() } else { size == c.input_size };
            match c.feature_map(size) {
                Some((ch, h, w)) if accepted => print!("  {size}: {ch}x{h}x{w}"),
                _ => print!("  {size}: -"),
            }
        }
        println!("  branch vector {}, head input {}", c.branch_output_len(), c.head_input_len());
    }
}
