//! Parameter counts of the three architecture variants at paper and toy
//! scale, with the largest tensors of the paper model.
//!
//! `cargo run --release --example param_count`

use qtfm::model::{count_params, param_specs, ModelConfig, Variant};

fn main() -> qtfm::Result<()> {
    println!("{:<14} {:>14} {:>10}", "variant", "paper", "toy");
    for v in Variant::ALL {
        let paper = count_params(&ModelConfig::paper(v))?;
        let toy = count_params(&ModelConfig::toy(v))?;
        println!("{:<14} {:>14} {:>10}", v.name(), paper, toy);
    }

    let mut specs = param_specs(&ModelConfig::paper(Variant::Proposed));
    specs.sort_by_key(|s| std::cmp::Reverse(s.numel()));
    println!("\nlargest tensors of the proposed paper model:");
    for s in specs.iter().take(6) {
        println!("  {:<34} {:?} = {}", s.name, s.shape, s.numel());
    }
    Ok(())
}
