//! Print the per-layer MAC/FLOP/parameter accounting for the classifier at
//! both the full scale and the reduced desk scale, plus the two
//! convolutional-layer counting policies.
//!
//! Run with: cargo run --example architecture_report

use waterline::net::{
    count_conv_layers, count_flops, total_flops, total_macs, ConvCountPolicy, DetectNetSpec,
};

fn report(label: &str, spec: &DetectNetSpec) -> waterline::Result<()> {
    let rows = count_flops(spec)?;
    println!("== {label} (input {0}x{0}) ==", spec.input_size);
    println!("{:<16} {:>8} {:>12} {:>12} {:>10}", "layer", "kind", "MACs", "FLOPs", "params");
    for row in &rows {
        println!(
            "{:<16} {:>8} {:>12} {:>12} {:>10}",
            row.name, row.kind, row.macs, row.flops, row.params
        );
    }
    let params: u64 = rows.iter().map(|r| r.params).sum();
    println!(
        "{:<16} {:>8} {:>12} {:>12} {:>10}",
        "total", "", total_macs(&rows), total_flops(&rows), params
    );
    println!(
        "conv layers: {} (conv only), {} (counting SE FC layers)",
        count_conv_layers(spec, ConvCountPolicy::ConvOnly),
        count_conv_layers(spec, ConvCountPolicy::IncludeSeFc)
    );
    println!("compute: {:.3} MFLOPs\n", total_flops(&rows) as f64 / 1e6);
    Ok(())
}

fn main() -> waterline::Result<()> {
    report("full scale", &DetectNetSpec::default())?;
    report("desk scale", &DetectNetSpec::desk())?;
    Ok(())
}
