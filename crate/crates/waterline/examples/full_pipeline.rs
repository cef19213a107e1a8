//! Drive the complete command-line pipeline in-process:
//! synth -> train -> detect -> eval -> report. The same commands work from
//! the shell via the `waterline` binary.
//!
//! Run with: cargo run --release --example full_pipeline
//! (training takes a minute or two in debug builds)

use std::path::Path;

use waterline::cli::run;

fn main() -> waterline::Result<()> {
    let root = Path::new("target/examples/full_pipeline");
    let data = root.join("data");
    let train = root.join("train");
    let det = root.join("detect");

    let steps: Vec<Vec<String>> = vec![
        vec![
            "waterline", "synth", "--out", data.to_str().unwrap(), "--seed", "7",
            "--scenes", "3", "--r", "16", "--s", "8", "--pos", "90", "--neg", "90",
            "--ripple", "5", "--speckle", "4", "--noise", "2", "--scale", "desk",
        ],
        vec![
            "waterline", "train",
            "--stage1", data.join("patches.bin").to_str().unwrap(),
            "--stage2", data.join("patches.bin").to_str().unwrap(),
            "--out", train.to_str().unwrap(), "--seed", "7", "--scale", "desk",
            "--epochs1", "8", "--epochs2", "2",
        ],
        vec![
            "waterline", "detect", "--frames", data.to_str().unwrap(),
            "--weights", train.join("weights.wld").to_str().unwrap(),
            "--scale", "desk", "--r", "16", "--s", "8", "--stride", "4",
            "--out", det.to_str().unwrap(),
        ],
        vec![
            "waterline", "eval", "--marks", det.join("marks.csv").to_str().unwrap(),
            "--anchors", data.join("anchors.csv").to_str().unwrap(),
            "--out", root.join("report.csv").to_str().unwrap(),
        ],
        vec![
            "waterline", "report", "--scale", "desk",
            "--out", root.join("arch.csv").to_str().unwrap(),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();

    for step in steps {
        println!("$ {}", step.join(" "));
        println!("{}\n", run(step.clone())?);
    }
    Ok(())
}
