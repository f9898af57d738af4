//! Train a detector on synthetic data and report test F1.
//!
//! `cargo run --release --example synthetic -- [epochs] [seed]`

use std::time::Instant;

use mgtad::data::{synth_generate, SynthSpec};
use mgtad::detection::PredictionRecord;
use mgtad::eval::evaluate;
use mgtad::infer::{detect, InferConfig};
use mgtad::model::ModelConfig;
use mgtad::train::{fit, TrainConfig};

fn main() -> Result<(), mgtad::Error> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(50);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let train = synth_generate(&SynthSpec { videos: 150, ..Default::default() }, seed)?;
    let test = synth_generate(&SynthSpec { videos: 30, ..Default::default() }, seed + 500)?;

    let start = Instant::now();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs,
        seed,
        ..Default::default()
    };
    let out = fit(&train.videos, &ModelConfig::default(), &cfg)?;
    if let Some(last) = out.trace.last() {
        println!("trained {epochs} epochs in {:.1}s, final loss {:.4}", start.elapsed().as_secs_f64(), last.loss);
    }

    let infer = InferConfig::default();
    let mut preds = Vec::new();
    for v in &test.videos {
        for detection in detect(&out.model, &v.features, &v.annotation.timing(), &infer)? {
            preds.push(PredictionRecord {
                video_id: v.annotation.video_id.clone(),
                detection,
            });
        }
    }
    let truth: Vec<_> = test.videos.iter().map(|v| v.annotation.clone()).collect();
    let report = evaluate(&preds, &truth, 0.5);
    println!(
        "test: {} predictions, {} ground truths, {} matched, F1 {:.2}%",
        report.n_preds, report.n_gts, report.matched, report.f1_percent
    );
    Ok(())
}
