//! Runs the synthetic noisy benchmark and prints detection, calibration,
//! conservation and uncertainty summaries.
//!
//! `cargo run --release --example noisy_benchmark -- [noise_fraction] [scenes]`

use std::time::Instant;

use peakforge::synthesis::derive_seed;
use peakforge::{
    calibration_curve, detect_iterative_trace, detection_metrics, hungarian_match, retention_curve,
    sample_scene, spearman, DetectorConfig, SceneConfig,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let noise: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let scenes: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let scene_cfg = SceneConfig::default().with_noise_fraction(noise);
    let cfg = DetectorConfig::new(1.0);

    let start = Instant::now();
    let mut reports = Vec::new();
    let mut fitted = Vec::new();
    let mut initial = Vec::new();
    let mut retention = Vec::new();
    let mut unfiltered = Vec::new();
    let mut worst_conservation: f64 = 0.0;
    for i in 0..scenes {
        let (scene, vol) = sample_scene(&scene_cfg, derive_seed(2024, i)).expect("scene");
        let trace = detect_iterative_trace(&vol, &cfg).expect("detect");
        let removed: f64 = trace.candidates.iter().map(|c| c.amplitude).sum();
        let err = (trace.residual.mass() + removed - trace.input_mass).abs();
        let steps = trace.candidates.len().max(1) as f64;
        worst_conservation = worst_conservation.max(err / steps);

        let all: Vec<_> = trace.candidates.iter().map(|c| c.center.clone()).collect();
        let all_report = hungarian_match(&all, &scene.centers(), 6.0).unwrap();
        for (c, ok) in trace.candidates.iter().zip(all_report.prediction_correct()) {
            fitted.push((c.alpha, ok));
            initial.push((c.initial_alpha, ok));
            unfiltered.push((c.entropy_bits, ok));
        }

        let kept = trace.filtered(cfg.filter_threshold);
        let pts: Vec<_> = kept.iter().map(|c| c.center.clone()).collect();
        let report = hungarian_match(&pts, &scene.centers(), 6.0).unwrap();
        for (c, ok) in kept.iter().zip(report.prediction_correct()) {
            retention.push((c.entropy_bits, ok));
        }
        reports.push(report);
    }
    let m = detection_metrics(&reports, &[], &[]).unwrap();
    println!(
        "noise {noise}: tp {} fp {} fn {} precision {:.4} recall {:.4} f1 {:.4}",
        m.tp, m.fp, m.fn_, m.precision, m.recall, m.f1
    );
    let fe = calibration_curve(&fitted, 10).unwrap();
    let ie = calibration_curve(&initial, 10).unwrap();
    println!(
        "ece fitted {:.4} initial {:.4} (n = {})",
        fe.ece, ie.ece, fe.total
    );
    for b in &fe.bins {
        println!(
            "  [{:.1},{:.1}) conf {:.3} acc {:.3} n {}",
            b.lower, b.upper, b.mean_confidence, b.accuracy, b.count
        );
    }
    let curve = retention_curve(&retention).unwrap();
    for p in &curve {
        println!("  retain {:.1}: acc {:.4}", p.fraction, p.accuracy);
    }
    let ent: Vec<f64> = retention.iter().map(|r| r.0).collect();
    let wrong: Vec<f64> = retention
        .iter()
        .map(|r| if r.1 { 0.0 } else { 1.0 })
        .collect();
    println!(
        "spearman(entropy, incorrect) = {:?}",
        spearman(&ent, &wrong)
    );
    let ent: Vec<f64> = unfiltered.iter().map(|r| r.0).collect();
    let wrong: Vec<f64> = unfiltered
        .iter()
        .map(|r| if r.1 { 0.0 } else { 1.0 })
        .collect();
    println!(
        "spearman over all candidates = {:?}",
        spearman(&ent, &wrong)
    );
    println!("worst conservation error per step {worst_conservation:.3e}");
    println!("elapsed {:.2?}", start.elapsed());
}
