//! Subcommand implementations. Each takes resolved parameters and a worker
//! pool; per-file work runs in parallel and results are gathered in input
//! order, so outputs do not depend on scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use peakforge::evaluation::CalibrationBin;
use peakforge::synthesis::derive_seed;
use peakforge::{
    calibration_curve, detect_connected_components, detect_iterative, detection_metrics,
    hungarian_match, retention_curve, sample_scene, DetectionMetrics, MatchReport,
};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{CalibrateParams, DetectParams, EvalParams, ReportParams, SynthParams};
use crate::json::{format_float, to_canonical_string};
use crate::schema::{
    CalibrationSummary, DetectEcho, DetectionRecord, DetectionsFile, EvalFile, Method, ReportFile,
    SceneFile, SCHEMA_VERSION,
};
use crate::{mvol, write_atomic};

pub const SCENE_SUFFIX: &str = ".scene.json";
pub const DETECTIONS_SUFFIX: &str = ".det.json";
pub const VOLUME_SUFFIX: &str = ".mvol";

pub fn thread_pool(workers: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("starting worker pool")
}

/// Reports every per-file failure on standard error, then fails if any
/// occurred.
fn settle(results: Vec<(String, Result<()>)>) -> Result<()> {
    let total = results.len();
    let failed: Vec<_> = results
        .into_iter()
        .filter_map(|(name, r)| r.err().map(|e| (name, e)))
        .collect();
    if failed.is_empty() {
        return Ok(());
    }
    for (name, e) in &failed {
        let msg = format!("{e:#}");
        if msg.contains(name.as_str()) {
            eprintln!("error: {msg}");
        } else {
            eprintln!("error: {name}: {msg}");
        }
    }
    bail!("{} of {total} inputs failed", failed.len())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = to_canonical_string(value)?;
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: T =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(value)
}

fn check_version(found: u32, path: &Path) -> Result<()> {
    ensure!(
        found == SCHEMA_VERSION,
        "{}: schema_version {found} is not supported (expected {SCHEMA_VERSION})",
        path.display()
    );
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// The part of the file name before the first `.`.
pub fn pairing_key(path: &Path) -> String {
    let name = file_name(path);
    match name.split_once('.') {
        Some((stem, _)) => stem.to_string(),
        None => name,
    }
}

/// Files named `*suffix` under each directory in `inputs`, plus the plain
/// files given directly, sorted by path.
fn collect_files(inputs: &[PathBuf], suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let entries =
                std::fs::read_dir(input).with_context(|| format!("listing {}", input.display()))?;
            for entry in entries {
                let path = entry?.path();
                if path.is_file() && file_name(&path).ends_with(suffix) {
                    out.push(path);
                }
            }
        } else {
            out.push(input.clone());
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn keyed(files: Vec<PathBuf>) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for f in files {
        if let Some(prev) = map.insert(pairing_key(&f), f.clone()) {
            bail!(
                "{} and {} share the name {}",
                prev.display(),
                f.display(),
                pairing_key(&f)
            );
        }
    }
    Ok(map)
}

/// Pairs detections with scenes by name; any file without a partner is an
/// error that lists all orphans.
pub fn pair_files(detections: &Path, scenes: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let dets = keyed(collect_files(
        &[detections.to_path_buf()],
        DETECTIONS_SUFFIX,
    )?)?;
    let truth = keyed(collect_files(&[scenes.to_path_buf()], SCENE_SUFFIX)?)?;
    let mut orphans: Vec<String> = Vec::new();
    for (k, p) in &dets {
        if !truth.contains_key(k) {
            orphans.push(format!("{} (no scene)", p.display()));
        }
    }
    for (k, p) in &truth {
        if !dets.contains_key(k) {
            orphans.push(format!("{} (no detections)", p.display()));
        }
    }
    if !orphans.is_empty() {
        bail!("unpaired files:\n  {}", orphans.join("\n  "));
    }
    ensure!(
        !dets.is_empty(),
        "no detection files in {}",
        detections.display()
    );
    Ok(dets
        .into_iter()
        .map(|(k, d)| {
            let s = truth[&k].clone();
            (k, d, s)
        })
        .collect())
}

pub fn synth(p: &SynthParams, pool: &ThreadPool) -> Result<()> {
    create_dir(&p.out)?;
    let width = (p.n - 1).to_string().len().max(4);
    let results = pool.install(|| {
        (0..p.n)
            .into_par_iter()
            .map(|i| {
                let stem = format!("scene_{i:0width$}");
                let run = |stem: &str| -> Result<()> {
                    let (scene, volume) = sample_scene(&p.scene, derive_seed(p.seed, i as u64))?;
                    let vol_name = format!("{}{VOLUME_SUFFIX}", stem);
                    mvol::write(&p.out.join(&vol_name), &volume)?;
                    write_json(
                        &p.out.join(format!("{}{SCENE_SUFFIX}", stem)),
                        &SceneFile::new(&scene, vol_name),
                    )
                };
                let result = run(&stem);
                (stem, result)
            })
            .collect()
    });
    settle(results)
}

fn echo(p: &DetectParams) -> DetectEcho {
    let mut e = DetectEcho {
        sigma: None,
        filter_threshold: None,
        continue_threshold: None,
        max_lesions: None,
        window_radius: None,
        tau: None,
        cc_mode: None,
    };
    match p.method {
        Method::Gaussian => {
            let d = &p.detector;
            e.sigma = Some(d.sigma);
            e.filter_threshold = Some(d.filter_threshold);
            e.continue_threshold = Some(d.continue_threshold);
            e.max_lesions = Some(d.max_lesions);
            e.window_radius = Some(d.window_radius);
        }
        Method::Cc => {
            e.tau = Some(p.tau);
            e.cc_mode = Some(p.cc_mode);
        }
    }
    e
}

pub fn detect(p: &DetectParams, pool: &ThreadPool) -> Result<()> {
    let inputs = keyed(collect_files(&p.inputs, VOLUME_SUFFIX)?)?;
    ensure!(!inputs.is_empty(), "no {VOLUME_SUFFIX} files found");
    create_dir(&p.out)?;
    let config = echo(p);
    let jobs: Vec<(String, PathBuf)> = inputs.into_iter().collect();
    let results = pool.install(|| {
        jobs.par_iter()
            .map(|(key, path)| {
                let run = || -> Result<()> {
                    let volume = mvol::read(path)?;
                    let found = match p.method {
                        Method::Gaussian => detect_iterative(&volume, &p.detector)?,
                        Method::Cc => detect_connected_components(&volume, p.tau, p.cc_mode)?,
                    };
                    let file = DetectionsFile {
                        schema_version: SCHEMA_VERSION,
                        method: p.method,
                        source: file_name(path),
                        config: config.clone(),
                        detections: found.iter().map(DetectionRecord::from).collect(),
                    };
                    write_json(&p.out.join(format!("{key}{DETECTIONS_SUFFIX}")), &file)
                };
                (path.display().to_string(), run())
            })
            .collect()
    });
    settle(results)
}

/// Matching outcome for one detections/scene pair.
struct Scored {
    report: MatchReport,
    sizes: Vec<Option<u32>>,
    /// `(alpha, entropy, correct)` per detection.
    detections: Vec<(f64, f64, bool)>,
}

fn score_pairs(
    pairs: &[(String, PathBuf, PathBuf)],
    max_distance: f64,
    pool: &ThreadPool,
) -> Result<Vec<Scored>> {
    let results: Vec<(String, Result<Scored>)> = pool.install(|| {
        pairs
            .par_iter()
            .map(|(key, det_path, scene_path)| {
                let run = || -> Result<Scored> {
                    let dets: DetectionsFile = read_json(det_path)?;
                    check_version(dets.schema_version, det_path)?;
                    let scene: SceneFile = read_json(scene_path)?;
                    check_version(scene.schema_version, scene_path)?;
                    let pred: Vec<_> = dets.detections.iter().map(|d| d.center.clone()).collect();
                    let report = hungarian_match(&pred, &scene.centers(), max_distance)
                        .with_context(|| format!("matching {}", det_path.display()))?;
                    let correct = report.prediction_correct();
                    Ok(Scored {
                        sizes: scene.lesions.iter().map(|l| Some(l.size_voxels)).collect(),
                        detections: dets
                            .detections
                            .iter()
                            .zip(correct)
                            .map(|(d, ok)| (d.alpha, d.entropy_bits, ok))
                            .collect(),
                        report,
                    })
                };
                (key.clone(), run())
            })
            .collect()
    });
    let mut out = Vec::with_capacity(results.len());
    let mut status = Vec::with_capacity(results.len());
    for (key, r) in results {
        match r {
            Ok(s) => {
                out.push(s);
                status.push((key, Ok(())));
            }
            Err(e) => status.push((key, Err(e))),
        }
    }
    settle(status)?;
    Ok(out)
}

fn calibration_summary(scored: &[Scored], bins: usize) -> Result<CalibrationSummary> {
    let pairs: Vec<(f64, bool)> = scored
        .iter()
        .flat_map(|s| s.detections.iter().map(|&(a, _, ok)| (a, ok)))
        .collect();
    let report = calibration_curve(&pairs, bins)?;
    Ok(CalibrationSummary {
        n_bins: bins,
        ece: report.ece,
        total: report.total,
        bins: report.bins,
    })
}

/// Calibration plot data: `bin_center, confidence, accuracy, count`.
pub fn calibration_tsv(c: &CalibrationSummary) -> String {
    let mut s = String::from("bin_center\tconfidence\taccuracy\tcount\n");
    for b in &c.bins {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            format_float(b.center()),
            format_float(b.mean_confidence),
            format_float(b.accuracy),
            b.count
        );
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn eval(p: &EvalParams, pool: &ThreadPool) -> Result<()> {
    let pairs = pair_files(&p.detections, &p.scenes)?;
    let scored = score_pairs(&pairs, p.max_distance, pool)?;
    let reports: Vec<MatchReport> = scored.iter().map(|s| s.report.clone()).collect();
    let sizes: Vec<Vec<Option<u32>>> = scored.iter().map(|s| s.sizes.clone()).collect();
    let metrics = detection_metrics(&reports, &sizes, &p.size_bins)?;
    let calibration = calibration_summary(&scored, p.bins)?;
    let by_entropy: Vec<(f64, bool)> = scored
        .iter()
        .flat_map(|s| s.detections.iter().map(|&(_, e, ok)| (e, ok)))
        .collect();
    let retention = retention_curve(&by_entropy)?;

    create_dir(&p.out)?;
    let mut tsv = String::from("fraction\taccuracy\n");
    for r in &retention {
        let _ = writeln!(
            tsv,
            "{}\t{}",
            format_float(r.fraction),
            format_float(r.accuracy)
        );
    }
    write_text(
        &p.out.join("calibration.tsv"),
        &calibration_tsv(&calibration),
    )?;
    write_text(&p.out.join("retention.tsv"), &tsv)?;
    write_json(
        &p.out.join("metrics.json"),
        &EvalFile {
            schema_version: SCHEMA_VERSION,
            volumes: scored.len(),
            max_distance: p.max_distance,
            metrics,
            calibration,
            retention,
        },
    )
}

#[derive(Serialize)]
struct CalibrationFile<'a> {
    schema_version: u32,
    volumes: usize,
    max_distance: f64,
    calibration: &'a CalibrationSummary,
}

pub fn calibrate(p: &CalibrateParams, pool: &ThreadPool) -> Result<()> {
    let pairs = pair_files(&p.detections, &p.scenes)?;
    let scored = score_pairs(&pairs, p.max_distance, pool)?;
    let calibration = calibration_summary(&scored, p.bins)?;
    create_dir(&p.out)?;
    write_text(
        &p.out.join("calibration.tsv"),
        &calibration_tsv(&calibration),
    )?;
    write_json(
        &p.out.join("calibration.json"),
        &CalibrationFile {
            schema_version: SCHEMA_VERSION,
            volumes: scored.len(),
            max_distance: p.max_distance,
            calibration: &calibration,
        },
    )
}

/// Pools reliability bins with the same edges and recomputes the ECE.
pub fn merge_calibration(parts: &[&CalibrationSummary]) -> Result<CalibrationSummary> {
    let n_bins = parts.first().map_or(10, |c| c.n_bins);
    ensure!(
        parts.iter().all(|c| c.n_bins == n_bins),
        "eval outputs use different calibration bin counts"
    );
    // per bin index: (confidence sum, hits, count)
    let mut acc = vec![(0.0f64, 0.0f64, 0usize); n_bins];
    for c in parts {
        for b in &c.bins {
            let i = ((b.lower * n_bins as f64).round() as usize).min(n_bins - 1);
            acc[i].0 += b.mean_confidence * b.count as f64;
            acc[i].1 += (b.accuracy * b.count as f64).round();
            acc[i].2 += b.count;
        }
    }
    let total: usize = acc.iter().map(|a| a.2).sum();
    let mut ece = 0.0;
    let bins: Vec<CalibrationBin> = acc
        .iter()
        .enumerate()
        .filter(|(_, a)| a.2 > 0)
        .map(|(i, &(conf, hits, count))| {
            let mean_confidence = conf / count as f64;
            let accuracy = hits / count as f64;
            ece += count as f64 / total as f64 * (mean_confidence - accuracy).abs();
            CalibrationBin {
                lower: i as f64 / n_bins as f64,
                upper: (i + 1) as f64 / n_bins as f64,
                mean_confidence,
                accuracy,
                count,
            }
        })
        .collect();
    Ok(CalibrationSummary {
        n_bins,
        ece,
        total,
        bins,
    })
}

pub fn report(p: &ReportParams, _pool: &ThreadPool) -> Result<()> {
    let files = collect_files(&p.inputs, "metrics.json")?;
    ensure!(!files.is_empty(), "no metrics.json files found");
    let mut evals = Vec::with_capacity(files.len());
    let mut status = Vec::new();
    for f in &files {
        match read_json::<EvalFile>(f).and_then(|e| check_version(e.schema_version, f).map(|_| e)) {
            Ok(e) => {
                evals.push(e);
                status.push((f.display().to_string(), Ok(())));
            }
            Err(e) => status.push((f.display().to_string(), Err(e))),
        }
    }
    settle(status)?;
    let metrics = DetectionMetrics::merge(evals.iter().map(|e| &e.metrics));
    let calibration = merge_calibration(&evals.iter().map(|e| &e.calibration).collect::<Vec<_>>())?;
    create_dir(&p.out)?;
    write_text(
        &p.out.join("calibration.tsv"),
        &calibration_tsv(&calibration),
    )?;
    write_json(
        &p.out.join("report.json"),
        &ReportFile {
            schema_version: SCHEMA_VERSION,
            inputs: files.iter().map(|f| f.display().to_string()).collect(),
            volumes: evals.iter().map(|e| e.volumes).sum(),
            metrics,
            calibration,
        },
    )
}
