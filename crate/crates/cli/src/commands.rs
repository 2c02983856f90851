//! The `simulate` and `video` subcommands: run experiments, write artifacts.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};

use femtosim_core::config::ScenarioConfig;
use femtosim_core::simulator::{
    action_frequencies, compute_metrics, run_scenario, run_video_experiment, utility_series,
    RunOptions, RunSummary,
};
use femtosim_core::trace::{scenario_hash, write_summary, write_trace, TraceFormat, TraceRecord};

use crate::{Failure, SimulateArgs, VideoArgs};

/// Keep first occurrences only, preserving order.
fn dedup<T: PartialEq + Copy>(values: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for &v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, Failure> {
    ScenarioConfig::load(path)
        .with_context(|| format!("loading scenario {}", path.display()))
        .map_err(Failure::from)
}

fn series_path(dir: &Path, prefix: &str, series: &str, format: TraceFormat) -> std::path::PathBuf {
    dir.join(format!("{prefix}-{series}.{}", format.extension()))
}

fn write_series<T: TraceRecord>(
    dir: &Path,
    prefix: &str,
    series: &str,
    format: TraceFormat,
    scenario: &str,
    seed: u64,
    rows: &[T],
) -> anyhow::Result<()> {
    let path = series_path(dir, prefix, series, format);
    write_trace(&path, format, scenario, seed, rows)
        .with_context(|| format!("writing {}", path.display()))
}

fn describe(summary: &RunSummary) -> String {
    let detected = summary.detections.iter().filter(|d| d.alarm_slot.is_some()).count();
    format!(
        "{} seed {}: {} rounds over {} slots, avg utility {:.4}, late-window {:.4}, \
         changes detected {}/{}, regret {:.1}, backhaul {}",
        summary.policy.name(),
        summary.seed,
        summary.rounds,
        summary.total_slots,
        summary.average_utility,
        summary.final_window_utility,
        detected,
        summary.detections.len(),
        summary.cumulative_regret,
        summary.backhaul_units
    )
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let mut cfg = load_scenario(&args.config)?;
    if let Some(replications) = args.replications {
        cfg.run.replications = replications;
        cfg.validate().context("scenario invalid after overrides")?;
    }
    let seeds = if args.seeds.is_empty() { cfg.seeds() } else { dedup(&args.seeds) };
    if seeds.is_empty() {
        return Err(anyhow!("no seeds to run").into());
    }
    let policies =
        if args.policies.is_empty() { vec![cfg.run.policy] } else { dedup(&args.policies) };

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let hash = scenario_hash(&cfg);
    let opts = RunOptions { record_detector_rows: args.detector_trace };

    let mut summaries: Vec<RunSummary> = Vec::new();
    for &policy in &policies {
        for &seed in &seeds {
            let output = run_scenario(&cfg, seed, policy, &opts)
                .with_context(|| format!("running {} seed {seed}", policy.name()))?;
            let prefix = format!("{}-seed{}", policy.name(), seed);
            let dir = args.out.as_path();
            let f = args.format;
            write_series(dir, &prefix, "rounds", f, &hash, seed, &output.rounds)?;
            write_series(dir, &prefix, "cache", f, &hash, seed, &output.cache_events)?;
            write_series(dir, &prefix, "alarms", f, &hash, seed, &output.alarms)?;
            let utility = utility_series(&output.rounds);
            write_series(dir, &prefix, "utility", f, &hash, seed, &utility)?;
            let actions = action_frequencies(&cfg, &output.rounds);
            write_series(dir, &prefix, "actions", f, &hash, seed, &actions)?;
            if args.detector_trace {
                write_series(dir, &prefix, "detector", f, &hash, seed, &output.detector_rows)?;
            }

            let summary = compute_metrics(&cfg, &output);
            let summary_path = dir.join(format!("{prefix}-summary.json"));
            write_summary(&summary_path, &summary)
                .with_context(|| format!("writing {}", summary_path.display()))?;
            println!("{}", describe(&summary));
            summaries.push(summary);
        }
    }

    let metrics_path = args.out.join("metrics.json");
    write_summary(&metrics_path, &summaries)
        .with_context(|| format!("writing {}", metrics_path.display()))?;
    println!(
        "wrote {} runs ({} artifacts each) to {}",
        summaries.len(),
        if args.detector_trace { 7 } else { 6 },
        args.out.display()
    );
    Ok(())
}

pub fn video(args: &VideoArgs) -> Result<(), Failure> {
    let cfg = load_scenario(&args.config)?;
    let video = cfg
        .video
        .clone()
        .ok_or_else(|| anyhow!("scenario {} has no [video] section", args.config.display()))?;
    let seed = args.seed.unwrap_or(cfg.run.base_seed);

    let points = run_video_experiment(&video, seed).context("running video sweep")?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let path = args.out.join(format!("video.{}", args.format.extension()));
    write_trace(&path, args.format, &scenario_hash(&cfg), seed, &points)
        .with_context(|| format!("writing {}", path.display()))?;

    for &multiplier in &video.deadline_multipliers {
        let curve: Vec<&femtosim_core::simulator::VideoPoint> = points
            .iter()
            .filter(|p| p.deadline_multiplier == multiplier)
            .collect();
        let worst = curve.iter().map(|p| p.outage_rate).fold(0.0f64, f64::max);
        let best = curve.iter().map(|p| p.outage_rate).fold(1.0f64, f64::min);
        println!(
            "deadline x{multiplier}: {} points, outage {best:.4}..{worst:.4}",
            curve.len()
        );
    }
    println!("wrote {} points to {}", points.len(), path.display());
    Ok(())
}
