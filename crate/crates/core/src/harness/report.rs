use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::pipeline::RunManifest;
use crate::error::{Error, Result};
use crate::fl::TrainHistory;

/// Rounds averaged after a candidate crossing to confirm it.
pub const SMOOTHING_WINDOW: usize = 10;
pub const TARGET_FRACTIONS: [f64; 3] = [0.7, 0.8, 0.9];
/// Rounds averaged by [`final_accuracy`].
pub const FINAL_WINDOW: usize = 100;

/// Mean accuracy over the last `min(100, len)` rounds.
pub fn final_accuracy(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::invalid("final accuracy of an empty history"));
    }
    let tail = &accuracies[accuracies.len().saturating_sub(FINAL_WINDOW)..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// `s_r = mean(acc[r..r+w])`, the window truncated at the end of the curve.
pub fn forward_means(accuracies: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..accuracies.len())
        .map(|r| {
            let w = &accuracies[r..(r + window).min(accuracies.len())];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// First 1-based round whose accuracy reaches `fraction * acc_centr` while the mean of
/// the [`SMOOTHING_WINDOW`] rounds starting there does too, so isolated spikes are
/// ignored. On a non-decreasing curve this is the first crossing. `None` when never
/// reached.
pub fn rounds_to_target(
    accuracies: &[f64],
    acc_centr: f64,
    fractions: &[f64],
) -> Result<Vec<Option<usize>>> {
    if !(acc_centr > 0.0) {
        return Err(Error::invalid(format!(
            "centralized accuracy must be > 0, got {acc_centr}"
        )));
    }
    let s = forward_means(accuracies, SMOOTHING_WINDOW);
    Ok(fractions
        .iter()
        .map(|f| {
            let target = f * acc_centr;
            (0..accuracies.len())
                .find(|&i| accuracies[i] >= target && s[i] >= target)
                .map(|i| i + 1)
        })
        .collect())
}

/// One line of the speedup table.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRow {
    pub algorithm: String,
    pub target_fraction: f64,
    /// Equivalent rounds to reach the target.
    pub rounds: Option<f64>,
    /// FedAvg's rounds divided by this algorithm's.
    pub speedup: Option<f64>,
}

/// Accuracy curve of one algorithm on the equivalent-round axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub algorithm: String,
    pub accuracies: Vec<f64>,
    pub superclient_epochs: usize,
}

pub fn speedup_table(
    curves: &[Curve],
    acc_centr: f64,
    fractions: &[f64],
) -> Result<Vec<TargetRow>> {
    let mut per_curve = Vec::with_capacity(curves.len());
    for c in curves {
        let r = rounds_to_target(&c.accuracies, acc_centr, fractions)?;
        per_curve.push(
            r.into_iter()
                .map(|x| x.map(|n| n as f64 / c.superclient_epochs.max(1) as f64))
                .collect::<Vec<_>>(),
        );
    }
    let fedavg = curves.iter().position(|c| c.algorithm == "fedavg");
    let mut rows = Vec::new();
    for (c, rounds) in curves.iter().zip(&per_curve) {
        for (i, &f) in fractions.iter().enumerate() {
            let base = fedavg.and_then(|j| per_curve[j][i]);
            rows.push(TargetRow {
                algorithm: c.algorithm.clone(),
                target_fraction: f,
                rounds: rounds[i],
                speedup: match (base, rounds[i]) {
                    (Some(b), Some(r)) if r > 0.0 => Some(b / r),
                    _ => None,
                },
            });
        }
    }
    Ok(rows)
}

pub const NOT_REACHED: &str = "not_reached";

pub fn speedups_csv(rows: &[TargetRow]) -> String {
    let mut out = String::from("algorithm,target_fraction,rounds,speedup_vs_fedavg\n");
    for r in rows {
        let rounds = r.rounds.map_or(NOT_REACHED.to_string(), |v| format!("{v}"));
        let speedup = r.speedup.map_or(String::new(), |v| format!("{v:.4}"));
        let _ = writeln!(
            out,
            "{},{},{rounds},{speedup}",
            r.algorithm, r.target_fraction
        );
    }
    out
}

/// A finished run found on disk.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub accuracies: Vec<f64>,
}

/// Runs under `dir`: the directory itself and its immediate subdirectories that hold
/// both `manifest.json` and `history.csv`, sorted by path.
pub fn collect_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut candidates = vec![dir.to_path_buf()];
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_dir() {
            candidates.push(entry.path());
        }
    }
    candidates.sort();
    let mut runs = Vec::new();
    for d in candidates {
        let manifest_path = d.join("manifest.json");
        let history_path = d.join("history.csv");
        if !manifest_path.is_file() || !history_path.is_file() {
            continue;
        }
        let manifest = RunManifest::load(&manifest_path)?;
        let text =
            std::fs::read_to_string(&history_path).map_err(|e| Error::io(&history_path, e))?;
        let accuracies = TrainHistory::parse_accuracies(&text).ok_or_else(|| Error::Format {
            path: history_path.clone(),
            offset: 0,
            message: "unreadable history.csv".into(),
        })?;
        runs.push(RunRecord {
            dir: d,
            manifest,
            accuracies,
        });
    }
    Ok(runs)
}

/// Per algorithm, the element-wise mean curve over its runs (truncated to the shortest).
fn mean_curves(runs: &[RunRecord]) -> Vec<Curve> {
    let mut names: Vec<String> = runs
        .iter()
        .map(|r| r.manifest.config.algorithm.name().to_string())
        .filter(|n| n != "centralized")
        .collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .map(|name| {
            let members: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.manifest.config.algorithm.name() == name)
                .collect();
            let len = members
                .iter()
                .map(|r| r.accuracies.len())
                .min()
                .unwrap_or(0);
            let accuracies = (0..len)
                .map(|i| {
                    members.iter().map(|r| r.accuracies[i]).sum::<f64>() / members.len() as f64
                })
                .collect();
            Curve {
                algorithm: name,
                accuracies,
                superclient_epochs: members[0].manifest.config.train.superclient_epochs,
            }
        })
        .collect()
}

/// Builds the speedup table for the runs under `dir` and writes `speedups.csv` there.
/// The centralized target is `target` if given, otherwise the mean final accuracy of
/// the centralized runs found.
pub fn report_dir(dir: &Path, target: Option<f64>) -> Result<Vec<TargetRow>> {
    let runs = collect_runs(dir)?;
    let acc_centr = match target {
        Some(t) => t,
        None => {
            let finals: Vec<f64> = runs
                .iter()
                .filter(|r| r.manifest.config.algorithm.name() == "centralized")
                .filter_map(|r| r.accuracies.last().copied())
                .collect();
            if finals.is_empty() {
                return Err(Error::Config(format!(
                    "no centralized run under {} and no --target given",
                    dir.display()
                )));
            }
            finals.iter().sum::<f64>() / finals.len() as f64
        }
    };
    let rows = speedup_table(&mean_curves(&runs), acc_centr, &TARGET_FRACTIONS)?;
    let path = dir.join("speedups.csv");
    std::fs::write(&path, speedups_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
