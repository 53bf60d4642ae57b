//! Plot-ready tables: error CDFs, trajectory bands and heatmap matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use tradeoff_core::hetero::HeatmapCell;
use tradeoff_core::io::{fmt_real, load_table, save_table, CdfPoint, RunManifest};
use tradeoff_core::metrics::ErrorStats;
use tradeoff_core::optimizer::TrajectoryPoint;
use tradeoff_core::sweep::{emit_cdf, EvaluationRecord};

use crate::ReportArgs;

type Stat = (&'static str, fn(&ErrorStats) -> f64);

const STATS: [Stat; 3] = [("mean", |s| s.mean), ("std", |s| s.std), ("entropy", |s| s.entropy)];

pub fn report(a: &ReportArgs, mut m: RunManifest) -> Result<()> {
    if a.points == 0 {
        return Err(tradeoff_core::Error::InvalidArgument("--points must be positive".into()).into());
    }
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let written = if let Some(p) = &a.input.records {
        m.set("records", p.display());
        cdf_tables(p, &a.out_dir, a.points)?
    } else if let Some(p) = &a.input.trajectory {
        m.set("trajectory", p.display());
        band_table(p, &a.out_dir)?
    } else if let Some(p) = &a.input.heatmaps {
        m.set("heatmaps", p.display());
        heatmap_matrices(p, &a.out_dir)?
    } else {
        unreachable!("clap requires one input")
    };
    m.set("out_dir", a.out_dir.display()).set("points", a.points);
    m.save(a.out_dir.join("report.manifest"))?;
    for f in written {
        println!("{}", a.out_dir.join(f).display());
    }
    Ok(())
}

/// `cdf_<stat>_<local|global>.csv`, one curve per mechanism.
fn cdf_tables(records: &Path, out: &Path, points: usize) -> Result<Vec<String>> {
    let records: Vec<EvaluationRecord> =
        load_table(records).with_context(|| format!("reading {}", records.display()))?;
    let mut files = Vec::new();
    for (scope, pick) in [
        (
            "local",
            (|r: &EvaluationRecord| r.local_stats) as fn(&EvaluationRecord) -> ErrorStats,
        ),
        ("global", |r: &EvaluationRecord| r.global_stats),
    ] {
        for (stat, get) in STATS {
            let mut by_mech: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for r in &records {
                by_mech
                    .entry(r.setting.mechanism().as_str())
                    .or_default()
                    .push(get(&pick(r)));
            }
            let mut rows = Vec::new();
            for (mech, values) in by_mech {
                for (x, f) in emit_cdf(&values, points)? {
                    rows.push(CdfPoint {
                        series: mech.to_string(),
                        x,
                        cdf: f,
                    });
                }
            }
            let name = format!("cdf_{stat}_{scope}.csv");
            save_table(out.join(&name), &rows)?;
            files.push(name);
        }
    }
    Ok(files)
}

fn band_table(trajectory: &Path, out: &Path) -> Result<Vec<String>> {
    let mut points: Vec<TrajectoryPoint> =
        load_table(trajectory).with_context(|| format!("reading {}", trajectory.display()))?;
    points.sort_by(|a, b| a.privacy.total_cmp(&b.privacy));
    let name = "trajectory_band.csv".to_string();
    let mut w = BufWriter::new(File::create(out.join(&name))?);
    writeln!(w, "privacy,lower,median,upper,width")?;
    for p in &points {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_real(p.privacy),
            fmt_real(p.min_utility),
            fmt_real(p.median_utility),
            fmt_real(p.max_utility),
            fmt_real(p.max_utility - p.min_utility)
        )?;
    }
    w.flush()?;
    Ok(vec![name])
}

/// `heatmap_<metric>_<statistic>.csv`: dominant settings down, shares across.
fn heatmap_matrices(heatmaps: &Path, out: &Path) -> Result<Vec<String>> {
    let cells: Vec<HeatmapCell> = load_table(heatmaps).with_context(|| format!("reading {}", heatmaps.display()))?;
    let mut files = Vec::new();
    for metric in ["privacy", "utility"] {
        for statistic in ["median", "iqr"] {
            let panel: Vec<&HeatmapCell> = cells
                .iter()
                .filter(|c| c.metric.as_str() == metric && c.statistic.as_str() == statistic)
                .collect();
            let mut shares: Vec<f64> = panel.iter().map(|c| c.dominant_share).collect();
            shares.sort_by(f64::total_cmp);
            shares.dedup();
            let settings: BTreeSet<&str> = panel.iter().map(|c| c.dominant_setting.as_str()).collect();
            let name = format!("heatmap_{metric}_{statistic}.csv");
            let mut w = BufWriter::new(File::create(out.join(&name))?);
            let header: Vec<String> = std::iter::once("dominant_setting".to_string())
                .chain(shares.iter().map(|s| format!("share_{}", fmt_real(*s))))
                .collect();
            writeln!(w, "{}", header.join(","))?;
            for s in settings {
                let mut row = vec![s.to_string()];
                for share in &shares {
                    let v = panel
                        .iter()
                        .find(|c| c.dominant_setting == s && c.dominant_share == *share)
                        .map(|c| fmt_real(c.value))
                        .unwrap_or_default();
                    row.push(v);
                }
                writeln!(w, "{}", row.join(","))?;
            }
            w.flush()?;
            files.push(name);
        }
    }
    Ok(files)
}
