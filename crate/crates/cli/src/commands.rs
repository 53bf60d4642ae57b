use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use tradeoff_core::hetero::{enumerate_histograms, heatmap_tables, simulate_all, HeteroConfig};
use tradeoff_core::io::{
    generate_synthetic, load_csv, load_grid, load_raw, load_table, load_table_prefix, save_dataset_csv, save_table,
    write_table, CsvTable, HeteroLogRow, RunManifest, SyntheticSpec,
};
use tradeoff_core::mechanisms::{
    default_sine_values, generate_laplace_grid, generate_sine_grid, CombinationMode, GridProvenance, SettingGrid,
    DEFAULT_LAPLACE_END,
};
use tradeoff_core::metrics::{NormalizationConstants, ObjectiveWeights};
use tradeoff_core::optimizer::{
    optimize as run_optimize, BinResult, BinSpec, ConstraintMode, HardConstraint, TrajectoryPoint,
};
use tradeoff_core::sweep::{default_schedule, evaluate_cell, EvaluationRecord, SubsetSchedule};
use tradeoff_core::{Error, Mechanism, PrivacySetting, RngSeedPlan, SensorDataset};

use crate::{GenerateArgs, HeteroArgs, OptimizeArgs, SweepArgs};

const REDUCED_LAPLACE_END: f64 = 0.2;
const REDUCED_SINE_VALUES: [f64; 4] = [0.0, 0.3, 0.6, 0.9];
/// Sweep cells evaluated between flushes of the output file.
const CHUNK: usize = 256;

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn generate(a: &GenerateArgs, mut m: RunManifest) -> Result<()> {
    let mut spec = SyntheticSpec::with_shape(a.users as usize, a.days as usize, a.slots as usize);
    spec.missing_rate = a.missing_rate;
    spec.zero_rate = a.zero_rate;
    let ds = generate_synthetic(&spec, a.seed)?;
    save_dataset_csv(&a.out, &ds).with_context(|| format!("writing {}", a.out.display()))?;
    m.set("users", a.users)
        .set("days", a.days)
        .set("slots", a.slots)
        .set("missing_rate", a.missing_rate)
        .set("zero_rate", a.zero_rate)
        .set("seed", a.seed)
        .set("out", a.out.display());
    m.save(manifest_path(&a.out))?;
    println!(
        "wrote {} users x {} slots ({} cells) to {}",
        ds.n_users(),
        ds.n_slots(),
        spec.cell_count(),
        a.out.display()
    );
    Ok(())
}

fn combination(s: &str) -> Result<CombinationMode> {
    match s {
        "multiset" => Ok(CombinationMode::Multiset),
        "product" | "cartesian" => Ok(CombinationMode::CartesianProduct),
        other => Err(usage(format!("unknown combination mode '{other}' (multiset|product)"))),
    }
}

fn build_grid(a: &SweepArgs, m: &mut RunManifest) -> Result<Vec<PrivacySetting>> {
    let mut settings = Vec::new();
    for source in a.grid.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match source {
            "laplace" => {
                let end = a.b_end.unwrap_or(if a.full {
                    DEFAULT_LAPLACE_END
                } else {
                    REDUCED_LAPLACE_END
                });
                let grid = generate_laplace_grid(a.b_start, a.b_step, end)?;
                m.set(
                    "laplace",
                    format!("{}:{}:{} ({} settings)", a.b_start, a.b_step, end, grid.len()),
                );
                settings.extend(grid.into_settings());
            }
            "sine" => {
                let values = match (&a.sine_values, a.full) {
                    (Some(v), _) => v.clone(),
                    (None, true) => default_sine_values(),
                    (None, false) => REDUCED_SINE_VALUES.to_vec(),
                };
                let grid = generate_sine_grid(&values, a.coeffs, combination(&a.combination)?)?;
                m.set(
                    "sine",
                    format!(
                        "values={} coeffs={} {} ({} settings)",
                        join(&values),
                        a.coeffs,
                        a.combination,
                        grid.len()
                    ),
                );
                settings.extend(grid.into_settings());
            }
            "nomask" => {
                m.set("nomask", true);
                settings.push(PrivacySetting::no_mask());
            }
            other => match other.strip_prefix("custom:") {
                Some(path) => {
                    let grid = load_grid(path).with_context(|| format!("reading {path}"))?;
                    m.set("custom", format!("{path} ({} settings)", grid.len()));
                    settings.extend(grid.into_settings());
                }
                None => {
                    return Err(usage(format!(
                        "unknown grid '{other}' (laplace|sine|nomask|custom:<file>)"
                    )))
                }
            },
        }
    }
    if settings.is_empty() {
        return Err(usage("empty grid"));
    }
    // rejects the same id coming from two sources
    Ok(SettingGrid::new(settings, GridProvenance::Custom)?.into_settings())
}

fn build_schedule(a: &SweepArgs, ds: &SensorDataset) -> Result<SubsetSchedule> {
    if a.subsets_per_size == 0 {
        return Err(usage("--subsets-per-size must be positive"));
    }
    let sizes = match a.schedule.as_str() {
        "default" => default_schedule(ds.n_users()).sizes().to_vec(),
        s => match s.strip_prefix("sizes:") {
            Some(list) => list
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|_| usage(format!("bad subset size '{x}'")))
                })
                .collect::<Result<Vec<_>>>()?,
            None => return Err(usage(format!("unknown schedule '{s}' (default|sizes:<list>)"))),
        },
    };
    let kept: Vec<usize> = sizes.iter().copied().filter(|&s| s <= ds.n_users()).collect();
    for s in sizes.iter().filter(|&&s| s > ds.n_users()) {
        log::warn!("skipping subset size {s}: dataset has {} users", ds.n_users());
    }
    if kept.contains(&0) {
        return Err(usage("subset sizes must be positive"));
    }
    Ok(SubsetSchedule::new(kept, a.subsets_per_size)?)
}

type Key = (String, usize, usize, usize);

/// Opens the sweep output for appending, returning the keys it already
/// holds. A partially written trailing line is cut off.
fn open_records(out: &Path, resume: bool) -> Result<(BufWriter<File>, HashSet<Key>)> {
    if out.exists() && !resume {
        bail!("{} already exists; pass --resume to continue it", out.display());
    }
    if out.exists() {
        let (rows, intact) = load_table_prefix::<EvaluationRecord>(out)
            .with_context(|| format!("{} is not a resumable records file", out.display()))?;
        let file = OpenOptions::new().write(true).open(out)?;
        let len = file.metadata()?.len();
        if intact < len {
            log::warn!("dropping {} bytes of a partial trailing row", len - intact);
        }
        file.set_len(intact)?;
        let mut w = BufWriter::new(OpenOptions::new().append(true).open(out)?);
        if intact == 0 {
            write_table::<EvaluationRecord, _>(&mut w, &[], true)?;
        }
        log::info!("resuming with {} existing records", rows.len());
        return Ok((w, rows.iter().map(EvaluationRecord::key).collect()));
    }
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    write_table::<EvaluationRecord, _>(&mut w, &[], true)?;
    Ok((w, HashSet::new()))
}

pub fn sweep(a: &SweepArgs, mut m: RunManifest) -> Result<()> {
    if a.reps == 0 {
        return Err(usage("--reps must be positive"));
    }
    let ds = load_csv(&a.data, a.slots_per_period).with_context(|| format!("reading {}", a.data.display()))?;
    m.set("data", a.data.display())
        .set("slots_per_period", a.slots_per_period);
    let settings = build_grid(a, &mut m)?;
    let schedule = build_schedule(a, &ds)?;
    let plan = RngSeedPlan::new(a.seed);
    m.set("settings", settings.len())
        .set("sizes", join(schedule.sizes()))
        .set("subsets_per_size", a.subsets_per_size)
        .set("reps", a.reps)
        .set("seed", a.seed)
        .set("out", a.out.display());

    let (mut out, done) = open_records(&a.out, a.resume)?;
    let mut cells = Vec::new();
    for (i, s) in settings.iter().enumerate() {
        for &size in schedule.sizes() {
            for draw in 0..schedule.repetitions_per_size() {
                for rep in 0..a.reps {
                    if !done.contains(&(s.id().to_string(), size, draw, rep)) {
                        cells.push((i, size, draw, rep));
                    }
                }
            }
        }
    }
    let total = cells.len();
    log::info!("{} settings, {total} records to evaluate", settings.len());
    for (k, chunk) in cells.chunks(CHUNK).enumerate() {
        let records: Vec<EvaluationRecord> = chunk
            .par_iter()
            .map(|&(i, size, draw, rep)| evaluate_cell(&settings[i], &ds, size, draw, rep, &plan))
            .collect();
        write_table(&mut out, &records, false)?;
        out.flush()?;
        log::info!("{}/{total} records", (k * CHUNK + chunk.len()).min(total));
    }
    drop(out);
    m.save(manifest_path(&a.out))?;
    println!(
        "{} settings x {} sizes: {} new records, {} already present, written to {}",
        settings.len(),
        schedule.sizes().len(),
        total,
        done.len(),
        a.out.display()
    );
    Ok(())
}

fn weights(alpha: &[f64], gamma: &[f64]) -> Result<ObjectiveWeights> {
    let three = |v: &[f64], name: &str| -> Result<[f64; 3]> {
        v.try_into()
            .map_err(|_| usage(format!("--{name} needs exactly 3 comma-separated weights")))
    };
    Ok(ObjectiveWeights::new(three(alpha, "alpha")?, three(gamma, "gamma")?)?)
}

pub fn optimize(a: &OptimizeArgs, mut m: RunManifest) -> Result<()> {
    let w = weights(&a.alpha, &a.gamma)?;
    let spec = BinSpec::new(a.bin_width, a.omega)?;
    let mode = match a.constraint_mode.as_str() {
        "per-record" => ConstraintMode::PerRecord,
        "aggregate" => ConstraintMode::Aggregate,
        other => {
            return Err(usage(format!(
                "unknown constraint mode '{other}' (per-record|aggregate)"
            )))
        }
    };
    let hc = HardConstraint::new(a.max_mean_e, a.max_std_e, mode)?;
    let records: Vec<EvaluationRecord> =
        load_table(&a.records).with_context(|| format!("reading {}", a.records.display()))?;
    let opt = run_optimize(&records, &w, &spec, &hc, a.resolution)?;

    m.set("records", a.records.display())
        .set("alpha", join(&a.alpha))
        .set("gamma", join(&a.gamma))
        .set("bin_width", a.bin_width)
        .set("omega", a.omega)
        .set("max_mean_e", a.max_mean_e)
        .set("max_std_e", a.max_std_e)
        .set("constraint_mode", &a.constraint_mode)
        .set("resolution", a.resolution);

    let n_settings = opt.constraint.survivors.len() + opt.constraint.eliminated.len();
    match &opt.constraint.norm {
        Some(norm) => {
            let names = NormalizationConstants::COLUMNS;
            let line: Vec<String> = names
                .iter()
                .zip(norm.as_array())
                .map(|(n, v)| format!("{n}={v}"))
                .collect();
            println!("normalization: {}", line.join(" "));
            println!(
                "{} of {n_settings} settings pass the hard constraint",
                opt.constraint.survivors.len()
            );
            save_table(&a.out_norm, &[*norm])?;
            save_table(&a.out_bins, &opt.bins)?;
            for b in &opt.bins {
                match (&b.winner, b.objective) {
                    (Some(s), Some(o)) => println!("bin [{}, {}): {} objective={o}", b.lo, b.hi, s.id()),
                    _ => println!("bin [{}, {}): no setting", b.lo, b.hi),
                }
            }
        }
        None => {
            eprintln!("all {n_settings} settings were eliminated by the hard constraint; writing empty outputs");
            save_table::<NormalizationConstants>(&a.out_norm, &[])?;
            save_table::<BinResult>(&a.out_bins, &[])?;
        }
    }
    save_table::<TrajectoryPoint>(&a.out_trajectory, &opt.trajectory)?;
    m.set("out_bins", a.out_bins.display())
        .set("out_trajectory", a.out_trajectory.display())
        .set("out_norm", a.out_norm.display());
    m.save(manifest_path(&a.out_bins))?;
    Ok(())
}

fn resolve_id(id: &str, grid: Option<&SettingGrid>) -> Result<PrivacySetting> {
    match grid {
        Some(g) => g
            .get(id)
            .cloned()
            .ok_or_else(|| usage(format!("unknown setting id '{id}': not in the grid"))),
        None => PrivacySetting::parse_id(id).map_err(|_| usage(format!("unknown setting id '{id}'"))),
    }
}

/// Palette from a table with a `setting_id` column (bin results, records),
/// a grid file, or a comma-separated id list. Duplicates keep the first.
fn resolve_palette(spec: &str, grid: Option<&Path>) -> Result<Vec<PrivacySetting>> {
    let grid = grid
        .map(|g| load_grid(g).with_context(|| format!("reading {}", g.display())))
        .transpose()?;
    let path = Path::new(spec);
    let mut palette = Vec::new();
    if path.is_file() {
        let (header, rows) = load_raw(path).with_context(|| format!("reading {}", path.display()))?;
        let col = |name: &str| header.iter().position(|h| h == name);
        if let Some(id_col) = col("setting_id") {
            let (mech_col, params_col) = (col("mechanism"), col("params"));
            for rec in &rows {
                let id = &rec[id_col];
                if id.is_empty() {
                    continue;
                }
                let setting = match (mech_col, params_col, &grid) {
                    (Some(mc), Some(pc), None) => {
                        let mech: Mechanism = rec[mc].parse()?;
                        let params = if rec[pc].is_empty() {
                            Vec::new()
                        } else {
                            rec[pc]
                                .split(';')
                                .map(|p| p.parse::<f64>().map_err(|_| usage(format!("bad parameter '{p}'"))))
                                .collect::<Result<Vec<_>>>()?
                        };
                        PrivacySetting::with_id(mech, params, id)?
                    }
                    _ => resolve_id(id, grid.as_ref())?,
                };
                palette.push(setting);
            }
        } else if col("id").is_some() && col("mechanism").is_some() {
            palette = load_grid(path)?.into_settings();
        } else {
            bail!("{}: palette file needs a setting_id column", path.display());
        }
    } else {
        for id in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            palette.push(resolve_id(id, grid.as_ref())?);
        }
    }
    let mut seen = HashSet::new();
    palette.retain(|s| seen.insert(s.id().to_string()));
    if palette.is_empty() {
        return Err(usage(format!("palette '{spec}' names no settings")));
    }
    Ok(palette)
}

/// Maxima of the homogeneous full-set runs of every palette setting.
fn homogeneous_norm(
    palette: &[PrivacySetting],
    ds: &SensorDataset,
    reps: usize,
    plan: &RngSeedPlan,
) -> Result<NormalizationConstants> {
    let cells: Vec<(usize, usize)> = (0..palette.len())
        .flat_map(|i| (0..reps).map(move |r| (i, r)))
        .collect();
    let records: Vec<EvaluationRecord> = cells
        .par_iter()
        .map(|&(i, rep)| evaluate_cell(&palette[i], ds, ds.n_users(), 0, rep, plan))
        .collect();
    NormalizationConstants::from_maxima(records.iter().map(|r| (&r.local_stats, &r.global_stats)))
        .ok_or_else(|| usage("no runs to normalize against"))
}

pub fn hetero(a: &HeteroArgs, mut m: RunManifest) -> Result<()> {
    if a.reps == 0 {
        return Err(usage("--reps must be positive"));
    }
    let w = weights(&a.alpha, &a.gamma)?;
    let palette = resolve_palette(&a.palette, a.grid.as_deref())?;
    let ids: Vec<String> = palette.iter().map(|s| s.id().to_string()).collect();
    let histograms = enumerate_histograms(&ids, a.step)?;
    let ds = load_csv(&a.data, a.slots_per_period).with_context(|| format!("reading {}", a.data.display()))?;
    let plan = RngSeedPlan::new(a.seed);
    let norm = match &a.norm {
        Some(p) => {
            let rows: Vec<NormalizationConstants> =
                load_table(p).with_context(|| format!("reading {}", p.display()))?;
            match rows.as_slice() {
                [n] => *n,
                _ => bail!("{}: expected exactly one row of normalization constants", p.display()),
            }
        }
        None => homogeneous_norm(&palette, &ds, a.reps, &plan)?,
    };
    let config = HeteroConfig {
        reps: a.reps,
        resample_assignment: a.resample_assignment,
    };
    log::info!(
        "simulating {} histograms over {} settings",
        histograms.len(),
        palette.len()
    );
    let results = simulate_all(&histograms, &palette, &ds, &config, &plan, &w, &norm)?;
    let cells = heatmap_tables(&results);
    let log_rows: Vec<HeteroLogRow> = results.iter().map(HeteroLogRow::from).collect();
    save_table(&a.out_heatmaps, &cells)?;
    save_table(&a.out_log, &log_rows)?;

    m.set("data", a.data.display())
        .set("slots_per_period", a.slots_per_period)
        .set("palette", ids.join(","))
        .set("step", a.step)
        .set("reps", a.reps)
        .set("seed", a.seed)
        .set("alpha", join(&a.alpha))
        .set("gamma", join(&a.gamma))
        .set("norm", join(&norm.as_array()))
        .set("resample_assignment", a.resample_assignment)
        .set("out_heatmaps", a.out_heatmaps.display())
        .set("out_log", a.out_log.display());
    m.save(manifest_path(&a.out_heatmaps))?;
    println!(
        "{} histograms simulated over {} settings; {} heatmap cells written to {}",
        histograms.len(),
        palette.len(),
        cells.len(),
        a.out_heatmaps.display()
    );
    Ok(())
}
