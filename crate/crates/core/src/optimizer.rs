//! Bin-based selection of optimal privacy settings.
//!
//! Settings that pass the hard constraint on global error are scored, placed
//! in the privacy bin holding their median privacy, filtered by privacy
//! dispersion, and the best utility objective wins each bin.

use std::collections::{BTreeMap, BTreeSet};

use crate::domain::{clean_real, PrivacySetting};
use crate::error::{Error, Result};
use crate::metrics::{percentile_sorted, sorted, NormalizationConstants, ObjectiveWeights};
use crate::sweep::{assemble_tradeoffs, EvaluationRecord, TradeoffSample};

/// Width of the privacy bins and the dispersion bound `omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSpec {
    bin_width: f64,
    omega: f64,
}

impl BinSpec {
    pub fn new(bin_width: f64, omega: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "bin width must be in (0, 1], got {bin_width}"
            )));
        }
        if omega.is_nan() || omega <= 0.0 {
            return Err(Error::InvalidArgument(format!("omega must be positive, got {omega}")));
        }
        if omega > bin_width {
            return Err(Error::InvalidArgument(format!(
                "omega ({omega}) must not exceed the bin width ({bin_width})"
            )));
        }
        Ok(Self { bin_width, omega })
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn n_bins(&self) -> usize {
        let n = 1.0 / self.bin_width;
        if (n - n.round()).abs() < 1e-9 {
            n.round() as usize
        } else {
            n.ceil() as usize
        }
    }

    /// `[lo, hi)`; the last bin is closed at 1.
    pub fn range(&self, bin: usize) -> (f64, f64) {
        let lo = clean_real(bin as f64 * self.bin_width);
        let hi = if bin + 1 == self.n_bins() {
            1.0
        } else {
            clean_real((bin + 1) as f64 * self.bin_width)
        };
        (lo, hi)
    }

    /// Bin holding privacy value `p`, consistent with [`BinSpec::range`].
    pub fn bin_of(&self, p: f64) -> usize {
        let last = self.n_bins() - 1;
        let mut k = ((p / self.bin_width).floor().max(0.0) as usize).min(last);
        while k > 0 && p < self.range(k).0 {
            k -= 1;
        }
        while k < last && p >= self.range(k).1 {
            k += 1;
        }
        k
    }
}

impl Default for BinSpec {
    fn default() -> Self {
        Self {
            bin_width: 0.2,
            omega: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstraintMode {
    /// Every record of the setting must satisfy the bounds.
    #[default]
    PerRecord,
    /// The mean over the setting's records must satisfy the bounds.
    Aggregate,
}

/// Upper bounds (strict) on the mean and standard deviation of global error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardConstraint {
    pub max_mean_e: f64,
    pub max_std_e: f64,
    pub mode: ConstraintMode,
}

impl HardConstraint {
    pub fn new(max_mean_e: f64, max_std_e: f64, mode: ConstraintMode) -> Result<Self> {
        if !(max_mean_e > 0.0 && max_std_e > 0.0) {
            return Err(Error::InvalidArgument("hard constraint bounds must be positive".into()));
        }
        Ok(Self {
            max_mean_e,
            max_std_e,
            mode,
        })
    }
}

impl Default for HardConstraint {
    fn default() -> Self {
        Self {
            max_mean_e: 0.1,
            max_std_e: 0.1,
            mode: ConstraintMode::PerRecord,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintOutcome {
    pub survivors: BTreeSet<String>,
    pub eliminated: BTreeSet<String>,
    /// Maxima over surviving records; `None` when nothing survived.
    pub norm: Option<NormalizationConstants>,
}

pub fn apply_hard_constraint(records: &[EvaluationRecord], hc: &HardConstraint) -> ConstraintOutcome {
    let mut by_setting: BTreeMap<&str, Vec<&EvaluationRecord>> = BTreeMap::new();
    for r in records {
        by_setting.entry(r.setting_id()).or_default().push(r);
    }
    let mut survivors = BTreeSet::new();
    let mut eliminated = BTreeSet::new();
    for (id, recs) in by_setting {
        let ok = match hc.mode {
            ConstraintMode::PerRecord => recs
                .iter()
                .all(|r| r.global_stats.mean < hc.max_mean_e && r.global_stats.std < hc.max_std_e),
            ConstraintMode::Aggregate => {
                let n = recs.len() as f64;
                let mean = recs.iter().map(|r| r.global_stats.mean).sum::<f64>() / n;
                let std = recs.iter().map(|r| r.global_stats.std).sum::<f64>() / n;
                mean < hc.max_mean_e && std < hc.max_std_e
            }
        };
        if ok {
            survivors.insert(id.to_string());
        } else {
            eliminated.insert(id.to_string());
        }
    }
    let norm = NormalizationConstants::from_maxima(
        records
            .iter()
            .filter(|r| survivors.contains(r.setting_id()))
            .map(|r| (&r.local_stats, &r.global_stats)),
    );
    ConstraintOutcome {
        survivors,
        eliminated,
        norm,
    }
}

fn median_of(values: &[f64]) -> f64 {
    percentile_sorted(&sorted(values), 50.0)
}

/// Groups settings by the bin containing their median privacy. Only occupied
/// bins appear in the map.
pub fn bin_settings(tradeoffs: &BTreeMap<String, TradeoffSample>, spec: &BinSpec) -> BTreeMap<usize, Vec<String>> {
    let mut bins: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (id, t) in tradeoffs {
        if t.privacy_values.is_empty() {
            continue;
        }
        bins.entry(spec.bin_of(median_of(&t.privacy_values)))
            .or_default()
            .push(id.clone());
    }
    bins
}

/// `perc(Q, 50) - perc(Q, 10) < omega` on the privacy values.
pub fn dispersion_filter(sample: &TradeoffSample, omega: f64) -> bool {
    if sample.privacy_values.is_empty() {
        return false;
    }
    let s = sorted(&sample.privacy_values);
    percentile_sorted(&s, 50.0) - percentile_sorted(&s, 10.0) < omega
}

/// `perc(U, 50) + perc(U, 10)` on the utility values.
pub fn utility_objective(sample: &TradeoffSample) -> f64 {
    let s = sorted(&sample.utility_values);
    percentile_sorted(&s, 50.0) + percentile_sorted(&s, 10.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinResult {
    pub bin_index: usize,
    pub lo: f64,
    pub hi: f64,
    pub winner: Option<PrivacySetting>,
    pub objective: Option<f64>,
    pub median_privacy: Option<f64>,
    pub median_utility: Option<f64>,
}

/// Picks, for every bin of `spec`, the omega-passing setting with the largest
/// utility objective. Ties go to the higher median utility, then to the
/// smaller setting id. Bins without a candidate report no winner.
pub fn select_per_bin(
    binned: &BTreeMap<usize, Vec<String>>,
    tradeoffs: &BTreeMap<String, TradeoffSample>,
    spec: &BinSpec,
) -> Vec<BinResult> {
    (0..spec.n_bins())
        .map(|bin| {
            let (lo, hi) = spec.range(bin);
            let mut best: Option<(f64, f64, &TradeoffSample)> = None;
            for id in binned.get(&bin).into_iter().flatten() {
                let Some(t) = tradeoffs.get(id) else { continue };
                if t.utility_values.is_empty() || !dispersion_filter(t, spec.omega()) {
                    continue;
                }
                let objective = utility_objective(t);
                let med_u = median_of(&t.utility_values);
                let better = match &best {
                    None => true,
                    Some((bo, bm, bt)) => {
                        objective > *bo
                            || (objective == *bo && (med_u > *bm || (med_u == *bm && t.setting_id() < bt.setting_id())))
                    }
                };
                if better {
                    best = Some((objective, med_u, t));
                }
            }
            match best {
                Some((objective, med_u, t)) => BinResult {
                    bin_index: bin,
                    lo,
                    hi,
                    winner: Some(t.setting.clone()),
                    objective: Some(objective),
                    median_privacy: Some(median_of(&t.privacy_values)),
                    median_utility: Some(med_u),
                },
                None => BinResult {
                    bin_index: bin,
                    lo,
                    hi,
                    winner: None,
                    objective: None,
                    median_privacy: None,
                    median_utility: None,
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub privacy: f64,
    pub min_utility: f64,
    pub median_utility: f64,
    pub max_utility: f64,
}

/// Utility band along the privacy axis: each run's privacy is snapped to the
/// nearest of `resolution` evenly spaced points on [0, 1]; occupied points
/// report min/median/max utility.
pub fn export_trajectory(
    tradeoffs: &BTreeMap<String, TradeoffSample>,
    resolution: usize,
) -> Result<Vec<TrajectoryPoint>> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(
            "trajectory resolution must be at least 2".into(),
        ));
    }
    let steps = (resolution - 1) as f64;
    let mut cells: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for t in tradeoffs.values() {
        for (p, u) in t.privacy_values.iter().zip(&t.utility_values) {
            let k = (p.clamp(0.0, 1.0) * steps).round() as usize;
            cells.entry(k).or_default().push(*u);
        }
    }
    Ok(cells
        .into_iter()
        .map(|(k, us)| {
            let s = sorted(&us);
            TrajectoryPoint {
                privacy: k as f64 / steps,
                min_utility: s[0],
                median_utility: percentile_sorted(&s, 50.0),
                max_utility: s[s.len() - 1],
            }
        })
        .collect())
}

/// Result of the whole optimization stage.
#[derive(Debug, Clone)]
pub struct Optimization {
    pub constraint: ConstraintOutcome,
    pub tradeoffs: BTreeMap<String, TradeoffSample>,
    pub bins: Vec<BinResult>,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Hard constraint, normalization, scoring, binning and per-bin selection.
/// When no setting survives the bins are all empty and the trajectory too.
pub fn optimize(
    records: &[EvaluationRecord],
    w: &ObjectiveWeights,
    spec: &BinSpec,
    hc: &HardConstraint,
    resolution: usize,
) -> Result<Optimization> {
    let constraint = apply_hard_constraint(records, hc);
    let tradeoffs = match &constraint.norm {
        Some(norm) => {
            let kept: Vec<EvaluationRecord> = records
                .iter()
                .filter(|r| constraint.survivors.contains(r.setting_id()))
                .cloned()
                .collect();
            assemble_tradeoffs(&kept, w, norm)
        }
        None => BTreeMap::new(),
    };
    let binned = bin_settings(&tradeoffs, spec);
    let bins = select_per_bin(&binned, &tradeoffs, spec);
    let trajectory = export_trajectory(&tradeoffs, resolution)?;
    Ok(Optimization {
        constraint,
        tradeoffs,
        bins,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ErrorStats;

    fn sample(id: &str, privacy: &[f64], utility: &[f64]) -> TradeoffSample {
        TradeoffSample {
            setting: PrivacySetting::parse_id(id).unwrap(),
            privacy_values: privacy.to_vec(),
            utility_values: utility.to_vec(),
        }
    }

    fn record(id: &str, mean_e: f64, std_e: f64) -> EvaluationRecord {
        EvaluationRecord {
            setting: PrivacySetting::parse_id(id).unwrap(),
            subset_size: 10,
            subset_index: 0,
            repetition: 0,
            local_stats: ErrorStats {
                mean: 1.0,
                std: 1.0,
                entropy: 1.0,
            },
            global_stats: ErrorStats {
                mean: mean_e,
                std: std_e,
                entropy: 0.5,
            },
            exclusions: 0,
            seed: 0,
        }
    }

    #[test]
    fn bin_spec_validation_and_counts() {
        assert_eq!(BinSpec::default().n_bins(), 5);
        assert_eq!(BinSpec::new(0.5, 0.1).unwrap().n_bins(), 2);
        assert_eq!(BinSpec::new(0.3, 0.1).unwrap().n_bins(), 4);
        assert!(BinSpec::new(0.5, 0.6).is_err());
        assert!(BinSpec::new(0.0, 0.0).is_err());
    }

    #[test]
    fn bin_boundaries() {
        let spec = BinSpec::default();
        assert_eq!(spec.bin_of(0.0), 0);
        assert_eq!(spec.bin_of(1.0), 4);
        assert_eq!(spec.bin_of(0.2), 1);
        assert_eq!(spec.bin_of(0.19999), 0);
        for k in 0..=1000 {
            let p = k as f64 / 1000.0;
            let b = spec.bin_of(p);
            let (lo, hi) = spec.range(b);
            assert!(lo <= p && (p < hi || (b == 4 && p <= hi)), "{p} -> {b}");
        }
    }

    #[test]
    fn hard_constraint_examples() {
        let recs = vec![
            record("nomask", 0.0, 0.0),
            record("lap-1", 0.05, 0.02),
            record("lap-1", 0.5, 0.02),
            record("lap-0.5", 0.08, 0.03),
        ];
        let out = apply_hard_constraint(&recs, &HardConstraint::default());
        assert!(out.survivors.contains("nomask"));
        assert!(out.eliminated.contains("lap-1"));
        assert_eq!(out.norm.unwrap().max_mean_e, 0.08);

        let agg = HardConstraint::new(0.3, 0.1, ConstraintMode::Aggregate).unwrap();
        assert!(apply_hard_constraint(&recs, &agg).survivors.contains("lap-1"));
    }

    #[test]
    fn hard_constraint_is_strict() {
        let out = apply_hard_constraint(&[record("lap-1", 0.1, 0.0)], &HardConstraint::default());
        assert!(out.survivors.is_empty());
        assert!(out.norm.is_none());
    }

    #[test]
    fn dispersion_examples() {
        assert!(dispersion_filter(&sample("nomask", &[0.4; 5], &[1.0; 5]), 1e-9));
        assert!(!dispersion_filter(&sample("nomask", &[0.1, 0.5, 0.9], &[1.0; 3]), 0.1));
        assert!(dispersion_filter(
            &sample("nomask", &[0.50, 0.52, 0.54], &[1.0; 3]),
            0.1
        ));
    }

    #[test]
    fn selection_examples() {
        let spec = BinSpec::default();
        let mut t = BTreeMap::new();
        t.insert("lap-1".to_string(), sample("lap-1", &[0.5; 3], &[0.9, 0.9, 0.9]));
        t.insert("lap-2".to_string(), sample("lap-2", &[0.5; 3], &[0.95, 0.5, 0.95]));
        // highest objective but dispersed privacy
        t.insert("lap-3".to_string(), sample("lap-3", &[0.3, 0.5, 0.5], &[1.0; 3]));
        let binned = bin_settings(&t, &spec);
        assert_eq!(binned[&2].len(), 3);
        let res = select_per_bin(&binned, &t, &spec);
        assert_eq!(res.len(), 5);
        assert_eq!(res[2].winner.as_ref().unwrap().id(), "lap-1");
        assert!((res[2].objective.unwrap() - 1.8).abs() < 1e-12);
        // 0.95 + (0.5 + 0.2 * 0.45)
        assert!((utility_objective(&t["lap-2"]) - 1.54).abs() < 1e-12);
        assert!(res[0].winner.is_none());
    }

    #[test]
    fn ties_prefer_median_then_id() {
        let spec = BinSpec::default();
        // eleven values put the 10th percentile exactly on rank 1
        let mut spread = vec![0.5, 0.5];
        spread.extend([1.0; 9]);
        let mut t = BTreeMap::new();
        t.insert("lap-1".to_string(), sample("lap-1", &[0.1; 11], &[0.75; 11]));
        t.insert("lap-2".to_string(), sample("lap-2", &[0.1; 11], &spread));
        assert_eq!(utility_objective(&t["lap-1"]), utility_objective(&t["lap-2"]));
        let res = select_per_bin(&bin_settings(&t, &spec), &t, &spec);
        assert_eq!(res[0].winner.as_ref().unwrap().id(), "lap-2");

        t.insert("lap-2".to_string(), sample("lap-2", &[0.1; 11], &[0.75; 11]));
        let res = select_per_bin(&bin_settings(&t, &spec), &t, &spec);
        assert_eq!(res[0].winner.as_ref().unwrap().id(), "lap-1");
    }

    #[test]
    fn trajectory_examples() {
        let mut t = BTreeMap::new();
        t.insert("nomask".to_string(), sample("nomask", &[0.0, 0.0], &[1.0, 1.0]));
        let tr = export_trajectory(&t, 11).unwrap();
        assert_eq!(
            tr,
            vec![TrajectoryPoint {
                privacy: 0.0,
                min_utility: 1.0,
                median_utility: 1.0,
                max_utility: 1.0
            }]
        );

        let mut t = BTreeMap::new();
        t.insert("lap-1".to_string(), sample("lap-1", &[0.3, 0.3], &[0.8, 0.6]));
        let tr = export_trajectory(&t, 11).unwrap();
        assert_eq!(tr.len(), 1);
        assert!((tr[0].privacy - 0.3).abs() < 1e-12);
        assert_eq!((tr[0].min_utility, tr[0].max_utility), (0.6, 0.8));
        assert!((tr[0].median_utility - 0.7).abs() < 1e-12);
    }

    #[test]
    fn optimize_with_no_survivors_is_empty() {
        let o = optimize(
            &[record("lap-1", 0.5, 0.5)],
            &ObjectiveWeights::default(),
            &BinSpec::default(),
            &HardConstraint::default(),
            50,
        )
        .unwrap();
        assert!(o.constraint.norm.is_none());
        assert_eq!(o.bins.len(), 5);
        assert!(o.bins.iter().all(|b| b.winner.is_none()));
        assert!(o.trajectory.is_empty());
    }
}
